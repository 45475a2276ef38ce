use std::borrow::Cow;

use super::{gold_antecedents, knowledge_term, LossSettings, LossWeights, PairSet, ScaffoldClasses};
use crate::corpus::{Document, SpanRef};
use crate::error::Result;
use crate::lexicon::{annotate_spans, ConceptLexicon, MatchPolicy};
use crate::model::{Forward, Layout, ModelConfig, ParamVars, PreparedDoc};
use crate::tape::{Tape, Var};

/// Everything besides parameters that defines the per-document loss.
#[derive(Clone, Debug, Default)]
pub struct Objective {
    pub weights: LossWeights,
    pub settings: LossSettings,
    pub scaffold: Option<ScaffoldClasses>,
    /// Lexicons matched against pruned candidates when
    /// `settings.annotate_candidates` is on.
    pub candidate_lexicons: Vec<(ConceptLexicon, MatchPolicy)>,
}

/// Tape nodes of one document's loss. Components with β = 0 are not built.
#[derive(Debug)]
pub struct DocObjective {
    pub forward: Forward,
    pub cl: Option<Var>,
    pub rl: Option<Var>,
    pub sl: Option<Var>,
    pub total: Var,
    pub pruning_misses: usize,
    pub rl_pairs: usize,
    pub sl_spans: usize,
}

impl DocObjective {
    pub fn components(&self, t: &Tape) -> [f64; 3] {
        let v = |x: Option<Var>| x.map_or(0.0, |x| t.value(x));
        [v(self.cl), v(self.rl), v(self.sl)]
    }
}

/// Builds β₁·CL + β₂·RL + β₃·SL for one document on the tape.
pub fn document_objective(
    t: &mut Tape,
    pv: &ParamVars,
    config: &ModelConfig,
    layout: &Layout,
    doc: &PreparedDoc,
    objective: &Objective,
) -> Result<DocObjective> {
    let fw = Forward::run(t, pv, config, layout, doc);
    let [b1, b2, b3] = objective.weights.beta;
    let candidates: Vec<SpanRef> = fw.candidates.iter().map(|&i| doc.spans[i]).collect();

    let annotated: Cow<'_, Document> =
        if objective.settings.annotate_candidates && !objective.candidate_lexicons.is_empty() {
            let mut d = doc.doc.clone();
            for (lex, policy) in &objective.candidate_lexicons {
                let unlabeled: Vec<SpanRef> = candidates
                    .iter()
                    .filter(|s| d.concept(s, &lex.lexicon_id).is_none())
                    .copied()
                    .collect();
                annotate_spans(&mut d, &unlabeled, lex, policy);
            }
            Cow::Owned(d)
        } else {
            Cow::Borrowed(&doc.doc)
        };

    let mut pruning_misses = 0;
    let cl = if b1 > 0.0 {
        let zero = t.leaf(0.0);
        let mut terms = Vec::with_capacity(candidates.len());
        for i in 0..candidates.len() {
            let (gold, miss) =
                gold_antecedents(i, &candidates, &fw.antecedents[i], &doc.cluster_of, &doc.gold_spans);
            pruning_misses += usize::from(miss);
            if fw.antecedents[i].is_empty() {
                continue;
            }
            let mut all = Vec::with_capacity(fw.pair_scores[i].len() + 1);
            all.push(zero);
            all.extend_from_slice(&fw.pair_scores[i]);
            let denom = t.logsumexp(&all);
            let term = if gold.is_empty() {
                denom
            } else {
                let g: Vec<Var> = gold.iter().map(|&k| fw.pair_scores[i][k]).collect();
                let num = t.logsumexp(&g);
                t.sub(denom, num)
            };
            terms.push(term);
        }
        Some(if terms.is_empty() { zero } else { t.sum(&terms) })
    } else {
        None
    };

    let mut rl_pairs = 0;
    let rl = if b2 > 0.0 {
        let mut spans = doc.gold_spans.clone();
        if objective.settings.rl_candidates {
            spans.extend_from_slice(&candidates);
        }
        let pairs = PairSet::sample(
            &doc.doc.doc_id,
            &spans,
            objective.settings.pair_budget,
            objective.settings.sampling_seed,
        );
        rl_pairs = pairs.len();
        if pairs.is_empty() {
            log::warn!("document {}: no retrofitting pairs", doc.doc.doc_id);
            Some(t.leaf(0.0))
        } else {
            let mut cache: Vec<(SpanRef, Vec<Var>)> = Vec::new();
            let mut residuals = Vec::with_capacity(pairs.len());
            for (a, b) in &pairs.pairs {
                let xa = internal_cached(t, &fw, config, doc, &mut cache, a);
                let xb = internal_cached(t, &fw, config, doc, &mut cache, b);
                let (cos, degenerate) = t.cosine_distance(&xa, &xb);
                if degenerate {
                    log::warn!("document {}: zero span vector in pair {a} {b}", doc.doc.doc_id);
                }
                let target = target(a, b, &annotated, doc, objective);
                let diff = t.add_const(cos, -target);
                residuals.push(t.abs(diff));
            }
            Some(t.mean(&residuals))
        }
    } else {
        None
    };

    let mut sl_spans = 0;
    let sl = match (&objective.scaffold, b3 > 0.0) {
        (Some(classes), true) if !classes.is_empty() => {
            let mut spans: Vec<SpanRef> = doc.gold_spans.clone();
            if objective.settings.annotate_candidates || classes.none {
                spans.extend(candidates.iter().filter(|c| doc.gold_spans.binary_search(c).is_err()));
            }
            let mut terms = Vec::new();
            for s in &spans {
                let Some(c) = classes.class_of(annotated.concept(s, &classes.lexicon)) else {
                    continue;
                };
                let x = fw.internal(t, config, doc, s);
                let logits: Vec<Var> = (0..classes.len())
                    .map(|k| t.dot(pv.row(layout.scaffold, k), &x))
                    .collect();
                let z = t.logsumexp(&logits);
                terms.push(t.sub(z, logits[c]));
            }
            sl_spans = terms.len();
            Some(if terms.is_empty() { t.leaf(0.0) } else { t.mean(&terms) })
        }
        _ => None,
    };

    let mut parts = Vec::with_capacity(3);
    let mut coeffs = Vec::with_capacity(3);
    for (v, b) in [(cl, b1), (rl, b2), (sl, b3)] {
        if let Some(v) = v {
            parts.push(v);
            coeffs.push(b);
        }
    }
    let total = if parts.is_empty() {
        t.leaf(0.0)
    } else {
        t.weighted_sum(&parts, &coeffs)
    };
    Ok(DocObjective {
        forward: fw,
        cl,
        rl,
        sl,
        total,
        pruning_misses,
        rl_pairs,
        sl_spans,
    })
}

fn internal_cached(
    t: &mut Tape,
    fw: &Forward,
    config: &ModelConfig,
    doc: &PreparedDoc,
    cache: &mut Vec<(SpanRef, Vec<Var>)>,
    span: &SpanRef,
) -> Vec<Var> {
    if doc.spans.binary_search(span).is_ok() {
        return fw.internal(t, config, doc, span);
    }
    if let Some((_, v)) = cache.iter().find(|(s, _)| s == span) {
        return v.clone();
    }
    let v = fw.internal(t, config, doc, span);
    cache.push((*span, v.clone()));
    v
}

fn target(a: &SpanRef, b: &SpanRef, annotated: &Document, doc: &PreparedDoc, objective: &Objective) -> f64 {
    let w = &objective.weights;
    let mut d = w.alpha_c * super::coref_distance(a, b, &doc.cluster_of);
    for (lex, &alpha) in &w.alpha_k {
        if alpha != 0.0 {
            d += alpha
                * knowledge_term(
                    annotated.concept(a, lex),
                    annotated.concept(b, lex),
                    objective.settings.unlabeled,
                );
        }
    }
    d
}

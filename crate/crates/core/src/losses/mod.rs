//! The training objective: coreference loss (CL), retrofitting loss (RL),
//! scaffolding loss (SL) and their weighted sum.
//!
//! Everything here is in minimize convention: CL and SL are negative
//! log-likelihoods. The free functions compute plain values; the
//! differentiable version used for training lives in [`objective`].

mod objective;

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SpanRef};
use crate::error::{Error, Result};
use crate::tape;

pub use objective::{document_objective, DocObjective, Objective};

pub const DEFAULT_PAIR_BUDGET: usize = 5000;

/// α_c, α_k per lexicon and (β₁, β₂, β₃).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha_c: f64,
    pub alpha_k: BTreeMap<String, f64>,
    pub beta: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_c: 1.0,
            alpha_k: BTreeMap::new(),
            beta: [1.0, 0.3, 0.3],
        }
    }
}

impl LossWeights {
    pub fn new(alpha_c: f64, alpha_k: &[(&str, f64)], beta: [f64; 3]) -> Result<Self> {
        let w = LossWeights {
            alpha_c,
            alpha_k: alpha_k.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            beta,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn coref_only() -> Self {
        LossWeights {
            beta: [1.0, 0.0, 0.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.alpha_c) {
            return Err(Error::Config(format!("alpha_c = {} must be finite and ≥ 0", self.alpha_c)));
        }
        if let Some((k, v)) = self.alpha_k.iter().find(|(_, v)| !ok(**v)) {
            return Err(Error::Config(format!("alpha_k[{k}] = {v} must be finite and ≥ 0")));
        }
        if !self.beta.iter().all(|&b| ok(b)) {
            return Err(Error::Config(format!("beta {:?} must be finite and ≥ 0", self.beta)));
        }
        if self.beta.iter().all(|&b| b == 0.0) {
            return Err(Error::Config("at least one beta must be positive".into()));
        }
        Ok(())
    }

    /// Source-phase weights: every α_k and β₃ forced to zero, RL kept or
    /// dropped as requested.
    pub fn source_phase(&self, keep_rl: bool) -> Self {
        LossWeights {
            alpha_c: self.alpha_c,
            alpha_k: self.alpha_k.keys().map(|k| (k.clone(), 0.0)).collect(),
            beta: [self.beta[0], if keep_rl { self.beta[1] } else { 0.0 }, 0.0],
        }
    }

    /// Upper end of the range of d_T.
    pub fn max_target(&self) -> f64 {
        self.alpha_c + self.alpha_k.values().sum::<f64>()
    }
}

/// How d_k treats a pair where a span carries no concept from the lexicon.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnlabeledPolicy {
    /// d_k = 1 unless both spans carry the same concept.
    #[default]
    Strict,
    /// d_k = 0 when either span is unlabeled.
    Skip,
}

/// Settings of the loss computation that are not weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    /// Per-document cap on RL pairs.
    pub pair_budget: usize,
    pub sampling_seed: u64,
    pub unlabeled: UnlabeledPolicy,
    /// Draw RL pairs from pruned candidates as well as gold spans.
    pub rl_candidates: bool,
    /// Match pruned candidate spans against the lexicons during training.
    pub annotate_candidates: bool,
    /// Add a NONE scaffold class for unlabeled candidate spans.
    pub scaffold_none: bool,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings {
            pair_budget: DEFAULT_PAIR_BUDGET,
            sampling_seed: 0,
            unlabeled: UnlabeledPolicy::Strict,
            rl_candidates: true,
            annotate_candidates: false,
            scaffold_none: false,
        }
    }
}

/// d_c: 0 iff both spans sit in the same gold cluster.
pub fn coref_distance(a: &SpanRef, b: &SpanRef, cluster_of: &HashMap<SpanRef, usize>) -> f64 {
    match (cluster_of.get(a), cluster_of.get(b)) {
        (Some(x), Some(y)) if x == y => 0.0,
        _ => 1.0,
    }
}

/// d_k on already looked-up labels.
pub fn knowledge_term(a: Option<&str>, b: Option<&str>, policy: UnlabeledPolicy) -> f64 {
    match (a, b, policy) {
        (Some(x), Some(y), _) => f64::from(u8::from(x != y)),
        (_, _, UnlabeledPolicy::Strict) => 1.0,
        (_, _, UnlabeledPolicy::Skip) => 0.0,
    }
}

/// d_k under the strict policy: 0 iff both spans carry the same concept of
/// `lexicon`.
pub fn knowledge_distance(a: &SpanRef, b: &SpanRef, doc: &Document, lexicon: &str) -> f64 {
    knowledge_term(doc.concept(a, lexicon), doc.concept(b, lexicon), UnlabeledPolicy::Strict)
}

/// d_T = α_c·d_c + Σ_lex α_k[lex]·d_k[lex].
pub fn target_distance(
    a: &SpanRef,
    b: &SpanRef,
    doc: &Document,
    cluster_of: &HashMap<SpanRef, usize>,
    weights: &LossWeights,
    policy: UnlabeledPolicy,
) -> f64 {
    let mut d = weights.alpha_c * coref_distance(a, b, cluster_of);
    for (lex, &alpha) in &weights.alpha_k {
        if alpha != 0.0 {
            d += alpha * knowledge_term(doc.concept(a, lex), doc.concept(b, lex), policy);
        }
    }
    d
}

/// 1 − cos(u, v); a zero vector gives 1 with a warning.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (tape::norm(u), tape::norm(v));
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine distance of a zero vector, using 1");
        return 1.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    1.0 - dot / (nu * nv)
}

/// Unordered span pairs of one document used by RL.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub doc_id: String,
    pub pairs: Vec<(SpanRef, SpanRef)>,
}

impl PairSet {
    /// All unordered pairs of distinct `spans`, or a seeded sample of
    /// `budget` of them when there are more.
    pub fn sample(doc_id: &str, spans: &[SpanRef], budget: usize, seed: u64) -> Self {
        let mut spans = spans.to_vec();
        spans.sort();
        spans.dedup();
        let n = spans.len();
        let total = n * n.saturating_sub(1) / 2;
        let pair_at = |k: usize| -> (SpanRef, SpanRef) {
            // k-th pair in (i, j>i) lexicographic order
            let mut i = 0;
            let mut rem = k;
            while rem >= n - 1 - i {
                rem -= n - 1 - i;
                i += 1;
            }
            (spans[i], spans[i + 1 + rem])
        };
        let pairs = if total <= budget {
            (0..total).map(pair_at).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(doc_id));
            let mut picks = rand::seq::index::sample(&mut rng, total, budget).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(pair_at).collect()
        };
        PairSet {
            doc_id: doc_id.to_string(),
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub(crate) fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x100000001b3)
    })
}

/// RL = Σ_doc (1/|r|) Σ_(i,j) |d_T(i, j) − cos_dist(x̂_i, x̂_j)|.
///
/// `internals[d]` must hold x̂ for every span named in `pair_sets[d]`.
pub fn retrofit_loss(
    docs: &[Document],
    pair_sets: &[PairSet],
    internals: &[HashMap<SpanRef, Vec<f64>>],
    weights: &LossWeights,
    policy: UnlabeledPolicy,
) -> f64 {
    docs.iter()
        .zip(pair_sets)
        .zip(internals)
        .map(|((doc, ps), xs)| {
            if ps.is_empty() {
                log::warn!("document {}: no retrofitting pairs", doc.doc_id);
                return 0.0;
            }
            let clusters = doc.cluster_index();
            let sum: f64 = ps
                .pairs
                .iter()
                .map(|(a, b)| {
                    let target = target_distance(a, b, doc, &clusters, weights, policy);
                    (target - cosine_distance(&xs[a], &xs[b])).abs()
                })
                .sum();
            sum / ps.len() as f64
        })
        .sum()
}

/// Scaffold class set: the labels of one coarse lexicon, plus an optional
/// NONE class placed last.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaffoldClasses {
    pub lexicon: String,
    pub labels: Vec<String>,
    pub none: bool,
}

impl ScaffoldClasses {
    pub fn new(lexicon: impl Into<String>, labels: impl IntoIterator<Item = String>, none: bool) -> Self {
        let mut labels: Vec<String> = labels.into_iter().collect();
        labels.sort();
        labels.dedup();
        ScaffoldClasses {
            lexicon: lexicon.into(),
            labels,
            none,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len() + usize::from(self.none)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Class of a span given its label; `None` when the span does not
    /// contribute.
    pub fn class_of(&self, label: Option<&str>) -> Option<usize> {
        match label {
            Some(l) => self.labels.binary_search_by(|x| x.as_str().cmp(l)).ok(),
            None if self.none => Some(self.labels.len()),
            None => None,
        }
    }
}

/// SL = Σ_doc mean over labeled spans of −log softmax(W x̂)[c].
///
/// Each document is a list of `(class, x̂)`; `w` holds one row per class.
pub fn scaffold_loss(docs: &[Vec<(usize, Vec<f64>)>], w: &[Vec<f64>]) -> f64 {
    docs.iter()
        .filter(|d| !d.is_empty())
        .map(|spans| {
            let sum: f64 = spans
                .iter()
                .map(|(c, x)| {
                    let logits: Vec<f64> = w
                        .iter()
                        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                        .collect();
                    tape::logsumexp(&logits) - logits[*c]
                })
                .sum();
            sum / spans.len() as f64
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorefLoss {
    pub value: f64,
    /// Anaphoric mentions none of whose gold antecedents survived pruning.
    pub pruning_misses: usize,
}

/// Gold antecedent positions of candidate `i` among its antecedent list, and
/// whether `i` is an anaphoric mention that lost all of them to pruning.
pub(crate) fn gold_antecedents(
    i: usize,
    candidates: &[SpanRef],
    antecedents: &[usize],
    cluster_of: &HashMap<SpanRef, usize>,
    gold_spans: &[SpanRef],
) -> (Vec<usize>, bool) {
    let Some(&c) = cluster_of.get(&candidates[i]) else {
        return (Vec::new(), false);
    };
    let gold: Vec<usize> = antecedents
        .iter()
        .enumerate()
        .filter(|(_, &j)| cluster_of.get(&candidates[j]) == Some(&c))
        .map(|(k, _)| k)
        .collect();
    let anaphoric = gold_spans
        .iter()
        .any(|s| *s < candidates[i] && cluster_of.get(s) == Some(&c));
    let miss = gold.is_empty() && anaphoric;
    (gold, miss)
}

/// CL = −Σ_i log Σ_{y ∈ GOLD(i)} P(y), with GOLD(i) = {ε} when candidate `i`
/// has no gold antecedent among its candidates.
///
/// `pair_scores[i][k]` is s(i, antecedents[i][k]).
pub fn coref_loss(
    doc: &Document,
    candidates: &[SpanRef],
    antecedents: &[Vec<usize>],
    pair_scores: &[Vec<f64>],
) -> Result<CorefLoss> {
    let clusters = doc.cluster_index();
    let gold_spans = doc.gold_spans();
    let mut value = 0.0;
    let mut pruning_misses = 0;
    for i in 0..candidates.len() {
        let (gold, miss) = gold_antecedents(i, candidates, &antecedents[i], &clusters, &gold_spans);
        pruning_misses += usize::from(miss);
        if pair_scores[i].iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite(format!("pair score of candidate {}", candidates[i])));
        }
        let mut all = vec![0.0];
        all.extend_from_slice(&pair_scores[i]);
        let numerator = if gold.is_empty() {
            0.0
        } else {
            let g: Vec<f64> = gold.iter().map(|&k| pair_scores[i][k]).collect();
            tape::logsumexp(&g)
        };
        value += tape::logsumexp(&all) - numerator;
    }
    Ok(CorefLoss {
        value,
        pruning_misses,
    })
}

/// L = β₁·CL + β₂·RL + β₃·SL; a non-finite component is reported by name.
pub fn combined_loss(cl: f64, rl: f64, sl: f64, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("CL", cl), ("RL", rl), ("SL", sl)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    let [b1, b2, b3] = weights.beta;
    Ok(b1 * cl + b2 * rl + b3 * sl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn s(a: usize, b: usize) -> SpanRef {
        SpanRef::new(a, b)
    }

    fn doc() -> Document {
        let mut d = Document::new(
            "d",
            (0..8).map(|i| format!("t{i}")).collect(),
            vec![vec![s(0, 0), s(2, 2)], vec![s(4, 4), s(6, 6)]],
            Default::default(),
        )
        .unwrap();
        d.annotate(s(0, 0), "i2b2", "problem");
        d.annotate(s(2, 2), "i2b2", "problem");
        d.annotate(s(4, 4), "i2b2", "problem");
        d.annotate(s(6, 6), "i2b2", "test");
        d.annotate(s(0, 0), "umls", "C1");
        d.annotate(s(4, 4), "umls", "C2");
        d
    }

    #[test]
    fn coref_distance_cases() {
        let d = doc();
        let c = d.cluster_index();
        assert_eq!(coref_distance(&s(0, 0), &s(2, 2), &c), 0.0);
        assert_eq!(coref_distance(&s(0, 0), &s(4, 4), &c), 1.0);
        assert_eq!(coref_distance(&s(0, 0), &s(7, 7), &c), 1.0);
    }

    #[test]
    fn knowledge_distance_cases() {
        let d = doc();
        assert_eq!(knowledge_distance(&s(0, 0), &s(4, 4), &d, "i2b2"), 0.0);
        assert_eq!(knowledge_distance(&s(4, 4), &s(6, 6), &d, "i2b2"), 1.0);
        assert_eq!(knowledge_distance(&s(0, 0), &s(7, 7), &d, "i2b2"), 1.0);
        assert_eq!(knowledge_term(Some("a"), None, UnlabeledPolicy::Skip), 0.0);
    }

    #[test]
    fn target_distance_cases() {
        let d = doc();
        let c = d.cluster_index();
        let w = LossWeights::new(1.0, &[("umls", 0.2)], [1.0, 1.0, 0.0]).unwrap();
        // non-coreferent, different fine concept
        assert_abs_diff_eq!(target_distance(&s(0, 0), &s(4, 4), &d, &c, &w, UnlabeledPolicy::Strict), 1.2);
        let w2 = LossWeights::new(1.0, &[("i2b2", 0.5), ("umls", 0.2)], [1.0, 1.0, 0.0]).unwrap();
        // same coarse concept, different fine concept
        assert_abs_diff_eq!(target_distance(&s(0, 0), &s(4, 4), &d, &c, &w2, UnlabeledPolicy::Strict), 1.2);

        let mut d2 = d.clone();
        d2.annotate(s(2, 2), "umls", "C1");
        let c2 = d2.cluster_index();
        assert_eq!(target_distance(&s(0, 0), &s(2, 2), &d2, &c2, &w2, UnlabeledPolicy::Strict), 0.0);
    }

    #[test]
    fn cosine_distance_cases() {
        assert_abs_diff_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]), 1.0);
        assert_abs_diff_eq!(cosine_distance(&[1.0, -2.0], &[-1.0, 2.0]), 2.0);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
    }

    #[test]
    fn retrofit_loss_cases() {
        let base = Document::new("a", vec!["x".into(), "y".into(), "z".into()], vec![], Default::default()).unwrap();
        let w = LossWeights::new(1.0, &[], [1.0, 1.0, 0.0]).unwrap();
        // d_T = 1 for unclustered spans; orthogonal vectors fit exactly
        let ps = PairSet { doc_id: "a".into(), pairs: vec![(s(0, 0), s(1, 1))] };
        let xs: HashMap<SpanRef, Vec<f64>> =
            [(s(0, 0), vec![1.0, 0.0]), (s(1, 1), vec![0.0, 1.0]), (s(2, 2), vec![1.0, 0.0])].into();
        let rl = retrofit_loss(&[base.clone()], &[ps.clone()], &[xs.clone()], &w, UnlabeledPolicy::Strict);
        assert_abs_diff_eq!(rl, 0.0, epsilon = 1e-15);

        // identical vectors: |1 − 0| per pair; two pairs averaged, plus a
        // second document contributing 0.5 from one pair
        let two = PairSet { doc_id: "a".into(), pairs: vec![(s(0, 0), s(2, 2)), (s(0, 0), s(1, 1))] };
        let mut xs2 = xs.clone();
        xs2.insert(s(1, 1), vec![1.0, 1.0]);
        let cos = cosine_distance(&[1.0, 0.0], &[1.0, 1.0]);
        let first = retrofit_loss(&[base.clone()], &[two.clone()], &[xs2.clone()], &w, UnlabeledPolicy::Strict);
        assert_abs_diff_eq!(first, (1.0 + (1.0 - cos)) / 2.0, epsilon = 1e-12);
        let w_half = LossWeights::new(0.5, &[], [1.0, 1.0, 0.0]).unwrap();
        let second = retrofit_loss(&[base.clone()], &[ps.clone()], &[xs.clone()], &w_half, UnlabeledPolicy::Strict);
        assert_abs_diff_eq!(second, 0.5, epsilon = 1e-12);

        let empty = PairSet { doc_id: "a".into(), pairs: vec![] };
        assert_eq!(retrofit_loss(&[base], &[empty], &[xs], &w, UnlabeledPolicy::Strict), 0.0);
    }

    #[test]
    fn scaffold_loss_cases() {
        let zero = vec![vec![0.0; 3]; 4];
        assert_abs_diff_eq!(scaffold_loss(&[vec![(2, vec![1.0, 2.0, 3.0])]], &zero), 4f64.ln(), epsilon = 1e-12);
        // logits (1, 0), true class 0
        let w = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert_abs_diff_eq!(scaffold_loss(&[vec![(0, vec![1.0, 0.0])]], &w), 0.3133, epsilon = 1e-4);
        let confident = vec![vec![800.0], vec![0.0]];
        assert_abs_diff_eq!(scaffold_loss(&[vec![(0, vec![1.0])]], &confident), 0.0, epsilon = 1e-12);
        assert_eq!(scaffold_loss(&[vec![]], &w), 0.0);
    }

    #[test]
    fn scaffold_classes_lookup() {
        let c = ScaffoldClasses::new("i2b2", ["test".to_string(), "problem".to_string()], false);
        assert_eq!(c.class_of(Some("problem")), Some(0));
        assert_eq!(c.class_of(Some("test")), Some(1));
        assert_eq!(c.class_of(None), None);
        assert_eq!(c.class_of(Some("person")), None);
        let n = ScaffoldClasses { none: true, ..c };
        assert_eq!(n.class_of(None), Some(2));
        assert_eq!(n.len(), 3);
    }

    #[test]
    fn coref_loss_cases() {
        let one = Document::new("a", vec!["x".into()], vec![], Default::default()).unwrap();
        let l = coref_loss(&one, &[s(0, 0)], &[vec![]], &[vec![]]).unwrap();
        assert_eq!(l.value, 0.0);

        let two = Document::new("b", vec!["x".into(), "y".into()], vec![vec![s(0, 0), s(1, 1)]], Default::default())
            .unwrap();
        let l = coref_loss(&two, &[s(0, 0), s(1, 1)], &[vec![], vec![0]], &[vec![], vec![0.0]]).unwrap();
        // the first span has no antecedents, so P(ε) = 1 and only the second
        // contributes −log 0.5
        assert_abs_diff_eq!(l.value, 2f64.ln(), epsilon = 1e-12);
        assert_eq!(l.pruning_misses, 0);

        let l = coref_loss(&two, &[s(0, 0), s(1, 1)], &[vec![], vec![0]], &[vec![], vec![60.0]]).unwrap();
        assert_abs_diff_eq!(l.value, 0.0, epsilon = 1e-12);

        // antecedent pruned away: falls back to ε and counts a miss
        let l = coref_loss(&two, &[s(1, 1)], &[vec![]], &[vec![]]).unwrap();
        assert_eq!(l.pruning_misses, 1);
        assert_eq!(l.value, 0.0);

        assert!(coref_loss(&two, &[s(0, 0), s(1, 1)], &[vec![], vec![0]], &[vec![], vec![f64::NAN]]).is_err());
    }

    #[test]
    fn combined_loss_cases() {
        let w = LossWeights::new(1.0, &[], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(combined_loss(0.7, 5.0, 9.0, &w).unwrap(), 0.7);
        let w = LossWeights::new(1.0, &[], [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(combined_loss(0.5, 0.25, 0.25, &w).unwrap(), 1.0);
        let src = w.source_phase(true);
        assert_eq!(combined_loss(0.5, 0.25, 100.0, &src).unwrap(), 0.75);
        let err = combined_loss(0.5, f64::NAN, 0.0, &w).unwrap_err().to_string();
        assert!(err.contains("RL"), "{err}");
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(-1.0, &[], [1.0, 0.0, 0.0]).is_err());
        assert!(LossWeights::new(1.0, &[("x", -0.1)], [1.0, 0.0, 0.0]).is_err());
        assert!(LossWeights::new(1.0, &[], [0.0, 0.0, 0.0]).is_err());
        let w = LossWeights::new(1.0, &[("i2b2", 0.5), ("umls", 0.2)], [1.0, 0.3, 0.3]).unwrap();
        let src = w.source_phase(true);
        assert!(src.alpha_k.values().all(|&a| a == 0.0));
        assert_eq!(src.beta, [1.0, 0.3, 0.0]);
        assert_eq!(w.source_phase(false).beta, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn pair_sampling() {
        let spans: Vec<SpanRef> = (0..10).map(|i| s(i, i)).collect();
        let all = PairSet::sample("d", &spans, 5000, 1);
        assert_eq!(all.len(), 45);
        let mut seen = std::collections::HashSet::new();
        for (a, b) in &all.pairs {
            assert!(a < b);
            assert!(seen.insert((*a, *b)));
        }
        let few = PairSet::sample("d", &spans, 7, 1);
        assert_eq!(few.len(), 7);
        assert_eq!(few, PairSet::sample("d", &spans, 7, 1));
        assert_ne!(few.pairs, PairSet::sample("e", &spans, 7, 1).pairs);
        assert!(PairSet::sample("d", &spans[..1], 10, 0).is_empty());
    }

    fn arb_setup() -> impl Strategy<Value = (Vec<usize>, Vec<Option<u8>>, Vec<Option<u8>>, f64, f64, f64)> {
        (
            proptest::collection::vec(0usize..3, 6),
            proptest::collection::vec(proptest::option::of(0u8..3), 6),
            proptest::collection::vec(proptest::option::of(0u8..3), 6),
            0.0f64..2.0,
            0.0f64..1.0,
            0.0f64..1.0,
        )
    }

    proptest! {
        #[test]
        fn target_distance_symmetric_and_bounded((clusters, coarse, fine, ac, ak1, ak2) in arb_setup(), strict in any::<bool>()) {
            // spans (i, i); cluster id 0 means unclustered
            let mut groups: BTreeMap<usize, Vec<SpanRef>> = BTreeMap::new();
            for (i, &c) in clusters.iter().enumerate() {
                if c > 0 { groups.entry(c).or_default().push(s(i, i)); }
            }
            let mut d = Document::new("p", (0..6).map(|i| format!("w{i}")).collect(), groups.into_values().collect(), Default::default()).unwrap();
            for i in 0..6 {
                if let Some(l) = coarse[i] { d.annotate(s(i, i), "c", &l.to_string()); }
                if let Some(l) = fine[i] { d.annotate(s(i, i), "f", &l.to_string()); }
            }
            let w = LossWeights::new(ac, &[("c", ak1), ("f", ak2)], [1.0, 1.0, 1.0]).unwrap();
            let policy = if strict { UnlabeledPolicy::Strict } else { UnlabeledPolicy::Skip };
            let cl = d.cluster_index();
            for i in 0..6 {
                for j in 0..6 {
                    let a = target_distance(&s(i, i), &s(j, j), &d, &cl, &w, policy);
                    let b = target_distance(&s(j, j), &s(i, i), &d, &cl, &w, policy);
                    prop_assert_eq!(a, b);
                    prop_assert!(a >= 0.0 && a <= w.max_target() + 1e-12);
                }
            }
        }

        #[test]
        fn retrofit_loss_scale_invariant(
            u in proptest::collection::vec(-3.0f64..3.0, 4),
            v in proptest::collection::vec(-3.0f64..3.0, 4),
            c in 0.1f64..10.0,
        ) {
            prop_assume!(tape::norm(&u) > 1e-3 && tape::norm(&v) > 1e-3);
            let d = Document::new("a", vec!["x".into(), "y".into()], vec![], Default::default()).unwrap();
            let ps = PairSet { doc_id: "a".into(), pairs: vec![(s(0, 0), s(1, 1))] };
            let w = LossWeights::new(1.0, &[], [1.0, 1.0, 0.0]).unwrap();
            let xs: HashMap<SpanRef, Vec<f64>> = [(s(0, 0), u.clone()), (s(1, 1), v.clone())].into();
            let scaled: HashMap<SpanRef, Vec<f64>> = [(s(0, 0), u.iter().map(|x| x * c).collect()), (s(1, 1), v)].into();
            let a = retrofit_loss(std::slice::from_ref(&d), std::slice::from_ref(&ps), &[xs], &w, UnlabeledPolicy::Strict);
            let b = retrofit_loss(&[d], &[ps], &[scaled], &w, UnlabeledPolicy::Strict);
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn combined_monotone(cl in 0.0f64..5.0, rl in 0.0f64..5.0, sl in 0.0f64..5.0, bump in 0.0f64..5.0, which in 0usize..3) {
            let w = LossWeights::default();
            let base = combined_loss(cl, rl, sl, &w).unwrap();
            let mut c = [cl, rl, sl];
            c[which] += bump;
            prop_assert!(combined_loss(c[0], c[1], c[2], &w).unwrap() >= base);
        }
    }
}

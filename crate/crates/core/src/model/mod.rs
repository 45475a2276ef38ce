//! Token encoder, span representations and the mention / antecedent scorers.
//!
//! The encoder runs over the wordpiece sequence of a document: every piece is
//! embedded, then a learnable linear mixer combines it with a symmetric
//! window of neighbours. A span's representation is
//! `[x_start, x_end, x̂, φ(width)]` where `x_start` / `x_end` are the encoder
//! states of its first and last piece and `x̂` is an attention-weighted sum
//! over all of its pieces.

mod forward;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{enumerate_candidate_spans, Document, SpanRef, SubwordVocab};
use crate::error::{Error, Result};
use crate::tape::{self, Tape, Var};
use crate::training::{init_parameters, InitMode, ParamGroup, ParameterStore, TensorSpec};

pub use forward::{Forward, ParamVars, SpanVars};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_tok: usize,
    pub d_width: usize,
    pub window_radius: usize,
    /// Hidden units of both scorers; 0 makes them linear.
    pub hidden: usize,
    /// Inclusive lower bounds of the width buckets, ascending, starting at 1.
    pub width_buckets: Vec<usize>,
    pub max_width: usize,
    /// Fraction λ of the document length kept as candidate mentions.
    pub prune_ratio: f64,
    pub max_antecedents: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_tok: 16,
            d_width: 4,
            window_radius: 2,
            hidden: 16,
            width_buckets: vec![1, 2, 3, 4, 5, 8],
            max_width: crate::corpus::DEFAULT_MAX_WIDTH,
            prune_ratio: 0.4,
            max_antecedents: 50,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.d_tok == 0 {
            return bad("d_tok must be positive");
        }
        if self.max_width == 0 {
            return bad("max_width must be at least 1");
        }
        if !(self.prune_ratio > 0.0 && self.prune_ratio <= 1.0) {
            return bad("prune_ratio must lie in (0, 1]");
        }
        if self.width_buckets.first() != Some(&1)
            || self.width_buckets.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("width_buckets must be strictly ascending and start at 1");
        }
        Ok(())
    }

    pub fn span_dim(&self) -> usize {
        3 * self.d_tok + self.d_width
    }

    pub fn width_bucket(&self, width: usize) -> usize {
        width_bucket(width, &self.width_buckets)
    }

    pub fn candidate_budget(&self, n_tokens: usize) -> usize {
        prune_count(n_tokens, self.prune_ratio)
    }
}

/// Index of the last bucket whose lower bound is ≤ `width`.
pub fn width_bucket(width: usize, lower_bounds: &[usize]) -> usize {
    lower_bounds
        .iter()
        .rposition(|&lo| lo <= width)
        .unwrap_or(0)
}

fn prune_count(n_tokens: usize, ratio: f64) -> usize {
    (ratio * n_tokens as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Tensor indices of a feed-forward scorer.
#[derive(Clone, Copy, Debug)]
pub struct FfnnLayout {
    pub w1: usize,
    pub b1: usize,
    pub out: Option<(usize, usize)>,
    pub input_dim: usize,
    pub width: usize,
}

/// Where each parameter tensor lives in a [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub embed: usize,
    pub mixer: usize,
    pub mixer_bias: usize,
    pub attention: usize,
    pub attention_bias: usize,
    pub width: usize,
    pub mention: FfnnLayout,
    pub pair: FfnnLayout,
    pub scaffold: usize,
    pub specs: Vec<TensorSpec>,
}

impl Layout {
    pub fn new(config: &ModelConfig, vocab_size: usize, scaffold_classes: usize) -> Self {
        let d = config.d_tok;
        let mut specs = Vec::new();
        let mut push = |name: &str, rows: usize, cols: usize, group: ParamGroup, fan_in: Option<usize>| {
            specs.push(TensorSpec {
                name: name.to_string(),
                rows,
                cols,
                group,
                fan_in,
            });
            specs.len() - 1
        };
        let embed = push("encoder.embed", vocab_size, d, ParamGroup::Encoder, Some(d));
        let window = 2 * config.window_radius + 1;
        let mixer = push("encoder.mixer", d, window * d, ParamGroup::Encoder, Some(window * d));
        let mixer_bias = push("encoder.mixer_bias", 1, d, ParamGroup::Encoder, None);
        let attention = push("span.attention", 1, d, ParamGroup::Task, Some(d));
        let attention_bias = push("span.attention_bias", 1, 1, ParamGroup::Task, None);
        let width = push(
            "span.width",
            config.width_buckets.len(),
            config.d_width,
            ParamGroup::Task,
            Some(config.d_width.max(1)),
        );
        let mut ffnn = |prefix: &str, input_dim: usize| {
            let h = config.hidden;
            let width = h.max(1);
            let w1 = push(&format!("{prefix}.w1"), width, input_dim, ParamGroup::Task, Some(input_dim));
            let b1 = push(&format!("{prefix}.b1"), 1, width, ParamGroup::Task, None);
            let out = (h > 0).then(|| {
                (
                    push(&format!("{prefix}.w2"), 1, h, ParamGroup::Task, Some(h)),
                    push(&format!("{prefix}.b2"), 1, 1, ParamGroup::Task, None),
                )
            });
            FfnnLayout {
                w1,
                b1,
                out,
                input_dim,
                width,
            }
        };
        let dh = config.span_dim();
        let mention = ffnn("mention", dh);
        let pair = ffnn("pair", 3 * dh);
        // the scaffold head starts at zero: until it receives a gradient it
        // predicts the uniform distribution
        let scaffold = push("scaffold.w", scaffold_classes, d, ParamGroup::Task, None);
        Layout {
            embed,
            mixer,
            mixer_bias,
            attention,
            attention_bias,
            width,
            mention,
            pair,
            scaffold,
            specs,
        }
    }
}

/// A document tokenized into wordpieces, with its candidate spans enumerated.
#[derive(Clone, Debug)]
pub struct PreparedDoc {
    pub doc: Document,
    pub pieces: Vec<u32>,
    /// `[start, end)` piece range of every token.
    pub token_pieces: Vec<(usize, usize)>,
    pub spans: Vec<SpanRef>,
    pub cluster_of: HashMap<SpanRef, usize>,
    pub gold_spans: Vec<SpanRef>,
}

impl PreparedDoc {
    pub fn new(doc: Document, vocab: &SubwordVocab, max_width: usize) -> Self {
        let mut pieces = Vec::new();
        let mut token_pieces = Vec::with_capacity(doc.len());
        for tok in &doc.tokens {
            let start = pieces.len();
            let ids = vocab.tokenize_ids(&tok.surface);
            if ids.is_empty() {
                pieces.push(0);
            } else {
                pieces.extend(ids);
            }
            token_pieces.push((start, pieces.len()));
        }
        let spans = enumerate_candidate_spans(doc.len(), max_width);
        let cluster_of = doc.cluster_index();
        let gold_spans = doc.gold_spans();
        PreparedDoc {
            doc,
            pieces,
            token_pieces,
            spans,
            cluster_of,
            gold_spans,
        }
    }

    pub fn piece_range(&self, span: &SpanRef) -> (usize, usize) {
        (self.token_pieces[span.start].0, self.token_pieces[span.end].1 - 1)
    }
}

pub fn prepare_all(docs: &[Document], vocab: &SubwordVocab, max_width: usize) -> Vec<PreparedDoc> {
    docs.iter()
        .map(|d| PreparedDoc::new(d.clone(), vocab, max_width))
        .collect()
}

/// Span representation with its four parts kept apart.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanRepresentation {
    pub boundary_start: Vec<f64>,
    pub boundary_end: Vec<f64>,
    pub internal: Vec<f64>,
    pub width_feature: Vec<f64>,
}

impl SpanRepresentation {
    pub fn full(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(
            self.boundary_start.len() * 3 + self.width_feature.len(),
        );
        v.extend_from_slice(&self.boundary_start);
        v.extend_from_slice(&self.boundary_end);
        v.extend_from_slice(&self.internal);
        v.extend_from_slice(&self.width_feature);
        v
    }
}

/// Pruned mentions, in document order, with their mention scores.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub spans: Vec<SpanRef>,
    pub scores: Vec<f64>,
}

/// Keeps the `ceil(λ·n)` best-scoring spans, ties going to the earlier span,
/// and returns them sorted by position.
pub fn prune_mentions(
    n_tokens: usize,
    spans: &[SpanRef],
    scores: &[f64],
    ratio: f64,
) -> CandidateSet {
    let keep = prune_indices(n_tokens, spans, scores, ratio);
    CandidateSet {
        spans: keep.iter().map(|&i| spans[i]).collect(),
        scores: keep.iter().map(|&i| scores[i]).collect(),
    }
}

pub(crate) fn prune_indices(
    n_tokens: usize,
    spans: &[SpanRef],
    scores: &[f64],
    ratio: f64,
) -> Vec<usize> {
    let k = prune_count(n_tokens, ratio).min(spans.len());
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| spans[a].cmp(&spans[b]))
    });
    order.truncate(k);
    order.sort_by_key(|&i| spans[i]);
    order
}

/// Attention-weighted combination of `vectors` under softmax(`logits`).
pub fn attend(vectors: &[Vec<f64>], logits: &[f64]) -> Vec<f64> {
    let w = tape::softmax(logits);
    let dim = vectors[0].len();
    (0..dim)
        .map(|k| w.iter().zip(vectors).map(|(a, v)| a * v[k]).sum())
        .collect()
}

/// P(y) over `[ε, antecedents...]` given the antecedent scores; ε scores 0.
pub fn antecedent_distribution(scores: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("antecedent score {i}")));
    }
    let mut all = Vec::with_capacity(scores.len() + 1);
    all.push(0.0);
    all.extend_from_slice(scores);
    Ok(tape::softmax(&all))
}

/// A model: configuration, tokenizer and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: SubwordVocab,
    pub layout: Layout,
    pub store: ParameterStore,
}

/// Forward-pass values for one document.
#[derive(Clone, Debug)]
pub struct ScoredDocument {
    pub candidates: CandidateSet,
    /// Per candidate: indices (into `candidates`) of its antecedents, nearest last.
    pub antecedents: Vec<Vec<usize>>,
    /// Per candidate: s(i, j) for each listed antecedent.
    pub pair_scores: Vec<Vec<f64>>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: SubwordVocab, store: ParameterStore, scaffold_classes: usize) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, vocab.len(), scaffold_classes);
        store.check_layout(&layout.specs)?;
        Ok(Model {
            config,
            vocab,
            layout,
            store,
        })
    }

    /// A fresh model with seeded parameters.
    pub fn initialize(
        config: ModelConfig,
        vocab: SubwordVocab,
        scaffold_classes: usize,
        seed: u64,
        mode: InitMode,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, vocab.len(), scaffold_classes);
        let store = init_parameters(&layout.specs, seed, mode);
        Ok(Model {
            config,
            vocab,
            layout,
            store,
        })
    }

    pub fn prepare(&self, doc: &Document) -> PreparedDoc {
        PreparedDoc::new(doc.clone(), &self.vocab, self.config.max_width)
    }

    fn with_forward<R>(&self, doc: &PreparedDoc, f: impl FnOnce(&mut Tape, &ParamVars, &Forward) -> R) -> R {
        let mut t = Tape::new();
        let pv = ParamVars::load(&mut t, &self.store);
        let fw = Forward::run(&mut t, &pv, &self.config, &self.layout, doc);
        f(&mut t, &pv, &fw)
    }

    /// Encoder output, one vector per wordpiece.
    pub fn encode_tokens(&self, doc: &PreparedDoc) -> Vec<Vec<f64>> {
        let mut t = Tape::new();
        let pv = ParamVars::load(&mut t, &self.store);
        let xs = forward::encode(&mut t, &pv, &self.config, &self.layout, &doc.pieces);
        xs.iter().map(|x| t.values(x)).collect()
    }

    pub fn span_representation(&self, doc: &PreparedDoc, span: &SpanRef) -> SpanRepresentation {
        let mut t = Tape::new();
        let pv = ParamVars::load(&mut t, &self.store);
        let xs = forward::encode(&mut t, &pv, &self.config, &self.layout, &doc.pieces);
        let sv = forward::span_vars(&mut t, &pv, &self.config, &self.layout, doc, &xs, span);
        SpanRepresentation {
            boundary_start: t.values(&xs[sv.start_piece]),
            boundary_end: t.values(&xs[sv.end_piece]),
            internal: t.values(&sv.internal),
            width_feature: t.values(pv.row(self.layout.width, sv.bucket)),
        }
    }

    /// x̂ for each requested span.
    pub fn internals(&self, doc: &PreparedDoc, spans: &[SpanRef]) -> Vec<Vec<f64>> {
        let mut t = Tape::new();
        let pv = ParamVars::load(&mut t, &self.store);
        let xs = forward::encode(&mut t, &pv, &self.config, &self.layout, &doc.pieces);
        spans
            .iter()
            .map(|s| {
                let sv = forward::span_vars(&mut t, &pv, &self.config, &self.layout, doc, &xs, s);
                t.values(&sv.internal)
            })
            .collect()
    }

    pub fn mention_score(&self, h: &SpanRepresentation) -> f64 {
        let mut t = Tape::new();
        let pv = ParamVars::load(&mut t, &self.store);
        let x = t.leaves(&h.full());
        let s = forward::ffnn_full(&mut t, &pv, &self.layout.mention, &x);
        t.value(s)
    }

    /// s(i, j) = s_m(i) + s_m(j) + s_a(i, j); `antecedent` must precede `mention`.
    pub fn pair_score(
        &self,
        mention: (&SpanRef, &SpanRepresentation),
        antecedent: (&SpanRef, &SpanRepresentation),
    ) -> Result<f64> {
        if antecedent.0 >= mention.0 {
            return Err(Error::Ordering {
                mention: (mention.0.start, mention.0.end),
                antecedent: (antecedent.0.start, antecedent.0.end),
            });
        }
        let mut t = Tape::new();
        let pv = ParamVars::load(&mut t, &self.store);
        let hi = t.leaves(&mention.1.full());
        let hj = t.leaves(&antecedent.1.full());
        let smi = forward::ffnn_full(&mut t, &pv, &self.layout.mention, &hi);
        let smj = forward::ffnn_full(&mut t, &pv, &self.layout.mention, &hj);
        let prod = t.mul_vec(&hi, &hj);
        let input: Vec<Var> = hi.iter().chain(&hj).chain(&prod).copied().collect();
        let sa = forward::ffnn_full(&mut t, &pv, &self.layout.pair, &input);
        let s = t.sum(&[smi, smj, sa]);
        Ok(t.value(s))
    }

    pub fn score_document(&self, doc: &PreparedDoc) -> ScoredDocument {
        self.with_forward(doc, |t, _, fw| ScoredDocument {
            candidates: CandidateSet {
                spans: fw.candidates.iter().map(|&i| doc.spans[i]).collect(),
                scores: fw.candidates.iter().map(|&i| t.value(fw.mention_scores[i])).collect(),
            },
            antecedents: fw.antecedents.clone(),
            pair_scores: fw.pair_scores.iter().map(|v| t.values(v)).collect(),
        })
    }
}

#[cfg(test)]
mod tests;

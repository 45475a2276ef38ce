use super::{prune_indices, FfnnLayout, Layout, ModelConfig, PreparedDoc};
use crate::corpus::SpanRef;
use crate::tape::{Tape, Var};
use crate::training::ParameterStore;

/// Every parameter of a store registered as a tape leaf.
#[derive(Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
    offsets: Vec<usize>,
    cols: Vec<usize>,
}

impl ParamVars {
    pub fn load(t: &mut Tape, store: &ParameterStore) -> Self {
        let mut vars = Vec::with_capacity(store.flat_len());
        let mut offsets = Vec::with_capacity(store.tensors.len() + 1);
        let mut cols = Vec::with_capacity(store.tensors.len());
        for tensor in &store.tensors {
            offsets.push(vars.len());
            cols.push(tensor.cols);
            vars.extend(tensor.data.iter().map(|&v| t.leaf(v)));
        }
        offsets.push(vars.len());
        ParamVars {
            vars,
            offsets,
            cols,
        }
    }

    pub fn tensor(&self, i: usize) -> &[Var] {
        &self.vars[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn row(&self, i: usize, r: usize) -> &[Var] {
        let c = self.cols[i];
        &self.tensor(i)[r * c..(r + 1) * c]
    }

    pub fn scalar(&self, i: usize) -> Var {
        self.tensor(i)[0]
    }

    /// Gradient of every parameter, split per tensor, read from `adjoints`.
    pub fn gradients(&self, adjoints: &[f64]) -> Vec<Vec<f64>> {
        (0..self.cols.len())
            .map(|i| {
                self.tensor(i)
                    .iter()
                    .map(|v| adjoints.get(v.index()).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect()
    }
}

/// Encoder states of every wordpiece.
pub(crate) fn encode(
    t: &mut Tape,
    pv: &ParamVars,
    config: &ModelConfig,
    layout: &Layout,
    pieces: &[u32],
) -> Vec<Vec<Var>> {
    let d = config.d_tok;
    let r = config.window_radius as isize;
    let n = pieces.len() as isize;
    let bias = pv.tensor(layout.mixer_bias);
    let mut w = Vec::with_capacity((2 * r as usize + 1) * d);
    let mut x = Vec::with_capacity(w.capacity());
    (0..n)
        .map(|p| {
            (0..d)
                .map(|k| {
                    let row = pv.row(layout.mixer, k);
                    w.clear();
                    x.clear();
                    for o in -r..=r {
                        let q = p + o;
                        if q < 0 || q >= n {
                            continue;
                        }
                        let slot = (o + r) as usize;
                        w.extend_from_slice(&row[slot * d..(slot + 1) * d]);
                        x.extend_from_slice(pv.row(layout.embed, pieces[q as usize] as usize));
                    }
                    t.affine(&w, &x, Some(bias[k]))
                })
                .collect()
        })
        .collect()
}

pub(crate) fn attention_logits(t: &mut Tape, pv: &ParamVars, layout: &Layout, xs: &[Vec<Var>]) -> Vec<Var> {
    let w = pv.tensor(layout.attention);
    let b = pv.scalar(layout.attention_bias);
    xs.iter().map(|x| t.affine(w, x, Some(b))).collect()
}

/// Tape handles of one span's representation.
#[derive(Clone, Debug)]
pub struct SpanVars {
    pub start_piece: usize,
    pub end_piece: usize,
    pub internal: Vec<Var>,
    pub bucket: usize,
}

pub(crate) fn span_vars(
    t: &mut Tape,
    pv: &ParamVars,
    config: &ModelConfig,
    layout: &Layout,
    doc: &PreparedDoc,
    xs: &[Vec<Var>],
    span: &SpanRef,
) -> SpanVars {
    let logits = attention_logits(t, pv, layout, xs);
    build_span(t, config, doc, xs, &logits, span)
}

/// `logits[p]` is the attention logit of piece `p`.
fn build_span(
    t: &mut Tape,
    config: &ModelConfig,
    doc: &PreparedDoc,
    xs: &[Vec<Var>],
    logits: &[Var],
    span: &SpanRef,
) -> SpanVars {
    let (ps, pe) = doc.piece_range(span);
    let internal = if ps == pe {
        xs[ps].clone()
    } else {
        let alpha = t.softmax(&logits[ps..=pe]);
        let vecs: Vec<&[Var]> = xs[ps..=pe].iter().map(Vec::as_slice).collect();
        t.combine(&alpha, &vecs)
    };
    SpanVars {
        start_piece: ps,
        end_piece: pe,
        internal,
        bucket: config.width_bucket(span.width()),
    }
}

/// `W1[:, offset..offset+x.len()] · x` for every row of the first layer.
fn block(t: &mut Tape, pv: &ParamVars, f: &FfnnLayout, offset: usize, x: &[Var]) -> Vec<Var> {
    let w1 = pv.tensor(f.w1);
    (0..f.width)
        .map(|r| {
            let base = r * f.input_dim + offset;
            t.affine(&w1[base..base + x.len()], x, None)
        })
        .collect()
}

/// Sums first-layer partial products plus bias, then applies the rest of the
/// scorer.
fn ffnn_finish(t: &mut Tape, pv: &ParamVars, f: &FfnnLayout, parts: &[&[Var]]) -> Var {
    let b1 = pv.tensor(f.b1);
    let mut terms = Vec::with_capacity(parts.len() + 1);
    let pre: Vec<Var> = (0..f.width)
        .map(|r| {
            terms.clear();
            terms.extend(parts.iter().map(|p| p[r]));
            terms.push(b1[r]);
            t.sum(&terms)
        })
        .collect();
    ffnn_output(t, pv, f, &pre)
}

fn ffnn_output(t: &mut Tape, pv: &ParamVars, f: &FfnnLayout, pre: &[Var]) -> Var {
    match f.out {
        Some((w2, b2)) => {
            let z = t.tanh_vec(pre);
            t.affine(pv.tensor(w2), &z, Some(pv.scalar(b2)))
        }
        None => pre[0],
    }
}

/// The scorer applied to a full input vector, without any decomposition.
pub(crate) fn ffnn_full(t: &mut Tape, pv: &ParamVars, f: &FfnnLayout, x: &[Var]) -> Var {
    let w1 = pv.tensor(f.w1);
    let b1 = pv.tensor(f.b1);
    let pre: Vec<Var> = (0..f.width)
        .map(|r| t.affine(&w1[r * f.input_dim..(r + 1) * f.input_dim], x, Some(b1[r])))
        .collect();
    ffnn_output(t, pv, f, &pre)
}

/// Full forward pass over one document: encoder, all span representations,
/// mention scores, pruning and pairwise antecedent scores.
#[derive(Debug)]
pub struct Forward {
    pub xs: Vec<Vec<Var>>,
    pub spans: Vec<SpanVars>,
    pub mention_scores: Vec<Var>,
    /// Indices into `PreparedDoc::spans`, in document order.
    pub candidates: Vec<usize>,
    /// Per candidate position: positions of its antecedents, nearest last.
    pub antecedents: Vec<Vec<usize>>,
    pub pair_scores: Vec<Vec<Var>>,
    logits: Vec<Var>,
}

impl Forward {
    pub fn run(t: &mut Tape, pv: &ParamVars, config: &ModelConfig, layout: &Layout, doc: &PreparedDoc) -> Self {
        let d = config.d_tok;
        let xs = encode(t, pv, config, layout, &doc.pieces);
        let logits = attention_logits(t, pv, layout, &xs);
        let spans: Vec<SpanVars> = doc
            .spans
            .iter()
            .map(|s| build_span(t, config, doc, &xs, &logits, s))
            .collect();

        let m = &layout.mention;
        let start_proj: Vec<Vec<Var>> = doc
            .token_pieces
            .iter()
            .map(|&(s, _)| block(t, pv, m, 0, &xs[s]))
            .collect();
        let end_proj: Vec<Vec<Var>> = doc
            .token_pieces
            .iter()
            .map(|&(_, e)| block(t, pv, m, d, &xs[e - 1]))
            .collect();
        let width_proj: Vec<Vec<Var>> = (0..config.width_buckets.len())
            .map(|b| {
                if config.d_width == 0 {
                    Vec::new()
                } else {
                    block(t, pv, m, 3 * d, pv.row(layout.width, b))
                }
            })
            .collect();
        let mention_scores: Vec<Var> = doc
            .spans
            .iter()
            .zip(&spans)
            .map(|(s, sv)| {
                let a = block(t, pv, m, 2 * d, &sv.internal);
                let mut parts: Vec<&[Var]> = vec![&start_proj[s.start], &end_proj[s.end], &a];
                if config.d_width > 0 {
                    parts.push(&width_proj[sv.bucket]);
                }
                ffnn_finish(t, pv, m, &parts)
            })
            .collect();

        let values = t.values(&mention_scores);
        let candidates = prune_indices(doc.doc.len(), &doc.spans, &values, config.prune_ratio);

        let p = &layout.pair;
        let dh = config.span_dim();
        let full: Vec<Vec<Var>> = candidates
            .iter()
            .map(|&i| full_vars(pv, layout, &xs, &spans[i]))
            .collect();
        let a_proj: Vec<Vec<Var>> = full.iter().map(|h| block(t, pv, p, 0, h)).collect();
        let b_proj: Vec<Vec<Var>> = full.iter().map(|h| block(t, pv, p, dh, h)).collect();
        let mut antecedents = Vec::with_capacity(candidates.len());
        let mut pair_scores = Vec::with_capacity(candidates.len());
        for i in 0..candidates.len() {
            let ants: Vec<usize> = (i.saturating_sub(config.max_antecedents)..i).collect();
            let scores: Vec<Var> = ants
                .iter()
                .map(|&j| {
                    let prod = t.mul_vec(&full[i], &full[j]);
                    let c = block(t, pv, p, 2 * dh, &prod);
                    let sa = ffnn_finish(t, pv, p, &[&a_proj[i], &b_proj[j], &c]);
                    t.sum(&[mention_scores[candidates[i]], mention_scores[candidates[j]], sa])
                })
                .collect();
            antecedents.push(ants);
            pair_scores.push(scores);
        }
        Forward {
            xs,
            spans,
            mention_scores,
            candidates,
            antecedents,
            pair_scores,
            logits,
        }
    }

    /// x̂ of any span, reusing the enumerated spans where possible.
    pub fn internal(&self, t: &mut Tape, config: &ModelConfig, doc: &PreparedDoc, span: &SpanRef) -> Vec<Var> {
        match doc.spans.binary_search(span) {
            Ok(i) => self.spans[i].internal.clone(),
            Err(_) => build_span(t, config, doc, &self.xs, &self.logits, span).internal,
        }
    }
}

fn full_vars(pv: &ParamVars, layout: &Layout, xs: &[Vec<Var>], sv: &SpanVars) -> Vec<Var> {
    let mut h = Vec::new();
    h.extend_from_slice(&xs[sv.start_piece]);
    h.extend_from_slice(&xs[sv.end_piece]);
    h.extend_from_slice(&sv.internal);
    h.extend_from_slice(pv.row(layout.width, sv.bucket));
    h
}

use crate::corpus::{Document, SpanRef};
use crate::losses::{cosine_distance, target_distance, LossWeights, ScaffoldClasses, UnlabeledPolicy};
use crate::model::Model;

/// Fit of the span vectors to the knowledge-derived distances over all gold
/// span pairs of a corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrofitDiagnostics {
    /// Mean |d_T − cos_dist(x̂_i, x̂_j)|.
    pub mean_residual: f64,
    /// Mean cosine distance between spans of the same concept.
    pub within_concept: f64,
    /// Mean cosine distance between spans of different concepts.
    pub across_concept: f64,
    pub pairs: usize,
}

/// Residuals over every pair of gold spans in each document; the concept
/// split uses `lexicon` labels and skips unlabeled spans.
pub fn retrofit_diagnostics(
    model: &Model,
    docs: &[Document],
    weights: &LossWeights,
    policy: UnlabeledPolicy,
    lexicon: &str,
) -> RetrofitDiagnostics {
    let (mut res, mut n) = (0.0, 0usize);
    let (mut within, mut nw) = (0.0, 0usize);
    let (mut across, mut na) = (0.0, 0usize);
    for d in docs {
        let prepared = model.prepare(d);
        let spans = d.gold_spans();
        let xs = model.internals(&prepared, &spans);
        let clusters = d.cluster_index();
        for i in 0..spans.len() {
            for j in i + 1..spans.len() {
                let cos = cosine_distance(&xs[i], &xs[j]);
                res += (target_distance(&spans[i], &spans[j], d, &clusters, weights, policy) - cos).abs();
                n += 1;
                if let (Some(a), Some(b)) = (d.concept(&spans[i], lexicon), d.concept(&spans[j], lexicon)) {
                    if a == b {
                        within += cos;
                        nw += 1;
                    } else {
                        across += cos;
                        na += 1;
                    }
                }
            }
        }
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    RetrofitDiagnostics {
        mean_residual: mean(res, n),
        within_concept: mean(within, nw),
        across_concept: mean(across, na),
        pairs: n,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaffoldAccuracy {
    pub accuracy: f64,
    pub spans: usize,
    /// 1 / number of classes.
    pub chance: f64,
}

/// Accuracy of the scaffold classifier on labeled gold spans. A prediction
/// tied between several classes earns 1/|ties| when the true class is among
/// them.
pub fn scaffold_accuracy(model: &Model, docs: &[Document], classes: &ScaffoldClasses) -> ScaffoldAccuracy {
    let w = model.store.tensors[model.layout.scaffold].clone();
    let mut credit = 0.0;
    let mut total = 0usize;
    for d in docs {
        let labeled: Vec<(SpanRef, usize)> = d
            .gold_spans()
            .into_iter()
            .filter_map(|s| classes.class_of(d.concept(&s, &classes.lexicon)).map(|c| (s, c)))
            .collect();
        if labeled.is_empty() {
            continue;
        }
        let prepared = model.prepare(d);
        let spans: Vec<SpanRef> = labeled.iter().map(|(s, _)| *s).collect();
        let xs = model.internals(&prepared, &spans);
        for ((_, c), x) in labeled.iter().zip(&xs) {
            let logits: Vec<f64> = (0..w.rows)
                .map(|k| w.data[k * w.cols..(k + 1) * w.cols].iter().zip(x).map(|(a, b)| a * b).sum())
                .collect();
            let best = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ties: Vec<usize> = (0..logits.len()).filter(|&k| logits[k] == best).collect();
            if ties.contains(c) {
                credit += 1.0 / ties.len() as f64;
            }
            total += 1;
        }
    }
    ScaffoldAccuracy {
        accuracy: if total == 0 { 0.0 } else { credit / total as f64 },
        spans: total,
        chance: if classes.is_empty() { 0.0 } else { 1.0 / classes.len() as f64 },
    }
}

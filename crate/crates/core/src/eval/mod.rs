//! Decoding predicted clusters, the metric suite and evaluation slices.

mod diagnostics;
mod metrics;
mod slices;

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SpanRef};
use crate::exec::Execution;
use crate::model::{Model, ScoredDocument};

pub use diagnostics::{retrofit_diagnostics, scaffold_accuracy, RetrofitDiagnostics, ScaffoldAccuracy};
pub use metrics::{b_cubed, b_cubed_counts, ceaf_e, ceaf_e_counts, max_assignment, muc, muc_counts, phi4, Counts, Prf};
pub use slices::{
    bucket_index, bucket_label, chain_concept, slice_by_concept, slice_by_subword_bucket, EvalSlice, BUCKET_COUNT,
    BUCKET_WIDTH,
};

/// Per-metric scores and their unweighted mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub muc: Prf,
    pub b_cubed: Prf,
    pub ceaf_e: Prf,
    pub average: Prf,
}

/// Means of R, P and F1 across the three metrics.
pub fn average_report(muc: Prf, b_cubed: Prf, ceaf_e: Prf) -> MetricReport {
    let mean = |f: fn(&Prf) -> f64| (f(&muc) + f(&b_cubed) + f(&ceaf_e)) / 3.0;
    MetricReport {
        muc,
        b_cubed,
        ceaf_e,
        average: Prf {
            recall: mean(|p| p.recall),
            precision: mean(|p| p.precision),
            f1: mean(|p| p.f1),
        },
    }
}

/// Corpus-level report: counts are summed over documents before dividing.
pub fn evaluate_clusterings<M: Copy + Eq + Hash>(gold: &[Vec<Vec<M>>], pred: &[Vec<Vec<M>>]) -> MetricReport {
    let mut m = Counts::default();
    let mut b = Counts::default();
    let mut c = Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        m += muc_counts(g, p);
        b += b_cubed_counts(g, p);
        c += ceaf_e_counts(g, p);
    }
    average_report(m.prf(), b.prf(), c.prf_entity())
}

/// Argmax antecedent per candidate (`None` is ε). Ties go to ε, then to the
/// nearest antecedent.
pub fn predict_links(scored: &ScoredDocument) -> Vec<Option<usize>> {
    scored
        .antecedents
        .iter()
        .zip(&scored.pair_scores)
        .map(|(ants, scores)| {
            let mut best = (0.0, None);
            // antecedent lists run farthest to nearest
            for (k, &j) in ants.iter().enumerate().rev() {
                if scores[k] > best.0 {
                    best = (scores[k], Some(j));
                }
            }
            best.1
        })
        .collect()
}

/// Predicted antecedent of every candidate mention of `doc`.
pub fn predict_antecedents(model: &Model, doc: &Document) -> Vec<(SpanRef, Option<SpanRef>)> {
    let scored = model.score_document(&model.prepare(doc));
    let spans = &scored.candidates.spans;
    predict_links(&scored)
        .into_iter()
        .enumerate()
        .map(|(i, a)| (spans[i], a.map(|j| spans[j])))
        .collect()
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut x = x;
        while self.parent[x] != r {
            let next = self.parent[x];
            self.parent[x] = r;
            x = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connected components of the non-ε links, singletons dropped. Clusters are
/// sorted internally and by their first mention.
pub fn decode_clusters<M: Copy + Ord + Hash>(links: &[(M, Option<M>)]) -> Vec<Vec<M>> {
    let mut ids: HashMap<M, usize> = HashMap::new();
    let mut mentions = Vec::new();
    let mut id = |m: M, mentions: &mut Vec<M>| {
        *ids.entry(m).or_insert_with(|| {
            mentions.push(m);
            mentions.len() - 1
        })
    };
    let mut edges = Vec::new();
    for &(m, a) in links {
        let i = id(m, &mut mentions);
        if let Some(a) = a {
            let j = id(a, &mut mentions);
            edges.push((i, j));
        }
    }
    let mut ds = DisjointSet::new(mentions.len());
    for (i, j) in edges {
        ds.union(i, j);
    }
    let mut groups: HashMap<usize, Vec<M>> = HashMap::new();
    for (i, &m) in mentions.iter().enumerate() {
        groups.entry(ds.find(i)).or_default().push(m);
    }
    let mut clusters: Vec<Vec<M>> = groups
        .into_values()
        .filter(|c| c.len() >= 2)
        .map(|mut c| {
            c.sort();
            c
        })
        .collect();
    clusters.sort();
    clusters
}

/// Predicted clusters of one document.
pub fn predict_clusters(model: &Model, doc: &Document) -> Vec<Vec<SpanRef>> {
    decode_clusters(&predict_antecedents(model, doc))
}

/// Predictions and the corpus-level report of a model on `docs`.
#[derive(Clone, Debug)]
pub struct CorpusEvaluation {
    pub report: MetricReport,
    pub predictions: Vec<Vec<Vec<SpanRef>>>,
}

pub fn evaluate_model(model: &Model, docs: &[Document], exec: Execution) -> CorpusEvaluation {
    let predictions = exec.map(docs, |d| predict_clusters(model, d));
    let gold: Vec<Vec<Vec<SpanRef>>> = docs.iter().map(|d| d.gold_clusters.clone()).collect();
    CorpusEvaluation {
        report: evaluate_clusterings(&gold, &predictions),
        predictions,
    }
}

/// Full report with its slices, ready to be written out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub overall: MetricReport,
    pub concepts: Vec<EvalSlice>,
    pub buckets: Vec<EvalSlice>,
}

impl EvaluationReport {
    /// `slice,metric,recall,precision,f1` rows; the overall report is keyed
    /// `all`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,slice,chains,metric,recall,precision,f1\n");
        let mut rows = |group: &str, key: &str, chains: Option<usize>, r: &MetricReport| {
            for (name, p) in [
                ("muc", r.muc),
                ("b_cubed", r.b_cubed),
                ("ceaf_e", r.ceaf_e),
                ("average", r.average),
            ] {
                s.push_str(&format!(
                    "{group},{key},{},{name},{:.6},{:.6},{:.6}\n",
                    chains.map_or(String::new(), |c| c.to_string()),
                    p.recall,
                    p.precision,
                    p.f1
                ));
            }
        };
        rows("overall", "all", None, &self.overall);
        for sl in &self.concepts {
            rows("concept", &sl.key, Some(sl.chains), &sl.report);
        }
        for sl in &self.buckets {
            rows("subword_bucket", &sl.key, Some(sl.chains), &sl.report);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

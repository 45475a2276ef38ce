use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{evaluate_clusterings, MetricReport};
use crate::corpus::{mean_subwords_per_span, Document, SpanRef, SubwordVocab};

pub const BUCKET_WIDTH: f64 = 1.7;
/// Regular buckets; chains past the last one land in an overflow slice.
pub const BUCKET_COUNT: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSlice {
    pub key: String,
    pub chains: usize,
    pub report: MetricReport,
}

/// Label of a chain: the label of its first labeled span.
pub fn chain_concept<'a>(doc: &'a Document, chain: &[SpanRef], lexicon: &str) -> Option<&'a str> {
    let mut spans = chain.to_vec();
    spans.sort();
    spans.iter().find_map(|s| doc.concept(s, lexicon))
}

/// Bucket `k` covers `[k·1.7, (k+1)·1.7)`; returns `BUCKET_COUNT` for overflow.
pub fn bucket_index(mean: f64) -> usize {
    let mut k = 0;
    while k < BUCKET_COUNT && mean >= (k + 1) as f64 * BUCKET_WIDTH - 1e-9 {
        k += 1;
    }
    k
}

pub fn bucket_label(k: usize) -> String {
    let lo = k as f64 * BUCKET_WIDTH;
    if k >= BUCKET_COUNT {
        format!("[{lo:.1},inf)")
    } else {
        format!("[{lo:.1},{:.1})", lo + BUCKET_WIDTH)
    }
}

/// Restricts every document to the selected gold chains and intersects the
/// predicted clusters with their mentions; singletons left by the
/// intersection are dropped.
fn restricted_report(
    docs: &[Document],
    preds: &[Vec<Vec<SpanRef>>],
    selected: &[Vec<usize>],
) -> MetricReport {
    let mut gold = Vec::with_capacity(docs.len());
    let mut pred = Vec::with_capacity(docs.len());
    for ((d, p), sel) in docs.iter().zip(preds).zip(selected) {
        let chains: Vec<Vec<SpanRef>> = sel.iter().map(|&c| d.gold_clusters[c].clone()).collect();
        let mentions: HashSet<SpanRef> = chains.iter().flatten().copied().collect();
        let kept: Vec<Vec<SpanRef>> = p
            .iter()
            .map(|c| c.iter().filter(|m| mentions.contains(m)).copied().collect::<Vec<_>>())
            .filter(|c| c.len() >= 2)
            .collect();
        gold.push(chains);
        pred.push(kept);
    }
    evaluate_clusterings(&gold, &pred)
}

fn slices_by<K: Ord + Clone>(
    docs: &[Document],
    preds: &[Vec<Vec<SpanRef>>],
    key_of: impl Fn(&Document, &[SpanRef]) -> Option<K>,
    label: impl Fn(&K) -> String,
) -> Vec<EvalSlice> {
    let mut by_key: BTreeMap<K, Vec<Vec<usize>>> = BTreeMap::new();
    for (di, d) in docs.iter().enumerate() {
        for (ci, chain) in d.gold_clusters.iter().enumerate() {
            if let Some(k) = key_of(d, chain) {
                by_key.entry(k).or_insert_with(|| vec![Vec::new(); docs.len()])[di].push(ci);
            }
        }
    }
    by_key
        .into_iter()
        .map(|(k, selected)| EvalSlice {
            key: label(&k),
            chains: selected.iter().map(Vec::len).sum(),
            report: restricted_report(docs, preds, &selected),
        })
        .collect()
}

/// One slice per concept of `lexicon`, over the chains carrying it. Concepts
/// with no chains are omitted.
pub fn slice_by_concept(docs: &[Document], preds: &[Vec<Vec<SpanRef>>], lexicon: &str) -> Vec<EvalSlice> {
    slices_by(
        docs,
        preds,
        |d, chain| chain_concept(d, chain, lexicon).map(str::to_string),
        Clone::clone,
    )
}

/// One slice per wordpiece bucket of the chains' mean pieces per span.
pub fn slice_by_subword_bucket(
    docs: &[Document],
    preds: &[Vec<Vec<SpanRef>>],
    vocab: &SubwordVocab,
) -> Vec<EvalSlice> {
    slices_by(
        docs,
        preds,
        |d, chain| (!chain.is_empty()).then(|| bucket_index(mean_subwords_per_span(chain, d, vocab))),
        |k| bucket_label(*k),
    )
}

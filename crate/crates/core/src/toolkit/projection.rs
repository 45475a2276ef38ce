use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, SpanRef};
use crate::error::{Error, Result};
use crate::eval::chain_concept;
use crate::model::Model;

/// One sampled gold mention–antecedent pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionRecord {
    pub concept: String,
    pub doc_id: String,
    pub mention: SpanRef,
    pub antecedent: SpanRef,
    /// x̂(antecedent) − x̂(mention).
    pub offset: Vec<f64>,
    pub point: [f64; 2],
}

impl ProjectionRecord {
    pub fn mention_id(&self) -> String {
        format!("{}:{}-{}", self.doc_id, self.mention.start, self.mention.end)
    }

    pub fn antecedent_id(&self) -> String {
        format!("{}:{}-{}", self.doc_id, self.antecedent.start, self.antecedent.end)
    }
}

/// Every (mention, earlier span of the same chain) pair in `docs`.
pub fn gold_mention_pairs(docs: &[Document]) -> Vec<(usize, SpanRef, SpanRef)> {
    let mut out = Vec::new();
    for (di, d) in docs.iter().enumerate() {
        for chain in &d.gold_clusters {
            let mut c = chain.clone();
            c.sort();
            for i in 1..c.len() {
                for j in 0..i {
                    out.push((di, c[i], c[j]));
                }
            }
        }
    }
    out
}

/// Samples `n` gold mention–antecedent pairs with `seed` and computes their
/// x̂ offsets. Points are left at the origin until [`pca_2d`] fills them.
pub fn mention_antecedent_offsets(
    model: &Model,
    docs: &[Document],
    n: usize,
    seed: u64,
    lexicon: &str,
) -> Vec<ProjectionRecord> {
    let pairs = gold_mention_pairs(docs);
    let chosen: Vec<usize> = if pairs.len() <= n {
        if pairs.len() < n {
            log::warn!("only {} gold mention-antecedent pairs available, {n} requested", pairs.len());
        }
        (0..pairs.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = rand::seq::index::sample(&mut rng, pairs.len(), n).into_vec();
        v.sort_unstable();
        v
    };
    let mut records = Vec::with_capacity(chosen.len());
    let mut cache: Option<(usize, crate::model::PreparedDoc)> = None;
    for k in chosen {
        let (di, m, a) = pairs[k];
        let d = &docs[di];
        if cache.as_ref().is_none_or(|(i, _)| *i != di) {
            cache = Some((di, model.prepare(d)));
        }
        let prepared = &cache.as_ref().expect("cached").1;
        let xs = model.internals(prepared, &[m, a]);
        let chain = d.gold_clusters.iter().find(|c| c.contains(&m)).expect("gold span");
        records.push(ProjectionRecord {
            concept: chain_concept(d, chain, lexicon).unwrap_or("none").to_string(),
            doc_id: d.doc_id.clone(),
            mention: m,
            antecedent: a,
            offset: xs[1].iter().zip(&xs[0]).map(|(x, y)| x - y).collect(),
            point: [0.0, 0.0],
        });
    }
    records
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal axes; a zero vector when the data lacks that direction.
    pub components: [Vec<f64>; 2],
    /// Variances along the two axes, non-increasing.
    pub explained: [f64; 2],
    pub points: Vec<[f64; 2]>,
}

/// Two-component PCA via the symmetric eigendecomposition of the sample
/// covariance. Each axis is signed so that its largest-magnitude coordinate
/// is positive.
pub fn pca_2d(data: &[Vec<f64>]) -> Result<Pca> {
    if data.len() < 3 {
        return Err(Error::Config(format!("PCA needs at least 3 vectors, got {}", data.len())));
    }
    let dim = data[0].len();
    if data.iter().any(|v| v.len() != dim) {
        return Err(Error::Config("PCA inputs differ in dimension".into()));
    }
    let n = data.len();
    let mean: Vec<f64> = (0..dim).map(|k| data.iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, dim, |i, k| data[i][k] - mean[k]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * top.max(1.0);
    let mut components = [vec![0.0; dim], vec![0.0; dim]];
    let mut explained = [0.0; 2];
    for c in 0..2.min(dim) {
        let lambda = eig.eigenvalues[order[c]];
        if lambda <= tol {
            log::warn!("PCA input is rank deficient; component {} zero-filled", c + 1);
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(order[c]).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (k, x)| if x.abs() > v[best].abs() { k } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components[c] = v;
        explained[c] = lambda;
    }
    let points = data
        .iter()
        .map(|row| {
            let p = |c: &[f64]| row.iter().zip(&mean).zip(c).map(|((x, m), w)| (x - m) * w).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    Ok(Pca {
        mean,
        components,
        explained,
        points,
    })
}

/// Fills in the 2-D points of `records` from a pooled PCA of their offsets.
pub fn project_records(records: &mut [ProjectionRecord]) -> Result<Pca> {
    let offsets: Vec<Vec<f64>> = records.iter().map(|r| r.offset.clone()).collect();
    let pca = pca_2d(&offsets)?;
    for (r, p) in records.iter_mut().zip(&pca.points) {
        r.point = *p;
    }
    Ok(pca)
}

/// `concept,x,y,mention,antecedent` table.
pub fn projection_csv(records: &[ProjectionRecord]) -> String {
    let mut s = String::from("concept,x,y,mention,antecedent\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{:.10},{:.10},{},{}",
            r.concept,
            r.point[0],
            r.point[1],
            r.mention_id(),
            r.antecedent_id()
        );
    }
    s
}

/// Mean pairwise cosine similarity of offsets sharing a concept and of
/// offsets with different concepts.
pub fn offset_separation(records: &[ProjectionRecord]) -> (f64, f64) {
    let (mut w, mut nw, mut a, mut na) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            let sim = 1.0 - crate::losses::cosine_distance(&records[i].offset, &records[j].offset);
            if records[i].concept == records[j].concept {
                w += sim;
                nw += 1;
            } else {
                a += sim;
                na += 1;
            }
        }
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    (mean(w, nw), mean(a, na))
}

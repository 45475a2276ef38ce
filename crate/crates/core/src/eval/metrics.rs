//! MUC, B³ and CEAF-e over clusterings of any mention type.
//!
//! Each metric first produces [`Counts`] (numerators and denominators of
//! recall and precision) so corpus-level scores can be summed over documents
//! before dividing.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(recall: f64, precision: f64) -> Self {
        let f1 = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * recall * precision / (recall + precision)
        };
        Prf {
            recall,
            precision,
            f1,
        }
    }

    pub const PERFECT: Prf = Prf {
        recall: 1.0,
        precision: 1.0,
        f1: 1.0,
    };
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Counts {
    pub recall_num: f64,
    pub recall_den: f64,
    pub precision_num: f64,
    pub precision_den: f64,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.recall_num += o.recall_num;
        self.recall_den += o.recall_den;
        self.precision_num += o.precision_num;
        self.precision_den += o.precision_den;
    }
}

impl Counts {
    /// Ratios with a zero denominator read as 0.
    pub fn prf(&self) -> Prf {
        let div = |n: f64, d: f64| if d == 0.0 { 0.0 } else { n / d };
        Prf::new(div(self.recall_num, self.recall_den), div(self.precision_num, self.precision_den))
    }

    /// CEAF convention: both sides empty is a perfect score.
    pub fn prf_entity(&self) -> Prf {
        if self.recall_den == 0.0 && self.precision_den == 0.0 {
            Prf::PERFECT
        } else {
            self.prf()
        }
    }

    pub fn swapped(&self) -> Counts {
        Counts {
            recall_num: self.precision_num,
            recall_den: self.precision_den,
            precision_num: self.recall_num,
            precision_den: self.recall_den,
        }
    }
}

fn membership<M: Copy + Eq + Hash>(clusters: &[Vec<M>]) -> HashMap<M, usize> {
    clusters
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |&m| (m, i)))
        .collect()
}

/// Σ_C (|C| − |partition of C by `other`|) and Σ_C (|C| − 1).
fn muc_side<M: Copy + Eq + Hash>(key: &[Vec<M>], other: &[Vec<M>]) -> (f64, f64) {
    let of = membership(other);
    let mut num = 0usize;
    let mut den = 0usize;
    for c in key {
        if c.is_empty() {
            continue;
        }
        let mut parts: Vec<usize> = Vec::new();
        let mut singles = 0usize;
        for m in c {
            match of.get(m) {
                Some(&p) => {
                    if !parts.contains(&p) {
                        parts.push(p);
                    }
                }
                None => singles += 1,
            }
        }
        num += c.len() - (parts.len() + singles);
        den += c.len() - 1;
    }
    (num as f64, den as f64)
}

pub fn muc_counts<M: Copy + Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Counts {
    let (rn, rd) = muc_side(gold, pred);
    let (pn, pd) = muc_side(pred, gold);
    Counts {
        recall_num: rn,
        recall_den: rd,
        precision_num: pn,
        precision_den: pd,
    }
}

/// Link-based MUC.
pub fn muc<M: Copy + Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Prf {
    muc_counts(gold, pred).prf()
}

/// Σ over mentions of `key` of |K ∩ O(m)| / |K|, where O(m) is the `other`
/// cluster holding m or the implicit singleton {m}.
fn b3_side<M: Copy + Eq + Hash>(key: &[Vec<M>], other: &[Vec<M>]) -> (f64, f64) {
    let of = membership(other);
    let mut num = 0.0;
    let mut den = 0usize;
    for c in key {
        for m in c {
            let shared = match of.get(m) {
                Some(&o) => {
                    let oc = &other[o];
                    c.iter().filter(|x| oc.contains(x)).count()
                }
                None => 1,
            };
            num += shared as f64 / c.len() as f64;
            den += 1;
        }
    }
    (num, den as f64)
}

pub fn b_cubed_counts<M: Copy + Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Counts {
    let (rn, rd) = b3_side(gold, pred);
    let (pn, pd) = b3_side(pred, gold);
    Counts {
        recall_num: rn,
        recall_den: rd,
        precision_num: pn,
        precision_den: pd,
    }
}

/// Mention-based B³.
pub fn b_cubed<M: Copy + Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Prf {
    b_cubed_counts(gold, pred).prf()
}

/// φ₄(K, R) = 2|K ∩ R| / (|K| + |R|).
pub fn phi4<M: Copy + Eq>(k: &[M], r: &[M]) -> f64 {
    let shared = k.iter().filter(|m| r.contains(m)).count();
    2.0 * shared as f64 / (k.len() + r.len()) as f64
}

pub fn ceaf_e_counts<M: Copy + Eq>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Counts {
    let sim: Vec<Vec<f64>> = gold
        .iter()
        .map(|g| pred.iter().map(|p| phi4(g, p)).collect())
        .collect();
    let (best, _) = max_assignment(&sim, pred.len());
    Counts {
        recall_num: best,
        recall_den: gold.len() as f64,
        precision_num: best,
        precision_den: pred.len() as f64,
    }
}

/// Entity-alignment CEAF with φ₄ similarity.
pub fn ceaf_e<M: Copy + Eq>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Prf {
    ceaf_e_counts(gold, pred).prf_entity()
}

/// Maximum-weight one-to-one assignment of rows to columns (Kuhn–Munkres
/// with potentials, O(n³)). Returns the best total and, per row, its column.
pub fn max_assignment(weights: &[Vec<f64>], cols: usize) -> (f64, Vec<Option<usize>>) {
    let rows = weights.len();
    if rows == 0 || cols == 0 {
        return (0.0, vec![None; rows]);
    }
    let n = rows.max(cols);
    // minimize cost = −weight on a square matrix padded with zeros
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            -weights[i][j]
        } else {
            0.0
        }
    };
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![None; rows];
    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            assign[i - 1] = Some(j - 1);
            total += weights[i - 1][j - 1];
        }
    }
    (total, assign)
}

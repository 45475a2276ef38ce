use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schedule::document_gradients;
use super::store::{Gradients, ParameterStore};
use crate::error::Result;
use crate::exec::Execution;
use crate::losses::{document_objective, Objective};
use crate::model::{Model, ParamVars, PreparedDoc};
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest error and its (analytic, numeric) pair.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub threshold: f64,
    pub epsilon: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error < self.threshold)
    }

    /// `tensor,coordinates,max_rel_error,pass` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tensor,coordinates,max_rel_error,pass\n");
        for t in &self.tensors {
            s.push_str(&format!(
                "{},{},{:.6e},{}\n",
                t.name,
                t.coordinates,
                t.max_rel_error,
                t.max_rel_error < self.threshold
            ));
        }
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` on up to
/// `per_tensor` seeded coordinates of every tensor.
pub fn gradient_check<F>(
    store: &ParameterStore,
    loss: F,
    analytic: &Gradients,
    epsilon: f64,
    threshold: f64,
    per_tensor: usize,
    seed: u64,
    exec: Execution,
) -> GradCheckReport
where
    F: Fn(&ParameterStore) -> f64 + Sync + Send,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::new();
    for (ti, t) in store.tensors.iter().enumerate() {
        let coords: BTreeSet<usize> = if t.len() <= per_tensor {
            (0..t.len()).collect()
        } else {
            rand::seq::index::sample(&mut rng, t.len(), per_tensor).into_iter().collect()
        };
        probes.extend(coords.into_iter().map(|k| (ti, k)));
    }
    let numeric = exec.map(&probes, |&(ti, k)| {
        let mut s = store.clone();
        let x = s.tensors[ti].data[k];
        s.tensors[ti].data[k] = x + epsilon;
        let up = loss(&s);
        s.tensors[ti].data[k] = x - epsilon;
        let down = loss(&s);
        (up - down) / (2.0 * epsilon)
    });
    let mut tensors: Vec<TensorCheck> = store
        .tensors
        .iter()
        .map(|t| TensorCheck {
            name: t.name.clone(),
            coordinates: 0,
            max_rel_error: 0.0,
            worst: None,
        })
        .collect();
    for (&(ti, k), gn) in probes.iter().zip(numeric) {
        let ga = analytic.tensors[ti][k];
        let err = relative_error(ga, gn);
        let tc = &mut tensors[ti];
        tc.coordinates += 1;
        if err > tc.max_rel_error || tc.worst.is_none() {
            tc.max_rel_error = tc.max_rel_error.max(err);
            tc.worst = Some((k, ga, gn));
        }
    }
    GradCheckReport {
        tensors,
        threshold,
        epsilon,
    }
}

/// Value of the summed objective over `docs` under `store`.
fn objective_value(model: &Model, store: &ParameterStore, docs: &[PreparedDoc], objective: &Objective) -> f64 {
    docs.iter()
        .map(|d| {
            let mut t = Tape::new();
            let pv = ParamVars::load(&mut t, store);
            match document_objective(&mut t, &pv, &model.config, &model.layout, d, objective) {
                Ok(o) => t.value(o.total),
                Err(_) => f64::NAN,
            }
        })
        .sum()
}

/// Gradient check of the full objective summed over `docs`.
pub fn gradient_check_objective(
    model: &Model,
    docs: &[PreparedDoc],
    objective: &Objective,
    epsilon: f64,
    threshold: f64,
    per_tensor: usize,
    seed: u64,
    exec: Execution,
) -> Result<GradCheckReport> {
    let mut analytic = Gradients::zeros_like(&model.store);
    for d in docs {
        analytic.add_assign(&document_gradients(model, d, objective)?.grads);
    }
    Ok(gradient_check(
        &model.store,
        |s| objective_value(model, s, docs, objective),
        &analytic,
        epsilon,
        threshold,
        per_tensor,
        seed,
        exec,
    ))
}

use serde::{Deserialize, Serialize};

use super::store::{Gradients, ParamGroup, ParameterStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent, for debugging.
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Encoder tensors.
    pub base: f64,
    /// Task heads: attention, width features, scorers, scaffold.
    pub task: f64,
}

impl LearningRates {
    pub fn for_group(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Encoder => self.base,
            ParamGroup::Task => self.task,
        }
    }
}

/// Adaptive-moment optimizer state (or stateless SGD).
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParameterStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Optimizer {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients, rates: &LearningRates) -> Result<()> {
        if grads.tensors.len() != store.tensors.len() {
            return Err(Error::Shape {
                name: "gradients".into(),
                expected: store.tensors.len(),
                actual: grads.tensors.len(),
            });
        }
        for (t, g) in store.tensors.iter().zip(&grads.tensors) {
            if t.len() != g.len() {
                return Err(Error::Shape {
                    name: t.name.clone(),
                    expected: t.len(),
                    actual: g.len(),
                });
            }
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (i, (t, g)) in store.tensors.iter_mut().zip(&grads.tensors).enumerate() {
            let lr = rates.for_group(t.group);
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, gi) in t.data.iter_mut().zip(g) {
                        *p -= lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for k in 0..g.len() {
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                        let mhat = m[k] / bc1;
                        let vhat = v[k] / bc2;
                        t.data[k] -= lr * mhat / (vhat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        store.step += 1;
        Ok(())
    }
}

/// One update of `store` in place.
pub fn optimizer_step(
    optimizer: &mut Optimizer,
    store: &mut ParameterStore,
    grads: &Gradients,
    rates: &LearningRates,
) -> Result<()> {
    optimizer.step(store, grads, rates)
}

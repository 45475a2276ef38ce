use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which learning rate a tensor trains under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Token encoder (embeddings and mixer): the base rate.
    Encoder,
    /// Span attention, width features, scorers and scaffold: the task rate.
    Task,
}

impl ParamGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Task => "task",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub group: ParamGroup,
    /// Uniform init range is ±1/√fan_in; `None` means zero init.
    pub fan_in: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub group: ParamGroup,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    pub tensors: Vec<Tensor>,
    pub step: u64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    #[default]
    Uniform,
    Zeros,
}

/// Deterministic initialisation: weights uniform in ±1/√fan_in, biases and
/// the scaffold head zero.
pub fn init_parameters(specs: &[TensorSpec], seed: u64, mode: InitMode) -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = specs
        .iter()
        .map(|s| {
            let n = s.rows * s.cols;
            let data = match (mode, s.fan_in) {
                (InitMode::Uniform, Some(f)) => {
                    let a = 1.0 / (f.max(1) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                }
                _ => vec![0.0; n],
            };
            Tensor {
                name: s.name.clone(),
                rows: s.rows,
                cols: s.cols,
                group: s.group,
                data,
            }
        })
        .collect();
    ParameterStore {
        tensors,
        step: 0,
        seed,
    }
}

impl ParameterStore {
    pub fn flat_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tensors.iter().map(|t| t.name.as_str()).collect()
    }

    /// Verifies names and shapes against a layout.
    pub fn check_layout(&self, specs: &[TensorSpec]) -> Result<()> {
        if specs.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&self.tensors) {
            if s.name != t.name {
                return Err(Error::Checkpoint(format!(
                    "expected tensor {}, found {}",
                    s.name, t.name
                )));
            }
            if s.rows != t.rows || s.cols != t.cols || t.data.len() != s.rows * s.cols {
                return Err(Error::Shape {
                    name: s.name.clone(),
                    expected: s.rows * s.cols,
                    actual: t.data.len(),
                });
            }
        }
        Ok(())
    }
}

/// One gradient vector per tensor of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Gradients {
            tensors: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.tensors.iter_mut().flatten().for_each(|x| *x *= c);
    }

    /// Errors with the name of the first tensor holding NaN or ±∞.
    pub fn check_finite(&self, store: &ParameterStore) -> Result<()> {
        for (g, t) in self.tensors.iter().zip(&store.tensors) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", t.name)));
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

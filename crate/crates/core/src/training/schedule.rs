use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{LearningRates, Optimizer, OptimizerKind};
use super::store::{Gradients, ParameterStore};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::losses::{combined_loss, document_objective, LossWeights, Objective};
use crate::model::{Model, ParamVars, PreparedDoc};
use crate::tape::Tape;

/// Loss, components and parameter gradients of one document.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub grads: Gradients,
    /// Summed CL, RL, SL; a component with β = 0 reads 0.
    pub components: [f64; 3],
    pub total: f64,
    pub pruning_misses: usize,
}

/// Exact reverse-mode gradient of one document's combined loss.
pub fn document_gradients(model: &Model, doc: &PreparedDoc, objective: &Objective) -> Result<BatchResult> {
    let mut t = Tape::new();
    let pv = ParamVars::load(&mut t, &model.store);
    let obj = document_objective(&mut t, &pv, &model.config, &model.layout, doc, objective)?;
    let [cl, rl, sl] = obj.components(&t);
    let total = combined_loss(cl, rl, sl, &objective.weights)
        .map_err(|e| Error::NonFinite(format!("document {}: {e}", doc.doc.doc_id)))?;
    let adjoints = t.backward(obj.total);
    Ok(BatchResult {
        grads: Gradients {
            tensors: pv.gradients(&adjoints),
        },
        components: [cl, rl, sl],
        total,
        pruning_misses: obj.pruning_misses,
    })
}

/// Sum over `docs` of the per-document gradients. Documents may be evaluated
/// concurrently; the reduction always runs in document order.
pub fn compute_gradients(
    model: &Model,
    docs: &[PreparedDoc],
    objective: &Objective,
    exec: Execution,
) -> Result<BatchResult> {
    let per_doc = exec.map(docs, |d| document_gradients(model, d, objective));
    let mut acc = BatchResult {
        grads: Gradients::zeros_like(&model.store),
        components: [0.0; 3],
        total: 0.0,
        pruning_misses: 0,
    };
    for r in per_doc {
        let r = r?;
        acc.grads.add_assign(&r.grads);
        for k in 0..3 {
            acc.components[k] += r.components[k];
        }
        acc.total += r.total;
        acc.pruning_misses += r.pruning_misses;
    }
    acc.grads.check_finite(&model.store)?;
    Ok(acc)
}

/// One phase of a schedule.
#[derive(Clone, Debug)]
pub struct Phase {
    pub name: String,
    /// Source phases force every α_k and β₃ to zero.
    pub source: bool,
    pub docs: Vec<Document>,
    pub epochs: usize,
    pub weights: LossWeights,
    pub rates: LearningRates,
}

#[derive(Clone, Debug)]
pub struct TrainingSchedule {
    pub phases: Vec<Phase>,
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("schedule needs at least one phase".into()));
        }
        for p in &self.phases {
            if p.epochs == 0 {
                return Err(Error::Config(format!("phase {}: epochs must be ≥ 1", p.name)));
            }
            if p.docs.is_empty() {
                return Err(Error::Config(format!("phase {}: empty corpus", p.name)));
            }
            p.weights.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub optimizer: OptimizerKind,
    /// Documents whose gradients are averaged into one update.
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub source_phase_rl: bool,
    pub execution: Execution,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            optimizer: OptimizerKind::Adam,
            batch_size: 1,
            shuffle: true,
            seed: 0,
            source_phase_rl: true,
            execution: Execution::Sequential,
        }
    }
}

/// One loss-log row: summed components over an epoch and the weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub phase: String,
    pub epoch: usize,
    pub cl: f64,
    pub rl: f64,
    pub sl: f64,
    pub total: f64,
}

/// Runs every phase in order, updating `model.store` in place, and returns
/// one log record per epoch. A non-finite loss or gradient aborts with the
/// store as it was at the end of the last completed epoch.
pub fn run_schedule(
    model: &mut Model,
    schedule: &TrainingSchedule,
    template: &Objective,
    options: &TrainOptions,
) -> Result<Vec<LossRecord>> {
    schedule.validate()?;
    let batch = options.batch_size.max(1);
    let mut log_rows = Vec::new();
    for (pi, phase) in schedule.phases.iter().enumerate() {
        let weights = if phase.source {
            phase.weights.source_phase(options.source_phase_rl)
        } else {
            phase.weights.clone()
        };
        let objective = Objective {
            weights,
            ..template.clone()
        };
        let docs: Vec<PreparedDoc> = phase.docs.iter().map(|d| model.prepare(d)).collect();
        let mut optimizer = Optimizer::new(options.optimizer, &model.store);
        let mut order: Vec<usize> = (0..docs.len()).collect();
        for epoch in 1..=phase.epochs {
            let last_good = model.store.clone();
            if options.shuffle {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    options.seed ^ ((pi as u64) << 48) ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15),
                );
                order.sort_unstable();
                order.shuffle(&mut rng);
            }
            let mut sums = [0.0; 3];
            let mut total = 0.0;
            let diverged = |reason: String, store: ParameterStore| Error::Diverged {
                phase: phase.name.clone(),
                epoch,
                reason,
                last_good: Box::new(store),
            };
            for chunk in order.chunks(batch) {
                let batch_docs: Vec<PreparedDoc> = chunk.iter().map(|&i| docs[i].clone()).collect();
                let mut r = match compute_gradients(model, &batch_docs, &objective, options.execution) {
                    Ok(r) => r,
                    Err(Error::NonFinite(m)) => return Err(diverged(m, last_good)),
                    Err(e) => return Err(e),
                };
                if !r.total.is_finite() {
                    return Err(diverged(format!("loss {}", r.total), last_good));
                }
                for k in 0..3 {
                    sums[k] += r.components[k];
                }
                total += r.total;
                r.grads.scale(1.0 / chunk.len() as f64);
                optimizer.step(&mut model.store, &r.grads, &phase.rates)?;
            }
            if model.store.tensors.iter().any(|t| t.data.iter().any(|x| !x.is_finite())) {
                return Err(diverged("non-finite parameters".into(), last_good));
            }
            log::info!(
                "{} epoch {epoch}: CL {:.4} RL {:.4} SL {:.4} L {:.4}",
                phase.name,
                sums[0],
                sums[1],
                sums[2],
                total
            );
            log_rows.push(LossRecord {
                phase: phase.name.clone(),
                epoch,
                cl: sums[0],
                rl: sums[1],
                sl: sums[2],
                total,
            });
        }
    }
    Ok(log_rows)
}

pub fn loss_log_string(rows: &[LossRecord]) -> String {
    let mut s = String::from("phase,epoch,cl,rl,sl,total\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.10},{:.10},{:.10},{:.10}", r.phase, r.epoch, r.cl, r.rl, r.sl, r.total);
    }
    s
}

pub fn write_loss_log(path: impl AsRef<Path>, rows: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, loss_log_string(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(parse_err(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(i + 1, e.to_string()));
        rows.push(LossRecord {
            phase: f[0].to_string(),
            epoch: f[1].parse().map_err(|e: std::num::ParseIntError| parse_err(i + 1, e.to_string()))?,
            cl: num(f[2])?,
            rl: num(f[3])?,
            sl: num(f[4])?,
            total: num(f[5])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ScaffoldClasses;
    use crate::model::ModelConfig;
    use crate::toolkit::{generate_synthetic_corpus, SyntheticSpec, COARSE_LEXICON};
    use crate::training::InitMode;

    fn setup() -> (Model, Vec<Document>, Objective) {
        let corpus = generate_synthetic_corpus(&SyntheticSpec {
            train_docs: 4,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            d_tok: 6,
            hidden: 6,
            max_width: 2,
            ..ModelConfig::default()
        };
        let model = Model::initialize(cfg, corpus.vocab.clone(), 2, 5, InitMode::Uniform).unwrap();
        let objective = Objective {
            weights: LossWeights::new(1.0, &[(COARSE_LEXICON, 0.5)], [1.0, 0.3, 0.3]).unwrap(),
            scaffold: Some(ScaffoldClasses::new(
                COARSE_LEXICON,
                corpus.coarse.codes().map(str::to_string),
                false,
            )),
            ..Objective::default()
        };
        (model, corpus.train, objective)
    }

    fn phase(docs: &[Document], weights: &LossWeights, epochs: usize, source: bool, lr: f64) -> Phase {
        Phase {
            name: if source { "source".into() } else { "target".into() },
            source,
            docs: docs.to_vec(),
            epochs,
            weights: weights.clone(),
            rates: LearningRates { base: lr, task: lr },
        }
    }

    #[test]
    fn training_lowers_the_loss() {
        let (mut model, docs, obj) = setup();
        let schedule = TrainingSchedule {
            phases: vec![phase(&docs, &obj.weights, 8, false, 1e-2)],
        };
        let log = run_schedule(&mut model, &schedule, &obj, &TrainOptions::default()).unwrap();
        assert_eq!(log.len(), 8);
        assert!(log[7].total < log[0].total, "{:?}", log);
        assert_eq!(model.store.step, 8 * docs.len() as u64);
    }

    #[test]
    fn parallel_matches_sequential_bit_for_bit() {
        let (model, docs, obj) = setup();
        let schedule = TrainingSchedule {
            phases: vec![phase(&docs, &obj.weights, 2, false, 1e-2)],
        };
        let run = |execution| {
            let mut m = model.clone();
            let options = TrainOptions {
                batch_size: 2,
                execution,
                ..TrainOptions::default()
            };
            let log = run_schedule(&mut m, &schedule, &obj, &options).unwrap();
            (m.store, log)
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn source_phase_drops_knowledge_terms() {
        let (mut model, docs, obj) = setup();
        let schedule = TrainingSchedule {
            phases: vec![phase(&docs, &obj.weights, 1, true, 1e-2)],
        };
        let log = run_schedule(&mut model, &schedule, &obj, &TrainOptions::default()).unwrap();
        assert_eq!(log[0].sl, 0.0);
        assert!(log[0].rl > 0.0);
        let no_rl = TrainOptions {
            source_phase_rl: false,
            ..TrainOptions::default()
        };
        let log = run_schedule(&mut model, &schedule, &obj, &no_rl).unwrap();
        assert_eq!(log[0].rl, 0.0);
    }

    #[test]
    fn divergence_returns_last_good_store() {
        let (mut model, docs, obj) = setup();
        let before = model.store.clone();
        let schedule = TrainingSchedule {
            phases: vec![phase(&docs, &obj.weights, 3, false, 1e308)],
        };
        let options = TrainOptions {
            optimizer: OptimizerKind::Sgd,
            ..TrainOptions::default()
        };
        match run_schedule(&mut model, &schedule, &obj, &options) {
            Err(Error::Diverged { epoch, last_good, .. }) => {
                assert_eq!(epoch, 1);
                assert_eq!(*last_good, before);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn loss_log_round_trips() {
        let rows = vec![
            LossRecord { phase: "source".into(), epoch: 1, cl: 3.5, rl: 0.25, sl: 0.0, total: 3.575 },
            LossRecord { phase: "target".into(), epoch: 2, cl: 1.0, rl: 0.5, sl: 0.125, total: 1.1875 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss_log.csv");
        write_loss_log(&path, &rows).unwrap();
        assert_eq!(read_loss_log(&path).unwrap(), rows);
    }
}

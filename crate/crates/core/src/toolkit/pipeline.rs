//! The operations behind each CLI subcommand, usable as a library.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::projection::{mention_antecedent_offsets, offset_separation, project_records, projection_csv};
use super::synth::{generate_synthetic_corpus, SyntheticFiles, SyntheticSpec};
use crate::corpus::{load_corpus, write_corpus, Document, SpanRef, SubwordVocab};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_clusterings, evaluate_model, slice_by_concept, slice_by_subword_bucket, EvaluationReport,
};
use crate::lexicon::{annotate_spans, ConceptLexicon, Granularity, MatchPolicy};
use crate::losses::{LossWeights, Objective, ScaffoldClasses};
use crate::model::Model;
use crate::training::{
    gradient_check_objective, load_checkpoint, run_schedule, save_checkpoint, write_loss_log, GradCheckReport,
    LossRecord, ParameterStore, Phase, PhaseConfig, PhaseRole, RunConfig, TrainOptions, TrainingSchedule,
};

/// A run configuration with its vocabulary, lexicons and corpora loaded.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub config: RunConfig,
    pub vocab: SubwordVocab,
    pub lexicons: Vec<(ConceptLexicon, MatchPolicy)>,
    pub corpora: BTreeMap<String, Vec<Document>>,
}

/// Loads every file a run refers to. Gold spans lacking a label from a
/// lexicon with `annotate = true` are matched against it, and gold clusters
/// must agree on their coarse labels.
pub fn load_run(config: RunConfig) -> Result<LoadedRun> {
    config.validate()?;
    let vocab = SubwordVocab::load(&config.data.vocab, config.data.lowercase.unwrap_or(true))?;
    let mut lexicons = Vec::new();
    for l in &config.data.lexicons {
        lexicons.push((ConceptLexicon::load(&l.path)?, l.policy.clone()));
    }
    let mut corpora = BTreeMap::new();
    for (key, path) in &config.data.corpora {
        let mut docs = load_corpus(path)?;
        if let Some(max) = config.data.max_tokens {
            docs = docs.iter().map(|d| d.truncated(max)).collect();
        }
        for d in &mut docs {
            for ((lex, policy), r) in lexicons.iter().zip(&config.data.lexicons) {
                if r.annotate {
                    let unlabeled: Vec<SpanRef> = d
                        .gold_spans()
                        .into_iter()
                        .filter(|s| d.concept(s, &lex.lexicon_id).is_none())
                        .collect();
                    annotate_spans(d, &unlabeled, lex, policy);
                }
                if lex.granularity == Granularity::Coarse {
                    d.check_concept_consistency(&lex.lexicon_id)?;
                }
            }
        }
        log::info!("corpus {key}: {} documents from {}", docs.len(), path.display());
        corpora.insert(key.clone(), docs);
    }
    Ok(LoadedRun {
        config,
        vocab,
        lexicons,
        corpora,
    })
}

/// Reads a config file and everything it refers to; `seed` overrides the
/// configured one.
pub fn load_run_file(path: impl AsRef<Path>, seed: Option<u64>) -> Result<LoadedRun> {
    let mut config = RunConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    load_run(config)
}

impl LoadedRun {
    pub fn corpus(&self, key: &str) -> Result<&[Document]> {
        self.corpora
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("no corpus named {key:?} in data.corpora")))
    }

    pub fn eval_docs(&self) -> Result<&[Document]> {
        self.corpus(&self.config.data.eval_corpus)
    }

    pub fn lexicon(&self, id: &str) -> Option<&ConceptLexicon> {
        self.lexicons.iter().map(|(l, _)| l).find(|l| l.lexicon_id == id)
    }

    /// Lexicon naming the scaffold classes and the concept slices.
    pub fn concept_lexicon(&self) -> Option<&ConceptLexicon> {
        match &self.config.training.scaffold_lexicon {
            Some(id) => self.lexicon(id),
            None => self
                .lexicons
                .iter()
                .map(|(l, _)| l)
                .find(|l| l.granularity == Granularity::Coarse),
        }
    }

    pub fn scaffold_classes(&self) -> Result<Option<ScaffoldClasses>> {
        if let Some(id) = &self.config.training.scaffold_lexicon {
            if self.lexicon(id).is_none() {
                return Err(Error::Config(format!("scaffold lexicon {id:?} is not loaded")));
            }
        }
        let classes = self.concept_lexicon().map(|l| {
            ScaffoldClasses::new(
                l.lexicon_id.clone(),
                l.codes().map(str::to_string),
                self.config.loss.scaffold_none,
            )
        });
        let wants_sl = self
            .config
            .phases
            .iter()
            .any(|p| p.role == PhaseRole::Target && p.weights.beta[2] > 0.0);
        if wants_sl && classes.is_none() {
            return Err(Error::Config(
                "β₃ > 0 needs a coarse lexicon or training.scaffold_lexicon".into(),
            ));
        }
        Ok(classes)
    }

    fn scaffold_len(&self) -> Result<usize> {
        Ok(self.scaffold_classes()?.map_or(0, |c| c.len()))
    }

    /// A freshly initialised model seeded from the run seed.
    pub fn init_model(&self) -> Result<Model> {
        Model::initialize(
            self.config.model.clone(),
            self.vocab.clone(),
            self.scaffold_len()?,
            self.config.seed,
            self.config.training.init,
        )
    }

    pub fn model_from(&self, store: ParameterStore) -> Result<Model> {
        Model::new(self.config.model.clone(), self.vocab.clone(), store, self.scaffold_len()?)
    }

    pub fn load_model(&self, checkpoint: impl AsRef<Path>) -> Result<Model> {
        self.model_from(load_checkpoint(checkpoint)?)
    }

    pub fn objective(&self, weights: LossWeights) -> Result<Objective> {
        Ok(Objective {
            weights,
            settings: self.config.loss.clone(),
            scaffold: self.scaffold_classes()?,
            candidate_lexicons: self.lexicons.clone(),
        })
    }

    pub fn schedule(&self) -> Result<TrainingSchedule> {
        let phases = self
            .config
            .phases
            .iter()
            .map(|p| {
                Ok(Phase {
                    name: p.name.clone(),
                    source: p.role == PhaseRole::Source,
                    docs: self.corpus(&p.corpus)?.to_vec(),
                    epochs: p.epochs,
                    weights: p.weights.clone(),
                    rates: p.rates(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSchedule { phases })
    }

    pub fn train_options(&self) -> TrainOptions {
        let t = &self.config.training;
        TrainOptions {
            optimizer: t.optimizer,
            batch_size: t.batch_size,
            shuffle: t.shuffle,
            seed: self.config.seed,
            source_phase_rl: t.source_phase_rl,
            execution: self.config.execution,
        }
    }

    /// The first target phase, or the first phase.
    pub fn reference_phase(&self) -> Option<&PhaseConfig> {
        let phases = &self.config.phases;
        phases.iter().find(|p| p.role == PhaseRole::Target).or(phases.first())
    }

    pub fn reference_weights(&self) -> LossWeights {
        self.reference_phase().map(|p| p.weights.clone()).unwrap_or_default()
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LossRecord>,
    pub checkpoint: PathBuf,
}

/// Runs the schedule. Writes `phase-<name>.ckpt` after each phase, then
/// `model.ckpt` and `loss_log.csv`; on divergence writes `last_good.ckpt`
/// and returns the error.
pub fn train(run: &LoadedRun, out: &Path) -> Result<TrainOutcome> {
    ensure_dir(out)?;
    let mut model = run.init_model()?;
    let schedule = run.schedule()?;
    schedule.validate()?;
    let template = run.objective(run.reference_weights())?;
    let options = run.train_options();
    let mut log = Vec::new();
    for (pi, phase) in schedule.phases.iter().enumerate() {
        let single = TrainingSchedule {
            phases: vec![phase.clone()],
        };
        let opts = TrainOptions {
            seed: options.seed.wrapping_add((pi as u64) << 32),
            ..options.clone()
        };
        match run_schedule(&mut model, &single, &template, &opts) {
            Ok(rows) => log.extend(rows),
            Err(Error::Diverged {
                phase,
                epoch,
                reason,
                last_good,
            }) => {
                write_loss_log(out.join("loss_log.csv"), &log)?;
                save_checkpoint(&last_good, out.join("last_good.ckpt"))?;
                return Err(Error::Diverged {
                    phase,
                    epoch,
                    reason,
                    last_good,
                });
            }
            Err(e) => return Err(e),
        }
        save_checkpoint(&model.store, out.join(format!("phase-{}.ckpt", phase.name)))?;
        if let Some(last) = log.last() {
            log::info!("phase {} done: total loss {:.4} in final epoch", phase.name, last.total);
        }
    }
    let checkpoint = out.join("model.ckpt");
    save_checkpoint(&model.store, &checkpoint)?;
    write_loss_log(out.join("loss_log.csv"), &log)?;
    Ok(TrainOutcome { model, log, checkpoint })
}

/// Builds the full report of `predictions` against the gold chains of
/// `docs`, with concept and wordpiece-bucket slices.
pub fn evaluation_report(
    run: &LoadedRun,
    docs: &[Document],
    predictions: &[Vec<Vec<SpanRef>>],
) -> EvaluationReport {
    let gold: Vec<Vec<Vec<SpanRef>>> = docs.iter().map(|d| d.gold_clusters.clone()).collect();
    EvaluationReport {
        overall: evaluate_clusterings(&gold, predictions),
        concepts: run
            .concept_lexicon()
            .map(|l| slice_by_concept(docs, predictions, &l.lexicon_id))
            .unwrap_or_default(),
        buckets: slice_by_subword_bucket(docs, predictions, &run.vocab),
    }
}

/// Reads predicted clusters from a corpus file whose `gold_clusters` hold
/// the predictions, aligned to `docs` by document id.
pub fn load_predictions(path: &Path, docs: &[Document]) -> Result<Vec<Vec<Vec<SpanRef>>>> {
    let mut by_id: HashMap<String, Vec<Vec<SpanRef>>> = load_corpus(path)?
        .into_iter()
        .map(|d| (d.doc_id, d.gold_clusters))
        .collect();
    docs.iter()
        .map(|d| {
            by_id
                .remove(&d.doc_id)
                .ok_or_else(|| Error::Config(format!("{}: no prediction for document {}", path.display(), d.doc_id)))
        })
        .collect()
}

fn prediction_docs(docs: &[Document], predictions: &[Vec<Vec<SpanRef>>]) -> Result<Vec<Document>> {
    docs.iter()
        .zip(predictions)
        .map(|(d, p)| {
            Document::new(
                d.doc_id.clone(),
                d.tokens.iter().map(|t| t.surface.clone()).collect(),
                p.clone(),
                BTreeMap::new(),
            )
        })
        .collect()
}

/// Scores a checkpoint (or a predictions file) on the evaluation corpus and
/// writes `report.csv`, `report.json` and `predictions.jsonl`.
pub fn evaluate(
    run: &LoadedRun,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    out: &Path,
) -> Result<EvaluationReport> {
    ensure_dir(out)?;
    let docs = run.eval_docs()?;
    let preds = match (predictions, checkpoint) {
        (Some(p), _) => load_predictions(p, docs)?,
        (None, Some(c)) => evaluate_model(&run.load_model(c)?, docs, run.config.execution).predictions,
        (None, None) => return Err(Error::Config("evaluate needs a checkpoint or a predictions file".into())),
    };
    let report = evaluation_report(run, docs, &preds);
    write_file(&out.join("report.csv"), &report.to_csv())?;
    write_file(&out.join("report.json"), &report.to_json())?;
    write_corpus(out.join("predictions.jsonl"), &prediction_docs(docs, &preds)?)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProjectionSummary {
    pub records: usize,
    pub explained_variance: [f64; 2],
    pub within_concept_cosine: f64,
    pub across_concept_cosine: f64,
}

/// Samples gold offsets on the evaluation corpus, projects them with PCA and
/// writes `projection.csv` and `projection_summary.json`.
pub fn project(run: &LoadedRun, checkpoint: &Path, seed: Option<u64>, out: &Path) -> Result<ProjectionSummary> {
    ensure_dir(out)?;
    let model = run.load_model(checkpoint)?;
    let lexicon = run
        .concept_lexicon()
        .map(|l| l.lexicon_id.clone())
        .ok_or_else(|| Error::Config("project needs a coarse lexicon for concept labels".into()))?;
    let p = &run.config.projection;
    let mut records =
        mention_antecedent_offsets(&model, run.eval_docs()?, p.samples, seed.unwrap_or(p.seed), &lexicon);
    let pca = project_records(&mut records)?;
    let (within, across) = offset_separation(&records);
    write_file(&out.join("projection.csv"), &projection_csv(&records))?;
    let summary = ProjectionSummary {
        records: records.len(),
        explained_variance: pca.explained,
        within_concept_cosine: within,
        across_concept_cosine: across,
    };
    write_file(
        &out.join("projection_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

/// Finite-difference check of CL, RL, SL and their weighted sum at the
/// initial parameters, on the first documents of the reference phase corpus.
/// Tensor names in the combined report are prefixed by the objective.
pub fn gradcheck(run: &LoadedRun, out: Option<&Path>) -> Result<GradCheckReport> {
    let model = run.init_model()?;
    let g = &run.config.gradcheck;
    let key = &run.reference_phase().ok_or(Error::EmptyCorpus)?.corpus;
    let docs: Vec<_> = run.corpus(key)?.iter().take(g.documents.max(1)).map(|d| model.prepare(d)).collect();
    let weights = run.reference_weights();
    let has_scaffold = run.scaffold_classes()?.is_some();
    let mut parts: Vec<(&str, LossWeights)> = vec![("cl", with_beta(&weights, [1.0, 0.0, 0.0]))];
    parts.push(("rl", with_beta(&weights, [0.0, 1.0, 0.0])));
    if has_scaffold {
        parts.push(("sl", with_beta(&weights, [0.0, 0.0, 1.0])));
    }
    parts.push(("total", weights.clone()));
    let mut combined = GradCheckReport {
        tensors: Vec::new(),
        threshold: g.threshold,
        epsilon: g.epsilon,
    };
    for (name, w) in parts {
        let objective = run.objective(w)?;
        let report = gradient_check_objective(
            &model,
            &docs,
            &objective,
            g.epsilon,
            g.threshold,
            g.coordinates,
            run.config.seed,
            run.config.execution,
        )?;
        log::info!("gradcheck {name}: max relative error {:.3e}", report.max_rel_error());
        combined.tensors.extend(report.tensors.into_iter().map(|mut t| {
            t.name = format!("{name}/{}", t.name);
            t
        }));
    }
    if let Some(out) = out {
        ensure_dir(out)?;
        write_file(&out.join("gradcheck.csv"), &combined.to_csv())?;
    }
    Ok(combined)
}

fn with_beta(w: &LossWeights, beta: [f64; 3]) -> LossWeights {
    LossWeights { beta, ..w.clone() }
}

/// Generates a synthetic corpus into `out`.
pub fn synth(spec: &SyntheticSpec, out: &Path) -> Result<SyntheticFiles> {
    let corpus = generate_synthetic_corpus(spec)?;
    corpus.write_to(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::GradCheckConfig;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            source_docs: 2,
            train_docs: 2,
            test_docs: 2,
            ..SyntheticSpec::default()
        }
    }

    fn tiny_run(dir: &Path) -> LoadedRun {
        let files = synth(&tiny_spec(), dir).unwrap();
        let mut cfg = RunConfig::load(&files.config).unwrap();
        for p in &mut cfg.phases {
            p.epochs = 1;
        }
        cfg.model.d_tok = 4;
        cfg.model.hidden = 4;
        cfg.gradcheck = GradCheckConfig {
            coordinates: 3,
            documents: 1,
            ..GradCheckConfig::default()
        };
        load_run(cfg).unwrap()
    }

    #[test]
    fn synthetic_run_loads_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let run = tiny_run(dir.path());
        assert_eq!(run.lexicons.len(), 2);
        let train = run.corpus("train").unwrap();
        // fine labels come from matching at load time
        assert!(train
            .iter()
            .all(|d| d.gold_spans().iter().all(|s| d.concept(s, "umls").is_some())));
        assert_eq!(run.scaffold_classes().unwrap().unwrap().len(), 2);
        assert!(run.corpus("missing").is_err());
    }

    #[test]
    fn train_evaluate_project_write_files() {
        let dir = tempfile::tempdir().unwrap();
        let run = tiny_run(dir.path());
        let out = dir.path().join("out");
        let trained = train(&run, &out).unwrap();
        assert_eq!(trained.log.len(), 2);
        for f in ["model.ckpt", "phase-source.ckpt", "phase-target.ckpt", "loss_log.csv"] {
            assert!(out.join(f).exists(), "{f}");
        }
        let report = evaluate(&run, Some(&trained.checkpoint), None, &out).unwrap();
        assert!(report.overall.average.f1 >= 0.0);
        // the written predictions score themselves perfectly against a
        // corpus that uses them as gold
        let self_report = evaluate(&run, None, Some(&run.config.data.corpora["test"]), &out.join("self")).unwrap();
        assert_eq!(self_report.overall.average.f1, 1.0);
        let summary = project(&run, &trained.checkpoint, None, &out).unwrap();
        let csv = fs::read_to_string(out.join("projection.csv")).unwrap();
        assert_eq!(csv.lines().count(), summary.records + 1);
    }

    #[test]
    fn gradcheck_on_tiny_run() {
        let dir = tempfile::tempdir().unwrap();
        let run = tiny_run(dir.path());
        let report = gradcheck(&run, Some(dir.path())).unwrap();
        assert!(report.tensors.iter().any(|t| t.name.starts_with("sl/")));
        assert!(report.passed(), "{}", report.to_csv());
    }
}

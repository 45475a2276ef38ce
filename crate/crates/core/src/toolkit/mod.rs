//! Offset diagnostics, synthetic corpora and the pipeline behind the CLI.

pub mod pipeline;
mod projection;
mod synth;

pub use pipeline::{
    evaluate, evaluation_report, gradcheck, load_predictions, load_run, load_run_file, project, synth, train,
    LoadedRun, ProjectionSummary, TrainOutcome,
};
pub use projection::{
    gold_mention_pairs, mention_antecedent_offsets, offset_separation, pca_2d, project_records, projection_csv, Pca,
    ProjectionRecord,
};
pub use synth::{
    generate_synthetic_corpus, SyntheticCorpus, SyntheticFiles, SyntheticSpec, COARSE_LEXICON, CONFOUND_SUFFIX,
    FINE_LEXICON,
};

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use concept_coref::toolkit::{self, SyntheticSpec};
use concept_coref::{Error, Result};

#[derive(Parser)]
#[command(name = "ccoref", version, about = "Concept-aware coreference: train, evaluate, diagnose")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration (TOML); alternative to the positional argument.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory; defaults to the configured checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed of the run, projection sample or synthetic corpus.
    #[arg(long)]
    seed: Option<u64>,
    /// Only report warnings and errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the training schedule; writes checkpoints and the loss log.
    Train {
        #[arg(value_name = "CONFIG")]
        config_file: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on the evaluation corpus.
    Evaluate {
        #[arg(value_name = "CONFIG")]
        config_file: Option<PathBuf>,
        #[arg(value_name = "CHECKPOINT")]
        checkpoint_file: Option<PathBuf>,
        /// Score clusters read from this corpus file instead of a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the PCA table of sampled mention-antecedent offsets.
    Project {
        #[arg(value_name = "CONFIG")]
        config_file: Option<PathBuf>,
        #[arg(value_name = "CHECKPOINT")]
        checkpoint_file: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(value_name = "CONFIG")]
        config_file: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic corpus with lexicons, vocabulary and run config.
    Synth {
        /// Generator spec (TOML); defaults apply when omitted.
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn pick(positional: Option<PathBuf>, flag: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match (positional, flag) {
        (Some(a), Some(b)) if a != b => Err(Error::Config(format!(
            "{what} given twice: {} and {}",
            a.display(),
            b.display()
        ))),
        (Some(p), _) | (None, Some(p)) => Ok(p),
        (None, None) => Err(Error::Config(format!("missing {what}; pass it as an argument or with --{what}"))),
    }
}

fn out_dir(common: &Common, run: &toolkit::LoadedRun) -> PathBuf {
    common.out.clone().unwrap_or_else(|| run.config.checkpoint_dir.clone())
}

fn default_checkpoint(run: &toolkit::LoadedRun) -> PathBuf {
    run.config.checkpoint_dir.join("model.ckpt")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config_file, common } => {
            let run = toolkit::load_run_file(pick(config_file, common.config.clone(), "config")?, common.seed)?;
            let out = out_dir(&common, &run);
            let outcome = toolkit::train(&run, &out)?;
            if let Some(last) = outcome.log.last() {
                println!("trained {} epochs; final total loss {:.6}", outcome.log.len(), last.total);
            }
            println!("wrote {}", outcome.checkpoint.display());
        }
        Command::Evaluate {
            config_file,
            checkpoint_file,
            predictions,
            common,
        } => {
            let run = toolkit::load_run_file(pick(config_file, common.config.clone(), "config")?, common.seed)?;
            let out = out_dir(&common, &run);
            let ckpt = match (checkpoint_file.or(common.checkpoint.clone()), &predictions) {
                (Some(c), _) => Some(c),
                (None, None) => Some(default_checkpoint(&run)),
                (None, Some(_)) => None,
            };
            let report = toolkit::evaluate(&run, ckpt.as_deref(), predictions.as_deref(), &out)?;
            let r = &report.overall;
            println!(
                "MUC F1 {:.4}  B3 F1 {:.4}  CEAF-e F1 {:.4}  avg F1 {:.4}  avg P {:.4}",
                r.muc.f1, r.b_cubed.f1, r.ceaf_e.f1, r.average.f1, r.average.precision
            );
            println!("wrote {}", out.join("report.csv").display());
        }
        Command::Project {
            config_file,
            checkpoint_file,
            common,
        } => {
            let run = toolkit::load_run_file(pick(config_file, common.config.clone(), "config")?, None)?;
            let out = out_dir(&common, &run);
            let ckpt = checkpoint_file
                .or(common.checkpoint.clone())
                .unwrap_or_else(|| default_checkpoint(&run));
            let s = toolkit::project(&run, &ckpt, common.seed, &out)?;
            println!(
                "{} records; explained variance ({:.4}, {:.4}); offset cosine within {:.4} across {:.4}",
                s.records,
                s.explained_variance[0],
                s.explained_variance[1],
                s.within_concept_cosine,
                s.across_concept_cosine
            );
        }
        Command::Gradcheck { config_file, common } => {
            let run = toolkit::load_run_file(pick(config_file, common.config.clone(), "config")?, common.seed)?;
            let out = out_dir(&common, &run);
            let report = toolkit::gradcheck(&run, Some(&out))?;
            println!(
                "max relative error {:.3e} over {} tensor checks (threshold {:.0e})",
                report.max_rel_error(),
                report.tensors.len(),
                report.threshold
            );
            if !report.passed() {
                return Err(Error::Config(format!(
                    "gradient check failed; see {}",
                    out.join("gradcheck.csv").display()
                )));
            }
        }
        Command::Synth { spec, common } => {
            let mut s = match spec.or(common.config.clone()) {
                Some(p) => SyntheticSpec::load(p)?,
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = common.seed {
                s.seed = seed;
            }
            let out = common.out.clone().unwrap_or_else(|| Path::new("synthetic").to_path_buf());
            let files = toolkit::synth(&s, &out)?;
            println!("wrote {}", files.config.display());
        }
    }
    Ok(())
}

fn quiet(cli: &Cli) -> bool {
    match &cli.command {
        Command::Train { common, .. }
        | Command::Evaluate { common, .. }
        | Command::Project { common, .. }
        | Command::Gradcheck { common, .. }
        | Command::Synth { common, .. } => common.quiet,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if quiet(&cli) { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

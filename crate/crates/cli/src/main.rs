use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grounded_rank::experiment::{
    cmd_compare_losses, cmd_eval, cmd_ingest_translations, cmd_pseudopairs, cmd_report, cmd_synth, cmd_train,
    ExperimentConfig,
};
use grounded_rank::{Error, Result};

#[derive(Parser)]
#[command(
    name = "grounded-rank",
    version,
    about = "Bilingual grounded sentence ranking experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed, overriding `seeds` (and the synthetic data seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic bilingual corpora.
    Synth(Common),
    /// Train one model per seed and evaluate it on the test corpora.
    Train(Common),
    /// Evaluate a checkpoint on the test corpora.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Mine pseudopairs with a checkpoint, optionally retraining with them.
    Pseudopairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also run the restart or fine-tune cycle on the augmented data.
        #[arg(long)]
        retrain: bool,
    },
    /// Merge translated captions into their corpora.
    IngestTranslations(Common),
    /// Train with max- and sum-violation losses across seeds.
    CompareLosses(Common),
    /// Average report JSON files into one report.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn load(common: &Common, required: bool) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if required => return Err(Error::Config("--config is required".into())),
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
        cfg.synth.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let (cfg, out) = load(&c, false)?;
            let m = cmd_synth(&cfg.synth, &out)?;
            println!("wrote {} files to {}", m.files.len(), out.display());
        }
        Command::Train(c) => {
            let (cfg, out) = load(&c, true)?;
            let s = cmd_train(&cfg, &out)?;
            print!("{}", s.mean.to_table());
        }
        Command::Eval { common, checkpoint } => {
            let (cfg, out) = load(&common, true)?;
            let r = cmd_eval(&cfg, &checkpoint, &out)?;
            print!("{}", r.report.to_table());
            for (name, t) in &r.translation {
                println!(
                    "translation {name}: {:.1} / {:.1}",
                    t.left_to_right_r1, t.right_to_left_r1
                );
            }
        }
        Command::Pseudopairs {
            common,
            checkpoint,
            retrain,
        } => {
            let (cfg, out) = load(&common, true)?;
            let r = cmd_pseudopairs(&cfg, &checkpoint, &out, retrain)?;
            println!(
                "kept {} of {} pseudopairs, coverage {:.3}",
                r.kept, r.generated, r.diagnostics.coverage
            );
            if let Some(c) = r.diagnostics.concept_agreement {
                println!("concept agreement {c:.3}");
            }
            if let (Some(b), Some(a)) = (r.base_score, r.retrained_score) {
                println!("validation score {b:.1} -> {a:.1}");
            }
        }
        Command::IngestTranslations(c) => {
            let (cfg, out) = load(&c, true)?;
            for (name, n) in cmd_ingest_translations(&cfg, &out)? {
                println!("{name}: {n} translated captions");
            }
        }
        Command::CompareLosses(c) => {
            let (cfg, out) = load(&c, true)?;
            for r in cmd_compare_losses(&cfg, &out)? {
                let seed = r.seed.map_or_else(|| "mean".to_owned(), |s| s.to_string());
                println!("{:?} {seed} {:.1}", r.variant, r.sum_of_sums);
            }
        }
        Command::Report { out, inputs } => print!("{}", cmd_report(&inputs, &out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric_error() {
                ExitCode::from(3)
            } else if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

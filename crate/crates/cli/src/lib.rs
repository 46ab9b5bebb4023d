//! Command-line experiments: dataset preparation, training, evaluation,
//! sweeps and reports, with run manifests for reproducibility.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod figures;
pub mod grids;
pub mod manifest;
pub mod report;
pub mod sweep;
pub mod train;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "oneshot", version, about = "Diversity and recognizability of one-shot generative models")]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `cpu`, `cuda`, `cuda:N` or `auto`; overrides `device`.
    #[arg(long, global = true)]
    pub device: Option<String>,
    /// Overwrite existing runs, reports and caches.
    #[arg(long, global = true)]
    pub force: bool,
    /// Continue an interrupted sweep.
    #[arg(long, global = true)]
    pub resume: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the dataset, make the weak split and cache it.
    PrepareData {
        /// Omniglot root holding images_background and images_evaluation.
        #[arg(long)]
        root: Option<PathBuf>,
        /// Use the procedural stroke dataset instead of Omniglot.
        #[arg(long, conflicts_with = "root")]
        synthetic: bool,
        /// Characters per alphabet held out for testing.
        #[arg(long)]
        holdout: Option<usize>,
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Train an extractor, classifier or generator.
    Train {
        #[arg(value_enum)]
        target: train::Target,
        /// Epoch count (outer steps for maml).
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Score generators and the human reference.
    Evaluate {
        /// Generator checkpoint or training run id; repeatable.
        #[arg(long = "model")]
        models: Vec<String>,
        /// Feature-extractor checkpoint or training run id.
        #[arg(long)]
        extractor: Option<String>,
        /// Classifier checkpoint or run id; defaults to the extractor.
        #[arg(long)]
        classifier: Option<String>,
        #[arg(long)]
        run_id: Option<String>,
        /// Regenerate a previous evaluation and compare its tables.
        #[arg(long, conflicts_with_all = ["models", "extractor", "classifier"])]
        from_manifest: Option<PathBuf>,
    },
    /// Run a hyper-parameter sweep from a spec file.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Consolidate evaluation runs into a report.
    Report {
        run_ids: Vec<String>,
        /// Report directory name under `<out>/reports`.
        #[arg(long)]
        name: Option<String>,
    },
}

/// Flags shared by every command after merging with the configuration.
#[derive(Clone, Debug)]
pub struct Globals {
    pub out: PathBuf,
    pub force: bool,
    pub resume: bool,
}

/// Loads the configuration and applies the global flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<(ExperimentConfig, Globals)> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Some(d) = &cli.device {
        cfg.device = d.clone();
    }
    cfg.validate()?;
    let globals = Globals {
        out: cfg.output.dir.clone(),
        force: cli.force,
        resume: cli.resume,
    };
    Ok((cfg, globals))
}

/// Runs one command, printing a short summary on success.
pub fn run(cli: Cli) -> Result<()> {
    let (cfg, globals) = resolve_config(&cli)?;
    match cli.command {
        Command::PrepareData {
            root,
            synthetic,
            holdout,
            split_seed,
        } => {
            let args = data::PrepareArgs {
                root,
                synthetic,
                holdout,
                split_seed,
            };
            let o = data::prepare(&cfg, &args, globals.force)?;
            for w in &o.warnings {
                log::warn!("{w}");
                eprintln!("warning: {w}");
            }
            if o.cache_hit {
                println!("cache hit: {} is up to date", cfg.cache_dir().display());
            }
            let m = &o.manifest;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "cache_dir": cfg.cache_dir(),
                    "train_concepts": m.count(oneshot_core::data::Split::Train),
                    "test_concepts": m.count(oneshot_core::data::Split::Test),
                    "alphabets": m.alphabets.len(),
                    "holdout_per_alphabet": m.holdout_per_alphabet,
                    "split_seed": m.split_seed,
                    "train_hash": m.train_hash,
                    "test_hash": m.test_hash,
                }))
                .expect("serializes")
            );
        }
        Command::Train { target, epochs, run_id } => {
            let m = train::train(cfg, &train::TrainArgs { target, epochs, run_id }, &globals)?;
            println!("run {} ({})", m.run_id, manifest::run_dir(&globals.out, &m.run_id).display());
        }
        Command::Evaluate {
            models,
            extractor,
            classifier,
            run_id,
            from_manifest,
        } => {
            let args = evaluate::EvaluateArgs {
                models,
                extractor,
                classifier,
                run_id,
                from_manifest,
            };
            let m = evaluate::evaluate(cfg, &args, &globals)?;
            println!("run {} ({})", m.run_id, manifest::run_dir(&globals.out, &m.run_id).display());
            if let Some(r) = &m.reproduction {
                if r.identical {
                    println!("reproduced run {}: all tables bit-identical", r.of_run);
                } else {
                    println!(
                        "run {} is nondeterministic: {} differ ({})",
                        r.of_run,
                        r.differing.join(", "),
                        r.nondeterminism_source.as_deref().unwrap_or("unknown source")
                    );
                }
            }
        }
        Command::Sweep { spec, workers, run_id } => {
            let m = sweep::sweep(cfg, &sweep::SweepArgs { spec, run_id, workers }, &globals)?;
            println!("run {} ({})", m.run_id, manifest::run_dir(&globals.out, &m.run_id).display());
            for w in &m.warnings {
                println!("warning: {w}");
            }
        }
        Command::Report { run_ids, name } => {
            let o = report::report(&cfg, &report::ReportArgs { runs: run_ids, name }, &globals)?;
            println!("report {}", o.dir.join(report::REPORT_FILE).display());
        }
    }
    Ok(())
}

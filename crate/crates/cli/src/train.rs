//! `train`: fit one extractor, classifier or generator on the prepared
//! training split.

use clap::ValueEnum;
use oneshot_core::analysis::ModelKind;
use oneshot_core::data::Split;
use oneshot_core::seed;
use oneshot_models::backbone::Backbone;
use oneshot_models::checkpoint::{file_sha256, save_backbone, save_maml, CheckpointMeta};
use oneshot_models::generator::GeneratorModel;
use oneshot_models::maml::MetaClassifier;
use oneshot_models::protonet::train_protonet;
use oneshot_models::simclr::train_simclr;
use oneshot_models::train::TrainingLog;
use oneshot_models::maml::train_maml;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::data::{first_concepts, load_prepared};
use crate::error::{CliError, Result};
use crate::manifest::{derive_run_id, write_json, Run, RunManifest};
use crate::Globals;

pub const CHECKPOINT_FILE: &str = "model.safetensors";
pub const LOG_FILE: &str = "training_log.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Target {
    Protonet,
    Simclr,
    Maml,
    VaeStn,
    VaeNs,
    DaganUn,
    DaganRn,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Protonet => "protonet",
            Target::Simclr => "simclr",
            Target::Maml => "maml",
            Target::VaeStn => "vae_stn",
            Target::VaeNs => "vae_ns",
            Target::DaganUn => "dagan_un",
            Target::DaganRn => "dagan_rn",
        }
    }

    pub fn generator(self) -> Option<ModelKind> {
        match self {
            Target::VaeStn => Some(ModelKind::VaeStn),
            Target::VaeNs => Some(ModelKind::VaeNs),
            Target::DaganUn => Some(ModelKind::DaganUn),
            Target::DaganRn => Some(ModelKind::DaganRn),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainArgs {
    pub target: Target,
    /// For `maml` this sets the number of outer steps.
    pub epochs: Option<usize>,
    pub run_id: Option<String>,
}

/// Applies `--epochs` to the section the target reads.
fn apply_epochs(cfg: &mut ExperimentConfig, target: Target, epochs: usize) {
    match target {
        Target::Protonet => cfg.extractor.protonet.epochs = epochs,
        Target::Simclr => cfg.extractor.simclr.epochs = epochs,
        Target::Maml => cfg.classifier.maml.outer_steps = epochs,
        Target::VaeStn => cfg.model.vae_stn.epochs = epochs,
        Target::VaeNs => cfg.model.vae_ns.epochs = epochs,
        Target::DaganUn => cfg.model.dagan_un.epochs = epochs,
        Target::DaganRn => cfg.model.dagan_rn.epochs = epochs,
    }
}

pub fn train(mut cfg: ExperimentConfig, args: &TrainArgs, globals: &Globals) -> Result<RunManifest> {
    if let Some(e) = args.epochs {
        apply_epochs(&mut cfg, args.target, e);
    }
    cfg.validate()?;
    let prepared = load_prepared(&cfg)?;
    let snapshot = cfg.snapshot();
    let args_json = serde_json::to_value(args).expect("args serialize");
    let label = args.target.as_str();
    let run_id = args
        .run_id
        .clone()
        .unwrap_or_else(|| derive_run_id("train", label, &json!({ "target": label }), &snapshot));
    let mut run = Run::start(&globals.out, run_id, "train", args_json, snapshot, globals.force, false)?;
    run.manifest.input_hashes.insert("train_split".into(), prepared.manifest.train_hash.clone());
    run.manifest.input_hashes.insert("test_split".into(), prepared.manifest.test_hash.clone());
    let init_seed = seed::derive(cfg.seed, &format!("{label}-init"));
    let train_seed = seed::derive(cfg.seed, &format!("{label}-train"));
    run.manifest.seeds.insert("master".into(), cfg.seed);
    run.manifest.seeds.insert("init".into(), init_seed);
    run.manifest.seeds.insert("train".into(), train_seed);
    run.persist()?;

    let extra = json!({
        "train_hash": prepared.manifest.train_hash,
        "test_hash": prepared.manifest.test_hash,
        "train_subset": cfg.data.train_subset,
    });
    let ckpt = run.path(CHECKPOINT_FILE);
    let device = cfg.device();
    let outcome = (|| -> Result<(TrainingLog, CheckpointMeta)> {
        let fail = CliError::training;
        match args.target {
            Target::Protonet | Target::Simclr => {
                let mut b = Backbone::new(cfg.extractor.backbone, device, init_seed).map_err(CliError::config)?;
                let (log, training, epochs) = if args.target == Target::Protonet {
                    let p = &cfg.extractor.protonet;
                    let test = (!prepared.test.is_empty()).then_some(&prepared.test);
                    let log = train_protonet(&mut b, &prepared.train, test, p, train_seed).map_err(fail)?;
                    (log, serde_json::to_value(p).expect("serializes"), p.epochs)
                } else {
                    let s = &cfg.extractor.simclr;
                    let log = train_simclr(&mut b, &prepared.train, s, train_seed).map_err(fail)?;
                    (log, serde_json::to_value(s).expect("serializes"), s.epochs)
                };
                let meta = save_backbone(&b, &ckpt, label, training, init_seed, epochs, extra).map_err(fail)?;
                Ok((log, meta))
            }
            Target::Maml => {
                let mut m = MetaClassifier::new(cfg.extractor.backbone, cfg.classifier.maml.clone(), device, init_seed)
                    .map_err(CliError::config)?;
                let log = train_maml(&mut m, &prepared.train, train_seed).map_err(fail)?;
                let meta = save_maml(&m, &ckpt, init_seed, extra).map_err(fail)?;
                Ok((log, meta))
            }
            _ => {
                let kind = args.target.generator().expect("generator target");
                let train = first_concepts(&prepared.train, cfg.data.train_subset, Split::Train)?;
                let mut g = GeneratorModel::new(cfg.model.generator(kind), device, init_seed).map_err(CliError::config)?;
                let log = g.train(&train, train_seed).map_err(fail)?;
                let meta = g.save(&ckpt, extra).map_err(fail)?;
                Ok((log, meta))
            }
        }
    })();
    let (log, meta) = match outcome {
        Ok(v) => v,
        Err(e) => return Err(run.fail(e)),
    };
    for w in &log.warnings {
        run.warn(w.clone());
    }
    write_json(&run.path(LOG_FILE), &log)?;
    run.manifest.input_hashes.insert(
        "output:checkpoint".into(),
        file_sha256(&ckpt).map_err(CliError::training)?,
    );
    run.artifact(CHECKPOINT_FILE);
    run.artifact("model.json");
    run.artifact(LOG_FILE);
    log::info!(
        "trained {label}: {} parameters, {} epochs completed",
        meta.param_count,
        meta.epochs_completed
    );
    run.succeed()
}

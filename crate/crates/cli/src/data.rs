//! `prepare-data`: load, split and cache the dataset.

use std::path::{Path, PathBuf};

use oneshot_core::data::synthetic::synthetic_dataset;
use oneshot_core::data::{load_omniglot, make_weak_split, read_cache, write_cache, CacheManifest, ConceptDataset, ConceptId, Split};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SyntheticConfig};
use crate::error::{CliError, Result};
use crate::manifest::write_json;

/// Environment variable overriding `data.root`.
pub const ROOT_ENV: &str = "OMNIGLOT_ROOT";
const SOURCE_FILE: &str = "source.json";

#[derive(Clone, Debug, Default)]
pub struct PrepareArgs {
    pub root: Option<PathBuf>,
    pub synthetic: bool,
    pub holdout: Option<usize>,
    pub split_seed: Option<u64>,
}

/// Where the raw data came from and how it was split; two preparations with
/// equal sources produce equal caches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheSource {
    pub origin: Origin,
    pub holdout_per_alphabet: usize,
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Omniglot { root: PathBuf },
    Synthetic(SyntheticConfig),
}

#[derive(Debug)]
pub struct PrepareOutcome {
    pub manifest: CacheManifest,
    pub cache_hit: bool,
    pub warnings: Vec<String>,
}

fn resolve_origin(cfg: &ExperimentConfig, args: &PrepareArgs) -> Result<Origin> {
    if args.synthetic {
        return Ok(Origin::Synthetic(cfg.data.synthetic.clone().unwrap_or_default()));
    }
    let env_root = std::env::var_os(ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    if let Some(root) = args.root.clone().or(env_root).or_else(|| cfg.data.root.clone()) {
        return Ok(Origin::Omniglot { root });
    }
    if let Some(s) = &cfg.data.synthetic {
        return Ok(Origin::Synthetic(s.clone()));
    }
    Err(CliError::Data(format!(
        "no dataset root given. Download Omniglot (images_background and images_evaluation, e.g. from \
         https://github.com/brendenlake/omniglot) and pass --root, set {ROOT_ENV}, or set data.root; \
         use --synthetic for the procedural stand-in"
    )))
}

fn load_origin(origin: &Origin) -> Result<ConceptDataset> {
    match origin {
        Origin::Omniglot { root } => load_omniglot(root).map_err(|e| {
            CliError::Data(format!(
                "{e}. Check that {} holds both Omniglot trees and is readable, then retry",
                root.display()
            ))
        }),
        Origin::Synthetic(s) => {
            if s.alphabets.is_empty() || s.samples_per_concept < 2 {
                return Err(CliError::Config(
                    "data.synthetic needs at least one alphabet and 2 samples per concept".into(),
                ));
            }
            Ok(synthetic_dataset(&s.spec()))
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig, args: &PrepareArgs, force: bool) -> Result<PrepareOutcome> {
    let origin = resolve_origin(cfg, args)?;
    let source = CacheSource {
        origin,
        holdout_per_alphabet: args.holdout.unwrap_or(cfg.data.holdout_per_alphabet),
        split_seed: args.split_seed.unwrap_or_else(|| cfg.split_seed()),
    };
    let dir = cfg.cache_dir();
    let source_path = dir.join(SOURCE_FILE);
    let mut warnings = Vec::new();
    if source.holdout_per_alphabet == 0 {
        warnings.push("--holdout 0 leaves the test set empty; evaluation will have no concepts".to_string());
    }
    if let Ok(text) = std::fs::read_to_string(&source_path) {
        let previous: Option<CacheSource> = serde_json::from_str(&text).ok();
        if previous.as_ref() == Some(&source) {
            if let Ok((manifest, _, _)) = read_cache(&dir) {
                return Ok(PrepareOutcome {
                    manifest,
                    cache_hit: true,
                    warnings,
                });
            }
        } else if !force {
            return Err(CliError::Config(format!(
                "{} holds a cache prepared from a different source or split; pass --force to replace it",
                dir.display()
            )));
        }
    }
    let dataset = load_origin(&source.origin)?;
    let (train, test) = make_weak_split(&dataset, source.holdout_per_alphabet, source.split_seed).map_err(CliError::data)?;
    let manifest = write_cache(&dir, &train, &test, source.split_seed, source.holdout_per_alphabet).map_err(CliError::data)?;
    write_json(&source_path, &source)?;
    Ok(PrepareOutcome {
        manifest,
        cache_hit: false,
        warnings,
    })
}

/// The prepared cache, or guidance to run `prepare-data`.
pub struct Prepared {
    pub dir: PathBuf,
    pub manifest: CacheManifest,
    pub train: ConceptDataset,
    pub test: ConceptDataset,
}

pub fn load_prepared(cfg: &ExperimentConfig) -> Result<Prepared> {
    let dir = cfg.cache_dir();
    load_prepared_at(&dir)
}

pub fn load_prepared_at(dir: &Path) -> Result<Prepared> {
    if !dir.join(oneshot_core::data::MANIFEST_FILE).exists() {
        return Err(CliError::Data(format!(
            "no prepared dataset in {}; run `prepare-data` first",
            dir.display()
        )));
    }
    let (manifest, train, test) = read_cache(dir).map_err(CliError::data)?;
    Ok(Prepared {
        dir: dir.to_path_buf(),
        manifest,
        train,
        test,
    })
}

/// The first `n` concepts by id.
pub fn first_concepts(ds: &ConceptDataset, n: Option<usize>, split: Split) -> Result<ConceptDataset> {
    match n {
        Some(n) if n < ds.len() => {
            let ids: Vec<ConceptId> = ds.concept_ids().into_iter().take(n).collect();
            ds.subset(&ids, split).map_err(CliError::data)
        }
        _ => Ok(ds.clone()),
    }
}

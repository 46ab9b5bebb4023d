//! `sweep`: train and score one generator over a grid of hyper-parameter
//! values and seeds, then summarize the trends.

use std::path::{Path, PathBuf};

use oneshot_core::analysis::{
    least_curve_fit, run_sweep, trend_report, CellKey, CellOutcome, CurvePoint, SweepParameter, SweepResult, SweepSpec,
};
use oneshot_core::data::Split;
use oneshot_core::seed;
use oneshot_models::checkpoint::{file_sha256, read_meta};
use oneshot_models::generator::{GeneratorConfig, GeneratorModel};
use serde_json::{json, Value};

use crate::config::{merge, read_tree, ExperimentConfig};
use crate::data::{first_concepts, load_prepared};
use crate::error::{CliError, Result};
use crate::evaluate::{check_dataset, generate_all, load_extractor, reference, Classifier, Scorer};
use crate::figures::{sweep_curve, sweep_plane};
use crate::manifest::{derive_run_id, find_run, resolve_checkpoint, write_json, Run, RunManifest, RunStatus};
use crate::Globals;

pub const SWEEP_FILE: &str = "sweep.json";
pub const TREND_FILE: &str = "trend.json";

#[derive(Clone, Debug, Default)]
pub struct SweepArgs {
    pub spec: PathBuf,
    pub run_id: Option<String>,
    pub workers: Option<usize>,
}

/// Reads a sweep spec (TOML, or JSON by extension). A missing `values`
/// list takes the parameter's default grid.
pub fn read_spec(path: &Path) -> Result<SweepSpec> {
    let mut tree = read_tree(path)?;
    let bad = |e: serde_json::Error| CliError::Config(format!("sweep spec {}: {e}", path.display()));
    if let Value::Object(map) = &mut tree {
        if !map.contains_key("values") {
            if let (Some(k), Some(p)) = (map.get("model_kind"), map.get("parameter")) {
                let kind = serde_json::from_value(k.clone()).map_err(bad)?;
                let param: SweepParameter = serde_json::from_value(p.clone()).map_err(bad)?;
                if let Some(grid) = param.default_grid(kind) {
                    map.insert("values".into(), json!(grid));
                }
            }
        }
    }
    let spec: SweepSpec = serde_json::from_value(tree).map_err(bad)?;
    spec.validate()
        .map_err(|e| CliError::Config(format!("sweep spec {}: {e}", path.display())))?;
    Ok(spec)
}

/// Generator configuration of one cell: the configured model section,
/// overlaid with the spec's `fixed_config`, with the swept parameter set.
pub fn cell_config(cfg: &ExperimentConfig, spec: &SweepSpec, value: f64) -> Result<GeneratorConfig> {
    let mut tree = serde_json::to_value(cfg.model.generator(spec.model_kind)).expect("serializes");
    if !spec.fixed_config.is_null() {
        if !spec.fixed_config.is_object() {
            return Err(CliError::Config("sweep fixed_config must be a table".into()));
        }
        merge(&mut tree, spec.fixed_config.clone());
    }
    let v = if spec.parameter == SweepParameter::Beta {
        json!(value)
    } else if value.fract() == 0.0 && value >= 0.0 {
        json!(value as u64)
    } else {
        return Err(CliError::Config(format!("{} must be a whole number, got {value}", spec.parameter.as_str())));
    };
    tree[spec.parameter.as_str()] = v;
    let g: GeneratorConfig = serde_json::from_value(tree).map_err(|e| CliError::Config(format!("sweep fixed_config: {e}")))?;
    g.validate().map_err(CliError::config)?;
    Ok(g)
}

fn cell_name(spec: &SweepSpec, key: CellKey) -> String {
    format!("{}={}_seed{}", spec.parameter.as_str(), key.value, key.seed)
}

pub fn sweep(mut cfg: ExperimentConfig, args: &SweepArgs, globals: &Globals) -> Result<RunManifest> {
    if let Some(w) = args.workers {
        cfg.sweep.workers = w;
    }
    cfg.validate()?;
    let spec = read_spec(&args.spec)?;
    for v in &spec.values {
        cell_config(&cfg, &spec, *v)?;
    }
    let extractor_ref = cfg
        .sweep
        .extractor
        .clone()
        .ok_or_else(|| CliError::Config("sweep.extractor must name an extractor checkpoint or run id".into()))?;
    let extractor = resolve_checkpoint(&globals.out, &extractor_ref)?;
    let classifier = match &cfg.sweep.classifier {
        Some(c) => resolve_checkpoint(&globals.out, c)?,
        None => extractor.clone(),
    };
    let snapshot = cfg.snapshot();
    // Workers change scheduling only, not results.
    let mut identity = snapshot.clone();
    identity["sweep"]["workers"] = Value::Null;
    let args_json = json!({ "spec": spec, "extractor": extractor, "classifier": classifier });
    let run_id = args.run_id.clone().unwrap_or_else(|| {
        derive_run_id("sweep", &format!("{}-{}", spec.model_kind, spec.parameter.as_str()), &args_json, &identity)
    });
    if let Some(prev) = find_run(&globals.out, &run_id) {
        if globals.resume && prev.status == RunStatus::Succeeded {
            let done = crate::manifest::run_dir(&globals.out, &run_id).join(SWEEP_FILE);
            if oneshot_core::analysis::load_sweep_manifest(&done).is_ok_and(|r| r.is_complete()) {
                log::info!("sweep {run_id} is already complete; nothing to do");
                return Ok(prev);
            }
        }
    }
    let mut run = Run::start(&globals.out, run_id, "sweep", args_json, snapshot, globals.force, globals.resume)?;
    match sweep_body(&cfg, &spec, &extractor, &classifier, &mut run) {
        Ok(()) => run.succeed(),
        Err(e) => Err(run.fail(e)),
    }
}

fn sweep_body(cfg: &ExperimentConfig, spec: &SweepSpec, extractor: &Path, classifier: &Path, run: &mut Run) -> Result<()> {
    let prepared = load_prepared(cfg)?;
    let device = cfg.device();
    let test = first_concepts(&prepared.test, cfg.metrics.max_concepts, Split::Test)?;
    if test.is_empty() {
        return Err(CliError::Data("the prepared test split is empty".into()));
    }
    let train = first_concepts(&prepared.train, cfg.data.train_subset, Split::Train)?;
    run.manifest.input_hashes.insert("train_split".into(), prepared.manifest.train_hash.clone());
    run.manifest.input_hashes.insert("test_split".into(), prepared.manifest.test_hash.clone());
    run.manifest.input_hashes.insert("extractor".into(), file_sha256(extractor).map_err(CliError::config)?);
    run.manifest.input_hashes.insert("classifier".into(), file_sha256(classifier).map_err(CliError::config)?);
    for p in [extractor, classifier] {
        let meta = read_meta(p).map_err(CliError::config)?;
        if let Some(w) = check_dataset(p, &meta, &prepared)? {
            run.warn(w);
        }
    }
    let rec_seed = seed::derive(cfg.seed, "recognizability");
    run.manifest.seeds.insert("master".into(), cfg.seed);
    run.manifest.seeds.insert("recognizability".into(), rec_seed);
    for s in &spec.seeds {
        run.manifest.seeds.insert(format!("cell:{s}"), *s);
    }

    let (ext, _) = load_extractor(extractor, device)?;
    Classifier::load(classifier, device)?.0.check_ways(cfg.metrics.ways)?;
    let reference = reference(&ext, &test, cfg.extractor.tap)?;
    drop(ext);
    let cells_dir = run.path("cells");
    std::fs::create_dir_all(&cells_dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", cells_dir.display())))?;
    let train_hash = prepared.manifest.train_hash.clone();

    // Models hold tensors, which cannot be shared across threads, so each
    // cell loads its own extractor and classifier.
    let runner = |spec: &SweepSpec, key: CellKey| -> std::result::Result<CellOutcome, String> {
        let cell = || -> Result<CellOutcome> {
            let gcfg = cell_config(cfg, spec, key.value)?;
            let name = cell_name(spec, key);
            let ckpt = cells_dir.join(format!("{name}.safetensors"));
            let cached = read_meta(&ckpt).ok().filter(|m| {
                m.seed == seed::derive(key.seed, "init")
                    && m.config == serde_json::to_value(&gcfg).expect("serializes")
                    && m.extra.get("train_hash").and_then(|h| h.as_str()) == Some(train_hash.as_str())
            });
            let model = match cached {
                Some(_) => GeneratorModel::load(&ckpt, device).map_err(CliError::config)?,
                None => {
                    let mut g = GeneratorModel::new(gcfg, device, seed::derive(key.seed, "init")).map_err(CliError::config)?;
                    g.train(&train, seed::derive(key.seed, "train")).map_err(CliError::training)?;
                    g.save(&ckpt, json!({ "train_hash": train_hash, "train_subset": cfg.data.train_subset }))
                        .map_err(CliError::training)?;
                    g
                }
            };
            let samples = generate_all(
                &model,
                &reference.prototypes,
                cfg.metrics.samples_per_concept,
                seed::derive(key.seed, "generate"),
            )?;
            drop(model);
            let (ext, _) = load_extractor(extractor, device)?;
            let (clf, _) = Classifier::load(classifier, device)?;
            let view = clf.as_dyn();
            let scorer = Scorer {
                extractor: &ext,
                classifier: view.as_ref(),
                prototypes: &reference.prototypes,
                metrics: &cfg.metrics,
                tap: cfg.extractor.tap,
                recognizability_seed: rec_seed,
            };
            let point = scorer.score(&name, &samples)?;
            Ok(CellOutcome {
                point,
                checkpoint: Some(ckpt),
            })
        };
        cell().map_err(|e| e.to_string())
    };
    let result = run_sweep(spec, &runner, Some(&run.path(SWEEP_FILE)), cfg.sweep.workers).map_err(CliError::config)?;
    run.artifact(SWEEP_FILE);
    for (key, reason) in result.failures() {
        run.warn(format!("cell {} failed: {reason}", cell_name(spec, key)));
    }
    for c in &result.cells {
        if let oneshot_core::analysis::CellStatus::Done { .. } = c.status {
            let name = cell_name(spec, c.key);
            run.artifact(format!("cells/{name}.safetensors"));
            run.artifact(format!("cells/{name}.json"));
        }
    }
    if result.seeds().iter().all(|&s| result.series(s).is_empty()) {
        return Err(CliError::Training("every sweep cell failed".into()));
    }
    write_trends(run, &result)?;
    Ok(())
}

fn write_trends(run: &mut Run, result: &SweepResult) -> Result<()> {
    let trend = trend_report(result);
    write_json(&run.path(TREND_FILE), &trend)?;
    run.artifact(TREND_FILE);
    let param = result.spec.parameter.as_str();
    for (metric, t) in [("diversity", &trend.diversity), ("recognizability", &trend.recognizability)] {
        let files = sweep_curve(&run.dir, &format!("{metric}_vs_{param}"), param, metric, &trend.values, &t.mean, &t.std, &t.smoothed)?;
        for f in files {
            run.artifact(f);
        }
    }
    let points: Vec<(f64, f64, f64)> = trend
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, trend.diversity.mean[i], trend.recognizability.mean[i]))
        .collect();
    let curve_points: Vec<CurvePoint> = points
        .iter()
        .map(|&(param, diversity, recognizability)| CurvePoint {
            param,
            diversity,
            recognizability,
        })
        .collect();
    let curve = match least_curve_fit(&curve_points, 2) {
        Ok(fit) => {
            let (lo, hi) = (fit.latent[0], *fit.latent.last().expect("fitted points"));
            (0..=50)
                .map(|k| {
                    let s = lo + (hi - lo) * f64::from(k) / 50.0;
                    (fit.diversity_at(s), fit.recognizability_at(s))
                })
                .collect()
        }
        Err(e) => {
            run.warn(format!("no curve fitted to the sweep means: {e}"));
            Vec::new()
        }
    };
    for f in sweep_plane(&run.dir, &format!("plane_{param}"), param, &points, &curve)? {
        run.artifact(f);
    }
    Ok(())
}

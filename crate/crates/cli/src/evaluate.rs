//! `evaluate`: sample every test concept from each generator, then score
//! diversity and recognizability next to the human reference.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use oneshot_core::data::{ConceptDataset, ConceptId, ConceptImage, Split};
use oneshot_core::metrics::{model_point, select_prototype, zscore_and_distance, DistanceRow, ModelPoint, SourceId};
use oneshot_core::{seed, Bitmap};
use oneshot_models::backbone::Backbone;
use oneshot_models::checkpoint::{file_sha256, load_backbone, load_maml, read_meta, CheckpointMeta};
use oneshot_models::classify::{OneShotClassifier, ProtoNetClassifier};
use oneshot_models::embed::{embed, embed_with_ids, Tap};
use oneshot_models::generator::GeneratorModel;
use oneshot_models::maml::MetaClassifier;
use oneshot_models::recognizability::{recognizability, SupportBuilder};
use serde::{Deserialize, Serialize};
use tch::Device;

use crate::config::{ExperimentConfig, MetricsConfig};
use crate::data::{first_concepts, load_prepared, Prepared};
use crate::error::{CliError, Result};
use crate::figures::{num, scatter, write_csv, LabeledPoint};
use crate::grids::write_grid;
use crate::manifest::{derive_run_id, read_run_manifest, resolve_checkpoint, write_json, Reproduction, Run, RunManifest};
use crate::Globals;

/// Id of the point computed from real test drawings.
pub const HUMAN_ID: &str = "human";
pub const PER_CONCEPT_FILE: &str = "per_concept.csv";
pub const POINTS_FILE: &str = "points.json";
pub const DISTANCES_FILE: &str = "distances.csv";
pub const PROTOTYPES_FILE: &str = "prototypes.csv";

#[derive(Clone, Debug, Default)]
pub struct EvaluateArgs {
    /// Generator checkpoints (paths or training run ids).
    pub models: Vec<String>,
    pub extractor: Option<String>,
    /// Defaults to the extractor used as a prototype classifier.
    pub classifier: Option<String>,
    pub run_id: Option<String>,
    pub from_manifest: Option<PathBuf>,
}

/// Checkpoint paths after resolving run ids; stored in the run manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedInputs {
    pub models: Vec<PathBuf>,
    pub extractor: PathBuf,
    pub classifier: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointsFile {
    pub points: Vec<ModelPoint>,
    pub distances: Vec<DistanceRow>,
}

/// A recognizability classifier loaded from either checkpoint family.
pub enum Classifier {
    Protonet(Backbone, String),
    Maml(MetaClassifier),
}

impl Classifier {
    pub fn load(path: &Path, device: Device) -> Result<(Self, CheckpointMeta)> {
        let meta = read_meta(path).map_err(CliError::evaluation)?;
        if meta.kind == "maml" {
            let (m, meta) = load_maml(path, device).map_err(CliError::evaluation)?;
            Ok((Classifier::Maml(m), meta))
        } else if meta.kind == "protonet" || meta.kind == "simclr" {
            let (b, meta) = load_backbone(path, device).map_err(CliError::evaluation)?;
            let name = meta.kind.clone();
            Ok((Classifier::Protonet(b, name), meta))
        } else {
            Err(CliError::Evaluation(format!(
                "{} is a {} checkpoint, not a classifier",
                path.display(),
                meta.kind
            )))
        }
    }

    pub fn as_dyn(&self) -> Box<dyn OneShotClassifier + '_> {
        match self {
            Classifier::Protonet(b, name) => Box::new(ProtoNetClassifier::named(b, name.clone())),
            Classifier::Maml(m) => Box::new(MamlView(m)),
        }
    }

    pub fn check_ways(&self, ways: usize) -> Result<()> {
        match self {
            Classifier::Maml(m) if m.config().ways != ways => Err(CliError::Config(format!(
                "the meta classifier was trained {}-way but metrics.ways is {ways}",
                m.config().ways
            ))),
            _ => Ok(()),
        }
    }
}

struct MamlView<'a>(&'a MetaClassifier);

impl OneShotClassifier for MamlView<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn classify_support(
        &self,
        support: &[&Bitmap],
        queries: &[&Bitmap],
        labels: &[usize],
    ) -> oneshot_models::Result<Vec<oneshot_models::classify::ClassifierOutput>> {
        self.0.classify_support(support, queries, labels)
    }
}

pub fn load_extractor(path: &Path, device: Device) -> Result<(Backbone, CheckpointMeta)> {
    let meta = read_meta(path).map_err(CliError::evaluation)?;
    if meta.kind != "protonet" && meta.kind != "simclr" {
        return Err(CliError::Evaluation(format!(
            "{} is a {} checkpoint, not a feature extractor",
            path.display(),
            meta.kind
        )));
    }
    load_backbone(path, device).map_err(CliError::evaluation)
}

/// Refuses checkpoints trained on a different training split.
pub fn check_dataset(path: &Path, meta: &CheckpointMeta, prepared: &Prepared) -> Result<Option<String>> {
    match meta.extra.get("train_hash").and_then(|v| v.as_str()) {
        Some(h) if h == prepared.manifest.train_hash => Ok(None),
        Some(h) => Err(CliError::Evaluation(format!(
            "{} was trained on a dataset with training hash {}, but the prepared cache in {} has {}; \
             prepare the data from the original source and split, or retrain",
            path.display(),
            &h[..h.len().min(12)],
            prepared.dir.display(),
            &prepared.manifest.train_hash[..prepared.manifest.train_hash.len().min(12)]
        ))),
        None => Ok(Some(format!(
            "{} records no training-set hash; its dataset cannot be verified",
            path.display()
        ))),
    }
}

/// Prototypes and real drawings of every evaluated concept.
pub struct Reference {
    pub prototypes: BTreeMap<ConceptId, Bitmap>,
    pub prototype_index: BTreeMap<ConceptId, usize>,
    /// Real drawings other than the prototype.
    pub human: BTreeMap<ConceptId, Vec<Bitmap>>,
}

pub fn reference(extractor: &Backbone, test: &ConceptDataset, tap: Tap) -> Result<Reference> {
    let images: Vec<ConceptImage> = test.concepts().flat_map(|c| (0..c.len()).map(|i| c.image(i))).collect();
    let matrix = embed(extractor, &images, tap).map_err(CliError::evaluation)?;
    let mut r = Reference {
        prototypes: BTreeMap::new(),
        prototype_index: BTreeMap::new(),
        human: BTreeMap::new(),
    };
    for (cid, m) in matrix.by_concept() {
        let p = select_prototype(&m).map_err(CliError::evaluation)?;
        let concept = test.concept(cid).expect("embedded from this dataset");
        r.prototypes.insert(cid, concept.sample(p.sample_index));
        r.prototype_index.insert(cid, p.sample_index);
        r.human.insert(
            cid,
            (0..concept.len()).filter(|&i| i != p.sample_index).map(|i| concept.sample(i)).collect(),
        );
    }
    Ok(r)
}

/// Scores sample sets against fixed prototypes with one extractor and one
/// classifier. Distractor draws depend only on `recognizability_seed`, so
/// every model meets the same supports.
pub struct Scorer<'a> {
    pub extractor: &'a Backbone,
    pub classifier: &'a dyn OneShotClassifier,
    pub prototypes: &'a BTreeMap<ConceptId, Bitmap>,
    pub metrics: &'a MetricsConfig,
    pub tap: Tap,
    pub recognizability_seed: u64,
}

impl Scorer<'_> {
    pub fn score(&self, id: &str, samples: &BTreeMap<ConceptId, Vec<Bitmap>>) -> Result<ModelPoint> {
        let builder = SupportBuilder::new(self.prototypes, self.metrics.ways).map_err(CliError::evaluation)?;
        let mut div = BTreeMap::new();
        let mut rec = BTreeMap::new();
        for (&cid, imgs) in samples {
            let ids = (0..imgs.len())
                .map(|i| SourceId {
                    concept_id: cid,
                    sample_index: i,
                })
                .collect();
            let m = embed_with_ids(self.extractor, imgs, ids, self.tap).map_err(CliError::evaluation)?;
            let d = self
                .metrics
                .diversity
                .compute(&m)
                .map_err(|e| CliError::Evaluation(format!("{id}, concept {}: {e}", cid.0)))?;
            let r = recognizability(self.classifier, cid, imgs, &builder, self.metrics.draws, self.recognizability_seed)
                .map_err(CliError::evaluation)?;
            div.insert(cid, d);
            rec.insert(cid, r.accuracy);
        }
        model_point(id, &div, &rec).map_err(CliError::evaluation)
    }
}

/// `n` samples per prototype; the stream of each concept depends only on
/// `seed` and the concept id.
pub fn generate_all(
    model: &GeneratorModel,
    prototypes: &BTreeMap<ConceptId, Bitmap>,
    n: usize,
    seed: u64,
) -> Result<BTreeMap<ConceptId, Vec<Bitmap>>> {
    prototypes
        .iter()
        .map(|(&cid, p)| {
            let s = seed::derive_indexed(seed, "concept", u64::from(cid.0));
            model
                .generate(p, n, s, false)
                .map(|v| (cid, v))
                .map_err(CliError::evaluation)
        })
        .collect()
}

fn unique_ids(kinds: &[String]) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    kinds
        .iter()
        .map(|k| {
            let n = seen.entry(k.as_str()).or_insert(0);
            *n += 1;
            if *n == 1 {
                k.clone()
            } else {
                format!("{k}-{n}")
            }
        })
        .collect()
}

fn absolute(p: PathBuf) -> PathBuf {
    std::path::absolute(&p).unwrap_or(p)
}

pub fn evaluate(cfg: ExperimentConfig, args: &EvaluateArgs, globals: &Globals) -> Result<RunManifest> {
    if let Some(path) = &args.from_manifest {
        return reproduce(path, args.run_id.clone(), globals);
    }
    let extractor = args
        .extractor
        .as_deref()
        .ok_or_else(|| CliError::Config("--extractor is required (a checkpoint path or training run id)".into()))?;
    let extractor = absolute(resolve_checkpoint(&globals.out, extractor)?);
    let classifier = match &args.classifier {
        Some(c) => absolute(resolve_checkpoint(&globals.out, c)?),
        None => extractor.clone(),
    };
    let models = args
        .models
        .iter()
        .map(|m| resolve_checkpoint(&globals.out, m).map(absolute))
        .collect::<Result<Vec<_>>>()?;
    let inputs = ResolvedInputs {
        models,
        extractor,
        classifier,
    };
    let snapshot = cfg.snapshot();
    let args_json = serde_json::to_value(&inputs).expect("serializes");
    let run_id = args
        .run_id
        .clone()
        .unwrap_or_else(|| derive_run_id("evaluate", "models", &args_json, &snapshot));
    let run = Run::start(&globals.out, run_id, "evaluate", args_json, snapshot, globals.force, false)?;
    run_evaluation(&cfg, &inputs, run)
}

fn run_evaluation(cfg: &ExperimentConfig, inputs: &ResolvedInputs, mut run: Run) -> Result<RunManifest> {
    match evaluation_body(cfg, inputs, &mut run) {
        Ok(()) => run.succeed(),
        Err(e) => Err(run.fail(e)),
    }
}

fn evaluation_body(cfg: &ExperimentConfig, inputs: &ResolvedInputs, run: &mut Run) -> Result<()> {
    let prepared = load_prepared(cfg)?;
    let test = first_concepts(&prepared.test, cfg.metrics.max_concepts, Split::Test)?;
    if test.is_empty() {
        return Err(CliError::Data("the prepared test split is empty; re-run prepare-data with --holdout ≥ 1".into()));
    }
    let device = cfg.device();
    let m = &cfg.metrics;
    run.manifest.input_hashes.insert("train_split".into(), prepared.manifest.train_hash.clone());
    run.manifest.input_hashes.insert("test_split".into(), prepared.manifest.test_hash.clone());

    let (extractor, emeta) = load_extractor(&inputs.extractor, device)?;
    let (classifier, cmeta) = Classifier::load(&inputs.classifier, device)?;
    classifier.check_ways(m.ways)?;
    for (path, meta) in [(&inputs.extractor, &emeta), (&inputs.classifier, &cmeta)] {
        if let Some(w) = check_dataset(path, meta, &prepared)? {
            run.warn(w);
        }
    }
    run.manifest
        .input_hashes
        .insert("extractor".into(), file_sha256(&inputs.extractor).map_err(CliError::evaluation)?);
    run.manifest
        .input_hashes
        .insert("classifier".into(), file_sha256(&inputs.classifier).map_err(CliError::evaluation)?);
    let rec_seed = seed::derive(cfg.seed, "recognizability");
    let gen_seed = seed::derive(cfg.seed, "generate");
    run.manifest.seeds.insert("master".into(), cfg.seed);
    run.manifest.seeds.insert("recognizability".into(), rec_seed);
    run.manifest.seeds.insert("generate".into(), gen_seed);

    let reference = reference(&extractor, &test, cfg.extractor.tap)?;
    if reference.prototypes.len() < m.ways {
        return Err(CliError::Evaluation(format!(
            "{}-way recognizability needs at least {} test concepts, have {}",
            m.ways,
            m.ways,
            reference.prototypes.len()
        )));
    }
    let clf = classifier.as_dyn();
    let scorer = Scorer {
        extractor: &extractor,
        classifier: clf.as_ref(),
        prototypes: &reference.prototypes,
        metrics: m,
        tap: cfg.extractor.tap,
        recognizability_seed: rec_seed,
    };
    let mut points = vec![scorer.score(HUMAN_ID, &reference.human)?];
    let mut grids: Vec<(String, BTreeMap<ConceptId, Vec<Bitmap>>)> = Vec::new();

    let mut loaded = Vec::new();
    for path in &inputs.models {
        let g = GeneratorModel::load(path, device).map_err(CliError::evaluation)?;
        let meta = read_meta(path).map_err(CliError::evaluation)?;
        if let Some(w) = check_dataset(path, &meta, &prepared)? {
            run.warn(w);
        }
        if !g.is_trained() {
            return Err(CliError::Evaluation(format!(
                "{} has no completed training epochs; train it before evaluating",
                path.display()
            )));
        }
        loaded.push((path, g));
    }
    let ids = unique_ids(&loaded.iter().map(|(_, g)| g.kind().as_str().to_string()).collect::<Vec<_>>());
    for ((path, g), id) in loaded.iter().zip(&ids) {
        run.manifest
            .input_hashes
            .insert(format!("model:{id}"), file_sha256(path).map_err(CliError::evaluation)?);
        let samples = generate_all(g, &reference.prototypes, m.samples_per_concept, seed::derive(gen_seed, id))?;
        points.push(scorer.score(id, &samples)?);
        grids.push((id.clone(), samples));
    }

    let distances = if points.len() >= 2 {
        match zscore_and_distance(&points, HUMAN_ID) {
            Ok(d) => d,
            Err(e) => {
                run.warn(format!("distances skipped: {e}"));
                Vec::new()
            }
        }
    } else {
        Vec::new()
    };
    write_outputs(run, &test, &reference, &points, &distances, &grids, m.grid_concepts)
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    run: &mut Run,
    test: &ConceptDataset,
    reference: &Reference,
    points: &[ModelPoint],
    distances: &[DistanceRow],
    grids: &[(String, BTreeMap<ConceptId, Vec<Bitmap>>)],
    grid_concepts: usize,
) -> Result<()> {
    write_csv(
        &run.path(PER_CONCEPT_FILE),
        &["model_id", "concept_id", "diversity", "recognizability"],
        points.iter().flat_map(|p| {
            p.per_concept
                .iter()
                .map(|c| vec![p.model_id.clone(), c.concept_id.0.to_string(), num(c.diversity), num(c.recognizability)])
        }),
    )?;
    run.artifact(PER_CONCEPT_FILE);
    write_csv(
        &run.path(PROTOTYPES_FILE),
        &["concept_id", "alphabet_id", "name", "prototype_sample"],
        reference.prototype_index.iter().map(|(cid, &i)| {
            let c = test.concept(*cid).expect("test concept");
            vec![cid.0.to_string(), c.alphabet_id.0.to_string(), c.name.clone(), i.to_string()]
        }),
    )?;
    run.artifact(PROTOTYPES_FILE);
    write_csv(
        &run.path(DISTANCES_FILE),
        &["model_id", "mean_diversity", "mean_recognizability", "z_diversity", "z_recognizability", "distance_to_human"],
        distances.iter().map(|d| {
            vec![
                d.model_id.clone(),
                num(d.mean_diversity),
                num(d.mean_recognizability),
                num(d.z_diversity),
                num(d.z_recognizability),
                num(d.distance_to_human),
            ]
        }),
    )?;
    run.artifact(DISTANCES_FILE);
    write_json(
        &run.path(POINTS_FILE),
        &PointsFile {
            points: points.to_vec(),
            distances: distances.to_vec(),
        },
    )?;
    run.artifact(POINTS_FILE);
    let labeled: Vec<LabeledPoint> = points
        .iter()
        .map(|p| LabeledPoint {
            label: p.model_id.clone(),
            diversity: p.mean_diversity,
            recognizability: p.mean_recognizability,
        })
        .collect();
    for f in scatter(&run.dir, "scatter", "diversity vs recognizability", &labeled)? {
        run.artifact(f);
    }
    if grid_concepts > 0 {
        let dir = run.path("grids");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Evaluation(format!("cannot create {}: {e}", dir.display())))?;
        let mut sets: Vec<(&str, &BTreeMap<ConceptId, Vec<Bitmap>>)> = vec![(HUMAN_ID, &reference.human)];
        sets.extend(grids.iter().map(|(id, s)| (id.as_str(), s)));
        for (id, samples) in sets {
            // Each row: the prototype, then its samples.
            let rows: Vec<Vec<&Bitmap>> = samples
                .iter()
                .take(grid_concepts)
                .map(|(cid, imgs)| std::iter::once(&reference.prototypes[cid]).chain(imgs.iter().take(10)).collect())
                .collect();
            let name = format!("grids/{id}.png");
            write_grid(&run.path(&name), &rows)?;
            run.artifact(name);
        }
    }
    run.persist()
}

/// Re-runs an evaluation from its manifest into a new run and compares
/// every CSV artifact byte for byte.
fn reproduce(path: &Path, run_id: Option<String>, globals: &Globals) -> Result<RunManifest> {
    let original = read_run_manifest(path)?;
    if original.command != "evaluate" {
        return Err(CliError::Config(format!("{} records a {} run, not an evaluation", path.display(), original.command)));
    }
    let original_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let cfg = ExperimentConfig::from_tree(original.config.clone())?;
    let inputs: ResolvedInputs = serde_json::from_value(original.args.clone())
        .map_err(|e| CliError::Config(format!("{}: unreadable evaluation inputs: {e}", path.display())))?;
    let mut expected: Vec<(String, &PathBuf)> = vec![
        ("extractor".into(), &inputs.extractor),
        ("classifier".into(), &inputs.classifier),
    ];
    let ids = unique_ids(
        &inputs
            .models
            .iter()
            .map(|p| read_meta(p).map(|m| m.kind).map_err(CliError::evaluation))
            .collect::<Result<Vec<_>>>()?,
    );
    expected.extend(ids.iter().map(|id| format!("model:{id}")).zip(&inputs.models));
    for (key, p) in expected {
        let now = file_sha256(p).map_err(CliError::evaluation)?;
        if original.input_hashes.get(&key) != Some(&now) {
            return Err(CliError::Evaluation(format!(
                "{} changed since run {}; cannot reproduce it",
                p.display(),
                original.run_id
            )));
        }
    }
    let run_id = run_id.unwrap_or_else(|| format!("{}-rerun", original.run_id));
    let out = globals.out.clone();
    let mut run = Run::start(
        &out,
        run_id,
        "evaluate",
        original.args.clone(),
        original.config.clone(),
        globals.force,
        false,
    )?;
    if let Err(e) = evaluation_body(&cfg, &inputs, &mut run) {
        return Err(run.fail(e));
    }
    let mut differing = Vec::new();
    for name in original.artifacts.iter().filter(|a| a.ends_with(".csv")) {
        let a = std::fs::read(original_dir.join(name)).ok();
        let b = std::fs::read(run.path(name)).ok();
        if a.is_none() || a != b {
            differing.push(name.clone());
        }
    }
    let identical = differing.is_empty();
    if !identical {
        run.warn(format!("regenerated artifacts differ from run {}: {}", original.run_id, differing.join(", ")));
    }
    run.manifest.reproduction = Some(Reproduction {
        of_run: original.run_id.clone(),
        identical,
        nondeterminism_source: (!identical).then(|| {
            format!(
                "floating-point kernels on device {} (torch threads {}) differ from those of the original run",
                cfg.device,
                tch::get_num_threads()
            )
        }),
        differing,
    });
    run.succeed()
}

//! `report`: consolidate finished evaluation runs into one markdown report
//! with figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use oneshot_core::data::ConceptId;
use oneshot_core::metrics::{per_concept_distances, top_k_concepts, ModelPoint};
use oneshot_core::Bitmap;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::data::load_prepared_at;
use crate::error::{CliError, Result};
use crate::evaluate::{PointsFile, HUMAN_ID, POINTS_FILE};
use crate::figures::{median, num, scatter, strip, write_csv, LabeledPoint};
use crate::grids::write_grid;
use crate::manifest::{check_run_id, find_run, run_dir, RunStatus};
use crate::Globals;

pub const REPORT_FILE: &str = "report.md";
/// Concepts per ranked grid and per radar table.
const RANKED: usize = 10;

#[derive(Clone, Debug, Default)]
pub struct ReportArgs {
    pub runs: Vec<String>,
    pub name: Option<String>,
}

#[derive(Debug)]
pub struct ReportOutcome {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

pub fn report(cfg: &ExperimentConfig, args: &ReportArgs, globals: &Globals) -> Result<ReportOutcome> {
    if args.runs.is_empty() {
        return Err(CliError::Config("empty report: name at least one evaluation run id".into()));
    }
    let mut missing = Vec::new();
    let mut loaded = Vec::new();
    for id in &args.runs {
        match find_run(&globals.out, id) {
            Some(m) if m.command == "evaluate" && m.status == RunStatus::Succeeded => {
                let path = run_dir(&globals.out, id).join(POINTS_FILE);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Evaluation(format!("run {id}: cannot read {}: {e}", path.display())))?;
                let points: PointsFile = serde_json::from_str(&text)
                    .map_err(|e| CliError::Evaluation(format!("run {id}: {}: {e}", path.display())))?;
                loaded.push((id.clone(), m, points));
            }
            Some(m) if m.command != "evaluate" => missing.push(format!("{id} (a {} run, not an evaluation)", m.command)),
            Some(_) => missing.push(format!("{id} (did not succeed)")),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Config(format!("runs not found: {}", missing.join(", "))));
    }

    // The first run's human point is the reference; later runs contribute
    // their models, renamed when ids collide.
    let human = loaded[0]
        .2
        .points
        .iter()
        .find(|p| p.model_id == HUMAN_ID)
        .cloned()
        .ok_or_else(|| CliError::Evaluation(format!("run {} has no human point", loaded[0].0)))?;
    let mut models: Vec<ModelPoint> = Vec::new();
    for (id, _, pf) in &loaded {
        for p in pf.points.iter().filter(|p| p.model_id != HUMAN_ID) {
            let mut p = p.clone();
            if models.iter().any(|m| m.model_id == p.model_id) {
                p.model_id = format!("{}@{id}", p.model_id);
            }
            models.push(p);
        }
    }

    let name = match &args.name {
        Some(n) => {
            check_run_id(n)?;
            n.clone()
        }
        None => {
            let digest = hex::encode(Sha256::digest(args.runs.join("\n").as_bytes()));
            format!("report-{}", &digest[..12])
        }
    };
    let dir = globals.out.join("reports").join(&name);
    if dir.exists() {
        if !globals.force {
            return Err(CliError::Config(format!(
                "report {} exists; pass --force to overwrite it",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot clear {}: {e}", dir.display())))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    let mut md = String::new();
    let mut warnings = Vec::new();
    writeln!(md, "# Diversity and recognizability report\n").unwrap();
    writeln!(md, "Runs: {}\n", args.runs.iter().map(|r| format!("`{r}`")).collect::<Vec<_>>().join(", ")).unwrap();

    let all: Vec<&ModelPoint> = std::iter::once(&human).chain(models.iter()).collect();
    let labeled: Vec<LabeledPoint> = all
        .iter()
        .map(|p| LabeledPoint {
            label: p.model_id.clone(),
            diversity: p.mean_diversity,
            recognizability: p.mean_recognizability,
        })
        .collect();
    files.extend(scatter(&dir, "scatter", "diversity vs recognizability", &labeled)?);
    writeln!(md, "## Points\n\n![scatter](scatter.svg)\n").unwrap();
    writeln!(md, "| model | mean diversity | mean recognizability |\n|---|---|---|").unwrap();
    for p in &all {
        writeln!(md, "| {} | {:.4} | {:.4} |", p.model_id, p.mean_diversity, p.mean_recognizability).unwrap();
    }
    md.push('\n');

    // Per-concept distances to the human reference.
    let comparable: Vec<&ModelPoint> = models
        .iter()
        .filter(|m| {
            let same = m.per_concept.len() == human.per_concept.len()
                && m.per_concept.iter().zip(&human.per_concept).all(|(a, b)| a.concept_id == b.concept_id);
            if !same {
                warnings.push(format!("{} was evaluated on other concepts; left out of the distance plots", m.model_id));
            }
            same
        })
        .collect();
    if !comparable.is_empty() {
        let per = per_concept_distances(&comparable, &human).map_err(CliError::evaluation)?;
        let groups: Vec<(String, Vec<f64>)> = comparable
            .iter()
            .zip(&per)
            .map(|(m, d)| (m.model_id.clone(), d.iter().map(|x| x.1).collect()))
            .collect();
        files.extend(strip(&dir, "distances", "distance to human", &groups)?);
        writeln!(md, "## Distance to the human reference\n\n![distances](distances.svg)\n").unwrap();
        writeln!(md, "| model | median per-concept distance |\n|---|---|").unwrap();
        for (g, v) in &groups {
            writeln!(md, "| {g} | {:.4} |", median(v)).unwrap();
        }
        md.push('\n');

        // Radar data: the concepts the closest model matches best.
        let best = groups
            .iter()
            .enumerate()
            .min_by(|a, b| median(&a.1 .1).total_cmp(&median(&b.1 .1)))
            .map(|(i, _)| i)
            .expect("non-empty");
        let chosen = top_k_concepts(&per[best], RANKED);
        let lookup: Vec<BTreeMap<ConceptId, f64>> = per.iter().map(|d| d.iter().copied().collect()).collect();
        let mut header = vec!["concept_id".to_string()];
        header.extend(groups.iter().map(|g| g.0.clone()));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(
            &dir.join("radar.csv"),
            &header_refs,
            chosen.iter().map(|c| {
                std::iter::once(c.0.to_string())
                    .chain(lookup.iter().map(|l| num(l[c])))
                    .collect()
            }),
        )?;
        files.push("radar.csv".into());
        writeln!(
            md,
            "Per-concept distances on the {RANKED} concepts closest for `{}`: [radar.csv](radar.csv)\n",
            groups[best].0
        )
        .unwrap();
    }

    // Real concepts ranked by diversity.
    let mut ranked: Vec<(ConceptId, f64)> = human.per_concept.iter().map(|c| (c.concept_id, c.diversity)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let k = RANKED.min(ranked.len());
    let lowest = &ranked[..k];
    let highest: Vec<(ConceptId, f64)> = ranked.iter().rev().take(k).copied().collect();
    write_csv(
        &dir.join("ranked_concepts.csv"),
        &["group", "rank", "concept_id", "diversity"],
        lowest
            .iter()
            .enumerate()
            .map(|(i, c)| ("lowest", i, c))
            .chain(highest.iter().enumerate().map(|(i, c)| ("highest", i, c)))
            .map(|(g, i, c)| vec![g.to_string(), (i + 1).to_string(), c.0 .0.to_string(), num(c.1)]),
    )?;
    files.push("ranked_concepts.csv".into());
    writeln!(md, "## Human concepts ranked by diversity\n\nTable: [ranked_concepts.csv](ranked_concepts.csv)\n").unwrap();
    match load_prepared_at(&cfg.cache_dir()) {
        Ok(prepared) => {
            for (label, set) in [("lowest", lowest.to_vec()), ("highest", highest.clone())] {
                let rows: Vec<Vec<Bitmap>> = set
                    .iter()
                    .filter_map(|(cid, _)| prepared.test.concept(*cid))
                    .map(|c| c.samples().take(10).collect())
                    .collect();
                let refs: Vec<Vec<&Bitmap>> = rows.iter().map(|r| r.iter().collect()).collect();
                let file = format!("diversity_{label}.png");
                write_grid(&dir.join(&file), &refs)?;
                writeln!(md, "{label} diversity:\n\n![{label}]({file})\n").unwrap();
                files.push(file);
            }
        }
        Err(e) => warnings.push(format!("concept grids skipped: {e}")),
    }
    if !warnings.is_empty() {
        writeln!(md, "## Warnings\n").unwrap();
        for w in &warnings {
            log::warn!("{w}");
            writeln!(md, "- {w}").unwrap();
        }
    }
    std::fs::write(dir.join(REPORT_FILE), md)
        .map_err(|e| CliError::Evaluation(format!("cannot write {}: {e}", dir.join(REPORT_FILE).display())))?;
    files.push(REPORT_FILE.into());
    Ok(ReportOutcome { dir, files })
}

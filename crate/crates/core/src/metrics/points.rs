use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::ConceptId;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptMetrics {
    pub concept_id: ConceptId,
    pub diversity: f64,
    pub recognizability: f64,
}

/// Mean diversity and recognizability of one model over a concept set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub model_id: String,
    pub mean_diversity: f64,
    pub mean_recognizability: f64,
    pub per_concept: Vec<ConceptMetrics>,
}

fn mismatch(a: &BTreeSet<ConceptId>, b: &BTreeSet<ConceptId>) -> Error {
    Error::ConceptMismatch {
        left: a.difference(b).map(|c| c.0).collect(),
        right: b.difference(a).map(|c| c.0).collect(),
    }
}

/// Joins the two per-concept tables and averages them.
pub fn model_point(
    model_id: impl Into<String>,
    diversity: &BTreeMap<ConceptId, f64>,
    recognizability: &BTreeMap<ConceptId, f64>,
) -> Result<ModelPoint> {
    let dk: BTreeSet<_> = diversity.keys().copied().collect();
    let rk: BTreeSet<_> = recognizability.keys().copied().collect();
    if dk != rk {
        return Err(mismatch(&dk, &rk));
    }
    if dk.is_empty() {
        return Err(Error::InvalidArgument("model point over an empty concept table".into()));
    }
    let per_concept: Vec<_> = dk
        .iter()
        .map(|c| ConceptMetrics {
            concept_id: *c,
            diversity: diversity[c],
            recognizability: recognizability[c],
        })
        .collect();
    let n = per_concept.len() as f64;
    Ok(ModelPoint {
        model_id: model_id.into(),
        mean_diversity: per_concept.iter().map(|c| c.diversity).sum::<f64>() / n,
        mean_recognizability: per_concept.iter().map(|c| c.recognizability).sum::<f64>() / n,
        per_concept,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub model_id: String,
    pub mean_diversity: f64,
    pub mean_recognizability: f64,
    pub z_diversity: f64,
    pub z_recognizability: f64,
    pub distance_to_human: f64,
}

/// Mean and population standard deviation.
fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes both axes over all `points` (population std) and measures
/// each point's ℓ2 distance to the point named `human_id`.
pub fn zscore_and_distance(points: &[ModelPoint], human_id: &str) -> Result<Vec<DistanceRow>> {
    if points.len() < 2 {
        return Err(Error::Degenerate("z-scoring needs at least two points".into()));
    }
    let human = points
        .iter()
        .position(|p| p.model_id == human_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no point named {human_id}")))?;
    let (md, sd) = moments(points.iter().map(|p| p.mean_diversity));
    let (mr, sr) = moments(points.iter().map(|p| p.mean_recognizability));
    for (axis, s) in [("diversity", sd), ("recognizability", sr)] {
        if s == 0.0 || !s.is_finite() {
            return Err(Error::Degenerate(format!("{axis} has zero variance across points")));
        }
    }
    let z: Vec<(f64, f64)> = points
        .iter()
        .map(|p| ((p.mean_diversity - md) / sd, (p.mean_recognizability - mr) / sr))
        .collect();
    let (hd, hr) = z[human];
    Ok(points
        .iter()
        .zip(&z)
        .map(|(p, &(zd, zr))| DistanceRow {
            model_id: p.model_id.clone(),
            mean_diversity: p.mean_diversity,
            mean_recognizability: p.mean_recognizability,
            z_diversity: zd,
            z_recognizability: zr,
            distance_to_human: (zd - hd).hypot(zr - hr),
        })
        .collect())
}

/// Per-concept distances of each model to the human, standardized over the
/// pooled per-concept points of all models and the human. An axis with zero
/// spread contributes nothing (every residual on it is zero).
pub fn per_concept_distances(models: &[&ModelPoint], human: &ModelPoint) -> Result<Vec<Vec<(ConceptId, f64)>>> {
    let hk: BTreeSet<_> = human.per_concept.iter().map(|c| c.concept_id).collect();
    for m in models {
        let mk: BTreeSet<_> = m.per_concept.iter().map(|c| c.concept_id).collect();
        if mk != hk {
            return Err(mismatch(&mk, &hk));
        }
    }
    let pool = || {
        models
            .iter()
            .flat_map(|m| m.per_concept.iter())
            .chain(human.per_concept.iter())
    };
    let (_, sd) = moments(pool().map(|c| c.diversity));
    let (_, sr) = moments(pool().map(|c| c.recognizability));
    let scale = |s: f64| if s > 0.0 { 1.0 / s } else { 0.0 };
    let (kd, kr) = (scale(sd), scale(sr));
    let hmap: BTreeMap<_, _> = human.per_concept.iter().map(|c| (c.concept_id, c)).collect();
    Ok(models
        .iter()
        .map(|m| {
            m.per_concept
                .iter()
                .map(|c| {
                    let h = hmap[&c.concept_id];
                    let dd = (c.diversity - h.diversity) * kd;
                    let dr = (c.recognizability - h.recognizability) * kr;
                    (c.concept_id, dd.hypot(dr))
                })
                .collect()
        })
        .collect())
}

pub fn per_concept_distance(model: &ModelPoint, human: &ModelPoint) -> Result<Vec<(ConceptId, f64)>> {
    Ok(per_concept_distances(&[model], human)?.remove(0))
}

/// The `k` concepts with the smallest distance; ties go to the lower id.
pub fn top_k_concepts(distances: &[(ConceptId, f64)], k: usize) -> Vec<ConceptId> {
    let mut v = distances.to_vec();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(c, _)| c).collect()
}

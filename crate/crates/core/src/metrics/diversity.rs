use serde::{Deserialize, Serialize};

use crate::data::ConceptId;
use crate::error::{Error, Result};
use crate::metrics::EmbeddingMatrix;

/// Reducer turning the per-dimension std vector into a scalar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    L2,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "measure", rename_all = "snake_case")]
pub enum DiversityMeasure {
    BesselStd { aggregation: Aggregation },
    PairwiseCosine { normalized: bool },
}

impl Default for DiversityMeasure {
    fn default() -> Self {
        DiversityMeasure::BesselStd {
            aggregation: Aggregation::L2,
        }
    }
}

impl DiversityMeasure {
    pub fn name(&self) -> &'static str {
        match self {
            DiversityMeasure::BesselStd { .. } => "bessel_std",
            DiversityMeasure::PairwiseCosine { .. } => "pairwise_cosine",
        }
    }

    pub fn aggregation_name(&self) -> &'static str {
        match self {
            DiversityMeasure::BesselStd {
                aggregation: Aggregation::L2,
            } => "l2",
            DiversityMeasure::BesselStd {
                aggregation: Aggregation::Mean,
            } => "mean",
            DiversityMeasure::PairwiseCosine { normalized: false } => "sum",
            DiversityMeasure::PairwiseCosine { normalized: true } => "pair_mean",
        }
    }

    pub fn compute(&self, embeddings: &EmbeddingMatrix) -> Result<f64> {
        match *self {
            DiversityMeasure::BesselStd { aggregation } => diversity_std(embeddings, aggregation),
            DiversityMeasure::PairwiseCosine { normalized } => diversity_cosine(embeddings, normalized),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    pub concept_id: ConceptId,
    pub value: f64,
    pub measure: DiversityMeasure,
    pub extractor_id: String,
}

impl DiversityScore {
    pub fn compute(
        concept_id: ConceptId,
        embeddings: &EmbeddingMatrix,
        measure: DiversityMeasure,
        extractor_id: impl Into<String>,
    ) -> Result<Self> {
        Ok(DiversityScore {
            concept_id,
            value: measure.compute(embeddings)?,
            measure,
            extractor_id: extractor_id.into(),
        })
    }
}

/// Per-dimension Bessel-corrected standard deviation, reduced to a scalar.
pub fn diversity_std(embeddings: &EmbeddingMatrix, aggregation: Aggregation) -> Result<f64> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("standard deviation needs at least 2 rows, got {n}")));
    }
    let d = embeddings.dim();
    // Shifting by the first row keeps identical rows at exactly zero spread.
    let origin = embeddings.row(0);
    let mut mean = vec![0.0; d];
    for row in embeddings.rows() {
        for ((m, v), o) in mean.iter_mut().zip(row).zip(origin) {
            *m += v - o;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut ss = vec![0.0; d];
    for row in embeddings.rows() {
        for (((s, v), m), o) in ss.iter_mut().zip(row).zip(&mean).zip(origin) {
            let dev = (v - o) - m;
            *s += dev * dev;
        }
    }
    let var = ss.into_iter().map(|s| s / (n - 1) as f64);
    Ok(match aggregation {
        Aggregation::L2 => var.sum::<f64>().sqrt(),
        Aggregation::Mean => var.map(f64::sqrt).sum::<f64>() / d as f64,
    })
}

/// Sum over pairs of `√(2 − 2 cos)`, computed as the distance between unit
/// vectors; divided by the pair count when `normalized`.
pub fn diversity_cosine(embeddings: &EmbeddingMatrix, normalized: bool) -> Result<f64> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("pairwise dispersion needs at least 2 rows, got {n}")));
    }
    let mut units = Vec::with_capacity(n);
    for (i, row) in embeddings.rows().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("row {i} has zero norm")));
        }
        units.push(row.iter().map(|v| v / norm).collect::<Vec<_>>());
    }
    let mut total = 0.0;
    for i in 0..n {
        for k in i + 1..n {
            total += units[i]
                .iter()
                .zip(&units[k])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(if normalized { total / pairs } else { total })
}

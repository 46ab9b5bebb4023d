use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::ConceptId;
use crate::error::{Error, Result};

/// Which drawing a row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceId {
    pub concept_id: ConceptId,
    pub sample_index: usize,
}

/// N×D row-major feature matrix with one source id per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
    source_ids: Vec<SourceId>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f64>, source_ids: Vec<SourceId>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding width must be positive".into()));
        }
        if data.len() != dim * source_ids.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form {} rows of width {dim}",
                data.len(),
                source_ids.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite embedding value in row {}", i / dim)));
        }
        Ok(EmbeddingMatrix { dim, data, source_ids })
    }

    /// Rows attributed to one concept with sample indices `0..n`.
    pub fn from_rows(concept_id: ConceptId, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("ragged embedding rows".into()));
        }
        let ids = (0..rows.len())
            .map(|sample_index| SourceId { concept_id, sample_index })
            .collect();
        Self::new(dim.max(1), rows.concat(), ids)
    }

    pub fn f32_rows(dim: usize, data: &[f32], source_ids: Vec<SourceId>) -> Result<Self> {
        Self::new(dim, data.iter().map(|&v| f64::from(v)).collect(), source_ids)
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn source_ids(&self) -> &[SourceId] {
        &self.source_ids
    }

    pub fn select(&self, rows: &[usize]) -> EmbeddingMatrix {
        EmbeddingMatrix {
            dim: self.dim,
            data: rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            source_ids: rows.iter().map(|&i| self.source_ids[i]).collect(),
        }
    }

    /// Splits rows by concept, preserving row order within each concept.
    pub fn by_concept(&self) -> BTreeMap<ConceptId, EmbeddingMatrix> {
        let mut groups: BTreeMap<ConceptId, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.source_ids.iter().enumerate() {
            groups.entry(s.concept_id).or_default().push(i);
        }
        groups.into_iter().map(|(c, rows)| (c, self.select(&rows))).collect()
    }
}

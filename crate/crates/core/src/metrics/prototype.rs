use serde::{Deserialize, Serialize};

use crate::data::ConceptId;
use crate::error::{Error, Result};
use crate::metrics::EmbeddingMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub concept_id: ConceptId,
    pub sample_index: usize,
    /// Row of the input matrix holding the prototype.
    pub row: usize,
    pub embedding: Vec<f64>,
}

/// The sample whose embedding is closest (ℓ2) to the concept's centroid.
/// Exact ties go to the lowest sample index.
pub fn select_prototype(embeddings: &EmbeddingMatrix) -> Result<Prototype> {
    if embeddings.is_empty() {
        return Err(Error::InvalidArgument("prototype of an empty concept".into()));
    }
    let n = embeddings.len() as f64;
    let mut mean = vec![0.0; embeddings.dim()];
    for row in embeddings.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let ids = embeddings.source_ids();
    let mut best: Option<(f64, usize)> = None;
    for (i, row) in embeddings.rows().enumerate() {
        let d: f64 = row.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum();
        let better = match best {
            None => true,
            Some((bd, bi)) => d < bd || (d == bd && ids[i].sample_index < ids[bi].sample_index),
        };
        if better {
            best = Some((d, i));
        }
    }
    let (_, row) = best.expect("non-empty");
    Ok(Prototype {
        concept_id: ids[row].concept_id,
        sample_index: ids[row].sample_index,
        row,
        embedding: embeddings.row(row).to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(ConceptId(3), rows).unwrap()
    }

    #[test]
    fn singleton() {
        let p = select_prototype(&m(&[vec![4.0, 2.0]])).unwrap();
        assert_eq!((p.sample_index, p.concept_id), (0, ConceptId(3)));
    }

    #[test]
    fn closest_to_centroid() {
        let p = select_prototype(&m(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![10.0, 0.0]])).unwrap();
        assert_eq!(p.sample_index, 1);
        assert_eq!(p.embedding, vec![1.0, 0.0]);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let p = select_prototype(&m(&[vec![-1.0], vec![1.0]])).unwrap();
        assert_eq!(p.sample_index, 0);
        let reversed = m(&[vec![1.0], vec![-1.0]]).select(&[1, 0]);
        assert_eq!(select_prototype(&reversed).unwrap().sample_index, 0);
    }

    #[test]
    fn empty_is_an_error() {
        let e = EmbeddingMatrix::new(2, vec![], vec![]).unwrap();
        assert!(select_prototype(&e).is_err());
    }
}

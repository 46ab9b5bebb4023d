use rand::seq::SliceRandom;

use crate::data::{ConceptDataset, ConceptId, ConceptImage, SAMPLES_PER_CONCEPT};
use crate::error::{Error, Result};
use crate::seed;

/// A set of same-concept drawings summarized by a context latent.
#[derive(Clone, Debug)]
pub struct ContextBatch {
    pub concept_id: ConceptId,
    pub images: Vec<ConceptImage>,
}

impl ContextBatch {
    pub fn context_size(&self) -> usize {
        self.images.len()
    }
}

/// Lazily materialized context batches; see [`make_context_batches`].
pub struct ContextBatches<'a> {
    dataset: &'a ConceptDataset,
    plan: std::vec::IntoIter<(ConceptId, Vec<usize>)>,
}

impl ContextBatches<'_> {
    pub fn remaining(&self) -> usize {
        self.plan.len()
    }
}

impl Iterator for ContextBatches<'_> {
    type Item = ContextBatch;

    fn next(&mut self) -> Option<ContextBatch> {
        let (id, idx) = self.plan.next()?;
        let concept = self.dataset.concept(id).expect("planned from dataset");
        Some(ContextBatch {
            concept_id: id,
            images: idx.into_iter().map(|i| concept.image(i)).collect(),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.plan.len(), Some(self.plan.len()))
    }
}

impl ExactSizeIterator for ContextBatches<'_> {}

/// Partitions every concept's samples into `⌊n / context_size⌋` disjoint
/// batches after a seeded shuffle, dropping the remainder, and yields all
/// batches in a seeded random order.
pub fn make_context_batches(
    dataset: &ConceptDataset,
    context_size: usize,
    seed: u64,
) -> Result<ContextBatches<'_>> {
    if !(1..=SAMPLES_PER_CONCEPT).contains(&context_size) {
        return Err(Error::InvalidArgument(format!(
            "context size {context_size} outside [1, {SAMPLES_PER_CONCEPT}]"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut plan = Vec::new();
    for concept in dataset.concepts() {
        let mut idx: Vec<usize> = (0..concept.len()).collect();
        idx.shuffle(&mut rng);
        for chunk in idx.chunks_exact(context_size) {
            plan.push((concept.id, chunk.to_vec()));
        }
    }
    plan.shuffle(&mut rng);
    Ok(ContextBatches {
        dataset,
        plan: plan.into_iter(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{synthetic_dataset, SyntheticSpec};
    use std::collections::BTreeMap;

    fn ds() -> ConceptDataset {
        synthetic_dataset(&SyntheticSpec {
            alphabets: vec![3],
            samples_per_concept: 20,
            seed: 5,
        })
    }

    fn per_concept(batches: ContextBatches<'_>) -> BTreeMap<ConceptId, Vec<ContextBatch>> {
        let mut m: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for b in batches {
            assert!(b.images.iter().all(|i| i.concept_id == b.concept_id));
            m.entry(b.concept_id).or_default().push(b);
        }
        m
    }

    #[test]
    fn batch_counts() {
        let ds = ds();
        for (size, expected) in [(5, 4), (20, 1), (7, 2), (1, 20)] {
            let m = per_concept(make_context_batches(&ds, size, 0).unwrap());
            for batches in m.values() {
                assert_eq!(batches.len(), expected, "context size {size}");
                assert!(batches.iter().all(|b| b.context_size() == size));
                let mut used: Vec<u8> = batches.iter().flat_map(|b| b.images.iter().map(|i| i.sample_index)).collect();
                used.sort_unstable();
                used.dedup();
                assert_eq!(used.len(), size * expected, "batches overlap");
            }
        }
    }

    #[test]
    fn out_of_range_sizes() {
        let ds = ds();
        assert!(make_context_batches(&ds, 0, 0).is_err());
        assert!(make_context_batches(&ds, 21, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = ds();
        let a: Vec<_> = make_context_batches(&ds, 5, 8)
            .unwrap()
            .map(|b| (b.concept_id, b.images.iter().map(|i| i.sample_index).collect::<Vec<_>>()))
            .collect();
        let b: Vec<_> = make_context_batches(&ds, 5, 8)
            .unwrap()
            .map(|b| (b.concept_id, b.images.iter().map(|i| i.sample_index).collect::<Vec<_>>()))
            .collect();
        assert_eq!(a, b);
    }
}

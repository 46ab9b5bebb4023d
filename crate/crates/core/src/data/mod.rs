//! Concept datasets: loading, splitting, sampling.

mod cache;
mod context;
mod episode;
mod omniglot;
mod split;
pub mod synthetic;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bitmap::{Bitmap, Dihedral};
use crate::error::{Error, Result};

pub use cache::{read_cache, read_manifest, write_cache, CacheManifest, ConceptRecord, ARRAY_FILE, MANIFEST_FILE};
pub use context::{make_context_batches, ContextBatch, ContextBatches};
pub use episode::{sample_episode, Episode, LabeledImage};
pub use omniglot::{load_omniglot, load_omniglot_with, AlphabetSpec, OmniglotLayout};
pub use split::make_weak_split;

/// Number of drawings per Omniglot character.
pub const SAMPLES_PER_CONCEPT: usize = 20;

/// Augmented concepts get `code << AUGMENT_SHIFT` added to the source id.
const AUGMENT_SHIFT: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub u32);

impl std::fmt::Display for ConceptId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphabetId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Never split; the full loaded set.
    All,
    Train,
    Test,
}

/// One drawing of one concept.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptImage {
    pub pixels: Bitmap,
    pub concept_id: ConceptId,
    pub alphabet_id: AlphabetId,
    pub sample_index: u8,
}

/// A class of drawings. Augmented concepts share pixel storage with their
/// source and apply their transform on access.
#[derive(Clone, Debug)]
pub struct Concept {
    pub id: ConceptId,
    pub alphabet_id: AlphabetId,
    /// Character folder name, e.g. `character07`.
    pub name: String,
    pub source: ConceptId,
    pub transform: Dihedral,
    samples: Arc<[Bitmap]>,
}

impl Concept {
    pub fn new(id: ConceptId, alphabet_id: AlphabetId, name: impl Into<String>, samples: Vec<Bitmap>) -> Self {
        Concept {
            id,
            alphabet_id,
            name: name.into(),
            source: id,
            transform: Dihedral::IDENTITY,
            samples: samples.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, index: usize) -> Bitmap {
        self.samples[index].transformed(self.transform)
    }

    pub fn samples(&self) -> impl Iterator<Item = Bitmap> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    pub fn image(&self, index: usize) -> ConceptImage {
        ConceptImage {
            pixels: self.sample(index),
            concept_id: self.id,
            alphabet_id: self.alphabet_id,
            sample_index: index as u8,
        }
    }

    fn augmented(&self, transform: Dihedral) -> Concept {
        Concept {
            id: ConceptId(self.source.0 + (u32::from(transform.code()) << AUGMENT_SHIFT)),
            alphabet_id: self.alphabet_id,
            name: format!("{}#{}", self.name, transform.label()),
            source: self.source,
            transform,
            samples: Arc::clone(&self.samples),
        }
    }
}

/// Images grouped into concepts, with alphabet membership and a split tag.
#[derive(Clone, Debug)]
pub struct ConceptDataset {
    pub split: Split,
    concepts: BTreeMap<ConceptId, Concept>,
    alphabet_names: BTreeMap<AlphabetId, String>,
}

impl ConceptDataset {
    pub fn new(split: Split, concepts: Vec<Concept>, alphabet_names: BTreeMap<AlphabetId, String>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for c in concepts {
            if !alphabet_names.contains_key(&c.alphabet_id) {
                return Err(Error::InvalidArgument(format!(
                    "concept {} refers to unknown alphabet {}",
                    c.id, c.alphabet_id.0
                )));
            }
            if map.insert(c.id, c).is_some() {
                return Err(Error::InvalidArgument("duplicate concept id".into()));
            }
        }
        Ok(ConceptDataset {
            split,
            concepts: map,
            alphabet_names,
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concept(&self, id: ConceptId) -> Option<&Concept> {
        self.concepts.get(&id)
    }

    /// Concepts in ascending id order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn concept_ids(&self) -> Vec<ConceptId> {
        self.concepts.keys().copied().collect()
    }

    pub fn alphabet_names(&self) -> &BTreeMap<AlphabetId, String> {
        &self.alphabet_names
    }

    /// Concept ids of each alphabet, ascending.
    pub fn alphabets(&self) -> BTreeMap<AlphabetId, Vec<ConceptId>> {
        let mut out: BTreeMap<AlphabetId, Vec<ConceptId>> =
            self.alphabet_names.keys().map(|&a| (a, Vec::new())).collect();
        for c in self.concepts.values() {
            out.entry(c.alphabet_id).or_default().push(c.id);
        }
        out
    }

    pub fn num_images(&self) -> usize {
        self.concepts.values().map(Concept::len).sum()
    }

    /// Keep only the listed concepts.
    pub fn subset(&self, ids: &[ConceptId], split: Split) -> Result<ConceptDataset> {
        let mut concepts = Vec::with_capacity(ids.len());
        for id in ids {
            let c = self
                .concepts
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown concept {id}")))?;
            concepts.push(c.clone());
        }
        ConceptDataset::new(split, concepts, self.alphabet_names.clone())
    }

    /// Adds one new concept per (concept, transform) pair; the identity
    /// transform maps onto the original concept and is never duplicated.
    /// Sample counts are preserved.
    pub fn augment_classes_rotations_reflections(&self, transforms: &[Dihedral]) -> ConceptDataset {
        let mut concepts: Vec<Concept> = self.concepts.values().cloned().collect();
        let mut seen = std::collections::BTreeSet::new();
        for &t in transforms {
            if t == Dihedral::IDENTITY || !seen.insert(t) {
                continue;
            }
            for c in self.concepts.values().filter(|c| c.transform == Dihedral::IDENTITY) {
                concepts.push(c.augmented(t));
            }
        }
        ConceptDataset::new(self.split, concepts, self.alphabet_names.clone())
            .expect("augmented ids are unique by construction")
    }

    /// SHA-256 over concept ids, transforms and pixel bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in self.concepts.values() {
            h.update(c.id.0.to_le_bytes());
            h.update(c.alphabet_id.0.to_le_bytes());
            h.update([c.transform.code()]);
            for s in c.samples() {
                for v in s.as_slice() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_concepts: u32) -> ConceptDataset {
        let mut names = BTreeMap::new();
        names.insert(AlphabetId(0), "A".to_string());
        let concepts = (0..n_concepts)
            .map(|i| {
                let samples = (0..SAMPLES_PER_CONCEPT)
                    .map(|s| {
                        let mut v = vec![0.0; crate::bitmap::PIXELS];
                        v[(i as usize * 7 + s * 3) % crate::bitmap::PIXELS] = 1.0;
                        v[s] = 0.5;
                        Bitmap::from_vec(v).unwrap()
                    })
                    .collect();
                Concept::new(ConceptId(i), AlphabetId(0), format!("character{i:02}"), samples)
            })
            .collect();
        ConceptDataset::new(Split::Train, concepts, names).unwrap()
    }

    #[test]
    fn rotation_augmentation_multiplies_concepts() {
        let ds = toy(5);
        let aug = ds.augment_classes_rotations_reflections(&Dihedral::ROTATIONS);
        assert_eq!(aug.len(), 4 * ds.len());
        let mut per_tag = BTreeMap::new();
        for c in aug.concepts() {
            *per_tag.entry(c.transform.label()).or_insert(0) += 1;
            assert_eq!(c.len(), SAMPLES_PER_CONCEPT);
        }
        assert_eq!(per_tag.len(), 4);
        assert!(per_tag.values().all(|&n| n == 5));
    }

    #[test]
    fn full_group_gives_eight_fold() {
        let ds = toy(3);
        let aug = ds.augment_classes_rotations_reflections(&Dihedral::ALL);
        assert_eq!(aug.len(), 24);
    }

    #[test]
    fn identity_subset_is_bit_equal() {
        let ds = toy(4);
        let aug = ds.augment_classes_rotations_reflections(&[Dihedral::IDENTITY]);
        assert_eq!(aug.len(), ds.len());
        for (a, b) in ds.concepts().zip(aug.concepts()) {
            assert_eq!(a.id, b.id);
            for i in 0..a.len() {
                assert_eq!(a.sample(i), b.sample(i));
            }
        }
    }

    #[test]
    fn augmented_samples_are_transformed_sources() {
        let ds = toy(2);
        let t = Dihedral { quarter_turns: 2, reflect: true };
        let aug = ds.augment_classes_rotations_reflections(&[t]);
        let derived = aug.concepts().find(|c| c.transform == t).unwrap();
        let src = ds.concept(derived.source).unwrap();
        assert_eq!(derived.sample(3), src.sample(3).transformed(t));
    }

    #[test]
    fn content_hash_is_stable_and_sensitive() {
        let a = toy(3);
        assert_eq!(a.content_hash(), toy(3).content_hash());
        assert_ne!(a.content_hash(), toy(4).content_hash());
    }
}

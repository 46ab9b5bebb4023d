use rand::seq::{IndexedRandom, SliceRandom};

use crate::bitmap::Bitmap;
use crate::data::{ConceptDataset, ConceptId};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Bitmap,
    /// Class slot within the episode, `0..ways`.
    pub label: usize,
    pub concept_id: ConceptId,
    pub sample_index: usize,
}

/// A k-way n-shot task. Support images are ordered by label, `shots` per label.
#[derive(Clone, Debug)]
pub struct Episode {
    pub support: Vec<LabeledImage>,
    pub query: Vec<LabeledImage>,
    pub ways: usize,
    pub shots: usize,
}

impl Episode {
    pub fn concept_of(&self, label: usize) -> ConceptId {
        self.support[label * self.shots].concept_id
    }
}

pub fn sample_episode(
    dataset: &ConceptDataset,
    ways: usize,
    shots: usize,
    queries: usize,
    seed: u64,
) -> Result<Episode> {
    if ways == 0 || shots == 0 {
        return Err(Error::Sampling("ways and shots must be positive".into()));
    }
    if dataset.len() < ways {
        return Err(Error::Sampling(format!(
            "{ways}-way episode needs {ways} concepts, dataset has {}",
            dataset.len()
        )));
    }
    let needed = shots + queries;
    let eligible: Vec<ConceptId> = dataset
        .concepts()
        .filter(|c| c.len() >= needed)
        .map(|c| c.id)
        .collect();
    if eligible.len() < ways {
        return Err(Error::Sampling(format!(
            "only {} concepts have at least {needed} samples, need {ways}",
            eligible.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let chosen: Vec<ConceptId> = eligible.choose_multiple(&mut rng, ways).copied().collect();
    let mut support = Vec::with_capacity(ways * shots);
    let mut query = Vec::with_capacity(ways * queries);
    for (label, id) in chosen.iter().enumerate() {
        let concept = dataset.concept(*id).expect("chosen from dataset");
        let mut idx: Vec<usize> = (0..concept.len()).collect();
        idx.shuffle(&mut rng);
        let make = |i: usize| LabeledImage {
            image: concept.sample(i),
            label,
            concept_id: *id,
            sample_index: i,
        };
        support.extend(idx[..shots].iter().map(|&i| make(i)));
        query.extend(idx[shots..needed].iter().map(|&i| make(i)));
    }
    Ok(Episode {
        support,
        query,
        ways,
        shots,
    })
}

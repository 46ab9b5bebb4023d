use std::collections::BTreeSet;

use rand::seq::IndexedRandom;

use crate::bitmap::Dihedral;
use crate::data::{ConceptDataset, ConceptId, Split};
use crate::error::{Error, Result};
use crate::seed;

/// Weak-generalization split: `holdout_per_alphabet` characters of every
/// alphabet go to the test set, drawn uniformly under `seed`; the rest
/// (from all alphabets) form the training set.
///
/// Augmented concepts follow their source concept.
pub fn make_weak_split(
    dataset: &ConceptDataset,
    holdout_per_alphabet: usize,
    seed: u64,
) -> Result<(ConceptDataset, ConceptDataset)> {
    let mut rng = seed::rng(seed);
    let mut held_out = BTreeSet::new();
    for (alphabet, ids) in dataset.alphabets() {
        let originals: Vec<ConceptId> = ids
            .into_iter()
            .filter(|id| dataset.concept(*id).is_some_and(|c| c.transform == Dihedral::IDENTITY))
            .collect();
        if holdout_per_alphabet == 0 {
            continue;
        }
        if originals.len() <= holdout_per_alphabet {
            let name = dataset.alphabet_names().get(&alphabet).cloned().unwrap_or_default();
            return Err(Error::Split(format!(
                "alphabet {name} has {} concepts, needs more than {holdout_per_alphabet}",
                originals.len()
            )));
        }
        held_out.extend(originals.choose_multiple(&mut rng, holdout_per_alphabet).copied());
    }
    let (test, train): (Vec<_>, Vec<_>) = dataset
        .concepts()
        .map(|c| (c.id, c.source))
        .partition(|(_, source)| held_out.contains(source));
    let ids = |v: Vec<(ConceptId, ConceptId)>| v.into_iter().map(|(id, _)| id).collect::<Vec<_>>();
    Ok((
        dataset.subset(&ids(train), Split::Train)?,
        dataset.subset(&ids(test), Split::Test)?,
    ))
}

use std::collections::BTreeMap;

use oneshot_core::data::ConceptId;
use oneshot_core::{seed, Bitmap};
use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::OneShotClassifier;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizabilityConfig {
    pub ways: usize,
    /// Independent distractor draws averaged per concept.
    pub draws: usize,
}

impl Default for RecognizabilityConfig {
    fn default() -> Self {
        RecognizabilityConfig { ways: 20, draws: 10 }
    }
}

/// Builds one-shot supports from concept prototypes: the evaluated concept
/// plus `ways − 1` distinct distractors drawn uniformly, in random slots.
pub struct SupportBuilder<'a> {
    prototypes: &'a BTreeMap<ConceptId, Bitmap>,
    ways: usize,
}

impl<'a> SupportBuilder<'a> {
    pub fn new(prototypes: &'a BTreeMap<ConceptId, Bitmap>, ways: usize) -> Result<Self> {
        if ways < 2 {
            return Err(Error::Config("recognizability needs at least 2 ways".into()));
        }
        if prototypes.len() < ways {
            return Err(Error::Config(format!(
                "{ways}-way supports need {ways} prototypes, have {}",
                prototypes.len()
            )));
        }
        Ok(SupportBuilder { prototypes, ways })
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    /// Concept per support slot and the slot holding `target`.
    pub fn draw(&self, target: ConceptId, rng: &mut ChaCha8Rng) -> Result<(Vec<ConceptId>, usize)> {
        if !self.prototypes.contains_key(&target) {
            return Err(Error::Episode(format!("concept {} has no prototype in the support pool", target.0)));
        }
        let others: Vec<ConceptId> = self.prototypes.keys().copied().filter(|&c| c != target).collect();
        let mut slots: Vec<ConceptId> = others.choose_multiple(rng, self.ways - 1).copied().collect();
        slots.push(target);
        slots.shuffle(rng);
        let slot = slots.iter().position(|&c| c == target).expect("target inserted");
        Ok((slots, slot))
    }

    pub fn image(&self, concept: ConceptId) -> &Bitmap {
        &self.prototypes[&concept]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecognizability {
    pub concept_id: ConceptId,
    pub accuracy: f64,
    pub n_queries: usize,
    pub n_draws: usize,
}

/// Fraction of `samples` assigned to `target`, averaged over `draws`
/// random distractor sets.
pub fn recognizability(
    classifier: &dyn OneShotClassifier,
    target: ConceptId,
    samples: &[Bitmap],
    builder: &SupportBuilder,
    draws: usize,
    seed: u64,
) -> Result<ConceptRecognizability> {
    if samples.is_empty() {
        return Err(Error::Episode(format!("concept {} has no samples to classify", target.0)));
    }
    if draws == 0 {
        return Err(Error::Config("recognizability needs at least one draw".into()));
    }
    let mut rng = seed::rng(seed::derive_indexed(seed, "recognizability", u64::from(target.0)));
    let queries: Vec<&Bitmap> = samples.iter().collect();
    let mut total = 0.0;
    for _ in 0..draws {
        let (slots, slot) = builder.draw(target, &mut rng)?;
        let support: Vec<&Bitmap> = slots.iter().map(|&c| builder.image(c)).collect();
        let labels = vec![slot; queries.len()];
        let out = classifier.classify_support(&support, &queries, &labels)?;
        total += out.iter().filter(|o| o.correct).count() as f64 / out.len() as f64;
    }
    Ok(ConceptRecognizability {
        concept_id: target,
        accuracy: total / draws as f64,
        n_queries: samples.len(),
        n_draws: draws,
    })
}

/// Recognizability of every concept in `samples`.
pub fn recognizability_table(
    classifier: &dyn OneShotClassifier,
    samples: &BTreeMap<ConceptId, Vec<Bitmap>>,
    builder: &SupportBuilder,
    draws: usize,
    seed: u64,
) -> Result<Vec<ConceptRecognizability>> {
    samples
        .iter()
        .map(|(&c, s)| recognizability(classifier, c, s, builder, draws, seed))
        .collect()
}

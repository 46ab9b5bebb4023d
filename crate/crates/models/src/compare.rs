use std::collections::BTreeMap;

use oneshot_core::data::{sample_episode, ConceptDataset, ConceptId};
use oneshot_core::metrics::{correlate, Correlation, Method};
use oneshot_core::seed;
use serde::{Deserialize, Serialize};

use crate::classify::{ClassifierOutput, OneShotClassifier};
use crate::error::{Error, Result};

/// Outputs of one classifier on one episode, with the concept behind each
/// support slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub concepts: Vec<ConceptId>,
    pub outputs: Vec<ClassifierOutput>,
}

/// Runs `classifier` on a seeded series of one-shot episodes. The same
/// arguments produce the same episodes for any classifier.
pub fn evaluate_episodes(
    classifier: &dyn OneShotClassifier,
    dataset: &ConceptDataset,
    ways: usize,
    queries: usize,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeRecord>> {
    (0..episodes)
        .map(|e| {
            let ep = sample_episode(dataset, ways, 1, queries, seed::derive_indexed(seed, "compare-episode", e as u64))?;
            let outputs = classifier.classify(&ep)?;
            let concepts = (0..ways).map(|l| ep.concept_of(l)).collect();
            Ok(EpisodeRecord { concepts, outputs })
        })
        .collect()
}

/// Accuracy per concept, pooled over every query whose true class it is.
pub fn per_class_accuracy(records: &[EpisodeRecord]) -> BTreeMap<ConceptId, f64> {
    let mut tally: BTreeMap<ConceptId, (usize, usize)> = BTreeMap::new();
    for r in records {
        for o in &r.outputs {
            let e = tally.entry(r.concepts[o.label]).or_default();
            e.0 += usize::from(o.correct);
            e.1 += 1;
        }
    }
    tally.into_iter().map(|(c, (k, n))| (c, k as f64 / n as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierAgreement {
    pub spearman_accuracy: Correlation,
    pub pearson_logits: Correlation,
}

/// Spearman correlation of per-class accuracies and Pearson correlation of
/// paired logits between two classifiers run on the same episode series.
pub fn compare_classifiers(a: &[EpisodeRecord], b: &[EpisodeRecord]) -> Result<ClassifierAgreement> {
    if a.len() != b.len() {
        return Err(Error::Episode(format!("episode series lengths differ: {} vs {}", a.len(), b.len())));
    }
    let mut la = Vec::new();
    let mut lb = Vec::new();
    for (i, (ra, rb)) in a.iter().zip(b).enumerate() {
        if ra.concepts != rb.concepts || ra.outputs.len() != rb.outputs.len() {
            return Err(Error::Episode(format!("episode {i} differs between the two series")));
        }
        for (oa, ob) in ra.outputs.iter().zip(&rb.outputs) {
            if oa.label != ob.label || oa.logits.len() != ob.logits.len() {
                return Err(Error::Episode(format!("episode {i} queries differ between the two series")));
            }
            la.extend(oa.logits.iter().map(|&v| f64::from(v)));
            lb.extend(ob.logits.iter().map(|&v| f64::from(v)));
        }
    }
    let (pa, pb) = (per_class_accuracy(a), per_class_accuracy(b));
    let xa: Vec<f64> = pa.values().copied().collect();
    let xb: Vec<f64> = pb.values().copied().collect();
    Ok(ClassifierAgreement {
        spearman_accuracy: correlate(&xa, &xb, Method::Spearman)?,
        pearson_logits: correlate(&la, &lb, Method::Pearson)?,
    })
}

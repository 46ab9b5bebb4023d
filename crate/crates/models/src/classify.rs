use oneshot_core::data::{sample_episode, ConceptDataset, Episode};
use oneshot_core::Bitmap;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::embed::{embed_bitmaps, Tap};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOutput {
    /// One score per support slot; larger means more likely.
    pub logits: Vec<f32>,
    pub predicted_label: usize,
    pub label: usize,
    pub correct: bool,
}

impl ClassifierOutput {
    /// Argmax with ties resolved toward the lowest slot.
    pub fn from_logits(logits: Vec<f32>, label: usize) -> Self {
        let predicted_label = logits
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        ClassifierOutput {
            correct: predicted_label == label,
            logits,
            predicted_label,
            label,
        }
    }
}

/// A classifier that assigns queries to one of the supplied one-shot
/// support images, slot `k` being class `k`.
pub trait OneShotClassifier {
    fn name(&self) -> &str;

    fn classify_support(&self, support: &[&Bitmap], queries: &[&Bitmap], labels: &[usize]) -> Result<Vec<ClassifierOutput>>;

    fn classify(&self, episode: &Episode) -> Result<Vec<ClassifierOutput>> {
        if episode.shots != 1 {
            return Err(Error::Episode(format!(
                "one-shot classifier got a {}-shot episode",
                episode.shots
            )));
        }
        let mut support: Vec<_> = episode.support.iter().collect();
        support.sort_by_key(|s| s.label);
        let support: Vec<&Bitmap> = support.iter().map(|s| &s.image).collect();
        let queries: Vec<&Bitmap> = episode.query.iter().map(|q| &q.image).collect();
        let labels: Vec<usize> = episode.query.iter().map(|q| q.label).collect();
        self.classify_support(&support, &queries, &labels)
    }
}

/// Nearest support embedding in the metric space; logits are negated
/// squared distances.
pub struct ProtoNetClassifier<'a> {
    backbone: &'a Backbone,
    name: String,
}

impl<'a> ProtoNetClassifier<'a> {
    pub fn new(backbone: &'a Backbone) -> Self {
        ProtoNetClassifier {
            backbone,
            name: "protonet".into(),
        }
    }

    pub fn named(backbone: &'a Backbone, name: impl Into<String>) -> Self {
        ProtoNetClassifier {
            backbone,
            name: name.into(),
        }
    }
}

impl OneShotClassifier for ProtoNetClassifier<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn classify_support(&self, support: &[&Bitmap], queries: &[&Bitmap], labels: &[usize]) -> Result<Vec<ClassifierOutput>> {
        check_sizes(support, queries, labels)?;
        let width = self.backbone.spec().out_dim as usize;
        let images: Vec<&Bitmap> = support.iter().chain(queries).copied().collect();
        let all = embed_bitmaps(self.backbone, &images, Tap::Final)?;
        let (s, q) = all.split_at(support.len() * width);
        Ok(q.chunks_exact(width)
            .zip(labels)
            .map(|(qv, &label)| ClassifierOutput::from_logits(metric_logits(qv, s, width), label))
            .collect())
    }
}

/// Negated squared Euclidean distances from `query` to each support row.
pub fn metric_logits(query: &[f32], support: &[f32], width: usize) -> Vec<f32> {
    support
        .chunks_exact(width)
        .map(|sv| {
            let d: f64 = sv
                .iter()
                .zip(query)
                .map(|(a, b)| {
                    let d = f64::from(*a) - f64::from(*b);
                    d * d
                })
                .sum();
            -d as f32
        })
        .collect()
}

pub(crate) fn check_sizes(support: &[&Bitmap], queries: &[&Bitmap], labels: &[usize]) -> Result<()> {
    if support.is_empty() {
        return Err(Error::Episode("empty support set".into()));
    }
    if queries.len() != labels.len() {
        return Err(Error::Episode(format!("{} queries but {} labels", queries.len(), labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= support.len()) {
        return Err(Error::Episode(format!("label {l} outside {} support slots", support.len())));
    }
    Ok(())
}

pub fn protonet_classify(backbone: &Backbone, episode: &Episode) -> Result<Vec<ClassifierOutput>> {
    ProtoNetClassifier::new(backbone).classify(episode)
}

/// Mean query accuracy over `episodes` random `ways`-way one-shot episodes.
pub fn episode_accuracy(
    classifier: &dyn OneShotClassifier,
    dataset: &ConceptDataset,
    ways: usize,
    queries: usize,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for e in 0..episodes {
        let ep = sample_episode(dataset, ways, 1, queries, oneshot_core::seed::derive_indexed(seed, "eval-episode", e as u64))?;
        let out = classifier.classify(&ep)?;
        correct += out.iter().filter(|o| o.correct).count();
        total += out.len();
    }
    if total == 0 {
        return Err(Error::Episode("no queries evaluated".into()));
    }
    Ok(correct as f64 / total as f64)
}

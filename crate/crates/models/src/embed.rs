use std::fs;
use std::path::{Path, PathBuf};

use oneshot_core::data::ConceptImage;
use oneshot_core::metrics::{EmbeddingMatrix, SourceId};
use oneshot_core::Bitmap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::tensor::{bitmaps_to_tensor, to_f32_vec};

/// Images are pushed through the network in zero-padded chunks of this size,
/// which keeps every row independent of how callers batch their requests.
pub const EMBED_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    /// 256-wide output of the first fully connected layer.
    #[default]
    Penultimate,
    /// 128-wide metric-space output.
    Final,
}

impl Tap {
    pub fn as_str(self) -> &'static str {
        match self {
            Tap::Penultimate => "penultimate",
            Tap::Final => "final",
        }
    }
}

/// Row-major embeddings of `images` in evaluation mode.
pub fn embed_bitmaps(backbone: &Backbone, images: &[&Bitmap], tap: Tap) -> Result<Vec<f32>> {
    let _guard = tch::no_grad_guard();
    let pad = Bitmap::zeros();
    let mut rows = Vec::new();
    for chunk in images.chunks(EMBED_CHUNK) {
        let padded = chunk.iter().copied().chain(std::iter::repeat_n(&pad, EMBED_CHUNK - chunk.len()));
        let x = bitmaps_to_tensor(padded, backbone.device());
        let o = backbone.forward_checked(&x)?;
        let t = match tap {
            Tap::Penultimate => o.tap,
            Tap::Final => o.out,
        };
        let width = t.size()[1] as usize;
        let flat = to_f32_vec(&t)?;
        rows.extend_from_slice(&flat[..chunk.len() * width]);
    }
    Ok(rows)
}

pub fn tap_width(backbone: &Backbone, tap: Tap) -> usize {
    match tap {
        Tap::Penultimate => backbone.spec().tap_dim as usize,
        Tap::Final => backbone.spec().out_dim as usize,
    }
}

/// Embeds bitmaps attributed to `source_ids`.
pub fn embed_with_ids(backbone: &Backbone, images: &[Bitmap], source_ids: Vec<SourceId>, tap: Tap) -> Result<EmbeddingMatrix> {
    if images.len() != source_ids.len() {
        return Err(Error::Config(format!(
            "{} images but {} source ids",
            images.len(),
            source_ids.len()
        )));
    }
    let refs: Vec<&Bitmap> = images.iter().collect();
    let rows = embed_bitmaps(backbone, &refs, tap)?;
    Ok(EmbeddingMatrix::f32_rows(tap_width(backbone, tap), &rows, source_ids)?)
}

pub fn embed(backbone: &Backbone, images: &[ConceptImage], tap: Tap) -> Result<EmbeddingMatrix> {
    let refs: Vec<&Bitmap> = images.iter().map(|i| &i.pixels).collect();
    let ids = images
        .iter()
        .map(|i| SourceId {
            concept_id: i.concept_id,
            sample_index: usize::from(i.sample_index),
        })
        .collect();
    let rows = embed_bitmaps(backbone, &refs, tap)?;
    Ok(EmbeddingMatrix::f32_rows(tap_width(backbone, tap), &rows, ids)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingCacheKey {
    pub checkpoint_hash: String,
    pub dataset_hash: String,
    pub tap: Tap,
}

impl EmbeddingCacheKey {
    fn stem(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.checkpoint_hash.as_bytes());
        h.update([0]);
        h.update(self.dataset_hash.as_bytes());
        h.update([0]);
        h.update(self.tap.as_str().as_bytes());
        hex::encode(&h.finalize()[..12])
    }
}

#[derive(Serialize, Deserialize)]
struct CacheSidecar {
    key: EmbeddingCacheKey,
    dim: usize,
    source_ids: Vec<SourceId>,
}

/// Directory of float32 embedding matrices keyed by checkpoint, dataset and tap.
#[derive(Clone, Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        EmbeddingCache { dir: dir.into() }
    }

    fn paths(&self, key: &EmbeddingCacheKey) -> (PathBuf, PathBuf) {
        let stem = key.stem();
        (self.dir.join(format!("{stem}.f32")), self.dir.join(format!("{stem}.json")))
    }

    pub fn get(&self, key: &EmbeddingCacheKey) -> Result<Option<EmbeddingMatrix>> {
        let (data_path, meta_path) = self.paths(key);
        if !data_path.exists() || !meta_path.exists() {
            return Ok(None);
        }
        let meta: CacheSidecar = read_json(&meta_path)?;
        if &meta.key != key {
            return Ok(None);
        }
        let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        if bytes.len() != meta.dim * meta.source_ids.len() * 4 {
            return Err(Error::checkpoint(&data_path, "embedding cache size does not match its sidecar"));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Some(EmbeddingMatrix::f32_rows(meta.dim, &values, meta.source_ids)?))
    }

    pub fn put(&self, key: &EmbeddingCacheKey, matrix: &EmbeddingMatrix) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let (data_path, meta_path) = self.paths(key);
        let bytes: Vec<u8> = matrix.as_slice().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))?;
        let meta = CacheSidecar {
            key: key.clone(),
            dim: matrix.dim(),
            source_ids: matrix.source_ids().to_vec(),
        };
        let text = serde_json::to_string(&meta).map_err(|e| Error::json(&meta_path, e))?;
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn get_or_compute(
        &self,
        key: &EmbeddingCacheKey,
        compute: impl FnOnce() -> Result<EmbeddingMatrix>,
    ) -> Result<EmbeddingMatrix> {
        if let Some(m) = self.get(key)? {
            return Ok(m);
        }
        let m = compute()?;
        self.put(key, &m)?;
        Ok(m)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

//! Preprocessed dataset cache: a row-major little-endian float32 array of
//! shape (concepts, samples, 50, 50) plus a JSON sidecar.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bitmap::{Bitmap, Dihedral, PIXELS};
use crate::data::{AlphabetId, Concept, ConceptDataset, ConceptId, Split};
use crate::error::{Error, Result};

pub const ARRAY_FILE: &str = "images.f32";
pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub id: ConceptId,
    pub alphabet_id: AlphabetId,
    pub name: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub version: u32,
    /// Array shape `[concepts, samples, 50, 50]`.
    pub shape: [usize; 4],
    pub split_seed: u64,
    pub holdout_per_alphabet: usize,
    pub alphabets: BTreeMap<AlphabetId, String>,
    /// Row order of the array.
    pub concepts: Vec<ConceptRecord>,
    pub train_hash: String,
    pub test_hash: String,
}

impl CacheManifest {
    pub fn count(&self, split: Split) -> usize {
        self.concepts.iter().filter(|c| c.split == split).count()
    }
}

/// Writes `train` then `test` concepts into `dir`. Augmented concepts are
/// rejected; augmentation is re-applied after loading.
pub fn write_cache(
    dir: &Path,
    train: &ConceptDataset,
    test: &ConceptDataset,
    split_seed: u64,
    holdout_per_alphabet: usize,
) -> Result<CacheManifest> {
    let all: Vec<(&Concept, Split)> = train
        .concepts()
        .map(|c| (c, Split::Train))
        .chain(test.concepts().map(|c| (c, Split::Test)))
        .collect();
    let samples = all.first().map_or(0, |(c, _)| c.len());
    if let Some((c, _)) = all.iter().find(|(c, _)| c.transform != Dihedral::IDENTITY) {
        return Err(Error::InvalidArgument(format!("augmented concept {} cannot be cached", c.id)));
    }
    if all.iter().any(|(c, _)| c.len() != samples) {
        return Err(Error::InvalidArgument("cache needs a uniform sample count".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let array_path = dir.join(ARRAY_FILE);
    let file = std::fs::File::create(&array_path).map_err(|e| Error::io(&array_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (c, _) in &all {
        for s in c.samples() {
            for v in s.as_slice() {
                w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&array_path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&array_path, e))?;

    let mut alphabets = train.alphabet_names().clone();
    alphabets.extend(test.alphabet_names().clone());
    let manifest = CacheManifest {
        version: FORMAT_VERSION,
        shape: [all.len(), samples, crate::bitmap::SIDE, crate::bitmap::SIDE],
        split_seed,
        holdout_per_alphabet,
        alphabets,
        concepts: all
            .iter()
            .map(|(c, split)| ConceptRecord {
                id: c.id,
                alphabet_id: c.alphabet_id,
                name: c.name.clone(),
                split: *split,
            })
            .collect(),
        train_hash: train.content_hash(),
        test_hash: test.content_hash(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CacheManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CacheManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if m.version != FORMAT_VERSION {
        return Err(Error::Load {
            path,
            reason: format!("cache format {} unsupported (expected {FORMAT_VERSION})", m.version),
        });
    }
    Ok(m)
}

/// Reads a cache, returning `(manifest, train, test)`; content hashes are
/// verified against the sidecar.
pub fn read_cache(dir: &Path) -> Result<(CacheManifest, ConceptDataset, ConceptDataset)> {
    let manifest = read_manifest(dir)?;
    let array_path: PathBuf = dir.join(ARRAY_FILE);
    let [n, samples, h, w] = manifest.shape;
    if n != manifest.concepts.len() || h * w != PIXELS {
        return Err(Error::Load {
            path: dir.join(MANIFEST_FILE),
            reason: "manifest shape is inconsistent".into(),
        });
    }
    let file = std::fs::File::open(&array_path).map_err(|e| Error::io(&array_path, e))?;
    let expected = (n * samples * PIXELS * 4) as u64;
    let actual = file.metadata().map_err(|e| Error::io(&array_path, e))?.len();
    if actual != expected {
        return Err(Error::Load {
            path: array_path,
            reason: format!("expected {expected} bytes, found {actual}"),
        });
    }
    let mut r = std::io::BufReader::new(file);
    let mut buf = vec![0u8; PIXELS * 4];
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rec in &manifest.concepts {
        let mut bitmaps = Vec::with_capacity(samples);
        for _ in 0..samples {
            r.read_exact(&mut buf).map_err(|e| Error::io(&array_path, e))?;
            let v = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            bitmaps.push(Bitmap::from_vec(v).map_err(|e| Error::Load {
                path: array_path.clone(),
                reason: e.to_string(),
            })?);
        }
        let concept = Concept::new(rec.id, rec.alphabet_id, rec.name.clone(), bitmaps);
        match rec.split {
            Split::Test => test.push(concept),
            _ => train.push(concept),
        }
    }
    let train = ConceptDataset::new(Split::Train, train, manifest.alphabets.clone())?;
    let test = ConceptDataset::new(Split::Test, test, manifest.alphabets.clone())?;
    if train.content_hash() != manifest.train_hash || test.content_hash() != manifest.test_hash {
        return Err(Error::Load {
            path: array_path,
            reason: "content hash does not match manifest".into(),
        });
    }
    Ok((manifest, train, test))
}

//! Omniglot image-folder ingestion.
//!
//! The standard release ships two trees, `images_background` (30 alphabets)
//! and `images_evaluation` (20 alphabets), each holding
//! `<alphabet>/<characterNN>/<id>_<drawer>.png` files of 105×105 black-on-white
//! drawings. Both trees are merged into a single 1623-concept dataset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::bitmap::{area_resample, Bitmap, SIDE};
use crate::data::{AlphabetId, Concept, ConceptDataset, ConceptId, Split, SAMPLES_PER_CONCEPT};
use crate::error::{Error, Result};

const SUBTREES: [&str; 2] = ["images_background", "images_evaluation"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlphabetSpec {
    pub name: String,
    pub characters: usize,
}

/// The alphabets (and their character counts) a dataset root must contain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OmniglotLayout {
    pub alphabets: Vec<AlphabetSpec>,
    pub samples_per_concept: usize,
}

const STANDARD: [(&str, usize); 50] = [
    ("Alphabet_of_the_Magi", 20),
    ("Anglo-Saxon_Futhorc", 29),
    ("Arcadian", 26),
    ("Armenian", 41),
    ("Asomtavruli_(Georgian)", 40),
    ("Balinese", 24),
    ("Bengali", 46),
    ("Blackfoot_(Canadian_Aboriginal_Syllabics)", 14),
    ("Braille", 26),
    ("Burmese_(Myanmar)", 34),
    ("Cyrillic", 33),
    ("Early_Aramaic", 22),
    ("Futurama", 26),
    ("Grantha", 43),
    ("Greek", 24),
    ("Gujarati", 48),
    ("Hebrew", 22),
    ("Inuktitut_(Canadian_Aboriginal_Syllabics)", 16),
    ("Japanese_(hiragana)", 52),
    ("Japanese_(katakana)", 47),
    ("Korean", 40),
    ("Latin", 26),
    ("Malay_(Jawi_-_Arabic)", 40),
    ("Mkhedruli_(Georgian)", 41),
    ("N_Ko", 33),
    ("Ojibwe_(Canadian_Aboriginal_Syllabics)", 14),
    ("Sanskrit", 42),
    ("Syriac_(Estrangelo)", 23),
    ("Tagalog", 17),
    ("Tifinagh", 55),
    ("Angelic", 20),
    ("Atemayar_Qelisayer", 26),
    ("Atlantean", 26),
    ("Aurek-Besh", 26),
    ("Avesta", 26),
    ("Ge_ez", 26),
    ("Glagolitic", 45),
    ("Gurmukhi", 45),
    ("Kannada", 41),
    ("Keble", 26),
    ("Malayalam", 47),
    ("Manipuri", 40),
    ("Mongolian", 30),
    ("Old_Church_Slavonic_(Cyrillic)", 45),
    ("Oriya", 46),
    ("Sylheti", 28),
    ("Syriac_(Serto)", 23),
    ("Tengwar", 25),
    ("Tibetan", 42),
    ("ULOG", 26),
];

impl OmniglotLayout {
    /// The full 50-alphabet, 1623-character release.
    pub fn standard() -> Self {
        OmniglotLayout {
            alphabets: STANDARD
                .iter()
                .map(|&(name, characters)| AlphabetSpec {
                    name: name.to_string(),
                    characters,
                })
                .collect(),
            samples_per_concept: SAMPLES_PER_CONCEPT,
        }
    }

    pub fn num_concepts(&self) -> usize {
        self.alphabets.iter().map(|a| a.characters).sum()
    }
}

/// Loads the standard Omniglot release from `root`.
pub fn load_omniglot(root: &Path) -> Result<ConceptDataset> {
    load_omniglot_with(root, &OmniglotLayout::standard())
}

/// Loads an Omniglot-style tree that must match `layout` exactly.
///
/// Alphabet folders may sit directly under `root` or inside either of the
/// two standard subtrees.
pub fn load_omniglot_with(root: &Path, layout: &OmniglotLayout) -> Result<ConceptDataset> {
    if !root.is_dir() {
        return Err(Error::Load {
            path: root.to_path_buf(),
            reason: "dataset root is not a directory".into(),
        });
    }
    // Resolve every alphabet before touching any image so a missing alphabet
    // is reported up front.
    let mut dirs = Vec::with_capacity(layout.alphabets.len());
    let mut missing = Vec::new();
    for spec in &layout.alphabets {
        match locate_alphabet(root, &spec.name) {
            Some(d) => dirs.push(d),
            None => missing.push(spec.name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingAlphabets(missing));
    }

    let mut concepts = Vec::with_capacity(layout.num_concepts());
    let mut names = BTreeMap::new();
    let mut next_id = 0u32;
    for (a, (spec, dir)) in layout.alphabets.iter().zip(&dirs).enumerate() {
        let alphabet_id = AlphabetId(a as u16);
        names.insert(alphabet_id, spec.name.clone());
        let chars = sorted_entries(dir, |p| p.is_dir())?;
        if chars.len() != spec.characters {
            return Err(Error::Load {
                path: dir.clone(),
                reason: format!("expected {} characters, found {}", spec.characters, chars.len()),
            });
        }
        for char_dir in chars {
            let files = sorted_entries(&char_dir, |p| {
                p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
            })?;
            if files.len() != layout.samples_per_concept {
                return Err(Error::Load {
                    path: char_dir.clone(),
                    reason: format!(
                        "expected {} drawings, found {}",
                        layout.samples_per_concept,
                        files.len()
                    ),
                });
            }
            let samples = files.iter().map(|f| load_drawing(f)).collect::<Result<Vec<_>>>()?;
            let name = char_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            concepts.push(Concept::new(ConceptId(next_id), alphabet_id, name, samples));
            next_id += 1;
        }
    }
    ConceptDataset::new(Split::All, concepts, names)
}

fn locate_alphabet(root: &Path, name: &str) -> Option<PathBuf> {
    std::iter::once(root.join(name))
        .chain(SUBTREES.iter().map(|s| root.join(s).join(name)))
        .find(|p| p.is_dir())
}

fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if keep(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Decodes one drawing, inverts it so ink is 1, and area-resamples to 50×50.
pub(crate) fn load_drawing(path: &Path) -> Result<Bitmap> {
    let img = image::open(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let gray = img.to_luma32f();
    let (w, h) = gray.dimensions();
    let ink: Vec<f32> = gray.into_raw().into_iter().map(|v| 1.0 - v.clamp(0.0, 1.0)).collect();
    let pixels = area_resample(&ink, w as usize, h as usize, SIDE, SIDE);
    Bitmap::from_vec_clamped(pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_layout_counts() {
        let l = OmniglotLayout::standard();
        assert_eq!(l.alphabets.len(), 50);
        assert_eq!(l.num_concepts(), 1623);
        assert_eq!(l.alphabets[..30].iter().map(|a| a.characters).sum::<usize>(), 964);
    }

    #[test]
    fn missing_alphabet_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        let layout = OmniglotLayout::standard();
        for spec in layout.alphabets.iter().filter(|a| a.name != "Tengwar") {
            std::fs::create_dir_all(tmp.path().join("images_evaluation").join(&spec.name)).unwrap();
        }
        match load_omniglot(tmp.path()) {
            Err(Error::MissingAlphabets(m)) => assert_eq!(m, vec!["Tengwar".to_string()]),
            other => panic!("expected missing-alphabet error, got {other:?}"),
        }
    }

    #[test]
    fn not_a_directory() {
        let err = load_omniglot(Path::new("/definitely/not/here")).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here"));
    }
}

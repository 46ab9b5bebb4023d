//! Fixed-size grayscale bitmaps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of every preprocessed image.
pub const SIDE: usize = 50;
pub const PIXELS: usize = SIDE * SIDE;

/// A 50×50 row-major grayscale image with values in `[0, 1]`.
///
/// Ink is 1 and background is 0.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Bitmap {
    data: Vec<f32>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ink: f32 = self.data.iter().sum();
        write!(f, "Bitmap({SIDE}x{SIDE}, ink={ink:.2})")
    }
}

impl Bitmap {
    pub fn zeros() -> Self {
        Bitmap {
            data: vec![0.0; PIXELS],
        }
    }

    pub fn filled(value: f32) -> Result<Self> {
        Self::from_vec(vec![value; PIXELS])
    }

    /// Wraps raw pixels, checking shape and range.
    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        if data.len() != PIXELS {
            return Err(Error::InvalidArgument(format!(
                "bitmap needs {PIXELS} pixels, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Bitmap { data })
    }

    /// Wraps raw pixels, clamping into `[0, 1]` and mapping NaN to 0.
    pub fn from_vec_clamped(mut data: Vec<f32>) -> Result<Self> {
        for v in data.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::from_vec(data)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * SIDE + col]
    }

    pub fn transformed(&self, transform: Dihedral) -> Bitmap {
        if transform == Dihedral::IDENTITY {
            return self.clone();
        }
        let mut out = vec![0.0; PIXELS];
        for r in 0..SIDE {
            for c in 0..SIDE {
                let (sr, sc) = transform.source_of(r, c, SIDE);
                out[r * SIDE + c] = self.data[sr * SIDE + sc];
            }
        }
        Bitmap { data: out }
    }

    /// 8-bit grayscale rendering with ink drawn dark on a white page.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| ((1.0 - v.clamp(0.0, 1.0)) * 255.0).round() as u8)
            .collect()
    }
}

/// Element of the dihedral group of the square: a rotation by
/// `quarter_turns × 90°` counter-clockwise, optionally preceded by a horizontal
/// reflection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dihedral {
    pub quarter_turns: u8,
    pub reflect: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        quarter_turns: 0,
        reflect: false,
    };

    /// Identity plus the three non-trivial rotations.
    pub const ROTATIONS: [Dihedral; 4] = [
        Dihedral { quarter_turns: 0, reflect: false },
        Dihedral { quarter_turns: 1, reflect: false },
        Dihedral { quarter_turns: 2, reflect: false },
        Dihedral { quarter_turns: 3, reflect: false },
    ];

    /// All eight rotation/reflection compositions.
    pub const ALL: [Dihedral; 8] = [
        Dihedral { quarter_turns: 0, reflect: false },
        Dihedral { quarter_turns: 1, reflect: false },
        Dihedral { quarter_turns: 2, reflect: false },
        Dihedral { quarter_turns: 3, reflect: false },
        Dihedral { quarter_turns: 0, reflect: true },
        Dihedral { quarter_turns: 1, reflect: true },
        Dihedral { quarter_turns: 2, reflect: true },
        Dihedral { quarter_turns: 3, reflect: true },
    ];

    /// Compact code in `0..8`, used to build augmented concept ids.
    pub fn code(self) -> u8 {
        (self.quarter_turns % 4) + if self.reflect { 4 } else { 0 }
    }

    pub fn from_code(code: u8) -> Option<Dihedral> {
        (code < 8).then_some(Dihedral {
            quarter_turns: code % 4,
            reflect: code >= 4,
        })
    }

    pub fn label(self) -> String {
        match (self.quarter_turns % 4, self.reflect) {
            (0, false) => "identity".to_string(),
            (q, false) => format!("rot{}", u32::from(q) * 90),
            (0, true) => "reflect".to_string(),
            (q, true) => format!("reflect+rot{}", u32::from(q) * 90),
        }
    }

    /// Source pixel that lands on `(row, col)` of the transformed image.
    fn source_of(self, row: usize, col: usize, side: usize) -> (usize, usize) {
        let last = side - 1;
        // Undo the rotation first, then the reflection.
        let (mut r, mut c) = (row, col);
        for _ in 0..(self.quarter_turns % 4) {
            // Inverse of a counter-clockwise quarter turn.
            let (nr, nc) = (c, last - r);
            r = nr;
            c = nc;
        }
        if self.reflect {
            c = last - c;
        }
        (r, c)
    }
}

/// Area-average resampling of a row-major `src_w × src_h` image.
///
/// Each output pixel is the exact mean of the source area it covers,
/// with fractional coverage at the cell borders.
pub fn area_resample(src: &[f32], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<f32> {
    assert_eq!(src.len(), src_w * src_h, "source buffer does not match its size");
    let wx = area_weights(src_w, dst_w);
    let wy = area_weights(src_h, dst_h);
    // Horizontal pass.
    let mut tmp = vec![0.0f64; src_h * dst_w];
    for y in 0..src_h {
        let row = &src[y * src_w..(y + 1) * src_w];
        for (ox, taps) in wx.iter().enumerate() {
            tmp[y * dst_w + ox] = taps.iter().map(|&(i, w)| f64::from(row[i]) * w).sum();
        }
    }
    let mut out = vec![0.0f32; dst_w * dst_h];
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..dst_w {
            let v: f64 = taps.iter().map(|&(i, w)| tmp[i * dst_w + ox] * w).sum();
            out[oy * dst_w + ox] = v as f32;
        }
    }
    out
}

/// For each output cell, the (source index, weight) pairs of an exact
/// box-filter integration; weights of a cell sum to one.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Bitmap {
        Bitmap::from_vec((0..PIXELS).map(|i| i as f32 / PIXELS as f32).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes_and_ranges() {
        assert!(Bitmap::from_vec(vec![0.0; 10]).is_err());
        let mut v = vec![0.0; PIXELS];
        v[3] = 1.5;
        assert!(Bitmap::from_vec(v).is_err());
    }

    #[test]
    fn dihedral_group_laws() {
        let img = ramp();
        // Four quarter turns are the identity.
        let mut x = img.clone();
        for _ in 0..4 {
            x = x.transformed(Dihedral { quarter_turns: 1, reflect: false });
        }
        assert_eq!(x, img);
        // Reflection is an involution.
        let refl = Dihedral { quarter_turns: 0, reflect: true };
        assert_eq!(img.transformed(refl).transformed(refl), img);
        // All eight elements are distinct on an asymmetric image.
        let all: Vec<_> = Dihedral::ALL.iter().map(|t| img.transformed(*t)).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(all[i], all[j], "{:?} == {:?}", Dihedral::ALL[i], Dihedral::ALL[j]);
            }
        }
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let mut v = vec![0.0; PIXELS];
        v[SIDE - 1] = 1.0; // top-right corner
        let img = Bitmap::from_vec(v).unwrap();
        let rot = img.transformed(Dihedral { quarter_turns: 1, reflect: false });
        assert_eq!(rot.get(0, 0), 1.0, "top-right moves to top-left");
    }

    #[test]
    fn codes_round_trip() {
        for t in Dihedral::ALL {
            assert_eq!(Dihedral::from_code(t.code()), Some(t));
        }
        assert_eq!(Dihedral::from_code(8), None);
    }

    #[test]
    fn area_resample_preserves_mean_and_constants() {
        let src: Vec<f32> = (0..105 * 105).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        let out = area_resample(&src, 105, 105, 50, 50);
        let mean_src: f64 = src.iter().map(|&v| f64::from(v)).sum::<f64>() / src.len() as f64;
        let mean_out: f64 = out.iter().map(|&v| f64::from(v)).sum::<f64>() / out.len() as f64;
        assert!((mean_src - mean_out).abs() < 1e-5);

        let flat = area_resample(&vec![0.25; 105 * 105], 105, 105, 50, 50);
        assert!(flat.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn area_resample_integer_factor_is_block_mean() {
        let src = vec![0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0];
        let out = area_resample(&src, 4, 4, 2, 2);
        assert_eq!(out, vec![0.75, 0.0, 0.5, 1.0]);
    }
}

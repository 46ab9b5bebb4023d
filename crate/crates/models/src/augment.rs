//! Random view transformations for contrastive training: resized crop,
//! affine and perspective warps, resampled bilinearly with zero fill.

use nalgebra::{Matrix3, SMatrix, SVector};
use oneshot_core::{Bitmap, SIDE};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyLevel {
    Low,
    Moderate,
    High,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub level: PolicyLevel,
    /// Fraction of the image area kept by the crop.
    pub crop_scale: (f64, f64),
    /// Aspect ratio range of the crop.
    pub crop_ratio: (f64, f64),
    pub rotation_deg: f64,
    pub translation_px: f64,
    pub zoom: (f64, f64),
    pub shear_deg: f64,
    pub perspective_distortion: f64,
    pub perspective_prob: f64,
    /// Apply crop, affine and perspective in sequence instead of one of them.
    #[serde(default)]
    pub compose_all: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self::moderate()
    }
}

impl AugmentationPolicy {
    pub fn moderate() -> Self {
        AugmentationPolicy {
            level: PolicyLevel::Moderate,
            crop_scale: (0.1, 0.9),
            crop_ratio: (0.8, 1.2),
            rotation_deg: 15.0,
            translation_px: 5.0,
            zoom: (0.75, 1.25),
            shear_deg: 10.0,
            perspective_distortion: 0.5,
            perspective_prob: 0.5,
            compose_all: false,
        }
    }

    pub fn low() -> Self {
        AugmentationPolicy {
            level: PolicyLevel::Low,
            crop_scale: (0.05, 0.95),
            crop_ratio: (0.9, 1.1),
            rotation_deg: 7.0,
            translation_px: 3.0,
            zoom: (0.9, 1.1),
            shear_deg: 5.0,
            perspective_distortion: 0.25,
            ..Self::moderate()
        }
    }

    pub fn high() -> Self {
        AugmentationPolicy {
            level: PolicyLevel::High,
            crop_scale: (0.2, 0.8),
            crop_ratio: (0.6, 1.4),
            rotation_deg: 30.0,
            translation_px: 10.0,
            zoom: (0.5, 1.5),
            shear_deg: 20.0,
            perspective_distortion: 0.75,
            ..Self::moderate()
        }
    }

    /// Zero-range policy whose every transform is the identity.
    pub fn identity() -> Self {
        AugmentationPolicy {
            level: PolicyLevel::Custom,
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            rotation_deg: 0.0,
            translation_px: 0.0,
            zoom: (1.0, 1.0),
            shear_deg: 0.0,
            perspective_distortion: 0.0,
            perspective_prob: 0.0,
            compose_all: false,
        }
    }

    pub fn for_level(level: PolicyLevel) -> Result<Self> {
        match level {
            PolicyLevel::Low => Ok(Self::low()),
            PolicyLevel::Moderate => Ok(Self::moderate()),
            PolicyLevel::High => Ok(Self::high()),
            PolicyLevel::Custom => Err(Error::Config("custom policies must list their ranges".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f64, f64), min: f64| {
            if !(lo.is_finite() && hi.is_finite() && lo >= min && lo <= hi) {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) is invalid")));
            }
            Ok(())
        };
        range("crop_scale", self.crop_scale, f64::MIN_POSITIVE)?;
        if self.crop_scale.1 > 1.0 {
            return Err(Error::Config("crop_scale cannot exceed 1".into()));
        }
        range("crop_ratio", self.crop_ratio, f64::MIN_POSITIVE)?;
        range("zoom", self.zoom, f64::MIN_POSITIVE)?;
        for (name, v) in [
            ("rotation_deg", self.rotation_deg),
            ("translation_px", self.translation_px),
            ("shear_deg", self.shear_deg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a nonnegative magnitude, got {v}")));
            }
        }
        if self.shear_deg >= 90.0 {
            return Err(Error::Config("shear_deg must be below 90".into()));
        }
        if !(0.0..=1.0).contains(&self.perspective_distortion) {
            return Err(Error::Config("perspective_distortion must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.perspective_prob) {
            return Err(Error::Config("perspective_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One augmented view of `image`, deterministic in `seed`.
pub fn apply_augmentation(policy: &AugmentationPolicy, image: &Bitmap, seed: u64) -> Bitmap {
    augment(policy, image, &mut oneshot_core::seed::rng(seed))
}

/// One augmented view drawing randomness from `rng`.
pub fn augment(policy: &AugmentationPolicy, image: &Bitmap, rng: &mut ChaCha8Rng) -> Bitmap {
    // Each matrix maps output coordinates to input coordinates.
    let h = if policy.compose_all {
        crop_map(policy, rng) * affine_map(policy, rng) * perspective_map(policy, rng)
    } else {
        match rng.random_range(0..3) {
            0 => crop_map(policy, rng),
            1 => affine_map(policy, rng),
            _ => perspective_map(policy, rng),
        }
    };
    if (h - Matrix3::identity()).abs().max() < 1e-12 {
        return image.clone();
    }
    warp(image, &h)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

const S: f64 = SIDE as f64;

fn crop_map(policy: &AugmentationPolicy, rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let area = S * S;
    let (llo, lhi) = (policy.crop_ratio.0.ln(), policy.crop_ratio.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, policy.crop_scale.0, policy.crop_scale.1);
        let ratio = uniform(rng, llo, lhi).exp();
        let w = (target * ratio).sqrt();
        let h = (target / ratio).sqrt();
        if w > 0.0 && w <= S && h > 0.0 && h <= S {
            let top = uniform(rng, 0.0, S - h);
            let left = uniform(rng, 0.0, S - w);
            return Matrix3::new(w / S, 0.0, left, 0.0, h / S, top, 0.0, 0.0, 1.0);
        }
    }
    Matrix3::identity()
}

fn affine_map(policy: &AugmentationPolicy, rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let angle = uniform(rng, -policy.rotation_deg, policy.rotation_deg).to_radians();
    let tx = uniform(rng, -policy.translation_px, policy.translation_px);
    let ty = uniform(rng, -policy.translation_px, policy.translation_px);
    let zoom = uniform(rng, policy.zoom.0, policy.zoom.1);
    let shear = uniform(rng, -policy.shear_deg, policy.shear_deg).to_radians();
    let c = S / 2.0;
    let to_origin = Matrix3::new(1.0, 0.0, -c, 0.0, 1.0, -c, 0.0, 0.0, 1.0);
    let back = Matrix3::new(1.0, 0.0, c + tx, 0.0, 1.0, c + ty, 0.0, 0.0, 1.0);
    let (sin, cos) = angle.sin_cos();
    let rot = Matrix3::new(cos, -sin, 0.0, sin, cos, 0.0, 0.0, 0.0, 1.0);
    let sh = Matrix3::new(1.0, shear.tan(), 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    let sc = Matrix3::new(zoom, 0.0, 0.0, 0.0, zoom, 0.0, 0.0, 0.0, 1.0);
    let forward = back * rot * sh * sc * to_origin;
    forward.try_inverse().unwrap_or_else(Matrix3::identity)
}

fn perspective_map(policy: &AugmentationPolicy, rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    if !(rng.random::<f64>() < policy.perspective_prob) {
        return Matrix3::identity();
    }
    let dx = policy.perspective_distortion * S / 2.0;
    let dy = dx;
    let mut jitter = |m: f64| uniform(rng, 0.0, m);
    let start = [(0.0, 0.0), (S, 0.0), (S, S), (0.0, S)];
    let end = [
        (jitter(dx), jitter(dy)),
        (S - jitter(dx), jitter(dy)),
        (S - jitter(dx), S - jitter(dy)),
        (jitter(dx), S - jitter(dy)),
    ];
    // Content at `start` moves to `end`, so sampling maps end → start.
    homography(&end, &start).unwrap_or_else(Matrix3::identity)
}

/// Projective map sending each `from[k]` to `to[k]`.
fn homography(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Option<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (k, (&(x, y), &(u, v))) in from.iter().zip(to).enumerate() {
        let r = 2 * k;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a.lu().solve(&b)?;
    Some(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

/// Resamples `image` at `h · (x + ½, y + ½)` for every output pixel.
fn warp(image: &Bitmap, h: &Matrix3<f64>) -> Bitmap {
    let src = image.as_slice();
    let at = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= SIDE as i64 || c >= SIDE as i64 {
            0.0
        } else {
            f64::from(src[r as usize * SIDE + c as usize])
        }
    };
    let mut out = Vec::with_capacity(SIDE * SIDE);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let p = h * nalgebra::Vector3::new(x as f64 + 0.5, y as f64 + 0.5, 1.0);
            let (sx, sy) = (p.x / p.z - 0.5, p.y / p.z - 0.5);
            if !(sx.is_finite() && sy.is_finite()) {
                out.push(0.0);
                continue;
            }
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (c0, r0) = (x0 as i64, y0 as i64);
            let v = at(r0, c0) * (1.0 - fx) * (1.0 - fy)
                + at(r0, c0 + 1) * fx * (1.0 - fy)
                + at(r0 + 1, c0) * (1.0 - fx) * fy
                + at(r0 + 1, c0 + 1) * fx * fy;
            out.push(v as f32);
        }
    }
    Bitmap::from_vec_clamped(out).expect("warp keeps the frame size")
}

//! Spatial transformer reads and writes with bounded affine parameters.

use oneshot_core::SIDE;
use tch::{Kind, Tensor};

/// Smallest |det| allowed before inverting an affine matrix.
pub const MIN_DET: f64 = 1e-4;
pub const MIN_SCALE: f64 = 0.25;
pub const MAX_SCALE: f64 = 4.0;

/// Maps six unconstrained outputs `(a_x, k_x, t_x, k_y, a_y, t_y)` to a
/// `(B, 2, 3)` affine matrix with diagonal scales in [0.25, 4], shears and
/// translations in (−1, 1). All-zero input yields the identity.
pub fn squash_affine(raw: &Tensor) -> Tensor {
    let ln_range = (MAX_SCALE / MIN_SCALE).ln();
    let scale = |c: i64| (raw.select(1, c).sigmoid() * ln_range).exp() * MIN_SCALE;
    let bounded = |c: i64| raw.select(1, c).tanh();
    Tensor::stack(
        &[scale(0), bounded(1), bounded(2), bounded(3), scale(4), bounded(5)],
        1,
    )
    .view([-1, 2, 3])
}

pub fn identity_affine(batch: i64, device: tch::Device) -> Tensor {
    Tensor::from_slice(&[1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0])
        .view([1, 2, 3])
        .to_device(device)
        .repeat([batch, 1, 1])
}

/// Closed-form inverse of `[A | t]`; determinants closer to zero than
/// `MIN_DET` are pushed out to ±`MIN_DET`.
pub fn invert_affine(theta: &Tensor) -> Tensor {
    let g = |r: i64, c: i64| theta.select(1, r).select(1, c);
    let (a, b, tx) = (g(0, 0), g(0, 1), g(0, 2));
    let (c, d, ty) = (g(1, 0), g(1, 1), g(1, 2));
    let det = &a * &d - &b * &c;
    let sign = det.ge(0.0).to_kind(Kind::Float) * 2.0 - 1.0;
    let safe = det.abs().lt(MIN_DET);
    let det = det.where_self(&safe.logical_not(), &(sign * MIN_DET));
    let ia = &d / &det;
    let ib = -&b / &det;
    let ic = -&c / &det;
    let id = &a / &det;
    let itx = -(&ia * &tx + &ib * &ty);
    let ity = -(&ic * &tx + &id * &ty);
    Tensor::stack(&[ia, ib, itx, ic, id, ity], 1).view([-1, 2, 3])
}

/// Samples a `patch × patch` window of `(B, 1, H, W)` images at `theta`.
pub fn read(images: &Tensor, theta: &Tensor, patch: i64) -> Tensor {
    let b = images.size()[0];
    let grid = Tensor::affine_grid_generator(theta, [b, 1, patch, patch], false);
    images.grid_sampler(&grid, 0, 0, false)
}

/// Projects `(B, 1, p, p)` patches onto a 50×50 canvas with `theta_inv`,
/// zero outside the patch.
pub fn write(patches: &Tensor, theta_inv: &Tensor) -> Tensor {
    let b = patches.size()[0];
    let side = SIDE as i64;
    let grid = Tensor::affine_grid_generator(theta_inv, [b, 1, side, side], false);
    patches.grid_sampler(&grid, 0, 0, false)
}

//! Joint order-preserving polynomial fit of a (diversity, recognizability)
//! trajectory.
//!
//! Both coordinates are modelled as polynomials of a shared latent parameter
//! `s`. The fit alternates between solving the two linear least-squares
//! problems for fixed `s` and re-projecting every point onto the curve, with
//! an isotonic pass so the latent order follows the input order. The latent
//! values are then mapped affinely back onto the span of the sweep parameter,
//! which leaves the family of degree-`d` curves unchanged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub param: f64,
    pub diversity: f64,
    pub recognizability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricFit {
    pub degree: usize,
    /// Ascending powers of the latent parameter.
    pub diversity_coeffs: Vec<f64>,
    pub recognizability_coeffs: Vec<f64>,
    /// Latent parameter of every input point, in input order.
    pub latent: Vec<f64>,
    pub params: Vec<f64>,
    pub residual: f64,
    /// Total squared residual after each accepted iteration.
    pub residual_history: Vec<f64>,
    pub order_preserved: bool,
    pub iterations: usize,
}

pub(crate) fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

impl ParametricFit {
    pub fn diversity_at(&self, s: f64) -> f64 {
        poly_eval(&self.diversity_coeffs, s)
    }

    pub fn recognizability_at(&self, s: f64) -> f64 {
        poly_eval(&self.recognizability_coeffs, s)
    }

    /// Maps a latent value back to the sweep parameter by piecewise-linear
    /// interpolation through the fitted points.
    pub fn latent_to_param(&self, s: f64) -> f64 {
        interpolate(&self.latent, &self.params, s)
    }

    /// Stationary point of a quadratic coordinate inside the latent range, in
    /// sweep-parameter units.
    pub fn extremum(&self, coeffs: &[f64]) -> Option<f64> {
        if self.degree != 2 || coeffs[2].abs() < 1e-12 {
            return None;
        }
        let s = -coeffs[1] / (2.0 * coeffs[2]);
        let (lo, hi) = (self.latent[0], *self.latent.last()?);
        (lo..=hi).contains(&s).then(|| self.latent_to_param(s))
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    for i in 1..xs.len() {
        if x <= xs[i] {
            let span = xs[i] - xs[i - 1];
            if span <= 0.0 {
                return ys[i];
            }
            let w = (x - xs[i - 1]) / span;
            return ys[i - 1] + w * (ys[i] - ys[i - 1]);
        }
    }
    *ys.last().expect("non-empty")
}

/// Least squares in a centred/scaled basis for conditioning, converted back
/// to ascending powers of `s`.
pub(crate) fn fit_poly(s: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let centre = 0.5 * (lo + hi);
    let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    let a = DMatrix::from_fn(s.len(), degree + 1, |i, j| ((s[i] - centre) / scale).powi(j as i32));
    let svd = a.clone().svd(true, true);
    let rank = svd.rank(1e-10 * svd.singular_values.max());
    if rank < degree + 1 {
        return Err(Error::Degenerate(format!(
            "design has rank {rank}, degree-{degree} fit needs {}",
            degree + 1
        )));
    }
    let b = DVector::from_column_slice(y);
    let u = svd.solve(&b, 1e-14).map_err(|e| Error::Numerical(e.to_string()))?;
    // Expand Σ u_j ((s − c)/k)^j into ascending powers of s.
    let mut out = vec![0.0; degree + 1];
    for (j, &uj) in u.iter().enumerate() {
        let k = scale.powi(j as i32);
        for (m, coeff) in out.iter_mut().enumerate().take(j + 1) {
            *coeff += uj / k * binomial(j, m) as f64 * (-centre).powi((j - m) as i32);
        }
    }
    Ok(out)
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

fn total_residual(points: &[CurvePoint], s: &[f64], cd: &[f64], cr: &[f64]) -> f64 {
    points
        .iter()
        .zip(s)
        .map(|(p, &si)| (p.diversity - poly_eval(cd, si)).powi(2) + (p.recognizability - poly_eval(cr, si)).powi(2))
        .sum()
}

/// Nearest curve parameter to `p` in `[lo, hi]` by grid scan plus golden
/// section refinement.
fn project(p: &CurvePoint, cd: &[f64], cr: &[f64], lo: f64, hi: f64) -> f64 {
    let f = |s: f64| (p.diversity - poly_eval(cd, s)).powi(2) + (p.recognizability - poly_eval(cr, s)).powi(2);
    const GRID: usize = 400;
    let step = (hi - lo) / GRID as f64;
    let (mut best, mut best_f) = (lo, f(lo));
    for k in 1..=GRID {
        let s = lo + step * k as f64;
        let v = f(s);
        if v < best_f {
            best = s;
            best_f = v;
        }
    }
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let refined = 0.5 * (a + b);
    if f(refined) < best_f {
        refined
    } else {
        best
    }
}

/// Pool-adjacent-violators: the non-decreasing sequence closest to `v` in ℓ2.
pub(crate) fn isotonic(v: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * n1 as f64 + m2 * n2 as f64) / (n1 + n2) as f64, n1 + n2));
        }
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

pub fn least_curve_fit(points: &[CurvePoint], degree: usize) -> Result<ParametricFit> {
    least_curve_fit_with(points, degree, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS)
}

/// Points must be given in strictly increasing parameter order.
pub fn least_curve_fit_with(
    points: &[CurvePoint],
    degree: usize,
    tolerance: f64,
    max_iterations: usize,
) -> Result<ParametricFit> {
    if degree == 0 {
        return Err(Error::InvalidArgument("degree must be at least 1".into()));
    }
    if points.len() < degree + 2 {
        return Err(Error::InvalidArgument(format!(
            "degree-{degree} fit needs at least {} points, got {}",
            degree + 2,
            points.len()
        )));
    }
    if points.windows(2).any(|w| !(w[0].param < w[1].param)) {
        return Err(Error::InvalidArgument("parameters must be strictly increasing".into()));
    }
    let params: Vec<f64> = points.iter().map(|p| p.param).collect();
    let (t0, t1) = (params[0], *params.last().expect("non-empty"));
    let span = t1 - t0;
    let d: Vec<f64> = points.iter().map(|p| p.diversity).collect();
    let r: Vec<f64> = points.iter().map(|p| p.recognizability).collect();

    let mut s = params.clone();
    let mut cd = fit_poly(&s, &d, degree)?;
    let mut cr = fit_poly(&s, &r, degree)?;
    let mut residual = total_residual(points, &s, &cd, &cr);
    let mut history = vec![residual];
    let mut iterations = 0;

    while iterations < max_iterations && residual > 0.0 {
        let projected: Vec<f64> = points
            .iter()
            .map(|p| project(p, &cd, &cr, t0 - 0.5 * span, t1 + 0.5 * span))
            .collect();
        let ordered = isotonic(&projected);
        let (lo, hi) = (ordered[0], *ordered.last().expect("non-empty"));
        if hi - lo <= 0.0 {
            break;
        }
        let candidate: Vec<f64> = ordered.iter().map(|&v| t0 + (v - lo) / (hi - lo) * span).collect();
        let (Ok(nd), Ok(nr)) = (fit_poly(&candidate, &d, degree), fit_poly(&candidate, &r, degree)) else {
            break;
        };
        let next = total_residual(points, &candidate, &nd, &nr);
        if next > residual {
            break;
        }
        iterations += 1;
        let improvement = residual - next;
        s = candidate;
        cd = nd;
        cr = nr;
        residual = next;
        history.push(residual);
        if improvement <= tolerance * residual.max(tolerance) {
            break;
        }
    }

    Ok(ParametricFit {
        degree,
        diversity_coeffs: cd,
        recognizability_coeffs: cr,
        order_preserved: s.windows(2).all(|w| w[0] <= w[1]),
        latent: s,
        params,
        residual,
        residual_history: history,
        iterations,
    })
}

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pearson,
    Spearman,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n: usize,
}

/// Largest sample for which the Spearman p-value is computed by full
/// permutation (when there are no ties).
const EXACT_SPEARMAN_MAX_N: usize = 8;

/// Pearson or Spearman correlation with a two-sided p-value.
///
/// Pearson p-values use the Student-t approximation with n−2 degrees of
/// freedom. Spearman uses the exact permutation distribution for small
/// tie-free samples and the same t approximation otherwise.
pub fn correlate(x: &[f64], y: &[f64], method: Method) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("correlation needs at least 3 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in correlation input".into()));
    }
    let rho = match method {
        Method::Pearson => pearson(x, y)?,
        Method::Spearman if !has_ties(x) && !has_ties(y) => {
            let d2: f64 = rank(x).iter().zip(rank(y)).map(|(a, b)| (a - b) * (a - b)).sum();
            let nf = n as f64;
            1.0 - 6.0 * d2 / (nf * nf * nf - nf)
        }
        Method::Spearman => pearson(&rank(x), &rank(y))?,
    };
    let p_value = match method {
        Method::Spearman if n <= EXACT_SPEARMAN_MAX_N && !has_ties(x) && !has_ties(y) => {
            exact_spearman_p(&rank(x), &rank(y))
        }
        _ => t_test_p(rho, n),
    };
    Ok(Correlation { rho, p_value, n })
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties receiving their average rank.
pub fn rank(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn has_ties(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

fn t_test_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    let t2 = r * r * df / one_minus;
    beta_reg(df / 2.0, 0.5, df / (df + t2)).clamp(0.0, 1.0)
}

/// Fraction of the n! rankings of `y` whose |ρ| reaches the observed one.
fn exact_spearman_p(rx: &[f64], ry: &[f64]) -> f64 {
    let n = rx.len();
    let rx: Vec<usize> = rx.iter().map(|&r| r as usize).collect();
    let observed: usize = rx.iter().zip(ry).map(|(&a, &b)| (a as i64 - b as i64).pow(2) as usize).sum();
    // ρ = 1 − 6·D/(n³−n), so |ρ| is a function of |D − mid|.
    let mid2 = (n * n * n - n) / 3;
    let extremeness = |d: usize| (2 * d as i64 - mid2 as i64).abs();
    let target = extremeness(observed);
    let mut perm: Vec<usize> = (1..=n).collect();
    let mut hits = 0u64;
    let mut total = 0u64;
    let mut visit = |p: &[usize]| {
        let d: usize = rx.iter().zip(p).map(|(&a, &b)| (a as i64 - b as i64).pow(2) as usize).sum();
        total += 1;
        if extremeness(d) >= target {
            hits += 1;
        }
    };
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

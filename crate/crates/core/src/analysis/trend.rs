use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::curve_fit::{fit_poly, poly_eval};
use crate::analysis::savgol::savgol_smooth;
use crate::analysis::sweep::{ModelKind, SweepParameter, SweepResult};
use crate::metrics::{correlate, Method};
use crate::seed;

/// |Spearman ρ| every seed must reach for a monotone trend.
pub const MONOTONE_THRESHOLD: f64 = 0.8;
const BOOTSTRAP_ROUNDS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
    /// Interior minimum.
    Convex,
    /// Interior maximum.
    Concave,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTrend {
    pub seed: u64,
    pub diversity_spearman: Option<f64>,
    pub recognizability_spearman: Option<f64>,
}

/// Stationary point of a quadratic fit to the seed-mean curve, with a
/// percentile bootstrap interval over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub location: f64,
    pub is_maximum: bool,
    pub interval: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTrend {
    pub mean: Vec<f64>,
    /// Bessel-corrected std over seeds (zero with a single seed).
    pub std: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub extremum: Option<Extremum>,
    pub trend: Trend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub model_kind: ModelKind,
    pub parameter: SweepParameter,
    /// Values finished for every seed; the curves below are indexed by these.
    pub values: Vec<f64>,
    pub per_seed: Vec<SeedTrend>,
    pub diversity: MetricTrend,
    pub recognizability: MetricTrend,
}

fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    correlate(x, y, Method::Spearman).ok().map(|c| c.rho)
}

/// Extremum location of the least-squares quadratic through `(x, y)`, if it
/// lies strictly inside the x range.
fn quadratic_extremum(x: &[f64], y: &[f64]) -> Option<(f64, bool)> {
    if x.len() < 3 {
        return None;
    }
    let c = fit_poly(x, y, 2).ok()?;
    if c[2].abs() < 1e-12 {
        return None;
    }
    let s = -c[1] / (2.0 * c[2]);
    let inside = s > x[0] && s < x[x.len() - 1];
    // Reject curvature too weak to matter across the range.
    let span = x[x.len() - 1] - x[0];
    let bend = (c[2] * span * span).abs();
    let lin = (poly_eval(&c, x[x.len() - 1]) - poly_eval(&c, x[0])).abs();
    (inside && bend > 1e-9 * (1.0 + lin)).then_some((s, c[2] < 0.0))
}

fn smooth(series: &[f64]) -> Vec<f64> {
    // Window 7 when the series allows it, otherwise the largest odd window
    // above the polynomial order.
    let n = series.len();
    let window = if n >= 7 { 7 } else if n % 2 == 1 { n } else { n.saturating_sub(1) };
    if window >= 3 {
        savgol_smooth(series, window, 2).unwrap_or_else(|_| series.to_vec())
    } else {
        series.to_vec()
    }
}

fn metric_trend(
    values: &[f64],
    per_seed_curves: &[Vec<f64>],
    per_seed_rho: &[Option<f64>],
    bootstrap_seed: u64,
) -> MetricTrend {
    let k = per_seed_curves.len();
    let n = values.len();
    let mean_of = |idx: &[usize]| -> Vec<f64> {
        (0..n)
            .map(|j| idx.iter().map(|&s| per_seed_curves[s][j]).sum::<f64>() / idx.len() as f64)
            .collect()
    };
    let all: Vec<usize> = (0..k).collect();
    let mean = if k > 0 { mean_of(&all) } else { Vec::new() };
    let std = (0..n)
        .map(|j| {
            if k < 2 {
                return 0.0;
            }
            let ss: f64 = per_seed_curves.iter().map(|c| (c[j] - mean[j]).powi(2)).sum();
            (ss / (k - 1) as f64).sqrt()
        })
        .collect();

    let extremum = quadratic_extremum(values, &mean).map(|(location, is_maximum)| {
        let interval = (k >= 2).then(|| {
            let mut rng = seed::rng(bootstrap_seed);
            let mut locs: Vec<f64> = (0..BOOTSTRAP_ROUNDS)
                .filter_map(|_| {
                    let pick: Vec<usize> = (0..k).map(|_| rng.random_range(0..k)).collect();
                    quadratic_extremum(values, &mean_of(&pick))
                        .filter(|&(_, m)| m == is_maximum)
                        .map(|(l, _)| l)
                })
                .collect();
            locs.sort_by(f64::total_cmp);
            if locs.is_empty() {
                return (location, location);
            }
            let q = |p: f64| locs[((locs.len() - 1) as f64 * p).round() as usize];
            (q(0.025), q(0.975))
        });
        Extremum {
            location,
            is_maximum,
            interval,
        }
    });

    let rhos: Vec<f64> = per_seed_rho.iter().flatten().copied().collect();
    let consistent = !rhos.is_empty() && rhos.len() == per_seed_rho.len();
    let trend = if consistent && rhos.iter().all(|&r| r >= MONOTONE_THRESHOLD) {
        Trend::Increasing
    } else if consistent && rhos.iter().all(|&r| r <= -MONOTONE_THRESHOLD) {
        Trend::Decreasing
    } else {
        // A bend counts only if every seed bends the same way.
        let per_seed: Vec<Option<bool>> = per_seed_curves
            .iter()
            .map(|c| quadratic_extremum(values, c).map(|(_, m)| m))
            .collect();
        match (extremum.as_ref(), per_seed.first().copied().flatten()) {
            (Some(e), Some(first)) if per_seed.iter().all(|p| *p == Some(first)) && first == e.is_maximum => {
                if e.is_maximum {
                    Trend::Concave
                } else {
                    Trend::Convex
                }
            }
            _ => Trend::None,
        }
    };

    MetricTrend {
        smoothed: smooth(&mean),
        mean,
        std,
        extremum,
        trend,
    }
}

/// Per-seed rank trends, seed-mean curves with smoothing, fitted extrema and
/// an overall trend label for both metrics.
pub fn trend_report(sweep: &SweepResult) -> TrendReport {
    let seeds = sweep.seeds().to_vec();
    let series: Vec<Vec<(f64, f64, f64)>> = seeds
        .iter()
        .map(|&s| {
            sweep
                .series(s)
                .into_iter()
                .map(|(v, p)| (v, p.mean_diversity, p.mean_recognizability))
                .collect()
        })
        .collect();

    let per_seed: Vec<SeedTrend> = seeds
        .iter()
        .zip(&series)
        .map(|(&seed, s)| {
            let x: Vec<f64> = s.iter().map(|p| p.0).collect();
            let d: Vec<f64> = s.iter().map(|p| p.1).collect();
            let r: Vec<f64> = s.iter().map(|p| p.2).collect();
            SeedTrend {
                seed,
                diversity_spearman: spearman(&x, &d),
                recognizability_spearman: spearman(&x, &r),
            }
        })
        .collect();

    let values: Vec<f64> = sweep
        .spec
        .values
        .iter()
        .copied()
        .filter(|v| series.iter().all(|s| s.iter().any(|p| p.0 == *v)))
        .collect();
    let curve = |f: fn(&(f64, f64, f64)) -> f64| -> Vec<Vec<f64>> {
        series
            .iter()
            .map(|s| {
                values
                    .iter()
                    .map(|v| f(s.iter().find(|p| p.0 == *v).expect("filtered")))
                    .collect()
            })
            .collect()
    };
    let boot = seed::derive(seeds.iter().fold(0, |a, s| a ^ s), "trend-bootstrap");
    TrendReport {
        model_kind: sweep.spec.model_kind,
        parameter: sweep.spec.parameter,
        diversity: metric_trend(
            &values,
            &curve(|p| p.1),
            &per_seed.iter().map(|s| s.diversity_spearman).collect::<Vec<_>>(),
            boot,
        ),
        recognizability: metric_trend(
            &values,
            &curve(|p| p.2),
            &per_seed.iter().map(|s| s.recognizability_spearman).collect::<Vec<_>>(),
            boot ^ 1,
        ),
        values,
        per_seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::sweep::{CellKey, CellStatus, SweepCell, SweepSpec};
    use crate::metrics::ModelPoint;

    fn sweep(parameter: SweepParameter, kind: ModelKind, values: Vec<f64>, f: impl Fn(f64, u64) -> (f64, f64)) -> SweepResult {
        let spec = SweepSpec {
            model_kind: kind,
            parameter,
            values: values.clone(),
            seeds: vec![0, 1, 2],
            fixed_config: serde_json::Value::Null,
        };
        let cells = spec
            .cells()
            .into_iter()
            .map(|key: CellKey| {
                let (d, r) = f(key.value, key.seed);
                SweepCell {
                    key,
                    status: CellStatus::Done {
                        point: ModelPoint {
                            model_id: "m".into(),
                            mean_diversity: d,
                            mean_recognizability: r,
                            per_concept: vec![],
                        },
                        checkpoint: None,
                    },
                }
            })
            .collect();
        SweepResult { spec, cells }
    }

    #[test]
    fn monotone_context_trend() {
        let values: Vec<f64> = (2..=20).map(f64::from).collect();
        let s = sweep(SweepParameter::ContextSize, ModelKind::VaeNs, values, |v, seed| {
            (2.4 - 0.06 * v + 0.001 * seed as f64, 0.5 + 0.025 * v)
        });
        let r = trend_report(&s);
        assert!(r.per_seed.iter().all(|t| t.diversity_spearman == Some(-1.0)));
        assert_eq!(r.diversity.trend, Trend::Decreasing);
        assert_eq!(r.recognizability.trend, Trend::Increasing);
        assert_eq!(r.diversity.smoothed.len(), 19);
    }

    #[test]
    fn concave_peak_is_located() {
        let values: Vec<f64> = (1..=16).map(|k| f64::from(k) * 0.25).collect();
        let s = sweep(SweepParameter::Beta, ModelKind::VaeStn, values, |b, seed| {
            (3.0 - 0.3 * b, 0.8 - 0.05 * (b - 2.25).powi(2) + 0.002 * seed as f64)
        });
        let r = trend_report(&s);
        assert_eq!(r.recognizability.trend, Trend::Concave);
        let e = r.recognizability.extremum.unwrap();
        assert!(e.is_maximum);
        assert!((e.location - 2.25).abs() < 1e-6);
        let (lo, hi) = e.interval.unwrap();
        assert!(lo <= e.location && e.location <= hi);
    }

    #[test]
    fn inconsistent_seeds_give_no_trend() {
        let values: Vec<f64> = vec![5.0, 20.0, 40.0, 60.0, 80.0, 100.0];
        let s = sweep(SweepParameter::LatentSize, ModelKind::VaeNs, values, |v, seed| {
            let sign = if seed == 1 { -1.0 } else { 1.0 };
            (1.0 + sign * 0.01 * v, 0.7 + 0.001 * ((v * 7.0 + seed as f64).sin()))
        });
        let r = trend_report(&s);
        assert_eq!(r.diversity.trend, Trend::None);
    }
}

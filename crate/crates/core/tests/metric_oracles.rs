//! Metric implementations checked against independent brute-force oracles.

use approx::assert_abs_diff_eq;
use oneshot_core::data::ConceptId;
use oneshot_core::metrics::{
    correlate, diversity_cosine, diversity_std, model_point, per_concept_distance, select_prototype,
    zscore_and_distance, Aggregation, ConceptMetrics, EmbeddingMatrix, Method, ModelPoint, SourceId,
};
use proptest::prelude::*;

fn matrix(rows: &[Vec<f64>]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(ConceptId(1), rows).unwrap()
}

/// Per-dimension sample variance through the pairwise-difference identity
/// `s² = Σ_{i<k} (x_i − x_k)² / (n(n − 1))`, with no mean involved.
fn std_oracle(rows: &[Vec<f64>], aggregation: Aggregation) -> f64 {
    let n = rows.len();
    let d = rows[0].len();
    let vars: Vec<f64> = (0..d)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..n {
                for k in i + 1..n {
                    s += (rows[i][j] - rows[k][j]).powi(2);
                }
            }
            s / (n * (n - 1)) as f64
        })
        .collect();
    match aggregation {
        Aggregation::L2 => vars.iter().sum::<f64>().sqrt(),
        Aggregation::Mean => vars.iter().map(|v| v.sqrt()).sum::<f64>() / d as f64,
    }
}

/// Direct cosine formula, pair by pair.
fn cosine_oracle(rows: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..rows.len() {
        for k in i + 1..rows.len() {
            let dot: f64 = rows[i].iter().zip(&rows[k]).map(|(a, b)| a * b).sum();
            let na: f64 = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            let nb: f64 = rows[k].iter().map(|b| b * b).sum::<f64>().sqrt();
            let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
            total += (2.0 - 2.0 * cos).max(0.0).sqrt();
        }
    }
    total
}

/// Exhaustive argmin, ties resolved by index, over exact rational-free sums.
fn prototype_oracle(rows: &[Vec<f64>]) -> usize {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let centre: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let dist: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(&centre).map(|(a, c)| (a - c).powi(2)).sum())
        .collect();
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    dist.iter().position(|&v| v == min).unwrap()
}

fn rows_strategy(min_rows: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (min_rows..=10usize, 1..=8usize).prop_flat_map(|(n, d)| {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n)
    })
}

/// Small integer grids make exact ties likely.
fn tie_prone_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=10usize, 1..=4usize).prop_flat_map(|(n, d)| {
        prop::collection::vec(prop::collection::vec((-2i32..=2).prop_map(f64::from), d), n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn std_matches_pairwise_identity(rows in rows_strategy(2)) {
        for agg in [Aggregation::L2, Aggregation::Mean] {
            let got = diversity_std(&matrix(&rows), agg).unwrap();
            prop_assert!((got - std_oracle(&rows, agg)).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_matches_direct_formula(rows in rows_strategy(2)) {
        prop_assume!(rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6));
        let got = diversity_cosine(&matrix(&rows), false).unwrap();
        prop_assert!((got - cosine_oracle(&rows)).abs() < 1e-9);
    }

    #[test]
    fn prototype_matches_exhaustive_argmin(rows in rows_strategy(1)) {
        prop_assert_eq!(select_prototype(&matrix(&rows)).unwrap().sample_index, prototype_oracle(&rows));
    }

    #[test]
    fn prototype_ties_match_exhaustive_argmin(rows in tie_prone_rows()) {
        prop_assert_eq!(select_prototype(&matrix(&rows)).unwrap().sample_index, prototype_oracle(&rows));
    }

    #[test]
    fn prototype_is_translation_invariant(rows in rows_strategy(1), shift in -3i32..=3) {
        // Integer multiples of n keep the centroid, and so every distance, exact.
        let n = rows.len() as f64;
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v.round() * n).collect()).collect();
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + f64::from(shift)).collect()).collect();
        prop_assert_eq!(
            select_prototype(&matrix(&rows)).unwrap().sample_index,
            select_prototype(&matrix(&moved)).unwrap().sample_index
        );
    }

    #[test]
    fn measures_are_permutation_invariant(rows in rows_strategy(2), seed in any::<u64>()) {
        let m = matrix(&rows);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = m.select(&order);
        prop_assert!((diversity_std(&m, Aggregation::L2).unwrap() - diversity_std(&p, Aggregation::L2).unwrap()).abs() < 1e-9);
        prop_assume!(rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6));
        prop_assert!((diversity_cosine(&m, false).unwrap() - diversity_cosine(&p, false).unwrap()).abs() < 1e-9);
        // Sample indices travel with their rows, so the chosen drawing is the same.
        let a = select_prototype(&m).unwrap();
        let b = select_prototype(&p).unwrap();
        let da: f64 = a.embedding.iter().zip(&b.embedding).map(|(x, y)| (x - y).abs()).sum();
        prop_assert!(a.sample_index == b.sample_index || da == 0.0);
    }

    #[test]
    fn std_is_homogeneous(rows in rows_strategy(2), k in 0.1f64..10.0) {
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        let a = diversity_std(&matrix(&rows), Aggregation::L2).unwrap();
        let b = diversity_std(&matrix(&scaled), Aggregation::L2).unwrap();
        prop_assert!((b - k * a).abs() < 1e-9 * (1.0 + b));
    }

    #[test]
    fn std_zero_iff_identical(rows in rows_strategy(2)) {
        let v = diversity_std(&matrix(&rows), Aggregation::L2).unwrap();
        let identical = rows.iter().all(|r| r == &rows[0]);
        prop_assert_eq!(v == 0.0, identical);
    }

    #[test]
    fn moving_toward_human_shrinks_distance(
        others in prop::collection::vec((0.0f64..3.0, 0.0f64..1.0), 2..6),
        human in (0.0f64..3.0, 0.0f64..1.0),
        start in (0.0f64..3.0, 0.0f64..1.0),
        f in 0.05f64..0.95,
    ) {
        // The standardizing pool is held fixed while the point moves along its
        // segment to the human point.
        let mut pts: Vec<ModelPoint> = others.iter().enumerate().map(|(i, &(d, r))| point(&format!("o{i}"), d, r)).collect();
        pts.push(point("human", human.0, human.1));
        pts.push(point("m", start.0, start.1));
        let rows = match zscore_and_distance(&pts, "human") { Ok(r) => r, Err(_) => return Ok(()) };
        let h = rows.iter().find(|r| r.model_id == "human").unwrap();
        let m = rows.iter().find(|r| r.model_id == "m").unwrap();
        let zd = m.z_diversity + f * (h.z_diversity - m.z_diversity);
        let zr = m.z_recognizability + f * (h.z_recognizability - m.z_recognizability);
        let moved = (zd - h.z_diversity).hypot(zr - h.z_recognizability);
        prop_assume!(m.distance_to_human > 1e-12);
        prop_assert!(moved < m.distance_to_human);
    }

    #[test]
    fn spearman_invariant_under_monotone_maps(xs in prop::collection::vec(-10.0f64..10.0, 3..30)) {
        let ys: Vec<f64> = xs.iter().map(|v| (v * 0.7).sin() + v * 0.1).collect();
        let Ok(a) = correlate(&xs, &ys, Method::Spearman) else { return Ok(()) };
        let mapped: Vec<f64> = xs.iter().map(|v| v.exp()).collect();
        let b = correlate(&mapped, &ys, Method::Spearman).unwrap();
        prop_assert!((a.rho - b.rho).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a.p_value));
    }
}

fn point(id: &str, d: f64, r: f64) -> ModelPoint {
    ModelPoint {
        model_id: id.into(),
        mean_diversity: d,
        mean_recognizability: r,
        per_concept: vec![ConceptMetrics {
            concept_id: ConceptId(0),
            diversity: d,
            recognizability: r,
        }],
    }
}

#[test]
fn hand_computed_examples() {
    let p = select_prototype(&matrix(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![10.0, 0.0]])).unwrap();
    assert_eq!(p.sample_index, 1);
    assert_abs_diff_eq!(
        diversity_std(&matrix(&[vec![0.0, 0.0], vec![2.0, 0.0]]), Aggregation::L2).unwrap(),
        2f64.sqrt(),
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(
        diversity_cosine(&matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]), false).unwrap(),
        2f64.sqrt(),
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(
        diversity_cosine(&matrix(&[vec![1.0, 0.0], vec![-1.0, 0.0]]), false).unwrap(),
        2.0,
        epsilon = 1e-15
    );
}

#[test]
fn collinear_points_keep_distance_ratio() {
    // Human at the midpoint of a segment: raw and z-scored distance ratios agree.
    let pts = [point("a", 0.0, 0.2), point("human", 1.0, 0.5), point("b", 2.0, 0.8)];
    let rows = zscore_and_distance(&pts, "human").unwrap();
    let raw = |p: &ModelPoint| (p.mean_diversity - 1.0).hypot(p.mean_recognizability - 0.5);
    assert_abs_diff_eq!(
        rows[0].distance_to_human / rows[2].distance_to_human,
        raw(&pts[0]) / raw(&pts[2]),
        epsilon = 1e-12
    );
    let sym = [point("a", 0.0, 0.5), point("human", 1.0, 0.5), point("b", 2.0, 0.5), point("c", 1.0, 0.9)];
    let rows = zscore_and_distance(&sym, "human").unwrap();
    assert_abs_diff_eq!(rows[0].distance_to_human, rows[2].distance_to_human, epsilon = 1e-12);
    assert_eq!(rows[1].distance_to_human, 0.0);
}

#[test]
fn model_point_means_and_per_concept_distance() {
    use std::collections::BTreeMap;
    let d: BTreeMap<_, _> = (0..150).map(|i| (ConceptId(i), f64::from(i) / 100.0)).collect();
    let r: BTreeMap<_, _> = (0..150).map(|i| (ConceptId(i), 1.0 - f64::from(i) / 300.0)).collect();
    let p = model_point("human", &d, &r).unwrap();
    assert_abs_diff_eq!(p.mean_diversity, d.values().sum::<f64>() / 150.0, epsilon = 1e-12);
    assert!(per_concept_distance(&p, &p).unwrap().iter().all(|(_, v)| *v == 0.0));
}

#[test]
fn embedding_rows_keep_source_order() {
    let ids: Vec<SourceId> = (0..3)
        .map(|i| SourceId {
            concept_id: ConceptId(7),
            sample_index: 2 - i,
        })
        .collect();
    let m = EmbeddingMatrix::new(2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0], ids.clone()).unwrap();
    assert_eq!(m.source_ids(), &ids[..]);
}

//! Smoothing, curve fitting and correlation checked against closed forms.

use approx::assert_abs_diff_eq;
use oneshot_core::analysis::{least_curve_fit, savgol_coefficients, savgol_smooth, CurvePoint};
use oneshot_core::metrics::{correlate, Method};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Closed-form quadratic/cubic smoothing weights for half-width m:
/// `(3(3m² + 3m − 1) − 15 j²) / ((2m − 1)(2m + 1)(2m + 3))`.
fn closed_form_centre_weight(m: i32, j: i32) -> f64 {
    let num = 3 * (3 * m * m + 3 * m - 1) - 15 * j * j;
    let den = (2 * m - 1) * (2 * m + 1) * (2 * m + 3);
    f64::from(num) / f64::from(den)
}

#[test]
fn window_seven_weights_match_closed_form() {
    let c = savgol_coefficients(7, 2, 0).unwrap();
    for (k, w) in c.iter().enumerate() {
        assert_abs_diff_eq!(*w, closed_form_centre_weight(3, k as i32 - 3), epsilon = 1e-12);
    }
    assert_abs_diff_eq!(c[3], 7.0 / 21.0, epsilon = 1e-12);
    for m in 2..6 {
        let c = savgol_coefficients((2 * m + 1) as usize, 2, 0).unwrap();
        for (k, w) in c.iter().enumerate() {
            assert_abs_diff_eq!(*w, closed_form_centre_weight(m, k as i32 - m), epsilon = 1e-12);
        }
    }
}

#[test]
fn impulse_response_is_the_weight_vector() {
    let mut series = vec![0.0; 15];
    series[7] = 1.0;
    let out = savgol_smooth(&series, 7, 2).unwrap();
    assert_abs_diff_eq!(out[7], 7.0 / 21.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out[6], 6.0 / 21.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out[4], -2.0 / 21.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out[3], 0.0, epsilon = 1e-12);
}

/// Two-sided p-value from the Student-t CDF directly.
fn t_oracle(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * (1.0 - dist.cdf(t.abs()))
}

#[test]
fn closed_form_correlations() {
    let x: Vec<f64> = (0..25).map(|i| f64::from(i) * 0.3 - 2.0).collect();
    let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
    let p = correlate(&x, &affine, Method::Pearson).unwrap();
    assert_abs_diff_eq!(p.rho, 1.0, epsilon = 1e-12);
    assert!(p.p_value < 1e-12);
    let cube: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
    assert_eq!(correlate(&x, &cube, Method::Spearman).unwrap().rho, 1.0);
    assert!(correlate(&x, &cube, Method::Pearson).unwrap().rho < 1.0);
    let neg: Vec<f64> = affine.iter().map(|v| -v).collect();
    assert_abs_diff_eq!(correlate(&affine, &neg, Method::Pearson).unwrap().rho, -1.0, epsilon = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn savgol_reproduces_quadratics(
        a in -5.0f64..5.0, b in -2.0f64..2.0, c in -0.5f64..0.5, n in 7usize..40, h in 0.1f64..2.0,
    ) {
        let series: Vec<f64> = (0..n).map(|i| { let t = i as f64 * h; a + b * t + c * t * t }).collect();
        for (s, y) in savgol_smooth(&series, 7, 2).unwrap().iter().zip(&series) {
            prop_assert!((s - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn pearson_p_matches_student_t(xs in prop::collection::vec(-10.0f64..10.0, 5..40), noise in 0.1f64..5.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v + noise * ((i as f64) * 1.7).sin()).collect();
        let Ok(c) = correlate(&xs, &ys, Method::Pearson) else { return Ok(()) };
        prop_assume!(c.rho.abs() < 0.999);
        prop_assert!((c.p_value - t_oracle(c.rho, xs.len())).abs() < 1e-8);
    }

    #[test]
    fn planted_parabolas_are_recovered(
        cd in (-2.0f64..2.0, -1.0f64..1.0, -0.3f64..0.3),
        cr in (-2.0f64..2.0, -1.0f64..1.0, -0.3f64..0.3),
        n in 5usize..20,
    ) {
        let pts: Vec<CurvePoint> = (0..n).map(|i| {
            let t = i as f64 * 0.5;
            CurvePoint {
                param: t,
                diversity: cd.0 + cd.1 * t + cd.2 * t * t,
                recognizability: cr.0 + cr.1 * t + cr.2 * t * t,
            }
        }).collect();
        let fit = least_curve_fit(&pts, 2).unwrap();
        prop_assert!(fit.residual < 1e-6);
        for (got, want) in fit.diversity_coeffs.iter().zip([cd.0, cd.1, cd.2]) {
            prop_assert!((got - want).abs() < 1e-6);
        }
        for (got, want) in fit.recognizability_coeffs.iter().zip([cr.0, cr.1, cr.2]) {
            prop_assert!((got - want).abs() < 1e-6);
        }
        prop_assert!(fit.order_preserved);
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn refinement_never_increases_residual(
        noise in prop::collection::vec(-0.2f64..0.2, 12),
        bend in -0.5f64..0.5,
    ) {
        let pts: Vec<CurvePoint> = noise.iter().enumerate().map(|(i, e)| {
            let t = i as f64;
            CurvePoint {
                param: t,
                diversity: 2.0 - 0.1 * t + e,
                recognizability: 0.3 + 0.05 * t + bend * 0.01 * t * t - e,
            }
        }).collect();
        let fit = least_curve_fit(&pts, 2).unwrap();
        prop_assert!(fit.residual_history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(fit.iterations <= 200);
        prop_assert!(fit.latent.windows(2).all(|w| w[0] <= w[1]));
    }
}

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Least-squares weights that evaluate the local degree-`order` fit over a
/// `window`-point window at offset `at` from the window centre.
pub fn savgol_coefficients(window: usize, order: usize, at: isize) -> Result<Vec<f64>> {
    validate(window, order)?;
    let half = (window / 2) as isize;
    if at.abs() > half {
        return Err(Error::InvalidArgument(format!("offset {at} outside window of {window}")));
    }
    let pinv = design_pinv(window, order)?;
    let x = at as f64;
    let powers: Vec<f64> = (0..=order).map(|j| x.powi(j as i32)).collect();
    Ok((0..window)
        .map(|k| (0..=order).map(|j| powers[j] * pinv[(j, k)]).sum())
        .collect())
}

fn validate(window: usize, order: usize) -> Result<()> {
    if window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("window {window} must be odd")));
    }
    if order >= window {
        return Err(Error::InvalidArgument(format!("order {order} must be below window {window}")));
    }
    Ok(())
}

/// Pseudo-inverse of the Vandermonde matrix over offsets `-m..=m`.
fn design_pinv(window: usize, order: usize) -> Result<DMatrix<f64>> {
    let half = (window / 2) as f64;
    let a = DMatrix::from_fn(window, order + 1, |i, j| (i as f64 - half).powi(j as i32));
    a.svd(true, true)
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))
}

/// Savitzky-Golay smoothing. Interior points use the centred window; the
/// first and last `window/2` points evaluate the polynomial fitted to the
/// first and last full windows.
pub fn savgol_smooth(series: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    validate(window, order)?;
    if series.len() < window {
        return Err(Error::InvalidArgument(format!(
            "series of length {} is shorter than the window {window}",
            series.len()
        )));
    }
    let half = window / 2;
    let rows: Vec<Vec<f64>> = (0..window)
        .map(|k| savgol_coefficients(window, order, k as isize - half as isize))
        .collect::<Result<_>>()?;
    let apply = |w: &[f64], c: &[f64]| w.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
    let n = series.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let v = if i < half {
            apply(&series[..window], &rows[i])
        } else if i + half >= n {
            apply(&series[n - window..], &rows[window - (n - i)])
        } else {
            apply(&series[i - half..=i + half], &rows[half])
        };
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn centre_weights_for_quadratic_window_7() {
        let c = savgol_coefficients(7, 2, 0).unwrap();
        let expected = [-2.0, 3.0, 6.0, 7.0, 6.0, 3.0, -2.0].map(|v| v / 21.0);
        for (a, b) in c.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn preserves_quadratics_and_constants() {
        let q: Vec<f64> = (0..15).map(|i| 0.3 * (i * i) as f64 - 2.0 * i as f64 + 5.0).collect();
        for (a, b) in savgol_smooth(&q, 7, 2).unwrap().iter().zip(&q) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let c = vec![4.2; 9];
        for v in savgol_smooth(&c, 7, 2).unwrap() {
            assert_abs_diff_eq!(v, 4.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn preconditions() {
        assert!(savgol_smooth(&[0.0; 10], 6, 2).is_err());
        assert!(savgol_smooth(&[0.0; 5], 7, 2).is_err());
        assert!(savgol_smooth(&[0.0; 10], 3, 3).is_err());
    }
}

//! Central finite differences for gradient validation.

/// Step size used by every gradient check in the crate.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function at `point`.
pub fn central_diff_gradient<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let plus = f(&x);
        x[i] = point[i] - h;
        let minus = f(&x);
        x[i] = point[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Elementwise max of |a - b| / max(|a|, floor).
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Elementwise max of |a - b|.
pub fn max_absolute_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |v: &[f64]| v[0] * v[0] + 3.0 * v[0] * v[1];
        let g = central_diff_gradient(f, &[2.0, 1.0], 1e-6);
        assert!((g[0] - 7.0).abs() < 1e-7);
        assert!((g[1] - 6.0).abs() < 1e-7);
    }

    #[test]
    fn relative_error_floor() {
        let e = max_relative_error(&[0.0, 1.0], &[1e-13, 1.0 + 1e-7], 1e-12);
        assert!(e < 0.2);
    }
}

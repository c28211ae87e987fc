//! Central finite-difference checks for analytic gradients.

use nalgebra::DVector;

/// Steps below this are dominated by cancellation in double precision.
pub const MIN_RELIABLE_STEP: f64 = 1e-8;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, step: f64) -> DVector<f64> {
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        (up - down) / (2.0 * step)
    })
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both vanish.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Relative error between `analytic` and the central-difference gradient.
pub fn check_gradient(f: impl Fn(&DVector<f64>) -> f64, analytic: &DVector<f64>, x: &DVector<f64>, step: f64) -> f64 {
    relative_error(analytic, &numeric_gradient(f, x, step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let f = |x: &DVector<f64>| x[0].powi(3) + x[0] * x[1];
        let x = DVector::from_column_slice(&[1.5, -2.0]);
        let g = DVector::from_column_slice(&[3.0 * 1.5 * 1.5 - 2.0, 1.5]);
        assert!(check_gradient(f, &g, &x, 1e-4) < 1e-8);
        let wrong = DVector::from_column_slice(&[1.0, 1.5]);
        assert!(check_gradient(f, &wrong, &x, 1e-4) > 0.1);
    }
}

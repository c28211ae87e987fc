//! Chi-square tail probabilities and the Laurent-Massart tail bound.

use crate::error::{DgpError, Result};

/// `ln Γ(n/2)` for a positive integer `n`, built from exact recurrences.
fn ln_gamma_half(n: usize) -> f64 {
    debug_assert!(n >= 1);
    if n.is_multiple_of(2) {
        // Γ(k) = (k-1)!
        (1..n / 2).map(|j| (j as f64).ln()).sum()
    } else {
        // Γ(k + 1/2) = √π ∏_{j=1..k} (j - 1/2)
        let k = (n - 1) / 2;
        0.5 * std::f64::consts::PI.ln() + (1..=k).map(|j| (j as f64 - 0.5).ln()).sum::<f64>()
    }
}

/// Density of the chi distribution with `n` degrees of freedom at `u ≥ 0`.
fn chi_density(n: usize, u: f64) -> f64 {
    if n == 1 {
        return (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * u * u).exp();
    }
    if u <= 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    ((nf - 1.0) * u.ln() - 0.5 * u * u - (0.5 * nf - 1.0) * std::f64::consts::LN_2 - ln_gamma_half(n)).exp()
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`, split into unit-width
/// panels so narrow peaks are not skipped by the initial sample points.
fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = ((b - a).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    let per = tol / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == panels { b } else { lo + h };
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            adaptive(&f, lo, hi, fa, fm, fb, simpson(fa, fm, fb, lo, hi), per, 48)
        })
        .sum()
}

/// `P(χ²_n > ψ²)`, closed form for even `n` and quadrature of the chi
/// density otherwise.
pub fn chi_square_tail(n: usize, psi: f64) -> f64 {
    assert!(n >= 1, "degrees of freedom must be positive");
    assert!(psi > 0.0, "psi must be positive");
    let x = psi * psi;
    let p = if n.is_multiple_of(2) {
        let half = 0.5 * x;
        let ln_half = half.ln();
        let mut ln_fact = 0.0;
        let mut sum = 0.0;
        for k in 0..n / 2 {
            if k > 0 {
                ln_fact += (k as f64).ln();
            }
            sum += (-half + k as f64 * ln_half - ln_fact).exp();
        }
        sum
    } else {
        const TOL: f64 = 1e-13;
        let nf = n as f64;
        if x < nf {
            1.0 - integrate(|u| chi_density(n, u), 0.0, psi, TOL)
        } else {
            let upper = psi.max((nf - 1.0).sqrt()) + 40.0;
            integrate(|u| chi_density(n, u), psi, upper, TOL)
        }
    };
    p.clamp(0.0, 1.0)
}

/// `e^{-t*}` where `n + 2√(n t*) + 2 t* = ψ²`, an upper bound on
/// [`chi_square_tail`]. Requires `ψ² > n`.
pub fn tail_upper_bound(n: usize, psi: f64) -> Result<f64> {
    let nf = n as f64;
    let psi_sq = psi * psi;
    if n == 0 || !(psi_sq > nf) {
        return Err(DgpError::BoundUndefined { n, psi_sq });
    }
    // 2u² + 2√n u + (n − ψ²) = 0 with u = √t
    let u = 0.5 * ((2.0 * psi_sq - nf).sqrt() - nf.sqrt());
    Ok((-u * u).exp())
}

/// `e^{-ψ²/10}`, the coarse bound valid for large `ψ`.
pub fn large_psi_bound(psi: f64) -> f64 {
    (-psi * psi / 10.0).exp()
}

/// `ψ` at which `P(χ²_n > ψ²) = p`, by bisection on the monotone tail.
pub fn psi_for_tail(n: usize, p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "tail probability must lie in (0, 1)");
    let (mut lo, mut hi) = (1e-9_f64, 1.0_f64);
    while chi_square_tail(n, hi) > p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi_square_tail(n, mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dof_closed_form() {
        assert!((chi_square_tail(2, 2.0) - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn one_dof_matches_normal_quantile() {
        assert!((chi_square_tail(1, 1.959963984540054) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn null_ellipse_has_full_mass_outside() {
        for n in 1..=9 {
            assert!((chi_square_tail(n, 1e-9) - 1.0).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn bound_examples() {
        // ψ² = 1 + 2√1 + 2 = 5 at t = 1
        assert!((tail_upper_bound(1, 5f64.sqrt()).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        assert!(matches!(
            tail_upper_bound(4, 2.0),
            Err(DgpError::BoundUndefined { n: 4, .. })
        ));
    }

    #[test]
    fn ln_gamma_half_values() {
        assert!((ln_gamma_half(1) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-15);
        assert_eq!(ln_gamma_half(2), 0.0);
        assert!((ln_gamma_half(10) - 24f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn psi_for_tail_inverts() {
        let psi = psi_for_tail(8, 0.05);
        assert!((chi_square_tail(8, psi) - 0.05).abs() < 1e-12);
    }
}

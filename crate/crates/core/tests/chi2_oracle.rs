//! The tail routine against an independent regularized incomplete gamma.

use dgp_core::chi2::{chi_square_tail, large_psi_bound, psi_for_tail, tail_upper_bound};
use dgp_core::DgpError;

/// `ln Γ(k/2)` by exact recurrence from `Γ(1/2) = √π` or `Γ(1) = 1`.
fn ln_gamma_half(k: usize) -> f64 {
    let (mut acc, mut a) = if k.is_multiple_of(2) {
        (0.0, 1.0)
    } else {
        (0.5 * std::f64::consts::PI.ln(), 0.5)
    };
    while a < k as f64 / 2.0 {
        acc += a.ln();
        a += 1.0;
    }
    acc
}

/// `Q(a, x)` via the power series below `a + 1` and a Lentz continued
/// fraction above.
fn upper_gamma_q(k: usize, x: f64) -> f64 {
    let a = k as f64 / 2.0;
    if x <= 0.0 {
        return 1.0;
    }
    let front = (a * x.ln() - x - ln_gamma_half(k)).exp();
    if x < a + 1.0 {
        let (mut term, mut sum, mut ap) = (1.0 / a, 1.0 / a, a);
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - front * sum
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        front * h
    }
}

#[test]
fn agrees_with_incomplete_gamma_oracle() {
    let mut worst: f64 = 0.0;
    for n in 1..=24 {
        for i in 1..=120 {
            let psi = 0.1 * i as f64;
            let got = chi_square_tail(n, psi);
            let want = upper_gamma_q(n, psi * psi / 2.0);
            worst = worst.max((got - want).abs());
        }
    }
    assert!(worst <= 1e-9, "worst abs error {worst:e}");
}

#[test]
fn known_values() {
    assert!((chi_square_tail(2, 2.0) - (-2.0f64).exp()).abs() < 1e-12);
    assert!((chi_square_tail(1, 1.959964) - 0.05).abs() < 1e-6);
    assert!((chi_square_tail(3, 1e-9) - 1.0).abs() < 1e-12);
}

#[test]
fn monotone_in_psi() {
    for n in [1, 2, 5, 8, 13] {
        let mut prev = 1.0;
        for i in 1..=400 {
            let p = chi_square_tail(n, 0.03 * i as f64);
            assert!(p <= prev + 1e-15 && (0.0..=1.0).contains(&p));
            prev = p;
        }
    }
}

#[test]
fn laurent_massart_bound_dominates() {
    for n in 1..=16 {
        let start = (n as f64).sqrt() + 0.5;
        let mut psi = start;
        while psi <= 12.0 {
            assert!(chi_square_tail(n, psi) <= tail_upper_bound(n, psi).unwrap());
            psi += 0.05;
        }
    }
    let t: f64 = 1.0;
    let psi = (1.0 + 2.0 * t.sqrt() + 2.0 * t).sqrt();
    assert!((tail_upper_bound(1, psi).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
    assert!(matches!(tail_upper_bound(4, 2.0), Err(DgpError::BoundUndefined { .. })));
}

#[test]
fn coarse_bound_for_large_psi() {
    for n in 1..=16 {
        for k in 0..=20 {
            let psi = 10.0 + 0.5 * k as f64;
            assert!(chi_square_tail(n, psi) <= large_psi_bound(psi));
        }
    }
}

#[test]
fn tail_inverse_round_trips() {
    for n in [1, 4, 8, 16] {
        let psi = psi_for_tail(n, 0.05);
        assert!((chi_square_tail(n, psi) - 0.05).abs() < 1e-10);
    }
}

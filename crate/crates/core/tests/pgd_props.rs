use dgp_core::par::stream_rng;
use dgp_core::pgd::{pgd_minimize, project_to_ball, BallConstraint, ConvexSet, Objective, PgdConfig};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

struct Quadratic {
    target: DVector<f64>,
    scale: DVector<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (x - &self.target).component_mul(&self.scale).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.target).component_mul(&self.scale).component_mul(&self.scale) * 2.0
    }
}

#[test]
fn projection_beats_random_feasible_points() {
    let mut rng = stream_rng(1, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..6);
        let center = DVector::<f64>::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let radius = rng.random_range(0.1..5.0);
        let ball = BallConstraint::new(center.clone(), radius).unwrap();
        let x = DVector::<f64>::from_fn(n, |_, _| rng.random_range(-15.0..15.0));
        let p = project_to_ball(&x, &ball);
        assert!(ball.violation(&p) <= 1e-12);
        let best = (&p - &x).norm();
        for _ in 0..1000 {
            let dir = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal)).normalize();
            let y = &center + dir * radius * rng.random::<f64>().powf(1.0 / n as f64);
            assert!(best <= (&y - &x).norm() + 1e-12);
        }
    }
}

#[test]
fn every_iterate_is_feasible_on_seeded_runs() {
    let mut rng = stream_rng(2, 0);
    for run in 0..50 {
        let n = 4;
        let f = Quadratic {
            target: DVector::from_fn(n, |_, _| rng.random_range(-20.0..20.0)),
            scale: DVector::from_fn(n, |_, _| rng.random_range(0.2..2.0)),
        };
        let center = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let ball = BallConstraint::new(center.clone(), 4.0).unwrap();
        let cfg = PgdConfig {
            step_size: 0.05,
            max_iters: 300,
            grad_tolerance: 0.0,
        };
        let res = pgd_minimize(&f, &ball, &center, &cfg).unwrap();
        assert!(res.max_violation <= 1e-12, "run {run}: {}", res.max_violation);
        assert_eq!(res.trace.len(), 301);
        for w in res.trace.windows(2) {
            assert!(w[1].value <= w[0].value + 1e-12);
        }
    }
}

#[test]
fn constrained_minimizer_on_boundary() {
    let f = Quadratic {
        target: DVector::from_column_slice(&[10.0, 0.0]),
        scale: DVector::from_element(2, 1.0),
    };
    let ball = BallConstraint::new(DVector::zeros(2), 4.0).unwrap();
    let cfg = PgdConfig {
        step_size: 0.1,
        ..PgdConfig::default()
    };
    let res = pgd_minimize(&f, &ball, &DVector::zeros(2), &cfg).unwrap();
    assert!((res.x[0] - 4.0).abs() < 1e-9 && res.x[1].abs() < 1e-9);
}

#[test]
fn identical_inputs_give_identical_traces() {
    let f = Quadratic {
        target: DVector::from_column_slice(&[3.0, -7.0, 1.0]),
        scale: DVector::from_column_slice(&[1.0, 0.5, 2.0]),
    };
    let ball = BallConstraint::new(DVector::zeros(3), 4.0).unwrap();
    let a = pgd_minimize(&f, &ball, &DVector::zeros(3), &PgdConfig::default()).unwrap();
    let b = pgd_minimize(&f, &ball, &DVector::zeros(3), &PgdConfig::default()).unwrap();
    let bits = |r: &dgp_core::pgd::PgdResult| {
        r.trace
            .iter()
            .map(|e| (e.value.to_bits(), e.grad_norm.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}

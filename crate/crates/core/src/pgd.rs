//! Projected gradient descent with a fixed step over a convex feasible set.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{DgpError, Result};

/// Slack allowed when checking that an iterate is feasible.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// A differentiable objective.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.value(x), self.gradient(x))
    }
}

/// A closed convex set with a Euclidean projection.
pub trait ConvexSet {
    fn project(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Distance-like violation; zero for feasible points.
    fn violation(&self, x: &DVector<f64>) -> f64;
}

/// Closed Euclidean ball. A zero radius pins every projection to the center.
#[derive(Debug, Clone, PartialEq)]
pub struct BallConstraint {
    center: DVector<f64>,
    radius: f64,
}

impl BallConstraint {
    pub const DEFAULT_RADIUS: f64 = 4.0;

    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(DgpError::Config(format!(
                "ball radius must be finite and >= 0, got {radius}"
            )));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(DgpError::Config("ball center must be finite".into()));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        (x - &self.center).norm()
    }
}

/// Nearest point of the ball to `x`.
pub fn project_to_ball(x: &DVector<f64>, ball: &BallConstraint) -> DVector<f64> {
    let offset = x - &ball.center;
    let dist = offset.norm();
    if dist <= ball.radius {
        return x.clone();
    }
    if ball.radius == 0.0 {
        return ball.center.clone();
    }
    &ball.center + offset * (ball.radius / dist)
}

impl ConvexSet for BallConstraint {
    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        project_to_ball(x, self)
    }

    fn violation(&self, x: &DVector<f64>) -> f64 {
        (self.distance(x) - self.radius).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub step_size: f64,
    /// Zero evaluates the starting point only.
    pub max_iters: usize,
    /// Stop once the projected-gradient norm is at or below this.
    pub grad_tolerance: f64,
}

impl PgdConfig {
    pub const DEFAULT_STEP: f64 = 1e-2;
    pub const DEFAULT_ITERS: usize = 1000;

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(DgpError::Config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.grad_tolerance >= 0.0) {
            return Err(DgpError::Config("gradient tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            step_size: Self::DEFAULT_STEP,
            max_iters: Self::DEFAULT_ITERS,
            grad_tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdResult {
    pub x: DVector<f64>,
    /// One entry per visited iterate, starting with `x0`.
    pub trace: Vec<TraceEntry>,
    /// Largest constraint violation over all iterates.
    pub max_violation: f64,
}

impl PgdResult {
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }

    pub fn final_value(&self) -> f64 {
        self.trace.last().expect("trace is never empty").value
    }

    pub fn initial_value(&self) -> f64 {
        self.trace[0].value
    }
}

/// Runs `x_{k+1} = Π_C(x_k − γ ∇f(x_k))` from a feasible `x0`.
///
/// Terminates after `max_iters` steps or when `‖x_k − Π_C(x_k − γ∇f)‖/γ`
/// falls to a positive `grad_tolerance`. A zero tolerance always runs the
/// full iteration count.
pub fn pgd_minimize<F, C>(f: &F, set: &C, x0: &DVector<f64>, cfg: &PgdConfig) -> Result<PgdResult>
where
    F: Objective + ?Sized,
    C: ConvexSet + ?Sized,
{
    cfg.validate()?;
    if x0.len() != f.dim() {
        return Err(DgpError::DimensionMismatch {
            expected: f.dim(),
            got: x0.len(),
        });
    }
    let v0 = set.violation(x0);
    if v0 > FEASIBILITY_TOL {
        return Err(DgpError::Infeasible { violation: v0 });
    }
    let mut x = x0.clone();
    let mut trace = Vec::with_capacity(cfg.max_iters.min(100_000) + 1);
    let mut max_violation = v0;
    let mut k = 0;
    loop {
        let (value, grad) = f.value_and_gradient(&x);
        if !value.is_finite() {
            return Err(DgpError::Numerical {
                iter: k,
                what: "objective value".into(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(DgpError::Numerical {
                iter: k,
                what: "gradient".into(),
            });
        }
        trace.push(TraceEntry {
            iter: k,
            value,
            grad_norm: grad.norm(),
        });
        if k == cfg.max_iters {
            break;
        }
        let next = set.project(&(&x - &grad * cfg.step_size));
        let projected_grad = (&x - &next).norm() / cfg.step_size;
        if cfg.grad_tolerance > 0.0 && projected_grad <= cfg.grad_tolerance {
            break;
        }
        max_violation = max_violation.max(set.violation(&next));
        x = next;
        k += 1;
    }
    Ok(PgdResult {
        x,
        trace,
        max_violation,
    })
}

/// `iter,value,grad_norm` CSV with a header row.
pub fn trace_to_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from("iter,value,grad_norm\n");
    for e in trace {
        let _ = writeln!(out, "{},{:.17e},{:.17e}", e.iter, e.value, e.grad_norm);
    }
    out
}

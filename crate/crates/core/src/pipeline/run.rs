use nalgebra::DVector;
use serde_json::{json, Value};

use crate::error::{DgpError, Result};
use crate::geometry::{rough_align_detailed, MappingRule};
use crate::gradcheck::check_gradient;
use crate::io::{ImageGrid, Mask};
use crate::keypoints::KeyPointSet;
use crate::latent::{in_ellipse, LatentCode};
use crate::pgd::{Objective, TraceEntry};
use crate::synth::{DiscParams, FeatureMaps, SynthParams};
use crate::weight::weight_map;

use super::config::PipelineConfig;
use super::projector::Projector;
use super::search::{masked_pixel_loss, pattern_search, semantic_search, PatternObjective, SemanticObjective};

pub const MANIFEST_VERSION: &str = "1.0";

/// Finite-difference step of the automatic gradient spot check.
const SPOT_CHECK_STEP: f64 = 1e-4;
const SPOT_CHECK_TOL: f64 = 1e-4;

/// Frozen networks shared by every run.
#[derive(Debug, Clone, Copy)]
pub struct DgpModels<'a> {
    pub gen: &'a SynthParams,
    pub projector: &'a Projector,
    pub disc: &'a DiscParams,
    pub feats: &'a FeatureMaps,
}

#[derive(Debug, Clone, Copy)]
pub struct DgpInputs<'a> {
    pub model_img: &'a ImageGrid,
    pub model_kp: &'a KeyPointSet,
    pub cloth_img: &'a ImageGrid,
    pub cloth_kp: &'a KeyPointSet,
    pub body_mask: &'a Mask,
    pub rule: &'a MappingRule,
}

/// Masked pixel loss of each stage's output against the rough alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageLosses {
    pub projection: f64,
    pub semantic: f64,
    pub pattern: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub rough: ImageGrid,
    pub mask: Mask,
    pub w0: LatentCode,
    pub w1: LatentCode,
    pub theta0: DVector<f64>,
    pub theta: DVector<f64>,
    pub semantic_trace: Vec<TraceEntry>,
    pub pattern_trace: Vec<TraceEntry>,
    pub losses: StageLosses,
    /// Worst relative finite-difference error of the two search gradients.
    pub grad_check: Option<f64>,
    pub final_image: ImageGrid,
    pub semantic_max_violation: f64,
    pub pattern_max_violation: f64,
}

impl PipelineResult {
    /// Containment of `w0`, and both ball constraints, within round-off.
    pub fn check_invariants(&self, models: &DgpModels, cfg: &PipelineConfig) -> Result<()> {
        if !in_ellipse(&self.w0, &models.projector.basis, &cfg.truncation)? {
            return Err(DgpError::Infeasible {
                violation: models.projector.basis.mahalanobis_sq(&self.w0)?.sqrt() - cfg.truncation.psi(),
            });
        }
        let dw = (&self.w1.0 - &self.w0.0).norm() - cfg.semantic_radius;
        let dt = (&self.theta - &self.theta0).norm() - cfg.pattern_radius;
        let worst = dw.max(dt);
        if worst > 1e-12 * (1.0 + cfg.semantic_radius.max(cfg.pattern_radius)) {
            return Err(DgpError::Infeasible { violation: worst });
        }
        Ok(())
    }

    fn stage_summary(trace: &[TraceEntry], violation: f64) -> Value {
        json!({
            "iterations": trace.len().saturating_sub(1),
            "initial_objective": trace.first().map(|e| e.value),
            "final_objective": trace.last().map(|e| e.value),
            "max_violation": violation,
        })
    }

    /// Versioned JSON summary of a run.
    pub fn manifest(&self, cfg: &PipelineConfig, seeds: Value) -> Value {
        json!({
            "spec_version": MANIFEST_VERSION,
            "seeds": seeds,
            "config": config_json(cfg),
            "stages": {
                "projection": {
                    "masked_pixel_loss": self.losses.projection,
                    "w0": self.w0.as_slice(),
                },
                "semantic": {
                    "masked_pixel_loss": self.losses.semantic,
                    "w1": self.w1.as_slice(),
                    "trace": Self::stage_summary(&self.semantic_trace, self.semantic_max_violation),
                },
                "pattern": {
                    "masked_pixel_loss": self.losses.pattern,
                    "theta_shift": (&self.theta - &self.theta0).norm(),
                    "trace": Self::stage_summary(&self.pattern_trace, self.pattern_max_violation),
                },
            },
            "grad_check_max_rel_error": self.grad_check,
            "mask_pixels": self.mask.count(),
        })
    }
}

pub fn config_json(cfg: &PipelineConfig) -> Value {
    let lw = |w: &super::LossWeights| json!({"pixel": w.pixel, "feature": w.feature, "attribute": w.attribute, "adversarial": w.adversarial});
    let pgd = |p: &crate::pgd::PgdConfig| json!({"step_size": p.step_size, "max_iters": p.max_iters, "grad_tolerance": p.grad_tolerance});
    json!({
        "projector_weights": lw(&cfg.projector_weights),
        "search_weights": lw(&cfg.search_weights),
        "pattern_weights": {"pixel": cfg.pattern_weights.pixel, "adversarial": cfg.pattern_weights.adversarial},
        "psi": cfg.truncation.psi(),
        "semantic_radius": cfg.semantic_radius,
        "pattern_radius": cfg.pattern_radius,
        "semantic_pgd": pgd(&cfg.semantic_pgd),
        "pattern_pgd": pgd(&cfg.pattern_pgd),
        "train": {
            "iterations": cfg.train.iterations,
            "batch_size": cfg.train.batch_size,
            "learning_rate": cfg.train.learning_rate,
            "lr_scale": cfg.train.lr_scale,
        },
        "pca_samples": cfg.pca_samples,
        "align": {
            "grid_pitch": cfg.align.grid_pitch,
            "arap_max_iters": cfg.align.arap_max_iters,
            "arap_tol": cfg.align.arap_tol,
        },
        "check_gradients": cfg.check_gradients,
    })
}

fn spot_check(obj: &dyn Objective, x: &DVector<f64>) -> f64 {
    check_gradient(|v| obj.value(v), &obj.gradient(x), x, SPOT_CHECK_STEP)
}

/// Rough alignment followed by [`run_from_target`] on the intersection of
/// the body mask and the warped garment.
pub fn run_dgp(models: &DgpModels, inputs: &DgpInputs, cfg: &PipelineConfig) -> Result<PipelineResult> {
    cfg.validate()?;
    let align = rough_align_detailed(
        inputs.model_img,
        inputs.model_kp,
        inputs.cloth_img,
        inputs.cloth_kp,
        inputs.rule,
        &cfg.align,
    )
    .map_err(|e| e.in_stage("rough_align"))?;
    let mask = inputs
        .body_mask
        .and(&align.clothing_mask)
        .map_err(|e| e.in_stage("rough_align"))?;
    run_from_target(models, &align.composite, &mask, cfg)
}

/// Projection, semantic search and pattern search against `x_a`.
pub fn run_from_target(
    models: &DgpModels,
    x_a: &ImageGrid,
    mask: &Mask,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    cfg.validate()?;
    let gen = models.gen;
    let wmap = weight_map(mask);
    let target = DVector::from_column_slice(x_a.values());
    let loss_at =
        |w: &LatentCode, theta: &DVector<f64>| masked_pixel_loss(&gen.forward(&w.0, theta).output, &target, &wmap);

    let w0 = models
        .projector
        .project_image(x_a)
        .map_err(|e| e.in_stage("projection"))?;
    if mask.shape() != x_a.shape() {
        return Err(DgpError::ShapeMismatch(x_a.shape(), mask.shape()).in_stage("projection"));
    }

    let grad_check = if cfg.check_gradients {
        let sem = SemanticObjective::new(gen, models.disc, models.feats, cfg.search_weights, x_a, &wmap)
            .map_err(|e| e.in_stage("semantic"))?;
        let e1 = spot_check(&sem, &w0.0);
        let pat = PatternObjective::new(gen, models.disc, cfg.pattern_weights, &w0, x_a, &wmap)
            .map_err(|e| e.in_stage("pattern"))?;
        let e2 = spot_check(&pat, &gen.theta);
        for (stage, err) in [("semantic", e1), ("pattern", e2)] {
            if !(err < SPOT_CHECK_TOL) {
                return Err(DgpError::Numerical {
                    iter: 0,
                    what: format!("gradient (finite-difference relative error {err:e})"),
                }
                .in_stage(stage));
            }
        }
        Some(e1.max(e2))
    } else {
        None
    };

    let sem = semantic_search(gen, models.projector, models.disc, models.feats, x_a, mask, cfg)
        .map_err(|e| e.in_stage("semantic"))?;
    let pat = pattern_search(gen, models.disc, &sem.w1, x_a, mask, cfg).map_err(|e| e.in_stage("pattern"))?;

    let (rows, cols) = gen.image_shape();
    let final_out = gen.forward(&sem.w1.0, &pat.theta).output;
    let losses = StageLosses {
        projection: loss_at(&w0, &gen.theta),
        semantic: loss_at(&sem.w1, &gen.theta),
        pattern: masked_pixel_loss(&final_out, &target, &wmap),
    };
    Ok(PipelineResult {
        rough: x_a.clone(),
        mask: mask.clone(),
        w0,
        w1: sem.w1,
        theta0: gen.theta.clone(),
        theta: pat.theta,
        semantic_trace: sem.pgd.trace,
        pattern_trace: pat.pgd.trace,
        losses,
        grad_check,
        final_image: ImageGrid::new(rows, cols, final_out.as_slice().to_vec())?,
        semantic_max_violation: sem.pgd.max_violation,
        pattern_max_violation: pat.pgd.max_violation,
    })
}

use nalgebra::DVector;

use crate::error::{DgpError, Result};
use crate::io::{ImageGrid, Mask};
use crate::latent::LatentCode;
use crate::pgd::{pgd_minimize, BallConstraint, Objective, PgdResult};
use crate::synth::{DiscParams, FeatureMap, FeatureMaps, SynthParams};
use crate::weight::{weight_map, WeightMap};

use super::config::{LossWeights, PatternWeights, PipelineConfig};
use super::projector::Projector;

fn flat(img: &ImageGrid) -> DVector<f64> {
    DVector::from_column_slice(img.values())
}

fn check_shapes(gen: &SynthParams, img: &ImageGrid, mask: &Mask) -> Result<()> {
    if img.shape() != gen.image_shape() {
        return Err(DgpError::ShapeMismatch(gen.image_shape(), img.shape()));
    }
    if mask.shape() != gen.image_shape() {
        return Err(DgpError::ShapeMismatch(gen.image_shape(), mask.shape()));
    }
    Ok(())
}

/// `‖W⊙y − W⊙x‖²` on flattened images.
pub fn masked_pixel_loss(y: &DVector<f64>, x: &DVector<f64>, w: &WeightMap) -> f64 {
    y.iter()
        .zip(x.iter())
        .zip(w.values())
        .map(|((a, b), wi)| {
            let d = wi * a - wi * b;
            d * d
        })
        .sum()
}

/// Unweighted terms of the semantic objective at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SearchLosses {
    pub pixel: f64,
    pub feature: f64,
    pub attribute: f64,
    pub adversarial: f64,
    pub total: f64,
}

/// Four-term semantic objective over the latent code `w`.
pub struct SemanticObjective<'a> {
    gen: &'a SynthParams,
    disc: &'a DiscParams,
    feats: &'a FeatureMaps,
    weights: LossWeights,
    mask: DVector<f64>,
    masked_target: DVector<f64>,
    target_perceptual: DVector<f64>,
    target_attribute: DVector<f64>,
}

impl<'a> SemanticObjective<'a> {
    pub fn new(
        gen: &'a SynthParams,
        disc: &'a DiscParams,
        feats: &'a FeatureMaps,
        weights: LossWeights,
        target: &ImageGrid,
        wmap: &WeightMap,
    ) -> Result<Self> {
        if target.shape() != gen.image_shape() || wmap.shape() != gen.image_shape() {
            return Err(DgpError::ShapeMismatch(gen.image_shape(), target.shape()));
        }
        let mask = DVector::from_column_slice(wmap.values());
        let masked_target = flat(target).component_mul(&mask);
        Ok(Self {
            gen,
            disc,
            feats,
            weights,
            target_perceptual: feats.perceptual.apply(&masked_target),
            target_attribute: feats.attribute.apply(&masked_target),
            mask,
            masked_target,
        })
    }

    pub fn losses(&self, w: &DVector<f64>) -> SearchLosses {
        self.evaluate(w, false).0
    }

    fn evaluate(&self, w: &DVector<f64>, want_grad: bool) -> (SearchLosses, Option<DVector<f64>>) {
        let cache = self.gen.forward(w, &self.gen.theta);
        let y = &cache.output;
        let my = y.component_mul(&self.mask);
        let resid = &my - &self.masked_target;
        let fp = self.feats.perceptual.apply(&my) - &self.target_perceptual;
        let fa = self.feats.attribute.apply(&my) - &self.target_attribute;
        let (adv, adv_grad) = self.disc.fake_log_loss(y);
        let lw = &self.weights;
        let mut l = SearchLosses {
            pixel: resid.norm_squared(),
            feature: fp.norm_squared(),
            attribute: fa.norm_squared(),
            adversarial: adv,
            total: 0.0,
        };
        l.total = lw.pixel * l.pixel + lw.feature * l.feature + lw.attribute * l.attribute + lw.adversarial * adv;
        if !want_grad {
            return (l, None);
        }
        let mut g_masked = resid * (2.0 * lw.pixel);
        if lw.feature != 0.0 {
            g_masked += self.feats.perceptual.vjp(&my, &(fp * (2.0 * lw.feature)));
        }
        if lw.attribute != 0.0 {
            g_masked += self.feats.attribute.vjp(&my, &(fa * (2.0 * lw.attribute)));
        }
        let g_y = g_masked.component_mul(&self.mask) + adv_grad * lw.adversarial;
        (l, Some(self.gen.vjp_latent(&cache, &g_y)))
    }
}

impl Objective for SemanticObjective<'_> {
    fn dim(&self) -> usize {
        self.gen.latent_dim()
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        self.evaluate(w, false).0.total
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        self.evaluate(w, true).1.unwrap()
    }

    fn value_and_gradient(&self, w: &DVector<f64>) -> (f64, DVector<f64>) {
        let (l, g) = self.evaluate(w, true);
        (l.total, g.unwrap())
    }
}

/// `η_p ‖W⊙(G_θ(w) − x)‖ + η_adv log(1 − D(G_θ(w)))` over `θ` with `w` fixed.
pub struct PatternObjective<'a> {
    disc: &'a DiscParams,
    weights: PatternWeights,
    mask: DVector<f64>,
    base: DVector<f64>,
    target: DVector<f64>,
}

impl<'a> PatternObjective<'a> {
    pub fn new(
        gen: &SynthParams,
        disc: &'a DiscParams,
        weights: PatternWeights,
        w: &LatentCode,
        target: &ImageGrid,
        wmap: &WeightMap,
    ) -> Result<Self> {
        if w.dim() != gen.latent_dim() {
            return Err(DgpError::DimensionMismatch {
                expected: gen.latent_dim(),
                got: w.dim(),
            });
        }
        if target.shape() != gen.image_shape() || wmap.shape() != gen.image_shape() {
            return Err(DgpError::ShapeMismatch(gen.image_shape(), target.shape()));
        }
        Ok(Self {
            disc,
            weights,
            mask: DVector::from_column_slice(wmap.values()),
            base: gen.base_output(&w.0).output,
            target: flat(target),
        })
    }

    pub fn image(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.base + theta
    }

    fn masked_residual(&self, y: &DVector<f64>) -> DVector<f64> {
        (y - &self.target).component_mul(&self.mask)
    }
}

impl Objective for PatternObjective<'_> {
    fn dim(&self) -> usize {
        self.base.len()
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let y = self.image(theta);
        let (adv, _) = self.disc.fake_log_loss(&y);
        self.weights.pixel * self.masked_residual(&y).norm() + self.weights.adversarial * adv
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.value_and_gradient(theta).1
    }

    /// The norm term is not differentiable at a zero residual; its
    /// subgradient there is taken as zero.
    fn value_and_gradient(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let y = self.image(theta);
        let r = self.masked_residual(&y);
        let norm = r.norm();
        let (adv, adv_grad) = self.disc.fake_log_loss(&y);
        let mut g = adv_grad * self.weights.adversarial;
        if norm > 0.0 {
            g += r.component_mul(&self.mask) * (self.weights.pixel / norm);
        }
        (self.weights.pixel * norm + self.weights.adversarial * adv, g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticOutcome {
    pub w0: LatentCode,
    pub w1: LatentCode,
    pub pgd: PgdResult,
}

/// Starts from `w0 = P(x_a)` and minimizes the semantic objective over
/// the ball of radius `cfg.semantic_radius` around it.
#[allow(clippy::too_many_arguments)]
pub fn semantic_search(
    gen: &SynthParams,
    proj: &Projector,
    disc: &DiscParams,
    feats: &FeatureMaps,
    x_a: &ImageGrid,
    mask: &Mask,
    cfg: &PipelineConfig,
) -> Result<SemanticOutcome> {
    check_shapes(gen, x_a, mask)?;
    let w0 = proj.project_image(x_a)?;
    let wmap = weight_map(mask);
    let obj = SemanticObjective::new(gen, disc, feats, cfg.search_weights, x_a, &wmap)?;
    let ball = BallConstraint::new(w0.0.clone(), cfg.semantic_radius)?;
    let pgd = pgd_minimize(&obj, &ball, &w0.0, &cfg.semantic_pgd)?;
    Ok(SemanticOutcome {
        w0,
        w1: LatentCode(pgd.x.clone()),
        pgd,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternOutcome {
    pub theta: DVector<f64>,
    pub pgd: PgdResult,
}

/// Minimizes the pattern objective over the noise term, starting from the
/// generator's own `θ`.
pub fn pattern_search(
    gen: &SynthParams,
    disc: &DiscParams,
    w1: &LatentCode,
    x_a: &ImageGrid,
    mask: &Mask,
    cfg: &PipelineConfig,
) -> Result<PatternOutcome> {
    check_shapes(gen, x_a, mask)?;
    let wmap = weight_map(mask);
    let obj = PatternObjective::new(gen, disc, cfg.pattern_weights, w1, x_a, &wmap)?;
    let ball = BallConstraint::new(gen.theta.clone(), cfg.pattern_radius)?;
    let pgd = pgd_minimize(&obj, &ball, &gen.theta, &cfg.pattern_pgd)?;
    Ok(PatternOutcome {
        theta: pgd.x.clone(),
        pgd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradient;
    use crate::synth::SynthShape;

    fn gen() -> SynthParams {
        SynthParams::random(
            SynthShape {
                latent_dim: 4,
                rows: 6,
                cols: 6,
                hidden: 8,
            },
            11,
        )
        .unwrap()
    }

    fn ring_mask() -> Mask {
        Mask::from_fn(6, 6, |r, c| (1..5).contains(&r) && (0..6).contains(&c))
    }

    #[test]
    fn semantic_gradient_matches_finite_differences() {
        let g = gen();
        let disc = DiscParams::random(36, 0.3, 2);
        let feats = FeatureMaps::seeded((6, 6), 3).unwrap();
        let target = ImageGrid::from_fn(6, 6, |r, c| ((r * 6 + c) as f64 * 0.37).sin());
        let wmap = weight_map(&ring_mask());
        let lw = LossWeights {
            pixel: 1.0,
            feature: 0.4,
            attribute: 0.2,
            adversarial: 0.8,
        };
        let obj = SemanticObjective::new(&g, &disc, &feats, lw, &target, &wmap).unwrap();
        let w = DVector::from_column_slice(&[0.3, -0.2, 0.5, 0.1]);
        let f = |v: &DVector<f64>| obj.value(v);
        assert!(check_gradient(f, &obj.gradient(&w), &w, 1e-5) < 1e-6);
    }

    #[test]
    fn pattern_gradient_matches_finite_differences() {
        let g = gen();
        let disc = DiscParams::random(36, 0.3, 2);
        let target = ImageGrid::from_fn(6, 6, |r, c| ((r + 2 * c) as f64).cos());
        let wmap = weight_map(&ring_mask());
        let w = LatentCode::from_slice(&[0.1, 0.2, -0.3, 0.0]);
        let obj = PatternObjective::new(&g, &disc, PatternWeights::default(), &w, &target, &wmap).unwrap();
        let theta = DVector::from_fn(36, |i, _| 0.01 * i as f64);
        let f = |v: &DVector<f64>| obj.value(v);
        assert!(check_gradient(f, &obj.gradient(&theta), &theta, 1e-5) < 1e-6);
    }

    #[test]
    fn flat_pattern_objective_leaves_theta() {
        let g = gen();
        let disc = DiscParams::zeros(36);
        let target = ImageGrid::zeros(6, 6);
        let mut cfg = PipelineConfig::default();
        cfg.pattern_weights.pixel = 0.0;
        cfg.pattern_pgd.max_iters = 50;
        let out = pattern_search(
            &g,
            &disc,
            &LatentCode::from_slice(&[0.0; 4]),
            &target,
            &ring_mask(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.theta, g.theta);
    }

    #[test]
    fn masked_pixel_loss_matches_masked_l2() {
        let a = ImageGrid::from_fn(6, 6, |r, c| (r * c) as f64 * 0.1);
        let b = ImageGrid::from_fn(6, 6, |r, _| r as f64);
        let wmap = weight_map(&ring_mask());
        let expected = crate::weight::masked_l2(&a, &b, &wmap).unwrap();
        assert_eq!(masked_pixel_loss(&flat(&a), &flat(&b), &wmap), expected);
    }
}

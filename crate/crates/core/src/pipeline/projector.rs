//! The projector `P(x) = Q Λ^{1/2} Tr(E(x)) + μ` and its adversarial training.

use nalgebra::{DMatrix, DVector};

use crate::error::{DgpError, Result};
use crate::io::ImageGrid;
use crate::latent::{truncate, LatentCode, PcaBasis, StrengthCode, TruncationConfig};
use crate::par::{map_indexed, Execution};
use crate::synth::{sample_style, DiscParams, EncoderParams, FeatureMap, FeatureMaps, SynthParams, D_CLAMP};

use super::config::{LossWeights, PipelineConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub basis: PcaBasis,
    pub encoder: EncoderParams,
    pub truncation: TruncationConfig,
}

struct Forward {
    strengths: DVector<f64>,
    latent: DVector<f64>,
}

impl Projector {
    /// Projector with a zero encoder; every input maps to the mean.
    pub fn untrained(basis: PcaBasis, pixels: usize, truncation: TruncationConfig) -> Self {
        let n = basis.dim();
        Self {
            basis,
            encoder: EncoderParams::zeros(n, pixels),
            truncation,
        }
    }

    fn forward(&self, x: &DVector<f64>, scaled: &DMatrix<f64>) -> Forward {
        let strengths = self.encoder.apply(x);
        let t = truncate(&StrengthCode(strengths.clone()), &self.truncation).0;
        let latent = scaled * t + self.basis.mean();
        Forward { strengths, latent }
    }

    pub fn project(&self, x: &DVector<f64>) -> LatentCode {
        LatentCode(self.forward(x, &self.basis.scaled_components()).latent)
    }

    pub fn project_image(&self, img: &ImageGrid) -> Result<LatentCode> {
        if img.len() != self.encoder.weights.ncols() {
            return Err(DgpError::DimensionMismatch {
                expected: self.encoder.weights.ncols(),
                got: img.len(),
            });
        }
        Ok(self.project(&DVector::from_column_slice(img.values())))
    }

    /// Pulls a gradient on `Tr(s)` back to `s`.
    fn truncation_vjp(&self, s: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64> {
        let psi = self.truncation.psi();
        let norm = s.norm();
        if norm < psi {
            return upstream.clone();
        }
        let u = s / norm;
        (upstream - &u * u.dot(upstream)) * (psi / norm)
    }
}

/// Batch-mean loss terms of projector training.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectorLosses {
    pub pixel: f64,
    pub feature: f64,
    pub attribute: f64,
    pub adversarial: f64,
    pub total: f64,
}

impl ProjectorLosses {
    fn add(&mut self, o: &ProjectorLosses) {
        self.pixel += o.pixel;
        self.feature += o.feature;
        self.attribute += o.attribute;
        self.adversarial += o.adversarial;
        self.total += o.total;
    }

    fn scale(&mut self, k: f64) {
        self.pixel *= k;
        self.feature *= k;
        self.attribute *= k;
        self.adversarial *= k;
        self.total *= k;
    }

    fn is_finite(&self) -> bool {
        [self.pixel, self.feature, self.attribute, self.adversarial, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

struct SampleGrad {
    losses: ProjectorLosses,
    /// Gradient of the weighted loss with respect to the strength code.
    grad_strength: DVector<f64>,
}

fn feature_term(map: &dyn FeatureMap, y: &DVector<f64>, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let diff = map.apply(y) - map.apply(x);
    (diff.norm_squared(), map.vjp(y, &(diff * 2.0)))
}

fn sample_grad(
    gen: &SynthParams,
    proj: &Projector,
    scaled: &DMatrix<f64>,
    disc: &DiscParams,
    feats: &FeatureMaps,
    weights: &LossWeights,
    x: &DVector<f64>,
) -> SampleGrad {
    let fwd = proj.forward(x, scaled);
    let cache = gen.forward(&fwd.latent, &gen.theta);
    let y = &cache.output;
    let resid = y - x;
    let pixel = resid.norm_squared();
    let mut grad_y = resid * (2.0 * weights.pixel);
    let mut losses = ProjectorLosses {
        pixel,
        ..Default::default()
    };
    if weights.feature != 0.0 {
        let (v, g) = feature_term(&feats.perceptual, y, x);
        losses.feature = v;
        grad_y += g * weights.feature;
    }
    if weights.attribute != 0.0 {
        let (v, g) = feature_term(&feats.attribute, y, x);
        losses.attribute = v;
        grad_y += g * weights.attribute;
    }
    let (adv, adv_grad) = disc.fake_log_loss(y);
    losses.adversarial = adv;
    if weights.adversarial != 0.0 {
        grad_y += adv_grad * weights.adversarial;
    }
    losses.total = weights.pixel * losses.pixel
        + weights.feature * losses.feature
        + weights.attribute * losses.attribute
        + weights.adversarial * losses.adversarial;
    let grad_w = gen.vjp_latent(&cache, &grad_y);
    let grad_t = scaled.tr_mul(&grad_w);
    SampleGrad {
        losses,
        grad_strength: proj.truncation_vjp(&fwd.strengths, &grad_t),
    }
}

/// Mean weighted loss over `xs` and its gradient with respect to the
/// encoder weights and bias.
pub fn projector_batch_loss(
    gen: &SynthParams,
    proj: &Projector,
    disc: &DiscParams,
    feats: &FeatureMaps,
    weights: &LossWeights,
    xs: &[DVector<f64>],
) -> (ProjectorLosses, DMatrix<f64>, DVector<f64>) {
    let scaled = proj.basis.scaled_components();
    let per = map_indexed(xs.len(), Execution::default(), |i| {
        sample_grad(gen, proj, &scaled, disc, feats, weights, &xs[i])
    });
    let n = proj.basis.dim();
    let mut losses = ProjectorLosses::default();
    let mut gw = DMatrix::zeros(n, gen.pixels());
    let mut gb = DVector::zeros(n);
    for (g, x) in per.iter().zip(xs) {
        losses.add(&g.losses);
        gw.ger(1.0, &g.grad_strength, x, 1.0);
        gb += &g.grad_strength;
    }
    let k = 1.0 / xs.len() as f64;
    losses.scale(k);
    (losses, gw * k, gb * k)
}

/// Batch mean of `log(1 − D(G(P(x)))) + log D(x)` and its gradient in the
/// discriminator weights and bias.
fn disc_objective(
    gen: &SynthParams,
    proj: &Projector,
    disc: &DiscParams,
    xs: &[DVector<f64>],
) -> (f64, DVector<f64>, f64) {
    let scaled = proj.basis.scaled_components();
    let per = map_indexed(xs.len(), Execution::default(), |i| {
        let x = &xs[i];
        let y = gen.forward(&proj.forward(x, &scaled).latent, &gen.theta).output;
        let py = disc.prob(&y);
        let px = disc.prob(x);
        let pyc = py.clamp(D_CLAMP, 1.0 - D_CLAMP);
        let pxc = px.clamp(D_CLAMP, 1.0 - D_CLAMP);
        let value = (1.0 - pyc).ln() + pxc.ln();
        // d/da log(1 − σ(a)) = −σ(a); d/da log σ(a) = 1 − σ(a)
        let cy = if py == pyc { -py } else { 0.0 };
        let cx = if px == pxc { 1.0 - px } else { 0.0 };
        (value, y * cy + x * cx, cy + cx)
    });
    let k = 1.0 / xs.len() as f64;
    let mut value = 0.0;
    let mut gw = DVector::zeros(gen.pixels());
    let mut gb = 0.0;
    for (v, g, b) in &per {
        value += v;
        gw += g;
        gb += b;
    }
    (value * k, gw * k, gb * k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStep {
    pub iter: usize,
    pub losses: ProjectorLosses,
    pub disc_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProjector {
    pub projector: Projector,
    pub disc: DiscParams,
    pub trace: Vec<TrainStep>,
}

/// Seed of the data batch drawn at training iteration `iter`.
pub(crate) fn batch_seed(seed: u64, iter: usize) -> u64 {
    seed ^ (iter as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Generator images for the data batch of iteration `iter`.
pub fn training_batch(gen: &SynthParams, batch: usize, seed: u64, iter: usize) -> Vec<DVector<f64>> {
    sample_style(gen, batch, batch_seed(seed, iter))
        .into_iter()
        .map(|w| gen.forward(&w.0, &gen.theta).output)
        .collect()
}

/// Alternating gradient steps: the encoder descends the weighted projector
/// loss, then the discriminator ascends its objective on the same batch.
/// The generator is never modified.
pub fn train_projector(
    gen: &SynthParams,
    basis: &PcaBasis,
    feats: &FeatureMaps,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<TrainedProjector> {
    cfg.validate()?;
    if basis.dim() != gen.latent_dim() {
        return Err(DgpError::DimensionMismatch {
            expected: gen.latent_dim(),
            got: basis.dim(),
        });
    }
    let lr = cfg.train.effective_lr();
    let mut proj = Projector::untrained(basis.clone(), gen.pixels(), cfg.truncation);
    let mut disc = DiscParams::zeros(gen.pixels());
    let mut trace = Vec::with_capacity(cfg.train.iterations);
    for iter in 0..cfg.train.iterations {
        let xs = training_batch(gen, cfg.train.batch_size, seed, iter);
        let (losses, gw, gb) = projector_batch_loss(gen, &proj, &disc, feats, &cfg.projector_weights, &xs);
        if !losses.is_finite() {
            return Err(DgpError::Numerical {
                iter,
                what: "projector loss".into(),
            });
        }
        proj.encoder.weights -= gw * lr;
        proj.encoder.bias -= gb * lr;

        let (d_obj, dgw, dgb) = disc_objective(gen, &proj, &disc, &xs);
        if !d_obj.is_finite() {
            return Err(DgpError::Numerical {
                iter,
                what: "discriminator objective".into(),
            });
        }
        disc.weights += dgw * lr;
        disc.bias += dgb * lr;
        trace.push(TrainStep {
            iter,
            losses,
            disc_objective: d_obj,
        });
    }
    Ok(TrainedProjector {
        projector: proj,
        disc,
        trace,
    })
}

/// Mean per-pixel squared error of `G(P(x))` against `x`.
pub fn reconstruction_mse(gen: &SynthParams, proj: &Projector, xs: &[DVector<f64>]) -> f64 {
    let per = map_indexed(xs.len(), Execution::default(), |i| {
        let w = proj.project(&xs[i]);
        (gen.forward(&w.0, &gen.theta).output - &xs[i]).norm_squared()
    });
    per.iter().sum::<f64>() / (xs.len() * gen.pixels()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradient;
    use crate::latent::fit_pca;
    use crate::synth::SynthShape;

    fn setup() -> (SynthParams, PcaBasis, FeatureMaps) {
        let shape = SynthShape {
            latent_dim: 3,
            rows: 4,
            cols: 4,
            hidden: 5,
        };
        let gen = SynthParams::random(shape, 5).unwrap();
        let basis = fit_pca(&sample_style(&gen, 2000, 1)).unwrap();
        let feats = FeatureMaps::seeded((4, 4), 8).unwrap();
        (gen, basis, feats)
    }

    #[test]
    fn truncation_vjp_matches_finite_differences() {
        let (gen, basis, _) = setup();
        let proj = Projector::untrained(basis, gen.pixels(), TruncationConfig::new(1.0).unwrap());
        let s = DVector::from_column_slice(&[0.9, -1.1, 0.4]);
        let up = DVector::from_column_slice(&[0.3, 0.2, -0.7]);
        let f = |s: &DVector<f64>| truncate(&StrengthCode(s.clone()), &proj.truncation).0.dot(&up);
        let g = proj.truncation_vjp(&s, &up);
        assert!(check_gradient(f, &g, &s, 1e-6) < 1e-7);
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let (gen, basis, feats) = setup();
        let mut proj = Projector::untrained(basis, gen.pixels(), TruncationConfig::new(2.0).unwrap());
        let mut rng = crate::par::stream_rng(3, 0);
        use rand::Rng;
        proj.encoder.weights = DMatrix::from_fn(3, 16, |_, _| rng.random_range(-0.3..0.3));
        proj.encoder.bias = DVector::from_fn(3, |_, _| rng.random_range(-0.3..0.3));
        let disc = DiscParams::random(16, 0.5, 1);
        let xs = training_batch(&gen, 4, 2, 0);
        let w = LossWeights {
            pixel: 1.0,
            feature: 0.5,
            attribute: 0.3,
            adversarial: 0.7,
        };
        let (_, gw, gb) = projector_batch_loss(&gen, &proj, &disc, &feats, &w, &xs);
        let flat = |m: &DMatrix<f64>, b: &DVector<f64>| {
            DVector::from_iterator(m.len() + b.len(), m.iter().chain(b.iter()).copied())
        };
        let x0 = flat(&proj.encoder.weights, &proj.encoder.bias);
        let f = |p: &DVector<f64>| {
            let mut q = proj.clone();
            q.encoder.weights = DMatrix::from_column_slice(3, 16, &p.as_slice()[..48]);
            q.encoder.bias = DVector::from_column_slice(&p.as_slice()[48..]);
            projector_batch_loss(&gen, &q, &disc, &feats, &w, &xs).0.total
        };
        assert!(check_gradient(f, &flat(&gw, &gb), &x0, 1e-5) < 1e-5);
    }

    #[test]
    fn projected_codes_stay_in_ellipse_during_training() {
        let (gen, basis, feats) = setup();
        let mut cfg = PipelineConfig {
            truncation: TruncationConfig::new(1.5).unwrap(),
            ..PipelineConfig::default()
        };
        cfg.train.iterations = 20;
        cfg.train.lr_scale = 50.0;
        let trained = train_projector(&gen, &basis, &feats, &cfg, 4).unwrap();
        for x in training_batch(&gen, 64, 99, 0) {
            let w = trained.projector.project(&x);
            assert!(crate::latent::in_ellipse(&w, &basis, &cfg.truncation).unwrap());
        }
        assert_eq!(trained.trace.len(), 20);
    }
}

//! A small differentiable generator, discriminator, encoder and feature
//! maps with hand-written gradients.
//!
//! * mapping: `w = B z + c0`, `z ~ N(0, I)`, so the style space is exactly Gaussian
//! * generator: `G_θ(w) = A2 tanh(A1 w + b1) + b2 + θ`
//! * discriminator: `D(x) = sigmoid(dᵀx + e)`
//! * encoder: `E(x) = M x + m0`
//! * feature map: `V(x) = tanh(F x)`

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DgpError, Result};
use crate::io::{ImageGrid, Sections};
use crate::latent::{LatentCode, StrengthCode};
use crate::par::{map_indexed, stream_rng, Execution};

/// Samples per independently seeded batch in [`sample_style`].
pub const SAMPLE_BATCH: usize = 4096;

/// Clamp applied to discriminator outputs before taking logarithms.
pub const D_CLAMP: f64 = 1e-6;

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Sizes of the toy stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthShape {
    pub latent_dim: usize,
    pub rows: usize,
    pub cols: usize,
    pub hidden: usize,
}

impl SynthShape {
    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }
}

impl Default for SynthShape {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            rows: 16,
            cols: 16,
            hidden: 32,
        }
    }
}

/// Generator parameters including the mapping network and the per-pixel
/// noise-injection term `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub shape: SynthShape,
    pub mapping: DMatrix<f64>,
    pub mapping_offset: DVector<f64>,
    pub a1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub a2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub theta: DVector<f64>,
    pub seed: u64,
}

/// Forward intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct GenCache {
    /// `tanh(A1 w + b1)`
    pub hidden: DVector<f64>,
    pub output: DVector<f64>,
}

impl SynthParams {
    /// Seeded random stack. The mapping has a graded spectrum so fitted
    /// strengths are well separated.
    pub fn random(shape: SynthShape, seed: u64) -> Result<Self> {
        let SynthShape {
            latent_dim: n,
            hidden: h,
            ..
        } = shape;
        if n == 0 || h == 0 || shape.rows == 0 || shape.cols == 0 {
            return Err(DgpError::Config("toy sizes must be positive".into()));
        }
        let rc = shape.pixels();
        let mut rng = stream_rng(seed, 0x5eed);
        let mut mapping = gaussian_matrix(&mut rng, n, n, 1.0 / (n as f64).sqrt());
        for i in 0..n {
            let scale = 2.0 - 1.5 * i as f64 / (n.max(2) - 1) as f64;
            mapping.row_mut(i).scale_mut(scale);
        }
        let mapping_offset = gaussian_vector(&mut rng, n, 0.5);
        let a1 = gaussian_matrix(&mut rng, h, n, 0.5 / (n as f64).sqrt());
        let b1 = gaussian_vector(&mut rng, h, 0.1);
        let a2 = gaussian_matrix(&mut rng, rc, h, 1.0 / (h as f64).sqrt());
        let b2 = gaussian_vector(&mut rng, rc, 0.1);
        Ok(Self {
            shape,
            mapping,
            mapping_offset,
            a1,
            b1,
            a2,
            b2,
            theta: DVector::zeros(rc),
            seed,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.shape.latent_dim
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.shape.rows, self.shape.cols)
    }

    pub fn pixels(&self) -> usize {
        self.shape.pixels()
    }

    pub fn with_theta(&self, theta: DVector<f64>) -> Self {
        assert_eq!(theta.len(), self.pixels());
        Self { theta, ..self.clone() }
    }

    fn check_latent(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.latent_dim() {
            return Err(DgpError::DimensionMismatch {
                expected: self.latent_dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// `A2 tanh(A1 w + b1) + b2`, without the noise term.
    pub fn base_output(&self, w: &DVector<f64>) -> GenCache {
        let hidden = (&self.a1 * w + &self.b1).map(f64::tanh);
        let output = &self.a2 * &hidden + &self.b2;
        GenCache { hidden, output }
    }

    /// Flattened `G_θ(w)` with intermediates.
    pub fn forward(&self, w: &DVector<f64>, theta: &DVector<f64>) -> GenCache {
        let mut cache = self.base_output(w);
        cache.output += theta;
        cache
    }

    /// Vector-Jacobian product `(∂G/∂w)ᵀ upstream`.
    pub fn vjp_latent(&self, cache: &GenCache, upstream: &DVector<f64>) -> DVector<f64> {
        let mut dh = self.a2.tr_mul(upstream);
        for (d, hv) in dh.iter_mut().zip(cache.hidden.iter()) {
            *d *= 1.0 - hv * hv;
        }
        self.a1.tr_mul(&dh)
    }

    pub fn to_sections(&self) -> Sections {
        let s = &self.shape;
        let mut out = Sections::new();
        out.push_meta("seed", self.seed);
        out.push_meta("latent_dim", s.latent_dim);
        out.push_meta("rows", s.rows);
        out.push_meta("cols", s.cols);
        out.push_meta("hidden", s.hidden);
        push_matrix(&mut out, "MAPPING", &self.mapping);
        push_vector(&mut out, "MAPPING_OFFSET", &self.mapping_offset);
        push_matrix(&mut out, "A1", &self.a1);
        push_vector(&mut out, "B1", &self.b1);
        push_matrix(&mut out, "A2", &self.a2);
        push_vector(&mut out, "B2", &self.b2);
        push_vector(&mut out, "THETA", &self.theta);
        out
    }

    pub fn from_sections(source: &str, s: &Sections) -> Result<Self> {
        let meta = |k: &str| -> Result<u64> {
            s.meta(k).and_then(|v| v.parse().ok()).ok_or_else(|| DgpError::Parse {
                path: source.to_string(),
                line: 0,
                msg: format!("missing or malformed @{k}"),
            })
        };
        let shape = SynthShape {
            latent_dim: meta("latent_dim")? as usize,
            rows: meta("rows")? as usize,
            cols: meta("cols")? as usize,
            hidden: meta("hidden")? as usize,
        };
        let (n, h, rc) = (shape.latent_dim, shape.hidden, shape.pixels());
        Ok(Self {
            shape,
            mapping: read_matrix(source, s, "MAPPING", n, n)?,
            mapping_offset: read_vector(source, s, "MAPPING_OFFSET", n)?,
            a1: read_matrix(source, s, "A1", h, n)?,
            b1: read_vector(source, s, "B1", h)?,
            a2: read_matrix(source, s, "A2", rc, h)?,
            b2: read_vector(source, s, "B2", rc)?,
            theta: read_vector(source, s, "THETA", rc)?,
            seed: meta("seed")?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_sections().write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_sections(&path.display().to_string(), &Sections::read(path)?)
    }
}

pub(crate) fn push_matrix(out: &mut Sections, name: &str, m: &DMatrix<f64>) {
    out.push(name, m.nrows(), m.ncols(), m.transpose().as_slice());
}

pub(crate) fn push_vector(out: &mut Sections, name: &str, v: &DVector<f64>) {
    out.push(name, 1, v.len(), v.as_slice());
}

pub(crate) fn read_matrix(source: &str, s: &Sections, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let b = s.require(source, name)?;
    if b.rows != rows || b.cols != cols {
        return Err(DgpError::Parse {
            path: source.to_string(),
            line: 0,
            msg: format!("[{name}] is {}x{}, expected {rows}x{cols}", b.rows, b.cols),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, &b.values))
}

pub(crate) fn read_vector(source: &str, s: &Sections, name: &str, len: usize) -> Result<DVector<f64>> {
    let b = s.require(source, name)?;
    if b.values.len() != len {
        return Err(DgpError::Parse {
            path: source.to_string(),
            line: 0,
            msg: format!("[{name}] has {} values, expected {len}", b.values.len()),
        });
    }
    Ok(DVector::from_column_slice(&b.values))
}

/// Draws `count` style codes `w = B z + c0`. Batch `k` of [`SAMPLE_BATCH`]
/// samples uses stream `k` of `seed`, so the result does not depend on `exec`.
pub fn sample_style(params: &SynthParams, count: usize, seed: u64) -> Vec<LatentCode> {
    sample_style_with(params, count, seed, Execution::default())
}

pub fn sample_style_with(params: &SynthParams, count: usize, seed: u64, exec: Execution) -> Vec<LatentCode> {
    let n = params.latent_dim();
    let batches = count.div_ceil(SAMPLE_BATCH);
    map_indexed(batches, exec, |b| {
        let mut rng = stream_rng(seed, b as u64);
        let len = SAMPLE_BATCH.min(count - b * SAMPLE_BATCH);
        (0..len)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                LatentCode(&params.mapping * z + &params.mapping_offset)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// `G_θ(w)` as an image.
pub fn synthesize(params: &SynthParams, w: &LatentCode) -> Result<ImageGrid> {
    params.check_latent(&w.0)?;
    let out = params.forward(&w.0, &params.theta).output;
    let (rows, cols) = params.image_shape();
    ImageGrid::new(rows, cols, out.as_slice().to_vec())
}

/// Logistic discriminator on flattened images.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscParams {
    pub weights: DVector<f64>,
    pub bias: f64,
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

impl DiscParams {
    pub fn zeros(pixels: usize) -> Self {
        Self {
            weights: DVector::zeros(pixels),
            bias: 0.0,
        }
    }

    pub fn random(pixels: usize, std: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0xd15c);
        Self {
            weights: gaussian_vector(&mut rng, pixels, std),
            bias: 0.0,
        }
    }

    pub fn logit(&self, x: &DVector<f64>) -> f64 {
        self.weights.dot(x) + self.bias
    }

    pub fn prob(&self, x: &DVector<f64>) -> f64 {
        sigmoid(self.logit(x))
    }

    /// `∂D/∂x`.
    pub fn grad_input(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.prob(x);
        &self.weights * (p * (1.0 - p))
    }

    /// `log(1 − D(x))` with `D` clamped to `[D_CLAMP, 1 − D_CLAMP]`, and its
    /// gradient in `x` (zero where the clamp is active).
    pub fn fake_log_loss(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let p = self.prob(x);
        let pc = p.clamp(D_CLAMP, 1.0 - D_CLAMP);
        let value = (1.0 - pc).ln();
        let grad = if p == pc {
            &self.weights * (-p)
        } else {
            DVector::zeros(x.len())
        };
        (value, grad)
    }

    pub fn to_sections(&self) -> Sections {
        let mut s = Sections::new();
        push_vector(&mut s, "D_WEIGHTS", &self.weights);
        s.push("D_BIAS", 1, 1, &[self.bias]);
        s
    }

    pub fn from_sections(source: &str, s: &Sections, pixels: usize) -> Result<Self> {
        Ok(Self {
            weights: read_vector(source, s, "D_WEIGHTS", pixels)?,
            bias: read_vector(source, s, "D_BIAS", 1)?[0],
        })
    }
}

/// `D(x)` for an image.
pub fn discriminate(d: &DiscParams, img: &ImageGrid) -> Result<f64> {
    if img.len() != d.weights.len() {
        return Err(DgpError::DimensionMismatch {
            expected: d.weights.len(),
            got: img.len(),
        });
    }
    Ok(d.prob(&DVector::from_column_slice(img.values())))
}

/// Differentiable embedding of flattened images.
pub trait FeatureMap: Send + Sync {
    fn out_dim(&self) -> usize;

    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `(∂apply/∂x)ᵀ upstream`.
    fn vjp(&self, x: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64>;
}

/// `tanh(F x)` with a fixed seeded Gaussian `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureMap {
    proj: DMatrix<f64>,
}

pub fn random_feature_map(out_dim: usize, shape: (usize, usize), seed: u64) -> Result<RandomFeatureMap> {
    let pixels = shape.0 * shape.1;
    if out_dim == 0 || pixels == 0 {
        return Err(DgpError::Config("feature map sizes must be positive".into()));
    }
    let mut rng = stream_rng(seed, 0xfea7);
    Ok(RandomFeatureMap {
        proj: gaussian_matrix(&mut rng, out_dim, pixels, 1.0 / (pixels as f64).sqrt()),
    })
}

impl RandomFeatureMap {
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.proj
    }
}

impl FeatureMap for RandomFeatureMap {
    fn out_dim(&self) -> usize {
        self.proj.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.proj * x).map(f64::tanh)
    }

    fn vjp(&self, x: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64> {
        let y = self.apply(x);
        let d = upstream.component_mul(&y.map(|v| 1.0 - v * v));
        self.proj.tr_mul(&d)
    }
}

/// Stand-ins for the perceptual network and the attribute classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub perceptual: RandomFeatureMap,
    pub attribute: RandomFeatureMap,
}

impl FeatureMaps {
    pub const PERCEPTUAL_DIM: usize = 32;
    pub const ATTRIBUTE_DIM: usize = 16;

    pub fn seeded(shape: (usize, usize), seed: u64) -> Result<Self> {
        Ok(Self {
            perceptual: random_feature_map(Self::PERCEPTUAL_DIM, shape, seed)?,
            attribute: random_feature_map(Self::ATTRIBUTE_DIM, shape, seed.wrapping_add(1))?,
        })
    }
}

/// Affine encoder from flattened images to strength codes.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl EncoderParams {
    pub fn zeros(latent_dim: usize, pixels: usize) -> Self {
        Self {
            weights: DMatrix::zeros(latent_dim, pixels),
            bias: DVector::zeros(latent_dim),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weights * x + &self.bias
    }

    pub fn to_sections(&self) -> Sections {
        let mut s = Sections::new();
        push_matrix(&mut s, "E_WEIGHTS", &self.weights);
        push_vector(&mut s, "E_BIAS", &self.bias);
        s
    }

    pub fn from_sections(source: &str, s: &Sections, latent_dim: usize, pixels: usize) -> Result<Self> {
        Ok(Self {
            weights: read_matrix(source, s, "E_WEIGHTS", latent_dim, pixels)?,
            bias: read_vector(source, s, "E_BIAS", latent_dim)?,
        })
    }
}

/// `s = E(x)`.
pub fn encode(enc: &EncoderParams, img: &ImageGrid) -> Result<StrengthCode> {
    if img.len() != enc.weights.ncols() {
        return Err(DgpError::DimensionMismatch {
            expected: enc.weights.ncols(),
            got: img.len(),
        });
    }
    Ok(StrengthCode(enc.apply(&DVector::from_column_slice(img.values()))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams::random(
            SynthShape {
                latent_dim: 4,
                rows: 3,
                cols: 5,
                hidden: 6,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn noise_injection_is_additive() {
        let p = small();
        let w = LatentCode::from_slice(&[0.1, -0.2, 0.3, 0.0]);
        let base = synthesize(&p, &w).unwrap();
        let mut theta = DVector::zeros(p.pixels());
        theta[7] = 0.25;
        let bumped = synthesize(&p.with_theta(theta), &w).unwrap();
        for i in 0..p.pixels() {
            let d = bumped.values()[i] - base.values()[i];
            if i == 7 {
                assert!((d - 0.25).abs() < 1e-15);
            } else {
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn zero_synthesis_weights_give_constant_image() {
        let mut p = small();
        p.a1.fill(0.0);
        p.a2.fill(0.0);
        p.b2.fill(0.7);
        let img = synthesize(&p, &LatentCode::from_slice(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!(img.values().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn zero_mapping_collapses_samples() {
        let mut p = small();
        p.mapping.fill(0.0);
        let s = sample_style(&p, 100, 1);
        assert!(s.iter().all(|w| w.0 == p.mapping_offset));
    }

    #[test]
    fn sampling_is_deterministic_and_schedule_independent() {
        let p = small();
        let a = sample_style_with(&p, 10_000, 9, Execution::Sequential);
        let b = sample_style_with(&p, 10_000, 9, Execution::Parallel);
        assert_eq!(a, b);
        assert_ne!(a, sample_style(&p, 10_000, 10));
    }

    #[test]
    fn zero_discriminator_is_indifferent() {
        let d = DiscParams::zeros(15);
        let img = ImageGrid::from_fn(3, 5, |r, c| (r * c) as f64);
        assert_eq!(discriminate(&d, &img).unwrap(), 0.5);
    }

    #[test]
    fn discriminator_is_monotone_in_logit() {
        let mut d = DiscParams::random(15, 0.3, 2);
        let x = DVector::from_element(15, 0.2);
        let p0 = d.prob(&x);
        d.bias += 0.5;
        assert!(d.prob(&x) > p0);
    }

    #[test]
    fn feature_map_of_zero_is_zero() {
        let f = random_feature_map(7, (3, 5), 4).unwrap();
        assert!(f.apply(&DVector::zeros(15)).iter().all(|&v| v == 0.0));
        assert_eq!(f, random_feature_map(7, (3, 5), 4).unwrap());
    }

    #[test]
    fn zero_encoder_gives_zero_code() {
        let e = EncoderParams::zeros(4, 15);
        let s = encode(&e, &ImageGrid::from_fn(3, 5, |r, _| r as f64)).unwrap();
        assert!(s.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn params_file_round_trip() {
        let p = small();
        let text = p.to_sections().to_text();
        let back = SynthParams::from_sections("t", &Sections::parse("t", &text).unwrap()).unwrap();
        assert_eq!(back.shape, p.shape);
        assert_eq!(back.seed, 3);
        assert!((back.a2.clone() - &p.a2).amax() < 5e-9);
        assert_eq!(back.to_sections().to_text(), text);
    }

    #[test]
    fn clamped_adversarial_loss_has_zero_gradient() {
        let d = DiscParams {
            weights: DVector::from_element(3, 100.0),
            bias: 0.0,
        };
        let (v, g) = d.fake_log_loss(&DVector::from_element(3, 1.0));
        assert!((v - D_CLAMP.ln()).abs() < 1e-9);
        assert!(g.iter().all(|&x| x == 0.0));
    }
}

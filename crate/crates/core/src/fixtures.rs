//! Seeded toy inputs for the end-to-end pipeline and its ablations.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;

use crate::error::Result;
use crate::io::{write_image_grid, write_mask, write_text, ImageGrid, Mask};
use crate::keypoints::{ClothingCategory, KeyPointSet};
use crate::latent::{fit_pca, LatentCode, PcaBasis};
use crate::par::stream_rng;
use crate::pipeline::{train_projector, PipelineConfig, Projector, TrainStep};
use crate::synth::{sample_style, synthesize, DiscParams, FeatureMaps, SynthParams, SynthShape};

/// Trained artifacts derived from one generator.
#[derive(Debug, Clone)]
pub struct ToyModels {
    pub gen: SynthParams,
    pub basis: PcaBasis,
    pub projector: Projector,
    pub disc: DiscParams,
    pub feats: FeatureMaps,
    /// Empty when the models were loaded rather than trained.
    pub trace: Vec<TrainStep>,
}

impl ToyModels {
    /// Fits the basis on `cfg.pca_samples` style draws and trains the
    /// projector and discriminator.
    pub fn build(shape: SynthShape, cfg: &PipelineConfig, seed: u64) -> Result<Self> {
        let gen = SynthParams::random(shape, seed)?;
        let basis = fit_pca(&sample_style(&gen, cfg.pca_samples, seed.wrapping_add(1)))?;
        let feats = FeatureMaps::seeded(gen.image_shape(), seed.wrapping_add(2))?;
        let trained = train_projector(&gen, &basis, &feats, cfg, seed.wrapping_add(3))?;
        Ok(Self {
            gen,
            basis,
            projector: trained.projector,
            disc: trained.disc,
            feats,
            trace: trained.trace,
        })
    }

    pub fn models(&self) -> crate::pipeline::DgpModels<'_> {
        crate::pipeline::DgpModels {
            gen: &self.gen,
            projector: &self.projector,
            disc: &self.disc,
            feats: &self.feats,
        }
    }
}

/// A generator image plus a per-pixel pattern no latent code can produce,
/// with a centered square mask.
#[derive(Debug, Clone)]
pub struct SyntheticTarget {
    pub w_star: LatentCode,
    pub image: ImageGrid,
    pub mask: Mask,
}

/// `w*` is a fresh style draw; the pattern is a seeded ±`pattern_amp` checker.
pub fn synthetic_target(gen: &SynthParams, seed: u64, pattern_amp: f64) -> Result<SyntheticTarget> {
    let w_star = sample_style(gen, 1, seed).remove(0);
    let clean = synthesize(gen, &w_star)?;
    let mut rng = stream_rng(seed, 0x7a7);
    let (rows, cols) = clean.shape();
    let image = ImageGrid::from_fn(rows, cols, |r, c| {
        let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
        clean.get(r, c) + pattern_amp * sign * rng.random_range(0.5..1.0)
    });
    let (mr, mc) = (rows / 8, cols / 8);
    let mask = Mask::from_fn(rows, cols, |r, c| r >= mr && r < rows - mr && c >= mc && c < cols - mc);
    Ok(SyntheticTarget { w_star, image, mask })
}

/// Model photo, garment photo, keypoints and body mask for a Sling garment.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub model_img: ImageGrid,
    pub model_kp: KeyPointSet,
    pub cloth_img: ImageGrid,
    pub cloth_kp: KeyPointSet,
    pub body_mask: Mask,
}

/// Builds the scene in the generator's image space. The model photo is a
/// generator sample; the garment is a second sample shifted away from zero
/// inside a rectangle so that every garment pixel composites.
pub fn toy_scene(gen: &SynthParams, seed: u64) -> Result<ToyScene> {
    let (rows, cols) = gen.image_shape();
    let (h, w) = (rows as f64, cols as f64);
    let styles = sample_style(gen, 2, seed);
    let model_img = synthesize(gen, &styles[0])?;
    let body = synthesize(gen, &styles[1])?;
    let (r0, r1, c0, c1) = (rows / 8, rows - rows / 8, cols / 8, cols - cols / 8);
    let cloth_img = ImageGrid::from_fn(rows, cols, |r, c| {
        if (r0..r1).contains(&r) && (c0..c1).contains(&c) {
            body.get(r, c).abs() + 0.25
        } else {
            0.0
        }
    });
    let cloth_kp = KeyPointSet::clothing_from_positions(
        ClothingCategory::Sling,
        &[
            (c0 as f64, r0 as f64),
            (c0 as f64, (r1 - 1) as f64),
            ((c1 - 1) as f64, (r1 - 1) as f64),
            ((c1 - 1) as f64, r0 as f64),
        ],
        None,
    );
    let at = |fx: f64, fy: f64| (fx * (w - 1.0), fy * (h - 1.0));
    let model_kp = KeyPointSet::model_from_positions(&[
        at(0.40, 0.10),
        at(0.25, 0.20),
        at(0.15, 0.25),
        at(0.10, 0.45),
        at(0.05, 0.65),
        at(0.25, 0.80),
        at(0.30, 0.85),
        at(0.30, 0.95),
        at(0.70, 0.95),
        at(0.70, 0.85),
        at(0.75, 0.80),
        at(0.95, 0.65),
        at(0.90, 0.45),
        at(0.85, 0.25),
        at(0.75, 0.20),
        at(0.60, 0.10),
    ]);
    let body_mask = Mask::from_fn(rows, cols, |r, c| {
        let (x, y) = (c as f64 / (w - 1.0), r as f64 / (h - 1.0));
        (0.15..=0.85).contains(&x) && (0.1..=0.95).contains(&y)
    });
    Ok(ToyScene {
        model_img,
        model_kp,
        cloth_img,
        cloth_kp,
        body_mask,
    })
}

impl ToyScene {
    /// Writes `model.txt`, `cloth.txt`, `model_kp.json`, `cloth_kp.json`
    /// and `body_mask.txt` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_image_grid(dir.join("model.txt"), &self.model_img)?;
        write_image_grid(dir.join("cloth.txt"), &self.cloth_img)?;
        write_text(&dir.join("model_kp.json"), &self.model_kp.to_json())?;
        write_text(&dir.join("cloth_kp.json"), &self.cloth_kp.to_json())?;
        write_mask(dir.join("body_mask.txt"), &self.body_mask)
    }
}

/// Flattened image as a vector.
pub fn flatten(img: &ImageGrid) -> DVector<f64> {
    DVector::from_column_slice(img.values())
}

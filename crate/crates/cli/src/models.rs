//! On-disk layout of a trained model directory.

use std::path::Path;

use dgp_core::fixtures::ToyModels;
use dgp_core::io::Sections;
use dgp_core::latent::{PcaBasis, TruncationConfig};
use dgp_core::pipeline::Projector;
use dgp_core::synth::{DiscParams, EncoderParams, FeatureMaps, SynthParams};

use crate::config::RunConfig;
use crate::CliError;

const GENERATOR: &str = "generator.txt";
const BASIS: &str = "basis.txt";
const ENCODER: &str = "encoder.txt";
const DISC: &str = "disc.txt";
const FEATURES: &str = "features.txt";

pub fn save(dir: &Path, toy: &ToyModels, feature_seed: u64) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    toy.gen.write(dir.join(GENERATOR))?;
    toy.basis.write(dir.join(BASIS))?;
    toy.projector.encoder.to_sections().write(dir.join(ENCODER))?;
    toy.disc.to_sections().write(dir.join(DISC))?;
    let mut f = Sections::new();
    f.push_meta("seed", feature_seed);
    f.write(dir.join(FEATURES))?;
    Ok(())
}

pub fn load(dir: &Path, truncation: TruncationConfig) -> Result<ToyModels, CliError> {
    let gen = SynthParams::read(dir.join(GENERATOR))?;
    let basis = PcaBasis::read(dir.join(BASIS))?;
    let (n, pixels) = (gen.latent_dim(), gen.pixels());
    let enc_path = dir.join(ENCODER);
    let encoder =
        EncoderParams::from_sections(&enc_path.display().to_string(), &Sections::read(&enc_path)?, n, pixels)?;
    let disc_path = dir.join(DISC);
    let disc = DiscParams::from_sections(&disc_path.display().to_string(), &Sections::read(&disc_path)?, pixels)?;
    let feat_path = dir.join(FEATURES);
    let feat = Sections::read(&feat_path)?;
    let seed: u64 = feat
        .meta("seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::usage(format!("{}: missing @seed", feat_path.display())))?;
    Ok(ToyModels {
        feats: FeatureMaps::seeded(gen.image_shape(), seed)?,
        projector: Projector {
            basis: basis.clone(),
            encoder,
            truncation,
        },
        gen,
        basis,
        disc,
        trace: Vec::new(),
    })
}

/// Seed of the feature maps built by [`ToyModels::build`].
pub fn feature_seed(seed: u64) -> u64 {
    seed.wrapping_add(2)
}

/// Loads `dir` when given, otherwise builds and trains from the config.
pub fn obtain(dir: Option<&Path>, run: &RunConfig) -> Result<ToyModels, CliError> {
    let cfg = run.pipeline()?;
    match dir {
        Some(d) => load(d, cfg.truncation),
        None => Ok(ToyModels::build(run.shape()?, &cfg, run.u64("seed")?)?),
    }
}

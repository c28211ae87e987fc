//! Flat `key = value` run configuration. Values come from built-in
//! defaults, then an optional file, then command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;

use dgp_core::geometry::AlignConfig;
use dgp_core::latent::TruncationConfig;
use dgp_core::pgd::PgdConfig;
use dgp_core::pipeline::{LossWeights, PatternWeights, PipelineConfig, TrainConfig};
use dgp_core::synth::SynthShape;

use crate::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

pub const KEYS: &[Key] = &[
    Key {
        name: "seed",
        default: "7",
        doc: "seed of the toy generator, basis sampling, feature maps and training",
    },
    Key {
        name: "sample_seed",
        default: "1",
        doc: "seed of Monte Carlo draws that are independent of the models",
    },
    Key {
        name: "latent_dim",
        default: "8",
        doc: "style-space dimension n",
    },
    Key {
        name: "rows",
        default: "16",
        doc: "image rows",
    },
    Key {
        name: "cols",
        default: "16",
        doc: "image columns",
    },
    Key {
        name: "hidden",
        default: "32",
        doc: "generator hidden width",
    },
    Key {
        name: "psi",
        default: "6",
        doc: "truncation cutoff",
    },
    Key {
        name: "lambda_p",
        default: "1.0",
        doc: "projector pixel loss weight",
    },
    Key {
        name: "lambda_f",
        default: "5e-5",
        doc: "projector feature loss weight",
    },
    Key {
        name: "lambda_attr",
        default: "5e-5",
        doc: "projector attribute loss weight",
    },
    Key {
        name: "lambda_adv",
        default: "0.1",
        doc: "projector adversarial loss weight",
    },
    Key {
        name: "eta_p",
        default: "1.0",
        doc: "semantic search pixel weight",
    },
    Key {
        name: "eta_f",
        default: "5e-5",
        doc: "semantic search feature weight",
    },
    Key {
        name: "eta_attr",
        default: "5e-5",
        doc: "semantic search attribute weight",
    },
    Key {
        name: "eta_adv",
        default: "1.0",
        doc: "semantic search adversarial weight",
    },
    Key {
        name: "pattern_eta_p",
        default: "1.0",
        doc: "pattern search pixel weight",
    },
    Key {
        name: "pattern_eta_adv",
        default: "1.0",
        doc: "pattern search adversarial weight",
    },
    Key {
        name: "semantic_radius",
        default: "4",
        doc: "radius of the ball around w0",
    },
    Key {
        name: "pattern_radius",
        default: "4",
        doc: "radius of the ball around theta0",
    },
    Key {
        name: "semantic_iters",
        default: "1000",
        doc: "semantic search PGD iterations",
    },
    Key {
        name: "pattern_iters",
        default: "1000",
        doc: "pattern search PGD iterations",
    },
    Key {
        name: "search_lr",
        default: "1e-2",
        doc: "PGD step size of both searches",
    },
    Key {
        name: "grad_tolerance",
        default: "0",
        doc: "projected-gradient stopping threshold; 0 runs every iteration",
    },
    Key {
        name: "train_iters",
        default: "400",
        doc: "projector training iterations",
    },
    Key {
        name: "batch_size",
        default: "32",
        doc: "projector training batch size",
    },
    Key {
        name: "train_lr",
        default: "2e-5",
        doc: "base learning rate of the encoder and discriminator",
    },
    Key {
        name: "lr_scale",
        default: "1",
        doc: "multiplier on train_lr",
    },
    Key {
        name: "pca_samples",
        default: "100000",
        doc: "style draws used to fit the basis",
    },
    Key {
        name: "grid_pitch",
        default: "16",
        doc: "ARAP grid spacing in pixels",
    },
    Key {
        name: "arap_iters",
        default: "200",
        doc: "ARAP local-global iterations",
    },
    Key {
        name: "arap_tol",
        default: "1e-6",
        doc: "ARAP vertex-movement stopping threshold",
    },
    Key {
        name: "check_gradients",
        default: "true",
        doc: "finite-difference spot check at the start of every run",
    },
    Key {
        name: "workers",
        default: "1",
        doc: "threads for batch Monte Carlo work; results do not depend on it",
    },
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

fn lookup(name: &str) -> Result<&'static Key, CliError> {
    KEYS.iter()
        .find(|k| k.name == name)
        .ok_or_else(|| CliError::usage(format!("unknown config key {name:?}")))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, name: &str, value: impl Into<String>) -> Result<(), CliError> {
        let key = lookup(name)?;
        self.values.insert(key.name, value.into());
        Ok(())
    }

    pub fn parse_text(&mut self, source: &str, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{source}: line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::usage(format!("{source}: line {}: {}", i + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        self.parse_text(&path.display().to_string(), &text)
    }

    /// `--set key=value` overrides.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<(), CliError> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {p:?}")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn raw(&self, name: &str) -> &str {
        &self.values[lookup(name).expect("known key").name]
    }

    fn parsed<T: std::str::FromStr>(&self, name: &str) -> Result<T, CliError> {
        let v = self.raw(name);
        v.parse()
            .map_err(|_| CliError::usage(format!("config key {name}: cannot parse {v:?}")))
    }

    pub fn f64(&self, name: &str) -> Result<f64, CliError> {
        let v: f64 = self.parsed(name)?;
        if !v.is_finite() {
            return Err(CliError::usage(format!("config key {name} must be finite")));
        }
        Ok(v)
    }

    pub fn usize(&self, name: &str) -> Result<usize, CliError> {
        self.parsed(name)
    }

    pub fn u64(&self, name: &str) -> Result<u64, CliError> {
        self.parsed(name)
    }

    pub fn bool(&self, name: &str) -> Result<bool, CliError> {
        self.parsed(name)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&'static str, &str)> {
        KEYS.iter().map(|k| (k.name, self.values[k.name].as_str()))
    }

    pub fn shape(&self) -> Result<SynthShape, CliError> {
        Ok(SynthShape {
            latent_dim: self.usize("latent_dim")?,
            rows: self.usize("rows")?,
            cols: self.usize("cols")?,
            hidden: self.usize("hidden")?,
        })
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        let pgd = |iters: &str| -> Result<PgdConfig, CliError> {
            Ok(PgdConfig {
                step_size: self.f64("search_lr")?,
                max_iters: self.usize(iters)?,
                grad_tolerance: self.f64("grad_tolerance")?,
            })
        };
        let cfg = PipelineConfig {
            projector_weights: LossWeights {
                pixel: self.f64("lambda_p")?,
                feature: self.f64("lambda_f")?,
                attribute: self.f64("lambda_attr")?,
                adversarial: self.f64("lambda_adv")?,
            },
            search_weights: LossWeights {
                pixel: self.f64("eta_p")?,
                feature: self.f64("eta_f")?,
                attribute: self.f64("eta_attr")?,
                adversarial: self.f64("eta_adv")?,
            },
            pattern_weights: PatternWeights {
                pixel: self.f64("pattern_eta_p")?,
                adversarial: self.f64("pattern_eta_adv")?,
            },
            truncation: TruncationConfig::new(self.f64("psi")?)?,
            semantic_radius: self.f64("semantic_radius")?,
            pattern_radius: self.f64("pattern_radius")?,
            semantic_pgd: pgd("semantic_iters")?,
            pattern_pgd: pgd("pattern_iters")?,
            train: TrainConfig {
                iterations: self.usize("train_iters")?,
                batch_size: self.usize("batch_size")?,
                learning_rate: self.f64("train_lr")?,
                lr_scale: self.f64("lr_scale")?,
            },
            pca_samples: self.usize("pca_samples")?,
            align: AlignConfig {
                grid_pitch: self.f64("grid_pitch")?,
                arap_max_iters: self.usize("arap_iters")?,
                arap_tol: self.f64("arap_tol")?,
            },
            check_gradients: self.bool("check_gradients")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_the_library_defaults() {
        let cfg = RunConfig::default().pipeline().unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(RunConfig::default().shape().unwrap(), SynthShape::default());
    }

    #[test]
    fn precedence_and_unknown_keys() {
        let mut c = RunConfig::default();
        c.parse_text("f", "psi = 3 # comment\n\nseed=9\n").unwrap();
        c.apply_overrides(&["psi=4".into()]).unwrap();
        assert_eq!(c.raw("psi"), "4");
        assert_eq!(c.raw("seed"), "9");
        let err = c.parse_text("f", "bogus = 1").unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("line 1"));
        assert!(c.apply_overrides(&["nokey".into()]).is_err());
    }
}

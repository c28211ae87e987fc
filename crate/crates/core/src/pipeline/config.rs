use crate::error::{DgpError, Result};
use crate::geometry::AlignConfig;
use crate::latent::TruncationConfig;
use crate::pgd::{BallConstraint, PgdConfig};

/// Weights of the pixel, feature, attribute and adversarial terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub pixel: f64,
    pub feature: f64,
    pub attribute: f64,
    pub adversarial: f64,
}

impl LossWeights {
    /// Projector training defaults.
    pub const PROJECTOR: LossWeights = LossWeights {
        pixel: 1.0,
        feature: 5e-5,
        attribute: 5e-5,
        adversarial: 0.1,
    };

    /// Semantic search defaults.
    pub const SEMANTIC: LossWeights = LossWeights {
        pixel: 1.0,
        feature: 5e-5,
        attribute: 5e-5,
        adversarial: 1.0,
    };

    pub const PIXEL_ONLY: LossWeights = LossWeights {
        pixel: 1.0,
        feature: 0.0,
        attribute: 0.0,
        adversarial: 0.0,
    };

    fn validate(&self, what: &str) -> Result<()> {
        let all = [self.pixel, self.feature, self.attribute, self.adversarial];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(DgpError::Config(format!(
                "{what} loss weights must be finite and nonnegative"
            )));
        }
        Ok(())
    }
}

/// Pattern search uses only the pixel and adversarial terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternWeights {
    pub pixel: f64,
    pub adversarial: f64,
}

impl Default for PatternWeights {
    fn default() -> Self {
        Self {
            pixel: 1.0,
            adversarial: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Base rate, scaled by `lr_scale` for both the encoder and the discriminator.
    pub learning_rate: f64,
    pub lr_scale: f64,
}

impl TrainConfig {
    pub const BASE_LEARNING_RATE: f64 = 2e-5;

    pub fn effective_lr(&self) -> f64 {
        self.learning_rate * self.lr_scale
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 400,
            batch_size: 32,
            learning_rate: Self::BASE_LEARNING_RATE,
            lr_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub projector_weights: LossWeights,
    pub search_weights: LossWeights,
    pub pattern_weights: PatternWeights,
    pub truncation: TruncationConfig,
    pub semantic_radius: f64,
    pub pattern_radius: f64,
    pub semantic_pgd: PgdConfig,
    pub pattern_pgd: PgdConfig,
    pub train: TrainConfig,
    pub pca_samples: usize,
    pub align: AlignConfig,
    /// Finite-difference check of both search gradients at their start points.
    pub check_gradients: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            projector_weights: LossWeights::PROJECTOR,
            search_weights: LossWeights::SEMANTIC,
            pattern_weights: PatternWeights::default(),
            truncation: TruncationConfig::default(),
            semantic_radius: BallConstraint::DEFAULT_RADIUS,
            pattern_radius: BallConstraint::DEFAULT_RADIUS,
            semantic_pgd: PgdConfig::default(),
            pattern_pgd: PgdConfig::default(),
            train: TrainConfig::default(),
            pca_samples: 100_000,
            align: AlignConfig::default(),
            check_gradients: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.projector_weights.validate("projector")?;
        self.search_weights.validate("search")?;
        let pw = self.pattern_weights;
        if !(pw.pixel >= 0.0 && pw.adversarial >= 0.0) {
            return Err(DgpError::Config("pattern loss weights must be nonnegative".into()));
        }
        for (name, r) in [("semantic", self.semantic_radius), ("pattern", self.pattern_radius)] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(DgpError::Config(format!("{name} radius must be finite and >= 0")));
            }
        }
        self.semantic_pgd.validate()?;
        self.pattern_pgd.validate()?;
        if self.train.batch_size == 0 {
            return Err(DgpError::Config("training batch size must be >= 1".into()));
        }
        if !(self.train.effective_lr() > 0.0) {
            return Err(DgpError::Config("training learning rate must be positive".into()));
        }
        if !(self.align.grid_pitch > 0.0) {
            return Err(DgpError::Config("grid pitch must be positive".into()));
        }
        Ok(())
    }

    /// Same config with both searches disabled.
    pub fn projection_only(&self) -> Self {
        let mut c = self.clone();
        c.semantic_pgd.max_iters = 0;
        c.pattern_pgd.max_iters = 0;
        c
    }
}

//! Projection, semantic search and pattern search, chained end to end.

mod config;
mod projector;
mod run;
mod search;

pub use config::{LossWeights, PatternWeights, PipelineConfig, TrainConfig};
pub use projector::{
    projector_batch_loss, reconstruction_mse, train_projector, training_batch, Projector, ProjectorLosses, TrainStep,
    TrainedProjector,
};
pub use run::{
    config_json, run_dgp, run_from_target, DgpInputs, DgpModels, PipelineResult, StageLosses, MANIFEST_VERSION,
};
pub use search::{
    masked_pixel_loss, pattern_search, semantic_search, PatternObjective, PatternOutcome, SearchLosses,
    SemanticObjective, SemanticOutcome,
};

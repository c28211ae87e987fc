//! Latent-space projection and constrained search for garment transfer,
//! built around a small differentiable toy generator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chi2;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod keypoints;
pub mod latent;
pub mod par;
pub mod pgd;
pub mod pipeline;
pub mod synth;
pub mod weight;

pub use error::{DgpError, Result};
pub use io::{ImageGrid, Mask};
pub use latent::{LatentCode, PcaBasis, StrengthCode, TruncationConfig};
pub use par::Execution;

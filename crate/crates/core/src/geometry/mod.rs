//! Rough alignment of a garment onto a model image.

mod align;
mod arap;
mod homography;

pub use align::{mapping_rule, rough_align, rough_align_detailed, AlignConfig, MappingRule, RoughAlignment};
pub use arap::{arap_deform, arap_energy, ArapMesh, ArapSolution, Control, Point2};
pub use homography::{homography_from_pairs, warp_image, Homography};

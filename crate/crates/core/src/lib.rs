//! Knowledge-infused cascade for 3D retinal vessel segmentation in
//! volumetric OCT.
//!
//! Stages:
//!
//! 1. **Layers** (`layers`) – ILM, INL_LOWER, RPE_UPPER and BM traced per
//!    B-scan by dynamic programming, or imported.
//! 2. **En face** (`enface`) – mean projection of the RPE band and
//!    segmentation of the dark vessel shadows on it.
//! 3. **Cascade** (`cascade`) – histology (depth) and imaging (transverse)
//!    masks applied to a vessel probability map, then thresholding and 3D
//!    component filtering.
//!
//! `phantom` generates seeded synthetic volumes with ground truth and
//! `metrics` scores results against it.

pub mod cascade;
pub mod components;
pub mod enface;
pub mod error;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod pipeline;

pub use error::{Error, Result};
pub use model::{
    Boundary, BoundarySet, Dims, EnFaceImage, OctVolume, PixelMask, ProbabilityMap3D, VoxelMask,
};

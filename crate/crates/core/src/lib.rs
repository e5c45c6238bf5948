//! Kidney and cystic renal lesion segmentation on non-contrast CT.
//!
//! The crate covers the whole volumetric pipeline:
//!
//! - [`nifti`]: NIfTI-1 reader/writer (raw or gzip-compressed).
//! - [`volume`]: image and label grids, resampling, HU clipping with
//!   z-scoring, patch tiling/blending and patient-level splits.
//! - [`augment`]: the eight spatial/intensity augmentations and the
//!   cycle-based augmentation pipeline.
//! - [`unet`]: a small 3D U-Net with hand-written backpropagation, the
//!   Tversky loss, Adam, cross-validated training and patch-tiled inference.
//! - [`metrics`]: Dice/Jaccard, volumetry, lesion detection, Bland–Altman
//!   agreement and the paired t-test, assembled into an evaluation report.

pub mod augment;
pub mod error;
pub mod metrics;
pub mod nifti;
pub mod seed;
pub mod unet;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{LabelMap, Spacing, StudyRecord, VolumeGrid};

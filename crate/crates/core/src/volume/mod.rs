//! Volumetric data model.
//!
//! Every grid stores its samples in x-fastest order: the voxel `(x, y, z)`
//! lives at `x + nx * (y + ny * z)`, matching the NIfTI payload layout.

mod normalize;
mod patches;
mod resample;
pub(crate) mod sample;
mod split;

pub use normalize::{clip_and_normalize, Normalization};
pub use patches::{extract_patches, patch_origins, reassemble, ClassProbabilities};
pub use resample::{resampled_shape, Interpolation};
pub use split::{make_folds, split_patients, DatasetSplit};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Voxel counts along x, y and z.
pub type Shape = [usize; 3];

/// Voxel spacing in millimetres along x, y and z.
pub type Spacing = [f64; 3];

/// Grid spacing the pipeline resamples every study to.
pub const DEFAULT_SPACING: Spacing = [1.62, 1.62, 3.22];

/// Number of segmentation classes (background, kidney, lesion).
pub const NUM_CLASSES: usize = 3;

/// Segmentation classes and their label values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Background = 0,
    Kidney = 1,
    Lesion = 2,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [Class::Background, Class::Kidney, Class::Lesion];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(Class::Background),
            1 => Some(Class::Kidney),
            2 => Some(Class::Lesion),
            _ => None,
        }
    }
}

#[inline]
pub(crate) fn linear_index(shape: Shape, x: usize, y: usize, z: usize) -> usize {
    x + shape[0] * (y + shape[1] * z)
}

pub(crate) fn voxel_count(shape: Shape) -> usize {
    shape[0] * shape[1] * shape[2]
}

pub(crate) fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::Domain(format!("spacing must be positive, got {spacing:?}")))
    }
}

/// Volume of one voxel in mm³.
pub fn voxel_volume(spacing: Spacing) -> Result<f64> {
    check_spacing(spacing)?;
    Ok(spacing[0] * spacing[1] * spacing[2])
}

fn check_shape(shape: Shape, len: usize) -> Result<()> {
    if shape.iter().any(|&n| n == 0) {
        return Err(Error::Shape(format!("shape {shape:?} has an empty axis")));
    }
    if voxel_count(shape) != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} needs {} values, got {len}",
            voxel_count(shape)
        )));
    }
    Ok(())
}

fn check_crop(shape: Shape, origin: Shape, size: Shape) -> Result<()> {
    for axis in 0..3 {
        if size[axis] == 0 || origin[axis] + size[axis] > shape[axis] {
            return Err(Error::Size(format!(
                "region at {origin:?} of size {size:?} does not fit in {shape:?}"
            )));
        }
    }
    Ok(())
}

fn crop_values<T: Copy>(src: &[T], shape: Shape, origin: Shape, size: Shape) -> Vec<T> {
    let mut out = Vec::with_capacity(voxel_count(size));
    for z in 0..size[2] {
        for y in 0..size[1] {
            let start = linear_index(shape, origin[0], origin[1] + y, origin[2] + z);
            out.extend_from_slice(&src[start..start + size[0]]);
        }
    }
    out
}

fn pad_values<T: Copy>(src: &[T], shape: Shape, target: Shape, fill: T) -> Vec<T> {
    let mut out = vec![fill; voxel_count(target)];
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            let s = linear_index(shape, 0, y, z);
            let d = linear_index(target, 0, y, z);
            out[d..d + shape[0]].copy_from_slice(&src[s..s + shape[0]]);
        }
    }
    out
}

/// A rank-3 scalar field (CT intensities, raw HU or normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    shape: Shape,
    spacing: Spacing,
    values: Vec<f64>,
}

impl VolumeGrid {
    pub fn new(shape: Shape, spacing: Spacing, values: Vec<f64>) -> Result<Self> {
        check_shape(shape, values.len())?;
        check_spacing(spacing)?;
        Ok(Self { shape, spacing, values })
    }

    pub fn filled(shape: Shape, spacing: Spacing, value: f64) -> Result<Self> {
        Self::new(shape, spacing, vec![value; voxel_count(shape)])
    }

    /// Build a grid by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        shape: Shape,
        spacing: Spacing,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(voxel_count(shape));
        for z in 0..shape[2] {
            for y in 0..shape[1] {
                for x in 0..shape[0] {
                    values.push(f(x, y, z));
                }
            }
        }
        Self::new(shape, spacing, values)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[linear_index(self.shape, x, y, z)]
    }

    /// Replace the values, keeping geometry.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.shape, self.spacing, values)
    }

    pub fn crop(&self, origin: Shape, size: Shape) -> Result<Self> {
        check_crop(self.shape, origin, size)?;
        Ok(Self {
            shape: size,
            spacing: self.spacing,
            values: crop_values(&self.values, self.shape, origin, size),
        })
    }

    /// Pad at the high end of each axis so every axis is at least `min_shape`.
    pub fn pad_to(&self, min_shape: Shape, fill: f64) -> Self {
        let target = std::array::from_fn(|a| self.shape[a].max(min_shape[a]));
        Self {
            shape: target,
            spacing: self.spacing,
            values: pad_values(&self.values, self.shape, target, fill),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// A rank-3 class map over {0 background, 1 kidney, 2 lesion}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    shape: Shape,
    spacing: Spacing,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(shape: Shape, spacing: Spacing, labels: Vec<u8>) -> Result<Self> {
        check_shape(shape, labels.len())?;
        check_spacing(spacing)?;
        if let Some(bad) = labels.iter().find(|&&l| Class::from_label(l).is_none()) {
            return Err(Error::Validation(format!("label {bad} is not one of 0, 1, 2")));
        }
        Ok(Self { shape, spacing, labels })
    }

    pub fn zeros(shape: Shape, spacing: Spacing) -> Result<Self> {
        Self::new(shape, spacing, vec![0; voxel_count(shape)])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[linear_index(self.shape, x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, class: Class) {
        let i = linear_index(self.shape, x, y, z);
        self.labels[i] = class.label();
    }

    pub fn count(&self, class: Class) -> usize {
        let l = class.label();
        self.labels.iter().filter(|&&v| v == l).count()
    }

    /// Binary mask of the voxels carrying `class`.
    pub fn mask(&self, class: Class) -> Vec<bool> {
        let l = class.label();
        self.labels.iter().map(|&v| v == l).collect()
    }

    pub fn crop(&self, origin: Shape, size: Shape) -> Result<Self> {
        check_crop(self.shape, origin, size)?;
        Ok(Self {
            shape: size,
            spacing: self.spacing,
            labels: crop_values(&self.labels, self.shape, origin, size),
        })
    }

    pub fn pad_to(&self, min_shape: Shape) -> Self {
        let target = std::array::from_fn(|a| self.shape[a].max(min_shape[a]));
        Self {
            shape: target,
            spacing: self.spacing,
            labels: pad_values(&self.labels, self.shape, target, 0),
        }
    }

    /// True when both maps describe the same voxel grid.
    pub fn same_geometry(&self, other: &LabelMap) -> bool {
        self.shape == other.shape && self.spacing == other.spacing
    }
}

/// Kidney side of an annotated lesion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Right,
    Left,
}

/// Annotated lesion growth pattern; carried as metadata, never computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Morphology {
    Endophytic,
    Exophytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionAnnotation {
    pub side: Side,
    pub morphology: Morphology,
}

/// One study: an image, its reference segmentation and lesion metadata.
///
/// `source_id` names the patient the record derives from; it equals
/// `study_id` for original studies and stays fixed across augmented copies,
/// so patient-level splits can keep copies together.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    pub study_id: String,
    pub source_id: String,
    pub image: VolumeGrid,
    pub truth: LabelMap,
    pub lesion_annotations: Vec<LesionAnnotation>,
}

impl StudyRecord {
    pub fn new(study_id: impl Into<String>, image: VolumeGrid, truth: LabelMap) -> Result<Self> {
        let study_id = study_id.into();
        if image.shape() != truth.shape() || image.spacing() != truth.spacing() {
            return Err(Error::Validation(format!(
                "study {study_id}: image {:?}@{:?} and labels {:?}@{:?} differ in geometry",
                image.shape(),
                image.spacing(),
                truth.shape(),
                truth.spacing()
            )));
        }
        Ok(Self {
            source_id: study_id.clone(),
            study_id,
            image,
            truth,
            lesion_annotations: Vec::new(),
        })
    }

    pub fn with_annotations(mut self, annotations: Vec<LesionAnnotation>) -> Self {
        self.lesion_annotations = annotations;
        self
    }

    pub fn is_original(&self) -> bool {
        self.study_id == self.source_id
    }
}

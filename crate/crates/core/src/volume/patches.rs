//! Overlapping patch tiling and probability blending.

use super::{check_crop, linear_index, voxel_count, LabelMap, Shape, Spacing, VolumeGrid};
use crate::{Error, Result};

fn axis_origins(n: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = n - patch;
    let mut origins: Vec<usize> = (0..=last).step_by(stride).collect();
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    origins
}

/// Patch origins tiling `shape` at multiples of `stride`, with the final
/// origin on each axis clamped so the last patch ends at the boundary.
/// Ordered with x varying fastest.
pub fn patch_origins(shape: Shape, patch: Shape, stride: Shape) -> Result<Vec<Shape>> {
    for a in 0..3 {
        if patch[a] == 0 || patch[a] > shape[a] {
            return Err(Error::Size(format!(
                "patch {patch:?} does not fit in volume {shape:?}; pad the volume first"
            )));
        }
        if stride[a] == 0 {
            return Err(Error::Size(format!("stride {stride:?} must be at least 1")));
        }
    }
    let [xs, ys, zs] = std::array::from_fn(|a| axis_origins(shape[a], patch[a], stride[a]));
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([x, y, z]);
            }
        }
    }
    Ok(out)
}

/// Cut `volume` into patches of `patch` shape, one per tiling origin.
pub fn extract_patches(volume: &VolumeGrid, patch: Shape, stride: Shape) -> Result<Vec<(Shape, VolumeGrid)>> {
    patch_origins(volume.shape(), patch, stride)?
        .into_iter()
        .map(|o| Ok((o, volume.crop(o, patch)?)))
        .collect()
}

/// Per-voxel class probabilities, stored class-major: all voxels of class 0,
/// then class 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    shape: Shape,
    num_classes: usize,
    data: Vec<f64>,
}

impl ClassProbabilities {
    pub fn new(shape: Shape, num_classes: usize, data: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || data.len() != num_classes * voxel_count(shape) {
            return Err(Error::Shape(format!(
                "{} values cannot hold {num_classes} classes over {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, num_classes, data })
    }

    /// Every class at probability `1 / num_classes`.
    pub fn uniform(shape: Shape, num_classes: usize) -> Self {
        let p = 1.0 / num_classes as f64;
        Self { shape, num_classes, data: vec![p; num_classes * voxel_count(shape)] }
    }

    /// One-hot probabilities of a label map.
    pub fn one_hot(labels: &LabelMap, num_classes: usize) -> Self {
        let n = labels.len();
        let mut data = vec![0.0; num_classes * n];
        for (i, &l) in labels.labels().iter().enumerate() {
            data[l as usize * n + i] = 1.0;
        }
        Self { shape: labels.shape(), num_classes, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn voxels(&self) -> usize {
        voxel_count(self.shape)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Probabilities of one class over all voxels.
    pub fn class(&self, c: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[c * self.voxels() + linear_index(self.shape, x, y, z)]
    }

    pub fn crop(&self, origin: Shape, size: Shape) -> Result<Self> {
        check_crop(self.shape, origin, size)?;
        let n = self.voxels();
        let mut data = Vec::with_capacity(self.num_classes * voxel_count(size));
        for c in 0..self.num_classes {
            let class = &self.data[c * n..(c + 1) * n];
            data.extend(super::crop_values(class, self.shape, origin, size));
        }
        Ok(Self { shape: size, num_classes: self.num_classes, data })
    }

    /// Most probable class per voxel; ties go to the lower class index.
    pub fn argmax(&self) -> Vec<u8> {
        let n = self.voxels();
        (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..self.num_classes {
                    if self.data[c * n + i] > self.data[best * n + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }

    pub fn to_label_map(&self, spacing: Spacing) -> Result<LabelMap> {
        LabelMap::new(self.shape, spacing, self.argmax())
    }
}

/// Blend overlapping probability patches into a full volume by averaging,
/// per voxel and class, over every patch covering that voxel.
///
/// Patches are accumulated in origin order, so the result does not depend
/// on the order of `patches`.
pub fn reassemble(patches: &[(Shape, ClassProbabilities)], shape: Shape) -> Result<ClassProbabilities> {
    let num_classes = match patches.first() {
        Some((_, p)) => p.num_classes(),
        None => return Err(Error::Coverage("no patches to reassemble".into())),
    };
    let n = voxel_count(shape);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by_key(|&i| {
        let o = patches[i].0;
        (o[2], o[1], o[0])
    });

    let mut sum = vec![0.0; num_classes * n];
    let mut hits = vec![0u32; n];
    for i in order {
        let (origin, patch) = &patches[i];
        if patch.num_classes() != num_classes {
            return Err(Error::Shape(format!(
                "patch at {origin:?} has {} classes, expected {num_classes}",
                patch.num_classes()
            )));
        }
        let ps = patch.shape();
        check_crop(shape, *origin, ps)?;
        let pn = patch.voxels();
        for z in 0..ps[2] {
            for y in 0..ps[1] {
                let dst = linear_index(shape, origin[0], origin[1] + y, origin[2] + z);
                let src = linear_index(ps, 0, y, z);
                for h in &mut hits[dst..dst + ps[0]] {
                    *h += 1;
                }
                for c in 0..num_classes {
                    let d = &mut sum[c * n + dst..c * n + dst + ps[0]];
                    let s = &patch.data[c * pn + src..c * pn + src + ps[0]];
                    for (a, b) in d.iter_mut().zip(s) {
                        *a += b;
                    }
                }
            }
        }
    }
    if let Some(i) = hits.iter().position(|&h| h == 0) {
        let x = i % shape[0];
        let y = (i / shape[0]) % shape[1];
        let z = i / (shape[0] * shape[1]);
        return Err(Error::Coverage(format!("voxel ({x}, {y}, {z}) is not covered by any patch")));
    }
    for c in 0..num_classes {
        for (v, &h) in sum[c * n..(c + 1) * n].iter_mut().zip(&hits) {
            *v /= f64::from(h);
        }
    }
    ClassProbabilities::new(shape, num_classes, sum)
}

use serde::{Deserialize, Serialize};

use super::sample::{nearest_index, trilinear};
use super::{check_spacing, LabelMap, Shape, Spacing, VolumeGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Output shape when resampling `shape` from `spacing` to `target`:
/// `round(n * spacing / target)`, never below one voxel.
pub fn resampled_shape(shape: Shape, spacing: Spacing, target: Spacing) -> Shape {
    std::array::from_fn(|a| ((shape[a] as f64 * spacing[a] / target[a]).round() as usize).max(1))
}

/// Source voxel coordinates for every output voxel, per axis.
///
/// Voxel centres are aligned so that both grids span the same physical
/// extent: output index `i` maps to `(i + 0.5) * target / source - 0.5`.
fn source_coords(n_out: usize, source: f64, target: f64) -> Vec<f64> {
    let ratio = target / source;
    (0..n_out).map(|i| (i as f64 + 0.5) * ratio - 0.5).collect()
}

fn for_each_source_point(
    shape: Shape,
    spacing: Spacing,
    target: Spacing,
    mut f: impl FnMut([f64; 3]),
) -> Shape {
    let out = resampled_shape(shape, spacing, target);
    let cx = source_coords(out[0], spacing[0], target[0]);
    let cy = source_coords(out[1], spacing[1], target[1]);
    let cz = source_coords(out[2], spacing[2], target[2]);
    for &z in &cz {
        for &y in &cy {
            for &x in &cx {
                f([x, y, z]);
            }
        }
    }
    out
}

impl VolumeGrid {
    /// Resample onto a grid with `target` spacing covering the same extent.
    pub fn resample(&self, target: Spacing, mode: Interpolation) -> Result<VolumeGrid> {
        check_spacing(target)?;
        let shape = self.shape();
        let mut values = Vec::new();
        let out = for_each_source_point(shape, self.spacing(), target, |p| {
            values.push(match mode {
                Interpolation::Trilinear => trilinear(self.values(), shape, p),
                Interpolation::Nearest => self.values()[nearest_index(shape, p)],
            })
        });
        VolumeGrid::new(out, target, values)
    }
}

impl LabelMap {
    /// Resample labels; only nearest-neighbour keeps the class set discrete.
    pub fn resample(&self, target: Spacing, mode: Interpolation) -> Result<LabelMap> {
        if mode != Interpolation::Nearest {
            return Err(Error::Mode("label maps can only be resampled with nearest".into()));
        }
        check_spacing(target)?;
        let shape = self.shape();
        let mut labels = Vec::new();
        let out = for_each_source_point(shape, self.spacing(), target, |p| {
            labels.push(self.labels()[nearest_index(shape, p)])
        });
        LabelMap::new(out, target, labels)
    }
}

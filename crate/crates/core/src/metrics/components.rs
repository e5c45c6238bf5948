//! Connected-component labelling of binary masks.

use serde::{Deserialize, Serialize};

use crate::volume::{linear_index, voxel_count, Shape};
use crate::{Error, Result};

/// Face neighbours only, or faces, edges and corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Self::Six),
            26 => Ok(Self::TwentySix),
            _ => Err(Error::Validation(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    pub(crate) fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Self::Six => manhattan == 1,
                        Self::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Component label per voxel (0 outside the mask, 1..=count inside),
/// numbered in order of each component's first voxel in scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Components {
    /// Voxel count of every component, indexed by `label - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in self.labels.iter().filter(|&&l| l > 0) {
            sizes[l as usize - 1] += 1;
        }
        sizes
    }
}

/// Flood-fill labelling of `mask` (x-fastest layout over `shape`).
pub fn connected_components(mask: &[bool], shape: Shape, connectivity: Connectivity) -> Result<Components> {
    if mask.len() != voxel_count(shape) {
        return Err(Error::Shape(format!("mask of {} voxels does not fit {shape:?}", mask.len())));
    }
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; mask.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count as u32;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let p = [i % shape[0], (i / shape[0]) % shape[1], i / (shape[0] * shape[1])];
            for off in &offsets {
                let q: Option<Vec<usize>> = (0..3)
                    .map(|a| p[a].checked_add_signed(off[a]).filter(|&v| v < shape[a]))
                    .collect();
                let Some(q) = q else { continue };
                let j = linear_index(shape, q[0], q[1], q[2]);
                if mask[j] && labels[j] == 0 {
                    labels[j] = count as u32;
                    stack.push(j);
                }
            }
        }
    }
    Ok(Components { labels, count })
}

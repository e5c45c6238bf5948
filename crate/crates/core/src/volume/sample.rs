//! Point sampling in voxel-index coordinates with edge clamping.

use super::{linear_index, Shape};

#[inline]
fn clamp_axis(c: f64, n: usize) -> f64 {
    c.clamp(0.0, (n - 1) as f64)
}

/// Trilinear interpolation at continuous voxel coordinate `p`.
pub(crate) fn trilinear(values: &[f64], shape: Shape, p: [f64; 3]) -> f64 {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut t = [0.0f64; 3];
    for a in 0..3 {
        let c = clamp_axis(p[a], shape[a]);
        let f = c.floor();
        lo[a] = f as usize;
        hi[a] = (lo[a] + 1).min(shape[a] - 1);
        t[a] = c - f;
    }
    let at = |x: usize, y: usize, z: usize| values[linear_index(shape, x, y, z)];
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
    let c00 = lerp(at(lo[0], lo[1], lo[2]), at(hi[0], lo[1], lo[2]), t[0]);
    let c10 = lerp(at(lo[0], hi[1], lo[2]), at(hi[0], hi[1], lo[2]), t[0]);
    let c01 = lerp(at(lo[0], lo[1], hi[2]), at(hi[0], lo[1], hi[2]), t[0]);
    let c11 = lerp(at(lo[0], hi[1], hi[2]), at(hi[0], hi[1], hi[2]), t[0]);
    let c0 = lerp(c00, c10, t[1]);
    let c1 = lerp(c01, c11, t[1]);
    lerp(c0, c1, t[2])
}

/// Index of the voxel nearest to `p`, clamped into the grid.
#[inline]
pub(crate) fn nearest_index(shape: Shape, p: [f64; 3]) -> usize {
    let i: [usize; 3] =
        std::array::from_fn(|a| (clamp_axis(p[a], shape[a]) + 0.5).floor() as usize);
    linear_index(shape, i[0].min(shape[0] - 1), i[1].min(shape[1] - 1), i[2].min(shape[2] - 1))
}

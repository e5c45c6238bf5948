//! Direct 3x3x3 same-padded convolution on zero-padded inputs, blocked over
//! output channels and runs of voxels along x so the accumulators stay in
//! registers.

use std::any::TypeId;

use super::tensor::{Scalar, Tensor};
use crate::volume::Shape;

const TAPS: usize = 27;

/// Geometry of a channel padded by one voxel on every side.
#[derive(Clone, Copy)]
struct Padded {
    shape: Shape,
    px: usize,
    py: usize,
    plane: usize,
}

impl Padded {
    fn new(shape: Shape) -> Self {
        let (px, py) = (shape[0] + 2, shape[1] + 2);
        Self { shape, px, py, plane: px * py * (shape[2] + 2) }
    }

    /// Offset of padded voxel `(0, y, z)` of channel `c`.
    fn row(&self, c: usize, y: usize, z: usize) -> usize {
        c * self.plane + (z * self.py + y) * self.px
    }
}

/// Zero-pad every channel by one voxel on each side.
fn pad<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let g = Padded::new(x.shape);
    let [nx, ny, nz] = x.shape;
    let mut out = vec![T::zero(); x.channels * g.plane];
    for c in 0..x.channels {
        let src = x.channel(c);
        for z in 0..nz {
            for y in 0..ny {
                let d = g.row(c, y + 1, z + 1) + 1;
                out[d..d + nx].copy_from_slice(&src[(z * ny + y) * nx..][..nx]);
            }
        }
    }
    out
}

/// The slice as `f32` when `T` is `f32`.
fn as_f32<T: Scalar>(s: &[T]) -> Option<&[f32]> {
    (TypeId::of::<T>() == TypeId::of::<f32>())
        // SAFETY: T is f32, so layout and length agree.
        .then(|| unsafe { std::slice::from_raw_parts(s.as_ptr().cast::<f32>(), s.len()) })
}

/// Inverse of [`as_f32`] for owned buffers; only called when `T` is `f32`.
fn from_f32<T: Scalar>(v: Vec<f32>) -> Vec<T> {
    assert_eq!(TypeId::of::<T>(), TypeId::of::<f32>());
    let mut v = std::mem::ManuallyDrop::new(v);
    // SAFETY: T is f32; the allocation is handed over unchanged.
    unsafe { Vec::from_raw_parts(v.as_mut_ptr().cast::<T>(), v.len(), v.capacity()) }
}

#[inline(always)]
fn madd<T: Scalar, const FMA: bool>(acc: T, a: T, b: T) -> T {
    if FMA {
        a.mul_add(b, acc)
    } else {
        acc + a * b
    }
}

#[inline(always)]
fn chunk<T: Copy, const N: usize>(s: &[T], at: usize) -> [T; N] {
    s[at..at + N].try_into().expect("chunk in bounds")
}

/// Output tile: channels `co0..co0 + CB`, voxels `x0..x0 + W` of row `(y, z)`.
/// `wt` is `[cin][27][cout]`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn fwd_tile<T: Scalar, const CB: usize, const W: usize, const FMA: bool>(
    xp: &[T],
    g: Padded,
    cin: usize,
    wt: &[T],
    cout: usize,
    co0: usize,
    x0: usize,
    y: usize,
    z: usize,
) -> [[T; W]; CB] {
    let mut acc = [[T::zero(); W]; CB];
    for ci in 0..cin {
        for kz in 0..3 {
            for ky in 0..3 {
                let row = g.row(ci, y + ky, z + kz) + x0;
                for kx in 0..3 {
                    let v: [T; W] = chunk(xp, row + kx);
                    let w: [T; CB] = chunk(wt, (ci * TAPS + kz * 9 + ky * 3 + kx) * cout + co0);
                    for c in 0..CB {
                        for i in 0..W {
                            acc[c][i] = madd::<T, FMA>(acc[c][i], w[c], v[i]);
                        }
                    }
                }
            }
        }
    }
    acc
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn fwd_channels<T: Scalar, const CB: usize, const FMA: bool>(
    xp: &[T],
    g: Padded,
    cin: usize,
    wt: &[T],
    cout: usize,
    co0: usize,
    out: &mut [T],
) {
    let [nx, ny, nz] = g.shape;
    let n = nx * ny * nz;
    for z in 0..nz {
        for y in 0..ny {
            let base = (z * ny + y) * nx;
            let mut x0 = 0;
            while x0 + 8 <= nx {
                let acc = fwd_tile::<T, CB, 8, FMA>(xp, g, cin, wt, cout, co0, x0, y, z);
                for (c, a) in acc.iter().enumerate() {
                    out[(co0 + c) * n + base + x0..][..8].copy_from_slice(a);
                }
                x0 += 8;
            }
            for x in x0..nx {
                let acc = fwd_tile::<T, CB, 1, FMA>(xp, g, cin, wt, cout, co0, x, y, z);
                for (c, a) in acc.iter().enumerate() {
                    out[(co0 + c) * n + base + x] = a[0];
                }
            }
        }
    }
}

#[inline(always)]
fn correlate_impl<T: Scalar, const FMA: bool>(xp: &[T], g: Padded, cin: usize, wt: &[T], cout: usize) -> Vec<T> {
    let n = g.shape.iter().product::<usize>();
    let mut out = vec![T::zero(); cout * n];
    let mut co0 = 0;
    while co0 < cout {
        match cout - co0 {
            r if r >= 8 => {
                fwd_channels::<T, 8, FMA>(xp, g, cin, wt, cout, co0, &mut out);
                co0 += 8;
            }
            r if r >= 4 => {
                fwd_channels::<T, 4, FMA>(xp, g, cin, wt, cout, co0, &mut out);
                co0 += 4;
            }
            _ => {
                fwd_channels::<T, 1, FMA>(xp, g, cin, wt, cout, co0, &mut out);
                co0 += 1;
            }
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn correlate_fma<T: Scalar>(xp: &[T], g: Padded, cin: usize, wt: &[T], cout: usize) -> Vec<T> {
    correlate_impl::<T, true>(xp, g, cin, wt, cout)
}

fn has_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// `out[co](v) = Σ_ci Σ_tap wt[ci][tap][co] · xp[ci](v + tap)` over the
/// unpadded grid.
fn correlate<T: Scalar>(xp: &[T], g: Padded, cin: usize, wt: &[T], cout: usize) -> Vec<T> {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        if let (Some(xp32), Some(wt32)) = (as_f32(xp), as_f32(wt)) {
            if avx2::suits(g, cout) {
                // SAFETY: the CPU supports avx2 and fma; T is f32.
                return from_f32(unsafe { avx2::correlate(xp32, g, cin, wt32, cout) });
            }
        }
        // SAFETY: the CPU supports the enabled features.
        return unsafe { correlate_fma(xp, g, cin, wt, cout) };
    }
    correlate_impl::<T, false>(xp, g, cin, wt, cout)
}

/// 3x3x3 same-padded convolution; `w` is `[cout][cin][27]`.
pub(crate) fn conv3<T: Scalar>(x: &Tensor<T>, w: &[T], b: &[T]) -> Tensor<T> {
    let (cin, cout) = (x.channels, b.len());
    let mut wt = vec![T::zero(); w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for tap in 0..TAPS {
                wt[(ci * TAPS + tap) * cout + co] = w[(co * cin + ci) * TAPS + tap];
            }
        }
    }
    let g = Padded::new(x.shape);
    let mut data = correlate(&pad(x), g, cin, &wt, cout);
    let n = x.voxels();
    for (chunk, &bias) in data.chunks_mut(n).zip(b) {
        chunk.iter_mut().for_each(|v| *v += bias);
    }
    Tensor::from_data(cout, x.shape, data)
}

/// Gradient with respect to the input: correlation of the padded output
/// gradient with the flipped, channel-transposed kernel.
pub(crate) fn conv3_input_grad<T: Scalar>(dy: &Tensor<T>, w: &[T], cin: usize) -> Tensor<T> {
    let cout = dy.channels;
    let mut wt = vec![T::zero(); w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for tap in 0..TAPS {
                wt[(co * TAPS + tap) * cin + ci] = w[(co * cin + ci) * TAPS + TAPS - 1 - tap];
            }
        }
    }
    let g = Padded::new(dy.shape);
    Tensor::from_data(cin, dy.shape, correlate(&pad(dy), g, cout, &wt, cin))
}

/// Weight-gradient contributions of channels `co0..co0 + CB` against input
/// channel `ci` and kernel row `(ky, kz)`, for all three `kx`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn dw_row<T: Scalar, const CB: usize, const FMA: bool>(
    xp: &[T],
    g: Padded,
    dy: &[T],
    co0: usize,
    ci: usize,
    ky: usize,
    kz: usize,
) -> [[T; CB]; 3] {
    let [nx, ny, nz] = g.shape;
    let n = nx * ny * nz;
    let mut acc = [[[T::zero(); 8]; CB]; 3];
    let mut tail = [[T::zero(); CB]; 3];
    for z in 0..nz {
        for y in 0..ny {
            let xrow = g.row(ci, y + ky, z + kz);
            let drow = (z * ny + y) * nx;
            let mut x0 = 0;
            while x0 + 8 <= nx {
                let d: [[T; 8]; CB] = std::array::from_fn(|c| chunk(dy, (co0 + c) * n + drow + x0));
                for kx in 0..3 {
                    let v: [T; 8] = chunk(xp, xrow + x0 + kx);
                    for c in 0..CB {
                        for i in 0..8 {
                            acc[kx][c][i] = madd::<T, FMA>(acc[kx][c][i], d[c][i], v[i]);
                        }
                    }
                }
                x0 += 8;
            }
            for x in x0..nx {
                for kx in 0..3 {
                    let v = xp[xrow + x + kx];
                    for c in 0..CB {
                        tail[kx][c] = madd::<T, FMA>(tail[kx][c], dy[(co0 + c) * n + drow + x], v);
                    }
                }
            }
        }
    }
    std::array::from_fn(|kx| std::array::from_fn(|c| acc[kx][c].iter().fold(tail[kx][c], |s, &v| s + v)))
}

#[inline(always)]
fn weight_grad_impl<T: Scalar, const FMA: bool>(xp: &[T], g: Padded, cin: usize, dy: &[T], cout: usize) -> Vec<T> {
    let mut dw = vec![T::zero(); cout * cin * TAPS];
    let mut store = |co0: usize, ci: usize, ky: usize, kz: usize, part: &[&[T]; 3]| {
        for (kx, vals) in part.iter().enumerate() {
            for (c, &v) in vals.iter().enumerate() {
                dw[((co0 + c) * cin + ci) * TAPS + kz * 9 + ky * 3 + kx] = v;
            }
        }
    };
    let mut co0 = 0;
    while co0 < cout {
        let block = if cout - co0 >= 4 { 4 } else { 1 };
        for ci in 0..cin {
            for kz in 0..3 {
                for ky in 0..3 {
                    if block == 4 {
                        let r = dw_row::<T, 4, FMA>(xp, g, dy, co0, ci, ky, kz);
                        store(co0, ci, ky, kz, &[&r[0], &r[1], &r[2]]);
                    } else {
                        let r = dw_row::<T, 1, FMA>(xp, g, dy, co0, ci, ky, kz);
                        store(co0, ci, ky, kz, &[&r[0], &r[1], &r[2]]);
                    }
                }
            }
        }
        co0 += block;
    }
    dw
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn weight_grad_fma<T: Scalar>(xp: &[T], g: Padded, cin: usize, dy: &[T], cout: usize) -> Vec<T> {
    weight_grad_impl::<T, true>(xp, g, cin, dy, cout)
}

/// Gradient with respect to the `[cout][cin][27]` weights.
pub(crate) fn conv3_weight_grad<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Vec<T> {
    let g = Padded::new(x.shape);
    let xp = pad(x);
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        if avx2::suits(g, dy.channels) {
            let dyp = pad(dy);
            if let (Some(xp32), Some(dy32)) = (as_f32(&xp), as_f32(&dyp)) {
                // SAFETY: the CPU supports avx2 and fma; T is f32.
                return from_f32(unsafe { avx2::weight_grad(xp32, g, x.channels, dy32, dy.channels) });
            }
        }
        // SAFETY: the CPU supports the enabled features.
        return unsafe { weight_grad_fma(&xp, g, x.channels, &dy.data, dy.channels) };
    }
    weight_grad_impl::<T, false>(&xp, g, x.channels, &dy.data, dy.channels)
}

/// Hand-vectorized single-precision kernels: four output channels by one or
/// two 8-wide runs along x for the correlation, three taps by four output
/// channels for the weight gradient.
#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    use super::{Padded, TAPS};

    const CB: usize = 4;

    pub(super) fn suits(g: Padded, cout: usize) -> bool {
        cout % CB == 0 && g.shape[0] >= 8
    }

    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn tile<const NV: usize>(
        xp: *const f32,
        g: Padded,
        cin: usize,
        wt: *const f32,
        cout: usize,
        co0: usize,
        x0: usize,
        y: usize,
        z: usize,
    ) -> [[__m256; NV]; CB] {
        let mut acc = [[_mm256_setzero_ps(); NV]; CB];
        for ci in 0..cin {
            for kz in 0..3 {
                for ky in 0..3 {
                    let row = xp.add(g.row(ci, y + ky, z + kz) + x0);
                    let w = wt.add((ci * TAPS + kz * 9 + ky * 3) * cout + co0);
                    for kx in 0..3 {
                        let v: [__m256; NV] = std::array::from_fn(|j| _mm256_loadu_ps(row.add(kx + 8 * j)));
                        for (c, a) in acc.iter_mut().enumerate() {
                            let wc = _mm256_broadcast_ss(&*w.add(kx * cout + c));
                            for j in 0..NV {
                                a[j] = _mm256_fmadd_ps(wc, v[j], a[j]);
                            }
                        }
                    }
                }
            }
        }
        acc
    }

    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn scalar_tile(xp: &[f32], g: Padded, cin: usize, wt: &[f32], cout: usize, co0: usize, x: usize, y: usize, z: usize) -> [f32; CB] {
        let mut acc = [0.0f32; CB];
        for ci in 0..cin {
            for kz in 0..3 {
                for ky in 0..3 {
                    let row = g.row(ci, y + ky, z + kz) + x;
                    for kx in 0..3 {
                        let v = xp[row + kx];
                        let w = (ci * TAPS + kz * 9 + ky * 3 + kx) * cout + co0;
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a = wt[w + c].mul_add(v, *a);
                        }
                    }
                }
            }
        }
        acc
    }

    /// # Safety
    /// The CPU must support avx2 and fma, `suits(g, cout)` must hold and the
    /// buffers must match the geometry.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn correlate(xp: &[f32], g: Padded, cin: usize, wt: &[f32], cout: usize) -> Vec<f32> {
        let [nx, ny, nz] = g.shape;
        let n = nx * ny * nz;
        assert_eq!(xp.len(), cin * g.plane);
        assert_eq!(wt.len(), cin * TAPS * cout);
        let mut out = vec![0.0f32; cout * n];
        let o = out.as_mut_ptr();
        for co0 in (0..cout).step_by(CB) {
            for z in 0..nz {
                for y in 0..ny {
                    let base = (z * ny + y) * nx;
                    let mut x0 = 0;
                    while x0 + 16 <= nx {
                        let acc = tile::<2>(xp.as_ptr(), g, cin, wt.as_ptr(), cout, co0, x0, y, z);
                        for (c, a) in acc.iter().enumerate() {
                            let dst = o.add((co0 + c) * n + base + x0);
                            _mm256_storeu_ps(dst, a[0]);
                            _mm256_storeu_ps(dst.add(8), a[1]);
                        }
                        x0 += 16;
                    }
                    while x0 + 8 <= nx {
                        let acc = tile::<1>(xp.as_ptr(), g, cin, wt.as_ptr(), cout, co0, x0, y, z);
                        for (c, a) in acc.iter().enumerate() {
                            _mm256_storeu_ps(o.add((co0 + c) * n + base + x0), a[0]);
                        }
                        x0 += 8;
                    }
                    for x in x0..nx {
                        let acc = scalar_tile(xp, g, cin, wt, cout, co0, x, y, z);
                        for (c, a) in acc.iter().enumerate() {
                            out[(co0 + c) * n + base + x] = *a;
                        }
                    }
                }
            }
        }
        out
    }

    #[inline(always)]
    unsafe fn hsum(v: __m256) -> f32 {
        let s = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
        let s = _mm_add_ps(s, _mm_movehl_ps(s, s));
        _mm_cvtss_f32(_mm_add_ss(s, _mm_shuffle_ps(s, s, 1)))
    }

    #[inline(always)]
    unsafe fn dw_span(dp: *const f32, plane: usize, xs: *const f32, len: usize) -> [[__m256; CB]; 3] {
        let mut acc = [[_mm256_setzero_ps(); CB]; 3];
        let mut i = 0;
        while i + 8 <= len {
            let d: [__m256; CB] = std::array::from_fn(|c| _mm256_loadu_ps(dp.add(c * plane + i)));
            for (kx, a) in acc.iter_mut().enumerate() {
                let v = _mm256_loadu_ps(xs.add(i + kx));
                for c in 0..CB {
                    a[c] = _mm256_fmadd_ps(d[c], v, a[c]);
                }
            }
            i += 8;
        }
        acc
    }

    /// Both operands padded: with a zero border on the output gradient, each
    /// tap is a dot product of two flat spans offset by the tap shift.
    ///
    /// # Safety
    /// As for [`correlate`], with `dyp` holding `cout` padded channels.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn weight_grad(xp: &[f32], g: Padded, cin: usize, dyp: &[f32], cout: usize) -> Vec<f32> {
        assert_eq!(xp.len(), cin * g.plane);
        assert_eq!(dyp.len(), cout * g.plane);
        // first and one-past-last interior voxel of a padded channel
        let start = g.row(0, 1, 1) + 1;
        let end = g.row(0, g.shape[1], g.shape[2]) + g.shape[0] + 1;
        let len = end - start;
        let vec_len = len / 8 * 8;
        let mut dw = vec![0.0f32; cout * cin * TAPS];
        for co0 in (0..cout).step_by(CB) {
            let dp = dyp.as_ptr().add(co0 * g.plane + start);
            for ci in 0..cin {
                for kz in 0..3 {
                    for ky in 0..3 {
                        // padded offset of tap (0, ky, kz) relative to the output voxel
                        let xs = g.row(ci, ky, kz) + start - g.row(0, 1, 1) - 1;
                        let acc = dw_span(dp, g.plane, xp.as_ptr().add(xs), vec_len);
                        for kx in 0..3 {
                            for c in 0..CB {
                                let mut sum = hsum(acc[kx][c]);
                                for i in vec_len..len {
                                    sum = dyp[(co0 + c) * g.plane + start + i].mul_add(xp[xs + i + kx], sum);
                                }
                                dw[((co0 + c) * cin + ci) * TAPS + kz * 9 + ky * 3 + kx] = sum;
                            }
                        }
                    }
                }
            }
        }
        dw
    }
}

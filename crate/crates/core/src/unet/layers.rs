//! Layer kernels with forward and backward passes.
//!
//! Convolution weights are row-major: `[cout][cin][kz][ky][kx]` for the
//! 3x3x3 and 1x1x1 convolutions, `[cin][cout][kz][ky][kx]` for the 2x2x2
//! transposed convolution.

use super::conv;
use super::tensor::{gemm, Scalar, Tensor};
use crate::volume::Shape;

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], n: usize) {
    for (chunk, &b) in y.chunks_mut(n).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(dy: &[T], n: usize) -> Vec<T> {
    dy.chunks(n).map(|c| c.iter().copied().sum()).collect()
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

/// 3x3x3 same-padded convolution.
pub(crate) fn conv3_forward<T: Scalar>(x: &Tensor<T>, w: &[T], b: &[T]) -> Tensor<T> {
    conv::conv3(x, w, b)
}

pub(crate) fn conv3_backward<T: Scalar>(x: &Tensor<T>, w: &[T], dy: &Tensor<T>, need_dx: bool) -> ConvGrads<T> {
    ConvGrads {
        dx: need_dx.then(|| conv::conv3_input_grad(dy, w, x.channels)),
        dw: conv::conv3_weight_grad(x, dy),
        db: bias_grad(&dy.data, x.voxels()),
    }
}

/// 1x1x1 convolution.
pub(crate) fn conv1_forward<T: Scalar>(x: &Tensor<T>, w: &[T], b: &[T]) -> Tensor<T> {
    let cout = b.len();
    let n = x.voxels();
    let mut y = Tensor::zeros(cout, x.shape);
    gemm(cout, x.channels, n, (w, x.channels, 1), (&x.data, n, 1), T::zero(), &mut y.data);
    add_bias(&mut y.data, b, n);
    y
}

pub(crate) fn conv1_backward<T: Scalar>(x: &Tensor<T>, w: &[T], dy: &Tensor<T>) -> ConvGrads<T> {
    let (cin, cout, n) = (x.channels, dy.channels, x.voxels());
    let mut dw = vec![T::zero(); cout * cin];
    gemm(cout, n, cin, (&dy.data, n, 1), (&x.data, 1, n), T::zero(), &mut dw);
    let mut dx = Tensor::zeros(cin, x.shape);
    gemm(cin, cout, n, (w, 1, cin), (&dy.data, n, 1), T::zero(), &mut dx.data);
    ConvGrads { dx: Some(dx), dw, db: bias_grad(&dy.data, n) }
}

/// Offsets of the eight children of a coarse voxel, in `kz, ky, kx` order.
fn child_offsets() -> impl Iterator<Item = (usize, [usize; 3])> {
    (0..8).map(|o| (o, [o % 2, (o / 2) % 2, o / 4]))
}

/// 2x2x2 stride-2 transposed convolution, doubling every spatial dimension.
pub(crate) fn upconv_forward<T: Scalar>(x: &Tensor<T>, w: &[T], b: &[T]) -> Tensor<T> {
    let (cin, cout) = (x.channels, b.len());
    let [nx, ny, nz] = x.shape;
    let n = x.voxels();
    let fine = [2 * nx, 2 * ny, 2 * nz];
    let mut y = Tensor::zeros(cout, fine);
    let fine_n = y.voxels();
    let mut tmp = vec![T::zero(); cout * n];
    for (o, [dx, dy, dz]) in child_offsets() {
        // tmp (cout x n) = W_o^T (cout x cin) * x (cin x n)
        gemm(cout, cin, n, (&w[o..], 8, cout * 8), (&x.data, n, 1), T::zero(), &mut tmp);
        for co in 0..cout {
            let src = &tmp[co * n..][..n];
            let dst = &mut y.data[co * fine_n..][..fine_n];
            for z in 0..nz {
                for yy in 0..ny {
                    let base = ((2 * z + dz) * 2 * ny + 2 * yy + dy) * 2 * nx + dx;
                    let row = &src[(z * ny + yy) * nx..][..nx];
                    for (xx, &v) in row.iter().enumerate() {
                        dst[base + 2 * xx] = v + b[co];
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn upconv_backward<T: Scalar>(x: &Tensor<T>, w: &[T], dy: &Tensor<T>) -> ConvGrads<T> {
    let (cin, cout) = (x.channels, dy.channels);
    let [nx, ny, nz] = x.shape;
    let n = x.voxels();
    let fine_n = dy.voxels();
    let mut dx = Tensor::zeros(cin, x.shape);
    let mut dw = vec![T::zero(); cin * cout * 8];
    let mut dy_o = vec![T::zero(); cout * n];
    let mut dw_o = vec![T::zero(); cin * cout];
    for (o, [ox, oy, oz]) in child_offsets() {
        for co in 0..cout {
            let src = &dy.data[co * fine_n..][..fine_n];
            let dst = &mut dy_o[co * n..][..n];
            for z in 0..nz {
                for yy in 0..ny {
                    let base = ((2 * z + oz) * 2 * ny + 2 * yy + oy) * 2 * nx + ox;
                    let row = &mut dst[(z * ny + yy) * nx..][..nx];
                    for (xx, v) in row.iter_mut().enumerate() {
                        *v = src[base + 2 * xx];
                    }
                }
            }
        }
        // dx (cin x n) += W_o (cin x cout) * dy_o (cout x n)
        gemm(cin, cout, n, (&w[o..], cout * 8, 8), (&dy_o, n, 1), T::one(), &mut dx.data);
        // dW_o (cin x cout) = x (cin x n) * dy_o^T (n x cout)
        gemm(cin, n, cout, (&x.data, n, 1), (&dy_o, 1, n), T::zero(), &mut dw_o);
        for (i, &g) in dw_o.iter().enumerate() {
            dw[i * 8 + o] = g;
        }
    }
    ConvGrads { dx: Some(dx), dw, db: bias_grad(&dy.data, fine_n) }
}

/// 2x2x2 max-pool; returns the pooled tensor and, per output element, the
/// flat index of the winning input element (first maximum in scan order).
pub(crate) fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let [nx, ny, nz] = x.shape;
    let coarse = [nx / 2, ny / 2, nz / 2];
    let mut y = Tensor::zeros(x.channels, coarse);
    let mut arg = vec![0; y.data.len()];
    let n = x.voxels();
    let mut out = 0;
    for c in 0..x.channels {
        for z in 0..coarse[2] {
            for yy in 0..coarse[1] {
                for xx in 0..coarse[0] {
                    let mut best = usize::MAX;
                    for (_, [dx, dy, dz]) in child_offsets() {
                        let i = c * n + ((2 * z + dz) * ny + 2 * yy + dy) * nx + 2 * xx + dx;
                        if best == usize::MAX || x.data[i] > x.data[best] {
                            best = i;
                        }
                    }
                    y.data[out] = x.data[best];
                    arg[out] = best;
                    out += 1;
                }
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward<T: Scalar>(dy: &Tensor<T>, arg: &[usize], channels: usize, shape: Shape) -> Tensor<T> {
    let mut dx = Tensor::zeros(channels, shape);
    for (&i, &g) in arg.iter().zip(&dy.data) {
        dx.data[i] += g;
    }
    dx
}

pub(crate) fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    x.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Gate an upstream gradient by the post-activation output of a ReLU.
pub(crate) fn relu_backward_in_place<T: Scalar>(dy: &mut Tensor<T>, out: &Tensor<T>) {
    for (g, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub(crate) fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.shape, b.shape, "concatenated tensors share a grid");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_data(a.channels + b.channels, a.shape, data)
}

pub(crate) fn split<T: Scalar>(d: Tensor<T>, first_channels: usize) -> (Tensor<T>, Tensor<T>) {
    let cut = first_channels * d.voxels();
    let mut head = d.data;
    let tail = head.split_off(cut);
    (
        Tensor::from_data(first_channels, d.shape, head),
        Tensor::from_data(d.channels - first_channels, d.shape, tail),
    )
}

/// Softmax over channels at every voxel, shifted by the per-voxel maximum.
pub(crate) fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (c, n) = (logits.channels, logits.voxels());
    let mut p = logits.clone();
    for v in 0..n {
        let max = (0..c).map(|k| logits.data[k * n + v]).fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for k in 0..c {
            let e = (logits.data[k * n + v] - max).exp();
            p.data[k * n + v] = e;
            total += e;
        }
        for k in 0..c {
            p.data[k * n + v] = p.data[k * n + v] / total;
        }
    }
    p
}

/// Gradient with respect to the logits given the gradient with respect to
/// the probabilities: `dz_k = p_k * (dp_k - sum_j p_j dp_j)`.
pub(crate) fn softmax_backward<T: Scalar>(p: &Tensor<T>, dp: &[T]) -> Tensor<T> {
    let (c, n) = (p.channels, p.voxels());
    let mut dz = Tensor::zeros(c, p.shape);
    for v in 0..n {
        let dot: T = (0..c).map(|k| p.data[k * n + v] * dp[k * n + v]).sum();
        for k in 0..c {
            dz.data[k * n + v] = p.data[k * n + v] * (dp[k * n + v] - dot);
        }
    }
    dz
}

//! Dense multi-channel volumes and the matrix product kernel behind the
//! convolution layers.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::volume::{voxel_count, Shape};

/// Floating-point element type of the network: `f32` for training, `f64`
/// for gradient checks and reproducibility tests.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = a * b + beta * c` on strided matrices.
    ///
    /// # Safety
    /// Every index addressed through the dimensions and strides must be in
    /// bounds of the corresponding pointer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every scalar type")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided view of a matrix stored in a slice: `(data, row stride, column stride)`.
pub(crate) type MatRef<'a, T> = (&'a [T], usize, usize);

fn last_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    (rows - 1) * rs + (cols - 1) * cs
}

/// `c (m x n, row-major, contiguous) = a (m x k) * b (k x n) + beta * c`.
pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: MatRef<T>, b: MatRef<T>, beta: T, c: &mut [T]) {
    assert_eq!(c.len(), m * n, "output buffer size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = *v * beta);
        return;
    }
    let (ad, rsa, csa) = a;
    let (bd, rsb, csb) = b;
    assert!(last_index(m, k, rsa, csa) < ad.len(), "lhs out of bounds");
    assert!(last_index(k, n, rsb, csb) < bd.len(), "rhs out of bounds");
    // SAFETY: the bounds of all three operands were checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            ad.as_ptr(),
            rsa as isize,
            csa as isize,
            bd.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Channel-major volume: channel `c`, voxel `(x, y, z)` at
/// `c * voxels + x + nx * (y + ny * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub(crate) channels: usize,
    pub(crate) shape: Shape,
    pub(crate) data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, shape: Shape) -> Self {
        Self { channels, shape, data: vec![T::zero(); channels * voxel_count(shape)] }
    }

    pub fn from_data(channels: usize, shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * voxel_count(shape), "tensor data length");
        Self { channels, shape, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn voxels(&self) -> usize {
        voxel_count(self.shape)
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }
}

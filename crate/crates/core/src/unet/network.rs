//! Forward and backward passes of the whole network.

use super::denormal::FlushDenormals;
use super::layers::*;
use super::loss::{tversky_loss_and_grad, TverskyParams};
use super::params::{LayerKind, LayerSpec, NetworkParameters};
use super::tensor::{Scalar, Tensor};
use crate::volume::{ClassProbabilities, LabelMap, VolumeGrid};
use crate::{Error, Result};

fn check_finite<T: Scalar>(layer: &str, what: &str, data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numerical {
            layer: layer.to_string(),
            detail: format!("non-finite {what} at element {i}"),
        }),
    }
}

/// Activations retained for the backward pass.
struct Trace<T> {
    /// Per two-convolution block: block input, first and second activation.
    blocks: Vec<[Tensor<T>; 3]>,
    /// Max-pool winners per encoder level.
    pools: Vec<Vec<usize>>,
    /// Transposed-convolution inputs per decoder level.
    ups: Vec<Tensor<T>>,
    head_in: Tensor<T>,
    probs: Tensor<T>,
}

struct Runner<'a, T> {
    params: &'a NetworkParameters<T>,
    layers: Vec<LayerSpec>,
}

impl<'a, T: Scalar> Runner<'a, T> {
    fn new(params: &'a NetworkParameters<T>) -> Self {
        Self { params, layers: params.architecture().layers() }
    }

    fn conv_relu(&self, idx: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let layer = &self.layers[idx];
        debug_assert_eq!(layer.kind, LayerKind::Conv3);
        let mut y = conv3_forward(x, self.params.weight(idx), self.params.bias(idx));
        check_finite(&layer.name, "activation", &y.data)?;
        relu_in_place(&mut y);
        Ok(y)
    }

    fn block(&self, first: usize, x: Tensor<T>, trace: &mut Trace<T>) -> Result<Tensor<T>> {
        let a = self.conv_relu(first, &x)?;
        let b = self.conv_relu(first + 1, &a)?;
        trace.blocks.push([x, a, b.clone()]);
        Ok(b)
    }

    fn forward(&self, input: Tensor<T>) -> Result<Trace<T>> {
        let arch = self.params.architecture();
        arch.check_patch(input.shape)?;
        let depth = arch.depth;
        let mut trace = Trace {
            blocks: Vec::new(),
            pools: Vec::new(),
            ups: Vec::new(),
            head_in: Tensor::zeros(0, input.shape),
            probs: Tensor::zeros(0, input.shape),
        };
        let mut x = input;
        let mut idx = 0;
        for _ in 0..depth {
            let skip = self.block(idx, x, &mut trace)?;
            idx += 2;
            let (pooled, arg) = maxpool_forward(&skip);
            trace.pools.push(arg);
            x = pooled;
        }
        x = self.block(idx, x, &mut trace)?;
        idx += 2;
        for level in (0..depth).rev() {
            let up = &self.layers[idx];
            let u = upconv_forward(&x, self.params.weight(idx), self.params.bias(idx));
            check_finite(&up.name, "activation", &u.data)?;
            trace.ups.push(x);
            let skip = trace.blocks[level][2].clone();
            x = self.block(idx + 1, concat(&u, &skip), &mut trace)?;
            idx += 3;
        }
        let head = &self.layers[idx];
        let logits = conv1_forward(&x, self.params.weight(idx), self.params.bias(idx));
        check_finite(&head.name, "logit", &logits.data)?;
        trace.probs = softmax(&logits);
        check_finite("softmax", "probability", &trace.probs.data)?;
        trace.head_in = x;
        Ok(trace)
    }

    fn store(&self, grads: &mut [Option<Vec<T>>], idx: usize, g: ConvGrads<T>) -> Result<Option<Tensor<T>>> {
        let name = &self.layers[idx].name;
        check_finite(name, "weight gradient", &g.dw)?;
        check_finite(name, "bias gradient", &g.db)?;
        let tensors = self.params.tensors();
        if tensors[2 * idx].trainable {
            grads[2 * idx] = Some(g.dw);
        }
        if tensors[2 * idx + 1].trainable {
            grads[2 * idx + 1] = Some(g.db);
        }
        if let Some(dx) = &g.dx {
            check_finite(name, "input gradient", &dx.data)?;
        }
        Ok(g.dx)
    }

    /// Backward through a two-convolution block; returns the gradient at the block input.
    fn block_backward(
        &self,
        first: usize,
        block: &[Tensor<T>; 3],
        mut d: Tensor<T>,
        grads: &mut [Option<Vec<T>>],
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        let [x, a, b] = block;
        relu_backward_in_place(&mut d, b);
        let g = conv3_backward(a, self.params.weight(first + 1), &d, true);
        let mut da = self.store(grads, first + 1, g)?.expect("requested input gradient");
        relu_backward_in_place(&mut da, a);
        let g = conv3_backward(x, self.params.weight(first), &da, need_dx);
        self.store(grads, first, g)
    }

    fn backward(&self, trace: &Trace<T>, dprobs: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let depth = self.params.architecture().depth;
        let mut grads = vec![None; self.params.tensors().len()];
        let mut idx = self.layers.len() - 1;
        let dlogits = softmax_backward(&trace.probs, dprobs);
        let g = conv1_backward(&trace.head_in, self.params.weight(idx), &dlogits);
        let mut d = self.store(&mut grads, idx, g)?.expect("head input gradient");

        // Gradients flowing into each encoder skip from its decoder.
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; depth];
        for level in 0..depth {
            // Decoder levels ran deepest first.
            let k = depth - 1 - level;
            idx -= 3;
            let block = &trace.blocks[depth + 1 + k];
            let dcat = self.block_backward(idx + 1, block, d, &mut grads, true)?.expect("block input gradient");
            let up_channels = self.layers[idx].cout;
            let (du, dskip) = split(dcat, up_channels);
            skip_grads[level] = Some(dskip);
            let g = upconv_backward(&trace.ups[k], self.params.weight(idx), &du);
            d = self.store(&mut grads, idx, g)?.expect("transposed convolution input gradient");
        }
        idx -= 2;
        let mut d = self
            .block_backward(idx, &trace.blocks[depth], d, &mut grads, true)?
            .expect("bottleneck input gradient");
        for level in (0..depth).rev() {
            idx -= 2;
            let block = &trace.blocks[level];
            let skip = &block[2];
            let mut dskip = maxpool_backward(&d, &trace.pools[level], skip.channels, skip.shape);
            let from_decoder = skip_grads[level].take().expect("every level has a decoder");
            dskip.data.iter_mut().zip(&from_decoder.data).for_each(|(a, &b)| *a += b);
            match self.block_backward(idx, block, dskip, &mut grads, level > 0)? {
                Some(dx) => d = dx,
                None => break,
            }
        }
        debug_assert_eq!(idx, 0);
        Ok(grads)
    }
}

fn input_tensor<T: Scalar>(patch: &VolumeGrid) -> Tensor<T> {
    Tensor::from_data(1, patch.shape(), patch.values().iter().map(|&v| T::of(v)).collect())
}

/// Class probabilities for one patch, computed in the parameters' precision.
pub fn forward<T: Scalar>(params: &NetworkParameters<T>, patch: &VolumeGrid) -> Result<ClassProbabilities> {
    let _ftz = FlushDenormals::new();
    let trace = Runner::new(params).forward(input_tensor(patch))?;
    ClassProbabilities::new(
        patch.shape(),
        trace.probs.channels,
        trace.probs.data.iter().map(|v| v.f64()).collect(),
    )
}

/// Loss value and gradient of every trainable parameter (`None` for frozen
/// tensors), in parameter order.
pub struct Gradients<T> {
    pub loss: f64,
    pub grads: Vec<Option<Vec<T>>>,
}

/// Tversky loss of `forward(params, patch)` against `truth` and its
/// gradient with respect to every parameter.
pub fn backward<T: Scalar>(
    params: &NetworkParameters<T>,
    patch: &VolumeGrid,
    truth: &LabelMap,
    loss: &TverskyParams,
) -> Result<Gradients<T>> {
    let _ftz = FlushDenormals::new();
    if truth.shape() != patch.shape() {
        return Err(Error::Shape(format!("truth {:?} does not match patch {:?}", truth.shape(), patch.shape())));
    }
    let runner = Runner::new(params);
    let trace = runner.forward(input_tensor(patch))?;
    let probs: Vec<f64> = trace.probs.data.iter().map(|v| v.f64()).collect();
    let (value, dp) = tversky_loss_and_grad(&probs, truth.labels(), trace.probs.channels, loss);
    if !value.is_finite() {
        return Err(Error::Numerical { layer: "loss".into(), detail: format!("loss is {value}") });
    }
    let dp: Vec<T> = dp.into_iter().map(T::of).collect();
    let grads = runner.backward(&trace, &dp)?;
    Ok(Gradients { loss: value, grads })
}

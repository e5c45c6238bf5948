//! Architecture descriptor and parameter storage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Scalar;
use crate::seed::{derive_seed, hash_str};
use crate::volume::{Shape, NUM_CLASSES};
use crate::{Error, Result};

/// Encoder/decoder U-Net with `depth` pooling steps. Level `l` carries
/// `base_channels * 2^l` feature maps; the bottleneck sits at level `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkArchitecture {
    pub depth: usize,
    pub base_channels: usize,
    pub num_classes: usize,
}

impl Default for NetworkArchitecture {
    fn default() -> Self {
        Self { depth: 3, base_channels: 8, num_classes: NUM_CLASSES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LayerKind {
    Conv3,
    UpConv,
    Conv1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
}

impl LayerSpec {
    fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv3 => vec![self.cout, self.cin, 3, 3, 3],
            LayerKind::UpConv => vec![self.cin, self.cout, 2, 2, 2],
            LayerKind::Conv1 => vec![self.cout, self.cin, 1, 1, 1],
        }
    }

    /// Inputs contributing to one output element.
    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv3 => self.cin * 27,
            // Stride equals kernel size, so each output sees one tap per input channel.
            LayerKind::UpConv | LayerKind::Conv1 => self.cin,
        }
    }
}

impl NetworkArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.num_classes < 2 {
            return Err(Error::Validation(format!(
                "architecture needs depth >= 1, base_channels >= 1, num_classes >= 2 (got {self:?})"
            )));
        }
        if self.depth > 6 {
            return Err(Error::Validation(format!("depth {} is unreasonably deep", self.depth)));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Every spatial dimension must be a multiple of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn check_patch(&self, shape: Shape) -> Result<()> {
        let d = self.divisor();
        if shape.iter().any(|&n| n == 0 || n % d != 0) {
            return Err(Error::Shape(format!("patch {shape:?} is not divisible by 2^{} = {d}", self.depth)));
        }
        Ok(())
    }

    /// Layers in execution order; layer `i` owns parameter tensors `2i`
    /// (weights) and `2i + 1` (bias).
    pub(crate) fn layers(&self) -> Vec<LayerSpec> {
        let conv = |name: String, kind, cin, cout| LayerSpec { name, kind, cin, cout };
        let mut out = Vec::new();
        let mut cin = 1;
        for l in 0..self.depth {
            let c = self.channels(l);
            out.push(conv(format!("enc{l}.conv1"), LayerKind::Conv3, cin, c));
            out.push(conv(format!("enc{l}.conv2"), LayerKind::Conv3, c, c));
            cin = c;
        }
        let bottom = self.channels(self.depth);
        out.push(conv("bottom.conv1".into(), LayerKind::Conv3, cin, bottom));
        out.push(conv("bottom.conv2".into(), LayerKind::Conv3, bottom, bottom));
        cin = bottom;
        for l in (0..self.depth).rev() {
            let c = self.channels(l);
            out.push(conv(format!("dec{l}.up"), LayerKind::UpConv, cin, c));
            out.push(conv(format!("dec{l}.conv1"), LayerKind::Conv3, 2 * c, c));
            out.push(conv(format!("dec{l}.conv2"), LayerKind::Conv3, c, c));
            cin = c;
        }
        out.push(conv("head".into(), LayerKind::Conv1, cin, self.num_classes));
        out
    }
}

/// One named weight or bias array, row-major over `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters<T> {
    architecture: NetworkArchitecture,
    init: String,
    tensors: Vec<ParamTensor<T>>,
}

impl<T: Scalar> NetworkParameters<T> {
    fn build(arch: NetworkArchitecture, init: &str, mut fill: impl FnMut(&LayerSpec, &str, usize) -> Vec<T>) -> Result<Self> {
        arch.validate()?;
        let mut tensors = Vec::new();
        for layer in arch.layers() {
            let shape = layer.weight_shape();
            let len = shape.iter().product();
            let w_name = format!("{}.weight", layer.name);
            let values = fill(&layer, &w_name, len);
            tensors.push(ParamTensor { name: w_name, shape, values, trainable: true });
            tensors.push(ParamTensor {
                name: format!("{}.bias", layer.name),
                shape: vec![layer.cout],
                values: vec![T::zero(); layer.cout],
                trainable: true,
            });
        }
        Ok(Self { architecture: arch, init: init.into(), tensors })
    }

    /// He-uniform weights (`U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`), zero
    /// biases. Each tensor draws from its own stream keyed by its name.
    pub fn he_uniform(arch: NetworkArchitecture, seed: u64) -> Result<Self> {
        Self::build(arch, "he-uniform", |layer, name, len| {
            let limit = (6.0 / layer.fan_in() as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[hash_str(name)]));
            (0..len).map(|_| T::of(rng.random_range(-limit..limit))).collect()
        })
    }

    pub fn zeros(arch: NetworkArchitecture) -> Result<Self> {
        Self::build(arch, "zeros", |_, _, len| vec![T::zero(); len])
    }

    /// Rebuild from stored tensors, checking names and shapes against the architecture.
    pub fn from_tensors(arch: NetworkArchitecture, init: &str, tensors: Vec<ParamTensor<T>>) -> Result<Self> {
        let template = Self::zeros(arch)?;
        if template.tensors.len() != tensors.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors, found {}",
                template.tensors.len(),
                tensors.len()
            )));
        }
        for (t, got) in template.tensors.iter().zip(&tensors) {
            if t.name != got.name || t.shape != got.shape || got.values.len() != t.values.len() {
                return Err(Error::Validation(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    got.name, got.shape, t.name, t.shape
                )));
            }
            if got.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("tensor `{}` holds non-finite values", got.name)));
            }
        }
        Ok(Self { architecture: arch, init: init.into(), tensors })
    }

    pub fn architecture(&self) -> NetworkArchitecture {
        self.architecture
    }

    /// Initialization scheme tag.
    pub fn init(&self) -> &str {
        &self.init
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Mark every tensor whose name starts with `prefix` as frozen.
    pub fn freeze(&mut self, prefix: &str) {
        for t in self.tensors.iter_mut().filter(|t| t.name.starts_with(prefix)) {
            t.trainable = false;
        }
    }

    pub(crate) fn weight(&self, layer: usize) -> &[T] {
        &self.tensors[2 * layer].values
    }

    pub(crate) fn bias(&self, layer: usize) -> &[T] {
        &self.tensors[2 * layer + 1].values
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> NetworkParameters<U> {
        NetworkParameters {
            architecture: self.architecture,
            init: self.init.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    values: t.values.iter().map(|v| U::of(v.f64())).collect(),
                    trainable: t.trainable,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_counts() {
        let arch = NetworkArchitecture { depth: 1, base_channels: 2, num_classes: 3 };
        let p = NetworkParameters::<f64>::he_uniform(arch, 1).unwrap();
        let names: Vec<&str> = p.tensors().iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names[0], "enc0.conv1.weight");
        assert_eq!(names.last().copied(), Some("head.bias"));
        // enc 1->2, 2->2; bottom 2->4, 4->4; up 4->2 (2x2x2 taps); dec 4->2, 2->2; head 2->3
        let expect = (27 * 2 + 2) + (27 * 4 + 2) + (27 * 8 + 4) + (27 * 16 + 4) + (64 + 2) + (27 * 8 + 2) + (27 * 4 + 2) + (6 + 3);
        assert_eq!(p.parameter_count(), expect);
        let limit = (6.0f64 / 27.0).sqrt();
        assert!(p.tensors()[0].values.iter().all(|v| v.abs() < limit));
        assert!(p.tensors()[1].values.iter().all(|&v| v == 0.0));
        assert_eq!(p, NetworkParameters::he_uniform(arch, 1).unwrap());
        assert_ne!(p, NetworkParameters::he_uniform(arch, 2).unwrap());
    }

    #[test]
    fn patch_divisibility() {
        let arch = NetworkArchitecture::default();
        arch.check_patch([32, 32, 16]).unwrap();
        assert!(matches!(arch.check_patch([32, 32, 12]), Err(Error::Shape(_))));
    }

    #[test]
    fn from_tensors_rejects_mismatch() {
        let arch = NetworkArchitecture { depth: 1, base_channels: 1, num_classes: 3 };
        let p = NetworkParameters::<f32>::he_uniform(arch, 0).unwrap();
        let mut t = p.tensors().to_vec();
        NetworkParameters::from_tensors(arch, "loaded", t.clone()).unwrap();
        t[3].values[0] = f32::NAN;
        assert!(NetworkParameters::from_tensors(arch, "loaded", t.clone()).is_err());
        t.pop();
        assert!(NetworkParameters::from_tensors(arch, "loaded", t).is_err());
    }
}

//! Data augmentation: four spatial transforms (scaling, rotation, elastic
//! deformation, mirroring), four intensity transforms (brightness, contrast,
//! gamma, Gaussian noise) and the cycle-based pipeline that applies them.
//!
//! Spatial transforms are expressed as inverse coordinate maps in voxel
//! index space; a chain of them is composed and sampled once, trilinearly
//! for images and nearest-neighbour for labels, so image and labels always
//! see the same geometry. Everything is deterministic given a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed::{derive_seed, hash_str};
use crate::volume::sample::{nearest_index, trilinear};
use crate::volume::{linear_index, voxel_count, LabelMap, Shape, Side, StudyRecord, VolumeGrid};
use crate::{Error, Result};

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_finite() && hi.is_finite() && lo <= hi {
            Ok(Self { lo, hi })
        } else {
            Err(Error::Validation(format!("interval [{lo}, {hi}] is not ordered")))
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;

    fn try_from([lo, hi]: [f64; 2]) -> Result<Self> {
        Self::new(lo, hi)
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Whether a transform is used and how often it fires per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Switch {
    pub enabled: bool,
    pub probability: f64,
}

impl Default for Switch {
    fn default() -> Self {
        Self { enabled: true, probability: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Switches {
    pub scale: Switch,
    pub rotation: Switch,
    pub elastic: Switch,
    pub mirror: Switch,
    pub brightness: Switch,
    pub contrast: Switch,
    pub gamma: Switch,
    pub noise: Switch,
}

impl Switches {
    fn all(&self) -> [(&'static str, Switch); 8] {
        [
            ("scale", self.scale),
            ("rotation", self.rotation),
            ("elastic", self.elastic),
            ("mirror", self.mirror),
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("gamma", self.gamma),
            ("noise", self.noise),
        ]
    }
}

/// Elastic deformation strength (`alpha`, voxels) and smoothness (`sigma`, voxels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    pub alpha: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub scale_range: Interval,
    pub rotation_range_deg: Interval,
    pub elastic: ElasticParams,
    pub mirror_axes: Vec<Axis>,
    pub brightness_range: Interval,
    pub contrast_range: Interval,
    pub gamma_range: Interval,
    pub noise_sd_range: Interval,
    pub cycles: usize,
    pub switches: Switches,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            scale_range: Interval { lo: 0.85, hi: 1.25 },
            rotation_range_deg: Interval { lo: -15.0, hi: 15.0 },
            elastic: ElasticParams { alpha: 2.0, sigma: 4.0 },
            mirror_axes: vec![Axis::X, Axis::Y, Axis::Z],
            brightness_range: Interval { lo: 0.9, hi: 1.1 },
            contrast_range: Interval { lo: 0.9, hi: 1.1 },
            gamma_range: Interval { lo: 0.9, hi: 1.1 },
            noise_sd_range: Interval { lo: 0.0, hi: 0.05 },
            cycles: 2,
            switches: Switches::default(),
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, i) in [
            ("scale_range", self.scale_range),
            ("rotation_range_deg", self.rotation_range_deg),
            ("brightness_range", self.brightness_range),
            ("contrast_range", self.contrast_range),
            ("gamma_range", self.gamma_range),
            ("noise_sd_range", self.noise_sd_range),
        ] {
            Interval::new(i.lo, i.hi).map_err(|e| Error::Validation(format!("{name}: {e}")))?;
        }
        for (name, lower_bound_positive) in [
            ("scale_range", self.scale_range.lo > 0.0),
            ("contrast_range", self.contrast_range.lo > 0.0),
            ("gamma_range", self.gamma_range.lo > 0.0),
            ("noise_sd_range", self.noise_sd_range.lo >= 0.0),
        ] {
            if !lower_bound_positive {
                return Err(Error::Validation(format!("{name} must not reach below its domain")));
            }
        }
        if !(self.elastic.alpha >= 0.0 && self.elastic.sigma > 0.0) {
            return Err(Error::Validation("elastic needs alpha >= 0 and sigma > 0".into()));
        }
        for (name, s) in self.switches.all() {
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(Error::Validation(format!("{name} probability {} not in [0, 1]", s.probability)));
            }
        }
        Ok(())
    }
}

/// Per-voxel displacement in voxel units, one array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    shape: Shape,
    components: [Vec<f64>; 3],
}

impl DisplacementField {
    pub fn zeros(shape: Shape) -> Self {
        let n = voxel_count(shape);
        Self { shape, components: [vec![0.0; n], vec![0.0; n], vec![0.0; n]] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    /// Largest absolute displacement over all components.
    pub fn max_abs(&self) -> f64 {
        self.components.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn at(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| trilinear(&self.components[a], self.shape, p))
    }
}

pub(crate) fn uniform_noise(shape: Shape, seed: u64) -> [Vec<f64>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = voxel_count(shape);
    std::array::from_fn(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect())
}

/// Separable Gaussian blur with edge replication, kernel radius `ceil(3 sigma)`.
pub(crate) fn gaussian_smooth(values: &[f64], shape: Shape, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);

    let mut src = values.to_vec();
    let mut dst = vec![0.0; src.len()];
    for axis in 0..3 {
        let n = shape[axis] as isize;
        for z in 0..shape[2] {
            for y in 0..shape[1] {
                for x in 0..shape[0] {
                    let pos = [x, y, z];
                    let mut acc = 0.0;
                    for (k, w) in (-radius..=radius).zip(&kernel) {
                        let mut q = pos;
                        q[axis] = (pos[axis] as isize + k).clamp(0, n - 1) as usize;
                        acc += w * src[linear_index(shape, q[0], q[1], q[2])];
                    }
                    dst[linear_index(shape, x, y, z)] = acc;
                }
            }
        }
        std::mem::swap(&mut src, &mut dst);
    }
    src
}

/// Random smooth displacement field: uniform noise in [-1, 1] per component,
/// Gaussian-smoothed with width `sigma`, then rescaled so the largest
/// component magnitude equals `alpha`.
pub fn elastic_field(shape: Shape, alpha: f64, sigma: f64, seed: u64) -> Result<DisplacementField> {
    if !(alpha >= 0.0 && alpha.is_finite()) || !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("elastic field needs alpha >= 0, sigma > 0 (got {alpha}, {sigma})")));
    }
    if alpha == 0.0 {
        return Ok(DisplacementField::zeros(shape));
    }
    let noise = uniform_noise(shape, seed);
    let mut field = DisplacementField {
        shape,
        components: noise.map(|c| gaussian_smooth(&c, shape, sigma)),
    };
    let max = field.max_abs();
    if max > 0.0 {
        let k = alpha / max;
        field.components.iter_mut().flatten().for_each(|v| *v *= k);
    }
    Ok(field)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpatialTransform {
    /// Centre-anchored isotropic scaling by the given factor.
    Scale(f64),
    /// In-plane rotation about the slice (z) axis through the volume centre,
    /// counter-clockwise from +x towards +y, in physical coordinates.
    Rotate { degrees: f64 },
    Elastic(DisplacementField),
    Mirror(Axis),
}

impl SpatialTransform {
    fn check(&self, shape: Shape) -> Result<()> {
        match self {
            Self::Scale(s) if !(*s > 0.0 && s.is_finite()) => {
                Err(Error::Domain(format!("scale factor must be positive, got {s}")))
            }
            Self::Rotate { degrees } if !degrees.is_finite() => {
                Err(Error::Domain(format!("rotation angle {degrees} is not finite")))
            }
            Self::Elastic(f) if f.shape != shape => Err(Error::Shape(format!(
                "displacement field {:?} does not match volume {shape:?}",
                f.shape
            ))),
            _ => Ok(()),
        }
    }

    /// Map an output voxel coordinate to the source coordinate it samples.
    fn inverse(&self, p: [f64; 3], shape: Shape, spacing: [f64; 3]) -> [f64; 3] {
        let centre: [f64; 3] = std::array::from_fn(|a| (shape[a] as f64 - 1.0) / 2.0);
        match self {
            Self::Scale(s) => std::array::from_fn(|a| centre[a] + (p[a] - centre[a]) / s),
            Self::Rotate { degrees } => {
                let (sin, cos) = degrees.to_radians().sin_cos();
                let u = (p[0] - centre[0]) * spacing[0];
                let v = (p[1] - centre[1]) * spacing[1];
                // Rotate by -theta to find where the output point came from.
                let su = cos * u + sin * v;
                let sv = -sin * u + cos * v;
                [su / spacing[0] + centre[0], sv / spacing[1] + centre[1], p[2]]
            }
            Self::Elastic(field) => {
                let d = field.at(p);
                [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
            }
            Self::Mirror(axis) => {
                let mut q = p;
                let a = axis.index();
                q[a] = (shape[a] - 1) as f64 - p[a];
                q
            }
        }
    }
}

/// Apply a chain of spatial transforms (first element applied first) to an
/// image/label pair with a single resampling pass.
pub fn apply_spatial_chain(
    image: &VolumeGrid,
    labels: &LabelMap,
    transforms: &[SpatialTransform],
) -> Result<(VolumeGrid, LabelMap)> {
    let shape = image.shape();
    let spacing = image.spacing();
    if labels.shape() != shape || labels.spacing() != spacing {
        return Err(Error::Validation("image and labels differ in geometry".into()));
    }
    for t in transforms {
        t.check(shape)?;
    }
    let n = voxel_count(shape);
    let mut values = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            for x in 0..shape[0] {
                let p = transforms
                    .iter()
                    .rev()
                    .fold([x as f64, y as f64, z as f64], |q, t| t.inverse(q, shape, spacing));
                values.push(trilinear(image.values(), shape, p));
                classes.push(labels.labels()[nearest_index(shape, p)]);
            }
        }
    }
    Ok((image.with_values(values)?, LabelMap::new(shape, spacing, classes)?))
}

/// Apply one spatial transform to an image/label pair; output geometry
/// equals input geometry, out-of-grid samples clamp to the edge.
pub fn apply_spatial(
    image: &VolumeGrid,
    labels: &LabelMap,
    transform: &SpatialTransform,
) -> Result<(VolumeGrid, LabelMap)> {
    apply_spatial_chain(image, labels, std::slice::from_ref(transform))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntensityTransform {
    /// `v -> b * v`
    Brightness(f64),
    /// `v -> mean + c * (v - mean)`
    Contrast(f64),
    /// `v -> min + range * ((v - min) / range)^gamma`
    Gamma(f64),
    /// `v -> v + N(0, sd^2)`
    GaussianNoise { sd: f64, seed: u64 },
}

/// Apply an intensity transform; labels are never involved.
pub fn apply_intensity(image: &VolumeGrid, transform: &IntensityTransform) -> Result<VolumeGrid> {
    let v = image.values();
    let values: Vec<f64> = match *transform {
        IntensityTransform::Brightness(b) => {
            if !b.is_finite() {
                return Err(Error::Domain(format!("brightness factor {b} is not finite")));
            }
            v.iter().map(|x| b * x).collect()
        }
        IntensityTransform::Contrast(c) => {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Domain(format!("contrast factor must be positive, got {c}")));
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| mean + c * (x - mean)).collect()
        }
        IntensityTransform::Gamma(g) => {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Domain(format!("gamma must be positive, got {g}")));
            }
            let (min, max) = image.min_max();
            let range = max - min;
            if !(range > 0.0) {
                return Err(Error::DegenerateRange(format!("intensity range is {range}")));
            }
            v.iter().map(|x| min + range * ((x - min) / range).powf(g)).collect()
        }
        IntensityTransform::GaussianNoise { sd, seed } => {
            let normal = Normal::new(0.0, sd)
                .ok()
                .filter(|_| sd >= 0.0)
                .ok_or_else(|| Error::Domain(format!("noise sd must be >= 0, got {sd}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            v.iter().map(|x| x + normal.sample(&mut rng)).collect()
        }
    };
    image.with_values(values)
}

/// Id of the `cycle`-th augmented copy of study `base`.
pub fn augmented_id(base: &str, cycle: usize) -> String {
    format!("{base}__aug{cycle}")
}

/// Original study id behind an (possibly augmented) id.
pub fn source_of(id: &str) -> &str {
    match id.rsplit_once("__aug") {
        Some((base, n)) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => base,
        _ => id,
    }
}

fn augment_record(record: &StudyRecord, spec: &AugmentationSpec, cycle: usize, seed: u64) -> Result<StudyRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sw = &spec.switches;
    // Every coin and parameter is drawn whether or not the transform fires,
    // so toggling one transform leaves the others' draws unchanged.
    let fires = |s: Switch, rng: &mut ChaCha8Rng| {
        let coin = rng.random::<f64>();
        s.enabled && coin < s.probability
    };

    let mut spatial = Vec::new();
    let scale = spec.scale_range.draw(&mut rng);
    if fires(sw.scale, &mut rng) {
        spatial.push(SpatialTransform::Scale(scale));
    }
    let degrees = spec.rotation_range_deg.draw(&mut rng);
    if fires(sw.rotation, &mut rng) {
        spatial.push(SpatialTransform::Rotate { degrees });
    }
    let elastic_seed: u64 = rng.random();
    if fires(sw.elastic, &mut rng) {
        let f = elastic_field(record.image.shape(), spec.elastic.alpha, spec.elastic.sigma, elastic_seed)?;
        spatial.push(SpatialTransform::Elastic(f));
    }
    let axis_pick = rng.random::<u64>();
    if fires(sw.mirror, &mut rng) && !spec.mirror_axes.is_empty() {
        let axis = spec.mirror_axes[(axis_pick % spec.mirror_axes.len() as u64) as usize];
        spatial.push(SpatialTransform::Mirror(axis));
    }

    let (mut image, truth) = if spatial.is_empty() {
        (record.image.clone(), record.truth.clone())
    } else {
        apply_spatial_chain(&record.image, &record.truth, &spatial)?
    };

    let brightness = spec.brightness_range.draw(&mut rng);
    let brightness_on = fires(sw.brightness, &mut rng);
    let contrast = spec.contrast_range.draw(&mut rng);
    let contrast_on = fires(sw.contrast, &mut rng);
    let gamma = spec.gamma_range.draw(&mut rng);
    let gamma_on = fires(sw.gamma, &mut rng);
    let sd = spec.noise_sd_range.draw(&mut rng);
    let noise_seed: u64 = rng.random();
    let noise_on = fires(sw.noise, &mut rng);
    for (on, t) in [
        (brightness_on, IntensityTransform::Brightness(brightness)),
        (contrast_on, IntensityTransform::Contrast(contrast)),
        (gamma_on, IntensityTransform::Gamma(gamma)),
        (noise_on, IntensityTransform::GaussianNoise { sd, seed: noise_seed }),
    ] {
        if on {
            image = apply_intensity(&image, &t)?;
        }
    }

    // A left-right flip swaps the kidney side of every annotated lesion.
    let flips_sides = spatial.iter().any(|t| matches!(t, SpatialTransform::Mirror(Axis::X)));
    let lesion_annotations = record
        .lesion_annotations
        .iter()
        .map(|a| {
            let mut a = *a;
            if flips_sides {
                a.side = match a.side {
                    Side::Right => Side::Left,
                    Side::Left => Side::Right,
                };
            }
            a
        })
        .collect();

    Ok(StudyRecord {
        study_id: augmented_id(&record.study_id, cycle),
        source_id: record.source_id.clone(),
        image,
        truth,
        lesion_annotations,
    })
}

/// Each input record followed by `spec.cycles` augmented copies of it.
///
/// Copy `c` of study `id` is driven by a seed derived from `(seed, id, c)`,
/// so the output is independent of dataset order and thread scheduling.
pub fn run_augmentation(dataset: &[StudyRecord], spec: &AugmentationSpec, seed: u64) -> Result<Vec<StudyRecord>> {
    spec.validate()?;
    let copies: Vec<Vec<StudyRecord>> = dataset
        .par_iter()
        .map(|record| {
            (1..=spec.cycles)
                .map(|cycle| {
                    let s = derive_seed(seed, &[hash_str(&record.study_id), cycle as u64]);
                    augment_record(record, spec, cycle, s)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(dataset.len() * (spec.cycles + 1));
    for (record, variants) in dataset.iter().zip(copies) {
        out.push(record.clone());
        out.extend(variants);
    }
    Ok(out)
}

//! Synthetic CT phantoms: two ellipsoidal kidneys with spherical cysts in
//! a uniform background, plus Gaussian noise.

use nephroseg_core::seed::derive_seed;
use nephroseg_core::volume::{Class, LesionAnnotation, Morphology, Shape, Side, DEFAULT_SPACING};
use nephroseg_core::{LabelMap, Spacing, VolumeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub centre_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
}

impl Ellipsoid {
    /// `Σ ((p - c) / a)²`: at most one inside.
    fn level(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.centre_mm[a]) / self.semi_axes_mm[a]).powi(2)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub centre_mm: [f64; 3],
    pub radius_mm: f64,
    pub intensity_hu: f64,
}

impl LesionSpec {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| (p[a] - self.centre_mm[a]).powi(2)).sum::<f64>() <= self.radius_mm * self.radius_mm
    }
}

/// One phantom. Voxel `(i, j, k)` sits at `(i, j, k) * spacing` mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: Shape,
    pub spacing: Spacing,
    pub kidneys: Vec<Ellipsoid>,
    pub lesions: Vec<LesionSpec>,
    pub background_hu: f64,
    pub kidney_hu: f64,
    pub noise_sd_hu: f64,
    pub seed: u64,
}

fn extent(shape: Shape, spacing: Spacing) -> [f64; 3] {
    std::array::from_fn(|a| (shape[a] - 1) as f64 * spacing[a])
}

fn fits(lo: [f64; 3], hi: [f64; 3], ext: [f64; 3]) -> bool {
    (0..3).all(|a| lo[a] >= 0.0 && hi[a] <= ext[a])
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Geometry(msg));
        if self.shape.contains(&0) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("shape {:?} and spacing {:?} must be positive", self.shape, self.spacing));
        }
        if !(self.noise_sd_hu >= 0.0) {
            return bad(format!("noise sd {} must be non-negative", self.noise_sd_hu));
        }
        if self.kidneys.is_empty() {
            return bad("a phantom needs at least one kidney".into());
        }
        let ext = extent(self.shape, self.spacing);
        for (i, k) in self.kidneys.iter().enumerate() {
            if k.semi_axes_mm.iter().any(|&s| !(s > 0.0)) {
                return bad(format!("kidney {i} has non-positive semi-axes {:?}", k.semi_axes_mm));
            }
            let lo = std::array::from_fn(|a| k.centre_mm[a] - k.semi_axes_mm[a]);
            let hi = std::array::from_fn(|a| k.centre_mm[a] + k.semi_axes_mm[a]);
            if !fits(lo, hi, ext) {
                return bad(format!("kidney {i} leaves the {ext:?} mm grid"));
            }
        }
        for (i, l) in self.lesions.iter().enumerate() {
            if !(l.radius_mm > 0.0) {
                return bad(format!("lesion {i} has radius {}", l.radius_mm));
            }
            let lo = l.centre_mm.map(|c| c - l.radius_mm);
            let hi = l.centre_mm.map(|c| c + l.radius_mm);
            if !fits(lo, hi, ext) {
                return bad(format!("lesion {i} leaves the {ext:?} mm grid"));
            }
            if self.host_kidney(l).is_none() {
                return bad(format!("lesion {i} at {:?} mm touches no kidney", l.centre_mm));
            }
        }
        Ok(())
    }

    /// Index of the kidney the lesion lies in or against, with the lesion
    /// centre's normalized ellipsoid radius.
    fn host_kidney(&self, l: &LesionSpec) -> Option<(usize, f64)> {
        self.kidneys
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let min_axis = k.semi_axes_mm.iter().copied().fold(f64::INFINITY, f64::min);
                (i, k.level(l.centre_mm).sqrt(), l.radius_mm / min_axis)
            })
            .filter(|&(_, r, reach)| r <= 1.0 + reach)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, r, _)| (i, r))
    }

    /// Side and growth pattern of every lesion. The kidney at lower x is
    /// the patient's right; a lesion bulging past its kidney's surface is
    /// exophytic.
    pub fn annotations(&self) -> Vec<LesionAnnotation> {
        let mid = extent(self.shape, self.spacing)[0] / 2.0;
        self.lesions
            .iter()
            .filter_map(|l| {
                let (k, r) = self.host_kidney(l)?;
                let kidney = &self.kidneys[k];
                let min_axis = kidney.semi_axes_mm.iter().copied().fold(f64::INFINITY, f64::min);
                Some(LesionAnnotation {
                    side: if kidney.centre_mm[0] < mid { Side::Right } else { Side::Left },
                    morphology: if r + l.radius_mm / min_axis > 1.0 {
                        Morphology::Exophytic
                    } else {
                        Morphology::Endophytic
                    },
                })
            })
            .collect()
    }
}

/// Render a phantom: lesions override kidney, kidney overrides background;
/// every voxel gets independent Gaussian noise drawn in scan order.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(VolumeGrid, LabelMap)> {
    spec.validate()?;
    let [nx, ny, nz] = spec.shape;
    let noise = Normal::new(0.0, spec.noise_sd_hu).map_err(|e| CliError::Geometry(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = LabelMap::zeros(spec.shape, spec.spacing)?;
    let mut values = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64 * spec.spacing[0], y as f64 * spec.spacing[1], z as f64 * spec.spacing[2]];
                let (hu, class) = if let Some(l) = spec.lesions.iter().find(|l| l.contains(p)) {
                    (l.intensity_hu, Some(Class::Lesion))
                } else if spec.kidneys.iter().any(|k| k.level(p) <= 1.0) {
                    (spec.kidney_hu, Some(Class::Kidney))
                } else {
                    (spec.background_hu, None)
                };
                if let Some(c) = class {
                    labels.set(x, y, z, c);
                }
                values.push(hu + noise.sample(&mut rng));
            }
        }
    }
    Ok((VolumeGrid::new(spec.shape, spec.spacing, values)?, labels))
}

/// Parameters of a random phantom cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub shape: Shape,
    pub spacing: Spacing,
    pub background_hu: f64,
    pub kidney_hu: f64,
    pub lesion_hu: f64,
    pub noise_sd_hu: f64,
    /// Chance that a phantom carries any lesion.
    pub lesion_probability: f64,
    pub max_lesions: usize,
    pub lesion_radius_mm: [f64; 2],
    /// Per-axis semi-axis ranges of the kidneys, in mm.
    pub kidney_semi_axes_mm: [[f64; 2]; 3],
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            shape: [48, 48, 32],
            spacing: DEFAULT_SPACING,
            background_hu: -100.0,
            kidney_hu: 30.0,
            lesion_hu: 10.0,
            noise_sd_hu: 6.0,
            lesion_probability: 0.6,
            max_lesions: 2,
            lesion_radius_mm: [5.0, 8.0],
            kidney_semi_axes_mm: [[9.0, 12.0], [8.0, 11.0], [22.0, 30.0]],
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CliError::Geometry(msg.into()));
        if !(0.0..=1.0).contains(&self.lesion_probability) {
            return bad("lesion_probability must lie in [0, 1]");
        }
        let [lo, hi] = self.lesion_radius_mm;
        if !(lo > 0.0 && lo <= hi) {
            return bad("lesion_radius_mm must be an increasing positive range");
        }
        if self.kidney_semi_axes_mm.iter().any(|&[lo, hi]| !(lo > 0.0 && lo <= hi)) {
            return bad("kidney_semi_axes_mm ranges must be increasing and positive");
        }
        Ok(())
    }

    /// Study id of phantom `index`.
    pub fn study_id(index: usize) -> String {
        format!("phantom{index:03}")
    }

    /// Deterministic spec of phantom `index`. Kidneys sit left and right of
    /// the midline; lesions are placed inside or on the rim of a kidney and
    /// kept apart from each other.
    pub fn phantom(&self, index: usize) -> Result<PhantomSpec> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[index as u64]));
        let ext = extent(self.shape, self.spacing);
        let mut kidneys = Vec::with_capacity(2);
        for side_frac in [0.27, 0.73] {
            let semi: [f64; 3] = std::array::from_fn(|a| {
                let [lo, hi] = self.kidney_semi_axes_mm[a];
                rng.random_range(lo..=hi)
            });
            let nominal = [side_frac * ext[0], 0.5 * ext[1], 0.5 * ext[2]];
            let jitter = [0.04 * ext[0], 0.06 * ext[1], 0.08 * ext[2]];
            let centre = std::array::from_fn(|a| {
                let c = nominal[a] + rng.random_range(-jitter[a]..=jitter[a]);
                c.clamp(semi[a], (ext[a] - semi[a]).max(semi[a]))
            });
            kidneys.push(Ellipsoid { centre_mm: centre, semi_axes_mm: semi });
        }

        let mut lesions: Vec<LesionSpec> = Vec::new();
        if self.max_lesions > 0 && rng.random::<f64>() < self.lesion_probability {
            let count = rng.random_range(1..=self.max_lesions);
            for _ in 0..count {
                for _attempt in 0..50 {
                    let k = &kidneys[rng.random_range(0..kidneys.len())];
                    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
                    let depth = rng.random_range(0.2..=0.9);
                    let radius = rng.random_range(self.lesion_radius_mm[0]..=self.lesion_radius_mm[1]);
                    let centre: [f64; 3] = std::array::from_fn(|a| {
                        let c = k.centre_mm[a] + depth * k.semi_axes_mm[a] * dir[a];
                        c.clamp(radius, (ext[a] - radius).max(radius))
                    });
                    let apart = lesions.iter().all(|o| {
                        let d2: f64 = (0..3).map(|a| (o.centre_mm[a] - centre[a]).powi(2)).sum();
                        d2.sqrt() > o.radius_mm + radius + 2.0 * self.spacing[2]
                    });
                    let candidate = LesionSpec { centre_mm: centre, radius_mm: radius, intensity_hu: self.lesion_hu };
                    if apart {
                        lesions.push(candidate);
                        break;
                    }
                }
            }
        }
        let spec = PhantomSpec {
            shape: self.shape,
            spacing: self.spacing,
            kidneys,
            lesions,
            background_hu: self.background_hu,
            kidney_hu: self.kidney_hu,
            noise_sd_hu: self.noise_sd_hu,
            seed: derive_seed(self.seed, &[index as u64, 1]),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(lesions: Vec<LesionSpec>) -> PhantomSpec {
        PhantomSpec {
            shape: [40, 40, 24],
            spacing: DEFAULT_SPACING,
            kidneys: vec![Ellipsoid { centre_mm: [32.0, 32.0, 37.0], semi_axes_mm: [14.0, 12.0, 28.0] }],
            lesions,
            background_hu: -100.0,
            kidney_hu: 30.0,
            noise_sd_hu: 5.0,
            seed: 3,
        }
    }

    #[test]
    fn zero_lesions_give_two_labels() {
        let (_, labels) = generate_phantom(&single(vec![])).unwrap();
        assert!(labels.count(Class::Kidney) > 0);
        assert_eq!(labels.count(Class::Lesion), 0);
        assert!(labels.labels().iter().all(|&l| l <= 1));
    }

    #[test]
    fn lesion_volume_matches_voxelized_sphere() {
        let r = 4.86;
        let spec = single(vec![LesionSpec { centre_mm: [32.4, 32.4, 38.64], radius_mm: r, intensity_hu: 10.0 }]);
        let (_, labels) = generate_phantom(&spec).unwrap();
        // Independent enumeration of voxel centres within r of the centre.
        let s = DEFAULT_SPACING;
        let mut inside = 0usize;
        for z in 0..24 {
            for y in 0..40 {
                for x in 0..40 {
                    let d = [x as f64 * s[0] - 32.4, y as f64 * s[1] - 32.4, z as f64 * s[2] - 38.64];
                    if d.iter().map(|v| v * v).sum::<f64>() <= r * r {
                        inside += 1;
                    }
                }
            }
        }
        assert_eq!(labels.count(Class::Lesion), inside);
        let voxel = s[0] * s[1] * s[2];
        let labelled_mm3 = labels.count(Class::Lesion) as f64 * voxel;
        let sphere = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!((labelled_mm3 / sphere - 1.0).abs() <= 0.25, "{labelled_mm3} vs {sphere}");
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = single(vec![]);
        assert_eq!(generate_phantom(&spec).unwrap(), generate_phantom(&spec).unwrap());
        let other = PhantomSpec { seed: 4, ..spec.clone() };
        assert_ne!(generate_phantom(&spec).unwrap().0, generate_phantom(&other).unwrap().0);
    }

    #[test]
    fn annotations_follow_geometry() {
        // A cyst centred deep in the kidney is endophytic; one on the rim is exophytic.
        let deep = LesionSpec { centre_mm: [32.0, 32.0, 37.0], radius_mm: 4.0, intensity_hu: 10.0 };
        let rim = LesionSpec { centre_mm: [44.0, 32.0, 37.0], radius_mm: 4.0, intensity_hu: 10.0 };
        let a = single(vec![deep, rim]).annotations();
        assert_eq!(a[0].morphology, Morphology::Endophytic);
        assert_eq!(a[1].morphology, Morphology::Exophytic);
        // The grid is 63 mm wide, so a kidney centred at x = 32 mm is on the left.
        assert!(a.iter().all(|a| a.side == Side::Left));
    }

    #[test]
    fn geometry_errors() {
        let mut spec = single(vec![]);
        spec.kidneys[0].centre_mm[0] = 5.0;
        assert!(matches!(spec.validate(), Err(CliError::Geometry(_))));
        let far = LesionSpec { centre_mm: [8.0, 8.0, 8.0], radius_mm: 3.0, intensity_hu: 10.0 };
        assert!(matches!(single(vec![far]).validate(), Err(CliError::Geometry(_))));
        let zero = LesionSpec { centre_mm: [32.0, 32.0, 37.0], radius_mm: 0.0, intensity_hu: 10.0 };
        assert!(single(vec![zero]).validate().is_err());
    }

    #[test]
    fn cohort_is_valid_and_reproducible() {
        let cohort = CohortSpec::default();
        let mut with_lesions = 0;
        for i in 0..30 {
            let spec = cohort.phantom(i).unwrap();
            assert_eq!(spec, cohort.phantom(i).unwrap());
            assert_eq!(spec.kidneys.len(), 2);
            assert_eq!(spec.annotations().len(), spec.lesions.len());
            with_lesions += usize::from(!spec.lesions.is_empty());
        }
        assert!((8..=28).contains(&with_lesions), "{with_lesions}");
    }
}

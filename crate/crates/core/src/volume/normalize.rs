use serde::{Deserialize, Serialize};

use super::VolumeGrid;
use crate::{Error, Result};

/// Statistics of the clipped volume used for z-scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    /// Population (n-divisor) standard deviation.
    pub sd: f64,
}

const MIN_SD: f64 = 1e-8;

/// Clamp every voxel to `[lo, hi]` HU, then z-score with the clipped
/// volume's own mean and population standard deviation.
pub fn clip_and_normalize(volume: &VolumeGrid, lo: f64, hi: f64) -> Result<(VolumeGrid, Normalization)> {
    if !(lo < hi) {
        return Err(Error::Domain(format!("clip bounds must satisfy lo < hi, got ({lo}, {hi})")));
    }
    let clipped: Vec<f64> = volume.values().iter().map(|v| v.clamp(lo, hi)).collect();
    let n = clipped.len() as f64;
    let mean = clipped.iter().sum::<f64>() / n;
    let var = clipped.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < MIN_SD {
        return Err(Error::DegenerateVolume(format!(
            "standard deviation {sd:e} after clipping to ({lo}, {hi})"
        )));
    }
    let values = clipped.into_iter().map(|v| (v - mean) / sd).collect();
    Ok((volume.with_values(values)?, Normalization { mean, sd }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
    }

    #[test]
    fn worked_example_matches_hand_arithmetic() {
        let v = VolumeGrid::new([3, 1, 1], [1.0; 3], vec![-200.0, 0.0, 400.0]).unwrap();
        let (out, norm) = clip_and_normalize(&v, -79.0, 304.0).unwrap();
        // Clipped {-79, 0, 304}: mean 75, deviations {-154, -75, 229},
        // variance 81782 / 3, sd 165.1080...
        assert!((norm.mean - 75.0).abs() < 1e-12);
        assert!((norm.sd - (81782.0f64 / 3.0).sqrt()).abs() < 1e-12);
        for (got, want) in out.values().iter().zip([-0.9327, -0.4542, 1.3869]) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        let v = VolumeGrid::new([4, 1, 1], [1.0; 3], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let (out, _) = clip_and_normalize(&v, -79.0, 304.0).unwrap();
        for (a, b) in out.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_volume_is_degenerate() {
        let v = VolumeGrid::filled([3, 3, 3], [1.0; 3], 20.0).unwrap();
        assert!(matches!(clip_and_normalize(&v, -79.0, 304.0), Err(Error::DegenerateVolume(_))));
        // Everything clamps to the same bound.
        let v = VolumeGrid::new([2, 1, 1], [1.0; 3], vec![-500.0, -900.0]).unwrap();
        assert!(matches!(clip_and_normalize(&v, -79.0, 304.0), Err(Error::DegenerateVolume(_))));
        assert!(matches!(clip_and_normalize(&v, 1.0, 1.0), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn output_is_standardized(values in proptest::collection::vec(-1000.0f64..1000.0, 8..200)) {
            let n = values.len();
            let v = VolumeGrid::new([n, 1, 1], [1.0; 3], values).unwrap();
            if let Ok((out, _)) = clip_and_normalize(&v, -79.0, 304.0) {
                let (m, sd) = stats(out.values());
                prop_assert!(m.abs() < 1e-6);
                prop_assert!((sd - 1.0).abs() < 1e-6);
            }
        }
    }
}

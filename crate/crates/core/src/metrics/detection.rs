//! Lesion-level detection bookkeeping and confusion-matrix statistics.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::components::{connected_components, Connectivity};
use crate::volume::{Class, LabelMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionSettings {
    pub connectivity: Connectivity,
    /// Predicted components smaller than this are ignored.
    pub min_component_voxels: usize,
}

impl Default for DetectionSettings {
    fn default() -> Self {
        Self { connectivity: Connectivity::TwentySix, min_component_voxels: 1 }
    }
}

/// Lesion-level TP/FN/FP with subject-level TN.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl DetectionMatrix {
    pub fn new(tp: usize, fn_: usize, fp: usize, tn: usize) -> Self {
        Self { tp, fn_, fp, tn }
    }
}

impl AddAssign for DetectionMatrix {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fn_ += o.fn_;
        self.fp += o.fp;
        self.tn += o.tn;
    }
}

/// Every ground-truth lesion component touched by at least one predicted
/// lesion voxel is a TP, otherwise a FN. Every predicted component (of at
/// least `min_component_voxels`) touching no ground-truth lesion is a FP. A
/// study with neither truth lesions nor surviving predicted components
/// counts one TN.
pub fn lesion_detection(truth: &LabelMap, pred: &LabelMap, settings: &DetectionSettings) -> Result<DetectionMatrix> {
    if truth.shape() != pred.shape() {
        return Err(Error::Validation(format!(
            "truth {:?} and prediction {:?} differ in shape",
            truth.shape(),
            pred.shape()
        )));
    }
    let truth_mask = truth.mask(Class::Lesion);
    let pred_mask = pred.mask(Class::Lesion);
    let tc = connected_components(&truth_mask, truth.shape(), settings.connectivity)?;
    let pc = connected_components(&pred_mask, pred.shape(), settings.connectivity)?;

    let mut truth_hit = vec![false; tc.count];
    let mut pred_hits_truth = vec![false; pc.count];
    for (&t, &p) in tc.labels.iter().zip(&pc.labels) {
        if t > 0 && p > 0 {
            truth_hit[t as usize - 1] = true;
            pred_hits_truth[p as usize - 1] = true;
        }
    }
    let kept: Vec<bool> = pc.sizes().iter().map(|&s| s >= settings.min_component_voxels).collect();
    let tp = truth_hit.iter().filter(|&&h| h).count();
    let fp = (0..pc.count).filter(|&k| kept[k] && !pred_hits_truth[k]).count();
    let surviving = kept.iter().filter(|&&k| k).count();
    let tn = usize::from(tc.count == 0 && surviving == 0);
    Ok(DetectionMatrix { tp, fn_: tc.count - tp, fp, tn })
}

/// Statistics whose denominators vanish are absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

pub fn detection_stats(m: &DetectionMatrix) -> Result<DetectionStats> {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let total = m.tp + m.tn + m.fp + m.fn_;
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(DetectionStats {
        accuracy: ratio(m.tp + m.tn, total),
        sensitivity: ratio(m.tp, m.tp + m.fn_),
        specificity: ratio(m.tn, m.tn + m.fp),
        ppv: ratio(m.tp, m.tp + m.fp),
        npv: ratio(m.tn, m.tn + m.fn_),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(voxels: &[([usize; 3], Class)]) -> LabelMap {
        let mut m = LabelMap::zeros([8, 8, 4], [1.0; 3]).unwrap();
        for &([x, y, z], c) in voxels {
            m.set(x, y, z, c);
        }
        m
    }

    #[test]
    fn counting_rules() {
        let l = Class::Lesion;
        let s = DetectionSettings::default();
        let two = map(&[([1, 1, 1], l), ([2, 1, 1], l), ([6, 6, 2], l)]);
        assert_eq!(lesion_detection(&two, &two, &s).unwrap(), DetectionMatrix::new(2, 0, 0, 0));
        let empty = map(&[]);
        assert_eq!(lesion_detection(&empty, &empty, &s).unwrap(), DetectionMatrix::new(0, 0, 0, 1));
        // One lesion partially hit, one missed, one spurious prediction.
        let pred = map(&[([2, 1, 1], l), ([4, 6, 0], l)]);
        assert_eq!(lesion_detection(&two, &pred, &s).unwrap(), DetectionMatrix::new(1, 1, 1, 0));
        // A spurious single voxel is ignored once components need two voxels.
        let strict = DetectionSettings { min_component_voxels: 2, ..s };
        let speck = map(&[([4, 6, 0], l)]);
        assert_eq!(lesion_detection(&empty, &speck, &strict).unwrap(), DetectionMatrix::new(0, 0, 0, 1));
        assert_eq!(lesion_detection(&empty, &speck, &s).unwrap(), DetectionMatrix::new(0, 0, 1, 0));
        // A kidney prediction over a lesion does not count as detection.
        let kidney = map(&[([1, 1, 1], Class::Kidney)]);
        assert_eq!(lesion_detection(&two, &kidney, &s).unwrap().tp, 0);
    }

    #[test]
    fn statistics() {
        let st = detection_stats(&DetectionMatrix::new(23, 7, 7, 8)).unwrap();
        assert!((st.accuracy.unwrap() - 31.0 / 45.0).abs() < 1e-12);
        assert!((st.sensitivity.unwrap() - 23.0 / 30.0).abs() < 1e-12);
        assert!((st.specificity.unwrap() - 8.0 / 15.0).abs() < 1e-12);
        let perfect = detection_stats(&DetectionMatrix::new(1, 0, 0, 1)).unwrap();
        assert!([perfect.accuracy, perfect.sensitivity, perfect.specificity, perfect.ppv, perfect.npv]
            .iter()
            .all(|v| *v == Some(1.0)));
        let inverted = detection_stats(&DetectionMatrix::new(0, 1, 1, 0)).unwrap();
        assert_eq!((inverted.accuracy, inverted.sensitivity, inverted.specificity), (Some(0.0), Some(0.0), Some(0.0)));
        let no_negatives = detection_stats(&DetectionMatrix::new(3, 1, 0, 0)).unwrap();
        assert_eq!(no_negatives.specificity, None);
        assert!(matches!(detection_stats(&DetectionMatrix::default()), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn matrix_serializes_fn_key() {
        let json = serde_json::to_string(&DetectionMatrix::new(1, 2, 3, 4)).unwrap();
        assert_eq!(json, r#"{"tp":1,"fn":2,"fp":3,"tn":4}"#);
    }
}

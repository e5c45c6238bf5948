//! Evaluation: overlap metrics, volumetry, lesion detection, agreement
//! statistics and the assembled report.

mod components;
mod detection;
mod report;
mod stats;

pub use components::{connected_components, Components, Connectivity};
pub use detection::{detection_stats, lesion_detection, DetectionMatrix, DetectionSettings, DetectionStats};
pub use report::{
    evaluate, AnnotationTable, BlandAltmanSet, EvaluationInput, EvaluationReport, GroupSummary, Stat, TTestSet, VolumeRow,
};
pub use stats::{
    bland_altman, bland_altman_percent, ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_two_sided,
    BlandAltmanPoint, BlandAltmanSummary, TTest,
};

use serde::{Deserialize, Serialize};

use crate::volume::{voxel_volume, Class, LabelMap, Spacing};
use crate::{Error, Result};

fn check_pair(truth: &LabelMap, pred: &LabelMap) -> Result<()> {
    if truth.shape() != pred.shape() {
        return Err(Error::Validation(format!(
            "truth {:?} and prediction {:?} differ in shape",
            truth.shape(),
            pred.shape()
        )));
    }
    Ok(())
}

/// `(|A ∩ B|, |A|, |B|)` for the voxels labelled `class`.
fn overlap_counts(truth: &LabelMap, pred: &LabelMap, class: Class) -> (usize, usize, usize) {
    let c = class.label();
    truth.labels().iter().zip(pred.labels()).fold((0, 0, 0), |(i, a, b), (&t, &p)| {
        (i + usize::from(t == c && p == c), a + usize::from(t == c), b + usize::from(p == c))
    })
}

/// `2|A ∩ B| / (|A| + |B|)`; absent when the class is missing from both maps.
pub fn dice(truth: &LabelMap, pred: &LabelMap, class: Class) -> Result<Option<f64>> {
    check_pair(truth, pred)?;
    let (i, a, b) = overlap_counts(truth, pred, class);
    Ok((a + b > 0).then(|| 2.0 * i as f64 / (a + b) as f64))
}

/// `|A ∩ B| / |A ∪ B|`; absent when the class is missing from both maps.
pub fn jaccard(truth: &LabelMap, pred: &LabelMap, class: Class) -> Result<Option<f64>> {
    check_pair(truth, pred)?;
    let (i, a, b) = overlap_counts(truth, pred, class);
    Ok((a + b > 0).then(|| i as f64 / (a + b - i) as f64))
}

/// Volume of `class` in millilitres.
pub fn segmentation_volume(map: &LabelMap, class: Class, spacing: Spacing) -> Result<f64> {
    Ok(map.count(class) as f64 * voxel_volume(spacing)? / 1000.0)
}

/// `100 * (truth - pred) / truth`: negative when the prediction overestimates.
pub fn percent_error(truth_vol: f64, pred_vol: f64) -> Result<f64> {
    if truth_vol == 0.0 {
        return Err(Error::UndefinedPercentError);
    }
    if !(truth_vol > 0.0) || !pred_vol.is_finite() || pred_vol < 0.0 {
        return Err(Error::Domain(format!("volumes must be non-negative, got ({truth_vol}, {pred_vol})")));
    }
    Ok(100.0 * (truth_vol - pred_vol) / truth_vol)
}

/// Per-study overlap, volume and percent-error figures. Volumes in ml.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub study_id: String,
    pub dsc_kidney: Option<f64>,
    pub dsc_lesion: Option<f64>,
    pub ji_kidney: Option<f64>,
    pub ji_lesion: Option<f64>,
    pub dsc_total: f64,
    pub ji_total: f64,
    pub vol_truth_kidney: f64,
    pub vol_pred_kidney: f64,
    pub vol_truth_lesion: f64,
    pub vol_pred_lesion: f64,
    pub pct_err_kidney: Option<f64>,
    pub pct_err_lesion: Option<f64>,
    pub pct_err_total: Option<f64>,
    /// Whether the ground truth contains any lesion voxel.
    pub has_lesion: bool,
    /// Notes on undefined quantities.
    pub flags: Vec<String>,
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Metrics for one study. Totals average the per-class values that are
/// defined, so a study without lesions in either map scores on kidney alone.
pub fn study_summary(study_id: &str, truth: &LabelMap, pred: &LabelMap, spacing: Spacing) -> Result<StudyMetrics> {
    check_pair(truth, pred)?;
    let dsc_kidney = dice(truth, pred, Class::Kidney)?;
    let dsc_lesion = dice(truth, pred, Class::Lesion)?;
    let ji_kidney = jaccard(truth, pred, Class::Kidney)?;
    let ji_lesion = jaccard(truth, pred, Class::Lesion)?;
    let (Some(dsc_total), Some(ji_total)) =
        (mean_defined(&[dsc_kidney, dsc_lesion]), mean_defined(&[ji_kidney, ji_lesion]))
    else {
        return Err(Error::Validation(format!("study `{study_id}` has no kidney or lesion voxels in either map")));
    };
    let vol = |m: &LabelMap, c| segmentation_volume(m, c, spacing);
    let (vtk, vpk) = (vol(truth, Class::Kidney)?, vol(pred, Class::Kidney)?);
    let (vtl, vpl) = (vol(truth, Class::Lesion)?, vol(pred, Class::Lesion)?);
    let mut flags = Vec::new();
    let mut pct = |name: &str, t: f64, p: f64| match percent_error(t, p) {
        Ok(v) => Some(v),
        Err(_) => {
            flags.push(format!("pct_err_{name} undefined: ground-truth volume is zero"));
            None
        }
    };
    let pct_err_kidney = pct("kidney", vtk, vpk);
    let pct_err_lesion = pct("lesion", vtl, vpl);
    let pct_err_total = pct("total", vtk + vtl, vpk + vpl);
    Ok(StudyMetrics {
        study_id: study_id.to_string(),
        dsc_kidney,
        dsc_lesion,
        ji_kidney,
        ji_lesion,
        dsc_total,
        ji_total,
        vol_truth_kidney: vtk,
        vol_pred_kidney: vpk,
        vol_truth_lesion: vtl,
        vol_pred_lesion: vpl,
        pct_err_kidney,
        pct_err_lesion,
        pct_err_total,
        has_lesion: truth.count(Class::Lesion) > 0,
        flags,
    })
}

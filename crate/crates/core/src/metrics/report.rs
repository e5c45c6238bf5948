//! Cohort-level evaluation report assembled from per-study metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detection::{detection_stats, lesion_detection, DetectionMatrix, DetectionSettings, DetectionStats};
use super::stats::{bland_altman, bland_altman_percent, paired_t_test, BlandAltmanSummary, TTest};
use super::{study_summary, StudyMetrics};
use crate::volume::{LabelMap, LesionAnnotation, Morphology, Side};
use crate::{Error, Result};

/// One held-out study: reference labels, predicted labels and lesion metadata.
#[derive(Debug, Clone)]
pub struct EvaluationInput {
    pub study_id: String,
    pub truth: LabelMap,
    pub pred: LabelMap,
    pub annotations: Vec<LesionAnnotation>,
}

/// Mean, sample sd (absent below two values) and median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    pub median: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt());
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
        Some(Self { n, mean, sd, median })
    }

    fn of_defined(values: impl Iterator<Item = Option<f64>>) -> Option<Self> {
        Self::of(&values.flatten().collect::<Vec<_>>())
    }
}

/// Overlap aggregates over a group of studies; absent per-study values are
/// left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n_studies: usize,
    pub dsc_kidney: Option<Stat>,
    pub dsc_lesion: Option<Stat>,
    pub dsc_total: Option<Stat>,
    pub ji_kidney: Option<Stat>,
    pub ji_lesion: Option<Stat>,
    pub ji_total: Option<Stat>,
}

impl GroupSummary {
    fn of<'a>(studies: impl Iterator<Item = &'a StudyMetrics> + Clone) -> Self {
        let col = |f: fn(&StudyMetrics) -> Option<f64>| Stat::of_defined(studies.clone().map(f));
        Self {
            n_studies: studies.clone().count(),
            dsc_kidney: col(|s| s.dsc_kidney),
            dsc_lesion: col(|s| s.dsc_lesion),
            dsc_total: col(|s| Some(s.dsc_total)),
            ji_kidney: col(|s| s.ji_kidney),
            ji_lesion: col(|s| s.ji_lesion),
            ji_total: col(|s| Some(s.ji_total)),
        }
    }
}

/// Volumes in ml and per-case percent errors for one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub structure: String,
    pub truth_ml: Option<Stat>,
    pub pred_ml: Option<Stat>,
    pub pct_err: Option<Stat>,
}

/// Agreement summaries; a set is absent with fewer than two eligible studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanSet {
    pub kidney_ml: Option<BlandAltmanSummary>,
    pub lesion_ml: Option<BlandAltmanSummary>,
    pub kidney_pct: Option<BlandAltmanSummary>,
    pub lesion_pct: Option<BlandAltmanSummary>,
}

impl BlandAltmanSet {
    /// `(name, summary)` for every present set, in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, &BlandAltmanSummary)> {
        [
            ("kidney_ml", &self.kidney_ml),
            ("lesion_ml", &self.lesion_ml),
            ("kidney_pct", &self.kidney_pct),
            ("lesion_pct", &self.lesion_pct),
        ]
        .into_iter()
        .filter_map(|(n, s)| s.as_ref().map(|s| (n, s)))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestSet {
    pub kidney: Option<TTest>,
    pub lesion: Option<TTest>,
    pub total: Option<TTest>,
}

/// Lesion counts by side and growth pattern.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTable {
    pub right_endophytic: usize,
    pub right_exophytic: usize,
    pub left_endophytic: usize,
    pub left_exophytic: usize,
}

impl AnnotationTable {
    pub fn total(&self) -> usize {
        self.right_endophytic + self.right_exophytic + self.left_endophytic + self.left_exophytic
    }

    fn add(&mut self, a: &LesionAnnotation) {
        let slot = match (a.side, a.morphology) {
            (Side::Right, Morphology::Endophytic) => &mut self.right_endophytic,
            (Side::Right, Morphology::Exophytic) => &mut self.right_exophytic,
            (Side::Left, Morphology::Endophytic) => &mut self.left_endophytic,
            (Side::Left, Morphology::Exophytic) => &mut self.left_exophytic,
        };
        *slot += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub studies: Vec<StudyMetrics>,
    pub all: GroupSummary,
    pub with_lesion: GroupSummary,
    pub without_lesion: GroupSummary,
    pub volumes: Vec<VolumeRow>,
    pub detection_settings: DetectionSettings,
    pub detection: DetectionMatrix,
    pub detection_stats: DetectionStats,
    pub bland_altman: BlandAltmanSet,
    pub t_tests: TTestSet,
    pub annotations: AnnotationTable,
    /// Why an optional summary is missing.
    pub notes: Vec<String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// One row per study; absent values are empty cells.
    pub fn studies_csv(&self) -> String {
        let mut out = String::from(
            "study_id,dsc_kidney,dsc_lesion,dsc_total,ji_kidney,ji_lesion,ji_total,\
             vol_truth_kidney,vol_pred_kidney,vol_truth_lesion,vol_pred_lesion,\
             pct_err_kidney,pct_err_lesion,pct_err_total,has_lesion\n",
        );
        for s in &self.studies {
            let cells = [
                s.study_id.clone(),
                fmt_opt(s.dsc_kidney),
                fmt_opt(s.dsc_lesion),
                s.dsc_total.to_string(),
                fmt_opt(s.ji_kidney),
                fmt_opt(s.ji_lesion),
                s.ji_total.to_string(),
                s.vol_truth_kidney.to_string(),
                s.vol_pred_kidney.to_string(),
                s.vol_truth_lesion.to_string(),
                s.vol_pred_lesion.to_string(),
                fmt_opt(s.pct_err_kidney),
                fmt_opt(s.pct_err_lesion),
                fmt_opt(s.pct_err_total),
                s.has_lesion.to_string(),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn optional<T>(name: &str, r: Result<T>, notes: &mut Vec<String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::SampleSize { .. } | Error::DegenerateVariance)) => {
            notes.push(format!("{name}: {e}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Evaluate every study and assemble the cohort report.
///
/// Kidney agreement uses every study; lesion agreement in ml uses studies
/// where either map has lesion voxels; percent-mode agreement uses studies
/// with a nonzero reference volume. Total volume is kidney plus lesion.
pub fn evaluate(inputs: &[EvaluationInput], settings: &DetectionSettings) -> Result<EvaluationReport> {
    if inputs.is_empty() {
        return Err(Error::Validation("no studies to evaluate".into()));
    }
    let per_study: Vec<(StudyMetrics, DetectionMatrix)> = inputs
        .par_iter()
        .map(|inp| {
            if !inp.truth.same_geometry(&inp.pred) {
                return Err(Error::Validation(format!(
                    "study `{}`: prediction geometry differs from the reference",
                    inp.study_id
                )));
            }
            let m = study_summary(&inp.study_id, &inp.truth, &inp.pred, inp.truth.spacing())?;
            let d = lesion_detection(&inp.truth, &inp.pred, settings)?;
            Ok((m, d))
        })
        .collect::<Result<_>>()?;

    let mut detection = DetectionMatrix::default();
    for (_, d) in &per_study {
        detection += *d;
    }
    let studies: Vec<StudyMetrics> = per_study.into_iter().map(|(m, _)| m).collect();
    let mut annotations = AnnotationTable::default();
    inputs.iter().flat_map(|i| &i.annotations).for_each(|a| annotations.add(a));

    let kidney: Vec<(f64, f64)> = studies.iter().map(|s| (s.vol_truth_kidney, s.vol_pred_kidney)).collect();
    let lesion: Vec<(f64, f64)> = studies
        .iter()
        .filter(|s| s.vol_truth_lesion > 0.0 || s.vol_pred_lesion > 0.0)
        .map(|s| (s.vol_truth_lesion, s.vol_pred_lesion))
        .collect();
    let total: Vec<(f64, f64)> = studies
        .iter()
        .map(|s| (s.vol_truth_kidney + s.vol_truth_lesion, s.vol_pred_kidney + s.vol_pred_lesion))
        .collect();
    let positive = |pairs: &[(f64, f64)]| pairs.iter().copied().filter(|p| p.0 > 0.0).collect::<Vec<_>>();

    let mut notes = Vec::new();
    let bland_altman = BlandAltmanSet {
        kidney_ml: optional("kidney_ml", bland_altman(&kidney), &mut notes)?,
        lesion_ml: optional("lesion_ml", bland_altman(&lesion), &mut notes)?,
        kidney_pct: optional("kidney_pct", bland_altman_percent(&positive(&kidney)), &mut notes)?,
        lesion_pct: optional("lesion_pct", bland_altman_percent(&positive(&lesion)), &mut notes)?,
    };
    let t_tests = TTestSet {
        kidney: optional("t_test kidney", paired_t_test(&kidney), &mut notes)?,
        lesion: optional("t_test lesion", paired_t_test(&lesion), &mut notes)?,
        total: optional("t_test total", paired_t_test(&total), &mut notes)?,
    };

    let row = |name: &str, t: fn(&StudyMetrics) -> f64, p: fn(&StudyMetrics) -> f64, e: fn(&StudyMetrics) -> Option<f64>| {
        VolumeRow {
            structure: name.into(),
            truth_ml: Stat::of(&studies.iter().map(t).collect::<Vec<_>>()),
            pred_ml: Stat::of(&studies.iter().map(p).collect::<Vec<_>>()),
            pct_err: Stat::of_defined(studies.iter().map(e)),
        }
    };
    let volumes = vec![
        row("kidney", |s| s.vol_truth_kidney, |s| s.vol_pred_kidney, |s| s.pct_err_kidney),
        row("lesion", |s| s.vol_truth_lesion, |s| s.vol_pred_lesion, |s| s.pct_err_lesion),
        row(
            "total",
            |s| s.vol_truth_kidney + s.vol_truth_lesion,
            |s| s.vol_pred_kidney + s.vol_pred_lesion,
            |s| s.pct_err_total,
        ),
    ];

    Ok(EvaluationReport {
        all: GroupSummary::of(studies.iter()),
        with_lesion: GroupSummary::of(studies.iter().filter(|s| s.has_lesion)),
        without_lesion: GroupSummary::of(studies.iter().filter(|s| !s.has_lesion)),
        volumes,
        detection_settings: *settings,
        detection,
        detection_stats: detection_stats(&detection)?,
        bland_altman,
        t_tests,
        annotations,
        notes,
        studies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Class;

    fn study(id: &str, kidney: usize, pred_kidney: usize, lesion: bool, pred_lesion: bool) -> EvaluationInput {
        let shape = [12, 12, 4];
        let mut truth = LabelMap::zeros(shape, [1.62, 1.62, 3.22]).unwrap();
        let mut pred = truth.clone();
        for i in 0..kidney {
            truth.set(i % 12, i / 12, 0, Class::Kidney);
        }
        for i in 0..pred_kidney {
            pred.set(i % 12, i / 12, 0, Class::Kidney);
        }
        if lesion {
            truth.set(5, 5, 3, Class::Lesion);
            truth.set(6, 5, 3, Class::Lesion);
        }
        if pred_lesion {
            pred.set(5, 5, 3, Class::Lesion);
        }
        let annotations = if lesion {
            vec![LesionAnnotation { side: Side::Left, morphology: Morphology::Exophytic }]
        } else {
            Vec::new()
        };
        EvaluationInput { study_id: id.into(), truth, pred, annotations }
    }

    #[test]
    fn assembles_cohort_report() {
        let inputs = vec![
            study("a", 40, 44, true, true),
            study("b", 50, 48, false, false),
            study("c", 30, 33, true, false),
            study("d", 60, 60, false, true),
        ];
        let r = evaluate(&inputs, &DetectionSettings::default()).unwrap();
        assert_eq!(r.studies.len(), 4);
        assert_eq!(r.detection, DetectionMatrix::new(1, 1, 1, 1));
        assert_eq!((r.with_lesion.n_studies, r.without_lesion.n_studies), (2, 2));
        // Study d has no truth lesion but a predicted one: its lesion DSC is 0.
        assert_eq!(r.studies[3].dsc_lesion, Some(0.0));
        assert_eq!(r.studies[1].dsc_lesion, None);
        let ba = r.bland_altman.kidney_ml.as_ref().unwrap();
        assert_eq!(ba.n, 4);
        assert_eq!(ba.upper_limit - ba.lower_limit, 4.0 * ba.sd);
        // Lesion agreement in ml covers a, c and d; percent mode only a and c.
        assert_eq!(r.bland_altman.lesion_ml.as_ref().unwrap().n, 3);
        assert_eq!(r.bland_altman.lesion_pct.as_ref().unwrap().n, 2);
        assert_eq!(r.bland_altman.named().len(), 4);
        assert_eq!(r.annotations.left_exophytic, 2);
        assert_eq!(r.annotations.total(), 2);
        assert_eq!(r.volumes[0].truth_ml.unwrap().n, 4);
        assert_eq!(r.volumes[1].pct_err.unwrap().n, 2);

        let csv = r.studies_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(2).unwrap().starts_with("b,"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["detection"]["fn"], 1);
    }

    #[test]
    fn small_cohorts_note_missing_summaries() {
        let r = evaluate(&[study("a", 40, 40, false, false)], &DetectionSettings::default()).unwrap();
        assert!(r.bland_altman.kidney_ml.is_none());
        assert!(r.t_tests.kidney.is_none());
        assert!(!r.notes.is_empty());
        assert!(evaluate(&[], &DetectionSettings::default()).is_err());
    }

    #[test]
    fn stat_median_and_sd() {
        let s = Stat::of(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!((s.n, s.mean, s.median), (4, 4.0, 2.5));
        assert!((s.sd.unwrap() - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[5.0]).unwrap().sd, None);
        assert!(Stat::of(&[]).is_none());
    }
}

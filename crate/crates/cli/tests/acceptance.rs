//! Acceptance suite: one pass/fail line per criterion.
//!
//! `cargo test -p nephroseg --test acceptance` runs everything; numbers or
//! name fragments after `--` select criteria, e.g. `-- 1 2 11` or `-- split`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nephroseg::phantom::{generate_phantom, CohortSpec};
use nephroseg_core::augment::{
    apply_intensity, apply_spatial, run_augmentation, AugmentationSpec, Axis, DisplacementField, IntensityTransform,
    SpatialTransform,
};
use nephroseg_core::metrics::{
    bland_altman, detection_stats, dice, jaccard, paired_t_test, percent_error, segmentation_volume, DetectionMatrix,
};
use nephroseg_core::nifti::{read_nifti, voxel_volume as header_voxel_volume, write_nifti, DataType, NiftiHeader, NiftiImage};
use nephroseg_core::unet::{
    backward, forward, tversky_index, tversky_loss, tversky_loss_gradient, NetworkArchitecture, NetworkParameters,
    TverskyParams,
};
use nephroseg_core::volume::{
    clip_and_normalize, split_patients, Class, ClassProbabilities, Interpolation, DEFAULT_SPACING,
};
use nephroseg_core::{LabelMap, StudyRecord, VolumeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got}, want {want} ± {tol}"))
}

fn random_labels(rng: &mut ChaCha8Rng, shape: [usize; 3], spacing: [f64; 3]) -> LabelMap {
    let n = shape.iter().product();
    // per-map class densities so empty and dense masks both occur
    let (pk, pl): (f64, f64) = (rng.random_range(0.0..0.6), rng.random_range(0.0..0.3));
    let labels = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < pl {
                2
            } else if u < pl + pk {
                1
            } else {
                0
            }
        })
        .collect();
    LabelMap::new(shape, spacing, labels).unwrap()
}

fn c1_detection_statistics() -> Outcome {
    let s = detection_stats(&DetectionMatrix::new(23, 7, 7, 8)).map_err(|e| e.to_string())?;
    // Table counts: 45 studies, 30 with lesions.
    let want = [
        ("accuracy", s.accuracy, 31.0 / 45.0, 0.689),
        ("sensitivity", s.sensitivity, 23.0 / 30.0, 0.767),
        ("specificity", s.specificity, 8.0 / 15.0, 0.533),
        ("ppv", s.ppv, 23.0 / 30.0, 0.767),
        ("npv", s.npv, 8.0 / 15.0, 0.533),
    ];
    for (name, got, exact, rounded) in want {
        let got = got.ok_or(format!("{name} missing"))?;
        close(name, got, exact, 1e-12)?;
        close(name, got, rounded, 1e-3)?;
    }
    Ok(format!("acc {:.3} sens {:.3} spec {:.3}", s.accuracy.unwrap(), s.sensitivity.unwrap(), s.specificity.unwrap()))
}

fn c2_percent_error() -> Outcome {
    let e = percent_error(324.6, 327.6).map_err(|e| e.to_string())?;
    close("percent_error", e, -0.92, 0.01)?;
    close("percent_error", e, 100.0 * (324.6 - 327.6) / 324.6, 1e-12)?;
    ensure(percent_error(100.0, 90.0).unwrap() > 0.0, || "underestimate should be positive".into())?;
    ensure(percent_error(0.0, 1.0).is_err(), || "zero truth volume must be rejected".into())?;
    Ok(format!("{e:.4}%"))
}

fn c3_metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spacing = [0.7, 1.1, 2.5];
    let voxel_ml = 0.7 * 1.1 * 2.5 / 1000.0;
    let (mut pairs, mut checked) = (0, 0);
    for _ in 0..1200 {
        let a = random_labels(&mut rng, [8, 8, 8], spacing);
        let b = random_labels(&mut rng, [8, 8, 8], spacing);
        pairs += 1;
        for class in [Class::Kidney, Class::Lesion] {
            let (d, j) = (dice(&a, &b, class).unwrap(), jaccard(&a, &b, class).unwrap());
            ensure(d == dice(&b, &a, class).unwrap(), || "DSC not symmetric".into())?;
            ensure(j == jaccard(&b, &a, class).unwrap(), || "JI not symmetric".into())?;
            if let (Some(d), Some(j)) = (d, j) {
                close("JI vs DSC/(2-DSC)", j, d / (2.0 - d), 1e-9)?;
                checked += 1;
            }
            for m in [&a, &b] {
                let count = m.labels().iter().filter(|&&l| l == class as u8).count();
                let vol = segmentation_volume(m, class, spacing).unwrap();
                ensure(vol == count as f64 * (0.7 * 1.1 * 2.5) / 1000.0, || format!("volume {vol} vs {count} voxels"))?;
                close("volume", vol, count as f64 * voxel_ml, 1e-12)?;
            }
        }
    }
    Ok(format!("{pairs} pairs, {checked} class comparisons"))
}

fn c4_gradient_check() -> Outcome {
    let h = 1e-5;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let t = TverskyParams { alpha: 0.7, beta: 0.3, epsilon: 1e-6 };

    let arch = NetworkArchitecture { depth: 1, base_channels: 2, num_classes: 3 };
    let mut p = NetworkParameters::<f64>::he_uniform(arch, 4).unwrap();
    let patch = VolumeGrid::from_fn([4, 4, 2], [1.0; 3], |x, y, z| ((x * 7 + y * 3 + z * 5) % 11) as f64 / 5.0 - 1.0).unwrap();
    let truth = LabelMap::new([4, 4, 2], [1.0; 3], (0..32).map(|i| [0, 1, 2, 1, 0][i % 5]).collect()).unwrap();
    let g = backward(&p, &patch, &truth, &t).unwrap();
    let loss_at = |p: &NetworkParameters<f64>| tversky_loss(&forward(p, &patch).unwrap(), &truth, &t).unwrap();
    let (mut worst_net, mut count) = (0.0f64, 0);
    for ti in 0..p.tensors().len() {
        let analytic = g.grads[ti].clone().ok_or("trainable tensor without gradient")?;
        for i in 0..analytic.len() {
            let orig = p.tensors()[ti].values[i];
            p.tensors_mut()[ti].values[i] = orig + h;
            let up = loss_at(&p);
            p.tensors_mut()[ti].values[i] = orig - h;
            let down = loss_at(&p);
            p.tensors_mut()[ti].values[i] = orig;
            worst_net = worst_net.max(rel(analytic[i], (up - down) / (2.0 * h)));
            count += 1;
        }
    }
    ensure(worst_net < 1e-4, || format!("network: worst relative error {worst_net:.2e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = [3, 3, 2];
    let labels = random_labels(&mut rng, shape, [1.0; 3]);
    let probs: Vec<f64> = (0..54).map(|_| rng.random_range(0.05..0.95)).collect();
    let pred = ClassProbabilities::new(shape, 3, probs.clone()).unwrap();
    let (_, grad) = tversky_loss_gradient(&pred, &labels, &t).unwrap();
    let loss_of = |v: Vec<f64>| tversky_loss(&ClassProbabilities::new(shape, 3, v).unwrap(), &labels, &t).unwrap();
    let mut worst_loss = 0.0f64;
    for i in 0..probs.len() {
        let (mut up, mut down) = (probs.clone(), probs.clone());
        up[i] += h;
        down[i] -= h;
        worst_loss = worst_loss.max(rel(grad[i], (loss_of(up) - loss_of(down)) / (2.0 * h)));
    }
    ensure(worst_loss < 1e-4, || format!("loss: worst relative error {worst_loss:.2e}"))?;
    Ok(format!("{count} network parameters, worst {worst_net:.1e}; loss worst {worst_loss:.1e}"))
}

fn c5_tversky_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let labels = random_labels(&mut rng, [5, 4, 3], [1.0; 3]);
    let perfect = tversky_loss(&ClassProbabilities::one_hot(&labels, 3), &labels, &TverskyParams::default()).unwrap();
    close("perfect prediction loss", perfect, 0.0, 1e-9)?;
    let eps = 1e-6;
    let half = TverskyParams { alpha: 0.5, beta: 0.5, epsilon: eps };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let labels = random_labels(&mut rng, [5, 4, 3], [1.0; 3]);
        let n = 60;
        let raw: Vec<f64> = (0..3 * n).map(|_| rng.random::<f64>()).collect();
        let probs: Vec<f64> = (0..3 * n).map(|i| raw[i] / (0..3).map(|c| raw[c * n + i % n]).sum::<f64>()).collect();
        let pred = ClassProbabilities::new([5, 4, 3], 3, probs.clone()).unwrap();
        let ti = tversky_index(&pred, &labels, &half).unwrap();
        for c in 0..3 {
            let p = &probs[c * n..][..n];
            let g: Vec<f64> = labels.labels().iter().map(|&l| f64::from(u8::from(l == c as u8))).collect();
            let inter: f64 = p.iter().zip(&g).map(|(p, g)| p * g).sum();
            let soft_dice = (2.0 * inter + 2.0 * eps) / (p.iter().sum::<f64>() + g.iter().sum::<f64>() + 2.0 * eps);
            worst = worst.max((ti[c] - soft_dice).abs());
        }
    }
    ensure(worst < 1e-9, || format!("alpha = beta = 0.5 differs from soft Dice by {worst:.2e}"))?;
    Ok(format!("perfect loss {perfect:.1e}, soft Dice gap {worst:.1e}"))
}

fn c6_nifti_round_trip() -> Outcome {
    let shape = [7, 5, 3];
    let spacing = [0.8125, 1.62, 3.22];
    let n = 105;
    let cases: [(DataType, Vec<f64>); 4] = [
        (DataType::UInt8, (0..n).map(|i| (i * 37 % 256) as f64).collect()),
        (DataType::Int16, (0..n).map(|i| (i as f64 - 52.0) * 611.0).collect()),
        (DataType::Int32, (0..n).map(|i| (i as f64 - 52.0) * 40_000_003.0).collect()),
        (DataType::Float32, (0..n).map(|i| ((i as f32 - 50.0) * 0.37).into()).collect()),
    ];
    for (dt, data) in cases {
        let image = NiftiImage::new(NiftiHeader::for_volume(shape, spacing, dt), data.clone()).map_err(|e| e.to_string())?;
        for compress in [false, true] {
            let bytes = write_nifti(&image, compress).map_err(|e| e.to_string())?;
            ensure(compress == (bytes[..2] == [0x1f, 0x8b]), || format!("{dt:?}: container does not match gzip={compress}"))?;
            let back = read_nifti(&bytes).map_err(|e| e.to_string())?;
            ensure(back.data == data, || format!("{dt:?} gzip={compress}: voxels differ"))?;
            ensure(back.header.shape() == shape, || format!("{dt:?}: shape differs"))?;
            let got = back.header.spacing();
            // Stored as f32, read back through the f32's shortest decimal form.
            let want = spacing.map(|s| (s as f32).to_string().parse::<f64>().unwrap());
            ensure(got == want, || format!("{dt:?}: spacing {got:?}, expected {want:?}"))?;
        }
    }
    let h = NiftiHeader::for_volume([2, 2, 2], DEFAULT_SPACING, DataType::UInt8);
    let v = header_voxel_volume(&h).map_err(|e| e.to_string())?;
    let v2 = nephroseg_core::volume::voxel_volume(DEFAULT_SPACING).map_err(|e| e.to_string())?;
    close("voxel volume", v2, 8.450568, 1e-9)?;
    close("header voxel volume", v, 8.450568, 1e-5)?;
    Ok(format!("4 datatypes x raw/gzip, voxel volume {v2:.6} mm3"))
}

fn c7_preprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = [9, 8, 5];
    let values: Vec<f64> = (0..360).map(|_| rng.random_range(-1000.0..1500.0)).collect();
    let v = VolumeGrid::new(shape, DEFAULT_SPACING, values.clone()).unwrap();
    let same = v.resample(DEFAULT_SPACING, Interpolation::Trilinear).unwrap();
    ensure(same.values() == v.values() && same.spacing() == DEFAULT_SPACING, || "identity resample changed voxels".into())?;
    let labels = random_labels(&mut rng, shape, [1.0, 0.9, 2.0]);
    for target in [DEFAULT_SPACING, [0.5, 0.7, 1.3], [2.3, 2.9, 4.1]] {
        let r = labels.resample(target, Interpolation::Nearest).unwrap();
        ensure(r.labels().iter().all(|&l| l <= 2), || "resampled labels outside {0,1,2}".into())?;
        ensure(r.spacing() == target, || "resampled spacing differs from target".into())?;
    }
    let (z, _) = clip_and_normalize(&v, -79.0, 304.0).unwrap();
    let m = z.values().iter().sum::<f64>() / 360.0;
    let sd = (z.values().iter().map(|x| (x - m).powi(2)).sum::<f64>() / 360.0).sqrt();
    close("normalized mean", m, 0.0, 1e-6)?;
    close("normalized population sd", sd, 1.0, 1e-6)?;

    let tiny = VolumeGrid::new([3, 1, 1], DEFAULT_SPACING, vec![-200.0, 0.0, 400.0]).unwrap();
    let (out, norm) = clip_and_normalize(&tiny, -79.0, 304.0).unwrap();
    // clipped {-79, 0, 304}: mean 75, population sd sqrt(81782 / 3)
    let hand_sd = (81782.0f64 / 3.0).sqrt();
    close("worked mean", norm.mean, 75.0, 1e-3)?;
    close("worked sd", norm.sd, hand_sd, 1e-3)?;
    close("worked sd", norm.sd, 165.11, 1e-2)?;
    for (got, want) in out.values().iter().zip([-0.9327, -0.4542, 1.3869]) {
        close("worked value", *got, want, 1e-3)?;
    }
    Ok(format!("worked example {:?}", out.values().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()))
}

fn small_cohort() -> CohortSpec {
    CohortSpec {
        shape: [16, 16, 8],
        kidney_semi_axes_mm: [[3.0, 4.0], [3.0, 4.0], [5.0, 7.0]],
        lesion_radius_mm: [1.6, 2.4],
        ..CohortSpec::default()
    }
}

fn c8_augmentation() -> Outcome {
    let cohort = small_cohort();
    let records: Vec<StudyRecord> = (0..120)
        .map(|i| {
            let spec = cohort.phantom(i).unwrap();
            let (image, truth) = generate_phantom(&spec).unwrap();
            let (image, _) = clip_and_normalize(&image, -79.0, 304.0).unwrap();
            StudyRecord::new(CohortSpec::study_id(i), image, truth).unwrap()
        })
        .collect();
    let (image, labels) = (&records[1].image, &records[1].truth);
    let neutral_spatial = [
        SpatialTransform::Scale(1.0),
        SpatialTransform::Rotate { degrees: 0.0 },
        SpatialTransform::Elastic(DisplacementField::zeros(image.shape())),
    ];
    for t in &neutral_spatial {
        let (i2, l2) = apply_spatial(image, labels, t).unwrap();
        let gap = i2.values().iter().zip(image.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(gap <= 1e-6 && l2 == *labels, || format!("{t:?} is not an identity (gap {gap})"))?;
    }
    for t in [
        IntensityTransform::Brightness(1.0),
        IntensityTransform::Contrast(1.0),
        IntensityTransform::Gamma(1.0),
        IntensityTransform::GaussianNoise { sd: 0.0, seed: 9 },
    ] {
        let out = apply_intensity(image, &t).unwrap();
        let gap = out.values().iter().zip(image.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(gap <= 1e-6, || format!("{t:?} is not an identity (gap {gap})"))?;
    }
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        let once = apply_spatial(image, labels, &SpatialTransform::Mirror(axis)).unwrap();
        let twice = apply_spatial(&once.0, &once.1, &SpatialTransform::Mirror(axis)).unwrap();
        ensure(once.1 != *labels || axis == Axis::Z, || format!("mirror {axis:?} left labels unchanged"))?;
        ensure(twice.0 == *image && twice.1 == *labels, || format!("mirror {axis:?} is not an involution"))?;
    }
    let spec = AugmentationSpec { cycles: 2, ..AugmentationSpec::default() };
    let a = run_augmentation(&records, &spec, 42).unwrap();
    let b = run_augmentation(&records, &spec, 42).unwrap();
    ensure(a.len() == 360, || format!("expected 360 records, got {}", a.len()))?;
    ensure(a == b, || "same seed produced different records".into())?;
    let bits = |r: &[StudyRecord]| r.iter().flat_map(|r| r.image.values().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    ensure(bits(&a) == bits(&b), || "same seed is not bit-exact".into())?;
    let c = run_augmentation(&records, &spec, 43).unwrap();
    ensure(bits(&a) != bits(&c), || "different seeds produced identical output".into())?;
    Ok(format!("120 records x 2 cycles -> {}", a.len()))
}

fn c9_split() -> Outcome {
    let ids: Vec<String> = (0..150).map(|i| format!("study{i:03}")).collect();
    for seed in 0..100 {
        let s = split_patients(&ids, 0.2, seed).and_then(|s| s.with_folds(3)).map_err(|e| e.to_string())?;
        ensure(s.train.len() == 120 && s.test.len() == 30, || format!("seed {seed}: {}/{}", s.train.len(), s.test.len()))?;
        ensure(s.folds.len() == 3 && s.folds.iter().all(|f| f.len() == 40), || format!("seed {seed}: fold sizes"))?;
        let mut all: Vec<&String> = s.train.iter().chain(&s.test).collect();
        all.sort();
        all.dedup();
        ensure(all.len() == 150, || format!("seed {seed}: train and test overlap or lose ids"))?;
        let mut folded: Vec<&String> = s.folds.iter().flatten().collect();
        folded.sort();
        let mut train: Vec<&String> = s.train.iter().collect();
        train.sort();
        ensure(folded == train, || format!("seed {seed}: folds do not partition train"))?;
        let again = split_patients(&ids, 0.2, seed).and_then(|s| s.with_folds(3)).unwrap();
        ensure(again == s, || format!("seed {seed}: not deterministic"))?;
    }
    Ok("100 seeds: 120/30, folds 40/40/40".into())
}

/// Settings of the end-to-end run.
const E2E_CONFIG: &str = r#"{
  "schema_version": 1,
  "augment_seed": 0,
  "training": {
    "epochs": 40,
    "folds": 3,
    "batch_size": 1,
    "patch": [32, 32, 16],
    "patches_per_study": 2,
    "foreground_fraction": 0.7,
    "optimizer": { "lr": 0.001, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8 },
    "seed": 0
  },
  "split": { "test_fraction": 0.2, "folds": 3, "seed": 0 }
}"#;

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_nephroseg")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("`nephroseg {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim_end())
    })
}

fn num(v: &Value, key: &str) -> Result<f64, String> {
    v.get(key).and_then(Value::as_f64).ok_or(format!("report lacks number `{key}`"))
}

fn c10_end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::write(p("config.json"), E2E_CONFIG).map_err(|e| e.to_string())?;
    let cfg = p("config.json");
    run_cli(&["phantom", "--count", "20", "--config", &cfg, "--out", &p("raw")])?;
    run_cli(&["split", "--ids", &p("raw"), "--test-fraction", "0.2", "--folds", "3", "--seed", "0", "--out", &p("manifest.json")])?;
    run_cli(&["preprocess", "--in", &p("raw"), "--out", &p("pre"), "--config", &cfg])?;
    run_cli(&["augment", "--in", &p("pre"), "--out", &p("aug"), "--config", &cfg, "--manifest", &p("manifest.json")])?;
    run_cli(&["train", "--manifest", &p("manifest.json"), "--data", &p("aug"), "--config", &cfg, "--out", &p("ckpt")])?;
    let trained = start.elapsed();
    run_cli(&[
        "predict", "--checkpoint", &p("ckpt/best.json"), "--in", &p("pre"), "--out", &p("pred"), "--config", &cfg,
        "--manifest", &p("manifest.json"),
    ])?;
    run_cli(&[
        "evaluate", "--truth", &p("pre"), "--pred", &p("pred"), "--out", &p("report/report.json"), "--csv",
        &p("report/report.csv"), "--svg", &p("report/svg"), "--config", &cfg,
    ])?;
    let elapsed = start.elapsed();

    let report: Value = serde_json::from_str(&std::fs::read_to_string(p("report/report.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    for key in ["studies", "all", "with_lesion", "without_lesion", "volumes", "detection", "detection_stats", "bland_altman", "t_tests", "annotations", "notes"] {
        ensure(report.get(key).is_some(), || format!("report lacks `{key}`"))?;
    }
    let studies = report["studies"].as_array().ok_or("studies is not a list")?;
    ensure(studies.len() == 4, || format!("expected 4 held-out studies, got {}", studies.len()))?;
    let kidney: Vec<f64> = studies.iter().map(|s| num(s, "dsc_kidney")).collect::<Result<_, _>>()?;
    let mean_kidney = kidney.iter().sum::<f64>() / kidney.len() as f64;
    let m = &report["detection"];
    let (tp, fn_) = (num(m, "tp")?, num(m, "fn")?);
    ensure(tp + fn_ > 0.0, || "no held-out phantom carries a lesion".into())?;
    let sensitivity = tp / (tp + fn_);

    let csv = std::fs::read_to_string(p("report/report.csv")).map_err(|e| e.to_string())?;
    ensure(csv.lines().count() == 5, || format!("CSV has {} lines", csv.lines().count()))?;
    let mut exact = 0;
    for name in ["kidney_ml", "lesion_ml", "kidney_pct", "lesion_pct"] {
        let ba = &report["bland_altman"][name];
        if ba.is_null() {
            continue;
        }
        let (lo, hi, sd) = (num(ba, "lower_limit")?, num(ba, "upper_limit")?, num(ba, "sd")?);
        ensure(hi - lo == 4.0 * sd, || format!("{name}: upper - lower = {} but 4 sd = {}", hi - lo, 4.0 * sd))?;
        let svg = std::fs::read_to_string(p(&format!("report/svg/bland_altman_{name}.svg"))).map_err(|e| e.to_string())?;
        let doc = roxmltree::Document::parse(&svg).map_err(|e| format!("{name}.svg: {e}"))?;
        let g = doc.descendants().find(|n| n.attribute("id") == Some("bland-altman")).ok_or("no Bland-Altman group")?;
        let attr = |k: &str| g.attribute(k).and_then(|v| v.parse::<f64>().ok());
        ensure(attr("data-lower") == Some(lo) && attr("data-upper") == Some(hi), || format!("{name}.svg limits differ from JSON"))?;
        ensure(Path::new(&p(&format!("report/bland_altman_{name}.csv"))).exists(), || format!("{name} points CSV missing"))?;
        exact += 1;
    }
    ensure(exact >= 1, || "no Bland-Altman summary in the report".into())?;
    let boxplots = std::fs::read_to_string(p("report/svg/overlap_boxplots.svg")).map_err(|e| e.to_string())?;
    roxmltree::Document::parse(&boxplots).map_err(|e| format!("overlap_boxplots.svg: {e}"))?;

    let detail = format!(
        "kidney DSC mean {mean_kidney:.3} (min {:.3}), lesion sensitivity {sensitivity:.2} ({tp}/{}), \
         {exact} Bland-Altman sets exact, train {:.0}s, total {:.0}s",
        kidney.iter().copied().fold(1.0, f64::min),
        tp + fn_,
        trained.as_secs_f64(),
        elapsed.as_secs_f64()
    );
    ensure(mean_kidney >= 0.80, || format!("kidney DSC below 0.80: {detail}"))?;
    ensure(sensitivity >= 0.60, || format!("lesion sensitivity below 0.60: {detail}"))?;
    ensure(elapsed < Duration::from_secs(30 * 60), || format!("over 30 minutes: {detail}"))?;
    Ok(detail)
}

fn c11_bland_altman_t_test() -> Outcome {
    let pairs = [(100.0, 103.0), (200.0, 199.0), (150.0, 154.0)];
    let ba = bland_altman(&pairs).map_err(|e| e.to_string())?;
    let t = paired_t_test(&pairs).map_err(|e| e.to_string())?;

    // independent hand computation on truth - prediction
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / 3.0;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let t_hand = mean / (sd / 3f64.sqrt());
    close("bias", ba.bias, -2.0, 0.01)?;
    close("bias", ba.bias, mean, 1e-12)?;
    close("sd", ba.sd, 2.6458, 0.01)?;
    close("sd", ba.sd, sd, 1e-12)?;
    close("lower limit", ba.lower_limit, -7.29, 0.01)?;
    close("upper limit", ba.upper_limit, 3.29, 0.01)?;
    ensure(ba.upper_limit - ba.lower_limit == 4.0 * ba.sd, || "limits are not bias ± 2 sd".into())?;
    close("t", t.t, -1.309, 0.005)?;
    close("t", t.t, t_hand, 1e-12)?;
    ensure(t.df == 2, || format!("df {}", t.df))?;

    use statrs::distribution::{ContinuousCDF, StudentsT};
    let dist = StudentsT::new(0.0, 1.0, 2.0).map_err(|e| e.to_string())?;
    let p_statrs = 2.0 * dist.cdf(-t_hand.abs());
    let p_closed = 1.0 - t_hand.abs() / (t_hand * t_hand + 2.0).sqrt();
    close("p", t.p, 0.321, 0.005)?;
    close("p vs statrs", t.p, p_statrs, 1e-9)?;
    close("p vs df=2 closed form", t.p, p_closed, 1e-9)?;
    Ok(format!(
        "bias {:.3} sd {:.4} limits ({:.2}, {:.2}) t {:.3} p {:.4}",
        ba.bias, ba.sd, ba.lower_limit, ba.upper_limit, t.t, t.p
    ))
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "detection statistics", c1_detection_statistics),
        (2, "percent error", c2_percent_error),
        (3, "metric identities", c3_metric_identities),
        (4, "gradient check", c4_gradient_check),
        (5, "tversky identities", c5_tversky_identities),
        (6, "nifti round trip", c6_nifti_round_trip),
        (7, "preprocessing invariants", c7_preprocessing),
        (8, "augmentation invariants", c8_augmentation),
        (9, "split and folds", c9_split),
        (10, "end-to-end phantom run", c10_end_to_end),
        (11, "bland-altman and t-test", c11_bland_altman_t_test),
    ];
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |n: usize, name: &str| {
        args.is_empty() || args.iter().any(|a| a.parse::<usize>().map_or_else(|_| name.contains(a.as_str()), |k| k == n))
    };
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (n, name, check) in criteria {
        if !selected(n, name) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {n:>2} {name}: {detail} ({secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {n:>2} {name}: {why} ({secs:.2}s)");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Subcommand definitions and their handlers.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nephroseg_core::augment::run_augmentation;
use nephroseg_core::metrics::{evaluate, EvaluationInput};
use nephroseg_core::unet::{loss_log_csv, predict_volume, train, Checkpoint};
use nephroseg_core::volume::{clip_and_normalize, make_folds, split_patients, DatasetSplit, Interpolation, Normalization};
use nephroseg_core::StudyRecord;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, Context, Result};
use crate::io::{self, write_atomic, write_json};
use crate::phantom::{generate_phantom, CohortSpec, PhantomSpec};
use crate::plot::report_figures;

#[derive(Debug, Parser)]
#[command(name = "nephroseg", version, about = "Kidney and cystic lesion segmentation pipeline on synthetic CT phantoms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic CT phantoms with reference labels.
    Phantom(PhantomArgs),
    /// Patient-level train/test split with cross-validation folds.
    Split(SplitArgs),
    /// Resample, clip and z-score every study.
    Preprocess(PreprocessArgs),
    /// Write the original studies followed by their augmented copies.
    Augment(AugmentArgs),
    /// Cross-validated training; writes per-fold checkpoints and the loss log.
    Train(TrainArgs),
    /// Predict label maps with a checkpoint.
    Predict(PredictArgs),
    /// Score predictions against reference labels.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Text file with one id per line, or a study directory.
    #[arg(long)]
    pub ids: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Only augment the training ids of this split manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sliding-window settings; defaults to the checkpoint's patch at half stride.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Only predict the test ids of this split manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Detection settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
}

fn load_manifest(path: &Path) -> Result<DatasetSplit> {
    let err = |detail: String| CliError::Config { path: path.to_path_buf(), detail };
    let text = io::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let split: DatasetSplit =
        serde_path_to_error::deserialize(de).map_err(|e| err(format!("at `{}`: {}", e.path(), e.inner())))?;
    split.validate().map_err(|e| err(e.to_string()))?;
    Ok(split)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom(a) => phantom(&a),
        Command::Split(a) => split(&a),
        Command::Preprocess(a) => preprocess(&a),
        Command::Augment(a) => augment(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Predict(a) => predict(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
    }
}

pub fn phantom(a: &PhantomArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let specs: Vec<(String, PhantomSpec)> = (0..a.count)
        .map(|i| Ok((CohortSpec::study_id(i), cfg.phantom.phantom(i)?)))
        .collect::<Result<_>>()?;
    let records = specs
        .par_iter()
        .map(|(id, spec)| {
            let (image, truth) = generate_phantom(spec)?;
            Ok(StudyRecord::new(id.clone(), image, truth).context(|| id.clone())?.with_annotations(spec.annotations()))
        })
        .collect::<Result<Vec<_>>>()?;
    io::save_records(&a.out, &records)?;
    let index: BTreeMap<&str, &PhantomSpec> = specs.iter().map(|(id, s)| (id.as_str(), s)).collect();
    write_json(&a.out.join("phantoms.json"), &index)
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    if path.is_dir() {
        return io::image_ids(path);
    }
    Ok(io::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let ids = read_ids(&a.ids)?;
    if ids.is_empty() {
        return Err(CliError::Missing(format!("no ids in {}", a.ids.display())));
    }
    let manifest = split_patients(&ids, a.test_fraction, a.seed)
        .and_then(|s| s.with_folds(a.folds))
        .context(|| format!("splitting {}", a.ids.display()))?;
    write_json(&a.out, &manifest)
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let records = io::load_records(&a.input)?;
    let [lo, hi] = cfg.clip_hu;
    let out = records
        .par_iter()
        .map(|r| {
            let id = || r.study_id.clone();
            let image = r.image.resample(cfg.target_spacing, Interpolation::Trilinear).context(id)?;
            let truth = r.truth.resample(cfg.target_spacing, Interpolation::Nearest).context(id)?;
            let (image, norm) = clip_and_normalize(&image, lo, hi).context(id)?;
            let mut rec = StudyRecord::new(r.study_id.clone(), image, truth).context(id)?;
            rec.source_id = r.source_id.clone();
            rec.lesion_annotations = r.lesion_annotations.clone();
            Ok((rec, norm))
        })
        .collect::<Result<Vec<_>>>()?;
    let norms: BTreeMap<&str, &Normalization> = out.iter().map(|(r, n)| (r.study_id.as_str(), n)).collect();
    let records: Vec<StudyRecord> = out.iter().map(|(r, _)| r.clone()).collect();
    io::save_records(&a.out, &records)?;
    write_json(&a.out.join("normalization.json"), &norms)
}

pub fn augment(a: &AugmentArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut records = io::load_records(&a.input)?;
    if let Some(m) = &a.manifest {
        let train: HashSet<String> = load_manifest(m)?.train.into_iter().collect();
        records.retain(|r| train.contains(&r.source_id));
    }
    let out = run_augmentation(&records, &cfg.augmentation, cfg.augment_seed).context(|| "augmentation".into())?;
    io::save_records(&a.out, &out)
}

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    epoch: usize,
    validation_loss: f64,
    checkpoint: String,
}

#[derive(Serialize)]
struct TrainingSummary {
    best_fold: usize,
    folds: Vec<FoldSummary>,
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let manifest = load_manifest(&a.manifest)?;
    let folds = if manifest.folds.is_empty() {
        make_folds(&manifest.train, cfg.training.folds, manifest.seed).context(|| "folds".into())?
    } else {
        manifest.folds.clone()
    };
    let train_ids: HashSet<&String> = manifest.train.iter().collect();
    let mut records = io::load_records(&a.data)?;
    records.retain(|r| train_ids.contains(&r.source_id));
    let outcome = train::<f32>(&cfg.training, &records, &folds, |r| {
        eprintln!("fold {} epoch {:>3}: train {:.5} val {:.5}", r.fold, r.epoch, r.train_loss, r.val_loss);
    })
    .context(|| "training".into())?;

    let mut summary = Vec::new();
    for c in &outcome.checkpoints {
        let name = format!("fold{}.json", c.fold);
        write_atomic(&a.out.join(&name), c.to_json()?.as_bytes())?;
        summary.push(FoldSummary { fold: c.fold, epoch: c.epoch, validation_loss: c.validation_loss, checkpoint: name });
    }
    let best = outcome.best().ok_or_else(|| CliError::Missing("no checkpoint was produced".into()))?;
    write_atomic(&a.out.join("best.json"), best.to_json()?.as_bytes())?;
    write_atomic(&a.out.join("loss_log.csv"), loss_log_csv(&outcome.log).as_bytes())?;
    write_json(&a.out.join("training_summary.json"), &TrainingSummary { best_fold: best.fold, folds: summary })
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let text = io::read_to_string(&a.checkpoint)?;
    let ckpt = Checkpoint::<f32>::from_json(&text).context(|| a.checkpoint.display().to_string())?;
    let (patch, stride) = match &a.config {
        Some(path) => PipelineConfig::load(path)?.inference_window(),
        None => (ckpt.patch, ckpt.patch.map(|p| (p / 2).max(1))),
    };
    let mut ids = io::image_ids(&a.input)?;
    if let Some(m) = &a.manifest {
        let test: HashSet<String> = load_manifest(m)?.test.into_iter().collect();
        ids.retain(|id| test.contains(id));
    }
    if ids.is_empty() {
        return Err(CliError::Missing(format!("no images to predict in {}", a.input.display())));
    }
    for id in &ids {
        let image = io::read_volume(&io::image_path(&a.input, id))?;
        let labels = predict_volume(&ckpt.parameters, &image, patch, stride).context(|| id.clone())?;
        io::write_labels(&io::label_path(&a.out, id), &labels)?;
    }
    Ok(())
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let ids = io::label_ids(&a.pred)?;
    if ids.is_empty() {
        return Err(CliError::Missing(format!("no predicted label maps in {}", a.pred.display())));
    }
    let annotations = io::read_annotations(&a.truth)?;
    let inputs = ids
        .iter()
        .map(|id| {
            let truth_path = io::label_path(&a.truth, id);
            if !truth_path.exists() {
                return Err(CliError::Missing(format!("no reference labels {} for prediction {id}", truth_path.display())));
            }
            let truth = io::read_labels(&truth_path)?;
            let pred = io::read_labels(&io::label_path(&a.pred, id))?;
            if !truth.same_geometry(&pred) {
                return Err(CliError::Geometry(format!(
                    "{id}: prediction {:?}@{:?} does not match reference {:?}@{:?}",
                    pred.shape(),
                    pred.spacing(),
                    truth.shape(),
                    truth.spacing()
                )));
            }
            let annotations = annotations.get(id).cloned().unwrap_or_default();
            Ok(EvaluationInput { study_id: id.clone(), truth, pred, annotations })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&inputs, &cfg.detection).context(|| "evaluation".into())?;
    write_atomic(&a.out, (report.to_json()? + "\n").as_bytes())?;
    if let Some(csv) = &a.csv {
        write_atomic(csv, report.studies_csv().as_bytes())?;
    }
    let points_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    for (name, summary) in report.bland_altman.named() {
        write_atomic(&points_dir.join(format!("bland_altman_{name}.csv")), summary.points_csv().as_bytes())?;
    }
    if let Some(dir) = &a.svg {
        for (name, svg) in report_figures(&report) {
            write_atomic(&dir.join(name), svg.as_bytes())?;
        }
    }
    Ok(())
}

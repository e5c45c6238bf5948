//! Cross-validated training with best-checkpoint retention, and patch-based
//! inference.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{tversky_indices, TverskyParams};
use super::network::{backward, forward};
use super::optim::{Adam, AdamParams};
use super::params::{NetworkArchitecture, NetworkParameters};
use super::tensor::Scalar;
use crate::seed::derive_seed;
use crate::volume::{extract_patches, reassemble, ClassProbabilities, LabelMap, Shape, StudyRecord, VolumeGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub folds: usize,
    pub loss: TverskyParams,
    pub optimizer: AdamParams,
    pub architecture: NetworkArchitecture,
    /// Patches per optimizer step.
    pub batch_size: usize,
    pub patch: Shape,
    /// Patches drawn from every training record per epoch.
    pub patches_per_study: usize,
    /// Share of patches centred on a kidney or lesion voxel rather than placed uniformly.
    pub foreground_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            folds: 3,
            loss: TverskyParams::default(),
            optimizer: AdamParams::default(),
            architecture: NetworkArchitecture::default(),
            batch_size: 2,
            patch: [32, 32, 16],
            patches_per_study: 2,
            foreground_fraction: 0.7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.architecture.validate()?;
        self.architecture.check_patch(self.patch)?;
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Validation(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.batch_size == 0 || self.patches_per_study == 0 {
            return Err(Error::Validation("batch_size and patches_per_study must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return Err(Error::Validation(format!(
                "foreground_fraction {} not in [0, 1]",
                self.foreground_fraction
            )));
        }
        Ok(())
    }
}

/// Parameters retained for one fold together with when and how well they scored.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub parameters: NetworkParameters<T>,
    pub epoch: usize,
    pub fold: usize,
    pub validation_loss: f64,
    pub patch: Shape,
}

/// One row of the loss log; epochs and folds count from 1 and 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub fold: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome<T> {
    pub checkpoints: Vec<Checkpoint<T>>,
    pub log: Vec<EpochRecord>,
}

impl<T> TrainingOutcome<T> {
    /// Checkpoint with the lowest validation loss over all folds (earliest fold on ties).
    pub fn best(&self) -> Option<&Checkpoint<T>> {
        self.checkpoints
            .iter()
            .fold(None, |best: Option<&Checkpoint<T>>, c| match best {
                Some(b) if b.validation_loss <= c.validation_loss => Some(b),
                _ => Some(c),
            })
    }
}

/// A record padded up to the patch size, with its foreground voxel lists.
struct Prepared<'a> {
    record: &'a StudyRecord,
    image: VolumeGrid,
    truth: LabelMap,
    /// Voxel indices per foreground class (kidney, lesion).
    foreground: [Vec<usize>; 2],
}

impl<'a> Prepared<'a> {
    fn new(record: &'a StudyRecord, patch: Shape) -> Self {
        let (min, _) = record.image.min_max();
        let image = record.image.pad_to(patch, min);
        let truth = record.truth.pad_to(patch);
        let foreground = [1u8, 2].map(|c| {
            truth.labels().iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect()
        });
        Self { record, image, truth, foreground }
    }

    fn sample_origin(&self, patch: Shape, fg_fraction: f64, rng: &mut ChaCha8Rng) -> Shape {
        let shape = self.image.shape();
        let classes: Vec<&Vec<usize>> = self.foreground.iter().filter(|v| !v.is_empty()).collect();
        if !classes.is_empty() && rng.random::<f64>() < fg_fraction {
            let pool = classes[rng.random_range(0..classes.len())];
            let i = pool[rng.random_range(0..pool.len())];
            let centre = [i % shape[0], (i / shape[0]) % shape[1], i / (shape[0] * shape[1])];
            std::array::from_fn(|a| {
                let jitter = rng.random_range(0..=patch[a] / 2) as isize - (patch[a] / 4) as isize;
                let start = centre[a] as isize - (patch[a] / 2) as isize + jitter;
                start.clamp(0, (shape[a] - patch[a]) as isize) as usize
            })
        } else {
            std::array::from_fn(|a| rng.random_range(0..=shape[a] - patch[a]))
        }
    }
}

fn fold_index(records: &[StudyRecord], folds: &[Vec<String>]) -> Result<HashMap<String, usize>> {
    let mut owner = HashMap::new();
    for (f, ids) in folds.iter().enumerate() {
        if ids.is_empty() {
            return Err(Error::Validation(format!("fold {f} is empty")));
        }
        for id in ids {
            if owner.insert(id.clone(), f).is_some() {
                return Err(Error::Validation(format!("id `{id}` appears in more than one fold")));
            }
        }
    }
    for r in records {
        if !owner.contains_key(&r.source_id) {
            return Err(Error::Validation(format!("record `{}` belongs to no fold", r.study_id)));
        }
    }
    for id in owner.keys() {
        if !records.iter().any(|r| r.is_original() && &r.study_id == id) {
            return Err(Error::Validation(format!("fold id `{id}` has no original record")));
        }
    }
    Ok(owner)
}

/// Tversky loss of the whole-volume predictions with counts pooled over all
/// validation records, so a class absent from one record does not decide
/// the score on its own.
fn validation_loss<T: Scalar>(params: &NetworkParameters<T>, val: &[Prepared], cfg: &TrainConfig) -> Result<f64> {
    let probs = val
        .iter()
        .map(|p| predict_probabilities(params, &p.image, cfg.patch, cfg.patch))
        .collect::<Result<Vec<_>>>()?;
    let classes = cfg.architecture.num_classes;
    let mut data = Vec::new();
    for c in 0..classes {
        for pr in &probs {
            data.extend_from_slice(pr.class(c));
        }
    }
    let labels: Vec<u8> = val.iter().flat_map(|p| p.truth.labels().iter().copied()).collect();
    Ok(tversky_indices(&data, &labels, classes, &cfg.loss).iter().map(|ti| 1.0 - ti).sum())
}

/// Attach training context to numerical failures.
fn diverged(e: Error, epoch: usize, fold: usize) -> Error {
    match e {
        Error::Numerical { layer, detail } => Error::Divergence { epoch, fold, detail: format!("{layer}: {detail}") },
        other => other,
    }
}

fn train_fold<T: Scalar>(
    cfg: &TrainConfig,
    fold: usize,
    train: &[Prepared],
    val: &[Prepared],
    log: &mut Vec<EpochRecord>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Checkpoint<T>> {
    let mut params = NetworkParameters::<T>::he_uniform(cfg.architecture, derive_seed(cfg.seed, &[fold as u64]))?;
    let mut adam = Adam::new(cfg.optimizer, &params);
    let mut best: Option<Checkpoint<T>> = None;
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[fold as u64, epoch as u64]));
        let mut samples: Vec<(usize, Shape)> = Vec::with_capacity(train.len() * cfg.patches_per_study);
        for (r, p) in train.iter().enumerate() {
            for _ in 0..cfg.patches_per_study {
                samples.push((r, p.sample_origin(cfg.patch, cfg.foreground_fraction, &mut rng)));
            }
        }
        samples.shuffle(&mut rng);

        let mut total = 0.0;
        for batch in samples.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&(r, origin)| {
                    let p = &train[r];
                    let image = p.image.crop(origin, cfg.patch)?;
                    let truth = p.truth.crop(origin, cfg.patch)?;
                    backward(&params, &image, &truth, &cfg.loss)
                })
                .collect::<Vec<_>>();
            // Reduce in batch order so the sum does not depend on scheduling.
            let mut sum: Vec<Option<Vec<T>>> = vec![None; params.tensors().len()];
            for result in results {
                let g = result.map_err(|e| diverged(e, epoch, fold))?;
                total += g.loss;
                for (acc, grad) in sum.iter_mut().zip(g.grads) {
                    match (acc.as_mut(), grad) {
                        (Some(a), Some(g)) => a.iter_mut().zip(g).for_each(|(a, g)| *a += g),
                        (None, Some(g)) => *acc = Some(g),
                        _ => {}
                    }
                }
            }
            let scale = T::of(1.0 / batch.len() as f64);
            sum.iter_mut().flatten().flatten().for_each(|g| *g = *g * scale);
            adam.update(&mut params, &sum);
        }
        let train_loss = total / samples.len() as f64;
        let val_loss = validation_loss(&params, val, cfg).map_err(|e| diverged(e, epoch, fold))?;
        for (what, loss) in [("training", train_loss), ("validation", val_loss)] {
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, fold, detail: format!("{what} loss is {loss}") });
            }
        }
        let record = EpochRecord { epoch, fold, train_loss, val_loss };
        log.push(record);
        on_epoch(&record);
        if best.as_ref().is_none_or(|b| val_loss < b.validation_loss) {
            best = Some(Checkpoint { parameters: params.clone(), epoch, fold, validation_loss: val_loss, patch: cfg.patch });
        }
    }
    Ok(best.expect("at least one epoch ran"))
}

/// Train one network per fold: optimize on the records of the other folds
/// (augmented copies included), validate each epoch on the original
/// records of the held-out fold, and keep the parameters with the lowest
/// validation loss.
///
/// `folds` lists original study ids; every record's `source_id` must fall
/// in exactly one fold.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    records: &[StudyRecord],
    folds: &[Vec<String>],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingOutcome<T>> {
    config.validate()?;
    if folds.len() != config.folds {
        return Err(Error::Validation(format!("config asks for {} folds, got {}", config.folds, folds.len())));
    }
    let owner = fold_index(records, folds)?;
    let prepared: Vec<Prepared> = records.iter().map(|r| Prepared::new(r, config.patch)).collect();
    let mut log = Vec::new();
    let mut checkpoints = Vec::with_capacity(folds.len());
    for fold in 0..folds.len() {
        let (mut train_set, mut val_set) = (Vec::new(), Vec::new());
        for p in &prepared {
            let f = owner[&p.record.source_id];
            if f != fold {
                train_set.push(Prepared { record: p.record, image: p.image.clone(), truth: p.truth.clone(), foreground: p.foreground.clone() });
            } else if p.record.is_original() {
                val_set.push(Prepared { record: p.record, image: p.image.clone(), truth: p.truth.clone(), foreground: [vec![], vec![]] });
            }
        }
        checkpoints.push(train_fold(config, fold, &train_set, &val_set, &mut log, &mut on_epoch)?);
    }
    Ok(TrainingOutcome { checkpoints, log })
}

/// Averaged class probabilities over a sliding window of patches. Volumes
/// smaller than the patch are padded with their minimum and cropped back.
pub fn predict_probabilities<T: Scalar>(
    params: &NetworkParameters<T>,
    volume: &VolumeGrid,
    patch: Shape,
    stride: Shape,
) -> Result<ClassProbabilities> {
    params.architecture().check_patch(patch)?;
    let shape = volume.shape();
    let (min, _) = volume.min_max();
    let padded = volume.pad_to(patch, min);
    let tiles = extract_patches(&padded, patch, stride)?;
    let probs = tiles
        .par_iter()
        .map(|(origin, p)| forward(params, p).map(|c| (*origin, c)))
        .collect::<Result<Vec<_>>>()?;
    let full = reassemble(&probs, padded.shape())?;
    if full.shape() == shape {
        Ok(full)
    } else {
        full.crop([0, 0, 0], shape)
    }
}

/// Label map of a preprocessed volume: sliding-window probabilities, then
/// per-voxel argmax (ties go to the lower class).
pub fn predict_volume<T: Scalar>(
    params: &NetworkParameters<T>,
    volume: &VolumeGrid,
    patch: Shape,
    stride: Shape,
) -> Result<LabelMap> {
    predict_probabilities(params, volume, patch, stride)?.to_label_map(volume.spacing())
}

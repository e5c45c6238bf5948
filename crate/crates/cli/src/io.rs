//! Study directories: `<id>_image.nii.gz` / `<id>_label.nii.gz` pairs plus
//! an optional `annotations.json` mapping ids to lesion metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nephroseg_core::augment::source_of;
use nephroseg_core::nifti::{read_nifti, write_nifti, NiftiImage};
use nephroseg_core::volume::LesionAnnotation;
use nephroseg_core::{LabelMap, StudyRecord, VolumeGrid};
use serde::Serialize;

use crate::error::{CliError, Context, Result};

const IMAGE_SUFFIX: &str = "_image.nii.gz";
const LABEL_SUFFIX: &str = "_label.nii.gz";
pub const ANNOTATIONS_FILE: &str = "annotations.json";

pub type Annotations = BTreeMap<String, Vec<LesionAnnotation>>;

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{IMAGE_SUFFIX}"))
}

pub fn label_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{LABEL_SUFFIX}"))
}

/// Write through a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let name = path.file_name().ok_or_else(|| CliError::Missing(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config { path: path.to_path_buf(), detail: e.to_string() })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_image(path: &Path) -> Result<NiftiImage> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    read_nifti(&bytes).context(|| path.display().to_string())
}

pub fn read_volume(path: &Path) -> Result<VolumeGrid> {
    read_image(path)?.to_volume().context(|| path.display().to_string())
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    read_image(path)?.to_labels().context(|| path.display().to_string())
}

pub fn write_volume(path: &Path, volume: &VolumeGrid) -> Result<()> {
    let bytes = write_nifti(&NiftiImage::from_volume(volume), true).context(|| path.display().to_string())?;
    write_atomic(path, &bytes)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let bytes = write_nifti(&NiftiImage::from_labels(labels), true).context(|| path.display().to_string())?;
    write_atomic(path, &bytes)
}

fn ids_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if let Some(id) = entry.file_name().to_str().and_then(|n| n.strip_suffix(suffix)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Sorted ids of every image in `dir`.
pub fn image_ids(dir: &Path) -> Result<Vec<String>> {
    ids_with_suffix(dir, IMAGE_SUFFIX)
}

/// Sorted ids of every label map in `dir`.
pub fn label_ids(dir: &Path) -> Result<Vec<String>> {
    ids_with_suffix(dir, LABEL_SUFFIX)
}

pub fn read_annotations(dir: &Path) -> Result<Annotations> {
    let path = dir.join(ANNOTATIONS_FILE);
    if !path.exists() {
        return Ok(Annotations::new());
    }
    serde_json::from_str(&read_to_string(&path)?)
        .map_err(|e| CliError::Config { path, detail: e.to_string() })
}

/// Load every image/label pair in `dir`. Ids of augmented copies keep their
/// patient's id as `source_id`.
pub fn load_records(dir: &Path) -> Result<Vec<StudyRecord>> {
    let ids = image_ids(dir)?;
    if ids.is_empty() {
        return Err(CliError::Missing(format!("no `*{IMAGE_SUFFIX}` files in {}", dir.display())));
    }
    let annotations = read_annotations(dir)?;
    ids.iter()
        .map(|id| {
            let labels = label_path(dir, id);
            if !labels.exists() {
                return Err(CliError::Missing(format!("{} has no label map {}", id, labels.display())));
            }
            let image = read_volume(&image_path(dir, id))?;
            let truth = read_labels(&labels)?;
            let mut record = StudyRecord::new(id.clone(), image, truth).map_err(|e| CliError::Geometry(e.to_string()))?;
            record.source_id = source_of(id).to_string();
            record.lesion_annotations = annotations.get(id).cloned().unwrap_or_default();
            Ok(record)
        })
        .collect()
}

/// Write images, label maps and the annotation index of `records` into `dir`.
pub fn save_records(dir: &Path, records: &[StudyRecord]) -> Result<()> {
    use rayon::prelude::*;
    records.par_iter().try_for_each(|r| {
        write_volume(&image_path(dir, &r.study_id), &r.image)?;
        write_labels(&label_path(dir, &r.study_id), &r.truth)
    })?;
    let annotations: Annotations = records.iter().map(|r| (r.study_id.clone(), r.lesion_annotations.clone())).collect();
    write_json(&dir.join(ANNOTATIONS_FILE), &annotations)
}

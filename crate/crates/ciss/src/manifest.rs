//! Dataset manifests and class-order files.

use std::path::Path;

use ciss_core::{ClassId, DatasetManifest, OracleRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub class_count: u8,
    pub images: Vec<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    /// Grid path relative to the manifest's directory.
    pub labels: String,
}

/// Loads a manifest and every grid it references, in parallel.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let doc: ManifestDoc = files::read_json(path)?;
    let base = files::base_dir(path);
    let records = doc
        .images
        .par_iter()
        .map(|img| {
            let grid = files::load_grid(&base.join(&img.labels))?;
            Ok(OracleRecord::new(img.id.clone(), grid)?)
        })
        .collect::<Result<Vec<_>>>()?;
    log::info!("loaded {} images from {}", records.len(), path.display());
    Ok(DatasetManifest::new(doc.class_count, records)?)
}

/// Writes `manifest` to `path` with its grids as P5 files in the sibling
/// directory `<stem>.labels`.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let dir = files::grid_dir_name(path);
    let base = files::base_dir(path);
    let images = manifest
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let rel = format!("{dir}/{}", files::grid_file_name(i, rec.image_id()));
            files::save_grid(&base.join(&rel), rec.labels())?;
            Ok(ImageRef {
                id: rec.image_id().to_string(),
                labels: rel,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = ManifestDoc {
        class_count: manifest.class_count(),
        images,
    };
    files::write_json(path, &doc)
}

/// Parses a class order: one class id per line; blank lines and `#`
/// comments are skipped.
pub fn parse_class_order(text: &str) -> std::result::Result<Vec<ClassId>, String> {
    let mut order = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<u8>() {
            Ok(v) if v != 0 && v != 255 => order.push(ClassId(v)),
            _ => return Err(format!("line {}: invalid class id `{line}`", n + 1)),
        }
    }
    Ok(order)
}

pub fn load_class_order(path: &Path) -> Result<Vec<ClassId>> {
    let bytes = files::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(path, "not UTF-8"))?;
    parse_class_order(text).map_err(|msg| Error::parse(path, msg))
}

pub fn write_class_order(order: &[ClassId]) -> String {
    order.iter().map(|c| format!("{c}\n")).collect()
}

use std::path::Path;

use ciss_core::LabelGrid;

use crate::error::{Error, Result};
use crate::pnm;

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline; map keys come out in sorted order.
pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, text.as_bytes())
}

pub(crate) fn load_grid(path: &Path) -> Result<LabelGrid> {
    pnm::decode(&read(path)?).map_err(|source| Error::Pnm {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn save_grid(path: &Path, grid: &LabelGrid) -> Result<()> {
    write(path, &pnm::encode(grid))
}

/// File name for the `index`-th stored grid of `image_id`; the index keeps
/// names unique after unsafe characters are replaced.
pub(crate) fn grid_file_name(index: usize, image_id: &str) -> String {
    let safe: String = image_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:05}_{safe}.pgm")
}

/// Sibling directory `<stem>.labels` that holds the grids of `file`.
pub(crate) fn grid_dir_name(file: &Path) -> String {
    let stem = file.file_stem().map_or_else(|| "grids".into(), |s| s.to_string_lossy());
    format!("{stem}.labels")
}

pub(crate) fn base_dir(file: &Path) -> &Path {
    file.parent().unwrap_or(Path::new(""))
}

//! File formats and command-line tooling on top of [`ciss_core`].
//!
//! Label grids are NetPBM graymaps, score matrices are text or binary
//! tables, and everything else is JSON.

pub mod cli;
pub mod error;
mod files;
pub mod losscase;
pub mod manifest;
pub mod memfile;
pub mod pnm;
pub mod report;
pub mod scores;
pub mod split;

pub use error::{Error, Result};
pub use losscase::load_loss_case;
pub use manifest::{load_class_order, load_manifest, save_manifest};
pub use memfile::{load_memory, save_memory};
pub use scores::{load_scores, save_scores};
pub use split::{load_split, save_split};

/// Reads a label grid from a `P2` or `P5` file.
pub fn load_grid(path: &std::path::Path) -> Result<ciss_core::LabelGrid> {
    files::load_grid(path)
}

/// Writes a label grid as a `P5` file, creating parent directories.
pub fn save_grid(path: &std::path::Path, grid: &ciss_core::LabelGrid) -> Result<()> {
    files::save_grid(path, grid)
}

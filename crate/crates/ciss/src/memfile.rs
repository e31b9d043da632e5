//! Exemplar memory files: a JSON index plus one P5 grid per entry in the
//! sibling directory `<stem>.labels`.

use std::path::Path;

use ciss_core::memory::{ExemplarEntry, ExemplarMemory};
use ciss_core::ClassId;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryDoc {
    pub capacity: usize,
    pub entries: Vec<EntryDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryDoc {
    pub image_id: String,
    pub saved_at: usize,
    pub anchor_class: u8,
    /// Relative to the memory file's directory.
    pub labels_path: String,
}

pub fn save_memory(memory: &ExemplarMemory, path: &Path) -> Result<()> {
    let dir = files::grid_dir_name(path);
    let base = files::base_dir(path);
    let mut entries = Vec::with_capacity(memory.len());
    for (i, e) in memory.entries().iter().enumerate() {
        let rel = format!("{dir}/{}", files::grid_file_name(i, e.image_id()));
        files::save_grid(&base.join(&rel), e.labels())?;
        entries.push(EntryDoc {
            image_id: e.image_id().to_string(),
            saved_at: e.saved_at(),
            anchor_class: e.anchor().0,
            labels_path: rel,
        });
    }
    files::write_json(
        path,
        &MemoryDoc {
            capacity: memory.capacity(),
            entries,
        },
    )
}

pub fn load_memory(path: &Path) -> Result<ExemplarMemory> {
    let doc: MemoryDoc = files::read_json(path)?;
    let base = files::base_dir(path);
    let mut entries = Vec::with_capacity(doc.entries.len());
    for e in doc.entries {
        let labels = files::load_grid(&base.join(&e.labels_path))?;
        let anchor = ClassId(e.anchor_class);
        if !anchor.is_foreground() {
            return Err(Error::parse(path, format!("invalid anchor class {anchor}")));
        }
        entries.push(ExemplarEntry::from_parts(e.image_id, labels, e.saved_at, anchor));
    }
    ExemplarMemory::with_entries(doc.capacity, entries).map_err(|e| Error::parse(path, e.to_string()))
}

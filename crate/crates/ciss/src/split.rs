//! Split manifest files.
//!
//! Field order and sorted id lists make the output byte-stable for fixed
//! inputs.

use std::collections::BTreeMap;
use std::path::Path;

use ciss_core::scenario::{ScenarioKind, SplitManifest, TaskSplit};
use ciss_core::{ClassId, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDoc {
    pub scenario: String,
    pub base_count: usize,
    pub step: usize,
    pub class_order: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tasks: Vec<TaskDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignments: Option<BTreeMap<String, u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDoc {
    pub t: usize,
    pub classes: Vec<u8>,
    pub image_ids: Vec<String>,
}

impl From<&SplitManifest> for SplitDoc {
    fn from(split: &SplitManifest) -> Self {
        Self {
            scenario: split.scenario.as_str().to_string(),
            base_count: split.spec.base_count(),
            step: split.spec.step(),
            class_order: split.spec.class_order().iter().map(|c| c.0).collect(),
            seed: split.seed,
            tasks: split
                .tasks
                .iter()
                .map(|t| TaskDoc {
                    t: t.task,
                    classes: t.classes.iter().map(|c| c.0).collect(),
                    image_ids: t.image_ids.clone(),
                })
                .collect(),
            assignments: split
                .assignments
                .as_ref()
                .map(|a| a.iter().map(|(k, v)| (k.clone(), v.0)).collect()),
        }
    }
}

impl TryFrom<SplitDoc> for SplitManifest {
    type Error = ciss_core::Error;

    fn try_from(doc: SplitDoc) -> ciss_core::Result<Self> {
        let scenario: ScenarioKind = doc.scenario.parse()?;
        let spec = TaskSpec::new(
            doc.base_count,
            doc.step,
            doc.class_order.into_iter().map(ClassId).collect(),
        )?;
        let mut tasks = Vec::with_capacity(doc.tasks.len());
        for (i, t) in doc.tasks.into_iter().enumerate() {
            if t.t != i {
                return Err(ciss_core::Error::SplitInvariant(format!(
                    "task entry {i} is labelled t = {}",
                    t.t
                )));
            }
            tasks.push(TaskSplit {
                task: t.t,
                classes: t.classes.into_iter().map(ClassId).collect(),
                image_ids: t.image_ids,
            });
        }
        let split = SplitManifest {
            scenario,
            spec,
            seed: doc.seed,
            tasks,
            assignments: doc
                .assignments
                .map(|a| a.into_iter().map(|(k, v)| (k, ClassId(v))).collect()),
        };
        split.validate_structure()?;
        Ok(split)
    }
}

pub fn split_to_json(split: &SplitManifest) -> String {
    let mut text = serde_json::to_string_pretty(&SplitDoc::from(split)).expect("serializable");
    text.push('\n');
    text
}

pub fn save_split(split: &SplitManifest, path: &Path) -> Result<()> {
    files::write(path, split_to_json(split).as_bytes())
}

/// Loads a split and checks its structural invariants.
pub fn load_split(path: &Path) -> Result<SplitManifest> {
    let doc: SplitDoc = files::read_json(path)?;
    SplitManifest::try_from(doc).map_err(|e| Error::parse(path, e.to_string()))
}

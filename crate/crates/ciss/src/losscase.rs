//! Loss-case files.

use std::collections::BTreeSet;
use std::path::Path;

use ciss_core::losses::{ExternalTerms, LossCase, LossConfig, LossItem, TaskClassLayout};
use ciss_core::memory::LabelSource;
use ciss_core::ClassId;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{files, scores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDoc {
    pub layout: LayoutDoc,
    pub items: Vec<ItemDoc>,
    #[serde(default)]
    pub config: ConfigDoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDoc {
    pub old: Vec<u8>,
    pub new: Vec<u8>,
}

/// Paths are relative to the case file. `kd`, `dkd`, `ac` and `pod` are
/// precomputed scalars for the composites that need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDoc {
    pub source: String,
    pub scores: String,
    pub labels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_scores: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dkd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pod: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigDoc {
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kd_includes_bg: bool,
}

impl Default for ConfigDoc {
    fn default() -> Self {
        LossConfig::default().into()
    }
}

impl From<LossConfig> for ConfigDoc {
    fn from(c: LossConfig) -> Self {
        Self {
            lambda: c.lambda,
            gamma: c.gamma,
            alpha: c.alpha,
            beta: c.beta,
            kd_includes_bg: c.kd_includes_bg,
        }
    }
}

impl From<ConfigDoc> for LossConfig {
    fn from(c: ConfigDoc) -> Self {
        Self {
            lambda: c.lambda,
            gamma: c.gamma,
            alpha: c.alpha,
            beta: c.beta,
            kd_includes_bg: c.kd_includes_bg,
        }
    }
}

fn class_set(ids: &[u8]) -> BTreeSet<ClassId> {
    ids.iter().copied().map(ClassId).collect()
}

pub fn load_loss_case(path: &Path) -> Result<LossCase> {
    let doc: CaseDoc = files::read_json(path)?;
    let base = files::base_dir(path);
    let layout = TaskClassLayout::new(class_set(&doc.layout.old), class_set(&doc.layout.new))
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let config = LossConfig::from(doc.config);
    config.validate().map_err(|e| Error::parse(path, e.to_string()))?;
    let mut items = Vec::with_capacity(doc.items.len());
    for item in doc.items {
        let source: LabelSource = item.source.parse().map_err(|e: ciss_core::Error| Error::parse(path, e.to_string()))?;
        items.push(LossItem {
            source,
            scores: scores::load_scores(&base.join(&item.scores))?,
            labels: files::load_grid(&base.join(&item.labels))?,
            prev_scores: item
                .prev_scores
                .map(|p| scores::load_scores(&base.join(p)))
                .transpose()?,
            external: ExternalTerms {
                kd: item.kd,
                dkd: item.dkd,
                ac: item.ac,
                pod: item.pod,
            },
        });
    }
    Ok(LossCase {
        layout,
        items,
        config,
    })
}

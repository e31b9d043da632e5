//! Dataset records, incremental task layouts and per-task relabeling.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::label::{ClassId, LabelGrid};

/// One image with its fully annotated label grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleRecord {
    image_id: String,
    labels: LabelGrid,
    classes: BTreeSet<ClassId>,
}

impl OracleRecord {
    /// Builds a record, deriving its class set from the grid.
    pub fn new(image_id: impl Into<String>, labels: LabelGrid) -> Result<Self> {
        let image_id = image_id.into();
        let classes = labels.foreground_classes();
        if classes.is_empty() {
            return Err(Error::NoForeground(image_id));
        }
        Ok(Self {
            image_id,
            labels,
            classes,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn labels(&self) -> &LabelGrid {
        &self.labels
    }

    /// Foreground classes present in the oracle grid.
    pub fn classes(&self) -> &BTreeSet<ClassId> {
        &self.classes
    }

    pub fn has_class(&self, class: ClassId) -> bool {
        self.classes.contains(&class)
    }
}

/// A validated collection of oracle records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    class_count: u8,
    records: Vec<OracleRecord>,
    index: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn new(class_count: u8, records: Vec<OracleRecord>) -> Result<Self> {
        if class_count == u8::MAX {
            return Err(Error::Config("class_count must be below 255".to_string()));
        }
        let mut index = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            if let Some(&bad) = rec.classes.iter().find(|c| c.0 > class_count) {
                return Err(Error::UndeclaredClass {
                    class: bad,
                    class_count,
                });
            }
            if index.insert(rec.image_id.clone(), i).is_some() {
                return Err(Error::DuplicateImage(rec.image_id.clone()));
            }
        }
        Ok(Self {
            class_count,
            records,
            index,
        })
    }

    pub fn class_count(&self) -> u8 {
        self.class_count
    }

    pub fn records(&self) -> &[OracleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&OracleRecord> {
        self.index.get(image_id).map(|&i| &self.records[i])
    }

    pub fn record(&self, image_id: &str) -> Result<&OracleRecord> {
        self.get(image_id)
            .ok_or_else(|| Error::UnknownImage(image_id.to_string()))
    }
}

/// Incremental layout "B-s": `base_count` classes at task 0, then `step`
/// classes per task, taken in `class_order`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    base_count: usize,
    step: usize,
    class_order: Vec<ClassId>,
}

impl TaskSpec {
    pub fn new(base_count: usize, step: usize, class_order: Vec<ClassId>) -> Result<Self> {
        let total = class_order.len();
        if total == 0 || total >= 255 {
            return Err(Error::TaskLayout(format!(
                "class order must hold 1..=254 classes, got {total}"
            )));
        }
        let mut seen = BTreeSet::new();
        for &c in &class_order {
            if c.0 == 0 || c.0 as usize > total || !seen.insert(c) {
                return Err(Error::TaskLayout(format!(
                    "class order is not a permutation of 1..={total} (offending entry {c})"
                )));
            }
        }
        if base_count == 0 || step == 0 {
            return Err(Error::TaskLayout("base and step must be positive".to_string()));
        }
        if base_count > total || !(total - base_count).is_multiple_of(step) {
            return Err(Error::TaskLayout(format!(
                "{base_count}-{step} does not tile {total} classes"
            )));
        }
        Ok(Self {
            base_count,
            step,
            class_order,
        })
    }

    /// Layout over classes `1..=class_count` in their natural order.
    pub fn identity(base_count: usize, step: usize, class_count: u8) -> Result<Self> {
        Self::new(base_count, step, (1..=class_count).map(ClassId).collect())
    }

    /// Parses `"B-s"` (for example `"15-1"`) against a class order.
    pub fn parse(layout: &str, class_order: Vec<ClassId>) -> Result<Self> {
        let bad = || Error::TaskLayout(format!("expected `B-s`, got `{layout}`"));
        let (b, s) = layout.trim().split_once('-').ok_or_else(bad)?;
        let base = b.trim().parse().map_err(|_| bad())?;
        let step = s.trim().parse().map_err(|_| bad())?;
        Self::new(base, step, class_order)
    }

    pub fn base_count(&self) -> usize {
        self.base_count
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn class_order(&self) -> &[ClassId] {
        &self.class_order
    }

    pub fn class_count(&self) -> usize {
        self.class_order.len()
    }

    pub fn num_tasks(&self) -> usize {
        1 + (self.class_count() - self.base_count) / self.step
    }

    pub fn last_task(&self) -> usize {
        self.num_tasks() - 1
    }

    pub fn check_task(&self, t: usize) -> Result<()> {
        if t > self.last_task() {
            return Err(Error::TaskOutOfRange {
                t,
                last: self.last_task(),
            });
        }
        Ok(())
    }

    fn bounds(&self, t: usize) -> (usize, usize) {
        if t == 0 {
            (0, self.base_count)
        } else {
            let start = self.base_count + (t - 1) * self.step;
            (start, start + self.step)
        }
    }

    /// Classes introduced at task `t`, in class order.
    pub fn ordered_task_classes(&self, t: usize) -> Result<&[ClassId]> {
        self.check_task(t)?;
        let (a, b) = self.bounds(t);
        Ok(&self.class_order[a..b])
    }

    /// Classes seen up to and including task `t`, in class order.
    pub fn ordered_classes_upto(&self, t: usize) -> Result<&[ClassId]> {
        self.check_task(t)?;
        Ok(&self.class_order[..self.bounds(t).1])
    }

    /// The class set introduced at task `t`.
    pub fn task_classes(&self, t: usize) -> Result<BTreeSet<ClassId>> {
        Ok(self.ordered_task_classes(t)?.iter().copied().collect())
    }

    /// All classes of tasks `0..=t`.
    pub fn classes_upto(&self, t: usize) -> Result<BTreeSet<ClassId>> {
        Ok(self.ordered_classes_upto(t)?.iter().copied().collect())
    }

    /// Task at which `class` is introduced.
    pub fn task_of(&self, class: ClassId) -> Option<usize> {
        let pos = self.class_order.iter().position(|&c| c == class)?;
        Some(if pos < self.base_count {
            0
        } else {
            1 + (pos - self.base_count) / self.step
        })
    }
}

/// Keeps pixels whose class is in `classes`, leaves ignore pixels alone and
/// sends everything else to background.
pub fn relabel(oracle: &LabelGrid, classes: &BTreeSet<ClassId>) -> LabelGrid {
    oracle.map(|c| {
        if c.is_ignore() || classes.contains(&c) {
            c
        } else {
            ClassId::BACKGROUND
        }
    })
}

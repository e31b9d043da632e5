//! Fixed-capacity exemplar memory.
//!
//! An entry keeps the label grid it had when it was stored: every class
//! visible up to its `saved_at` task is kept and later classes are
//! background. Replay must use those stored labels, never the current
//! task's relabeling of the same image.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;

use crate::dataset::{relabel, DatasetManifest, OracleRecord, TaskSpec};
use crate::error::{Error, Result};
use crate::label::{ClassId, LabelGrid};
use crate::scenario::SplitManifest;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarEntry {
    image_id: String,
    labels: LabelGrid,
    saved_at: usize,
    anchor: ClassId,
}

impl ExemplarEntry {
    /// Stores `record` at task `saved_at`, relabeled to the classes visible
    /// up to that task.
    pub fn store(
        record: &OracleRecord,
        spec: &TaskSpec,
        saved_at: usize,
        anchor: ClassId,
    ) -> Result<Self> {
        let visible = spec.classes_upto(saved_at)?;
        if !visible.contains(&anchor) {
            return Err(Error::Config(format!(
                "anchor {anchor} is not visible at task {saved_at}"
            )));
        }
        Ok(Self {
            image_id: record.image_id().to_string(),
            labels: relabel(record.labels(), &visible),
            saved_at,
            anchor,
        })
    }

    /// Reassembles an entry read back from disk. Call
    /// [`ExemplarMemory::verify`] to check it against its source.
    pub fn from_parts(image_id: String, labels: LabelGrid, saved_at: usize, anchor: ClassId) -> Self {
        Self {
            image_id,
            labels,
            saved_at,
            anchor,
        }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn labels(&self) -> &LabelGrid {
        &self.labels
    }

    pub fn saved_at(&self) -> usize {
        self.saved_at
    }

    pub fn anchor(&self) -> ClassId {
        self.anchor
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarMemory {
    capacity: usize,
    entries: Vec<ExemplarEntry>,
}

impl ExemplarMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("memory capacity must be at least 1".to_string()));
        }
        Ok(Self {
            capacity,
            entries: Vec::new(),
        })
    }

    pub fn with_entries(capacity: usize, entries: Vec<ExemplarEntry>) -> Result<Self> {
        let mut mem = Self::new(capacity)?;
        for e in entries {
            mem.push(e)?;
        }
        Ok(mem)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[ExemplarEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.entries.iter().any(|e| e.image_id == image_id)
    }

    pub fn push(&mut self, entry: ExemplarEntry) -> Result<()> {
        if self.is_full() {
            return Err(Error::Config(format!(
                "memory is full ({} entries)",
                self.capacity
            )));
        }
        if self.contains(&entry.image_id) {
            return Err(Error::DuplicateImage(entry.image_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Number of entries per anchor class.
    pub fn anchor_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.anchor).or_insert(0) += 1;
        }
        counts
    }

    /// Checks every entry against its oracle record: the stored grid must
    /// be the saved-at relabeling and the anchor must be visible.
    pub fn verify(&self, manifest: &DatasetManifest, spec: &TaskSpec) -> Result<()> {
        for e in &self.entries {
            let rec = manifest.record(&e.image_id)?;
            let expect = ExemplarEntry::store(rec, spec, e.saved_at, e.anchor)?;
            if expect.labels != e.labels {
                return Err(Error::Config(format!(
                    "stored labels of `{}` differ from its task-{} relabeling",
                    e.image_id, e.saved_at
                )));
            }
        }
        Ok(())
    }
}

/// A non-fatal supply shortfall reported alongside a result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SupplyWarning {
    /// Fewer distinct images than the requested capacity were available.
    Underfilled { requested: usize, filled: usize },
    /// Some overlapping entries could not be replaced.
    PartialReplacement { replaced: usize, kept: usize },
    /// Memory was empty so the batch holds only current data.
    EmptyMemory,
}

impl core::fmt::Display for SupplyWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::Underfilled { requested, filled } => {
                write!(f, "memory filled to {filled} of {requested} entries")
            }
            Self::PartialReplacement { replaced, kept } => write!(
                f,
                "replaced {replaced} overlapping entries, {kept} kept for lack of supply"
            ),
            Self::EmptyMemory => f.write_str("memory is empty, batch holds current data only"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    pub value: T,
    pub warning: Option<SupplyWarning>,
}

/// Per-class candidate pools drawn without replacement.
struct Pools {
    lists: Vec<(ClassId, Vec<String>)>,
}

impl Pools {
    fn new<'a>(
        classes: &[ClassId],
        ids: impl Iterator<Item = &'a str> + Clone,
        manifest: &DatasetManifest,
    ) -> Result<Self> {
        let mut lists = Vec::with_capacity(classes.len());
        for &c in classes {
            let mut list = Vec::new();
            for id in ids.clone() {
                if manifest.record(id)?.has_class(c) {
                    list.push(id.to_string());
                }
            }
            lists.push((c, list));
        }
        Ok(Self { lists })
    }

    /// Draws an image holding class slot `k` that `taken` rejects neither.
    fn draw(&mut self, k: usize, rng: &mut seed::Rng, taken: impl Fn(&str) -> bool) -> Option<String> {
        let list = &mut self.lists[k].1;
        while !list.is_empty() {
            let i = rng.random_range(0..list.len());
            let id = list.swap_remove(i);
            if !taken(&id) {
                return Some(id);
            }
        }
        None
    }
}

/// Builds a class-balanced memory from `D^0..=D^t`.
///
/// Classes of `C^{0:t}` are visited round-robin in class order; each visit
/// draws one not-yet-stored image containing that class. A class with no
/// remaining supply is skipped. Entries are saved at task `t`.
pub fn sample_class_balanced(
    split: &SplitManifest,
    manifest: &DatasetManifest,
    t: usize,
    capacity: usize,
    seed: u64,
) -> Result<Outcome<ExemplarMemory>> {
    let spec = &split.spec;
    let classes = spec.ordered_classes_upto(t)?;
    let pool = split.ids_upto(t)?;
    let mut pools = Pools::new(classes, pool.iter().copied(), manifest)?;
    let mut memory = ExemplarMemory::new(capacity)?;
    let mut stored: BTreeSet<String> = BTreeSet::new();
    let mut rng = seed::rng(seed, "memory-sample", &format!("{t}"));
    let mut live: Vec<bool> = alloc::vec![true; classes.len()];
    'rounds: while live.iter().any(|&l| l) {
        for k in 0..classes.len() {
            if memory.is_full() {
                break 'rounds;
            }
            if !live[k] {
                continue;
            }
            match pools.draw(k, &mut rng, |id| stored.contains(id)) {
                Some(id) => {
                    let entry = ExemplarEntry::store(manifest.record(&id)?, spec, t, classes[k])?;
                    memory.push(entry)?;
                    stored.insert(id);
                }
                None => live[k] = false,
            }
        }
    }
    let warning = (!memory.is_full()).then(|| SupplyWarning::Underfilled {
        requested: capacity,
        filled: memory.len(),
    });
    Ok(Outcome {
        value: memory,
        warning,
    })
}

/// Extends a memory with the classes of task `t`, drawing from `D^t`.
///
/// Existing entries are kept while there is room. Once full, a new class
/// takes a slot only if some anchor class holds at least two more entries
/// than it; the evicted entry is drawn uniformly among the most-represented
/// anchor classes.
pub fn update_for_task(
    memory: &ExemplarMemory,
    split: &SplitManifest,
    manifest: &DatasetManifest,
    t: usize,
    seed: u64,
) -> Result<ExemplarMemory> {
    let spec = &split.spec;
    let classes = spec.ordered_task_classes(t)?;
    let ids = split.task_ids(t)?;
    let mut pools = Pools::new(classes, ids.iter().map(String::as_str), manifest)?;
    let mut rng = seed::rng(seed, "memory-update", &format!("{t}"));
    let mut out = memory.clone();
    let mut live: Vec<bool> = alloc::vec![true; classes.len()];
    while live.iter().any(|&l| l) {
        for k in 0..classes.len() {
            if !live[k] {
                continue;
            }
            let class = classes[k];
            if out.is_full() {
                let counts = out.anchor_counts();
                let max = counts.values().copied().max().unwrap_or(0);
                let own = counts.get(&class).copied().unwrap_or(0);
                if max <= own + 1 {
                    live[k] = false;
                    continue;
                }
                let victims: Vec<usize> = (0..out.entries.len())
                    .filter(|&i| counts[&out.entries[i].anchor] == max)
                    .collect();
                let draw = |id: &str| out.contains(id);
                let Some(id) = pools.draw(k, &mut rng, draw) else {
                    live[k] = false;
                    continue;
                };
                let victim = victims[rng.random_range(0..victims.len())];
                out.entries.remove(victim);
                out.push(ExemplarEntry::store(manifest.record(&id)?, spec, t, class)?)?;
            } else {
                let draw = |id: &str| out.contains(id);
                match pools.draw(k, &mut rng, draw) {
                    Some(id) => out.push(ExemplarEntry::store(manifest.record(&id)?, spec, t, class)?)?,
                    None => live[k] = false,
                }
            }
        }
    }
    Ok(out)
}

/// Fraction of memory entries whose image is also in `D^t`.
pub fn overlap_ratio(memory: &ExemplarMemory, split: &SplitManifest, t: usize) -> Result<f64> {
    if memory.is_empty() {
        return Err(Error::Empty("memory"));
    }
    let current = split.task(t)?;
    let hits = memory
        .entries
        .iter()
        .filter(|e| current.contains(&e.image_id))
        .count();
    Ok(hits as f64 / memory.len() as f64)
}

/// Replaces every entry whose image reappears in `D^t` with an image of
/// `D^{0:t-1}` that is not in `D^t` and not already stored, preferring one
/// that contains the entry's anchor class. A replacement without the anchor
/// is re-anchored to its first visible class in class order.
pub fn make_non_overlapping_variant(
    memory: &ExemplarMemory,
    split: &SplitManifest,
    manifest: &DatasetManifest,
    t: usize,
    seed: u64,
) -> Result<Outcome<ExemplarMemory>> {
    let spec = &split.spec;
    if t == 0 {
        return Err(Error::TaskOutOfRange {
            t,
            last: spec.last_task(),
        });
    }
    let current = split.task(t)?;
    let mut taken: BTreeSet<String> = memory.entries.iter().map(|e| e.image_id.clone()).collect();
    let mut supply: Vec<&str> = split
        .ids_upto(t - 1)?
        .into_iter()
        .filter(|id| !current.contains(id) && !taken.contains(*id))
        .collect();
    let mut rng = seed::rng(seed, "memory-variant", &format!("{t}"));
    let mut out = Vec::with_capacity(memory.len());
    let (mut replaced, mut kept) = (0, 0);
    for entry in &memory.entries {
        if !current.contains(&entry.image_id) {
            out.push(entry.clone());
            continue;
        }
        let order = spec.ordered_classes_upto(entry.saved_at)?;
        let visible_anchor = |rec: &OracleRecord| order.iter().copied().find(|&c| rec.has_class(c));
        let mut same = Vec::new();
        let mut other = Vec::new();
        for (i, id) in supply.iter().enumerate() {
            let rec = manifest.record(id)?;
            if rec.has_class(entry.anchor) {
                same.push(i);
            } else if visible_anchor(rec).is_some() {
                other.push(i);
            }
        }
        let pick = if !same.is_empty() {
            Some((same[rng.random_range(0..same.len())], entry.anchor))
        } else if !other.is_empty() {
            let i = other[rng.random_range(0..other.len())];
            let anchor = visible_anchor(manifest.record(supply[i])?).expect("filtered");
            Some((i, anchor))
        } else {
            None
        };
        match pick {
            Some((i, anchor)) => {
                let id = supply.remove(i);
                let rec = manifest.record(id)?;
                out.push(ExemplarEntry::store(rec, spec, entry.saved_at, anchor)?);
                taken.insert(id.to_string());
                replaced += 1;
            }
            None => {
                out.push(entry.clone());
                kept += 1;
            }
        }
    }
    let warning = (kept > 0).then_some(SupplyWarning::PartialReplacement { replaced, kept });
    Ok(Outcome {
        value: ExemplarMemory {
            capacity: memory.capacity,
            entries: out,
        },
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabelSource {
    Current,
    Memory,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Current => "current",
            Self::Memory => "memory",
        }
    }
}

impl core::str::FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Self::Current),
            "memory" => Ok(Self::Memory),
            _ => Err(Error::Config(format!("unknown label source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSlot {
    pub image_id: String,
    pub source: LabelSource,
    /// Index into the memory's entries for memory-tagged slots.
    pub memory_index: Option<usize>,
}

fn pick_indices(n: usize, amount: usize, rng: &mut seed::Rng) -> Vec<usize> {
    if amount <= n {
        index::sample(rng, n, amount).into_vec()
    } else {
        (0..amount).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Replaces half of a batch with memory data: `ceil(b/2)` current items
/// followed by `floor(b/2)` memory items. Sampling is without replacement
/// unless a source is smaller than its share.
pub fn compose_batch(
    current_ids: &[String],
    memory: &ExemplarMemory,
    batch_size: usize,
    seed: u64,
) -> Result<Outcome<Vec<BatchSlot>>> {
    if batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2".to_string()));
    }
    if current_ids.is_empty() {
        return Err(Error::Empty("current data"));
    }
    let mut rng = seed::rng(seed, "batch", "");
    let (n_current, n_memory, warning) = if memory.is_empty() {
        (batch_size, 0, Some(SupplyWarning::EmptyMemory))
    } else {
        (batch_size.div_ceil(2), batch_size / 2, None)
    };
    let mut slots: Vec<BatchSlot> = pick_indices(current_ids.len(), n_current, &mut rng)
        .into_iter()
        .map(|i| BatchSlot {
            image_id: current_ids[i].clone(),
            source: LabelSource::Current,
            memory_index: None,
        })
        .collect();
    if n_memory > 0 {
        slots.extend(
            pick_indices(memory.len(), n_memory, &mut rng)
                .into_iter()
                .map(|i| BatchSlot {
                    image_id: memory.entries[i].image_id.clone(),
                    source: LabelSource::Memory,
                    memory_index: Some(i),
                }),
        );
    }
    Ok(Outcome {
        value: slots,
        warning,
    })
}

/// Label grid a batch slot trains on: stored labels for memory slots, the
/// current task's relabeling for current slots.
pub fn resolve_labels(
    slot: &BatchSlot,
    memory: &ExemplarMemory,
    manifest: &DatasetManifest,
    current_classes: &BTreeSet<ClassId>,
) -> Result<LabelGrid> {
    match (slot.source, slot.memory_index) {
        (LabelSource::Memory, Some(i)) => {
            let entry = memory
                .entries
                .get(i)
                .filter(|e| e.image_id == slot.image_id)
                .ok_or_else(|| Error::UnknownImage(slot.image_id.clone()))?;
            Ok(entry.labels.clone())
        }
        (LabelSource::Memory, None) => Err(Error::Config(format!(
            "memory slot `{}` has no entry index",
            slot.image_id
        ))),
        (LabelSource::Current, _) => Ok(relabel(
            manifest.record(&slot.image_id)?.labels(),
            current_classes,
        )),
    }
}

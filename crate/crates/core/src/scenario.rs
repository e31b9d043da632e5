//! Incremental scenario construction: overlapped, disjoint and partitioned
//! task datasets, plus the seen/unseen split of overlapping data.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;

use crate::dataset::{relabel, DatasetManifest, OracleRecord, TaskSpec};
use crate::error::{Error, Result};
use crate::label::ClassId;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScenarioKind {
    Overlapped,
    Disjoint,
    Partitioned,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [Self::Overlapped, Self::Disjoint, Self::Partitioned];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Overlapped => "overlapped",
            Self::Disjoint => "disjoint",
            Self::Partitioned => "partitioned",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario kind `{s}`")))
    }
}

/// Image ids and class set of one task dataset `D^t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSplit {
    pub task: usize,
    /// Sorted ascending.
    pub classes: Vec<ClassId>,
    /// Sorted ascending, unique.
    pub image_ids: Vec<String>,
}

impl TaskSplit {
    pub fn contains(&self, image_id: &str) -> bool {
        self.image_ids
            .binary_search_by(|id| id.as_str().cmp(image_id))
            .is_ok()
    }
}

/// The persisted result of a scenario builder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub scenario: ScenarioKind,
    pub spec: TaskSpec,
    /// Present for partitioned splits only.
    pub seed: Option<u64>,
    pub tasks: Vec<TaskSplit>,
    /// Image id to the class it was partitioned by (partitioned only).
    pub assignments: Option<BTreeMap<String, ClassId>>,
}

impl SplitManifest {
    pub fn task(&self, t: usize) -> Result<&TaskSplit> {
        self.tasks.get(t).ok_or(Error::TaskOutOfRange {
            t,
            last: self.tasks.len().saturating_sub(1),
        })
    }

    pub fn task_ids(&self, t: usize) -> Result<&[String]> {
        Ok(&self.task(t)?.image_ids)
    }

    /// Union of `D^0..=D^t`.
    pub fn ids_upto(&self, t: usize) -> Result<BTreeSet<&str>> {
        self.task(t)?;
        Ok(self.tasks[..=t]
            .iter()
            .flat_map(|s| s.image_ids.iter().map(String::as_str))
            .collect())
    }

    pub fn counts(&self) -> Vec<usize> {
        self.tasks.iter().map(|s| s.image_ids.len()).collect()
    }

    /// `|D^i ∩ D^j|` for every pair `i < j`.
    pub fn pairwise_overlaps(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.tasks.iter().enumerate() {
            for (j, b) in self.tasks.iter().enumerate().skip(i + 1) {
                let n = a.image_ids.iter().filter(|id| b.contains(id)).count();
                out.push((i, j, n));
            }
        }
        out
    }

    /// Checks invariants that need no source manifest: task indices and
    /// class sets agree with the layout, id lists are sorted and unique, and
    /// partitioned task lists are pairwise disjoint and match assignments.
    pub fn validate_structure(&self) -> Result<()> {
        let spec = &self.spec;
        if self.tasks.len() != spec.num_tasks() {
            return Err(Error::SplitInvariant(format!(
                "{} task lists for a {}-task layout",
                self.tasks.len(),
                spec.num_tasks()
            )));
        }
        for (t, split) in self.tasks.iter().enumerate() {
            if split.task != t {
                return Err(Error::SplitInvariant(format!(
                    "task list {t} is labelled {}",
                    split.task
                )));
            }
            let expect: Vec<ClassId> = spec.task_classes(t)?.into_iter().collect();
            if split.classes != expect {
                return Err(Error::SplitInvariant(format!(
                    "task {t} class set does not match the layout"
                )));
            }
            if split.image_ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::SplitInvariant(format!(
                    "task {t} image ids are not sorted and unique"
                )));
            }
        }
        match (self.scenario, &self.seed, &self.assignments) {
            (ScenarioKind::Partitioned, Some(_), Some(assign)) => {
                let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
                for split in &self.tasks {
                    for id in &split.image_ids {
                        if let Some(prev) = owner.insert(id, split.task) {
                            return Err(Error::SplitInvariant(format!(
                                "image `{id}` is in partitioned tasks {prev} and {}",
                                split.task
                            )));
                        }
                    }
                }
                if owner.len() != assign.len() {
                    return Err(Error::SplitInvariant(
                        "assignments do not cover exactly the partitioned images".to_string(),
                    ));
                }
                for (id, &class) in assign {
                    let placed = owner.get(id.as_str()).copied();
                    if placed.is_none() || spec.task_of(class) != placed {
                        return Err(Error::SplitInvariant(format!(
                            "image `{id}` assigned to {class} is not in that class's task"
                        )));
                    }
                }
                Ok(())
            }
            (ScenarioKind::Partitioned, _, _) => Err(Error::SplitInvariant(
                "partitioned split needs a seed and assignments".to_string(),
            )),
            (_, None, None) => Ok(()),
            (kind, _, _) => Err(Error::SplitInvariant(format!(
                "{kind} split must not carry a seed or assignments"
            ))),
        }
    }

    /// Full check against the source manifest, recomputing membership.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        self.validate_structure()?;
        check_layout(manifest, &self.spec)?;
        for split in &self.tasks {
            for id in &split.image_ids {
                manifest.record(id)?;
            }
        }
        let rebuilt = match self.scenario {
            ScenarioKind::Overlapped => build_overlapped(manifest, &self.spec)?,
            ScenarioKind::Disjoint => build_disjoint(manifest, &self.spec)?,
            ScenarioKind::Partitioned => {
                let assign = self.assignments.as_ref().expect("checked above");
                for rec in manifest.records() {
                    match assign.get(rec.image_id()) {
                        Some(c) if rec.has_class(*c) => {}
                        _ => {
                            return Err(Error::SplitInvariant(format!(
                                "image `{}` lacks a valid assignment",
                                rec.image_id()
                            )))
                        }
                    }
                }
                return Ok(());
            }
        };
        if rebuilt.tasks != self.tasks {
            return Err(Error::SplitInvariant(format!(
                "stored {} membership differs from recomputation",
                self.scenario
            )));
        }
        Ok(())
    }
}

fn check_layout(manifest: &DatasetManifest, spec: &TaskSpec) -> Result<()> {
    if spec.class_count() != manifest.class_count() as usize {
        return Err(Error::TaskLayout(format!(
            "layout covers {} classes but the manifest declares {}",
            spec.class_count(),
            manifest.class_count()
        )));
    }
    Ok(())
}

fn collect(
    manifest: &DatasetManifest,
    spec: &TaskSpec,
    kind: ScenarioKind,
    member: impl Fn(&OracleRecord, usize) -> bool,
) -> Result<SplitManifest> {
    check_layout(manifest, spec)?;
    let tasks = (0..spec.num_tasks())
        .map(|t| {
            let mut image_ids: Vec<String> = manifest
                .records()
                .iter()
                .filter(|r| member(r, t))
                .map(|r| r.image_id().to_string())
                .collect();
            image_ids.sort_unstable();
            Ok(TaskSplit {
                task: t,
                classes: spec.task_classes(t)?.into_iter().collect(),
                image_ids,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SplitManifest {
        scenario: kind,
        spec: spec.clone(),
        seed: None,
        tasks,
        assignments: None,
    })
}

/// `D^t` holds every image with at least one class of `C^t`.
pub fn build_overlapped(manifest: &DatasetManifest, spec: &TaskSpec) -> Result<SplitManifest> {
    collect(manifest, spec, ScenarioKind::Overlapped, |rec, t| {
        rec.classes().iter().any(|&c| spec.task_of(c) == Some(t))
    })
}

/// `D^t` holds images with a class of `C^t` and no class beyond task `t`.
pub fn build_disjoint(manifest: &DatasetManifest, spec: &TaskSpec) -> Result<SplitManifest> {
    collect(manifest, spec, ScenarioKind::Disjoint, |rec, t| {
        let mut hit = false;
        for &c in rec.classes() {
            match spec.task_of(c) {
                Some(ct) if ct == t => hit = true,
                Some(ct) if ct < t => {}
                _ => return false,
            }
        }
        hit
    })
}

/// Draws the partitioning class of one image.
pub fn assign_class(record: &OracleRecord, seed: u64) -> ClassId {
    let classes = record.classes();
    if classes.len() == 1 {
        return *classes.first().expect("non-empty");
    }
    let mut rng = seed::rng(seed, "partition", record.image_id());
    let pick = rng.random_range(0..classes.len());
    *classes.iter().nth(pick).expect("in range")
}

/// Assigns each image one of its oracle classes uniformly at random and
/// places it in the task introducing that class.
pub fn build_partitioned(
    manifest: &DatasetManifest,
    spec: &TaskSpec,
    seed: u64,
) -> Result<SplitManifest> {
    build_partitioned_with_overrides(manifest, spec, seed, &BTreeMap::new())
}

/// As [`build_partitioned`], but images listed in `overrides` take the given
/// class instead of a random draw. Each override must be an oracle class of
/// its image.
pub fn build_partitioned_with_overrides(
    manifest: &DatasetManifest,
    spec: &TaskSpec,
    seed: u64,
    overrides: &BTreeMap<String, ClassId>,
) -> Result<SplitManifest> {
    check_layout(manifest, spec)?;
    let mut assignments = BTreeMap::new();
    for rec in manifest.records() {
        let class = match overrides.get(rec.image_id()) {
            Some(&c) if rec.has_class(c) => c,
            Some(&c) => {
                return Err(Error::Config(format!(
                    "override {c} is not an oracle class of `{}`",
                    rec.image_id()
                )))
            }
            None => assign_class(rec, seed),
        };
        assignments.insert(rec.image_id().to_string(), class);
    }
    for id in overrides.keys() {
        manifest.record(id)?;
    }
    let mut split = collect(manifest, spec, ScenarioKind::Partitioned, |rec, t| {
        spec.task_of(assignments[rec.image_id()]) == Some(t)
    })?;
    split.seed = Some(seed);
    split.assignments = Some(assignments);
    Ok(split)
}

pub fn build(
    kind: ScenarioKind,
    manifest: &DatasetManifest,
    spec: &TaskSpec,
    seed: u64,
) -> Result<SplitManifest> {
    match kind {
        ScenarioKind::Overlapped => build_overlapped(manifest, spec),
        ScenarioKind::Disjoint => build_disjoint(manifest, spec),
        ScenarioKind::Partitioned => build_partitioned(manifest, spec, seed),
    }
}

/// Halves of the overlap `D^{t-1} ∩ D^t`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OverlapSplit {
    pub seen: BTreeSet<String>,
    pub unseen: BTreeSet<String>,
}

/// Shuffles the overlapped-scenario overlap of tasks `t-1` and `t` and cuts
/// it in half. An odd element goes to the seen half.
pub fn split_overlapping(
    manifest: &DatasetManifest,
    spec: &TaskSpec,
    t: usize,
    seed: u64,
) -> Result<OverlapSplit> {
    if t == 0 {
        return Err(Error::TaskOutOfRange {
            t,
            last: spec.last_task(),
        });
    }
    spec.check_task(t)?;
    let split = build_overlapped(manifest, spec)?;
    let current = &split.tasks[t];
    let overlap: Vec<String> = split.tasks[t - 1]
        .image_ids
        .iter()
        .filter(|id| current.contains(id))
        .cloned()
        .collect();
    Ok(halve(overlap, seed, t))
}

/// Shuffle-and-halve rule behind [`split_overlapping`]; `ids` must be in a
/// canonical order for the result to be reproducible.
pub fn halve(mut ids: Vec<String>, seed: u64, t: usize) -> OverlapSplit {
    let mut rng = seed::rng(seed, "overlap-split", &format!("{t}"));
    seed::shuffle(&mut ids, &mut rng);
    let cut = ids.len().div_ceil(2);
    let unseen = ids.split_off(cut);
    OverlapSplit {
        seen: ids.into_iter().collect(),
        unseen: unseen.into_iter().collect(),
    }
}

/// Pixel counts of background shift for one task dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShiftCounts {
    /// Pixels labelled bg whose oracle class belongs to a later task.
    pub future: usize,
    /// Pixels labelled bg whose oracle class belongs to an earlier task.
    pub past: usize,
    /// Images with at least one future-shift pixel.
    pub future_images: usize,
    /// Images with at least one past-shift pixel.
    pub past_images: usize,
}

/// Counts background shift in `D^t` after relabeling to `C^t`.
pub fn background_shift(
    manifest: &DatasetManifest,
    split: &SplitManifest,
    t: usize,
) -> Result<ShiftCounts> {
    let spec = &split.spec;
    let classes = spec.task_classes(t)?;
    let mut counts = ShiftCounts::default();
    for id in split.task_ids(t)? {
        let rec = manifest.record(id)?;
        let labels = relabel(rec.labels(), &classes);
        let (mut future, mut past) = (0, 0);
        for (&y, &oracle) in labels.pixels().iter().zip(rec.labels().pixels()) {
            if !y.is_background() || !oracle.is_foreground() {
                continue;
            }
            match spec.task_of(oracle) {
                Some(ct) if ct > t => future += 1,
                Some(ct) if ct < t => past += 1,
                _ => {}
            }
        }
        counts.future += future;
        counts.past += past;
        counts.future_images += usize::from(future > 0);
        counts.past_images += usize::from(past > 0);
    }
    Ok(counts)
}

//! Confusion counting, per-class IoU, mIoU and the pseudo-label retrieval
//! rate (PRR).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::dataset::TaskSpec;
use crate::error::{Error, Result};
use crate::label::{ClassId, LabelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn union(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }

    /// IoU in percent, `None` when the class never occurs in either grid.
    pub fn iou(&self) -> Option<f64> {
        let u = self.union();
        (u > 0).then(|| 100.0 * self.tp as f64 / u as f64)
    }
}

/// Per-class true/false positive and false negative counts.
#[derive(Clone, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    counts: Vec<ClassCounts>,
}

impl Default for ConfusionAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl core::fmt::Debug for ConfusionAccumulator {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_map()
            .entries(
                self.counts
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.union() > 0)
                    .map(|(i, c)| (ClassId(i as u8), c)),
            )
            .finish()
    }
}

impl ConfusionAccumulator {
    pub fn new() -> Self {
        Self {
            counts: alloc::vec![ClassCounts::default(); 256],
        }
    }

    pub fn counts(&self, class: ClassId) -> ClassCounts {
        self.counts[class.0 as usize]
    }

    /// Adds one prediction/ground-truth pair. Pixels whose ground truth is
    /// the ignore index are skipped.
    pub fn accumulate(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        if pred.width() != gt.width() || pred.height() != gt.height() {
            return Err(Error::DimensionMismatch {
                left: pred.len(),
                right: gt.len(),
            });
        }
        for (&p, &g) in pred.pixels().iter().zip(gt.pixels()) {
            if g.is_ignore() {
                continue;
            }
            if p == g {
                self.counts[g.0 as usize].tp += 1;
            } else {
                self.counts[g.0 as usize].fn_ += 1;
                if !p.is_ignore() {
                    self.counts[p.0 as usize].fp += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
    }

    pub fn class_iou(&self, class: ClassId) -> Option<f64> {
        self.counts(class).iou()
    }

    /// Mean IoU in percent over `classes`. A class absent from both
    /// prediction and ground truth contributes 0.
    pub fn miou(&self, classes: &BTreeSet<ClassId>) -> Result<f64> {
        if classes.is_empty() {
            return Err(Error::Empty("class set"));
        }
        let ious: Vec<f64> = classes
            .iter()
            .map(|&c| self.class_iou(c).unwrap_or(0.0))
            .collect();
        Ok(pairwise_sum(&ious) / ious.len() as f64)
    }

    /// Mean IoU over the classes of `classes` that occur at all; `None`
    /// when none does.
    pub fn miou_present(&self, classes: &BTreeSet<ClassId>) -> Option<f64> {
        let ious: Vec<f64> = classes.iter().filter_map(|&c| self.class_iou(c)).collect();
        (!ious.is_empty()).then(|| pairwise_sum(&ious) / ious.len() as f64)
    }
}

/// Sum by pairwise (tree) reduction so the result does not depend on how a
/// caller chunked the work.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Per-image mIoU of a pseudo-label against its oracle over
/// `old_classes ∪ {bg}`, counting only classes present in either grid.
pub fn image_retrieval_miou(
    oracle: &LabelGrid,
    pseudo: &LabelGrid,
    measured: &BTreeSet<ClassId>,
) -> Result<Option<f64>> {
    let mut acc = ConfusionAccumulator::new();
    acc.accumulate(pseudo, oracle)?;
    Ok(acc.miou_present(measured))
}

/// Pseudo-labeling retrieval rate: per-image mIoU over old classes plus
/// background, averaged over images. Images in which no measured class
/// occurs have no defined mIoU and are left out of the average.
pub fn prr(pairs: &[(LabelGrid, LabelGrid)], old_classes: &BTreeSet<ClassId>) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pseudo-label set"));
    }
    let mut measured = old_classes.clone();
    measured.insert(ClassId::BACKGROUND);
    let mut per_image = Vec::with_capacity(pairs.len());
    for (oracle, pseudo) in pairs {
        if let Some(v) = image_retrieval_miou(oracle, pseudo, &measured)? {
            per_image.push(v);
        }
    }
    prr_from_image_scores(&mut per_image)
}

/// Averages per-image scores in a canonical order.
pub fn prr_from_image_scores(per_image: &mut [f64]) -> Result<f64> {
    if per_image.is_empty() {
        return Err(Error::Empty("images with measured classes"));
    }
    per_image.sort_by(f64::total_cmp);
    Ok(pairwise_sum(per_image) / per_image.len() as f64)
}

/// Per-class IoU plus base / incremental / all groupings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub per_class: BTreeMap<ClassId, Option<f64>>,
    /// mIoU over `C^0`.
    pub base: f64,
    /// mIoU over classes of tasks 1..; `None` for single-task layouts.
    pub incremental: Option<f64>,
    /// mIoU over background and every foreground class.
    pub all: f64,
}

pub fn summarize(acc: &ConfusionAccumulator, spec: &TaskSpec) -> Result<EvalSummary> {
    let mut all: BTreeSet<ClassId> = spec.class_order().iter().copied().collect();
    all.insert(ClassId::BACKGROUND);
    let base = spec.task_classes(0)?;
    let incremental: BTreeSet<ClassId> = spec.class_order()[spec.base_count()..]
        .iter()
        .copied()
        .collect();
    Ok(EvalSummary {
        per_class: all.iter().map(|&c| (c, acc.class_iou(c))).collect(),
        base: acc.miou(&base)?,
        incremental: if incremental.is_empty() {
            None
        } else {
            Some(acc.miou(&incremental)?)
        },
        all: acc.miou(&all)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[u8]) -> LabelGrid {
        LabelGrid::from_raw(2, v.len() / 2, v).unwrap()
    }

    fn set(v: &[u8]) -> BTreeSet<ClassId> {
        v.iter().copied().map(ClassId).collect()
    }

    #[test]
    fn hand_counted_two_by_two() {
        let mut acc = ConfusionAccumulator::new();
        acc.accumulate(&g(&[1, 1, 2, 0]), &g(&[1, 2, 2, 0])).unwrap();
        assert_eq!(acc.counts(ClassId(1)), ClassCounts { tp: 1, fp: 1, fn_: 0 });
        assert_eq!(acc.counts(ClassId(2)), ClassCounts { tp: 1, fp: 0, fn_: 1 });
        assert_eq!(acc.miou(&set(&[1, 2])).unwrap(), 50.0);
    }

    #[test]
    fn identity_and_ignore() {
        let mut acc = ConfusionAccumulator::new();
        let a = g(&[0, 1, 2, 3]);
        acc.accumulate(&a, &a).unwrap();
        assert_eq!(acc.miou(&set(&[0, 1, 2, 3])).unwrap(), 100.0);
        let before = acc.clone();
        acc.accumulate(&a, &g(&[255, 255, 255, 255])).unwrap();
        assert_eq!(acc, before);
    }

    #[test]
    fn absent_class_is_zero_and_null() {
        let mut acc = ConfusionAccumulator::new();
        acc.accumulate(&g(&[1, 1]), &g(&[1, 1])).unwrap();
        assert_eq!(acc.class_iou(ClassId(5)), None);
        assert_eq!(acc.miou(&set(&[1, 5])).unwrap(), 50.0);
        assert_eq!(acc.miou_present(&set(&[1, 5])), Some(100.0));
        assert!(matches!(acc.miou(&BTreeSet::new()), Err(Error::Empty(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let mut acc = ConfusionAccumulator::new();
        assert!(acc.accumulate(&g(&[0, 0]), &g(&[0, 0, 0, 0])).is_err());
    }

    #[test]
    fn prr_closed_forms() {
        let oracle = g(&[1, 1, 0, 0]);
        assert_eq!(prr(&[(oracle.clone(), oracle.clone())], &set(&[1])).unwrap(), 100.0);
        // All-bg pseudo: bg IoU = 2/4, class 1 IoU = 0, mean over 2 classes.
        let all_bg = g(&[0, 0, 0, 0]);
        assert_eq!(prr(&[(oracle, all_bg)], &set(&[1])).unwrap(), 25.0);
        assert!(prr(&[], &set(&[1])).is_err());
    }

    #[test]
    fn prr_is_mean_of_images() {
        // 80 and 60 per image.
        let mut v = [80.0, 60.0];
        assert_eq!(prr_from_image_scores(&mut v).unwrap(), 70.0);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0, 4.0, 5.0]), 15.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }
}

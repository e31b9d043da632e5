//! Loss kernel over raw score matrices.
//!
//! Every loss is computed in `f64` from logits with log-sum-exp so that
//! logs of aggregated probabilities stay finite. Each per-item loss has an
//! analytic gradient with respect to the current logits, checked against
//! central finite differences by [`grad_check`].

mod composite;
mod gradcheck;
mod kernel;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::label::ClassId;
use crate::scores::{softmax_probs, Probabilities, ScoreMatrix};

pub use composite::{
    evaluate, evaluate_with_grad, grad_logits, loss_dkd_m_composite, loss_mib_augm,
    plop_m_compose, ExternalTerms, LossCase, LossItem, LossKind,
};
pub use gradcheck::{grad_check, GradCheckReport};
pub use kernel::{loss_ce, loss_mbce, loss_mem, loss_membce, loss_unce, loss_unkd};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the distillation term.
    pub lambda: f64,
    /// Weight of the positive term in the binary cross-entropies.
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Whether the distillation sum also runs over the background column.
    pub kd_includes_bg: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            gamma: 1.0,
            alpha: 1.0,
            beta: 1.0,
            kd_includes_bg: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda) || !ok(self.alpha) || !ok(self.beta) {
            return Err(Error::Config(
                "lambda, alpha and beta must be finite and non-negative".to_string(),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Old classes `C^{0:t-1}` and new classes `C^t`; background is implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskClassLayout {
    old: BTreeSet<ClassId>,
    new: BTreeSet<ClassId>,
}

impl TaskClassLayout {
    pub fn new(old: BTreeSet<ClassId>, new: BTreeSet<ClassId>) -> Result<Self> {
        if let Some(c) = old.iter().chain(&new).find(|c| !c.is_foreground()) {
            return Err(Error::LayoutMismatch(format!(
                "{c} cannot be an old or new class"
            )));
        }
        if let Some(c) = old.intersection(&new).next() {
            return Err(Error::LayoutMismatch(format!("{c} is both old and new")));
        }
        Ok(Self { old, new })
    }

    pub fn old(&self) -> &BTreeSet<ClassId> {
        &self.old
    }

    pub fn new_classes(&self) -> &BTreeSet<ClassId> {
        &self.new
    }

    /// Layout with old and new swapped.
    pub fn swapped(&self) -> Self {
        Self {
            old: self.new.clone(),
            new: self.old.clone(),
        }
    }

    fn full_set(&self) -> BTreeSet<ClassId> {
        let mut all: BTreeSet<ClassId> = self.old.union(&self.new).copied().collect();
        all.insert(ClassId::BACKGROUND);
        all
    }

    fn old_set(&self) -> BTreeSet<ClassId> {
        let mut s = self.old.clone();
        s.insert(ClassId::BACKGROUND);
        s
    }

    /// Column roles of a current-model score matrix.
    pub(crate) fn columns(&self, scores: &ScoreMatrix) -> Result<Columns> {
        if scores.class_set() != self.full_set() {
            return Err(Error::LayoutMismatch(format!(
                "expected classes {:?}, score matrix has {:?}",
                self.full_set(),
                scores.class_map()
            )));
        }
        Ok(Columns::new(scores.class_map(), &self.old, &self.new))
    }

    /// Previous-model score matrices cover old classes and background.
    pub(crate) fn check_prev(&self, prev: &ScoreMatrix) -> Result<()> {
        if prev.class_set() != self.old_set() {
            return Err(Error::LayoutMismatch(format!(
                "previous scores must cover {:?}, got {:?}",
                self.old_set(),
                prev.class_map()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Role {
    Background,
    Old,
    New,
}

#[derive(Debug, Clone)]
pub(crate) struct Columns {
    pub roles: Vec<Role>,
    pub classes: Vec<ClassId>,
    pub bg: usize,
}

impl Columns {
    fn new(class_map: &[ClassId], old: &BTreeSet<ClassId>, new: &BTreeSet<ClassId>) -> Self {
        let roles: Vec<Role> = class_map
            .iter()
            .map(|c| {
                if c.is_background() {
                    Role::Background
                } else if old.contains(c) {
                    Role::Old
                } else {
                    debug_assert!(new.contains(c));
                    Role::New
                }
            })
            .collect();
        let bg = roles.iter().position(|&r| r == Role::Background).expect("bg mapped");
        Self {
            roles,
            classes: class_map.to_vec(),
            bg,
        }
    }

    pub fn column(&self, class: ClassId) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }
}

/// Probabilities folded onto `keep ∪ {bg}`: background absorbs every
/// column whose role is `absorbed`.
fn fold_probs(scores: &ScoreMatrix, cols: &Columns, keep: Role, absorbed: Role) -> Probabilities {
    let p = softmax_probs(scores);
    let kept: Vec<usize> = (0..cols.roles.len()).filter(|&j| cols.roles[j] == keep).collect();
    let mut class_map = Vec::with_capacity(kept.len() + 1);
    class_map.push(ClassId::BACKGROUND);
    class_map.extend(kept.iter().map(|&j| cols.classes[j]));
    let mut values = Vec::with_capacity(p.n_pixels() * class_map.len());
    for i in 0..p.n_pixels() {
        let row = p.row(i);
        let bg: f64 = row[cols.bg]
            + (0..row.len())
                .filter(|&j| cols.roles[j] == absorbed)
                .map(|j| row[j])
                .sum::<f64>();
        values.push(bg);
        values.extend(kept.iter().map(|&j| row[j]));
    }
    Probabilities { class_map, values }
}

/// Probabilities over `old ∪ {bg}` where background absorbs the new
/// classes. Column 0 is background, then old classes ascending.
pub fn augmented_probs_dot(scores: &ScoreMatrix, layout: &TaskClassLayout) -> Result<Probabilities> {
    let cols = layout.columns(scores)?;
    let mut out = fold_probs(scores, &cols, Role::Old, Role::New);
    sort_folded(&mut out);
    Ok(out)
}

/// Probabilities over `new ∪ {bg}` where background absorbs the old
/// classes. Column 0 is background, then new classes ascending.
pub fn augmented_probs_ddot(scores: &ScoreMatrix, layout: &TaskClassLayout) -> Result<Probabilities> {
    let cols = layout.columns(scores)?;
    let mut out = fold_probs(scores, &cols, Role::New, Role::Old);
    sort_folded(&mut out);
    Ok(out)
}

fn sort_folded(p: &mut Probabilities) {
    let k = p.class_map.len();
    let mut perm: Vec<usize> = (0..k).collect();
    perm.sort_by_key(|&j| p.class_map[j]);
    if perm.iter().enumerate().all(|(a, &b)| a == b) {
        return;
    }
    let class_map = perm.iter().map(|&j| p.class_map[j]).collect();
    let mut values = Vec::with_capacity(p.values.len());
    for row in p.values.chunks_exact(k) {
        values.extend(perm.iter().map(|&j| row[j]));
    }
    p.class_map = class_map;
    p.values = values;
}

//! Batch-level compositions of the per-item losses.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::kernel::{self, Eval};
use super::{LossConfig, TaskClassLayout};
use crate::error::{Error, Result};
use crate::label::LabelGrid;
use crate::memory::LabelSource;
use crate::metrics::pairwise_sum;
use crate::scores::ScoreMatrix;

/// Caller-supplied scalar terms whose internals live outside this crate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExternalTerms {
    pub kd: Option<f64>,
    pub dkd: Option<f64>,
    pub ac: Option<f64>,
    pub pod: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossItem {
    pub source: LabelSource,
    pub scores: ScoreMatrix,
    pub labels: LabelGrid,
    pub prev_scores: Option<ScoreMatrix>,
    pub external: ExternalTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCase {
    pub layout: TaskClassLayout,
    pub items: Vec<LossItem>,
    pub config: LossConfig,
}

/// Which loss to evaluate on a [`LossCase`].
///
/// Single-item kinds average over the items they apply to: current items
/// for `Unce` and `Mbce`, memory items for `Mem` and `Membce`, every item
/// for `Unkd` and `Ce`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossKind {
    Unce,
    Unkd,
    Mem,
    Mbce,
    Membce,
    Ce,
    MibAugm,
    DkdM,
    PlopM,
}

impl LossKind {
    pub const ALL: [LossKind; 9] = [
        Self::Unce,
        Self::Unkd,
        Self::Mem,
        Self::Mbce,
        Self::Membce,
        Self::Ce,
        Self::MibAugm,
        Self::DkdM,
        Self::PlopM,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Unce => "unce",
            Self::Unkd => "unkd",
            Self::Mem => "mem",
            Self::Mbce => "mbce",
            Self::Membce => "membce",
            Self::Ce => "ce",
            Self::MibAugm => "mib-augm",
            Self::DkdM => "dkd-m",
            Self::PlopM => "plop-m",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}`")))
    }
}

/// Accumulates one mean term: `weight / count * sum(item values)`.
struct MeanTerm {
    values: Vec<f64>,
    grads: Vec<(usize, Vec<f64>)>,
}

impl MeanTerm {
    fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, item: usize, eval: Eval, extra: f64) {
        self.values.push(eval.0 + extra);
        if let Some(g) = eval.1 {
            self.grads.push((item, g));
        }
    }

    fn finish(self, weight: f64, grads: &mut Option<Vec<Vec<f64>>>) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let scale = weight / self.values.len() as f64;
        if let Some(out) = grads.as_mut() {
            for (i, g) in self.grads {
                for (o, v) in out[i].iter_mut().zip(g) {
                    *o += scale * v;
                }
            }
        }
        scale * pairwise_sum(&self.values)
    }
}

fn missing(what: &str, item: usize) -> Error {
    Error::MissingTerm(format!("{what} for item {item}"))
}

fn prev(item: &LossItem, i: usize) -> Result<&ScoreMatrix> {
    item.prev_scores.as_ref().ok_or_else(|| missing("previous scores", i))
}

fn external(value: Option<f64>, what: &str, i: usize) -> Result<f64> {
    match value {
        Some(v) if v.is_finite() => Ok(v),
        Some(_) => Err(Error::Config(format!("{what} for item {i} is not finite"))),
        None => Err(missing(what, i)),
    }
}

/// Loss value and, when `want_grad`, its gradient with respect to each
/// item's current logits.
pub(crate) fn run(kind: LossKind, case: &LossCase, want_grad: bool) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let cfg = &case.config;
    cfg.validate()?;
    let layout = &case.layout;
    let mut grads = want_grad.then(|| {
        case.items
            .iter()
            .map(|it| alloc::vec![0.0; it.scores.logits().len()])
            .collect::<Vec<_>>()
    });
    let is = |it: &LossItem, s: LabelSource| it.source == s;
    let current: Vec<usize> = (0..case.items.len())
        .filter(|&i| is(&case.items[i], LabelSource::Current))
        .collect();
    let memory: Vec<usize> = (0..case.items.len())
        .filter(|&i| is(&case.items[i], LabelSource::Memory))
        .collect();
    let all: Vec<usize> = (0..case.items.len()).collect();

    let single = |idx: &[usize], f: &dyn Fn(&LossItem, usize) -> Result<Eval>, grads: &mut Option<Vec<Vec<f64>>>| -> Result<f64> {
        if idx.is_empty() {
            return Err(Error::Empty("items for this loss"));
        }
        let mut term = MeanTerm::new();
        for &i in idx {
            term.push(i, f(&case.items[i], i)?, 0.0);
        }
        Ok(term.finish(1.0, grads))
    };

    let value = match kind {
        LossKind::Unce => single(&current, &|it, _| kernel::unce(&it.scores, &it.labels, layout, want_grad), &mut grads)?,
        LossKind::Mem => single(&memory, &|it, _| kernel::mem(&it.scores, &it.labels, layout, want_grad), &mut grads)?,
        LossKind::Mbce => single(&current, &|it, _| kernel::mbce(&it.scores, &it.labels, layout, cfg, want_grad), &mut grads)?,
        LossKind::Membce => single(&memory, &|it, _| kernel::membce(&it.scores, &it.labels, layout, cfg, want_grad), &mut grads)?,
        LossKind::Ce => single(&all, &|it, _| kernel::ce(&it.scores, &it.labels, want_grad), &mut grads)?,
        LossKind::Unkd => single(&all, &|it, i| kernel::unkd(prev(it, i)?, &it.scores, layout, cfg, want_grad), &mut grads)?,
        LossKind::MibAugm => {
            if current.is_empty() {
                return Err(Error::Empty("current items"));
            }
            let mut ce = MeanTerm::new();
            for &i in &current {
                let it = &case.items[i];
                ce.push(i, kernel::unce(&it.scores, &it.labels, layout, want_grad)?, 0.0);
            }
            let mut kd = MeanTerm::new();
            if cfg.lambda > 0.0 {
                for &i in &all {
                    let it = &case.items[i];
                    kd.push(i, kernel::unkd(prev(it, i)?, &it.scores, layout, cfg, want_grad)?, 0.0);
                }
            }
            let mut mem = MeanTerm::new();
            for &i in &memory {
                let it = &case.items[i];
                mem.push(i, kernel::mem(&it.scores, &it.labels, layout, want_grad)?, 0.0);
            }
            ce.finish(1.0, &mut grads) + kd.finish(cfg.lambda, &mut grads) + mem.finish(1.0, &mut grads)
        }
        LossKind::DkdM => {
            if current.is_empty() {
                return Err(Error::Empty("current items"));
            }
            let mut distill = Vec::with_capacity(all.len());
            for &i in &all {
                let ext = &case.items[i].external;
                let kd = external(ext.kd, "kd term", i)?;
                let dkd = external(ext.dkd, "dkd term", i)?;
                distill.push(cfg.alpha * kd + cfg.beta * dkd);
            }
            let mut cur = MeanTerm::new();
            for &i in &current {
                let it = &case.items[i];
                let ac = external(it.external.ac, "ac term", i)?;
                cur.push(i, kernel::mbce(&it.scores, &it.labels, layout, cfg, want_grad)?, ac);
            }
            let mut mem = MeanTerm::new();
            for &i in &memory {
                let it = &case.items[i];
                mem.push(i, kernel::membce(&it.scores, &it.labels, layout, cfg, want_grad)?, 0.0);
            }
            pairwise_sum(&distill) / distill.len() as f64
                + cur.finish(1.0, &mut grads)
                + mem.finish(1.0, &mut grads)
        }
        LossKind::PlopM => {
            if all.is_empty() {
                return Err(Error::Empty("items"));
            }
            let mut term = MeanTerm::new();
            for &i in &all {
                let it = &case.items[i];
                let pod = external(it.external.pod, "pod term", i)?;
                term.push(i, kernel::ce(&it.scores, &it.labels, want_grad)?, cfg.lambda * pod);
            }
            term.finish(1.0, &mut grads)
        }
    };
    Ok((value, grads))
}

pub fn evaluate(kind: LossKind, case: &LossCase) -> Result<f64> {
    Ok(run(kind, case, false)?.0)
}

/// Value plus per-item gradients; each gradient is `N x K` row-major.
pub fn evaluate_with_grad(kind: LossKind, case: &LossCase) -> Result<(f64, Vec<Vec<f64>>)> {
    let (v, g) = run(kind, case, true)?;
    let g = g.expect("requested");
    for (item, gi) in g.iter().enumerate() {
        if let Some(index) = gi.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { item, index });
        }
    }
    Ok((v, g))
}

/// Analytic `dL/dz` for every item's current logits.
pub fn grad_logits(kind: LossKind, case: &LossCase) -> Result<Vec<Vec<f64>>> {
    Ok(evaluate_with_grad(kind, case)?.1)
}

/// `mean_current(L_unce) + λ·mean_all(L_unkd) + mean_memory(L_mem)`. The
/// distillation mean runs over the item list, so an image present as both
/// current and memory data counts twice.
pub fn loss_mib_augm(case: &LossCase) -> Result<f64> {
    evaluate(LossKind::MibAugm, case)
}

/// `mean_all(α·kd + β·dkd) + mean_current(L_mbce + ac) + mean_memory(L_membce)`.
pub fn loss_dkd_m_composite(case: &LossCase) -> Result<f64> {
    evaluate(LossKind::DkdM, case)
}

/// `mean_all(CE(ỹ) + λ·pod)` with item labels taken as the pseudo-labels.
pub fn plop_m_compose(case: &LossCase) -> Result<f64> {
    evaluate(LossKind::PlopM, case)
}

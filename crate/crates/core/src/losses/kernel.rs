//! Per-item losses and their gradients with respect to the current logits.

use alloc::vec::Vec;

use super::{Columns, LossConfig, Role, TaskClassLayout};
use crate::error::{Error, Result};
use crate::label::{ClassId, LabelGrid};
use crate::scores::{log_sum_exp_where, softmax_row, ScoreMatrix};

pub(crate) type Eval = (f64, Option<Vec<f64>>);

/// `-log(sum_{j in S} p_j)` for one row, adding `weight` times its gradient
/// to `grad` when given.
fn neg_log_mass(
    row: &[f64],
    lse_all: f64,
    in_set: impl Fn(usize) -> bool + Copy,
    weight: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let lse_set = log_sum_exp_where(row, in_set);
    if let Some(g) = grad {
        for (j, gj) in g.iter_mut().enumerate() {
            let mut d = libm::exp(row[j] - lse_all);
            if in_set(j) {
                d -= libm::exp(row[j] - lse_set);
            }
            *gj += weight * d;
        }
    }
    lse_all - lse_set
}

fn check_pixels(labels: &LabelGrid, scores: &ScoreMatrix) -> Result<()> {
    if labels.len() != scores.n_pixels() {
        return Err(Error::DimensionMismatch {
            left: labels.len(),
            right: scores.n_pixels(),
        });
    }
    Ok(())
}

/// Shared driver for losses that are a mean over non-ignore pixels of a
/// per-pixel term.
fn labelled_mean(
    scores: &ScoreMatrix,
    labels: &LabelGrid,
    want_grad: bool,
    mut term: impl FnMut(&[f64], f64, ClassId, Option<&mut [f64]>) -> Result<f64>,
) -> Result<Eval> {
    check_pixels(labels, scores)?;
    let k = scores.n_classes();
    let valid = labels.pixels().iter().filter(|c| !c.is_ignore()).count();
    let mut grad = want_grad.then(|| alloc::vec![0.0; scores.logits().len()]);
    if valid == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (i, (&y, row)) in labels.pixels().iter().zip(scores.rows()).enumerate() {
        if y.is_ignore() {
            continue;
        }
        let lse = log_sum_exp_where(row, |_| true);
        let g = grad.as_mut().map(|g| &mut g[i * k..(i + 1) * k]);
        total += term(row, lse, y, g)?;
    }
    let scale = 1.0 / valid as f64;
    if let Some(g) = grad.as_mut() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total * scale, grad))
}

fn label_column(cols: &Columns, y: ClassId, allowed: Role, context: &'static str) -> Result<usize> {
    match cols.column(y) {
        Some(j) if cols.roles[j] == allowed || cols.roles[j] == Role::Background => Ok(j),
        _ => Err(Error::InvalidLabel { class: y, context }),
    }
}

/// Cross-entropy on probabilities where background absorbs the columns of
/// role `absorbed`; labels must be background or of role `own`.
fn folded_ce(
    scores: &ScoreMatrix,
    labels: &LabelGrid,
    cols: &Columns,
    own: Role,
    absorbed: Role,
    context: &'static str,
    want_grad: bool,
) -> Result<Eval> {
    labelled_mean(scores, labels, want_grad, |row, lse, y, g| {
        let j = label_column(cols, y, own, context)?;
        Ok(if j == cols.bg {
            neg_log_mass(row, lse, |c| c == cols.bg || cols.roles[c] == absorbed, 1.0, g)
        } else {
            neg_log_mass(row, lse, |c| c == j, 1.0, g)
        })
    })
}

pub(crate) fn unce(scores: &ScoreMatrix, labels: &LabelGrid, layout: &TaskClassLayout, want_grad: bool) -> Result<Eval> {
    let cols = layout.columns(scores)?;
    folded_ce(scores, labels, &cols, Role::New, Role::Old, "current-task labels must be new classes or bg", want_grad)
}

pub(crate) fn mem(scores: &ScoreMatrix, labels: &LabelGrid, layout: &TaskClassLayout, want_grad: bool) -> Result<Eval> {
    let cols = layout.columns(scores)?;
    folded_ce(scores, labels, &cols, Role::Old, Role::New, "memory labels must be old classes or bg", want_grad)
}

pub(crate) fn unkd(
    prev: &ScoreMatrix,
    curr: &ScoreMatrix,
    layout: &TaskClassLayout,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<Eval> {
    let cols = layout.columns(curr)?;
    layout.check_prev(prev)?;
    if prev.n_pixels() != curr.n_pixels() {
        return Err(Error::DimensionMismatch {
            left: prev.n_pixels(),
            right: curr.n_pixels(),
        });
    }
    let n = curr.n_pixels();
    let k = curr.n_classes();
    let mut grad = want_grad.then(|| alloc::vec![0.0; curr.logits().len()]);
    if n == 0 {
        return Ok((0.0, grad));
    }
    // Column in `curr` for each column of `prev`.
    let targets: Vec<usize> = prev
        .class_map()
        .iter()
        .map(|&c| cols.column(c).expect("checked by layout"))
        .collect();
    let mut teacher = alloc::vec![0.0; prev.n_classes()];
    let mut total = 0.0;
    for (i, (prow, row)) in prev.rows().zip(curr.rows()).enumerate() {
        softmax_row(prow, &mut teacher);
        let lse = log_sum_exp_where(row, |_| true);
        let mut g = grad.as_mut().map(|g| &mut g[i * k..(i + 1) * k]);
        for (&w, &j) in teacher.iter().zip(&targets) {
            let term = if j == cols.bg {
                if !cfg.kd_includes_bg {
                    continue;
                }
                neg_log_mass(row, lse, |c| c == cols.bg || cols.roles[c] == Role::New, w, g.as_deref_mut())
            } else {
                neg_log_mass(row, lse, |c| c == j, w, g.as_deref_mut())
            };
            total += w * term;
        }
    }
    let scale = 1.0 / n as f64;
    if let Some(g) = grad.as_mut() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total * scale, grad))
}

/// Binary cross-entropy on softmax probabilities summed over the columns
/// of role `measured`.
fn binary_ce(
    scores: &ScoreMatrix,
    labels: &LabelGrid,
    cols: &Columns,
    measured: Role,
    gamma: f64,
    context: &'static str,
    want_grad: bool,
) -> Result<Eval> {
    let measured_cols: Vec<usize> = (0..cols.roles.len()).filter(|&j| cols.roles[j] == measured).collect();
    labelled_mean(scores, labels, want_grad, |row, lse, y, mut g| {
        let yj = label_column(cols, y, measured, context)?;
        let mut sum = 0.0;
        for &c in &measured_cols {
            sum += if c == yj {
                gamma * neg_log_mass(row, lse, |j| j == c, gamma, g.as_deref_mut())
            } else {
                neg_log_mass(row, lse, |j| j != c, 1.0, g.as_deref_mut())
            };
        }
        Ok(sum)
    })
}

pub(crate) fn mbce(scores: &ScoreMatrix, labels: &LabelGrid, layout: &TaskClassLayout, cfg: &LossConfig, want_grad: bool) -> Result<Eval> {
    cfg.validate()?;
    let cols = layout.columns(scores)?;
    binary_ce(scores, labels, &cols, Role::New, cfg.gamma, "current-task labels must be new classes or bg", want_grad)
}

pub(crate) fn membce(scores: &ScoreMatrix, labels: &LabelGrid, layout: &TaskClassLayout, cfg: &LossConfig, want_grad: bool) -> Result<Eval> {
    cfg.validate()?;
    let cols = layout.columns(scores)?;
    binary_ce(scores, labels, &cols, Role::Old, cfg.gamma, "memory labels must be old classes or bg", want_grad)
}

pub(crate) fn ce(scores: &ScoreMatrix, labels: &LabelGrid, want_grad: bool) -> Result<Eval> {
    let class_map = scores.class_map();
    labelled_mean(scores, labels, want_grad, |row, lse, y, g| {
        let j = class_map
            .iter()
            .position(|&c| c == y)
            .ok_or(Error::InvalidLabel {
                class: y,
                context: "label is not in the score matrix's class map",
            })?;
        Ok(neg_log_mass(row, lse, |c| c == j, 1.0, g))
    })
}

/// Unbiased cross-entropy: mean over non-ignore pixels of `-log p̈` at the
/// label, where background absorbs the old classes.
pub fn loss_unce(scores: &ScoreMatrix, labels: &LabelGrid, layout: &TaskClassLayout) -> Result<f64> {
    Ok(unce(scores, labels, layout, false)?.0)
}

/// Unbiased distillation from the previous model's softmax onto `ṗ`.
pub fn loss_unkd(
    prev_scores: &ScoreMatrix,
    curr_scores: &ScoreMatrix,
    layout: &TaskClassLayout,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(unkd(prev_scores, curr_scores, layout, cfg, false)?.0)
}

/// Memory cross-entropy: mean over non-ignore pixels of `-log ṗ` at the
/// label, where background absorbs the new classes.
pub fn loss_mem(scores: &ScoreMatrix, labels: &LabelGrid, layout: &TaskClassLayout) -> Result<f64> {
    Ok(mem(scores, labels, layout, false)?.0)
}

pub fn loss_mbce(scores: &ScoreMatrix, labels: &LabelGrid, layout: &TaskClassLayout, cfg: &LossConfig) -> Result<f64> {
    Ok(mbce(scores, labels, layout, cfg, false)?.0)
}

pub fn loss_membce(scores: &ScoreMatrix, labels: &LabelGrid, layout: &TaskClassLayout, cfg: &LossConfig) -> Result<f64> {
    Ok(membce(scores, labels, layout, cfg, false)?.0)
}

/// Standard cross-entropy over the full class map.
pub fn loss_ce(scores: &ScoreMatrix, labels: &LabelGrid) -> Result<f64> {
    Ok(ce(scores, labels, false)?.0)
}

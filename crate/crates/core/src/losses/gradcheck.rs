//! Central finite-difference check of the analytic gradients.

use alloc::vec::Vec;

use rand::seq::index;

use super::composite::{evaluate, evaluate_with_grad, LossCase, LossKind};
use crate::error::{Error, Result};
use crate::seed;

/// Lower bound on the gradient scale used to normalize errors.
pub const SCALE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub value: f64,
    pub checked: usize,
    pub max_abs_err: f64,
    /// Largest checked `|analytic|` or `|numeric|` component.
    pub scale: f64,
    /// `max_abs_err / scale`: the infinity-norm error relative to the
    /// gradient's own magnitude, so components near zero are not judged by
    /// the rounding floor of the finite difference.
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares analytic gradients with `(L(z+h) - L(z-h)) / 2h` on up to
/// `max_coords` logits drawn with `seed` (all of them when fewer exist).
pub fn grad_check(
    kind: LossKind,
    case: &LossCase,
    step: f64,
    tolerance: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Config(alloc::format!("step must be positive, got {step}")));
    }
    let (value, grads) = evaluate_with_grad(kind, case)?;
    let coords: Vec<(usize, usize)> = grads
        .iter()
        .enumerate()
        .flat_map(|(i, g)| (0..g.len()).map(move |j| (i, j)))
        .collect();
    let picked: Vec<usize> = if coords.len() <= max_coords {
        (0..coords.len()).collect()
    } else {
        let mut rng = seed::rng(seed, "gradcheck", kind.as_str());
        let mut v = index::sample(&mut rng, coords.len(), max_coords).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = case.clone();
    let (mut max_abs, mut scale) = (0.0f64, 0.0f64);
    for &c in &picked {
        let (item, j) = coords[c];
        let base = case.items[item].scores.logits().to_vec();
        let mut shifted = base.clone();
        shifted[j] = base[j] + step;
        probe.items[item].scores = case.items[item].scores.with_logits(shifted.clone())?;
        let up = evaluate(kind, &probe)?;
        shifted[j] = base[j] - step;
        probe.items[item].scores = case.items[item].scores.with_logits(shifted)?;
        let down = evaluate(kind, &probe)?;
        probe.items[item].scores = case.items[item].scores.clone();
        let numeric = (up - down) / (2.0 * step);
        let analytic = grads[item][j];
        max_abs = max_abs.max((analytic - numeric).abs());
        scale = scale.max(analytic.abs()).max(numeric.abs());
    }
    let max_rel = max_abs / scale.max(SCALE_FLOOR);
    Ok(GradCheckReport {
        loss: kind,
        value,
        checked: picked.len(),
        max_abs_err: max_abs,
        scale,
        max_rel_err: max_rel,
        tolerance,
        passed: max_rel < tolerance,
    })
}

//! Pseudo-labeling of background pixels from a previous model's scores.

use alloc::collections::BTreeSet;
use alloc::format;

use crate::error::{Error, Result};
use crate::label::{ClassId, LabelGrid};
use crate::scores::{argmax_column, softmax_row, ScoreMatrix};

/// Confidence threshold; a prediction is used when its probability is
/// strictly greater than `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoConfig {
    tau: f64,
}

impl PseudoConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Current-task pixels keep their label, background pixels take the
/// previous model's argmax when its softmax probability exceeds `tau`, and
/// everything else is background. Ignore pixels pass through.
pub fn pseudo_label(
    gt: &LabelGrid,
    prev_scores: &ScoreMatrix,
    current_classes: &BTreeSet<ClassId>,
    cfg: PseudoConfig,
) -> Result<LabelGrid> {
    if gt.len() != prev_scores.n_pixels() {
        return Err(Error::DimensionMismatch {
            left: gt.len(),
            right: prev_scores.n_pixels(),
        });
    }
    let class_map = prev_scores.class_map();
    let mut probs = alloc::vec![0.0; class_map.len()];
    let data = gt
        .pixels()
        .iter()
        .zip(prev_scores.rows())
        .map(|(&y, row)| {
            if y.is_ignore() || current_classes.contains(&y) {
                return y;
            }
            if !y.is_background() {
                return ClassId::BACKGROUND;
            }
            softmax_row(row, &mut probs);
            let best = argmax_column(&probs, class_map);
            if probs[best] > cfg.tau {
                class_map[best]
            } else {
                ClassId::BACKGROUND
            }
        })
        .collect();
    LabelGrid::new(gt.width(), gt.height(), data)
}

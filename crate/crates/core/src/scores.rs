//! Per-pixel score matrices and the softmax / argmax rules over them.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::label::{ClassId, LabelGrid};

/// `N x K` logits, one row per pixel, columns labelled by `class_map`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    class_map: Vec<ClassId>,
    logits: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(class_map: Vec<ClassId>, logits: Vec<f64>) -> Result<Self> {
        if class_map.is_empty() {
            return Err(Error::ScoreMatrix("empty class map".to_string()));
        }
        let mut seen = BTreeSet::new();
        for &c in &class_map {
            if c.is_ignore() || !seen.insert(c) {
                return Err(Error::ScoreMatrix(format!("bad class map entry {c}")));
            }
        }
        if !seen.contains(&ClassId::BACKGROUND) {
            return Err(Error::ScoreMatrix("class map lacks background".to_string()));
        }
        if !logits.len().is_multiple_of(class_map.len()) {
            return Err(Error::ScoreMatrix(format!(
                "{} logits do not fill rows of {}",
                logits.len(),
                class_map.len()
            )));
        }
        if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
            return Err(Error::ScoreMatrix(format!("non-finite logit at index {i}")));
        }
        Ok(Self { class_map, logits })
    }

    pub fn n_pixels(&self) -> usize {
        self.logits.len() / self.class_map.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_map.len()
    }

    pub fn class_map(&self) -> &[ClassId] {
        &self.class_map
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.class_map.len();
        &self.logits[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f64> {
        self.logits.chunks_exact(self.class_map.len())
    }

    /// Column index of `class`, if mapped.
    pub fn column(&self, class: ClassId) -> Option<usize> {
        self.class_map.iter().position(|&c| c == class)
    }

    pub fn class_set(&self) -> BTreeSet<ClassId> {
        self.class_map.iter().copied().collect()
    }

    /// Same class map with replaced logits; used for finite differences.
    pub fn with_logits(&self, logits: Vec<f64>) -> Result<Self> {
        Self::new(self.class_map.clone(), logits)
    }
}

/// Row-normalized probabilities sharing the class map of their source.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    pub class_map: Vec<ClassId>,
    pub values: Vec<f64>,
}

impl Probabilities {
    pub fn n_pixels(&self) -> usize {
        self.values.len() / self.class_map.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.class_map.len();
        &self.values[i * k..(i + 1) * k]
    }
}

pub(crate) fn max_of(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log(sum(exp(row[j])))` over the columns selected by `keep`.
pub(crate) fn log_sum_exp_where(row: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
    let m = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| keep(j))
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| keep(j))
        .map(|(_, &z)| libm::exp(z - m))
        .sum();
    m + libm::log(s)
}

pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = max_of(row);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = libm::exp(z - m);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Max-shifted softmax of every row.
pub fn softmax_probs(scores: &ScoreMatrix) -> Probabilities {
    let k = scores.n_classes();
    let mut values = alloc::vec![0.0; scores.logits.len()];
    for (row, out) in scores.rows().zip(values.chunks_exact_mut(k)) {
        softmax_row(row, out);
    }
    Probabilities {
        class_map: scores.class_map.clone(),
        values,
    }
}

/// Column of the largest value; ties go to the lowest class id.
pub(crate) fn argmax_column(row: &[f64], class_map: &[ClassId]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] || (row[j] == row[best] && class_map[j] < class_map[best]) {
            best = j;
        }
    }
    best
}

/// Per-pixel argmax over the mapped classes, reshaped to `width x height`.
pub fn predict_labels(scores: &ScoreMatrix, width: usize, height: usize) -> Result<LabelGrid> {
    if width * height != scores.n_pixels() {
        return Err(Error::DimensionMismatch {
            left: width * height,
            right: scores.n_pixels(),
        });
    }
    let data = scores
        .rows()
        .map(|row| scores.class_map[argmax_column(row, &scores.class_map)])
        .collect();
    LabelGrid::new(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cm(v: &[u8]) -> Vec<ClassId> {
        v.iter().copied().map(ClassId).collect()
    }

    #[test]
    fn validation() {
        assert!(ScoreMatrix::new(vec![], vec![]).is_err());
        assert!(ScoreMatrix::new(cm(&[1, 2]), vec![0.0, 0.0]).is_err());
        assert!(ScoreMatrix::new(cm(&[0, 0]), vec![0.0, 0.0]).is_err());
        assert!(ScoreMatrix::new(cm(&[0, 1]), vec![0.0, 0.0, 1.0]).is_err());
        assert!(ScoreMatrix::new(cm(&[0, 1]), vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_closed_forms() {
        let s = ScoreMatrix::new(cm(&[0, 1]), vec![0.0, 0.0, libm::log(2.0), 0.0, 1000.0, 0.0]).unwrap();
        let p = softmax_probs(&s);
        assert_eq!(p.row(0), [0.5, 0.5]);
        assert!((p.row(1)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.row(1)[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.row(2)[0] - 1.0).abs() < 1e-15);
        assert!(p.row(2)[1] >= 0.0 && p.row(2)[1] < 1e-300);
    }

    #[test]
    fn argmax_and_ties() {
        let s = ScoreMatrix::new(cm(&[0, 1, 2]), vec![0.1, 2.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let g = predict_labels(&s, 2, 1).unwrap();
        assert_eq!(g.to_raw(), [1, 0]);
        // Tie broken by class id, not by column order.
        let s = ScoreMatrix::new(cm(&[3, 0, 2]), vec![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(predict_labels(&s, 1, 1).unwrap().to_raw(), [2]);
        assert!(predict_labels(&s, 2, 1).is_err());
    }

    #[test]
    fn two_by_two_grid() {
        let logits = vec![
            5.0, 0.0, 0.0, //
            0.0, 5.0, 0.0, //
            0.0, 0.0, 5.0, //
            0.0, 9.0, 1.0,
        ];
        let s = ScoreMatrix::new(cm(&[0, 1, 2]), logits).unwrap();
        assert_eq!(predict_labels(&s, 2, 2).unwrap().to_raw(), [0, 1, 2, 1]);
    }
}

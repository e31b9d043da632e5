//! Class identifiers and dense per-pixel label grids.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// A class identifier as stored in a label grid.
///
/// `0` is the background class and `255` is the ignore index. Foreground
/// classes occupy `1..=class_count`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ClassId(pub u8);

impl ClassId {
    pub const BACKGROUND: ClassId = ClassId(0);
    pub const IGNORE: ClassId = ClassId(255);

    #[inline]
    pub fn is_background(self) -> bool {
        self == Self::BACKGROUND
    }

    #[inline]
    pub fn is_ignore(self) -> bool {
        self == Self::IGNORE
    }

    /// True for anything that is neither background nor ignore.
    #[inline]
    pub fn is_foreground(self) -> bool {
        !self.is_background() && !self.is_ignore()
    }
}

impl fmt::Debug for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::BACKGROUND => f.write_str("bg"),
            Self::IGNORE => f.write_str("ignore"),
            ClassId(c) => write!(f, "c{c}"),
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u8> for ClassId {
    fn from(v: u8) -> Self {
        ClassId(v)
    }
}

/// Row-major label grid with the origin at the top-left pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LabelGrid {
    width: usize,
    height: usize,
    data: Vec<ClassId>,
}

impl LabelGrid {
    pub fn new(width: usize, height: usize, data: Vec<ClassId>) -> Result<Self> {
        let expected = width * height;
        if data.len() != expected {
            return Err(Error::GridSize {
                width,
                height,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_raw(width: usize, height: usize, raw: &[u8]) -> Result<Self> {
        Self::new(width, height, raw.iter().copied().map(ClassId).collect())
    }

    pub fn filled(width: usize, height: usize, class: ClassId) -> Self {
        Self {
            width,
            height,
            data: alloc::vec![class; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels, `width * height`.
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn pixels(&self) -> &[ClassId] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Option<ClassId> {
        if x < self.width && y < self.height {
            Some(self.data[y * self.width + x])
        } else {
            None
        }
    }

    pub fn to_raw(&self) -> Vec<u8> {
        self.data.iter().map(|c| c.0).collect()
    }

    /// Distinct foreground classes present in the grid.
    pub fn foreground_classes(&self) -> BTreeSet<ClassId> {
        self.data.iter().copied().filter(|c| c.is_foreground()).collect()
    }

    pub(crate) fn map(&self, f: impl Fn(ClassId) -> ClassId) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&c| f(c)).collect(),
        }
    }
}

impl fmt::Debug for LabelGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LabelGrid")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("classes", &self.foreground_classes())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        let err = LabelGrid::from_raw(3, 2, &[0, 1, 2]).unwrap_err();
        assert!(matches!(err, Error::GridSize { expected: 6, .. }));
    }

    #[test]
    fn row_major_indexing() {
        let g = LabelGrid::from_raw(3, 2, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(g.get(2, 0), Some(ClassId(2)));
        assert_eq!(g.get(0, 1), Some(ClassId(3)));
        assert_eq!(g.get(3, 0), None);
    }

    #[test]
    fn foreground_skips_bg_and_ignore() {
        let g = LabelGrid::from_raw(2, 2, &[0, 255, 4, 4]).unwrap();
        assert_eq!(g.foreground_classes().into_iter().collect::<Vec<_>>(), [ClassId(4)]);
    }
}

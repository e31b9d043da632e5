use alloc::string::String;

use crate::label::ClassId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("grid of {width}x{height} needs {expected} pixels, got {actual}")]
    GridSize {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch: {left} vs {right} pixels")]
    DimensionMismatch { left: usize, right: usize },
    #[error("class {class} is not declared (class_count = {class_count})")]
    UndeclaredClass { class: ClassId, class_count: u8 },
    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),
    #[error("unknown image id `{0}`")]
    UnknownImage(String),
    #[error("image `{0}` has no foreground class")]
    NoForeground(String),
    #[error("invalid task layout: {0}")]
    TaskLayout(String),
    #[error("task index {t} out of range (last task is {last})")]
    TaskOutOfRange { t: usize, last: usize },
    #[error("invalid score matrix: {0}")]
    ScoreMatrix(String),
    #[error("label {class} is not allowed here: {context}")]
    InvalidLabel { class: ClassId, context: &'static str },
    #[error("class set does not match score matrix: {0}")]
    LayoutMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingTerm(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("split invariant violated: {0}")]
    SplitInvariant(String),
    #[error("non-finite gradient at item {item}, index {index}")]
    NonFiniteGradient { item: usize, index: usize },
}

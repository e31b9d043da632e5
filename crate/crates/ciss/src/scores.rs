//! Score matrix files.
//!
//! Text: a line `N K`, the `K` class ids, then `N` rows of `K` decimal
//! logits, all whitespace separated. Binary: the same two header lines,
//! then `N*K` little-endian `f64` values in row-major order. Paths ending
//! in `.bin` use the binary layout.

use std::path::Path;

use ciss_core::{ClassId, ScoreMatrix};

use crate::error::{Error, Result};
use crate::files;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFormat {
    Text,
    Binary,
}

impl ScoreFormat {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::Binary,
            _ => Self::Text,
        }
    }
}

fn parse_dims<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> std::result::Result<(usize, usize), String> {
    let mut dim = |what: &str| {
        let tok = tokens.next().ok_or_else(|| format!("missing {what}"))?;
        tok.parse::<usize>().map_err(|_| format!("invalid {what} `{tok}`"))
    };
    Ok((dim("pixel count")?, dim("class count")?))
}

fn parse_classes<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    k: usize,
) -> std::result::Result<Vec<ClassId>, String> {
    (0..k)
        .map(|_| {
            let tok = tokens.next().ok_or("header ends before the class ids")?;
            tok.parse::<u8>()
                .map(ClassId)
                .map_err(|_| format!("invalid class id `{tok}`"))
        })
        .collect()
}

pub fn parse_text(text: &str) -> std::result::Result<ScoreMatrix, String> {
    let mut tokens = text.split_ascii_whitespace();
    let (n, k) = parse_dims(&mut tokens)?;
    let classes = parse_classes(&mut tokens, k)?;
    let mut logits = Vec::with_capacity(n * k);
    for tok in tokens {
        logits.push(tok.parse::<f64>().map_err(|_| format!("invalid logit `{tok}`"))?);
    }
    if logits.len() != n * k {
        return Err(format!("expected {} logits, found {}", n * k, logits.len()));
    }
    ScoreMatrix::new(classes, logits).map_err(|e| e.to_string())
}

pub fn parse_binary(buf: &[u8]) -> std::result::Result<ScoreMatrix, String> {
    let mut lines = buf.splitn(3, |&b| b == b'\n');
    let mut line = |what: &str| {
        let raw = lines.next().ok_or_else(|| format!("missing {what} line"))?;
        std::str::from_utf8(raw).map_err(|_| format!("{what} line is not UTF-8"))
    };
    let (n, k) = parse_dims(&mut line("dimension")?.split_ascii_whitespace())?;
    let mut ids = line("class id")?.split_ascii_whitespace();
    let classes = parse_classes(&mut ids, k)?;
    if ids.next().is_some() {
        return Err("extra tokens in the class id line".into());
    }
    let data = lines.next().unwrap_or(&[]);
    if data.len() != n * k * 8 {
        return Err(format!("expected {} data bytes, found {}", n * k * 8, data.len()));
    }
    let logits = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ScoreMatrix::new(classes, logits).map_err(|e| e.to_string())
}

fn header(m: &ScoreMatrix) -> String {
    let ids: Vec<String> = m.class_map().iter().map(ToString::to_string).collect();
    format!("{} {}\n{}\n", m.n_pixels(), m.n_classes(), ids.join(" "))
}

/// Shortest round-trip decimal for every logit.
pub fn to_text(m: &ScoreMatrix) -> String {
    let mut out = header(m);
    for row in m.rows() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn to_binary(m: &ScoreMatrix) -> Vec<u8> {
    let mut out = header(m).into_bytes();
    for v in m.logits() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_scores(path: &Path) -> Result<ScoreMatrix> {
    let bytes = files::read(path)?;
    let parsed = match ScoreFormat::for_path(path) {
        ScoreFormat::Binary => parse_binary(&bytes),
        ScoreFormat::Text => std::str::from_utf8(&bytes)
            .map_err(|_| "not UTF-8".to_string())
            .and_then(parse_text),
    };
    parsed.map_err(|msg| Error::parse(path, msg))
}

pub fn save_scores(m: &ScoreMatrix, path: &Path) -> Result<()> {
    match ScoreFormat::for_path(path) {
        ScoreFormat::Binary => files::write(path, &to_binary(m)),
        ScoreFormat::Text => files::write(path, to_text(m).as_bytes()),
    }
}

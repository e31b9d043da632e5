//! NetPBM graymaps as label grids.
//!
//! Reads plain (`P2`) and raw (`P5`) graymaps whose maxval is at most 255,
//! one byte per pixel. Writes raw graymaps with maxval 255.

use ciss_core::LabelGrid;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PnmError {
    #[error("not a graymap (magic {0:?})")]
    Magic(String),
    #[error("header ends before the {0}")]
    Truncated(&'static str),
    #[error("invalid {field} `{token}`")]
    Field { field: &'static str, token: String },
    #[error("maxval {0} is outside 1..=255")]
    MaxVal(u32),
    #[error("zero-sized image")]
    ZeroSize,
    #[error("pixel value {value} exceeds maxval {maxval}")]
    Range { value: u32, maxval: u32 },
    #[error("expected {expected} pixels, found {found}")]
    PixelCount { expected: usize, found: usize },
    #[error("unexpected data after the raster")]
    Trailing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Plain,
    Raw,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.buf.get(self.pos) {
            if b == b'#' {
                while self.buf.get(self.pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_space();
        let start = self.pos;
        while self
            .buf
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.buf[start..self.pos])
    }

    fn number(&mut self, field: &'static str) -> Result<u32, PnmError> {
        let tok = self.token().ok_or(PnmError::Truncated(field))?;
        std::str::from_utf8(tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PnmError::Field {
                field,
                token: String::from_utf8_lossy(tok).into_owned(),
            })
    }
}

/// Parses a `P2` or `P5` graymap; pixel values become class ids.
pub fn decode(buf: &[u8]) -> Result<LabelGrid, PnmError> {
    let kind = match buf.get(..2) {
        Some(b"P2") => Kind::Plain,
        Some(b"P5") => Kind::Raw,
        other => {
            return Err(PnmError::Magic(
                String::from_utf8_lossy(other.unwrap_or(buf)).into_owned(),
            ))
        }
    };
    let mut cur = Cursor { buf, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PnmError::ZeroSize);
    }
    if !(1..=255).contains(&maxval) {
        return Err(PnmError::MaxVal(maxval));
    }
    let n = width * height;
    let mut raw = Vec::with_capacity(n);
    match kind {
        Kind::Raw => {
            // Exactly one whitespace byte separates the header from the raster.
            if !buf.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
                return Err(PnmError::Truncated("raster"));
            }
            let start = cur.pos + 1;
            let data = buf.get(start..start + n).ok_or(PnmError::PixelCount {
                expected: n,
                found: buf.len().saturating_sub(start),
            })?;
            raw.extend_from_slice(data);
            if !buf[start + n..].iter().all(u8::is_ascii_whitespace) {
                return Err(PnmError::Trailing);
            }
        }
        Kind::Plain => {
            while raw.len() < n {
                cur.skip_space();
                if cur.pos >= buf.len() {
                    return Err(PnmError::PixelCount {
                        expected: n,
                        found: raw.len(),
                    });
                }
                let value = cur.number("pixel")?;
                if value > maxval {
                    return Err(PnmError::Range { value, maxval });
                }
                raw.push(value as u8);
            }
            cur.skip_space();
            if cur.pos < buf.len() {
                return Err(PnmError::Trailing);
            }
        }
    }
    if let Some(&v) = raw.iter().find(|&&v| u32::from(v) > maxval) {
        return Err(PnmError::Range {
            value: v.into(),
            maxval,
        });
    }
    Ok(LabelGrid::from_raw(width, height, &raw).expect("size checked"))
}

/// Encodes a grid as a raw `P5` graymap with maxval 255.
pub fn encode(grid: &LabelGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.to_raw());
    out
}

/// Encodes a grid as a plain `P2` graymap, one image row per line.
pub fn encode_plain(grid: &LabelGrid) -> String {
    let mut out = format!("P2\n{} {}\n255\n", grid.width(), grid.height());
    for row in grid.to_raw().chunks(grid.width()) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

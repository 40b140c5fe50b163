//! Grayscale PGM images (P2 text, P5 binary) with a `.range` sidecar.
//!
//! A real value `v` maps to `round(255 · clamp((v − lo)/(hi − lo), 0, 1))`.
//! The sidecar holds the single line `lo hi` so the mapping can be undone.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numkernel::fmt_real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmFormat {
    /// `P2`, one row of decimal values per line.
    Ascii,
    /// `P5`, one byte per pixel.
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub lo: f64,
    pub hi: f64,
}

impl GrayImage {
    /// Quantizes row-major `values` over `[lo, hi]`. A degenerate range maps
    /// everything to 0.
    pub fn from_values(values: &[f64], width: usize, lo: f64, hi: f64) -> Result<Self> {
        if width == 0 || values.len() % width != 0 {
            return Err(Error::Shape(format!(
                "{} values do not tile rows of width {width}",
                values.len()
            )));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::invalid(format!("bad intensity range [{lo}, {hi}]")));
        }
        let span = hi - lo;
        let pixels = values
            .iter()
            .map(|&v| {
                let t = if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
                (255.0 * t).round() as u8
            })
            .collect();
        Ok(Self {
            width,
            height: values.len() / width,
            pixels,
            lo,
            hi,
        })
    }

    /// Quantizes over the joint value range of `values` and `others`.
    pub fn auto_range(values: &[f64], width: usize, others: &[&[f64]]) -> Result<Self> {
        let (lo, hi) = std::iter::once(values)
            .chain(others.iter().copied())
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if values.is_empty() {
            return Err(Error::Shape("empty image".into()));
        }
        Self::from_values(values, width, lo, hi)
    }

    pub fn encode(&self, format: PgmFormat) -> Vec<u8> {
        let mut out = match format {
            PgmFormat::Ascii => format!("P2\n{} {}\n255\n", self.width, self.height).into_bytes(),
            PgmFormat::Binary => format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes(),
        };
        match format {
            PgmFormat::Ascii => {
                for row in self.pixels.chunks(self.width) {
                    let line: Vec<String> = row.iter().map(u8::to_string).collect();
                    out.extend_from_slice(line.join(" ").as_bytes());
                    out.push(b'\n');
                }
            }
            PgmFormat::Binary => out.extend_from_slice(&self.pixels),
        }
        out
    }

    pub fn range_line(&self) -> String {
        format!("{} {}\n", fmt_real(self.lo), fmt_real(self.hi))
    }

    /// Writes `path` and `path.range`.
    pub fn write(&self, path: &Path, format: PgmFormat) -> Result<()> {
        fs::write(path, self.encode(format))?;
        fs::write(range_path(path), self.range_line())?;
        Ok(())
    }

    /// Reads an image and its sidecar back.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let (width, height, pixels) = decode(&bytes)?;
        let range = fs::read_to_string(range_path(path))?;
        let vals = crate::numkernel::parse_reals(range.trim_end(), 1)?;
        if vals.len() != 2 {
            return Err(Error::parse(1, "range sidecar needs `lo hi`"));
        }
        Ok(Self {
            width,
            height,
            pixels,
            lo: vals[0],
            hi: vals[1],
        })
    }
}

pub fn range_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".range");
    PathBuf::from(s)
}

/// Parses a P2 or P5 image with maxval 255. Comments are not supported
/// since the writer never emits them.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::parse(0, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    let num = |s: String| s.parse::<usize>().map_err(|_| Error::parse(0, format!("bad PGM number {s:?}")));
    let width = num(token(&mut pos)?)?;
    let height = num(token(&mut pos)?)?;
    let maxval = num(token(&mut pos)?)?;
    if maxval != 255 {
        return Err(Error::parse(0, format!("unsupported maxval {maxval}")));
    }
    let n = width * height;
    let pixels = match magic.as_str() {
        "P5" => {
            let body = &bytes[(pos + 1).min(bytes.len())..];
            if body.len() != n {
                return Err(Error::parse(0, format!("expected {n} pixel bytes, found {}", body.len())));
            }
            body.to_vec()
        }
        "P2" => {
            let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| Error::parse(0, "P2 body is not text"))?;
            let px: Vec<u8> = text
                .split_ascii_whitespace()
                .map(|t| t.parse::<u8>().map_err(|_| Error::parse(0, format!("bad pixel {t:?}"))))
                .collect::<Result<_>>()?;
            if px.len() != n {
                return Err(Error::parse(0, format!("expected {n} pixels, found {}", px.len())));
            }
            px
        }
        other => return Err(Error::parse(0, format!("not a PGM file (magic {other:?})"))),
    };
    Ok((width, height, pixels))
}

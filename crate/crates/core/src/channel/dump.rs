//! Plain-text channel dump format.
//!
//! ```text
//! swipt-channels 1
//! k 3
//! k1 1
//! m 4
//! seed 42
//! trial 7
//! block 0 0
//! <re> <im> <re> <im> ...      (one line per row, M complex entries)
//! ...
//! block 0 1
//! ...
//! ```
//!
//! Blocks appear in row-major order `(i, j)` for `i, j in 0..k`, where block
//! `(i, j)` is the channel from transmitter `j` to receiver `i`. Numbers use
//! Rust's shortest round-trip exponent notation, so a dump reloads bit for bit.
//! Blank lines and lines starting with `#` are ignored.

use num_complex::Complex64;
use std::fmt::Write as _;
use thiserror::Error;

use super::{ChannelError, ChannelSet};
use crate::numerics::ComplexMatrix;

const MAGIC: &str = "swipt-channels";
const VERSION: u32 = 1;
/// Upper bound on `k` and `m` accepted by the parser.
pub const MAX_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unexpected end of input: {0}")]
    Truncated(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Header of a dump file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpHeader {
    pub k: usize,
    pub k1: usize,
    pub m: usize,
    pub seed: u64,
    pub trial: u64,
}

pub fn write_channels(header: &DumpHeader, channels: &ChannelSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "k {}", channels.k());
    let _ = writeln!(out, "k1 {}", header.k1);
    let _ = writeln!(out, "m {}", channels.m());
    let _ = writeln!(out, "seed {}", header.seed);
    let _ = writeln!(out, "trial {}", header.trial);
    for i in 0..channels.k() {
        for j in 0..channels.k() {
            let _ = writeln!(out, "block {i} {j}");
            let h = channels.get(i, j);
            for r in 0..h.nrows() {
                let row: Vec<String> = (0..h.ncols())
                    .map(|col| format!("{:e} {:e}", h[(r, col)].re, h[(r, col)].im))
                    .collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), DumpError> {
        for (idx, line) in self.inner.by_ref() {
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok((idx + 1, t));
            }
        }
        Err(DumpError::Truncated(format!("expected {what}")))
    }

    fn rest_is_blank(&mut self) -> Option<usize> {
        self.next("").ok().map(|(line, _)| line)
    }
}

fn syntax(line: usize, reason: impl Into<String>) -> DumpError {
    DumpError::Syntax { line, reason: reason.into() }
}

fn keyed<T: std::str::FromStr>(lines: &mut Lines<'_>, key: &str) -> Result<T, DumpError> {
    let (line, text) = lines.next(key)?;
    let mut parts = text.split_whitespace();
    if parts.next() != Some(key) {
        return Err(syntax(line, format!("expected `{key} <value>`")));
    }
    let value = parts.next().ok_or_else(|| syntax(line, format!("missing value for `{key}`")))?;
    if parts.next().is_some() {
        return Err(syntax(line, "trailing tokens"));
    }
    value.parse().map_err(|_| syntax(line, format!("bad value `{value}` for `{key}`")))
}

/// Parse a dump produced by [`write_channels`].
pub fn parse_channels(text: &str) -> Result<(DumpHeader, ChannelSet), DumpError> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (line, magic) = lines.next("header")?;
    let mut parts = magic.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(syntax(line, format!("missing `{MAGIC}` header")));
    }
    match parts.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(VERSION) if parts.next().is_none() => {}
        _ => return Err(syntax(line, format!("unsupported version (expected {VERSION})"))),
    }
    let k: usize = keyed(&mut lines, "k")?;
    let k1: usize = keyed(&mut lines, "k1")?;
    let m: usize = keyed(&mut lines, "m")?;
    let seed: u64 = keyed(&mut lines, "seed")?;
    let trial: u64 = keyed(&mut lines, "trial")?;
    if k == 0 || k > MAX_DIM || m == 0 || m > MAX_DIM {
        return Err(syntax(0, format!("k and m must lie in 1..={MAX_DIM}")));
    }
    if k1 >= k {
        return Err(syntax(0, "k1 must be smaller than k"));
    }

    let mut blocks = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let (line, text) = lines.next("block header")?;
            let toks: Vec<&str> = text.split_whitespace().collect();
            let ok = toks.len() == 3
                && toks[0] == "block"
                && toks[1].parse::<usize>().ok() == Some(i)
                && toks[2].parse::<usize>().ok() == Some(j);
            if !ok {
                return Err(syntax(line, format!("expected `block {i} {j}`")));
            }
            let mut h = ComplexMatrix::zeros(m, m);
            for r in 0..m {
                let (line, text) = lines.next("matrix row")?;
                let vals = text
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| syntax(line, format!("bad number `{t}`"))))
                    .collect::<Result<Vec<f64>, _>>()?;
                if vals.len() != 2 * m {
                    return Err(syntax(line, format!("expected {} numbers, got {}", 2 * m, vals.len())));
                }
                for col in 0..m {
                    h[(r, col)] = Complex64::new(vals[2 * col], vals[2 * col + 1]);
                }
            }
            blocks.push(h);
        }
    }
    if let Some(line) = lines.rest_is_blank() {
        return Err(syntax(line, "unexpected content after last block"));
    }
    let channels = ChannelSet::from_blocks(k, m, blocks)?;
    Ok((DumpHeader { k, k1, m, seed, trial }, channels))
}

//! Plain-text parameter snapshots.
//!
//! ```text
//! hrsg-params 1
//! kind <free text up to end of line>
//! blocks <n>
//! <name> <rows> <cols>      (n lines)
//! values <total>
//! <value>                   (one per line, row-major, block order)
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so save/load is exact.

use std::fmt::Write as _;
use std::path::Path;

use super::params::ParamSet;
use crate::error::{Error, Result};

const MAGIC: &str = "hrsg-params 1";

pub fn to_text(kind: &str, p: &ParamSet) -> String {
    let mut s = String::with_capacity(p.len() * 22 + 256);
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "kind {kind}").unwrap();
    writeln!(s, "blocks {}", p.blocks.len()).unwrap();
    for b in &p.blocks {
        writeln!(s, "{} {} {}", b.name, b.rows, b.cols).unwrap();
    }
    writeln!(s, "values {}", p.len()).unwrap();
    for v in &p.values {
        writeln!(s, "{v}").unwrap();
    }
    s
}

fn parse_err(message: impl Into<String>) -> Error {
    Error::Parse {
        context: "parameter snapshot".into(),
        message: message.into(),
    }
}

/// Returns the kind line and the parameters.
pub fn from_text(text: &str) -> Result<(String, ParamSet)> {
    let mut lines = text.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| parse_err(format!("missing {what}")));
    if next("header")?.trim() != MAGIC {
        return Err(parse_err("bad header"));
    }
    let kind = next("kind")?
        .strip_prefix("kind ")
        .ok_or_else(|| parse_err("expected kind line"))?
        .to_string();
    let nblocks: usize = next("blocks")?
        .strip_prefix("blocks ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| parse_err("expected block count"))?;
    let mut p = ParamSet::new();
    for _ in 0..nblocks {
        let line = next("block shape")?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(format!("bad block line {line:?}")));
        }
        let rows = parts[1].parse().map_err(|_| parse_err("bad rows"))?;
        let cols = parts[2].parse().map_err(|_| parse_err("bad cols"))?;
        p.add_block(parts[0], rows, cols);
    }
    let total: usize = next("value count")?
        .strip_prefix("values ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| parse_err("expected value count"))?;
    if total != p.len() {
        return Err(parse_err(format!("declared {total} values, shapes need {}", p.len())));
    }
    for i in 0..total {
        let v: f64 = next("value")?
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad value at index {i}")))?;
        p.values[i] = v;
    }
    Ok((kind, p))
}

pub fn save(path: &Path, kind: &str, p: &ParamSet) -> Result<()> {
    std::fs::write(path, to_text(kind, p)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(String, ParamSet)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

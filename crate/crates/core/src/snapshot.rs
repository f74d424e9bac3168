//! Field snapshot files.
//!
//! Layout: one UTF-8 header line
//! `zmlim-field v1 d=<d> N=<N> name=<label> t=<time>\n`
//! followed by `N^d` little-endian IEEE-754 float64 samples, row-major.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::Grid;

const MAGIC: &str = "zmlim-field";
const VERSION: &str = "v1";

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub name: String,
    pub time: f64,
    pub field: ScalarField,
}

pub fn write_snapshot<W: Write>(mut w: W, name: &str, time: f64, field: &ScalarField) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
        return Err(Error::Format(format!("label must be non-empty without whitespace: {name:?}")));
    }
    let grid = field.grid();
    writeln!(w, "{MAGIC} {VERSION} d={} N={} name={name} t={time}", grid.dim(), grid.n())?;
    let mut buf = Vec::with_capacity(8 * grid.len());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot<R: BufRead>(mut r: R) -> Result<Snapshot> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let header = header
        .strip_suffix('\n')
        .ok_or_else(|| Error::Format("missing header newline".into()))?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) || parts.next() != Some(VERSION) {
        return Err(Error::Format(format!("bad magic/version in header {header:?}")));
    }
    let mut dim = None;
    let mut n = None;
    let mut name = None;
    let mut time = None;
    for p in parts {
        let (key, value) = p.split_once('=').ok_or_else(|| Error::Format(format!("bad token {p:?}")))?;
        let bad = |_| Error::Format(format!("bad value for {key}: {value:?}"));
        match key {
            "d" => dim = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "N" => n = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "name" => name = Some(value.to_string()),
            "t" => time = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(Error::Format(format!("unknown header key {key:?}"))),
        }
    }
    let missing = |k: &str| Error::Format(format!("header missing {k}"));
    let grid = Grid::new(dim.ok_or_else(|| missing("d"))?, n.ok_or_else(|| missing("N"))?)?;
    let mut bytes = vec![0u8; 8 * grid.len()];
    r.read_exact(&mut bytes).map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Snapshot {
        name: name.ok_or_else(|| missing("name"))?,
        time: time.ok_or_else(|| missing("t"))?,
        field: ScalarField::from_values(grid, values)?,
    })
}

//! Per-round traces and their CSV form.
//!
//! A trace file is one `#meta <json>` line, a header row, then one row per
//! record. Floats are written with 17 significant digits so that reading a
//! file back reproduces every value bit for bit; absent values are empty cells.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const COLUMNS: [&str; 9] = [
    "round",
    "f_gap",
    "dist_sq",
    "lyapunov",
    "scalars_sent",
    "K_used",
    "cost_cum",
    "comm_rounds",
    "alpha_summary",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Record {
    pub round: usize,
    pub f_gap: Option<f64>,
    pub dist_sq: Option<f64>,
    pub lyapunov: Option<f64>,
    /// Cumulative scalars transmitted by clients.
    pub scalars_sent: Option<u64>,
    pub k_used: Option<usize>,
    pub cost_cum: Option<f64>,
    pub comm_rounds: Option<u64>,
    pub alpha_summary: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub format_version: u32,
    pub algorithm: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Run constants worth keeping next to the data (stepsizes, rates, ...).
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
}

impl TraceMeta {
    pub fn new(algorithm: impl Into<String>, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            algorithm: algorithm.into(),
            config_hash: String::new(),
            seed,
            version: concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION")).to_string(),
            scalars: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<Record>,
}

fn fmt_f64(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(out, "{v:.16e}");
    }
}

fn fmt_int<T: std::fmt::Display>(out: &mut String, v: Option<T>) {
    if let Some(v) = v {
        let _ = write!(out, "{v}");
    }
}

impl Trace {
    pub fn new(meta: TraceMeta) -> Self {
        Self {
            meta,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    /// Rounds strictly increasing and `cost_cum` nondecreasing.
    pub fn validate(&self) -> Result<()> {
        for w in self.records.windows(2) {
            if w[1].round <= w[0].round {
                return Err(Error::Schema(format!(
                    "round {} follows round {}",
                    w[1].round, w[0].round
                )));
            }
            if let (Some(a), Some(b)) = (w[0].cost_cum, w[1].cost_cum) {
                if b < a {
                    return Err(Error::Schema(format!(
                        "cost_cum decreases at round {}",
                        w[1].round
                    )));
                }
            }
        }
        Ok(())
    }

    /// First record satisfying `pred`.
    pub fn first_where(&self, pred: impl Fn(&Record) -> bool) -> Option<&Record> {
        self.records.iter().find(|r| pred(r))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str("#meta ");
        out.push_str(&serde_json::to_string(&self.meta)?);
        out.push('\n');
        out.push_str(&COLUMNS.join(","));
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},", r.round);
            fmt_f64(&mut out, r.f_gap);
            out.push(',');
            fmt_f64(&mut out, r.dist_sq);
            out.push(',');
            fmt_f64(&mut out, r.lyapunov);
            out.push(',');
            fmt_int(&mut out, r.scalars_sent);
            out.push(',');
            fmt_int(&mut out, r.k_used);
            out.push(',');
            fmt_f64(&mut out, r.cost_cum);
            out.push(',');
            fmt_int(&mut out, r.comm_rounds);
            out.push(',');
            if let Some(s) = &r.alpha_summary {
                if s.contains([',', '\n']) {
                    return Err(Error::Schema("alpha_summary may not contain commas".into()));
                }
                out.push_str(s);
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        w.write_all(self.to_csv()?.as_bytes())?;
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let meta_line = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Schema("empty trace file".into()))?;
        let json = meta_line
            .strip_prefix("#meta ")
            .ok_or_else(|| Error::Schema("first line must be a `#meta` header".into()))?;
        let raw: serde_json::Value = serde_json::from_str(json)?;
        let found = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Schema("missing format_version".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::Version {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
        let meta: TraceMeta = serde_json::from_value(raw)?;
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Schema("missing header row".into()))?;
        let names: Vec<&str> = header.split(',').collect();
        let mut pos = [0usize; COLUMNS.len()];
        for (slot, col) in pos.iter_mut().zip(COLUMNS) {
            *slot = names
                .iter()
                .position(|n| *n == col)
                .ok_or_else(|| Error::Schema(format!("missing column `{col}`")))?;
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let row = n + 3;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != names.len() {
                return Err(Error::Schema(format!(
                    "line {row}: expected {} cells, found {} (truncated file?)",
                    names.len(),
                    cells.len()
                )));
            }
            let cell = |c: usize| cells[pos[c]];
            let f = |c: usize| -> Result<Option<f64>> {
                let s = cell(c);
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse().map(Some).map_err(|_| {
                    Error::Schema(format!("line {row}: bad `{}` value `{s}`", COLUMNS[c]))
                })
            };
            fn int<T: std::str::FromStr>(s: &str, row: usize, col: &str) -> Result<Option<T>> {
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::Schema(format!("line {row}: bad `{col}` value `{s}`")))
            }
            let round = int::<usize>(cell(0), row, COLUMNS[0])?
                .ok_or_else(|| Error::Schema(format!("line {row}: empty round")))?;
            records.push(Record {
                round,
                f_gap: f(1)?,
                dist_sq: f(2)?,
                lyapunov: f(3)?,
                scalars_sent: int(cell(4), row, COLUMNS[4])?,
                k_used: int(cell(5), row, COLUMNS[5])?,
                cost_cum: f(6)?,
                comm_rounds: int(cell(7), row, COLUMNS[7])?,
                alpha_summary: Some(cell(8)).filter(|s| !s.is_empty()).map(str::to_string),
            });
        }
        let trace = Trace { meta, records };
        trace.validate()?;
        Ok(trace)
    }
}

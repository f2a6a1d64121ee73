//! Binned delayed-coincidence counts and their CSV form.
//!
//! File layout: `# key=value` metadata rows (always including `kind` and
//! `upper_edge`), a `tau_s,counts` header, then one row per bin holding the
//! bin's left edge and its count. Floats are written in the shortest form
//! that parses back to the same bits, so files round-trip exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramKind {
    Cross,
    Auto,
}

impl fmt::Display for HistogramKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cross => "cross",
            Self::Auto => "auto",
        })
    }
}

impl FromStr for HistogramKind {
    type Err = HistogramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cross" => Ok(Self::Cross),
            "auto" => Ok(Self::Auto),
            other => Err(HistogramError::Kind(other.to_owned())),
        }
    }
}

#[derive(Debug, Error)]
pub enum HistogramError {
    #[error("need at least one bin (two edges)")]
    Empty,
    #[error("bin edges must be finite and strictly increasing (at index {0})")]
    Edges(usize),
    #[error("{counts} counts for {edges} edges; expected one fewer count than edges")]
    Length { counts: usize, edges: usize },
    #[error("unknown histogram kind `{0}` (expected `cross` or `auto`)")]
    Kind(String),
    #[error("metadata key `{0}` must be non-empty and free of `=`, `#` and line breaks")]
    MetaKey(String),
    #[error("metadata value for `{0}` must not contain line breaks")]
    MetaValue(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing `# {0}=` header row")]
    MissingKey(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Delayed-coincidence histogram: `counts[k]` falls in `[edges[k], edges[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    kind: HistogramKind,
    metadata: BTreeMap<String, String>,
}

pub(crate) fn check_edges(edges: &[f64]) -> Result<(), HistogramError> {
    if edges.len() < 2 {
        return Err(HistogramError::Empty);
    }
    if let Some(i) = edges.iter().position(|e| !e.is_finite()) {
        return Err(HistogramError::Edges(i));
    }
    if let Some(i) = edges.windows(2).position(|w| w[1] <= w[0]) {
        return Err(HistogramError::Edges(i + 1));
    }
    Ok(())
}

/// `n` equal bins from `lo` to `hi`.
pub fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let w = (hi - lo) / n as f64;
    (0..=n).map(|i| if i == n { hi } else { lo + i as f64 * w }).collect()
}

impl Histogram {
    pub fn new(edges: Vec<f64>, counts: Vec<u64>, kind: HistogramKind) -> Result<Self, HistogramError> {
        check_edges(&edges)?;
        if counts.len() + 1 != edges.len() {
            return Err(HistogramError::Length {
                counts: counts.len(),
                edges: edges.len(),
            });
        }
        Ok(Self {
            edges,
            counts,
            kind,
            metadata: BTreeMap::new(),
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn kind(&self) -> HistogramKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Adds or replaces a metadata entry. `kind` and `upper_edge` are
    /// structural and cannot be set this way.
    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) -> Result<(), HistogramError> {
        let key = key.into();
        let value = value.to_string();
        if key.is_empty()
            || key.contains(['=', '#', '\n', '\r'])
            || key.trim() != key
            || key == "kind"
            || key == "upper_edge"
        {
            return Err(HistogramError::MetaKey(key));
        }
        if value.contains(['\n', '\r']) {
            return Err(HistogramError::MetaValue(key));
        }
        self.metadata.insert(key, value);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), HistogramError> {
        writeln!(out, "# kind={}", self.kind)?;
        writeln!(out, "# upper_edge={}", self.edges[self.edges.len() - 1])?;
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "tau_s,counts")?;
        for (e, c) in self.edges.iter().zip(&self.counts) {
            writeln!(out, "{e},{c}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, HistogramError> {
        let mut kind = None;
        let mut upper = None;
        let mut metadata = BTreeMap::new();
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        let mut seen_header = false;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let parse_err = |message: String| HistogramError::Parse { line: lineno, message };
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                if seen_header {
                    return Err(parse_err("metadata row after the data header".into()));
                }
                let rest = rest.strip_prefix(' ').unwrap_or(rest);
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| parse_err(format!("metadata row `{trimmed}` lacks `=`")))?;
                match k {
                    "kind" => kind = Some(v.parse::<HistogramKind>()?),
                    "upper_edge" => {
                        upper = Some(
                            v.parse::<f64>()
                                .map_err(|e| parse_err(format!("upper_edge `{v}`: {e}")))?,
                        )
                    }
                    _ => {
                        metadata.insert(k.to_owned(), v.to_owned());
                    }
                }
                continue;
            }
            if !seen_header {
                if trimmed.trim() != "tau_s,counts" {
                    return Err(parse_err(format!("expected `tau_s,counts` header, found `{trimmed}`")));
                }
                seen_header = true;
                continue;
            }
            let (t, c) = trimmed
                .split_once(',')
                .ok_or_else(|| parse_err(format!("expected `tau_s,counts`, found `{trimmed}`")))?;
            edges.push(
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("tau `{t}`: {e}")))?,
            );
            counts.push(
                c.trim()
                    .parse::<u64>()
                    .map_err(|e| parse_err(format!("count `{c}`: {e}")))?,
            );
        }
        let kind = kind.ok_or(HistogramError::MissingKey("kind"))?;
        edges.push(upper.ok_or(HistogramError::MissingKey("upper_edge"))?);
        let mut h = Histogram::new(edges, counts, kind)?;
        h.metadata = metadata;
        Ok(h)
    }

    pub fn from_csv_str(s: &str) -> Result<Self, HistogramError> {
        Self::read_csv(s.as_bytes())
    }
}

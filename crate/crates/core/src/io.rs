//! On-disk formats for fields, masks, curves and verdicts.
//!
//! Formats are chosen so every artifact stays readable without committing to
//! any particular plotting or numerics stack:
//!
//! * **fields** — raw little-endian `f64` in flat node order (`<base>.f64`),
//!   a JSON sidecar with the grid and a SHA-256 digest (`<base>.json`), and a
//!   CSV mirror with node indices (`<base>.csv`);
//! * **masks** — plain-text PGM, magic `P2`, maxval 1, one value per cell
//!   (`<base>.pgm`), with the same kind of sidecar and CSV mirror; 2D rasters
//!   are written north-up (the last grid row first);
//! * **curves** — CSV with one header row (`save_curve`/`load_curve`);
//! * **verdicts** — JSON records naming the claim checked, a pass flag and a
//!   map of named metrics ([`Verdict`]).
//!
//! Every writer is deterministic: the same data produces the same bytes, so
//! reruns of a pipeline are byte-for-byte idempotent. Loaders verify the
//! digest before trusting payload bytes and fail with
//! [`Error::ChecksumMismatch`] on corruption, or [`Error::MalformedArtifact`]
//! when a file cannot be parsed at all.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::ShapeMask;
use crate::grid::{make_grid, GridSpec};

/// Lowercase hex SHA-256 of a byte slice.
fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Grid description plus payload digest stored next to a binary artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    dim: usize,
    counts: Vec<usize>,
    extents: Vec<f64>,
    sha256: String,
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".");
    p.push(ext);
    PathBuf::from(p)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

fn parse_sidecar(path: &Path) -> Result<Sidecar> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedArtifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn grid_from_sidecar(side: &Sidecar) -> Result<GridSpec> {
    make_grid(side.dim, &side.extents, &side.counts)
}

fn verify_digest(path: &Path, payload: &[u8], expected: &str) -> Result<()> {
    let found = sha256_hex(payload);
    if found != expected {
        return Err(Error::ChecksumMismatch {
            path: path.display().to_string(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// Writes `u` as `<base>.f64` (raw little-endian values in flat node order),
/// `<base>.json` (grid + digest) and `<base>.csv` (node indices + value).
/// Parent directories are created as needed.
pub fn save_field(u: &ScalarField, base: &Path) -> Result<()> {
    let grid = &u.grid;
    let mut bytes = Vec::with_capacity(8 * u.values.len());
    for &x in &u.values {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let bin_path = with_ext(base, "f64");
    create_parent(&bin_path)?;
    fs::write(&bin_path, &bytes)?;

    let side = Sidecar {
        dim: grid.dim,
        counts: grid.counts.clone(),
        extents: grid.extents.clone(),
        sha256: sha256_hex(&bytes),
    };
    write_json(&with_ext(base, "json"), &side)?;

    let mut csv = String::new();
    csv.push_str(if grid.dim == 1 { "i,value\n" } else { "i,j,value\n" });
    for (k, &x) in u.values.iter().enumerate() {
        let c = grid.node_coords(k);
        if grid.dim == 1 {
            csv.push_str(&format!("{},{x}\n", c[0]));
        } else {
            csv.push_str(&format!("{},{},{x}\n", c[0], c[1]));
        }
    }
    fs::write(with_ext(base, "csv"), csv)?;
    Ok(())
}

/// Reads a field written by [`save_field`], rebuilding the grid from the
/// sidecar and verifying the payload digest before accepting the values.
pub fn load_field(base: &Path) -> Result<ScalarField> {
    let side = parse_sidecar(&with_ext(base, "json"))?;
    let grid = grid_from_sidecar(&side)?;
    let bin_path = with_ext(base, "f64");
    let bytes = fs::read(&bin_path)?;
    verify_digest(&bin_path, &bytes, &side.sha256)?;
    if bytes.len() != 8 * grid.num_nodes() {
        return Err(Error::MalformedArtifact {
            path: bin_path.display().to_string(),
            reason: format!(
                "payload holds {} bytes but the grid has {} nodes ({} bytes expected)",
                bytes.len(),
                grid.num_nodes(),
                8 * grid.num_nodes()
            ),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ScalarField::new(&grid, values)
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Longest PGM data line, in values; 0/1 values two characters apart keep
/// lines within the format's 70-character recommendation.
const PGM_VALUES_PER_LINE: usize = 32;

/// Writes `mask` as `<base>.pgm` (P2, maxval 1, one value per cell, 2D
/// rasters north-up), `<base>.json` (grid + digest of the PGM bytes) and
/// `<base>.csv` (cell indices + 0/1).
pub fn save_mask(mask: &ShapeMask, base: &Path) -> Result<()> {
    let grid = &mask.grid;
    let (w, h) = if grid.dim == 1 {
        (grid.cells_along(0), 1)
    } else {
        (grid.cells_along(0), grid.cells_along(1))
    };
    let mut pgm = String::new();
    pgm.push_str("P2\n");
    pgm.push_str(&format!("{w} {h}\n1\n"));
    let mut line = 0usize;
    for row in 0..h {
        // North-up: the top raster row is the largest grid row.
        let j = h - 1 - row;
        for i in 0..w {
            let cell = if grid.dim == 1 {
                i
            } else {
                grid.cell_index(&[i, j])
            };
            pgm.push(if mask.cells[cell] { '1' } else { '0' });
            line += 1;
            if line == PGM_VALUES_PER_LINE {
                pgm.push('\n');
                line = 0;
            } else {
                pgm.push(' ');
            }
        }
    }
    if line != 0 {
        pgm.pop();
        pgm.push('\n');
    }
    let pgm_path = with_ext(base, "pgm");
    create_parent(&pgm_path)?;
    fs::write(&pgm_path, pgm.as_bytes())?;

    let side = Sidecar {
        dim: grid.dim,
        counts: grid.counts.clone(),
        extents: grid.extents.clone(),
        sha256: sha256_hex(pgm.as_bytes()),
    };
    write_json(&with_ext(base, "json"), &side)?;

    let mut csv = String::new();
    csv.push_str(if grid.dim == 1 { "i,inside\n" } else { "i,j,inside\n" });
    for (cell, &inside) in mask.cells.iter().enumerate() {
        let c = grid.cell_coords(cell);
        let flag = if inside { 1 } else { 0 };
        if grid.dim == 1 {
            csv.push_str(&format!("{},{flag}\n", c[0]));
        } else {
            csv.push_str(&format!("{},{},{flag}\n", c[0], c[1]));
        }
    }
    fs::write(with_ext(base, "csv"), csv)?;
    Ok(())
}

/// Reads a mask written by [`save_mask`], verifying the PGM digest and that
/// the raster dimensions match the sidecar grid.
pub fn load_mask(base: &Path) -> Result<ShapeMask> {
    let side = parse_sidecar(&with_ext(base, "json"))?;
    let grid = grid_from_sidecar(&side)?;
    let pgm_path = with_ext(base, "pgm");
    let bytes = fs::read(&pgm_path)?;
    verify_digest(&pgm_path, &bytes, &side.sha256)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::MalformedArtifact {
        path: pgm_path.display().to_string(),
        reason: format!("not valid UTF-8: {e}"),
    })?;
    let malformed = |reason: String| Error::MalformedArtifact {
        path: pgm_path.display().to_string(),
        reason,
    };
    // Token stream with PNM comments stripped.
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace().map(str::to_owned).collect::<Vec<_>>());
    let magic = tokens
        .next()
        .ok_or_else(|| malformed("empty file".to_string()))?;
    if magic != "P2" {
        return Err(malformed(format!("expected magic P2, found {magic}")));
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        let tok = tokens
            .next()
            .ok_or_else(|| malformed(format!("missing {what}")))?;
        tok.parse::<usize>()
            .map_err(|_| malformed(format!("{what} is not an integer: {tok}")))
    };
    let w = next_usize("width")?;
    let h = next_usize("height")?;
    let maxval = next_usize("maxval")?;
    if maxval != 1 {
        return Err(malformed(format!("expected maxval 1, found {maxval}")));
    }
    let (gw, gh) = if grid.dim == 1 {
        (grid.cells_along(0), 1)
    } else {
        (grid.cells_along(0), grid.cells_along(1))
    };
    if (w, h) != (gw, gh) {
        return Err(malformed(format!(
            "raster is {w} x {h} but the sidecar grid has {gw} x {gh} cells"
        )));
    }
    let mut cells = vec![false; grid.num_cells()];
    for row in 0..h {
        let j = h - 1 - row;
        for i in 0..w {
            let v = next_usize("pixel")?;
            if v > 1 {
                return Err(malformed(format!("pixel value {v} exceeds maxval 1")));
            }
            let cell = if grid.dim == 1 {
                i
            } else {
                grid.cell_index(&[i, j])
            };
            cells[cell] = v == 1;
        }
    }
    if tokens.next().is_some() {
        return Err(malformed("trailing data after the raster".to_string()));
    }
    ShapeMask::new(&grid, cells)
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

/// Writes a CSV with the given header row; every row must have exactly one
/// value per column. Values print in shortest round-trip form, so non-finite
/// entries appear as `inf`, `-inf` or `NaN` and parse back exactly.
pub fn save_curve(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if columns.is_empty() {
        return Err(Error::ConfigInvalid {
            key: "columns".to_string(),
            reason: "a curve needs at least one column".to_string(),
        });
    }
    for (k, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(Error::ConfigInvalid {
                key: "rows".to_string(),
                reason: format!(
                    "row {k} has {} values but there are {} columns",
                    row.len(),
                    columns.len()
                ),
            });
        }
    }
    let mut csv = String::new();
    csv.push_str(&columns.join(","));
    csv.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    create_parent(path)?;
    fs::write(path, csv)?;
    Ok(())
}

/// Reads a CSV written by [`save_curve`]; returns the header names and the
/// numeric rows.
pub fn load_curve(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_to_string(path)?;
    let malformed = |reason: String| Error::MalformedArtifact {
        path: path.display().to_string(),
        reason,
    };
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| malformed("empty file".to_string()))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(header.len());
        for cell in line.split(',') {
            row.push(
                cell.parse::<f64>()
                    .map_err(|_| malformed(format!("row {k} holds a non-number: {cell}")))?,
            );
        }
        if row.len() != header.len() {
            return Err(malformed(format!(
                "row {k} has {} values but the header has {} columns",
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

/// One named metric value. JSON has no non-finite numbers, so infinities and
/// NaN are stored as their display strings and parsed back on read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Finite(f64),
    Symbol(String),
}

impl From<f64> for MetricValue {
    fn from(x: f64) -> Self {
        if x.is_finite() {
            MetricValue::Finite(x)
        } else {
            MetricValue::Symbol(format!("{x}"))
        }
    }
}

impl MetricValue {
    /// Numeric view; symbols parse through `f64::from_str`, so `inf`,
    /// `-inf` and `NaN` come back as themselves and garbage becomes NaN.
    pub fn as_f64(&self) -> f64 {
        match self {
            MetricValue::Finite(x) => *x,
            MetricValue::Symbol(s) => s.parse().unwrap_or(f64::NAN),
        }
    }
}

/// Outcome of one diagnostic: which check ran, the mathematical claim it
/// tested, whether it held, and the measured numbers backing the verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    /// Short machine-friendly diagnostic name (also the artifact stem).
    pub name: String,
    /// The mathematical claim the check falsifies when it fails.
    pub claim: String,
    /// Whether the claim held on this instance.
    pub pass: bool,
    /// Named measurements; sorted keys keep serialization deterministic.
    pub metrics: BTreeMap<String, MetricValue>,
}

impl Verdict {
    /// Starts a verdict with no metrics.
    pub fn new(name: &str, claim: &str, pass: bool) -> Self {
        Verdict {
            name: name.to_string(),
            claim: claim.to_string(),
            pass,
            metrics: BTreeMap::new(),
        }
    }

    /// Adds one named metric (builder style).
    pub fn with_metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.to_string(), MetricValue::from(value));
        self
    }

    /// Numeric value of a metric, when present.
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).map(MetricValue::as_f64)
    }
}

/// Writes one verdict as pretty JSON.
pub fn save_verdict(verdict: &Verdict, path: &Path) -> Result<()> {
    write_json(path, verdict)
}

/// Reads a verdict written by [`save_verdict`].
pub fn load_verdict(path: &Path) -> Result<Verdict> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedArtifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

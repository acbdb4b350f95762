//! File formats: signal CSV with a TOML sidecar, electrode CSV, and the
//! binary operator cache.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::sigproc::SignalBlock;
use crate::{Error, Result, Vec3};

/// Metadata stored next to a signal CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSidecar {
    pub sample_rate: f64,
    pub excluded: Vec<String>,
    pub provenance: BTreeMap<String, String>,
}

/// `foo.csv` → `foo.toml`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("toml")
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `t,<ids...>` rows and the sidecar.
pub fn write_signal_csv(path: &Path, s: &SignalBlock, provenance: &BTreeMap<String, String>) -> Result<()> {
    s.validate()?;
    let mut out = String::with_capacity(s.n_samples() * (s.n_electrodes() + 1) * 12);
    out.push('t');
    for id in &s.electrode_ids {
        if id.contains(',') || id.contains('\n') {
            return Err(Error::InvalidInput(format!("electrode id {id:?} contains a separator")));
        }
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for k in 0..s.n_samples() {
        out.push_str(&format!("{}", s.time(k)));
        for i in 0..s.n_electrodes() {
            out.push_str(&format!(",{:e}", s.samples[(i, k)]));
        }
        out.push('\n');
    }
    write_text(path, &out)?;
    let sidecar = SignalSidecar {
        sample_rate: s.sample_rate,
        excluded: (0..s.n_electrodes())
            .filter(|&i| s.excluded[i])
            .map(|i| s.electrode_ids[i].clone())
            .collect(),
        provenance: provenance.clone(),
    };
    let text = toml::to_string_pretty(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&sidecar_path(path), &text)
}

/// Reads a signal CSV. The sample rate comes from the sidecar when present,
/// otherwise from the time column.
pub fn read_signal_csv(path: &Path) -> Result<SignalBlock> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let mut cols = header.split(',');
    if cols.next().map(str::trim) != Some("t") {
        return Err(parse_err(path, 1, "first column must be `t`"));
    }
    let ids: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
    if ids.is_empty() {
        return Err(parse_err(path, 1, "no electrode columns"));
    }
    let mut times = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ids.len() + 1 {
            return Err(parse_err(
                path,
                ln + 1,
                format!("expected {} fields, found {}", ids.len() + 1, fields.len()),
            ));
        }
        for (c, f) in fields.iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(path, ln + 1, format!("column {}: not a number: {f:?}", c + 1)))?;
            if c == 0 {
                if let Some(&prev) = times.last() {
                    if !(v > prev) {
                        return Err(parse_err(path, ln + 1, "time column is not increasing"));
                    }
                }
                times.push(v);
            } else {
                data.push(v);
            }
        }
    }
    if times.len() < 2 {
        return Err(parse_err(path, 2, "need at least two samples"));
    }
    let sidecar_file = sidecar_path(path);
    let sidecar: Option<SignalSidecar> = if sidecar_file.exists() {
        let t = read_text(&sidecar_file)?;
        Some(toml::from_str(&t).map_err(|e| Error::Config(format!("{}: {e}", sidecar_file.display())))?)
    } else {
        None
    };
    let rate = match &sidecar {
        Some(s) if s.sample_rate > 0.0 => s.sample_rate,
        _ => (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]),
    };
    let samples = DMatrix::from_row_slice(times.len(), ids.len(), &data).transpose();
    let mut block = SignalBlock::new(samples, rate, ids)?;
    block.time_zero = times[0];
    if let Some(s) = sidecar {
        for id in &s.excluded {
            let i = block
                .electrode_ids
                .iter()
                .position(|e| e == id)
                .ok_or_else(|| Error::Config(format!("excluded electrode {id:?} is not a column")))?;
            block.excluded[i] = true;
        }
    }
    Ok(block)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Electrode {
    pub id: String,
    pub position: Vec3,
}

pub fn write_electrodes_csv(path: &Path, electrodes: &[Electrode]) -> Result<()> {
    let mut out = String::from("id,x,y,z\n");
    for e in electrodes {
        out.push_str(&format!("{},{},{},{}\n", e.id, e.position.x, e.position.y, e.position.z));
    }
    write_text(path, &out)
}

pub fn read_electrodes_csv(path: &Path) -> Result<Vec<Electrode>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id,x,y,z" => {}
        _ => return Err(parse_err(path, 1, "header must be `id,x,y,z`")),
    }
    let mut out = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(parse_err(path, ln + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_err(path, ln + 1, format!("not a number: {s:?}")))
        };
        out.push(Electrode {
            id: f[0].to_string(),
            position: Vec3::new(num(f[1])?, num(f[2])?, num(f[3])?),
        });
    }
    Ok(out)
}

const CACHE_MAGIC: &[u8; 8] = b"VECGIOP1";

/// Self-describing header of a cached transfer matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheHeader {
    /// `epicardial` or `volumetric`.
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    /// Content hash per input (mesh, torso, heart, conductivity, ...).
    pub hashes: BTreeMap<String, String>,
    /// Columns centred over electrodes.
    pub centred: bool,
    /// Free-form flags (gauge, quadrature).
    #[serde(default)]
    pub flags: BTreeMap<String, String>,
    pub has_constraint: bool,
    pub electrodes: Vec<usize>,
    pub heart_nodes: Vec<usize>,
}

/// Writes magic, header length, TOML header, then little-endian f64 data in
/// row-major order, then the constraint row when present.
pub fn write_operator_cache(
    path: &Path,
    header: &CacheHeader,
    matrix: &DMatrix<f64>,
    constraint: Option<&DVector<f64>>,
) -> Result<()> {
    if (header.rows, header.cols) != matrix.shape() {
        return Err(Error::Dimension {
            context: "cache header vs matrix rows",
            expected: header.rows,
            found: matrix.nrows(),
        });
    }
    if header.has_constraint != constraint.is_some() {
        return Err(Error::InvalidInput("cache constraint flag disagrees with data".into()));
    }
    let text = toml::to_string(header).map_err(|e| Error::Config(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + text.len() + 8 * matrix.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(text.len() as u64).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            buf.extend_from_slice(&matrix[(i, j)].to_le_bytes());
        }
    }
    if let Some(m) = constraint {
        if m.len() != header.cols {
            return Err(Error::Dimension {
                context: "cache constraint length",
                expected: header.cols,
                found: m.len(),
            });
        }
        for v in m.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedOperator {
    pub header: CacheHeader,
    pub matrix: DMatrix<f64>,
    pub constraint: Option<DVector<f64>>,
}

/// Reads a cache file, refusing it when any expected hash differs.
pub fn read_operator_cache(path: &Path, expected: &BTreeMap<String, String>) -> Result<CachedOperator> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::InvalidInput(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CACHE_MAGIC {
        return Err(bad("not an operator cache file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let text = std::str::from_utf8(&bytes[16..body]).map_err(|_| bad("header is not UTF-8"))?;
    let header: CacheHeader = toml::from_str(text).map_err(|e| bad(&format!("bad header: {e}")))?;
    for (key, want) in expected {
        match header.hashes.get(key) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(bad(&format!("{key} hash mismatch (cache {got:.12}…, expected {want:.12}…); rebuild the operator")))
            }
            None => return Err(bad(&format!("cache has no {key} hash"))),
        }
    }
    let n = header.rows * header.cols;
    let extra = if header.has_constraint { header.cols } else { 0 };
    if bytes.len() != body + 8 * (n + extra) {
        return Err(bad("data length does not match header dimensions"));
    }
    let value = |k: usize| f64::from_le_bytes(bytes[body + 8 * k..body + 8 * k + 8].try_into().expect("8 bytes"));
    let matrix = DMatrix::from_fn(header.rows, header.cols, |i, j| value(i * header.cols + j));
    let constraint = header
        .has_constraint
        .then(|| DVector::from_fn(header.cols, |j, _| value(n + j)));
    Ok(CachedOperator {
        header,
        matrix,
        constraint,
    })
}

//! Persistence for datasets, normal systems, and estimates.
//!
//! The binary dataset container is `"IKDS"`, a little-endian `u32` version,
//! `u64` values `M`, `N`, `d`, then `X` and `Y` as row-major little-endian
//! `f64`. The configuration travels in a JSON sidecar next to it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimateResult, NormalSystem};
use crate::kernels::RadialKernel;
use crate::sim::{Dataset, SystemConfig};

pub const MAGIC: &[u8; 4] = b"IKDS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 3 * 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub config: SystemConfig,
    pub truth: Option<RadialKernel>,
}

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for v in [dataset.n_samples(), dataset.n_particles(), dataset.dim()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for v in dataset.x().iter().chain(dataset.y()) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let sidecar = DatasetSidecar {
        config: dataset.config.clone(),
        truth: dataset.truth.clone(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Parse {
            offset,
            message: format!("truncated while reading {what}"),
        },
        _ => Error::Io(e),
    })
}

/// Reads the binary container and its sidecar; the sidecar must agree with
/// the dimensions in the header.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_at(&mut r, &mut magic, 0, "magic bytes")?;
    if &magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic bytes {magic:?}"),
        });
    }
    let mut word = [0u8; 4];
    read_exact_at(&mut r, &mut word, 4, "version")?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let mut dims = [0u64; 3];
    for (k, d) in dims.iter_mut().enumerate() {
        let mut b = [0u8; 8];
        read_exact_at(&mut r, &mut b, 8 + 8 * k as u64, "dimensions")?;
        *d = u64::from_le_bytes(b);
    }
    let [m, n, d] = dims;
    let len = m
        .checked_mul(n)
        .and_then(|v| v.checked_mul(d))
        .filter(|&v| v <= (usize::MAX / 16) as u64)
        .ok_or_else(|| Error::Parse {
            offset: 8,
            message: format!("implausible dimensions M={m}, N={n}, d={d}"),
        })? as usize;
    let mut read_block = |start: u64| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for k in 0..len {
            read_exact_at(&mut r, &mut b, start + 8 * k as u64, "array data")?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    };
    let x = read_block(HEADER_LEN)?;
    let y = read_block(HEADER_LEN + 8 * len as u64)?;
    let sidecar: DatasetSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let c = &sidecar.config;
    if (c.n_samples as u64, c.n_particles as u64, c.dim as u64) != (m, n, d) {
        return Err(Error::Config(format!(
            "sidecar dimensions ({}, {}, {}) disagree with binary header ({m}, {n}, {d})",
            c.n_samples, c.n_particles, c.dim
        )));
    }
    Dataset::from_parts(sidecar.config, sidecar.truth, x, y)
}

/// One row per coordinate: `(m, i, coordinate, x, y)`.
pub fn export_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["m", "i", "coordinate", "x", "y"])?;
    let (n, d) = (dataset.n_particles(), dataset.dim());
    for m in 0..dataset.n_samples() {
        let (x, y) = (dataset.positions(m), dataset.observations(m));
        for i in 0..n {
            for c in 0..d {
                let k = i * d + c;
                w.write_record([
                    m.to_string(),
                    i.to_string(),
                    c.to_string(),
                    x[k].to_string(),
                    y[k].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalSystemHeader {
    pub n: usize,
    #[serde(rename = "M")]
    pub n_samples: usize,
    #[serde(rename = "N")]
    pub n_particles: usize,
    pub lambda_min: f64,
    pub basis_id: String,
    pub checksum: String,
    /// Entries with this column index hold `b`.
    pub rhs_column: usize,
}

/// Writes `(row, col, value)` for `A`, with `b` stored in column `n`, and
/// the header to `<path>.json`.
pub fn export_normal_system(system: &NormalSystem, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", "value"])?;
    let n = system.n;
    for i in 0..n {
        for j in 0..n {
            w.write_record([i.to_string(), j.to_string(), system.a[(i, j)].to_string()])?;
        }
        w.write_record([i.to_string(), n.to_string(), system.b[i].to_string()])?;
    }
    w.flush()?;
    let header = NormalSystemHeader {
        n,
        n_samples: system.n_samples,
        n_particles: system.n_particles,
        lambda_min: system.lambda_min,
        basis_id: system.basis_id.clone(),
        checksum: system.checksum.clone(),
        rhs_column: n,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_normal_system(path: &Path) -> Result<NormalSystem> {
    let header: NormalSystemHeader =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let n = header.n;
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    for rec in rdr.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let parse_err = |message: String| Error::Parse { offset, message };
        let field = |k: usize| rec.get(k).ok_or_else(|| parse_err(format!("missing field {k}")));
        let i: usize = field(0)?.parse().map_err(|e| parse_err(format!("row: {e}")))?;
        let j: usize = field(1)?.parse().map_err(|e| parse_err(format!("col: {e}")))?;
        let v: f64 = field(2)?.parse().map_err(|e| parse_err(format!("value: {e}")))?;
        if i >= n || j > n {
            return Err(parse_err(format!("entry ({i}, {j}) outside an {n}x{n} system")));
        }
        if j == n {
            b[i] = v;
        } else {
            a[(i, j)] = v;
        }
    }
    let system = NormalSystem::from_parts(a, b, header.n_samples, header.n_particles, header.basis_id)?;
    if system.checksum != header.checksum {
        return Err(Error::Contract(format!(
            "checksum mismatch: header {}, data {}",
            header.checksum, system.checksum
        )));
    }
    Ok(system)
}

pub fn export_estimate(result: &EstimateResult, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(result)?)?;
    Ok(())
}

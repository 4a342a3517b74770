//! Output tables. Every CSV starts with a `#manifest` comment row carrying the
//! config hash, seed, and version so the run can be replayed.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Manifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            config_hash,
            seed,
            version: VERSION.to_string(),
        }
    }

    pub fn row(&self) -> String {
        format!(
            "#manifest,config_hash={},seed={},version={}",
            self.config_hash, self.seed, self.version
        )
    }
}

/// Output directory plus the manifest stamped into each table.
#[derive(Debug, Clone)]
pub struct Sink {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Sink {
    pub fn new(dir: impl Into<PathBuf>, manifest: Manifest) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, manifest })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a CSV with the manifest row, a header, and `rows`.
    pub fn csv<R: AsRef<[String]>>(&self, name: &str, header: &[&str], rows: &[R]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.manifest.row())?;
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r.as_ref())?;
            }
            w.flush()?;
        }
        std::fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        #[derive(Serialize)]
        struct Stamped<'a, T> {
            manifest: &'a Manifest,
            #[serde(flatten)]
            body: &'a T,
        }
        let text = serde_json::to_string_pretty(&Stamped {
            manifest: &self.manifest,
            body: value,
        })?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Reads a CSV written by [`Sink::csv`], skipping the manifest row.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Shortest round-trip formatting, identical across runs.
pub fn f(v: f64) -> String {
    v.to_string()
}

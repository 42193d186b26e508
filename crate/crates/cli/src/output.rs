use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ridechain::io::{fmt_f64, write_rows};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::{Command, Format};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Cell {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Cell {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Cell {
        Cell::Float(v)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Cell {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Cell {
        Cell::Text(v.to_string())
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Int(v) => (*v).into(),
            Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into),
            Cell::Text(s) => s.clone().into(),
        }
    }
}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Table {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::output::Cell::from($x)),*] };
}

/// Collects the files a command writes so the manifest can list them.
pub struct Outputs {
    dir: PathBuf,
    format: Format,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path, format: Format) -> Result<Outputs> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
        })
    }

    /// Writes `stem.csv` or `stem.json` depending on the format.
    pub fn table(&mut self, stem: &str, table: &Table) -> Result<()> {
        match self.format {
            Format::Csv => {
                let mut buf = Vec::new();
                write_rows(
                    &mut buf,
                    &table.header,
                    table.rows.iter().map(|r| r.iter().map(Cell::csv).collect::<Vec<_>>()),
                )?;
                self.raw(&format!("{stem}.csv"), &buf)
            }
            Format::Json => {
                let rows: Vec<serde_json::Map<String, serde_json::Value>> = table
                    .rows
                    .iter()
                    .map(|r| table.header.iter().map(|h| h.to_string()).zip(r.iter().map(Cell::json)).collect())
                    .collect();
                self.json(&format!("{stem}.json"), &rows)
            }
        }
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.raw(name, text.as_bytes())
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(bytes)?;
        if !self.files.iter().any(|x| x == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    /// Writes `manifest.json` describing the run.
    pub fn finish(self, command: &Command, inputs: Vec<FileDigest>) -> Result<Manifest> {
        let mut outputs = Vec::new();
        let mut files = self.files.clone();
        files.sort();
        for name in files {
            outputs.push(FileDigest {
                path: name.clone(),
                sha256: digest_file(&self.dir.join(&name))?,
            });
        }
        let manifest = Manifest {
            tool: "ridechain".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.clone(),
            inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(manifest)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run; no timestamps or thread counts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn input_digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: digest_file(path)?,
    })
}

//! Artifacts, hashes and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kamlab::torus::{NodeId, TorusGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputFile>,
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub stages: Vec<StageRecord>,
    pub certificates: Vec<Certificate>,
}

impl RunManifest {
    pub fn failed_certificates(&self) -> Vec<&Certificate> {
        self.certificates.iter().filter(|c| !c.passed).collect()
    }

    pub fn failed_stages(&self) -> Vec<&StageRecord> {
        self.stages.iter().filter(|s| s.status == StageStatus::Failed).collect()
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("malformed manifest {}: {e}", path.display())))
    }

    /// Write to a temporary sibling, then rename over the target.
    pub fn write_atomic(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        let tmp = dir.join(format!(".{MANIFEST}.tmp"));
        let target = dir.join(MANIFEST);
        fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| CliError::io(&target, e))?;
        Ok(target)
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Collects the files one stage writes under the output directory.
pub struct Artifacts<'a> {
    dir: &'a Path,
    pub files: Vec<OutputFile>,
}

impl<'a> Artifacts<'a> {
    pub fn new(dir: &'a Path) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(OutputFile { path: name.to_string(), sha256: hex::encode(Sha256::digest(bytes)) });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        self.write(name, table.text.as_bytes())
    }
}

/// CSV text built row by row; floats use the shortest round-trip form.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[String]) -> Self {
        Self { text: header.join(",") + "\n" }
    }

    pub fn row(&mut self, cells: &[f64]) {
        let mut first = true;
        for c in cells {
            if !first {
                self.text.push(',');
            }
            first = false;
            write!(self.text, "{c}").unwrap();
        }
        self.text.push('\n');
    }
}

/// Coordinate column names for a node, e.g. `x` or `x1,x2`.
pub fn coordinate_header(grid: &TorusGrid, prefix: &str) -> Vec<String> {
    if grid.dim() == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=grid.dim()).map(|k| format!("{prefix}{k}")).collect()
    }
}

pub fn coordinates(grid: &TorusGrid, node: NodeId) -> Vec<f64> {
    grid.coordinate(node)[..grid.dim()].to_vec()
}

/// One row per node: coordinates followed by each column's value.
pub fn field_table(grid: &TorusGrid, columns: &[(&str, &[f64])]) -> Table {
    let mut header = coordinate_header(grid, "x");
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    let mut table = Table::new(&header);
    for node in grid.nodes() {
        let mut row = coordinates(grid, node);
        row.extend(columns.iter().map(|(_, values)| values[node]));
        table.row(&row);
    }
    table
}

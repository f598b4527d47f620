use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use skytrack::io::IoError;

use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    /// Relative to the output directory when inside it.
    pub path: String,
    pub sha256: String,
}

/// Machine-readable record of one stage run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub parameters: toml::Table,
    pub results: toml::Table,
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let read_err = |source| PipelineError::Read {
        path: path.to_path_buf(),
        source: IoError::Io(source),
    };
    let mut f = std::fs::File::open(path).map_err(read_err)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(read_err)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn digest(path: &Path, out: &Path) -> Result<FileDigest, PipelineError> {
    Ok(FileDigest {
        path: path.strip_prefix(out).unwrap_or(path).display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// Serializes a value that maps to a TOML table.
pub(crate) fn table<T: Serialize>(value: &T) -> toml::Table {
    match toml::Table::try_from(value) {
        Ok(t) => t,
        Err(e) => panic!("stage record is not a TOML table: {e}"),
    }
}

pub(crate) struct SummaryBuilder {
    stage: &'static str,
    seed: u64,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    parameters: toml::Table,
}

impl SummaryBuilder {
    pub fn new(stage: &'static str, seed: u64, out: &Path) -> Self {
        Self {
            stage,
            seed,
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            parameters: toml::Table::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn parameters<T: Serialize>(&mut self, value: &T) {
        self.parameters = table(value);
    }

    /// Hashes the files and writes `<stage>_summary.toml`.
    pub fn finish(self, results: toml::Table) -> Result<StageSummary, PipelineError> {
        let summary = StageSummary {
            stage: self.stage.to_string(),
            seed: self.seed,
            inputs: self
                .inputs
                .iter()
                .map(|p| digest(p, &self.out))
                .collect::<Result<_, _>>()?,
            outputs: self
                .outputs
                .iter()
                .map(|p| digest(p, &self.out))
                .collect::<Result<_, _>>()?,
            parameters: self.parameters,
            results,
        };
        let path = self.out.join(format!("{}_summary.toml", self.stage.replace('-', "_")));
        let text = toml::to_string(&summary).map_err(|e| PipelineError::Stage {
            stage: self.stage,
            message: format!("cannot serialize summary: {e}"),
        })?;
        std::fs::write(&path, text).map_err(|source| PipelineError::Write {
            path,
            source: IoError::Io(source),
        })?;
        Ok(summary)
    }
}

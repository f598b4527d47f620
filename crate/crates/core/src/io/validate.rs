//! Plausibility checks over directories of trajectory files.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{open, read_trajectories_numbered, IoError};
use crate::tracker::TrajectoryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    /// m/s
    pub max_speed: f64,
    /// m/s²
    pub max_acceleration: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            max_speed: 70.0,
            max_acceleration: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FindingKind {
    /// The file could not be parsed; nothing after the error was checked.
    Schema(String),
    /// Same (frame_id, track_id) on two lines.
    Duplicate {
        frame: u64,
        track_id: u64,
    },
    /// A track's frame id does not exceed the one on its previous line.
    NonMonotone {
        track_id: u64,
        previous: u64,
        found: u64,
    },
    /// Speed, either reported or implied by consecutive positions.
    Speed {
        track_id: u64,
        value: f64,
    },
    Acceleration {
        track_id: u64,
        value: f64,
    },
    /// Header frame rate is not positive.
    BadRate(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    /// 1-based line, 0 when the finding concerns the whole file.
    pub line: usize,
    /// The other line involved, for duplicates and jumps.
    pub other_line: Option<usize>,
    pub kind: FindingKind,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}", self.line)?;
        if let Some(o) = self.other_line {
            write!(f, " (and line {o})")?;
        }
        match &self.kind {
            FindingKind::Schema(m) => write!(f, ": schema error: {m}"),
            FindingKind::Duplicate { frame, track_id } => {
                write!(f, ": duplicate record for frame {frame}, track {track_id}")
            }
            FindingKind::NonMonotone {
                track_id,
                previous,
                found,
            } => {
                write!(f, ": track {track_id} goes from frame {previous} back to {found}")
            }
            FindingKind::Speed { track_id, value } => write!(f, ": track {track_id} speed {value:.3} m/s"),
            FindingKind::Acceleration { track_id, value } => {
                write!(f, ": track {track_id} acceleration {value:.3} m/s²")
            }
            FindingKind::BadRate(r) => write!(f, ": frame rate {r} is not positive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileReport {
    pub path: PathBuf,
    pub records: usize,
    pub tracks: usize,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetReport {
    pub files: Vec<FileReport>,
}

impl DatasetReport {
    pub fn finding_count(&self) -> usize {
        self.files.iter().map(|f| f.findings.len()).sum()
    }

    pub fn is_clean(&self) -> bool {
        self.finding_count() == 0
    }
}

/// Checks the records of one file. `records` carries each record's line.
pub fn validate_trajectories(
    records: &[(usize, TrajectoryRecord)],
    rate_hz: f64,
    cfg: &ValidationConfig,
) -> Vec<Finding> {
    let mut findings = Vec::new();
    if !(rate_hz > 0.0) {
        findings.push(Finding {
            line: 0,
            other_line: None,
            kind: FindingKind::BadRate(rate_hz),
        });
    }
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    let mut last: HashMap<u64, (usize, TrajectoryRecord)> = HashMap::new();
    for (line, r) in records {
        if let Some(&first) = seen.get(&(r.frame_index, r.track_id)) {
            findings.push(Finding {
                line: *line,
                other_line: Some(first),
                kind: FindingKind::Duplicate {
                    frame: r.frame_index,
                    track_id: r.track_id,
                },
            });
            continue;
        }
        seen.insert((r.frame_index, r.track_id), *line);

        let speed = r.velocity.norm();
        if !(speed < cfg.max_speed) {
            findings.push(Finding {
                line: *line,
                other_line: None,
                kind: FindingKind::Speed {
                    track_id: r.track_id,
                    value: speed,
                },
            });
        }
        let acc = r.acceleration.norm();
        if !(acc < cfg.max_acceleration) {
            findings.push(Finding {
                line: *line,
                other_line: None,
                kind: FindingKind::Acceleration {
                    track_id: r.track_id,
                    value: acc,
                },
            });
        }
        if let Some((prev_line, prev)) = last.get(&r.track_id) {
            if r.frame_index <= prev.frame_index {
                findings.push(Finding {
                    line: *line,
                    other_line: Some(*prev_line),
                    kind: FindingKind::NonMonotone {
                        track_id: r.track_id,
                        previous: prev.frame_index,
                        found: r.frame_index,
                    },
                });
                continue;
            }
            if rate_hz > 0.0 {
                let dt = (r.frame_index - prev.frame_index) as f64 / rate_hz;
                let implied = (r.position - prev.position).norm() / dt;
                if !(implied < cfg.max_speed) {
                    findings.push(Finding {
                        line: *line,
                        other_line: Some(*prev_line),
                        kind: FindingKind::Speed {
                            track_id: r.track_id,
                            value: implied,
                        },
                    });
                }
            }
        }
        last.insert(r.track_id, (*line, *r));
    }
    findings
}

fn validate_file(path: &Path, cfg: &ValidationConfig) -> FileReport {
    let parsed = open(path).and_then(read_trajectories_numbered);
    match parsed {
        Ok((header, records)) => {
            let tracks: BTreeMap<u64, ()> = records.iter().map(|(_, r)| (r.track_id, ())).collect();
            FileReport {
                path: path.to_path_buf(),
                records: records.len(),
                tracks: tracks.len(),
                findings: validate_trajectories(&records, header.rate_hz, cfg),
            }
        }
        Err(e) => FileReport {
            path: path.to_path_buf(),
            records: 0,
            tracks: 0,
            findings: vec![Finding {
                line: e.line().unwrap_or(0),
                other_line: None,
                kind: FindingKind::Schema(e.to_string()),
            }],
        },
    }
}

/// Validates every regular file in `dir` (not recursive), in name order.
/// Only listing the directory itself can fail.
pub fn validate_dataset(dir: &Path, cfg: &ValidationConfig) -> Result<DatasetReport, IoError> {
    let entries = std::fs::read_dir(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::new();
    for e in entries {
        let e = e.map_err(|source| IoError::File {
            path: dir.to_path_buf(),
            source,
        })?;
        if e.file_type().map(|t| t.is_file()).unwrap_or(false) {
            paths.push(e.path());
        }
    }
    paths.sort();
    Ok(DatasetReport {
        files: paths.iter().map(|p| validate_file(p, cfg)).collect(),
    })
}

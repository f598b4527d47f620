//! File formats.
//!
//! Every file is UTF-8 text: a `#`-prefixed header block naming the schema,
//! format version, recording id, frame rate and local frame, followed by one
//! or more tab-separated tables. Multi-table files introduce each table with
//! a `[name]` line. Meters are written with 6 decimals, radians and degrees
//! with 9, unitless spline parameters with 12. Writers are deterministic.

mod schemas;
mod validate;

pub use schemas::*;
pub use validate::{
    validate_dataset, validate_trajectories, DatasetReport, FileReport, Finding, FindingKind, ValidationConfig,
};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::category::Category;
use crate::geodesy::{LocalFrame, UtmZone};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "skytrack";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown category '{value}'")]
    UnknownCategory { line: usize, value: String },
    #[error("line 1: unsupported format version {found}, expected {FORMAT_VERSION}")]
    UnknownVersion { found: u32 },
    #[error("line 1: expected a {expected} file, found '{found}'")]
    WrongKind { expected: &'static str, found: String },
}

impl IoError {
    /// Line the error refers to, when it comes from parsing.
    pub fn line(&self) -> Option<usize> {
        match self {
            IoError::Malformed { line, .. } | IoError::UnknownCategory { line, .. } => Some(*line),
            IoError::UnknownVersion { .. } | IoError::WrongKind { .. } => Some(1),
            _ => None,
        }
    }
}

fn malformed(line: usize, message: impl Into<String>) -> IoError {
    IoError::Malformed {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileHeader {
    pub version: u32,
    pub recording_id: String,
    pub rate_hz: f64,
    pub local_frame: LocalFrame,
}

impl FileHeader {
    pub fn new(recording_id: impl Into<String>, rate_hz: f64, local_frame: LocalFrame) -> Self {
        Self {
            version: FORMAT_VERSION,
            recording_id: recording_id.into(),
            rate_hz,
            local_frame,
        }
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn m(x: f64) -> String {
    format!("{x:.6}")
}

pub(crate) fn rad(x: f64) -> String {
    format!("{x:.9}")
}

pub(crate) fn unit(x: f64) -> String {
    format!("{x:.12}")
}

pub(crate) fn opt_m(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), m)
}

pub(crate) fn write_header<W: Write>(w: &mut W, kind: &str, h: &FileHeader, notes: &[&str]) -> Result<(), IoError> {
    if h.recording_id.contains(['\t', '\n', '\r']) {
        return Err(malformed(0, "recording id must not contain tabs or newlines"));
    }
    let f = &h.local_frame;
    writeln!(w, "# {MAGIC} {kind} {}", h.version)?;
    writeln!(w, "# recording_id\t{}", h.recording_id)?;
    writeln!(w, "# rate_hz\t{}", m(h.rate_hz))?;
    writeln!(
        w,
        "# utm_zone\t{}{}",
        f.zone.number,
        if f.zone.north { 'N' } else { 'S' }
    )?;
    writeln!(
        w,
        "# origin\t{}\t{}\t{}",
        m(f.origin_easting),
        m(f.origin_northing),
        m(f.origin_altitude)
    )?;
    for n in notes {
        writeln!(w, "# {n}")?;
    }
    Ok(())
}

pub(crate) fn write_columns<W: Write>(w: &mut W, columns: &[&str]) -> Result<(), IoError> {
    writeln!(w, "{}", columns.join("\t"))?;
    Ok(())
}

pub(crate) fn write_row<W: Write>(w: &mut W, fields: &[String]) -> Result<(), IoError> {
    writeln!(w, "{}", fields.join("\t"))?;
    Ok(())
}

pub(crate) struct Section {
    pub name: Option<String>,
    pub columns: Vec<String>,
    pub column_line: usize,
    pub rows: Vec<(usize, String)>,
}

impl Section {
    pub fn expect_columns(&self, expected: &[&str]) -> Result<(), IoError> {
        if self.columns.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(malformed(
                self.column_line,
                format!(
                    "expected columns '{}', found '{}'",
                    expected.join(" "),
                    self.columns.join(" ")
                ),
            ));
        }
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = Result<Row<'_>, IoError>> {
        self.rows.iter().map(|(line, text)| {
            let fields: Vec<&str> = text.split('\t').collect();
            if fields.len() != self.columns.len() {
                return Err(malformed(
                    *line,
                    format!("expected {} fields, found {}", self.columns.len(), fields.len()),
                ));
            }
            Ok(Row {
                line: *line,
                fields,
                columns: &self.columns,
            })
        })
    }
}

pub(crate) struct Row<'a> {
    pub line: usize,
    fields: Vec<&'a str>,
    columns: &'a [String],
}

impl Row<'_> {
    fn bad(&self, i: usize, what: &str) -> IoError {
        malformed(
            self.line,
            format!(
                "column '{}': cannot parse '{}' as {what}",
                self.columns[i], self.fields[i]
            ),
        )
    }

    pub fn str(&self, i: usize) -> &str {
        self.fields[i]
    }

    pub fn f64(&self, i: usize) -> Result<f64, IoError> {
        self.fields[i].parse().map_err(|_| self.bad(i, "a number"))
    }

    pub fn opt_f64(&self, i: usize) -> Result<Option<f64>, IoError> {
        if self.fields[i] == "-" {
            Ok(None)
        } else {
            self.f64(i).map(Some)
        }
    }

    pub fn u64(&self, i: usize) -> Result<u64, IoError> {
        self.fields[i]
            .parse()
            .map_err(|_| self.bad(i, "a non-negative integer"))
    }

    pub fn usize(&self, i: usize) -> Result<usize, IoError> {
        self.fields[i]
            .parse()
            .map_err(|_| self.bad(i, "a non-negative integer"))
    }

    pub fn u32(&self, i: usize) -> Result<u32, IoError> {
        self.fields[i]
            .parse()
            .map_err(|_| self.bad(i, "a non-negative integer"))
    }

    pub fn category(&self, i: usize) -> Result<Category, IoError> {
        self.fields[i].parse().map_err(|_| IoError::UnknownCategory {
            line: self.line,
            value: self.fields[i].to_string(),
        })
    }
}

pub(crate) struct Document {
    pub header: FileHeader,
    pub sections: Vec<Section>,
}

impl Document {
    /// The only table of a single-table file.
    pub fn single(&self) -> Result<&Section, IoError> {
        match self.sections.as_slice() {
            [s] if s.name.is_none() => Ok(s),
            _ => Err(malformed(
                self.sections.first().map_or(1, |s| s.column_line),
                "expected a single unnamed table",
            )),
        }
    }

    pub fn section(&self, name: &str) -> Result<&Section, IoError> {
        self.sections
            .iter()
            .find(|s| s.name.as_deref() == Some(name))
            .ok_or_else(|| malformed(0, format!("missing table [{name}]")))
    }
}

fn parse_header_value(line: usize, key: &str, value: &str, h: &mut PartialHeader) -> Result<(), IoError> {
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| malformed(line, format!("bad {key} value '{s}'")))
    };
    match key {
        "recording_id" => h.recording_id = Some(value.to_string()),
        "rate_hz" => h.rate_hz = Some(num(value)?),
        "utm_zone" => {
            let (n, hemi) = value.split_at(value.len().saturating_sub(1));
            let north = match hemi {
                "N" => true,
                "S" => false,
                _ => return Err(malformed(line, format!("bad utm_zone '{value}'"))),
            };
            let number: u8 = n
                .parse()
                .map_err(|_| malformed(line, format!("bad utm_zone '{value}'")))?;
            h.zone = Some(UtmZone::new(number, north).map_err(|e| malformed(line, e.to_string()))?);
        }
        "origin" => {
            let parts: Vec<&str> = value.split('\t').collect();
            if parts.len() != 3 {
                return Err(malformed(line, "origin needs easting, northing and altitude"));
            }
            h.origin = Some([num(parts[0])?, num(parts[1])?, num(parts[2])?]);
        }
        _ => {}
    }
    Ok(())
}

#[derive(Default)]
struct PartialHeader {
    recording_id: Option<String>,
    rate_hz: Option<f64>,
    zone: Option<UtmZone>,
    origin: Option<[f64; 3]>,
}

pub(crate) fn read_document<R: BufRead>(r: R, kind: &'static str) -> Result<Document, IoError> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let first = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(malformed(1, "empty file")),
    };
    let mut words = first.strip_prefix("# ").unwrap_or("").split(' ');
    if words.next() != Some(MAGIC) {
        return Err(malformed(1, format!("not a {MAGIC} file")));
    }
    let found = words.next().unwrap_or("");
    if found != kind {
        return Err(IoError::WrongKind {
            expected: kind,
            found: found.to_string(),
        });
    }
    let version: u32 = words
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed(1, "missing format version"))?;
    if version != FORMAT_VERSION {
        return Err(IoError::UnknownVersion { found: version });
    }

    let mut partial = PartialHeader::default();
    let mut sections: Vec<Section> = Vec::new();
    let mut pending_name: Option<String> = None;
    let mut in_header = true;
    let mut first_body_line = 0;
    for (n, line) in lines {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if let Some(comment) = line.strip_prefix('#') {
            if in_header {
                let comment = comment.strip_prefix(' ').unwrap_or(comment);
                if let Some((key, value)) = comment.split_once('\t') {
                    parse_header_value(n, key, value, &mut partial)?;
                }
            }
            continue;
        }
        if in_header {
            in_header = false;
            first_body_line = n;
        }
        if line.trim().is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            if let Some(prev) = pending_name.replace(name.to_string()) {
                return Err(malformed(n, format!("table [{prev}] has no column line")));
            }
            continue;
        }
        let starts_table = sections.is_empty() || pending_name.is_some();
        if starts_table {
            sections.push(Section {
                name: pending_name.take(),
                columns: line.split('\t').map(str::to_string).collect(),
                column_line: n,
                rows: Vec::new(),
            });
        } else {
            sections
                .last_mut()
                .expect("a table is open")
                .rows
                .push((n, line.to_string()));
        }
    }
    if let Some(name) = pending_name {
        return Err(malformed(0, format!("table [{name}] has no column line")));
    }
    let at = first_body_line.max(2);
    let header = FileHeader {
        version,
        recording_id: partial
            .recording_id
            .ok_or_else(|| malformed(at, "header lacks recording_id"))?,
        rate_hz: partial.rate_hz.ok_or_else(|| malformed(at, "header lacks rate_hz"))?,
        local_frame: {
            let zone = partial.zone.ok_or_else(|| malformed(at, "header lacks utm_zone"))?;
            let o = partial.origin.ok_or_else(|| malformed(at, "header lacks origin"))?;
            LocalFrame::new(zone, o[0], o[1], o[2])
        },
    };
    if sections.is_empty() {
        return Err(malformed(at, "file has no table"));
    }
    Ok(Document { header, sections })
}

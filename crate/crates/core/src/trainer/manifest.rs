use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nested training subsets, named by their percentage of the full set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "5")]
    P5,
    #[serde(rename = "10")]
    P10,
    #[serde(rename = "25")]
    P25,
    #[serde(rename = "50")]
    P50,
    #[serde(rename = "100")]
    P100,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::P5, Split::P10, Split::P25, Split::P50, Split::P100];

    pub fn percent(self) -> u32 {
        match self {
            Split::P5 => 5,
            Split::P10 => 10,
            Split::P25 => 25,
            Split::P50 => 50,
            Split::P100 => 100,
        }
    }

    fn index(self) -> usize {
        Split::ALL.iter().position(|&s| s == self).unwrap()
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "split{}", self.percent())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("split").trim_end_matches('%');
        Split::ALL
            .into_iter()
            .find(|sp| sp.percent().to_string() == digits)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?} (expected 5, 10, 25, 50 or 100)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub clip_id: String,
    /// Audio (`.wav`) or feature (`.fmap`) file, resolved against the
    /// manifest's directory when relative.
    pub path: PathBuf,
    pub scene: usize,
    pub device: String,
    pub splits: [bool; 5],
}

impl ManifestRow {
    pub fn in_split(&self, split: Split) -> bool {
        self.splits[split.index()]
    }

    pub fn is_audio(&self) -> bool {
        self.path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    clip_id: String,
    path: String,
    scene: usize,
    device: String,
    split5: u8,
    split10: u8,
    split25: u8,
    split50: u8,
    split100: u8,
}

const HEADER: [&str; 9] = [
    "clip_id", "path", "scene", "device", "split5", "split10", "split25", "split50", "split100",
];

/// Clip list with scene labels, recording devices and nested split flags.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let m = Self { rows };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::Data(format!("duplicate clip_id {:?} in manifest", r.clip_id)));
            }
            for w in r.splits.windows(2) {
                if w[0] && !w[1] {
                    return Err(Error::Data(format!(
                        "clip {:?} violates nested splits (5 <= 10 <= 25 <= 50 <= 100)",
                        r.clip_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.iter().map(str::trim).ne(HEADER) {
            return Err(Error::Format(format!(
                "{}: manifest header must be {}",
                path.display(),
                HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for rec in reader.deserialize::<CsvRow>() {
            let r = rec.map_err(|e| csv_err(path, e))?;
            let flags = [r.split5, r.split10, r.split25, r.split50, r.split100];
            if flags.iter().any(|&f| f > 1) {
                return Err(Error::Format(format!("{}: split flags must be 0 or 1", path.display())));
            }
            let p = PathBuf::from(&r.path);
            rows.push(ManifestRow {
                clip_id: r.clip_id,
                path: if p.is_absolute() { p } else { base.join(p) },
                scene: r.scene,
                device: r.device,
                splits: flags.map(|f| f == 1),
            });
        }
        Self::new(rows)
    }

    /// Writes paths relative to `relative_to` where possible.
    pub fn write(&self, path: &Path, relative_to: Option<&Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            let p = relative_to
                .and_then(|base| r.path.strip_prefix(base).ok())
                .unwrap_or(&r.path);
            let f = r.splits.map(u8::from);
            w.serialize(CsvRow {
                clip_id: r.clip_id.clone(),
                path: p.to_string_lossy().into_owned(),
                scene: r.scene,
                device: r.device.clone(),
                split5: f[0],
                split10: f[1],
                split25: f[2],
                split50: f[3],
                split100: f[4],
            })
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn rows_in(&self, split: Option<Split>) -> Vec<&ManifestRow> {
        self.rows
            .iter()
            .filter(|r| split.is_none_or(|s| r.in_split(s)))
            .collect()
    }

    pub fn clip_ids(&self, split: Option<Split>) -> Vec<&str> {
        self.rows_in(split).into_iter().map(|r| r.clip_id.as_str()).collect()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

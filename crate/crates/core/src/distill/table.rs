use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::trainer::{DatasetManifest, Split};

const MAGIC: &[u8; 4] = b"TLOG";
const VERSION: u32 = 1;

/// Raw teacher logits per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherLogitsTable {
    pub class_count: usize,
    pub entries: IndexMap<String, Vec<f32>>,
    pub provenance: String,
}

impl TeacherLogitsTable {
    pub fn new(class_count: usize, provenance: impl Into<String>) -> Self {
        Self {
            class_count,
            entries: IndexMap::new(),
            provenance: provenance.into(),
        }
    }

    pub fn insert(&mut self, clip_id: impl Into<String>, logits: Vec<f32>) -> Result<()> {
        let clip_id = clip_id.into();
        if logits.len() != self.class_count {
            return Err(Error::Shape(format!(
                "clip {clip_id}: {} logits, table has {} classes",
                logits.len(),
                self.class_count
            )));
        }
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("teacher logits for {clip_id}")));
        }
        self.entries.insert(clip_id, logits);
        Ok(())
    }

    pub fn get(&self, clip_id: &str) -> Option<&[f32]> {
        self.entries.get(clip_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn missing<'a>(&self, clip_ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        clip_ids
            .into_iter()
            .filter(|id| !self.entries.contains_key(*id))
            .map(str::to_string)
            .collect()
    }

    /// CSV: `clip_id,c0,...,c{K-1}` header, nine significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("clip_id");
        for k in 0..self.class_count {
            out.push_str(&format!(",c{k}"));
        }
        out.push('\n');
        for (id, logits) in &self.entries {
            out.push_str(id);
            for v in logits {
                out.push_str(&format!(",{v:.8e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty teacher-logit file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"clip_id") || cols.len() < 2 {
            return Err(Error::Format("teacher-logit header must start with clip_id,c0".into()));
        }
        for (k, c) in cols[1..].iter().enumerate() {
            if *c != format!("c{k}") {
                return Err(Error::Format(format!("unexpected column {c:?} (want c{k})")));
            }
        }
        let mut table = Self::new(cols.len() - 1, provenance);
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().trim().to_string();
            let logits = fields
                .map(|f| {
                    f.trim()
                        .parse::<f32>()
                        .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            table.insert(id, logits)?;
        }
        Ok(table)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.class_count as u32).to_le_bytes());
        put_str(&mut b, &self.provenance);
        b.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, logits) in &self.entries {
            put_str(&mut b, id);
            for v in logits {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a TLOG file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported TLOG version {version}")));
        }
        let k = r.u32()? as usize;
        let provenance = r.string()?;
        let n = r.u32()? as usize;
        let mut table = Self::new(k, provenance);
        for _ in 0..n {
            let id = r.string()?;
            let logits = (0..k).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            table.insert(id, logits)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes in TLOG file".into()));
        }
        Ok(table)
    }

    /// Writes CSV, or TLOG binary when the extension is `.tlog`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = if is_binary_path(path) {
            self.to_bytes()
        } else {
            self.to_csv().into_bytes()
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads either format, detected from the leading magic.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(MAGIC) {
            return Self::from_bytes(&bytes);
        }
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("{}: teacher-logit CSV is not UTF-8", path.display())))?;
        let provenance = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_csv(&text, provenance)
    }
}

fn is_binary_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tlog"))
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u32).to_le_bytes());
    b.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("truncated TLOG file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in TLOG".into()))
    }
}

/// Loads a table and checks it covers every clip of `split`.
pub fn load_teacher_logits(path: &Path, manifest: &DatasetManifest, split: Option<Split>) -> Result<TeacherLogitsTable> {
    let table = TeacherLogitsTable::read(path)?;
    let missing = table.missing(manifest.clip_ids(split));
    if !missing.is_empty() {
        return Err(Error::MissingClips(missing));
    }
    Ok(table)
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Per-clip mean of member logits. Values are sorted before a pairwise sum,
/// so the result does not depend on member order.
pub fn ensemble_logits(tables: &[TeacherLogitsTable]) -> Result<TeacherLogitsTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble of zero tables".into()))?;
    if tables.len() == 1 {
        return Ok(first.clone());
    }
    for t in &tables[1..] {
        if t.class_count != first.class_count {
            return Err(Error::Data(format!(
                "ensemble members disagree on class count ({} vs {})",
                first.class_count, t.class_count
            )));
        }
        if t.len() != first.len() || !first.missing(t.entries.keys().map(String::as_str)).is_empty() {
            return Err(Error::Data(format!(
                "ensemble member {:?} covers different clips than {:?}",
                t.provenance, first.provenance
            )));
        }
    }
    let members: Vec<&str> = tables.iter().map(|t| t.provenance.as_str()).collect();
    let mut out = TeacherLogitsTable::new(first.class_count, format!("ensemble({})", members.join("+")));
    let n = tables.len() as f64;
    let mut column = Vec::with_capacity(tables.len());
    for id in first.entries.keys() {
        let mut mean = Vec::with_capacity(first.class_count);
        for k in 0..first.class_count {
            column.clear();
            column.extend(tables.iter().map(|t| t.entries[id][k] as f64));
            column.sort_by(f64::total_cmp);
            mean.push((pairwise_sum(&column) / n) as f32);
        }
        out.insert(id.clone(), mean)?;
    }
    Ok(out)
}

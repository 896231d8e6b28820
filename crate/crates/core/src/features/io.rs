//! `FMAP` feature files: magic, `u32` mel bins, `u32` frames, `f32` values,
//! all little-endian; plus a `clip_id,path` CSV index.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::FeatureMap;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FMAP";

pub fn write_fmap(path: &Path, map: &FeatureMap) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * map.values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(map.mel_bins as u32).to_le_bytes());
    buf.extend_from_slice(&(map.frames as u32).to_le_bytes());
    for v in &map.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_fmap(path: &Path, clip_id: impl Into<String>) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("{}: not an FMAP file", path.display())));
    }
    let mel_bins = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * mel_bins * frames {
        return Err(Error::Format(format!(
            "{}: expected {} values, found {} bytes",
            path.display(),
            mel_bins * frames,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMap::new(clip_id, mel_bins, frames, values)
}

pub fn write_feature_index(path: &Path, entries: &[(String, PathBuf)]) -> Result<()> {
    let mut out = String::from("clip_id,path\n");
    for (id, p) in entries {
        out.push_str(&format!("{id},{}\n", p.display()));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_feature_index(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("clip_id,path") {
        return Err(Error::Format(format!("{}: missing clip_id,path header", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, p) = l
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("{}: bad index row {l:?}", path.display())))?;
            Ok((id.to_string(), PathBuf::from(p)))
        })
        .collect()
}

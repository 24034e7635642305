//! Binary sample container and the text manifest.
//!
//! Sample layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "FGSTSKEL"
//! version   u32      1
//! layout    u32 length + UTF-8 bytes
//! joints    u32
//! frames    u32
//! channels  u32
//! label     u32
//! data      joints·frames·channels × f32, joint-major [N][T][C]
//! ```
//!
//! Manifest: UTF-8 lines `path<TAB>label<TAB>split`, `#` starts a comment.
//! Relative paths resolve against the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::io::{put_string, put_u32, to_u32, write_atomic, Cursor};

pub const SAMPLE_MAGIC: &[u8; 8] = b"FGSTSKEL";
pub const SAMPLE_VERSION: u32 = 1;
const MANIFEST_HEADER: &str = "# fgst-manifest v1";

/// Encode a sample; coordinates are stored as 32-bit floats.
pub fn encode_sample(seq: &SkeletonSequence) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(40 + seq.data().len() * 4);
    out.extend_from_slice(SAMPLE_MAGIC);
    put_u32(&mut out, SAMPLE_VERSION);
    put_string(&mut out, seq.layout_id());
    put_u32(&mut out, to_u32(seq.joints(), "sample joints")?);
    put_u32(&mut out, to_u32(seq.frames(), "sample frames")?);
    put_u32(&mut out, to_u32(seq.channels(), "sample channels")?);
    put_u32(&mut out, to_u32(seq.label(), "sample label")?);
    for &v in seq.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_sample(bytes: &[u8]) -> Result<SkeletonSequence> {
    let mut c = Cursor::new(bytes, "sample");
    c.expect_magic(SAMPLE_MAGIC)?;
    let version = c.u32()?;
    if version != SAMPLE_VERSION {
        return Err(Error::format("sample", format!("unsupported version {version}")));
    }
    let layout = c.string()?;
    let joints = c.u32()? as usize;
    let frames = c.u32()? as usize;
    let channels = c.u32()? as usize;
    let label = c.u32()? as usize;
    let count = joints
        .checked_mul(frames)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::format("sample", "dimension overflow"))?;
    let data = c.f32s(count)?.into_iter().map(f64::from).collect();
    c.finish()?;
    SkeletonSequence::new(layout, joints, frames, channels, label, data)
}

pub fn write_sample(path: &Path, seq: &SkeletonSequence) -> Result<()> {
    write_atomic(path, &encode_sample(seq)?)
}

pub fn read_sample(path: &Path) -> Result<SkeletonSequence> {
    decode_sample(&std::fs::read(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::format("manifest", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.path.display(), e.label, e.split));
    }
    out
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |why: &str| Error::format("manifest", format!("line {}: {why}", lineno + 1));
        let [path, label, split] = fields[..] else {
            return Err(bad("expected path, label and split separated by tabs"));
        };
        let path = PathBuf::from(path);
        entries.push(ManifestEntry {
            path: if path.is_absolute() { path } else { base.join(path) },
            label: label.parse().map_err(|_| bad("label is not a class index"))?,
            split: split.parse().map_err(|_| bad("split must be `train` or `eval`"))?,
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    write_atomic(path, format_manifest(entries).as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&std::fs::read_to_string(path)?, base)
}

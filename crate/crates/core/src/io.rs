//! On-disk formats.
//!
//! Grids are stored as a JSON header `<base>.json` next to a raw payload
//! `<base>.raw` holding little-endian `f32` samples in the in-memory index
//! order. Boxes are stored as JSON lines, one record per box:
//!
//! ```text
//! {"view":0,"kind":"2d","coords":[x1,z1,x2,z2],"score":0.9,"label":"n0"}
//! {"kind":"3d","coords":[x1,y1,z1,x2,y2,z2]}
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Box2, Box3, Image2, Volume3, VolumeGeometry};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VolumeHeader {
    version: u32,
    kind: String,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    channels: usize,
    dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ImageHeader {
    version: u32,
    kind: String,
    dims: [usize; 2],
    spacing: [f64; 2],
    origin: [f64; 2],
    channels: usize,
    dtype: String,
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Paths of the header and payload for a grid stored at `base`.
pub fn grid_paths(base: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let base = base.as_ref();
    (with_suffix(base, ".json"), with_suffix(base, ".raw"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_payload(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_payload(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: payload of {} bytes is not a whole number of f32 samples",
            path.display(),
            bytes.len()
        )));
    }
    if bytes.len() / 4 != expected {
        return Err(Error::Format(format!(
            "{}: header expects {expected} samples, payload has {}",
            path.display(),
            bytes.len() / 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn check_header(version: u32, kind: &str, want_kind: &str, dtype: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    if kind != want_kind {
        return Err(Error::Format(format!("expected a {want_kind} header, found {kind}")));
    }
    if dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    Ok(())
}

pub fn write_volume(volume: &Volume3, base: impl AsRef<Path>) -> Result<()> {
    let (header_path, raw_path) = grid_paths(base);
    let g = volume.geometry();
    let header = VolumeHeader {
        version: FORMAT_VERSION,
        kind: "volume".into(),
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        channels: volume.channels(),
        dtype: DTYPE.into(),
    };
    write_json(&header_path, &header)?;
    write_payload(&raw_path, volume.data())
}

pub fn read_volume(base: impl AsRef<Path>) -> Result<Volume3> {
    let (header_path, raw_path) = grid_paths(base);
    let h: VolumeHeader = read_json(&header_path)?;
    check_header(h.version, &h.kind, "volume", &h.dtype)?;
    let geometry = VolumeGeometry::new(h.dims, h.spacing, h.origin)
        .map_err(|e| Error::Format(format!("{}: {e}", header_path.display())))?;
    let data = read_payload(&raw_path, h.channels * geometry.voxels())?;
    Volume3::new(geometry, h.channels, data)
}

pub fn write_image(image: &Image2, base: impl AsRef<Path>) -> Result<()> {
    let (header_path, raw_path) = grid_paths(base);
    let header = ImageHeader {
        version: FORMAT_VERSION,
        kind: "image".into(),
        dims: image.dims(),
        spacing: image.spacing(),
        origin: image.origin(),
        channels: image.channels(),
        dtype: DTYPE.into(),
    };
    write_json(&header_path, &header)?;
    write_payload(&raw_path, image.data())
}

pub fn read_image(base: impl AsRef<Path>) -> Result<Image2> {
    let (header_path, raw_path) = grid_paths(base);
    let h: ImageHeader = read_json(&header_path)?;
    check_header(h.version, &h.kind, "image", &h.dtype)?;
    if h.dims.contains(&0) {
        return Err(Error::Format(format!("{}: zero image dims", header_path.display())));
    }
    let data = read_payload(&raw_path, h.channels * h.dims[0] * h.dims[1])?;
    Image2::new(h.dims, h.spacing, h.origin, h.channels, data)
}

/// A 2D or 3D box.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyBox {
    Two(Box2),
    Three(Box3),
}

/// One line of a box file.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRecord {
    pub view: Option<usize>,
    pub bbox: AnyBox,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    view: Option<usize>,
    kind: String,
    coords: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl From<&BoxRecord> for RawRecord {
    fn from(r: &BoxRecord) -> Self {
        match &r.bbox {
            AnyBox::Two(b) => RawRecord {
                view: r.view,
                kind: "2d".into(),
                coords: b.coords().to_vec(),
                score: b.score,
                label: b.label.clone(),
            },
            AnyBox::Three(b) => RawRecord {
                view: r.view,
                kind: "3d".into(),
                coords: b.coords().to_vec(),
                score: b.score,
                label: b.label.clone(),
            },
        }
    }
}

impl RawRecord {
    fn into_record(self) -> std::result::Result<BoxRecord, String> {
        let c = &self.coords;
        let bbox = match (self.kind.as_str(), c.len()) {
            ("2d", 4) => {
                let b = Box2 {
                    x1: c[0],
                    z1: c[1],
                    x2: c[2],
                    z2: c[3],
                    score: self.score,
                    label: self.label,
                };
                b.validate().map_err(|e| e.to_string())?;
                AnyBox::Two(b)
            }
            ("3d", 6) => {
                let b = Box3 {
                    x1: c[0],
                    y1: c[1],
                    z1: c[2],
                    x2: c[3],
                    y2: c[4],
                    z2: c[5],
                    score: self.score,
                    label: self.label,
                };
                b.validate().map_err(|e| e.to_string())?;
                AnyBox::Three(b)
            }
            ("2d", n) => return Err(format!("2d record needs 4 coords, got {n}")),
            ("3d", n) => return Err(format!("3d record needs 6 coords, got {n}")),
            (k, _) => return Err(format!("unknown box kind {k:?}")),
        };
        Ok(BoxRecord { view: self.view, bbox })
    }
}

/// Serializes records as JSON lines.
pub fn boxes_to_jsonl(records: &[BoxRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&RawRecord::from(r))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses JSON lines; blank lines are skipped. Line numbers in errors are 1-based.
pub fn boxes_from_jsonl(text: &str) -> Result<Vec<BoxRecord>> {
    parse_lines(text.lines().map(|l| Ok(l.to_owned())))
}

fn parse_lines(lines: impl Iterator<Item = std::io::Result<String>>) -> Result<Vec<BoxRecord>> {
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(raw.into_record().map_err(|msg| Error::Parse { line: i + 1, msg })?);
    }
    Ok(out)
}

pub fn write_boxes(path: impl AsRef<Path>, records: &[BoxRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(boxes_to_jsonl(records)?.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<BoxRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_lines(BufReader::new(file).lines())
}

/// Flattens per-view 2D boxes into records tagged with their view index.
pub fn records_from_views(per_view: &[Vec<Box2>]) -> Vec<BoxRecord> {
    per_view
        .iter()
        .enumerate()
        .flat_map(|(k, boxes)| {
            boxes.iter().map(move |b| BoxRecord { view: Some(k), bbox: AnyBox::Two(b.clone()) })
        })
        .collect()
}

pub fn records_from_boxes3(boxes: &[Box3]) -> Vec<BoxRecord> {
    boxes
        .iter()
        .map(|b| BoxRecord { view: None, bbox: AnyBox::Three(b.clone()) })
        .collect()
}

/// Groups the 2D records by view. Every 2D record must carry a view index below `views`.
pub fn split_views(records: &[BoxRecord], views: usize) -> Result<Vec<Vec<Box2>>> {
    let mut out = vec![Vec::new(); views];
    for r in records {
        if let AnyBox::Two(b) = &r.bbox {
            match r.view {
                Some(k) if k < views => out[k].push(b.clone()),
                Some(k) => {
                    return Err(Error::Geometry(format!("2D box for view {k} but only {views} views")))
                }
                None => return Err(Error::Geometry("2D box without a view index".into())),
            }
        }
    }
    Ok(out)
}

pub fn boxes3_of(records: &[BoxRecord]) -> Vec<Box3> {
    records
        .iter()
        .filter_map(|r| match &r.bbox {
            AnyBox::Three(b) => Some(b.clone()),
            AnyBox::Two(_) => None,
        })
        .collect()
}

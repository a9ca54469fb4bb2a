//! File layouts owned by the command-line tool: segment directories,
//! training-pair CSV and JSON documents.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use nsm_core::forest::TrainingSet;
use nsm_core::io::{load_cloud, save_cloud, CloudFormat};
use nsm_core::registration::LocalizationResult;
use nsm_core::segmentation::Segment;
use nsm_core::{Error, Result};

pub const SEGMENT_INDEX: &str = "index.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentIndex {
    pub frame_id: String,
    pub segments: Vec<SegmentFile>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentFile {
    pub id: u32,
    pub file: String,
    pub points: usize,
}

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialise");
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn frame_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn save_segments(dir: &Path, frame_id: &str, segments: &[Segment]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut index = SegmentIndex {
        frame_id: frame_id.to_string(),
        segments: Vec::new(),
    };
    for s in segments {
        let file = format!("segment_{:05}.ply", s.id);
        save_cloud(&s.cloud(), &dir.join(&file), CloudFormat::PlyAscii)?;
        index.segments.push(SegmentFile {
            id: s.id,
            file,
            points: s.len(),
        });
    }
    write_json(&dir.join(SEGMENT_INDEX), &index)
}

pub fn load_segments(dir: &Path) -> Result<(String, Vec<Segment>)> {
    let index: SegmentIndex = read_json(&dir.join(SEGMENT_INDEX))?;
    let mut out = Vec::with_capacity(index.segments.len());
    for f in &index.segments {
        let path = dir.join(&f.file);
        let (cloud, _) = load_cloud(&path, CloudFormat::from_path(&path)?)?;
        out.push(Segment {
            id: f.id,
            indices: (0..cloud.len()).collect(),
            points: cloud.points,
            source_frame_id: index.frame_id.clone(),
        });
    }
    Ok((index.frame_id, out))
}

/// Writes `label,f_1,...,f_D` rows, label as 0 or 1.
pub fn save_pairs(path: &Path, set: &TrainingSet, append: bool) -> Result<()> {
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    let csv_err = |e: csv::Error| io_err(path, std::io::Error::other(e));
    for i in 0..set.len() {
        let mut rec = Vec::with_capacity(set.width() + 1);
        rec.push(u8::from(set.label(i)).to_string());
        rec.extend(set.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load_pairs(path: &Path) -> Result<TrainingSet> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(file);
    let mut set: Option<TrainingSet> = None;
    for (i, rec) in r.records().enumerate() {
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let label = match rec.get(0).map(str::trim) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            other => return Err(bad(format!("bad label {other:?}"))),
        };
        let x = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad number {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        set.get_or_insert_with(|| TrainingSet::new(x.len()))
            .push(&x, label)
            .map_err(|e| bad(e.to_string()))?;
    }
    set.ok_or_else(|| Error::InvalidParams(format!("{}: no training rows", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultFile {
    pub frame_id: String,
    #[serde(flatten)]
    pub result: LocalizationResult,
}

/// A single result file, or every `.json` file of a directory in name order.
pub fn load_results(path: &Path) -> Result<Vec<ResultFile>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| io_err(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    files.iter().map(|f| read_json(f)).collect()
}

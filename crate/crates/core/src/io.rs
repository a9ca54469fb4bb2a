//! ASCII point-cloud formats (xyz, PLY, PCD) and trajectory files.
//!
//! Writers print coordinates with Rust's shortest round-trip float formatting,
//! so `load_cloud(save_cloud(c))` reproduces every coordinate exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
    PcdAscii,
}

impl CloudFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("xyz") | Some("txt") => Ok(CloudFormat::Xyz),
            Some("ply") => Ok(CloudFormat::PlyAscii),
            Some("pcd") => Ok(CloudFormat::PcdAscii),
            _ => Err(Error::UnsupportedFormat(format!(
                "cannot infer cloud format of {}",
                path.display()
            ))),
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" => Ok(CloudFormat::Xyz),
            "ply" | "ply-ascii" => Ok(CloudFormat::PlyAscii),
            "pcd" | "pcd-ascii" => Ok(CloudFormat::PcdAscii),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Side information from a load.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// Rows dropped because a coordinate was NaN or infinite.
    pub dropped_non_finite: usize,
}

/// Loads a cloud; the frame id is set to the file stem.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<(PointCloud, LoadStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut next_line = |what: &str| -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((n, Ok(l))) => Ok(Some((n + 1, l))),
            Some((_, Err(e))) => Err(Error::io(path, e)),
            None if what.is_empty() => Ok(None),
            None => Err(Error::parse(
                path,
                0,
                format!("unexpected end of file: {what}"),
            )),
        }
    };

    let (columns, expected) = match format {
        CloudFormat::Xyz => ([0, 1, 2], None),
        CloudFormat::PlyAscii => parse_ply_header(path, &mut next_line)?,
        CloudFormat::PcdAscii => parse_pcd_header(path, &mut next_line)?,
    };

    let mut points = Vec::new();
    let mut stats = LoadStats::default();
    let mut rows = 0usize;
    while expected.is_none_or(|n| rows < n) {
        let Some((lineno, line)) = next_line("")? else {
            break;
        };
        let body = match format {
            CloudFormat::Xyz => line.split('#').next().unwrap_or(""),
            _ => line.as_str(),
        };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        rows += 1;
        let need = columns.iter().max().unwrap() + 1;
        if fields.len() < need {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected at least {need} columns, found {}", fields.len()),
            ));
        }
        let mut xyz = [0.0; 3];
        for (slot, &col) in xyz.iter_mut().zip(&columns) {
            *slot = parse_float(fields[col]).ok_or_else(|| {
                Error::parse(path, lineno, format!("bad number {:?}", fields[col]))
            })?;
        }
        if xyz.iter().all(|v| v.is_finite()) {
            points.push(Point::new(xyz[0], xyz[1], xyz[2]));
        } else {
            stats.dropped_non_finite += 1;
        }
    }
    if let Some(n) = expected {
        if rows < n {
            return Err(Error::parse(
                path,
                0,
                format!("header declares {n} points, file has {rows}"),
            ));
        }
    }
    if stats.dropped_non_finite > 0 {
        log::warn!(
            "{}: dropped {} non-finite point(s)",
            path.display(),
            stats.dropped_non_finite
        );
    }
    let frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((PointCloud { points, frame_id }, stats))
}

fn parse_float(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "nan" | "-nan" => Some(f64::NAN),
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

type LineSource<'a> = dyn FnMut(&str) -> Result<Option<(usize, String)>> + 'a;

fn parse_ply_header(path: &Path, next: &mut LineSource<'_>) -> Result<([usize; 3], Option<usize>)> {
    let (n, magic) = next("ply magic")?.unwrap();
    if magic.trim() != "ply" {
        return Err(Error::parse(path, n, "missing 'ply' magic"));
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut seen_format = false;
    loop {
        let (n, line) = next("ply header")?.unwrap();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", ver] => {
                if *ver != "1.0" {
                    return Err(Error::UnsupportedFormat(format!("ply ascii version {ver}")));
                }
                seen_format = true;
            }
            ["format", kind, ..] => {
                return Err(Error::UnsupportedFormat(format!("ply format {kind}")));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                if *name == "vertex" && vertex_count.is_none() {
                    vertex_count = Some(
                        count
                            .parse::<usize>()
                            .map_err(|_| Error::parse(path, n, "bad vertex count"))?,
                    );
                    in_vertex = true;
                } else if vertex_count.is_none() {
                    // vertex rows must come first in the body
                    return Err(Error::UnsupportedFormat(format!(
                        "ply element {name} before vertex"
                    )));
                } else {
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::UnsupportedFormat("list property on vertex".into()));
            }
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] if !in_vertex => {}
            ["end_header"] => break,
            _ => {
                return Err(Error::parse(
                    path,
                    n,
                    format!("unexpected header line {line:?}"),
                ))
            }
        }
    }
    if !seen_format {
        return Err(Error::parse(path, 0, "ply header lacks a format line"));
    }
    let count = vertex_count.ok_or_else(|| Error::parse(path, 0, "no vertex element"))?;
    Ok((xyz_columns(path, &props)?, Some(count)))
}

fn parse_pcd_header(path: &Path, next: &mut LineSource<'_>) -> Result<([usize; 3], Option<usize>)> {
    let mut fields: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut points = None;
    loop {
        let (n, line) = next("pcd header")?.unwrap();
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        let key = toks.next().unwrap().to_ascii_uppercase();
        let rest: Vec<&str> = toks.collect();
        match key.as_str() {
            "VERSION" => {
                let v = rest.first().copied().unwrap_or("");
                if v != "0.7" && v != ".7" {
                    return Err(Error::UnsupportedFormat(format!("pcd version {v}")));
                }
            }
            "FIELDS" => fields = rest.iter().map(|s| s.to_string()).collect(),
            "COUNT" => {
                counts = rest
                    .iter()
                    .map(|s| s.parse().map_err(|_| Error::parse(path, n, "bad COUNT")))
                    .collect::<Result<_>>()?
            }
            "POINTS" => {
                points = Some(
                    rest.first()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| Error::parse(path, n, "bad POINTS"))?,
                )
            }
            "SIZE" | "TYPE" | "WIDTH" | "HEIGHT" | "VIEWPOINT" => {}
            "DATA" => {
                let kind = rest.first().copied().unwrap_or("");
                if kind != "ascii" {
                    return Err(Error::UnsupportedFormat(format!("pcd DATA {kind}")));
                }
                break;
            }
            _ => {
                return Err(Error::parse(
                    path,
                    n,
                    format!("unknown pcd header key {key}"),
                ))
            }
        }
    }
    // Expand multi-count fields into one column name per value.
    let mut columns = Vec::new();
    for (i, f) in fields.iter().enumerate() {
        let c = counts.get(i).copied().unwrap_or(1);
        for _ in 0..c {
            columns.push(f.clone());
        }
    }
    Ok((xyz_columns(path, &columns)?, points))
}

fn xyz_columns(path: &Path, names: &[String]) -> Result<[usize; 3]> {
    let find = |axis: &str| {
        names
            .iter()
            .position(|n| n == axis)
            .ok_or_else(|| Error::parse(path, 0, format!("no '{axis}' field")))
    };
    Ok([find("x")?, find("y")?, find("z")?])
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_cloud(cloud, &mut w, format).map_err(|e| Error::io(path, e))
}

fn write_cloud(cloud: &PointCloud, w: &mut impl Write, format: CloudFormat) -> std::io::Result<()> {
    let n = cloud.len();
    match format {
        CloudFormat::Xyz => {}
        CloudFormat::PlyAscii => {
            writeln!(w, "ply")?;
            writeln!(w, "format ascii 1.0")?;
            if !cloud.frame_id.is_empty() {
                writeln!(w, "comment frame_id {}", cloud.frame_id)?;
            }
            writeln!(w, "element vertex {n}")?;
            writeln!(w, "property float x")?;
            writeln!(w, "property float y")?;
            writeln!(w, "property float z")?;
            writeln!(w, "end_header")?;
        }
        CloudFormat::PcdAscii => {
            writeln!(w, "# .PCD v0.7 - Point Cloud Data file format")?;
            writeln!(w, "VERSION 0.7")?;
            writeln!(w, "FIELDS x y z")?;
            writeln!(w, "SIZE 8 8 8")?;
            writeln!(w, "TYPE F F F")?;
            writeln!(w, "COUNT 1 1 1")?;
            writeln!(w, "WIDTH {n}")?;
            writeln!(w, "HEIGHT 1")?;
            writeln!(w, "VIEWPOINT 0 0 0 1 0 0 0")?;
            writeln!(w, "POINTS {n}")?;
            writeln!(w, "DATA ascii")?;
        }
    }
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()
}

/// Reads `frame_id tx ty tz qx qy qz qw` lines.
pub fn load_trajectory(path: &Path) -> Result<Vec<(String, RigidTransform)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 8 {
            return Err(Error::parse(path, i + 1, "expected 8 columns"));
        }
        let mut v = [0.0; 7];
        for (slot, tok) in v.iter_mut().zip(&toks[1..]) {
            *slot = tok
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad number {tok:?}")))?;
        }
        let t = RigidTransform::from_quaternion(
            [v[3], v[4], v[5], v[6]],
            Vector3::new(v[0], v[1], v[2]),
        )
        .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push((toks[0].to_string(), t));
    }
    Ok(out)
}

pub fn save_trajectory(path: &Path, poses: &[(String, RigidTransform)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "# frame_id tx ty tz qx qy qz qw")?;
        for (id, t) in poses {
            let tr = t.translation();
            let q = t.quaternion();
            writeln!(
                w,
                "{id} {} {} {} {} {} {} {}",
                tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3]
            )?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

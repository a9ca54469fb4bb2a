//! Target segment map and its `.nsm` container.
//!
//! Layout:
//!
//! ```text
//! b"NSMMAP"                magic
//! u32 LE                   container version
//! u32 LE                   header length in bytes
//! [u8; header length]      JSON header (ids, fingerprint, counts)
//! payload                  per entry: 9 f64 rotation (row-major), 3 f64
//!                          position, 66 f64 descriptor; then every entry's
//!                          optional points as 3 f64 each
//! ```
//!
//! All floats are little-endian `f64`, so a round trip is bit-exact.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Descriptor, KeyPose, DESCRIPTOR_DIM};
use crate::geometry::{Point, RigidTransform};

const MAGIC: &[u8; 6] = b"NSMMAP";
pub const MAP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub segment_id: u32,
    pub keypose: KeyPose,
    pub descriptor: Descriptor,
    pub points: Option<Vec<Point>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentMap {
    entries: Vec<MapEntry>,
    /// Fingerprint of the parameters the map was built with.
    pub fingerprint: String,
    pub frame_id: String,
}

impl SegmentMap {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        Self {
            entries: Vec::new(),
            fingerprint: fingerprint.into(),
            frame_id: String::new(),
        }
    }

    pub fn from_entries(fingerprint: impl Into<String>, entries: Vec<MapEntry>) -> Result<Self> {
        let mut map = Self::new(fingerprint);
        for e in entries {
            map.push(e)?;
        }
        Ok(map)
    }

    pub fn push(&mut self, entry: MapEntry) -> Result<()> {
        if self
            .entries
            .iter()
            .any(|e| e.segment_id == entry.segment_id)
        {
            return Err(Error::DuplicateSegment(entry.segment_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, segment_id: u32) -> Option<&MapEntry> {
        self.entries.iter().find(|e| e.segment_id == segment_id)
    }

    pub fn check_fingerprint(&self, active: &str) -> Result<()> {
        if self.fingerprint != active {
            return Err(Error::FingerprintMismatch {
                stored: self.fingerprint.clone(),
                active: active.to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    fingerprint: String,
    frame_id: String,
    descriptor_dim: usize,
    ids: Vec<u32>,
    isotropic: Vec<bool>,
    /// `None` entries carry no point payload.
    point_counts: Vec<Option<usize>>,
}

pub fn save_map(map: &SegmentMap, path: &Path) -> Result<()> {
    fs::write(path, encode_map(map)).map_err(|e| Error::io(path, e))
}

pub fn encode_map(map: &SegmentMap) -> Vec<u8> {
    let header = Header {
        version: MAP_VERSION,
        fingerprint: map.fingerprint.clone(),
        frame_id: map.frame_id.clone(),
        descriptor_dim: DESCRIPTOR_DIM,
        ids: map.entries.iter().map(|e| e.segment_id).collect(),
        isotropic: map.entries.iter().map(|e| e.keypose.isotropic).collect(),
        point_counts: map
            .entries
            .iter()
            .map(|e| e.points.as_ref().map(Vec::len))
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(14 + json.len() + map.len() * 78 * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    for e in &map.entries {
        let r = e.keypose.orientation();
        for i in 0..3 {
            for j in 0..3 {
                put(r[(i, j)]);
            }
        }
        let p = e.keypose.position();
        put(p.x);
        put(p.y);
        put(p.z);
        for &v in e.descriptor.as_slice() {
            put(v);
        }
    }
    for e in &map.entries {
        for p in e.points.iter().flatten() {
            put(p.x);
            put(p.y);
            put(p.z);
        }
    }
    out
}

/// Loads a map. With `expected_fingerprint`, a map built under different
/// parameters is rejected with [`Error::FingerprintMismatch`].
pub fn load_map(path: &Path, expected_fingerprint: Option<&str>) -> Result<SegmentMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let map = decode_map(&bytes).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::parse(path, line, msg),
        other => other,
    })?;
    if let Some(fp) = expected_fingerprint {
        map.check_fingerprint(fp)?;
    }
    Ok(map)
}

pub fn decode_map(bytes: &[u8]) -> Result<SegmentMap> {
    let bad = |m: &str| Error::parse("<map>", 0, m.to_string());
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(6).ok_or_else(|| bad("truncated magic"))? != MAGIC {
        return Err(bad("not an nsm map (bad magic)"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated version"))?;
    if version != MAP_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MAP_VERSION,
        });
    }
    let hlen = cur.u32().ok_or_else(|| bad("truncated header length"))? as usize;
    let hbytes = cur.take(hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(hbytes).map_err(|e| bad(&format!("bad header: {e}")))?;
    if header.version != MAP_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: MAP_VERSION,
        });
    }
    if header.descriptor_dim != DESCRIPTOR_DIM {
        return Err(Error::WidthMismatch {
            expected: DESCRIPTOR_DIM,
            got: header.descriptor_dim,
        });
    }
    let n = header.ids.len();
    if header.isotropic.len() != n || header.point_counts.len() != n {
        return Err(bad("header arrays disagree in length"));
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(n);
    for k in 0..n {
        let mut r = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                r[(i, j)] = cur.f64().ok_or_else(|| bad("truncated key pose"))?;
            }
        }
        let t = Vector3::new(
            cur.f64().ok_or_else(|| bad("truncated key pose"))?,
            cur.f64().ok_or_else(|| bad("truncated key pose"))?,
            cur.f64().ok_or_else(|| bad("truncated key pose"))?,
        );
        let pose = RigidTransform::new(r, t)?;
        let mut d = Descriptor::zeros();
        for v in d.0.iter_mut() {
            *v = cur.f64().ok_or_else(|| bad("truncated descriptor"))?;
        }
        let id = header.ids[k];
        if !seen.insert(id) {
            return Err(Error::DuplicateSegment(id));
        }
        entries.push(MapEntry {
            segment_id: id,
            keypose: KeyPose::new(pose, header.isotropic[k]),
            descriptor: d,
            points: None,
        });
    }
    for (e, count) in entries.iter_mut().zip(&header.point_counts) {
        if let Some(c) = *count {
            let mut pts = Vec::with_capacity(c);
            for _ in 0..c {
                let x = cur.f64().ok_or_else(|| bad("truncated points"))?;
                let y = cur.f64().ok_or_else(|| bad("truncated points"))?;
                let z = cur.f64().ok_or_else(|| bad("truncated points"))?;
                pts.push(Point::new(x, y, z));
            }
            e.points = Some(pts);
        }
    }
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(SegmentMap {
        entries,
        fingerprint: header.fingerprint,
        frame_id: header.frame_id,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(n: usize, seed: u64) -> SegmentMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n)
            .map(|i| {
                let mut d = Descriptor::zeros();
                for v in d.0.iter_mut() {
                    *v = rng.random_range(-3.0..3.0);
                }
                MapEntry {
                    segment_id: i as u32 * 3 + 1,
                    keypose: KeyPose::from_position_yaw(
                        Point::new(rng.random(), rng.random(), rng.random()),
                        rng.random_range(-3.0..3.0),
                    ),
                    descriptor: d,
                    points: (i % 2 == 0).then(|| {
                        (0..i + 1)
                            .map(|_| Point::new(rng.random(), rng.random(), rng.random()))
                            .collect()
                    }),
                }
            })
            .collect();
        SegmentMap::from_entries("abc123", entries).unwrap()
    }

    #[test]
    fn empty_round_trip() {
        let m = SegmentMap::new("fp");
        assert_eq!(decode_map(&encode_map(&m)).unwrap(), m);
    }

    #[test]
    fn fifty_entry_round_trip_is_bit_exact() {
        let m = random_map(50, 9);
        let back = decode_map(&encode_map(&m)).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.entries().iter().zip(back.entries()) {
            for (x, y) in a.descriptor.0.iter().zip(b.descriptor.0.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn fingerprint_and_version_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nsm");
        let m = random_map(3, 1);
        save_map(&m, &path).unwrap();
        assert!(load_map(&path, Some("abc123")).is_ok());
        assert!(matches!(
            load_map(&path, Some("other")),
            Err(Error::FingerprintMismatch { .. })
        ));

        let mut bytes = encode_map(&m);
        bytes[6] = 9;
        assert!(matches!(
            decode_map(&bytes),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = encode_map(&random_map(4, 2));
        for cut in [0, 5, 12, 40, bytes.len() - 1] {
            assert!(
                matches!(decode_map(&bytes[..cut]), Err(Error::Parse { .. })),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = random_map(2, 3);
        let mut e = m.entries()[0].clone();
        let mut m2 = m.clone();
        e.points = None;
        assert!(matches!(m2.push(e), Err(Error::DuplicateSegment(_))));
    }
}

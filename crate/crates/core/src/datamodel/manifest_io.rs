//! Line-delimited manifest and query-list files.
//!
//! Both formats are UTF-8 JSON lines: a header line carrying the schema name,
//! version, and split-level fields, followed by one record per line. Field
//! names are documented in `docs/schemas.md`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, FrameRecord, ManifestError, QueryRecord, Split};

pub const MANIFEST_SCHEMA: &str = "vehicle-search-manifest";
pub const QUERY_SCHEMA: &str = "vehicle-search-queries";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    schema: String,
    version: u32,
    name: String,
    split: Split,
    num_identities: u32,
    identity_remap: std::collections::BTreeMap<u64, u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryHeader {
    schema: String,
    version: u32,
}

fn parse_err(line: usize, e: impl std::fmt::Display) -> ManifestError {
    ManifestError::Parse { line, message: e.to_string() }
}

/// Load and validate a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file: missing header line"))?;
    let header: ManifestHeader =
        serde_json::from_str(&header_line?).map_err(|e| parse_err(1, e))?;
    if header.schema != MANIFEST_SCHEMA {
        return Err(parse_err(1, format!("unexpected schema '{}'", header.schema)));
    }
    if header.version != SCHEMA_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported schema version {} (expected {})", header.version, SCHEMA_VERSION),
        ));
    }

    let mut frames = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: FrameRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(idx + 1, e))?;
        frames.push(frame);
    }

    let manifest = DatasetManifest {
        name: header.name,
        split: header.split,
        num_identities: header.num_identities,
        identity_remap: header.identity_remap,
        frames,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Write a manifest in canonical form (one frame per line, compact JSON).
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), ManifestError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = ManifestHeader {
        schema: MANIFEST_SCHEMA.to_string(),
        version: SCHEMA_VERSION,
        name: manifest.name.clone(),
        split: manifest.split,
        num_identities: manifest.num_identities,
        identity_remap: manifest.identity_remap.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for frame in &manifest.frames {
        writeln!(w, "{}", serde_json::to_string(frame).expect("frame serializes"))?;
    }
    w.flush()?;
    Ok(())
}

/// Load a query list (one query per line after the header).
pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>, ManifestError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file: missing header line"))?;
    let header: QueryHeader = serde_json::from_str(&header_line?).map_err(|e| parse_err(1, e))?;
    if header.schema != QUERY_SCHEMA || header.version != SCHEMA_VERSION {
        return Err(parse_err(1, "unexpected query-list schema/version"));
    }
    let mut queries = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryRecord = serde_json::from_str(&line).map_err(|e| parse_err(idx + 1, e))?;
        if q.annotation.identity.is_none() {
            return Err(parse_err(idx + 1, format!("query '{}' lacks an identity", q.query_id)));
        }
        queries.push(q);
    }
    Ok(queries)
}

pub fn write_queries(queries: &[QueryRecord], path: &Path) -> Result<(), ManifestError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = QueryHeader { schema: QUERY_SCHEMA.to_string(), version: SCHEMA_VERSION };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for q in queries {
        writeln!(w, "{}", serde_json::to_string(q).expect("query serializes"))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{BoxAnnotation, Rect, WeatherTag};
    use std::num::NonZeroU32;

    fn sample_manifest() -> DatasetManifest {
        let ann = |id: u32, cam: &str| BoxAnnotation {
            rect: Rect::new(1.0, 2.0, 11.0, 22.0).unwrap(),
            identity: NonZeroU32::new(id),
            camera_id: cam.to_string(),
            attributes: None,
        };
        DatasetManifest {
            name: "toy".into(),
            split: Split::Train,
            num_identities: 2,
            identity_remap: [(101, 1), (205, 2)].into_iter().collect(),
            frames: vec![
                FrameRecord {
                    frame_id: "s1_c1_f0".into(),
                    image_path: "images/s1_c1_f0.png".into(),
                    scene_id: "s1".into(),
                    camera_id: "c1".into(),
                    weather_tag: WeatherTag::Day,
                    annotations: vec![ann(1, "c1"), ann(2, "c1")],
                },
                FrameRecord {
                    frame_id: "s1_c2_f0".into(),
                    image_path: "images/s1_c2_f0.png".into(),
                    scene_id: "s1".into(),
                    camera_id: "c2".into(),
                    weather_tag: WeatherTag::Day,
                    annotations: vec![ann(1, "c2")],
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.jsonl");
        let p2 = dir.path().join("m2.jsonl");
        let m = sample_manifest();
        write_manifest(&m, &p1).unwrap();
        let loaded = load_manifest(&p1).unwrap();
        assert_eq!(loaded, m);
        write_manifest(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn bad_box_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let m = sample_manifest();
        write_manifest(&m, &p).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        // corrupt the second frame line: x1 > x2
        text = text.replace(r#"{"x1":1.0,"y1":2.0,"x2":11.0,"y2":22.0},"identity":1,"camera_id":"c2""#,
                            r#"{"x1":99.0,"y1":2.0,"x2":11.0,"y2":22.0},"identity":1,"camera_id":"c2""#);
        std::fs::write(&p, text).unwrap();
        match load_manifest(&p) {
            Err(ManifestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn disjointness_violation_detected() {
        let train = sample_manifest();
        let mut test = sample_manifest();
        test.split = Split::Test;
        // shares raw id 205 with train
        test.identity_remap = [(205, 1), (300, 2)].into_iter().collect();
        match crate::datamodel::check_disjoint_identities(&train, &test) {
            Err(ManifestError::IdentityOverlap { raw_id }) => assert_eq!(raw_id, 205),
            other => panic!("expected overlap error, got {other:?}"),
        }
    }

    #[test]
    fn num_identities_mismatch_rejected() {
        let mut m = sample_manifest();
        m.num_identities = 3;
        assert!(m.validate().is_err());
    }
}

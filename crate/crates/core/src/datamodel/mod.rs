//! Dataset, annotation, query, and split representations shared by every
//! other module.
//!
//! Frames are pre-extracted images referenced by relative path. Identity
//! labels are contiguous `1..=C` per split (`None` marks a detected but
//! unidentified vehicle); the mapping back to raw source ids is kept in the
//! manifest so train/test disjointness can be checked across splits.

mod manifest_io;

pub use manifest_io::{
    load_manifest, load_queries, write_manifest, write_queries, MANIFEST_SCHEMA, QUERY_SCHEMA,
    SCHEMA_VERSION,
};

use std::collections::{BTreeMap, BTreeSet};
use std::num::NonZeroU32;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Contiguous identity label in `1..=C`.
pub type IdentityId = NonZeroU32;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate rectangle ({x1}, {y1}, {x2}, {y2}): requires x1 < x2 and y1 < y2")]
    Degenerate { x1: f64, y1: f64, x2: f64, y2: f64 },
}

/// Axis-aligned rectangle with half-open pixel corners `(x1, y1, x2, y2)`.
///
/// The half-open convention makes area arithmetic unambiguous:
/// `area = (x2 - x1) * (y2 - y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRect", into = "RawRect")]
pub struct Rect {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawRect {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl TryFrom<RawRect> for Rect {
    type Error = GeometryError;

    fn try_from(r: RawRect) -> Result<Self, Self::Error> {
        Rect::new(r.x1, r.y1, r.x2, r.y2)
    }
}

impl From<Rect> for RawRect {
    fn from(r: Rect) -> Self {
        RawRect { x1: r.x1, y1: r.y1, x2: r.x2, y2: r.y2 }
    }
}

impl Rect {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if !(x1 < x2 && y1 < y2) || !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(GeometryError::Degenerate { x1, y1, x2, y2 });
        }
        Ok(Rect { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Intersection area with `other`; zero when disjoint.
    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Clip to `[0, width] x [0, height]`; `None` when nothing remains.
    pub fn clipped(&self, width: f64, height: f64) -> Option<Rect> {
        let x1 = self.x1.max(0.0);
        let y1 = self.y1.max(0.0);
        let x2 = self.x2.min(width);
        let y2 = self.y2.min(height);
        Rect::new(x1, y1, x2, y2).ok()
    }
}

/// Intersection over union of two valid rectangles, in `[0, 1]`.
///
/// Symmetric; 1.0 iff the rectangles are identical; 0.0 when disjoint.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Weather tag carried by frames for the per-scene evaluation breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherTag {
    Day,
    Dawn,
    Rain,
    Night,
    Unknown,
}

impl WeatherTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeatherTag::Day => "day",
            WeatherTag::Dawn => "dawn",
            WeatherTag::Rain => "rain",
            WeatherTag::Night => "night",
            WeatherTag::Unknown => "unknown",
        }
    }
}

/// Optional per-box attribute annotations (color, vehicle type).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxAttributes {
    pub color: String,
    pub vtype: String,
}

/// A single annotated vehicle box. `identity: None` marks a vehicle that is
/// detected but carries no identity label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    #[serde(rename = "box")]
    pub rect: Rect,
    pub identity: Option<IdentityId>,
    pub camera_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<BoxAttributes>,
}

/// One raw frame with its vehicle annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub image_path: String,
    pub scene_id: String,
    pub camera_id: String,
    pub weather_tag: WeatherTag,
    pub annotations: Vec<BoxAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A named dataset split: frames, the identity count `C`, and the mapping
/// from raw source track ids to the contiguous labels used in annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub num_identities: u32,
    pub identity_remap: BTreeMap<u64, u32>,
    pub frames: Vec<FrameRecord>,
}

/// A cropped query vehicle image, referencing its source frame and box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub source_frame_id: String,
    #[serde(rename = "box")]
    pub annotation: BoxAnnotation,
    pub crop_path: String,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("train and test splits share raw identity {raw_id}")]
    IdentityOverlap { raw_id: u64 },
}

impl DatasetManifest {
    /// Check every manifest invariant; called by [`load_manifest`].
    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen_frames = BTreeSet::new();
        let mut labels = BTreeSet::new();
        for frame in &self.frames {
            if !seen_frames.insert(frame.frame_id.as_str()) {
                return Err(ManifestError::Integrity(format!(
                    "duplicate frame_id '{}'",
                    frame.frame_id
                )));
            }
            if frame.annotations.is_empty() {
                return Err(ManifestError::Integrity(format!(
                    "frame '{}' has no annotations; empty frames are filtered at build time",
                    frame.frame_id
                )));
            }
            for ann in &frame.annotations {
                if let Some(id) = ann.identity {
                    if id.get() > self.num_identities {
                        return Err(ManifestError::Integrity(format!(
                            "frame '{}': identity {} exceeds num_identities {}",
                            frame.frame_id, id, self.num_identities
                        )));
                    }
                    labels.insert(id.get());
                }
            }
        }
        if labels.len() as u32 != self.num_identities {
            return Err(ManifestError::Integrity(format!(
                "num_identities is {} but {} distinct labels appear in frames",
                self.num_identities,
                labels.len()
            )));
        }
        let remapped: BTreeSet<u32> = self.identity_remap.values().copied().collect();
        if remapped.len() != self.identity_remap.len() {
            return Err(ManifestError::Integrity(
                "identity_remap maps two raw ids to the same label".into(),
            ));
        }
        let expected: BTreeSet<u32> = (1..=self.num_identities).collect();
        if remapped != expected {
            return Err(ManifestError::Integrity(format!(
                "identity_remap values must be exactly 1..={}",
                self.num_identities
            )));
        }
        Ok(())
    }

    pub fn frame(&self, frame_id: &str) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    /// Total number of annotated boxes.
    pub fn num_boxes(&self) -> usize {
        self.frames.iter().map(|f| f.annotations.len()).sum()
    }
}

/// Train/test splits of one dataset must not share raw source identities.
pub fn check_disjoint_identities(
    train: &DatasetManifest,
    test: &DatasetManifest,
) -> Result<(), ManifestError> {
    for raw_id in train.identity_remap.keys() {
        if test.identity_remap.contains_key(raw_id) {
            return Err(ManifestError::IdentityOverlap { raw_id: *raw_id });
        }
    }
    Ok(())
}

/// Queries must reference frames of the manifest and carry identity labels.
pub fn validate_queries(
    queries: &[QueryRecord],
    manifest: &DatasetManifest,
) -> Result<(), ManifestError> {
    let frame_ids: BTreeSet<&str> = manifest.frames.iter().map(|f| f.frame_id.as_str()).collect();
    let mut seen = BTreeSet::new();
    for q in queries {
        if !frame_ids.contains(q.source_frame_id.as_str()) {
            return Err(ManifestError::Integrity(format!(
                "query '{}' references unknown frame '{}'",
                q.query_id, q.source_frame_id
            )));
        }
        let Some(id) = q.annotation.identity else {
            return Err(ManifestError::Integrity(format!(
                "query '{}' has no identity label",
                q.query_id
            )));
        };
        if !seen.insert((id, q.annotation.camera_id.clone())) {
            return Err(ManifestError::Integrity(format!(
                "duplicate (identity, camera) query pair ({}, {})",
                id, q.annotation.camera_id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x1: f64, y1: f64, x2: f64, y2: f64) -> Rect {
        Rect::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_identity_case() {
        let a = rect(3.0, 4.0, 10.0, 12.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = rect(0.0, 0.0, 5.0, 5.0);
        let b = rect(10.0, 10.0, 12.0, 12.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        // intersection 50, union 150
        let a = rect(0.0, 0.0, 10.0, 10.0);
        let b = rect(5.0, 0.0, 15.0, 10.0);
        let v = iou(&a, &b);
        assert!((v - 1.0 / 3.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn degenerate_rect_rejected() {
        assert!(Rect::new(5.0, 0.0, 5.0, 10.0).is_err());
        assert!(Rect::new(6.0, 0.0, 5.0, 10.0).is_err());
        assert!(Rect::new(0.0, f64::NAN, 5.0, 10.0).is_err());
    }

    #[test]
    fn clip_behaviour() {
        let r = rect(-5.0, -5.0, 20.0, 20.0);
        let c = r.clipped(10.0, 8.0).unwrap();
        assert_eq!((c.x1(), c.y1(), c.x2(), c.y2()), (0.0, 0.0, 10.0, 8.0));
        assert!(rect(11.0, 0.0, 20.0, 5.0).clipped(10.0, 8.0).is_none());
    }
}

//! Canonical data model and on-disk formats for boxes, tracker outputs and
//! finished annotations.
//!
//! Two file formats live here:
//! * the annotation file — one CSV-ish line per frame, diff friendly;
//! * the tracker dump — a directory with a text index plus one flat binary
//!   response map per frame.
//!
//! Both formats carry a magic/version first field so readers can reject
//! foreign files early.

mod annotation_io;
mod tracker_dump;

pub use annotation_io::{read_annotations, write_annotations};
pub use tracker_dump::{read_tracker_dump, write_tracker_dump};

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Axis-aligned box in frame-pixel coordinates, corners as reals.
///
/// Coordinates stay real-valued through the whole pipeline; nothing is
/// rounded to integers until final export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox { x_min, y_min, x_max, y_max };
        if !b.is_valid() {
            return Err(Error::InvalidBox { x_min, y_min, x_max, y_max });
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }
}

/// Tracking direction: forward from a span's start anchor, backward from its
/// end anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// Tracker response map, fixed r x r for a whole run.
///
/// Wrapped in an `Arc` so windows can share frames without copying the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap(Arc<Array2<f32>>);

impl ResponseMap {
    pub fn new(grid: Array2<f32>) -> Self {
        ResponseMap(Arc::new(grid))
    }

    pub fn grid(&self) -> &Array2<f32> {
        &self.0
    }

    pub fn side(&self) -> usize {
        self.0.nrows()
    }
}

/// One tracker output: box, confidence, response map, direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFrame {
    pub frame_idx: usize,
    pub direction: Direction,
    pub box_: BBox,
    /// Clipped to [0, 1] on ingestion.
    pub confidence: f64,
    pub response_map: ResponseMap,
}

/// Provenance of a finished per-frame annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Manual,
    Forward,
    Backward,
    Failure,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Manual => "manual",
            Source::Forward => "forward",
            Source::Backward => "backward",
            Source::Failure => "failure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "manual" => Some(Source::Manual),
            "forward" => Some(Source::Forward),
            "backward" => Some(Source::Backward),
            "failure" => Some(Source::Failure),
            _ => None,
        }
    }
}

/// Final annotation for one frame. `Failure` records carry no box and are
/// exported for human relabeling.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub frame_idx: usize,
    pub source: Source,
    pub box_: Option<BBox>,
    pub quality: Option<f64>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        match self.source {
            Source::Failure => {
                if self.box_.is_some() {
                    return Err(Error::invalid(format!(
                        "frame {}: failure record must not carry a box",
                        self.frame_idx
                    )));
                }
            }
            Source::Forward | Source::Backward => {
                if self.box_.is_none() {
                    return Err(Error::invalid(format!(
                        "frame {}: {} record must carry a box",
                        self.frame_idx,
                        self.source.as_str()
                    )));
                }
                match self.quality {
                    Some(q) if q > 0.0 => {}
                    _ => {
                        return Err(Error::invalid(format!(
                            "frame {}: {} record needs quality > 0",
                            self.frame_idx,
                            self.source.as_str()
                        )));
                    }
                }
            }
            Source::Manual => {
                if self.box_.is_none() {
                    return Err(Error::invalid(format!(
                        "frame {}: manual record must carry a box",
                        self.frame_idx
                    )));
                }
            }
        }
        if let Some(b) = &self.box_ {
            if !b.is_valid() {
                return Err(Error::InvalidBox {
                    x_min: b.x_min,
                    y_min: b.y_min,
                    x_max: b.x_max,
                    y_max: b.y_max,
                });
            }
        }
        Ok(())
    }
}

/// Per-video metadata shared across all pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeta {
    pub video_id: String,
    pub frame_count: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Manual anchors every this many frames (30 by default).
    pub anchor_interval: usize,
}

impl VideoMeta {
    pub fn new(video_id: impl Into<String>, frame_count: usize, width: usize, height: usize) -> Self {
        VideoMeta {
            video_id: video_id.into(),
            frame_count,
            frame_width: width,
            frame_height: height,
            anchor_interval: 30,
        }
    }

    pub fn check_frame(&self, frame_idx: usize) -> Result<()> {
        if frame_idx >= self.frame_count {
            return Err(Error::FrameOutOfRange { frame_idx, frame_count: self.frame_count });
        }
        Ok(())
    }
}

pub fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_rejects_degenerate() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(2.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn failure_record_carries_no_box() {
        let rec = AnnotationRecord {
            frame_idx: 3,
            source: Source::Failure,
            box_: Some(BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()),
            quality: None,
        };
        assert!(rec.validate().is_err());
        let rec = AnnotationRecord { frame_idx: 3, source: Source::Failure, box_: None, quality: None };
        assert!(rec.validate().is_ok());
    }

    #[test]
    fn tracked_source_needs_positive_quality() {
        let rec = AnnotationRecord {
            frame_idx: 1,
            source: Source::Forward,
            box_: Some(BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()),
            quality: Some(-0.2),
        };
        assert!(rec.validate().is_err());
    }
}

//! Tracker dump: a directory holding a human-readable text index plus one
//! flat binary response map per frame.
//!
//! ```text
//! dump/
//!   index.txt      annotrack-dump/1,<direction>,<r>
//!                  <frame_idx>,<x_min>,<y_min>,<x_max>,<y_max>,<confidence>
//!   <frame_idx>.bin   r*r row-major little-endian f32
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::store::annotation_io::fmt_real;
use crate::store::{clip01, BBox, Direction, ResponseMap, TrackedFrame};

const MAGIC: &str = "annotrack-dump/1";

pub fn write_tracker_dump(frames: &[TrackedFrame], direction: Direction, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let side = match frames.first() {
        Some(f) => f.response_map.side(),
        None => 0,
    };
    let mut index = format!("{},{},{}\n", MAGIC, direction.as_str(), side);
    for f in frames {
        if f.direction != direction {
            return Err(Error::invalid(format!(
                "frame {}: direction mismatch in dump",
                f.frame_idx
            )));
        }
        let map = f.response_map.grid();
        if map.nrows() != side || map.ncols() != side {
            return Err(Error::MapShape {
                frame_idx: f.frame_idx,
                got_rows: map.nrows(),
                got_cols: map.ncols(),
                want: side,
            });
        }
        index.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.frame_idx,
            fmt_real(f.box_.x_min),
            fmt_real(f.box_.y_min),
            fmt_real(f.box_.x_max),
            fmt_real(f.box_.y_max),
            fmt_real(f.confidence)
        ));
        let mut bytes = Vec::with_capacity(side * side * 4);
        for v in map.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let bin = dir.join(format!("{}.bin", f.frame_idx));
        let mut file = fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(&bin, e))?;
    }
    let idx_path = dir.join("index.txt");
    fs::write(&idx_path, index).map_err(|e| Error::io(&idx_path, e))?;
    Ok(())
}

/// Read a dump, validating every response map against the configured side
/// and clipping confidences into [0, 1]. Frames come back sorted by index.
pub fn read_tracker_dump(dir: &Path, direction: Direction, expected_side: usize) -> Result<Vec<TrackedFrame>> {
    let idx_path = dir.join("index.txt");
    let text = fs::read_to_string(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(&idx_path, 1, "empty index"))?;
    let h: Vec<&str> = header.split(',').collect();
    if h.len() != 3 || h[0] != MAGIC {
        return Err(parse_err(&idx_path, 1, format!("bad header, expected `{MAGIC},...`")));
    }
    if h[1] != direction.as_str() {
        return Err(parse_err(
            &idx_path,
            1,
            format!("dump direction is `{}`, expected `{}`", h[1], direction.as_str()),
        ));
    }
    let side: usize = h[2]
        .parse()
        .map_err(|_| parse_err(&idx_path, 1, format!("bad map side `{}`", h[2])))?;
    if side != expected_side {
        return Err(Error::MapShape { frame_idx: 0, got_rows: side, got_cols: side, want: expected_side });
    }

    let mut frames = Vec::new();
    let mut clipped = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(parse_err(&idx_path, lineno, format!("expected 6 fields, got {}", f.len())));
        }
        let frame_idx: usize = f[0]
            .parse()
            .map_err(|_| parse_err(&idx_path, lineno, format!("bad frame_idx `{}`", f[0])))?;
        let mut coords = [0.0f64; 4];
        for (k, c) in coords.iter_mut().enumerate() {
            *c = f[k + 1]
                .parse()
                .map_err(|_| parse_err(&idx_path, lineno, format!("bad coordinate `{}`", f[k + 1])))?;
        }
        let raw_conf: f64 = f[5]
            .parse()
            .map_err(|_| parse_err(&idx_path, lineno, format!("bad confidence `{}`", f[5])))?;
        if !raw_conf.is_finite() {
            return Err(parse_err(&idx_path, lineno, format!("non-finite confidence `{}`", f[5])));
        }
        let confidence = clip01(raw_conf);
        if confidence != raw_conf {
            clipped += 1;
        }
        let box_ = BBox::new(coords[0], coords[1], coords[2], coords[3])?;

        let bin = dir.join(format!("{frame_idx}.bin"));
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != side * side * 4 {
            return Err(Error::MapShape {
                frame_idx,
                got_rows: bytes.len() / 4 / side.max(1),
                got_cols: side,
                want: expected_side,
            });
        }
        let mut vals = Vec::with_capacity(side * side);
        for chunk in bytes.chunks_exact(4) {
            vals.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        let grid = Array2::from_shape_vec((side, side), vals).expect("length checked above");
        frames.push(TrackedFrame {
            frame_idx,
            direction,
            box_,
            confidence,
            response_map: ResponseMap::new(grid),
        });
    }
    if clipped > 0 {
        eprintln!(
            "warning: {} confidence value(s) in {} clipped into [0, 1]",
            clipped,
            dir.display()
        );
    }
    frames.sort_by_key(|f| f.frame_idx);
    for pair in frames.windows(2) {
        if pair[0].frame_idx == pair[1].frame_idx {
            return Err(Error::DuplicateFrame(pair[0].frame_idx));
        }
    }
    Ok(frames)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn frame(idx: usize, side: usize, conf: f64) -> TrackedFrame {
        let grid = Array2::from_shape_fn((side, side), |(r, c)| (r * side + c + idx) as f32 * 0.01);
        TrackedFrame {
            frame_idx: idx,
            direction: Direction::Forward,
            box_: BBox::new(1.0 + idx as f64, 2.0, 11.0 + idx as f64, 12.0).unwrap(),
            confidence: conf,
            response_map: ResponseMap::new(grid),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<_> = (0..5).map(|i| frame(i, 8, 0.5 + 0.1 * i as f64)).collect();
        write_tracker_dump(&frames, Direction::Forward, dir.path()).unwrap();
        let back = read_tracker_dump(dir.path(), Direction::Forward, 8).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn overrange_confidence_clipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut f0 = frame(0, 4, 1.0);
        f0.confidence = 1.3;
        write_tracker_dump(&[f0], Direction::Forward, dir.path()).unwrap();
        let back = read_tracker_dump(dir.path(), Direction::Forward, 4).unwrap();
        assert_eq!(back[0].confidence, 1.0);
    }

    #[test]
    fn shape_mismatch_errors() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![frame(0, 16, 0.9)];
        write_tracker_dump(&frames, Direction::Forward, dir.path()).unwrap();
        let err = read_tracker_dump(dir.path(), Direction::Forward, 32).unwrap_err();
        assert!(matches!(err, Error::MapShape { .. }));
    }

    #[test]
    fn malformed_index_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        write_tracker_dump(&[frame(0, 4, 0.5)], Direction::Forward, dir.path()).unwrap();
        let idx = dir.path().join("index.txt");
        let mut text = fs::read_to_string(&idx).unwrap();
        text.push_str("oops\n");
        fs::write(&idx, text).unwrap();
        let err = read_tracker_dump(dir.path(), Direction::Forward, 4).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn wrong_direction_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_tracker_dump(&[frame(0, 4, 0.5)], Direction::Forward, dir.path()).unwrap();
        assert!(read_tracker_dump(dir.path(), Direction::Backward, 4).is_err());
    }
}

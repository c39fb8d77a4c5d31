//! Line-record annotation file.
//!
//! Layout:
//!
//! ```text
//! annotrack-ann/1,<video_id>,<frame_count>,<width>,<height>,<anchor_interval>
//! <frame_idx>,<source>,<x_min>,<y_min>,<x_max>,<y_max>,<quality>
//! ...
//! ```
//!
//! Box and quality fields are left empty for `failure` records and the
//! quality field is empty for `manual` records. Reals are printed with the
//! shortest representation that round-trips, so read(write(x)) is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::store::{AnnotationRecord, BBox, Source, VideoMeta};

const MAGIC: &str = "annotrack-ann/1";

pub fn write_annotations(records: &[AnnotationRecord], meta: &VideoMeta, path: &Path) -> Result<()> {
    if meta.video_id.contains(',') || meta.video_id.contains('\n') {
        return Err(Error::invalid("video_id must not contain ',' or newline"));
    }
    let mut seen = vec![false; meta.frame_count];
    let mut prev: Option<usize> = None;
    for rec in records {
        rec.validate()?;
        meta.check_frame(rec.frame_idx)?;
        if seen[rec.frame_idx] {
            return Err(Error::DuplicateFrame(rec.frame_idx));
        }
        seen[rec.frame_idx] = true;
        if let Some(p) = prev {
            if rec.frame_idx <= p {
                return Err(Error::invalid(format!(
                    "records not sorted: frame {} after {}",
                    rec.frame_idx, p
                )));
            }
        }
        prev = Some(rec.frame_idx);
    }

    let mut out = String::new();
    out.push_str(&format!(
        "{},{},{},{},{},{}\n",
        MAGIC, meta.video_id, meta.frame_count, meta.frame_width, meta.frame_height, meta.anchor_interval
    ));
    for rec in records {
        let (bx, by, bx2, by2) = match &rec.box_ {
            Some(b) => (fmt_real(b.x_min), fmt_real(b.y_min), fmt_real(b.x_max), fmt_real(b.y_max)),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        let q = rec.quality.map(fmt_real).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            rec.frame_idx,
            rec.source.as_str(),
            bx,
            by,
            bx2,
            by2,
            q
        ));
    }

    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<(Vec<AnnotationRecord>, VideoMeta)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let h: Vec<&str> = header.split(',').collect();
    if h.len() != 6 || h[0] != MAGIC {
        return Err(parse_err(path, 1, format!("bad header, expected `{MAGIC},...`")));
    }
    let meta = VideoMeta {
        video_id: h[1].to_string(),
        frame_count: parse_field(path, 1, h[2], "frame_count")?,
        frame_width: parse_field(path, 1, h[3], "width")?,
        frame_height: parse_field(path, 1, h[4], "height")?,
        anchor_interval: parse_field(path, 1, h[5], "anchor_interval")?,
    };

    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(parse_err(path, lineno, format!("expected 7 fields, got {}", f.len())));
        }
        let frame_idx: usize = parse_field(path, lineno, f[0], "frame_idx")?;
        let source = Source::parse(f[1])
            .ok_or_else(|| parse_err(path, lineno, format!("unknown source `{}`", f[1])))?;
        let box_ = if f[2].is_empty() {
            None
        } else {
            let x_min: f64 = parse_field(path, lineno, f[2], "x_min")?;
            let y_min: f64 = parse_field(path, lineno, f[3], "y_min")?;
            let x_max: f64 = parse_field(path, lineno, f[4], "x_max")?;
            let y_max: f64 = parse_field(path, lineno, f[5], "y_max")?;
            Some(BBox::new(x_min, y_min, x_max, y_max)?)
        };
        let quality = if f[6].is_empty() {
            None
        } else {
            Some(parse_field(path, lineno, f[6], "quality")?)
        };
        let rec = AnnotationRecord { frame_idx, source, box_, quality };
        rec.validate()?;
        meta.check_frame(frame_idx)?;
        records.push(rec);
    }
    Ok((records, meta))
}

/// Shortest decimal that parses back to the same f64.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v}")
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, s: &str, name: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(path, line, format!("bad {name} `{s}`")))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Source;

    fn meta(n: usize) -> VideoMeta {
        VideoMeta::new("vid", n, 640, 480)
    }

    fn rec(frame_idx: usize, source: Source, box_: Option<BBox>, quality: Option<f64>) -> AnnotationRecord {
        AnnotationRecord { frame_idx, source, box_, quality }
    }

    #[test]
    fn three_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ann");
        let records = vec![
            rec(0, Source::Manual, Some(BBox::new(1.5, 2.25, 10.0, 20.0).unwrap()), None),
            rec(1, Source::Forward, Some(BBox::new(1.0, 2.0, 9.5, 19.0).unwrap()), Some(0.83)),
            rec(2, Source::Failure, None, None),
        ];
        write_annotations(&records, &meta(3), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4); // header + 3 records
        let (back, m) = read_annotations(&path).unwrap();
        assert_eq!(back, records);
        assert_eq!(m, meta(3));
    }

    #[test]
    fn empty_set_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ann");
        write_annotations(&[], &meta(0), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let (back, m) = read_annotations(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(m.frame_count, 0);
    }

    #[test]
    fn duplicate_frame_rejected_with_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.ann");
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let records = vec![
            rec(1, Source::Manual, Some(b), None),
            rec(1, Source::Manual, Some(b), None),
        ];
        let err = write_annotations(&records, &meta(3), &path).unwrap_err();
        assert!(err.to_string().contains('1'), "{err}");
    }

    #[test]
    fn out_of_range_frame_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oor.ann");
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let records = vec![rec(5, Source::Manual, Some(b), None)];
        assert!(write_annotations(&records, &meta(3), &path).is_err());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ann");
        std::fs::write(&path, "annotrack-ann/1,v,3,10,10,30\n0,manual,0,0,1,1,\nnonsense\n").unwrap();
        let err = read_annotations(&path).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }
}

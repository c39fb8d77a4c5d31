//! Snippet splitting, forward/backward merge, and fixed-length windowing.
//!
//! Videos are split at manual anchor frames into spans. Each span is tracked
//! forward from its start anchor and backward from its end anchor, then cut
//! into length-`L` windows for the sequential models. Overlapping window
//! predictions are averaged back onto frames by [`scatter_window_outputs`].

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::store::{Direction, TrackedFrame, VideoMeta};

/// Frames between two consecutive manual anchors, with both tracking passes.
///
/// `frames_fwd` covers `(start_idx, end_idx]` in ascending order;
/// `frames_bwd` covers `[start_idx, end_idx)` in descending (tracking) order.
#[derive(Debug, Clone)]
pub struct Snippet {
    pub start_idx: usize,
    pub end_idx: usize,
    pub frames_fwd: Vec<TrackedFrame>,
    pub frames_bwd: Vec<TrackedFrame>,
}

/// A fixed-length run of tracked frames fed to the sequential models.
///
/// Spans shorter than `L` are edge-padded by duplicating the nearest real
/// frame; padded slots are flagged invalid and never contribute to losses or
/// scattered outputs.
#[derive(Debug, Clone)]
pub struct Window {
    pub direction: Direction,
    /// Offset of the window within its span's frame list.
    pub offset: usize,
    pub frames: Vec<TrackedFrame>,
    pub valid_mask: Vec<bool>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Split `[0, frame_count)` into spans bounded by consecutive manual anchors.
///
/// The first and last frame must be anchors; input order does not matter.
pub fn split_video(meta: &VideoMeta, manual_frames: &[usize]) -> Result<Vec<(usize, usize)>> {
    let mut anchors: Vec<usize> = manual_frames.to_vec();
    anchors.sort_unstable();
    anchors.dedup();
    if anchors.len() < 2 {
        return Err(Error::invalid("need at least 2 manual anchors"));
    }
    for &a in &anchors {
        meta.check_frame(a)?;
    }
    if anchors[0] != 0 {
        return Err(Error::invalid("frame 0 must be a manual anchor"));
    }
    if *anchors.last().unwrap() != meta.frame_count - 1 {
        return Err(Error::invalid(format!(
            "last frame {} must be a manual anchor",
            meta.frame_count - 1
        )));
    }
    Ok(anchors.windows(2).map(|w| (w[0], w[1])).collect())
}

/// Group per-direction dump frames into snippets along the given spans.
pub fn build_snippets(
    spans: &[(usize, usize)],
    fwd: &[TrackedFrame],
    bwd: &[TrackedFrame],
) -> Result<Vec<Snippet>> {
    let fwd_by_idx: HashMap<usize, &TrackedFrame> = fwd.iter().map(|f| (f.frame_idx, f)).collect();
    let bwd_by_idx: HashMap<usize, &TrackedFrame> = bwd.iter().map(|f| (f.frame_idx, f)).collect();
    let mut out = Vec::with_capacity(spans.len());
    for &(start, end) in spans {
        let mut frames_fwd = Vec::with_capacity(end - start);
        for idx in start + 1..=end {
            let f = fwd_by_idx
                .get(&idx)
                .ok_or(Error::MissingDirection { frame_idx: idx, direction: "forward" })?;
            frames_fwd.push((*f).clone());
        }
        let mut frames_bwd = Vec::with_capacity(end - start);
        for idx in (start..end).rev() {
            let f = bwd_by_idx
                .get(&idx)
                .ok_or(Error::MissingDirection { frame_idx: idx, direction: "backward" })?;
            frames_bwd.push((*f).clone());
        }
        out.push(Snippet { start_idx: start, end_idx: end, frames_fwd, frames_bwd });
    }
    Ok(out)
}

/// Map every non-anchor frame to its (forward, backward) tracking pair.
pub fn merge_directions(
    snippets: &[Snippet],
) -> Result<BTreeMap<usize, (TrackedFrame, TrackedFrame)>> {
    let mut anchors: Vec<usize> = Vec::new();
    for s in snippets {
        anchors.push(s.start_idx);
        anchors.push(s.end_idx);
    }
    anchors.sort_unstable();
    anchors.dedup();
    let is_anchor = |idx: usize| anchors.binary_search(&idx).is_ok();

    let mut fwd_map: BTreeMap<usize, TrackedFrame> = BTreeMap::new();
    let mut bwd_map: BTreeMap<usize, TrackedFrame> = BTreeMap::new();
    for s in snippets {
        for f in &s.frames_fwd {
            if !is_anchor(f.frame_idx) && fwd_map.insert(f.frame_idx, f.clone()).is_some() {
                return Err(Error::DuplicateFrame(f.frame_idx));
            }
        }
        for f in &s.frames_bwd {
            if !is_anchor(f.frame_idx) && bwd_map.insert(f.frame_idx, f.clone()).is_some() {
                return Err(Error::DuplicateFrame(f.frame_idx));
            }
        }
    }

    let mut out = BTreeMap::new();
    for (idx, f) in fwd_map {
        let b = bwd_map
            .remove(&idx)
            .ok_or(Error::MissingDirection { frame_idx: idx, direction: "backward" })?;
        out.insert(idx, (f, b));
    }
    if let Some((&idx, _)) = bwd_map.iter().next() {
        return Err(Error::MissingDirection { frame_idx: idx, direction: "forward" });
    }
    Ok(out)
}

/// Cut a span's frame list into windows of length `length` at multiples of
/// `stride`, with a right-aligned tail window so the span end is covered.
pub fn make_windows(frames: &[TrackedFrame], length: usize, stride: usize) -> Result<Vec<Window>> {
    if length < 2 {
        return Err(Error::invalid("window length must be >= 2"));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    if stride > length {
        // a stride past the window length would leave uncovered frames
        return Err(Error::invalid(format!("stride {stride} exceeds window length {length}")));
    }
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let direction = frames[0].direction;
    let n = frames.len();

    if n < length {
        // single edge-padded window
        let mut slots = frames.to_vec();
        let mut valid = vec![true; n];
        let last = frames[n - 1].clone();
        while slots.len() < length {
            slots.push(last.clone());
            valid.push(false);
        }
        return Ok(vec![Window { direction, offset: 0, frames: slots, valid_mask: valid }]);
    }

    let mut offsets: Vec<usize> = (0..=n - length).step_by(stride).collect();
    let tail = n - length;
    if *offsets.last().unwrap() != tail {
        offsets.push(tail);
    }
    Ok(offsets
        .into_iter()
        .map(|offset| Window {
            direction,
            offset,
            frames: frames[offset..offset + length].to_vec(),
            valid_mask: vec![true; length],
        })
        .collect())
}

/// Average per-slot window outputs back onto frames.
///
/// `values[w][slot]` is the model output vector for slot `slot` of
/// `windows[w]`. Padded slots are skipped. Contributions are summed in a
/// fixed order (window offset, then slot) so the result does not depend on
/// the order windows are supplied in.
pub fn scatter_window_outputs(
    windows: &[Window],
    values: &[Vec<Vec<f64>>],
) -> Result<BTreeMap<usize, Vec<f64>>> {
    if windows.len() != values.len() {
        return Err(Error::invalid(format!(
            "scatter: {} windows but {} value lists",
            windows.len(),
            values.len()
        )));
    }
    // frame -> [(offset, slot, value)]
    let mut contrib: BTreeMap<usize, Vec<(usize, usize, &[f64])>> = BTreeMap::new();
    let mut touched: BTreeMap<usize, bool> = BTreeMap::new();
    for (w, vals) in windows.iter().zip(values) {
        if vals.len() != w.len() {
            return Err(Error::invalid(format!(
                "scatter: window of {} slots got {} values",
                w.len(),
                vals.len()
            )));
        }
        for (slot, (frame, v)) in w.frames.iter().zip(vals).enumerate() {
            let e = touched.entry(frame.frame_idx).or_insert(false);
            if w.valid_mask[slot] {
                *e = true;
                contrib
                    .entry(frame.frame_idx)
                    .or_default()
                    .push((w.offset, slot, v.as_slice()));
            }
        }
    }
    for (&idx, &covered) in &touched {
        if !covered {
            return Err(Error::invalid(format!(
                "frame {idx} covered by zero valid window slots"
            )));
        }
    }

    let mut out = BTreeMap::new();
    for (idx, mut entries) in contrib {
        entries.sort_by_key(|&(offset, slot, _)| (offset, slot));
        let dim = entries[0].2.len();
        let mut sum = vec![0.0; dim];
        for &(_, _, v) in &entries {
            if v.len() != dim {
                return Err(Error::invalid("scatter: inconsistent value dimensions"));
            }
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
        let n = entries.len() as f64;
        for s in &mut sum {
            *s /= n;
        }
        out.insert(idx, sum);
    }
    Ok(out)
}

/// Scalar convenience wrapper around [`scatter_window_outputs`].
pub fn scatter_scalar_outputs(
    windows: &[Window],
    values: &[Vec<f64>],
) -> Result<BTreeMap<usize, f64>> {
    let wrapped: Vec<Vec<Vec<f64>>> = values
        .iter()
        .map(|vs| vs.iter().map(|&v| vec![v]).collect())
        .collect();
    Ok(scatter_window_outputs(windows, &wrapped)?
        .into_iter()
        .map(|(k, v)| (k, v[0]))
        .collect())
}

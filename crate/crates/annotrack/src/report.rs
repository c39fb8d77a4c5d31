//! Ablation reporting: evaluate the annotation variants (single-direction,
//! selection, failure flagging, refinement with and without the geometric
//! prior) from shared per-frame intermediates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::infer::{FrameIntermediate, InferenceConfig, TieBreak};
use crate::metrics::{iou, report_from_ious, EvalReport};
use crate::store::BBox;

/// One evaluated sequence: intermediates for every non-anchor frame plus
/// ground truth and the frame/anchor accounting.
pub struct SequenceEval {
    pub inters: Vec<FrameIntermediate>,
    pub gt: BTreeMap<usize, BBox>,
    pub frame_count: usize,
    pub anchor_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Forward tracker only, raw boxes.
    Forward,
    /// Backward tracker only, raw boxes.
    Backward,
    /// Per-frame direction selection, no failure flagging.
    Select,
    /// Selection plus failure flagging.
    SelectFlag,
    /// Full pipeline minus refinement (same boxes as SelectFlag).
    NoRefine,
    /// Mask refinement without the Gaussian prior.
    VisualRefine,
    /// Mask refinement with the learned Gaussian prior.
    VisualGeometryRefine,
}

pub const ABLATION_VARIANTS: [Variant; 7] = [
    Variant::Forward,
    Variant::Backward,
    Variant::Select,
    Variant::SelectFlag,
    Variant::NoRefine,
    Variant::VisualRefine,
    Variant::VisualGeometryRefine,
];

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Forward => "fwd",
            Variant::Backward => "bwd",
            Variant::Select => "sel",
            Variant::SelectFlag => "sel-flag",
            Variant::NoRefine => "no-refine",
            Variant::VisualRefine => "v-refine",
            Variant::VisualGeometryRefine => "vg-refine",
        }
    }

    fn flags_failures(&self) -> bool {
        !matches!(self, Variant::Forward | Variant::Backward | Variant::Select)
    }
}

/// The box this variant emits for one frame, or `None` when the frame is
/// flagged for relabeling.
fn variant_box(v: Variant, i: &FrameIntermediate, cfg: &InferenceConfig) -> Option<BBox> {
    match v {
        Variant::Forward => return Some(i.raw_fwd),
        Variant::Backward => return Some(i.raw_bwd),
        _ => {}
    }
    let best = i.score_fwd.max(i.score_bwd);
    if v.flags_failures() && !(best > cfg.failure_threshold) {
        return None;
    }
    let forward_wins = match cfg.tie_break {
        TieBreak::ForwardFirst => i.score_fwd >= i.score_bwd,
    };
    let (refined, raw) = match (v, forward_wins) {
        (Variant::VisualRefine, true) => (i.v_fwd, i.raw_fwd),
        (Variant::VisualRefine, false) => (i.v_bwd, i.raw_bwd),
        (Variant::VisualGeometryRefine, true) => (i.vg_fwd, i.raw_fwd),
        (Variant::VisualGeometryRefine, false) => (i.vg_bwd, i.raw_bwd),
        (_, true) => (None, i.raw_fwd),
        (_, false) => (None, i.raw_bwd),
    };
    Some(refined.unwrap_or(raw))
}

/// Evaluate every ablation variant over a set of sequences.
pub fn ablation_reports(
    seqs: &[SequenceEval],
    cfg: &InferenceConfig,
    acc_thresholds: &[f64],
) -> Result<Vec<(Variant, EvalReport)>> {
    if seqs.is_empty() {
        return Err(Error::invalid("no sequences to evaluate"));
    }
    let total_frames: usize = seqs.iter().map(|s| s.frame_count).sum();
    let mut out = Vec::with_capacity(ABLATION_VARIANTS.len());
    for v in ABLATION_VARIANTS {
        let mut ious = Vec::new();
        let mut human: usize = seqs.iter().map(|s| s.anchor_count).sum();
        for s in seqs {
            for i in &s.inters {
                let g = s
                    .gt
                    .get(&i.frame_idx)
                    .ok_or_else(|| Error::invalid(format!("no ground truth for frame {}", i.frame_idx)))?;
                match variant_box(v, i, cfg) {
                    Some(b) => ious.push(iou(&b, g)),
                    None => human += 1,
                }
            }
        }
        let manual_fraction = human as f64 / total_frames as f64;
        out.push((v, report_from_ious(&ious, manual_fraction, total_frames, acc_thresholds)));
    }
    Ok(out)
}

/// Plain-text ablation table, one row per variant.
pub fn format_ablation(rows: &[(Variant, EvalReport)]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<10} {:>8} {:>8} {:>8} {:>9} {:>8} {:>7}\n",
        "variant", "miou", "acc@0.5", "acc@0.7", "err_rate", "manual", "frames"
    ));
    for (v, r) in rows {
        let a5 = r.acc_at.get("acc@0.5").copied().unwrap_or(f64::NAN);
        let a7 = r.acc_at.get("acc@0.7").copied().unwrap_or(f64::NAN);
        s.push_str(&format!(
            "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>8.4} {:>7}\n",
            v.name(),
            r.miou,
            a5,
            a7,
            r.err_rate,
            r.manual_fraction,
            r.automatic_frames
        ));
    }
    s
}

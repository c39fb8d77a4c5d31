//! Final-stage inference: decode refined boxes from weighted masks, pick a
//! direction per frame by quality score, flag failures, and assemble the
//! finished annotation set.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::assess::AssessModel;
use crate::error::{Error, Result};
use crate::pipeline::{build_snippets, make_windows, merge_directions, scatter_scalar_outputs, scatter_window_outputs, split_video, Window};
use crate::refine::{
    apply_weight, gaussian_weight_map, AggAxis, AggOp, GaussianParams, GeometryModel, MaskPredictor,
    MaskQuery, SearchRegion, SegMask,
};
use crate::refine::crop_search_region;
use crate::store::{AnnotationRecord, BBox, Direction, Source, TrackedFrame, VideoMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    ForwardFirst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    /// Profile threshold for box decoding.
    pub tau: f64,
    /// Frames whose best score is at or below this become failures.
    pub failure_threshold: f64,
    pub tie_break: TieBreak,
    /// Window stride for score scattering.
    pub stride: usize,
    pub agg_op: AggOp,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            tau: 0.5,
            failure_threshold: 0.0,
            tie_break: TieBreak::ForwardFirst,
            stride: 10,
            agg_op: AggOp::RectifiedClip,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid("tau must lie in (0, 1]"));
        }
        if !self.failure_threshold.is_finite() {
            return Err(Error::invalid("failure threshold must be finite"));
        }
        Ok(())
    }
}

/// Decode a box from a mask: threshold the rectified row/column profiles,
/// take min/max surviving indices, map cell edges back to frame pixels.
/// Returns `None` when either profile set is empty.
pub fn refine_box(mask: &SegMask, region: &SearchRegion, meta: &VideoMeta, cfg: &InferenceConfig) -> Option<BBox> {
    let (cols, rows) = refine_box_indices(&mask.grid, cfg.tau, cfg.agg_op)?;
    let x_min = region.grid_x_to_frame(cols.0 as f64);
    let x_max = region.grid_x_to_frame(cols.1 as f64 + 1.0);
    let y_min = region.grid_y_to_frame(rows.0 as f64);
    let y_max = region.grid_y_to_frame(rows.1 as f64 + 1.0);
    let b = BBox {
        x_min: x_min.max(0.0),
        y_min: y_min.max(0.0),
        x_max: x_max.min(meta.frame_width as f64),
        y_max: y_max.min(meta.frame_height as f64),
    };
    if b.is_valid() {
        Some(b)
    } else {
        None
    }
}

/// Grid-index form shared with the brute-force oracle: ((col_min, col_max),
/// (row_min, row_max)) of profile entries above tau.
pub fn refine_box_indices(grid: &Array2<f64>, tau: f64, op: AggOp) -> Option<((usize, usize), (usize, usize))> {
    let vertical = crate::refine::aggregate(grid, AggAxis::Vertical, op);
    let horizontal = crate::refine::aggregate(grid, AggAxis::Horizontal, op);
    let cols: Vec<usize> = vertical
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > tau)
        .map(|(i, _)| i)
        .collect();
    let rows: Vec<usize> = horizontal
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > tau)
        .map(|(i, _)| i)
        .collect();
    match (cols.first(), cols.last(), rows.first(), rows.last()) {
        (Some(&c0), Some(&c1), Some(&r0), Some(&r1)) => Some(((c0, c1), (r0, r1))),
        _ => None,
    }
}

/// Pick the higher-scored direction, falling back to the raw tracker box if
/// its refinement came back empty; flag a failure when neither score clears
/// the threshold. Ties go forward.
pub fn select_and_flag(
    frame_idx: usize,
    score_fwd: f64,
    score_bwd: f64,
    refined_fwd: Option<BBox>,
    refined_bwd: Option<BBox>,
    fallback_fwd: &BBox,
    fallback_bwd: &BBox,
    cfg: &InferenceConfig,
) -> AnnotationRecord {
    let best = score_fwd.max(score_bwd);
    if !(best > cfg.failure_threshold) {
        return AnnotationRecord { frame_idx, source: Source::Failure, box_: None, quality: None };
    }
    let forward_wins = match cfg.tie_break {
        TieBreak::ForwardFirst => score_fwd >= score_bwd,
    };
    let (source, refined, fallback, score) = if forward_wins {
        (Source::Forward, refined_fwd, fallback_fwd, score_fwd)
    } else {
        (Source::Backward, refined_bwd, fallback_bwd, score_bwd)
    };
    AnnotationRecord {
        frame_idx,
        source,
        box_: Some(refined.unwrap_or(*fallback)),
        quality: Some(score),
    }
}

/// Everything the annotator consumes for one video.
pub struct VideoInputs<'a> {
    pub meta: &'a VideoMeta,
    /// Manual anchor boxes by frame index.
    pub anchors: &'a BTreeMap<usize, BBox>,
    pub fwd: &'a [TrackedFrame],
    pub bwd: &'a [TrackedFrame],
}

/// Trained models plus the optional crop renderer for mask predictors that
/// need pixels.
pub struct Models<'a> {
    pub assess: &'a AssessModel,
    pub geometry: Option<&'a GeometryModel>,
    pub mask_predictor: Option<&'a dyn MaskPredictor>,
    pub render_frame: Option<&'a dyn Fn(usize) -> Array2<f64>>,
    pub crop_res: usize,
}

/// Per-frame intermediates for one non-anchor frame: scores, raw tracker
/// boxes, and refined boxes with (VG) and without (V) the Gaussian prior.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameIntermediate {
    pub frame_idx: usize,
    pub score_fwd: f64,
    pub score_bwd: f64,
    pub raw_fwd: BBox,
    pub raw_bwd: BBox,
    pub v_fwd: Option<BBox>,
    pub v_bwd: Option<BBox>,
    pub vg_fwd: Option<BBox>,
    pub vg_bwd: Option<BBox>,
}

/// Run scoring and refinement over a whole video, producing one
/// intermediate per non-anchor frame, deterministically.
pub fn compute_intermediates(inputs: &VideoInputs, models: &Models, cfg: &InferenceConfig) -> Result<Vec<FrameIntermediate>> {
    cfg.validate()?;
    let anchor_list: Vec<usize> = inputs.anchors.keys().copied().collect();
    let spans = split_video(inputs.meta, &anchor_list)?;
    let snippets = build_snippets(&spans, inputs.fwd, inputs.bwd)?;
    let window_len = models.assess.cfg.window_len;

    let mut windows_f: Vec<Window> = Vec::new();
    let mut windows_b: Vec<Window> = Vec::new();
    for s in &snippets {
        windows_f.extend(make_windows(&s.frames_fwd, window_len, cfg.stride)?);
        windows_b.extend(make_windows(&s.frames_bwd, window_len, cfg.stride)?);
    }

    let mut scores = BTreeMap::new();
    for (dir, windows) in [(Direction::Forward, &windows_f), (Direction::Backward, &windows_b)] {
        let mut values = Vec::with_capacity(windows.len());
        for w in windows {
            values.push(models.assess.predict_scores(w, inputs.meta)?);
        }
        scores.insert(dir, scatter_scalar_outputs(windows, &values)?);
    }

    // per-frame Gaussian parameters, overlap-averaged component-wise
    let mut thetas: BTreeMap<Direction, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    if let Some(geom) = models.geometry {
        for (dir, windows) in [(Direction::Forward, &windows_f), (Direction::Backward, &windows_b)] {
            let mut values = Vec::with_capacity(windows.len());
            for w in windows {
                let params = geom.predict_geometry(w, inputs.meta)?;
                values.push(
                    params
                        .iter()
                        .map(|t| vec![t.mu1, t.mu2, t.sigma1, t.sigma2, t.alpha])
                        .collect::<Vec<_>>(),
                );
            }
            thetas.insert(dir, scatter_window_outputs(windows, &values)?);
        }
    }

    let merged = merge_directions(&snippets)?;
    let mask_dims = models
        .geometry
        .map(|g| (g.cfg.mask_rows, g.cfg.mask_cols))
        .unwrap_or((64, 64));

    let mut out = Vec::with_capacity(merged.len());
    for (frame_idx, (tf, tb)) in &merged {
        let score_fwd = *scores[&Direction::Forward]
            .get(frame_idx)
            .ok_or_else(|| Error::invalid(format!("no forward score for frame {frame_idx}")))?;
        let score_bwd = *scores[&Direction::Backward]
            .get(frame_idx)
            .ok_or_else(|| Error::invalid(format!("no backward score for frame {frame_idx}")))?;
        let mut inter = FrameIntermediate {
            frame_idx: *frame_idx,
            score_fwd,
            score_bwd,
            raw_fwd: tf.box_,
            raw_bwd: tb.box_,
            v_fwd: None,
            v_bwd: None,
            vg_fwd: None,
            vg_bwd: None,
        };
        if let Some(pred) = models.mask_predictor {
            for (dir, tracked) in [(Direction::Forward, tf), (Direction::Backward, tb)] {
                let (region, crop) = if pred.needs_crops() {
                    let render = models.render_frame.ok_or_else(|| {
                        Error::invalid("mask predictor needs crops but no frame renderer was supplied")
                    })?;
                    let img = render(*frame_idx);
                    let (region, crop) = crop_search_region(
                        &img,
                        &tracked.box_,
                        inputs.meta,
                        models.crop_res,
                        mask_dims.0,
                        mask_dims.1,
                    )?;
                    (region, Some(crop))
                } else {
                    (SearchRegion::from_box(&tracked.box_, inputs.meta, mask_dims.0, mask_dims.1)?, None)
                };
                let query = MaskQuery {
                    frame_idx: *frame_idx,
                    direction: dir,
                    region: &region,
                    template_crop: None,
                    search_crop: crop.as_ref(),
                };
                let initial = pred.predict(&query)?;
                let v_box = refine_box(&initial, &region, inputs.meta, cfg);
                let vg_box = match thetas.get(&dir).and_then(|m| m.get(frame_idx)) {
                    Some(t) => {
                        let theta = GaussianParams {
                            mu1: t[0],
                            mu2: t[1],
                            sigma1: t[2],
                            sigma2: t[3],
                            alpha: t[4],
                        };
                        let weights = gaussian_weight_map(&theta, mask_dims.0, mask_dims.1);
                        let weighted = apply_weight(&initial, &weights)?;
                        refine_box(&weighted, &region, inputs.meta, cfg)
                    }
                    None => None,
                };
                match dir {
                    Direction::Forward => {
                        inter.v_fwd = v_box;
                        inter.vg_fwd = vg_box;
                    }
                    Direction::Backward => {
                        inter.v_bwd = v_box;
                        inter.vg_bwd = vg_box;
                    }
                }
            }
        }
        out.push(inter);
    }
    Ok(out)
}

/// Which refined box feeds the final records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMode {
    /// Raw tracker boxes.
    None,
    /// Mask-derived boxes without the Gaussian prior.
    VisualOnly,
    /// Mask-derived boxes weighted by the learned Gaussian prior.
    VisualGeometry,
}

/// Assemble the finished annotation set: manual records on anchors,
/// selection + failure flagging elsewhere.
pub fn annotate_video(
    inputs: &VideoInputs,
    models: &Models,
    cfg: &InferenceConfig,
    mode: RefineMode,
) -> Result<Vec<AnnotationRecord>> {
    let inters = compute_intermediates(inputs, models, cfg)?;
    let mut records = Vec::with_capacity(inputs.meta.frame_count);
    let mut by_idx: BTreeMap<usize, &FrameIntermediate> = BTreeMap::new();
    for i in &inters {
        by_idx.insert(i.frame_idx, i);
    }
    for frame_idx in 0..inputs.meta.frame_count {
        if let Some(b) = inputs.anchors.get(&frame_idx) {
            records.push(AnnotationRecord {
                frame_idx,
                source: Source::Manual,
                box_: Some(*b),
                quality: None,
            });
            continue;
        }
        let i = by_idx
            .get(&frame_idx)
            .ok_or_else(|| Error::invalid(format!("no tracking intermediates for frame {frame_idx}")))?;
        let (refined_f, refined_b) = match mode {
            RefineMode::None => (None, None),
            RefineMode::VisualOnly => (i.v_fwd, i.v_bwd),
            RefineMode::VisualGeometry => (i.vg_fwd, i.vg_bwd),
        };
        records.push(select_and_flag(
            frame_idx,
            i.score_fwd,
            i.score_bwd,
            refined_f,
            refined_b,
            &i.raw_fwd,
            &i.raw_bwd,
            cfg,
        ));
    }
    Ok(records)
}

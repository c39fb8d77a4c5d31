//! Synthetic benchmark: a deterministic moving target with known boxes, a
//! simulated tracker pair (forward/backward random-walk error with rare
//! drift events), response maps whose amplitude tracks true overlap, and
//! builders that turn a sequence into training samples.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::assess::TrainSample;
use crate::error::{Error, Result};
use crate::metrics::{iou, quality_from_iou, QualityMapParams};
use crate::pipeline::{build_snippets, make_windows, split_video};
use crate::refine::{BoxMask, GeometryConfig, MaskPredictor, MaskQuery, RefineSample, RefineSlot, SearchRegion};
use crate::store::{clip01, BBox, Direction, ResponseMap, TrackedFrame, VideoMeta};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub video_id: String,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub anchor_interval: usize,
    /// Per-step tracker position random walk, pixels.
    pub sigma_pos: f64,
    /// Per-step tracker log-scale random walk.
    pub sigma_scale: f64,
    /// Per-step probability of a drift event (tracker jumps off target).
    pub p_drift: f64,
    /// Drift jump size, as a fraction of box size.
    pub drift_scale: f64,
    /// Noise on the confidence / response amplitude.
    pub conf_noise: f64,
    /// Response map resolution.
    pub map_side: usize,
    pub map_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            video_id: "synth".to_string(),
            frame_count: 91,
            width: 640,
            height: 480,
            anchor_interval: 30,
            sigma_pos: 2.5,
            sigma_scale: 0.015,
            p_drift: 0.05,
            drift_scale: 0.9,
            conf_noise: 0.15,
            map_side: 32,
            map_noise: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub meta: VideoMeta,
    pub gt: BTreeMap<usize, BBox>,
    /// Manual boxes on anchor frames (ground truth there).
    pub anchors: BTreeMap<usize, BBox>,
    pub fwd: Vec<TrackedFrame>,
    pub bwd: Vec<TrackedFrame>,
}

/// Smooth deterministic trajectory: sum of low-frequency sinusoids with
/// seeded phases, kept inside the frame with a margin.
fn gt_box(cfg: &SynthConfig, phases: &[f64; 6], t: usize) -> BBox {
    let ft = t as f64;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let cx = w / 2.0
        + 0.28 * w * (0.013 * ft + phases[0]).sin()
        + 0.08 * w * (0.041 * ft + phases[1]).sin();
    let cy = h / 2.0
        + 0.28 * h * (0.011 * ft + phases[2]).sin()
        + 0.08 * h * (0.037 * ft + phases[3]).sin();
    let bw = 70.0 * (1.0 + 0.18 * (0.019 * ft + phases[4]).sin());
    let bh = 58.0 * (1.0 + 0.18 * (0.023 * ft + phases[5]).sin());
    BBox {
        x_min: (cx - bw / 2.0).clamp(0.0, w - bw),
        y_min: (cy - bh / 2.0).clamp(0.0, h - bh),
        x_max: (cx + bw / 2.0).clamp(bw, w),
        y_max: (cy + bh / 2.0).clamp(bh, h),
    }
}

fn anchor_frames(cfg: &SynthConfig) -> Vec<usize> {
    let mut anchors: Vec<usize> = (0..cfg.frame_count).step_by(cfg.anchor_interval).collect();
    if *anchors.last().unwrap() != cfg.frame_count - 1 {
        anchors.push(cfg.frame_count - 1);
    }
    anchors
}

/// Response map: a Gaussian bump whose amplitude is the noisy overlap and
/// whose peak sits where the tracked box center lands relative to truth.
fn response_map(
    cfg: &SynthConfig,
    amplitude: f64,
    offset: (f64, f64),
    box_size: (f64, f64),
    rng: &mut ChaCha20Rng,
) -> ResponseMap {
    let r = cfg.map_side;
    // peak position in [0,1]^2: centered when on target
    let px = (0.5 + offset.0 / (2.0 * box_size.0)).clamp(0.05, 0.95);
    let py = (0.5 + offset.1 / (2.0 * box_size.1)).clamp(0.05, 0.95);
    let noise = Normal::new(0.0, cfg.map_noise).unwrap();
    let mut grid = Array2::<f32>::zeros((r, r));
    for row in 0..r {
        for col in 0..r {
            let x = (col as f64 + 0.5) / r as f64;
            let y = (row as f64 + 0.5) / r as f64;
            let d2 = ((x - px) / 0.12).powi(2) + ((y - py) / 0.12).powi(2);
            let v = amplitude * (-0.5 * d2).exp() + noise.sample(rng);
            grid[[row, col]] = clip01(v) as f32;
        }
    }
    ResponseMap::new(grid)
}

/// Simulate one tracked span in one direction. `steps` lists the frame
/// indices in tracking order, starting one step past the anchor.
fn simulate_span(
    cfg: &SynthConfig,
    phases: &[f64; 6],
    gt: &BTreeMap<usize, BBox>,
    direction: Direction,
    anchor: usize,
    steps: &[usize],
    seed: u64,
) -> Vec<TrackedFrame> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let pos = Normal::new(0.0, cfg.sigma_pos).unwrap();
    let scale = Normal::new(0.0, cfg.sigma_scale).unwrap();
    let conf_noise = Normal::new(0.0, cfg.conf_noise).unwrap();
    let _ = phases;
    let anchor_box = gt[&anchor];
    let (mut err_x, mut err_y) = (0.0f64, 0.0f64);
    let mut log_scale = 0.0f64;
    // Frames left in which the tracker reports high confidence and a clean,
    // centered response map despite being off target (locked on a
    // distractor). Only the brief glitch at the drift frame betrays it, so
    // scoring these frames correctly requires temporal context.
    let mut deceive = 0usize;
    let mut frames = Vec::with_capacity(steps.len());
    for &t in steps {
        err_x += pos.sample(&mut rng);
        err_y += pos.sample(&mut rng);
        log_scale += scale.sample(&mut rng);
        let drifted = rng.gen::<f64>() < cfg.p_drift;
        if drifted {
            let ang = rng.gen::<f64>() * std::f64::consts::TAU;
            err_x += cfg.drift_scale * anchor_box.width() * ang.cos();
            err_y += cfg.drift_scale * anchor_box.height() * ang.sin();
            deceive = 5 + (rng.gen::<f64>() * 8.0) as usize;
        }
        let g = gt[&t];
        let (gcx, gcy) = g.center();
        let bw = g.width() * log_scale.exp();
        let bh = g.height() * log_scale.exp();
        let cx = gcx + err_x;
        let cy = gcy + err_y;
        let tracked = BBox {
            x_min: cx - bw / 2.0,
            y_min: cy - bh / 2.0,
            x_max: cx + bw / 2.0,
            y_max: cy + bh / 2.0,
        };
        let overlap = iou(&tracked, &g);
        let (amplitude, map_offset) = if drifted {
            // visible glitch while the tracker jumps
            (clip01(0.15 + 0.1 * rng.gen::<f64>()), (err_x, err_y))
        } else if deceive > 0 {
            deceive -= 1;
            // confidently locked on the wrong thing: per-frame evidence
            // looks like a clean hit, down to the small peak jitter a
            // genuinely on-target frame shows
            let jitter = (pos.sample(&mut rng) * 2.0, pos.sample(&mut rng) * 2.0);
            (clip01(0.9 + conf_noise.sample(&mut rng)), jitter)
        } else {
            (clip01(overlap + conf_noise.sample(&mut rng)), (err_x, err_y))
        };
        let map = response_map(cfg, amplitude, map_offset, (g.width(), g.height()), &mut rng);
        frames.push(TrackedFrame {
            frame_idx: t,
            direction,
            box_: tracked,
            confidence: amplitude,
            response_map: map,
        });
    }
    frames
}

fn span_seed(base: u64, direction: Direction, start: usize) -> u64 {
    let d = match direction {
        Direction::Forward => 1u64,
        Direction::Backward => 2u64,
    };
    base ^ (d.wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ (start as u64).wrapping_mul(0xff51_afd7_ed55_8ccd)
}

/// Generate one full synthetic sequence: ground truth, anchors, and both
/// tracker dumps. Deterministic in `cfg.seed`.
pub fn generate_sequence(cfg: &SynthConfig) -> Result<SynthSequence> {
    if cfg.frame_count < 2 * cfg.anchor_interval {
        return Err(Error::invalid("frame_count too small for anchor interval"));
    }
    if cfg.map_side < 4 {
        return Err(Error::invalid("map_side must be at least 4"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut phases = [0.0f64; 6];
    for p in &mut phases {
        *p = rng.gen::<f64>() * std::f64::consts::TAU;
    }
    let meta = VideoMeta {
        video_id: cfg.video_id.clone(),
        frame_count: cfg.frame_count,
        frame_width: cfg.width,
        frame_height: cfg.height,
        anchor_interval: cfg.anchor_interval,
    };
    let gt: BTreeMap<usize, BBox> = (0..cfg.frame_count).map(|t| (t, gt_box(cfg, &phases, t))).collect();
    let anchors: BTreeMap<usize, BBox> = anchor_frames(cfg).into_iter().map(|a| (a, gt[&a])).collect();
    let anchor_list: Vec<usize> = anchors.keys().copied().collect();
    let spans = split_video(&meta, &anchor_list)?;
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    for &(s, e) in &spans {
        let fsteps: Vec<usize> = (s + 1..=e).collect();
        let bsteps: Vec<usize> = (s..e).rev().collect();
        fwd.extend(simulate_span(cfg, &phases, &gt, Direction::Forward, s, &fsteps, span_seed(cfg.seed, Direction::Forward, s)));
        bwd.extend(simulate_span(cfg, &phases, &gt, Direction::Backward, e, &bsteps, span_seed(cfg.seed, Direction::Backward, s)));
    }
    fwd.sort_by_key(|f| f.frame_idx);
    bwd.sort_by_key(|f| f.frame_idx);
    Ok(SynthSequence { meta, gt, anchors, fwd, bwd })
}

/// Render a grayscale frame: noise floor, bright target rectangle, dimmer
/// distractor rectangles. Deterministic per (seed, frame).
pub fn render_frame(cfg: &SynthConfig, seq: &SynthSequence, frame_idx: usize) -> Array2<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (frame_idx as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    let (h, w) = (cfg.height, cfg.width);
    let mut img = Array2::from_shape_fn((h, w), |_| 0.15 + 0.1 * rng.gen::<f64>());
    let paint = |img: &mut Array2<f64>, b: &BBox, v: f64| {
        let r0 = b.y_min.max(0.0) as usize;
        let r1 = (b.y_max.min(h as f64) as usize).min(h);
        let c0 = b.x_min.max(0.0) as usize;
        let c1 = (b.x_max.min(w as f64) as usize).min(w);
        for r in r0..r1 {
            for c in c0..c1 {
                img[[r, c]] = img[[r, c]].max(v);
            }
        }
    };
    if let Some(g) = seq.gt.get(&frame_idx) {
        // distractors mirror the mask oracle's placement style
        for k in 0..2usize {
            let mut drng = ChaCha20Rng::seed_from_u64(
                cfg.seed ^ (frame_idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (k as u64 + 1),
            );
            let ang = drng.gen::<f64>() * std::f64::consts::TAU;
            let dist = (0.9 + 0.9 * drng.gen::<f64>()) * g.width().max(g.height());
            let scale = 0.35 + 0.35 * drng.gen::<f64>();
            let (cx, cy) = g.center();
            let dw = g.width() * scale;
            let dh = g.height() * scale;
            let d = BBox {
                x_min: cx + dist * ang.cos() - dw / 2.0,
                y_min: cy + dist * ang.sin() - dh / 2.0,
                x_max: cx + dist * ang.cos() + dw / 2.0,
                y_max: cy + dist * ang.sin() + dh / 2.0,
            };
            paint(&mut img, &d, 0.72);
        }
        paint(&mut img, g, 0.9);
    }
    img
}

/// Build quality-scoring training samples: windows over both directions
/// with overlap-derived soft targets per slot.
pub fn assess_samples(
    seq: &SynthSequence,
    window_len: usize,
    stride: usize,
    qp: &QualityMapParams,
) -> Result<Vec<TrainSample>> {
    let anchor_list: Vec<usize> = seq.anchors.keys().copied().collect();
    let spans = split_video(&seq.meta, &anchor_list)?;
    let snippets = build_snippets(&spans, &seq.fwd, &seq.bwd)?;
    let mut samples = Vec::new();
    for s in &snippets {
        for frames in [&s.frames_fwd, &s.frames_bwd] {
            for w in make_windows(frames, window_len, stride)? {
                let targets = w
                    .frames
                    .iter()
                    .map(|f| {
                        let g = seq
                            .gt
                            .get(&f.frame_idx)
                            .ok_or_else(|| Error::invalid(format!("no ground truth for frame {}", f.frame_idx)))?;
                        Ok(quality_from_iou(iou(&f.box_, g), qp))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                samples.push(TrainSample { window: w, targets });
            }
        }
    }
    Ok(samples)
}

/// Build geometric-prior training samples: per valid slot, the predicted
/// mask from `oracle` plus the box target rasterized on the same grid.
pub fn refine_samples(
    seq: &SynthSequence,
    gcfg: &GeometryConfig,
    oracle: &dyn MaskPredictor,
    stride: usize,
) -> Result<Vec<RefineSample>> {
    if oracle.needs_crops() {
        return Err(Error::invalid("refine_samples expects a predictor that works from regions alone"));
    }
    let anchor_list: Vec<usize> = seq.anchors.keys().copied().collect();
    let spans = split_video(&seq.meta, &anchor_list)?;
    let snippets = build_snippets(&spans, &seq.fwd, &seq.bwd)?;
    let mut samples = Vec::new();
    for s in &snippets {
        for (direction, frames) in [(Direction::Forward, &s.frames_fwd), (Direction::Backward, &s.frames_bwd)] {
            for w in make_windows(frames, gcfg.window_len, stride)? {
                let mut slots = Vec::with_capacity(w.frames.len());
                for (i, f) in w.frames.iter().enumerate() {
                    if !w.valid_mask[i] {
                        slots.push(None);
                        continue;
                    }
                    let region = SearchRegion::from_box(&f.box_, &seq.meta, gcfg.mask_rows, gcfg.mask_cols)?;
                    let query = MaskQuery {
                        frame_idx: f.frame_idx,
                        direction,
                        region: &region,
                        template_crop: None,
                        search_crop: None,
                    };
                    let initial_mask = oracle.predict(&query)?;
                    let g = seq
                        .gt
                        .get(&f.frame_idx)
                        .ok_or_else(|| Error::invalid(format!("no ground truth for frame {}", f.frame_idx)))?;
                    let box_mask = BoxMask::from_gt(&region, g);
                    slots.push(Some(RefineSlot { initial_mask, box_mask }));
                }
                samples.push(RefineSample { window: w, slots });
            }
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig { frame_count: 61, map_side: 16, ..SynthConfig::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_sequence(&cfg).unwrap();
        let b = generate_sequence(&cfg).unwrap();
        assert_eq!(a.gt, b.gt);
        assert_eq!(a.fwd.len(), b.fwd.len());
        for (x, y) in a.fwd.iter().zip(&b.fwd) {
            assert_eq!(x.box_, y.box_);
            assert_eq!(x.confidence, y.confidence);
            assert_eq!(x.response_map.grid(), y.response_map.grid());
        }
    }

    #[test]
    fn dumps_cover_expected_frames() {
        let cfg = small_cfg();
        let seq = generate_sequence(&cfg).unwrap();
        // anchors 0, 30, 60; fwd covers (0,30] and (30,60]
        let fwd_frames: Vec<usize> = seq.fwd.iter().map(|f| f.frame_idx).collect();
        assert_eq!(fwd_frames, (1..=60).collect::<Vec<_>>());
        let bwd_frames: Vec<usize> = seq.bwd.iter().map(|f| f.frame_idx).collect();
        assert_eq!(bwd_frames, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn boxes_are_valid_and_confidences_bounded() {
        let cfg = small_cfg();
        let seq = generate_sequence(&cfg).unwrap();
        for f in seq.fwd.iter().chain(&seq.bwd) {
            assert!(f.box_.is_valid(), "frame {}", f.frame_idx);
            assert!((0.0..=1.0).contains(&f.confidence));
        }
        for b in seq.gt.values() {
            assert!(b.is_valid());
            assert!(b.x_min >= 0.0 && b.x_max <= cfg.width as f64);
            assert!(b.y_min >= 0.0 && b.y_max <= cfg.height as f64);
        }
    }

    #[test]
    fn error_grows_away_from_anchor_on_average() {
        // forward tracking error near the span start should beat the error
        // near the span end, averaged over many seeds
        let mut near = 0.0;
        let mut far = 0.0;
        for seed in 0..20 {
            let cfg = SynthConfig { seed, ..small_cfg() };
            let seq = generate_sequence(&cfg).unwrap();
            for f in &seq.fwd {
                let pos = f.frame_idx % cfg.anchor_interval;
                let overlap = iou(&f.box_, &seq.gt[&f.frame_idx]);
                if pos >= 1 && pos <= 5 {
                    near += overlap;
                } else if pos == 0 || pos >= 25 {
                    far += overlap;
                }
            }
        }
        assert!(near > far * 1.02, "near={near} far={far}");
    }

    #[test]
    fn amplitude_tracks_overlap() {
        let cfg = SynthConfig { conf_noise: 0.0, p_drift: 0.0, ..small_cfg() };
        let seq = generate_sequence(&cfg).unwrap();
        for f in &seq.fwd {
            let overlap = iou(&f.box_, &seq.gt[&f.frame_idx]);
            assert!((f.confidence - clip01(overlap)).abs() < 1e-12);
        }
    }

    #[test]
    fn assess_samples_have_aligned_targets() {
        let cfg = small_cfg();
        let seq = generate_sequence(&cfg).unwrap();
        let qp = QualityMapParams::default();
        let samples = assess_samples(&seq, 20, 10, &qp).unwrap();
        assert!(!samples.is_empty());
        for s in &samples {
            assert_eq!(s.targets.len(), s.window.frames.len());
            for t in &s.targets {
                assert!(t.is_finite() && *t >= -1.0 && *t <= 1.0);
            }
        }
    }

    #[test]
    fn rendered_frame_is_bright_inside_target() {
        let cfg = small_cfg();
        let seq = generate_sequence(&cfg).unwrap();
        let img = render_frame(&cfg, &seq, 10);
        let g = &seq.gt[&10];
        let (cx, cy) = g.center();
        assert!(img[[cy as usize, cx as usize]] >= 0.9);
        assert!(img[[2, 2]] < 0.5 || img[[cfg.height - 3, cfg.width - 3]] < 0.5);
    }
}

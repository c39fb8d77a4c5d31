//! Visual-geometry refinement.
//!
//! A pluggable mask predictor proposes an initial target mask inside a
//! search region; a learned sequential geometric module predicts per-frame
//! Gaussian weight parameters; the weighted mask is aggregated into
//! row/column occupancy profiles and trained against binary box-mask
//! profiles (box-level supervision only).

mod mask_predictor;

pub use mask_predictor::{resize_image, train_masknet, MaskPredictor, MaskQuery, SyntheticMaskOracle, TrainableMaskNet};

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::assess::{TrainConfig, TrainReport};
use crate::ckpt::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{
    softplus, softplus_deriv, Adam, ConvExtractor, ExtractorCache, Parameterized, PredictorKind,
    SeqCache, SequencePredictor,
};
use crate::pipeline::Window;
use crate::store::{BBox, Direction, VideoMeta};

pub const GEOMETRY_MAGIC: &str = "annotrack-geometry/1";

/// Minimum sigma after the positive mapping.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Crop centered on a source box with twice its size; carries the exact
/// transform between mask-grid and frame-pixel coordinates.
///
/// The transform is defined on the unclipped region so it stays invertible;
/// `clipped` records the part that actually overlaps the frame. Grid
/// coordinates are continuous: column `k` spans `[k, k+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchRegion {
    pub center: (f64, f64),
    pub width: f64,
    pub height: f64,
    pub source_box: BBox,
    /// Region intersected with the frame bounds, if any overlap exists.
    pub clipped: Option<BBox>,
    pub mask_rows: usize,
    pub mask_cols: usize,
}

impl SearchRegion {
    pub fn from_box(box_: &BBox, meta: &VideoMeta, mask_rows: usize, mask_cols: usize) -> Result<Self> {
        if !box_.is_valid() {
            return Err(Error::InvalidBox {
                x_min: box_.x_min,
                y_min: box_.y_min,
                x_max: box_.x_max,
                y_max: box_.y_max,
            });
        }
        let center = box_.center();
        let width = 2.0 * box_.width();
        let height = 2.0 * box_.height();
        let x0 = center.0 - width / 2.0;
        let y0 = center.1 - height / 2.0;
        let cx0 = x0.max(0.0);
        let cy0 = y0.max(0.0);
        let cx1 = (x0 + width).min(meta.frame_width as f64);
        let cy1 = (y0 + height).min(meta.frame_height as f64);
        let clipped = if cx0 < cx1 && cy0 < cy1 {
            Some(BBox { x_min: cx0, y_min: cy0, x_max: cx1, y_max: cy1 })
        } else {
            None
        };
        Ok(SearchRegion { center, width, height, source_box: *box_, clipped, mask_rows, mask_cols })
    }

    pub fn x0(&self) -> f64 {
        self.center.0 - self.width / 2.0
    }

    pub fn y0(&self) -> f64 {
        self.center.1 - self.height / 2.0
    }

    /// Continuous grid column -> frame x.
    pub fn grid_x_to_frame(&self, gx: f64) -> f64 {
        self.x0() + gx / self.mask_cols as f64 * self.width
    }

    pub fn grid_y_to_frame(&self, gy: f64) -> f64 {
        self.y0() + gy / self.mask_rows as f64 * self.height
    }

    pub fn frame_x_to_grid(&self, fx: f64) -> f64 {
        (fx - self.x0()) / self.width * self.mask_cols as f64
    }

    pub fn frame_y_to_grid(&self, fy: f64) -> f64 {
        (fy - self.y0()) / self.height * self.mask_rows as f64
    }
}

/// Crop a search region out of a grayscale frame, bilinear, zero padded
/// outside the frame.
pub fn crop_search_region(
    frame: &Array2<f64>,
    box_: &BBox,
    meta: &VideoMeta,
    crop_res: usize,
    mask_rows: usize,
    mask_cols: usize,
) -> Result<(SearchRegion, Array2<f64>)> {
    let region = SearchRegion::from_box(box_, meta, mask_rows, mask_cols)?;
    let mut crop = Array2::zeros((crop_res, crop_res));
    let (h, w) = (frame.nrows() as f64, frame.ncols() as f64);
    for r in 0..crop_res {
        for c in 0..crop_res {
            let fx = region.x0() + (c as f64 + 0.5) / crop_res as f64 * region.width;
            let fy = region.y0() + (r as f64 + 0.5) / crop_res as f64 * region.height;
            crop[[r, c]] = sample_bilinear_padded(frame, fx - 0.5, fy - 0.5, w, h);
        }
    }
    Ok((region, crop))
}

fn sample_bilinear_padded(img: &Array2<f64>, x: f64, y: f64, w: f64, h: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let sx = x0 + dx;
            let sy = y0 + dy;
            if sx >= 0.0 && sx < w && sy >= 0.0 && sy < h {
                acc += wy * wx * img[[sy as usize, sx as usize]];
            }
        }
    }
    acc
}

/// Soft target mask on the search-region grid, entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    pub grid: Array2<f64>,
}

impl SegMask {
    pub fn new(grid: Array2<f64>) -> Result<Self> {
        for v in grid.iter() {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::invalid(format!("mask entry {v} outside [0, 1]")));
            }
        }
        Ok(SegMask { grid })
    }
}

/// Binary ground-truth box rendered on the search-region grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMask {
    pub grid: Array2<f64>,
}

impl BoxMask {
    /// Rasterize a ground-truth box into the region's grid; a cell is 1 iff
    /// its center lies inside the box.
    pub fn from_gt(region: &SearchRegion, gt: &BBox) -> Self {
        let (p, q) = (region.mask_rows, region.mask_cols);
        let mut grid = Array2::zeros((p, q));
        for r in 0..p {
            let fy = region.grid_y_to_frame(r as f64 + 0.5);
            for c in 0..q {
                let fx = region.grid_x_to_frame(c as f64 + 0.5);
                if fx >= gt.x_min && fx < gt.x_max && fy >= gt.y_min && fy < gt.y_max {
                    grid[[r, c]] = 1.0;
                }
            }
        }
        BoxMask { grid }
    }
}

/// Gaussian weight-map parameters, means in normalized grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub alpha: f64,
}

impl GaussianParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 >= SIGMA_FLOOR && self.sigma2 >= SIGMA_FLOOR) {
            return Err(Error::invalid("sigma below floor"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid("alpha must be >= 0"));
        }
        Ok(())
    }
}

/// Weight at one normalized coordinate; separable Gaussian with peak 1 at
/// the mean.
pub fn gaussian_weight_at(theta: &GaussianParams, x: f64, y: f64) -> f64 {
    let u = (x - theta.mu1) / theta.sigma1;
    let v = (y - theta.mu2) / theta.sigma2;
    (-theta.alpha * (u * u + v * v)).exp()
}

/// Evaluate the weight map on a `p` x `q` grid; cell (row, col) sits at
/// normalized coordinates (col/(q-1), row/(p-1)).
pub fn gaussian_weight_map(theta: &GaussianParams, p: usize, q: usize) -> Array2<f64> {
    Array2::from_shape_fn((p, q), |(r, c)| {
        let x = if q > 1 { c as f64 / (q - 1) as f64 } else { 0.0 };
        let y = if p > 1 { r as f64 / (p - 1) as f64 } else { 0.0 };
        gaussian_weight_at(theta, x, y)
    })
}

/// Element-wise product of a mask with a weight grid; never increases any
/// entry.
pub fn apply_weight(initial: &SegMask, weights: &Array2<f64>) -> Result<SegMask> {
    if initial.grid.dim() != weights.dim() {
        return Err(Error::invalid(format!(
            "apply_weight shape mismatch: {:?} vs {:?}",
            initial.grid.dim(),
            weights.dim()
        )));
    }
    Ok(SegMask { grid: &initial.grid * weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggAxis {
    /// Map each row to a scalar (profile length = rows).
    Horizontal,
    /// Map each column to a scalar (profile length = cols).
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggOp {
    /// min(1, sum): accumulation clipped to 1. The default.
    #[default]
    RectifiedClip,
    /// max(1, sum), the literal printed form; kept for fidelity experiments.
    RectifiedLiteralMax,
    MaxPool,
    Average,
    Sum,
}

impl AggOp {
    fn apply(self, line_sum: f64, line_max: f64, n: usize) -> f64 {
        match self {
            AggOp::RectifiedClip => line_sum.min(1.0),
            AggOp::RectifiedLiteralMax => line_sum.max(1.0),
            AggOp::MaxPool => line_max,
            AggOp::Average => line_sum / n as f64,
            AggOp::Sum => line_sum,
        }
    }
}

/// Aggregate a mask into a 1-D occupancy profile.
pub fn aggregate(mask: &Array2<f64>, axis: AggAxis, op: AggOp) -> Vec<f64> {
    let (p, q) = mask.dim();
    match axis {
        AggAxis::Horizontal => (0..p)
            .map(|r| {
                let row = mask.row(r);
                let sum = row.sum();
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                op.apply(sum, max, q)
            })
            .collect(),
        AggAxis::Vertical => (0..q)
            .map(|c| {
                let col = mask.column(c);
                let sum = col.sum();
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                op.apply(sum, max, p)
            })
            .collect(),
    }
}

/// Squared profile error of one predicted mask against one box mask.
pub fn loss_reg_pair(pred: &SegMask, box_mask: &BoxMask, op: AggOp) -> Result<f64> {
    if pred.grid.dim() != box_mask.grid.dim() {
        return Err(Error::invalid(format!(
            "loss_reg shape mismatch: {:?} vs {:?}",
            pred.grid.dim(),
            box_mask.grid.dim()
        )));
    }
    let mut total = 0.0;
    for axis in [AggAxis::Vertical, AggAxis::Horizontal] {
        let s = aggregate(&pred.grid, axis, op);
        let m = aggregate(&box_mask.grid, axis, op);
        total += s.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total)
}

/// Box-supervised regression loss summed over frames and directions.
pub fn loss_reg(
    pred_fwd: &[SegMask],
    pred_bwd: &[SegMask],
    box_masks: &[BoxMask],
    op: AggOp,
) -> Result<f64> {
    if pred_fwd.len() != box_masks.len() || pred_bwd.len() != box_masks.len() {
        return Err(Error::invalid(format!(
            "loss_reg misalignment: {} fwd, {} bwd, {} box masks",
            pred_fwd.len(),
            pred_bwd.len(),
            box_masks.len()
        )));
    }
    let mut total = 0.0;
    for ((f, b), m) in pred_fwd.iter().zip(pred_bwd).zip(box_masks) {
        total += loss_reg_pair(f, m, op)? + loss_reg_pair(b, m, op)?;
    }
    Ok(total)
}

/// d loss_reg_pair / d pred for the profile losses; one-sided subgradient at
/// the clip boundary (0 where the line sum is at or above 1).
pub fn loss_reg_pair_grad(pred: &SegMask, box_mask: &BoxMask, op: AggOp) -> Result<Array2<f64>> {
    if pred.grid.dim() != box_mask.grid.dim() {
        return Err(Error::invalid("loss_reg shape mismatch"));
    }
    let (p, q) = pred.grid.dim();
    let mut grad = Array2::zeros((p, q));
    for axis in [AggAxis::Vertical, AggAxis::Horizontal] {
        let s = aggregate(&pred.grid, axis, op);
        let m = aggregate(&box_mask.grid, axis, op);
        match axis {
            AggAxis::Vertical => {
                for c in 0..q {
                    let d = 2.0 * (s[c] - m[c]);
                    let col = pred.grid.column(c);
                    let sum = col.sum();
                    for r in 0..p {
                        grad[[r, c]] += d * op_entry_grad(op, sum, pred.grid[[r, c]], &col, p);
                    }
                }
            }
            AggAxis::Horizontal => {
                for r in 0..p {
                    let d = 2.0 * (s[r] - m[r]);
                    let row = pred.grid.row(r);
                    let sum = row.sum();
                    for c in 0..q {
                        grad[[r, c]] += d * op_entry_grad(op, sum, pred.grid[[r, c]], &row, q);
                    }
                }
            }
        }
    }
    Ok(grad)
}

fn op_entry_grad(op: AggOp, line_sum: f64, entry: f64, line: &ndarray::ArrayView1<f64>, n: usize) -> f64 {
    match op {
        AggOp::RectifiedClip => {
            if line_sum < 1.0 {
                1.0
            } else {
                0.0
            }
        }
        AggOp::RectifiedLiteralMax => {
            if line_sum > 1.0 {
                1.0
            } else {
                0.0
            }
        }
        AggOp::Sum => 1.0,
        AggOp::Average => 1.0 / n as f64,
        AggOp::MaxPool => {
            let max = line.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if entry == max {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub window_len: usize,
    pub map_side: usize,
    pub mask_rows: usize,
    pub mask_cols: usize,
    pub kind: PredictorKind,
    pub seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            feature_dim: 64,
            hidden: 128,
            window_len: 20,
            map_side: 32,
            mask_rows: 64,
            mask_cols: 64,
            kind: PredictorKind::Lstm,
            seed: 1,
        }
    }
}

/// Geometric module: same backbone shape as the assessment model, but the
/// head emits 5 raw values per slot which are mapped to valid Gaussian
/// parameters (sigmoid means, softplus sigmas/alpha).
#[derive(Debug, Clone)]
pub struct GeometryModel {
    pub cfg: GeometryConfig,
    pub extractor: ConvExtractor,
    pub fwd: SequencePredictor,
    pub bwd: SequencePredictor,
}

pub struct GeometryCache {
    raws: Vec<Array1<f64>>,
    ext_caches: Vec<ExtractorCache>,
    seq_cache: SeqCache,
    direction: Direction,
}

fn raw_to_theta(raw: &Array1<f64>) -> GaussianParams {
    GaussianParams {
        mu1: sigmoid01(raw[0]),
        mu2: sigmoid01(raw[1]),
        sigma1: SIGMA_FLOOR + softplus(raw[2]),
        sigma2: SIGMA_FLOOR + softplus(raw[3]),
        alpha: softplus(raw[4]),
    }
}

fn sigmoid01(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// d theta / d raw, component-wise.
fn theta_jacobian(raw: &Array1<f64>) -> [f64; 5] {
    let s0 = sigmoid01(raw[0]);
    let s1 = sigmoid01(raw[1]);
    [
        s0 * (1.0 - s0),
        s1 * (1.0 - s1),
        softplus_deriv(raw[2]),
        softplus_deriv(raw[3]),
        softplus_deriv(raw[4]),
    ]
}

impl GeometryModel {
    pub fn new(cfg: GeometryConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let extractor = ConvExtractor::new(&mut rng, cfg.feature_dim);
        let in_dim = cfg.feature_dim + 5;
        let fwd = SequencePredictor::new(&mut rng, cfg.kind, in_dim, cfg.hidden, 5);
        let bwd = SequencePredictor::new(&mut rng, cfg.kind, in_dim, cfg.hidden, 5);
        GeometryModel { cfg, extractor, fwd, bwd }
    }

    /// Reuses the assessment feature layout: c response-map features plus
    /// normalized box corners and confidence.
    fn features(&self, window: &Window, meta: &VideoMeta) -> Result<(Vec<Array1<f64>>, Vec<ExtractorCache>)> {
        let mut feats = Vec::with_capacity(window.len());
        let mut caches = Vec::with_capacity(window.len());
        for frame in &window.frames {
            let map = crate::assess::resize_response(frame.response_map.grid(), self.cfg.map_side)?;
            let (core, cache) = self.extractor.forward(&map);
            let mut feat = Array1::zeros(self.cfg.feature_dim + 5);
            feat.slice_mut(ndarray::s![..self.cfg.feature_dim]).assign(&core);
            let w = meta.frame_width as f64;
            let h = meta.frame_height as f64;
            feat[self.cfg.feature_dim] = (frame.box_.x_min / w).clamp(0.0, 1.0);
            feat[self.cfg.feature_dim + 1] = (frame.box_.y_min / h).clamp(0.0, 1.0);
            feat[self.cfg.feature_dim + 2] = (frame.box_.x_max / w).clamp(0.0, 1.0);
            feat[self.cfg.feature_dim + 3] = (frame.box_.y_max / h).clamp(0.0, 1.0);
            feat[self.cfg.feature_dim + 4] = frame.confidence;
            feats.push(feat);
            caches.push(cache);
        }
        Ok((feats, caches))
    }

    /// One set of Gaussian parameters per window slot.
    pub fn predict_geometry(&self, window: &Window, meta: &VideoMeta) -> Result<Vec<GaussianParams>> {
        let (thetas, _) = self.forward_window(window, meta)?;
        Ok(thetas)
    }

    pub fn forward_window(
        &self,
        window: &Window,
        meta: &VideoMeta,
    ) -> Result<(Vec<GaussianParams>, GeometryCache)> {
        if window.len() != self.cfg.window_len {
            return Err(Error::invalid(format!(
                "window has {} slots, model expects {}",
                window.len(),
                self.cfg.window_len
            )));
        }
        let (feats, ext_caches) = self.features(window, meta)?;
        let pred = match window.direction {
            Direction::Forward => &self.fwd,
            Direction::Backward => &self.bwd,
        };
        let (raws, seq_cache) = pred.forward(&feats);
        let thetas = raws.iter().map(raw_to_theta).collect();
        Ok((
            thetas,
            GeometryCache { raws, ext_caches, seq_cache, direction: window.direction },
        ))
    }

    /// Backprop per-slot d loss / d theta (5 components) into the model.
    pub fn backward_window(&mut self, cache: &GeometryCache, dthetas: &[[f64; 5]]) {
        let draws: Vec<Array1<f64>> = cache
            .raws
            .iter()
            .zip(dthetas)
            .map(|(raw, dtheta)| {
                let jac = theta_jacobian(raw);
                Array1::from_shape_fn(5, |k| dtheta[k] * jac[k])
            })
            .collect();
        let pred = match cache.direction {
            Direction::Forward => &mut self.fwd,
            Direction::Backward => &mut self.bwd,
        };
        let dinputs = pred.backward(&cache.seq_cache, &draws);
        for (dinput, ext_cache) in dinputs.iter().zip(&cache.ext_caches) {
            let dcore = dinput.slice(ndarray::s![..self.cfg.feature_dim]).to_owned();
            self.extractor.backward(ext_cache, &dcore);
        }
    }

    pub fn save(&mut self, path: &std::path::Path) -> Result<()> {
        let mut hyper = BTreeMap::new();
        hyper.insert("feature_dim".into(), self.cfg.feature_dim.into());
        hyper.insert("hidden".into(), self.cfg.hidden.into());
        hyper.insert("window_len".into(), self.cfg.window_len.into());
        hyper.insert("map_side".into(), self.cfg.map_side.into());
        hyper.insert("mask_rows".into(), self.cfg.mask_rows.into());
        hyper.insert("mask_cols".into(), self.cfg.mask_cols.into());
        hyper.insert(
            "kind".into(),
            match self.cfg.kind {
                PredictorKind::Lstm => "lstm".into(),
                PredictorKind::FeedForward => "feed_forward".into(),
            },
        );
        hyper.insert("seed".into(), self.cfg.seed.into());
        Checkpoint::capture(GEOMETRY_MAGIC, hyper, self, &[]).save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let kind = match ckpt.hyper_str("kind")? {
            "lstm" => PredictorKind::Lstm,
            "feed_forward" => PredictorKind::FeedForward,
            other => return Err(Error::invalid(format!("unknown predictor kind `{other}`"))),
        };
        let cfg = GeometryConfig {
            feature_dim: ckpt.hyper_u64("feature_dim")? as usize,
            hidden: ckpt.hyper_u64("hidden")? as usize,
            window_len: ckpt.hyper_u64("window_len")? as usize,
            map_side: ckpt.hyper_u64("map_side")? as usize,
            mask_rows: ckpt.hyper_u64("mask_rows")? as usize,
            mask_cols: ckpt.hyper_u64("mask_cols")? as usize,
            kind,
            seed: ckpt.hyper_u64("seed")?,
        };
        let mut model = GeometryModel::new(cfg);
        ckpt.restore(GEOMETRY_MAGIC, &mut model)?;
        Ok(model)
    }
}

impl Parameterized for GeometryModel {
    fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.extractor.visit(f);
        self.fwd.visit(f);
        self.bwd.visit(f);
    }
}

/// One refinement training slot: the fixed initial mask from the mask
/// predictor plus the box-mask target. `None` on padded slots.
#[derive(Debug, Clone)]
pub struct RefineSlot {
    pub initial_mask: SegMask,
    pub box_mask: BoxMask,
}

#[derive(Debug, Clone)]
pub struct RefineSample {
    pub window: Window,
    pub slots: Vec<Option<RefineSlot>>,
}

/// Loss of one sample under the current geometric module.
pub fn refine_sample_loss(
    model: &GeometryModel,
    sample: &RefineSample,
    meta: &VideoMeta,
    op: AggOp,
) -> Result<f64> {
    let (thetas, _) = model.forward_window(&sample.window, meta)?;
    let mut total = 0.0;
    for (theta, slot) in thetas.iter().zip(&sample.slots) {
        if let Some(slot) = slot {
            let weights = gaussian_weight_map(theta, model.cfg.mask_rows, model.cfg.mask_cols);
            let weighted = apply_weight(&slot.initial_mask, &weights)?;
            total += loss_reg_pair(&weighted, &slot.box_mask, op)?;
        }
    }
    Ok(total)
}

/// Forward + backward for one sample; accumulates model gradients and
/// returns the sample loss.
pub fn refine_sample_backward(
    model: &mut GeometryModel,
    sample: &RefineSample,
    meta: &VideoMeta,
    op: AggOp,
    loss_scale: f64,
) -> Result<f64> {
    let (thetas, cache) = model.forward_window(&sample.window, meta)?;
    let (p, q) = (model.cfg.mask_rows, model.cfg.mask_cols);
    let mut total = 0.0;
    let mut dthetas = vec![[0.0; 5]; thetas.len()];
    for (slot_idx, (theta, slot)) in thetas.iter().zip(&sample.slots).enumerate() {
        let Some(slot) = slot else { continue };
        let weights = gaussian_weight_map(theta, p, q);
        let weighted = apply_weight(&slot.initial_mask, &weights)?;
        total += loss_reg_pair(&weighted, &slot.box_mask, op)?;
        let dmask = loss_reg_pair_grad(&weighted, &slot.box_mask, op)?;
        // chain: d loss / d W = d loss / d S * S_tilde, then analytic
        // partials of the separable Gaussian wrt its 5 parameters
        let mut dtheta = [0.0; 5];
        for r in 0..p {
            let y = if p > 1 { r as f64 / (p - 1) as f64 } else { 0.0 };
            for c in 0..q {
                let x = if q > 1 { c as f64 / (q - 1) as f64 } else { 0.0 };
                let dw = dmask[[r, c]] * slot.initial_mask.grid[[r, c]];
                if dw == 0.0 {
                    continue;
                }
                let w = weights[[r, c]];
                let ux = x - theta.mu1;
                let uy = y - theta.mu2;
                let s1sq = theta.sigma1 * theta.sigma1;
                let s2sq = theta.sigma2 * theta.sigma2;
                dtheta[0] += dw * w * 2.0 * theta.alpha * ux / s1sq;
                dtheta[1] += dw * w * 2.0 * theta.alpha * uy / s2sq;
                dtheta[2] += dw * w * 2.0 * theta.alpha * ux * ux / (s1sq * theta.sigma1);
                dtheta[3] += dw * w * 2.0 * theta.alpha * uy * uy / (s2sq * theta.sigma2);
                dtheta[4] -= dw * w * (ux * ux / s1sq + uy * uy / s2sq);
            }
        }
        for k in 0..5 {
            dthetas[slot_idx][k] = dtheta[k] * loss_scale;
        }
    }
    model.backward_window(&cache, &dthetas);
    Ok(total)
}

/// Train the geometric module with a fixed mask predictor's outputs.
pub fn train_refine(
    model: &mut GeometryModel,
    train: &[RefineSample],
    val: &[RefineSample],
    meta: &VideoMeta,
    op: AggOp,
    tc: &TrainConfig,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(tc.seed);
    let mut opt = Adam::new(tc.lr);
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for _epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(tc.batch_size.max(1)) {
            model.zero_grads();
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                batch_loss += refine_sample_backward(model, &train[idx], meta, op, scale)?;
            }
            crate::nn::clip_grad_norm(model, crate::assess::GRAD_CLIP_NORM);
            opt.step(model);
            step += 1;
            curve.push((step, batch_loss / batch.len() as f64));
        }
    }
    let val_loss = if val.is_empty() {
        None
    } else {
        let mut total = 0.0;
        for s in val {
            total += refine_sample_loss(model, s, meta, op)?;
        }
        Some(total / val.len() as f64)
    };
    Ok(TrainReport { curve, val_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ResponseMap, TrackedFrame};
    use ndarray::array;

    fn meta() -> VideoMeta {
        VideoMeta::new("v", 120, 320, 240)
    }

    fn tiny_cfg() -> GeometryConfig {
        GeometryConfig {
            feature_dim: 8,
            hidden: 8,
            window_len: 5,
            map_side: 16,
            mask_rows: 8,
            mask_cols: 8,
            kind: PredictorKind::Lstm,
            seed: 3,
        }
    }

    fn window(seed: u64) -> Window {
        let frames = (0..5)
            .map(|i| {
                let v = 0.2 + 0.1 * ((i as u64 + seed) % 5) as f64;
                TrackedFrame {
                    frame_idx: 10 + i,
                    direction: Direction::Forward,
                    box_: BBox::new(40.0 + i as f64, 30.0, 100.0 + i as f64, 80.0).unwrap(),
                    confidence: v,
                    response_map: ResponseMap::new(ndarray::Array2::from_shape_fn((16, 16), |(r, c)| {
                        (v + 0.01 * (r as f64 - c as f64)).clamp(0.0, 1.0) as f32
                    })),
                }
            })
            .collect();
        Window {
            direction: Direction::Forward,
            offset: 0,
            frames,
            valid_mask: vec![true; 5],
        }
    }

    #[test]
    fn gaussian_peaks_at_mean_and_separates() {
        let theta = GaussianParams { mu1: 0.3, mu2: 0.7, sigma1: 0.2, sigma2: 0.4, alpha: 1.5 };
        assert_eq!(gaussian_weight_at(&theta, 0.3, 0.7), 1.0);
        // separable: w(x,y) = w(x,mu2) * w(mu1,y)
        for &(x, y) in &[(0.0, 0.0), (0.5, 0.9), (1.0, 0.2)] {
            let joint = gaussian_weight_at(&theta, x, y);
            let wx = gaussian_weight_at(&theta, x, theta.mu2);
            let wy = gaussian_weight_at(&theta, theta.mu1, y);
            assert!((joint - wx * wy).abs() < 1e-12);
        }
        // alpha = 1, one sigma off the mean in x: exp(-1)
        let unit = GaussianParams { mu1: 0.3, mu2: 0.7, sigma1: 0.25, sigma2: 0.4, alpha: 1.0 };
        let w = gaussian_weight_at(&unit, 0.3 + 0.25, 0.7);
        assert!((w - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_alpha_zero_is_identity_weighting() {
        let theta = GaussianParams { mu1: 0.5, mu2: 0.5, sigma1: 0.2, sigma2: 0.2, alpha: 0.0 };
        let map = gaussian_weight_map(&theta, 6, 9);
        assert!(map.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn weight_never_increases_mask_entries() {
        let theta = GaussianParams { mu1: 0.4, mu2: 0.6, sigma1: 0.3, sigma2: 0.2, alpha: 2.0 };
        let mask = SegMask::new(Array2::from_elem((8, 8), 0.7)).unwrap();
        let weighted = apply_weight(&mask, &gaussian_weight_map(&theta, 8, 8)).unwrap();
        for (w, m) in weighted.grid.iter().zip(mask.grid.iter()) {
            assert!(w <= m);
        }
    }

    #[test]
    fn aggregation_ops_on_known_grid() {
        let grid = array![[0.2, 0.5, 0.9], [0.1, 0.8, 0.3]];
        assert_eq!(aggregate(&grid, AggAxis::Horizontal, AggOp::RectifiedClip), vec![1.0, 1.0]);
        let v = aggregate(&grid, AggAxis::Vertical, AggOp::RectifiedClip);
        assert!((v[0] - 0.3).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!((v[2] - 1.0).abs() < 1e-12);
        assert_eq!(aggregate(&grid, AggAxis::Vertical, AggOp::MaxPool), vec![0.2, 0.8, 0.9]);
        let lit = aggregate(&grid, AggAxis::Vertical, AggOp::RectifiedLiteralMax);
        assert!((lit[0] - 1.0).abs() < 1e-12); // max(1, 0.3)
        assert!((lit[1] - 1.3).abs() < 1e-12);
        let avg = aggregate(&grid, AggAxis::Horizontal, AggOp::Average);
        assert!((avg[0] - 1.6 / 3.0).abs() < 1e-12);
        let sum = aggregate(&grid, AggAxis::Horizontal, AggOp::Sum);
        assert!((sum[1] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn profile_lengths_follow_axis() {
        let grid = Array2::<f64>::zeros((4, 7));
        assert_eq!(aggregate(&grid, AggAxis::Horizontal, AggOp::Sum).len(), 4);
        assert_eq!(aggregate(&grid, AggAxis::Vertical, AggOp::Sum).len(), 7);
    }

    #[test]
    fn region_transform_round_trips() {
        let m = meta();
        let b = BBox::new(50.0, 40.0, 110.0, 90.0).unwrap();
        let region = SearchRegion::from_box(&b, &m, 16, 16).unwrap();
        assert!((region.width - 2.0 * b.width()).abs() < 1e-12);
        assert!((region.height - 2.0 * b.height()).abs() < 1e-12);
        for &fx in &[20.0, 50.0, 80.0, 140.0] {
            let back = region.grid_x_to_frame(region.frame_x_to_grid(fx));
            assert!((back - fx).abs() < 1e-9);
        }
        for &gy in &[0.0, 3.5, 8.0, 16.0] {
            let back = region.frame_y_to_grid(region.grid_y_to_frame(gy));
            assert!((back - gy).abs() < 1e-9);
        }
        // source box occupies the central half of the region
        assert!((region.frame_x_to_grid(b.x_min) - 4.0).abs() < 1e-9);
        assert!((region.frame_x_to_grid(b.x_max) - 12.0).abs() < 1e-9);
    }

    #[test]
    fn region_near_border_keeps_unclipped_transform() {
        let m = meta();
        let b = BBox::new(0.0, 0.0, 40.0, 30.0).unwrap();
        let region = SearchRegion::from_box(&b, &m, 8, 8).unwrap();
        assert!(region.x0() < 0.0);
        let clipped = region.clipped.unwrap();
        assert_eq!(clipped.x_min, 0.0);
        assert_eq!(clipped.y_min, 0.0);
        // transform still centered on the source box
        assert!((region.grid_x_to_frame(4.0) - b.center().0).abs() < 1e-9);
    }

    #[test]
    fn crop_of_constant_interior_is_constant() {
        let m = meta();
        let img = Array2::from_elem((240, 320), 0.6);
        let b = BBox::new(100.0, 80.0, 160.0, 130.0).unwrap();
        let (_, crop) = crop_search_region(&img, &b, &m, 32, 8, 8).unwrap();
        // region fully inside the frame: every sample is 0.6
        for v in crop.iter() {
            assert!((v - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn box_mask_rasterizes_centered_box() {
        let m = meta();
        let b = BBox::new(50.0, 40.0, 110.0, 90.0).unwrap();
        let region = SearchRegion::from_box(&b, &m, 8, 8).unwrap();
        let bm = BoxMask::from_gt(&region, &b);
        // gt equals the source box: central 4x4 cells of the 8x8 grid
        for r in 0..8 {
            for c in 0..8 {
                let inside = (2..6).contains(&r) && (2..6).contains(&c);
                assert_eq!(bm.grid[[r, c]], if inside { 1.0 } else { 0.0 }, "cell ({r},{c})");
            }
        }
    }

    #[test]
    fn perfect_mask_has_zero_profile_loss() {
        let m = meta();
        let b = BBox::new(50.0, 40.0, 110.0, 90.0).unwrap();
        let region = SearchRegion::from_box(&b, &m, 8, 8).unwrap();
        let bm = BoxMask::from_gt(&region, &b);
        let pred = SegMask::new(bm.grid.clone()).unwrap();
        let loss = loss_reg_pair(&pred, &bm, AggOp::RectifiedClip).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn profile_loss_grad_matches_finite_differences() {
        // keep every line sum below the clip so the loss is smooth
        let mut grid = Array2::from_elem((6, 6), 0.05);
        grid[[2, 2]] = 0.11;
        grid[[3, 4]] = 0.07;
        let target = BoxMask { grid: Array2::from_shape_fn((6, 6), |(r, c)| if r >= 2 && r < 4 && c >= 2 && c < 4 { 1.0 } else { 0.0 }) };
        let pred = SegMask::new(grid.clone()).unwrap();
        let analytic = loss_reg_pair_grad(&pred, &target, AggOp::RectifiedClip).unwrap();
        let h = 1e-6;
        for r in 0..6 {
            for c in 0..6 {
                let mut plus = grid.clone();
                plus[[r, c]] += h;
                let mut minus = grid.clone();
                minus[[r, c]] -= h;
                let lp = loss_reg_pair(&SegMask::new(plus).unwrap(), &target, AggOp::RectifiedClip).unwrap();
                let lm = loss_reg_pair(&SegMask::new(minus).unwrap(), &target, AggOp::RectifiedClip).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                assert!((analytic[[r, c]] - fd).abs() < 1e-6, "cell ({r},{c}): {} vs {fd}", analytic[[r, c]]);
            }
        }
    }

    #[test]
    fn loss_reg_rejects_misaligned_inputs() {
        let mask = SegMask::new(Array2::zeros((4, 4))).unwrap();
        let bm = BoxMask { grid: Array2::zeros((4, 4)) };
        assert!(loss_reg(&[mask.clone()], &[], &[bm.clone()], AggOp::RectifiedClip).is_err());
        let wrong = SegMask::new(Array2::zeros((5, 4))).unwrap();
        assert!(loss_reg_pair(&wrong, &bm, AggOp::RectifiedClip).is_err());
        assert!(apply_weight(&mask, &Array2::zeros((3, 3))).is_err());
    }

    /// Central target blob whose column sums already match the clipped box
    /// profiles, plus a corner distractor blob: nearly all of the loss is
    /// removable by a centered Gaussian that suppresses the corner.
    fn tiny_sample(model: &GeometryModel, m: &VideoMeta) -> RefineSample {
        let w = window(1);
        let mut slots = Vec::new();
        for f in w.frames.iter() {
            let region = SearchRegion::from_box(&f.box_, m, model.cfg.mask_rows, model.cfg.mask_cols).unwrap();
            let mut grid = Array2::zeros((8, 8));
            for r in 2..6 {
                for c in 2..6 {
                    // column sum 2.0: stays clipped at 1 even after moderate
                    // down-weighting, so suppressing the distractor is free
                    grid[[r, c]] = 0.5;
                }
            }
            for r in 6..8 {
                for c in 6..8 {
                    grid[[r, c]] = 0.45; // distractor: column sum 0.9 vs target 0
                }
            }
            let initial_mask = SegMask::new(grid).unwrap();
            let box_mask = BoxMask::from_gt(&region, &f.box_);
            slots.push(Some(RefineSlot { initial_mask, box_mask }));
        }
        RefineSample { window: w, slots }
    }

    #[test]
    fn sample_gradients_match_finite_differences() {
        let mut model = GeometryModel::new(tiny_cfg());
        let m = meta();
        let sample = tiny_sample(&model, &m);
        model.zero_grads();
        refine_sample_backward(&mut model, &sample, &m, AggOp::RectifiedClip, 1.0).unwrap();
        let analytic = model.flat_grads();
        let base = model.flat_params();
        let h = 1e-5;
        let mut checked = 0;
        for i in (0..base.len()).step_by(97) {
            let mut p = base.clone();
            p[i] += h;
            model.set_flat_params(&p);
            let lp = refine_sample_loss(&model, &sample, &m, AggOp::RectifiedClip).unwrap();
            p[i] -= 2.0 * h;
            model.set_flat_params(&p);
            let lm = refine_sample_loss(&model, &sample, &m, AggOp::RectifiedClip).unwrap();
            p[i] += h;
            model.set_flat_params(&p);
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-5);
            assert!(
                (analytic[i] - fd).abs() / denom < 1e-3,
                "param {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn padded_slots_do_not_contribute() {
        let model = GeometryModel::new(tiny_cfg());
        let m = meta();
        let mut sample = tiny_sample(&model, &m);
        let full = refine_sample_loss(&model, &sample, &m, AggOp::RectifiedClip).unwrap();
        let dropped = sample.slots[2].take().unwrap();
        let partial = refine_sample_loss(&model, &sample, &m, AggOp::RectifiedClip).unwrap();
        assert!(partial < full);
        // restoring the slot restores the loss
        sample.slots[2] = Some(dropped);
        let restored = refine_sample_loss(&model, &sample, &m, AggOp::RectifiedClip).unwrap();
        assert_eq!(restored, full);
    }

    #[test]
    fn training_reduces_loss_substantially() {
        let mut model = GeometryModel::new(tiny_cfg());
        let m = meta();
        let sample = tiny_sample(&model, &m);
        let before = refine_sample_loss(&model, &sample, &m, AggOp::RectifiedClip).unwrap();
        let tc = TrainConfig { lr: 5e-3, batch_size: 1, epochs: 600, seed: 5 };
        train_refine(&mut model, &[sample.clone()], &[], &m, AggOp::RectifiedClip, &tc).unwrap();
        let after = refine_sample_loss(&model, &sample, &m, AggOp::RectifiedClip).unwrap();
        assert!(after < 0.5 * before, "loss {before} -> {after}");
    }

    #[test]
    fn zero_lr_training_changes_nothing() {
        let mut model = GeometryModel::new(tiny_cfg());
        let m = meta();
        let sample = tiny_sample(&model, &m);
        let before = model.flat_params();
        let tc = TrainConfig { lr: 0.0, batch_size: 1, epochs: 3, seed: 5 };
        train_refine(&mut model, &[sample], &[], &m, AggOp::RectifiedClip, &tc).unwrap();
        assert_eq!(model.flat_params(), before);
    }

    #[test]
    fn geometry_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geometry.json");
        let mut model = GeometryModel::new(tiny_cfg());
        model.save(&path).unwrap();
        let loaded = GeometryModel::load(&path).unwrap();
        let m = meta();
        let w = window(2);
        let a = model.predict_geometry(&w, &m).unwrap();
        let b = loaded.predict_geometry(&w, &m).unwrap();
        assert_eq!(a, b);
        for t in &a {
            t.validate().unwrap();
        }
    }

    #[test]
    fn predicted_parameters_are_always_valid() {
        let model = GeometryModel::new(GeometryConfig { seed: 99, ..tiny_cfg() });
        let m = meta();
        for seed in 0..4 {
            for theta in model.predict_geometry(&window(seed), &m).unwrap() {
                theta.validate().unwrap();
                assert!((0.0..=1.0).contains(&theta.mu1));
                assert!((0.0..=1.0).contains(&theta.mu2));
            }
        }
    }
}

//! Temporal assessment of tracking results.
//!
//! Each tracked frame is compressed into a `c + 5` feature (response-map
//! features, normalized box corners, tracker confidence). A per-direction
//! sequential predictor then scores every slot of a window. Training
//! regresses the scores onto quality targets derived from IoU with ground
//! truth, with squared error summed over frames and directions.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::ckpt::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{
    Adam, ConvExtractor, ExtractorCache, Parameterized, PredictorKind, SeqCache, SequencePredictor,
};
use crate::pipeline::Window;
use crate::store::{Direction, TrackedFrame, VideoMeta};

pub const ASSESS_MAGIC: &str = "annotrack-assess/1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssessConfig {
    /// Response-map feature width c.
    pub feature_dim: usize,
    /// Hidden width of the sequence layers.
    pub hidden: usize,
    /// Window length L.
    pub window_len: usize,
    /// Response maps are resized to this side before the extractor.
    pub map_side: usize,
    pub kind: PredictorKind,
    pub seed: u64,
}

impl Default for AssessConfig {
    fn default() -> Self {
        AssessConfig {
            feature_dim: 64,
            hidden: 128,
            window_len: 20,
            map_side: 32,
            kind: PredictorKind::Lstm,
            seed: 0,
        }
    }
}

/// Extractor shared across directions; one sequential predictor per
/// direction, same architecture, separate parameters.
#[derive(Debug, Clone)]
pub struct AssessModel {
    pub cfg: AssessConfig,
    pub extractor: ConvExtractor,
    pub fwd: SequencePredictor,
    pub bwd: SequencePredictor,
}

pub struct WindowCache {
    features: Vec<Array1<f64>>,
    ext_caches: Vec<ExtractorCache>,
    seq_cache: SeqCache,
    direction: Direction,
}

impl AssessModel {
    pub fn new(cfg: AssessConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let extractor = ConvExtractor::new(&mut rng, cfg.feature_dim);
        let in_dim = cfg.feature_dim + 5;
        let fwd = SequencePredictor::new(&mut rng, cfg.kind, in_dim, cfg.hidden, 1);
        let bwd = SequencePredictor::new(&mut rng, cfg.kind, in_dim, cfg.hidden, 1);
        AssessModel { cfg, extractor, fwd, bwd }
    }

    fn predictor(&self, d: Direction) -> &SequencePredictor {
        match d {
            Direction::Forward => &self.fwd,
            Direction::Backward => &self.bwd,
        }
    }

    /// Deterministic `c + 5` feature for one tracked frame.
    pub fn extract_feature(&self, frame: &TrackedFrame, meta: &VideoMeta) -> Result<Array1<f64>> {
        let (feat, _) = self.extract_feature_cached(frame, meta)?;
        Ok(feat)
    }

    fn extract_feature_cached(
        &self,
        frame: &TrackedFrame,
        meta: &VideoMeta,
    ) -> Result<(Array1<f64>, ExtractorCache)> {
        let map = resize_response(frame.response_map.grid(), self.cfg.map_side)?;
        let (core, cache) = self.extractor.forward(&map);
        let mut feat = Array1::zeros(self.cfg.feature_dim + 5);
        feat.slice_mut(ndarray::s![..self.cfg.feature_dim]).assign(&core);
        let w = meta.frame_width as f64;
        let h = meta.frame_height as f64;
        let b = &frame.box_;
        feat[self.cfg.feature_dim] = (b.x_min / w).clamp(0.0, 1.0);
        feat[self.cfg.feature_dim + 1] = (b.y_min / h).clamp(0.0, 1.0);
        feat[self.cfg.feature_dim + 2] = (b.x_max / w).clamp(0.0, 1.0);
        feat[self.cfg.feature_dim + 3] = (b.y_max / h).clamp(0.0, 1.0);
        feat[self.cfg.feature_dim + 4] = frame.confidence;
        Ok((feat, cache))
    }

    /// One quality score per window slot, computed in slot order by the
    /// predictor matching the window's direction.
    pub fn predict_scores(&self, window: &Window, meta: &VideoMeta) -> Result<Vec<f64>> {
        let (scores, _) = self.forward_window(window, meta)?;
        Ok(scores)
    }

    pub fn forward_window(&self, window: &Window, meta: &VideoMeta) -> Result<(Vec<f64>, WindowCache)> {
        if window.len() != self.cfg.window_len {
            return Err(Error::invalid(format!(
                "window has {} slots, model expects {}",
                window.len(),
                self.cfg.window_len
            )));
        }
        let mut features = Vec::with_capacity(window.len());
        let mut ext_caches = Vec::with_capacity(window.len());
        for frame in &window.frames {
            let (feat, cache) = self.extract_feature_cached(frame, meta)?;
            features.push(feat);
            ext_caches.push(cache);
        }
        let (outs, seq_cache) = self.predictor(window.direction).forward(&features);
        let scores = outs.iter().map(|o| o[0]).collect();
        Ok((
            scores,
            WindowCache { features, ext_caches, seq_cache, direction: window.direction },
        ))
    }

    /// Backprop d loss / d score into predictor and extractor gradients.
    pub fn backward_window(&mut self, cache: &WindowCache, dscores: &[f64]) {
        let douts: Vec<Array1<f64>> = dscores.iter().map(|&d| Array1::from_vec(vec![d])).collect();
        let pred = match cache.direction {
            Direction::Forward => &mut self.fwd,
            Direction::Backward => &mut self.bwd,
        };
        let dinputs = pred.backward(&cache.seq_cache, &douts);
        for (dinput, ext_cache) in dinputs.iter().zip(&cache.ext_caches) {
            let dcore = dinput.slice(ndarray::s![..self.cfg.feature_dim]).to_owned();
            self.extractor.backward(ext_cache, &dcore);
        }
        let _ = &cache.features;
    }

    pub fn save(&mut self, path: &std::path::Path) -> Result<()> {
        let mut hyper = BTreeMap::new();
        hyper.insert("feature_dim".into(), self.cfg.feature_dim.into());
        hyper.insert("hidden".into(), self.cfg.hidden.into());
        hyper.insert("window_len".into(), self.cfg.window_len.into());
        hyper.insert("map_side".into(), self.cfg.map_side.into());
        hyper.insert(
            "kind".into(),
            match self.cfg.kind {
                PredictorKind::Lstm => "lstm".into(),
                PredictorKind::FeedForward => "feed_forward".into(),
            },
        );
        hyper.insert("seed".into(), self.cfg.seed.into());
        Checkpoint::capture(ASSESS_MAGIC, hyper, self, &[]).save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let kind = match ckpt.hyper_str("kind")? {
            "lstm" => PredictorKind::Lstm,
            "feed_forward" => PredictorKind::FeedForward,
            other => return Err(Error::invalid(format!("unknown predictor kind `{other}`"))),
        };
        let cfg = AssessConfig {
            feature_dim: ckpt.hyper_u64("feature_dim")? as usize,
            hidden: ckpt.hyper_u64("hidden")? as usize,
            window_len: ckpt.hyper_u64("window_len")? as usize,
            map_side: ckpt.hyper_u64("map_side")? as usize,
            kind,
            seed: ckpt.hyper_u64("seed")?,
        };
        let mut model = AssessModel::new(cfg);
        ckpt.restore(ASSESS_MAGIC, &mut model)?;
        Ok(model)
    }
}

impl Parameterized for AssessModel {
    fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.extractor.visit(f);
        self.fwd.visit(f);
        self.bwd.visit(f);
    }
}

/// Bilinear resize of a response map to `side` x `side`, as f64.
pub fn resize_response(map: &Array2<f32>, side: usize) -> Result<Array3<f64>> {
    let (h, w) = (map.nrows(), map.ncols());
    if h == 0 || w == 0 {
        return Err(Error::invalid("empty response map"));
    }
    for v in map.iter() {
        if !v.is_finite() {
            return Err(Error::invalid("non-finite response map value"));
        }
    }
    let mut out = Array3::zeros((1, side, side));
    for oy in 0..side {
        for ox in 0..side {
            let sy = if side > 1 { oy as f64 * (h - 1) as f64 / (side - 1) as f64 } else { 0.0 };
            let sx = if side > 1 { ox as f64 * (w - 1) as f64 / (side - 1) as f64 } else { 0.0 };
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fy = sy - y0 as f64;
            let fx = sx - x0 as f64;
            let v = (1.0 - fy) * ((1.0 - fx) * map[[y0, x0]] as f64 + fx * map[[y0, x1]] as f64)
                + fy * ((1.0 - fx) * map[[y1, x0]] as f64 + fx * map[[y1, x1]] as f64);
            out[[0, oy, ox]] = v;
        }
    }
    Ok(out)
}

/// Squared-error quality loss over one window pair, padded slots excluded.
pub fn loss_conf(
    pred_fwd: &[f64],
    target_fwd: &[f64],
    valid_fwd: &[bool],
    pred_bwd: &[f64],
    target_bwd: &[f64],
    valid_bwd: &[bool],
) -> Result<f64> {
    Ok(loss_conf_window(pred_fwd, target_fwd, valid_fwd)?
        + loss_conf_window(pred_bwd, target_bwd, valid_bwd)?)
}

/// One direction's share of the quality loss.
pub fn loss_conf_window(pred: &[f64], target: &[f64], valid: &[bool]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != valid.len() {
        return Err(Error::invalid(format!(
            "loss_conf misalignment: {} predictions, {} targets, {} validity flags",
            pred.len(),
            target.len(),
            valid.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|((g, t), _)| (g - t) * (g - t))
        .sum())
}

/// One training sample: a window with per-slot quality targets.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub window: Window,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-3, batch_size: 32, epochs: 20, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// (step, mean window loss) pairs.
    pub curve: Vec<(usize, f64)>,
    /// Mean window loss on the validation split after the final epoch.
    pub val_loss: Option<f64>,
}

/// Mean per-window quality loss of a model over a sample set.
pub fn validation_loss(model: &AssessModel, samples: &[TrainSample], meta: &VideoMeta) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let mut total = 0.0;
    for s in samples {
        let scores = model.predict_scores(&s.window, meta)?;
        total += loss_conf_window(&scores, &s.targets, &s.window.valid_mask)?;
    }
    Ok(total / samples.len() as f64)
}

/// Global gradient-norm ceiling applied before each optimizer step.
pub const GRAD_CLIP_NORM: f64 = 5.0;

/// Train in place with Adam on shuffled mini-batches.
pub fn train_assess(
    model: &mut AssessModel,
    train: &[TrainSample],
    val: &[TrainSample],
    meta: &VideoMeta,
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
            for &idx in batch {
                let s = &train[idx];
                let (scores, cache) = model.forward_window(&s.window, meta)?;
                batch_loss += loss_conf_window(&scores, &s.targets, &s.window.valid_mask)?;
                let scale = 1.0 / batch.len() as f64;
                let dscores: Vec<f64> = scores
                    .iter()
                    .zip(&s.targets)
                    .zip(&s.window.valid_mask)
                    .map(|((g, t), &v)| if v { 2.0 * (g - t) * scale } else { 0.0 })
                    .collect();
                model.backward_window(&cache, &dscores);
            }
            crate::nn::clip_grad_norm(model, GRAD_CLIP_NORM);
            opt.step(model);
            step += 1;
            curve.push((step, batch_loss / batch.len() as f64));
        }
    }
    let val_loss = if val.is_empty() {
        None
    } else {
        Some(validation_loss(model, val, meta)?)
    };
    Ok(TrainReport { curve, val_loss })
}

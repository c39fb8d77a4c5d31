//! Pluggable initial-mask prediction.
//!
//! Two substitutes for a heavyweight pretrained segmentation model:
//! a deterministic synthetic oracle (ground-truth blob plus configurable
//! distractor blobs and noise) and a small trainable encoder-decoder for
//! demonstration runs on rendered crops.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::assess::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, Conv2d, Parameterized};
use crate::refine::{loss_reg_pair, loss_reg_pair_grad, AggOp, BoxMask, SearchRegion, SegMask};
use crate::store::{BBox, Direction};

/// Everything a mask predictor may look at for one frame. The oracle uses
/// the region and frame index; the trainable net uses the crops.
pub struct MaskQuery<'a> {
    pub frame_idx: usize,
    pub direction: Direction,
    pub region: &'a SearchRegion,
    pub template_crop: Option<&'a Array2<f64>>,
    pub search_crop: Option<&'a Array2<f64>>,
}

pub trait MaskPredictor {
    fn predict(&self, query: &MaskQuery) -> Result<SegMask>;

    /// Whether callers must render and attach crops.
    fn needs_crops(&self) -> bool {
        false
    }
}

/// Deterministic mask oracle: soft ground-truth blob, off-target distractor
/// blobs fixed in frame coordinates, and a low noise floor.
#[derive(Debug, Clone)]
pub struct SyntheticMaskOracle {
    gt: BTreeMap<usize, BBox>,
    pub distractor_count: usize,
    /// Uniform noise amplitude added everywhere; keep well under tau/Q so
    /// background columns never clip to 1.
    pub noise_level: f64,
    pub seed: u64,
}

impl SyntheticMaskOracle {
    pub fn new(gt: BTreeMap<usize, BBox>, distractor_count: usize, noise_level: f64, seed: u64) -> Self {
        SyntheticMaskOracle { gt, distractor_count, noise_level, seed }
    }

    fn frame_rng(&self, frame_idx: usize) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.seed ^ (frame_idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    /// Fractional coverage of grid cells by a frame-space rectangle.
    fn paint_rect(grid: &mut Array2<f64>, region: &SearchRegion, rect: &BBox, value: f64) {
        let (p, q) = grid.dim();
        let gx0 = region.frame_x_to_grid(rect.x_min);
        let gx1 = region.frame_x_to_grid(rect.x_max);
        let gy0 = region.frame_y_to_grid(rect.y_min);
        let gy1 = region.frame_y_to_grid(rect.y_max);
        for r in 0..p {
            let cy0 = r as f64;
            let cy1 = cy0 + 1.0;
            let fy = (gy1.min(cy1) - gy0.max(cy0)).clamp(0.0, 1.0);
            if fy == 0.0 {
                continue;
            }
            for c in 0..q {
                let cx0 = c as f64;
                let cx1 = cx0 + 1.0;
                let fx = (gx1.min(cx1) - gx0.max(cx0)).clamp(0.0, 1.0);
                if fx == 0.0 {
                    continue;
                }
                let v = value * fx * fy;
                if v > grid[[r, c]] {
                    grid[[r, c]] = v;
                }
            }
        }
    }
}

impl MaskPredictor for SyntheticMaskOracle {
    fn predict(&self, query: &MaskQuery) -> Result<SegMask> {
        let region = query.region;
        let (p, q) = (region.mask_rows, region.mask_cols);
        let mut grid = Array2::zeros((p, q));
        if let Some(gt) = self.gt.get(&query.frame_idx) {
            Self::paint_rect(&mut grid, region, gt, 0.92);

            let mut rng = self.frame_rng(query.frame_idx);
            let (gcx, gcy) = gt.center();
            for _ in 0..self.distractor_count {
                // off-target blob: offset by 0.9..1.8 box sizes from the
                // target center, fixed in frame coordinates so forward and
                // backward regions see a consistent scene
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let dist = rng.gen_range(0.9..1.8);
                let cx = gcx + angle.cos() * dist * gt.width();
                let cy = gcy + angle.sin() * dist * gt.height();
                let w = gt.width() * rng.gen_range(0.35..0.7);
                let h = gt.height() * rng.gen_range(0.35..0.7);
                let rect = BBox {
                    x_min: cx - w / 2.0,
                    y_min: cy - h / 2.0,
                    x_max: cx + w / 2.0,
                    y_max: cy + h / 2.0,
                };
                Self::paint_rect(&mut grid, region, &rect, 0.85);
            }
        }
        if self.noise_level > 0.0 {
            let mut rng = self.frame_rng(query.frame_idx ^ 0x5151);
            for v in grid.iter_mut() {
                *v = (*v + rng.gen_range(0.0..self.noise_level)).min(1.0);
            }
        }
        SegMask::new(grid)
    }
}

/// Bilinear resize for grayscale images.
pub fn resize_image(img: &Array2<f64>, side: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((side, side), |(oy, ox)| {
        let sy = if side > 1 { oy as f64 * (h - 1) as f64 / (side - 1) as f64 } else { 0.0 };
        let sx = if side > 1 { ox as f64 * (w - 1) as f64 / (side - 1) as f64 } else { 0.0 };
        let y0 = sy.floor() as usize;
        let x0 = sx.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = sy - y0 as f64;
        let fx = sx - x0 as f64;
        (1.0 - fy) * ((1.0 - fx) * img[[y0, x0]] + fx * img[[y0, x1]])
            + fy * ((1.0 - fx) * img[[y1, x0]] + fx * img[[y1, x1]])
    })
}

fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ch, y, xx)| x[[ch, y / 2, xx / 2]])
}

fn upsample2_backward(dout: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
    let c = dout.dim().0;
    let mut dx = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dx[[ch, y / 2, xx / 2]] += dout[[ch, y, xx]];
            }
        }
    }
    dx
}

fn relu3(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

fn relu3_backward(pre: &Array3<f64>, dout: &Array3<f64>) -> Array3<f64> {
    let mut dx = dout.clone();
    dx.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Small trainable encoder-decoder producing a square mask from the search
/// crop alone; box-supervised via the same profile loss as the geometric
/// module. A demonstration substitute, not the refinement core.
#[derive(Debug, Clone)]
pub struct TrainableMaskNet {
    pub side: usize,
    enc1: Conv2d, // 1 -> 8, stride 2
    enc2: Conv2d, // 8 -> 16, stride 2
    mid: Conv2d,  // 16 -> 8
    dec1: Conv2d, // 8 -> 4 after first upsample
    dec2: Conv2d, // 4 -> 1 after second upsample
}

struct MaskNetCache {
    input: Array3<f64>,
    pre1: Array3<f64>,
    post1: Array3<f64>,
    pre2: Array3<f64>,
    post2: Array3<f64>,
    pre3: Array3<f64>,
    up1: Array3<f64>,
    pre4: Array3<f64>,
    up2: Array3<f64>,
    /// sigmoid output
    out: Array2<f64>,
}

impl TrainableMaskNet {
    pub fn new(side: usize, seed: u64) -> Self {
        assert!(side % 4 == 0, "mask side must be divisible by 4");
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        TrainableMaskNet {
            side,
            enc1: Conv2d::new(&mut rng, 1, 8, 3, 2, 1),
            enc2: Conv2d::new(&mut rng, 8, 16, 3, 2, 1),
            mid: Conv2d::new(&mut rng, 16, 8, 3, 1, 1),
            dec1: Conv2d::new(&mut rng, 8, 4, 3, 1, 1),
            dec2: Conv2d::new(&mut rng, 4, 1, 3, 1, 1),
        }
    }

    fn forward_cached(&self, crop: &Array2<f64>) -> MaskNetCache {
        let resized = resize_image(crop, self.side);
        let input = resized.insert_axis(ndarray::Axis(0));
        let pre1 = self.enc1.forward(&input);
        let post1 = relu3(&pre1);
        let pre2 = self.enc2.forward(&post1);
        let post2 = relu3(&pre2);
        let pre3 = self.mid.forward(&post2);
        let post3 = relu3(&pre3);
        let up1 = upsample2(&post3);
        let pre4 = self.dec1.forward(&up1);
        let post4 = relu3(&pre4);
        let up2 = upsample2(&post4);
        let logits = self.dec2.forward(&up2);
        let out = Array2::from_shape_fn((self.side, self.side), |(r, c)| {
            1.0 / (1.0 + (-logits[[0, r, c]]).exp())
        });
        MaskNetCache { input, pre1, post1, pre2, post2, pre3, up1, pre4, up2, out }
    }

    pub fn predict_mask(&self, crop: &Array2<f64>) -> SegMask {
        SegMask { grid: self.forward_cached(crop).out }
    }

    fn backward(&mut self, cache: &MaskNetCache, dmask: &Array2<f64>) {
        let mut dlogits = Array3::zeros((1, self.side, self.side));
        for r in 0..self.side {
            for c in 0..self.side {
                let s = cache.out[[r, c]];
                dlogits[[0, r, c]] = dmask[[r, c]] * s * (1.0 - s);
            }
        }
        let dup2 = self.dec2.backward(&cache.up2, &dlogits);
        let half = self.side / 2;
        let dpost4 = upsample2_backward(&dup2, half, half);
        let dpre4 = relu3_backward(&cache.pre4, &dpost4);
        let dup1 = self.dec1.backward(&cache.up1, &dpre4);
        let quarter = self.side / 4;
        let dpost3 = upsample2_backward(&dup1, quarter, quarter);
        let dpre3 = relu3_backward(&cache.pre3, &dpost3);
        let dpost2 = self.mid.backward(&cache.post2, &dpre3);
        let dpre2 = relu3_backward(&cache.pre2, &dpost2);
        let dpost1 = self.enc2.backward(&cache.post1, &dpre2);
        let dpre1 = relu3_backward(&cache.pre1, &dpost1);
        let _ = self.enc1.backward(&cache.input, &dpre1);
    }
}

impl Parameterized for TrainableMaskNet {
    fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.enc1.visit(f);
        self.enc2.visit(f);
        self.mid.visit(f);
        self.dec1.visit(f);
        self.dec2.visit(f);
    }
}

impl MaskPredictor for TrainableMaskNet {
    fn predict(&self, query: &MaskQuery) -> Result<SegMask> {
        let crop = query
            .search_crop
            .ok_or_else(|| Error::invalid("trainable mask net needs a search crop"))?;
        if query.region.mask_rows != self.side || query.region.mask_cols != self.side {
            return Err(Error::invalid(format!(
                "mask net emits {0}x{0}, region wants {1}x{2}",
                self.side, query.region.mask_rows, query.region.mask_cols
            )));
        }
        Ok(self.predict_mask(crop))
    }

    fn needs_crops(&self) -> bool {
        true
    }
}

/// Box-supervised training of the demonstration mask net.
pub fn train_masknet(
    net: &mut TrainableMaskNet,
    samples: &[(Array2<f64>, BoxMask)],
    op: AggOp,
    tc: &TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    if samples.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    use rand::seq::SliceRandom;
    let mut rng = ChaCha20Rng::seed_from_u64(tc.seed);
    let mut opt = Adam::new(tc.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::new();
    let mut step = 0usize;
    for _ in 0..tc.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(tc.batch_size.max(1)) {
            net.zero_grads();
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let (crop, target) = &samples[idx];
                let cache = net.forward_cached(crop);
                let mask = SegMask { grid: cache.out.clone() };
                batch_loss += loss_reg_pair(&mask, target, op)?;
                let dmask = loss_reg_pair_grad(&mask, target, op)?.mapv(|v| v * scale);
                net.backward(&cache, &dmask);
            }
            crate::nn::clip_grad_norm(net, crate::assess::GRAD_CLIP_NORM);
            opt.step(net);
            step += 1;
            curve.push((step, batch_loss / batch.len() as f64));
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::VideoMeta;

    fn meta() -> VideoMeta {
        VideoMeta::new("v", 100, 320, 240)
    }

    fn oracle_with_box() -> (SyntheticMaskOracle, BBox, SearchRegion) {
        let b = BBox::new(100.0, 80.0, 160.0, 130.0).unwrap();
        let gt: BTreeMap<usize, BBox> = [(7usize, b)].into_iter().collect();
        let region = SearchRegion::from_box(&b, &meta(), 16, 16).unwrap();
        (SyntheticMaskOracle::new(gt, 0, 0.0, 1), b, region)
    }

    fn query<'a>(frame_idx: usize, region: &'a SearchRegion) -> MaskQuery<'a> {
        MaskQuery {
            frame_idx,
            direction: Direction::Forward,
            region,
            template_crop: None,
            search_crop: None,
        }
    }

    #[test]
    fn oracle_is_deterministic() {
        let (oracle, _, region) = oracle_with_box();
        let a = oracle.predict(&query(7, &region)).unwrap();
        let b = oracle.predict(&query(7, &region)).unwrap();
        assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn oracle_paints_target_with_fractional_edges() {
        let (oracle, _, region) = oracle_with_box();
        let mask = oracle.predict(&query(7, &region)).unwrap();
        // the source box covers the central 8x8 cells of the 16x16 grid
        for r in 4..12 {
            for c in 4..12 {
                assert!((mask.grid[[r, c]] - 0.92).abs() < 1e-12, "cell ({r},{c})");
            }
        }
        // outside the box: zero (no distractors, no noise)
        assert_eq!(mask.grid[[0, 0]], 0.0);
        assert_eq!(mask.grid[[15, 15]], 0.0);
    }

    #[test]
    fn oracle_unknown_frame_is_noise_only() {
        let (mut oracle, _, region) = oracle_with_box();
        oracle.noise_level = 0.01;
        let mask = oracle.predict(&query(99, &region)).unwrap();
        assert!(mask.grid.iter().all(|&v| v < 0.01));
    }

    #[test]
    fn distractors_add_mass_off_target() {
        let b = BBox::new(100.0, 80.0, 160.0, 130.0).unwrap();
        let gt: BTreeMap<usize, BBox> = (0..20).map(|i| (i, b)).collect();
        let clean = SyntheticMaskOracle::new(gt.clone(), 0, 0.0, 1);
        let noisy = SyntheticMaskOracle::new(gt, 3, 0.0, 1);
        let region = SearchRegion::from_box(&b, &meta(), 16, 16).unwrap();
        let mut extra = 0.0;
        for f in 0..20 {
            let c = clean.predict(&query(f, &region)).unwrap();
            let n = noisy.predict(&query(f, &region)).unwrap();
            extra += n.grid.sum() - c.grid.sum();
            // distractors never dim the target blob
            for (cv, nv) in c.grid.iter().zip(n.grid.iter()) {
                assert!(nv >= cv);
            }
        }
        assert!(extra > 0.0, "distractors never landed in the region");
    }

    #[test]
    fn resize_preserves_constants_and_corners() {
        let img = Array2::from_elem((10, 14), 0.37);
        let out = resize_image(&img, 8);
        assert!(out.iter().all(|&v| (v - 0.37).abs() < 1e-12));
        let ramp = Array2::from_shape_fn((5, 5), |(r, c)| (r + c) as f64);
        let out = resize_image(&ramp, 9);
        assert_eq!(out[[0, 0]], 0.0);
        assert_eq!(out[[8, 8]], 8.0);
    }

    #[test]
    fn masknet_output_shape_and_range() {
        let net = TrainableMaskNet::new(16, 4);
        let crop = Array2::from_shape_fn((40, 40), |(r, c)| ((r * c) % 7) as f64 / 7.0);
        let mask = net.predict_mask(&crop);
        assert_eq!(mask.grid.dim(), (16, 16));
        assert!(mask.grid.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn masknet_gradients_match_finite_differences() {
        let mut net = TrainableMaskNet::new(8, 4);
        let crop = Array2::from_shape_fn((8, 8), |(r, c)| 0.1 + 0.05 * ((r + 2 * c) % 5) as f64);
        let target = BoxMask {
            grid: Array2::from_shape_fn((8, 8), |(r, c)| if (3..6).contains(&r) && (2..5).contains(&c) { 1.0 } else { 0.0 }),
        };
        let op = AggOp::Average; // smooth everywhere, no clip corners
        net.zero_grads();
        let cache = net.forward_cached(&crop);
        let mask = SegMask { grid: cache.out.clone() };
        let dmask = loss_reg_pair_grad(&mask, &target, op).unwrap();
        net.backward(&cache, &dmask);
        let analytic = net.flat_grads();
        let base = net.flat_params();
        let h = 1e-5;
        let mut checked = 0;
        for i in (0..base.len()).step_by(53) {
            let mut p = base.clone();
            p[i] += h;
            net.set_flat_params(&p);
            let lp = loss_reg_pair(&net.predict_mask(&crop), &target, op).unwrap();
            p[i] -= 2.0 * h;
            net.set_flat_params(&p);
            let lm = loss_reg_pair(&net.predict_mask(&crop), &target, op).unwrap();
            p[i] += h;
            net.set_flat_params(&p);
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-7);
            assert!(
                (analytic[i] - fd).abs() / denom < 1e-3,
                "param {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn masknet_training_reduces_loss() {
        let mut net = TrainableMaskNet::new(8, 11);
        let crop = Array2::from_shape_fn((8, 8), |(r, c)| {
            if (3..6).contains(&r) && (2..5).contains(&c) { 0.9 } else { 0.1 }
        });
        let target = BoxMask {
            grid: Array2::from_shape_fn((8, 8), |(r, c)| if (3..6).contains(&r) && (2..5).contains(&c) { 1.0 } else { 0.0 }),
        };
        // average aggregation keeps the loss smooth everywhere; the clip's
        // one-sided subgradient is dead when an untrained net saturates
        // every profile line above 1
        let op = AggOp::Average;
        let samples = vec![(crop.clone(), target.clone())];
        let before = loss_reg_pair(&net.predict_mask(&crop), &target, op).unwrap();
        let tc = TrainConfig { lr: 3e-3, batch_size: 1, epochs: 500, seed: 2 };
        train_masknet(&mut net, &samples, op, &tc).unwrap();
        let after = loss_reg_pair(&net.predict_mask(&crop), &target, op).unwrap();
        assert!(after < 0.2 * before, "loss {before} -> {after}");
    }

    #[test]
    fn masknet_requires_crop_and_matching_side() {
        let net = TrainableMaskNet::new(16, 4);
        let b = BBox::new(100.0, 80.0, 160.0, 130.0).unwrap();
        let region = SearchRegion::from_box(&b, &meta(), 16, 16).unwrap();
        assert!(net.predict(&query(0, &region)).is_err());
        let wrong = SearchRegion::from_box(&b, &meta(), 8, 8).unwrap();
        let crop = Array2::zeros((16, 16));
        let q = MaskQuery {
            frame_idx: 0,
            direction: Direction::Forward,
            region: &wrong,
            template_crop: None,
            search_crop: Some(&crop),
        };
        assert!(net.predict(&q).is_err());
        assert!(net.needs_crops());
    }
}

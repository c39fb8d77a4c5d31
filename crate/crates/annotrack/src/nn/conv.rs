use ndarray::{Array1, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{Linear, Parameterized};

/// 2-D convolution over (channels, rows, cols) with square kernel.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Array4<f64>, // (out_c, in_c, k, k)
    pub b: Array1<f64>,
    pub gw: Array4<f64>,
    pub gb: Array1<f64>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(rng: &mut ChaCha20Rng, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        let fan_in = in_c * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv2d {
            w: Array4::from_shape_fn((out_c, in_c, k, k), |_| rng.gen_range(-bound..bound)),
            b: Array1::from_shape_fn(out_c, |_| rng.gen_range(-bound..bound)),
            gw: Array4::zeros((out_c, in_c, k, k)),
            gb: Array1::zeros(out_c),
            stride,
            pad,
        }
    }

    pub fn out_side(&self, in_side: usize) -> usize {
        (in_side + 2 * self.pad - self.w.shape()[2]) / self.stride + 1
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (in_c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = self.w.shape()[2];
        let out_c = self.w.shape()[0];
        let oh = (h + 2 * self.pad - k) / self.stride + 1;
        let ow = (w + 2 * self.pad - k) / self.stride + 1;
        let mut out = Array3::zeros((out_c, oh, ow));
        for oc in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.b[oc];
                    for ic in 0..in_c {
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += self.w[[oc, ic, ky, kx]] * x[[ic, iy as usize, ix as usize]];
                            }
                        }
                    }
                    out[[oc, oy, ox]] = acc;
                }
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Array3<f64>, dout: &Array3<f64>) -> Array3<f64> {
        let (in_c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = self.w.shape()[2];
        let out_c = self.w.shape()[0];
        let (oh, ow) = (dout.shape()[1], dout.shape()[2]);
        let mut dx = Array3::zeros((in_c, h, w));
        for oc in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let d = dout[[oc, oy, ox]];
                    if d == 0.0 {
                        continue;
                    }
                    self.gb[oc] += d;
                    for ic in 0..in_c {
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                self.gw[[oc, ic, ky, kx]] += d * x[[ic, iy, ix]];
                                dx[[ic, iy, ix]] += d * self.w[[oc, ic, ky, kx]];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Parameterized for Conv2d {
    fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        f(
            self.w.as_slice_mut().unwrap(),
            self.gw.as_slice_mut().unwrap(),
        );
        f(
            self.b.as_slice_mut().unwrap(),
            self.gb.as_slice_mut().unwrap(),
        );
    }
}

pub type ConvCache = Array3<f64>;

fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

fn relu_backward(pre: &Array3<f64>, dout: &Array3<f64>) -> Array3<f64> {
    let mut dx = dout.clone();
    dx.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Response-map feature extractor: three stride-2 conv stages with ReLU,
/// global average pooling per channel, then a linear projection to `c`.
///
/// Works for any input side that survives three halvings (8 and up).
#[derive(Debug, Clone)]
pub struct ConvExtractor {
    pub convs: Vec<Conv2d>,
    pub proj: Linear,
}

pub const EXTRACTOR_CHANNELS: [usize; 3] = [4, 8, 16];

#[derive(Debug)]
pub struct ExtractorCache {
    /// Per stage: (input, pre-activation output).
    stages: Vec<(Array3<f64>, Array3<f64>)>,
    /// Post-ReLU output of the last stage, needed for GAP backward shape.
    last: Array3<f64>,
}

impl ConvExtractor {
    pub fn new(rng: &mut ChaCha20Rng, feature_dim: usize) -> Self {
        let mut convs = Vec::new();
        let mut in_c = 1;
        for &out_c in &EXTRACTOR_CHANNELS {
            convs.push(Conv2d::new(rng, in_c, out_c, 3, 2, 1));
            in_c = out_c;
        }
        let proj = Linear::new(rng, in_c, feature_dim);
        ConvExtractor { convs, proj }
    }

    pub fn feature_dim(&self) -> usize {
        self.proj.out_dim()
    }

    pub fn forward(&self, map: &Array3<f64>) -> (Array1<f64>, ExtractorCache) {
        let mut x = map.clone();
        let mut stages = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let pre = conv.forward(&x);
            let post = relu(&pre);
            stages.push((x, pre));
            x = post;
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut gap = Array1::zeros(c);
        for ch in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    s += x[[ch, y, xx]];
                }
            }
            gap[ch] = s / (h * w) as f64;
        }
        let feat = self.proj.forward(&gap);
        (feat, ExtractorCache { stages, last: x })
    }

    pub fn backward(&mut self, cache: &ExtractorCache, dfeat: &Array1<f64>) {
        let last = &cache.last;
        let (c, h, w) = (last.shape()[0], last.shape()[1], last.shape()[2]);
        let mut gap = Array1::zeros(c);
        for ch in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    s += last[[ch, y, xx]];
                }
            }
            gap[ch] = s / (h * w) as f64;
        }
        let dgap = self.proj.backward(&gap, dfeat);
        let mut dx = Array3::zeros((c, h, w));
        let denom = (h * w) as f64;
        for ch in 0..c {
            let d = dgap[ch] / denom;
            for y in 0..h {
                for xx in 0..w {
                    dx[[ch, y, xx]] = d;
                }
            }
        }
        for (conv, (input, pre)) in self.convs.iter_mut().zip(&cache.stages).rev() {
            let dpre = relu_backward(pre, &dx);
            dx = conv.backward(input, &dpre);
        }
    }
}

impl Parameterized for ConvExtractor {
    fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        for conv in &mut self.convs {
            conv.visit(f);
        }
        self.proj.visit(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn extractor_shapes() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let ex = ConvExtractor::new(&mut rng, 8);
        let map = Array3::from_shape_fn((1, 8, 8), |(_, y, x)| (y * 8 + x) as f64 * 0.01);
        let (feat, _) = ex.forward(&map);
        assert_eq!(feat.len(), 8);
        let map32 = Array3::zeros((1, 32, 32));
        let (feat32, _) = ex.forward(&map32);
        assert_eq!(feat32.len(), 8);
    }

    #[test]
    fn extractor_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut ex = ConvExtractor::new(&mut rng, 4);
        let map = Array3::from_shape_fn((1, 8, 8), |(_, y, x)| ((y * 8 + x) as f64 * 0.37).sin() * 0.5);
        let loss = |ex: &ConvExtractor| {
            let (f, _) = ex.forward(&map);
            f.iter().map(|v| v * v).sum::<f64>()
        };

        let (feat, cache) = ex.forward(&map);
        ex.zero_grads();
        ex.backward(&cache, &feat.mapv(|v| 2.0 * v));
        let analytic = ex.flat_grads();
        let params = ex.flat_params();
        let eps = 1e-6;
        for k in (0..params.len()).step_by(7) {
            let mut p = params.clone();
            p[k] += eps;
            ex.set_flat_params(&p);
            let up = loss(&ex);
            p[k] -= 2.0 * eps;
            ex.set_flat_params(&p);
            let down = loss(&ex);
            ex.set_flat_params(&params);
            let numeric = (up - down) / (2.0 * eps);
            let denom = numeric.abs().max(analytic[k].abs()).max(1e-8);
            assert!(
                ((numeric - analytic[k]).abs() / denom) < 1e-5,
                "param {k}: numeric {numeric} vs analytic {}",
                analytic[k]
            );
        }
    }
}

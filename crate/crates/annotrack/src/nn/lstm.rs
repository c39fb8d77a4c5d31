use ndarray::{Array1, Array2};
use rand_chacha::ChaCha20Rng;

use super::{sigmoid, uniform_init_1d, uniform_init_2d, Parameterized};

/// Single LSTM layer unrolled over a sequence, zero initial state.
///
/// Gate order in the stacked weight matrices is input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub wx: Array2<f64>, // (4H, D)
    pub wh: Array2<f64>, // (4H, H)
    pub b: Array1<f64>,  // (4H)
    pub gwx: Array2<f64>,
    pub gwh: Array2<f64>,
    pub gb: Array1<f64>,
}

#[derive(Debug)]
pub struct LstmCache {
    xs: Vec<Array1<f64>>,
    /// Per step: post-activation gates (i, f, g, o) stacked as 4H.
    gates: Vec<Array1<f64>>,
    cs: Vec<Array1<f64>>,
    hs: Vec<Array1<f64>>,
}

impl LstmLayer {
    pub fn new(rng: &mut ChaCha20Rng, in_dim: usize, hidden: usize) -> Self {
        let mut b = uniform_init_1d(rng, 4 * hidden, hidden);
        // bias the forget gate open so the cell state survives early training
        for k in hidden..2 * hidden {
            b[k] = 1.0;
        }
        LstmLayer {
            wx: uniform_init_2d(rng, 4 * hidden, in_dim, in_dim),
            wh: uniform_init_2d(rng, 4 * hidden, hidden, hidden),
            b,
            gwx: Array2::zeros((4 * hidden, in_dim)),
            gwh: Array2::zeros((4 * hidden, hidden)),
            gb: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.ncols()
    }

    pub fn in_dim(&self) -> usize {
        self.wx.ncols()
    }

    pub fn forward(&self, xs: &[Array1<f64>]) -> (Vec<Array1<f64>>, LstmCache) {
        let hdim = self.hidden();
        let mut h = Array1::zeros(hdim);
        let mut c = Array1::zeros(hdim);
        let mut gates = Vec::with_capacity(xs.len());
        let mut cs = Vec::with_capacity(xs.len());
        let mut hs = Vec::with_capacity(xs.len());
        for x in xs {
            let mut a = self.wx.dot(x) + self.wh.dot(&h) + &self.b;
            for k in 0..hdim {
                a[k] = sigmoid(a[k]); // i
                a[hdim + k] = sigmoid(a[hdim + k]); // f
                a[2 * hdim + k] = a[2 * hdim + k].tanh(); // g
                a[3 * hdim + k] = sigmoid(a[3 * hdim + k]); // o
            }
            let mut c_new = Array1::<f64>::zeros(hdim);
            let mut h_new = Array1::<f64>::zeros(hdim);
            for k in 0..hdim {
                c_new[k] = a[hdim + k] * c[k] + a[k] * a[2 * hdim + k];
                h_new[k] = a[3 * hdim + k] * c_new[k].tanh();
            }
            gates.push(a);
            cs.push(c_new.clone());
            hs.push(h_new.clone());
            c = c_new;
            h = h_new;
        }
        (
            hs.clone(),
            LstmCache { xs: xs.to_vec(), gates, cs, hs },
        )
    }

    /// BPTT; accumulates parameter gradients, returns per-step d loss / d x.
    pub fn backward(&mut self, cache: &LstmCache, dhs: &[Array1<f64>]) -> Vec<Array1<f64>> {
        let hdim = self.hidden();
        let steps = cache.xs.len();
        let mut dxs = vec![Array1::zeros(self.in_dim()); steps];
        let mut dh_next: Array1<f64> = Array1::zeros(hdim);
        let mut dc_next: Array1<f64> = Array1::zeros(hdim);
        for t in (0..steps).rev() {
            let a = &cache.gates[t];
            let c_t = &cache.cs[t];
            let c_prev = if t == 0 { None } else { Some(&cache.cs[t - 1]) };
            let h_prev = if t == 0 { None } else { Some(&cache.hs[t - 1]) };
            let dh = &dhs[t] + &dh_next;

            let mut da = Array1::zeros(4 * hdim);
            let mut dc_prev = Array1::zeros(hdim);
            for k in 0..hdim {
                let (i, f, g, o) = (a[k], a[hdim + k], a[2 * hdim + k], a[3 * hdim + k]);
                let tc = c_t[k].tanh();
                let do_ = dh[k] * tc;
                let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
                let di = dc * g;
                let dg = dc * i;
                let df = dc * c_prev.map_or(0.0, |cp| cp[k]);
                dc_prev[k] = dc * f;
                da[k] = di * i * (1.0 - i);
                da[hdim + k] = df * f * (1.0 - f);
                da[2 * hdim + k] = dg * (1.0 - g * g);
                da[3 * hdim + k] = do_ * o * (1.0 - o);
            }

            let x = &cache.xs[t];
            for (mut grow, &d) in self.gwx.outer_iter_mut().zip(da.iter()) {
                grow.scaled_add(d, x);
            }
            if let Some(hp) = h_prev {
                for (mut grow, &d) in self.gwh.outer_iter_mut().zip(da.iter()) {
                    grow.scaled_add(d, hp);
                }
            }
            self.gb += &da;
            dxs[t] = self.wx.t().dot(&da);
            dh_next = self.wh.t().dot(&da);
            dc_next = dc_prev;
        }
        dxs
    }
}

impl Parameterized for LstmLayer {
    fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        f(
            self.wx.as_slice_mut().unwrap(),
            self.gwx.as_slice_mut().unwrap(),
        );
        f(
            self.wh.as_slice_mut().unwrap(),
            self.gwh.as_slice_mut().unwrap(),
        );
        f(
            self.b.as_slice_mut().unwrap(),
            self.gb.as_slice_mut().unwrap(),
        );
    }
}

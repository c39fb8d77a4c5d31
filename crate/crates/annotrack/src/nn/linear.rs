use ndarray::{Array1, Array2};
use rand_chacha::ChaCha20Rng;

use super::{uniform_init_1d, uniform_init_2d, Parameterized};

/// Fully connected layer, `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>, // (out, in)
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

impl Linear {
    pub fn new(rng: &mut ChaCha20Rng, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: uniform_init_2d(rng, out_dim, in_dim, in_dim),
            b: uniform_init_1d(rng, out_dim, in_dim),
            gw: Array2::zeros((out_dim, in_dim)),
            gb: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }

    /// Accumulates parameter gradients and returns d loss / d x.
    pub fn backward(&mut self, x: &Array1<f64>, dout: &Array1<f64>) -> Array1<f64> {
        for (mut grow, &d) in self.gw.outer_iter_mut().zip(dout.iter()) {
            grow.scaled_add(d, x);
        }
        self.gb += dout;
        self.w.t().dot(dout)
    }
}

impl Parameterized for Linear {
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut lin = Linear::new(&mut rng, 4, 3);
        let x = Array1::from_vec(vec![0.3, -0.2, 0.5, 0.1]);
        // loss = sum(y^2)
        let loss = |l: &Linear, x: &Array1<f64>| l.forward(x).iter().map(|v| v * v).sum::<f64>();

        let y = lin.forward(&x);
        let dout = y.mapv(|v| 2.0 * v);
        lin.zero_grads();
        let dx = lin.backward(&x, &dout);

        let analytic = lin.flat_grads();
        let params = lin.flat_params();
        let eps = 1e-6;
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += eps;
            lin.set_flat_params(&p);
            let up = loss(&lin, &x);
            p[k] -= 2.0 * eps;
            lin.set_flat_params(&p);
            let down = loss(&lin, &x);
            let numeric = (up - down) / (2.0 * eps);
            assert!((numeric - analytic[k]).abs() < 1e-6, "param {k}");
        }
        lin.set_flat_params(&params);
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += eps;
            let up = loss(&lin, &xp);
            xp[k] -= 2.0 * eps;
            let down = loss(&lin, &xp);
            let numeric = (up - down) / (2.0 * eps);
            assert!((numeric - dx[k]).abs() < 1e-6, "input {k}");
        }
    }
}

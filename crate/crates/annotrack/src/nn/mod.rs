//! Minimal f64 neural-net building blocks with hand-written backward passes.
//!
//! Everything here is deliberately small and explicit: forward passes return
//! a cache, backward passes consume it and accumulate parameter gradients in
//! place. The explicit gradients are what the finite-difference checks in
//! the test suite verify.

mod adam;
mod conv;
mod linear;
mod lstm;
mod seq;

pub use adam::Adam;
pub use conv::{Conv2d, ConvCache, ConvExtractor, ExtractorCache};
pub use linear::Linear;
pub use lstm::{LstmCache, LstmLayer};
pub use seq::{PredictorKind, SeqCache, SequencePredictor};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// A model whose parameters and gradients can be walked as flat slices.
///
/// The visit order is fixed per type, which makes flatten/unflatten stable
/// and lets the optimizer and the gradient checker share one interface.
pub trait Parameterized {
    fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64]));

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |v, _| n += v.len());
        n
    }

    fn flat_params(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |v, _| out.extend_from_slice(v));
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit(&mut |v, _| {
            v.copy_from_slice(&flat[off..off + v.len()]);
            off += v.len();
        });
        assert_eq!(off, flat.len(), "parameter count mismatch");
    }

    fn flat_grads(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, g| out.extend_from_slice(g));
        out
    }

    fn zero_grads(&mut self) {
        self.visit(&mut |_, g| g.fill(0.0));
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm. Keeps BPTT through long windows stable when a
/// batch hits an abrupt target change.
pub fn clip_grad_norm<P: Parameterized + ?Sized>(model: &mut P, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    model.visit(&mut |_, g| {
        for &x in g.iter() {
            sq += x * x;
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        model.visit(&mut |_, g| {
            for x in g.iter_mut() {
                *x *= s;
            }
        });
    }
    norm
}

pub(crate) fn uniform_init_2d(rng: &mut ChaCha20Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

pub(crate) fn uniform_init_1d(rng: &mut ChaCha20Rng, n: usize, fan_in: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array1::from_shape_fn(n, |_| rng.gen_range(-bound..bound))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// ln(1 + e^x), numerically stable for large |x|.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_deriv(x: f64) -> f64 {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn flatten_set_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut lin = Linear::new(&mut rng, 3, 4);
        let flat = lin.flat_params();
        assert_eq!(flat.len(), lin.num_params());
        let doubled: Vec<f64> = flat.iter().map(|v| v * 2.0).collect();
        lin.set_flat_params(&doubled);
        assert_eq!(lin.flat_params(), doubled);
    }

    #[test]
    fn softplus_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-12);
        assert_eq!(softplus(100.0), 100.0);
        assert!(softplus(-100.0) > 0.0);
    }
}

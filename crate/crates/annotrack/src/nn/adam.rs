use super::Parameterized;

/// Adam with the usual bias correction; state sized lazily on first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step<P: Parameterized + ?Sized>(&mut self, model: &mut P) {
        let n = model.num_params();
        if self.m.is_empty() {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        }
        assert_eq!(self.m.len(), n, "optimizer bound to a different model");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let mut off = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        model.visit(&mut |vals, grads| {
            for k in 0..vals.len() {
                let g = grads[k];
                m[off + k] = b1 * m[off + k] + (1.0 - b1) * g;
                v[off + k] = b2 * v[off + k] + (1.0 - b2) * g * g;
                let mhat = m[off + k] / b1t;
                let vhat = v[off + k] / b2t;
                vals[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
            off += vals.len();
        });
    }
}

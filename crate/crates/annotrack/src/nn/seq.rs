use ndarray::Array1;
use rand_chacha::ChaCha20Rng;

use super::{Linear, LstmCache, LstmLayer, Parameterized};

/// Sequence-model backbone: three recurrent layers, or an
/// architecture-matched per-slot feed-forward stack for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Lstm,
    FeedForward,
}

#[derive(Debug, Clone)]
enum Layers {
    Lstm(Vec<LstmLayer>),
    FeedForward(Vec<Linear>),
}

/// Three stacked sequence layers followed by a linear head applied per step.
#[derive(Debug, Clone)]
pub struct SequencePredictor {
    layers: Layers,
    pub head: Linear,
}

pub struct SeqCache {
    /// Per layer: inputs fed to that layer plus its own cache.
    lstm: Vec<LstmCache>,
    /// Feed-forward path: per layer, (inputs, pre-activations).
    ff: Vec<(Vec<Array1<f64>>, Vec<Array1<f64>>)>,
    /// Inputs to the head, one per step.
    head_in: Vec<Array1<f64>>,
}

pub const SEQ_DEPTH: usize = 3;

impl SequencePredictor {
    pub fn new(rng: &mut ChaCha20Rng, kind: PredictorKind, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        let layers = match kind {
            PredictorKind::Lstm => {
                let mut v = Vec::with_capacity(SEQ_DEPTH);
                let mut d = in_dim;
                for _ in 0..SEQ_DEPTH {
                    v.push(LstmLayer::new(rng, d, hidden));
                    d = hidden;
                }
                Layers::Lstm(v)
            }
            PredictorKind::FeedForward => {
                let mut v = Vec::with_capacity(SEQ_DEPTH);
                let mut d = in_dim;
                for _ in 0..SEQ_DEPTH {
                    v.push(Linear::new(rng, d, hidden));
                    d = hidden;
                }
                Layers::FeedForward(v)
            }
        };
        SequencePredictor { layers, head: Linear::new(rng, hidden, out_dim) }
    }

    pub fn kind(&self) -> PredictorKind {
        match self.layers {
            Layers::Lstm(_) => PredictorKind::Lstm,
            Layers::FeedForward(_) => PredictorKind::FeedForward,
        }
    }

    pub fn in_dim(&self) -> usize {
        match &self.layers {
            Layers::Lstm(v) => v[0].in_dim(),
            Layers::FeedForward(v) => v[0].in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    /// One output vector per input step.
    pub fn forward(&self, inputs: &[Array1<f64>]) -> (Vec<Array1<f64>>, SeqCache) {
        match &self.layers {
            Layers::Lstm(layers) => {
                let mut caches = Vec::with_capacity(layers.len());
                let mut seq = inputs.to_vec();
                for layer in layers {
                    let (hs, cache) = layer.forward(&seq);
                    caches.push(cache);
                    seq = hs;
                }
                let outs = seq.iter().map(|h| self.head.forward(h)).collect();
                (outs, SeqCache { lstm: caches, ff: Vec::new(), head_in: seq })
            }
            Layers::FeedForward(layers) => {
                let mut ff = Vec::with_capacity(layers.len());
                let mut seq = inputs.to_vec();
                for layer in layers {
                    let pres: Vec<Array1<f64>> = seq.iter().map(|x| layer.forward(x)).collect();
                    let posts: Vec<Array1<f64>> = pres.iter().map(|p| p.mapv(f64::tanh)).collect();
                    ff.push((seq, pres));
                    seq = posts;
                }
                let outs = seq.iter().map(|h| self.head.forward(h)).collect();
                (outs, SeqCache { lstm: Vec::new(), ff, head_in: seq })
            }
        }
    }

    /// Accumulates parameter gradients; returns d loss / d input per step.
    pub fn backward(&mut self, cache: &SeqCache, douts: &[Array1<f64>]) -> Vec<Array1<f64>> {
        let mut dseq: Vec<Array1<f64>> = cache
            .head_in
            .iter()
            .zip(douts)
            .map(|(h, d)| self.head.backward(h, d))
            .collect();
        match &mut self.layers {
            Layers::Lstm(layers) => {
                for (layer, lcache) in layers.iter_mut().zip(&cache.lstm).rev() {
                    dseq = layer.backward(lcache, &dseq);
                }
            }
            Layers::FeedForward(layers) => {
                for (layer, (inputs, pres)) in layers.iter_mut().zip(&cache.ff).rev() {
                    dseq = inputs
                        .iter()
                        .zip(pres)
                        .zip(&dseq)
                        .map(|((x, pre), dpost)| {
                            let dpre = Array1::from_shape_fn(pre.len(), |k| {
                                let t = pre[k].tanh();
                                dpost[k] * (1.0 - t * t)
                            });
                            layer.backward(x, &dpre)
                        })
                        .collect();
                }
            }
        }
        dseq
    }
}

impl Parameterized for SequencePredictor {
    fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        match &mut self.layers {
            Layers::Lstm(v) => {
                for l in v {
                    l.visit(f);
                }
            }
            Layers::FeedForward(v) => {
                for l in v {
                    l.visit(f);
                }
            }
        }
        self.head.visit(f);
    }
}

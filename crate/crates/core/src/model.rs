//! A small multilayer perceptron with explicit forward and backward
//! passes. The output layer is linear: the logit transform and the loss
//! own everything past the last affine map, so clipping composes cleanly
//! at the logit level regardless of the architecture in front of it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Mat64, Rng, Vec64};

/// Hidden-layer activation. ReLU6 clamps hidden activations at 6; the
/// logits stay unbounded either way because the last layer is linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Relu6,
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Relu6 => x.clamp(0.0, 6.0),
        }
    }

    /// Subgradient: zero at every kink.
    #[inline]
    fn derivative(&self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Relu6 => {
                if pre > 0.0 && pre < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Feed-forward MLP: widths [d, h₁, …, K], one weight matrix (out×in)
/// and bias vector per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    widths: Vec<usize>,
    weights: Vec<Mat64>,
    biases: Vec<Vec64>,
    activation: Activation,
}

/// Per-layer parameter gradients, same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub d_weights: Vec<Mat64>,
    pub d_biases: Vec<Vec64>,
}

impl GradBundle {
    pub fn zeros_like(model: &MlpModel) -> Self {
        GradBundle {
            d_weights: model
                .weights
                .iter()
                .map(|w| Mat64::zeros(w.rows(), w.cols()))
                .collect(),
            d_biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for w in &mut self.d_weights {
            w.data_mut().fill(0.0);
        }
        for b in &mut self.d_biases {
            b.fill(0.0);
        }
    }

    /// Euclidean norm of the concatenated gradient.
    pub fn l2_norm(&self) -> f64 {
        let mut sq = 0.0;
        for w in &self.d_weights {
            sq += crate::numerics::dot(w.data(), w.data());
        }
        for b in &self.d_biases {
            sq += crate::numerics::dot(b, b);
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.d_weights {
            for v in w.data_mut() {
                *v *= s;
            }
        }
        for b in &mut self.d_biases {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Norm-clip the concatenated gradient at `threshold`.
    pub fn clip_norm(&mut self, threshold: f64) {
        let norm = self.l2_norm();
        if norm >= threshold && norm > 0.0 {
            self.scale(threshold / norm);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights
            .iter()
            .all(|w| w.data().iter().all(|v| v.is_finite()))
            && self.d_biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Reusable forward-pass buffers: pre-activations and activations per
/// layer (activations[0] is the input).
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pre: Vec<Vec64>,
    act: Vec<Vec64>,
    delta_a: Vec64,
    delta_b: Vec64,
}

impl MlpModel {
    /// He-style initialization: weights ~ Normal(0, 2/fan_in) variance,
    /// biases zero. Deterministic given the rng substream.
    pub fn init(widths: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config(
                "model needs at least input and output widths",
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::config("model widths must be positive"));
        }
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let mut w = Mat64::zeros(fan_out, fan_in);
            for i in 0..fan_out {
                for j in 0..fan_in {
                    w.set(i, j, std * rng.normal());
                }
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpModel {
            widths: widths.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.rows() * w.cols())
            .sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn weight(&self, layer: usize) -> &Mat64 {
        &self.weights[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Mat64 {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Vec64 {
        &mut self.biases[layer]
    }

    /// Visit every parameter with its gradient and velocity slot.
    pub fn sgd_visit(
        &mut self,
        grads: &GradBundle,
        velocity: &mut GradBundle,
        mut f: impl FnMut(&mut f64, f64, &mut f64),
    ) {
        for ((w, g), v) in self
            .weights
            .iter_mut()
            .zip(&grads.d_weights)
            .zip(&mut velocity.d_weights)
        {
            for ((p, &gv), vv) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                f(p, gv, vv);
            }
        }
        for ((b, g), v) in self
            .biases
            .iter_mut()
            .zip(&grads.d_biases)
            .zip(&mut velocity.d_biases)
        {
            for ((p, &gv), vv) in b.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                f(p, gv, vv);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .all(|w| w.data().iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Logits for a single input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec64> {
        let mut cache = ForwardCache::default();
        self.forward_cached(x, &mut cache)?;
        Ok(cache.act.last().unwrap().clone())
    }

    /// Forward pass keeping per-layer buffers for backprop. The logits
    /// end up in `cache.act.last()`.
    pub fn forward_cached(&self, x: &[f64], cache: &mut ForwardCache) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dimension(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let layers = self.num_layers();
        cache.pre.resize(layers, Vec::new());
        cache.act.resize(layers + 1, Vec::new());
        cache.act[0].clear();
        cache.act[0].extend_from_slice(x);
        for l in 0..layers {
            let w = &self.weights[l];
            let out_dim = w.rows();
            // split borrow: input activation vs this layer's buffers
            let (head, tail) = cache.act.split_at_mut(l + 1);
            let input = &head[l];
            let pre = &mut cache.pre[l];
            pre.resize(out_dim, 0.0);
            w.matvec_into(input, pre);
            for (p, &b) in pre.iter_mut().zip(&self.biases[l]) {
                *p += b;
            }
            let act = &mut tail[0];
            act.resize(out_dim, 0.0);
            if l + 1 == layers {
                act.copy_from_slice(pre);
            } else {
                for (a, &p) in act.iter_mut().zip(pre.iter()) {
                    *a = self.activation.apply(p);
                }
            }
        }
        Ok(())
    }

    /// Logits from the most recent `forward_cached` call.
    pub fn cached_logits<'c>(&self, cache: &'c ForwardCache) -> &'c [f64] {
        cache.act.last().unwrap()
    }

    /// Backprop from `upstream` = dLoss/dLogits, accumulating
    /// `scale * gradient` into `grads`. Uses the cache of the matching
    /// forward pass. ReLU subgradients are zero at every kink.
    pub fn backward_into(
        &self,
        cache: &mut ForwardCache,
        upstream: &[f64],
        scale: f64,
        grads: &mut GradBundle,
    ) {
        let layers = self.num_layers();
        assert_eq!(upstream.len(), self.output_dim(), "upstream length");
        cache.delta_a.clear();
        cache.delta_a.extend_from_slice(upstream);
        for l in (0..layers).rev() {
            let w = &self.weights[l];
            let input = &cache.act[l];
            // parameter gradients
            let gw = &mut grads.d_weights[l];
            for i in 0..w.rows() {
                let di = cache.delta_a[i] * scale;
                if di != 0.0 {
                    let grow = gw.row_mut(i);
                    for (g, &a) in grow.iter_mut().zip(input.iter()) {
                        *g += di * a;
                    }
                }
                grads.d_biases[l][i] += di;
            }
            if l == 0 {
                break;
            }
            // delta for the previous layer
            cache.delta_b.resize(w.cols(), 0.0);
            w.transpose_matvec_into(&cache.delta_a, &mut cache.delta_b);
            for (d, &p) in cache.delta_b.iter_mut().zip(cache.pre[l - 1].iter()) {
                *d *= self.activation.derivative(p);
            }
            std::mem::swap(&mut cache.delta_a, &mut cache.delta_b);
        }
    }

    /// Serialize to a flat JSON checkpoint. f64 values survive the text
    /// round trip bit-exactly.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let model: MlpModel = serde_json::from_str(&text)?;
        if model.widths.len() < 2
            || model.weights.len() != model.widths.len() - 1
            || model.biases.len() != model.weights.len()
        {
            return Err(Error::config("checkpoint shape chain is inconsistent"));
        }
        for (l, w) in model.weights.iter().enumerate() {
            if w.rows() != model.widths[l + 1] || w.cols() != model.widths[l] {
                return Err(Error::config(format!("checkpoint layer {l} has wrong shape")));
            }
            if model.biases[l].len() != model.widths[l + 1] {
                return Err(Error::config(format!("checkpoint bias {l} has wrong length")));
            }
        }
        Ok(model)
    }
}

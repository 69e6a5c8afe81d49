//! Rectifier multilayer perceptron with softmax outputs, analytic gradients
//! for soft-target cross-entropy, and SGD with momentum under a cosine
//! learning-rate schedule.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Floor applied to every probability before taking its logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// One affine layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi)
        }));
    }
}

/// Network parameters for an architecture `d -> h1 -> ... -> c`. Hidden
/// layers use a rectifier, the output layer a softmax.
///
/// [`Gradients`] share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

pub type Gradients = Mlp;

impl Mlp {
    /// All-zero parameters for the given layer sizes (input first, classes
    /// last).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "layer sizes {sizes:?} need an input and an output, all non-zero"
            )));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::ShapeMismatch(format!("layer {i} buffers do not match its shape")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::ShapeMismatch(format!("layer {i} input does not chain")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("parameters"));
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn fill(&mut self, value: f64) {
        self.params_mut().for_each(|p| *p = value);
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += scale * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.params().fold(0.0, |m, p| m.max(p.abs()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input features"));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.logits_unchecked(x, &mut Vec::new()))
    }

    fn logits_unchecked(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) -> Vec<f64> {
        acts.clear();
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[i], &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts.pop().expect("at least one layer")
    }

    /// Softmax class probabilities.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits_unchecked(x, &mut Vec::new()))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Loss `-sum_j t_j log f_j(x)` and its exact parameter gradients.
    pub fn grad_soft_target(&self, x: &[f64], target: &[f64]) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        check_target(target, self.classes())?;
        let mut grads = self.zeros_like();
        let (loss, _) = self.accumulate_unchecked(x, target, 1.0, &mut grads);
        Ok((loss, grads))
    }

    /// `sum_i w_i * CE(t_i, f(x_i))` over `(x_i, t_i, w_i)` triples, with
    /// its gradients.
    pub fn grad_weighted(&self, terms: &[(&[f64], &[f64], f64)]) -> Result<(f64, Gradients)> {
        let mut grads = self.zeros_like();
        let mut total = 0.0;
        for &(x, t, w) in terms {
            self.check_input(x)?;
            check_target(t, self.classes())?;
            if !w.is_finite() {
                return Err(Error::NonFinite("term weight"));
            }
            let (loss, _) = self.accumulate_unchecked(x, t, w, &mut grads);
            total += w * loss;
        }
        Ok((total, grads))
    }

    /// Adds `scale * d/dθ [-sum_j t_j log f_j(x)]` into `grads` and returns
    /// the unscaled loss with the prediction. Inputs are assumed validated.
    pub(crate) fn accumulate_unchecked(
        &self,
        x: &[f64],
        target: &[f64],
        scale: f64,
        grads: &mut Gradients,
    ) -> (f64, Vec<f64>) {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let logits = self.logits_unchecked(x, &mut acts);
        let logp = log_softmax(&logits);
        let mass: f64 = target.iter().sum();
        let loss = -target
            .iter()
            .zip(&logp)
            .map(|(t, lp)| if *t == 0.0 { 0.0 } else { t * lp.max(LOG_FLOOR.ln()) })
            .sum::<f64>();
        let probs: Vec<f64> = logp.iter().map(|lp| lp.exp()).collect();
        if mass == 0.0 {
            return (loss, probs);
        }
        // dL/dz = (sum t) f - t
        let mut delta: Vec<f64> = probs
            .iter()
            .zip(target)
            .map(|(f, t)| scale * (mass * f - t))
            .collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts[l];
            let g = &mut grads.layers[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        (loss, probs)
    }

    /// Versioned decimal-text dump; see [`Mlp::from_checkpoint`].
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::from("ooc-pll-mlp v1\n");
        let sizes: Vec<String> = self.sizes().iter().map(usize::to_string).collect();
        let _ = writeln!(s, "sizes {}", sizes.join(" "));
        for (i, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer {i} {} {}", layer.inputs, layer.outputs);
            let w: Vec<String> = layer.weights.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(s, "weights {}", w.join(" "));
            let b: Vec<String> = layer.bias.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(s, "bias {}", b.join(" "));
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("ooc-pll-mlp v1") {
            return Err(bad("missing `ooc-pll-mlp v1` header"));
        }
        let sizes: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("sizes "))
            .ok_or_else(|| bad("missing sizes line"))?
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad layer size"))?;
        let mut net = Self::zeros(&sizes)?;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let head = format!("layer {i} {} {}", layer.inputs, layer.outputs);
            if lines.next() != Some(head.as_str()) {
                return Err(Error::Checkpoint(format!("expected `{head}`")));
            }
            for (tag, buf) in [("weights", &mut layer.weights), ("bias", &mut layer.bias)] {
                let values: Vec<f64> = lines
                    .next()
                    .and_then(|l| l.strip_prefix(tag))
                    .ok_or_else(|| Error::Checkpoint(format!("layer {i}: missing {tag}")))?
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Checkpoint(format!("layer {i}: bad {tag} value")))?;
                if values.len() != buf.len() {
                    return Err(Error::Checkpoint(format!("layer {i}: wrong {tag} count")));
                }
                *buf = values;
            }
        }
        Self::from_layers(net.layers)
    }
}

pub(crate) fn check_target(target: &[f64], classes: usize) -> Result<()> {
    if target.len() != classes {
        return Err(Error::DimensionMismatch {
            expected: classes,
            actual: target.len(),
        });
    }
    for (class, &value) in target.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite("target"));
        }
        if value < 0.0 {
            return Err(Error::NegativeTarget { class, value });
        }
    }
    Ok(())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = j;
        }
    }
    best
}

/// Single-cycle cosine decay from `base_lr` at epoch 0 to zero at
/// `total_epochs`.
pub fn cosine_lr(base_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs == 0 {
        return base_lr;
    }
    let t = epoch.min(total_epochs) as f64 / total_epochs as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// SGD-with-momentum state. Weight decay is coupled: it is added to the
/// gradient before entering the velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epoch: usize,
    pub total_epochs: usize,
}

impl OptimizerState {
    pub fn new(
        params: &Mlp,
        base_lr: f64,
        momentum: f64,
        weight_decay: f64,
        total_epochs: usize,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter {
                name: "momentum",
                reason: format!("{momentum} is not in [0, 1)"),
            });
        }
        Ok(Self {
            velocity: params.zeros_like(),
            base_lr,
            momentum,
            weight_decay,
            epoch: 0,
            total_epochs,
        })
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.base_lr, self.epoch, self.total_epochs)
    }
}

/// `v <- momentum * v + (g + wd * θ)`, `θ <- θ - lr * v`.
pub fn sgd_step(params: &mut Mlp, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.velocity) {
        return Err(Error::ShapeMismatch(
            "parameters, gradients and velocity differ in shape".into(),
        ));
    }
    let lr = state.lr();
    let (mu, wd) = (state.momentum, state.weight_decay);
    for ((p, g), v) in params
        .params_mut()
        .zip(grads.params())
        .zip(state.velocity.params_mut())
    {
        *v = mu * *v + (g + wd * *p);
        *p -= lr * *v;
    }
    Ok(())
}

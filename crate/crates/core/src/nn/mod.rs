//! Dense feed-forward classifier with explicit, hand-written gradients.
//!
//! Everything is `f64` and deterministic given a seed. Models are plain value
//! types: training code clones them freely and mutates only its own copy.

pub mod checkpoint;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative as a function of the pre-activation value.
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl ModelDims {
    pub fn new(input: usize, hidden: Vec<usize>, classes: usize) -> Self {
        ModelDims {
            input,
            hidden,
            classes,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    /// (fan_in, fan_out) for every layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut sizes = Vec::with_capacity(self.layer_count() + 1);
        sizes.push(self.input);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.classes);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("class count must be at least 2".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// One affine layer; weights are row-major `(out_dim x in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut z = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                z += w * xi;
            }
            out.push(z);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    pub dims: ModelDims,
    pub activation: Activation,
    pub layers: Vec<Layer>,
    /// Seed the parameters were drawn from, if the model came from `init_model`.
    pub init_seed: Option<u64>,
}

/// Fresh model with uniform `±sqrt(6 / (fan_in + fan_out))` weights and zero
/// biases, drawn in layer order from a ChaCha stream.
pub fn init_model(dims: &ModelDims, seed: u64) -> Result<LayeredModel> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(dims.layer_count());
    for (fan_in, fan_out) in dims.layer_shapes() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new(-limit, limit);
        let weights = (0..fan_in * fan_out)
            .map(|_| dist.sample(&mut rng))
            .collect();
        layers.push(Layer {
            in_dim: fan_in,
            out_dim: fan_out,
            weights,
            bias: vec![0.0; fan_out],
        });
    }
    Ok(LayeredModel {
        dims: dims.clone(),
        activation: Activation::Relu,
        layers,
        init_seed: Some(seed),
    })
}

impl LayeredModel {
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Largest absolute difference across all parameters of two same-shaped
    /// models.
    pub fn max_param_delta(&self, other: &LayeredModel) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(
                "models have different dimensions".into(),
            ));
        }
        let mut max = 0.0f64;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                max = max.max((x - y).abs());
            }
            for (x, y) in a.bias.iter().zip(&b.bias) {
                max = max.max((x - y).abs());
            }
        }
        Ok(max)
    }

    /// Logits for one input. Hidden layers apply the activation; the output
    /// layer is linear.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dims.input {
            return Err(Error::ShapeMismatch(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.dims.input
            )));
        }
        let mut trace = Trace::new(self);
        self.forward_trace(x, &mut trace);
        Ok(trace.acts.last().expect("model has layers").clone())
    }

    fn forward_trace(&self, x: &[f64], trace: &mut Trace) {
        let n = self.layers.len();
        let mut input = x;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine_into(input, &mut trace.preacts[l]);
            let last = l + 1 == n;
            trace.acts[l].clear();
            if last {
                trace.acts[l].extend_from_slice(&trace.preacts[l]);
            } else {
                trace.acts[l]
                    .extend(trace.preacts[l].iter().map(|&z| self.activation.apply(z)));
            }
            input = &trace.acts[l];
        }
    }

    /// Mean gradient of the loss over `batch`, one entry per layer. Layers
    /// masked off contribute exactly zero gradients.
    pub fn backward(
        &self,
        batch: &[(&[f64], usize)],
        loss: &LossKind,
        mask: &LayerMask,
    ) -> Result<GradientSet> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        mask.check_for(self)?;
        if let LossKind::KlVsTeacher(DistillTarget::Model(t)) = loss {
            if t.dims.input != self.dims.input || t.dims.classes != self.dims.classes {
                return Err(Error::ShapeMismatch(
                    "teacher and student disagree on input or class dimensions".into(),
                ));
            }
        }

        let n_layers = self.layers.len();
        let lowest = mask.lowest_trainable().unwrap_or(n_layers);
        let width = self.max_width();
        let mut grads = GradientSet::zeros_like(self);
        let mut trace = Trace::new(self);
        let mut teacher_trace = match loss {
            LossKind::KlVsTeacher(DistillTarget::Model(t)) => Some(Trace::new(t)),
            _ => None,
        };
        let mut delta = vec![0.0; width];
        let mut delta_prev = vec![0.0; width];
        let mut lp = vec![0.0; self.dims.classes];
        let mut lq = vec![0.0; self.dims.classes];
        let mut loss_sum = 0.0;

        for &(x, label) in batch {
            if x.len() != self.dims.input {
                return Err(Error::ShapeMismatch(format!(
                    "batch input has {} features, model expects {}",
                    x.len(),
                    self.dims.input
                )));
            }
            self.forward_trace(x, &mut trace);
            let logits = &trace.acts[n_layers - 1];

            let classes = self.dims.classes;
            let sample_loss = match loss {
                LossKind::Task => {
                    if label >= classes {
                        return Err(Error::LabelOutOfRange { label, classes });
                    }
                    log_softmax_into(logits, &mut lp);
                    for k in 0..classes {
                        delta[k] = lp[k].exp();
                    }
                    delta[label] -= 1.0;
                    -lp[label]
                }
                LossKind::KlVsTeacher(target) => {
                    log_softmax_into(logits, &mut lp);
                    match target {
                        DistillTarget::Uniform => {
                            let u = -(classes as f64).ln();
                            lq.iter_mut().for_each(|v| *v = u);
                        }
                        DistillTarget::Model(t) => {
                            let tt = teacher_trace.as_mut().expect("teacher trace");
                            t.forward_trace(x, tt);
                            log_softmax_into(&tt.acts[t.layers.len() - 1], &mut lq);
                        }
                    }
                    let mut kl = 0.0;
                    for k in 0..classes {
                        kl += lp[k].exp() * (lp[k] - lq[k]);
                    }
                    for k in 0..classes {
                        delta[k] = lp[k].exp() * ((lp[k] - lq[k]) - kl);
                    }
                    kl.max(0.0)
                }
            };
            loss_sum += sample_loss;

            for l in (lowest..n_layers).rev() {
                let layer = &self.layers[l];
                let a_in: &[f64] = if l == 0 { x } else { &trace.acts[l - 1] };
                if mask.trainable[l] {
                    let g = &mut grads.layers[l];
                    for o in 0..layer.out_dim {
                        let d = delta[o];
                        g.bias[o] += d;
                        let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (gw, ai) in row.iter_mut().zip(a_in) {
                            *gw += d * ai;
                        }
                    }
                }
                if l > lowest {
                    delta_prev[..layer.in_dim].iter_mut().for_each(|v| *v = 0.0);
                    for o in 0..layer.out_dim {
                        let d = delta[o];
                        if d != 0.0 {
                            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                            for i in 0..layer.in_dim {
                                delta_prev[i] += row[i] * d;
                            }
                        }
                    }
                    let pre = &trace.preacts[l - 1];
                    for i in 0..layer.in_dim {
                        delta_prev[i] *= self.activation.grad(pre[i]);
                    }
                    std::mem::swap(&mut delta, &mut delta_prev);
                }
            }
        }

        let scale = 1.0 / batch.len() as f64;
        for g in &mut grads.layers {
            g.weights.iter_mut().for_each(|v| *v *= scale);
            g.bias.iter_mut().for_each(|v| *v *= scale);
        }
        grads.batch_size = batch.len();
        grads.mean_loss = loss_sum * scale;
        Ok(grads)
    }

    /// Gradient of the task loss with respect to the input features.
    pub fn input_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        if x.len() != self.dims.input {
            return Err(Error::ShapeMismatch(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.dims.input
            )));
        }
        if label >= self.dims.classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.dims.classes,
            });
        }
        let mut trace = Trace::new(self);
        self.forward_trace(x, &mut trace);
        let n_layers = self.layers.len();
        let mut delta = softmax(&trace.acts[n_layers - 1]);
        delta[label] -= 1.0;
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let mut prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                if d != 0.0 {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for i in 0..layer.in_dim {
                        prev[i] += row[i] * d;
                    }
                }
            }
            if l > 0 {
                let pre = &trace.preacts[l - 1];
                for i in 0..layer.in_dim {
                    prev[i] *= self.activation.grad(pre[i]);
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// One SGD step. `Descent` subtracts `lr * grad`, `Ascent` adds it (the
    /// reversal gradient-ascent methods rely on). Errors if any parameter
    /// becomes non-finite.
    pub fn apply_step(
        &mut self,
        grads: &GradientSet,
        lr: f64,
        direction: StepDirection,
    ) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::Config(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        grads.check_shape(self)?;
        if lr == 0.0 {
            return Ok(());
        }
        let step = match direction {
            StepDirection::Descent => -lr,
            StepDirection::Ascent => lr,
        };
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w += step * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b += step * gb;
            }
        }
        for layer in &self.layers {
            let finite = layer.weights.iter().all(|w| w.is_finite())
                && layer.bias.iter().all(|b| b.is_finite());
            if !finite {
                return Err(Error::NonFinite {
                    context: "parameter update".into(),
                });
            }
        }
        Ok(())
    }

    fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim.max(l.in_dim))
            .max()
            .unwrap_or(0)
    }
}

/// Which distribution a distillation loss pulls the student toward.
#[derive(Debug, Clone, Copy)]
pub enum DistillTarget<'a> {
    Model(&'a LayeredModel),
    /// Uniform distribution over the classes.
    Uniform,
}

#[derive(Debug, Clone, Copy)]
pub enum LossKind<'a> {
    /// Cross-entropy against the integer label.
    Task,
    /// KL(student distribution, target distribution); labels are ignored.
    KlVsTeacher(DistillTarget<'a>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDirection {
    Descent,
    Ascent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
    pub batch_size: usize,
    pub mean_loss: f64,
}

impl GradientSet {
    pub fn zeros_like(model: &LayeredModel) -> GradientSet {
        GradientSet {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            batch_size: 0,
            mean_loss: 0.0,
        }
    }

    fn check_shape(&self, model: &LayeredModel) -> Result<()> {
        let congruent = self.layers.len() == model.layers.len()
            && self.layers.iter().zip(&model.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len()
            });
        if congruent {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "gradient set does not match model layout".into(),
            ))
        }
    }

    /// Element-wise sum with another gradient set over the same batch; losses
    /// add as well. Used to combine task and distillation objectives.
    pub fn add(&mut self, other: &GradientSet) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self.batch_size != other.batch_size
        {
            return Err(Error::ShapeMismatch(
                "gradient sets disagree on layout or batch size".into(),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.len() != b.weights.len() || a.bias.len() != b.bias.len() {
                return Err(Error::ShapeMismatch(
                    "gradient sets disagree on layer shapes".into(),
                ));
            }
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        self.mean_loss += other.mean_loss;
        Ok(())
    }
}

/// Per-layer trainability flags; frozen layers receive zero gradients and are
/// never updated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    trainable: Vec<bool>,
}

impl LayerMask {
    pub fn all(layer_count: usize) -> LayerMask {
        LayerMask {
            trainable: vec![true; layer_count],
        }
    }

    /// Only the last `k` layers trainable.
    pub fn last_k(layer_count: usize, k: usize) -> Result<LayerMask> {
        if k == 0 || k > layer_count {
            return Err(Error::Config(format!(
                "k must be between 1 and the layer count ({layer_count}), got {k}"
            )));
        }
        let mut trainable = vec![false; layer_count];
        for flag in trainable.iter_mut().skip(layer_count - k) {
            *flag = true;
        }
        Ok(LayerMask { trainable })
    }

    pub fn flags(&self) -> &[bool] {
        &self.trainable
    }

    fn lowest_trainable(&self) -> Option<usize> {
        self.trainable.iter().position(|&t| t)
    }

    fn check_for(&self, model: &LayeredModel) -> Result<()> {
        if self.trainable.len() == model.layers.len() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "mask covers {} layers, model has {}",
                self.trainable.len(),
                model.layers.len()
            )))
        }
    }
}

/// Scratch space for one forward pass: pre-activations and activations per
/// layer, reused across samples.
struct Trace {
    preacts: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

impl Trace {
    fn new(model: &LayeredModel) -> Trace {
        let caps: Vec<usize> = model.layers.iter().map(|l| l.out_dim).collect();
        Trace {
            preacts: caps.iter().map(|&c| Vec::with_capacity(c)).collect(),
            acts: caps.iter().map(|&c| Vec::with_capacity(c)).collect(),
        }
    }
}

fn check_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.into(),
        })
    }
}

fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z - lse;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax_into(logits, &mut out);
    out.iter_mut().for_each(|v| *v = v.exp());
    out
}

/// Cross-entropy of the softmax distribution against an integer label,
/// stabilized by max subtraction so extreme logits stay finite.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::ShapeMismatch("empty logits".into()));
    }
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    check_finite(logits, "cross-entropy logits")?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    Ok((lse - logits[label]).max(0.0))
}

/// KL divergence between the softmax distributions of two logit vectors,
/// KL(p, q). Zero when the logits agree; not symmetric.
pub fn kl_divergence(p_logits: &[f64], q_logits: &[f64]) -> Result<f64> {
    if p_logits.is_empty() || p_logits.len() != q_logits.len() {
        return Err(Error::ShapeMismatch(format!(
            "logit lengths {} and {} must match and be non-empty",
            p_logits.len(),
            q_logits.len()
        )));
    }
    check_finite(p_logits, "kl p logits")?;
    check_finite(q_logits, "kl q logits")?;
    let mut lp = vec![0.0; p_logits.len()];
    let mut lq = vec![0.0; q_logits.len()];
    log_softmax_into(p_logits, &mut lp);
    log_softmax_into(q_logits, &mut lq);
    let kl: f64 = lp
        .iter()
        .zip(&lq)
        .map(|(&a, &b)| a.exp() * (a - b))
        .sum();
    Ok(kl.max(0.0))
}

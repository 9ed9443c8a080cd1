//! Training and unlearning: the original/gold baselines plus eight methods
//! that erase the influence of a forget set from a trained model.
//!
//! Every method is deterministic given its config seed, touches only the data
//! splits its signature receives, and reports wall time from the injected
//! clock.

mod methods;

pub use methods::{
    bad_teaching, cf_k, finetune_ft, neg_grad, neg_grad_plus, scrub,
    synthesize_noise, unsir, IncompetentTeacher,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{
    init_model, LayerMask, LayeredModel, LossKind, ModelDims, StepDirection,
};
use crate::seeds::derive_seed;

/// Identifiers for unlearning methods and the two reference rows.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ft,
    Ng,
    NgPlus,
    CfK,
    Unsir,
    Bt,
    BtLight,
    Scrub,
    Original,
    Gold,
}

impl Method {
    pub const UNLEARNING: [Method; 8] = [
        Method::Ft,
        Method::Ng,
        Method::NgPlus,
        Method::CfK,
        Method::Unsir,
        Method::Bt,
        Method::BtLight,
        Method::Scrub,
    ];

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::Original | Method::Gold)
    }

    /// Learning-rate grid the method is swept over by default: descent-heavy
    /// methods tolerate aggressive rates, ascent/distillation methods need
    /// gentle ones.
    pub fn lr_family(self) -> &'static [f64] {
        match self {
            Method::Ng | Method::NgPlus | Method::Bt | Method::BtLight | Method::Scrub => {
                &[5e-7, 1e-6, 5e-6]
            }
            Method::Ft | Method::CfK | Method::Unsir => &[1e-5, 5e-5, 1e-4],
            Method::Original | Method::Gold => &[],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ft => "ft",
            Method::Ng => "ng",
            Method::NgPlus => "ng_plus",
            Method::CfK => "cf_k",
            Method::Unsir => "unsir",
            Method::Bt => "bt",
            Method::BtLight => "bt_light",
            Method::Scrub => "scrub",
            Method::Original => "original",
            Method::Gold => "gold",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Ok(match s {
            "ft" => Method::Ft,
            "ng" => Method::Ng,
            "ng_plus" => Method::NgPlus,
            "cf_k" => Method::CfK,
            "unsir" => Method::Unsir,
            "bt" => Method::Bt,
            "bt_light" => Method::BtLight,
            "scrub" => Method::Scrub,
            "original" => Method::Original,
            "gold" => Method::Gold,
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerId {
    Sgd,
}

/// How the original and gold models are trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecipe {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerId,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        TrainRecipe {
            epochs: 60,
            lr: 0.05,
            batch_size: 32,
            seed: 7,
            optimizer: OptimizerId::Sgd,
        }
    }
}

impl TrainRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("recipe epochs must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config("recipe lr must be finite and positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("recipe batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

fn default_epochs() -> usize {
    1
}
fn default_batch_size() -> usize {
    32
}
fn default_k() -> usize {
    1
}
fn default_noise_steps() -> usize {
    20
}
fn default_noise_lr() -> f64 {
    0.1
}
fn default_scrub_steps() -> usize {
    2
}
fn default_retain_weight() -> f64 {
    1.0
}

/// Per-run knobs for one unlearning method. Fields a method does not use are
/// ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    /// Learning rate; 0 means "use the gentlest rate of the method's family".
    #[serde(default)]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// How many trailing layers stay trainable (cf_k).
    #[serde(default = "default_k")]
    pub k: usize,
    /// Ascent steps per synthesized noise sample (unsir).
    #[serde(default = "default_noise_steps")]
    pub noise_steps: usize,
    #[serde(default = "default_noise_lr")]
    pub noise_lr: f64,
    /// Forget-ascent epochs per cycle (scrub).
    #[serde(default = "default_scrub_steps")]
    pub scrub_max_steps: usize,
    /// Retain-descent epochs per cycle (scrub).
    #[serde(default = "default_scrub_steps")]
    pub scrub_min_steps: usize,
    /// Weight of the forget-ascent term in ng_plus.
    #[serde(default = "default_retain_weight")]
    pub retain_weight: f64,
    /// Stream seed for shuffling, noise draws, and fresh-model inits; the
    /// harness sets this per grid cell.
    #[serde(default)]
    pub seed: u64,
}

impl MethodConfig {
    pub fn new(method: Method) -> MethodConfig {
        MethodConfig {
            method,
            lr: method.lr_family().first().copied().unwrap_or(0.0),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            k: default_k(),
            noise_steps: default_noise_steps(),
            noise_lr: default_noise_lr(),
            scrub_max_steps: default_scrub_steps(),
            scrub_min_steps: default_scrub_steps(),
            retain_weight: default_retain_weight(),
            seed: 0,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> MethodConfig {
        self.lr = lr;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> MethodConfig {
        self.seed = seed;
        self
    }

    /// Fill the learning rate from the method family when left at 0.
    pub fn resolve_defaults(&mut self) {
        if self.lr == 0.0 && !self.method.is_baseline() {
            self.lr = self.method.lr_family()[0];
        }
    }

    /// Grid-level checks. Individual method functions accept looser configs
    /// (for instance a zero learning rate) so behavior at the boundaries
    /// stays testable.
    pub fn validate(&self) -> Result<()> {
        if self.method.is_baseline() {
            return Ok(());
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "{}: lr must be finite and positive",
                self.method
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config(format!(
                "{}: epochs must be at least 1",
                self.method
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(format!(
                "{}: batch_size must be at least 1",
                self.method
            )));
        }
        if self.method == Method::CfK && self.k == 0 {
            return Err(Error::Config("cf_k: k must be at least 1".into()));
        }
        if self.method == Method::Unsir {
            if self.noise_steps == 0 {
                return Err(Error::Config("unsir: noise_steps must be at least 1".into()));
            }
            if !self.noise_lr.is_finite() || self.noise_lr < 0.0 {
                return Err(Error::Config(
                    "unsir: noise_lr must be finite and non-negative".into(),
                ));
            }
        }
        if self.method == Method::NgPlus
            && (!self.retain_weight.is_finite() || self.retain_weight < 0.0)
        {
            return Err(Error::Config(
                "ng_plus: retain_weight must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one unlearning run: the updated model, how long it took, and the
/// exact config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnOutcome {
    pub model: LayeredModel,
    pub elapsed_secs: f64,
    pub config: MethodConfig,
}

// Independent randomness streams derived from one config seed.
pub(crate) const STREAM_RETAIN: u64 = 1;
pub(crate) const STREAM_FORGET: u64 = 2;
pub(crate) const STREAM_NOISE: u64 = 3;
pub(crate) const STREAM_INIT: u64 = 4;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Train a fresh model on `data` with plain mini-batch SGD. Returns the model
/// and the elapsed seconds from the injected clock.
pub fn train_original(
    recipe: &TrainRecipe,
    data: &[Sample],
    dims: &ModelDims,
    clock: &dyn Clock,
) -> Result<(LayeredModel, f64)> {
    recipe.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData(
            "cannot train on an empty dataset".into(),
        ));
    }
    let mut timer = clock.timer();
    let mut model = init_model(dims, recipe.seed)?;
    let mask = LayerMask::all(model.layers.len());
    let mut rng = stream_rng(recipe.seed, STREAM_RETAIN);
    for epoch in 0..recipe.epochs {
        run_epoch(
            &mut model,
            data,
            &LossKind::Task,
            StepDirection::Descent,
            &mask,
            recipe.lr,
            recipe.batch_size,
            &mut rng,
            epoch,
            "baseline training",
        )?;
    }
    Ok((model, timer.elapsed_secs()))
}

/// Apply the configured unlearning method to a copy of `model`. The baseline
/// identifiers are not runnable methods and are rejected.
pub fn run_method(
    model: &LayeredModel,
    retain: &[Sample],
    forget: &[Sample],
    cfg: &MethodConfig,
    clock: &dyn Clock,
) -> Result<UnlearnOutcome> {
    let copy = model.clone();
    match cfg.method {
        Method::Ft => finetune_ft(copy, retain, cfg, clock),
        Method::Ng => neg_grad(copy, forget, cfg, clock),
        Method::NgPlus => neg_grad_plus(copy, retain, forget, cfg, clock),
        Method::CfK => cf_k(copy, retain, cfg, clock),
        Method::Unsir => unsir(copy, retain, forget, cfg, clock),
        Method::Bt => bad_teaching(copy, retain, forget, cfg, IncompetentTeacher::Fresh, clock),
        Method::BtLight => {
            bad_teaching(copy, retain, forget, cfg, IncompetentTeacher::Uniform, clock)
        }
        Method::Scrub => scrub(copy, retain, forget, cfg, clock),
        Method::Original | Method::Gold => Err(Error::Config(format!(
            "{} is a baseline row, not a runnable unlearning method",
            cfg.method
        ))),
    }
}

pub(crate) fn batch_refs<'a>(
    data: &'a [Sample],
    idxs: &[usize],
) -> Vec<(&'a [f64], usize)> {
    idxs.iter()
        .map(|&i| (data[i].features.as_slice(), data[i].label))
        .collect()
}

pub(crate) fn shuffled_batches(
    n: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// One pass over `data` in shuffled mini-batches. Empty data is a no-op.
/// Returns the mean per-sample loss observed before each step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_epoch(
    model: &mut LayeredModel,
    data: &[Sample],
    loss: &LossKind,
    direction: StepDirection,
    mask: &LayerMask,
    lr: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    context: &str,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut loss_sum = 0.0;
    for (bi, idxs) in shuffled_batches(data.len(), batch_size, rng).iter().enumerate() {
        let batch = batch_refs(data, idxs);
        let grads = backward_checked(model, &batch, loss, mask, epoch, bi, context)?;
        step_checked(model, &grads, lr, direction, epoch, bi, context)?;
        loss_sum += grads.mean_loss * idxs.len() as f64;
    }
    Ok(loss_sum / data.len() as f64)
}

/// Backward pass whose numeric blowups surface as training-diverged errors
/// naming the epoch and batch; structural errors pass through unchanged.
pub(crate) fn backward_checked(
    model: &LayeredModel,
    batch: &[(&[f64], usize)],
    loss: &LossKind,
    mask: &LayerMask,
    epoch: usize,
    bi: usize,
    context: &str,
) -> Result<crate::nn::GradientSet> {
    model.backward(batch, loss, mask).map_err(|e| match e {
        Error::NonFinite { .. } => Error::TrainingDiverged {
            epoch,
            batch: bi,
            context: format!("{context}: forward/backward produced non-finite values"),
        },
        other => other,
    })
}

/// Divergence-aware step: a non-finite loss or parameter overflow becomes a
/// training-diverged error naming the epoch and batch.
pub(crate) fn step_checked(
    model: &mut LayeredModel,
    grads: &crate::nn::GradientSet,
    lr: f64,
    direction: StepDirection,
    epoch: usize,
    batch: usize,
    context: &str,
) -> Result<()> {
    if !grads.mean_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch,
            batch,
            context: format!("{context}: loss became non-finite"),
        });
    }
    model.apply_step(grads, lr, direction).map_err(|e| match e {
        Error::NonFinite { .. } => Error::TrainingDiverged {
            epoch,
            batch,
            context: format!("{context}: parameters overflowed"),
        },
        other => other,
    })
}

//! Evaluation metrics: macro-F1, the membership attack, and the composite
//! scores built on them (utility, efficacy, efficiency, GUM, NoMUS, speedup).

mod f1;
mod mia;

pub use f1::macro_f1;
pub use mia::{
    balanced_accuracy, fit_threshold, mia_from_pools, mia_score, sample_losses,
    MIA_MIN_POOL,
};

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::LayeredModel;
use crate::unlearn::Method;

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::MetricInput(format!(
            "{name} must lie in [0,1], got {v}"
        )));
    }
    Ok(())
}

fn check_positive_time(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::Timing(format!(
            "{name} must be a positive duration, got {v}"
        )));
    }
    Ok(())
}

/// Argmax class per sample under `model`; ties resolve to the lowest index.
pub fn predictions(model: &LayeredModel, samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            let logits = model.forward(&s.features)?;
            let mut best = 0usize;
            for (i, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = i;
                }
            }
            Ok(best)
        })
        .collect()
}

/// Macro-F1 of `model`'s argmax predictions on `samples`.
pub fn model_macro_f1(
    model: &LayeredModel,
    samples: &[Sample],
    classes: usize,
) -> Result<f64> {
    let preds = predictions(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    macro_f1(&preds, &labels, classes)
}

/// How close the unlearned model's test performance stays to the gold
/// model's: `1 - |f1_gold - f1_unlearned|`.
pub fn utility_u(f1_t_unlearned: f64, f1_t_gold: f64) -> Result<f64> {
    check_unit("unlearned test F1", f1_t_unlearned)?;
    check_unit("gold test F1", f1_t_gold)?;
    Ok(1.0 - (f1_t_gold - f1_t_unlearned).abs())
}

/// How far the unlearned model's membership-attack score moved from the
/// original model's toward the gold model's. Attack scores are saturated
/// first: the unlearned score is capped at the original's, and the gold score
/// at the midpoint of the other two, so overshooting past gold is not
/// rewarded and E stays in [0,1]. When the original and saturated gold scores
/// coincide the formula's denominator vanishes; the run then scores 1 if it
/// is at or below the gold reference and 0 otherwise.
pub fn efficacy_e(mia_u: f64, mia_g: f64, mia_o: f64) -> Result<f64> {
    check_unit("unlearned attack score", mia_u)?;
    check_unit("gold attack score", mia_g)?;
    check_unit("original attack score", mia_o)?;
    let sat_u = mia_u.min(mia_o);
    let sat_g = mia_g.min((sat_u + mia_o) / 2.0);
    let denom = mia_o - sat_g;
    if denom.abs() < 1e-12 {
        return Ok(if sat_u <= sat_g { 1.0 } else { 0.0 });
    }
    let ratio = (sat_u - sat_g) / denom;
    // The exact value is always in [0,1]; rounding in the saturation
    // arithmetic can push ratio^2 an ulp past 1, so clamp.
    Ok((1.0 - ratio * ratio).max(0.0))
}

/// Time saved relative to retraining, on a log scale:
/// `1 - ln(elapsed_u + 1) / ln(elapsed_g + 1)`, clamped below at 0 so methods
/// slower than retraining score 0 rather than negative.
pub fn efficiency_t(elapsed_u: f64, elapsed_g: f64) -> Result<f64> {
    check_positive_time("unlearning time", elapsed_u)?;
    check_positive_time("gold retraining time", elapsed_g)?;
    let t = 1.0 - (elapsed_u + 1.0).ln() / (elapsed_g + 1.0).ln();
    Ok(t.max(0.0))
}

/// Weights of the utility and efficacy terms in GUM; efficiency is the
/// implicit third term with weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GumWeights {
    fn default() -> Self {
        GumWeights {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl GumWeights {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::MetricInput(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::MetricInput(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Weighted harmonic mean of utility, efficacy, and efficiency:
/// `(1+alpha+beta)*u*e*t / (alpha*e*t + beta*u*t + u*e)`, defined as 0
/// whenever any factor is 0.
pub fn gum(u: f64, e: f64, t: f64, weights: &GumWeights) -> Result<f64> {
    check_unit("utility", u)?;
    check_unit("efficacy", e)?;
    check_unit("efficiency", t)?;
    weights.validate()?;
    let numerator = (1.0 + weights.alpha + weights.beta) * u * e * t;
    if numerator == 0.0 {
        return Ok(0.0);
    }
    let denominator = weights.alpha * e * t + weights.beta * u * t + u * e;
    Ok(numerator / denominator)
}

/// Equal-weight mean of test F1 and attack-score centrality:
/// `(f1_t + (1 - 2*|mia - 0.5|)) / 2`.
pub fn nomus(f1_t: f64, mia: f64) -> Result<f64> {
    nomus_weighted(f1_t, mia, 0.5)
}

/// NoMUS with a configurable F1 weight: `w*f1_t + (1-w)*(1 - 2*|mia - 0.5|)`.
pub fn nomus_weighted(f1_t: f64, mia: f64, f1_weight: f64) -> Result<f64> {
    check_unit("test F1", f1_t)?;
    check_unit("attack score", mia)?;
    check_unit("F1 weight", f1_weight)?;
    let closeness = 1.0 - 2.0 * (mia - 0.5).abs();
    Ok(f1_weight * f1_t + (1.0 - f1_weight) * closeness)
}

/// How many times faster than retraining: `elapsed_g / elapsed_u`.
pub fn speedup(elapsed_g: f64, elapsed_u: f64) -> Result<f64> {
    check_positive_time("gold retraining time", elapsed_g)?;
    check_positive_time("unlearning time", elapsed_u)?;
    Ok(elapsed_g / elapsed_u)
}

/// Baseline measurements every row is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineRefs {
    pub f1_t_gold: f64,
    pub mia_gold: f64,
    pub mia_original: f64,
    pub elapsed_gold: f64,
}

/// One evaluated run: raw measurements plus every derived score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: Method,
    pub f1_test: f64,
    pub f1_forget: f64,
    pub mia: f64,
    pub elapsed_secs: f64,
    pub u: f64,
    pub e: f64,
    pub t: f64,
    pub gum: f64,
    pub nomus: f64,
    pub speedup: f64,
}

impl EvalRecord {
    /// Score one run against the baselines. Baseline rows themselves are
    /// pinned to efficiency 0 and speedup 1, which forces their GUM to 0; the
    /// original row additionally gets efficacy 0 whenever gold's attack score
    /// sits below its own.
    pub fn derive(
        method: Method,
        f1_test: f64,
        f1_forget: f64,
        mia: f64,
        elapsed_secs: f64,
        refs: &BaselineRefs,
        weights: &GumWeights,
    ) -> Result<EvalRecord> {
        check_unit("forget F1", f1_forget)?;
        check_positive_time("elapsed", elapsed_secs)?;
        let u = utility_u(f1_test, refs.f1_t_gold)?;
        let e = efficacy_e(mia, refs.mia_gold, refs.mia_original)?;
        let (t, speedup_v) = if method.is_baseline() {
            (0.0, 1.0)
        } else {
            (
                efficiency_t(elapsed_secs, refs.elapsed_gold)?,
                speedup(refs.elapsed_gold, elapsed_secs)?,
            )
        };
        let gum_v = gum(u, e, t, weights)?;
        let nomus_v = nomus(f1_test, mia)?;
        Ok(EvalRecord {
            method,
            f1_test,
            f1_forget,
            mia,
            elapsed_secs,
            u,
            e,
            t,
            gum: gum_v,
            nomus: nomus_v,
            speedup: speedup_v,
        })
    }

    pub fn csv_header() -> &'static str {
        "method,f1_test,f1_forget,mia,elapsed_secs,u,e,t,gum,nomus,speedup"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.f1_test,
            self.f1_forget,
            self.mia,
            self.elapsed_secs,
            self.u,
            self.e,
            self.t,
            self.gum,
            self.nomus,
            self.speedup
        )
    }
}

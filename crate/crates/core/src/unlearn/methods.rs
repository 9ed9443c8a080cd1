//! The eight unlearning method implementations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::clock::Clock;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{
    init_model, DistillTarget, LayerMask, LayeredModel, LossKind, StepDirection,
};
use crate::seeds::derive_seed;

use super::{
    backward_checked, batch_refs, run_epoch, shuffled_batches, step_checked, stream_rng,
    MethodConfig, UnlearnOutcome, STREAM_FORGET, STREAM_INIT, STREAM_NOISE, STREAM_RETAIN,
};

/// Continue training on the retain set; the forget set is never read.
pub fn finetune_ft(
    mut model: LayeredModel,
    retain: &[Sample],
    cfg: &MethodConfig,
    clock: &dyn Clock,
) -> Result<UnlearnOutcome> {
    let mut timer = clock.timer();
    let mask = LayerMask::all(model.layers.len());
    let mut rng = stream_rng(cfg.seed, STREAM_RETAIN);
    for epoch in 0..cfg.epochs {
        run_epoch(
            &mut model,
            retain,
            &LossKind::Task,
            StepDirection::Descent,
            &mask,
            cfg.lr,
            cfg.batch_size,
            &mut rng,
            epoch,
            "ft",
        )?;
    }
    Ok(UnlearnOutcome {
        model,
        elapsed_secs: timer.elapsed_secs(),
        config: cfg.clone(),
    })
}

/// Gradient ascent on the forget set only; the retain set is never read.
pub fn neg_grad(
    mut model: LayeredModel,
    forget: &[Sample],
    cfg: &MethodConfig,
    clock: &dyn Clock,
) -> Result<UnlearnOutcome> {
    let mut timer = clock.timer();
    let mask = LayerMask::all(model.layers.len());
    let mut rng = stream_rng(cfg.seed, STREAM_FORGET);
    for epoch in 0..cfg.epochs {
        run_epoch(
            &mut model,
            forget,
            &LossKind::Task,
            StepDirection::Ascent,
            &mask,
            cfg.lr,
            cfg.batch_size,
            &mut rng,
            epoch,
            "ng",
        )?;
    }
    Ok(UnlearnOutcome {
        model,
        elapsed_secs: timer.elapsed_secs(),
        config: cfg.clone(),
    })
}

/// Interleave retain descent with forget ascent, realizing the combined
/// objective `L_retain - retain_weight * L_forget`. The forget batches cycle
/// when the forget set is smaller than the retain set. A zero weight disables
/// the ascent term and the trajectory matches fine-tuning exactly.
pub fn neg_grad_plus(
    mut model: LayeredModel,
    retain: &[Sample],
    forget: &[Sample],
    cfg: &MethodConfig,
    clock: &dyn Clock,
) -> Result<UnlearnOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut timer = clock.timer();
    let mask = LayerMask::all(model.layers.len());
    let mut rng_retain = stream_rng(cfg.seed, STREAM_RETAIN);
    let mut rng_forget = stream_rng(cfg.seed, STREAM_FORGET);
    for epoch in 0..cfg.epochs {
        if retain.is_empty() {
            break;
        }
        let retain_batches = shuffled_batches(retain.len(), cfg.batch_size, &mut rng_retain);
        let forget_batches = if forget.is_empty() {
            Vec::new()
        } else {
            shuffled_batches(forget.len(), cfg.batch_size, &mut rng_forget)
        };
        let mut next_forget = 0usize;
        for (bi, idxs) in retain_batches.iter().enumerate() {
            let batch = batch_refs(retain, idxs);
            let grads =
                backward_checked(&model, &batch, &LossKind::Task, &mask, epoch, bi, "ng_plus retain")?;
            step_checked(
                &mut model,
                &grads,
                cfg.lr,
                StepDirection::Descent,
                epoch,
                bi,
                "ng_plus retain",
            )?;
            if let Some(fidxs) = cycle(&forget_batches, &mut next_forget) {
                let fbatch = batch_refs(forget, fidxs);
                let fgrads =
                    backward_checked(&model, &fbatch, &LossKind::Task, &mask, epoch, bi, "ng_plus forget")?;
                step_checked(
                    &mut model,
                    &fgrads,
                    cfg.lr * cfg.retain_weight,
                    StepDirection::Ascent,
                    epoch,
                    bi,
                    "ng_plus forget",
                )?;
            }
        }
    }
    Ok(UnlearnOutcome {
        model,
        elapsed_secs: timer.elapsed_secs(),
        config: cfg.clone(),
    })
}

fn cycle<'a>(batches: &'a [Vec<usize>], cursor: &mut usize) -> Option<&'a Vec<usize>> {
    if batches.is_empty() {
        return None;
    }
    let item = &batches[*cursor % batches.len()];
    *cursor += 1;
    Some(item)
}

/// Fine-tune with only the last `cfg.k` layers trainable; everything below
/// stays bit-identical to the input model.
pub fn cf_k(
    mut model: LayeredModel,
    retain: &[Sample],
    cfg: &MethodConfig,
    clock: &dyn Clock,
) -> Result<UnlearnOutcome> {
    let mask = LayerMask::last_k(model.layers.len(), cfg.k)?;
    let mut timer = clock.timer();
    let mut rng = stream_rng(cfg.seed, STREAM_RETAIN);
    for epoch in 0..cfg.epochs {
        run_epoch(
            &mut model,
            retain,
            &LossKind::Task,
            StepDirection::Descent,
            &mask,
            cfg.lr,
            cfg.batch_size,
            &mut rng,
            epoch,
            "cf_k",
        )?;
    }
    Ok(UnlearnOutcome {
        model,
        elapsed_secs: timer.elapsed_secs(),
        config: cfg.clone(),
    })
}

/// Build an error-maximizing input for `label`: start from a seeded Gaussian
/// draw and take `steps` ascent updates on the model's cross-entropy with
/// respect to the input.
pub fn synthesize_noise(
    model: &LayeredModel,
    label: usize,
    d: usize,
    steps: usize,
    noise_lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if d != model.dims.input {
        return Err(Error::ShapeMismatch(format!(
            "noise dimension {d} does not match model input {}",
            model.dims.input
        )));
    }
    if label >= model.dims.classes {
        return Err(Error::LabelOutOfRange {
            label,
            classes: model.dims.classes,
        });
    }
    if steps == 0 {
        return Err(Error::Config("noise steps must be at least 1".into()));
    }
    if !noise_lr.is_finite() || noise_lr < 0.0 {
        return Err(Error::Config(
            "noise_lr must be finite and non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    for _ in 0..steps {
        let grad = model.input_gradient(&x, label)?;
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi += noise_lr * gi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "noise synthesis".into(),
            });
        }
    }
    Ok(x)
}

/// Impair-then-repair: one epoch on retain plus per-forget-sample
/// error-maximizing noise carrying the forget labels, then one repair epoch
/// of fine-tuning on retain alone.
pub fn unsir(
    mut model: LayeredModel,
    retain: &[Sample],
    forget: &[Sample],
    cfg: &MethodConfig,
    clock: &dyn Clock,
) -> Result<UnlearnOutcome> {
    let mut timer = clock.timer();
    impair_phase(&mut model, retain, forget, cfg)?;
    repair_phase(&mut model, retain, cfg)?;
    Ok(UnlearnOutcome {
        model,
        elapsed_secs: timer.elapsed_secs(),
        config: cfg.clone(),
    })
}

pub(crate) fn impair_phase(
    model: &mut LayeredModel,
    retain: &[Sample],
    forget: &[Sample],
    cfg: &MethodConfig,
) -> Result<()> {
    let noise_seed = derive_seed(cfg.seed, STREAM_NOISE);
    let mut impair_data: Vec<Sample> = Vec::with_capacity(retain.len() + forget.len());
    impair_data.extend_from_slice(retain);
    for (i, sample) in forget.iter().enumerate() {
        let features = synthesize_noise(
            model,
            sample.label,
            sample.features.len(),
            cfg.noise_steps,
            cfg.noise_lr,
            derive_seed(noise_seed, i as u64),
        )?;
        impair_data.push(Sample {
            features,
            label: sample.label,
            speaker: sample.speaker,
        });
    }
    let mask = LayerMask::all(model.layers.len());
    let mut rng = stream_rng(cfg.seed, STREAM_RETAIN);
    run_epoch(
        model,
        &impair_data,
        &LossKind::Task,
        StepDirection::Descent,
        &mask,
        cfg.lr,
        cfg.batch_size,
        &mut rng,
        0,
        "unsir impair",
    )?;
    Ok(())
}

pub(crate) fn repair_phase(
    model: &mut LayeredModel,
    retain: &[Sample],
    cfg: &MethodConfig,
) -> Result<()> {
    let mask = LayerMask::all(model.layers.len());
    let mut rng = stream_rng(cfg.seed, STREAM_RETAIN);
    run_epoch(
        model,
        retain,
        &LossKind::Task,
        StepDirection::Descent,
        &mask,
        cfg.lr,
        cfg.batch_size,
        &mut rng,
        0,
        "unsir repair",
    )?;
    Ok(())
}

/// Which bad teacher the student is distilled toward on forget samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncompetentTeacher {
    /// A freshly initialized, untrained model with the student's architecture.
    Fresh,
    /// The uniform distribution over classes.
    Uniform,
}

/// Distill the student toward a frozen copy of itself on retain samples and
/// toward an incompetent teacher on forget samples.
pub fn bad_teaching(
    mut model: LayeredModel,
    retain: &[Sample],
    forget: &[Sample],
    cfg: &MethodConfig,
    incompetent: IncompetentTeacher,
    clock: &dyn Clock,
) -> Result<UnlearnOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut timer = clock.timer();
    let competent = model.clone();
    let fresh = match incompetent {
        IncompetentTeacher::Fresh => Some(init_model(
            &model.dims,
            derive_seed(cfg.seed, STREAM_INIT),
        )?),
        IncompetentTeacher::Uniform => None,
    };
    let mask = LayerMask::all(model.layers.len());
    let mut rng_retain = stream_rng(cfg.seed, STREAM_RETAIN);
    let mut rng_forget = stream_rng(cfg.seed, STREAM_FORGET);
    for epoch in 0..cfg.epochs {
        let retain_batches = if retain.is_empty() {
            Vec::new()
        } else {
            shuffled_batches(retain.len(), cfg.batch_size, &mut rng_retain)
        };
        let forget_batches = if forget.is_empty() {
            Vec::new()
        } else {
            shuffled_batches(forget.len(), cfg.batch_size, &mut rng_forget)
        };
        let mut next_forget = 0usize;
        let incompetent_target = || match &fresh {
            Some(m) => DistillTarget::Model(m),
            None => DistillTarget::Uniform,
        };
        for (bi, idxs) in retain_batches.iter().enumerate() {
            let batch = batch_refs(retain, idxs);
            let grads = backward_checked(
                &model,
                &batch,
                &LossKind::KlVsTeacher(DistillTarget::Model(&competent)),
                &mask,
                epoch,
                bi,
                "bt retain",
            )?;
            step_checked(
                &mut model,
                &grads,
                cfg.lr,
                StepDirection::Descent,
                epoch,
                bi,
                "bt retain",
            )?;
            if let Some(fidxs) = cycle(&forget_batches, &mut next_forget) {
                let fbatch = batch_refs(forget, fidxs);
                let fgrads = backward_checked(
                    &model,
                    &fbatch,
                    &LossKind::KlVsTeacher(incompetent_target()),
                    &mask,
                    epoch,
                    bi,
                    "bt forget",
                )?;
                step_checked(
                    &mut model,
                    &fgrads,
                    cfg.lr,
                    StepDirection::Descent,
                    epoch,
                    bi,
                    "bt forget",
                )?;
            }
        }
        if retain_batches.is_empty() {
            for (bi, fidxs) in forget_batches.iter().enumerate() {
                let fbatch = batch_refs(forget, fidxs);
                let fgrads = backward_checked(
                    &model,
                    &fbatch,
                    &LossKind::KlVsTeacher(incompetent_target()),
                    &mask,
                    epoch,
                    bi,
                    "bt forget",
                )?;
                step_checked(
                    &mut model,
                    &fgrads,
                    cfg.lr,
                    StepDirection::Descent,
                    epoch,
                    bi,
                    "bt forget",
                )?;
            }
        }
    }
    Ok(UnlearnOutcome {
        model,
        elapsed_secs: timer.elapsed_secs(),
        config: cfg.clone(),
    })
}

/// Alternate `scrub_max_steps` epochs of divergence-maximizing ascent on the
/// forget set with `scrub_min_steps` epochs of distillation-plus-task descent
/// on the retain set, against a single frozen teacher. One cycle per
/// configured epoch.
pub fn scrub(
    mut model: LayeredModel,
    retain: &[Sample],
    forget: &[Sample],
    cfg: &MethodConfig,
    clock: &dyn Clock,
) -> Result<UnlearnOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut timer = clock.timer();
    let teacher = model.clone();
    let mask = LayerMask::all(model.layers.len());
    let mut rng_forget = stream_rng(cfg.seed, STREAM_FORGET);
    let mut rng_retain = stream_rng(cfg.seed, STREAM_RETAIN);
    let mut epoch_no = 0usize;
    for _cycle in 0..cfg.epochs {
        for _ in 0..cfg.scrub_max_steps {
            run_epoch(
                &mut model,
                forget,
                &LossKind::KlVsTeacher(DistillTarget::Model(&teacher)),
                StepDirection::Ascent,
                &mask,
                cfg.lr,
                cfg.batch_size,
                &mut rng_forget,
                epoch_no,
                "scrub forget ascent",
            )?;
            epoch_no += 1;
        }
        for _ in 0..cfg.scrub_min_steps {
            scrub_retain_epoch(&mut model, retain, &teacher, cfg, &mask, &mut rng_retain, epoch_no)?;
            epoch_no += 1;
        }
    }
    Ok(UnlearnOutcome {
        model,
        elapsed_secs: timer.elapsed_secs(),
        config: cfg.clone(),
    })
}

/// One retain epoch under the combined distillation + task objective.
fn scrub_retain_epoch(
    model: &mut LayeredModel,
    retain: &[Sample],
    teacher: &LayeredModel,
    cfg: &MethodConfig,
    mask: &LayerMask,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<()> {
    if retain.is_empty() {
        return Ok(());
    }
    for (bi, idxs) in shuffled_batches(retain.len(), cfg.batch_size, rng).iter().enumerate() {
        let batch = batch_refs(retain, idxs);
        let mut grads = backward_checked(
            model,
            &batch,
            &LossKind::KlVsTeacher(DistillTarget::Model(teacher)),
            mask,
            epoch,
            bi,
            "scrub retain descent",
        )?;
        let task =
            backward_checked(model, &batch, &LossKind::Task, mask, epoch, bi, "scrub retain descent")?;
        grads.add(&task)?;
        step_checked(
            model,
            &grads,
            cfg.lr,
            StepDirection::Descent,
            epoch,
            bi,
            "scrub retain descent",
        )?;
    }
    Ok(())
}

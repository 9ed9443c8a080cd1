//! Membership-inference attack: a held-out threshold attack on per-sample
//! cross-entropy loss.
//!
//! The attack depends only on the ordering of losses, so its score is exactly
//! invariant under any strictly monotone transform of all losses. Because the
//! threshold is fit on one half of each pool and scored on the other, scores
//! below 0.5 are possible.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, LayeredModel};

/// Minimum pool size for a model-level attack.
pub const MIA_MIN_POOL: usize = 20;

/// Per-sample cross-entropy losses of `model` on `samples`.
pub fn sample_losses(model: &LayeredModel, samples: &[Sample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| cross_entropy(&model.forward(&s.features)?, s.label))
        .collect()
}

/// Attack `model` with the forget set as members and the test set as
/// non-members. Returns balanced accuracy on the held-out halves; chance
/// level is 0.5.
pub fn mia_score(
    model: &LayeredModel,
    forget: &[Sample],
    test: &[Sample],
    seed: u64,
) -> Result<f64> {
    if forget.len() < MIA_MIN_POOL || test.len() < MIA_MIN_POOL {
        return Err(Error::InsufficientData(format!(
            "membership attack needs at least {MIA_MIN_POOL} forget and test samples, \
             got {} and {}",
            forget.len(),
            test.len()
        )));
    }
    let members = sample_losses(model, forget)?;
    let non_members = sample_losses(model, test)?;
    mia_from_pools(&members, &non_members, seed)
}

/// Run the attack on raw loss pools. Both pools are shuffled with the seed and
/// truncated to the smaller size `n`; the first `n/2` of each become the
/// attack-train half and the rest the attack-eval half.
pub fn mia_from_pools(members: &[f64], non_members: &[f64], seed: u64) -> Result<f64> {
    let n = members.len().min(non_members.len());
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "attack pools need at least 2 losses each, got {} and {}",
            members.len(),
            non_members.len()
        )));
    }
    if members
        .iter()
        .chain(non_members)
        .any(|l| !l.is_finite())
    {
        return Err(Error::NonFinite {
            context: "membership attack loss pool".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m_train, m_eval) = shuffled_split(members, n, &mut rng);
    let (n_train, n_eval) = shuffled_split(non_members, n, &mut rng);
    let threshold = fit_threshold(&m_train, &n_train);
    Ok(balanced_accuracy(&m_eval, &n_eval, threshold))
}

/// Shuffle a copy of `pool`, keep the first `n` entries, and split them into
/// (train, eval) halves of sizes `n/2` and `n - n/2`.
pub(crate) fn shuffled_split(
    pool: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut v = pool.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    let eval = v.split_off(n / 2);
    (v, eval)
}

/// Pick the threshold maximizing balanced accuracy on the attack-train
/// halves. Candidates are negative infinity (predict nobody a member)
/// followed by every distinct loss value in ascending order; the first
/// maximizer wins. The rule "member iff loss <= threshold" over this
/// candidate set realizes every achievable classification, and because
/// candidates are data values rather than midpoints, the choice commutes
/// with monotone loss transforms.
pub fn fit_threshold(member_losses: &[f64], non_member_losses: &[f64]) -> f64 {
    let mut candidates: Vec<f64> = member_losses
        .iter()
        .chain(non_member_losses)
        .copied()
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best_t = f64::NEG_INFINITY;
    let mut best_acc = balanced_accuracy(member_losses, non_member_losses, best_t);
    for &t in &candidates {
        let acc = balanced_accuracy(member_losses, non_member_losses, t);
        if acc > best_acc {
            best_acc = acc;
            best_t = t;
        }
    }
    best_t
}

/// Mean of true-positive rate (members at or below the threshold) and
/// true-negative rate (non-members above it). Both slices must be non-empty.
pub fn balanced_accuracy(
    member_losses: &[f64],
    non_member_losses: &[f64],
    threshold: f64,
) -> f64 {
    let tpr = member_losses.iter().filter(|&&l| l <= threshold).count() as f64
        / member_losses.len() as f64;
    let tnr = non_member_losses.iter().filter(|&&l| l > threshold).count() as f64
        / non_member_losses.len() as f64;
    (tpr + tnr) / 2.0
}

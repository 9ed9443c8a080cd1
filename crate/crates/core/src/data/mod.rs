//! Synthetic speaker-clustered intent data.
//!
//! Every sample is `prototype(label) + leakage * offset(speaker) + noise`, so
//! models can memorize who said something, not just what was said — the
//! signal the membership attack in `metrics` probes for. Train and test
//! speakers are disjoint; labels are independent of speakers.

pub mod io;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SpeakerId(pub u32);

impl std::fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub speaker: SpeakerId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerEntry {
    pub split: Split,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub feature_dim: usize,
    pub class_count: usize,
    pub train_speakers: usize,
    pub test_speakers: usize,
    /// Inclusive range each speaker's sample count is drawn from.
    pub samples_per_speaker: (usize, usize),
    /// How strongly a speaker's fixed offset shows through in features.
    pub speaker_leakage: f64,
    /// Standard deviation of the per-sample noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            feature_dim: 32,
            class_count: 12,
            train_speakers: 40,
            test_speakers: 8,
            samples_per_speaker: (80, 160),
            speaker_leakage: 0.8,
            noise_sigma: 1.0,
            seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be at least 2".into()));
        }
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be at least 2".into()));
        }
        if self.train_speakers == 0 || self.test_speakers == 0 {
            return Err(Error::Config(
                "train_speakers and test_speakers must be positive".into(),
            ));
        }
        let (lo, hi) = self.samples_per_speaker;
        if lo == 0 || lo > hi {
            return Err(Error::Config(
                "samples_per_speaker range must satisfy 1 <= min <= max".into(),
            ));
        }
        if !self.speaker_leakage.is_finite() || self.speaker_leakage < 0.0 {
            return Err(Error::Config(
                "speaker_leakage must be finite and non-negative".into(),
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Config(
                "noise_sigma must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub speakers: BTreeMap<SpeakerId, SpeakerEntry>,
    pub config: GenConfig,
    pub seed: u64,
}

impl DatasetBundle {
    pub fn train_speaker_count(&self, id: SpeakerId) -> Option<usize> {
        self.speakers
            .get(&id)
            .filter(|e| e.split == Split::Train)
            .map(|e| e.samples)
    }
}

/// Speakers whose training samples should be forgotten, plus the fraction of
/// the train split they cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetRequest {
    pub speakers: Vec<SpeakerId>,
    pub fraction: f64,
}

/// Scale of the class prototypes relative to unit per-sample noise. Chosen
/// so the default bundle is genuinely hard: class clusters overlap enough
/// that a trained classifier leans on speaker offsets, which makes it
/// memorize its training speakers and gives the membership attack a real
/// signal to erase.
const PROTOTYPE_SCALE: f64 = 0.6;

pub fn generate(config: &GenConfig) -> Result<DatasetBundle> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.feature_dim;
    let classes = config.class_count;

    let normal_vec = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    };

    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let mut p = normal_vec(&mut rng, d);
            p.iter_mut().for_each(|v| *v *= PROTOTYPE_SCALE);
            p
        })
        .collect();
    let total_speakers = config.train_speakers + config.test_speakers;
    let offsets: Vec<Vec<f64>> = (0..total_speakers)
        .map(|_| normal_vec(&mut rng, d))
        .collect();
    let (count_lo, count_hi) = config.samples_per_speaker;
    let counts: Vec<usize> = (0..total_speakers)
        .map(|_| rng.gen_range(count_lo..=count_hi))
        .collect();

    let mut draw_split = |speaker_range: std::ops::Range<usize>| -> Vec<Sample> {
        let mut samples = Vec::new();
        for s in speaker_range {
            for _ in 0..counts[s] {
                let label = rng.gen_range(0..classes);
                let mut features = normal_vec(&mut rng, d);
                for (i, f) in features.iter_mut().enumerate() {
                    *f = prototypes[label][i]
                        + config.speaker_leakage * offsets[s][i]
                        + config.noise_sigma * *f;
                }
                samples.push(Sample {
                    features,
                    label,
                    speaker: SpeakerId(s as u32),
                });
            }
        }
        samples
    };
    let mut train = draw_split(0..config.train_speakers);
    let mut test = draw_split(config.train_speakers..total_speakers);

    ensure_class_coverage(&mut train, &prototypes, "train")?;
    ensure_class_coverage(&mut test, &prototypes, "test")?;

    let mut speakers = BTreeMap::new();
    for (s, &count) in counts.iter().enumerate() {
        let split = if s < config.train_speakers {
            Split::Train
        } else {
            Split::Test
        };
        speakers.insert(SpeakerId(s as u32), SpeakerEntry { split, samples: count });
    }

    Ok(DatasetBundle {
        train,
        test,
        speakers,
        config: config.clone(),
        seed: config.seed,
    })
}

/// Relabel samples from the most frequent class until every class occurs at
/// least once, moving each relabeled sample onto its new class prototype so
/// features stay consistent with labels.
fn ensure_class_coverage(
    samples: &mut [Sample],
    prototypes: &[Vec<f64>],
    split: &str,
) -> Result<()> {
    let classes = prototypes.len();
    if samples.len() < classes {
        return Err(Error::Config(format!(
            "{split} split has {} samples, fewer than the {classes} classes",
            samples.len()
        )));
    }
    let mut counts = vec![0usize; classes];
    for s in samples.iter() {
        counts[s.label] += 1;
    }
    for missing in 0..classes {
        if counts[missing] > 0 {
            continue;
        }
        let donor = (0..classes)
            .max_by_key(|&c| counts[c])
            .expect("at least one class");
        let idx = samples
            .iter()
            .position(|s| s.label == donor)
            .expect("donor class is populated");
        let sample = &mut samples[idx];
        for (i, f) in sample.features.iter_mut().enumerate() {
            *f += prototypes[missing][i] - prototypes[donor][i];
        }
        sample.label = missing;
        counts[donor] -= 1;
        counts[missing] += 1;
    }
    Ok(())
}

/// Randomly accumulate eligible speakers (at least `min_samples` training
/// samples each) until the covered fraction of the train split lands in
/// `[lo, hi]`. Deterministic per seed.
pub fn select_forget_speakers(
    bundle: &DatasetBundle,
    min_samples: usize,
    band: (f64, f64),
    seed: u64,
) -> Result<ForgetRequest> {
    let (lo, hi) = band;
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || lo > hi || hi >= 1.0 {
        return Err(Error::Config(format!(
            "forget fraction band must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]"
        )));
    }
    let total = bundle.train.len();
    if total == 0 {
        return Err(Error::InsufficientData("empty train split".into()));
    }

    let mut eligible: Vec<(SpeakerId, usize)> = bundle
        .speakers
        .iter()
        .filter(|(_, e)| e.split == Split::Train && e.samples >= min_samples)
        .map(|(&id, e)| (id, e.samples))
        .collect();

    let infeasible = |achievable: f64| Error::InfeasibleForgetRequest {
        achievable,
        lo,
        hi,
    };
    if eligible.is_empty() {
        return Err(infeasible(0.0));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5e1ec7));
    // Fisher-Yates over the id-sorted list keeps the choice seed-stable.
    for i in (1..eligible.len()).rev() {
        let j = rng.gen_range(0..=i);
        eligible.swap(i, j);
    }

    let mut speakers = Vec::new();
    let mut covered = 0usize;
    for &(id, count) in &eligible {
        if (covered + count) as f64 / total as f64 > hi {
            continue;
        }
        speakers.push(id);
        covered += count;
        let fraction = covered as f64 / total as f64;
        if fraction >= lo {
            speakers.sort_unstable();
            return Ok(ForgetRequest { speakers, fraction });
        }
    }

    // Nothing fit inside the band; report the closest fraction we could reach.
    let achievable = if covered > 0 {
        covered as f64 / total as f64
    } else {
        eligible
            .iter()
            .map(|&(_, c)| c as f64 / total as f64)
            .fold(f64::INFINITY, f64::min)
    };
    Err(infeasible(achievable))
}

/// Partition the train split into (retain, forget) by speaker membership,
/// preserving sample order.
pub fn split(
    bundle: &DatasetBundle,
    request: &ForgetRequest,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    for id in &request.speakers {
        match bundle.speakers.get(id) {
            Some(entry) if entry.split == Split::Train => {}
            _ => return Err(Error::UnknownSpeaker(id.0)),
        }
    }
    let forget_set: std::collections::BTreeSet<SpeakerId> =
        request.speakers.iter().copied().collect();
    let mut retain = Vec::new();
    let mut forget = Vec::new();
    for sample in &bundle.train {
        if forget_set.contains(&sample.speaker) {
            forget.push(sample.clone());
        } else {
            retain.push(sample.clone());
        }
    }
    Ok((retain, forget))
}

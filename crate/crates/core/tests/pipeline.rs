//! End-to-end checks of the generate → train → unlearn → score pipeline on
//! the default dataset geometry.

use std::sync::OnceLock;

use unlearn_bench::data::{generate, select_forget_speakers, split, DatasetBundle, GenConfig, Sample};
use unlearn_bench::metrics::{mia_from_pools, mia_score, model_macro_f1, sample_losses};
use unlearn_bench::nn::{LayeredModel, ModelDims};
use unlearn_bench::unlearn::{run_method, train_original, Method, MethodConfig, TrainRecipe};
use unlearn_bench::WallClock;

const CLASSES: usize = 12;
const MIA_SEED: u64 = 99;

struct Fixture {
    bundle: DatasetBundle,
    retain: Vec<Sample>,
    forget: Vec<Sample>,
    original: LayeredModel,
    gold: LayeredModel,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

/// Default bundle, the default forget selection, and both baseline models.
fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let bundle = generate(&GenConfig::default()).expect("default generation");
        let request =
            select_forget_speakers(&bundle, 100, (0.025, 0.05), 7).expect("forget selection");
        let (retain, forget) = split(&bundle, &request).expect("split");
        let recipe = TrainRecipe::default();
        let dims = ModelDims::new(bundle.config.feature_dim, vec![64, 32], CLASSES);
        let (original, _) =
            train_original(&recipe, &bundle.train, &dims, &WallClock).expect("original");
        let (gold, _) = train_original(&recipe, &retain, &dims, &WallClock).expect("gold");
        Fixture { bundle, retain, forget, original, gold }
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn default_training_memorizes_its_speakers() {
    let fx = fixture();
    let f1_test = model_macro_f1(&fx.original, &fx.bundle.test, CLASSES).unwrap();
    let f1_forget = model_macro_f1(&fx.original, &fx.forget, CLASSES).unwrap();
    let train_loss = mean(&sample_losses(&fx.original, &fx.bundle.train).unwrap());
    let test_loss = mean(&sample_losses(&fx.original, &fx.bundle.test).unwrap());
    let mia = mia_score(&fx.original, &fx.forget, &fx.bundle.test, MIA_SEED).unwrap();
    println!(
        "original: f1_test {f1_test:.3} f1_forget {f1_forget:.3} \
         train_loss {train_loss:.3} test_loss {test_loss:.3} mia {mia:.3}"
    );
    assert!(
        test_loss > 2.0 * train_loss,
        "no generalization gap: train {train_loss} test {test_loss}"
    );
    assert!(
        f1_forget > f1_test + 0.15,
        "training speakers not memorized: forget {f1_forget} test {f1_test}"
    );
    assert!(
        (0.55..0.80).contains(&mia),
        "membership attack should clearly beat chance without saturating, got {mia}"
    );
}

#[test]
fn retraining_without_the_speakers_removes_their_signature() {
    let fx = fixture();
    let f1_test_gold = model_macro_f1(&fx.gold, &fx.bundle.test, CLASSES).unwrap();
    let f1_forget_gold = model_macro_f1(&fx.gold, &fx.forget, CLASSES).unwrap();
    let f1_forget_orig = model_macro_f1(&fx.original, &fx.forget, CLASSES).unwrap();
    let mia_gold = mia_score(&fx.gold, &fx.forget, &fx.bundle.test, MIA_SEED).unwrap();
    let mia_orig = mia_score(&fx.original, &fx.forget, &fx.bundle.test, MIA_SEED).unwrap();
    println!(
        "gold: f1_test {f1_test_gold:.3} f1_forget {f1_forget_gold:.3} \
         mia {mia_gold:.3} (original mia {mia_orig:.3})"
    );
    assert!(
        f1_forget_gold < f1_forget_orig - 0.20,
        "gold still performs like a memorizer on the forgotten speakers"
    );
    assert!(
        (f1_forget_gold - f1_test_gold).abs() < 0.20,
        "forgotten speakers should look like strangers to the gold model: \
         forget {f1_forget_gold} test {f1_test_gold}"
    );
    assert!(
        mia_gold < mia_orig - 0.05,
        "attack should weaken against the gold model: {mia_gold} vs {mia_orig}"
    );
    assert!(
        (mia_gold - 0.5).abs() < 0.15,
        "attack on the gold model should be near chance, got {mia_gold}"
    );
}

#[test]
fn speaker_leakage_widens_the_generalization_gap() {
    // Same seed for both configurations: prototypes, speaker offsets, and
    // per-sample noise are drawn identically, only the offset weight differs.
    let run = |leakage: f64| {
        let config = GenConfig { speaker_leakage: leakage, ..GenConfig::default() };
        let bundle = generate(&config).unwrap();
        let recipe = TrainRecipe::default();
        let dims = ModelDims::new(config.feature_dim, vec![64, 32], CLASSES);
        let (model, _) = train_original(&recipe, &bundle.train, &dims, &WallClock).unwrap();
        let f1_train = model_macro_f1(&model, &bundle.train, CLASSES).unwrap();
        let f1_test = model_macro_f1(&model, &bundle.test, CLASSES).unwrap();
        let members = sample_losses(&model, &bundle.train).unwrap();
        let non_members = sample_losses(&model, &bundle.test).unwrap();
        let mia = mia_from_pools(&members, &non_members, MIA_SEED).unwrap();
        (f1_train - f1_test, mia)
    };
    let (gap_low, mia_low) = run(0.0);
    let (gap_high, mia_high) = run(0.8);
    println!("leakage 0.0: gap {gap_low:.3} mia {mia_low:.3}");
    println!("leakage 0.8: gap {gap_high:.3} mia {mia_high:.3}");
    assert!(
        gap_high > gap_low + 0.05,
        "speaker leakage should widen the train/test gap: {gap_low} -> {gap_high}"
    );
    assert!(
        mia_high > mia_low,
        "speaker leakage should strengthen the membership attack: {mia_low} -> {mia_high}"
    );
}

#[test]
fn gentle_rates_keep_unlearned_models_useful() {
    let fx = fixture();
    let f1_orig = model_macro_f1(&fx.original, &fx.bundle.test, CLASSES).unwrap();
    for method in Method::UNLEARNING {
        let lr = method.lr_family()[0];
        let cfg = MethodConfig::new(method).with_lr(lr).with_seed(7);
        let out = run_method(&fx.original, &fx.retain, &fx.forget, &cfg, &WallClock).unwrap();
        let f1 = model_macro_f1(&out.model, &fx.bundle.test, CLASSES).unwrap();
        println!("{} at {lr:e}: f1_test {f1:.3}", method.as_str());
        assert!(
            f1 >= f1_orig - 0.10,
            "{} at its gentlest rate lost too much utility: {f1} vs {f1_orig}",
            method.as_str()
        );
    }
}

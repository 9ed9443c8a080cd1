//! Experiment orchestration: generate a dataset, train the original and gold
//! models, run the method × learning-rate grid, and derive report rows, plus
//! the learning-rate sweep and epoch-ablation studies.

pub mod report;

use crate::clock::{Clock, StepClock, WallClock};
use crate::data::{generate, select_forget_speakers, split, DatasetBundle, GenConfig, Sample};
use crate::error::{Error, Result};
use crate::metrics::{mia_score, model_macro_f1, BaselineRefs, EvalRecord, GumWeights};
use crate::nn::{LayeredModel, ModelDims};
use crate::seeds::derive_seed;
use crate::unlearn::{run_method, train_original, Method, MethodConfig, TrainRecipe};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Seed stream for evaluation-time randomness (the membership-attack split),
/// disjoint from the training streams used inside the methods.
const STREAM_EVAL: u64 = 5;

/// Report schema version, bumped on any breaking field change.
pub const REPORT_VERSION: u32 = 1;

/// Which time source a run uses. The step clock makes reports byte-for-byte
/// reproducible; the wall clock is what real benchmarks report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockChoice {
    #[default]
    Wall,
    Step,
}

impl ClockChoice {
    pub fn build(self) -> Box<dyn Clock> {
        match self {
            ClockChoice::Wall => Box::new(WallClock),
            ClockChoice::Step => Box::new(StepClock::default()),
        }
    }
}

impl std::str::FromStr for ClockChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wall" => Ok(ClockChoice::Wall),
            "step" => Ok(ClockChoice::Step),
            other => Err(Error::Config(format!(
                "unknown clock {other:?}; expected wall or step"
            ))),
        }
    }
}

/// Output formats a benchmark report can be rendered to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!(
                "unknown report format {other:?}; expected csv, json, or markdown"
            ))),
        }
    }
}

/// How the forget set is chosen: speakers with at least `min_samples` training
/// samples are drawn until their combined share of the train split lands in
/// `fraction_band`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetSpec {
    pub min_samples: usize,
    pub fraction_band: (f64, f64),
    pub seed: u64,
}

impl Default for ForgetSpec {
    fn default() -> Self {
        ForgetSpec {
            min_samples: 100,
            fraction_band: (0.025, 0.05),
            seed: 7,
        }
    }
}

impl ForgetSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.fraction_band;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "forget fraction_band must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]"
            )));
        }
        if self.min_samples == 0 {
            return Err(Error::Config(
                "forget min_samples must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn default_hidden_dims() -> Vec<usize> {
    vec![64, 32]
}

fn default_seeds() -> Vec<u64> {
    vec![7]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown]
}

fn default_workers() -> usize {
    1
}

/// The full grid: every unlearning method crossed with its learning-rate
/// family (gentle rates for the distillation/ascent methods, aggressive rates
/// for the fine-tuning ones).
pub fn default_grid() -> Vec<MethodConfig> {
    Method::UNLEARNING
        .iter()
        .flat_map(|&m| m.lr_family().iter().map(move |&lr| MethodConfig::new(m).with_lr(lr)))
        .collect()
}

/// One experiment, end to end. TOML config keys are exactly these field
/// names; absent keys fall back to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Synthetic dataset parameters. The bundle is generated once and shared
    /// by every seed, so replication varies the training, not the data.
    #[serde(default)]
    pub gen: GenConfig,
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    /// Training recipe shared by the original and gold models.
    #[serde(default)]
    pub recipe: TrainRecipe,
    #[serde(default)]
    pub forget: ForgetSpec,
    /// Method × learning-rate cells. Each cell's seed field is overwritten by
    /// the experiment seed during a run.
    #[serde(default = "default_grid")]
    pub grid: Vec<MethodConfig>,
    #[serde(default)]
    pub gum: GumWeights,
    /// Replication seeds; each reruns training and the grid on the same data.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub report_formats: Vec<ReportFormat>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub clock: ClockChoice,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            gen: GenConfig::default(),
            hidden_dims: default_hidden_dims(),
            recipe: TrainRecipe::default(),
            forget: ForgetSpec::default(),
            grid: default_grid(),
            gum: GumWeights::default(),
            seeds: default_seeds(),
            out_dir: default_out_dir(),
            report_formats: default_formats(),
            workers: default_workers(),
            clock: ClockChoice::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.recipe.validate()?;
        self.forget.validate()?;
        self.gum.validate()?;
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("hidden_dims entries must be nonzero".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("grid must contain at least one cell".into()));
        }
        for cell in &self.grid {
            let mut resolved = cell.clone();
            resolved.resolve_defaults();
            resolved.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must contain at least one seed".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.report_formats.is_empty() {
            return Err(Error::Config(
                "report_formats must contain at least one format".into(),
            ));
        }
        Ok(())
    }

    fn dims(&self) -> ModelDims {
        ModelDims::new(
            self.gen.feature_dim,
            self.hidden_dims.clone(),
            self.gen.class_count,
        )
    }
}

/// Whether a grid cell produced a scored record or was aborted by divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// One report row: a (method, lr, seed) cell or a baseline. Failed runs keep
/// their place in the report with the error message instead of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: Method,
    pub lr: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub record: Option<EvalRecord>,
}

impl RunRow {
    fn completed(lr: f64, seed: u64, record: EvalRecord) -> Self {
        RunRow {
            method: record.method,
            lr,
            seed,
            status: RunStatus::Completed,
            error: None,
            record: Some(record),
        }
    }

    fn failed(method: Method, lr: f64, seed: u64, error: &Error) -> Self {
        RunRow {
            method,
            lr,
            seed,
            status: RunStatus::Failed,
            error: Some(error.to_string()),
            record: None,
        }
    }
}

/// Full benchmark output: config echo plus one row per baseline and grid cell,
/// in seed order then grid order. Best-row selection is recomputed from the
/// rows rather than stored, so it can never disagree with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub version: u32,
    pub config: ExperimentConfig,
    pub rows: Vec<RunRow>,
}

impl BenchmarkReport {
    /// Distinct unlearning methods in grid order (baselines excluded).
    pub fn methods(&self) -> Vec<Method> {
        let mut seen = Vec::new();
        for cell in &self.config.grid {
            if !cell.method.is_baseline() && !seen.contains(&cell.method) {
                seen.push(cell.method);
            }
        }
        seen
    }

    /// The completed row with the highest GUM for one method and seed. Ties
    /// go to the smaller learning rate, so selection is deterministic.
    pub fn best_row(&self, method: Method, seed: u64) -> Option<&RunRow> {
        self.rows
            .iter()
            .filter(|r| {
                r.method == method && r.seed == seed && r.status == RunStatus::Completed
            })
            .fold(None, |best: Option<&RunRow>, row| match best {
                None => Some(row),
                Some(b) => {
                    let (bg, rg) = (
                        b.record.as_ref().map_or(0.0, |rec| rec.gum),
                        row.record.as_ref().map_or(0.0, |rec| rec.gum),
                    );
                    if rg > bg || (rg == bg && row.lr < b.lr) {
                        Some(row)
                    } else {
                        Some(b)
                    }
                }
            })
    }

    /// Best rows for every (seed, method) pair that has at least one
    /// completed run, in seed-major order.
    pub fn best_rows(&self) -> Vec<&RunRow> {
        let methods = self.methods();
        self.config
            .seeds
            .iter()
            .flat_map(|&seed| {
                methods
                    .iter()
                    .filter_map(move |&m| self.best_row(m, seed))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn baseline_row(&self, method: Method, seed: u64) -> Option<&RunRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.seed == seed)
    }
}

struct Prepared {
    bundle: DatasetBundle,
    retain: Vec<Sample>,
    forget: Vec<Sample>,
    dims: ModelDims,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let bundle = generate(&config.gen)?;
    let request = select_forget_speakers(
        &bundle,
        config.forget.min_samples,
        config.forget.fraction_band,
        config.forget.seed,
    )?;
    let (retain, forget) = split(&bundle, &request)?;
    Ok(Prepared {
        dims: config.dims(),
        bundle,
        retain,
        forget,
    })
}

/// Test F1, forget F1, and membership-attack score for one model.
fn evaluate(
    model: &LayeredModel,
    test: &[Sample],
    forget: &[Sample],
    classes: usize,
    mia_seed: u64,
) -> Result<(f64, f64, f64)> {
    let f1_test = model_macro_f1(model, test, classes)?;
    let f1_forget = model_macro_f1(model, forget, classes)?;
    let mia = mia_score(model, forget, test, mia_seed)?;
    Ok((f1_test, f1_forget, mia))
}

struct BaselineEval {
    refs: BaselineRefs,
    original: EvalRecord,
    gold: EvalRecord,
}

fn evaluate_baselines(
    original: &LayeredModel,
    gold: &LayeredModel,
    prep: &Prepared,
    classes: usize,
    mia_seed: u64,
    elapsed_original: f64,
    elapsed_gold: f64,
    weights: &GumWeights,
) -> Result<BaselineEval> {
    let (f1_t_o, f1_f_o, mia_o) = evaluate(original, &prep.bundle.test, &prep.forget, classes, mia_seed)?;
    let (f1_t_g, f1_f_g, mia_g) = evaluate(gold, &prep.bundle.test, &prep.forget, classes, mia_seed)?;
    let refs = BaselineRefs {
        f1_t_gold: f1_t_g,
        mia_gold: mia_g,
        mia_original: mia_o,
        elapsed_gold,
    };
    let original_rec = EvalRecord::derive(
        Method::Original,
        f1_t_o,
        f1_f_o,
        mia_o,
        elapsed_original,
        &refs,
        weights,
    )?;
    let gold_rec =
        EvalRecord::derive(Method::Gold, f1_t_g, f1_f_g, mia_g, elapsed_gold, &refs, weights)?;
    Ok(BaselineEval {
        refs,
        original: original_rec,
        gold: gold_rec,
    })
}

/// Run one grid cell from a pristine copy of the original model. Divergence
/// (during the method or during evaluation of its output) becomes a failed
/// row; any other error aborts the benchmark.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    cell: &MethodConfig,
    original: &LayeredModel,
    prep: &Prepared,
    classes: usize,
    mia_seed: u64,
    baseline: &BaselineEval,
    weights: &GumWeights,
    clock: &dyn Clock,
) -> Result<RunRow> {
    let seed = cell.seed;
    if cell.method.is_baseline() {
        let record = if cell.method == Method::Original {
            baseline.original.clone()
        } else {
            baseline.gold.clone()
        };
        return Ok(RunRow {
            method: cell.method,
            lr: cell.lr,
            seed,
            status: RunStatus::Completed,
            error: None,
            record: Some(record),
        });
    }
    let outcome = match run_method(original, &prep.retain, &prep.forget, cell, clock) {
        Ok(outcome) => outcome,
        Err(e) if e.is_run_failure() => return Ok(RunRow::failed(cell.method, cell.lr, seed, &e)),
        Err(e) => return Err(e),
    };
    match evaluate(&outcome.model, &prep.bundle.test, &prep.forget, classes, mia_seed) {
        Ok((f1_test, f1_forget, mia)) => {
            let record = EvalRecord::derive(
                cell.method,
                f1_test,
                f1_forget,
                mia,
                outcome.elapsed_secs,
                &baseline.refs,
                weights,
            )?;
            Ok(RunRow::completed(cell.lr, seed, record))
        }
        Err(e) if e.is_run_failure() => Ok(RunRow::failed(cell.method, cell.lr, seed, &e)),
        Err(e) => Err(e),
    }
}

/// Run the grid cells on up to `workers` threads. Results are reassembled in
/// grid order, so the report is identical for any worker count.
#[allow(clippy::too_many_arguments)]
fn run_cells(
    cells: &[MethodConfig],
    original: &LayeredModel,
    prep: &Prepared,
    classes: usize,
    mia_seed: u64,
    baseline: &BaselineEval,
    weights: &GumWeights,
    workers: usize,
    clock: &dyn Clock,
) -> Result<Vec<RunRow>> {
    let workers = workers.clamp(1, cells.len().max(1));
    let mut slots: Vec<Option<RunRow>> = vec![None; cells.len()];
    if workers == 1 {
        for (i, cell) in cells.iter().enumerate() {
            slots[i] = Some(run_cell(
                cell, original, prep, classes, mia_seed, baseline, weights, clock,
            )?);
        }
    } else {
        let chunks: Vec<Result<Vec<(usize, RunRow)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|tid| {
                    scope.spawn(move || {
                        cells
                            .iter()
                            .enumerate()
                            .skip(tid)
                            .step_by(workers)
                            .map(|(i, cell)| {
                                run_cell(
                                    cell, original, prep, classes, mia_seed, baseline, weights,
                                    clock,
                                )
                                .map(|row| (i, row))
                            })
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked"))
                .collect()
        });
        for chunk in chunks {
            for (i, row) in chunk? {
                slots[i] = Some(row);
            }
        }
    }
    Ok(slots
        .into_iter()
        .map(|slot| slot.expect("grid cell left unprocessed"))
        .collect())
}

/// Full pipeline: generate → select forget speakers → split → train original
/// and gold (timed) → run every grid cell from a pristine copy of the
/// original → score everything against the gold/original anchors.
///
/// Baseline training failures abort; grid-cell divergence does not.
pub fn run_benchmark(config: &ExperimentConfig, clock: &dyn Clock) -> Result<BenchmarkReport> {
    config.validate()?;
    let prep = prepare(config)?;
    let classes = config.gen.class_count;
    let mut rows = Vec::with_capacity(config.seeds.len() * (config.grid.len() + 2));
    for &seed in &config.seeds {
        let recipe = TrainRecipe {
            seed,
            ..config.recipe.clone()
        };
        let (original, elapsed_original) =
            train_original(&recipe, &prep.bundle.train, &prep.dims, clock)?;
        let (gold, elapsed_gold) = train_original(&recipe, &prep.retain, &prep.dims, clock)?;
        let mia_seed = derive_seed(seed, STREAM_EVAL);
        let baseline = evaluate_baselines(
            &original,
            &gold,
            &prep,
            classes,
            mia_seed,
            elapsed_original,
            elapsed_gold,
            &config.gum,
        )?;
        rows.push(RunRow::completed(recipe.lr, seed, baseline.original.clone()));
        rows.push(RunRow::completed(recipe.lr, seed, baseline.gold.clone()));
        let cells: Vec<MethodConfig> = config
            .grid
            .iter()
            .map(|cell| {
                let mut cell = cell.clone();
                cell.seed = seed;
                cell.resolve_defaults();
                cell
            })
            .collect();
        rows.extend(run_cells(
            &cells,
            &original,
            &prep,
            classes,
            mia_seed,
            &baseline,
            &config.gum,
            config.workers,
            clock,
        )?);
    }
    Ok(BenchmarkReport {
        version: REPORT_VERSION,
        config: config.clone(),
        rows,
    })
}

/// One point of a learning-rate sweep. Metric fields are absent when the run
/// diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lr: f64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub f1_test: Option<f64>,
    pub f1_forget: Option<f64>,
    pub mia: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub method: Method,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

fn check_ascending_lrs(lrs: &[f64]) -> Result<()> {
    if lrs.is_empty() {
        return Err(Error::Config("sweep needs at least one learning rate".into()));
    }
    if lrs.iter().any(|lr| !lr.is_finite() || *lr <= 0.0) {
        return Err(Error::Config(
            "sweep learning rates must be finite and positive".into(),
        ));
    }
    if lrs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "sweep learning rates must be strictly ascending".into(),
        ));
    }
    Ok(())
}

/// Run one method at each learning rate, always starting from the same
/// original model, and record the raw utility/forgetting measurements.
/// Divergence at a rate is recorded in its row, not fatal.
pub fn sweep_lr(
    config: &ExperimentConfig,
    method: Method,
    lrs: &[f64],
    clock: &dyn Clock,
) -> Result<SweepTable> {
    config.validate()?;
    check_ascending_lrs(lrs)?;
    if method.is_baseline() {
        return Err(Error::Config(format!(
            "cannot sweep baseline {method}; pick an unlearning method"
        )));
    }
    let prep = prepare(config)?;
    let classes = config.gen.class_count;
    let seed = config.seeds[0];
    let recipe = TrainRecipe {
        seed,
        ..config.recipe.clone()
    };
    let (original, _) = train_original(&recipe, &prep.bundle.train, &prep.dims, clock)?;
    let mia_seed = derive_seed(seed, STREAM_EVAL);
    let mut rows = Vec::with_capacity(lrs.len());
    for &lr in lrs {
        let mut cell = MethodConfig::new(method).with_lr(lr);
        cell.seed = seed;
        let evaluated = run_method(&original, &prep.retain, &prep.forget, &cell, clock)
            .and_then(|outcome| {
                evaluate(&outcome.model, &prep.bundle.test, &prep.forget, classes, mia_seed)
            });
        rows.push(match evaluated {
            Ok((f1_test, f1_forget, mia)) => SweepRow {
                lr,
                status: RunStatus::Completed,
                error: None,
                f1_test: Some(f1_test),
                f1_forget: Some(f1_forget),
                mia: Some(mia),
            },
            Err(e) if e.is_run_failure() => SweepRow {
                lr,
                status: RunStatus::Failed,
                error: Some(e.to_string()),
                f1_test: None,
                f1_forget: None,
                mia: None,
            },
            Err(e) => return Err(e),
        });
    }
    Ok(SweepTable { method, seed, rows })
}

/// One row of the epoch ablation: baselines retrained at the given budget,
/// the method applied once, and the attack scores of all three models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub epochs: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub f1_test: Option<f64>,
    pub f1_test_gold: f64,
    pub mia_unlearned: Option<f64>,
    pub mia_gold: f64,
    pub mia_original: f64,
    pub gum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub method: Method,
    pub lr: f64,
    pub rows: Vec<AblationRow>,
}

/// Retrain the original and gold models at each epoch budget, apply the
/// method, and tabulate how training length changes the attack landscape.
/// Rows are seed-major, then ascending in epochs.
pub fn epoch_ablation(
    config: &ExperimentConfig,
    epoch_list: &[usize],
    method_cfg: &MethodConfig,
    clock: &dyn Clock,
) -> Result<AblationTable> {
    config.validate()?;
    if epoch_list.is_empty() {
        return Err(Error::Config("ablation needs at least one epoch count".into()));
    }
    if epoch_list.iter().any(|&e| e == 0) {
        return Err(Error::Config("ablation epoch counts must be at least 1".into()));
    }
    if epoch_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "ablation epoch counts must be strictly ascending".into(),
        ));
    }
    if method_cfg.method.is_baseline() {
        return Err(Error::Config(format!(
            "cannot ablate baseline {}; pick an unlearning method",
            method_cfg.method
        )));
    }
    let mut cell_template = method_cfg.clone();
    cell_template.resolve_defaults();
    cell_template.validate()?;
    let prep = prepare(config)?;
    let classes = config.gen.class_count;
    let mut rows = Vec::with_capacity(config.seeds.len() * epoch_list.len());
    for &seed in &config.seeds {
        for &epochs in epoch_list {
            let recipe = TrainRecipe {
                epochs,
                seed,
                ..config.recipe.clone()
            };
            let (original, elapsed_original) =
                train_original(&recipe, &prep.bundle.train, &prep.dims, clock)?;
            let (gold, elapsed_gold) =
                train_original(&recipe, &prep.retain, &prep.dims, clock)?;
            let mia_seed = derive_seed(seed, STREAM_EVAL);
            let baseline = evaluate_baselines(
                &original,
                &gold,
                &prep,
                classes,
                mia_seed,
                elapsed_original,
                elapsed_gold,
                &config.gum,
            )?;
            let mut cell = cell_template.clone();
            cell.seed = seed;
            let row = match run_cell(
                &cell, &original, &prep, classes, mia_seed, &baseline, &config.gum, clock,
            )? {
                RunRow {
                    status: RunStatus::Completed,
                    record: Some(record),
                    ..
                } => AblationRow {
                    epochs,
                    seed,
                    status: RunStatus::Completed,
                    error: None,
                    f1_test: Some(record.f1_test),
                    f1_test_gold: baseline.refs.f1_t_gold,
                    mia_unlearned: Some(record.mia),
                    mia_gold: baseline.refs.mia_gold,
                    mia_original: baseline.refs.mia_original,
                    gum: Some(record.gum),
                },
                failed => AblationRow {
                    epochs,
                    seed,
                    status: RunStatus::Failed,
                    error: failed.error,
                    f1_test: None,
                    f1_test_gold: baseline.refs.f1_t_gold,
                    mia_unlearned: None,
                    mia_gold: baseline.refs.mia_gold,
                    mia_original: baseline.refs.mia_original,
                    gum: None,
                },
            };
            rows.push(row);
        }
    }
    Ok(AblationTable {
        method: cell_template.method,
        lr: cell_template.lr,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::StepClock;

    /// Desk-scale config: big enough for the membership attack's minimum
    /// pool sizes, small enough that a full benchmark takes well under a
    /// second.
    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            gen: GenConfig {
                feature_dim: 6,
                class_count: 3,
                train_speakers: 10,
                test_speakers: 3,
                samples_per_speaker: (14, 20),
                speaker_leakage: 0.8,
                noise_sigma: 1.0,
                seed: 11,
            },
            hidden_dims: vec![8],
            recipe: TrainRecipe {
                epochs: 8,
                lr: 0.05,
                batch_size: 16,
                seed: 7,
                ..TrainRecipe::default()
            },
            forget: ForgetSpec {
                min_samples: 1,
                fraction_band: (0.15, 0.45),
                seed: 5,
            },
            grid: vec![
                MethodConfig::new(Method::Ft).with_lr(1e-4),
                MethodConfig::new(Method::Ng).with_lr(5e-5),
            ],
            seeds: vec![7],
            workers: 1,
            clock: ClockChoice::Step,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid_and_carries_the_full_grid() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
        assert_eq!(config.grid.len(), 24);
        for cell in &config.grid {
            assert!(cell.method.lr_family().contains(&cell.lr));
        }
        assert_eq!(config.seeds, vec![7]);
        assert_eq!(config.hidden_dims, vec![64, 32]);
        assert_eq!(config.forget.min_samples, 100);
        assert_eq!(config.forget.fraction_band, (0.025, 0.05));
    }

    #[test]
    fn toml_defaults_and_overrides_parse() {
        let config = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(config, ExperimentConfig::default());
        let config = ExperimentConfig::from_toml_str(
            r#"
            hidden_dims = [16]
            seeds = [1, 2]
            workers = 3
            clock = "step"
            report_formats = ["json"]

            [forget]
            min_samples = 50
            fraction_band = [0.1, 0.2]
            seed = 4

            [[grid]]
            method = "ng"
            lr = 5e-6
            "#,
        )
        .unwrap();
        assert_eq!(config.hidden_dims, vec![16]);
        assert_eq!(config.seeds, vec![1, 2]);
        assert_eq!(config.workers, 3);
        assert_eq!(config.clock, ClockChoice::Step);
        assert_eq!(config.grid.len(), 1);
        assert_eq!(config.grid[0].method, Method::Ng);
        assert_eq!(config.forget.min_samples, 50);
    }

    #[test]
    fn toml_rejects_unknown_keys_and_invalid_values() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("no_such_key = 1"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("workers = 0"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("seeds = []"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("grid = []"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_validation_rejects_bad_nested_sections() {
        let mut config = tiny_config();
        config.forget.fraction_band = (0.5, 0.2);
        assert!(config.validate().is_err());
        let mut config = tiny_config();
        config.hidden_dims = vec![8, 0];
        assert!(config.validate().is_err());
        let mut config = tiny_config();
        config.grid[0].epochs = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn clock_and_format_names_parse() {
        assert_eq!("wall".parse::<ClockChoice>().unwrap(), ClockChoice::Wall);
        assert_eq!("step".parse::<ClockChoice>().unwrap(), ClockChoice::Step);
        assert!("sundial".parse::<ClockChoice>().is_err());
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert!("yaml".parse::<ReportFormat>().is_err());
    }

    #[test]
    fn benchmark_produces_baselines_plus_grid_rows() {
        let config = tiny_config();
        let report = run_benchmark(&config, &StepClock::new(0.5)).unwrap();
        assert_eq!(report.version, REPORT_VERSION);
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.rows[0].method, Method::Original);
        assert_eq!(report.rows[1].method, Method::Gold);
        for row in &report.rows[..2] {
            let record = row.record.as_ref().unwrap();
            assert_eq!(record.gum, 0.0);
            assert_eq!(record.speedup, 1.0);
            assert_eq!(record.t, 0.0);
        }
        // The gold row is its own utility anchor.
        assert_eq!(report.rows[1].record.as_ref().unwrap().u, 1.0);
        for row in &report.rows[2..] {
            assert_eq!(row.status, RunStatus::Completed);
            let record = row.record.as_ref().unwrap();
            for v in [record.f1_test, record.mia, record.u, record.e, record.t, record.gum] {
                assert!((0.0..=1.0).contains(&v), "{} out of range", v);
            }
            assert!(record.speedup.is_finite() && record.speedup > 0.0);
        }
        assert_eq!(report.best_rows().len(), 2);
    }

    #[test]
    fn benchmark_is_deterministic_under_the_step_clock() {
        let config = tiny_config();
        let a = run_benchmark(&config, &StepClock::default()).unwrap();
        let b = run_benchmark(&config, &StepClock::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn worker_count_does_not_change_the_report() {
        let mut config = tiny_config();
        config.grid = default_grid();
        config.recipe.epochs = 4;
        let serial = run_benchmark(&config, &StepClock::default()).unwrap();
        config.workers = 4;
        let parallel = run_benchmark(&config, &StepClock::default()).unwrap();
        assert_eq!(serial.rows, parallel.rows);
    }

    #[test]
    fn baseline_only_grid_yields_pinned_rows() {
        let mut config = tiny_config();
        config.grid = vec![MethodConfig::new(Method::Original)];
        let report = run_benchmark(&config, &StepClock::default()).unwrap();
        assert_eq!(report.rows.len(), 3);
        for row in &report.rows {
            let record = row.record.as_ref().unwrap();
            assert_eq!(record.gum, 0.0);
            assert_eq!(record.speedup, 1.0);
        }
        assert!(report.methods().is_empty());
        assert!(report.best_rows().is_empty());
    }

    #[test]
    fn diverged_cells_become_failed_rows_not_errors() {
        let mut config = tiny_config();
        config.grid = vec![
            MethodConfig::new(Method::Ft).with_lr(1e-4),
            MethodConfig {
                epochs: 3,
                ..MethodConfig::new(Method::Ng).with_lr(1e200)
            },
        ];
        let report = run_benchmark(&config, &StepClock::default()).unwrap();
        assert_eq!(report.rows.len(), 4);
        let failed = &report.rows[3];
        assert_eq!(failed.method, Method::Ng);
        assert_eq!(failed.status, RunStatus::Failed);
        assert!(failed.record.is_none());
        assert!(failed.error.as_ref().is_some_and(|e| !e.is_empty()));
        // The failed cell is excluded from best-row selection.
        assert!(report.best_row(Method::Ng, 7).is_none());
        assert_eq!(report.best_rows().len(), 1);
    }

    #[test]
    fn best_row_prefers_higher_gum_then_smaller_lr() {
        let config = tiny_config();
        let mut report = run_benchmark(&config, &StepClock::default()).unwrap();
        // Duplicate the FT row at a larger lr with an identical record so the
        // tie must break toward the smaller rate.
        let mut clone = report.rows[2].clone();
        clone.lr = 1.0;
        report.rows.push(clone);
        let best = report.best_row(Method::Ft, 7).unwrap();
        assert_eq!(best.lr, 1e-4);
        // A strictly larger GUM wins regardless of order.
        let mut boosted = report.rows[2].clone();
        boosted.lr = 2.0;
        boosted.record.as_mut().unwrap().gum += 0.1;
        let target = boosted.record.as_ref().unwrap().gum;
        report.rows.push(boosted);
        let best = report.best_row(Method::Ft, 7).unwrap();
        assert_eq!(best.record.as_ref().unwrap().gum, target);
    }

    #[test]
    fn multi_seed_runs_produce_per_seed_sections() {
        let mut config = tiny_config();
        config.seeds = vec![7, 8];
        let report = run_benchmark(&config, &StepClock::default()).unwrap();
        assert_eq!(report.rows.len(), 8);
        assert_eq!(report.rows[0].seed, 7);
        assert_eq!(report.rows[4].seed, 8);
        assert_eq!(report.rows[4].method, Method::Original);
        // Same data, different training seed: baselines genuinely differ.
        assert_ne!(
            report.rows[0].record.as_ref().unwrap().f1_test,
            report.rows[4].record.as_ref().unwrap().f1_test
        );
        assert_eq!(report.best_rows().len(), 4);
    }

    #[test]
    fn sweep_covers_each_rate_and_rejects_bad_inputs() {
        let config = tiny_config();
        let clock = StepClock::default();
        let table = sweep_lr(&config, Method::Ng, &[5e-5], &clock).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].status, RunStatus::Completed);
        assert!(table.rows[0].mia.unwrap() >= 0.0);
        let table = sweep_lr(&config, Method::Ng, &[5e-7, 5e-6, 5e-5], &clock).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert!(table.rows.iter().all(|r| r.status == RunStatus::Completed));
        assert!(sweep_lr(&config, Method::Ng, &[], &clock).is_err());
        assert!(sweep_lr(&config, Method::Ng, &[5e-5, 5e-6], &clock).is_err());
        assert!(sweep_lr(&config, Method::Ng, &[5e-5, 5e-5], &clock).is_err());
        assert!(sweep_lr(&config, Method::Gold, &[5e-5], &clock).is_err());
    }

    #[test]
    fn sweep_records_divergence_per_row() {
        let config = tiny_config();
        let table =
            sweep_lr(&config, Method::Ft, &[1e-4, 1e150, 1e200], &StepClock::default()).unwrap();
        assert_eq!(table.rows[0].status, RunStatus::Completed);
        let failed: Vec<_> = table
            .rows
            .iter()
            .filter(|r| r.status == RunStatus::Failed)
            .collect();
        assert!(!failed.is_empty());
        for row in failed {
            assert!(row.f1_test.is_none() && row.mia.is_none());
            assert!(row.error.is_some());
        }
    }

    #[test]
    fn ablation_rows_cover_every_epoch_and_seed() {
        let mut config = tiny_config();
        config.seeds = vec![7, 9];
        let cell = MethodConfig::new(Method::NgPlus).with_lr(5e-7);
        let table = epoch_ablation(&config, &[2, 4], &cell, &StepClock::default()).unwrap();
        assert_eq!(table.method, Method::NgPlus);
        assert_eq!(table.lr, 5e-7);
        assert_eq!(table.rows.len(), 4);
        assert_eq!(
            table.rows.iter().map(|r| (r.seed, r.epochs)).collect::<Vec<_>>(),
            vec![(7, 2), (7, 4), (9, 2), (9, 4)]
        );
        for row in &table.rows {
            assert_eq!(row.status, RunStatus::Completed);
            for v in [
                row.f1_test.unwrap(),
                row.f1_test_gold,
                row.mia_unlearned.unwrap(),
                row.mia_gold,
                row.mia_original,
                row.gum.unwrap(),
            ] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn ablation_validates_epoch_list_and_method() {
        let config = tiny_config();
        let clock = StepClock::default();
        let cell = MethodConfig::new(Method::NgPlus);
        let table = epoch_ablation(&config, &[1], &cell, &clock).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(epoch_ablation(&config, &[], &cell, &clock).is_err());
        assert!(epoch_ablation(&config, &[0, 2], &cell, &clock).is_err());
        assert!(epoch_ablation(&config, &[4, 2], &cell, &clock).is_err());
        assert!(epoch_ablation(&config, &[2, 2], &cell, &clock).is_err());
        let baseline = MethodConfig::new(Method::Original);
        assert!(epoch_ablation(&config, &[2], &baseline, &clock).is_err());
    }
}

//! Command-line front end: dataset generation, the full benchmark, the
//! learning-rate sweep and epoch-ablation studies, and report re-rendering.
//!
//! Exit codes: 0 success, 1 config or data error, 2 baseline training
//! failure, 3 io error.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use unlearn_bench::data::{generate, io as dataset_io};
use unlearn_bench::error::{Error, Result};
use unlearn_bench::harness::report::{
    emit_ablation, emit_report, emit_sweep, parse_json, render_ablation_csv, render_markdown,
    render_sweep_csv,
};
use unlearn_bench::harness::{epoch_ablation, run_benchmark, sweep_lr, ExperimentConfig, ReportFormat};
use unlearn_bench::unlearn::{Method, MethodConfig};

fn parse_method(s: &str) -> Result<Method> {
    s.parse()
}

fn parse_format(s: &str) -> Result<ReportFormat> {
    s.parse()
}

#[derive(Parser)]
#[command(
    name = "unlearn-bench",
    version,
    about = "Benchmark machine-unlearning methods on synthetic spoken-intent data"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML experiment config; omitted keys use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel grid workers (overrides the config).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Restrict report output to one format.
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<ReportFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write it to files.
    Generate,
    /// Run the full method × learning-rate benchmark and emit reports.
    Bench,
    /// Run one method across several learning rates from the same original
    /// model.
    SweepLr(SweepArgs),
    /// Retrain at several epoch budgets and apply one method at each.
    AblateEpochs(AblateArgs),
    /// Re-render a saved JSON report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Unlearning method to sweep.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Comma-separated learning rates, strictly ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    lrs: Vec<f64>,
}

#[derive(Args)]
struct AblateArgs {
    /// Comma-separated training epoch budgets, strictly ascending.
    #[arg(long, value_delimiter = ',', default_value = "5,7,11,15,60")]
    epochs: Vec<usize>,
    #[arg(long, value_parser = parse_method, default_value = "ng_plus")]
    method: Method,
    #[arg(long, default_value_t = 5e-7)]
    lr: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved report.json to re-render.
    #[arg(long)]
    input: PathBuf,
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut config = match &global.config {
        Some(path) => ExperimentConfig::from_toml_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &global.out {
        config.out_dir = out.clone();
    }
    if let Some(workers) = global.workers {
        config.workers = workers;
    }
    if let Some(format) = global.format {
        config.report_formats = vec![format];
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate => {
            let config = load_config(&cli.global)?;
            let bundle = generate(&config.gen)?;
            let paths = dataset_io::export(&bundle, &config.out_dir)?;
            println!(
                "wrote {} train / {} test samples",
                bundle.train.len(),
                bundle.test.len()
            );
            for path in [paths.train, paths.test, paths.sidecar] {
                println!("wrote {}", path.display());
            }
        }
        Command::Bench => {
            let config = load_config(&cli.global)?;
            let clock = config.clock.build();
            let report = run_benchmark(&config, clock.as_ref())?;
            print!("{}", render_markdown(&report));
            for path in emit_report(&report, &config.out_dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::SweepLr(args) => {
            let config = load_config(&cli.global)?;
            let clock = config.clock.build();
            let table = sweep_lr(&config, args.method, &args.lrs, clock.as_ref())?;
            print!("{}", render_sweep_csv(&table));
            for path in emit_sweep(&table, &config.out_dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::AblateEpochs(args) => {
            let config = load_config(&cli.global)?;
            let clock = config.clock.build();
            let cell = MethodConfig::new(args.method).with_lr(args.lr);
            let table = epoch_ablation(&config, &args.epochs, &cell, clock.as_ref())?;
            print!("{}", render_ablation_csv(&table));
            for path in emit_ablation(&table, &config.out_dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Report(args) => {
            let mut report = parse_json(&std::fs::read_to_string(&args.input)?)?;
            if let Some(format) = cli.global.format {
                report.config.report_formats = vec![format];
            }
            let out_dir = cli.global
                .out
                .clone()
                .unwrap_or_else(|| report.config.out_dir.clone());
            for path in emit_report(&report, &out_dir)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Io(_) => 3,
        e if e.is_run_failure() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            // Help and version requests print to stdout and succeed; every
            // other argument problem is a config error (exit 1), never a
            // training failure (exit 2), so clap's default exit code of 2
            // cannot be used here.
            let _ = error.print();
            return if error.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code(&error))
        }
    }
}

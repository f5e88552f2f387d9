use std::path::PathBuf;
use std::process::ExitCode;

use alr::config::{parse_list, DatasetKind, NoiseMode, RunConfig};
use alr::run::{self, Grid};
use alr::{Error, Result};
use alr_core::gradcheck::{self, GradcheckConfig};
use alr_core::trainer::{EpochMetrics, Method};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "alr", version, about = "Adaptive label refinement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics, summary and manifest.
    Train(RunArgs),
    /// Check the analytic loss gradients on random draws.
    Gradcheck(GradcheckArgs),
    /// Train over a grid of alpha, lambda and warm-up values.
    Sweep(SweepArgs),
    /// Train CE, label refinement and ALR on the same data.
    Ablate(RunArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// key=value file applied before the flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetKind>,
    /// Blob count (train and test together)
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    /// IDX image file
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file
    #[arg(long)]
    labels: Option<PathBuf>,
    /// CSV data file
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<usize>,
    /// CSV has a header row
    #[arg(long)]
    header: bool,
    #[arg(long, value_enum)]
    noise: Option<NoiseMode>,
    #[arg(long)]
    rate: Option<f64>,
    /// Symmetric noise never redraws the true class
    #[arg(long)]
    exclude_true: bool,
    /// circular, cifar10, or a file of class indices
    #[arg(long)]
    mapping: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Comma-separated epochs at which the learning rate decays
    #[arg(long)]
    milestones: Option<String>,
    #[arg(long)]
    decay: Option<f64>,
    /// Comma-separated hidden layer widths
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_shuffle: bool,
    /// Root directory for run folders
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated epochs at which to dump the soft targets
    #[arg(long)]
    dump_targets: Option<String>,
    /// Penultimate-layer feature CSV (relative paths land in the run folder)
    #[arg(long)]
    features_out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0, hide = true)]
    perturb: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    alphas: Option<String>,
    /// Values outside (0, 1) are clipped
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long)]
    warmups: Option<String>,
    /// Grid points trained concurrently
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: alr_core::Error| e.to_string())
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(|e| Error::usage(e.to_string()))?;
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        take!(method, dataset, n, classes, dim, spread, noise, rate, alpha, lambda, warmup, epochs, batch, lr,
            momentum, weight_decay, decay, seed, out);
        if self.images.is_some() {
            cfg.images = self.images.clone();
        }
        if self.labels.is_some() {
            cfg.labels = self.labels.clone();
        }
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        if self.mapping.is_some() {
            cfg.mapping = self.mapping.clone();
        }
        if self.features_out.is_some() {
            cfg.features_out = self.features_out.clone();
        }
        if let Some(c) = self.label_column {
            cfg.label_column = c;
        }
        if let Some(v) = &self.milestones {
            cfg.milestones = parse_list("milestones", v)?;
        }
        if let Some(v) = &self.hidden {
            cfg.hidden = parse_list("hidden", v)?;
        }
        if let Some(v) = &self.dump_targets {
            cfg.dump_targets = parse_list("dump-targets", v)?;
        }
        cfg.header |= self.header;
        cfg.exclude_true |= self.exclude_true;
        cfg.shuffle &= !self.no_shuffle;
        cfg.train_config().validate()?;
        Ok(cfg)
    }
}

fn print_metrics(m: &EpochMetrics) {
    for (name, v) in EpochMetrics::FIELDS.iter().zip(m.values()) {
        println!("  {name:<22} {v}");
    }
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let result = run::train(&cfg)?;
    if let Some(last) = result.metrics.last() {
        println!("final metrics ({} epochs):", result.metrics.len());
        print_metrics(last);
    }
    println!("run directory: {}", result.dir.display());
    Ok(())
}

fn cmd_ablate(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let dir = run::create_run_dir(&cfg.out, "ablate", cfg.seed)?;
    let rows = run::ablate_in(&cfg, &dir)?;
    println!("{:<6} {:>10} {:>12} {:>10}", "method", "test_acc", "memorized", "recovery");
    for r in &rows {
        let m = &r.final_metrics;
        println!(
            "{:<6} {:>10.4} {:>12.4} {:>10.4}",
            r.method.as_str(),
            m.test_acc,
            m.noisy_memorized_frac,
            m.label_recovery
        );
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let grid = Grid {
        alphas: args.alphas.as_deref().map_or(Ok(vec![cfg.alpha]), |v| parse_list("alphas", v))?,
        lambdas: args.lambdas.as_deref().map_or(Ok(vec![cfg.lambda]), |v| parse_list("lambdas", v))?,
        warmups: args.warmups.as_deref().map_or(Ok(vec![cfg.warmup]), |v| parse_list("warmups", v))?,
    };
    if grid.points().is_empty() {
        return Err(Error::usage("every grid axis needs at least one value"));
    }
    for l in &grid.lambdas {
        if run::clip_lambda(*l) != *l {
            eprintln!("warning: lambda {l} clipped to {}", run::clip_lambda(*l));
        }
    }
    let dir = run::create_run_dir(&cfg.out, "sweep", cfg.seed)?;
    let rows = run::sweep_in(&cfg, &grid, &dir, args.jobs)?;
    println!("{:>6} {:>7} {:>6} {:>10}", "alpha", "lambda", "warmup", "test_acc");
    for r in &rows {
        println!("{:>6} {:>7} {:>6} {:>10.4}", r.alpha, r.lambda, r.warmup, r.final_metrics.test_acc);
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    if args.trials == 0 {
        eprintln!("warning: zero trials, nothing was checked");
    }
    let report = gradcheck::run(&GradcheckConfig {
        trials: args.trials,
        seed: args.seed,
        perturb: args.perturb,
        ..GradcheckConfig::default()
    })?;
    println!("trials                 {}", report.trials);
    println!("max identity error     {:e}", report.max_identity_err);
    println!("max ce fd rel error    {:e}", report.max_ce_fd_rel_err);
    println!("max alr fd rel error   {:e}", report.max_alr_fd_rel_err);
    println!("max uniform error      {:e}", report.max_uniform_err);
    println!("sign checks            {} ({} violations)", report.sign_checks, report.sign_violations);
    println!("threshold violations   {}", report.threshold_violations);
    println!("root failures          {}", report.root_failures);
    if report.passed() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("{} failed checks", report.failure_count);
    for f in &report.failures {
        eprintln!(
            "trial {} (seed {}): {}: {}\n  p = {:?}\n  t = {:?}\n  lambda = {}",
            f.trial, f.seed, f.check, f.detail, f.p, f.t, f.lambda
        );
    }
    Ok(ExitCode::from(4))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| ExitCode::SUCCESS),
        Command::Ablate(a) => cmd_ablate(a).map(|_| ExitCode::SUCCESS),
        Command::Sweep(a) => cmd_sweep(a).map(|_| ExitCode::SUCCESS),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        if matches!(e, Error::Usage(_)) {
            eprintln!("run with --help for usage");
        }
        ExitCode::from(e.exit_code() as u8)
    })
}

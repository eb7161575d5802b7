use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mgt_core::backend::{BackendDescriptor, RetryPolicy, SyntheticModelConfig, DEFAULT_TOP_K};
use mgt_core::schema::{load_gender_lexicon, load_winogender_schema, AxisKind};
use mgt_core::stats::DEFAULT_N_EDGE;
use mgt_runner::experiment::DEFAULT_SIM_SAMPLES;
use mgt_runner::service::{serve, ServiceState};
use mgt_runner::{run_experiment, Basis, DateRange, ExperimentConfig, ExperimentKind, ExperimentReport, RunContext};

#[derive(Parser)]
#[command(name = "mgt", version, about = "Masked gender task experiments and causal checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gendered mass along a date or place axis.
    Mgt(MgtArgs),
    /// Edge-window uncertainty over the extended Winogender set.
    Winogender(WinogenderArgs),
    /// Exact checks on a discrete causal model spec.
    Sim(SimArgs),
    /// JSON API for interactive exploration.
    Serve(ServeArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// Fill-mask endpoint URL; omit for the built-in synthetic model.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "synthetic")]
    model: String,
    #[arg(long, default_value = "[MASK]")]
    mask_token: String,
    /// Environment variable holding a bearer token.
    #[arg(long)]
    auth_env: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, default_value_t = 8)]
    parallelism: usize,
    #[arg(long, default_value_t = 5)]
    max_retries: u32,
    /// Fraction of prompts allowed to fail before the run aborts.
    #[arg(long, default_value_t = 0.0)]
    max_failure_fraction: f64,
    #[arg(long, default_value_t = 0.22)]
    synthetic_base: f64,
    #[arg(long, default_value_t = 0.01)]
    synthetic_slope: f64,
    #[arg(long, default_value_t = 0.06)]
    synthetic_neutral: f64,
    #[arg(long, default_value_t = 0.0)]
    synthetic_jitter: f64,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, default_value_t = DEFAULT_N_EDGE)]
    n_edge: usize,
    /// `share` (female over gendered mass) or `raw` (top-k mass).
    #[arg(long, default_value = "share")]
    basis: Basis,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gender lexicon file (two words per line: male female).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Do not read or write the remote results cache.
    #[arg(long)]
    no_cache: bool,
    #[arg(long, default_value = ".mgt-cache")]
    cache_dir: PathBuf,
}

#[derive(Args)]
struct DateArgs {
    #[arg(long)]
    start: Option<i64>,
    #[arg(long)]
    end: Option<i64>,
    #[arg(long)]
    count: Option<usize>,
}

impl DateArgs {
    fn range(&self, default: DateRange) -> Option<DateRange> {
        if self.start.is_none() && self.end.is_none() && self.count.is_none() {
            return None;
        }
        Some(DateRange {
            start: self.start.unwrap_or(default.start),
            end: self.end.unwrap_or(default.end),
            count: self.count.unwrap_or(default.count),
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Date,
    Place,
}

#[derive(Args)]
struct MgtArgs {
    #[arg(long, value_enum, default_value = "date")]
    axis: AxisArg,
    #[command(flatten)]
    dates: DateArgs,
    /// Custom template with {MASK} once and {W} at most once.
    #[arg(long)]
    template: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct WinogenderArgs {
    /// Restrict to an occupation; repeatable.
    #[arg(long = "occupation")]
    occupations: Vec<String>,
    #[arg(long, requires = "stats")]
    templates: Option<PathBuf>,
    #[arg(long, requires = "templates")]
    stats: Option<PathBuf>,
    #[command(flatten)]
    dates: DateArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Monte Carlo sample size; 0 skips sampling.
    #[arg(long, default_value_t = DEFAULT_SIM_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long, default_value_t = 8)]
    parallelism: usize,
    #[arg(long, default_value_t = 5)]
    max_retries: u32,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, requires = "stats")]
    templates: Option<PathBuf>,
    #[arg(long, requires = "templates")]
    stats: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
    #[arg(long, default_value = ".mgt-cache")]
    cache_dir: PathBuf,
}

fn configure(kind: ExperimentKind, backend: &BackendArgs, output: &OutputArgs) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, &output.out);
    c.backend = BackendDescriptor {
        name: backend.model.clone(),
        mask_token: backend.mask_token.clone(),
        endpoint: backend.endpoint.clone(),
        auth_token_env: backend.auth_env.clone(),
    };
    c.synthetic = SyntheticModelConfig {
        female_base: backend.synthetic_base,
        female_slope_per_index: backend.synthetic_slope,
        neutral_mass: backend.synthetic_neutral,
        seed: output.seed,
        jitter: backend.synthetic_jitter,
    };
    c.top_k = backend.top_k;
    c.parallelism = backend.parallelism;
    c.retry = RetryPolicy {
        max_retries: backend.max_retries,
        max_failure_fraction: backend.max_failure_fraction,
        ..RetryPolicy::default()
    };
    c.n_edge = output.n_edge;
    c.basis = output.basis;
    c.seed = output.seed;
    c.lexicon = output.lexicon.clone();
    c.cache_dir = (!output.no_cache).then(|| output.cache_dir.clone());
    c
}

fn summarize(report: &ExperimentReport, out: &std::path::Path) {
    if let Some(s) = &report.series {
        println!(
            "{} prompts ({} evaluated): female slope {:.6}, r {:.4}; male slope {:.6}, r {:.4}; uncertainty {:.3} pp",
            report.n_prompts,
            report.n_evaluated,
            s.fits.female.slope,
            s.fits.female.pearson_r,
            s.fits.male.slope,
            s.fits.male.pearson_r,
            s.uncertainty.value
        );
    }
    if let Some(scores) = &report.winogender {
        let max = scores.iter().map(|s| s.uncertainty.value).fold(0.0, f64::max);
        println!(
            "{} prompts ({} evaluated): {} uncertainty scores, max {:.3} pp",
            report.n_prompts,
            report.n_evaluated,
            scores.len(),
            max
        );
    }
    if let Some(sim) = &report.sim {
        println!(
            "{}: collider {:?}, dependent under selection {}, recoverable {} (gap {:.3e})",
            sim.spec_name,
            sim.collider.status,
            sim.dependent_under_selection,
            sim.recoverable,
            sim.recoverability.max_gap
        );
    }
    if !report.failures.is_empty() {
        eprintln!("warning: {} prompts failed and were excluded", report.failures.len());
    }
    println!("wrote {}", out.display());
}

async fn run(cli: Cli) -> Result<(), (i32, String)> {
    let config = match cli.command {
        Command::Mgt(a) => {
            let kind = match (&a.template, a.axis) {
                (Some(_), _) => ExperimentKind::Custom,
                (None, AxisArg::Date) => ExperimentKind::MgtDate,
                (None, AxisArg::Place) => ExperimentKind::MgtPlace,
            };
            let mut c = configure(kind, &a.backend, &a.output);
            c.dates = a.dates.range(DateRange::MGT);
            c.template = a.template;
            if kind == ExperimentKind::Custom {
                c.custom_axis = Some(match a.axis {
                    AxisArg::Date => AxisKind::Date,
                    AxisArg::Place => AxisKind::Place,
                });
            }
            c
        }
        Command::Winogender(a) => {
            let mut c = configure(ExperimentKind::Winogender, &a.backend, &a.output);
            c.dates = a.dates.range(DateRange {
                start: 1901,
                end: 2016,
                count: 30,
            });
            c.winogender.templates = a.templates;
            c.winogender.stats = a.stats;
            c.winogender.occupations = a.occupations;
            c
        }
        Command::Sim(a) => {
            let mut c = ExperimentConfig::new(ExperimentKind::Sim, a.out);
            c.spec = Some(a.spec);
            c.sim_samples = a.samples;
            c.seed = a.seed;
            c
        }
        Command::Serve(a) => {
            let lexicon = load_gender_lexicon(a.lexicon.as_deref()).map_err(|e| (2, e.to_string()))?;
            let mut state = ServiceState {
                lexicon,
                parallelism: a.parallelism.max(1),
                retry: RetryPolicy {
                    max_retries: a.max_retries,
                    ..RetryPolicy::default()
                },
                cache_dir: (!a.no_cache).then_some(a.cache_dir),
                ..ServiceState::default()
            };
            if let (Some(t), Some(s)) = (&a.templates, &a.stats) {
                let (records, stats) = load_winogender_schema(t, s).map_err(|e| (2, e.to_string()))?;
                state.records = records;
                state.stats = stats;
            }
            return serve(a.bind, state).await.map_err(|e| (1, e.to_string()));
        }
    };
    let report = run_experiment(&config, &RunContext::from_env())
        .await
        .map_err(|e| (e.exit_code(), e.to_string()))?;
    summarize(&report, &config.out);
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}

//! Command-line driver.

use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use coded_conv::latency::ShiftExp;
use coded_conv::optimizer::{
    failure_comparison, l_curve, minimize_l, optimal_comparison, uncoded_expected, uncoded_expected_harmonic, ComparisonMode,
};
use coded_conv::simulator::{models::vgg16_like, simulate_layer, simulate_pipeline, Completion, Scenario, Strategy, Summary};
use coded_conv::{plan_split, LayerGeometry, PhaseProfile, SystemParams, Tensor64};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, RuntimeError};
use crate::master::{preload, run_inference, Cluster, Mode, RunOptions};
use crate::model::{load_model, Model};
use crate::worker::{run_worker, WorkerOptions};

#[derive(Debug, Parser)]
#[command(name = "coded-conv", version, about = "Coded distributed convolution: planning, simulation and a master/worker runtime")]
pub struct Cli {
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// CSV output path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the split plan of a layer as JSON.
    Plan {
        #[arg(long)]
        k: usize,
    },
    /// Minimise the latency objective; writes the L(k) curve to --out.
    Optimize {
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Monte Carlo comparison of strategies; CSV to --out or stdout.
    Simulate {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Closed-form coded versus uncoded comparison as JSON.
    Compare,
    /// Fit a shift-exponential to newline-separated latency samples.
    Fit {
        #[arg(long)]
        samples: PathBuf,
        /// Workload the samples were measured at.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Run a model on remote workers; timing CSV to --out.
    Master {
        /// Comma-separated worker addresses.
        #[arg(long, value_delimiter = ',', required = true)]
        workers: Vec<String>,
        /// Fixed split; chosen by the optimizer from --profile when absent.
        #[arg(long, conflicts_with = "uncoded")]
        k: Option<usize>,
        /// One piece per worker, no redundancy.
        #[arg(long)]
        uncoded: bool,
        /// JSON latency profile.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Per-layer wait before re-dispatching missing pieces
        #[arg(long)]
        timeout_ms: Option<u64>,
        /// Input tensor container; random from --seed when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Where to write the output tensor container.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Number of inference runs; every total lands in `runs_s`
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
    /// Serve master connections.
    Worker {
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Sleep before every subtask.
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
    /// Local single-process inference.
    Oracle {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// A convolution on an unpadded `height x width` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    pub height: usize,
    pub width: usize,
}

impl LayerConfig {
    pub fn geometry(&self) -> Result<LayerGeometry> {
        Ok(LayerGeometry::new(
            self.in_channels,
            self.out_channels,
            self.kernel_size,
            self.stride,
            self.height + 2 * self.padding,
            self.width + 2 * self.padding,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n: usize,
    pub layer: LayerConfig,
    pub profile: PhaseProfile,
}

impl SystemConfig {
    pub fn params(&self) -> Result<SystemParams> {
        Ok(SystemParams::new(self.n, self.layer.geometry()?, self.profile)?)
    }
}

/// Network simulated end to end instead of a single layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkConfig {
    Vgg16Like { side: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub profile: PhaseProfile,
    #[serde(default)]
    pub layer: Option<LayerConfig>,
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    #[serde(default = "baseline")]
    pub scenario: Scenario,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub completion: Completion,
}

fn baseline() -> Scenario {
    Scenario::Baseline
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::CodedAuto, Strategy::Uncoded, Strategy::Replication]
}

fn read_json<T: for<'de> Deserialize<'de>>(path: Option<&PathBuf>) -> Result<T> {
    let path = path.ok_or_else(|| RuntimeError::Config("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| RuntimeError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| RuntimeError::Config(format!("{}: {e}", path.display())))
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    writeln!(out, "{text}")?;
    Ok(())
}

/// Simulation rows in the CSV layout.
#[derive(Debug, Serialize)]
struct SimRow<'a> {
    strategy: &'a str,
    k: usize,
    mean_s: f64,
    std_s: f64,
    p50: f64,
    p95: f64,
    fail_rate: f64,
}

impl<'a> From<&'a Summary> for SimRow<'a> {
    fn from(s: &'a Summary) -> Self {
        Self { strategy: &s.strategy, k: s.k, mean_s: s.mean_s, std_s: s.std_s, p50: s.p50_s, p95: s.p95_s, fail_rate: s.fail_rate }
    }
}

/// Runs the simulation described by `cfg`.
pub fn simulate(cfg: &ScenarioConfig, trials: usize, seed: u64) -> Result<Vec<Summary>> {
    let mut rows = Vec::new();
    for &strategy in &cfg.strategies {
        let s = match (&cfg.layer, &cfg.network) {
            (Some(layer), None) => {
                let params = SystemParams::new(cfg.n, layer.geometry()?, cfg.profile)?;
                simulate_layer(strategy, &params, &cfg.scenario, trials, seed, cfg.completion)?
            }
            (None, Some(NetworkConfig::Vgg16Like { side })) => {
                let layers = vgg16_like(*side)?;
                simulate_pipeline(&layers, strategy, cfg.n, &cfg.profile, &cfg.scenario, trials, seed, cfg.completion)?.total
            }
            _ => return Err(RuntimeError::Config("give exactly one of `layer` and `network`".into())),
        };
        rows.push(s);
    }
    Ok(rows)
}

pub fn write_simulation_csv(rows: &[Summary], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(SimRow::from(r))?;
    }
    out.flush()?;
    Ok(())
}

fn write_tensor(path: &Path, t: &Tensor64) -> Result<()> {
    fs::write(path, t.to_container_bytes())?;
    Ok(())
}

fn model_input(model: &Model, input: Option<&PathBuf>, seed: u64) -> Result<Tensor64> {
    match input {
        Some(p) => Ok(coded_conv::Tensor::from_container_bytes(&fs::read(p)?)?.cast()),
        None => Ok(model.random_input(seed)),
    }
}

/// Executes a parsed command line, writing human output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let config = cli.config.as_ref();
    match cli.command {
        Command::Plan { k } => {
            let layer: LayerConfig = read_json(config)?;
            let g = layer.geometry()?;
            print_json(stdout, &plan_split(g.kernel, g.stride, g.w_in, k)?)?;
        }
        Command::Optimize { points } => {
            let sys: SystemConfig = read_json(config)?;
            let params = sys.params()?;
            let opt = minimize_l(&params)?;
            print_json(stdout, &json!({ "k_relaxed": opt.k_relaxed, "k_circ": opt.k_circ, "l_relaxed": opt.l_relaxed,
                "l_circ": opt.l_circ, "coeffs": params.coeffs() }))?;
            if let Some(path) = &cli.out {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(["k", "l_s"])?;
                for (k, l) in l_curve(&params, points)? {
                    w.write_record([k.to_string(), l.to_string()])?;
                }
                w.flush()?;
            }
        }
        Command::Simulate { trials } => {
            let cfg: ScenarioConfig = read_json(config)?;
            let rows = simulate(&cfg, trials, cli.seed)?;
            match &cli.out {
                Some(path) => write_simulation_csv(&rows, fs::File::create(path)?)?,
                None => write_simulation_csv(&rows, &mut *stdout)?,
            }
        }
        Command::Compare => {
            let sys: SystemConfig = read_json(config)?;
            let params = sys.params()?;
            let opt = minimize_l(&params)?;
            let failure = if sys.n >= 10 { Some(failure_comparison(&params, opt.k_circ)?) } else { None };
            print_json(stdout, &json!({
                "optimum": opt,
                "uncoded_expected_s": uncoded_expected(&params),
                "uncoded_expected_harmonic_s": uncoded_expected_harmonic(&params),
                "omitted_terms": optimal_comparison(&params, ComparisonMode::OmittedTerms)?,
                "full": optimal_comparison(&params, ComparisonMode::Full)?,
                "failure": failure,
            }))?;
        }
        Command::Fit { samples, scale } => {
            let text = fs::read_to_string(&samples)?;
            let xs = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|l| l.parse::<f64>().map_err(|e| RuntimeError::Config(format!("sample {l:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            print_json(stdout, &ShiftExp::fit(&xs, scale)?)?;
        }
        Command::Master { workers, k, uncoded, profile, timeout_ms, input, output, repeat } => {
            let path = config.ok_or_else(|| RuntimeError::Config("--config is required".into()))?;
            let model = load_model(path)?;
            let profile: Option<PhaseProfile> = profile.as_ref().map(|p| read_json(Some(p))).transpose()?;
            let x = model_input(&model, input.as_ref(), cli.seed)?;
            let mut cluster = Cluster::connect(&workers, Duration::from_secs(5))?;
            preload(&mut cluster, &model)?;
            let opts = RunOptions {
                mode: if uncoded { Mode::Uncoded } else { Mode::Coded { k } },
                profile,
                timeout: timeout_ms.map(Duration::from_millis),
            };
            let mut totals = Vec::new();
            let mut report = None;
            for _ in 0..repeat.max(1) {
                let r = run_inference(&mut cluster, &model, &x, &opts)?;
                totals.push(r.total_s);
                report = Some(r);
            }
            let report = report.expect("at least one run");
            if let Some(p) = &output {
                write_tensor(p, &report.output)?;
            }
            if let Some(p) = &cli.out {
                report.write_timing_csv(p)?;
            }
            print_json(stdout, &json!({ "total_s": report.total_s, "runs_s": totals, "layers": report.layers,
                "traffic": cluster.stats() }))?;
            cluster.shutdown();
        }
        Command::Worker { listen, delay_ms } => {
            let listener = TcpListener::bind(&listen)?;
            writeln!(stdout, "listening on {}", listener.local_addr()?)?;
            stdout.flush()?;
            run_worker(listener, WorkerOptions { delay: Duration::from_millis(delay_ms) })?;
        }
        Command::Oracle { input, output } => {
            let path = config.ok_or_else(|| RuntimeError::Config("--config is required".into()))?;
            let model = load_model(path)?;
            let x = model_input(&model, input.as_ref(), cli.seed)?;
            let y = model.forward_local(&x)?;
            if let Some(p) = &output {
                write_tensor(p, &y)?;
            }
            print_json(stdout, &json!({ "output_dims": y.dims(), "max_abs": y.max_abs() }))?;
        }
    }
    Ok(())
}

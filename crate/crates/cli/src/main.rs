//! `mica`: simulate, estimate, group, benchmark and compare separation
//! matrices from the command line.

mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mica_core::experiment::{run_experiment, ExperimentConfig, Method};
use mica_core::gmica::{algorithm1, estimate_gmica_known, estimate_r, group_from_graph, pair_stats, DEFAULT_C0};
use mica_core::groups::GroupStructure;
use mica_core::mica::{estimate_mica, estimate_mica_sequential, MicaConfig};
use mica_core::ortho::{d_distance_scaled, dtilde_distance_scaled, OrthoMatrix};
use mica_core::simgen::{generate, whiten, Design, DgpSpec, InnovationDist, DEFAULT_BURN_IN};
use mica_core::{MicaError, SeriesMatrix};
use serde::Serialize;

/// Error with the exit code it maps to: 1 for usage, configuration and
/// file problems, 2 for numerical failures.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        Self { code: 1, message }
    }
}

impl From<MicaError> for CliError {
    fn from(e: MicaError) -> Self {
        let code = match e {
            MicaError::Config(_) | MicaError::InvalidGroups(_) | MicaError::DimensionMismatch(_) => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "mica", version, about = "Mean independent component analysis for time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one draw of a simulation design as CSV.
    Simulate(SimulateArgs),
    /// Estimate the separation matrix of a series.
    Estimate(EstimateArgs),
    /// Pair statistics, edge count and groups of a component series.
    Group(GroupArgs),
    /// Run a Monte Carlo experiment from a config file.
    Bench(BenchArgs),
    /// Scaled D^2 (or block D~^2 with --groups) between two matrices.
    Distance(DistanceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    design: Design,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "normal")]
    dist: InnovationDist,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    /// Observed series CSV.
    #[arg(long)]
    out: PathBuf,
    /// Separation matrix in whitened coordinates (the distance target).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Latent sources CSV.
    #[arg(long)]
    sources: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Observed series CSV (header row, one column per coordinate).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "mica")]
    method: Method,
    /// Group sizes for gmica-known, e.g. 3,2,1.
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    h0: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_starts: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_C0)]
    c0: f64,
    #[arg(long, default_value_t = 10)]
    max_outer: usize,
    /// Use the series as given instead of whitening it first.
    #[arg(long)]
    no_whiten: bool,
    /// Output prefix: writes PREFIX_a.csv, PREFIX_x.csv and PREFIX_summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GroupArgs {
    /// Component series CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    h0: usize,
    #[arg(long, default_value_t = DEFAULT_C0)]
    c0: f64,
    /// Pair statistic matrix CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    h0: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Summary CSV; defaults to the config's output path, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-replication CSV.
    #[arg(long)]
    replications_out: Option<PathBuf>,
    /// Write NA instead of wall-clock times so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct DistanceArgs {
    a: PathBuf,
    b: PathBuf,
    /// Contiguous group sizes; switches to the block distance.
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct EstimateSummary {
    method: String,
    h0: usize,
    seed: u64,
    whitened: bool,
    objective: f64,
    group_sizes: Vec<usize>,
    assignment: Vec<usize>,
    r_hat: Option<usize>,
    start_index: usize,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct GroupSummary {
    r_hat: usize,
    group_sizes: Vec<usize>,
    assignment: Vec<usize>,
}

fn orthogonal(path: &Path) -> Result<OrthoMatrix, CliError> {
    let (_, m) = io::read_matrix(path)?;
    OrthoMatrix::new(m).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let spec = DgpSpec {
        burn_in: args.burn_in,
        ..DgpSpec::new(args.design, args.p, args.n, args.dist, args.seed)
    };
    let data = generate(&spec)?;
    io::write_matrix(&args.out, "y", data.y.matrix())?;
    if let Some(path) = &args.truth {
        io::write_matrix(path, "a", data.b_true.matrix())?;
    }
    if let Some(path) = &args.sources {
        io::write_matrix(path, "x", data.x_true.matrix())?;
    }
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<(), CliError> {
    let (_, m) = io::read_matrix(&args.input)?;
    let raw = SeriesMatrix::new(m)?;
    let y = if args.no_whiten { raw } else { whiten(&raw)?.0 };
    let defaults = MicaConfig::default();
    let cfg = MicaConfig {
        h0: args.h0,
        seed: args.seed,
        n_starts: args.n_starts.unwrap_or(defaults.n_starts),
        ..defaults
    };
    let (est, r_hat) = match args.method {
        Method::Mica => (estimate_mica(&y, &cfg)?, None),
        Method::MicaSequential => (estimate_mica_sequential(&y, &cfg)?, None),
        Method::GmicaKnown => {
            let sizes = args
                .groups
                .as_deref()
                .ok_or_else(|| CliError::usage("gmica-known needs --groups".into()))?;
            let groups = GroupStructure::contiguous(sizes)?;
            (estimate_gmica_known(&y, &groups, &cfg)?, None)
        }
        Method::GmicaAlg1 => {
            let res = algorithm1(&y, &cfg, args.c0, mica_core::gmica::DEFAULT_EPS_FROB, args.max_outer)?;
            let objective = res.objective;
            let r_hat = res.r_hat;
            let summary = EstimateSummary {
                method: args.method.to_string(),
                h0: args.h0,
                seed: args.seed,
                whitened: !args.no_whiten,
                objective,
                group_sizes: res.groups.sizes().to_vec(),
                assignment: res.groups.assignment().to_vec(),
                r_hat: Some(r_hat),
                start_index: 0,
                iterations: res.iterations,
                converged: res.converged,
            };
            return write_estimate(&args.out, res.a_hat.matrix(), res.components.matrix(), &summary);
        }
    };
    let summary = EstimateSummary {
        method: args.method.to_string(),
        h0: args.h0,
        seed: args.seed,
        whitened: !args.no_whiten,
        objective: est.objective,
        group_sizes: est.groups.sizes().to_vec(),
        assignment: est.groups.assignment().to_vec(),
        r_hat,
        start_index: est.start_index,
        iterations: est.iterations,
        converged: est.converged,
    };
    write_estimate(&args.out, est.a_hat.matrix(), est.components.matrix(), &summary)
}

fn write_estimate(
    prefix: &Path,
    a: &nalgebra::DMatrix<f64>,
    x: &nalgebra::DMatrix<f64>,
    summary: &EstimateSummary,
) -> Result<(), CliError> {
    io::write_matrix(&with_suffix(prefix, "_a.csv"), "a", a)?;
    io::write_matrix(&with_suffix(prefix, "_x.csv"), "x", x)?;
    let json = serde_json::to_string_pretty(summary).expect("summary serialises");
    io::write_text(&with_suffix(prefix, "_summary.json"), &(json + "\n"))
}

fn group(args: GroupArgs) -> Result<(), CliError> {
    let (_, m) = io::read_matrix(&args.input)?;
    let x = SeriesMatrix::new(m)?;
    let stats = pair_stats(&x, args.h0)?;
    let r_hat = estimate_r(&stats, args.c0)?;
    let groups = group_from_graph(&stats, r_hat)?;
    io::write_matrix(&args.out, "m", stats.matrix())?;
    let summary = GroupSummary {
        r_hat,
        group_sizes: groups.sizes().to_vec(),
        assignment: groups.assignment().to_vec(),
    };
    println!("{}", serde_json::to_string(&summary).expect("summary serialises"));
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.config.display())))?;
    cfg.h0 = args.h0.unwrap_or(cfg.h0);
    cfg.replications = args.reps.unwrap_or(cfg.replications);
    cfg.base_seed = args.seed.unwrap_or(cfg.base_seed);
    cfg.workers = args.workers.unwrap_or(cfg.workers);
    let report = run_experiment(&cfg)?;
    let timing = !args.no_timing;
    let mut summary = Vec::new();
    report
        .write_summary_csv(&mut summary, timing)
        .expect("writing to memory succeeds");
    let summary = String::from_utf8(summary).expect("ascii report");
    match args.out.or(cfg.output_path.as_ref().map(PathBuf::from)) {
        Some(path) => io::write_text(&path, &summary)?,
        None => print!("{summary}"),
    }
    if let Some(path) = &args.replications_out {
        let mut rows = Vec::new();
        report
            .write_replications_csv(&mut rows, timing)
            .expect("writing to memory succeeds");
        io::write_text(path, &String::from_utf8(rows).expect("ascii report"))?;
    }
    Ok(())
}

fn distance(args: DistanceArgs) -> Result<(), CliError> {
    let a = orthogonal(&args.a)?;
    let b = orthogonal(&args.b)?;
    if a.dim() != b.dim() {
        return Err(CliError::usage(format!("matrices are {0}x{0} and {1}x{1}", a.dim(), b.dim())));
    }
    let d = match &args.groups {
        None => d_distance_scaled(&a, &b)?,
        Some(sizes) => dtilde_distance_scaled(&a.blocks(sizes)?, &b.blocks(sizes)?)?,
    };
    println!("{d:?}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Group(a) => group(a),
        Command::Bench(a) => bench(a),
        Command::Distance(a) => distance(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

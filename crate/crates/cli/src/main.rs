use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gridrecon::experiment::{reconstruct, run_mmin_scan, Algorithm, DataType, ExperimentConfig, Prior};
use gridrecon::resolve_grid;
use gridrecon::scenario::{run_scenario, simulate_flows, FlowScenario, ScenarioOptions};
use gridrecon_core::dc::{add_noise, derive_seed, gen_type1, gen_type2};
use gridrecon_core::estimation::estimate_states_series;
use gridrecon_core::grid::{build_susceptance, save_grid, topology_from_susceptance};
use gridrecon_core::reconstruction::{verify_against_truth, DEFAULT_D_MAX};
use gridrecon_core::{FlowMeasurementSet, KnowledgeMask, MeasurementSet, ReconstructionReport, SuccessPolicy};

const EXIT_STALLED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "gridrecon",
    version,
    about = "Grid topology reconstruction from nodal measurements"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic measurements for a grid.
    Simulate(SimulateArgs),
    /// Reconstruct the susceptance matrix from a measurement file.
    Reconstruct(ReconstructArgs),
    /// Estimate phase angles from a flow measurement file.
    Estimate(EstimateArgs),
    /// Search for the smallest number of snapshots giving zero errors.
    MminScan(ScanArgs),
    /// Flow measurements plus unknown regions: estimate, then reconstruct.
    FlowScenario(ScenarioArgs),
}

#[derive(Args)]
struct PolicyArgs {
    /// Largest row support accepted from the 1-norm branch.
    #[arg(long, default_value_t = DEFAULT_D_MAX)]
    dmax: usize,
    /// Absolute zero threshold for sparsity counting and verification
    /// (default: 1e-3 times the largest magnitude).
    #[arg(long)]
    epsilon: Option<f64>,
}

impl PolicyArgs {
    fn policy(&self) -> Result<SuccessPolicy> {
        let mut p = SuccessPolicy::with_d_max(self.dmax)?;
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                bail!("--epsilon must be positive");
            }
            p.epsilon_zero = Some(e);
        }
        Ok(p)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Bundled grid name (ieee14, ieee30, ieee57, ieee118) or grid file.
    #[arg(long)]
    grid: Option<String>,
    /// Write flow measurements for this scenario file ("bundled" for the
    /// built-in 30-bus scenario) instead of nodal measurements.
    #[arg(long)]
    scenario: Option<String>,
    /// type1 (uniform angles) or type2 (Gaussian injections).
    #[arg(long, default_value = "type1")]
    data: DataType,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise_phi: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_p: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    measurements: PathBuf,
    /// Grid whose size the measurements must match.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value = "iterative")]
    algorithm: Algorithm,
    #[command(flatten)]
    policy: PolicyArgs,
    /// True grid; adds the entry error count to the report.
    #[arg(long)]
    truth: Option<String>,
    /// Scenario file whose known lines and unknown regions form the prior.
    #[arg(long)]
    prior: Option<String>,
    /// Report file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reconstructed grid file, written when the run is complete.
    #[arg(long)]
    out_grid: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Flow measurement file.
    #[arg(long)]
    measurements: PathBuf,
    /// Fully known grid.
    #[arg(long, conflicts_with = "prior")]
    grid: Option<String>,
    /// Scenario file describing a partially known grid.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long, default_value_t = 0)]
    ref_bus: usize,
    /// Also use injections at buses whose row of B is fully known.
    #[arg(long)]
    use_injections: bool,
    /// Output measurement file with the estimated angles.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    grid: String,
    #[arg(long, default_value = "type1")]
    data: DataType,
    #[arg(long, default_value = "iterative")]
    algorithm: Algorithm,
    /// Inclusive range `a:b` (default 1:N).
    #[arg(long)]
    m_range: Option<String>,
    /// Seeds, e.g. `0-9` or `1,4,7` (default 0-9).
    #[arg(long, default_value = "0-9")]
    seeds: String,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 0.0)]
    noise_phi: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_p: f64,
    #[arg(long)]
    prior: Option<String>,
    /// CSV `N,seed,M_min` with mean and median rows (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV of the error count at every M tried.
    #[arg(long)]
    errors_out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (default: the bundled 30-bus scenario).
    #[arg(long)]
    scenario: Option<String>,
    /// Flow measurement file; without it measurements are simulated on `--grid`.
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// True grid used for simulation and verification (default ieee30).
    #[arg(long)]
    grid: Option<String>,
    /// Verify against this grid when measurements come from a file.
    #[arg(long)]
    truth: Option<String>,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise_p: f64,
    #[arg(long, default_value_t = 0)]
    ref_bus: usize,
    #[arg(long)]
    use_injections: bool,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_scenario(spec: &str) -> Result<FlowScenario> {
    if spec == "bundled" {
        Ok(FlowScenario::bundled())
    } else {
        FlowScenario::load(spec)
    }
}

fn load_prior(spec: Option<&str>) -> Result<Option<Prior>> {
    spec.map(|s| load_scenario(s)?.prior()).transpose()
}

fn parse_m_range(s: &str) -> Result<RangeInclusive<usize>> {
    let (a, b) = s.split_once(':').unwrap_or((s, s));
    Ok(a.trim().parse()?..=b.trim().parse()?)
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.parse()?, b.parse()?);
                if a > b {
                    bail!("empty seed range {part}");
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().with_context(|| format!("seed {part:?}"))?),
        }
    }
    Ok(seeds)
}

fn outcome_code(report: &ReconstructionReport) -> u8 {
    if report.is_complete() {
        0
    } else {
        EXIT_STALLED
    }
}

fn summarize(report: &ReconstructionReport) {
    let state = if report.is_complete() { "complete" } else { "stalled" };
    let errors = report
        .error_count
        .map(|e| format!(", {e} entry errors"))
        .unwrap_or_default();
    eprintln!("{state} after {} sweep(s){errors}", report.n_iterations);
    for row in report.unresolved_rows() {
        eprintln!(
            "  row {} unresolved, unknown columns {:?}",
            row.row, row.unknown_columns
        );
    }
}

fn simulate(args: SimulateArgs) -> Result<u8> {
    if let Some(spec) = &args.scenario {
        let scenario = load_scenario(spec)?;
        let grid = resolve_grid(args.grid.as_deref().unwrap_or("ieee30"))?;
        let flows = simulate_flows(&scenario, &grid, args.m, args.seed, args.noise_p)?;
        write_output(args.out.as_deref(), &flows.to_text())?;
        return Ok(0);
    }
    let Some(grid) = &args.grid else {
        bail!("--grid or --scenario is required");
    };
    let grid = resolve_grid(grid)?;
    let ms = match args.data {
        DataType::Type1 => gen_type1(&build_susceptance(&grid), args.m, args.seed),
        DataType::Type2 => gen_type2(&grid, args.m, None, args.seed)?,
    };
    let ms = if args.noise_phi > 0.0 || args.noise_p > 0.0 {
        add_noise(&ms, args.noise_phi, args.noise_p, derive_seed(args.seed, u64::MAX))
    } else {
        ms
    };
    write_output(args.out.as_deref(), &ms.to_text())?;
    Ok(0)
}

fn reconstruct_cmd(args: ReconstructArgs) -> Result<u8> {
    let ms = MeasurementSet::load(&args.measurements)?;
    if let Some(g) = &args.grid {
        let g = resolve_grid(g)?;
        if g.n_buses() != ms.n() {
            bail!("measurements cover {} buses, grid has {}", ms.n(), g.n_buses());
        }
    }
    let prior = load_prior(args.prior.as_deref())?;
    let mut report = reconstruct(&ms, args.algorithm, &args.policy.policy()?, prior.as_ref())?;
    if let Some(t) = &args.truth {
        let truth = build_susceptance(&resolve_grid(t)?);
        let v = verify_against_truth(&report, &truth, args.policy.epsilon)?;
        report = report.with_verification(&v);
    }
    if let Some(path) = &args.out_grid {
        if report.is_complete() {
            save_grid(
                &topology_from_susceptance(&report.b_estimate, args.policy.epsilon)?,
                path,
            )?;
        } else {
            log::warn!("run stalled; not writing {}", path.display());
        }
    }
    write_output(args.out.as_deref(), &report.to_json_string())?;
    summarize(&report);
    Ok(outcome_code(&report))
}

fn estimate(args: EstimateArgs) -> Result<u8> {
    let set = FlowMeasurementSet::load(&args.measurements)?;
    let prior = match (&args.grid, &args.prior) {
        (Some(g), _) => {
            let g = resolve_grid(g)?;
            Prior {
                b: build_susceptance(&g),
                known: KnowledgeMask::all(g.n_buses()),
            }
        }
        (None, Some(p)) => load_scenario(p)?.prior()?,
        (None, None) => bail!("--grid or --prior is required"),
    };
    let series = estimate_states_series(&set, &prior.b, &prior.known, args.ref_bus, args.use_injections)?;
    if !series.excluded_injections.is_empty() {
        log::info!("injections not used at buses {:?}", series.excluded_injections);
    }
    let ms = MeasurementSet::new(series.phi, set.injections().clone())?;
    write_output(args.out.as_deref(), &ms.to_text())?;
    Ok(0)
}

fn mmin_scan(args: ScanArgs) -> Result<u8> {
    let grid = resolve_grid(&args.grid)?;
    let n = grid.n_buses();
    let mut config = ExperimentConfig::new(grid, args.data, args.algorithm);
    if let Some(r) = &args.m_range {
        config.m_range = parse_m_range(r).with_context(|| format!("--m-range {r:?}"))?;
    }
    config.seeds = parse_seeds(&args.seeds).with_context(|| format!("--seeds {:?}", args.seeds))?;
    config.policy = args.policy.policy()?;
    config.epsilon = args.policy.epsilon;
    config.noise_phi = args.noise_phi;
    config.noise_p = args.noise_p;
    config.prior = load_prior(args.prior.as_deref())?;
    let result = run_mmin_scan(&config)?;
    let table = result.table();
    write_output(args.out.as_deref(), &table.to_csv())?;
    if let Some(p) = &args.errors_out {
        fs::write(p, result.errors_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    let show = |v: Option<f64>| v.map_or_else(|| format!(">{}", result.m_max), |v| v.to_string());
    eprintln!("N={n}: mean M_min {}, median {}", show(table.mean), show(table.median));
    Ok(0)
}

fn flow_scenario(args: ScenarioArgs) -> Result<u8> {
    let scenario = load_scenario(args.scenario.as_deref().unwrap_or("bundled"))?;
    let (flows, truth) = match &args.measurements {
        Some(path) => (
            FlowMeasurementSet::load(path)?,
            args.truth.as_deref().map(resolve_grid).transpose()?,
        ),
        None => {
            let grid = resolve_grid(args.grid.as_deref().unwrap_or("ieee30"))?;
            let flows = simulate_flows(&scenario, &grid, args.m, args.seed, args.noise_p)?;
            (flows, Some(grid))
        }
    };
    let options = ScenarioOptions {
        ref_bus: args.ref_bus,
        use_injections: args.use_injections,
        epsilon: args.policy.epsilon,
    };
    let run = run_scenario(&scenario, &flows, &args.policy.policy()?, options, truth.as_ref())?;
    write_output(args.out.as_deref(), &run.report.to_json_string())?;
    summarize(&run.report);
    Ok(outcome_code(&run.report))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Estimate(a) => estimate(a),
        Command::MminScan(a) => mmin_scan(a),
        Command::FlowScenario(a) => flow_scenario(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use tdpaf::cohortsim::{parse_params, scenario_registry, simulate_cohort, SimError};
use tdpaf::eventstore::{fourfold_table, ingest, DataError, LandmarkGrid};
use tdpaf::glm::{GlmError, IpwOptions};
use tdpaf::paf::{
    bootstrap_band, estimate_paf_c, estimate_paf_o, paf_crude, paf_crude_adjusted, paf_lm_separate, paf_lm_supermodel,
    smooth_landmarks, write_results, BootstrapTarget, LandmarkOptions, PafCurve, PafError, ResultRow, SupermodelBasis,
};
use tdpaf::study::{run_study, write_summary, StudyOptions};
use tdpaf::{Cohort, Scenario};

#[derive(Parser)]
#[command(name = "tdpaf", version, about = "Attributable fractions for time-dependent exposures with competing risks")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort from a built-in scenario or a parameter file.
    Simulate(SimulateArgs),
    /// Estimate attributable fractions from a cohort file.
    Estimate(EstimateArgs),
    /// Run replicated simulate-and-estimate pipelines and summarize them.
    Study(StudyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, conflicts_with = "params", required_unless_present = "params")]
    scenario: Option<i64>,
    /// key=value file naming the five transition hazards.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimandArg {
    Crude,
    #[value(name = "paf_o")]
    PafO,
    #[value(name = "paf_c")]
    PafC,
    #[value(name = "paf_lm")]
    PafLm,
    All,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    estimand: EstimandArg,
    /// Landmark prediction window h.
    #[arg(long)]
    window: Option<f64>,
    /// Landmarks as A:B:STEP (inclusive).
    #[arg(long)]
    landmarks: Option<String>,
    /// Comma-separated baseline covariates to adjust for.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Bootstrap replicates for percentile bands (0 = none).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Report curves on A:B:STEP instead of at every jump.
    #[arg(long)]
    grid: Option<String>,
    /// Supermodel basis: `poly:D` (default poly:2) or `saturated`.
    #[arg(long, default_value = "poly:2")]
    basis: String,
    /// Minimum count in each exposure-by-outcome cell for a landmark to be kept.
    #[arg(long, default_value_t = 5)]
    min_cell: u64,
    /// Also emit locally smoothed separate-model estimates.
    #[arg(long)]
    smooth: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    scenario: i64,
    #[arg(long)]
    reps: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Landmark window (default: the scenario's).
    #[arg(long)]
    window: Option<f64>,
    /// Landmarks as A:B:STEP (default: step:2h:step with step = max(1, round(h/10))).
    #[arg(long)]
    landmarks: Option<String>,
    #[arg(long, default_value = "poly:2")]
    basis: String,
    #[arg(long)]
    out: PathBuf,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const ARGUMENT: u8 = 2;
const DATA: u8 = 3;
const NUMERICAL: u8 = 4;

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

fn argument(msg: impl std::fmt::Display) -> Failure {
    fail(ARGUMENT, anyhow::anyhow!("{msg}"))
}

fn data_code(e: &DataError) -> u8 {
    match e {
        DataError::Argument(_) => ARGUMENT,
        _ => DATA,
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        fail(data_code(&e), e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::UnknownScenario(_) | SimError::EmptyCohort => ARGUMENT,
            SimError::Data(d) => data_code(d),
            _ => DATA,
        };
        fail(code, e)
    }
}

impl From<PafError> for Failure {
    fn from(e: PafError) -> Self {
        let code = match &e {
            PafError::Argument(_) => ARGUMENT,
            PafError::Data(d) => data_code(d),
            PafError::NotConverged { .. } | PafError::BootstrapFailures { .. } => NUMERICAL,
            PafError::Glm(GlmError::InvalidDesign(_)) => ARGUMENT,
            PafError::Glm(GlmError::EmptyInterval { .. }) | PafError::Glm(GlmError::Undefined(_)) => DATA,
            PafError::Glm(_) => NUMERICAL,
            _ => DATA,
        };
        fail(code, e)
    }
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(|e| fail(DATA, e))
}

fn io(e: impl Into<anyhow::Error>) -> Failure {
    fail(DATA, e)
}

fn parse_basis(spec: &str) -> Result<SupermodelBasis, Failure> {
    if spec == "saturated" {
        return Ok(SupermodelBasis::Saturated);
    }
    spec.strip_prefix("poly:")
        .and_then(|d| d.parse().ok())
        .map(SupermodelBasis::Polynomial)
        .ok_or_else(|| argument(format!("basis must be poly:D or saturated, got '{spec}'")))
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    if args.n == 0 {
        return Err(argument("--n must be at least 1"));
    }
    let scenario: Scenario = match (&args.params, args.scenario) {
        (Some(path), _) => {
            let file = File::open(path)
                .with_context(|| format!("cannot open {}", path.display()))
                .map_err(io)?;
            parse_params(BufReader::new(file))?
        }
        (None, Some(id)) => scenario_registry(id)?,
        (None, None) => return Err(argument("one of --scenario or --params is required")),
    };
    let cohort = simulate_cohort(&scenario, args.n, args.seed)?;
    let mut out = create(&args.out)?;
    tdpaf::eventstore::write_cohort(&cohort, &mut out)?;
    out.flush().map_err(io)?;
    println!(
        "n={} infected={} deaths={} tau={}",
        cohort.len(),
        cohort.infected_count(),
        cohort.death_count(),
        cohort.tau()
    );
    Ok(())
}

fn curve_rows(curve: &PafCurve<f64>, grid: Option<&[f64]>, band: Option<&tdpaf::paf::Band<f64>>) -> Vec<ResultRow<f64>> {
    let times: Vec<f64> = grid.map_or_else(|| curve.times.clone(), <[f64]>::to_vec);
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| ResultRow {
            estimand: curve.estimand.as_str().to_string(),
            time: Some(t),
            estimate: curve.at(t),
            lower: band.and_then(|b| b.lower[i]),
            upper: band.and_then(|b| b.upper[i]),
            model: None,
        })
        .collect()
}

fn estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let wants = |e: EstimandArg| args.estimand == e || args.estimand == EstimandArg::All;
    let lm = wants(EstimandArg::PafLm);
    if lm != args.landmarks.is_some() {
        return Err(argument(if lm {
            "--landmarks is required for paf_lm"
        } else {
            "--landmarks only applies to paf_lm"
        }));
    }
    if lm && args.window.is_none() {
        return Err(argument("--window is required for paf_lm"));
    }
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(argument("--level must lie in (0, 1)"));
    }
    let basis = parse_basis(&args.basis)?;
    let cohort: Cohort = ingest(&args.input)?;
    cohort.check_covariates(&args.covariates)?;
    let grid: Option<Vec<f64>> = match &args.grid {
        Some(spec) => Some(LandmarkGrid::parse(spec, 1.0)?.landmarks().to_vec()),
        None => None,
    };
    let seed = args.seed;
    let band = |target: &BootstrapTarget<f64>, eval: &[f64]| -> Result<Option<tdpaf::paf::Band<f64>>, Failure> {
        if args.bootstrap == 0 {
            return Ok(None);
        }
        Ok(Some(bootstrap_band(target, &cohort, eval, args.bootstrap, args.level, seed)?))
    };

    let mut rows = Vec::new();
    if wants(EstimandArg::Crude) {
        let value = if args.covariates.is_empty() {
            paf_crude(&fourfold_table(&cohort)?)?
        } else {
            paf_crude_adjusted(&cohort, &args.covariates, &Default::default())?.paf
        };
        let b = band(
            &BootstrapTarget::Crude {
                covariates: args.covariates.clone(),
            },
            &[],
        )?;
        rows.push(ResultRow {
            estimand: "crude".into(),
            time: None,
            estimate: Some(value),
            lower: b.as_ref().and_then(|b| b.lower[0]),
            upper: b.as_ref().and_then(|b| b.upper[0]),
            model: None,
        });
    }
    if wants(EstimandArg::PafO) {
        if !args.covariates.is_empty() {
            log::warn!("paf_o is reported unadjusted; covariates are ignored for it");
        }
        let curve = estimate_paf_o(&cohort)?;
        let eval = grid.clone().unwrap_or_else(|| curve.times.clone());
        let b = band(&BootstrapTarget::PafO, &eval)?;
        rows.extend(curve_rows(&curve, grid.as_deref(), b.as_ref()));
    }
    if wants(EstimandArg::PafC) {
        let ipw = IpwOptions::default();
        let curve = estimate_paf_c(&cohort, &args.covariates, &ipw)?;
        let eval = grid.clone().unwrap_or_else(|| curve.times.clone());
        let b = band(
            &BootstrapTarget::PafC {
                covariates: args.covariates.clone(),
                ipw,
            },
            &eval,
        )?;
        rows.extend(curve_rows(&curve, grid.as_deref(), b.as_ref()));
    }
    if lm {
        let spec = args.landmarks.as_deref().unwrap_or_default();
        let lgrid = LandmarkGrid::parse(spec, args.window.unwrap_or_default())?;
        let options = LandmarkOptions {
            min_cell: args.min_cell,
            covariates: args.covariates.clone(),
            ..LandmarkOptions::default()
        };
        let separate = paf_lm_separate(&cohort, &lgrid, &options)?;
        for s in &separate.skipped {
            eprintln!("skipped landmark {}: {}", s.landmark, s.reason);
        }
        let sep_band = band(
            &BootstrapTarget::LmSeparate {
                grid: lgrid.clone(),
                options: options.clone(),
            },
            &[],
        )?;
        let at = |l: f64| lgrid.landmarks().iter().position(|&x| x == l).unwrap_or(0);
        for e in &separate.estimates {
            let i = at(e.landmark);
            rows.push(ResultRow {
                estimand: "paf_lm".into(),
                time: Some(e.landmark),
                estimate: Some(e.paf),
                lower: sep_band.as_ref().and_then(|b| b.lower[i]),
                upper: sep_band.as_ref().and_then(|b| b.upper[i]),
                model: Some("separate".into()),
            });
        }
        if args.smooth {
            let smoothed = smooth_landmarks(&separate.estimates, None);
            for (e, v) in separate.estimates.iter().zip(smoothed) {
                rows.push(ResultRow {
                    estimand: "paf_lm".into(),
                    time: Some(e.landmark),
                    estimate: Some(v),
                    lower: None,
                    upper: None,
                    model: Some("smoothed".into()),
                });
            }
        }
        let sup = paf_lm_supermodel(&cohort, &lgrid, basis, &options)?;
        let sup_band = band(
            &BootstrapTarget::LmSupermodel {
                grid: lgrid.clone(),
                basis,
                options,
            },
            &[],
        )?;
        for (&l, &v) in sup.landmarks.iter().zip(&sup.values) {
            let i = at(l);
            rows.push(ResultRow {
                estimand: "paf_lm".into(),
                time: Some(l),
                estimate: Some(v),
                lower: sup_band.as_ref().and_then(|b| b.lower[i]),
                upper: sup_band.as_ref().and_then(|b| b.upper[i]),
                model: Some("supermodel".into()),
            });
        }
    }
    let mut out = create(&args.out)?;
    write_results(&rows, &mut out).map_err(io)?;
    out.flush().map_err(io)?;
    Ok(())
}

fn study(args: &StudyArgs) -> Result<(), Failure> {
    if args.reps == 0 {
        return Err(argument("--reps must be at least 1"));
    }
    if args.n == 0 {
        return Err(argument("--n must be at least 1"));
    }
    let scenario: Scenario = scenario_registry(args.scenario)?;
    let window = args.window.unwrap_or(scenario.default_window);
    let landmarks = match &args.landmarks {
        Some(spec) => LandmarkGrid::parse(spec, window)?,
        None => tdpaf::study::default_landmarks(window)?,
    };
    let mut options = StudyOptions::new(args.reps, args.n, args.seed);
    options.landmarks = Some(landmarks);
    options.basis = parse_basis(&args.basis)?;
    let summary = run_study(&scenario, &options)?;
    let mut out = create(&args.out)?;
    write_summary(&summary, &mut out).map_err(io)?;
    out.flush().map_err(io)?;
    println!(
        "scenario={} reps={} n={} rows={}",
        summary.scenario,
        summary.reps,
        summary.n,
        summary.rows.len()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Study(a) => study(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(ARGUMENT);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(ARGUMENT);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

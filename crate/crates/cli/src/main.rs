use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use msm_hybrid::eval::{self, ExperimentConfig, Scale};
use msm_hybrid::inference::{bootstrap_ci, BootstrapConfig};
use msm_hybrid::io::{self, ParseOptions};
use msm_hybrid::markov_test::{grid_test, logrank_point, select_nonmarkov, GridTestConfig, Multiplier, SelectionConfig, TestMethod};
use msm_hybrid::sim::{FrailtyModelSpec, DEFAULT_HORIZON};
use msm_hybrid::{EstimatorKind, EstimatorSpec, EventHistory, MsmError, StateSpace, Transition};

#[derive(Parser)]
#[command(name = "msm-hybrid", version, about = "Hybrid landmark Aalen-Johansen estimation for multi-state data")]
struct Cli {
    /// Worker threads for resampling and simulation (does not change results).
    #[arg(long, global = true, env = "MSM_HYBRID_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort from a frailty model and write it in long format.
    Simulate(SimulateArgs),
    /// Estimate transition probabilities from a landmark.
    Estimate(EstimateArgs),
    /// Log-rank tests of the Markov property for every transition.
    TestMarkov(TestArgs),
    /// Estimate with percentile bootstrap bands.
    Bootstrap(BootstrapArgs),
    /// Run a simulation experiment and write its report.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Frailty model specification (JSON).
    #[arg(long, conflicts_with = "experiment")]
    spec: Option<PathBuf>,
    /// Use a built-in model: 1 (gamma frailty on 2->1) or 2 (log-normal).
    #[arg(long, value_parser = ["1", "2"])]
    experiment: Option<String>,
    /// Gamma frailty variance for the built-in experiment 1 model.
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    /// Cohort size for built-in models.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the state-space definition (JSON).
    #[arg(long)]
    states_out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Long-format CSV with columns id,time,from,to[,censor_time].
    #[arg(long)]
    data: PathBuf,
    /// State-space definition (JSON); defaults to illness-death with recovery.
    #[arg(long)]
    states: Option<PathBuf>,
    /// End of follow-up for subjects without a censoring time.
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: f64,
    /// Drop invalid subjects with a warning instead of failing.
    #[arg(long)]
    lenient: bool,
    /// File with one subject id per line; other subjects are ignored.
    #[arg(long)]
    subjects: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<(StateSpace, Vec<EventHistory>), MsmError> {
        let space = match &self.states {
            Some(p) => io::load_state_space(p)?,
            None => StateSpace::illness_death_recovery(),
        };
        let subjects = match &self.subjects {
            Some(p) => Some(read_subjects(p)?),
            None => None,
        };
        let opts = ParseOptions {
            horizon: self.horizon,
            strict: !self.lenient,
            subjects,
        };
        let parsed = io::parse_long_csv(&self.data, &space, &opts)?;
        if !parsed.rejected.is_empty() {
            log::warn!("dropped {} subject(s)", parsed.rejected.len());
        }
        if parsed.histories.is_empty() {
            return Err(MsmError::Input {
                path: self.data.display().to_string(),
                reason: "no valid subjects".into(),
            });
        }
        Ok((space, parsed.histories))
    }
}

fn read_subjects(path: &Path) -> Result<HashSet<String>, MsmError> {
    let text = std::fs::read_to_string(path).map_err(|e| MsmError::Input {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[derive(Args)]
struct TestOptions {
    /// Test used by `--A auto`.
    #[arg(long, default_value = "grid")]
    test: TestMethod,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Landmark grid for the grid test (comma-separated); defaults to `--s`.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value = "centered-poisson", value_parser = parse_multiplier)]
    multiplier: Multiplier,
    /// Compare p-values with alpha divided by the number of transitions.
    #[arg(long)]
    bonferroni: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_multiplier(s: &str) -> Result<Multiplier, String> {
    match s {
        "centered-poisson" | "poisson" => Ok(Multiplier::CenteredPoisson),
        "gaussian" => Ok(Multiplier::Gaussian),
        _ => Err(format!("unknown multiplier {s:?}")),
    }
}

#[derive(Args)]
struct EstimatorArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "aj")]
    method: EstimatorKind,
    /// Landmark time.
    #[arg(long, default_value_t = 0.0)]
    s: f64,
    /// Landmark state label(s), comma-separated.
    #[arg(long)]
    l: String,
    /// Non-Markov transitions for haj: "2->1,2->3", "" for none, or "auto".
    #[arg(long = "A")]
    a: Option<String>,
    #[command(flatten)]
    test: TestOptions,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    /// Wild-bootstrap replicates of the grid test used by `--A auto`.
    #[arg(long = "B", default_value_t = 500)]
    b: usize,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 1000)]
    b: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Wild-bootstrap replicates of the grid test used by `--A auto`.
    #[arg(long = "test-B", default_value_t = 500)]
    test_b: usize,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Landmark time of the point test.
    #[arg(long, required_unless_present = "grid")]
    s: Option<f64>,
    /// Landmark grid; selects the wild-bootstrap grid test.
    #[arg(long, value_delimiter = ',', conflicts_with = "s")]
    grid: Option<Vec<f64>>,
    /// First group: subjects in these states at the landmark.
    #[arg(long)]
    l: String,
    /// Second group; defaults to every other state.
    #[arg(long)]
    l2: Option<String>,
    /// Test only these transitions (default: all).
    #[arg(long)]
    transitions: Option<String>,
    #[arg(long = "B", default_value_t = 500)]
    b: usize,
    #[arg(long, default_value = "centered-poisson", value_parser = parse_multiplier)]
    multiplier: Multiplier,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_parser = ["1", "2"])]
    which: String,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// Overrides the seed of the preset or config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Experiment configuration (JSON) replacing the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the MRSE table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: u8,
}

fn fail(kind: &str, message: String, exit_code: u8) -> ExitCode {
    let report = ErrorReport {
        error: kind,
        message,
        exit_code,
    };
    eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
    ExitCode::from(exit_code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end().to_string(), 1),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.io_kind() == Some(std::io::ErrorKind::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) if e.is_input_error() => fail("input", e.to_string(), 1),
        Err(e) => fail("runtime", e.to_string(), 2),
    }
}

fn run(cli: Cli) -> Result<(), MsmError> {
    let workers = cli.workers;
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a, workers),
        Command::TestMarkov(a) => test_markov(a, workers),
        Command::Bootstrap(a) => bootstrap(a, workers),
        Command::Experiment(a) => experiment(a, workers),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, MsmError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn simulate(a: SimulateArgs) -> Result<(), MsmError> {
    let spec = match (&a.spec, a.experiment.as_deref()) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| MsmError::Input {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?;
            serde_json::from_str(&text).map_err(|e| MsmError::Input {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?
        }
        (None, Some("2")) => FrailtyModelSpec::experiment2(a.n),
        (None, _) => FrailtyModelSpec::experiment1(a.sigma2, a.n),
    };
    let model = spec.compile()?;
    let cohort = model.simulate_cohort(a.seed);
    io::write_long_csv(&cohort, model.space(), output(a.out.as_deref())?)?;
    if let Some(p) = &a.states_out {
        let file = io::StateSpaceFile::from_space(model.space());
        std::fs::write(p, serde_json::to_string_pretty(&file)? + "\n")?;
    }
    Ok(())
}

/// Resolves `--A` into the transitions handed to HAJ.
fn nonmarkov_set(
    est: &EstimatorArgs,
    space: &StateSpace,
    histories: &[EventHistory],
    l: &[usize],
    replicates: usize,
    workers: Option<usize>,
) -> Result<Vec<Transition>, MsmError> {
    match (est.method, est.a.as_deref()) {
        (EstimatorKind::Haj, None) => Err(MsmError::InvalidArgument(
            "--method haj needs --A (a transition list, \"\" or auto)".into(),
        )),
        (EstimatorKind::Haj, Some("auto")) => {
            let t = &est.test;
            let cfg = SelectionConfig {
                method: t.test,
                landmark_times: match (t.test, &t.grid) {
                    (TestMethod::Grid, Some(g)) => g.clone(),
                    _ => vec![est.s],
                },
                l1: l.to_vec(),
                l2: None,
                alpha: t.alpha,
                replicates,
                seed: t.seed,
                multiplier: t.multiplier,
                bonferroni: t.bonferroni,
                workers,
            };
            let selection = select_nonmarkov(histories, space, &cfg)?;
            let chosen: Vec<String> = selection.nonmarkov.iter().map(|&t| space.transition_label(t)).collect();
            log::info!("selected non-Markov transitions: [{}]", chosen.join(", "));
            Ok(selection.nonmarkov)
        }
        (EstimatorKind::Haj, Some(list)) => io::parse_transition_list(list, space),
        _ => Ok(Vec::new()),
    }
}

fn estimator_spec(
    est: &EstimatorArgs,
    space: &StateSpace,
    histories: &[EventHistory],
    test_replicates: usize,
    workers: Option<usize>,
) -> Result<EstimatorSpec, MsmError> {
    let l = io::parse_state_list(&est.l, space)?;
    let nonmarkov = nonmarkov_set(est, space, histories, &l, test_replicates, workers)?;
    Ok(EstimatorSpec {
        kind: est.method,
        landmark_time: est.s,
        landmark_states: l,
        nonmarkov,
    })
}

fn estimate(a: EstimateArgs, workers: Option<usize>) -> Result<(), MsmError> {
    let (space, histories) = a.est.data.load()?;
    let spec = estimator_spec(&a.est, &space, &histories, a.b, workers)?;
    let refs: Vec<&EventHistory> = histories.iter().collect();
    let result = spec.estimate(&refs, &space)?;
    io::write_curve_csv(&result.curve, &spec.landmark_states, &space, None, output(a.est.out.as_deref())?)
}

fn bootstrap(a: BootstrapArgs, workers: Option<usize>) -> Result<(), MsmError> {
    let (space, histories) = a.est.data.load()?;
    let spec = estimator_spec(&a.est, &space, &histories, a.test_b, workers)?;
    let cfg = BootstrapConfig {
        workers,
        ..BootstrapConfig::new(a.b, a.level, a.est.test.seed)
    };
    let band = bootstrap_ci(&histories, &space, &spec, &cfg)?;
    if band.dropped > 0 {
        log::warn!("{} bootstrap replicate(s) had an empty landmark sample", band.dropped);
    }
    io::write_curve_csv(
        &band.estimate,
        &spec.landmark_states,
        &space,
        Some(&band),
        output(a.est.out.as_deref())?,
    )
}

fn test_markov(a: TestArgs, workers: Option<usize>) -> Result<(), MsmError> {
    let (space, histories) = a.data.load()?;
    let l1 = io::parse_state_list(&a.l, &space)?;
    let l2 = a.l2.as_deref().map(|s| io::parse_state_list(s, &space)).transpose()?;
    let transitions = match &a.transitions {
        Some(list) => io::parse_transition_list(list, &space)?,
        None => space.transitions().to_vec(),
    };
    let mut reports = Vec::with_capacity(transitions.len());
    for tr in transitions {
        let e = space.transition_index(tr.from, tr.to).expect("validated transition") as u64;
        let report = match (&a.grid, a.s) {
            (Some(grid), _) => {
                let cfg = GridTestConfig {
                    replicates: a.b,
                    seed: msm_hybrid::rng::derive_seed(a.seed, e),
                    multiplier: a.multiplier,
                    workers,
                };
                grid_test(&histories, &space, tr, &l1, l2.as_deref(), grid, &cfg)?
            }
            (None, Some(s)) => logrank_point(&histories, &space, tr, s, &l1, l2.as_deref())?,
            (None, None) => unreachable!("clap requires --s or --grid"),
        };
        reports.push(report);
    }
    io::write_test_report_csv(&reports, None, &space, output(a.out.as_deref())?)
}

fn experiment(a: ExperimentArgs, workers: Option<usize>) -> Result<(), MsmError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| MsmError::Input {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?;
            serde_json::from_str::<ExperimentConfig>(&text).map_err(|e| MsmError::Input {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?
        }
        None if a.which == "1" => ExperimentConfig::experiment1(a.scale),
        None => ExperimentConfig::experiment2(a.scale),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.workers = workers;
    let report = if a.which == "1" {
        eval::run_experiment1(&cfg)?
    } else {
        eval::run_experiment2(&cfg)?
    };
    let mut out = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    if let Some(p) = &a.csv {
        std::fs::write(p, report.to_csv())?;
    }
    Ok(())
}

//! Performance measures and the simulation experiments comparing the AJ,
//! LMAJ and HAJ estimators against an averaged-landmark oracle.

use serde::{Deserialize, Serialize};

use crate::error::{MsmError, Result};
use crate::estimators::{aalen_johansen, haj, lmaj, EstimatorKind, TransitionProbabilityResult};
use crate::markov_test::{select_nonmarkov, Multiplier, SelectionConfig, TestMethod};
use crate::rng::{derive_seed, parallel_map};
use crate::sim::{default_grid_points, oracle_truth_grid, FrailtyModelSpec, LogMeanRule, OracleConfig, OracleCurve};
use crate::space::Transition;
use crate::step::{union_times, StepFunction};

/// `∫_s^τ (f - g)² dt` as a right-continuous Riemann sum over the union of
/// both jump sets in `(s, τ]`.
pub fn mrse(estimate: &StepFunction<f64>, truth: &StepFunction<f64>, s: f64, tau: f64) -> Result<f64> {
    if !(tau > s) {
        return Err(MsmError::InvalidArgument(format!("need tau > s, got s = {s}, tau = {tau}")));
    }
    let inside = |times: &[f64]| -> Vec<f64> { times.iter().copied().filter(|&t| t > s && t <= tau).collect() };
    let a = inside(&estimate.times);
    let b = inside(&truth.times);
    let mut points = vec![s];
    points.extend(union_times([&a[..], &b[..]]));
    let mut total = 0.0;
    for (i, &u) in points.iter().enumerate() {
        let next = points.get(i + 1).copied().unwrap_or(tau);
        let d = estimate.eval(u) - truth.eval(u);
        total += d * d * (next - u);
    }
    Ok(total)
}

/// Pointwise bias and sample variance (divisor `M - 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    pub grid: Vec<f64>,
    pub bias: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Bias and variance of curves already evaluated on a common grid.
pub fn bias_variance_on_grid(estimates: &[Vec<f64>], truth: &[f64], grid: &[f64]) -> Result<BiasVariance> {
    if estimates.len() < 2 {
        return Err(MsmError::InvalidArgument("bias/variance needs at least two curves".into()));
    }
    if estimates.iter().any(|e| e.len() != grid.len()) || truth.len() != grid.len() {
        return Err(MsmError::InvalidArgument("curves must share the grid".into()));
    }
    let m = estimates.len() as f64;
    let mut bias = Vec::with_capacity(grid.len());
    let mut variance = Vec::with_capacity(grid.len());
    for (g, &t) in truth.iter().enumerate() {
        let mean = estimates.iter().map(|e| e[g]).sum::<f64>() / m;
        let ss: f64 = estimates.iter().map(|e| (e[g] - mean).powi(2)).sum();
        bias.push(mean - t);
        variance.push(ss / (m - 1.0));
    }
    Ok(BiasVariance {
        grid: grid.to_vec(),
        bias,
        variance,
    })
}

/// Bias and variance of step-function estimates against `truth` on `grid`.
pub fn bias_variance(estimates: &[StepFunction<f64>], truth: &StepFunction<f64>, grid: &[f64]) -> Result<BiasVariance> {
    let values: Vec<Vec<f64>> = estimates
        .iter()
        .map(|e| grid.iter().map(|&t| *e.eval(t)).collect())
        .collect();
    let truth: Vec<f64> = grid.iter().map(|&t| *truth.eval(t)).collect();
    bias_variance_on_grid(&values, &truth, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = MsmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(MsmError::InvalidArgument(format!("unknown scale {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    /// Gamma frailty of the given variance on 2 -> 1.
    GammaFrailty { sigma2: f64 },
    /// Correlated log-normal frailties on all transitions.
    LogNormalFrailty {
        #[serde(default)]
        mean_rule: LogMeanRule,
    },
}

impl Scenario {
    pub fn label(&self) -> String {
        match self {
            Scenario::GammaFrailty { sigma2 } => format!("sigma2={sigma2}"),
            Scenario::LogNormalFrailty { .. } => "lognormal".to_string(),
        }
    }

    pub fn model(&self, cohort_size: usize) -> FrailtyModelSpec {
        match self {
            Scenario::GammaFrailty { sigma2 } => FrailtyModelSpec::experiment1(*sigma2, cohort_size),
            Scenario::LogNormalFrailty { mean_rule } => {
                let mut spec = FrailtyModelSpec::experiment2(cohort_size);
                if let crate::sim::FrailtyLaw::LogNormal { mean_rule: rule, .. } = &mut spec.frailty {
                    *rule = *mean_rule;
                }
                spec
            }
        }
    }
}

pub const EXPERIMENT1_LANDMARKS: [f64; 10] = [6.0, 9.0, 12.0, 14.0, 17.0, 20.0, 22.0, 25.0, 28.0, 30.0];
pub const EXPERIMENT2_LANDMARKS: [f64; 15] = [
    1.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 26.0, 28.0, 30.0,
];
pub const EXPERIMENT1_SIGMA2: [f64; 4] = [0.0, 0.4, 1.2, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    /// Monte-Carlo datasets per scenario.
    pub datasets: usize,
    pub cohort_size: usize,
    pub landmarks: Vec<f64>,
    /// Landmark state sets (zero-based); each is also the `l1` of the tests.
    pub landmark_states: Vec<Vec<usize>>,
    pub alpha: f64,
    /// Wild-bootstrap replicates of the grid test used to build HAJ.
    pub test_replicates: usize,
    #[serde(default)]
    pub multiplier: Multiplier,
    pub oracle_replicates: usize,
    pub oracle_cohort_size: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Landmark time whose pointwise bias/variance curves are reported.
    #[serde(default)]
    pub bias_variance_landmark: Option<f64>,
    pub seed: u64,
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// Gamma frailty on 2 -> 1 with the listed variances.
    pub fn experiment1(scale: Scale) -> Self {
        let (datasets, cohort_size, b, oracle_r) = match scale {
            Scale::Desk => (200, 500, 200, 200),
            Scale::Paper => (1000, 1000, 500, 1000),
        };
        Self {
            scenarios: EXPERIMENT1_SIGMA2
                .iter()
                .map(|&sigma2| Scenario::GammaFrailty { sigma2 })
                .collect(),
            datasets,
            cohort_size,
            landmarks: EXPERIMENT1_LANDMARKS.to_vec(),
            landmark_states: vec![vec![1]],
            alpha: 0.05,
            test_replicates: b,
            multiplier: Multiplier::CenteredPoisson,
            oracle_replicates: oracle_r,
            oracle_cohort_size: 1000,
            grid_points: default_grid_points(),
            bias_variance_landmark: Some(17.0),
            seed: 2024,
            workers: None,
        }
    }

    /// Correlated log-normal frailties.
    pub fn experiment2(scale: Scale) -> Self {
        Self {
            scenarios: vec![Scenario::LogNormalFrailty {
                mean_rule: LogMeanRule::UnitMean,
            }],
            landmarks: EXPERIMENT2_LANDMARKS.to_vec(),
            bias_variance_landmark: None,
            ..Self::experiment1(scale)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MsmError::InvalidArgument(m.to_string()));
        if self.scenarios.is_empty() {
            return bad("no scenarios");
        }
        if self.datasets == 0 || self.cohort_size == 0 || self.oracle_replicates == 0 || self.oracle_cohort_size == 0 {
            return bad("dataset counts and sizes must be positive");
        }
        if self.landmarks.is_empty() || self.landmarks.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("landmarks must be a non-empty increasing list");
        }
        if self.landmark_states.is_empty() || self.landmark_states.iter().any(|l| l.is_empty()) {
            return bad("landmark state sets must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.test_replicates == 0 {
            return bad("test replicates must be positive");
        }
        if self.grid_points < 2 {
            return bad("oracle grid needs at least two points");
        }
        Ok(())
    }
}

/// Mean MRSE over datasets with its Monte-Carlo standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrseSummary {
    pub estimator: EstimatorKind,
    pub landmark_time: f64,
    pub landmark_states: Vec<usize>,
    pub target: usize,
    pub mean: f64,
    pub se: f64,
    pub datasets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFrequency {
    pub landmark_states: Vec<usize>,
    pub transition: Transition,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceCurve {
    pub estimator: EstimatorKind,
    pub landmark_time: f64,
    pub landmark_states: Vec<usize>,
    pub target: usize,
    pub truth: Vec<f64>,
    #[serde(flatten)]
    pub curves: BiasVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub mrse: Vec<MrseSummary>,
    pub selection: Vec<SelectionFrequency>,
    pub bias_variance: Vec<BiasVarianceCurve>,
    /// Dataset-landmark pairs where LMAJ/HAJ could not be computed.
    pub empty_landmarks: usize,
    pub oracle_resimulated: usize,
}

impl ScenarioReport {
    /// Mean MRSE for one estimator and target, averaged over landmarks.
    pub fn mean_mrse(&self, estimator: EstimatorKind, landmark_states: &[usize], target: usize) -> f64 {
        let rows: Vec<&MrseSummary> = self
            .mrse
            .iter()
            .filter(|r| r.estimator == estimator && r.landmark_states == landmark_states && r.target == target)
            .collect();
        rows.iter().map(|r| r.mean).sum::<f64>() / rows.len() as f64
    }

    pub fn selection_frequency(&self, landmark_states: &[usize], transition: Transition) -> f64 {
        self.selection
            .iter()
            .find(|s| s.landmark_states == landmark_states && s.transition == transition)
            .map_or(0.0, |s| s.frequency)
    }

    pub fn bias_variance_for(&self, estimator: EstimatorKind, target: usize) -> Option<&BiasVarianceCurve> {
        self.bias_variance
            .iter()
            .find(|c| c.estimator == estimator && c.target == target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub scenarios: Vec<ScenarioReport>,
}

impl ExperimentReport {
    /// One row per scenario × estimator × landmark × target × metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,estimator,landmark_time,landmark_states,target,metric,value\n");
        for sc in &self.scenarios {
            for r in &sc.mrse {
                let states: Vec<String> = r.landmark_states.iter().map(|j| (j + 1).to_string()).collect();
                for (metric, value) in [("mrse_mean", r.mean), ("mrse_se", r.se), ("datasets", r.datasets as f64)] {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        sc.scenario.label(),
                        r.estimator.name(),
                        r.landmark_time,
                        states.join(" "),
                        r.target + 1,
                        metric,
                        value
                    ));
                }
            }
        }
        out
    }
}

struct DatasetOutcome {
    // [l][transition]
    selected: Vec<Vec<bool>>,
    // [l][landmark][estimator][target]
    mrse: Vec<Vec<[Option<Vec<f64>>; 3]>>,
    // [l][estimator] -> [target][grid]
    bias_curves: Vec<[Option<Vec<Vec<f64>>>; 3]>,
    empty: usize,
}

fn estimator_index(kind: EstimatorKind) -> usize {
    match kind {
        EstimatorKind::Aj => 0,
        EstimatorKind::Lmaj => 1,
        EstimatorKind::Haj => 2,
    }
}

/// Runs every scenario of `cfg`: simulate datasets, select the non-Markov
/// set with the grid test, estimate from each landmark and score against
/// the oracle.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut scenarios = Vec::with_capacity(cfg.scenarios.len());
    for (si, scenario) in cfg.scenarios.iter().enumerate() {
        scenarios.push(run_scenario(cfg, scenario, derive_seed(cfg.seed, si as u64))?);
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        scenarios,
    })
}

/// Experiment with gamma frailty on 2 -> 1.
pub fn run_experiment1(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.scenarios.iter().any(|s| !matches!(s, Scenario::GammaFrailty { .. })) {
        return Err(MsmError::InvalidArgument("experiment 1 uses gamma frailty scenarios".into()));
    }
    run_experiment(cfg)
}

/// Experiment with correlated log-normal frailties.
pub fn run_experiment2(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.scenarios.iter().any(|s| !matches!(s, Scenario::LogNormalFrailty { .. })) {
        return Err(MsmError::InvalidArgument("experiment 2 uses the log-normal scenario".into()));
    }
    run_experiment(cfg)
}

fn run_scenario(cfg: &ExperimentConfig, scenario: &Scenario, seed: u64) -> Result<ScenarioReport> {
    let spec = scenario.model(cfg.cohort_size);
    let model = spec.compile()?;
    let space = model.space().clone();
    let k = space.n_states();
    let tau = spec.horizon;

    let oracle_cfg = OracleConfig {
        replicates: cfg.oracle_replicates,
        cohort_size: cfg.oracle_cohort_size,
        seed: derive_seed(seed, 0x0AC1E),
        grid_points: cfg.grid_points,
        workers: cfg.workers,
    };
    let oracles: Vec<Vec<OracleCurve>> = cfg
        .landmark_states
        .iter()
        .map(|l| oracle_truth_grid(&spec, &cfg.landmarks, l, &oracle_cfg))
        .collect::<Result<_>>()?;
    let oracle_steps: Vec<Vec<Vec<StepFunction<f64>>>> = oracles
        .iter()
        .map(|per_l| per_l.iter().map(|o| (0..k).map(|j| o.component(j)).collect()).collect())
        .collect();
    let bv_index = cfg
        .bias_variance_landmark
        .and_then(|s| cfg.landmarks.iter().position(|&x| x == s));

    let outcomes = parallel_map(cfg.workers, cfg.datasets, |d| -> Result<DatasetOutcome> {
        let data_seed = derive_seed(seed, 1 + d as u64);
        let cohort = model.simulate_cohort(data_seed);
        let mut out = DatasetOutcome {
            selected: Vec::new(),
            mrse: Vec::new(),
            bias_curves: Vec::new(),
            empty: 0,
        };
        for (li, l) in cfg.landmark_states.iter().enumerate() {
            let selection = select_nonmarkov(
                &cohort,
                &space,
                &SelectionConfig {
                    method: TestMethod::Grid,
                    landmark_times: cfg.landmarks.clone(),
                    l1: l.clone(),
                    l2: None,
                    alpha: cfg.alpha,
                    replicates: cfg.test_replicates,
                    seed: derive_seed(data_seed, 0x7E57 + li as u64),
                    multiplier: cfg.multiplier,
                    bonferroni: false,
                    workers: Some(1),
                },
            )?;
            out.selected.push(
                space
                    .transitions()
                    .iter()
                    .map(|t| selection.nonmarkov.contains(t))
                    .collect(),
            );
            let mut per_landmark = Vec::with_capacity(cfg.landmarks.len());
            let mut bias_curves: [Option<Vec<Vec<f64>>>; 3] = [None, None, None];
            for (si, &s) in cfg.landmarks.iter().enumerate() {
                let fits: [Option<TransitionProbabilityResult>; 3] = [
                    Some(aalen_johansen(&cohort, &space, s, l)?),
                    skip_empty(lmaj(&cohort, &space, s, l))?,
                    skip_empty(haj(&cohort, &space, s, l, &selection.nonmarkov))?,
                ];
                if fits[1].is_none() {
                    out.empty += 1;
                }
                let mut scores: [Option<Vec<f64>>; 3] = [None, None, None];
                for (ei, fit) in fits.iter().enumerate() {
                    let Some(fit) = fit else { continue };
                    let mut per_target = Vec::with_capacity(k);
                    for (target, truth) in oracle_steps[li][si].iter().enumerate() {
                        per_target.push(mrse(&fit.curve.component(target), truth, s, tau)?);
                    }
                    scores[ei] = Some(per_target);
                    if bv_index == Some(si) {
                        let grid = &oracles[li][si].grid;
                        bias_curves[ei] = Some(
                            (0..k)
                                .map(|target| grid.iter().map(|&t| fit.curve.eval(t)[target]).collect())
                                .collect(),
                        );
                    }
                }
                per_landmark.push(scores);
            }
            out.mrse.push(per_landmark);
            out.bias_curves.push(bias_curves);
        }
        Ok(out)
    });
    let outcomes: Vec<DatasetOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let mut mrse_rows = Vec::new();
    let mut selection = Vec::new();
    let mut bias_variance = Vec::new();
    for (li, l) in cfg.landmark_states.iter().enumerate() {
        for (e, &tr) in space.transitions().iter().enumerate() {
            let hits = outcomes.iter().filter(|o| o.selected[li][e]).count();
            selection.push(SelectionFrequency {
                landmark_states: l.clone(),
                transition: tr,
                frequency: hits as f64 / outcomes.len() as f64,
            });
        }
        for (si, &s) in cfg.landmarks.iter().enumerate() {
            for kind in EstimatorKind::ALL {
                let ei = estimator_index(kind);
                for target in 0..k {
                    let values: Vec<f64> = outcomes
                        .iter()
                        .filter_map(|o| o.mrse[li][si][ei].as_ref().map(|v| v[target]))
                        .collect();
                    let (mean, se) = mean_and_se(&values);
                    mrse_rows.push(MrseSummary {
                        estimator: kind,
                        landmark_time: s,
                        landmark_states: l.clone(),
                        target,
                        mean,
                        se,
                        datasets: values.len(),
                    });
                }
            }
        }
        if let Some(si) = bv_index {
            let oracle = &oracles[li][si];
            for kind in EstimatorKind::ALL {
                let ei = estimator_index(kind);
                for target in 0..k {
                    let curves: Vec<Vec<f64>> = outcomes
                        .iter()
                        .filter_map(|o| o.bias_curves[li][ei].as_ref().map(|c| c[target].clone()))
                        .collect();
                    if curves.len() < 2 {
                        continue;
                    }
                    let truth: Vec<f64> = oracle.values.iter().map(|v| v[target]).collect();
                    bias_variance.push(BiasVarianceCurve {
                        estimator: kind,
                        landmark_time: cfg.landmarks[si],
                        landmark_states: l.clone(),
                        target,
                        curves: bias_variance_on_grid(&curves, &truth, &oracle.grid)?,
                        truth,
                    });
                }
            }
        }
    }

    Ok(ScenarioReport {
        scenario: scenario.clone(),
        mrse: mrse_rows,
        selection,
        bias_variance,
        empty_landmarks: outcomes.iter().map(|o| o.empty).sum(),
        oracle_resimulated: oracles.iter().flatten().map(|o| o.resimulated).sum(),
    })
}

fn skip_empty(r: Result<TransitionProbabilityResult>) -> Result<Option<TransitionProbabilityResult>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MsmError::EmptyLandmark { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

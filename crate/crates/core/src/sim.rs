//! Frailty-driven generator for (partially) non-Markov multi-state data and
//! the Monte-Carlo "truth" built from averaged landmark estimates.
//!
//! Subject `i` moves with constant intensities `λ_jk = V_jk α_jk`, where the
//! frailties `V` are drawn once per subject.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MsmError, Result};
use crate::estimators::lmaj;
use crate::history::{EventHistory, Jump};
use crate::rng::{derive_seed, parallel_map, stream_rng};
use crate::space::{StateSpace, Transition};
use crate::step::StepFunction;

/// Base rates of the illness-death model with recovery, in transition
/// order `(1,2), (1,3), (2,1), (2,3)`.
pub const ILLNESS_DEATH_RATES: [f64; 4] = [0.12, 0.03, 0.15, 0.1];

/// Frailty covariance of the correlated log-normal experiment.
pub const LOGNORMAL_COVARIANCE: [[f64; 4]; 4] = [
    [0.80, 0.57, -0.35, 0.37],
    [0.57, 0.42, -0.12, 0.19],
    [-0.35, -0.12, 0.96, -0.63],
    [0.37, 0.19, -0.63, 0.45],
];

pub const DEFAULT_HORIZON: f64 = 1000.0;

/// How `E log V_j` is chosen for log-normal frailties.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogMeanRule {
    /// `E W_j = -Var(W_j)/2`, which gives `E V_j = 1` exactly.
    #[default]
    UnitMean,
    /// `E W_j = -Σ_jj/2` with Σ the covariance of `V`.
    HalfVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum FrailtyLaw {
    None,
    /// Gamma frailty with mean 1 and the given variance on one transition.
    Gamma { transition: Transition, variance: f64 },
    /// Log-normal frailties on all transitions: `V` with mean 1 and
    /// covariance `covariance` (in transition order), via `W = log V`
    /// normal with `cov(W_j, W_k) = log(1 + Σ_jk)`.
    LogNormal {
        covariance: Vec<Vec<f64>>,
        #[serde(default)]
        mean_rule: LogMeanRule,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrailtyModelSpec {
    pub n_states: usize,
    pub transitions: Vec<Transition>,
    /// One base rate per transition, in the same order.
    pub base_rates: Vec<f64>,
    pub frailty: FrailtyLaw,
    pub horizon: f64,
    pub initial_state: usize,
    pub cohort_size: usize,
}

impl FrailtyModelSpec {
    /// Gamma frailty with variance `sigma2` on 2 -> 1.
    pub fn experiment1(sigma2: f64, cohort_size: usize) -> Self {
        Self {
            n_states: 3,
            transitions: StateSpace::illness_death_recovery().transitions().to_vec(),
            base_rates: ILLNESS_DEATH_RATES.to_vec(),
            frailty: FrailtyLaw::Gamma {
                transition: Transition::new(1, 0),
                variance: sigma2,
            },
            horizon: DEFAULT_HORIZON,
            initial_state: 0,
            cohort_size,
        }
    }

    /// Correlated log-normal frailties on all four transitions.
    pub fn experiment2(cohort_size: usize) -> Self {
        Self {
            n_states: 3,
            transitions: StateSpace::illness_death_recovery().transitions().to_vec(),
            base_rates: ILLNESS_DEATH_RATES.to_vec(),
            frailty: FrailtyLaw::LogNormal {
                covariance: LOGNORMAL_COVARIANCE.iter().map(|r| r.to_vec()).collect(),
                mean_rule: LogMeanRule::UnitMean,
            },
            horizon: DEFAULT_HORIZON,
            initial_state: 0,
            cohort_size,
        }
    }

    pub fn space(&self) -> Result<StateSpace> {
        StateSpace::new(self.n_states, self.transitions.clone())
    }

    /// Validates the spec and prepares the sampler.
    pub fn compile(&self) -> Result<FrailtyModel> {
        let space = self.space().map_err(|e| MsmError::InvalidModel(e.to_string()))?;
        let ne = space.transitions().len();
        if self.base_rates.len() != ne {
            return Err(MsmError::InvalidModel(format!(
                "{} base rates for {ne} transitions",
                self.base_rates.len()
            )));
        }
        if let Some(r) = self.base_rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(MsmError::InvalidModel(format!("base rate {r} must be positive")));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(MsmError::InvalidModel(format!("horizon {} must be positive", self.horizon)));
        }
        if self.initial_state >= self.n_states {
            return Err(MsmError::InvalidModel("initial state out of range".into()));
        }
        let sampler = match &self.frailty {
            FrailtyLaw::None => Sampler::None,
            FrailtyLaw::Gamma { transition, variance } => {
                let idx = space
                    .transition_index(transition.from, transition.to)
                    .ok_or_else(|| MsmError::InvalidModel(format!("frailty on unknown transition {transition}")))?;
                if !(variance.is_finite() && *variance >= 0.0) {
                    return Err(MsmError::InvalidModel(format!("frailty variance {variance} must be >= 0")));
                }
                if *variance == 0.0 {
                    Sampler::None
                } else {
                    let gamma = Gamma::new(1.0 / variance, *variance)
                        .map_err(|e| MsmError::InvalidModel(e.to_string()))?;
                    Sampler::Gamma { index: idx, gamma }
                }
            }
            FrailtyLaw::LogNormal { covariance, mean_rule } => {
                let (mean, factor, log_cov) = lognormal_parameters(covariance, ne, *mean_rule)?;
                Sampler::LogNormal { mean, factor, log_cov }
            }
        };
        Ok(FrailtyModel {
            spec: self.clone(),
            space,
            sampler,
        })
    }
}

/// Mean vector and a square-root factor of the covariance of `W = log V`.
/// When `log(1 + Σ)` is not positive semi-definite, the factor is fitted so
/// that `exp(C) - 1` is as close to `Σ` as possible in Frobenius norm.
fn lognormal_parameters(
    sigma: &[Vec<f64>],
    ne: usize,
    rule: LogMeanRule,
) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if sigma.len() != ne || sigma.iter().any(|r| r.len() != ne) {
        return Err(MsmError::InvalidModel(format!("frailty covariance must be {ne}x{ne}")));
    }
    let target = DMatrix::from_fn(ne, ne, |j, k| sigma[j][k]);
    let mut log_cov = DMatrix::<f64>::zeros(ne, ne);
    for j in 0..ne {
        for k in 0..ne {
            let (a, b) = (sigma[j][k], sigma[k][j]);
            if (a - b).abs() > 1e-12 {
                return Err(MsmError::InvalidModel("frailty covariance is not symmetric".into()));
            }
            if !(a > -1.0) {
                return Err(MsmError::InvalidModel(format!("log(1 + {a}) is undefined")));
            }
            log_cov[(j, k)] = a.ln_1p();
        }
    }
    let eig = SymmetricEigen::new(log_cov.clone());
    let min_eig = eig.eigenvalues.min();
    let sqrt_vals = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    let mut factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
    if min_eig < 0.0 {
        factor = fit_log_factor(&target, factor);
        let achieved = (&factor * factor.transpose()).map(f64::exp_m1);
        log::info!(
            "log(1 + Σ) has eigenvalue {min_eig:.4}; fitted frailty covariance is off by {:.4} (Frobenius)",
            (achieved - &target).norm()
        );
    }
    let projected = &factor * factor.transpose();
    let mean = (0..ne)
        .map(|j| match rule {
            LogMeanRule::UnitMean => -projected[(j, j)] / 2.0,
            LogMeanRule::HalfVariance => -sigma[j][j] / 2.0,
        })
        .collect();
    Ok((mean, factor, projected))
}

/// Minimizes `‖exp(F Fᵀ) - 1 - Σ‖²_F` over `F` by gradient descent with
/// backtracking, starting from `factor`.
fn fit_log_factor(target: &DMatrix<f64>, mut factor: DMatrix<f64>) -> DMatrix<f64> {
    let objective = |f: &DMatrix<f64>| ((f * f.transpose()).map(f64::exp_m1) - target).norm_squared();
    let mut value = objective(&factor);
    let mut step = 1.0;
    for _ in 0..20_000 {
        let c = &factor * factor.transpose();
        let g = c.zip_map(target, |cij, sij| 2.0 * (cij.exp_m1() - sij) * cij.exp());
        let grad = 2.0 * g * &factor;
        let norm2 = grad.norm_squared();
        if norm2 < 1e-24 {
            break;
        }
        step *= 2.0;
        let mut accepted = None;
        while step > 1e-16 {
            let candidate = &factor - step * &grad;
            let v = objective(&candidate);
            if v <= value - 1e-4 * step * norm2 {
                accepted = Some((candidate, v));
                break;
            }
            step /= 2.0;
        }
        let Some((candidate, v)) = accepted else { break };
        let gain = value - v;
        factor = candidate;
        value = v;
        if gain <= 1e-15 * value.max(1e-300) {
            break;
        }
    }
    factor
}

#[derive(Debug, Clone)]
enum Sampler {
    None,
    Gamma { index: usize, gamma: Gamma<f64> },
    LogNormal { mean: Vec<f64>, factor: DMatrix<f64>, log_cov: DMatrix<f64> },
}

/// A validated [`FrailtyModelSpec`] ready for sampling.
#[derive(Debug, Clone)]
pub struct FrailtyModel {
    spec: FrailtyModelSpec,
    space: StateSpace,
    sampler: Sampler,
}

impl FrailtyModel {
    pub fn spec(&self) -> &FrailtyModelSpec {
        &self.spec
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// Covariance actually used for `log V`, after any PSD projection.
    pub fn log_covariance(&self) -> Option<&DMatrix<f64>> {
        match &self.sampler {
            Sampler::LogNormal { log_cov, .. } => Some(log_cov),
            _ => None,
        }
    }

    /// One frailty per transition, in transition order.
    pub fn draw_frailties<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let ne = self.space.transitions().len();
        match &self.sampler {
            Sampler::None => vec![1.0; ne],
            Sampler::Gamma { index, gamma } => {
                let mut v = vec![1.0; ne];
                v[*index] = gamma.sample(rng);
                v
            }
            Sampler::LogNormal { mean, factor, .. } => {
                let z: Vec<f64> = (0..factor.ncols()).map(|_| StandardNormal.sample(rng)).collect();
                (0..ne)
                    .map(|j| {
                        let w: f64 = mean[j] + (0..z.len()).map(|c| factor[(j, c)] * z[c]).sum::<f64>();
                        w.exp()
                    })
                    .collect()
            }
        }
    }

    /// Continuous-time path with subject intensities `frailties[e] * α_e`,
    /// stopped at an absorbing state or at the horizon. No censoring.
    pub fn simulate_path<R: Rng + ?Sized>(&self, id: String, frailties: &[f64], rng: &mut R) -> EventHistory {
        let tau = self.spec.horizon;
        let transitions = self.space.transitions();
        let mut state = self.spec.initial_state;
        let mut t = 0.0;
        let mut jumps = Vec::new();
        loop {
            if self.space.is_absorbing(state) {
                break;
            }
            let rates: Vec<(usize, f64)> = transitions
                .iter()
                .enumerate()
                .filter(|(_, tr)| tr.from == state)
                .map(|(e, tr)| (tr.to, frailties[e] * self.spec.base_rates[e]))
                .collect();
            let total: f64 = rates.iter().map(|r| r.1).sum();
            if !(total > 0.0) {
                break;
            }
            let hold: f64 = Exp::new(total).expect("positive rate").sample(rng);
            t += hold;
            if !(t <= tau) || t <= jumps.last().map_or(0.0, |j: &Jump| j.time) {
                break;
            }
            let mut pick = rng.random::<f64>() * total;
            let mut to = rates[rates.len() - 1].0;
            for &(dest, r) in &rates {
                if pick < r {
                    to = dest;
                    break;
                }
                pick -= r;
            }
            jumps.push(Jump { time: t, from: state, to });
            state = to;
        }
        EventHistory {
            id,
            initial_state: self.spec.initial_state,
            jumps,
            censor_time: None,
            horizon: tau,
        }
    }

    /// `cohort_size` independent subjects; identical for identical seeds.
    pub fn simulate_cohort(&self, seed: u64) -> Vec<EventHistory> {
        let mut rng = stream_rng(seed, 0);
        (0..self.spec.cohort_size)
            .map(|i| {
                let v = self.draw_frailties(&mut rng);
                self.simulate_path(format!("{}", i + 1), &v, &mut rng)
            })
            .collect()
    }
}

/// Configuration of the averaged-landmark oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    pub replicates: usize,
    pub cohort_size: usize,
    pub seed: u64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub workers: Option<usize>,
}

pub fn default_grid_points() -> usize {
    512
}

/// Monte-Carlo "true" curve `t ↦ P_l(s, t)` on a uniform grid over `[s, τ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCurve {
    pub landmark_time: f64,
    pub landmark_states: Vec<usize>,
    pub grid: Vec<f64>,
    /// Averaged row vector at each grid point.
    pub values: Vec<Vec<f64>>,
    pub replicates: usize,
    /// Replicates that had to be redrawn for an empty landmark sample.
    pub resimulated: usize,
}

impl OracleCurve {
    /// Piecewise-constant curve jumping at the grid points.
    pub fn as_step(&self) -> StepFunction<Vec<f64>> {
        StepFunction::new(
            self.grid[0],
            self.values[0].clone(),
            self.grid[1..].to_vec(),
            self.values[1..].to_vec(),
        )
    }

    pub fn component(&self, k: usize) -> StepFunction<f64> {
        self.as_step().component(k)
    }
}

pub fn uniform_grid(start: f64, end: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![start];
    }
    let step = (end - start) / (points - 1) as f64;
    (0..points)
        .map(|i| if i + 1 == points { end } else { start + step * i as f64 })
        .collect()
}

/// Averaged LMAJ curves from several landmark times, sharing simulated
/// cohorts across landmarks.
pub fn oracle_truth_grid(
    spec: &FrailtyModelSpec,
    landmarks: &[f64],
    l: &[usize],
    cfg: &OracleConfig,
) -> Result<Vec<OracleCurve>> {
    if cfg.replicates == 0 {
        return Err(MsmError::InvalidArgument("oracle needs at least one replicate".into()));
    }
    let mut spec = spec.clone();
    spec.cohort_size = cfg.cohort_size;
    let model = spec.compile()?;
    let space = model.space().clone();
    let k = space.n_states();
    let grids: Vec<Vec<f64>> = landmarks
        .iter()
        .map(|&s| uniform_grid(s, spec.horizon, cfg.grid_points))
        .collect();

    const MAX_REDRAWS: u64 = 1000;
    let per_replicate = parallel_map(cfg.workers, cfg.replicates, |r| -> Result<Vec<(Vec<Vec<f64>>, usize)>> {
        let base = derive_seed(cfg.seed, r as u64);
        let cohort = model.simulate_cohort(derive_seed(base, 0));
        let mut out = Vec::with_capacity(landmarks.len());
        for (li, &s) in landmarks.iter().enumerate() {
            let mut redraws = 0usize;
            let mut result = lmaj(&cohort, &space, s, l);
            while matches!(result, Err(MsmError::EmptyLandmark { .. })) && (redraws as u64) < MAX_REDRAWS {
                redraws += 1;
                let fresh = model.simulate_cohort(derive_seed(base, redraws as u64));
                result = lmaj(&fresh, &space, s, l);
            }
            let curve = result?.curve;
            out.push((grids[li].iter().map(|&t| curve.eval(t).clone()).collect(), redraws));
        }
        Ok(out)
    });

    let mut sums: Vec<Vec<Vec<f64>>> = grids.iter().map(|g| vec![vec![0.0; k]; g.len()]).collect();
    let mut resimulated = vec![0usize; landmarks.len()];
    for rep in per_replicate {
        for (li, (curve, redraws)) in rep?.into_iter().enumerate() {
            for (acc, v) in sums[li].iter_mut().zip(curve) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
            resimulated[li] += redraws;
        }
    }
    let r = cfg.replicates as f64;
    Ok(landmarks
        .iter()
        .enumerate()
        .map(|(li, &s)| OracleCurve {
            landmark_time: s,
            landmark_states: l.to_vec(),
            grid: grids[li].clone(),
            values: sums[li]
                .iter()
                .map(|v| v.iter().map(|x| x / r).collect())
                .collect(),
            replicates: cfg.replicates,
            resimulated: resimulated[li],
        })
        .collect())
}

/// Averaged LMAJ curve from a single landmark time.
pub fn oracle_truth(spec: &FrailtyModelSpec, s: f64, l: &[usize], cfg: &OracleConfig) -> Result<OracleCurve> {
    Ok(oracle_truth_grid(spec, &[s], l, cfg)?.remove(0))
}

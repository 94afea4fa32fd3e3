//! Uncertainty for the transition probability estimators: the Greenwood-type
//! plug-in variance of the Aalen-Johansen estimator (valid under the Markov
//! assumption only) and subject-level percentile bootstrap bands for all
//! three estimators.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::build_aggregated;
use crate::error::{MsmError, Result};
use crate::estimators::{aalen_johansen, EstimatorSpec};
use crate::hazard::nelson_aalen;
use crate::history::EventHistory;
use crate::rng::{parallel_map, stream_rng};
use crate::space::StateSpace;
use crate::step::{union_times, StepFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandMethod {
    GreenwoodPlugin,
    BootstrapPercentile,
}

/// Pointwise band around an estimated curve, clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub estimate: StepFunction<Vec<f64>>,
    pub lower: StepFunction<Vec<f64>>,
    pub upper: StepFunction<Vec<f64>>,
    pub level: f64,
    pub method: BandMethod,
    /// Bootstrap replicates used (0 for the plug-in band).
    pub replicates: usize,
    /// Replicates dropped for an empty landmark sample.
    pub dropped: usize,
}

/// Pointwise variances of every component of `P̂^AJ_l(s, ·)`, obtained by
/// pushing the multinomial covariance of each factor `I + ΔΛ̂(u)` through
/// the product. Markov-valid only.
pub fn greenwood_variance(
    histories: &[EventHistory],
    space: &StateSpace,
    s: f64,
    l: &[usize],
) -> Result<StepFunction<Vec<f64>>> {
    let k = space.n_states();
    let agg = build_aggregated(histories, space, s)?;
    let haz = nelson_aalen(&agg, space);
    let start = aalen_johansen(histories, space, s, l)?.curve.initial;

    let mut p = start.clone();
    let mut cov = DMatrix::<f64>::zeros(k, k);
    let mut values = Vec::with_capacity(haz.jump_times().len());
    for (i, _) in haz.jump_times().iter().enumerate() {
        let inc = haz.increment_slice(i);
        let mut factor = DMatrix::<f64>::identity(k, k);
        for j in 0..k {
            for c in 0..k {
                factor[(j, c)] = if j == c { (1.0 + inc[j * k + c]).max(0.0) } else { inc[j * k + c] };
            }
        }
        let mut next = factor.transpose() * &cov * &factor;
        for j in 0..k {
            let y = agg.at_risk(i, j);
            if y == 0 || p[j] == 0.0 {
                continue;
            }
            let weight = p[j] * p[j] / y as f64;
            let row = factor.row(j);
            for a in 0..k {
                for b in 0..k {
                    let d = if a == b { row[a] } else { 0.0 };
                    next[(a, b)] += weight * (d - row[a] * row[b]);
                }
            }
        }
        cov = next;
        p = crate::hazard::step_row(&p, inc, k);
        values.push((0..k).map(|j| cov[(j, j)].max(0.0)).collect());
    }
    Ok(StepFunction::new(s, vec![0.0; k], haz.jump_times().to_vec(), values))
}

/// Greenwood-type standard error of `P̂^AJ_{l,target}(s, ·)`.
pub fn greenwood_se(
    histories: &[EventHistory],
    space: &StateSpace,
    s: f64,
    l: &[usize],
    target: usize,
) -> Result<StepFunction<f64>> {
    if target >= space.n_states() {
        return Err(MsmError::InvalidArgument(format!("state {} out of range", target + 1)));
    }
    Ok(greenwood_variance(histories, space, s, l)?.map(|v| v[target].sqrt()))
}

/// Normal-approximation band `P̂ ± z·SE` from the Greenwood variance.
pub fn greenwood_band(
    histories: &[EventHistory],
    space: &StateSpace,
    s: f64,
    l: &[usize],
    level: f64,
) -> Result<ConfidenceBand> {
    check_level(level)?;
    let estimate = aalen_johansen(histories, space, s, l)?.curve;
    let var = greenwood_variance(histories, space, s, l)?;
    let z = normal_quantile(0.5 + level / 2.0);
    let bound = |sign: f64| {
        StepFunction::new(
            s,
            estimate.initial.clone(),
            estimate.times.clone(),
            estimate
                .values
                .iter()
                .zip(&var.values)
                .map(|(p, v)| {
                    p.iter()
                        .zip(v)
                        .map(|(p, v)| (p + sign * z * v.sqrt()).clamp(0.0, 1.0))
                        .collect()
                })
                .collect(),
        )
    };
    Ok(ConfidenceBand {
        lower: bound(-1.0),
        upper: bound(1.0),
        estimate,
        level,
        method: BandMethod::GreenwoodPlugin,
        replicates: 0,
        dropped: 0,
    })
}

fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MsmError::InvalidArgument(format!("level {level} must lie in (0, 1)")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Worker threads; `None` uses all cores. Does not affect the result.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Abort when more than this fraction of replicates is dropped.
    #[serde(default = "default_drop_fraction")]
    pub max_drop_fraction: f64,
}

fn default_drop_fraction() -> f64 {
    0.1
}

impl BootstrapConfig {
    pub fn new(replicates: usize, level: f64, seed: u64) -> Self {
        Self {
            replicates,
            level,
            seed,
            workers: None,
            max_drop_fraction: default_drop_fraction(),
        }
    }
}

/// R type-7 quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap band, resampling whole subjects with replacement.
/// Replicates whose landmark sample is empty are dropped. The band is
/// widened where needed so it always contains the point estimate.
pub fn bootstrap_ci(
    histories: &[EventHistory],
    space: &StateSpace,
    spec: &EstimatorSpec,
    cfg: &BootstrapConfig,
) -> Result<ConfidenceBand> {
    if cfg.replicates == 0 {
        return Err(MsmError::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    check_level(cfg.level)?;
    let all: Vec<&EventHistory> = histories.iter().collect();
    let estimate = spec.estimate(&all, space)?.curve;
    let n = histories.len();

    let replicates: Vec<Result<Option<StepFunction<Vec<f64>>>>> =
        parallel_map(cfg.workers, cfg.replicates, |b| {
            let mut rng = stream_rng(cfg.seed, b as u64);
            let sample: Vec<&EventHistory> = (0..n).map(|_| &histories[rng.random_range(0..n)]).collect();
            match spec.estimate(&sample, space) {
                Ok(r) => Ok(Some(r.curve)),
                Err(MsmError::EmptyLandmark { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        });
    let mut curves = Vec::with_capacity(cfg.replicates);
    for r in replicates {
        if let Some(c) = r? {
            curves.push(c);
        }
    }
    let dropped = cfg.replicates - curves.len();
    if curves.is_empty() || dropped as f64 > cfg.max_drop_fraction * cfg.replicates as f64 {
        return Err(MsmError::TooManyDropped {
            dropped,
            total: cfg.replicates,
        });
    }

    let grid = union_times(
        std::iter::once(&estimate.times[..]).chain(curves.iter().map(|c| &c.times[..])),
    );
    let k = space.n_states();
    let alpha = (1.0 - cfg.level) / 2.0;
    let band_at = |t: Option<f64>| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let point = match t {
            Some(t) => estimate.eval(t).clone(),
            None => estimate.initial.clone(),
        };
        let mut lo = vec![0.0; k];
        let mut hi = vec![0.0; k];
        let mut column = Vec::with_capacity(curves.len());
        for j in 0..k {
            column.clear();
            column.extend(curves.iter().map(|c| match t {
                Some(t) => c.eval(t)[j],
                None => c.initial[j],
            }));
            column.sort_by(f64::total_cmp);
            lo[j] = quantile_sorted(&column, alpha).min(point[j]).clamp(0.0, 1.0);
            hi[j] = quantile_sorted(&column, 1.0 - alpha).max(point[j]).clamp(0.0, 1.0);
        }
        (point, lo, hi)
    };
    let (p0, l0, u0) = band_at(None);
    let mut points = Vec::with_capacity(grid.len());
    let mut lows = Vec::with_capacity(grid.len());
    let mut highs = Vec::with_capacity(grid.len());
    for &t in &grid {
        let (p, l, u) = band_at(Some(t));
        points.push(p);
        lows.push(l);
        highs.push(u);
    }
    let origin = estimate.origin;
    Ok(ConfidenceBand {
        estimate: StepFunction::new(origin, p0, grid.clone(), points),
        lower: StepFunction::new(origin, l0, grid.clone(), lows),
        upper: StepFunction::new(origin, u0, grid, highs),
        level: cfg.level,
        method: BandMethod::BootstrapPercentile,
        replicates: curves.len(),
        dropped,
    })
}

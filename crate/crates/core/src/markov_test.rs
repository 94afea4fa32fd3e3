//! Transition-wise tests of the Markov assumption.
//!
//! For a transition `j -> k` and landmark time `s`, subjects in `l1` at `s`
//! are compared with subjects in `l2` at `s` through a two-sample log-rank
//! test of the `j -> k` intensity on `(s, τ]`. The point test uses one `s`
//! and the chi-square(1) reference; the grid test takes the maximum over
//! several landmark times and is calibrated by a subject-level wild
//! bootstrap with centred unit-Poisson multipliers.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{MsmError, Result};
use crate::history::EventHistory;
use crate::rng::{derive_seed, parallel_map, stream_rng};
use crate::space::{StateSpace, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMethod {
    Point,
    Grid,
}

impl std::str::FromStr for TestMethod {
    type Err = MsmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(Self::Point),
            "grid" => Ok(Self::Grid),
            _ => Err(MsmError::InvalidArgument(format!("unknown test method {s:?}"))),
        }
    }
}

/// Wild-bootstrap multiplier law; both have mean 0 and variance 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Multiplier {
    /// `ξ - 1` with `ξ ~ Poisson(1)`.
    #[default]
    CenteredPoisson,
    Gaussian,
}

impl Multiplier {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Multiplier::CenteredPoisson => {
                let unit = Poisson::new(1.0).expect("unit Poisson");
                unit.sample(rng) - 1.0
            }
            Multiplier::Gaussian => StandardNormal.sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovTestReport {
    pub transition: Transition,
    pub method: TestMethod,
    pub landmark_times: Vec<f64>,
    /// `U²/V` for the point test, its maximum over the grid for the grid test.
    pub statistic: f64,
    /// `U²/V` at each landmark time (0 where degenerate).
    pub point_statistics: Vec<f64>,
    pub p_value: f64,
    pub replicates: usize,
    /// Subjects in `l1` and in `l2` at each landmark time.
    pub group_sizes: Vec<(usize, usize)>,
    /// No information: no `j -> k` events or an empty group everywhere.
    pub degenerate: bool,
}

/// Log-rank score at one landmark time plus per-subject score contributions.
#[derive(Debug, Clone)]
pub(crate) struct LandmarkScore {
    pub u: f64,
    pub v: f64,
    pub n1: usize,
    pub n2: usize,
    /// Martingale-residual contribution of each subject; sums to `u`.
    pub contributions: Vec<f64>,
}

fn default_l2(space: &StateSpace, l1: &[usize]) -> Vec<usize> {
    (0..space.n_states()).filter(|j| !l1.contains(j)).collect()
}

fn check_groups(space: &StateSpace, tr: Transition, l1: &[usize], l2: &[usize]) -> Result<()> {
    if !space.contains(tr) {
        return Err(MsmError::UnknownTransition { from: tr.from + 1, to: tr.to + 1 });
    }
    if l1.is_empty() || l2.is_empty() {
        return Err(MsmError::InvalidArgument("landmark groups must be non-empty".into()));
    }
    if l1.iter().chain(l2).any(|&j| j >= space.n_states()) {
        return Err(MsmError::InvalidArgument("landmark group refers to an unknown state".into()));
    }
    if l1.iter().any(|j| l2.contains(j)) {
        return Err(MsmError::InvalidArgument("landmark groups must be disjoint".into()));
    }
    Ok(())
}

pub(crate) fn landmark_score(
    histories: &[EventHistory],
    tr: Transition,
    s: f64,
    l1: &[usize],
    l2: &[usize],
) -> LandmarkScore {
    let n = histories.len();
    let group: Vec<Option<usize>> = histories
        .iter()
        .map(|h| {
            if !h.observed_after(s) {
                return None;
            }
            let x = h.state_at_unchecked(s);
            if l1.contains(&x) {
                Some(0)
            } else if l2.contains(&x) {
                Some(1)
            } else {
                None
            }
        })
        .collect();
    let n1 = group.iter().filter(|g| **g == Some(0)).count();
    let n2 = group.iter().filter(|g| **g == Some(1)).count();

    let is_event = |j: &crate::history::Jump| j.time > s && j.from == tr.from && j.to == tr.to;
    let mut times: Vec<f64> = histories
        .iter()
        .zip(&group)
        .filter(|(_, g)| g.is_some())
        .flat_map(|(h, _)| h.jumps.iter().filter(|j| is_event(j)).map(|j| j.time))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let m = times.len();

    let mut diff = [vec![0isize; m + 1], vec![0isize; m + 1]];
    let mut events = [vec![0usize; m], vec![0usize; m]];
    for (h, g) in histories.iter().zip(&group) {
        let Some(g) = *g else { continue };
        for (state, a, b) in h.sojourns_after(s) {
            if state != tr.from {
                continue;
            }
            let lo = times.partition_point(|&u| u <= a);
            let hi = times.partition_point(|&u| u <= b);
            diff[g][lo] += 1;
            diff[g][hi] -= 1;
        }
        for j in h.jumps.iter().filter(|j| is_event(j)) {
            events[g][times.partition_point(|&u| u < j.time)] += 1;
        }
    }

    let mut u = 0.0;
    let mut v = 0.0;
    // prefix sums of H_g(u) dN(u)/Y(u), shifted by one
    let mut comp = [vec![0.0; m + 1], vec![0.0; m + 1]];
    let mut weight = [vec![0.0; m], vec![0.0; m]];
    let (mut y1, mut y2) = (0isize, 0isize);
    for i in 0..m {
        y1 += diff[0][i];
        y2 += diff[1][i];
        let (y1f, y2f) = (y1 as f64, y2 as f64);
        let y = y1f + y2f;
        let d = (events[0][i] + events[1][i]) as f64;
        let (mut c1, mut c2) = (0.0, 0.0);
        if y > 0.0 {
            u += events[0][i] as f64 - y1f * d / y;
            weight[0][i] = y2f / y;
            weight[1][i] = -y1f / y;
            c1 = weight[0][i] * d / y;
            c2 = weight[1][i] * d / y;
        }
        if y > 1.0 {
            v += d * (y1f * y2f / (y * y)) * ((y - d) / (y - 1.0));
        }
        comp[0][i + 1] = comp[0][i] + c1;
        comp[1][i + 1] = comp[1][i] + c2;
    }

    let mut contributions = vec![0.0; n];
    for (i, (h, g)) in histories.iter().zip(&group).enumerate() {
        let Some(g) = *g else { continue };
        let mut c = 0.0;
        for j in h.jumps.iter().filter(|j| is_event(j)) {
            c += weight[g][times.partition_point(|&u| u < j.time)];
        }
        for (state, a, b) in h.sojourns_after(s) {
            if state != tr.from {
                continue;
            }
            let lo = times.partition_point(|&u| u <= a);
            let hi = times.partition_point(|&u| u <= b);
            c -= comp[g][hi] - comp[g][lo];
        }
        contributions[i] = c;
    }

    LandmarkScore {
        u,
        v,
        n1,
        n2,
        contributions,
    }
}

fn chi2_upper(x: f64) -> f64 {
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    (1.0 - chi.cdf(x)).clamp(0.0, 1.0)
}

/// Two-sample log-rank point test of the `j -> k` intensity after `s`
/// between `l1` and `l2` (default: all other states).
pub fn logrank_point(
    histories: &[EventHistory],
    space: &StateSpace,
    tr: Transition,
    s: f64,
    l1: &[usize],
    l2: Option<&[usize]>,
) -> Result<MarkovTestReport> {
    let l2 = l2.map_or_else(|| default_l2(space, l1), <[usize]>::to_vec);
    check_groups(space, tr, l1, &l2)?;
    let score = landmark_score(histories, tr, s, l1, &l2);
    let degenerate = !(score.v > 0.0);
    let statistic = if degenerate { 0.0 } else { score.u * score.u / score.v };
    Ok(MarkovTestReport {
        transition: tr,
        method: TestMethod::Point,
        landmark_times: vec![s],
        statistic,
        point_statistics: vec![statistic],
        p_value: if degenerate { 1.0 } else { chi2_upper(statistic) },
        replicates: 0,
        group_sizes: vec![(score.n1, score.n2)],
        degenerate,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridTestConfig {
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub multiplier: Multiplier,
    #[serde(default)]
    pub workers: Option<usize>,
}

/// Max-over-grid log-rank test calibrated by wild bootstrap.
pub fn grid_test(
    histories: &[EventHistory],
    space: &StateSpace,
    tr: Transition,
    l1: &[usize],
    l2: Option<&[usize]>,
    grid: &[f64],
    cfg: &GridTestConfig,
) -> Result<MarkovTestReport> {
    if grid.is_empty() {
        return Err(MsmError::InvalidArgument("grid test needs at least one landmark time".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MsmError::InvalidArgument("landmark grid must be strictly increasing".into()));
    }
    if cfg.replicates == 0 {
        return Err(MsmError::InvalidArgument("grid test needs at least one replicate".into()));
    }
    let l2 = l2.map_or_else(|| default_l2(space, l1), <[usize]>::to_vec);
    check_groups(space, tr, l1, &l2)?;

    let scores: Vec<LandmarkScore> = grid.iter().map(|&s| landmark_score(histories, tr, s, l1, &l2)).collect();
    let point_statistics: Vec<f64> = scores
        .iter()
        .map(|sc| if sc.v > 0.0 { sc.u * sc.u / sc.v } else { 0.0 })
        .collect();
    let group_sizes = scores.iter().map(|sc| (sc.n1, sc.n2)).collect();
    let active: Vec<usize> = (0..grid.len()).filter(|&i| scores[i].v > 0.0).collect();

    let mut report = MarkovTestReport {
        transition: tr,
        method: TestMethod::Grid,
        landmark_times: grid.to_vec(),
        statistic: 0.0,
        point_statistics,
        p_value: 1.0,
        replicates: cfg.replicates,
        group_sizes,
        degenerate: active.is_empty(),
    };
    if active.is_empty() {
        return Ok(report);
    }
    let observed = active
        .iter()
        .map(|&i| report.point_statistics[i])
        .fold(f64::NEG_INFINITY, f64::max);

    // keep only subjects with a non-zero contribution somewhere
    let n = histories.len();
    let members: Vec<usize> = (0..n)
        .filter(|&i| active.iter().any(|&g| scores[g].contributions[i] != 0.0))
        .collect();
    let table: Vec<Vec<f64>> = active
        .iter()
        .map(|&g| members.iter().map(|&i| scores[g].contributions[i]).collect())
        .collect();
    let variances: Vec<f64> = active.iter().map(|&g| scores[g].v).collect();

    let exceed = parallel_map(cfg.workers, cfg.replicates, |b| {
        let mut rng = stream_rng(cfg.seed, b as u64);
        // one multiplier per subject, shared across the grid
        let mut multipliers = vec![0.0; n];
        for g in multipliers.iter_mut() {
            *g = cfg.multiplier.sample(&mut rng);
        }
        let mut best = f64::NEG_INFINITY;
        for (row, v) in table.iter().zip(&variances) {
            let u: f64 = row.iter().zip(&members).map(|(c, &i)| c * multipliers[i]).sum();
            best = best.max(u * u / v);
        }
        best >= observed
    });
    let count = exceed.into_iter().filter(|&e| e).count();
    report.statistic = observed;
    report.p_value = (1 + count) as f64 / (cfg.replicates + 1) as f64;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub method: TestMethod,
    /// One time for the point test, the grid for the grid test.
    pub landmark_times: Vec<f64>,
    pub l1: Vec<usize>,
    #[serde(default)]
    pub l2: Option<Vec<usize>>,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub multiplier: Multiplier,
    /// Compare p-values with `alpha / |E|` instead of `alpha`.
    #[serde(default)]
    pub bonferroni: bool,
    #[serde(default)]
    pub workers: Option<usize>,
}

/// Selected non-Markov transitions and the full per-transition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub nonmarkov: Vec<Transition>,
    pub reports: Vec<MarkovTestReport>,
    pub threshold: f64,
}

/// Tests every transition and keeps those with p-value below the threshold.
pub fn select_nonmarkov(histories: &[EventHistory], space: &StateSpace, cfg: &SelectionConfig) -> Result<Selection> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(MsmError::InvalidArgument(format!("alpha {} outside [0, 1]", cfg.alpha)));
    }
    let l2 = cfg.l2.as_deref();
    let mut reports = Vec::with_capacity(space.transitions().len());
    for (e, &tr) in space.transitions().iter().enumerate() {
        let report = match cfg.method {
            TestMethod::Point => {
                let [s] = cfg.landmark_times[..] else {
                    return Err(MsmError::InvalidArgument("point test takes exactly one landmark time".into()));
                };
                logrank_point(histories, space, tr, s, &cfg.l1, l2)?
            }
            TestMethod::Grid => {
                let grid_cfg = GridTestConfig {
                    replicates: cfg.replicates,
                    seed: derive_seed(cfg.seed, e as u64),
                    multiplier: cfg.multiplier,
                    workers: cfg.workers,
                };
                grid_test(histories, space, tr, &cfg.l1, l2, &cfg.landmark_times, &grid_cfg)?
            }
        };
        reports.push(report);
    }
    let threshold = if cfg.bonferroni {
        cfg.alpha / space.transitions().len() as f64
    } else {
        cfg.alpha
    };
    let nonmarkov = reports
        .iter()
        .filter(|r| r.p_value < threshold)
        .map(|r| r.transition)
        .collect();
    Ok(Selection {
        nonmarkov,
        reports,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::Jump;

    fn two_state() -> StateSpace {
        StateSpace::new(2, vec![Transition::new(0, 1), Transition::new(1, 0)]).unwrap()
    }

    #[test]
    fn no_events_is_degenerate() {
        let sp = two_state();
        let hs = vec![
            EventHistory::new("a", 0, vec![], None, 10.0, &sp).unwrap(),
            EventHistory::new("b", 1, vec![], None, 10.0, &sp).unwrap(),
        ];
        let r = logrank_point(&hs, &sp, Transition::new(0, 1), 1.0, &[0], None).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.statistic, 0.0);
        let cfg = GridTestConfig { replicates: 10, seed: 1, multiplier: Multiplier::default(), workers: Some(1) };
        let g = grid_test(&hs, &sp, Transition::new(0, 1), &[0], None, &[1.0, 2.0], &cfg).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.p_value, 1.0);
    }

    #[test]
    fn overlapping_groups_rejected() {
        let sp = two_state();
        let hs = vec![EventHistory::new("a", 0, vec![], None, 10.0, &sp).unwrap()];
        assert!(logrank_point(&hs, &sp, Transition::new(0, 1), 1.0, &[0], Some(&[0, 1])).is_err());
    }

    #[test]
    fn contributions_sum_to_score() {
        let sp = two_state();
        // group 1: in state 0 at s = 1; group 2: in state 1 at s = 1 then back to 0
        let j = |time, from, to| Jump { time, from, to };
        let hs = vec![
            EventHistory::new("a", 0, vec![j(2.0, 0, 1)], None, 10.0, &sp).unwrap(),
            EventHistory::new("b", 0, vec![j(4.0, 0, 1), j(5.0, 1, 0), j(6.0, 0, 1)], None, 10.0, &sp).unwrap(),
            EventHistory::new("c", 0, vec![j(0.5, 0, 1), j(1.5, 1, 0), j(3.0, 0, 1)], None, 10.0, &sp).unwrap(),
            EventHistory::new("d", 1, vec![j(2.5, 1, 0), j(4.0, 0, 1)], None, 10.0, &sp).unwrap(),
            EventHistory::new("e", 0, vec![], Some(3.5), 10.0, &sp).unwrap(),
        ];
        let sc = landmark_score(&hs, Transition::new(0, 1), 1.0, &[0], &[1]);
        assert_eq!((sc.n1, sc.n2), (3, 2));
        let total: f64 = sc.contributions.iter().sum();
        assert!((total - sc.u).abs() < 1e-12);
        assert!(sc.v > 0.0);
    }
}

//! Aalen-Johansen, landmark Aalen-Johansen and hybrid estimators of the
//! transition probabilities `P_l(s, t)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::aggregate::build_aggregated;
use crate::error::{MsmError, Result};
use crate::hazard::{nelson_aalen, CumulativeHazardMatrix};
use crate::history::{landmark_subset, EventHistory};
use crate::space::{StateSpace, Transition};
use crate::step::{union_times, StepFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Aj,
    Lmaj,
    Haj,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Aj, EstimatorKind::Lmaj, EstimatorKind::Haj];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Aj => "AJ",
            EstimatorKind::Lmaj => "LMAJ",
            EstimatorKind::Haj => "HAJ",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = MsmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aj" => Ok(Self::Aj),
            "lmaj" => Ok(Self::Lmaj),
            "haj" => Ok(Self::Haj),
            _ => Err(MsmError::InvalidArgument(format!("unknown estimator {s:?}"))),
        }
    }
}

/// Estimated curve `t ↦ P̂_l(s, t)` together with what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionProbabilityResult {
    pub kind: EstimatorKind,
    pub landmark_time: f64,
    pub landmark_states: Vec<usize>,
    /// Transitions estimated from the landmark sample.
    pub nonmarkov: Vec<Transition>,
    pub curve: StepFunction<Vec<f64>>,
    pub n_full: usize,
    pub n_landmark: usize,
}

impl TransitionProbabilityResult {
    pub fn probability(&self, state: usize, t: f64) -> f64 {
        self.curve.eval(t)[state]
    }
}

/// Everything an estimator needs to know about the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub landmark_time: f64,
    pub landmark_states: Vec<usize>,
    /// Only used by HAJ.
    #[serde(default)]
    pub nonmarkov: Vec<Transition>,
}

impl EstimatorSpec {
    pub fn estimate(&self, histories: &[&EventHistory], space: &StateSpace) -> Result<TransitionProbabilityResult> {
        let (s, l) = (self.landmark_time, &self.landmark_states[..]);
        match self.kind {
            EstimatorKind::Aj => aalen_johansen(histories.iter().copied(), space, s, l),
            EstimatorKind::Lmaj => lmaj(histories.iter().copied(), space, s, l),
            EstimatorKind::Haj => haj(histories.iter().copied(), space, s, l, &self.nonmarkov),
        }
    }
}

fn check_states(space: &StateSpace, states: &[usize]) -> Result<()> {
    if states.is_empty() {
        return Err(MsmError::InvalidArgument("empty landmark state set".into()));
    }
    if let Some(&bad) = states.iter().find(|&&j| j >= space.n_states()) {
        return Err(MsmError::InvalidArgument(format!("state {} out of range", bad + 1)));
    }
    Ok(())
}

/// Starting row vector: e_l for a single state, otherwise the composition
/// of the landmark sample over `states` (uniform when it is empty).
fn initial_vector(space: &StateSpace, states: &[usize], landmark: &[&EventHistory], s: f64) -> Vec<f64> {
    let mut v = vec![0.0; space.n_states()];
    if let [l] = states {
        v[*l] = 1.0;
        return v;
    }
    if landmark.is_empty() {
        let unique: BTreeSet<usize> = states.iter().copied().collect();
        for &j in &unique {
            v[j] = 1.0 / unique.len() as f64;
        }
        return v;
    }
    for h in landmark {
        v[h.state_at_unchecked(s)] += 1.0;
    }
    let n = landmark.len() as f64;
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn full_hazard<'a, I>(histories: I, space: &StateSpace, s: f64) -> Result<(CumulativeHazardMatrix, usize)>
where
    I: IntoIterator<Item = &'a EventHistory>,
    I::IntoIter: Clone,
{
    let agg = build_aggregated(histories, space, s)?;
    Ok((nelson_aalen(&agg, space), agg.n_effective()))
}

/// Aalen-Johansen estimator from full-sample hazards on `(s, τ]`.
pub fn aalen_johansen<'a, I>(histories: I, space: &StateSpace, s: f64, l: &[usize]) -> Result<TransitionProbabilityResult>
where
    I: IntoIterator<Item = &'a EventHistory>,
    I::IntoIter: Clone,
{
    check_states(space, l)?;
    let iter = histories.into_iter();
    let landmark = landmark_subset(iter.clone(), s, l);
    let (haz, n_full) = full_hazard(iter, space, s)?;
    let curve = haz.propagate(initial_vector(space, l, &landmark, s));
    Ok(TransitionProbabilityResult {
        kind: EstimatorKind::Aj,
        landmark_time: s,
        landmark_states: l.to_vec(),
        nonmarkov: Vec::new(),
        curve,
        n_full,
        n_landmark: landmark.len(),
    })
}

/// Landmark Aalen-Johansen estimator: hazards from `{i : X_i(s) ∈ l}` only.
pub fn lmaj<'a, I>(histories: I, space: &StateSpace, s: f64, l: &[usize]) -> Result<TransitionProbabilityResult>
where
    I: IntoIterator<Item = &'a EventHistory>,
    I::IntoIter: Clone,
{
    check_states(space, l)?;
    let iter = histories.into_iter();
    let n_full = iter.clone().filter(|h| h.observed_after(s)).count();
    let landmark = landmark_subset(iter, s, l);
    if landmark.is_empty() {
        return Err(MsmError::EmptyLandmark {
            time: s,
            states: l.to_vec(),
        });
    }
    let (haz, _) = full_hazard(landmark.iter().copied(), space, s)?;
    let curve = haz.propagate(initial_vector(space, l, &landmark, s));
    Ok(TransitionProbabilityResult {
        kind: EstimatorKind::Lmaj,
        landmark_time: s,
        landmark_states: l.to_vec(),
        nonmarkov: space.transitions().to_vec(),
        curve,
        n_full,
        n_landmark: landmark.len(),
    })
}

/// Hybrid increments: landmark-sample hazards for transitions in `nonmarkov`,
/// full-sample hazards for the rest, on the union of both jump sets.
pub fn hybrid_hazard(
    full: &CumulativeHazardMatrix,
    landmark: Option<&CumulativeHazardMatrix>,
    space: &StateSpace,
    nonmarkov: &[Transition],
) -> CumulativeHazardMatrix {
    let k = space.n_states();
    let from_landmark: Vec<bool> = space.transitions().iter().map(|t| nonmarkov.contains(t)).collect();
    let mut sets = vec![full.jump_times()];
    if let Some(lm) = landmark {
        sets.push(lm.jump_times());
    }
    let grid = union_times(sets);
    let mut times = Vec::with_capacity(grid.len());
    let mut increments = Vec::with_capacity(grid.len() * k * k);
    let lookup = |haz: &CumulativeHazardMatrix, t: f64| {
        let idx = haz.jump_times().partition_point(|&u| u < t);
        (idx < haz.jump_times().len() && haz.jump_times()[idx] == t).then_some(idx)
    };
    for &t in &grid {
        let full_idx = lookup(full, t);
        let lm_idx = landmark.and_then(|lm| lookup(lm, t));
        let mut block = vec![0.0; k * k];
        let mut any = false;
        for (e, tr) in space.transitions().iter().enumerate() {
            let pos = tr.from * k + tr.to;
            let value = if from_landmark[e] {
                match (landmark, lm_idx) {
                    (Some(lm), Some(i)) => lm.increment_slice(i)[pos],
                    _ => 0.0,
                }
            } else {
                full_idx.map_or(0.0, |i| full.increment_slice(i)[pos])
            };
            if value != 0.0 {
                any = true;
            }
            block[pos] = value;
        }
        if any {
            times.push(t);
            increments.extend_from_slice(&block);
        }
    }
    CumulativeHazardMatrix::from_offdiagonal(k, full.window_start(), times, increments)
}

/// Hybrid landmark Aalen-Johansen estimator with non-Markov set `nonmarkov`.
pub fn haj<'a, I>(
    histories: I,
    space: &StateSpace,
    s: f64,
    l: &[usize],
    nonmarkov: &[Transition],
) -> Result<TransitionProbabilityResult>
where
    I: IntoIterator<Item = &'a EventHistory>,
    I::IntoIter: Clone,
{
    check_states(space, l)?;
    if let Some(t) = nonmarkov.iter().find(|t| !space.contains(**t)) {
        return Err(MsmError::UnknownTransition { from: t.from + 1, to: t.to + 1 });
    }
    let mut a: Vec<Transition> = nonmarkov.to_vec();
    a.sort();
    a.dedup();

    let iter = histories.into_iter();
    let landmark = landmark_subset(iter.clone(), s, l);
    if !a.is_empty() && landmark.is_empty() {
        return Err(MsmError::EmptyLandmark {
            time: s,
            states: l.to_vec(),
        });
    }
    let (full, n_full) = full_hazard(iter, space, s)?;
    let lm_haz = if a.is_empty() {
        None
    } else {
        Some(full_hazard(landmark.iter().copied(), space, s)?.0)
    };
    let hybrid = hybrid_hazard(&full, lm_haz.as_ref(), space, &a);
    let curve = hybrid.propagate(initial_vector(space, l, &landmark, s));
    Ok(TransitionProbabilityResult {
        kind: EstimatorKind::Haj,
        landmark_time: s,
        landmark_states: l.to_vec(),
        nonmarkov: a,
        curve,
        n_full,
        n_landmark: landmark.len(),
    })
}

/// Empirical occupation π̂(0) among subjects observed after time 0.
pub fn initial_occupation<'a>(
    histories: impl IntoIterator<Item = &'a EventHistory>,
    space: &StateSpace,
) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; space.n_states()];
    let mut n = 0usize;
    for h in histories {
        if h.observed_after(0.0) {
            counts[h.state_at_unchecked(0.0)] += 1.0;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MsmError::InvalidArgument("no subjects under observation at time 0".into()));
    }
    counts.iter_mut().for_each(|c| *c /= n as f64);
    Ok(counts)
}

/// State occupation curve `t ↦ π̂(0) P̂^AJ(0, t)`.
pub fn state_occupation_curve<'a, I>(histories: I, space: &StateSpace) -> Result<StepFunction<Vec<f64>>>
where
    I: IntoIterator<Item = &'a EventHistory>,
    I::IntoIter: Clone,
{
    let iter = histories.into_iter();
    let pi0 = initial_occupation(iter.clone(), space)?;
    let (haz, _) = full_hazard(iter, space, 0.0)?;
    Ok(haz.propagate(pi0))
}

/// State occupation probabilities at `t`.
pub fn state_occupation<'a, I>(histories: I, space: &StateSpace, t: f64) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a EventHistory>,
    I::IntoIter: Clone,
{
    Ok(state_occupation_curve(histories, space)?.eval(t).clone())
}

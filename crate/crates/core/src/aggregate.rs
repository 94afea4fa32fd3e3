//! Aggregated at-risk and transition counting processes.

use crate::error::Result;
use crate::history::EventHistory;
use crate::space::{StateSpace, Transition};

/// Ȳ_j and ΔN̄_jk over a window `(window_start, ∞)`, tabulated at the
/// distinct event times. At-risk counts are left limits: a subject counts
/// in state `j` at `u` if `X(u-) = j` and it is observed up to `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedProcesses {
    n_states: usize,
    transitions: Vec<Transition>,
    window_start: f64,
    n_effective: usize,
    start_occupancy: Vec<usize>,
    event_times: Vec<f64>,
    at_risk: Vec<usize>,
    jumps: Vec<usize>,
}

/// Aggregates `histories` over `(window_start, τ]`. Every history is
/// validated against `space` first.
pub fn build_aggregated<'a, I>(
    histories: I,
    space: &StateSpace,
    window_start: f64,
) -> Result<AggregatedProcesses>
where
    I: IntoIterator<Item = &'a EventHistory>,
    I::IntoIter: Clone,
{
    let iter = histories.into_iter();
    for h in iter.clone() {
        h.validate(space)?;
    }
    let times = event_times(iter.clone(), window_start);
    Ok(aggregate_on(iter, space, window_start, times))
}

/// Sorted distinct jump times after `s`.
pub(crate) fn event_times<'a>(histories: impl IntoIterator<Item = &'a EventHistory>, s: f64) -> Vec<f64> {
    let mut times: Vec<f64> = histories
        .into_iter()
        .flat_map(|h| h.jumps.iter().map(|j| j.time).filter(|&t| t > s))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Tabulates the processes on a caller-supplied time grid that must contain
/// every jump time after `s` of the given histories.
pub(crate) fn aggregate_on<'a>(
    histories: impl IntoIterator<Item = &'a EventHistory>,
    space: &StateSpace,
    s: f64,
    times: Vec<f64>,
) -> AggregatedProcesses {
    let k = space.n_states();
    let ne = space.transitions().len();
    let m = times.len();
    let mut diff = vec![0isize; (m + 1) * k];
    let mut jumps = vec![0usize; m * ne];
    let mut start_occupancy = vec![0usize; k];
    let mut n_effective = 0;

    for h in histories {
        if !h.observed_after(s) {
            continue;
        }
        n_effective += 1;
        let mut first = true;
        for (state, a, b) in h.sojourns_after(s) {
            if first {
                start_occupancy[state] += 1;
                first = false;
            }
            let lo = times.partition_point(|&u| u <= a);
            let hi = times.partition_point(|&u| u <= b);
            diff[lo * k + state] += 1;
            diff[hi * k + state] -= 1;
        }
        for jump in h.jumps.iter().filter(|j| j.time > s) {
            let idx = times.partition_point(|&u| u < jump.time);
            debug_assert!(idx < m && times[idx] == jump.time, "grid misses a jump time");
            let e = space
                .transition_index(jump.from, jump.to)
                .expect("validated history");
            jumps[idx * ne + e] += 1;
        }
    }

    let mut at_risk = vec![0usize; m * k];
    let mut running = vec![0isize; k];
    for i in 0..m {
        for j in 0..k {
            running[j] += diff[i * k + j];
            at_risk[i * k + j] = running[j] as usize;
        }
    }

    AggregatedProcesses {
        n_states: k,
        transitions: space.transitions().to_vec(),
        window_start: s,
        n_effective,
        start_occupancy,
        event_times: times,
        at_risk,
        jumps,
    }
}

impl AggregatedProcesses {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn window_start(&self) -> f64 {
        self.window_start
    }

    /// Subjects under observation just after the window start.
    pub fn n_effective(&self) -> usize {
        self.n_effective
    }

    /// Ȳ_j(s+): occupancy right after the window start.
    pub fn start_occupancy(&self) -> &[usize] {
        &self.start_occupancy
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    /// Ȳ_j at the `i`-th event time (left limit).
    pub fn at_risk(&self, i: usize, state: usize) -> usize {
        self.at_risk[i * self.n_states + state]
    }

    /// Row of Ȳ at the `i`-th event time.
    pub fn at_risk_row(&self, i: usize) -> &[usize] {
        &self.at_risk[i * self.n_states..(i + 1) * self.n_states]
    }

    /// ΔN̄ for transition index `e` at the `i`-th event time.
    pub fn jump_count(&self, i: usize, e: usize) -> usize {
        self.jumps[i * self.transitions.len() + e]
    }

    /// N̄_e(t): transitions of type `e` in `(window_start, t]`.
    pub fn cumulative_count(&self, e: usize, t: f64) -> usize {
        let n = self.event_times.partition_point(|&u| u <= t);
        (0..n).map(|i| self.jump_count(i, e)).sum()
    }

    /// J_j at the `i`-th event time.
    pub fn indicator(&self, i: usize, state: usize) -> bool {
        self.at_risk(i, state) > 0
    }
}

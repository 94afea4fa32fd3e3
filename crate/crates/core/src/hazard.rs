//! Nelson-Aalen cumulative hazard matrices and the product integral.

use nalgebra::DMatrix;

use crate::aggregate::AggregatedProcesses;
use crate::error::{MsmError, Result};
use crate::space::StateSpace;
use crate::step::StepFunction;

/// Matrix-valued step function Λ̂ stored as its increments ΔΛ̂(u) at the
/// jump times `u ∈ (window_start, ∞)`. Rows of every increment sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeHazardMatrix {
    n_states: usize,
    window_start: f64,
    jump_times: Vec<f64>,
    // row-major K×K per jump time, diagonal included
    increments: Vec<f64>,
}

impl CumulativeHazardMatrix {
    /// Builds increments from off-diagonal entries; the diagonal is set to
    /// minus the off-diagonal row sum. A row whose off-diagonal mass exceeds
    /// one is rescaled to one.
    pub(crate) fn from_offdiagonal(
        n_states: usize,
        window_start: f64,
        jump_times: Vec<f64>,
        mut increments: Vec<f64>,
    ) -> Self {
        let k = n_states;
        for (i, block) in increments.chunks_exact_mut(k * k).enumerate() {
            for j in 0..k {
                let row = &mut block[j * k..(j + 1) * k];
                row[j] = 0.0;
                let mut total = 0.0;
                for &x in row.iter() {
                    total += x;
                }
                if total > 1.0 + 1e-12 {
                    log::warn!(
                        "hazard increment for state {} at t = {} sums to {total}; rescaling to 1",
                        j + 1,
                        jump_times[i]
                    );
                    for x in row.iter_mut() {
                        *x /= total;
                    }
                    total = row.iter().sum();
                }
                row[j] = -total;
            }
        }
        Self {
            n_states,
            window_start,
            jump_times,
            increments,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn window_start(&self) -> f64 {
        self.window_start
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    /// ΔΛ̂ at the `i`-th jump time as a row-major slice.
    pub fn increment_slice(&self, i: usize) -> &[f64] {
        let kk = self.n_states * self.n_states;
        &self.increments[i * kk..(i + 1) * kk]
    }

    pub fn increment(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_states, self.n_states, self.increment_slice(i))
    }

    /// Cumulative Λ̂_jk(t).
    pub fn cumulative(&self, from: usize, to: usize, t: f64) -> f64 {
        let n = self.jump_times.partition_point(|&u| u <= t);
        (0..n)
            .map(|i| self.increment_slice(i)[from * self.n_states + to])
            .sum()
    }

    /// Cumulative hazard of one entry as a step function.
    pub fn cumulative_curve(&self, from: usize, to: usize) -> StepFunction<f64> {
        let mut acc = 0.0;
        let values = (0..self.jump_times.len())
            .map(|i| {
                acc += self.increment_slice(i)[from * self.n_states + to];
                acc
            })
            .collect();
        StepFunction::new(self.window_start, 0.0, self.jump_times.clone(), values)
    }

    /// Row vector `p · ∏_{u ∈ (window_start, t]} (I + ΔΛ̂(u))` for every jump time.
    pub fn propagate(&self, initial: Vec<f64>) -> StepFunction<Vec<f64>> {
        let k = self.n_states;
        let mut current = initial.clone();
        let mut values = Vec::with_capacity(self.jump_times.len());
        for i in 0..self.jump_times.len() {
            current = step_row(&current, self.increment_slice(i), k);
            values.push(current.clone());
        }
        StepFunction::new(self.window_start, initial, self.jump_times.clone(), values)
    }
}

/// `p · (I + Δ)` for a row vector `p`.
pub(crate) fn step_row(p: &[f64], inc: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (j, &pj) in p.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        let row = &inc[j * k..(j + 1) * k];
        for (col, &d) in row.iter().enumerate() {
            let factor = if col == j { (1.0 + d).max(0.0) } else { d };
            out[col] += pj * factor;
        }
    }
    out
}

/// Nelson-Aalen increments ΔΛ̂_jk(u) = J_j(u) ΔN̄_jk(u) / Ȳ_j(u).
pub fn nelson_aalen(agg: &AggregatedProcesses, space: &StateSpace) -> CumulativeHazardMatrix {
    let k = space.n_states();
    let transitions = space.transitions();
    let times = agg.event_times().to_vec();
    let mut increments = vec![0.0; times.len() * k * k];
    for i in 0..times.len() {
        let block = &mut increments[i * k * k..(i + 1) * k * k];
        for (e, t) in transitions.iter().enumerate() {
            let y = agg.at_risk(i, t.from);
            let d = agg.jump_count(i, e);
            if y > 0 && d > 0 {
                block[t.from * k + t.to] = d as f64 / y as f64;
            }
        }
    }
    CumulativeHazardMatrix::from_offdiagonal(k, agg.window_start(), times, increments)
}

/// Ordered product `∏_{u ∈ (s, t]} (I + ΔΛ̂(u))`, increasing in `u`.
pub fn product_integral(haz: &CumulativeHazardMatrix, s: f64, t: f64) -> Result<DMatrix<f64>> {
    if s > t {
        return Err(MsmError::InvalidArgument(format!(
            "product integral needs s <= t, got s = {s}, t = {t}"
        )));
    }
    if s < haz.window_start {
        return Err(MsmError::InvalidArgument(format!(
            "s = {s} precedes the hazard window start {}",
            haz.window_start
        )));
    }
    let k = haz.n_states;
    let lo = haz.jump_times.partition_point(|&u| u <= s);
    let hi = haz.jump_times.partition_point(|&u| u <= t);
    let mut prod = DMatrix::<f64>::identity(k, k);
    for i in lo..hi {
        let factor = DMatrix::<f64>::identity(k, k) + haz.increment(i);
        prod *= factor;
    }
    Ok(prod)
}

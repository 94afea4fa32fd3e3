//! Right-continuous step functions.

use serde::{Deserialize, Serialize};

/// A right-continuous step function with value `initial` on
/// `[origin, times[0])` and `values[i]` on `[times[i], times[i+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction<V> {
    pub origin: f64,
    pub initial: V,
    pub times: Vec<f64>,
    pub values: Vec<V>,
}

impl<V> StepFunction<V> {
    pub fn constant(origin: f64, value: V) -> Self {
        Self {
            origin,
            initial: value,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// `times` must be strictly increasing and the same length as `values`.
    pub fn new(origin: f64, initial: V, times: Vec<f64>, values: Vec<V>) -> Self {
        assert_eq!(times.len(), values.len(), "one value per jump time");
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]), "jump times must increase");
        Self {
            origin,
            initial,
            times,
            values,
        }
    }

    /// Value of the last jump at or before `t`.
    pub fn eval(&self, t: f64) -> &V {
        match self.times.partition_point(|&u| u <= t) {
            0 => &self.initial,
            n => &self.values[n - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `(time, value)` pairs, starting with `(origin, initial)`.
    pub fn points(&self) -> impl Iterator<Item = (f64, &V)> {
        std::iter::once((self.origin, &self.initial))
            .chain(self.times.iter().copied().zip(self.values.iter()))
    }

    pub fn map<W>(&self, mut f: impl FnMut(&V) -> W) -> StepFunction<W> {
        StepFunction {
            origin: self.origin,
            initial: f(&self.initial),
            times: self.times.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }
}

impl StepFunction<Vec<f64>> {
    /// Component `k` of a vector-valued curve.
    pub fn component(&self, k: usize) -> StepFunction<f64> {
        self.map(|v| v[k])
    }
}

/// Sorted union of several sorted time sets, without duplicates.
pub fn union_times<'a>(sets: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut all: Vec<f64> = sets.into_iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

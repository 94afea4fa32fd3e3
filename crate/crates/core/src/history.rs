//! Individual event histories and landmark subsetting.

use serde::{Deserialize, Serialize};

use crate::error::{MsmError, Result};
use crate::space::StateSpace;

/// One observed jump of a subject's path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

/// A subject's right-continuous path on `[0, min(censor_time, horizon)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventHistory {
    pub id: String,
    pub initial_state: usize,
    pub jumps: Vec<Jump>,
    pub censor_time: Option<f64>,
    pub horizon: f64,
}

impl EventHistory {
    /// Builds and validates a history against `space`.
    pub fn new(
        id: impl Into<String>,
        initial_state: usize,
        jumps: Vec<Jump>,
        censor_time: Option<f64>,
        horizon: f64,
        space: &StateSpace,
    ) -> Result<Self> {
        let h = Self {
            id: id.into(),
            initial_state,
            jumps,
            censor_time,
            horizon,
        };
        h.validate(space)?;
        Ok(h)
    }

    /// End of observation: `min(censor_time, horizon)`.
    pub fn end(&self) -> f64 {
        match self.censor_time {
            Some(c) => c.min(self.horizon),
            None => self.horizon,
        }
    }

    pub fn final_state(&self) -> usize {
        self.jumps.last().map_or(self.initial_state, |j| j.to)
    }

    pub fn validate(&self, space: &StateSpace) -> Result<()> {
        let fail = |record: usize, reason: String| MsmError::InvalidHistory {
            subject: self.id.clone(),
            record,
            reason,
        };
        let k = space.n_states();
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(fail(0, format!("horizon {} must be positive", self.horizon)));
        }
        if let Some(c) = self.censor_time {
            if !(c.is_finite() && c >= 0.0) {
                return Err(fail(0, format!("censor time {c} must be nonnegative")));
            }
        }
        if self.initial_state >= k {
            return Err(fail(0, format!("initial state {} out of range", self.initial_state + 1)));
        }
        let end = self.end();
        let mut current = self.initial_state;
        let mut last_time = 0.0;
        for (r, jump) in self.jumps.iter().enumerate() {
            let record = r + 1;
            if !(jump.time.is_finite() && jump.time > 0.0) {
                return Err(fail(record, format!("jump time {} must be positive", jump.time)));
            }
            if r > 0 && jump.time <= last_time {
                return Err(fail(
                    record,
                    format!("jump time {} not after previous jump at {last_time}", jump.time),
                ));
            }
            if jump.time > end {
                return Err(fail(
                    record,
                    format!("jump time {} after end of observation {end}", jump.time),
                ));
            }
            if jump.from != current {
                return Err(fail(
                    record,
                    format!(
                        "chain break: jump leaves state {} but subject is in state {}",
                        label(space, jump.from),
                        label(space, current)
                    ),
                ));
            }
            if space.transition_index(jump.from, jump.to).is_none() {
                return Err(fail(
                    record,
                    format!(
                        "transition {}->{} is not allowed",
                        label(space, jump.from),
                        label(space, jump.to)
                    ),
                ));
            }
            current = jump.to;
            last_time = jump.time;
        }
        Ok(())
    }

    /// Right-continuous state value `X(t)`.
    pub fn state_at(&self, t: f64) -> Result<usize> {
        let end = self.end();
        if !(t >= 0.0 && t <= end) {
            return Err(MsmError::OutsideObservation {
                subject: self.id.clone(),
                time: t,
                end,
            });
        }
        Ok(self.state_at_unchecked(t))
    }

    pub(crate) fn state_at_unchecked(&self, t: f64) -> usize {
        let n = self.jumps.partition_point(|j| j.time <= t);
        if n == 0 {
            self.initial_state
        } else {
            self.jumps[n - 1].to
        }
    }

    /// True if the subject is still under observation just after `s`.
    pub fn observed_after(&self, s: f64) -> bool {
        self.end() > s
    }

    /// Consecutive sojourns `(start, stop]` in a state, clipped to `(s, end]`.
    pub(crate) fn sojourns_after(&self, s: f64) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let end = self.end();
        let first = self.jumps.partition_point(|j| j.time <= s);
        let start_state = if first == 0 {
            self.initial_state
        } else {
            self.jumps[first - 1].to
        };
        let rest = &self.jumps[first..];
        let mut state = start_state;
        let mut start = s;
        let mut i = 0;
        let mut done = end <= s;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            if i < rest.len() {
                let j = rest[i];
                let item = (state, start, j.time);
                state = j.to;
                start = j.time;
                i += 1;
                Some(item)
            } else {
                done = true;
                Some((state, start, end))
            }
        })
    }
}

fn label(space: &StateSpace, state: usize) -> String {
    if state < space.n_states() {
        space.label(state).to_string()
    } else {
        format!("#{}", state + 1)
    }
}

/// Subjects under observation just after `s` whose state `X(s)` lies in
/// `states`, in input order.
pub fn landmark_subset<'a, I>(histories: I, s: f64, states: &[usize]) -> Vec<&'a EventHistory>
where
    I: IntoIterator<Item = &'a EventHistory>,
{
    histories
        .into_iter()
        .filter(|h| h.observed_after(s) && states.contains(&h.state_at_unchecked(s)))
        .collect()
}

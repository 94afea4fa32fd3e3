//! State spaces: a finite set of states and the allowed direct transitions.

use serde::{Deserialize, Serialize};

use crate::error::{MsmError, Result};

/// A direct transition `from -> to` between two (zero-based) states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
}

impl Transition {
    pub const fn new(from: usize, to: usize) -> Self {
        Self { from, to }
    }
}

impl std::fmt::Display for Transition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}->{}", self.from + 1, self.to + 1)
    }
}

/// States are indexed `0..n_states`; labels are only used for I/O.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    labels: Vec<String>,
    transitions: Vec<Transition>,
    // transition index lookup, row-major `from * K + to`
    index: Vec<Option<usize>>,
    absorbing: Vec<bool>,
}

impl StateSpace {
    /// Builds a space with labels `"1"..="K"`.
    pub fn new(n_states: usize, transitions: Vec<Transition>) -> Result<Self> {
        let labels = (1..=n_states).map(|i| i.to_string()).collect();
        Self::with_labels(labels, transitions)
    }

    pub fn with_labels(labels: Vec<String>, transitions: Vec<Transition>) -> Result<Self> {
        let k = labels.len();
        if k == 0 {
            return Err(MsmError::InvalidStateSpace("no states".into()));
        }
        if transitions.is_empty() {
            return Err(MsmError::InvalidStateSpace("no transitions".into()));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(MsmError::InvalidStateSpace(format!("duplicate label {a:?}")));
            }
        }
        let mut index = vec![None; k * k];
        for (i, t) in transitions.iter().enumerate() {
            if t.from >= k || t.to >= k {
                return Err(MsmError::InvalidStateSpace(format!(
                    "transition {}->{} refers to a state outside 1..={k}",
                    t.from + 1,
                    t.to + 1
                )));
            }
            if t.from == t.to {
                return Err(MsmError::InvalidStateSpace(format!(
                    "self-transition {}->{}",
                    t.from + 1,
                    t.to + 1
                )));
            }
            let slot = &mut index[t.from * k + t.to];
            if slot.is_some() {
                return Err(MsmError::InvalidStateSpace(format!("duplicate transition {t}")));
            }
            *slot = Some(i);
        }
        let mut absorbing = vec![true; k];
        for t in &transitions {
            absorbing[t.from] = false;
        }
        Ok(Self {
            labels,
            transitions,
            index,
            absorbing,
        })
    }

    /// Illness-death model with recovery: 1 <-> 2, both to absorbing 3.
    pub fn illness_death_recovery() -> Self {
        Self::new(
            3,
            vec![
                Transition::new(0, 1),
                Transition::new(0, 2),
                Transition::new(1, 0),
                Transition::new(1, 2),
            ],
        )
        .expect("static state space is valid")
    }

    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, state: usize) -> &str {
        &self.labels[state]
    }

    pub fn state_by_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Position of `from -> to` in [`Self::transitions`].
    pub fn transition_index(&self, from: usize, to: usize) -> Option<usize> {
        let k = self.n_states();
        if from >= k || to >= k {
            return None;
        }
        self.index[from * k + to]
    }

    pub fn contains(&self, t: Transition) -> bool {
        self.transition_index(t.from, t.to).is_some()
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.absorbing[state]
    }

    pub fn absorbing_states(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&j| self.absorbing[j]).collect()
    }

    /// Label form of a transition, e.g. `work->sick`.
    pub fn transition_label(&self, t: Transition) -> String {
        format!("{}->{}", self.labels[t.from], self.labels[t.to])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn illness_death_has_one_absorbing_state() {
        let space = StateSpace::illness_death_recovery();
        assert_eq!(space.absorbing_states(), vec![2]);
        assert_eq!(space.transition_index(1, 0), Some(2));
        assert_eq!(space.transition_index(2, 0), None);
    }

    #[test]
    fn rejects_bad_transitions() {
        assert!(StateSpace::new(2, vec![]).is_err());
        assert!(StateSpace::new(2, vec![Transition::new(0, 0)]).is_err());
        assert!(StateSpace::new(2, vec![Transition::new(0, 2)]).is_err());
        assert!(StateSpace::new(2, vec![Transition::new(0, 1), Transition::new(0, 1)]).is_err());
    }
}

#![allow(dead_code)]

use msm_hybrid::{EventHistory, Jump, StateSpace, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random space on 3..=5 states where every state has at least one
/// possible destination except (possibly) a last absorbing one.
pub fn random_space(rng: &mut impl Rng) -> StateSpace {
    let k = rng.random_range(3..=5);
    let absorbing_last = rng.random_bool(0.7);
    let mut transitions = Vec::new();
    for from in 0..k {
        if absorbing_last && from == k - 1 {
            continue;
        }
        let mut any = false;
        for to in 0..k {
            if to != from && rng.random_bool(0.5) {
                transitions.push(Transition::new(from, to));
                any = true;
            }
        }
        if !any {
            transitions.push(Transition::new(from, (from + 1) % k));
        }
    }
    StateSpace::new(k, transitions).unwrap()
}

#[derive(Clone, Copy)]
pub struct CohortOptions {
    pub horizon: f64,
    pub censoring: bool,
    /// Round jump times up to whole units so ties occur.
    pub integer_times: bool,
}

impl Default for CohortOptions {
    fn default() -> Self {
        Self {
            horizon: 20.0,
            censoring: false,
            integer_times: false,
        }
    }
}

/// Constant-intensity paths with subject-specific rates from a random start.
pub fn random_cohort(rng: &mut impl Rng, space: &StateSpace, n: usize, opts: CohortOptions) -> Vec<EventHistory> {
    let k = space.n_states();
    (0..n)
        .map(|i| {
            let initial = rng.random_range(0..k);
            let censor = opts
                .censoring
                .then(|| rng.random_range(0.0..opts.horizon * 1.2))
                .filter(|c| *c < opts.horizon);
            let end = censor.unwrap_or(opts.horizon);
            let mut jumps = Vec::new();
            let mut state = initial;
            let mut t = 0.0f64;
            loop {
                let out: Vec<Transition> = space.transitions().iter().copied().filter(|tr| tr.from == state).collect();
                if out.is_empty() {
                    break;
                }
                t += -rng.random::<f64>().max(1e-300).ln() * rng.random_range(1.0..8.0);
                let time = if opts.integer_times { t.ceil().max(1.0) } else { t };
                if time > end || jumps.last().is_some_and(|j: &Jump| time <= j.time) {
                    break;
                }
                let next = out[rng.random_range(0..out.len())].to;
                jumps.push(Jump { time, from: state, to: next });
                state = next;
                t = time;
            }
            EventHistory::new(i.to_string(), initial, jumps, censor, opts.horizon, space).unwrap()
        })
        .collect()
}

/// Fraction of `subset` in each state at `t`.
pub fn empirical_occupation(subset: &[&EventHistory], k: usize, t: f64) -> Vec<f64> {
    let mut v = vec![0.0; k];
    for h in subset {
        v[h.state_at(t).unwrap()] += 1.0;
    }
    v.iter().map(|x| x / subset.len() as f64).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

type Matrix = Vec<Vec<f64>>;

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for l in 0..n {
            let ail = a[i][l];
            for j in 0..n {
                c[i][j] += ail * b[l][j];
            }
        }
    }
    c
}

/// Matrix exponential by scaling and squaring with a Taylor series.
pub fn expm(q: &Matrix, t: f64) -> Matrix {
    let n = q.len();
    let norm = q.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max) * t.abs();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = t / 2f64.powi(squarings as i32);
    let a: Matrix = q.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
    let mut result: Matrix = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut term = result.clone();
    for m in 1..=30 {
        term = matmul(&term, &a);
        for row in term.iter_mut() {
            row.iter_mut().for_each(|x| *x /= m as f64);
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

/// Generator matrix from per-transition rates.
pub fn generator(space: &StateSpace, rates: &[f64]) -> Matrix {
    let k = space.n_states();
    let mut q = vec![vec![0.0; k]; k];
    for (tr, &r) in space.transitions().iter().zip(rates) {
        q[tr.from][tr.to] += r;
        q[tr.from][tr.from] -= r;
    }
    q
}

//! Long-format event data, state-space definitions and CSV output.
//!
//! Input rows are `id,time,from,to[,censor_time]`, one per observed
//! transition. A row with `from == to` at time 0 records the initial state of
//! a subject (required for subjects that never move).

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MsmError, Result};
use crate::history::{EventHistory, Jump};
use crate::inference::ConfidenceBand;
use crate::markov_test::MarkovTestReport;
use crate::space::{StateSpace, Transition};
use crate::step::StepFunction;

/// JSON form of a state space: labels and allowed transitions as label pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceFile {
    pub states: Vec<String>,
    pub transitions: Vec<(String, String)>,
}

impl StateSpaceFile {
    pub fn from_space(space: &StateSpace) -> Self {
        Self {
            states: space.labels().to_vec(),
            transitions: space
                .transitions()
                .iter()
                .map(|t| (space.label(t.from).to_string(), space.label(t.to).to_string()))
                .collect(),
        }
    }

    pub fn into_space(self) -> Result<StateSpace> {
        let find = |l: &str| {
            self.states
                .iter()
                .position(|s| s == l)
                .ok_or_else(|| MsmError::InvalidStateSpace(format!("unknown state label {l:?}")))
        };
        let transitions = self
            .transitions
            .iter()
            .map(|(a, b)| Ok(Transition::new(find(a)?, find(b)?)))
            .collect::<Result<Vec<_>>>()?;
        StateSpace::with_labels(self.states.clone(), transitions)
    }
}

pub fn load_state_space(path: &Path) -> Result<StateSpace> {
    let text = std::fs::read_to_string(path).map_err(|e| input_error(path, e))?;
    let file: StateSpaceFile = serde_json::from_str(&text).map_err(|e| input_error(path, e))?;
    file.into_space()
}

fn input_error(path: &Path, e: impl std::fmt::Display) -> MsmError {
    MsmError::Input {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// End of follow-up τ for every subject.
    pub horizon: f64,
    /// Abort on the first invalid subject instead of dropping it.
    pub strict: bool,
    /// Keep only these subject ids.
    pub subjects: Option<HashSet<String>>,
}

impl ParseOptions {
    pub fn strict(horizon: f64) -> Self {
        Self {
            horizon,
            strict: true,
            subjects: None,
        }
    }
}

/// A subject dropped in lenient mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub subject: String,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParsedCohort {
    pub histories: Vec<EventHistory>,
    pub rejected: Vec<Rejection>,
}

struct Row {
    line: u64,
    time: f64,
    from: usize,
    to: usize,
    censor: Option<f64>,
}

pub fn parse_long_csv(path: &Path, space: &StateSpace, opts: &ParseOptions) -> Result<ParsedCohort> {
    let file = std::fs::File::open(path).map_err(|e| input_error(path, e))?;
    parse_long_csv_reader(file, &path.display().to_string(), space, opts)
}

/// Parses long-format rows from any reader; `source` names it in errors.
pub fn parse_long_csv_reader<R: Read>(
    reader: R,
    source: &str,
    space: &StateSpace,
    opts: &ParseOptions,
) -> Result<ParsedCohort> {
    let err = |reason: String| MsmError::Input {
        path: source.to_string(),
        reason,
    };
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(c_id), Some(c_time), Some(c_from), Some(c_to)) = (col("id"), col("time"), col("from"), col("to")) else {
        return Err(err("header must contain id,time,from,to".into()));
    };
    let c_censor = col("censor_time");

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, std::result::Result<Vec<Row>, Rejection>> = HashMap::new();
    for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(c).unwrap_or("");
        let id = field(c_id).to_string();
        if id.is_empty() {
            if opts.strict {
                return Err(err(format!("line {line}: missing subject id")));
            }
            log::warn!("{source}: line {line}: missing subject id; row skipped");
            continue;
        }
        if let Some(keep) = &opts.subjects {
            if !keep.contains(&id) {
                continue;
            }
        }
        let parsed = (|| -> std::result::Result<Row, String> {
            let time: f64 = field(c_time)
                .parse()
                .map_err(|_| format!("bad time {:?}", field(c_time)))?;
            let state = |c: usize| {
                space
                    .state_by_label(field(c))
                    .ok_or_else(|| format!("unknown state label {:?}", field(c)))
            };
            let censor = match c_censor.map(field) {
                None | Some("") => None,
                Some(v) => Some(v.parse().map_err(|_| format!("bad censor_time {v:?}"))?),
            };
            Ok(Row {
                line,
                time,
                from: state(c_from)?,
                to: state(c_to)?,
                censor,
            })
        })();
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Ok(Vec::new())
        });
        match (entry.as_mut(), parsed) {
            (Ok(list), Ok(row)) => list.push(row),
            (Ok(_), Err(reason)) => {
                *entry = Err(Rejection {
                    subject: id.clone(),
                    line,
                    reason,
                })
            }
            (Err(_), _) => {}
        }
    }

    let mut histories = Vec::with_capacity(order.len());
    let mut rejected = Vec::new();
    for id in order {
        let outcome = match rows.remove(&id).expect("grouped id") {
            Ok(list) => assemble(&id, list, space, opts.horizon),
            Err(r) => Err(r),
        };
        match outcome {
            Ok(h) => histories.push(h),
            Err(r) => {
                if opts.strict {
                    return Err(err(format!("subject {}: line {}: {}", r.subject, r.line, r.reason)));
                }
                log::warn!("{source}: dropping subject {} (line {}): {}", r.subject, r.line, r.reason);
                rejected.push(r);
            }
        }
    }
    Ok(ParsedCohort { histories, rejected })
}

fn assemble(id: &str, rows: Vec<Row>, space: &StateSpace, horizon: f64) -> std::result::Result<EventHistory, Rejection> {
    let reject = |line: u64, reason: String| Rejection {
        subject: id.to_string(),
        line,
        reason,
    };
    let mut censor: Option<f64> = None;
    for r in &rows {
        if let Some(c) = r.censor {
            match censor {
                Some(prev) if prev != c => return Err(reject(r.line, format!("conflicting censor_time {c} vs {prev}"))),
                _ => censor = Some(c),
            }
        }
    }
    for w in rows.windows(2) {
        if w[1].time < w[0].time {
            return Err(reject(w[1].line, format!("time {} out of order (previous row at {})", w[1].time, w[0].time)));
        }
    }
    let mut initial = None;
    let mut jumps = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.from == r.to {
            if i != 0 || r.time != 0.0 {
                return Err(reject(r.line, "initial-state rows (from = to) must come first at time 0".into()));
            }
            initial = Some(r.from);
            continue;
        }
        jumps.push(Jump {
            time: r.time,
            from: r.from,
            to: r.to,
        });
    }
    let initial = match (initial, jumps.first()) {
        (Some(s), _) => s,
        (None, Some(j)) => j.from,
        (None, None) => return Err(reject(rows.first().map_or(0, |r| r.line), "no rows".into())),
    };
    EventHistory::new(id, initial, jumps, censor, horizon, space).map_err(|e| match e {
        MsmError::InvalidHistory { record, reason, .. } => {
            // record 1 is the first jump row
            let offset = usize::from(rows.first().is_some_and(|r| r.from == r.to));
            let line = rows.get(record.saturating_sub(1) + offset).map_or(0, |r| r.line);
            reject(line, reason)
        }
        other => reject(0, other.to_string()),
    })
}

/// Writes histories in long format; subjects without jumps get an
/// initial-state row.
pub fn write_long_csv<W: Write>(histories: &[EventHistory], space: &StateSpace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "time", "from", "to", "censor_time"])?;
    for h in histories {
        let censor = h.censor_time.map(|c| c.to_string()).unwrap_or_default();
        if h.jumps.is_empty() {
            let l = space.label(h.initial_state);
            w.write_record([h.id.as_str(), "0", l, l, &censor])?;
        }
        for j in &h.jumps {
            w.write_record([
                h.id.as_str(),
                &j.time.to_string(),
                space.label(j.from),
                space.label(j.to),
                &censor,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn landmark_label(space: &StateSpace, states: &[usize]) -> String {
    states.iter().map(|&j| space.label(j)).collect::<Vec<_>>().join("+")
}

/// Curve CSV: `t, P_<l>_<k>...` with one row per jump (plus the origin),
/// optionally followed by `lower_<k>`/`upper_<k>` band columns.
pub fn write_curve_csv<W: Write>(
    curve: &StepFunction<Vec<f64>>,
    landmark_states: &[usize],
    space: &StateSpace,
    band: Option<&ConfidenceBand>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let l = landmark_label(space, landmark_states);
    let mut header = vec!["t".to_string()];
    header.extend(space.labels().iter().map(|k| format!("P_{l}_{k}")));
    if band.is_some() {
        header.extend(space.labels().iter().map(|k| format!("lower_{l}_{k}")));
        header.extend(space.labels().iter().map(|k| format!("upper_{l}_{k}")));
    }
    w.write_record(&header)?;
    let times: Vec<f64> = match band {
        Some(b) => std::iter::once(b.estimate.origin).chain(b.estimate.times.iter().copied()).collect(),
        None => curve.points().map(|(t, _)| t).collect(),
    };
    for (i, &t) in times.iter().enumerate() {
        let value = if i == 0 { &curve.initial } else { curve.eval(t) };
        let mut row = vec![t.to_string()];
        row.extend(value.iter().map(|p| p.to_string()));
        if let Some(b) = band {
            let (lo, hi) = if i == 0 {
                (&b.lower.initial, &b.upper.initial)
            } else {
                (b.lower.eval(t), b.upper.eval(t))
            };
            row.extend(lo.iter().map(|p| p.to_string()));
            row.extend(hi.iter().map(|p| p.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-transition test table.
pub fn write_test_report_csv<W: Write>(
    reports: &[MarkovTestReport],
    selected: Option<&[Transition]>,
    space: &StateSpace,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "transition",
        "method",
        "landmark_times",
        "statistic",
        "point_statistics",
        "p_value",
        "replicates",
        "group_sizes",
        "degenerate",
    ];
    if selected.is_some() {
        header.push("selected");
    }
    w.write_record(&header)?;
    let join = |v: Vec<String>| v.join(" ");
    for r in reports {
        let mut row = vec![
            space.transition_label(r.transition),
            format!("{:?}", r.method).to_lowercase(),
            join(r.landmark_times.iter().map(|t| t.to_string()).collect()),
            r.statistic.to_string(),
            join(r.point_statistics.iter().map(|t| t.to_string()).collect()),
            r.p_value.to_string(),
            r.replicates.to_string(),
            join(r.group_sizes.iter().map(|(a, b)| format!("{a}/{b}")).collect()),
            r.degenerate.to_string(),
        ];
        if let Some(sel) = selected {
            row.push(sel.contains(&r.transition).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `"2->1,2->3"` (labels) into transitions; empty input is the empty set.
pub fn parse_transition_list(text: &str, space: &StateSpace) -> Result<Vec<Transition>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (a, b) = item
                .split_once("->")
                .ok_or_else(|| MsmError::InvalidArgument(format!("transition {item:?} is not of the form a->b")))?;
            let (from, to) = (label_to_state(a.trim(), space)?, label_to_state(b.trim(), space)?);
            let t = Transition::new(from, to);
            if !space.contains(t) {
                return Err(MsmError::InvalidArgument(format!("transition {item:?} is not allowed")));
            }
            Ok(t)
        })
        .collect()
}

pub fn label_to_state(label: &str, space: &StateSpace) -> Result<usize> {
    space
        .state_by_label(label)
        .ok_or_else(|| MsmError::InvalidArgument(format!("unknown state label {label:?}")))
}

/// Parses a comma-separated list of state labels.
pub fn parse_state_list(text: &str, space: &StateSpace) -> Result<Vec<usize>> {
    let states: Vec<usize> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|l| label_to_state(l, space))
        .collect::<Result<_>>()?;
    if states.is_empty() {
        return Err(MsmError::InvalidArgument("empty state list".into()));
    }
    Ok(states)
}

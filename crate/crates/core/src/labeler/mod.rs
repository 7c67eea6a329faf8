//! Mode and action labels for enriched trajectories.
//!
//! An event's actual RATP is the latest conflicting point shortly before
//! the associated point. Conflicting points in the window preceding it are
//! relabelled C1 (annotated RATPs); conflict-free points there are dropped.
//! Everything else is C2 under conflict and C0 otherwise.

mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confdet::{EnrichedFlight, EnrichedPoint};
use crate::geokin::wrap_angle;
use crate::trajstore::{FlightId, GRID_STEP_S};

pub use io::{read_action_events, read_eval_rows, read_labeled, write_action_events, write_labeled, write_priors, EvalRow};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("flight {flight}: resolution code `{code}` has no entry in code_map")]
    UnmappedCode { flight: String, code: String },
    #[error("invalid label config: {0}")]
    Config(String),
    #[error("empty dataset")]
    Empty,
    #[error("unknown {kind} `{value}`")]
    Parse { kind: &'static str, value: String },
    #[error("{path}:{line}: {msg}")]
    Malformed { path: String, line: u64, msg: String },
    #[error(transparent)]
    Detect(#[from] crate::confdet::DetectError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    C0,
    C1,
    C2,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::C0, Mode::C1, Mode::C2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionClass {
    A0,
    A1,
    A2,
}

impl ActionClass {
    pub const ALL: [ActionClass; 3] = [ActionClass::A0, ActionClass::A1, ActionClass::A2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

macro_rules! text_enum {
    ($t:ty, $kind:literal, [$($v:ident),*]) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $(Self::$v => f.write_str(stringify!($v)),)*
                }
            }
        }

        impl FromStr for $t {
            type Err = LabelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $(stringify!($v) => Ok(Self::$v),)*
                    other => Err(LabelError::Parse { kind: $kind, value: other.to_string() }),
                }
            }
        }
    };
}

text_enum!(Mode, "mode", [C0, C1, C2]);
text_enum!(ActionClass, "action class", [A0, A1, A2]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Seconds before an actual RATP relabelled as C1.
    pub augment_window_s: i64,
    /// Seconds before the associated point searched for a conflict.
    pub window_duration_s: i64,
    /// Keep one C0/C2 row in every `step`.
    pub step: usize,
    pub code_map: BTreeMap<String, ActionClass>,
    /// Keep only flights with at least one located actual RATP.
    pub require_action: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            augment_window_s: 250,
            window_duration_s: 70,
            step: 6,
            code_map: BTreeMap::from([("SPD".to_string(), ActionClass::A1), ("DCT".to_string(), ActionClass::A2)]),
            require_action: true,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        if self.augment_window_s <= 0 || self.window_duration_s <= 0 {
            return Err(LabelError::Config("windows must be positive".into()));
        }
        if self.step == 0 {
            return Err(LabelError::Config("step must be at least 1".into()));
        }
        if self.code_map.values().any(|a| *a == ActionClass::A0) {
            return Err(LabelError::Config("code_map may only map to A1 or A2".into()));
        }
        Ok(())
    }
}

/// A controller event attached to a flight at a trajectory point.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEvent {
    pub flight: FlightId,
    pub code: String,
    pub event_time: f64,
    /// Timestamp of the associated trajectory point.
    pub point_time: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContinuousActions {
    /// Degrees.
    pub d_course: f64,
    /// Knots.
    pub d_sh: f64,
    /// Feet per minute.
    pub d_sv: f64,
    /// Seconds to the next emitted row.
    pub d_t: f64,
}

impl ContinuousActions {
    pub fn to_array(&self) -> [f64; 4] {
        [self.d_course, self.d_sh, self.d_sv, self.d_t]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub point: EnrichedPoint,
    pub mode: Mode,
    pub action: ActionClass,
    pub cont: ContinuousActions,
    pub is_actual_ratp: bool,
    pub is_annotated_ratp: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFlight {
    pub id: FlightId,
    pub rows: Vec<LabeledRow>,
}

/// Index of the actual RATP for an event associated at `point_time`: the
/// conflicting point in `[point_time - window, point_time]` closest to it.
pub fn locate_actual_ratp(points: &[EnrichedPoint], point_time: i64, window_duration_s: i64) -> Option<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.conflict && p.timestamp <= point_time && point_time - p.timestamp <= window_duration_s)
        .max_by_key(|(_, p)| p.timestamp)
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelReport {
    pub flights_in: usize,
    pub flights_kept: usize,
    pub flights_without_action: usize,
    pub actual_ratps: usize,
    /// (flight, event time) pairs with no conflict inside the search window.
    pub rejected_events: Vec<(String, String)>,
    /// Events whose actual RATP coincided with an earlier event's.
    pub merged_events: usize,
    pub dropped_window_points: usize,
}

/// Labels before subsampling. Rows without a 5 s successor are dropped;
/// `d_t` is filled with 5 s and finalised by [`subsample`].
pub fn annotate_modes(
    flight: &EnrichedFlight,
    events: &[&ActionEvent],
    config: &LabelConfig,
    report: &mut LabelReport,
) -> Result<Vec<LabeledRow>, LabelError> {
    let pts = &flight.points;
    let mut actual: BTreeMap<usize, ActionClass> = BTreeMap::new();
    for e in events {
        let Some(i) = locate_actual_ratp(pts, e.point_time, config.window_duration_s) else {
            report.rejected_events.push((flight.id.to_string(), e.event_time.to_string()));
            continue;
        };
        let class = *config.code_map.get(&e.code).ok_or_else(|| LabelError::UnmappedCode {
            flight: flight.id.to_string(),
            code: e.code.clone(),
        })?;
        match actual.entry(i) {
            std::collections::btree_map::Entry::Occupied(_) => report.merged_events += 1,
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(class);
            }
        }
    }
    report.actual_ratps += actual.len();

    let ratp_times: Vec<i64> = actual.keys().map(|&i| pts[i].timestamp).collect();
    let in_window = |t: i64| {
        ratp_times
            .iter()
            .any(|&r| t <= r && r - t <= config.augment_window_s)
    };
    let mut rows = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let Some(next) = pts.get(i + 1).filter(|n| n.timestamp == p.timestamp + GRID_STEP_S) else {
            continue;
        };
        let is_actual = actual.contains_key(&i);
        let windowed = in_window(p.timestamp);
        if windowed && !p.conflict {
            report.dropped_window_points += 1;
            continue;
        }
        let mode = if windowed {
            Mode::C1
        } else if p.conflict {
            Mode::C2
        } else {
            Mode::C0
        };
        rows.push(LabeledRow {
            point: p.clone(),
            mode,
            action: actual.get(&i).copied().unwrap_or(ActionClass::A0),
            cont: ContinuousActions {
                d_course: wrap_angle(next.h - p.h),
                d_sh: next.s_h - p.s_h,
                d_sv: next.s_v - p.s_v,
                d_t: GRID_STEP_S as f64,
            },
            is_actual_ratp: is_actual,
            is_annotated_ratp: windowed && !is_actual,
        });
    }
    Ok(rows)
}

/// Keep every C1 row and one in `step` of each run of C0/C2 rows; then set
/// `d_t` to the gap to the next kept row.
pub fn subsample(rows: &[LabeledRow], step: usize) -> Vec<LabeledRow> {
    let step = step.max(1);
    let mut out: Vec<LabeledRow> = Vec::with_capacity(rows.len());
    let mut run = 0usize;
    for r in rows {
        if r.mode == Mode::C1 {
            run = 0;
            out.push(r.clone());
            continue;
        }
        if run.is_multiple_of(step) {
            out.push(r.clone());
        }
        run += 1;
    }
    for i in 0..out.len() {
        out[i].cont.d_t = match out.get(i + 1) {
            Some(n) => (n.point.timestamp - out[i].point.timestamp) as f64,
            None => GRID_STEP_S as f64,
        };
    }
    out
}

/// Mode shares after subsampling at each step.
pub fn prior_report(flights: &[Vec<LabeledRow>], steps: &[usize]) -> Result<Vec<(usize, [f64; 3])>, LabelError> {
    if flights.iter().all(Vec::is_empty) {
        return Err(LabelError::Empty);
    }
    Ok(steps
        .iter()
        .map(|&s| {
            let mut counts = [0usize; 3];
            for f in flights {
                for r in subsample(f, s) {
                    counts[r.mode.index()] += 1;
                }
            }
            let total: usize = counts.iter().sum();
            let shares = counts.map(|c| c as f64 / total as f64);
            (s, shares)
        })
        .collect())
}

/// Label a whole enriched corpus. Returns the subsampled flights and the
/// pre-subsampling rows (for priors).
pub fn label_corpus(
    flights: &[EnrichedFlight],
    events: &[ActionEvent],
    config: &LabelConfig,
) -> Result<(Vec<LabeledFlight>, Vec<Vec<LabeledRow>>, LabelReport), LabelError> {
    config.validate()?;
    let mut report = LabelReport {
        flights_in: flights.len(),
        ..LabelReport::default()
    };
    let mut by_flight: BTreeMap<&FlightId, Vec<&ActionEvent>> = BTreeMap::new();
    for e in events {
        by_flight.entry(&e.flight).or_default().push(e);
    }
    let mut out = Vec::new();
    let mut raw = Vec::new();
    for f in flights {
        let evs = by_flight.get(&f.id).map(Vec::as_slice).unwrap_or(&[]);
        let rows = annotate_modes(f, evs, config, &mut report)?;
        if config.require_action && !rows.iter().any(|r| r.is_actual_ratp) {
            report.flights_without_action += 1;
            continue;
        }
        report.flights_kept += 1;
        out.push(LabeledFlight {
            id: f.id.clone(),
            rows: subsample(&rows, config.step),
        });
        raw.push(rows);
    }
    Ok((out, raw, report))
}

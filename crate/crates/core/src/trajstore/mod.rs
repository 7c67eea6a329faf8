//! Trajectories, controller events, 5-second resampling and event
//! association.

mod io;

pub use io::{
    read_events, read_events_from, read_surveillance, read_surveillance_from, read_tracks, read_tracks_from,
    write_events, write_events_to, write_tracks, write_tracks_to, write_trajectories, write_trajectories_to,
    IngestReport, Ingested,
};

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geokin::{kinematics_along, GeoError, GeoPoint, Kinematics};

/// Resampling grid step, seconds.
pub const GRID_STEP_S: i64 = 5;

/// Gaps between raw points above this split a trajectory (seconds).
pub const DEFAULT_MAX_GAP_S: f64 = 60.0;

/// Gaps above this separate two flights sharing callsign and airports.
pub const FLIGHT_SPLIT_GAP_S: f64 = 4.0 * 3600.0;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("{path}: line {line}: {msg}")]
    Malformed { path: String, line: u64, msg: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("flight {0}: at least two raw points are required to resample")]
    TooFewPoints(String),
    #[error("invalid flight id `{0}`")]
    FlightId(String),
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
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// One surveillance return as read from file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrackPoint {
    pub callsign: String,
    pub apt_from: String,
    pub apt_to: String,
    pub pos: GeoPoint,
    pub timestamp: f64,
}

/// Flight identity. The date is the UTC date of the first surveillance
/// return; `segment` numbers the contiguous pieces of one flight.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlightId {
    pub callsign: String,
    pub apt_from: String,
    pub apt_to: String,
    pub date: String,
    pub segment: u32,
}

impl fmt::Display for FlightId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}:{}",
            self.callsign, self.apt_from, self.apt_to, self.date, self.segment
        )
    }
}

impl FromStr for FlightId {
    type Err = TrajError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 5 {
            return Err(TrajError::FlightId(s.to_string()));
        }
        Ok(Self {
            callsign: parts[0].to_string(),
            apt_from: parts[1].to_string(),
            apt_to: parts[2].to_string(),
            date: parts[3].to_string(),
            segment: parts[4].parse().map_err(|_| TrajError::FlightId(s.to_string()))?,
        })
    }
}

/// Raw returns of one flight, time-sorted.
#[derive(Debug, Clone)]
pub struct RawFlight {
    pub callsign: String,
    pub apt_from: String,
    pub apt_to: String,
    pub date: String,
    pub points: Vec<RawTrackPoint>,
}

/// A resampled point on the 5 s grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub pos: GeoPoint,
    pub timestamp: i64,
    pub kin: Kinematics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: FlightId,
    pub points: Vec<TrackPoint>,
}

impl Trajectory {
    pub fn first_time(&self) -> i64 {
        self.points.first().map(|p| p.timestamp).unwrap_or(0)
    }

    pub fn last_time(&self) -> i64 {
        self.points.last().map(|p| p.timestamp).unwrap_or(0)
    }

    /// Index of the point at exactly `t`, if any.
    pub fn index_at(&self, t: i64) -> Option<usize> {
        self.points.binary_search_by(|p| p.timestamp.cmp(&t)).ok()
    }

    pub fn point_at(&self, t: i64) -> Option<&TrackPoint> {
        self.index_at(t).map(|i| &self.points[i])
    }

    /// Check the grid invariants: strictly increasing 5 s multiples with
    /// 5 s spacing.
    pub fn is_valid_grid(&self) -> bool {
        self.points.iter().all(|p| p.timestamp.rem_euclid(GRID_STEP_S) == 0)
            && self
                .points
                .windows(2)
                .all(|w| w[1].timestamp - w[0].timestamp == GRID_STEP_S)
    }
}

/// A controller resolution-action record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtcoEvent {
    pub callsign: String,
    pub apt_from: String,
    pub apt_to: String,
    pub mwm_code: String,
    pub timestamp: f64,
    pub sector: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub event_index: usize,
    pub event: AtcoEvent,
    pub trajectory_index: usize,
    pub flight: FlightId,
    pub point_index: usize,
    pub point_timestamp: i64,
}

#[derive(Debug, Clone, Default)]
pub struct AssociationOutcome {
    pub associations: Vec<Association>,
    /// Events no trajectory satisfies.
    pub unassociated: Vec<usize>,
    /// Events matched by more than one trajectory; skipped.
    pub ambiguous: Vec<usize>,
}

/// UTC calendar date of an epoch timestamp.
pub fn utc_date(ts: f64) -> String {
    chrono::DateTime::from_timestamp(ts.floor() as i64, 0)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| "1970-01-01".to_string())
}

/// Split raw returns of one flight into contiguous runs and interpolate
/// each run at every multiple of 5 s inside it.
///
/// Raw gaps longer than `max_gap_s` start a new segment. Runs too short to
/// hold two grid points are dropped.
pub fn resample_5s(raw: &RawFlight, max_gap_s: f64) -> Result<Vec<Trajectory>, TrajError> {
    let id_str = || format!("{}:{}:{}:{}", raw.callsign, raw.apt_from, raw.apt_to, raw.date);
    if raw.points.len() < 2 {
        return Err(TrajError::TooFewPoints(id_str()));
    }
    let mut runs: Vec<&[RawTrackPoint]> = Vec::new();
    let mut start = 0;
    for i in 1..raw.points.len() {
        if raw.points[i].timestamp - raw.points[i - 1].timestamp > max_gap_s {
            runs.push(&raw.points[start..i]);
            start = i;
        }
    }
    runs.push(&raw.points[start..]);

    let mut out = Vec::new();
    for run in runs {
        let samples = interpolate_run(run);
        if samples.len() < 2 {
            continue;
        }
        let timed: Vec<(GeoPoint, f64)> = samples.iter().map(|(p, t)| (*p, *t as f64)).collect();
        let kin = kinematics_along(&timed)?;
        let points = samples
            .into_iter()
            .zip(kin)
            .map(|((pos, timestamp), kin)| TrackPoint { pos, timestamp, kin })
            .collect();
        out.push(Trajectory {
            id: FlightId {
                callsign: raw.callsign.clone(),
                apt_from: raw.apt_from.clone(),
                apt_to: raw.apt_to.clone(),
                date: raw.date.clone(),
                segment: out.len() as u32,
            },
            points,
        });
    }
    Ok(out)
}

fn interpolate_run(run: &[RawTrackPoint]) -> Vec<(GeoPoint, i64)> {
    let t0 = run[0].timestamp;
    let t1 = run[run.len() - 1].timestamp;
    let step = GRID_STEP_S as f64;
    let first = (t0 / step).ceil() as i64 * GRID_STEP_S;
    let last = (t1 / step).floor() as i64 * GRID_STEP_S;
    let mut out = Vec::new();
    let mut j = 0;
    let mut t = first;
    while t <= last {
        let tf = t as f64;
        while j + 1 < run.len() && run[j + 1].timestamp < tf {
            j += 1;
        }
        let a = &run[j];
        let pos = if a.timestamp == tf {
            a.pos
        } else if j + 1 < run.len() && run[j + 1].timestamp == tf {
            run[j + 1].pos
        } else {
            let b = &run[j + 1];
            let f = (tf - a.timestamp) / (b.timestamp - a.timestamp);
            GeoPoint {
                lon: a.pos.lon + (b.pos.lon - a.pos.lon) * f,
                lat: a.pos.lat + (b.pos.lat - a.pos.lat) * f,
                alt: a.pos.alt + (b.pos.alt - a.pos.alt) * f,
            }
        };
        out.push((pos, t));
        t += GRID_STEP_S;
    }
    out
}

/// Keep maximal level stretches: runs where `|v_speed| < vs_threshold_fpm`
/// lasting at least `min_duration_s`. Climb and descent are dropped.
pub fn filter_en_route(traj: &Trajectory, vs_threshold_fpm: f64, min_duration_s: i64) -> Vec<Trajectory> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    let close = |s: usize, e: usize, out: &mut Vec<Trajectory>| {
        if traj.points[e].timestamp - traj.points[s].timestamp >= min_duration_s && e > s {
            out.push(Trajectory {
                id: traj.id.clone(),
                points: traj.points[s..=e].to_vec(),
            });
        }
    };
    for (i, p) in traj.points.iter().enumerate() {
        let level = p.kin.v_speed.abs() < vs_threshold_fpm;
        match (level, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                close(s, i - 1, &mut out);
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        close(s, traj.points.len() - 1, &mut out);
    }
    out
}

/// Preprocessing options for turning raw flights into trajectories.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub max_gap_s: f64,
    pub filter_climb_descent: bool,
    pub level_vs_fpm: f64,
    pub level_min_duration_s: i64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            max_gap_s: DEFAULT_MAX_GAP_S,
            filter_climb_descent: true,
            level_vs_fpm: 500.0,
            level_min_duration_s: 120,
        }
    }
}

/// Resample, optionally keep only en-route stretches, and number the
/// resulting segments consecutively.
pub fn preprocess_flight(raw: &RawFlight, cfg: &PreprocessConfig) -> Result<Vec<Trajectory>, TrajError> {
    let segments = resample_5s(raw, cfg.max_gap_s)?;
    let mut out: Vec<Trajectory> = if cfg.filter_climb_descent {
        segments
            .iter()
            .flat_map(|s| filter_en_route(s, cfg.level_vs_fpm, cfg.level_min_duration_s))
            .collect()
    } else {
        segments
    };
    for (i, t) in out.iter_mut().enumerate() {
        t.id.segment = i as u32;
    }
    Ok(out)
}

/// Index of the point closest in time to `t`; ties go to the earlier point.
pub fn closest_point_index(traj: &Trajectory, t: f64) -> Option<usize> {
    if traj.points.is_empty() {
        return None;
    }
    let idx = traj.points.partition_point(|p| (p.timestamp as f64) < t);
    let after = idx.min(traj.points.len() - 1);
    let before = idx.saturating_sub(1);
    let db = (t - traj.points[before].timestamp as f64).abs();
    let da = (traj.points[after].timestamp as f64 - t).abs();
    Some(match db.partial_cmp(&da) {
        Some(Ordering::Greater) => after,
        _ => before,
    })
}

/// True when `event` may belong to `traj`: same callsign and airports, and
/// the event time falls within the trajectory's time span.
pub fn association_conditions_hold(event: &AtcoEvent, traj: &Trajectory) -> bool {
    !traj.points.is_empty()
        && event.callsign == traj.id.callsign
        && event.apt_from == traj.id.apt_from
        && event.apt_to == traj.id.apt_to
        && traj.first_time() as f64 <= event.timestamp
        && event.timestamp <= traj.last_time() as f64
}

/// Match each event to the single trajectory satisfying all association
/// conditions, at the temporally closest point.
pub fn associate_events(events: &[AtcoEvent], trajectories: &[Trajectory]) -> AssociationOutcome {
    let mut out = AssociationOutcome::default();
    for (ei, ev) in events.iter().enumerate() {
        let matches: Vec<usize> = trajectories
            .iter()
            .enumerate()
            .filter(|(_, t)| association_conditions_hold(ev, t))
            .map(|(i, _)| i)
            .collect();
        match matches.as_slice() {
            [] => out.unassociated.push(ei),
            [ti] => {
                let traj = &trajectories[*ti];
                let pi = closest_point_index(traj, ev.timestamp).expect("nonempty trajectory");
                out.associations.push(Association {
                    event_index: ei,
                    event: ev.clone(),
                    trajectory_index: *ti,
                    flight: traj.id.clone(),
                    point_index: pi,
                    point_timestamp: traj.points[pi].timestamp,
                });
            }
            _ => {
                log::warn!("event {} ({}) matches {} trajectories; skipped", ei, ev.callsign, matches.len());
                out.ambiguous.push(ei);
            }
        }
    }
    out
}

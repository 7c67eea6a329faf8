//! Synthetic en-route traffic with scripted controller reactions.
//!
//! Conflict pairs cross at a chosen point. The aircraft arriving second is
//! the one the scripted controller reacts to: either a speed reduction or
//! an offset heading followed by a direct route to its destination.
//! Before that, a third aircraft (the passer) may cross the follower's track
//! with a miss distance inside the detection margin but well clear of the
//! separation minimum, so the conflict is detected and left alone.
//! Concurrent encounters sit on flight levels far enough apart that only the
//! intended pairs ever conflict.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confdet::{fixpoint_toward_destination, points_conflict, BoundingBox, DetectConfig, EnrichedFlight, EnrichedPoint};
use crate::evofan::DeviationStats;
use crate::geokin::{cpa, destination, horizontal_distance, initial_bearing, wrap_angle, GeoPoint, GeoState, Kinematics};
use crate::labeler::{annotate_modes, ActionClass, ActionEvent, LabelConfig, LabelReport, Mode};
use crate::trajstore::{
    closest_point_index, preprocess_flight, utc_date, write_events, write_trajectories, AtcoEvent, FlightId,
    PreprocessConfig, RawFlight, RawTrackPoint, TrajError, Trajectory, GRID_STEP_S,
};

const MAX_TURN_RATE_DPS: f64 = 3.0;
const MAX_ACCEL_KTPS: f64 = 1.0;
/// Distance from the crossing point to the airports, nm.
const AIRPORT_DISTANCE_NM: f64 = 800.0;
/// CPA distance required before the offset leg turns back, nm.
const REJOIN_CPA_NM: f64 = 18.0;
const MIN_SPEED_KT: f64 = 250.0;
const ESCALATIONS: usize = 4;
const PASSER_TRIES: usize = 20;
/// Shortest detected passer conflict worth keeping, seconds.
const PASSER_MIN_CONFLICT_S: i64 = 240;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario spec: {0}")]
    Spec(String),
    #[error("encounter {index}: no feasible geometry after {tries} draws")]
    Infeasible { index: usize, tries: usize },
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Area in which crossing points are placed.
    pub region: BoundingBox,
    pub flight_count: usize,
    /// Share of flights that belong to a conflict pair.
    pub conflict_pair_fraction: f64,
    pub speed_min_kt: f64,
    pub speed_max_kt: f64,
    /// Flight levels (hundreds of feet) used by concurrent encounters.
    pub flight_levels: Vec<u32>,
    /// Controller delay after the conflict first appears, seconds.
    pub reaction_delay_s: [f64; 2],
    pub pilot_delay_s: [f64; 2],
    /// Share of reactions that are speed changes; the rest are directs.
    pub speed_action_share: f64,
    pub speed_code: String,
    pub direct_code: String,
    /// Crossing angle range, degrees.
    pub crossing_angle_deg: [f64; 2],
    /// Lateness of the second aircraft at the crossing point, seconds.
    pub arrival_offset_s: [f64; 2],
    /// Time from the leader's first surveillance return to the crossing, seconds.
    pub lead_in_s: [f64; 2],
    /// Add a passer to every encounter.
    pub passers: bool,
    /// Nominal miss distance between passer and follower, nm.
    pub passer_miss_nm: [f64; 2],
    /// Time from the follower's first return to the passer crossing, seconds.
    pub passer_crossing_s: [f64; 2],
    /// Quiet time between the passer crossing and the leader's first return.
    pub passer_gap_s: [f64; 2],
    pub start_epoch_s: i64,
    /// Spacing of successive encounter slots, seconds.
    pub slot_s: i64,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            region: BoundingBox {
                lon_min: -5.0,
                lon_max: 0.0,
                lat_min: 38.5,
                lat_max: 40.5,
            },
            flight_count: 330,
            conflict_pair_fraction: 0.95,
            speed_min_kt: 400.0,
            speed_max_kt: 520.0,
            flight_levels: vec![290, 310, 330, 350, 370, 390],
            reaction_delay_s: [0.0, 120.0],
            pilot_delay_s: [5.0, 20.0],
            speed_action_share: 0.5,
            speed_code: "SPD".into(),
            direct_code: "DCT".into(),
            crossing_angle_deg: [45.0, 135.0],
            arrival_offset_s: [10.0, 45.0],
            lead_in_s: [1230.0, 1320.0],
            passers: true,
            passer_miss_nm: [8.0, 12.0],
            passer_crossing_s: [420.0, 600.0],
            passer_gap_s: [300.0, 420.0],
            start_epoch_s: 1_772_431_200,
            slot_s: 3600,
            max_retries: 200,
            seed: 1,
        }
    }
}

fn ordered(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.to_string()));
        for (name, f) in [
            ("conflict_pair_fraction", self.conflict_pair_fraction),
            ("speed_action_share", self.speed_action_share),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.speed_min_kt > MIN_SPEED_KT) || self.speed_max_kt < self.speed_min_kt {
            return bad("speed range must be ordered and above 250 kt");
        }
        for (name, r) in [
            ("reaction_delay_s", self.reaction_delay_s),
            ("pilot_delay_s", self.pilot_delay_s),
            ("crossing_angle_deg", self.crossing_angle_deg),
            ("arrival_offset_s", self.arrival_offset_s),
            ("lead_in_s", self.lead_in_s),
            ("passer_miss_nm", self.passer_miss_nm),
            ("passer_crossing_s", self.passer_crossing_s),
            ("passer_gap_s", self.passer_gap_s),
        ] {
            if !ordered(r) || r[0] < 0.0 {
                return bad(&format!("{name} must be an ordered non-negative range"));
            }
        }
        if self.pilot_delay_s[0] < 1.0 {
            return bad("pilot_delay_s must start at 1 s or later");
        }
        if self.crossing_angle_deg[0] < 10.0 || self.crossing_angle_deg[1] > 170.0 {
            return bad("crossing angles must lie in [10, 170] degrees");
        }
        if self.flight_levels.is_empty() {
            return bad("flight_levels is empty");
        }
        let mut lv = self.flight_levels.clone();
        lv.sort_unstable();
        if lv.windows(2).any(|w| w[1] - w[0] < 20) {
            return bad("flight levels must be at least 2000 ft apart");
        }
        if self.slot_s <= 0 || self.slot_s % GRID_STEP_S != 0 || self.start_epoch_s % GRID_STEP_S != 0 {
            return bad("slot_s and start_epoch_s must be positive multiples of 5 s");
        }
        if self.passers && (self.passer_miss_nm[0] < 6.0 || self.passer_miss_nm[1] >= 15.0) {
            return bad("passer_miss_nm must lie in [6, 15) nm");
        }
        if self.passers && self.passer_gap_s[0] < 260.0 {
            return bad("passer_gap_s must keep the passer clear of the annotation window");
        }
        if (self.lead_in_s[1] + self.pre_leader_s()) as i64 + 900 > self.slot_s {
            return bad("slot_s too short for the lead-in and the resolution");
        }
        if self.speed_code == self.direct_code || self.speed_code.is_empty() || self.direct_code.is_empty() {
            return bad("speed_code and direct_code must be distinct and non-empty");
        }
        Ok(())
    }

    /// Flights per encounter.
    pub fn encounter_size(&self) -> usize {
        if self.passers {
            3
        } else {
            2
        }
    }

    pub fn pair_count(&self) -> usize {
        ((self.flight_count as f64 * self.conflict_pair_fraction) / self.encounter_size() as f64).floor() as usize
    }

    fn pre_leader_s(&self) -> f64 {
        if self.passers {
            self.passer_crossing_s[1] + self.passer_gap_s[1]
        } else {
            0.0
        }
    }
}

/// One scripted encounter; flight indices point into [`Scenario::trajectories`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub leader: usize,
    pub follower: usize,
    pub action: ActionClass,
    /// First 5 s grid time at which the nominal pair is in conflict.
    pub t_c: i64,
    /// Passer index, if the encounter has one.
    pub passer: Option<usize>,
    pub event_time: f64,
    pub maneuver_start: f64,
    /// Grid time after which the follower flies unconstrained again.
    pub completion: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub timestamp: i64,
    pub mode: Mode,
    pub action: ActionClass,
    pub is_actual_ratp: bool,
    pub is_annotated_ratp: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthFlight {
    pub id: FlightId,
    pub rows: Vec<TruthRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Tracks as the ingest stage reconstructs them.
    pub trajectories: Vec<Trajectory>,
    pub events: Vec<AtcoEvent>,
    pub airports: BTreeMap<String, GeoPoint>,
    pub encounters: Vec<Encounter>,
    pub truth: Vec<TruthFlight>,
}

/// A great-circle leg flown at constant speed.
#[derive(Debug, Clone, Copy)]
struct Leg {
    start: GeoPoint,
    course: f64,
    speed: f64,
    t0: f64,
    dest: GeoPoint,
}

impl Leg {
    /// Leg that passes `x` at time `t_x` with course `course` there.
    fn through(x: &GeoPoint, course: f64, speed: f64, t_x: f64, t0: f64) -> Self {
        let back = speed * (t_x - t0) / 3600.0;
        let start = destination(x, course + 180.0, back);
        Self {
            start,
            course: initial_bearing(&start, x),
            speed,
            t0,
            dest: destination(x, course, AIRPORT_DISTANCE_NM),
        }
    }

    fn pos(&self, t: f64) -> GeoPoint {
        destination(&self.start, self.course, self.speed * (t - self.t0) / 3600.0)
    }

    fn state(&self, t: f64) -> GeoState {
        let pos = self.pos(t);
        GeoState {
            pos,
            kin: Kinematics {
                course: initial_bearing(&pos, &self.dest),
                h_speed: self.speed,
                v_speed: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Reaction {
    /// Slow down by this many knots.
    Speed(f64),
    /// Offset heading by this many degrees (signed), then direct.
    Direct(f64),
}

struct Sim {
    samples: Vec<(i64, GeoPoint)>,
    completion: Option<i64>,
}

fn step_toward(cur: f64, target: f64, max: f64) -> f64 {
    let d = wrap_angle(target - cur);
    cur + d.clamp(-max, max)
}

/// Fly the follower: nominal leg until `t_m`, then the reaction, sampling
/// every grid time in `[t_start, t_stop]`.
fn simulate(leg: &Leg, leader: &Leg, reaction: Reaction, t_m: f64, t_start: i64, t_stop: i64, alt: f64) -> Sim {
    let mut samples = Vec::new();
    let t_int = t_m.ceil() as i64;
    let mut t = t_start;
    while t < t_int && t <= t_stop {
        if t % GRID_STEP_S == 0 {
            samples.push((t, with_alt(leg.pos(t as f64), alt)));
        }
        t += 1;
    }
    let s = leg.state(t_int as f64);
    let mut pos = with_alt(s.pos, alt);
    let mut course = s.kin.course;
    let mut speed = leg.speed;
    let (target_speed, offset) = match reaction {
        Reaction::Speed(dv) => ((leg.speed - dv).max(MIN_SPEED_KT), None),
        Reaction::Direct(dpsi) => (leg.speed, Some(course + dpsi)),
    };
    let mut rejoining = false;
    let mut completion = None;
    while t <= t_stop {
        if t % GRID_STEP_S == 0 {
            samples.push((t, pos));
        }
        if completion.is_none() {
            completion = match reaction {
                Reaction::Speed(_) => ((speed - target_speed).abs() < 1e-9).then_some(t),
                Reaction::Direct(_) => {
                    let home = initial_bearing(&pos, &leg.dest);
                    (rejoining && wrap_angle(home - course).abs() < 0.5).then_some(t)
                }
            };
        }
        let target_course = match (offset, rejoining || completion.is_some()) {
            (Some(off), false) => {
                let turned = wrap_angle(off - course).abs() < 1e-9;
                if turned {
                    let probe = GeoState {
                        pos,
                        kin: Kinematics {
                            course: initial_bearing(&pos, &leg.dest),
                            h_speed: speed,
                            v_speed: 0.0,
                        },
                    };
                    if cpa(&probe, &leader.state(t as f64)).d_h_cpa >= REJOIN_CPA_NM {
                        rejoining = true;
                    }
                }
                off
            }
            _ => initial_bearing(&pos, &leg.dest),
        };
        course = step_toward(course, target_course, MAX_TURN_RATE_DPS);
        speed += (target_speed - speed).clamp(-MAX_ACCEL_KTPS, MAX_ACCEL_KTPS);
        pos = with_alt(destination(&pos, course, speed / 3600.0), alt);
        t += 1;
    }
    Sim { samples, completion }
}

fn with_alt(p: GeoPoint, alt: f64) -> GeoPoint {
    GeoPoint { alt, ..p }
}

fn sample_leg(leg: &Leg, t_start: i64, t_stop: i64, alt: f64) -> Vec<(i64, GeoPoint)> {
    let mut out = Vec::new();
    let mut t = t_start;
    while t <= t_stop {
        out.push((t, with_alt(leg.pos(t as f64), alt)));
        t += GRID_STEP_S;
    }
    out
}

fn grid_floor(t: f64) -> i64 {
    (t / GRID_STEP_S as f64).floor() as i64 * GRID_STEP_S
}

fn raw_flight(callsign: &str, from: &str, to: &str, samples: &[(i64, GeoPoint)]) -> RawFlight {
    RawFlight {
        callsign: callsign.into(),
        apt_from: from.into(),
        apt_to: to.into(),
        date: utc_date(samples[0].0 as f64),
        points: samples
            .iter()
            .map(|(t, p)| RawTrackPoint {
                callsign: callsign.into(),
                apt_from: from.into(),
                apt_to: to.into(),
                pos: *p,
                timestamp: *t as f64,
            })
            .collect(),
    }
}

/// Reconstruct a flight exactly as ingest would.
fn process(raw: &RawFlight) -> Result<Option<Trajectory>, SynthError> {
    let mut segs = preprocess_flight(raw, &PreprocessConfig::default())?;
    Ok((segs.len() == 1).then(|| segs.remove(0)))
}

/// Conflict flag of `a` against `b` at each of `a`'s points.
fn conflict_flags(a: &Trajectory, b: &Trajectory, config: &DetectConfig) -> Vec<bool> {
    let none = DeviationStats::none();
    a.points
        .iter()
        .map(|p| b.point_at(p.timestamp).is_some_and(|q| points_conflict(p, q, &none, config)))
        .collect()
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

struct Names {
    callsign: String,
    from: String,
    to: String,
}

fn names(index: usize) -> Names {
    Names {
        callsign: format!("SYN{index:04}"),
        from: format!("O{index:04}"),
        to: format!("D{index:04}"),
    }
}

struct Built {
    flights: Vec<(Trajectory, GeoPoint, GeoPoint)>,
    encounter: Option<(ActionClass, i64, f64, f64, i64)>,
}

fn airports_ok(x: &GeoPoint, course: f64, config: &DetectConfig) -> Option<(GeoPoint, GeoPoint)> {
    let o = destination(x, course + 180.0, AIRPORT_DISTANCE_NM);
    let d = destination(x, course, AIRPORT_DISTANCE_NM);
    fixpoint_toward_destination("", "", &o, &d, &config.sa_bounds).ok()?;
    Some((o, d))
}

fn all_inside(samples: &[(i64, GeoPoint)], config: &DetectConfig) -> bool {
    samples.iter().all(|(_, p)| config.sa_bounds.contains(p))
}

fn draw_crossing<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> GeoPoint {
    let r = &spec.region;
    GeoPoint {
        lon: uniform(rng, [r.lon_min, r.lon_max]),
        lat: uniform(rng, [r.lat_min, r.lat_max]),
        alt: 0.0,
    }
}

fn build_single<R: Rng>(
    spec: &ScenarioSpec,
    config: &DetectConfig,
    rng: &mut R,
    slot_start: i64,
    alt: f64,
    idx: usize,
) -> Result<Option<Built>, SynthError> {
    let x = draw_crossing(spec, rng);
    let course = rng.random_range(0.0..360.0);
    let speed = uniform(rng, [spec.speed_min_kt, spec.speed_max_kt]);
    let t0 = slot_start;
    let t_x = t0 as f64 + uniform(rng, spec.lead_in_s);
    let t_end = grid_floor(t_x + uniform(rng, [240.0, 420.0]));
    let Some((o, d)) = airports_ok(&x, course, config) else {
        return Ok(None);
    };
    let leg = Leg::through(&x, course, speed, t_x, t0 as f64);
    let samples = sample_leg(&leg, t0, t_end, alt);
    if !all_inside(&samples, config) {
        return Ok(None);
    }
    let n = names(idx);
    let Some(traj) = process(&raw_flight(&n.callsign, &n.from, &n.to, &samples))? else {
        return Ok(None);
    };
    Ok(Some(Built {
        flights: vec![(traj, o, d)],
        encounter: None,
    }))
}

fn build_pair<R: Rng>(
    spec: &ScenarioSpec,
    config: &DetectConfig,
    rng: &mut R,
    slot_start: i64,
    alt: f64,
    idx: usize,
) -> Result<Option<Built>, SynthError> {
    let x = draw_crossing(spec, rng);
    let course_a = rng.random_range(0.0..360.0);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let course_b = course_a + sign * uniform(rng, spec.crossing_angle_deg);
    let (va, vb) = (
        uniform(rng, [spec.speed_min_kt, spec.speed_max_kt]),
        uniform(rng, [spec.speed_min_kt, spec.speed_max_kt]),
    );
    let t0 = slot_start;
    let (t_y, t1) = if spec.passers {
        let t_y = t0 as f64 + uniform(rng, spec.passer_crossing_s);
        (t_y, grid_floor(t_y + uniform(rng, spec.passer_gap_s)))
    } else {
        (f64::NAN, t0)
    };
    let t_x = t1 as f64 + uniform(rng, spec.lead_in_s);
    let lag = uniform(rng, spec.arrival_offset_s);
    let reaction_delay = uniform(rng, spec.reaction_delay_s);
    let pilot_delay = uniform(rng, spec.pilot_delay_s);
    let speed_action = rng.random_bool(spec.speed_action_share);
    let magnitude = if speed_action {
        uniform(rng, [60.0, 100.0])
    } else {
        uniform(rng, [30.0, 45.0])
    };

    let (Some((oa, da)), Some((ob, db))) = (airports_ok(&x, course_a, config), airports_ok(&x, course_b, config)) else {
        return Ok(None);
    };
    let leader = Leg::through(&x, course_a, va, t_x, t1 as f64);
    let follower = Leg::through(&x, course_b, vb, t_x + lag, t0 as f64);
    let (na, nb) = (names(idx), names(idx + 1));

    // Nominal geometry: when does the conflict first appear?
    let horizon_end = grid_floor(t_x + 900.0);
    let nom_a = sample_leg(&leader, t1, horizon_end, alt);
    let nom_b = sample_leg(&follower, t0, horizon_end, alt);
    if !all_inside(&nom_a, config) || !all_inside(&nom_b, config) {
        return Ok(None);
    }
    let (Some(ta), Some(tb)) = (
        process(&raw_flight(&na.callsign, &na.from, &na.to, &nom_a))?,
        process(&raw_flight(&nb.callsign, &nb.from, &nb.to, &nom_b))?,
    ) else {
        return Ok(None);
    };
    let flags = conflict_flags(&tb, &ta, config);
    let Some(first) = flags.iter().position(|f| *f) else {
        return Ok(None);
    };
    let t_c = tb.points[first].timestamp;
    // The conflict must come from geometry, not from the leader appearing.
    if t_c - t1 < 60 {
        return Ok(None);
    }
    let event_time = (t_c as f64 + reaction_delay).round();
    let t_m = event_time + pilot_delay;
    let held = tb
        .points
        .iter()
        .zip(&flags)
        .filter(|(p, _)| p.timestamp >= t_c && (p.timestamp as f64) <= t_m)
        .all(|(_, f)| *f);
    if !held {
        return Ok(None);
    }

    let stop = t0 + spec.slot_s - 300;
    for k in 0..ESCALATIONS {
        let reaction = if speed_action {
            Reaction::Speed(magnitude + 20.0 * k as f64)
        } else {
            let dpsi = (magnitude + 10.0 * k as f64).min(90.0);
            let s = leader.state(t_m);
            let f = follower.state(t_m);
            let turned = |sgn: f64| {
                let mut g = f;
                g.kin.course = f.kin.course + sgn * dpsi;
                cpa(&g, &s).d_h_cpa
            };
            let sgn = if turned(1.0) >= turned(-1.0) { 1.0 } else { -1.0 };
            Reaction::Direct(sgn * dpsi)
        };
        let sim = simulate(&follower, &leader, reaction, t_m, t0, stop, alt);
        let Some(done) = sim.completion else {
            continue;
        };
        let done = (done + GRID_STEP_S - 1) / GRID_STEP_S * GRID_STEP_S;
        let end_b = grid_floor(done as f64 + uniform(rng, [120.0, 240.0]));
        let end_a = grid_floor((t_x + 240.0).max(done as f64 + 120.0) + uniform(rng, [0.0, 60.0]));
        if end_b > stop || end_a > stop {
            continue;
        }
        let samples_b: Vec<(i64, GeoPoint)> = sim.samples.into_iter().filter(|(t, _)| *t <= end_b).collect();
        let samples_a = sample_leg(&leader, t1, end_a, alt);
        if !all_inside(&samples_a, config) || !all_inside(&samples_b, config) {
            continue;
        }
        let (Some(ta), Some(tb)) = (
            process(&raw_flight(&na.callsign, &na.from, &na.to, &samples_a))?,
            process(&raw_flight(&nb.callsign, &nb.from, &nb.to, &samples_b))?,
        ) else {
            continue;
        };
        // Resolved: no conflict and at least the CPA threshold apart from
        // shortly after completion on.
        let after = done + 2 * GRID_STEP_S;
        let flags = conflict_flags(&tb, &ta, config);
        let resolved = tb.points.iter().zip(&flags).all(|(p, f)| {
            p.timestamp < after
                || (!*f
                    && ta
                        .point_at(p.timestamp)
                        .is_none_or(|q| horizontal_distance(&p.pos, &q.pos) >= config.cpa_d_h_th_nm))
        });
        if !resolved {
            continue;
        }
        let mut flights = vec![(ta, oa, da), (tb, ob, db)];
        if spec.passers {
            let Some(p) = build_passer(spec, config, rng, &follower, t_y, t0, alt, idx + 2, &flights)? else {
                return Ok(None);
            };
            flights.push(p);
        }
        let action = if speed_action { ActionClass::A1 } else { ActionClass::A2 };
        return Ok(Some(Built {
            flights,
            encounter: Some((action, t_c, event_time, t_m, done)),
        }));
    }
    Ok(None)
}

/// Passer crossing the follower's track at its position at `t_y`; it must
/// conflict with the follower only, and only before `t_y`.
#[allow(clippy::too_many_arguments)]
fn build_passer<R: Rng>(
    spec: &ScenarioSpec,
    config: &DetectConfig,
    rng: &mut R,
    follower: &Leg,
    t_y: f64,
    t0: i64,
    alt: f64,
    idx: usize,
    pair: &[(Trajectory, GeoPoint, GeoPoint)],
) -> Result<Option<(Trajectory, GeoPoint, GeoPoint)>, SynthError> {
    let (leader, follow) = (&pair[0].0, &pair[1].0);
    let y = follower.pos(t_y);
    let fs = follower.state(t_y);
    let n = names(idx);
    for _ in 0..PASSER_TRIES {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let course = fs.kin.course + sign * uniform(rng, spec.crossing_angle_deg);
        let speed = uniform(rng, [spec.speed_min_kt, spec.speed_max_kt]);
        let miss = uniform(rng, spec.passer_miss_nm);
        // The miss distance grows linearly with the passer's lateness at Y.
        let unit = cpa(&fs, &Leg::through(&y, course, speed, t_y + 1.0, t0 as f64).state(t_y)).d_h_cpa;
        let late = if rng.random_bool(0.5) { miss / unit } else { -miss / unit };
        let leg = Leg::through(&y, course, speed, t_y + late, t0 as f64);
        let Some((o, d)) = airports_ok(&y, course, config) else {
            continue;
        };
        let end = grid_floor(t_y.max(t_y + late) + uniform(rng, [60.0, 180.0]));
        let samples = sample_leg(&leg, t0, end, alt);
        if !all_inside(&samples, config) {
            continue;
        }
        let Some(tp) = process(&raw_flight(&n.callsign, &n.from, &n.to, &samples))? else {
            continue;
        };
        let flags = conflict_flags(follow, &tp, config);
        let span: Vec<i64> = follow
            .points
            .iter()
            .zip(&flags)
            .filter(|(_, f)| **f)
            .map(|(p, _)| p.timestamp)
            .collect();
        let long_enough = span.len() as i64 * GRID_STEP_S >= PASSER_MIN_CONFLICT_S;
        let before_y = span.iter().all(|t| (*t as f64) < t_y);
        let clear_of_leader =
            !conflict_flags(&tp, leader, config).contains(&true) && !conflict_flags(leader, &tp, config).contains(&true);
        if long_enough && before_y && clear_of_leader {
            return Ok(Some((tp, o, d)));
        }
    }
    Ok(None)
}

enum Entry {
    Pair,
    Single,
}

/// Generate a scenario. Identical specs give identical scenarios.
pub fn generate(spec: &ScenarioSpec, detect: &DetectConfig, label: &LabelConfig) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pairs = spec.pair_count();
    let singles = spec.flight_count.saturating_sub(spec.encounter_size() * pairs);
    let mut entries: Vec<Entry> = (0..pairs).map(|_| Entry::Pair).chain((0..singles).map(|_| Entry::Single)).collect();
    for i in (1..entries.len()).rev() {
        let j = rng.random_range(0..=i);
        entries.swap(i, j);
    }

    let mut sc = Scenario {
        trajectories: Vec::new(),
        events: Vec::new(),
        airports: BTreeMap::new(),
        encounters: Vec::new(),
        truth: Vec::new(),
    };
    let levels = &spec.flight_levels;
    for (e, entry) in entries.iter().enumerate() {
        let slot_start = spec.start_epoch_s + (e / levels.len()) as i64 * spec.slot_s;
        let alt = levels[e % levels.len()] as f64 * 100.0;
        let idx = sc.trajectories.len();
        let mut built = None;
        for _ in 0..spec.max_retries {
            built = match entry {
                Entry::Pair => build_pair(spec, detect, &mut rng, slot_start, alt, idx)?,
                Entry::Single => build_single(spec, detect, &mut rng, slot_start, alt, idx)?,
            };
            if built.is_some() {
                break;
            }
        }
        let Some(b) = built else {
            return Err(SynthError::Infeasible {
                index: e,
                tries: spec.max_retries,
            });
        };
        for (t, o, d) in b.flights {
            sc.airports.insert(t.id.apt_from.clone(), o);
            sc.airports.insert(t.id.apt_to.clone(), d);
            sc.trajectories.push(t);
        }
        if let Some((action, t_c, event_time, t_m, completion)) = b.encounter {
            let f = &sc.trajectories[idx + 1].id;
            sc.events.push(AtcoEvent {
                callsign: f.callsign.clone(),
                apt_from: f.apt_from.clone(),
                apt_to: f.apt_to.clone(),
                mwm_code: if action == ActionClass::A1 {
                    spec.speed_code.clone()
                } else {
                    spec.direct_code.clone()
                },
                timestamp: event_time,
                sector: None,
            });
            sc.encounters.push(Encounter {
                leader: idx,
                follower: idx + 1,
                action,
                t_c,
                passer: spec.passers.then_some(idx + 2),
                event_time,
                maneuver_start: t_m,
                completion,
            });
        }
    }
    sc.truth = truth_labels(&sc, detect, label);
    Ok(sc)
}

/// Labels from the constructed conflict timeline of each pair.
fn truth_labels(sc: &Scenario, detect: &DetectConfig, label: &LabelConfig) -> Vec<TruthFlight> {
    let mut partners: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (a, b) in sc.intended_pairs() {
        partners.entry(a).or_default().push(b);
        partners.entry(b).or_default().push(a);
    }
    let mut events: BTreeMap<usize, ActionEvent> = BTreeMap::new();
    for (k, e) in sc.encounters.iter().enumerate() {
        let t = &sc.trajectories[e.follower];
        let pi = closest_point_index(t, sc.events[k].timestamp).expect("nonempty trajectory");
        events.insert(
            e.follower,
            ActionEvent {
                flight: t.id.clone(),
                code: sc.events[k].mwm_code.clone(),
                event_time: sc.events[k].timestamp,
                point_time: t.points[pi].timestamp,
            },
        );
    }
    let mut report = LabelReport::default();
    sc.trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut flags = vec![false; t.points.len()];
            for &j in partners.get(&i).into_iter().flatten() {
                for (f, g) in flags.iter_mut().zip(conflict_flags(t, &sc.trajectories[j], detect)) {
                    *f |= g;
                }
            }
            let flight = EnrichedFlight {
                id: t.id.clone(),
                fixpoint: None,
                points: t
                    .points
                    .iter()
                    .zip(flags)
                    .map(|(p, conflict)| EnrichedPoint {
                        timestamp: p.timestamp,
                        h: p.kin.course,
                        s_h: p.kin.h_speed,
                        s_v: p.kin.v_speed,
                        conflict,
                        slots: Vec::new(),
                        conflict_count: usize::from(conflict),
                    })
                    .collect(),
                overflow: 0,
            };
            let evs: Vec<&ActionEvent> = events.get(&i).into_iter().collect();
            let rows = annotate_modes(&flight, &evs, label, &mut report).unwrap_or_default();
            TruthFlight {
                id: t.id.clone(),
                rows: rows
                    .into_iter()
                    .map(|r| TruthRow {
                        timestamp: r.point.timestamp,
                        mode: r.mode,
                        action: r.action,
                        is_actual_ratp: r.is_actual_ratp,
                        is_annotated_ratp: r.is_annotated_ratp,
                    })
                    .collect(),
            }
        })
        .collect()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_airports(path: &Path, airports: &BTreeMap<String, GeoPoint>) -> Result<(), SynthError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    let mut s = String::from("code,lon_deg,lat_deg\n");
    for (code, p) in airports {
        s.push_str(&format!("{code},{},{}\n", p.lon, p.lat));
    }
    f.write_all(s.as_bytes()).map_err(io_err(path))
}

pub fn write_truth(path: &Path, truth: &[TruthFlight]) -> Result<(), SynthError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    let mut s = String::from("flight_id,timestamp,mode,action,is_actual_ratp,is_annotated_ratp\n");
    for t in truth {
        for r in &t.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                t.id,
                r.timestamp,
                r.mode,
                r.action,
                u8::from(r.is_actual_ratp),
                u8::from(r.is_annotated_ratp)
            ));
        }
    }
    f.write_all(s.as_bytes()).map_err(io_err(path))
}

pub const SURVEILLANCE_FILE: &str = "surveillance.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const AIRPORTS_FILE: &str = "airports.csv";
pub const TRUTH_FILE: &str = "truth_labels.csv";

impl Scenario {
    /// Write surveillance, events, airports and truth labels into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_trajectories(&dir.join(SURVEILLANCE_FILE), &self.trajectories)?;
        write_events(&dir.join(EVENTS_FILE), &self.events)?;
        write_airports(&dir.join(AIRPORTS_FILE), &self.airports)?;
        write_truth(&dir.join(TRUTH_FILE), &self.truth)
    }

    /// Unordered pairs of flight indices meant to conflict.
    pub fn intended_pairs(&self) -> Vec<(usize, usize)> {
        self.encounters
            .iter()
            .flat_map(|e| std::iter::once((e.leader, e.follower)).chain(e.passer.map(|p| (p, e.follower))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, flights: usize, fraction: f64) -> ScenarioSpec {
        ScenarioSpec {
            flight_count: flights,
            conflict_pair_fraction: fraction,
            seed,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn head_on_timing_meets_at_crossing() {
        let x = GeoPoint::new(-2.0, 39.5, 0.0).unwrap();
        let a = Leg::through(&x, 90.0, 480.0, 1000.0, 0.0);
        let b = Leg::through(&x, 0.0, 480.0, 1000.0, 0.0);
        let (sa, sb) = (a.state(100.0), b.state(100.0));
        assert!(cpa(&sa, &sb).d_h_cpa < 1.0);
        assert!(horizontal_distance(&a.pos(1000.0), &x) < 1e-6);
        assert!(horizontal_distance(&b.pos(1000.0), &x) < 1e-6);
    }

    #[test]
    fn no_pairs_means_no_events() {
        let sc = generate(&small(3, 6, 0.0), &DetectConfig::default(), &LabelConfig::default()).unwrap();
        assert_eq!(sc.trajectories.len(), 6);
        assert!(sc.events.is_empty());
        assert!(sc.truth.iter().flat_map(|t| &t.rows).all(|r| r.mode == Mode::C0 && r.action == ActionClass::A0));
    }

    #[test]
    fn same_seed_same_scenario() {
        let spec = small(5, 8, 1.0);
        let a = generate(&spec, &DetectConfig::default(), &LabelConfig::default()).unwrap();
        let b = generate(&spec, &DetectConfig::default(), &LabelConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_event_has_one_actual_ratp() {
        let sc = generate(&small(9, 12, 1.0), &DetectConfig::default(), &LabelConfig::default()).unwrap();
        assert_eq!(sc.encounters.len(), 4);
        for e in &sc.encounters {
            let rows = &sc.truth[e.follower].rows;
            assert_eq!(rows.iter().filter(|r| r.is_actual_ratp).count(), 1);
            assert!(rows.iter().any(|r| r.mode == Mode::C1));
            assert!(sc.truth[e.leader].rows.iter().all(|r| r.mode != Mode::C1));
            assert!(e.t_c as f64 <= e.event_time && e.event_time < e.maneuver_start);
        }
    }

    #[test]
    fn passer_gives_only_c2_rows() {
        let sc = generate(&small(11, 9, 1.0), &DetectConfig::default(), &LabelConfig::default()).unwrap();
        assert!(!sc.encounters.is_empty());
        for e in &sc.encounters {
            let p = e.passer.unwrap();
            let rows = &sc.truth[p].rows;
            assert!(rows.iter().any(|r| r.mode == Mode::C2));
            assert!(rows.iter().all(|r| r.mode != Mode::C1 && !r.is_actual_ratp));
            assert!(sc.events.iter().all(|ev| ev.callsign != sc.truth[p].id.callsign));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for s in [
            ScenarioSpec { conflict_pair_fraction: 1.5, ..ScenarioSpec::default() },
            ScenarioSpec { flight_levels: vec![300, 310], ..ScenarioSpec::default() },
            ScenarioSpec { speed_min_kt: 600.0, ..ScenarioSpec::default() },
        ] {
            assert!(s.validate().is_err());
        }
    }
}

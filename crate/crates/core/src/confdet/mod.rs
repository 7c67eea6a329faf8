//! Spatio-temporal grid index, fan-based conflict detection and per-point
//! feature enrichment.

mod fixpoint;
pub(crate) mod io;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evofan::{build_fan, DeviationStats, EvolutionFan, DEFAULT_HORIZON_S};
use crate::geokin::{
    cpa_planar, crossing_planar, horizontal_distance, initial_bearing, wrap_angle, GeoPoint, GeoState,
    TangentPlane,
};
use crate::trajstore::{FlightId, TrackPoint, Trajectory};

pub use fixpoint::{fixpoint, fixpoint_sector_exit, fixpoint_toward_destination, read_airports, point_in_polygon};
pub use io::{read_enriched, write_enriched, write_enriched_to, enriched_header};

/// Number of features per neighbour slot, excluding the presence flag.
pub const NEIGHBOR_FEATURES: usize = 12;
/// Columns per neighbour slot in the enriched layout (presence + features).
pub const SLOT_WIDTH: usize = NEIGHBOR_FEATURES + 1;
/// Own-state features ahead of the neighbour block: course, speeds.
pub const OWN_FEATURES: usize = 3;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("flight {flight}: trajectory never exits the sector")]
    NeverExits { flight: String },
    #[error("flight {flight}: unknown airport {code}")]
    UnknownAirport { flight: String, code: String },
    #[error("flight {flight}: destination {code} lies inside the study area")]
    DestinationInside { flight: String, code: String },
    #[error("flight {flight}: origin-destination line is parallel to the {edge} edge")]
    Parallel { flight: String, edge: &'static str },
    #[error("flight {flight}: origin-destination line misses the {edge} edge")]
    MissesEdge { flight: String, edge: &'static str },
    #[error("sector_related setting requires a sector polygon with at least 3 vertices")]
    MissingSector,
    #[error("invalid detection config: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Malformed { path: String, line: u64, msg: String },
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    SectorRelated,
    SectorIgnorant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, p: &GeoPoint) -> bool {
        (self.lon_min..=self.lon_max).contains(&p.lon) && (self.lat_min..=self.lat_max).contains(&p.lat)
    }

    fn center(&self) -> (f64, f64) {
        (0.5 * (self.lon_min + self.lon_max), 0.5 * (self.lat_min + self.lat_max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub setting: Setting,
    pub sa_bounds: BoundingBox,
    /// Lon/lat vertices; required in the sector-related setting.
    pub sector_polygon: Option<Vec<[f64; 2]>>,
    /// Degrees of longitude and latitude.
    pub cell_size: f64,
    /// Chebyshev cell radius for candidates; 0 is unbounded.
    pub d_th_cells: u32,
    pub ct_th_min: f64,
    pub cpa_d_h_th_nm: f64,
    pub cpa_t_th_min: f64,
    pub d_v_th_ft: f64,
    /// Vertical threshold once either aircraft is at or above `high_level_ft`.
    pub d_v_th_high_ft: f64,
    pub high_level_ft: f64,
    pub max_neighbors: usize,
    pub horizon_s: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            setting: Setting::SectorIgnorant,
            sa_bounds: BoundingBox {
                lon_min: -10.0,
                lon_max: 5.0,
                lat_min: 35.0,
                lat_max: 44.0,
            },
            sector_polygon: None,
            cell_size: 0.5,
            d_th_cells: 5,
            ct_th_min: 20.0,
            cpa_d_h_th_nm: 15.0,
            cpa_t_th_min: 30.0,
            d_v_th_ft: 1000.0,
            d_v_th_high_ft: 2000.0,
            high_level_ft: 41000.0,
            max_neighbors: 4,
            horizon_s: DEFAULT_HORIZON_S,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let b = &self.sa_bounds;
        if !(b.lon_min < b.lon_max && b.lat_min < b.lat_max) {
            return Err(DetectError::Config("sa_bounds must have min < max".into()));
        }
        for (name, v) in [
            ("cell_size", self.cell_size),
            ("ct_th_min", self.ct_th_min),
            ("cpa_d_h_th_nm", self.cpa_d_h_th_nm),
            ("cpa_t_th_min", self.cpa_t_th_min),
            ("d_v_th_ft", self.d_v_th_ft),
            ("d_v_th_high_ft", self.d_v_th_high_ft),
            ("horizon_s", self.horizon_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DetectError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_neighbors == 0 {
            return Err(DetectError::Config("max_neighbors must be at least 1".into()));
        }
        if self.setting == Setting::SectorRelated && self.sector_polygon.as_ref().is_none_or(|p| p.len() < 3) {
            return Err(DetectError::MissingSector);
        }
        Ok(())
    }

    /// Candidate radius in cells; unbounded in the sector-related setting.
    pub fn effective_d_th(&self) -> Option<u32> {
        match self.setting {
            Setting::SectorRelated => None,
            Setting::SectorIgnorant => (self.d_th_cells > 0).then_some(self.d_th_cells),
        }
    }

    pub fn vertical_threshold(&self, alt_a: f64, alt_b: f64) -> f64 {
        if alt_a.max(alt_b) >= self.high_level_ft {
            self.d_v_th_high_ft
        } else {
            self.d_v_th_ft
        }
    }

    /// Whether a point belongs to the study area.
    pub fn in_study_area(&self, p: &GeoPoint) -> bool {
        match (&self.setting, &self.sector_polygon) {
            (Setting::SectorRelated, Some(poly)) => point_in_polygon(p.lon, p.lat, poly),
            _ => self.sa_bounds.contains(p),
        }
    }

    pub fn cell_of(&self, p: &GeoPoint) -> (i32, i32) {
        let cx = ((p.lon - self.sa_bounds.lon_min) / self.cell_size).floor() as i32;
        let cy = ((p.lat - self.sa_bounds.lat_min) / self.cell_size).floor() as i32;
        (cx, cy)
    }

    fn thresholds(&self) -> Thresholds {
        Thresholds {
            ct_s: self.ct_th_min * 60.0,
            cpa_t_s: self.cpa_t_th_min * 60.0,
            d_h: self.cpa_d_h_th_nm,
        }
    }
}

/// Flights present per cell per timestamp. Built once, then read-only.
#[derive(Debug, Default)]
pub struct GridIndex {
    cells: HashMap<i64, HashMap<(i32, i32), Vec<usize>>>,
}

impl GridIndex {
    /// Flights indexed in `cell` at `t`, ascending.
    pub fn lookup(&self, cell: (i32, i32), t: i64) -> &[usize] {
        self.cells
            .get(&t)
            .and_then(|m| m.get(&cell))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn cells_at(&self, t: i64) -> impl Iterator<Item = (&(i32, i32), &Vec<usize>)> {
        self.cells.get(&t).into_iter().flat_map(|m| m.iter())
    }

    pub fn timestamps(&self) -> Vec<i64> {
        let mut ts: Vec<i64> = self.cells.keys().copied().collect();
        ts.sort_unstable();
        ts
    }

    pub fn nonempty_cells(&self) -> usize {
        self.cells.values().map(HashMap::len).sum()
    }
}

pub fn build_grid(trajectories: &[Trajectory], config: &DetectConfig) -> GridIndex {
    let mut grid = GridIndex::default();
    for (fi, traj) in trajectories.iter().enumerate() {
        for p in &traj.points {
            if !config.in_study_area(&p.pos) {
                continue;
            }
            grid.cells
                .entry(p.timestamp)
                .or_default()
                .entry(config.cell_of(&p.pos))
                .or_default()
                .push(fi);
        }
    }
    grid
}

#[derive(Debug, Clone, Copy)]
struct Thresholds {
    ct_s: f64,
    cpa_t_s: f64,
    d_h: f64,
}

/// Fan velocities of one aircraft in a pair plane.
struct FanVel {
    vx: Vec<f64>,
    vy: Vec<f64>,
    /// Mean velocity and the largest member distance from it, for pruning.
    cx: f64,
    cy: f64,
    radius: f64,
}

impl FanVel {
    fn new(fan: &EvolutionFan, plane: &TangentPlane) -> Self {
        let (vx, vy) = fan.plane_velocities(plane);
        let n = vx.len() as f64;
        let cx = vx.iter().sum::<f64>() / n;
        let cy = vy.iter().sum::<f64>() / n;
        let radius = vx
            .iter()
            .zip(&vy)
            .map(|(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
            .fold(0.0, f64::max);
        Self {
            vx,
            vy,
            cx,
            cy,
            // Slack for rounding in the mean and the norm.
            radius: radius * (1.0 + 1e-9) + 1e-12,
        }
    }
}

/// CR constraints (other than the vertical gate) for one projection pair.
/// Division-free apart from the parallel test.
#[inline]
fn pair_in_conflict(dpx: f64, dpy: f64, ax: f64, ay: f64, bx: f64, by: f64, th: &Thresholds) -> bool {
    let dvx = bx - ax;
    let dvy = by - ay;
    let dv2 = dvx * dvx + dvy * dvy;
    let dpdv = dpx * dvx + dpy * dvy;
    let dp2 = dpx * dpx + dpy * dpy;
    // CPA: t = -dpdv/dv2 (clamped at 0), d^2 = dp2 - dpdv^2/dv2.
    let (cpa_ok, t_cpa_pos) = if dpdv < 0.0 && dv2 > 0.0 {
        let t_ok = -dpdv < th.cpa_t_s * dv2;
        let d_ok = dp2 * dv2 - dpdv * dpdv < th.d_h * th.d_h * dv2;
        (t_ok && d_ok, true)
    } else {
        (dp2 < th.d_h * th.d_h, false)
    };
    if !cpa_ok {
        return false;
    }
    let den = ax * by - ay * bx;
    let na2 = ax * ax + ay * ay;
    let nb2 = bx * bx + by * by;
    if na2 == 0.0 || nb2 == 0.0 || den * den <= crate::geokin::PARALLEL_EPS.powi(2) * na2 * nb2 {
        // Parallel tracks: the crossing collapses onto the CPA.
        return t_cpa_pos && -dpdv < th.ct_s * dv2;
    }
    let (mut na, mut nb) = (dpx * by - dpy * bx, dpx * ay - dpy * ax);
    let mut d = den;
    if d < 0.0 {
        na = -na;
        nb = -nb;
        d = -d;
    }
    na >= 0.0 && nb >= 0.0 && na.min(nb) < th.ct_s * d
}

/// Smallest possible horizontal separation over `[0, t_max]` between any
/// pair of fan members, as a lower bound: with relative velocity
/// `c + e`, `|e| <= r`, the distance is at least `|dp + t c| - t r`.
fn separation_lower_bound(dpx: f64, dpy: f64, cx: f64, cy: f64, r: f64, t_max: f64) -> f64 {
    let a = dpx * dpx + dpy * dpy;
    let b = dpx * cx + dpy * cy;
    let c = cx * cx + cy * cy;
    let f = |t: f64| (a + 2.0 * b * t + c * t * t).max(0.0).sqrt() - t * r;
    let r2 = r * r;
    let t = if c > r2 {
        let disc = ((c * a - b * b).max(0.0) / (c - r2)).sqrt();
        ((-b + r * disc) / c).clamp(0.0, t_max)
    } else {
        t_max
    };
    f(t).min(f(0.0)).min(f(t_max))
}

/// Fan-existential conflict between two aircraft states.
///
/// True iff some pair of fan members (one per aircraft) satisfies all CR
/// constraints. The check is symmetric in its arguments.
pub fn fans_conflict(a: &EvolutionFan, b: &EvolutionFan, config: &DetectConfig) -> bool {
    let (pa, pb) = (&a.anchor.pos, &b.anchor.pos);
    if (pa.alt - pb.alt).abs() >= config.vertical_threshold(pa.alt, pb.alt) {
        return false;
    }
    let plane = TangentPlane::centered_between(pa, pb);
    let xa = plane.project(pa);
    let xb = plane.project(pb);
    let (dpx, dpy) = (xb[0] - xa[0], xb[1] - xa[1]);
    let th = config.thresholds();
    let fa = FanVel::new(a, &plane);
    let fb = FanVel::new(b, &plane);
    if pair_in_conflict(dpx, dpy, fa.vx[0], fa.vy[0], fb.vx[0], fb.vy[0], &th) {
        return true;
    }
    let bound = separation_lower_bound(dpx, dpy, fb.cx - fa.cx, fb.cy - fa.cy, fa.radius + fb.radius, th.cpa_t_s);
    if bound >= th.d_h * (1.0 + 1e-9) {
        return false;
    }
    for i in 0..fa.vx.len() {
        let (ax, ay) = (fa.vx[i], fa.vy[i]);
        for j in 0..fb.vx.len() {
            if pair_in_conflict(dpx, dpy, ax, ay, fb.vx[j], fb.vy[j], &th) {
                return true;
            }
        }
    }
    false
}

/// Same check without the pruning bound; kept for testing the bound.
pub fn fans_conflict_exhaustive(a: &EvolutionFan, b: &EvolutionFan, config: &DetectConfig) -> bool {
    let (pa, pb) = (&a.anchor.pos, &b.anchor.pos);
    if (pa.alt - pb.alt).abs() >= config.vertical_threshold(pa.alt, pb.alt) {
        return false;
    }
    let plane = TangentPlane::centered_between(pa, pb);
    let xa = plane.project(pa);
    let xb = plane.project(pb);
    let th = config.thresholds();
    let fa = FanVel::new(a, &plane);
    let fb = FanVel::new(b, &plane);
    (0..fa.vx.len()).any(|i| {
        (0..fb.vx.len()).any(|j| {
            pair_in_conflict(xb[0] - xa[0], xb[1] - xa[1], fa.vx[i], fa.vy[i], fb.vx[j], fb.vy[j], &th)
        })
    })
}

/// Conflict between two track points under the detector's rules: both in
/// the study area, within the candidate cell radius, and fans in conflict.
pub fn points_conflict(a: &TrackPoint, b: &TrackPoint, stats: &DeviationStats, config: &DetectConfig) -> bool {
    if !config.in_study_area(&a.pos) || !config.in_study_area(&b.pos) {
        return false;
    }
    if let Some(r) = config.effective_d_th() {
        let (ca, cb) = (config.cell_of(&a.pos), config.cell_of(&b.pos));
        if (ca.0 - cb.0).abs().max((ca.1 - cb.1).abs()) > r as i32 {
            return false;
        }
    }
    let fa = build_fan(a, stats, config.horizon_s);
    let fb = build_fan(b, stats, config.horizon_s);
    fans_conflict(&fa, &fb, config)
}

/// Features of one intruder relative to the ownship, from nominal futures.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeighborFeatures {
    pub sin_bf: f64,
    pub cos_bf: f64,
    pub d_f: f64,
    pub d_h_cpa: f64,
    pub d_v_cpa: f64,
    pub t_cpa: f64,
    pub d_cp: f64,
    pub t_cp: f64,
    pub sin_a: f64,
    pub cos_a: f64,
    pub sin_b: f64,
    pub cos_b: f64,
}

impl NeighborFeatures {
    pub const NAMES: [&'static str; NEIGHBOR_FEATURES] = [
        "sin_bf", "cos_bf", "d_f", "d_h_cpa", "d_v_cpa", "t_cpa", "d_cp", "t_cp", "sin_a", "cos_a", "sin_b", "cos_b",
    ];

    pub fn to_array(&self) -> [f64; NEIGHBOR_FEATURES] {
        [
            self.sin_bf,
            self.cos_bf,
            self.d_f,
            self.d_h_cpa,
            self.d_v_cpa,
            self.t_cpa,
            self.d_cp,
            self.t_cp,
            self.sin_a,
            self.cos_a,
            self.sin_b,
            self.cos_b,
        ]
    }

    pub fn from_array(v: &[f64]) -> Self {
        Self {
            sin_bf: v[0],
            cos_bf: v[1],
            d_f: v[2],
            d_h_cpa: v[3],
            d_v_cpa: v[4],
            t_cpa: v[5],
            d_cp: v[6],
            t_cp: v[7],
            sin_a: v[8],
            cos_a: v[9],
            sin_b: v[10],
            cos_b: v[11],
        }
    }
}

fn sin_cos_deg(deg: f64) -> (f64, f64) {
    deg.to_radians().sin_cos()
}

/// Relative bearing and distance from `own` to the fixpoint.
pub fn fixpoint_features(own: &GeoState, fix: &GeoPoint) -> (f64, f64, f64) {
    let d_f = horizontal_distance(&own.pos, fix);
    let rel = if d_f > 0.0 {
        wrap_angle(initial_bearing(&own.pos, fix) - own.kin.course)
    } else {
        0.0
    };
    let (s, c) = sin_cos_deg(rel);
    (s, c, d_f)
}

/// Pairwise features of intruder `other` seen from `own`.
pub fn neighbor_features(own: &GeoState, other: &GeoState, fix: &GeoPoint) -> NeighborFeatures {
    let (sin_bf, cos_bf, d_f) = fixpoint_features(own, fix);
    let plane = TangentPlane::centered_between(&own.pos, &other.pos);
    let a = plane.plane_state(own);
    let b = plane.plane_state(other);
    let cpa = cpa_planar(&a, &b);
    let cross = crossing_planar(&a, &b);
    let (d_cp, t_cp) = match (cross.crossed, cross.d_cp, cross.t_cp) {
        (false, Some(d), Some(t)) => (d, t),
        // Parallel or already crossed: the crossing collapses onto the CPA.
        _ => (cpa.d_h_cpa, cpa.t_cpa),
    };
    let az_a = a.vel[0].atan2(a.vel[1]).to_degrees();
    let az_b = b.vel[0].atan2(b.vel[1]).to_degrees();
    let (sin_a, cos_a) = sin_cos_deg(wrap_angle(az_b - az_a));
    // Bearing of the ownship from the intruder, both at CPA, relative to the
    // intruder's track.
    let pa = a.at(cpa.t_cpa);
    let pb = b.at(cpa.t_cpa);
    let (mut rx, mut ry) = (pa[0] - pb[0], pa[1] - pb[1]);
    if rx == 0.0 && ry == 0.0 {
        rx = a.pos[0] - b.pos[0];
        ry = a.pos[1] - b.pos[1];
    }
    let rel_b = if rx == 0.0 && ry == 0.0 {
        0.0
    } else {
        wrap_angle(rx.atan2(ry).to_degrees() - az_b)
    };
    let (sin_b, cos_b) = sin_cos_deg(rel_b);
    NeighborFeatures {
        sin_bf,
        cos_bf,
        d_f,
        d_h_cpa: cpa.d_h_cpa,
        d_v_cpa: cpa.d_v_cpa,
        t_cpa: cpa.t_cpa,
        d_cp,
        t_cp,
        sin_a,
        cos_a,
        sin_b,
        cos_b,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    /// Index of the intruder in the trajectory slice.
    pub flight: usize,
    pub features: NeighborFeatures,
}

/// Read-only detection context shared across flights.
pub struct Detector<'a> {
    pub trajectories: &'a [Trajectory],
    pub grid: &'a GridIndex,
    pub stats: &'a DeviationStats,
    pub config: &'a DetectConfig,
}

impl<'a> Detector<'a> {
    pub fn new(
        trajectories: &'a [Trajectory],
        grid: &'a GridIndex,
        stats: &'a DeviationStats,
        config: &'a DetectConfig,
    ) -> Self {
        Self {
            trajectories,
            grid,
            stats,
            config,
        }
    }

    fn fan_at(&self, flight: usize, t: i64) -> Option<EvolutionFan> {
        let traj = &self.trajectories[flight];
        let p = traj.point_at(t)?;
        self.config
            .in_study_area(&p.pos)
            .then(|| build_fan(p, self.stats, self.config.horizon_s))
    }

    /// Candidate intruders of `focal` at `t` from the grid, ascending.
    pub fn candidates(&self, focal: usize, t: i64) -> Vec<usize> {
        let Some(p) = self.trajectories[focal].point_at(t) else {
            return Vec::new();
        };
        if !self.config.in_study_area(&p.pos) {
            return Vec::new();
        }
        let mut out = Vec::new();
        match self.config.effective_d_th() {
            Some(r) => {
                let r = r as i32;
                let (cx, cy) = self.config.cell_of(&p.pos);
                for dx in -r..=r {
                    for dy in -r..=r {
                        out.extend_from_slice(self.grid.lookup((cx + dx, cy + dy), t));
                    }
                }
            }
            None => {
                for (_, flights) in self.grid.cells_at(t) {
                    out.extend_from_slice(flights);
                }
            }
        }
        out.retain(|&j| j != focal);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Conflicting intruders of `focal` at `t`, ascending by flight index.
    pub fn conflicting(&self, focal: usize, t: i64) -> Vec<usize> {
        let Some(own) = self.fan_at(focal, t) else {
            return Vec::new();
        };
        self.candidates(focal, t)
            .into_iter()
            .filter(|&j| self.fan_at(j, t).is_some_and(|other| fans_conflict(&own, &other, self.config)))
            .collect()
    }

    /// Conflicting intruders with nominal features, sorted by `t_cpa`.
    pub fn neighbors(&self, focal: usize, t: i64, fix: &GeoPoint) -> Vec<Neighbor> {
        let Some(own) = self.trajectories[focal].point_at(t) else {
            return Vec::new();
        };
        let own_state = GeoState {
            pos: own.pos,
            kin: own.kin,
        };
        let mut out: Vec<Neighbor> = self
            .conflicting(focal, t)
            .into_iter()
            .map(|j| {
                let o = self.trajectories[j].point_at(t).expect("candidate has a point");
                let other = GeoState { pos: o.pos, kin: o.kin };
                Neighbor {
                    flight: j,
                    features: neighbor_features(&own_state, &other, fix),
                }
            })
            .collect();
        out.sort_by(|x, y| {
            x.features
                .t_cpa
                .total_cmp(&y.features.t_cpa)
                .then(x.flight.cmp(&y.flight))
        });
        out
    }

    /// Reference detection without the grid: every flight present at `t`
    /// within the candidate radius, checked pairwise.
    pub fn conflicting_exhaustive(&self, focal: usize, t: i64) -> Vec<usize> {
        let Some(own) = self.fan_at(focal, t) else {
            return Vec::new();
        };
        let own_cell = self.config.cell_of(&own.anchor.pos);
        (0..self.trajectories.len())
            .filter(|&j| j != focal)
            .filter(|&j| {
                let Some(other) = self.fan_at(j, t) else {
                    return false;
                };
                let within = match self.config.effective_d_th() {
                    Some(r) => {
                        let c = self.config.cell_of(&other.anchor.pos);
                        (c.0 - own_cell.0).abs().max((c.1 - own_cell.1).abs()) <= r as i32
                    }
                    None => true,
                };
                within && fans_conflict_exhaustive(&own, &other, self.config)
            })
            .collect()
    }

    pub fn enrich(&self, focal: usize, fix: &GeoPoint) -> EnrichedFlight {
        let traj = &self.trajectories[focal];
        let k = self.config.max_neighbors;
        let mut points = Vec::with_capacity(traj.points.len());
        let mut overflow = 0;
        for p in &traj.points {
            if !self.config.in_study_area(&p.pos) {
                continue;
            }
            let nb = self.neighbors(focal, p.timestamp, fix);
            overflow += nb.len().saturating_sub(k);
            let mut slots = vec![NeighborSlot::default(); k];
            for (slot, n) in slots.iter_mut().zip(&nb) {
                *slot = NeighborSlot {
                    present: true,
                    features: n.features,
                    intruder: Some(n.flight),
                };
            }
            points.push(EnrichedPoint {
                timestamp: p.timestamp,
                h: p.kin.course,
                s_h: p.kin.h_speed,
                s_v: p.kin.v_speed,
                conflict: !nb.is_empty(),
                slots,
                conflict_count: nb.len(),
            });
        }
        EnrichedFlight {
            id: traj.id.clone(),
            fixpoint: Some(*fix),
            points,
            overflow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeighborSlot {
    pub present: bool,
    pub features: NeighborFeatures,
    /// Intruder index; not persisted.
    pub intruder: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedPoint {
    pub timestamp: i64,
    /// Course, degrees.
    pub h: f64,
    /// Knots.
    pub s_h: f64,
    /// Feet per minute.
    pub s_v: f64,
    pub conflict: bool,
    pub slots: Vec<NeighborSlot>,
    /// Conflicting intruders before truncation to the slot count.
    pub conflict_count: usize,
}

impl EnrichedPoint {
    /// Own state followed by presence and features of each slot.
    pub fn feature_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OWN_FEATURES + self.slots.len() * SLOT_WIDTH);
        v.extend([self.h, self.s_h, self.s_v]);
        for s in &self.slots {
            v.push(if s.present { 1.0 } else { 0.0 });
            v.extend(s.features.to_array());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedFlight {
    pub id: FlightId,
    pub fixpoint: Option<GeoPoint>,
    pub points: Vec<EnrichedPoint>,
    /// Neighbours dropped beyond the slot count, summed over points.
    pub overflow: usize,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct EnrichReport {
    pub flights: usize,
    pub skipped: Vec<(String, String)>,
    pub overflow: usize,
    pub conflict_points: usize,
    pub points: usize,
}

/// Enrich every flight in parallel; flights whose fixpoint cannot be
/// resolved are skipped and reported.
pub fn enrich_all(
    trajectories: &[Trajectory],
    stats: &DeviationStats,
    config: &DetectConfig,
    airports: &HashMap<String, GeoPoint>,
) -> (Vec<EnrichedFlight>, EnrichReport) {
    let grid = build_grid(trajectories, config);
    let det = Detector::new(trajectories, &grid, stats, config);
    let results: Vec<Result<EnrichedFlight, DetectError>> = (0..trajectories.len())
        .into_par_iter()
        .map(|i| {
            let fix = fixpoint(&trajectories[i], config, airports)?;
            Ok(det.enrich(i, &fix))
        })
        .collect();
    let mut report = EnrichReport::default();
    let mut out = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => {
                report.flights += 1;
                report.overflow += f.overflow;
                report.points += f.points.len();
                report.conflict_points += f.points.iter().filter(|p| p.conflict).count();
                out.push(f);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", trajectories[i].id);
                report.skipped.push((trajectories[i].id.to_string(), e.to_string()));
            }
        }
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geokin::{destination, Kinematics};
    use crate::trajstore::TrackPoint;

    fn tp(lon: f64, lat: f64, alt: f64, course: f64, speed: f64, t: i64) -> TrackPoint {
        TrackPoint {
            pos: GeoPoint::new(lon, lat, alt).unwrap(),
            timestamp: t,
            kin: Kinematics {
                course,
                h_speed: speed,
                v_speed: 0.0,
            },
        }
    }

    fn fid(cs: &str) -> FlightId {
        FlightId {
            callsign: cs.into(),
            apt_from: "AAA".into(),
            apt_to: "BBB".into(),
            date: "2020-01-01".into(),
            segment: 0,
        }
    }

    fn traj(cs: &str, pts: Vec<TrackPoint>) -> Trajectory {
        Trajectory { id: fid(cs), points: pts }
    }

    /// Two aircraft 40 nm apart flying towards each other.
    fn head_on(alt_b: f64) -> Vec<Trajectory> {
        let a = GeoPoint::new(0.0, 40.0, 35000.0).unwrap();
        let b = destination(&a, 90.0, 40.0);
        let back = initial_bearing(&b, &a);
        vec![
            traj("A", vec![tp(a.lon, a.lat, 35000.0, 90.0, 480.0, 0)]),
            traj("B", vec![tp(b.lon, b.lat, alt_b, back, 480.0, 0)]),
        ]
    }

    #[test]
    fn grid_single_point_and_empty_lookup() {
        let cfg = DetectConfig::default();
        let t = vec![traj("A", vec![tp(0.2, 40.2, 30000.0, 0.0, 400.0, 100)])];
        let g = build_grid(&t, &cfg);
        assert_eq!(g.nonempty_cells(), 1);
        assert_eq!(g.lookup(cfg.cell_of(&t[0].points[0].pos), 100), &[0]);
        assert!(g.lookup(cfg.cell_of(&t[0].points[0].pos), 105).is_empty());
    }

    #[test]
    fn edge_point_goes_to_cell_it_opens() {
        let cfg = DetectConfig::default();
        let p = GeoPoint::new(-9.5, 36.0, 0.0).unwrap();
        assert_eq!(cfg.cell_of(&p), (1, 2));
        let q = GeoPoint::new(-9.5000001, 35.9999999, 0.0).unwrap();
        assert_eq!(cfg.cell_of(&q), (0, 1));
    }

    #[test]
    fn head_on_conflict_and_features() {
        let cfg = DetectConfig::default();
        let t = head_on(35000.0);
        let grid = build_grid(&t, &cfg);
        let stats = DeviationStats::none();
        let det = Detector::new(&t, &grid, &stats, &cfg);
        let fix = GeoPoint::new(3.0, 40.0, 0.0).unwrap();
        let nb = det.neighbors(0, 0, &fix);
        assert_eq!(nb.len(), 1);
        let f = nb[0].features;
        assert!(f.d_h_cpa < 1e-6, "{}", f.d_h_cpa);
        assert!((f.t_cpa - 150.0).abs() < 1e-6, "{}", f.t_cpa);
        assert!((f.sin_a * f.sin_a + f.cos_a * f.cos_a - 1.0).abs() < 1e-12);
        assert!((f.cos_a + 1.0).abs() < 1e-9);
        // Symmetric relation.
        assert_eq!(det.conflicting(1, 0), vec![0]);
    }

    #[test]
    fn vertical_gate() {
        let cfg = DetectConfig::default();
        let t = head_on(38000.0);
        let grid = build_grid(&t, &cfg);
        let stats = DeviationStats::none();
        let det = Detector::new(&t, &grid, &stats, &cfg);
        assert!(det.conflicting(0, 0).is_empty());
    }

    #[test]
    fn higher_levels_use_wider_vertical_threshold() {
        let cfg = DetectConfig::default();
        assert_eq!(cfg.vertical_threshold(39000.0, 40000.0), 1000.0);
        assert_eq!(cfg.vertical_threshold(41000.0, 39500.0), 2000.0);
    }

    #[test]
    fn already_crossed_is_no_conflict() {
        let cfg = DetectConfig::default();
        // Perpendicular tracks whose intersection lies behind both aircraft.
        let o = GeoPoint::new(0.0, 40.0, 35000.0).unwrap();
        let a = destination(&o, 90.0, 5.0);
        let b = destination(&o, 0.0, 5.0);
        let t = vec![
            traj("A", vec![tp(a.lon, a.lat, 35000.0, 90.0, 480.0, 0)]),
            traj("B", vec![tp(b.lon, b.lat, 35000.0, 0.0, 480.0, 0)]),
        ];
        let grid = build_grid(&t, &cfg);
        let stats = DeviationStats::none();
        let det = Detector::new(&t, &grid, &stats, &cfg);
        assert!(det.conflicting(0, 0).is_empty());
    }

    #[test]
    fn slots_sorted_by_t_cpa() {
        let cfg = DetectConfig::default();
        let o = GeoPoint::new(0.0, 40.0, 35000.0).unwrap();
        // Ownship heading north towards o; two intruders crossing at o from
        // the east, arriving after 120 s and 300 s of closing.
        let own = destination(&o, 180.0, 480.0 / 3600.0 * 200.0);
        let near = destination(&o, 90.0, 480.0 / 3600.0 * 120.0);
        let far = destination(&o, 90.0, 480.0 / 3600.0 * 300.0);
        let t = vec![
            traj("OWN", vec![tp(own.lon, own.lat, 35000.0, 0.0, 480.0, 0)]),
            traj("FAR", vec![tp(far.lon, far.lat, 35000.0, initial_bearing(&far, &o), 480.0, 0)]),
            traj("NEAR", vec![tp(near.lon, near.lat, 35000.0, initial_bearing(&near, &o), 480.0, 0)]),
        ];
        let grid = build_grid(&t, &cfg);
        let stats = DeviationStats::none();
        let det = Detector::new(&t, &grid, &stats, &cfg);
        let fix = GeoPoint::new(1.0, 41.0, 0.0).unwrap();
        let ef = det.enrich(0, &fix);
        let p = &ef.points[0];
        assert!(p.conflict);
        assert!(p.slots[0].present && p.slots[1].present && !p.slots[2].present);
        assert_eq!(p.slots[0].intruder, Some(2));
        assert!(p.slots[0].features.t_cpa < p.slots[1].features.t_cpa);
        assert_eq!(p.slots[3], NeighborSlot::default());
        assert_eq!(p.feature_vector().len(), OWN_FEATURES + 4 * SLOT_WIDTH);
    }

    #[test]
    fn isolated_flight_has_empty_slots() {
        let cfg = DetectConfig::default();
        let t = vec![traj("A", (0..10).map(|i| tp(0.0, 40.0 + i as f64 * 0.01, 30000.0, 0.0, 400.0, i * 5)).collect())];
        let grid = build_grid(&t, &cfg);
        let stats = DeviationStats::none();
        let det = Detector::new(&t, &grid, &stats, &cfg);
        let ef = det.enrich(0, &GeoPoint::new(0.0, 44.0, 0.0).unwrap());
        assert_eq!(ef.points.len(), 10);
        assert!(ef.points.iter().all(|p| !p.conflict && p.slots.iter().all(|s| !s.present)));
    }

    #[test]
    fn lower_bound_never_exceeds_true_minimum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let dp = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
            let c = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            let r = rng.random_range(0.0..0.1);
            let t_max = 1800.0;
            let lb = separation_lower_bound(dp[0], dp[1], c[0], c[1], r, t_max);
            for k in 0..200 {
                let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let e = [r * ang.cos(), r * ang.sin()];
                let t = t_max * k as f64 / 199.0;
                let d = ((dp[0] + t * (c[0] + e[0])).powi(2) + (dp[1] + t * (c[1] + e[1])).powi(2)).sqrt();
                assert!(lb <= d + 1e-9, "bound {lb} above sampled {d}");
            }
        }
    }
}

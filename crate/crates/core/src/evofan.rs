//! Deviation statistics over a corpus and the fan of straight-line
//! candidate futures built from them at a trajectory point.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geokin::{velocity_vector, wrap_angle, GeoPoint, GeoState, Kinematics, TangentPlane};
use crate::trajstore::{TrackPoint, Trajectory};

/// Default projection horizon: the largest lookahead among the conflict
/// thresholds (30 min to CPA).
pub const DEFAULT_HORIZON_S: f64 = 1800.0;

#[derive(Debug, Error)]
pub enum FanError {
    #[error("not enough {dimension} deviations: have {have}, need at least {need}")]
    InsufficientData {
        dimension: &'static str,
        have: usize,
        need: usize,
    },
    #[error("{path}: {msg}")]
    Sidecar { path: String, msg: String },
}

/// Per-bin medians of per-step course and speed changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub n: usize,
    /// Degrees per 5 s step.
    pub course_medians: Vec<f64>,
    /// Knots per 5 s step.
    pub speed_medians: Vec<f64>,
}

impl DeviationStats {
    /// No deviations: fans collapse to the nominal projection.
    pub fn none() -> Self {
        Self {
            n: 0,
            course_medians: Vec::new(),
            speed_medians: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), FanError> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        std::fs::write(path, text).map_err(|e| FanError::Sidecar {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, FanError> {
        let err = |msg: String| FanError::Sidecar {
            path: path.display().to_string(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let s: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if s.course_medians.len() != s.n || s.speed_medians.len() != s.n {
            return Err(err(format!("expected {} medians per dimension", s.n)));
        }
        Ok(s)
    }
}

/// Split sorted values into `n` equal-frequency bins (sizes differ by at
/// most one, larger bins first) and return the bin sizes.
pub fn equal_frequency_sizes(len: usize, n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let base = len / n;
    let extra = len % n;
    (0..n).map(|i| base + usize::from(i < extra)).collect()
}

fn median_sorted(v: &[f64]) -> f64 {
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Medians of `n` equal-frequency bins over `values`.
pub fn binned_medians(values: &[f64], n: usize, dimension: &'static str) -> Result<Vec<f64>, FanError> {
    if values.len() < n {
        return Err(FanError::InsufficientData {
            dimension,
            have: values.len(),
            need: n,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for size in equal_frequency_sizes(sorted.len(), n) {
        out.push(median_sorted(&sorted[start..start + size]));
        start += size;
    }
    Ok(out)
}

/// Per-step course and speed differences pooled over all trajectories.
pub fn step_deviations(trajectories: &[Trajectory]) -> (Vec<f64>, Vec<f64>) {
    let mut dc = Vec::new();
    let mut ds = Vec::new();
    for t in trajectories {
        for w in t.points.windows(2) {
            dc.push(wrap_angle(w[1].kin.course - w[0].kin.course));
            ds.push(w[1].kin.h_speed - w[0].kin.h_speed);
        }
    }
    (dc, ds)
}

pub fn fit_deviation_stats(trajectories: &[Trajectory], n: usize) -> Result<DeviationStats, FanError> {
    let (dc, ds) = step_deviations(trajectories);
    Ok(DeviationStats {
        n,
        course_medians: binned_medians(&dc, n, "course")?,
        speed_medians: binned_medians(&ds, n, "speed")?,
    })
}

/// One candidate future: constant course and speed from the anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub d_course: f64,
    pub d_speed: f64,
    /// Degrees, `course^t + d_course`.
    pub course: f64,
    /// Knots, `speed^t + d_speed`, floored at zero.
    pub speed: f64,
}

#[derive(Debug, Clone)]
pub struct EvolutionFan {
    pub anchor: TrackPoint,
    /// `(n+1)^2` members; index 0 is the nominal (zero-deviation) future.
    pub projections: Vec<Projection>,
    pub horizon: f64,
}

impl EvolutionFan {
    pub fn nominal(&self) -> &Projection {
        &self.projections[0]
    }

    pub fn len(&self) -> usize {
        self.projections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projections.is_empty()
    }

    /// Velocity of every member, nm/s, in the given plane.
    pub fn plane_velocities(&self, plane: &TangentPlane) -> (Vec<f64>, Vec<f64>) {
        let rot = plane.meridian_rotation(&self.anchor.pos);
        let mut vx = Vec::with_capacity(self.projections.len());
        let mut vy = Vec::with_capacity(self.projections.len());
        // Members sharing a course are contiguous; reuse the unit vector.
        let mut unit = [0.0, 0.0];
        let mut last_course = f64::NAN;
        for p in &self.projections {
            if p.course != last_course {
                unit = velocity_vector(p.course + rot, 1.0);
                last_course = p.course;
            }
            vx.push(unit[0] * p.speed);
            vy.push(unit[1] * p.speed);
        }
        (vx, vy)
    }

    /// Position of member `i` after `dt` seconds (clamped to the horizon) in
    /// the anchor-centred plane, nautical miles.
    pub fn plane_position(&self, i: usize, dt: f64) -> [f64; 2] {
        let dt = dt.clamp(0.0, self.horizon);
        let p = &self.projections[i];
        let v = velocity_vector(p.course, p.speed);
        [v[0] * dt, v[1] * dt]
    }

    pub fn position_at(&self, i: usize, dt: f64) -> GeoPoint {
        let plane = TangentPlane::new(self.anchor.pos);
        let dt_c = dt.clamp(0.0, self.horizon);
        let alt = self.anchor.pos.alt + self.anchor.kin.v_speed / 60.0 * dt_c;
        plane.unproject(self.plane_position(i, dt), alt)
    }

    pub fn member_state(&self, i: usize) -> GeoState {
        let p = &self.projections[i];
        GeoState {
            pos: self.anchor.pos,
            kin: Kinematics {
                course: p.course,
                h_speed: p.speed,
                v_speed: self.anchor.kin.v_speed,
            },
        }
    }
}

/// Cross product of `{0} ∪ course_medians` with `{0} ∪ speed_medians`.
pub fn build_fan(anchor: &TrackPoint, stats: &DeviationStats, horizon: f64) -> EvolutionFan {
    let dcs: Vec<f64> = std::iter::once(0.0).chain(stats.course_medians.iter().copied()).collect();
    let dss: Vec<f64> = std::iter::once(0.0).chain(stats.speed_medians.iter().copied()).collect();
    let mut projections = Vec::with_capacity(dcs.len() * dss.len());
    for &dc in &dcs {
        for &ds in &dss {
            projections.push(Projection {
                d_course: dc,
                d_speed: ds,
                course: anchor.kin.course + dc,
                speed: (anchor.kin.h_speed + ds).max(0.0),
            });
        }
    }
    EvolutionFan {
        anchor: *anchor,
        projections,
        horizon,
    }
}

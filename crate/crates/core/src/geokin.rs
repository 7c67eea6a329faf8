//! Geodesy and kinematics primitives.
//!
//! Distances are great-circle (haversine) on a single mean-radius sphere.
//! Closest point of approach and track crossing are solved on a local
//! azimuthal-equidistant tangent plane centred between the two aircraft,
//! where both aircraft move in straight lines at constant velocity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in nautical miles (6371.0088 km / 1.852).
pub const EARTH_RADIUS_NM: f64 = 3440.065;

/// Seconds per hour, for knot conversions.
const SECONDS_PER_HOUR: f64 = 3600.0;

/// Relative tolerance under which two track directions count as parallel.
pub const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("altitude {0} is not finite")]
    Altitude(f64),
    #[error("non-increasing timestamps: {prev} -> {cur}")]
    NonIncreasingTime { prev: f64, cur: f64 },
    #[error("coincident horizontal positions; course undefined")]
    CoincidentPositions { h_speed: f64, v_speed: f64 },
}

/// A position: longitude/latitude in degrees, altitude in feet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
    pub alt: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64, alt: f64) -> Result<Self, GeoError> {
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::Longitude(lon));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::Latitude(lat));
        }
        if !alt.is_finite() {
            return Err(GeoError::Altitude(alt));
        }
        Ok(Self { lon, lat, alt })
    }

    fn unit_vector(&self) -> [f64; 3] {
        let (phi, lam) = (self.lat.to_radians(), self.lon.to_radians());
        [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
    }
}

/// Course (degrees clockwise from true north, `[0, 360)`), horizontal speed
/// in knots and vertical speed in feet per minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    pub course: f64,
    pub h_speed: f64,
    pub v_speed: f64,
}

/// A position together with its kinematic state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoState {
    pub pos: GeoPoint,
    pub kin: Kinematics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpaResult {
    /// Seconds until closest approach, clamped at 0 for diverging traffic.
    pub t_cpa: f64,
    /// Horizontal distance at CPA, nautical miles.
    pub d_h_cpa: f64,
    /// Vertical distance at CPA, feet.
    pub d_v_cpa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingResult {
    pub exists: bool,
    /// True when the intersection lies behind either aircraft.
    pub crossed: bool,
    /// Distance between the aircraft when the first of them reaches the
    /// crossing point (nm). `None` when the tracks do not intersect.
    pub d_cp: Option<f64>,
    /// Time until the first aircraft reaches the crossing point (s).
    pub t_cp: Option<f64>,
    /// Signed time for each aircraft to reach the intersection (s).
    pub t_first: Option<f64>,
    pub t_second: Option<f64>,
    /// Intersection in tangent-plane coordinates (nm).
    pub point: Option<[f64; 2]>,
}

impl CrossingResult {
    fn none() -> Self {
        Self {
            exists: false,
            crossed: false,
            d_cp: None,
            t_cp: None,
            t_first: None,
            t_second: None,
            point: None,
        }
    }
}

/// Normalise an angle in degrees to `[0, 360)`.
pub fn normalize_course(deg: f64) -> f64 {
    let c = deg.rem_euclid(360.0);
    if c >= 360.0 {
        0.0
    } else {
        c
    }
}

/// Wrap an angle difference in degrees to `[-180, 180)`.
pub fn wrap_angle(deg: f64) -> f64 {
    let w = (deg + 180.0).rem_euclid(360.0) - 180.0;
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

fn central_angle(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = p2 - p1;
    let dlam = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlam / 2.0).sin().powi(2);
    2.0 * h.sqrt().min(1.0).asin()
}

/// Great-circle distance in nautical miles.
pub fn horizontal_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    // Sorting the endpoints makes the result bit-symmetric.
    let (a, b) = if (a.lon, a.lat) <= (b.lon, b.lat) { (a, b) } else { (b, a) };
    EARTH_RADIUS_NM * central_angle(a, b)
}

/// Initial great-circle bearing from `a` to `b`, degrees in `[0, 360)`.
pub fn initial_bearing(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlam = (b.lon - a.lon).to_radians();
    let x = dlam.sin() * p2.cos();
    let y = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dlam.cos();
    normalize_course(x.atan2(y).to_degrees())
}

/// Point reached from `start` after `dist_nm` along initial bearing
/// `bearing_deg`. Altitude is carried over unchanged.
pub fn destination(start: &GeoPoint, bearing_deg: f64, dist_nm: f64) -> GeoPoint {
    let delta = dist_nm / EARTH_RADIUS_NM;
    let theta = bearing_deg.to_radians();
    let (p1, l1) = (start.lat.to_radians(), start.lon.to_radians());
    let p2 = (p1.sin() * delta.cos() + p1.cos() * delta.sin() * theta.cos())
        .clamp(-1.0, 1.0)
        .asin();
    let l2 = l1 + (theta.sin() * delta.sin() * p1.cos()).atan2(delta.cos() - p1.sin() * p2.sin());
    let lon = wrap_angle(l2.to_degrees());
    GeoPoint {
        lon,
        lat: p2.to_degrees(),
        alt: start.alt,
    }
}

/// Great-circle midpoint, symmetric in its arguments.
pub fn midpoint(a: &GeoPoint, b: &GeoPoint) -> GeoPoint {
    let (ua, ub) = (a.unit_vector(), b.unit_vector());
    let s = [ua[0] + ub[0], ua[1] + ub[1], ua[2] + ub[2]];
    let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    if norm < 1e-12 {
        return *a;
    }
    let lat = (s[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
    let lon = s[1].atan2(s[0]).to_degrees();
    GeoPoint {
        lon,
        lat,
        alt: 0.5 * (a.alt + b.alt),
    }
}

/// Estimate course and speeds from two timed positions.
///
/// Coincident horizontal positions leave the course undefined; the error
/// carries the (zero) horizontal and vertical speeds so callers can hold the
/// previous course.
pub fn estimate_kinematics(
    prev: (&GeoPoint, f64),
    cur: (&GeoPoint, f64),
) -> Result<Kinematics, GeoError> {
    let (p, tp) = prev;
    let (c, tc) = cur;
    if !(tc > tp) {
        return Err(GeoError::NonIncreasingTime { prev: tp, cur: tc });
    }
    let dt = tc - tp;
    let dist = horizontal_distance(p, c);
    let h_speed = dist / dt * SECONDS_PER_HOUR;
    let v_speed = (c.alt - p.alt) / dt * 60.0;
    if p.lon == c.lon && p.lat == c.lat {
        return Err(GeoError::CoincidentPositions { h_speed, v_speed });
    }
    Ok(Kinematics {
        course: initial_bearing(p, c),
        h_speed,
        v_speed,
    })
}

/// Kinematics for every point of a timed sequence.
///
/// Point `i > 0` uses the segment `i-1 -> i`; the first point takes the
/// course of its successor. Coincident positions hold the previous course.
pub fn kinematics_along(points: &[(GeoPoint, f64)]) -> Result<Vec<Kinematics>, GeoError> {
    if points.len() < 2 {
        return Ok(points
            .iter()
            .map(|_| Kinematics {
                course: 0.0,
                h_speed: 0.0,
                v_speed: 0.0,
            })
            .collect());
    }
    let mut out: Vec<Kinematics> = Vec::with_capacity(points.len());
    let mut last_course: Option<f64> = None;
    for i in 1..points.len() {
        let (a, ta) = &points[i - 1];
        let (b, tb) = &points[i];
        let k = match estimate_kinematics((a, *ta), (b, *tb)) {
            Ok(k) => k,
            Err(GeoError::CoincidentPositions { h_speed, v_speed }) => Kinematics {
                course: f64::NAN,
                h_speed,
                v_speed,
            },
            Err(e) => return Err(e),
        };
        if k.course.is_finite() {
            last_course = Some(k.course);
        }
        out.push(Kinematics {
            course: if k.course.is_finite() {
                k.course
            } else {
                last_course.unwrap_or(f64::NAN)
            },
            ..k
        });
    }
    // Leading coincident stretch: back-fill from the first defined course.
    let first_defined = out.iter().map(|k| k.course).find(|c| c.is_finite()).unwrap_or(0.0);
    for k in out.iter_mut() {
        if !k.course.is_finite() {
            k.course = first_defined;
        } else {
            break;
        }
    }
    let head = out[0];
    out.insert(0, head);
    Ok(out)
}

/// Local azimuthal-equidistant plane; x east, y north, nautical miles.
#[derive(Debug, Clone, Copy)]
pub struct TangentPlane {
    pub center: GeoPoint,
}

impl TangentPlane {
    pub fn new(center: GeoPoint) -> Self {
        Self { center }
    }

    pub fn centered_between(a: &GeoPoint, b: &GeoPoint) -> Self {
        Self::new(midpoint(a, b))
    }

    pub fn project(&self, p: &GeoPoint) -> [f64; 2] {
        let d = EARTH_RADIUS_NM * central_angle(&self.center, p);
        if d == 0.0 {
            return [0.0, 0.0];
        }
        let az = initial_bearing(&self.center, p).to_radians();
        [d * az.sin(), d * az.cos()]
    }

    pub fn unproject(&self, xy: [f64; 2], alt: f64) -> GeoPoint {
        let d = (xy[0] * xy[0] + xy[1] * xy[1]).sqrt();
        let mut p = if d == 0.0 {
            self.center
        } else {
            destination(&self.center, xy[0].atan2(xy[1]).to_degrees(), d)
        };
        p.alt = alt;
        p
    }

    /// Rotation (degrees) from true bearings at `p` to plane azimuths.
    ///
    /// Radial great circles through the centre map to straight lines, so the
    /// back-bearing from `p` to the centre fixes the local meridian.
    pub fn meridian_rotation(&self, p: &GeoPoint) -> f64 {
        if central_angle(&self.center, p) < 1e-12 {
            return 0.0;
        }
        let radial = initial_bearing(&self.center, p);
        let back = initial_bearing(p, &self.center);
        wrap_angle(radial + 180.0 - back)
    }

    /// State of a moving aircraft in plane coordinates.
    pub fn plane_state(&self, s: &GeoState) -> PlaneState {
        let rot = self.meridian_rotation(&s.pos);
        PlaneState {
            pos: self.project(&s.pos),
            vel: velocity_vector(s.kin.course + rot, s.kin.h_speed),
            alt: s.pos.alt,
            v_rate: s.kin.v_speed / 60.0,
        }
    }
}

/// Plane velocity in nm/s for a plane azimuth (degrees) and speed (knots).
pub fn velocity_vector(azimuth_deg: f64, speed_kt: f64) -> [f64; 2] {
    let a = azimuth_deg.to_radians();
    let v = speed_kt / SECONDS_PER_HOUR;
    [v * a.sin(), v * a.cos()]
}

/// Straight-line motion on a plane. Units are whatever the caller uses
/// consistently; the geographic wrappers use nm, nm/s, ft and ft/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub alt: f64,
    pub v_rate: f64,
}

impl PlaneState {
    pub fn at(&self, dt: f64) -> [f64; 2] {
        [self.pos[0] + self.vel[0] * dt, self.pos[1] + self.vel[1] * dt]
    }
}

#[inline]
fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Closest point of approach between two straight-line movers.
pub fn cpa_planar(a: &PlaneState, b: &PlaneState) -> CpaResult {
    let dp = [b.pos[0] - a.pos[0], b.pos[1] - a.pos[1]];
    let dv = [b.vel[0] - a.vel[0], b.vel[1] - a.vel[1]];
    let dv2 = dv[0] * dv[0] + dv[1] * dv[1];
    let t = if dv2 > 0.0 {
        (-(dp[0] * dv[0] + dp[1] * dv[1]) / dv2).max(0.0)
    } else {
        0.0
    };
    let rx = dp[0] + t * dv[0];
    let ry = dp[1] + t * dv[1];
    let dz = (b.alt - a.alt) + t * (b.v_rate - a.v_rate);
    CpaResult {
        t_cpa: t,
        d_h_cpa: (rx * rx + ry * ry).sqrt(),
        d_v_cpa: dz.abs(),
    }
}

/// Intersection of the two track rays.
pub fn crossing_planar(a: &PlaneState, b: &PlaneState) -> CrossingResult {
    let den = cross(a.vel, b.vel);
    let na = (a.vel[0].powi(2) + a.vel[1].powi(2)).sqrt();
    let nb = (b.vel[0].powi(2) + b.vel[1].powi(2)).sqrt();
    if na == 0.0 || nb == 0.0 || den.abs() <= PARALLEL_EPS * na * nb {
        return CrossingResult::none();
    }
    let dp = [b.pos[0] - a.pos[0], b.pos[1] - a.pos[1]];
    let ta = cross(dp, b.vel) / den;
    let tb = cross(dp, a.vel) / den;
    let crossed = ta < 0.0 || tb < 0.0;
    // Ties go to the first argument (ownship).
    let t_cp = if ta <= tb { ta } else { tb };
    let pa = a.at(t_cp);
    let pb = b.at(t_cp);
    let d_cp = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
    CrossingResult {
        exists: true,
        crossed,
        d_cp: Some(d_cp),
        t_cp: Some(t_cp),
        t_first: Some(ta),
        t_second: Some(tb),
        point: Some(a.at(ta)),
    }
}

/// Closest point of approach of two aircraft on a plane centred between them.
pub fn cpa(a: &GeoState, b: &GeoState) -> CpaResult {
    let plane = TangentPlane::centered_between(&a.pos, &b.pos);
    cpa_planar(&plane.plane_state(a), &plane.plane_state(b))
}

/// Crossing point of the two ground tracks on a plane centred between them.
pub fn crossing_point(a: &GeoState, b: &GeoState) -> CrossingResult {
    let plane = TangentPlane::centered_between(&a.pos, &b.pos);
    crossing_planar(&plane.plane_state(a), &plane.plane_state(b))
}

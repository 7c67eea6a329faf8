//! Per-flight fixpoints: the sector exit (sector-related setting) or the
//! study-area edge towards the destination (sector-ignorant setting).

use std::collections::HashMap;
use std::path::Path;

use super::{BoundingBox, DetectConfig, DetectError, Setting};
use crate::geokin::GeoPoint;
use crate::trajstore::Trajectory;

/// Even-odd ray casting on lon/lat vertices.
pub fn point_in_polygon(lon: f64, lat: f64, poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > lat) != (yj > lat) && lon < (xj - xi) * (lat - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Parameter along `p -> q` where it meets segment `a -> b`, if it does.
fn segment_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let r = [q[0] - p[0], q[1] - p[1]];
    let s = [b[0] - a[0], b[1] - a[1]];
    let den = r[0] * s[1] - r[1] * s[0];
    if den == 0.0 {
        return None;
    }
    let ap = [a[0] - p[0], a[1] - p[1]];
    let t = (ap[0] * s[1] - ap[1] * s[0]) / den;
    let u = (ap[0] * r[1] - ap[1] * r[0]) / den;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Point where the trajectory last leaves the polygon.
pub fn fixpoint_sector_exit(traj: &Trajectory, poly: &[[f64; 2]]) -> Result<GeoPoint, DetectError> {
    let inside: Vec<bool> = traj
        .points
        .iter()
        .map(|p| point_in_polygon(p.pos.lon, p.pos.lat, poly))
        .collect();
    let k = (0..traj.points.len().saturating_sub(1))
        .rev()
        .find(|&k| inside[k] && !inside[k + 1])
        .ok_or_else(|| DetectError::NeverExits {
            flight: traj.id.to_string(),
        })?;
    let (p, q) = (&traj.points[k].pos, &traj.points[k + 1].pos);
    let (pp, qq) = ([p.lon, p.lat], [q.lon, q.lat]);
    let n = poly.len();
    let t = (0..n)
        .filter_map(|i| segment_intersection(pp, qq, poly[i], poly[(i + 1) % n]))
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
        .unwrap_or(1.0);
    Ok(GeoPoint {
        lon: p.lon + t * (q.lon - p.lon),
        lat: p.lat + t * (q.lat - p.lat),
        alt: p.alt + t * (q.alt - p.alt),
    })
}

/// Intersection of the origin-destination line with the box edge facing
/// the destination, in lon/lat coordinates.
pub fn fixpoint_toward_destination(
    flight: &str,
    dest_code: &str,
    origin: &GeoPoint,
    dest: &GeoPoint,
    bbox: &BoundingBox,
) -> Result<GeoPoint, DetectError> {
    if bbox.contains(dest) {
        return Err(DetectError::DestinationInside {
            flight: flight.into(),
            code: dest_code.into(),
        });
    }
    let (cx, cy) = bbox.center();
    let ux = (dest.lon - cx) / (0.5 * (bbox.lon_max - bbox.lon_min));
    let uy = (dest.lat - cy) / (0.5 * (bbox.lat_max - bbox.lat_min));
    let dlon = dest.lon - origin.lon;
    let dlat = dest.lat - origin.lat;
    if ux.abs() >= uy.abs() {
        let (edge, lon) = if ux > 0.0 {
            ("east", bbox.lon_max)
        } else {
            ("west", bbox.lon_min)
        };
        if dlon.abs() < 1e-12 {
            return Err(DetectError::Parallel { flight: flight.into(), edge });
        }
        let lat = origin.lat + (lon - origin.lon) / dlon * dlat;
        if !(bbox.lat_min..=bbox.lat_max).contains(&lat) {
            return Err(DetectError::MissesEdge { flight: flight.into(), edge });
        }
        Ok(GeoPoint { lon, lat, alt: 0.0 })
    } else {
        let (edge, lat) = if uy > 0.0 {
            ("north", bbox.lat_max)
        } else {
            ("south", bbox.lat_min)
        };
        if dlat.abs() < 1e-12 {
            return Err(DetectError::Parallel { flight: flight.into(), edge });
        }
        let lon = origin.lon + (lat - origin.lat) / dlat * dlon;
        if !(bbox.lon_min..=bbox.lon_max).contains(&lon) {
            return Err(DetectError::MissesEdge { flight: flight.into(), edge });
        }
        Ok(GeoPoint { lon, lat, alt: 0.0 })
    }
}

pub fn fixpoint(
    traj: &Trajectory,
    config: &DetectConfig,
    airports: &HashMap<String, GeoPoint>,
) -> Result<GeoPoint, DetectError> {
    match config.setting {
        Setting::SectorRelated => {
            let poly = config.sector_polygon.as_deref().ok_or(DetectError::MissingSector)?;
            fixpoint_sector_exit(traj, poly)
        }
        Setting::SectorIgnorant => {
            let flight = traj.id.to_string();
            let lookup = |code: &str| {
                airports.get(code).copied().ok_or_else(|| DetectError::UnknownAirport {
                    flight: flight.clone(),
                    code: code.into(),
                })
            };
            let o = lookup(&traj.id.apt_from)?;
            let d = lookup(&traj.id.apt_to)?;
            fixpoint_toward_destination(&flight, &traj.id.apt_to, &o, &d, &config.sa_bounds)
        }
    }
}

/// Airport table with header `code,lon_deg,lat_deg`.
pub fn read_airports(path: &Path) -> Result<HashMap<String, GeoPoint>, DetectError> {
    let p = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|source| DetectError::Csv {
        path: p.clone(),
        source,
    })?;
    let mut out = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|source| DetectError::Csv { path: p.clone(), source })?;
        let bad = |msg: String| DetectError::Malformed {
            path: p.clone(),
            line,
            msg,
        };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", rec.len())));
        }
        let lon: f64 = rec[1].trim().parse().map_err(|e| bad(format!("lon_deg: {e}")))?;
        let lat: f64 = rec[2].trim().parse().map_err(|e| bad(format!("lat_deg: {e}")))?;
        let pt = GeoPoint::new(lon, lat, 0.0).map_err(|e| bad(e.to_string()))?;
        out.insert(rec[0].trim().to_string(), pt);
    }
    Ok(out)
}

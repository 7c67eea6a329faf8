use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{
    utc_date, AtcoEvent, FlightId, RawFlight, RawTrackPoint, TrackPoint, TrajError, Trajectory, FLIGHT_SPLIT_GAP_S,
    GRID_STEP_S,
};
use crate::geokin::{GeoPoint, Kinematics};

const SURVEILLANCE_HEADER: [&str; 7] = ["callsign", "apt_from", "apt_to", "lon_deg", "lat_deg", "alt_ft", "timestamp_s"];
const EVENT_HEADER: [&str; 6] = ["callsign", "apt_from", "apt_to", "mwm_code", "time_annotation_s", "sector"];

/// Counters gathered while reading a surveillance file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows: usize,
    pub rejected_out_of_range: usize,
    pub duplicates_dropped: usize,
    pub flights: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub flights: Vec<RawFlight>,
    pub report: IngestReport,
}

fn open(path: &Path) -> Result<File, TrajError> {
    File::open(path).map_err(|source| TrajError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn column_indices(
    headers: &csv::StringRecord,
    wanted: &[&str],
    path: &str,
) -> Result<Vec<usize>, TrajError> {
    wanted
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h.trim() == *w)
                .ok_or_else(|| TrajError::MissingColumn {
                    path: path.to_string(),
                    column: w.to_string(),
                })
        })
        .collect()
}

fn parse_f64(rec: &csv::StringRecord, idx: usize, name: &str, path: &str) -> Result<f64, TrajError> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec.get(idx).unwrap_or("").trim();
    let v: f64 = raw.parse().map_err(|_| TrajError::Malformed {
        path: path.to_string(),
        line,
        msg: format!("{name}: cannot parse `{raw}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(TrajError::Malformed {
            path: path.to_string(),
            line,
            msg: format!("{name}: non-finite value"),
        });
    }
    Ok(v)
}

pub fn read_surveillance(path: &Path) -> Result<Ingested, TrajError> {
    read_surveillance_from(open(path)?, &path.display().to_string())
}

/// Parse surveillance rows, group them into flights and time-sort each one.
///
/// Rows with out-of-range coordinates are rejected and counted. Within a
/// flight, a repeated timestamp keeps the first row seen in the file.
pub fn read_surveillance_from<R: Read>(reader: R, path: &str) -> Result<Ingested, TrajError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|source| TrajError::Csv {
            path: path.to_string(),
            source,
        })?
        .clone();
    if headers.is_empty() {
        return Ok(Ingested::default());
    }
    let idx = column_indices(&headers, &SURVEILLANCE_HEADER, path)?;
    let mut report = IngestReport::default();
    let mut groups: BTreeMap<(String, String, String), Vec<(usize, RawTrackPoint)>> = BTreeMap::new();

    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| TrajError::Csv {
            path: path.to_string(),
            source,
        })?;
        report.rows += 1;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let text = |i: usize| rec.get(idx[i]).unwrap_or("").trim().to_string();
        let callsign = text(0);
        if callsign.is_empty() {
            return Err(TrajError::Malformed {
                path: path.to_string(),
                line,
                msg: "empty callsign".into(),
            });
        }
        let lon = parse_f64(&rec, idx[3], "lon_deg", path)?;
        let lat = parse_f64(&rec, idx[4], "lat_deg", path)?;
        let alt = parse_f64(&rec, idx[5], "alt_ft", path)?;
        let ts = parse_f64(&rec, idx[6], "timestamp_s", path)?;
        let Ok(pos) = GeoPoint::new(lon, lat, alt) else {
            report.rejected_out_of_range += 1;
            continue;
        };
        let point = RawTrackPoint {
            callsign: callsign.clone(),
            apt_from: text(1),
            apt_to: text(2),
            pos,
            timestamp: ts,
        };
        groups
            .entry((callsign, point.apt_from.clone(), point.apt_to.clone()))
            .or_default()
            .push((row_no, point));
    }

    let mut flights = Vec::new();
    for ((callsign, apt_from, apt_to), mut pts) in groups {
        pts.sort_by(|a, b| a.1.timestamp.total_cmp(&b.1.timestamp).then(a.0.cmp(&b.0)));
        let mut current: Vec<RawTrackPoint> = Vec::new();
        let flush = |current: &mut Vec<RawTrackPoint>, flights: &mut Vec<RawFlight>| {
            if !current.is_empty() {
                flights.push(RawFlight {
                    callsign: callsign.clone(),
                    apt_from: apt_from.clone(),
                    apt_to: apt_to.clone(),
                    date: utc_date(current[0].timestamp),
                    points: std::mem::take(current),
                });
            }
        };
        for (_, p) in pts {
            if let Some(last) = current.last() {
                if last.timestamp == p.timestamp {
                    report.duplicates_dropped += 1;
                    continue;
                }
                if p.timestamp - last.timestamp > FLIGHT_SPLIT_GAP_S {
                    flush(&mut current, &mut flights);
                }
            }
            current.push(p);
        }
        flush(&mut current, &mut flights);
    }
    if report.duplicates_dropped > 0 {
        log::warn!("{path}: dropped {} duplicate returns", report.duplicates_dropped);
    }
    if report.rejected_out_of_range > 0 {
        log::warn!("{path}: rejected {} out-of-range rows", report.rejected_out_of_range);
    }
    report.flights = flights.len();
    Ok(Ingested { flights, report })
}

pub fn read_events(path: &Path) -> Result<Vec<AtcoEvent>, TrajError> {
    read_events_from(open(path)?, &path.display().to_string())
}

pub fn read_events_from<R: Read>(reader: R, path: &str) -> Result<Vec<AtcoEvent>, TrajError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|source| TrajError::Csv {
            path: path.to_string(),
            source,
        })?
        .clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let idx = column_indices(&headers, &EVENT_HEADER, path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|source| TrajError::Csv {
            path: path.to_string(),
            source,
        })?;
        let text = |i: usize| rec.get(idx[i]).unwrap_or("").trim().to_string();
        let sector = text(5);
        out.push(AtcoEvent {
            callsign: text(0),
            apt_from: text(1),
            apt_to: text(2),
            mwm_code: text(3),
            timestamp: parse_f64(&rec, idx[4], "time_annotation_s", path)?,
            sector: if sector.is_empty() { None } else { Some(sector) },
        });
    }
    Ok(out)
}

fn create(path: &Path) -> Result<File, TrajError> {
    File::create(path).map_err(|source| TrajError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn csv_err(path: &str) -> impl Fn(csv::Error) -> TrajError + '_ {
    move |source| TrajError::Csv {
        path: path.to_string(),
        source,
    }
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<(), TrajError> {
    write_trajectories_to(create(path)?, trajectories, &path.display().to_string())
}

/// Write resampled points in the surveillance format; floats use the
/// shortest representation that parses back to the same bits.
pub fn write_trajectories_to<W: Write>(writer: W, trajectories: &[Trajectory], path: &str) -> Result<(), TrajError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SURVEILLANCE_HEADER).map_err(csv_err(path))?;
    for t in trajectories {
        for p in &t.points {
            w.write_record([
                t.id.callsign.as_str(),
                t.id.apt_from.as_str(),
                t.id.apt_to.as_str(),
                &p.pos.lon.to_string(),
                &p.pos.lat.to_string(),
                &p.pos.alt.to_string(),
                &p.timestamp.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|source| TrajError::Io {
        path: path.to_string(),
        source,
    })
}

pub fn write_events(path: &Path, events: &[AtcoEvent]) -> Result<(), TrajError> {
    write_events_to(create(path)?, events, &path.display().to_string())
}

pub fn write_events_to<W: Write>(writer: W, events: &[AtcoEvent], path: &str) -> Result<(), TrajError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EVENT_HEADER).map_err(csv_err(path))?;
    for e in events {
        w.write_record([
            e.callsign.as_str(),
            e.apt_from.as_str(),
            e.apt_to.as_str(),
            e.mwm_code.as_str(),
            &e.timestamp.to_string(),
            e.sector.as_deref().unwrap_or(""),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| TrajError::Io {
        path: path.to_string(),
        source,
    })
}

const TRACK_HEADER: [&str; 8] = [
    "flight_id",
    "timestamp_s",
    "lon_deg",
    "lat_deg",
    "alt_ft",
    "course_deg",
    "h_speed_kt",
    "v_speed_fpm",
];

pub fn write_tracks(path: &Path, trajectories: &[Trajectory]) -> Result<(), TrajError> {
    write_tracks_to(create(path)?, trajectories, &path.display().to_string())
}

/// Resampled trajectories with their flight ids and kinematics, so later
/// stages need not recompute either.
pub fn write_tracks_to<W: Write>(writer: W, trajectories: &[Trajectory], path: &str) -> Result<(), TrajError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACK_HEADER).map_err(csv_err(path))?;
    for t in trajectories {
        let id = t.id.to_string();
        for p in &t.points {
            w.write_record([
                id.as_str(),
                &p.timestamp.to_string(),
                &p.pos.lon.to_string(),
                &p.pos.lat.to_string(),
                &p.pos.alt.to_string(),
                &p.kin.course.to_string(),
                &p.kin.h_speed.to_string(),
                &p.kin.v_speed.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|source| TrajError::Io {
        path: path.to_string(),
        source,
    })
}

pub fn read_tracks(path: &Path) -> Result<Vec<Trajectory>, TrajError> {
    read_tracks_from(open(path)?, &path.display().to_string())
}

/// Rows of one flight must be contiguous and on the 5 s grid.
pub fn read_tracks_from<R: Read>(reader: R, path: &str) -> Result<Vec<Trajectory>, TrajError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let idx = column_indices(&headers, &TRACK_HEADER, path)?;
    let mut out: Vec<Trajectory> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |msg: String| TrajError::Malformed {
            path: path.to_string(),
            line,
            msg,
        };
        let raw_id = rec.get(idx[0]).unwrap_or("").trim();
        let id: FlightId = raw_id.parse().map_err(|_| bad(format!("invalid flight id `{raw_id}`")))?;
        let ts_raw = rec.get(idx[1]).unwrap_or("").trim();
        let timestamp: i64 = ts_raw
            .parse()
            .map_err(|_| bad(format!("timestamp_s: `{ts_raw}` is not an integer")))?;
        let pos = GeoPoint::new(
            parse_f64(&rec, idx[2], "lon_deg", path)?,
            parse_f64(&rec, idx[3], "lat_deg", path)?,
            parse_f64(&rec, idx[4], "alt_ft", path)?,
        )
        .map_err(|e| bad(e.to_string()))?;
        let kin = Kinematics {
            course: parse_f64(&rec, idx[5], "course_deg", path)?,
            h_speed: parse_f64(&rec, idx[6], "h_speed_kt", path)?,
            v_speed: parse_f64(&rec, idx[7], "v_speed_fpm", path)?,
        };
        let point = TrackPoint { pos, timestamp, kin };
        match out.last_mut() {
            Some(t) if t.id == id => {
                if timestamp != t.last_time() + GRID_STEP_S {
                    return Err(bad(format!("{id}: timestamp {timestamp} breaks the 5 s grid")));
                }
                t.points.push(point);
            }
            _ => {
                if out.iter().any(|t| t.id == id) {
                    return Err(bad(format!("{id}: rows are not contiguous")));
                }
                if timestamp % GRID_STEP_S != 0 {
                    return Err(bad(format!("{id}: timestamp {timestamp} is off the 5 s grid")));
                }
                out.push(Trajectory { id, points: vec![point] });
            }
        }
    }
    Ok(out)
}

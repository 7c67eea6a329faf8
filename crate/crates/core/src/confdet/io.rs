use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{DetectError, EnrichedFlight, EnrichedPoint, NeighborFeatures, NeighborSlot, NEIGHBOR_FEATURES, SLOT_WIDTH};
use crate::trajstore::FlightId;

const LEADING: [&str; 6] = ["flight_id", "timestamp", "h", "s_h", "s_v", "conflict"];

pub fn enriched_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = LEADING.iter().map(|s| s.to_string()).collect();
    for slot in 0..k {
        h.push(format!("n{slot}_present"));
        for name in NeighborFeatures::NAMES {
            h.push(format!("n{slot}_{name}"));
        }
    }
    h
}

pub(crate) fn enriched_record(id: &str, p: &EnrichedPoint) -> Vec<String> {
    let mut r = Vec::with_capacity(LEADING.len() + p.slots.len() * SLOT_WIDTH);
    r.push(id.to_string());
    r.push(p.timestamp.to_string());
    r.push(p.h.to_string());
    r.push(p.s_h.to_string());
    r.push(p.s_v.to_string());
    r.push(u8::from(p.conflict).to_string());
    for s in &p.slots {
        r.push(u8::from(s.present).to_string());
        r.extend(s.features.to_array().iter().map(f64::to_string));
    }
    r
}

/// Slot count implied by a header, checking every column name.
pub(crate) fn slots_in_header(headers: &csv::StringRecord, extra: usize, path: &str) -> Result<usize, DetectError> {
    let n = headers.len();
    let body = n.checked_sub(LEADING.len() + extra).filter(|b| b % SLOT_WIDTH == 0);
    let Some(body) = body else {
        return Err(DetectError::Malformed {
            path: path.into(),
            line: 1,
            msg: format!("unexpected column count {n}"),
        });
    };
    let k = body / SLOT_WIDTH;
    let expected = enriched_header(k);
    for (i, want) in expected.iter().enumerate() {
        if headers[i].trim() != want {
            return Err(DetectError::Malformed {
                path: path.into(),
                line: 1,
                msg: format!("column {i}: expected `{want}`, found `{}`", &headers[i]),
            });
        }
    }
    Ok(k)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Parse the leading enriched columns of a record.
pub(crate) fn parse_enriched(rec: &csv::StringRecord, k: usize, path: &str) -> Result<(String, EnrichedPoint), DetectError> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let bad = |msg: String| DetectError::Malformed {
        path: path.into(),
        line,
        msg,
    };
    let num = |i: usize| -> Result<f64, DetectError> {
        let raw = rec.get(i).unwrap_or("").trim();
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(format!("column {i}: cannot parse `{raw}` as a finite number")))
    };
    let flag = |i: usize| -> Result<bool, DetectError> {
        let raw = rec.get(i).unwrap_or("");
        parse_bool(raw).ok_or_else(|| bad(format!("column {i}: expected 0/1, found `{raw}`")))
    };
    let id = rec[0].trim().to_string();
    let timestamp: i64 = rec[1]
        .trim()
        .parse()
        .map_err(|_| bad(format!("timestamp: cannot parse `{}`", &rec[1])))?;
    let mut slots = Vec::with_capacity(k);
    let mut count = 0;
    for s in 0..k {
        let base = LEADING.len() + s * SLOT_WIDTH;
        let present = flag(base)?;
        let mut f = [0.0; NEIGHBOR_FEATURES];
        for (j, v) in f.iter_mut().enumerate() {
            *v = num(base + 1 + j)?;
        }
        count += usize::from(present);
        slots.push(NeighborSlot {
            present,
            features: NeighborFeatures::from_array(&f),
            intruder: None,
        });
    }
    Ok((
        id,
        EnrichedPoint {
            timestamp,
            h: num(2)?,
            s_h: num(3)?,
            s_v: num(4)?,
            conflict: flag(5)?,
            slots,
            conflict_count: count,
        },
    ))
}

fn csv_err(path: &str) -> impl Fn(csv::Error) -> DetectError + '_ {
    move |source| DetectError::Csv {
        path: path.to_string(),
        source,
    }
}

pub fn write_enriched(path: &Path, flights: &[EnrichedFlight], k: usize) -> Result<(), DetectError> {
    let p = path.display().to_string();
    let file = File::create(path).map_err(|source| DetectError::Io { path: p.clone(), source })?;
    write_enriched_to(file, flights, k, &p)
}

pub fn write_enriched_to<W: Write>(writer: W, flights: &[EnrichedFlight], k: usize, path: &str) -> Result<(), DetectError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(enriched_header(k)).map_err(csv_err(path))?;
    for f in flights {
        let id = f.id.to_string();
        for p in &f.points {
            w.write_record(enriched_record(&id, p)).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|source| DetectError::Io {
        path: path.to_string(),
        source,
    })
}

/// Group rows by flight id in order of first appearance.
pub(crate) fn group_rows<T>(rows: Vec<(String, T)>) -> Vec<(String, Vec<T>)> {
    let mut order: Vec<(String, Vec<T>)> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (id, row) in rows {
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push((id, Vec::new()));
            order.len() - 1
        });
        order[slot].1.push(row);
    }
    order
}

pub fn read_enriched(path: &Path) -> Result<(Vec<EnrichedFlight>, usize), DetectError> {
    let p = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(&p))?;
    let headers = rdr.headers().map_err(csv_err(&p))?.clone();
    let k = slots_in_header(&headers, 0, &p)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&p))?;
        rows.push(parse_enriched(&rec, k, &p)?);
    }
    let flights = group_rows(rows)
        .into_iter()
        .map(|(id, points)| {
            let id: FlightId = id.parse().map_err(|_| DetectError::Malformed {
                path: p.clone(),
                line: 0,
                msg: format!("invalid flight id `{id}`"),
            })?;
            Ok(EnrichedFlight {
                id,
                fixpoint: None,
                points,
                overflow: 0,
            })
        })
        .collect::<Result<Vec<_>, DetectError>>()?;
    Ok((flights, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let id: FlightId = "AB1:LEMD:LEBL:2020-01-01:0".parse().unwrap();
        let mut slots = vec![NeighborSlot::default(); 2];
        slots[0] = NeighborSlot {
            present: true,
            features: NeighborFeatures::from_array(&[0.1, 0.2, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 0.6, 0.8, -1.0, 0.0]),
            intruder: None,
        };
        let f = EnrichedFlight {
            id,
            fixpoint: None,
            points: vec![EnrichedPoint {
                timestamp: 100,
                h: 271.123456789,
                s_h: 450.0,
                s_v: -0.5,
                conflict: true,
                slots,
                conflict_count: 1,
            }],
            overflow: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_enriched(&path, std::slice::from_ref(&f), 2).unwrap();
        let (back, k) = read_enriched(&path).unwrap();
        assert_eq!(k, 2);
        assert_eq!(back, vec![f]);
    }
}

use std::fs::File;
use std::path::Path;

use super::{ActionClass, ActionEvent, ContinuousActions, LabelError, LabeledFlight, LabeledRow, Mode};
use crate::confdet::io::{enriched_record, group_rows, parse_enriched, slots_in_header};
use crate::confdet::enriched_header;

const LABEL_COLUMNS: [&str; 8] = [
    "mode",
    "action",
    "d_course",
    "d_sh",
    "d_sv",
    "d_t",
    "is_actual_ratp",
    "is_annotated_ratp",
];

const EVENT_COLUMNS: [&str; 4] = ["flight_id", "mwm_code", "time_annotation_s", "point_timestamp_s"];

fn csv_err(path: &str) -> impl Fn(csv::Error) -> LabelError + '_ {
    move |source| LabelError::Csv {
        path: path.to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<csv::Writer<File>, LabelError> {
    let file = File::create(path).map_err(|source| LabelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn open(path: &Path) -> Result<csv::Reader<File>, LabelError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| LabelError::Io { path: p, source })?;
    Ok(csv::Reader::from_reader(file))
}

fn flush(mut w: csv::Writer<File>, path: &str) -> Result<(), LabelError> {
    w.flush().map_err(|source| LabelError::Io {
        path: path.to_string(),
        source,
    })
}

fn bit(b: bool) -> String {
    u8::from(b).to_string()
}

pub fn write_labeled(path: &Path, flights: &[LabeledFlight], k: usize) -> Result<(), LabelError> {
    let p = path.display().to_string();
    let mut w = create(path)?;
    let mut header = enriched_header(k);
    header.extend(LABEL_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(csv_err(&p))?;
    for f in flights {
        let id = f.id.to_string();
        for r in &f.rows {
            let mut rec = enriched_record(&id, &r.point);
            rec.push(r.mode.to_string());
            rec.push(r.action.to_string());
            rec.extend(r.cont.to_array().iter().map(f64::to_string));
            rec.push(bit(r.is_actual_ratp));
            rec.push(bit(r.is_annotated_ratp));
            w.write_record(&rec).map_err(csv_err(&p))?;
        }
    }
    flush(w, &p)
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw.trim() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

pub fn read_labeled(path: &Path) -> Result<(Vec<LabeledFlight>, usize), LabelError> {
    let p = path.display().to_string();
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(csv_err(&p))?.clone();
    let k = slots_in_header(&headers, LABEL_COLUMNS.len(), &p)?;
    let base = headers.len() - LABEL_COLUMNS.len();
    for (i, name) in LABEL_COLUMNS.iter().enumerate() {
        if headers[base + i].trim() != *name {
            return Err(LabelError::Malformed {
                path: p,
                line: 1,
                msg: format!("expected column `{name}` at position {}", base + i),
            });
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&p))?;
        let line = rec.position().map(|x| x.line()).unwrap_or(0);
        let bad = |msg: String| LabelError::Malformed {
            path: p.clone(),
            line,
            msg,
        };
        let (id, point) = parse_enriched(&rec, k, &p)?;
        let num = |i: usize| -> Result<f64, LabelError> {
            rec[base + i]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("{}: not a finite number", LABEL_COLUMNS[i])))
        };
        let flag = |i: usize| parse_flag(&rec[base + i]).ok_or_else(|| bad(format!("{}: expected 0/1", LABEL_COLUMNS[i])));
        let row = LabeledRow {
            point,
            mode: rec[base].parse()?,
            action: rec[base + 1].parse()?,
            cont: ContinuousActions {
                d_course: num(2)?,
                d_sh: num(3)?,
                d_sv: num(4)?,
                d_t: num(5)?,
            },
            is_actual_ratp: flag(6)?,
            is_annotated_ratp: flag(7)?,
        };
        rows.push((id, row));
    }
    let flights = group_rows(rows)
        .into_iter()
        .map(|(id, rows)| {
            Ok(LabeledFlight {
                id: id.parse().map_err(|_| LabelError::Malformed {
                    path: p.clone(),
                    line: 0,
                    msg: format!("invalid flight id `{id}`"),
                })?,
                rows,
            })
        })
        .collect::<Result<Vec<_>, LabelError>>()?;
    Ok((flights, k))
}

/// Table of mode shares per subsampling step.
pub fn write_priors(path: &Path, priors: &[(usize, [f64; 3])]) -> Result<(), LabelError> {
    let p = path.display().to_string();
    let mut w = create(path)?;
    w.write_record(["step", "C0", "C1", "C2"]).map_err(csv_err(&p))?;
    for (step, s) in priors {
        w.write_record([step.to_string(), s[0].to_string(), s[1].to_string(), s[2].to_string()])
            .map_err(csv_err(&p))?;
    }
    flush(w, &p)
}

pub fn write_action_events(path: &Path, events: &[ActionEvent]) -> Result<(), LabelError> {
    let p = path.display().to_string();
    let mut w = create(path)?;
    w.write_record(EVENT_COLUMNS).map_err(csv_err(&p))?;
    for e in events {
        w.write_record([
            e.flight.to_string(),
            e.code.clone(),
            e.event_time.to_string(),
            e.point_time.to_string(),
        ])
        .map_err(csv_err(&p))?;
    }
    flush(w, &p)
}

pub fn read_action_events(path: &Path) -> Result<Vec<ActionEvent>, LabelError> {
    let p = path.display().to_string();
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(csv_err(&p))?.clone();
    if headers.iter().map(str::trim).ne(EVENT_COLUMNS) {
        return Err(LabelError::Malformed {
            path: p,
            line: 1,
            msg: format!("expected header {}", EVENT_COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&p))?;
        let line = rec.position().map(|x| x.line()).unwrap_or(0);
        let bad = |msg: String| LabelError::Malformed {
            path: p.clone(),
            line,
            msg,
        };
        out.push(ActionEvent {
            flight: rec[0].trim().parse().map_err(|_| bad(format!("invalid flight id `{}`", &rec[0])))?,
            code: rec[1].trim().to_string(),
            event_time: rec[2].trim().parse().map_err(|_| bad("time_annotation_s: not a number".into()))?,
            point_time: rec[3].trim().parse().map_err(|_| bad("point_timestamp_s: not an integer".into()))?,
        });
    }
    Ok(out)
}

/// The columns evaluation needs from a labelled or predicted file.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub flight: String,
    pub timestamp: i64,
    pub mode: Mode,
    pub action: ActionClass,
    pub is_actual_ratp: bool,
    pub is_annotated_ratp: bool,
}

/// Read any file with `flight_id,timestamp,mode,action` columns; RATP flag
/// columns default to 0 when absent.
pub fn read_eval_rows(path: &Path) -> Result<Vec<EvalRow>, LabelError> {
    let p = path.display().to_string();
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(csv_err(&p))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| LabelError::Malformed {
            path: p.clone(),
            line: 1,
            msg: format!("missing column `{name}`"),
        })
    };
    let (fi, ti, mi, ai) = (need("flight_id")?, need("timestamp")?, need("mode")?, need("action")?);
    let (ra, rn) = (col("is_actual_ratp"), col("is_annotated_ratp"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&p))?;
        let line = rec.position().map(|x| x.line()).unwrap_or(0);
        let bad = |msg: String| LabelError::Malformed {
            path: p.clone(),
            line,
            msg,
        };
        let flag = |idx: Option<usize>| -> Result<bool, LabelError> {
            match idx {
                None => Ok(false),
                Some(i) => parse_flag(&rec[i]).ok_or_else(|| bad(format!("column {i}: expected 0/1"))),
            }
        };
        out.push(EvalRow {
            flight: rec[fi].trim().to_string(),
            timestamp: rec[ti].trim().parse().map_err(|_| bad("timestamp: not an integer".into()))?,
            mode: rec[mi].parse()?,
            action: rec[ai].parse()?,
            is_actual_ratp: flag(ra)?,
            is_annotated_ratp: flag(rn)?,
        });
    }
    Ok(out)
}

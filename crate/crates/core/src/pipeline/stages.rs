use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{crossval, echo_config, PipelineConfig, PipelineError};
use crate::confdet::{enrich_all, read_airports, read_enriched, write_enriched, EnrichedFlight, Setting};
use crate::evofan::{fit_deviation_stats, DeviationStats};
use crate::geokin::GeoPoint;
use crate::labeler::{
    label_corpus, prior_report, read_action_events, read_eval_rows, read_labeled, write_action_events, write_labeled,
    write_priors, ActionEvent, EvalRow, LabeledFlight, LabeledRow,
};
use crate::reactmodel::{loss_curve_csv, train, Feedback, ModelKind, PredictionRow, ReactModel, SeqData};
use crate::synthgen::generate;
use crate::trajstore::{associate_events, AssociationOutcome, preprocess_flight, read_events, read_surveillance, read_tracks, write_tracks};
use crate::wmetrics::{evaluate, score, ClassSystem, EvalPoint, MetricsReport};

pub const TRACKS_FILE: &str = "tracks.csv";
pub const ACTION_EVENTS_FILE: &str = "action_events.csv";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const STATS_FILE: &str = "deviation_stats.json";
pub const ENRICHED_FILE: &str = "enriched.csv";
pub const ENRICH_REPORT_FILE: &str = "enrich_report.json";
pub const LABELED_FILE: &str = "labeled.csv";
pub const PRIORS_FILE: &str = "priors.csv";
pub const LABEL_REPORT_FILE: &str = "label_report.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_MODES_FILE: &str = "metrics_modes.csv";
pub const METRICS_ACTIONS_FILE: &str = "metrics_actions.csv";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const ENCOUNTERS_FILE: &str = "encounters.json";

pub fn model_file(kind: ModelKind) -> String {
    format!("model_{}.bin", kind_name(kind))
}

pub fn loss_curve_file(kind: ModelKind) -> String {
    format!("loss_curve_{}.csv", kind_name(kind))
}

pub fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Vae => "vae",
        ModelKind::Encoder => "encoder",
    }
}

fn require(stage: &'static str, path: &Path) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::Stage {
            stage,
            message: format!("input file not found: {}", path.display()),
        })
    }
}

fn write(stage: &'static str, path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::Stage {
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

fn write_json(stage: &'static str, path: &Path, v: &serde_json::Value) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(v).expect("json value serialises");
    s.push('\n');
    write(stage, path, &s)
}

fn fail<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::stage(stage)(e.to_string())
}

fn prepare(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    cfg.validate()?;
    echo_config(cfg, out)
}

/// Generate a synthetic scenario into `out`.
pub fn run_synth(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    const S: &str = "synth";
    prepare(cfg, out)?;
    let sc = generate(&cfg.synth, &cfg.detect, &cfg.label).map_err(fail(S))?;
    sc.write(out).map_err(fail(S))?;
    let enc = serde_json::to_value(&sc.encounters).expect("encounters serialise");
    write_json(S, &out.join(ENCOUNTERS_FILE), &json!({ "flights": sc.trajectories.len(), "encounters": enc }))?;
    log::info!("synth: {} flights, {} events", sc.trajectories.len(), sc.events.len());
    Ok(())
}

/// Resample surveillance into 5 s tracks and attach controller events.
pub fn run_ingest(cfg: &PipelineConfig, surveillance: &Path, events: &Path, out: &Path) -> Result<(), PipelineError> {
    const S: &str = "ingest";
    prepare(cfg, out)?;
    require(S, surveillance)?;
    require(S, events)?;
    let ingested = read_surveillance(surveillance).map_err(fail(S))?;
    let mut tracks = Vec::new();
    let mut dropped = Vec::new();
    for raw in &ingested.flights {
        match preprocess_flight(raw, &cfg.preprocess) {
            Ok(t) => tracks.extend(t),
            Err(e) => {
                log::warn!("ingest: dropping {}: {e}", raw.callsign);
                dropped.push(format!("{}:{}:{}:{}: {e}", raw.callsign, raw.apt_from, raw.apt_to, raw.date));
            }
        }
    }
    let evs = read_events(events).map_err(fail(S))?;
    let assoc = associate_events(&evs, &tracks);
    let actions = action_events(&assoc);
    write_tracks(&out.join(TRACKS_FILE), &tracks).map_err(fail(S))?;
    write_action_events(&out.join(ACTION_EVENTS_FILE), &actions).map_err(fail(S))?;
    let r = &ingested.report;
    write_json(
        S,
        &out.join(INGEST_REPORT_FILE),
        &json!({
            "rows": r.rows,
            "rejected_out_of_range": r.rejected_out_of_range,
            "duplicates_dropped": r.duplicates_dropped,
            "raw_flights": r.flights,
            "trajectories": tracks.len(),
            "dropped_flights": dropped,
            "events": evs.len(),
            "associated": assoc.associations.len(),
            "unassociated": assoc.unassociated,
            "ambiguous": assoc.ambiguous,
        }),
    )
}

fn action_events(assoc: &AssociationOutcome) -> Vec<ActionEvent> {
    assoc
        .associations
        .iter()
        .map(|a| ActionEvent {
            flight: a.flight.clone(),
            code: a.event.mwm_code.clone(),
            event_time: a.event.timestamp,
            point_time: a.point_timestamp,
        })
        .collect()
}

/// Generate, enrich and label a scenario without touching disk. Returns the
/// subsampled flights and the rows before subsampling.
pub fn label_scenario(cfg: &PipelineConfig) -> Result<(Vec<LabeledFlight>, Vec<Vec<LabeledRow>>), String> {
    let sc = generate(&cfg.synth, &cfg.detect, &cfg.label).map_err(|e| e.to_string())?;
    let actions = action_events(&associate_events(&sc.events, &sc.trajectories));
    let stats = fit_deviation_stats(&sc.trajectories, cfg.evolution.n_bins).map_err(|e| e.to_string())?;
    let airports: HashMap<String, GeoPoint> = sc.airports.clone().into_iter().collect();
    let enriched = enrich_with(cfg, &sc.trajectories, &stats, &airports);
    let (labeled, raw, _) = label_corpus(&enriched, &actions, &cfg.label).map_err(|e| e.to_string())?;
    Ok((labeled, raw))
}

/// Fit deviation statistics, detect conflicts and build per-point features.
pub fn run_enrich(cfg: &PipelineConfig, tracks: &Path, airports: Option<&Path>, out: &Path) -> Result<(), PipelineError> {
    const S: &str = "enrich";
    prepare(cfg, out)?;
    require(S, tracks)?;
    let trajs = read_tracks(tracks).map_err(fail(S))?;
    let airports: HashMap<String, GeoPoint> = match (cfg.detect.setting, airports) {
        (Setting::SectorIgnorant, Some(p)) => {
            require(S, p)?;
            read_airports(p).map_err(fail(S))?
        }
        (Setting::SectorIgnorant, None) => {
            return Err(PipelineError::stage(S)("the sector-ignorant setting needs an airports file".into()))
        }
        (Setting::SectorRelated, _) => HashMap::new(),
    };
    let stats = fit_deviation_stats(&trajs, cfg.evolution.n_bins).map_err(fail(S))?;
    stats.save(&out.join(STATS_FILE)).map_err(fail(S))?;
    let (flights, report) = enrich_all(&trajs, &stats, &cfg.detect, &airports);
    write_enriched(&out.join(ENRICHED_FILE), &flights, cfg.detect.max_neighbors).map_err(fail(S))?;
    write_json(
        S,
        &out.join(ENRICH_REPORT_FILE),
        &json!({
            "flights": report.flights,
            "points": report.points,
            "conflict_points": report.conflict_points,
            "overflow": report.overflow,
            "skipped": report.skipped,
        }),
    )
}

/// Enrich in memory with given statistics; used by tests and examples.
pub fn enrich_with(
    cfg: &PipelineConfig,
    trajs: &[crate::trajstore::Trajectory],
    stats: &DeviationStats,
    airports: &HashMap<String, GeoPoint>,
) -> Vec<EnrichedFlight> {
    enrich_all(trajs, stats, &cfg.detect, airports).0
}

/// Assign modes and actions, subsample and report priors.
pub fn run_label(cfg: &PipelineConfig, enriched: &Path, actions: &Path, out: &Path) -> Result<(), PipelineError> {
    const S: &str = "label";
    prepare(cfg, out)?;
    require(S, enriched)?;
    require(S, actions)?;
    let (flights, k) = read_enriched(enriched).map_err(fail(S))?;
    let events = read_action_events(actions).map_err(fail(S))?;
    let (labeled, raw, report) = label_corpus(&flights, &events, &cfg.label).map_err(fail(S))?;
    write_labeled(&out.join(LABELED_FILE), &labeled, k).map_err(fail(S))?;
    let priors = prior_report(&raw, &cfg.eval.prior_steps).map_err(fail(S))?;
    write_priors(&out.join(PRIORS_FILE), &priors).map_err(fail(S))?;
    let v = serde_json::to_value(&report).expect("report serialises");
    write_json(S, &out.join(LABEL_REPORT_FILE), &v)
}

pub fn sequences(flights: &[LabeledFlight]) -> Vec<SeqData> {
    flights.iter().map(SeqData::from_labeled).collect()
}

/// Train one model on a labelled file.
pub fn run_train(cfg: &PipelineConfig, labeled: &Path, kind: ModelKind, out: &Path) -> Result<(), PipelineError> {
    const S: &str = "train";
    prepare(cfg, out)?;
    require(S, labeled)?;
    let (flights, _) = read_labeled(labeled).map_err(fail(S))?;
    let data = sequences(&flights);
    let (model, curve) = train(&data, &cfg.model, kind).map_err(fail(S))?;
    model.save(&out.join(model_file(kind))).map_err(fail(S))?;
    write(S, &out.join(loss_curve_file(kind)), &loss_curve_csv(&curve))
}

fn prediction_csv(rows: &[(String, i64, PredictionRow, bool, bool)]) -> String {
    let mut s = String::from(
        "flight_id,timestamp,mode,action,p_C0,p_C1,p_C2,p_A0,p_A1,p_A2,d_course,d_sh,d_sv,d_t,is_actual_ratp,is_annotated_ratp\n",
    );
    let modes = ["C0", "C1", "C2"];
    let actions = ["A0", "A1", "A2"];
    for (id, t, p, a, n) in rows {
        s.push_str(&format!(
            "{id},{t},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            modes[p.mode],
            actions[p.action],
            p.mode_probs[0],
            p.mode_probs[1],
            p.mode_probs[2],
            p.action_probs[0],
            p.action_probs[1],
            p.action_probs[2],
            p.cont[0],
            p.cont[1],
            p.cont[2],
            p.cont[3],
            u8::from(*a),
            u8::from(*n)
        ));
    }
    s
}

/// Self-fed predictions for every flight of a labelled or enriched file.
pub fn run_predict(cfg: &PipelineConfig, model: &Path, input: &Path, out: &Path) -> Result<(), PipelineError> {
    const S: &str = "predict";
    prepare(cfg, out)?;
    require(S, model)?;
    require(S, input)?;
    let m = ReactModel::load(model).map_err(fail(S))?;
    let header = fs::read_to_string(input)
        .map_err(fail(S))?
        .lines()
        .next()
        .unwrap_or("")
        .to_string();
    let labeled_input = header.split(',').any(|c| c.trim() == "mode");
    let flights: Vec<(String, Vec<i64>, SeqData, Vec<(bool, bool)>)> = if labeled_input {
        let (fl, _) = read_labeled(input).map_err(fail(S))?;
        fl.iter()
            .map(|f| {
                (
                    f.id.to_string(),
                    f.rows.iter().map(|r| r.point.timestamp).collect(),
                    SeqData::from_labeled(f),
                    f.rows.iter().map(|r| (r.is_actual_ratp, r.is_annotated_ratp)).collect(),
                )
            })
            .collect()
    } else {
        let (fl, _) = read_enriched(input).map_err(fail(S))?;
        fl.iter()
            .map(|f| {
                let lf = LabeledFlight {
                    id: f.id.clone(),
                    rows: f
                        .points
                        .iter()
                        .map(|p| crate::labeler::LabeledRow {
                            point: p.clone(),
                            mode: crate::labeler::Mode::C0,
                            action: crate::labeler::ActionClass::A0,
                            cont: Default::default(),
                            is_actual_ratp: false,
                            is_annotated_ratp: false,
                        })
                        .collect(),
                };
                (
                    f.id.to_string(),
                    f.points.iter().map(|p| p.timestamp).collect(),
                    SeqData::from_labeled(&lf),
                    vec![(false, false); f.points.len()],
                )
            })
            .collect()
    };
    let mut rows = Vec::new();
    for (id, times, seq, flags) in flights {
        let preds = m
            .predict(&seq.features, Feedback::SelfFed)
            .map_err(|e| PipelineError::stage(S)(format!("flight {id}: {e}")))?;
        for ((t, p), (a, n)) in times.into_iter().zip(preds).zip(flags) {
            rows.push((id.clone(), t, p, a, n));
        }
    }
    write(S, &out.join(PREDICTIONS_FILE), &prediction_csv(&rows))
}

/// Join truth and prediction rows into per-flight evaluation points.
pub fn join_eval(truth: &[EvalRow], pred: &[EvalRow], actions: bool) -> Result<Vec<Vec<EvalPoint>>, String> {
    let index: HashMap<(&str, i64), &EvalRow> = pred.iter().map(|r| ((r.flight.as_str(), r.timestamp), r)).collect();
    let mut by_flight: BTreeMap<&str, Vec<EvalPoint>> = BTreeMap::new();
    for r in truth {
        let p = index
            .get(&(r.flight.as_str(), r.timestamp))
            .ok_or_else(|| format!("no prediction for flight {} at t={}", r.flight, r.timestamp))?;
        let (t, q) = if actions {
            (r.action.index(), p.action.index())
        } else {
            (r.mode.index(), p.mode.index())
        };
        by_flight.entry(r.flight.as_str()).or_default().push(EvalPoint {
            timestamp: r.timestamp as f64,
            truth: t,
            pred: q,
            is_actual_ratp: r.is_actual_ratp,
            is_annotated_ratp: r.is_annotated_ratp,
        });
    }
    let mut out: Vec<Vec<EvalPoint>> = by_flight.into_values().collect();
    for f in &mut out {
        f.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    }
    Ok(out)
}

pub fn evaluate_points(cfg: &PipelineConfig, flights: &[Vec<EvalPoint>], system: &ClassSystem) -> Result<MetricsReport, String> {
    evaluate(
        flights,
        system,
        &cfg.eval.score,
        cfg.eval.critical_window_s,
        cfg.label.augment_window_s as f64,
    )
    .map_err(|e| e.to_string())
}

/// Weighted and standard metrics of predictions against truth.
pub fn run_evaluate(cfg: &PipelineConfig, truth: &Path, pred: &Path, out: &Path) -> Result<(), PipelineError> {
    const S: &str = "evaluate";
    prepare(cfg, out)?;
    require(S, truth)?;
    require(S, pred)?;
    let t = read_eval_rows(truth).map_err(fail(S))?;
    let p = read_eval_rows(pred).map_err(fail(S))?;
    let err = PipelineError::stage(S);
    let modes = evaluate_points(cfg, &join_eval(&t, &p, false).map_err(&err)?, &ClassSystem::modes()).map_err(&err)?;
    let actions = evaluate_points(cfg, &join_eval(&t, &p, true).map_err(&err)?, &ClassSystem::actions()).map_err(&err)?;
    write(S, &out.join(METRICS_MODES_FILE), &modes.to_csv())?;
    write(S, &out.join(METRICS_ACTIONS_FILE), &actions.to_csv())?;
    write_json(S, &out.join(METRICS_JSON_FILE), &json!({ "modes": modes, "actions": actions }))
}

/// Score function samples for plotting, one column per width.
pub fn score_curve_csv(cfg: &PipelineConfig) -> String {
    let widths = [1u32, 3, 5, 7];
    let mut s = String::from("distance_s");
    for n in widths {
        s.push_str(&format!(",n{n}"));
    }
    s.push('\n');
    for x in 0..=150 {
        s.push_str(&x.to_string());
        for n in widths {
            let p = crate::wmetrics::ScoreParams { n };
            s.push_str(&format!(",{}", score(x as f64, &p)));
        }
        s.push('\n');
    }
    let _ = cfg;
    s
}

pub const CV_FOLDS_FILE: &str = "cv_folds.csv";
pub const CV_SUMMARY_FILE: &str = "cv_summary.csv";
pub const CRITICAL_FILE: &str = "critical_misses.csv";
pub const SEQUENCES_FILE: &str = "mode_sequences.csv";
pub const SCORE_CURVE_FILE: &str = "score_curve.csv";
pub const REPORT_JSON_FILE: &str = "report.json";

/// Cross-validate both models and write tables and plot data.
pub fn run_report(cfg: &PipelineConfig, labeled: &Path, priors: Option<&Path>, out: &Path) -> Result<(), PipelineError> {
    const S: &str = "report";
    prepare(cfg, out)?;
    require(S, labeled)?;
    let (flights, _) = read_labeled(labeled).map_err(fail(S))?;
    let cv = crossval::cross_validate(cfg, &flights).map_err(PipelineError::stage(S))?;
    write(S, &out.join(CV_FOLDS_FILE), &cv.folds_csv())?;
    write(S, &out.join(CV_SUMMARY_FILE), &cv.summary_csv())?;
    write(S, &out.join(CRITICAL_FILE), &cv.critical_csv())?;
    write(S, &out.join(SEQUENCES_FILE), &cv.sequences_csv(&flights))?;
    write(S, &out.join(SCORE_CURVE_FILE), &score_curve_csv(cfg))?;
    if let Some(p) = priors {
        require(S, p)?;
        fs::copy(p, out.join(PRIORS_FILE)).map_err(fail(S))?;
    }
    write_json(S, &out.join(REPORT_JSON_FILE), &cv.summary_json())
}

/// Output locations of a full run rooted at `out`.
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Run every stage in order on a fresh synthetic scenario.
pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let l = RunLayout::new(out);
    let (syn, ing, enr, lab, rep) = (l.stage("synth"), l.stage("ingest"), l.stage("enrich"), l.stage("label"), l.stage("report"));
    run_synth(cfg, &syn)?;
    run_ingest(cfg, &syn.join(crate::synthgen::SURVEILLANCE_FILE), &syn.join(crate::synthgen::EVENTS_FILE), &ing)?;
    run_enrich(cfg, &ing.join(TRACKS_FILE), Some(&syn.join(crate::synthgen::AIRPORTS_FILE)), &enr)?;
    run_label(cfg, &enr.join(ENRICHED_FILE), &ing.join(ACTION_EVENTS_FILE), &lab)?;
    run_report(cfg, &lab.join(LABELED_FILE), Some(&lab.join(PRIORS_FILE)), &rep)
}

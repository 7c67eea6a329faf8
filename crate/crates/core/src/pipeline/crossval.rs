use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::{stages::evaluate_points, stages::kind_name, PipelineConfig};
use crate::labeler::LabeledFlight;
use crate::reactmodel::{train, Feedback, ModelConfig, ModelKind, PredictionRow, SeqData};
use crate::wmetrics::{ClassSystem, EvalPoint, MetricsReport};

/// Fold of each flight: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

pub fn predictions_to_eval(flight: &LabeledFlight, preds: &[PredictionRow]) -> Vec<EvalPoint> {
    flight
        .rows
        .iter()
        .zip(preds)
        .map(|(r, p)| EvalPoint {
            timestamp: r.point.timestamp as f64,
            truth: r.mode.index(),
            pred: p.mode,
            is_actual_ratp: r.is_actual_ratp,
            is_annotated_ratp: r.is_annotated_ratp,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub kind: ModelKind,
    pub metrics: MetricsReport,
    /// Held-out flight index and its self-fed predictions.
    pub predictions: Vec<(usize, Vec<PredictionRow>)>,
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub folds: Vec<FoldResult>,
}

/// Train both models on each fold's complement and score the held-out
/// flights with self-fed predictions.
pub fn cross_validate(cfg: &PipelineConfig, flights: &[LabeledFlight]) -> Result<CvOutcome, String> {
    let k = cfg.eval.folds;
    if flights.len() < k {
        return Err(format!("{} flights cannot fill {k} folds", flights.len()));
    }
    let data: Vec<SeqData> = flights.iter().map(SeqData::from_labeled).collect();
    let assign = fold_assignment(flights.len(), k, cfg.eval.fold_seed);
    let jobs: Vec<(usize, ModelKind)> = (0..k)
        .flat_map(|f| [ModelKind::Vae, ModelKind::Encoder].map(|m| (f, m)))
        .collect();
    let results: Vec<Result<FoldResult, String>> = jobs
        .par_iter()
        .map(|&(fold, kind)| {
            let train_set: Vec<SeqData> = (0..flights.len())
                .filter(|&i| assign[i] != fold)
                .map(|i| data[i].clone())
                .collect();
            let mc = ModelConfig {
                seed: cfg.model.seed.wrapping_add(fold as u64),
                ..cfg.model.clone()
            };
            let (model, curve) =
                train(&train_set, &mc, kind).map_err(|e| format!("fold {fold} {}: {e}", kind_name(kind)))?;
            let mut predictions = Vec::new();
            let mut points = Vec::new();
            for i in (0..flights.len()).filter(|&i| assign[i] == fold) {
                let p = model
                    .predict(&data[i].features, Feedback::SelfFed)
                    .map_err(|e| format!("flight {}: {e}", flights[i].id))?;
                points.push(predictions_to_eval(&flights[i], &p));
                predictions.push((i, p));
            }
            let metrics = evaluate_points(cfg, &points, &ClassSystem::modes())?;
            Ok(FoldResult {
                fold,
                kind,
                metrics,
                predictions,
                epochs: curve.len() - 1,
                final_loss: curve.last().map_or(f64::NAN, |c| c.loss.total),
            })
        })
        .collect();
    Ok(CvOutcome {
        folds: results.into_iter().collect::<Result<_, _>>()?,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl CvOutcome {
    pub fn of_kind(&self, kind: ModelKind) -> impl Iterator<Item = &FoldResult> {
        self.folds.iter().filter(move |f| f.kind == kind)
    }

    /// Weighted F1 of `class` for each fold of `kind`.
    pub fn wf1(&self, kind: ModelKind, class: usize) -> Vec<f64> {
        self.of_kind(kind).map(|f| f.metrics.classes[class].weighted.f1).collect()
    }

    pub fn critical_misses(&self, kind: ModelKind) -> (usize, usize) {
        self.of_kind(kind)
            .fold((0, 0), |(m, r), f| (m + f.metrics.critical_misses, r + f.metrics.actual_ratps))
    }

    pub fn folds_csv(&self) -> String {
        let mut s = String::from("fold,model,class,wp,wr,wf1,precision,recall,f1,support,final_loss\n");
        for f in &self.folds {
            for c in &f.metrics.classes {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    f.fold,
                    kind_name(f.kind),
                    c.class,
                    c.weighted.precision,
                    c.weighted.recall,
                    c.weighted.f1,
                    c.standard.precision,
                    c.standard.recall,
                    c.standard.f1,
                    c.support,
                    f.final_loss
                ));
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("model,class,wf1_mean,wf1_std,wf1_min,f1_mean\n");
        for kind in [ModelKind::Vae, ModelKind::Encoder] {
            for (c, name) in ["C0", "C1", "C2"].iter().enumerate() {
                let w = self.wf1(kind, c);
                let f: Vec<f64> = self.of_kind(kind).map(|r| r.metrics.classes[c].standard.f1).collect();
                let (m, sd) = mean_std(&w);
                let min = w.iter().copied().fold(f64::INFINITY, f64::min);
                s.push_str(&format!("{},{name},{m},{sd},{min},{}\n", kind_name(kind), mean_std(&f).0));
            }
        }
        s
    }

    pub fn critical_csv(&self) -> String {
        let mut s = String::from("fold,model,critical_misses,actual_ratps\n");
        for f in &self.folds {
            s.push_str(&format!(
                "{},{},{},{}\n",
                f.fold,
                kind_name(f.kind),
                f.metrics.critical_misses,
                f.metrics.actual_ratps
            ));
        }
        s
    }

    /// Truth and both models' modes for every held-out row.
    pub fn sequences_csv(&self, flights: &[LabeledFlight]) -> String {
        let modes = ["C0", "C1", "C2"];
        let mut vae: Vec<Option<&Vec<PredictionRow>>> = vec![None; flights.len()];
        let mut enc: Vec<Option<&Vec<PredictionRow>>> = vec![None; flights.len()];
        let mut fold_of = vec![0; flights.len()];
        for f in &self.folds {
            for (i, p) in &f.predictions {
                fold_of[*i] = f.fold;
                match f.kind {
                    ModelKind::Vae => vae[*i] = Some(p),
                    ModelKind::Encoder => enc[*i] = Some(p),
                }
            }
        }
        let mut s = String::from("flight_id,fold,timestamp,truth,vae,encoder,is_actual_ratp\n");
        for (i, fl) in flights.iter().enumerate() {
            let (Some(v), Some(e)) = (vae[i], enc[i]) else {
                continue;
            };
            for ((r, pv), pe) in fl.rows.iter().zip(v).zip(e) {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    fl.id,
                    fold_of[i],
                    r.point.timestamp,
                    r.mode,
                    modes[pv.mode],
                    modes[pe.mode],
                    u8::from(r.is_actual_ratp)
                ));
            }
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let per_model = |kind: ModelKind| {
            let (m, r) = self.critical_misses(kind);
            json!({
                "wf1": { "C0": self.wf1(kind, 0), "C1": self.wf1(kind, 1), "C2": self.wf1(kind, 2) },
                "critical_misses": m,
                "actual_ratps": r,
            })
        };
        json!({
            "folds": self.folds.iter().filter(|f| f.kind == ModelKind::Vae).count(),
            "vae": per_model(ModelKind::Vae),
            "encoder": per_model(ModelKind::Encoder),
        })
    }
}

//! Temporally weighted precision, recall and F1 around resolution-action
//! trajectory points (RATPs), plus the critical-miss counter.
//!
//! Classes split into G0 (no resolution action assigned) and G1 (a
//! resolution action assigned). A mismatch across the two groups is
//! weighted by how far, in time, the point lies from the nearest RATP.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("flight {flight}: G1 ground truth at t={timestamp} but the flight has no actual RATP")]
    Inconsistent { flight: usize, timestamp: f64 },
    #[error("flight {flight}: class index {class} out of range")]
    Class { flight: usize, class: usize },
    #[error("score parameter n must be at least 1")]
    ScoreParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    /// Width multiplier; the Gaussian standard deviation is `5 n` seconds.
    pub n: u32,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self { n: 5 }
    }
}

impl ScoreParams {
    pub fn sigma(&self) -> f64 {
        5.0 * self.n as f64
    }
}

/// `exp(-(x / 5n)^2 / 2)`; zero at infinite distance.
pub fn score(x: f64, params: &ScoreParams) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    let z = x / params.sigma();
    (-0.5 * z * z).exp()
}

/// Which class indices belong to G1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSystem {
    pub names: Vec<String>,
    pub g1: Vec<bool>,
}

impl ClassSystem {
    /// C0, C1, C2 with C1 the only resolution mode.
    pub fn modes() -> Self {
        Self {
            names: vec!["C0".into(), "C1".into(), "C2".into()],
            g1: vec![false, true, false],
        }
    }

    /// A0, A1, A2 with A1 and A2 resolution actions.
    pub fn actions() -> Self {
        Self {
            names: vec!["A0".into(), "A1".into(), "A2".into()],
            g1: vec![false, true, true],
        }
    }

    pub fn len(&self) -> usize {
        self.g1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g1.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub timestamp: f64,
    pub truth: usize,
    pub pred: usize,
    pub is_actual_ratp: bool,
    pub is_annotated_ratp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Temporal weights from the score function.
    Weighted,
    /// Every weight forced to 1: standard precision and recall.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightedCounts {
    pub tp_weighted: f64,
    pub fp_weighted: f64,
    pub fn_weighted: f64,
    pub tn_weighted: f64,
    pub tp_count: u64,
    pub fp_count: u64,
    pub fn_count: u64,
    pub tn_count: u64,
}

impl std::ops::AddAssign for WeightedCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp_weighted += o.tp_weighted;
        self.fp_weighted += o.fp_weighted;
        self.fn_weighted += o.fn_weighted;
        self.tn_weighted += o.tn_weighted;
        self.tp_count += o.tp_count;
        self.fp_count += o.fp_count;
        self.fn_count += o.fn_count;
        self.tn_count += o.tn_count;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a ratio was 0/0 and defaulted to 0.
    pub undefined: bool,
}

fn ratio(num: f64, den: f64, undefined: &mut bool) -> f64 {
    if den == 0.0 {
        *undefined = true;
        0.0
    } else {
        num / den
    }
}

/// Weighted precision over integer TP+FP counts, weighted recall, and
/// their harmonic mean.
pub fn wp_wr_wf1(c: &WeightedCounts) -> Prf {
    let mut undefined = false;
    let precision = ratio(c.tp_weighted, (c.tp_count + c.fp_count) as f64, &mut undefined);
    let recall = ratio(c.tp_weighted, c.tp_weighted + c.fn_weighted, &mut undefined);
    let f1 = ratio(2.0 * precision * recall, precision + recall, &mut undefined);
    Prf {
        precision,
        recall,
        f1,
        undefined,
    }
}

/// Distances (s) to the nearest actual RATP and to the nearest RATP of
/// either kind, for every point of one flight.
fn ratp_distances(points: &[EvalPoint]) -> (Vec<f64>, Vec<f64>) {
    let actual: Vec<f64> = points.iter().filter(|p| p.is_actual_ratp).map(|p| p.timestamp).collect();
    let any: Vec<f64> = points
        .iter()
        .filter(|p| p.is_actual_ratp || p.is_annotated_ratp)
        .map(|p| p.timestamp)
        .collect();
    let nearest = |set: &[f64], t: f64| set.iter().map(|s| (s - t).abs()).fold(f64::INFINITY, f64::min);
    (
        points.iter().map(|p| nearest(&actual, p.timestamp)).collect(),
        points.iter().map(|p| nearest(&any, p.timestamp)).collect(),
    )
}

/// Accumulate one-vs-rest counts for `class` over all flights.
pub fn accumulate(
    flights: &[Vec<EvalPoint>],
    class: usize,
    system: &ClassSystem,
    params: &ScoreParams,
    weighting: Weighting,
) -> Result<WeightedCounts, MetricsError> {
    if params.n == 0 {
        return Err(MetricsError::ScoreParams);
    }
    let mut total = WeightedCounts::default();
    for (fi, points) in flights.iter().enumerate() {
        let (d_actual, d_any) = ratp_distances(points);
        let mut c = WeightedCounts::default();
        for (i, p) in points.iter().enumerate() {
            if p.truth >= system.len() || p.pred >= system.len() {
                return Err(MetricsError::Class {
                    flight: fi,
                    class: p.truth.max(p.pred),
                });
            }
            let (truth_g1, pred_g1) = (system.g1[p.truth], system.g1[p.pred]);
            if truth_g1 && d_actual[i].is_infinite() {
                return Err(MetricsError::Inconsistent {
                    flight: fi,
                    timestamp: p.timestamp,
                });
            }
            if p.truth == p.pred {
                if p.truth == class {
                    c.tp_weighted += 1.0;
                    c.tp_count += 1;
                } else {
                    c.tn_weighted += 1.0;
                    c.tn_count += 1;
                }
                continue;
            }
            if p.pred != class && p.truth != class {
                c.tn_weighted += 1.0;
                c.tn_count += 1;
                continue;
            }
            // Mismatch involving `class`; both sides of a cross-group
            // mismatch share the same weight.
            let w = match (weighting, truth_g1, pred_g1) {
                (Weighting::Unit, _, _) => 1.0,
                (_, true, false) => score(d_actual[i], params),
                (_, false, true) => 1.0 - score(d_any[i], params),
                _ => 1.0,
            };
            if p.pred == class {
                c.fp_weighted += w;
                c.tp_weighted += 1.0 - w;
                c.fp_count += 1;
            } else {
                c.fn_weighted += w;
                c.tn_weighted += 1.0 - w;
                c.fn_count += 1;
            }
        }
        total += c;
    }
    Ok(total)
}

/// One count per actual RATP whose group (the actual RATP and the
/// annotated RATPs within `augment_window` before it) receives no G1
/// prediction at, or within `window` seconds of, any member.
pub fn critical_misses(flights: &[Vec<EvalPoint>], system: &ClassSystem, window: f64, augment_window: f64) -> usize {
    let mut misses = 0;
    for points in flights {
        let g1_pred: Vec<f64> = points
            .iter()
            .filter(|p| system.g1.get(p.pred).copied().unwrap_or(false))
            .map(|p| p.timestamp)
            .collect();
        for r in points.iter().filter(|p| p.is_actual_ratp) {
            let group = points.iter().filter(|p| {
                p.timestamp == r.timestamp
                    || (p.is_annotated_ratp && p.timestamp <= r.timestamp && r.timestamp - p.timestamp <= augment_window)
            });
            let hit = group
                .into_iter()
                .any(|g| g1_pred.iter().any(|t| (t - g.timestamp).abs() <= window));
            if !hit {
                misses += 1;
            }
        }
    }
    misses
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub weighted: Prf,
    pub standard: Prf,
    pub counts: WeightedCounts,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub critical_misses: usize,
    pub actual_ratps: usize,
}

pub fn evaluate(
    flights: &[Vec<EvalPoint>],
    system: &ClassSystem,
    params: &ScoreParams,
    window: f64,
    augment_window: f64,
) -> Result<MetricsReport, MetricsError> {
    let mut classes = Vec::with_capacity(system.len());
    for c in 0..system.len() {
        let counts = accumulate(flights, c, system, params, Weighting::Weighted)?;
        let unit = accumulate(flights, c, system, params, Weighting::Unit)?;
        classes.push(ClassMetrics {
            class: system.names[c].clone(),
            weighted: wp_wr_wf1(&counts),
            standard: wp_wr_wf1(&unit),
            counts,
            support: flights.iter().flatten().filter(|p| p.truth == c).count() as u64,
        });
    }
    Ok(MetricsReport {
        classes,
        critical_misses: critical_misses(flights, system, window, augment_window),
        actual_ratps: flights.iter().flatten().filter(|p| p.is_actual_ratp).count(),
    })
}

impl MetricsReport {
    /// One row per class: weighted and standard metrics and raw counts.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "class,wp,wr,wf1,precision,recall,f1,tp_weighted,fp_weighted,fn_weighted,tn_weighted,tp_count,fp_count,fn_count,tn_count,support,undefined\n",
        );
        for c in &self.classes {
            let k = &c.counts;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                c.class,
                c.weighted.precision,
                c.weighted.recall,
                c.weighted.f1,
                c.standard.precision,
                c.standard.recall,
                c.standard.f1,
                k.tp_weighted,
                k.fp_weighted,
                k.fn_weighted,
                k.tn_weighted,
                k.tp_count,
                k.fp_count,
                k.fn_count,
                k.tn_count,
                c.support,
                u8::from(c.weighted.undefined || c.standard.undefined)
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(t: f64, truth: usize, pred: usize, actual: bool) -> EvalPoint {
        EvalPoint {
            timestamp: t,
            truth,
            pred,
            is_actual_ratp: actual,
            is_annotated_ratp: false,
        }
    }

    #[test]
    fn score_values() {
        let p = ScoreParams::default();
        assert_eq!(score(0.0, &p), 1.0);
        assert!((score(20.0, &p) - 0.7261).abs() < 1e-4);
        assert!((score(70.0, &p) - 0.0198).abs() < 1e-4);
        assert_eq!(score(f64::INFINITY, &p), 0.0);
    }

    #[test]
    fn two_point_fixture() {
        let flights = vec![vec![pt(100.0, 1, 2, true), pt(130.0, 2, 1, false)]];
        let c = accumulate(&flights, 1, &ClassSystem::modes(), &ScoreParams::default(), Weighting::Weighted).unwrap();
        let m = wp_wr_wf1(&c);
        assert!((m.precision - 0.4868).abs() < 1e-3);
        assert!((m.recall - 0.3274).abs() < 1e-3);
        assert!((m.f1 - 0.3915).abs() < 1e-3);
    }

    #[test]
    fn perfect_and_empty() {
        let flights = vec![vec![pt(0.0, 0, 0, false), pt(5.0, 1, 1, true), pt(10.0, 2, 2, false)]];
        let sys = ClassSystem::modes();
        for c in 0..3 {
            let k = accumulate(&flights, c, &sys, &ScoreParams::default(), Weighting::Weighted).unwrap();
            let m = wp_wr_wf1(&k);
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        let none = vec![vec![pt(0.0, 0, 0, false)]];
        let m = wp_wr_wf1(&accumulate(&none, 1, &sys, &ScoreParams::default(), Weighting::Weighted).unwrap());
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.undefined);
    }

    #[test]
    fn g1_truth_without_actual_ratp_is_rejected() {
        let flights = vec![vec![pt(0.0, 1, 0, false)]];
        assert!(matches!(
            accumulate(&flights, 1, &ClassSystem::modes(), &ScoreParams::default(), Weighting::Weighted),
            Err(MetricsError::Inconsistent { .. })
        ));
    }

    #[test]
    fn critical_miss_fixtures() {
        let sys = ClassSystem::modes();
        let hit = vec![vec![pt(100.0, 1, 1, true)]];
        assert_eq!(critical_misses(&hit, &sys, 70.0, 250.0), 0);
        let late = vec![vec![pt(100.0, 1, 2, true), pt(160.0, 2, 1, false)]];
        assert_eq!(critical_misses(&late, &sys, 70.0, 250.0), 0);
        let never = vec![vec![pt(100.0, 1, 2, true), pt(105.0, 2, 2, false)]];
        assert_eq!(critical_misses(&never, &sys, 70.0, 250.0), 1);
        let too_late = vec![vec![pt(100.0, 1, 2, true), pt(175.0, 2, 1, false)]];
        assert_eq!(critical_misses(&too_late, &sys, 70.0, 250.0), 1);
    }
}

use atco_react::confdet::{fans_conflict, fans_conflict_exhaustive, DetectConfig, EnrichedPoint};
use atco_react::evofan::{build_fan, equal_frequency_sizes, DeviationStats};
use atco_react::geokin::{
    cpa, cpa_planar, destination, horizontal_distance, initial_bearing, GeoPoint, GeoState, Kinematics, PlaneState,
};
use atco_react::labeler::{subsample, ActionClass, ContinuousActions, LabeledRow, Mode};
use atco_react::pipeline::fold_assignment;
use atco_react::trajstore::TrackPoint;
use atco_react::wmetrics::{accumulate, score, wp_wr_wf1, ClassSystem, EvalPoint, ScoreParams, Weighting};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = GeoPoint> {
    (-10.0..5.0f64, 35.0..44.0f64).prop_map(|(lon, lat)| GeoPoint::new(lon, lat, 35000.0).unwrap())
}

fn plane_state() -> impl Strategy<Value = PlaneState> {
    (-100.0..100.0f64, -100.0..100.0f64, 0.0..360.0f64, 200.0..550.0f64).prop_map(|(x, y, h, v)| {
        let h = h.to_radians();
        PlaneState {
            pos: [x, y],
            vel: [v / 3600.0 * h.sin(), v / 3600.0 * h.cos()],
            alt: 35000.0,
            v_rate: 0.0,
        }
    })
}

fn track_point() -> impl Strategy<Value = TrackPoint> {
    (-3.0..-1.0f64, 38.5..40.0f64, 0.0..360.0f64, 300.0..520.0f64).prop_map(|(lon, lat, c, v)| TrackPoint {
        pos: GeoPoint::new(lon, lat, 35000.0).unwrap(),
        timestamp: 0,
        kin: Kinematics {
            course: c,
            h_speed: v,
            v_speed: 0.0,
        },
    })
}

/// Mode stream where every G1 truth run has an actual RATP.
fn eval_stream() -> impl Strategy<Value = Vec<EvalPoint>> {
    prop::collection::vec((0..3usize, 0..3usize, any::<bool>()), 1..80).prop_map(|v| {
        let mut pts: Vec<EvalPoint> = v
            .iter()
            .enumerate()
            .map(|(i, &(truth, pred, ann))| EvalPoint {
                timestamp: 5.0 * i as f64,
                truth,
                pred,
                is_actual_ratp: false,
                is_annotated_ratp: truth == 1 && ann,
            })
            .collect();
        if let Some(i) = pts.iter().position(|p| p.truth == 1) {
            pts[i].is_actual_ratp = true;
            pts[i].is_annotated_ratp = false;
        }
        pts
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn distance_is_a_metric(a in point(), b in point(), c in point()) {
        let (ab, ba) = (horizontal_distance(&a, &b), horizontal_distance(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ab <= horizontal_distance(&a, &c) + horizontal_distance(&c, &b) + 1e-9);
    }

    #[test]
    fn destination_inverts_bearing_and_distance(a in point(), b in point()) {
        let d = horizontal_distance(&a, &b);
        prop_assume!(d > 1e-3);
        let back = destination(&a, initial_bearing(&a, &b), d);
        prop_assert!(horizontal_distance(&back, &b) < 1e-6);
    }

    #[test]
    fn planar_cpa_is_symmetric_and_no_further_than_now(a in plane_state(), b in plane_state()) {
        let (r, s) = (cpa_planar(&a, &b), cpa_planar(&b, &a));
        let now = ((a.pos[0] - b.pos[0]).powi(2) + (a.pos[1] - b.pos[1]).powi(2)).sqrt();
        prop_assert!(r.t_cpa >= 0.0);
        prop_assert!(r.d_h_cpa <= now + 1e-9);
        prop_assert!((r.t_cpa - s.t_cpa).abs() < 1e-6 && (r.d_h_cpa - s.d_h_cpa).abs() < 1e-9);
    }

    #[test]
    fn geodetic_cpa_is_symmetric(a in track_point(), b in track_point()) {
        let (sa, sb) = (GeoState { pos: a.pos, kin: a.kin }, GeoState { pos: b.pos, kin: b.kin });
        let (r, s) = (cpa(&sa, &sb), cpa(&sb, &sa));
        prop_assert!((r.d_h_cpa - s.d_h_cpa).abs() < 1e-6);
        prop_assert!(r.d_h_cpa <= horizontal_distance(&a.pos, &b.pos) + 1e-6);
    }

    #[test]
    fn pruned_fan_check_matches_exhaustive(
        a in track_point(),
        b in track_point(),
        n in 0..4usize,
        spread in 0.5..8.0f64,
    ) {
        let med: Vec<f64> = (0..n).map(|i| spread * (i as f64 - (n as f64 - 1.0) / 2.0)).collect();
        let stats = DeviationStats { n, course_medians: med.clone(), speed_medians: med.iter().map(|m| 3.0 * m).collect() };
        let cfg = DetectConfig::default();
        let (fa, fb) = (build_fan(&a, &stats, cfg.horizon_s), build_fan(&b, &stats, cfg.horizon_s));
        prop_assert_eq!(fans_conflict(&fa, &fb, &cfg), fans_conflict_exhaustive(&fa, &fb, &cfg));
    }

    #[test]
    fn score_decreases_away_from_the_action(x in 0.0..200.0f64, dx in 0.0..50.0f64) {
        let p = ScoreParams::default();
        let (s, t) = (score(x, &p), score(x + dx, &p));
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(t <= s);
        prop_assert!((score(-x, &p) - s).abs() < 1e-15);
    }

    #[test]
    fn weighting_never_lowers_precision_or_recall(pts in eval_stream()) {
        let (sys, p) = (ClassSystem::modes(), ScoreParams::default());
        let flights = vec![pts];
        for c in 0..3 {
            let w = accumulate(&flights, c, &sys, &p, Weighting::Weighted).unwrap();
            let u = accumulate(&flights, c, &sys, &p, Weighting::Unit).unwrap();
            prop_assert!(w.fn_weighted <= u.fn_weighted + 1e-12);
            prop_assert!(w.tp_weighted >= u.tp_weighted - 1e-12);
            let (pw, pu) = (wp_wr_wf1(&w), wp_wr_wf1(&u));
            prop_assert!((0.0..=1.0).contains(&pw.precision) && (0.0..=1.0).contains(&pw.recall));
            prop_assert!(pw.precision >= pu.precision - 1e-12);
            prop_assert!(pw.recall >= pu.recall - 1e-12);
        }
    }

    #[test]
    fn equal_frequency_bins_are_balanced(len in 1..5000usize, n in 1..40usize) {
        let s = equal_frequency_sizes(len, n);
        prop_assert_eq!(s.iter().sum::<usize>(), len);
        prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
    }

    #[test]
    fn folds_partition_flights_evenly(n in 5..400usize, folds in 2..8usize, seed in any::<u64>()) {
        prop_assume!(n >= folds);
        let a = fold_assignment(n, folds, seed);
        let mut sizes = vec![0usize; folds];
        for &f in &a {
            sizes[f] += 1;
        }
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(a, fold_assignment(n, folds, seed));
    }

    #[test]
    fn subsampling_keeps_every_c1_row(modes in prop::collection::vec(0..3usize, 1..300), step in 1..12usize) {
        let rows: Vec<LabeledRow> = modes
            .iter()
            .enumerate()
            .map(|(i, &m)| LabeledRow {
                point: EnrichedPoint {
                    timestamp: 5 * i as i64,
                    h: 0.0,
                    s_h: 0.0,
                    s_v: 0.0,
                    conflict: m != 0,
                    slots: Vec::new(),
                    conflict_count: 0,
                },
                mode: Mode::from_index(m),
                action: ActionClass::A0,
                cont: ContinuousActions::default(),
                is_actual_ratp: false,
                is_annotated_ratp: false,
            })
            .collect();
        let out = subsample(&rows, step);
        let c1 = |r: &[LabeledRow]| r.iter().filter(|x| x.mode == Mode::C1).count();
        prop_assert_eq!(c1(&out), c1(&rows));
        for w in out.windows(2) {
            prop_assert!(w[0].point.timestamp < w[1].point.timestamp);
            prop_assert_eq!(w[0].cont.d_t, (w[1].point.timestamp - w[0].point.timestamp) as f64);
        }
    }
}

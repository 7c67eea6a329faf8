// Weighted against standard precision and recall on a hand-built stream,
// where predictions near the controller's action are forgiven.

use std::error::Error;

use atco_react::wmetrics::{accumulate, critical_misses, score, wp_wr_wf1, ClassSystem, EvalPoint, ScoreParams, Weighting};

pub fn run() -> Result<(), Box<dyn Error>> {
    let p = ScoreParams::default();
    for x in [0.0, 10.0, 20.0, 40.0, 70.0] {
        println!("score({x}) = {:.4}", score(x, &p));
    }

    // Truth switches to C1 at t=100 and the action is at t=150; the model
    // is 15 s late and keeps C1 for 10 s too long.
    let stream: Vec<EvalPoint> = (0..60)
        .map(|k| {
            let t = 5.0 * k as f64;
            let truth = usize::from((100.0..=150.0).contains(&t));
            let pred = usize::from((115.0..=160.0).contains(&t));
            EvalPoint { timestamp: t, truth, pred, is_actual_ratp: t == 150.0, is_annotated_ratp: false }
        })
        .collect();
    let flights = vec![stream];
    let sys = ClassSystem::modes();
    for c in 0..2 {
        let w = wp_wr_wf1(&accumulate(&flights, c, &sys, &p, Weighting::Weighted)?);
        let u = wp_wr_wf1(&accumulate(&flights, c, &sys, &p, Weighting::Unit)?);
        println!(
            "{}: weighted P {:.3} R {:.3} F1 {:.3} | standard P {:.3} R {:.3} F1 {:.3}",
            sys.names[c], w.precision, w.recall, w.f1, u.precision, u.recall, u.f1
        );
    }
    println!("critical misses: {}", critical_misses(&flights, &sys, 70.0, 250.0));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}

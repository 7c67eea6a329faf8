// Mode and action labels for a small synthetic scenario, with the mode
// shares at several subsampling steps.

use std::error::Error;

use atco_react::labeler::{prior_report, Mode};
use atco_react::pipeline::{label_scenario, PipelineConfig};
use atco_react::synthgen::ScenarioSpec;

pub fn run() -> Result<(), Box<dyn Error>> {
    let mut cfg = PipelineConfig::default();
    cfg.synth = ScenarioSpec { flight_count: 18, conflict_pair_fraction: 1.0, seed: 4, ..ScenarioSpec::default() };
    let (labeled, raw) = label_scenario(&cfg)?;

    for f in &labeled {
        let count = |m: Mode| f.rows.iter().filter(|r| r.mode == m).count();
        let ratp = f.rows.iter().position(|r| r.is_actual_ratp);
        println!(
            "{}: {} rows, C0 {} C1 {} C2 {}, actual RATP at row {ratp:?}",
            f.id,
            f.rows.len(),
            count(Mode::C0),
            count(Mode::C1),
            count(Mode::C2)
        );
    }
    for (step, shares) in prior_report(&raw, &[1, 2, 4, 6, 8, 10])? {
        println!("step {step:>2}: C0 {:.3} C1 {:.3} C2 {:.3}", shares[0], shares[1], shares[2]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}

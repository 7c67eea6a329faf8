// Grid-indexed conflict detection over a small synthetic scenario.

use std::error::Error;

use atco_react::confdet::{build_grid, DetectConfig, Detector};
use atco_react::evofan::fit_deviation_stats;
use atco_react::labeler::LabelConfig;
use atco_react::synthgen::{generate, ScenarioSpec};

pub fn run() -> Result<(), Box<dyn Error>> {
    let spec = ScenarioSpec { flight_count: 12, conflict_pair_fraction: 0.5, seed: 21, ..ScenarioSpec::default() };
    let detect = DetectConfig::default();
    let sc = generate(&spec, &detect, &LabelConfig::default())?;
    let trajs = &sc.trajectories;

    let stats = fit_deviation_stats(trajs, 3)?;
    let grid = build_grid(trajs, &detect);
    let det = Detector::new(trajs, &grid, &stats, &detect);
    println!("{} flights, {} occupied cells", trajs.len(), grid.nonempty_cells());

    for (f, tr) in trajs.iter().enumerate() {
        let mut first = None;
        let mut count = 0;
        for p in &tr.points {
            let c = det.conflicting(f, p.timestamp);
            if !c.is_empty() {
                first.get_or_insert((p.timestamp, c));
                count += 1;
            }
        }
        if let Some((t, with)) = first {
            let names: Vec<_> = with.iter().map(|&j| trajs[j].id.callsign.as_str()).collect();
            println!("{}: {count} conflict points, first at {t} with {names:?}", tr.id.callsign);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}

// Generate a scenario with scripted encounters and write the surveillance,
// event, airport and truth files.

use std::error::Error;

use atco_react::confdet::DetectConfig;
use atco_react::labeler::LabelConfig;
use atco_react::synthgen::{generate, ScenarioSpec};

pub fn run() -> Result<(), Box<dyn Error>> {
    let spec = ScenarioSpec { flight_count: 30, seed: 7, ..ScenarioSpec::default() };
    let sc = generate(&spec, &DetectConfig::default(), &LabelConfig::default())?;
    println!("{} flights, {} controller events", sc.trajectories.len(), sc.events.len());
    for e in &sc.encounters {
        println!(
            "{} reacts to {} with {:?}: conflict from {}, event at {:.1}, back on course at {}",
            sc.trajectories[e.follower].id.callsign,
            sc.trajectories[e.leader].id.callsign,
            e.action,
            e.t_c,
            e.event_time,
            e.completion
        );
    }
    let dir = std::env::temp_dir().join("atco_react_synthetic_scenario");
    sc.write(&dir)?;
    println!("written to {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}

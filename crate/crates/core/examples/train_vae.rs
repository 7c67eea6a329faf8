// Train the VAE and the encoder-only baseline on a small labelled
// scenario, then decode one flight without ground truth.

use std::error::Error;

use atco_react::pipeline::{label_scenario, sequences, PipelineConfig};
use atco_react::reactmodel::{train, Feedback, ModelConfig, ModelKind};
use atco_react::synthgen::ScenarioSpec;

pub fn run() -> Result<(), Box<dyn Error>> {
    let mut cfg = PipelineConfig::default();
    cfg.synth = ScenarioSpec { flight_count: 18, conflict_pair_fraction: 1.0, seed: 8, ..ScenarioSpec::default() };
    let (labeled, _) = label_scenario(&cfg)?;
    let data = sequences(&labeled);

    let mc = ModelConfig { lstm_units: 16, epochs: 15, batch_size: 4, ..ModelConfig::default() };
    for kind in [ModelKind::Vae, ModelKind::Encoder] {
        let (model, curve) = train(&data, &mc, kind)?;
        let last = curve.last().unwrap();
        println!("{kind:?}: {} epochs, final loss {:.4}", curve.len() - 1, last.loss.total);

        let pred = model.predict(&data[0].features, Feedback::SelfFed)?;
        let hits = pred.iter().zip(&data[0].modes).filter(|(p, &m)| p.mode == m).count();
        println!("  {}: {hits}/{} modes recovered", labeled[0].id, pred.len());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}

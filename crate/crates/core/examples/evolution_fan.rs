// Deviation statistics fitted from a few turning tracks, and the fan of
// projections built from them.

use std::error::Error;

use atco_react::evofan::{build_fan, fit_deviation_stats, DEFAULT_HORIZON_S};
use atco_react::geokin::{destination, horizontal_distance, GeoPoint, Kinematics};
use atco_react::trajstore::{FlightId, TrackPoint, Trajectory};

fn weaving_track(i: usize) -> Result<Trajectory, Box<dyn Error>> {
    let mut pos = GeoPoint::new(-5.0 + i as f64 * 0.3, 38.5, 35000.0)?;
    let mut points = Vec::new();
    for k in 0..240 {
        let course = 80.0 + 6.0 * ((k + i * 17) as f64 / 25.0).sin();
        let speed = 440.0 + 10.0 * ((k + i * 5) as f64 / 40.0).cos();
        points.push(TrackPoint {
            pos,
            timestamp: 1_772_445_600 + 5 * k as i64,
            kin: Kinematics { course, h_speed: speed, v_speed: 0.0 },
        });
        pos = destination(&pos, course, speed * 5.0 / 3600.0);
    }
    Ok(Trajectory {
        id: FlightId {
            callsign: format!("FAN{i}"),
            apt_from: "LEMD".into(),
            apt_to: "LEBL".into(),
            date: "2026-03-02".into(),
            segment: 0,
        },
        points,
    })
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let tracks = (0..6).map(weaving_track).collect::<Result<Vec<_>, _>>()?;
    let stats = fit_deviation_stats(&tracks, 2)?;
    println!("course medians {:?}", stats.course_medians);
    println!("speed medians  {:?}", stats.speed_medians);

    let anchor = &tracks[0].points[100];
    let fan = build_fan(anchor, &stats, DEFAULT_HORIZON_S);
    println!("{} members", fan.len());
    let nominal = fan.position_at(0, 600.0);
    for i in 0..fan.len() {
        let p = fan.position_at(i, 600.0);
        println!(
            "member {i}: lon {:.4} lat {:.4}, {:.2} nm from nominal after 10 min",
            p.lon,
            p.lat,
            horizontal_distance(&p, &nominal)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}

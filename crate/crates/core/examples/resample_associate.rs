// Irregular radar returns resampled onto the 5 s grid, then a controller
// event attached to the closest track point.

use std::error::Error;

use atco_react::geokin::{destination, GeoPoint};
use atco_react::trajstore::{associate_events, preprocess_flight, utc_date, AtcoEvent, PreprocessConfig, RawFlight, RawTrackPoint};

pub fn run() -> Result<(), Box<dyn Error>> {
    let start = GeoPoint::new(-4.0, 40.0, 37000.0)?;
    let t0 = 1_772_445_600.0;
    // Roughly one return every 4 to 12 seconds for 20 minutes.
    let mut points = Vec::new();
    let mut t = 0.0;
    let mut k = 0u32;
    while t < 1200.0 {
        let pos = destination(&start, 95.0, 450.0 * t / 3600.0);
        points.push(RawTrackPoint {
            callsign: "IBE3121".into(),
            apt_from: "LEMD".into(),
            apt_to: "LEPA".into(),
            pos: GeoPoint { alt: 37000.0, ..pos },
            timestamp: t0 + t,
        });
        k = k.wrapping_mul(1_103_515_245).wrapping_add(12_345);
        t += 4.0 + (k >> 16) as f64 % 9.0;
    }
    let raw = RawFlight {
        callsign: "IBE3121".into(),
        apt_from: "LEMD".into(),
        apt_to: "LEPA".into(),
        date: utc_date(t0),
        points,
    };
    let tracks = preprocess_flight(&raw, &PreprocessConfig::default())?;
    for tr in &tracks {
        println!(
            "{}: {} points from {} to {}, course {:.1} speed {:.0} kt",
            tr.id,
            tr.points.len(),
            tr.first_time(),
            tr.last_time(),
            tr.points[10].kin.course,
            tr.points[10].kin.h_speed
        );
    }

    let events = vec![AtcoEvent {
        callsign: "IBE3121".into(),
        apt_from: "LEMD".into(),
        apt_to: "LEPA".into(),
        mwm_code: "DCT".into(),
        timestamp: t0 + 612.3,
        sector: None,
    }];
    let out = associate_events(&events, &tracks);
    for a in &out.associations {
        println!("event {} -> {} at t={}", a.event.mwm_code, a.flight, a.point_timestamp);
    }
    println!("unassociated {:?}, ambiguous {:?}", out.unassociated, out.ambiguous);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}

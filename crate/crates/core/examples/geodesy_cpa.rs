// Great-circle helpers and closest point of approach for two en-route
// aircraft on crossing tracks.

use std::error::Error;

use atco_react::geokin::{cpa, crossing_point, destination, horizontal_distance, initial_bearing, GeoPoint, GeoState, Kinematics};

pub fn run() -> Result<(), Box<dyn Error>> {
    let a = GeoState {
        pos: GeoPoint::new(-3.70, 40.42, 36000.0)?,
        kin: Kinematics { course: 75.0, h_speed: 460.0, v_speed: 0.0 },
    };
    let b = GeoState {
        pos: GeoPoint::new(-2.10, 39.80, 36000.0)?,
        kin: Kinematics { course: 350.0, h_speed: 430.0, v_speed: 0.0 },
    };
    println!(
        "separation {:.2} nm, bearing a->b {:.1} deg",
        horizontal_distance(&a.pos, &b.pos),
        initial_bearing(&a.pos, &b.pos)
    );

    let r = cpa(&a, &b);
    println!("cpa in {:.0} s at {:.2} nm, vertical {:.0} ft", r.t_cpa, r.d_h_cpa, r.d_v_cpa);

    let x = crossing_point(&a, &b);
    match x.t_cp {
        Some(t) if x.exists => println!("tracks cross in {t:.0} s (already crossed: {})", x.crossed),
        _ => println!("tracks are parallel"),
    }

    let ahead = destination(&a.pos, a.kin.course, a.kin.h_speed * r.t_cpa / 3600.0);
    println!("a at cpa: lon {:.4} lat {:.4}", ahead.lon, ahead.lat);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}

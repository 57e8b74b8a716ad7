//! Zonal grid spacing on the equator and next to the poles for U and V.

use leapgrid::grid::{zonal_arc, zonal_size_row, EARTH_RADIUS_KM};

fn main() -> leapgrid::Result<()> {
    println!("{:>6} {:>10} {:>10} {:>10}", "res", "equator", "u-pole", "v-pole");
    for res in [2.0, 1.4, 1.0, 0.5, 0.25] {
        let r = zonal_size_row(res, EARTH_RADIUS_KM)?;
        println!(
            "{:>6} {:>10.3} {:>10.4} {:>10.4}",
            res, r.equator_km, r.u_pole_km, r.v_pole_km
        );
    }

    // the chord form used for the reference arc tracks a·cosα·Δλ
    let at45 = zonal_arc(45.0, 0.5, EARTH_RADIUS_KM)?;
    println!("\nreference arc at 45°, 0.5°: {at45:.4} km");
    Ok(())
}

//! Leap-format zonal differences on a local block with halos, next to the
//! whole-circle reference.

use leapgrid::halo::{pattern_offsets, Pattern};
use leapgrid::leap::{leap_central_diff_x, periodic_leap_diff, standard_central_diff_x, HaloRow};

fn main() -> leapgrid::Result<()> {
    let nx = 32;
    let dx = 2.5;
    let circle: Vec<f64> = (0..nx)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / nx as f64).sin())
        .collect();

    for n in [1, 3, 5] {
        for p in Pattern::ALL {
            let (l, r) = pattern_offsets(p, n);
            // owned points 12..20 with exactly the halo the pattern needs
            let (ib, ie) = (12, 20);
            let block = &circle[ib - l..ie + r];
            let d = leap_central_diff_x(HaloRow::new(block, l, r)?, p, n, dx)?;
            let whole = periodic_leap_diff(&circle, p, n, dx)?;
            let err = d
                .iter()
                .zip(&whole[ib..ie])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            println!("n={n} {:<10} halo=({l},{r}) d[0]={:+.5} vs circle: {err:e}", p.name(), d[0]);
        }
    }

    let row = HaloRow::new(&circle[7..17], 1, 1)?;
    let a = leap_central_diff_x(row, Pattern::Wide, 1, dx)?;
    let b = standard_central_diff_x(HaloRow::new(&circle[7..17], 1, 1)?, Pattern::Wide, dx)?;
    println!("\nn=1 equals the standard difference bitwise: {}", a == b);

    // a halo one point short is refused
    let short = HaloRow::new(&circle[8..18], 0, 2)?;
    println!("short halo: {}", leap_central_diff_x(short, Pattern::Wide, 2, dx).unwrap_err());
    Ok(())
}

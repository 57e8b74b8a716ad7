//! Leap intervals per latitude row for the 0.5° and 0.25° grids, and what
//! they buy in admissible time step.

use leapgrid::grid::{GridSpec, Staggering};
use leapgrid::leap::{admissible_dt, build_leap_table};

fn main() -> leapgrid::Result<()> {
    for (nx, ny) in [(768, 361), (1152, 768)] {
        let g = GridSpec::new(nx, ny, 30)?;
        let t = build_leap_table(&g, Staggering::SCALAR, 70.0, 45.0)?;
        let active = t.rows.iter().filter(|r| r.active).count();
        println!("{nx}x{ny}: {active} active rows, polar-most intervals:");
        for r in t.rows.iter().filter(|r| r.active).take(4) {
            println!(
                "  j={:<3} θ={:>7.4}° n_raw={:<4} n={:<4} Δx_eff={:.2} km",
                r.j, r.colatitude, r.n_leap_raw, r.n_leap, r.effective_spacing
            );
        }
        // U sits on semi-integer x, so its intervals are made odd
        let u = build_leap_table(&g, Staggering::U, 70.0, 45.0)?;
        println!("  U row 1: raw {} -> {}", u.rows[1].n_leap_raw, u.rows[1].n_leap);

        let conv = build_leap_table(&g, Staggering::SCALAR, 90.0, 45.0)?;
        let wind = 100.0;
        let dt_leap = admissible_dt(&t, wind)?.unwrap_or(f64::INFINITY);
        let dt_conv = admissible_dt(&conv, wind)?.unwrap_or(f64::INFINITY);
        println!(
            "  dt at {wind} m/s: conventional {dt_conv:.2} s, leap {dt_leap:.2} s (x{:.2})\n",
            dt_leap / dt_conv
        );
    }
    Ok(())
}

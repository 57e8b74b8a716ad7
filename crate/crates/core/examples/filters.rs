//! The three zonal filters, the per-row schedule of each mode and the load
//! it leaves on a Y-split process grid.

use leapgrid::decomp::{ProcessGrid, RankOrder};
use leapgrid::filters::{
    filter_load, filter_schedule, gaussian_filter, gaussian_weights, imbalance, recursive3_filter,
    simplified_filter, FilterMode, FilterParams, FilterScheme,
};
use leapgrid::grid::GridSpec;

fn main() -> leapgrid::Result<()> {
    let row: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } + 0.1 * i as f64).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let r3 = recursive3_filter(&row, 0.25, 2)?;
    let ga = gaussian_filter(&row, &gaussian_weights(2, 1.0)?)?;
    let si = simplified_filter(&row, 1.0)?;
    println!("mean: raw {:.6}, recursive {:.6}, gaussian {:.6}, simplified {:.6}", mean(&row), mean(&r3), mean(&ga), mean(&si));
    println!("first points: raw {:+.3} recursive {:+.3} gaussian {:+.3}", row[0], r3[0], ga[0]);

    let grid = GridSpec::new(768, 361, 30)?;
    let params = FilterParams::default();
    let p = ProcessGrid::new(grid.mesh(), 1, 32, 1, RankOrder::ZPrior, 32)?;
    for mode in [FilterMode::Conventional, FilterMode::LeapFormat] {
        let s = filter_schedule(&grid, mode, &params)?;
        let gauss = s.rows.iter().filter(|r| r.scheme == FilterScheme::Gaussian).count();
        let load = filter_load(&grid, &p, &s)?;
        println!(
            "\n{}: {} filter calls per step, {gauss} Gaussian rows, {} calls above 70°",
            mode.name(),
            s.total_calls(),
            s.gaussian_calls_above(70.0)
        );
        println!("  load per rank on 1x32x1: {:?}", load.iter().map(|l| l / 768).collect::<Vec<_>>());
        println!("  max/mean {:.3}", imbalance(&load));
    }
    Ok(())
}

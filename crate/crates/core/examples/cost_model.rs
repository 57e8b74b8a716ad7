//! The analytic halo-volume model against bytes counted by the runtime.

use leapgrid::decomp::{estimate_comm_volume, factorizations, ProcessGrid, RankOrder};
use leapgrid::dycore::measure_standard_halo;
use leapgrid::grid::GridSpec;
use leapgrid::runtime::ELEMENT_BYTES;

fn main() -> leapgrid::Result<()> {
    let (alpha, beta) = (1, 3);
    let grid = GridSpec::new(48, 24, 8)?;
    println!("per-core points, alpha={alpha} beta={beta}, 16 ranks on 48x24x8:");
    println!("{:>10} {:>8} {:>8} {:>8} {:>8}", "grid", "x", "y", "z", "total");
    for (px, py, pz) in factorizations(16) {
        let Ok(p) = ProcessGrid::new(grid.mesh(), px, py, pz, RankOrder::ZPrior, 4) else {
            continue;
        };
        let e = estimate_comm_volume(grid.mesh(), &p, alpha, beta);
        println!(
            "{:>10} {:>8.0} {:>8.0} {:>8.0} {:>8.0}",
            format!("{px}x{py}x{pz}"),
            e.x_p2p,
            e.y_p2p,
            e.z_p2p,
            e.p2p_total()
        );
    }

    let p = ProcessGrid::new(grid.mesh(), 2, 3, 2, RankOrder::ZPrior, 4)?;
    let (sent, _) = measure_standard_halo(&grid, &p, alpha, beta, false)?;
    let e = estimate_comm_volume(grid.mesh(), &p, alpha, beta);
    println!("\nmeasured vs model on 2x3x2 (bytes, rank 0):");
    println!("  x {} vs {}", sent[0][0], e.x_p2p * ELEMENT_BYTES as f64);
    println!("  y {} vs {}", sent[0][1], e.y_p2p * ELEMENT_BYTES as f64);
    println!("  z {} vs {}", sent[0][2], e.z_p2p * ELEMENT_BYTES as f64);
    Ok(())
}

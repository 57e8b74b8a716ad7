//! The toy dynamical core on the desk grid: serial oracle against a 2x3x2
//! decomposition, in both modes, with the traffic it produced.

use leapgrid::decomp::{ProcessGrid, RankOrder};
use leapgrid::dycore::{self, checksum, serial::run_serial, DycoreConfig, Geometry};
use leapgrid::filters::FilterMode;
use leapgrid::runtime::CommKind;

fn main() -> leapgrid::Result<()> {
    for mode in [FilterMode::Conventional, FilterMode::LeapFormat] {
        let mut cfg = DycoreConfig::desk();
        cfg.mode = mode;
        let g = Geometry::new(&cfg)?;
        println!(
            "{}: dt {:.1} s (bound {:.1} s), halo width {}, n_leap by row {:?}",
            mode.name(),
            g.dt,
            g.cfl_dt,
            g.hx,
            g.n_row
        );

        let serial = run_serial(&cfg, 10)?;
        cfg.pgrid = ProcessGrid::new(cfg.grid.mesh(), 2, 3, 2, RankOrder::ZPrior, 4)?;
        let par = dycore::run(&cfg, 10)?;
        println!(
            "  10 steps, 2x3x2 vs serial: max diff {:e}, {} advection / {} adaption calls",
            par.state.max_abs_diff(&serial.state),
            par.counters.advection_calls,
            par.counters.adaption_calls
        );
        for (name, d) in checksum(&par.state) {
            println!("  {name:<2} sum {:+.6e} sumsq {:.6e}", d.sum, d.sumsq);
        }
        for kind in [CommKind::X, CommKind::Y, CommKind::Z] {
            let c = par.stats.comm(kind);
            println!(
                "  {:<2} p2p {:>6} msgs {:>9} bytes, {:>4} collectives",
                kind.name(),
                c.p2p_messages.total(),
                c.p2p_bytes.total(),
                c.coll_operations.total()
            );
        }
        println!();
    }
    Ok(())
}

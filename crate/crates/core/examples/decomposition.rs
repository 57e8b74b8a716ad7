//! Process grids, rank orders and node placement.

use leapgrid::decomp::{max_parallelism_2d, max_parallelism_3d, split_all, ProcessGrid, RankOrder};
use leapgrid::grid::MeshSize;
use leapgrid::runtime::{CommKind, Communicator};

fn main() -> leapgrid::Result<()> {
    let mesh = MeshSize::new(256, 128, 30);
    println!(
        "256x128x30, min block 2x2x1: 2D bound {}, 3D bound {}",
        max_parallelism_2d(mesh, 2, 2, 1),
        max_parallelism_3d(mesh, 2, 2, 1)
    );

    println!("\nsplit 10 points over 3: {:?}", split_all(10, 3)?);

    let mesh = MeshSize::new(48, 24, 8);
    for order in [RankOrder::YPrior, RankOrder::ZPrior] {
        let p = ProcessGrid::new(mesh, 2, 3, 2, order, 4)?;
        println!("\n{order:?}, 2x3x2 on 4-core nodes:");
        for rank in 0..p.size() {
            let c = p.coords_of(rank)?;
            let z = Communicator::along(&p, rank, CommKind::Z)?;
            let same_node = z.members.iter().all(|&m| p.node_of(m) == p.node_of(rank));
            println!(
                "  rank {rank:>2} (lx {}, ly {}, lz {}) node {} z-comm {:?} on one node: {same_node}",
                c.lx,
                c.ly,
                c.lz,
                p.node_of(rank),
                z.members
            );
        }
    }

    match ProcessGrid::new(mesh, 1, 1, 9, RankOrder::ZPrior, 4) {
        Ok(_) => unreachable!(),
        Err(e) => println!("\n{e}"),
    }
    Ok(())
}

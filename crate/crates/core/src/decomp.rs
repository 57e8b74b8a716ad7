//! 3D process topology and the analytic communication-volume model.
//!
//! Global ranks always place the X coordinate slowest. Inside an X slab the
//! order decides which of Y and Z varies fastest:
//!
//! ```text
//! YPrior: rank = lx*(py*pz) + lz*py + ly
//! ZPrior: rank = lx*(py*pz) + ly*pz + lz
//! ```
//!
//! With `ZPrior` and `pz` dividing `cores_per_node`, every Z column of ranks
//! lands on one node.

use crate::error::{Error, Result};
use crate::grid::MeshSize;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankOrder {
    YPrior,
    ZPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Coords {
    pub lx: usize,
    pub ly: usize,
    pub lz: usize,
}

impl Coords {
    pub fn new(lx: usize, ly: usize, lz: usize) -> Self {
        Self { lx, ly, lz }
    }
}

/// Inclusive global index range owned by one part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalExtent {
    pub ib: usize,
    pub ie: usize,
    pub nb: usize,
}

impl LocalExtent {
    pub fn contains(&self, index: usize) -> bool {
        index >= self.ib && index <= self.ie
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.ib..self.ie + 1
    }
}

/// Balanced block split: the first `n % p` parts get one extra point.
pub fn split_extent(n: usize, p: usize, i: usize) -> Result<LocalExtent> {
    if p == 0 || p > n {
        return Err(Error::InfeasibleDecomposition {
            dim: "axis",
            points: n,
            parts: p,
        });
    }
    if i >= p {
        return Err(Error::Domain(format!("part index {i} out of range for {p} parts")));
    }
    let base = n / p;
    let extra = n % p;
    let nb = base + usize::from(i < extra);
    let ib = i * base + i.min(extra);
    Ok(LocalExtent {
        ib,
        ie: ib + nb - 1,
        nb,
    })
}

/// All extents of an axis split into `p` parts.
pub fn split_all(n: usize, p: usize) -> Result<Vec<LocalExtent>> {
    (0..p).map(|i| split_extent(n, p, i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcessGrid {
    pub px: usize,
    pub py: usize,
    pub pz: usize,
    pub order: RankOrder,
    pub cores_per_node: usize,
}

impl ProcessGrid {
    /// Validates the grid against a mesh with one point per process minimum.
    pub fn new(
        mesh: MeshSize,
        px: usize,
        py: usize,
        pz: usize,
        order: RankOrder,
        cores_per_node: usize,
    ) -> Result<Self> {
        Self::with_min_points(mesh, (1, 1, 1), px, py, pz, order, cores_per_node)
    }

    pub fn with_min_points(
        mesh: MeshSize,
        nmin: (usize, usize, usize),
        px: usize,
        py: usize,
        pz: usize,
        order: RankOrder,
        cores_per_node: usize,
    ) -> Result<Self> {
        if cores_per_node == 0 {
            return Err(Error::Domain("cores_per_node must be positive".into()));
        }
        let checks = [
            ("x", mesh.nx, nmin.0, px),
            ("y", mesh.ny, nmin.1, py),
            ("z", mesh.nz, nmin.2, pz),
        ];
        for (dim, points, min, parts) in checks {
            if min == 0 {
                return Err(Error::Domain(format!("minimum points along {dim} must be >= 1")));
            }
            if parts == 0 || parts > points / min {
                return Err(Error::InfeasibleDecomposition {
                    dim,
                    points,
                    parts,
                });
            }
        }
        Ok(Self {
            px,
            py,
            pz,
            order,
            cores_per_node,
        })
    }

    /// A single-rank layout.
    pub fn serial() -> Self {
        Self {
            px: 1,
            py: 1,
            pz: 1,
            order: RankOrder::ZPrior,
            cores_per_node: 1,
        }
    }

    pub fn size(&self) -> usize {
        self.px * self.py * self.pz
    }

    pub fn rank_of(&self, c: Coords) -> Result<usize> {
        rank_of(c.lx, c.ly, c.lz, self)
    }

    pub fn coords_of(&self, rank: usize) -> Result<Coords> {
        coords_of(rank, self)
    }

    pub fn node_of(&self, rank: usize) -> usize {
        rank / self.cores_per_node
    }
}

pub fn rank_of(lx: usize, ly: usize, lz: usize, pgrid: &ProcessGrid) -> Result<usize> {
    if lx >= pgrid.px || ly >= pgrid.py || lz >= pgrid.pz {
        return Err(Error::Domain(format!(
            "coordinates ({lx}, {ly}, {lz}) outside process grid {}x{}x{}",
            pgrid.px, pgrid.py, pgrid.pz
        )));
    }
    let slab = lx * pgrid.py * pgrid.pz;
    Ok(match pgrid.order {
        RankOrder::YPrior => slab + lz * pgrid.py + ly,
        RankOrder::ZPrior => slab + ly * pgrid.pz + lz,
    })
}

pub fn coords_of(rank: usize, pgrid: &ProcessGrid) -> Result<Coords> {
    if rank >= pgrid.size() {
        return Err(Error::Domain(format!(
            "rank {rank} outside communicator of {}",
            pgrid.size()
        )));
    }
    let slab = pgrid.py * pgrid.pz;
    let lx = rank / slab;
    let r = rank % slab;
    let (ly, lz) = match pgrid.order {
        RankOrder::YPrior => (r % pgrid.py, r / pgrid.py),
        RankOrder::ZPrior => (r / pgrid.pz, r % pgrid.pz),
    };
    Ok(Coords { lx, ly, lz })
}

pub fn node_of(rank: usize, cores_per_node: usize) -> Result<usize> {
    if cores_per_node == 0 {
        return Err(Error::Domain("cores_per_node must be positive".into()));
    }
    Ok(rank / cores_per_node)
}

/// Process bound of the Y-Z decomposition: `⌊ny/nmin_y⌋ · min(⌊nx/nmin_x⌋, ⌊nz/nmin_z⌋)`.
pub fn max_parallelism_2d(mesh: MeshSize, nmin_x: usize, nmin_y: usize, nmin_z: usize) -> usize {
    (mesh.ny / nmin_y) * (mesh.nx / nmin_x).min(mesh.nz / nmin_z)
}

pub fn max_parallelism_3d(mesh: MeshSize, nmin_x: usize, nmin_y: usize, nmin_z: usize) -> usize {
    (mesh.nx / nmin_x) * (mesh.ny / nmin_y) * (mesh.nz / nmin_z)
}

/// Per-core point counts of one exchange. Multiply by the element width
/// to get bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommVolumeEstimate {
    pub x_p2p: f64,
    pub y_p2p: f64,
    pub z_p2p: f64,
    pub z_collective: f64,
    pub alpha: usize,
    pub beta: usize,
}

impl CommVolumeEstimate {
    pub fn p2p_total(&self) -> f64 {
        self.x_p2p + self.y_p2p + self.z_p2p
    }
}

/// Halo volumes exclude the polar filter traffic, which is only measured.
pub fn estimate_comm_volume(
    mesh: MeshSize,
    pgrid: &ProcessGrid,
    alpha: usize,
    beta: usize,
) -> CommVolumeEstimate {
    let (nx, ny, nz) = (mesh.nx as f64, mesh.ny as f64, mesh.nz as f64);
    let (px, py, pz) = (pgrid.px as f64, pgrid.py as f64, pgrid.pz as f64);
    let layer = alpha as f64 + beta as f64 * nz / pz;
    CommVolumeEstimate {
        x_p2p: if pgrid.px > 1 { layer * (ny / py) } else { 0.0 },
        y_p2p: layer * (nx / px),
        z_p2p: beta as f64 * (ny / py) * (nx / px),
        z_collective: if pgrid.pz > 1 {
            (ny / py) * (nz / pz) * (nx / px)
        } else {
            0.0
        },
        alpha,
        beta,
    }
}

/// Every `(px, py, pz)` with product `total`, in lexicographic order.
pub fn factorizations(total: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for px in 1..=total {
        if total % px != 0 {
            continue;
        }
        let rest = total / px;
        for py in 1..=rest {
            if rest % py == 0 {
                out.push((px, py, rest / py));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pg(px: usize, py: usize, pz: usize, order: RankOrder, cores: usize) -> ProcessGrid {
        ProcessGrid {
            px,
            py,
            pz,
            order,
            cores_per_node: cores,
        }
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_extent(10, 3, 0).unwrap(), LocalExtent { ib: 0, ie: 3, nb: 4 });
        assert_eq!(split_extent(10, 3, 2).unwrap(), LocalExtent { ib: 7, ie: 9, nb: 3 });
        assert_eq!(split_extent(8, 1, 0).unwrap(), LocalExtent { ib: 0, ie: 7, nb: 8 });
        assert!(matches!(
            split_extent(3, 4, 0),
            Err(Error::InfeasibleDecomposition { .. })
        ));
        assert!(split_extent(3, 3, 3).is_err());
    }

    #[test]
    fn split_partitions_exactly() {
        for n in 1..60 {
            for p in 1..=n {
                let ext = split_all(n, p).unwrap();
                let mut next = 0;
                for e in &ext {
                    assert_eq!(e.ib, next);
                    assert_eq!(e.nb, e.ie - e.ib + 1);
                    next = e.ie + 1;
                }
                assert_eq!(next, n);
                let max = ext.iter().map(|e| e.nb).max().unwrap();
                let min = ext.iter().map(|e| e.nb).min().unwrap();
                assert!(max - min <= 1);
            }
        }
    }

    #[test]
    fn rank_examples() {
        let y = pg(1, 4, 4, RankOrder::YPrior, 4);
        assert_eq!(rank_of(0, 3, 0, &y).unwrap(), 3);
        assert_eq!(rank_of(0, 3, 1, &y).unwrap(), 7);
        let z = pg(1, 4, 4, RankOrder::ZPrior, 4);
        assert_eq!(rank_of(0, 2, 3, &z).unwrap(), 11);
        assert!(rank_of(1, 0, 0, &z).is_err());
        assert!(coords_of(16, &z).is_err());
    }

    #[test]
    fn yprior_sequence_matches_successive_points() {
        // (ly, lz, rank): (0,0,0) .. (py-1,0,py-1), (py-1,1,...) .. (py-1,pz-1,py*pz-1)
        let g = pg(1, 5, 3, RankOrder::YPrior, 1);
        assert_eq!(rank_of(0, 4, 0, &g).unwrap(), 4);
        assert_eq!(rank_of(0, 4, 2, &g).unwrap(), 14);
        assert_eq!(rank_of(0, 0, 1, &g).unwrap(), 5);
    }

    #[test]
    fn rank_coords_bijection_exhaustive() {
        for order in [RankOrder::YPrior, RankOrder::ZPrior] {
            for (px, py, pz) in [(1, 1, 1), (2, 3, 4), (4, 4, 4), (3, 7, 5), (16, 16, 16)] {
                let g = pg(px, py, pz, order, 8);
                let mut seen = vec![false; g.size()];
                for r in 0..g.size() {
                    let c = coords_of(r, &g).unwrap();
                    assert_eq!(g.rank_of(c).unwrap(), r);
                    seen[r] = true;
                }
                assert!(seen.iter().all(|&s| s));
            }
        }
    }

    #[test]
    fn node_examples() {
        assert_eq!(node_of(11, 4).unwrap(), 2);
        assert_eq!(node_of(0, 64).unwrap(), 0);
        assert!(node_of(3, 0).is_err());
    }

    fn z_comm_nodes(g: &ProcessGrid) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for lx in 0..g.px {
            for ly in 0..g.py {
                let mut nodes: Vec<usize> = (0..g.pz)
                    .map(|lz| g.node_of(g.rank_of(Coords::new(lx, ly, lz)).unwrap()))
                    .collect();
                nodes.dedup();
                out.push(nodes);
            }
        }
        out
    }

    #[test]
    fn zprior_keeps_z_columns_on_one_node() {
        let g = pg(1, 4, 4, RankOrder::ZPrior, 4);
        for ly in 0..4 {
            let ranks: Vec<usize> = (0..4).map(|lz| rank_of(0, ly, lz, &g).unwrap()).collect();
            assert_eq!(ranks, (4 * ly..4 * ly + 4).collect::<Vec<_>>());
        }
        for (px, py, pz, cores) in [(2, 6, 4, 8), (3, 5, 2, 4), (1, 9, 6, 6), (2, 4, 1, 3)] {
            let g = pg(px, py, pz, RankOrder::ZPrior, cores);
            assert!(z_comm_nodes(&g).iter().all(|n| n.len() == 1));
        }
    }

    #[test]
    fn yprior_spreads_z_columns_when_py_exceeds_node() {
        let g = pg(1, 8, 4, RankOrder::YPrior, 4);
        assert!(z_comm_nodes(&g).iter().any(|n| n.len() >= 2));
    }

    #[test]
    fn parallelism_bounds() {
        let m14 = MeshSize::new(256, 128, 30);
        assert_eq!(max_parallelism_2d(m14, 2, 2, 1), 1920);
        assert_eq!(max_parallelism_3d(m14, 2, 2, 1), 245_760);
        assert_eq!(max_parallelism_3d(m14, 2, 2, 1) / max_parallelism_2d(m14, 2, 2, 1), 128);
        assert_eq!(max_parallelism_2d(MeshSize::new(1, 1, 1), 1, 1, 1), 1);
        assert_eq!(max_parallelism_2d(MeshSize::new(1152, 768, 30), 2, 2, 1), 11_520);
        assert_eq!(max_parallelism_3d(MeshSize::new(2, 2, 1), 2, 2, 1), 1);
    }

    #[test]
    fn process_grid_rejects_infeasible() {
        let m = MeshSize::new(16, 8, 4);
        assert!(ProcessGrid::new(m, 17, 1, 1, RankOrder::ZPrior, 4).is_err());
        assert!(ProcessGrid::new(m, 1, 1, 5, RankOrder::ZPrior, 4).is_err());
        assert!(ProcessGrid::new(m, 1, 1, 1, RankOrder::ZPrior, 0).is_err());
        assert!(ProcessGrid::with_min_points(m, (2, 2, 1), 9, 1, 1, RankOrder::ZPrior, 4).is_err());
        assert!(ProcessGrid::with_min_points(m, (2, 2, 1), 8, 4, 4, RankOrder::ZPrior, 4).is_ok());
    }

    #[test]
    fn comm_volume_examples() {
        let m = MeshSize::new(1152, 768, 30);
        let two_d = estimate_comm_volume(m, &pg(1, 96, 6, RankOrder::ZPrior, 64), 2, 8);
        assert_eq!(two_d.x_p2p, 0.0);
        let three_d = estimate_comm_volume(m, &pg(4, 96, 6, RankOrder::ZPrior, 64), 2, 8);
        assert_eq!(three_d.x_p2p, 336.0);
        assert_eq!(two_d.y_p2p / three_d.y_p2p, 4.0);
        assert_eq!(two_d.z_p2p / three_d.z_p2p, 4.0);
        assert_eq!(two_d.z_collective / three_d.z_collective, 4.0);
        let no_z = estimate_comm_volume(m, &pg(4, 96, 1, RankOrder::ZPrior, 64), 2, 8);
        assert_eq!(no_z.z_collective, 0.0);
    }

    #[test]
    fn factorizations_cover_total() {
        let f = factorizations(12);
        assert!(f.iter().all(|&(a, b, c)| a * b * c == 12));
        assert_eq!(f.len(), 18);
    }
}

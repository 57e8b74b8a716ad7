//! σ-surface vertical velocity.
//!
//! One definition, σ(k) = Σ_{j<k} δ(j)·coef(j) + ε, ε = Σ_j δ(j)·coef(j),
//! realised three ways: [`sigma_reference`] (serial), [`sigma_gather`]
//! (allgather δ, every Z member redoes the whole column) and
//! [`sigma_refactored`] (local prefix, then one allreduce and one exscan of
//! the local sums).
//!
//! Layers are 0-based here; a member owns the half-open range `beg..end`.

use crate::decomp::split_extent;
use crate::error::{Error, Result};
use crate::runtime::{Communicator, RankCtx};

pub fn sigma_reference(delta: &[f64], coef: &[f64]) -> Vec<f64> {
    assert_eq!(delta.len(), coef.len(), "delta and coef lengths differ");
    let eps: f64 = delta.iter().zip(coef).map(|(d, c)| d * c).sum();
    let mut prefix = 0.0;
    delta
        .iter()
        .zip(coef)
        .map(|(d, c)| {
            let s = prefix + eps;
            prefix += d * c;
            s
        })
        .collect()
}

/// The original listing taken literally: ε is folded into δ on every level but
/// the top, the prefix starts from σ(1) = 0 and skips the coefficients.
/// Kept for study; it does not agree with [`sigma_reference`].
pub fn sigma_literal(delta: &[f64], coef: &[f64]) -> Vec<f64> {
    assert_eq!(delta.len(), coef.len(), "delta and coef lengths differ");
    let l = delta.len();
    let eps: f64 = delta.iter().zip(coef).map(|(d, c)| d * c).sum();
    let shifted: Vec<f64> = delta
        .iter()
        .enumerate()
        .map(|(k, d)| if k + 1 < l { d + eps } else { *d })
        .collect();
    let mut sigma = vec![0.0; l];
    for k in 1..l {
        sigma[k] = sigma[k - 1] + shifted[k];
    }
    sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GatherVariant {
    #[default]
    Reference,
    Literal,
}

/// A rank's share of a batch of columns.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalColumns {
    pub n_layers: usize,
    pub beg: usize,
    pub end: usize,
    /// All `n_layers` coefficients.
    pub coef: Vec<f64>,
    /// Owned δ, column-major: `delta[c * owned + (k - beg)]`.
    pub delta: Vec<f64>,
}

impl VerticalColumns {
    pub fn new(n_layers: usize, beg: usize, end: usize, coef: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        if n_layers == 0 || beg > end || end > n_layers {
            return Err(Error::Domain(format!(
                "owned layers {beg}..{end} invalid for {n_layers} layers"
            )));
        }
        if coef.len() != n_layers {
            return Err(Error::Domain(format!("{} coefficients for {n_layers} layers", coef.len())));
        }
        let owned = end - beg;
        if (owned == 0 && !delta.is_empty()) || (owned > 0 && delta.len() % owned != 0) {
            return Err(Error::Domain(format!(
                "{} divergence values do not tile {owned} owned layers",
                delta.len()
            )));
        }
        Ok(Self {
            n_layers,
            beg,
            end,
            coef,
            delta,
        })
    }

    /// Slice one member's part out of global column-major δ.
    pub fn from_global(delta: &[Vec<f64>], coef: &[f64], beg: usize, end: usize) -> Result<Self> {
        let owned: Vec<f64> = delta.iter().flat_map(|col| col[beg..end].iter().copied()).collect();
        Self::new(coef.len(), beg, end, coef.to_vec(), owned)
    }

    pub fn owned(&self) -> usize {
        self.end - self.beg
    }

    pub fn columns(&self) -> usize {
        if self.owned() == 0 {
            0
        } else {
            self.delta.len() / self.owned()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaOutput {
    /// σ on owned layers, same layout as the input δ.
    pub sigma: Vec<f64>,
    /// ε per column.
    pub epsilon: Vec<f64>,
    /// δ·coef multiply-adds this member performed.
    pub mul_adds: usize,
}

fn check_layout(cols: &VerticalColumns, comm: &Communicator) -> Result<()> {
    let want = split_extent(cols.n_layers, comm.size(), comm.my_index)?;
    if want.ib != cols.beg || want.ie + 1 != cols.end {
        return Err(Error::Contract(format!(
            "Z member {} owns layers {}..{}, expected {}..{}",
            comm.my_index,
            cols.beg,
            cols.end,
            want.ib,
            want.ie + 1
        )));
    }
    Ok(())
}

/// Gather-based form: allgather δ (blocks padded to ⌈L/Pz⌉ layers), then
/// every member computes ε and the full prefix for all `L` layers.
pub async fn sigma_gather(
    ctx: &RankCtx,
    comm: &Communicator,
    cols: &VerticalColumns,
    variant: GatherVariant,
) -> Result<SigmaOutput> {
    if let Err(e) = check_layout(cols, comm) {
        return Err(ctx.abort(e));
    }
    let l = cols.n_layers;
    let p = comm.size();
    let block = l.div_ceil(p);
    let nc = cols.columns();
    let owned = cols.owned();
    let mut send = vec![0.0; nc * block];
    for c in 0..nc {
        send[c * block..c * block + owned].copy_from_slice(&cols.delta[c * owned..(c + 1) * owned]);
    }
    let gathered = ctx.allgather_labeled(comm, &send, "sigma-allgather").await?;
    let per_member = nc * block;

    let mut out = SigmaOutput {
        sigma: Vec::with_capacity(nc * owned),
        epsilon: Vec::with_capacity(nc),
        mul_adds: 0,
    };
    let extents: Vec<_> = (0..p).map(|m| split_extent(l, p, m)).collect::<Result<_>>()?;
    let mut column = vec![0.0; l];
    for c in 0..nc {
        for (m, ext) in extents.iter().enumerate() {
            let n = ext.nb;
            let at = m * per_member + c * block;
            column[ext.ib..ext.ib + n].copy_from_slice(&gathered[at..at + n]);
        }
        let full = match variant {
            GatherVariant::Reference => sigma_reference(&column, &cols.coef),
            GatherVariant::Literal => sigma_literal(&column, &cols.coef),
        };
        out.mul_adds += l;
        out.epsilon.push(column.iter().zip(&cols.coef).map(|(d, k)| d * k).sum());
        out.sigma.extend_from_slice(&full[cols.beg..cols.end]);
    }
    Ok(out)
}

/// Refactored form: local prefix and local ε, then `allreduce(ε)` and
/// `exscan(ε)` carry one scalar per column each, whatever `L` is.
pub async fn sigma_refactored(ctx: &RankCtx, comm: &Communicator, cols: &VerticalColumns) -> Result<SigmaOutput> {
    let nc = cols.columns();
    let owned = cols.owned();
    let coef = &cols.coef[cols.beg..cols.end];
    let mut sigma = Vec::with_capacity(nc * owned);
    let mut local = Vec::with_capacity(nc);
    for c in 0..nc {
        let mut prefix = 0.0;
        for (d, k) in cols.delta[c * owned..(c + 1) * owned].iter().zip(coef) {
            sigma.push(prefix);
            prefix += d * k;
        }
        local.push(prefix);
    }
    let eps_sum = ctx.allreduce_sum_labeled(comm, &local, "sigma-allreduce").await?;
    let eps_scan = ctx.exscan_sum_labeled(comm, &local, "sigma-exscan").await?;
    for c in 0..nc {
        for s in &mut sigma[c * owned..(c + 1) * owned] {
            *s += eps_scan[c] + eps_sum[c];
        }
    }
    Ok(SigmaOutput {
        sigma,
        epsilon: eps_sum,
        mul_adds: nc * owned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{CommKind, Runtime, Schedule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_examples() {
        assert_eq!(sigma_reference(&[0.0; 5], &[3.0; 5]), vec![0.0; 5]);
        assert_eq!(sigma_reference(&[2.0], &[3.0]), vec![6.0]);
        assert_eq!(
            sigma_reference(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]),
            vec![10.0, 11.0, 13.0, 16.0]
        );
    }

    #[test]
    fn literal_variant_differs() {
        let lit = sigma_literal(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]);
        assert_eq!(lit, vec![0.0, 12.0, 25.0, 29.0]);
        assert_ne!(lit, sigma_reference(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]));
    }

    type Case = (Vec<Vec<f64>>, Vec<f64>);

    fn run_both(p: usize, case: &Case, variant: GatherVariant) -> Vec<(SigmaOutput, SigmaOutput)> {
        let (delta, coef) = case;
        let l = coef.len();
        Runtime::new(p, Schedule::RoundRobin)
            .run(p, |ctx| async move {
                let z = Communicator::world(ctx.size(), ctx.rank());
                let ext = split_extent(l, p, ctx.rank())?;
                let cols = VerticalColumns::from_global(delta, coef, ext.ib, ext.ie + 1)?;
                let g = sigma_gather(&ctx, &z, &cols, variant).await?;
                let r = sigma_refactored(&ctx, &z, &cols).await?;
                Ok((g, r))
            })
            .unwrap()
            .results
    }

    #[test]
    fn two_member_example() {
        let case = (vec![vec![1.0, 2.0, 3.0, 4.0]], vec![1.0; 4]);
        let out = run_both(2, &case, GatherVariant::Reference);
        assert_eq!(out[0].0.sigma, vec![10.0, 11.0]);
        assert_eq!(out[1].0.sigma, vec![13.0, 16.0]);
        assert_eq!(out[0].1.sigma, vec![10.0, 11.0]);
        assert_eq!(out[1].1.sigma, vec![13.0, 16.0]);
        assert_eq!(out[1].1.epsilon, vec![10.0]);
    }

    #[test]
    fn single_member_is_reference() {
        let case = (vec![vec![0.5, -1.0, 2.0]], vec![1.0, 2.0, 3.0]);
        let out = run_both(1, &case, GatherVariant::Reference);
        let want = sigma_reference(&case.0[0], &case.1);
        assert_eq!(out[0].0.sigma, want);
        assert_eq!(out[0].1.sigma, want);
    }

    #[test]
    fn random_equivalence_and_work() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..60 {
            let p = [1, 2, 3, 4, 6][rng.gen_range(0..5)];
            let l = rng.gen_range(p..=64);
            let nc = rng.gen_range(1..4);
            let coef: Vec<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let delta: Vec<Vec<f64>> = (0..nc)
                .map(|_| (0..l).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            let case = (delta, coef);
            let out = run_both(p, &case, GatherVariant::Reference);
            for (m, (g, r)) in out.iter().enumerate() {
                let ext = split_extent(l, p, m).unwrap();
                assert_eq!(g.mul_adds, l * nc);
                assert_eq!(r.mul_adds, ext.nb * nc);
                for c in 0..nc {
                    let want = sigma_reference(&case.0[c], &case.1);
                    for k in 0..ext.nb {
                        let i = c * ext.nb + k;
                        assert!((g.sigma[i] - want[ext.ib + k]).abs() <= 1e-12);
                        assert!((r.sigma[i] - g.sigma[i]).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn collective_byte_counts() {
        let (l, p, nc) = (30, 6, 4);
        let case = (vec![vec![1.0; l]; nc], vec![1.0; l]);
        let gather = Runtime::new(64, Schedule::RoundRobin)
            .run(p, |ctx| {
                let case = &case;
                async move {
                    let z = Communicator::world(ctx.size(), ctx.rank());
                    let e = split_extent(l, p, ctx.rank())?;
                    let cols = VerticalColumns::from_global(&case.0, &case.1, e.ib, e.ie + 1)?;
                    sigma_gather(&ctx, &z, &cols, GatherVariant::Reference).await
                }
            })
            .unwrap();
        for r in 0..p {
            assert_eq!(
                gather.stats.rank(r, CommKind::Global).coll_received,
                ((p - 1) * 5 * nc * 8) as u64
            );
        }
        let refac = Runtime::new(64, Schedule::RoundRobin)
            .run(p, |ctx| {
                let case = &case;
                async move {
                    let z = Communicator::world(ctx.size(), ctx.rank());
                    let e = split_extent(l, p, ctx.rank())?;
                    let cols = VerticalColumns::from_global(&case.0, &case.1, e.ib, e.ie + 1)?;
                    sigma_refactored(&ctx, &z, &cols).await
                }
            })
            .unwrap();
        // inner members ship one ε per column to each collective; the last
        // member has no exscan successor
        for r in 1..p - 1 {
            assert_eq!(refac.stats.rank(r, CommKind::Global).coll_sent, (2 * nc * 8) as u64);
        }
        assert_eq!(refac.stats.rank(p - 1, CommKind::Global).coll_sent, (nc * 8) as u64);
        assert!(refac.stats.total.coll_bytes.total() < gather.stats.total.coll_bytes.total());
    }

    #[test]
    fn inconsistent_layer_count_is_rejected() {
        let err = Runtime::new(1, Schedule::RoundRobin)
            .run(2, |ctx| async move {
                let z = Communicator::world(ctx.size(), ctx.rank());
                let l = if ctx.rank() == 0 { 4 } else { 8 };
                let e = split_extent(l, 2, ctx.rank())?;
                let cols = VerticalColumns::from_global(&[vec![1.0; l]], &vec![1.0; l], e.ib, e.ie + 1)?;
                sigma_gather(&ctx, &z, &cols, GatherVariant::Reference).await
            })
            .unwrap_err();
        assert!(matches!(err, Error::Collective { .. } | Error::Contract(_)), "{err:?}");
    }
}

//! σ-velocity by allgather versus allreduce + exscan over a Z communicator.

use leapgrid::decomp::split_extent;
use leapgrid::runtime::{CommKind, Communicator, Runtime, Schedule};
use leapgrid::vertical::{sigma_gather, sigma_literal, sigma_reference, sigma_refactored, GatherVariant, VerticalColumns};

fn main() -> leapgrid::Result<()> {
    println!("reference (1,2,3,4): {:?}", sigma_reference(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]));
    println!("literal   (1,2,3,4): {:?}", sigma_literal(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]));

    let l = 32;
    let columns = 24;
    let coef: Vec<f64> = (0..l).map(|k| 1.0 / (1.0 + k as f64)).collect();
    let delta: Vec<Vec<f64>> = (0..columns)
        .map(|c| (0..l).map(|k| ((c * l + k) as f64 * 0.37).sin()).collect())
        .collect();

    println!("\n{:>3} {:>14} {:>14} {:>10}", "pz", "gather bytes", "refactor bytes", "max diff");
    for pz in [2, 4, 8] {
        let mut bytes = [0u64; 2];
        let mut diff = 0.0f64;
        for (which, slot) in bytes.iter_mut().enumerate() {
            let out = Runtime::new(pz, Schedule::RoundRobin).run(pz, |ctx| {
                let (delta, coef) = (&delta, &coef);
                async move {
                    let z = Communicator::world(ctx.size(), ctx.rank());
                    let e = split_extent(l, pz, ctx.rank())?;
                    let cols = VerticalColumns::from_global(delta, coef, e.ib, e.ie + 1)?;
                    let s = if which == 0 {
                        sigma_gather(&ctx, &z, &cols, GatherVariant::Reference).await?
                    } else {
                        sigma_refactored(&ctx, &z, &cols).await?
                    };
                    let mut d = 0.0f64;
                    for (c, col) in delta.iter().enumerate() {
                        let want = sigma_reference(col, coef);
                        for k in 0..e.nb {
                            d = d.max((s.sigma[c * e.nb + k] - want[e.ib + k]).abs());
                        }
                    }
                    Ok(d)
                }
            })?;
            *slot = out.stats.comm(CommKind::Global).coll_bytes.total();
            diff = out.results.iter().fold(diff, |a, b| a.max(*b));
        }
        println!("{pz:>3} {:>14} {:>14} {diff:>10.1e}", bytes[0], bytes[1]);
    }
    Ok(())
}

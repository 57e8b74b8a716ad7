//! The simulated runtime: point-to-point messages, collectives, traffic
//! counters and deadlock reports.

use leapgrid::runtime::{CommKind, Communicator, Runtime, Schedule, Tag};
use leapgrid::Error;

fn main() -> leapgrid::Result<()> {
    // a ring: everyone sends right, then receives from the left
    let rt = Runtime::new(2, Schedule::Shuffled(7));
    let out = rt.run(4, |ctx| async move {
        let w = ctx.world();
        let n = w.size();
        let tag = Tag::new(1, "ring");
        ctx.send(&w, (ctx.rank() + 1) % n, tag, vec![ctx.rank() as f64; 3])?;
        let got = ctx.recv(&w, (ctx.rank() + n - 1) % n, tag).await?;
        let total = ctx.allreduce_sum(&w, &[got[0]]).await?;
        let before = ctx.exscan_sum(&w, &[1.0]).await?;
        Ok((got[0], total[0], before[0]))
    })?;
    for (rank, r) in out.results.iter().enumerate() {
        println!("rank {rank}: from left {}, allreduce {}, exscan {}", r.0, r.1, r.2);
    }
    let c = out.stats.comm(CommKind::Global);
    println!(
        "p2p {} msgs / {} bytes ({} intra-node), {} collectives",
        c.p2p_messages.total(),
        c.p2p_bytes.total(),
        c.p2p_bytes.intra,
        c.coll_operations.total()
    );

    // everyone waits first: reported, not hung
    let stuck = Runtime::new(1, Schedule::RoundRobin).run(2, |ctx| async move {
        let w = Communicator::world(ctx.size(), ctx.rank());
        let other = 1 - ctx.rank();
        ctx.recv(&w, other, Tag::new(9, "handshake")).await?;
        ctx.send(&w, other, Tag::new(9, "handshake"), vec![])?;
        Ok(())
    });
    match stuck {
        Err(e @ Error::Deadlock { .. }) => println!("\n{e}"),
        other => println!("\nunexpected: {other:?}"),
    }
    Ok(())
}

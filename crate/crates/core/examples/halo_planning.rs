//! Shifting-window halo plans on an uneven X split, and how aggregation
//! folds variables into one message per peer.

use leapgrid::decomp::split_all;
use leapgrid::halo::{
    aggregate, batches_per_variable, census, classify_table_case, pattern_offsets, plan_window, Direction,
    VariablePlan,
};

fn main() -> leapgrid::Result<()> {
    let nx = 40;
    let xs = split_all(nx, 6)?;
    println!("extents: {:?}", xs.iter().map(|e| (e.ib, e.ie)).collect::<Vec<_>>());

    for n in [1, 5, 9] {
        let (_, r) = pattern_offsets(leapgrid::halo::Pattern::PlusHalf, n);
        let p = plan_window(nx, &xs, 2, r, Direction::Right)?;
        println!(
            "\nrank 2, n_leap {n}, right width {r}: {:?} (table says {:?})",
            p.classification,
            classify_table_case(r, xs[3].nb)
        );
        for s in &p.recv_segments {
            println!("  recv {}..{} from rank {}", s.start, s.start + s.len, s.peer);
        }
        for s in &p.send_segments {
            println!("  send {}..{} to rank {}", s.start, s.start + s.len, s.peer);
        }
    }

    println!("\naggregation groups:");
    let layers = 8;
    for g in census() {
        let (l, r) = pattern_offsets(g.pattern, 5);
        let mut plans = Vec::new();
        for (dir, w) in [(Direction::Right, r), (Direction::Left, l)] {
            let plan = plan_window(nx, &xs, 2, w, dir)?;
            for v in &g.variables {
                plans.push(VariablePlan {
                    variable: v.to_string(),
                    phase: g.phase,
                    pattern: g.pattern,
                    plan: plan.clone(),
                });
            }
        }
        let one = aggregate(&plans, std::slice::from_ref(&g), layers, 8)?;
        let each = batches_per_variable(&plans, layers, 8);
        let bytes = |b: &[leapgrid::halo::MessageBatch]| b.iter().map(|m| m.bytes).sum::<usize>();
        println!(
            "  {:<24} {:?}: {} messages -> {}, bytes {} = {}",
            g.label(),
            g.variables,
            each.len(),
            one.len(),
            bytes(&each),
            bytes(&one)
        );
    }
    Ok(())
}

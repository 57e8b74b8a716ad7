//! Shifting-window halo planning along the periodic X dimension.
//!
//! A leap-format difference at row `j` reads up to `2·n_leap - 1` points on
//! either side of the owned block. Once that reach exceeds the neighbour's
//! block the needed window slides across several ranks ("crossed" case).
//! [`plan_window`] intersects the window with every rank's extent and
//! returns the peer segments to receive; the send side is the mirror image.

use crate::decomp::LocalExtent;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Offset pair of a leap-format difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    /// `(x + N, x - N + 1)`, from `(x + 1, x)`.
    PlusHalf,
    /// `(x + N - 1, x - N)`, from `(x, x - 1)`.
    MinusHalf,
    /// `(x + 2N - 1, x - 2N + 1)`, from `(x + 1, x - 1)`.
    Wide,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::PlusHalf, Pattern::MinusHalf, Pattern::Wide];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::PlusHalf => "plus-half",
            Pattern::MinusHalf => "minus-half",
            Pattern::Wide => "wide",
        }
    }
}

/// `(left_width, right_width)` of `pattern` at interval `n_leap`.
pub fn pattern_offsets(pattern: Pattern, n_leap: u32) -> (usize, usize) {
    let n = n_leap.max(1) as usize;
    match pattern {
        Pattern::PlusHalf => (n - 1, n),
        Pattern::MinusHalf => (n, n - 1),
        Pattern::Wide => (2 * n - 1, 2 * n - 1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Window just past `IE`, owned by ranks to the east.
    Right,
    /// Window just before `IB`.
    Left,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Right => "right",
            Direction::Left => "left",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment {
    pub peer: usize,
    /// Global X index of the first point.
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    SelfContained,
    Neighbor,
    Crossed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaloPlan {
    pub rank: usize,
    pub direction: Direction,
    pub width: usize,
    /// Ordered along the window, starting at its first index.
    pub recv_segments: Vec<Segment>,
    /// `peer` is the requesting rank here.
    pub send_segments: Vec<Segment>,
    pub classification: Classification,
}

impl HaloPlan {
    pub fn recv_volume(&self) -> usize {
        self.recv_segments.iter().map(|s| s.len).sum()
    }

    pub fn send_volume(&self) -> usize {
        self.send_segments.iter().map(|s| s.len).sum()
    }
}

/// Segments of the window `width` points past (or before) `rank`'s block.
fn window_segments(
    nx: usize,
    extents: &[LocalExtent],
    rank: usize,
    width: usize,
    direction: Direction,
) -> Vec<Segment> {
    let own = extents[rank];
    let first = match direction {
        Direction::Right => (own.ie + 1) % nx,
        Direction::Left => (own.ib + nx - width) % nx,
    };
    let mut segments: Vec<Segment> = Vec::new();
    let mut remaining = width;
    let mut at = first;
    while remaining > 0 {
        let peer = extents
            .iter()
            .position(|e| e.contains(at))
            .expect("extents partition the circle");
        let len = (extents[peer].ie + 1 - at).min(remaining);
        segments.push(Segment {
            peer,
            start: at,
            len,
        });
        remaining -= len;
        at = (at + len) % nx;
    }
    segments
}

fn check_extents(nx: usize, extents: &[LocalExtent]) -> Result<()> {
    let mut next = 0;
    for e in extents {
        if e.ib != next || e.ie < e.ib || e.nb != e.ie - e.ib + 1 {
            return Err(Error::Contract(format!("extents do not partition [0, {nx})")));
        }
        next = e.ie + 1;
    }
    if next != nx {
        return Err(Error::Contract(format!("extents do not partition [0, {nx})")));
    }
    Ok(())
}

pub fn plan_window(
    nx: usize,
    extents: &[LocalExtent],
    rank: usize,
    width: usize,
    direction: Direction,
) -> Result<HaloPlan> {
    if width >= nx {
        return Err(Error::InfeasibleWindow { width, nx });
    }
    check_extents(nx, extents)?;
    if rank >= extents.len() {
        return Err(Error::Domain(format!("rank {rank} outside X communicator")));
    }
    let px = extents.len();
    let recv_segments = window_segments(nx, extents, rank, width, direction);
    let mut send_segments = Vec::new();
    for requester in 0..px {
        for seg in window_segments(nx, extents, requester, width, direction) {
            if seg.peer == rank {
                send_segments.push(Segment {
                    peer: requester,
                    ..seg
                });
            }
        }
    }
    let neighbour = match direction {
        Direction::Right => (rank + 1) % px,
        Direction::Left => (rank + px - 1) % px,
    };
    let classification = match recv_segments.as_slice() {
        [] => Classification::SelfContained,
        [only] if only.peer == neighbour => Classification::Neighbor,
        _ => Classification::Crossed,
    };
    Ok(HaloPlan {
        rank,
        direction,
        width,
        recv_segments,
        send_segments,
        classification,
    })
}

/// Case of the leap communication table for an interval `n_leap > 1`.
pub fn classify_table_case(n_leap: usize, nb_next: usize) -> Classification {
    if n_leap <= nb_next {
        Classification::Neighbor
    } else {
        Classification::Crossed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Adaption,
    Advection,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Adaption => "adaption",
            Phase::Advection => "advection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AggregationGroup {
    pub phase: Phase,
    pub pattern: Pattern,
    pub variables: Vec<&'static str>,
}

impl AggregationGroup {
    /// Stable label such as `adaption/minus-half`.
    pub fn label(&self) -> &'static str {
        group_label(self.phase, self.pattern)
    }
}

pub fn group_label(phase: Phase, pattern: Pattern) -> &'static str {
    match (phase, pattern) {
        (Phase::Adaption, Pattern::PlusHalf) => "adaption/plus-half",
        (Phase::Adaption, Pattern::MinusHalf) => "adaption/minus-half",
        (Phase::Adaption, Pattern::Wide) => "adaption/wide",
        (Phase::Advection, Pattern::PlusHalf) => "advection/plus-half",
        (Phase::Advection, Pattern::MinusHalf) => "advection/minus-half",
        (Phase::Advection, Pattern::Wide) => "advection/wide",
    }
}

/// Variables exchanged together, keyed by (phase, pattern).
pub fn census() -> Vec<AggregationGroup> {
    use Pattern::*;
    use Phase::*;
    vec![
        AggregationGroup { phase: Adaption, pattern: PlusHalf, variables: vec!["PXW", "UT"] },
        AggregationGroup {
            phase: Adaption,
            pattern: MinusHalf,
            variables: vec!["PT", "Pstar1", "Pstar2", "TT", "deltap", "GHI"],
        },
        AggregationGroup { phase: Adaption, pattern: Wide, variables: vec!["Pstar2"] },
        AggregationGroup { phase: Advection, pattern: PlusHalf, variables: vec!["Ustar"] },
        AggregationGroup { phase: Advection, pattern: MinusHalf, variables: vec!["Ustar"] },
        AggregationGroup { phase: Advection, pattern: Wide, variables: vec!["UT", "VT", "TT"] },
    ]
}

/// The plan one variable needs for one difference term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariablePlan {
    pub variable: String,
    pub phase: Phase,
    pub pattern: Pattern,
    pub plan: HaloPlan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageBatch {
    pub peer: usize,
    pub phase: Phase,
    pub pattern: Pattern,
    pub direction: Direction,
    pub variables: Vec<String>,
    /// X points per variable.
    pub points: usize,
    pub bytes: usize,
    /// Peer is the sender itself: a local copy, no message.
    pub local: bool,
}

/// One send batch per (peer, phase, pattern, direction) for each group.
///
/// `layers` folds the Y×Z extent into the volume; `element_width` is bytes
/// per value.
pub fn aggregate(
    plans: &[VariablePlan],
    groups: &[AggregationGroup],
    layers: usize,
    element_width: usize,
) -> Result<Vec<MessageBatch>> {
    let mut out = Vec::new();
    for group in groups {
        let members: Vec<&VariablePlan> = plans
            .iter()
            .filter(|p| p.phase == group.phase && p.pattern == group.pattern)
            .filter(|p| group.variables.contains(&p.variable.as_str()))
            .collect();
        // one geometry per direction
        let mut by_direction: BTreeMap<Direction, Vec<&VariablePlan>> = BTreeMap::new();
        for p in members {
            by_direction.entry(p.plan.direction).or_default().push(p);
        }
        for (direction, vars) in by_direction {
            let geometry = &vars[0].plan;
            if let Some(bad) = vars.iter().find(|v| {
                v.plan.rank != geometry.rank
                    || v.plan.send_segments != geometry.send_segments
                    || v.plan.recv_segments != geometry.recv_segments
            }) {
                return Err(Error::Contract(format!(
                    "variable {} does not share the segment geometry of group {}",
                    bad.variable,
                    group.label()
                )));
            }
            let names: Vec<String> = vars.iter().map(|v| v.variable.clone()).collect();
            for (peer, points) in per_peer(&geometry.send_segments) {
                out.push(MessageBatch {
                    peer,
                    phase: group.phase,
                    pattern: group.pattern,
                    direction,
                    variables: names.clone(),
                    points,
                    bytes: points * names.len() * layers * element_width,
                    local: peer == geometry.rank,
                });
            }
        }
    }
    Ok(out)
}

/// The unaggregated baseline: one batch per (variable, peer, direction).
pub fn batches_per_variable(plans: &[VariablePlan], layers: usize, element_width: usize) -> Vec<MessageBatch> {
    let mut out = Vec::new();
    for p in plans {
        for (peer, points) in per_peer(&p.plan.send_segments) {
            out.push(MessageBatch {
                peer,
                phase: p.phase,
                pattern: p.pattern,
                direction: p.plan.direction,
                variables: vec![p.variable.clone()],
                points,
                bytes: points * layers * element_width,
                local: peer == p.plan.rank,
            });
        }
    }
    out
}

fn per_peer(segments: &[Segment]) -> Vec<(usize, usize)> {
    let mut totals: Vec<(usize, usize)> = Vec::new();
    for s in segments {
        match totals.iter_mut().find(|(p, _)| *p == s.peer) {
            Some((_, n)) => *n += s.len,
            None => totals.push((s.peer, s.len)),
        }
    }
    totals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::split_all;

    #[test]
    fn offsets_examples() {
        assert_eq!(pattern_offsets(Pattern::Wide, 3), (5, 5));
        assert_eq!(pattern_offsets(Pattern::PlusHalf, 1), (0, 1));
        assert_eq!(pattern_offsets(Pattern::MinusHalf, 5), (5, 4));
        for p in Pattern::ALL {
            let (l, r) = pattern_offsets(p, 1);
            assert!(l <= 1 && r <= 1);
        }
    }

    #[test]
    fn window_examples() {
        let ext = split_all(16, 4).unwrap();
        let p = plan_window(16, &ext, 0, 3, Direction::Right).unwrap();
        assert_eq!(p.recv_segments, vec![Segment { peer: 1, start: 4, len: 3 }]);
        assert_eq!(p.classification, Classification::Neighbor);

        let p = plan_window(16, &ext, 0, 6, Direction::Right).unwrap();
        assert_eq!(
            p.recv_segments,
            vec![Segment { peer: 1, start: 4, len: 4 }, Segment { peer: 2, start: 8, len: 2 }]
        );
        assert_eq!(p.classification, Classification::Crossed);

        let p = plan_window(16, &ext, 3, 3, Direction::Right).unwrap();
        assert_eq!(p.recv_segments, vec![Segment { peer: 0, start: 0, len: 3 }]);
        assert_eq!(p.classification, Classification::Neighbor);
    }

    #[test]
    fn left_windows_mirror_right() {
        let ext = split_all(16, 4).unwrap();
        let p = plan_window(16, &ext, 0, 3, Direction::Left).unwrap();
        assert_eq!(p.recv_segments, vec![Segment { peer: 3, start: 13, len: 3 }]);
        assert_eq!(p.classification, Classification::Neighbor);
        let p = plan_window(16, &ext, 2, 6, Direction::Left).unwrap();
        assert_eq!(
            p.recv_segments,
            vec![Segment { peer: 0, start: 2, len: 2 }, Segment { peer: 1, start: 4, len: 4 }]
        );
        assert_eq!(p.classification, Classification::Crossed);
    }

    #[test]
    fn zero_width_and_infeasible() {
        let ext = split_all(16, 4).unwrap();
        let p = plan_window(16, &ext, 1, 0, Direction::Right).unwrap();
        assert_eq!(p.classification, Classification::SelfContained);
        assert!(p.send_segments.is_empty());
        assert!(matches!(
            plan_window(16, &ext, 1, 16, Direction::Right),
            Err(Error::InfeasibleWindow { .. })
        ));
    }

    #[test]
    fn sends_mirror_receives() {
        let ext = split_all(16, 4).unwrap();
        let p = plan_window(16, &ext, 1, 6, Direction::Right).unwrap();
        // rank 0 needs 4..8 (all of rank 1), rank 3 needs 0..4 + 4..6
        assert_eq!(
            p.send_segments,
            vec![Segment { peer: 0, start: 4, len: 4 }, Segment { peer: 3, start: 4, len: 2 }]
        );
    }

    #[test]
    fn table_case_examples() {
        assert_eq!(classify_table_case(3, 4), Classification::Neighbor);
        assert_eq!(classify_table_case(6, 4), Classification::Crossed);
        assert_eq!(classify_table_case(4, 4), Classification::Neighbor);
    }

    fn plans_for(group: &AggregationGroup, ext: &[LocalExtent], rank: usize, width: usize) -> Vec<VariablePlan> {
        group
            .variables
            .iter()
            .map(|v| VariablePlan {
                variable: v.to_string(),
                phase: group.phase,
                pattern: group.pattern,
                plan: plan_window(32, ext, rank, width, Direction::Right).unwrap(),
            })
            .collect()
    }

    #[test]
    fn aggregation_of_six_variable_group() {
        let groups = census();
        let g = &groups[1];
        assert_eq!(g.variables.len(), 6);
        let ext = split_all(32, 4).unwrap();
        let plans = plans_for(g, &ext, 1, 11);
        let agg = aggregate(&plans, &groups, 5, 8).unwrap();
        let raw = batches_per_variable(&plans, 5, 8);
        assert_eq!(raw.len(), 6 * agg.len());
        let bytes = |b: &[MessageBatch]| b.iter().map(|m| m.bytes).sum::<usize>();
        assert_eq!(bytes(&agg), bytes(&raw));
    }

    #[test]
    fn singleton_group_is_identity() {
        let groups = census();
        let g = &groups[2];
        let ext = split_all(32, 4).unwrap();
        let plans = plans_for(g, &ext, 0, 3);
        assert_eq!(aggregate(&plans, &groups, 2, 8).unwrap(), batches_per_variable(&plans, 2, 8));
    }

    #[test]
    fn different_patterns_never_merge() {
        let groups = census();
        let ext = split_all(32, 4).unwrap();
        let mut plans = plans_for(&groups[3], &ext, 0, 5);
        plans.extend(plans_for(&groups[4], &ext, 0, 5));
        let agg = aggregate(&plans, &groups, 1, 8).unwrap();
        assert_eq!(agg.len(), 2);
        assert_ne!(agg[0].pattern, agg[1].pattern);
    }

    #[test]
    fn geometry_mismatch_is_a_contract_violation() {
        let groups = census();
        let ext = split_all(32, 4).unwrap();
        let mut plans = plans_for(&groups[0], &ext, 0, 3);
        plans[1].plan = plan_window(32, &ext, 0, 9, Direction::Right).unwrap();
        assert!(matches!(aggregate(&plans, &groups, 1, 8), Err(Error::Contract(_))));
    }
}

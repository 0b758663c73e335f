//! Splitting stall samples across surviving producers.
//!
//! A consumer's stall count for one reason is divided among the live
//! in-edges of the matching kind. Producers that issue more often stall
//! the consumer more often, and producers further away (by the longest
//! path, since every instruction in between hides a cycle) stall it less,
//! so each edge weighs `issued × 1/max_len` and takes its proportional
//! share. Reasons with no surviving producer — and reasons that never name
//! one — stay at the consumer as self-attributed cost. A node's latency
//! total is spread over its recorded reasons proportionally, so the sum of
//! all contributions equals the profile's latency-sample total exactly.

use super::{Contribution, DepKind, DependencyGraph, DetailedReason};
use crate::profile::StallReason;

pub fn apportion(graph: &DependencyGraph) -> Vec<Contribution> {
    let mut out = Vec::new();
    for (use_pc, node) in &graph.nodes {
        if node.latency == 0 {
            continue;
        }
        let latency = node.latency as f64;
        let recorded = node.stalls.total();
        if recorded == 0 {
            out.push(Contribution {
                def_pc: *use_pc,
                use_pc: *use_pc,
                reason: DetailedReason::SelfAttributed(StallReason::MiscOther),
                samples: latency,
            });
            continue;
        }
        for reason in StallReason::ALL {
            if reason == StallReason::None {
                continue;
            }
            let count = node.stalls.get(reason);
            if count == 0 {
                continue;
            }
            // Latency samples without a breakdown entry follow the
            // recorded reasons proportionally.
            let share = latency * count as f64 / recorded as f64;
            let kind = DepKind::from_reason(reason);
            let edges: Vec<_> = match kind {
                Some(k) => graph
                    .in_edges(*use_pc)
                    .filter(|e| e.kind == k && e.is_live())
                    .collect(),
                None => Vec::new(),
            };
            if edges.is_empty() {
                out.push(Contribution {
                    def_pc: *use_pc,
                    use_pc: *use_pc,
                    reason: DetailedReason::SelfAttributed(reason),
                    samples: share,
                });
                continue;
            }
            let weight = |e: &super::DepEdge| {
                let issued = graph.nodes.get(&e.def_pc).map_or(0, |n| n.issued).max(1) as f64;
                issued / e.max_len.max(1) as f64
            };
            let total: f64 = edges.iter().map(|e| weight(e)).sum();
            for e in &edges {
                let def_class = graph.nodes[&e.def_pc].class;
                out.push(Contribution {
                    def_pc: e.def_pc,
                    use_pc: *use_pc,
                    reason: DetailedReason::classify(
                        e.kind,
                        def_class,
                        !e.war_registers.is_empty(),
                    ),
                    samples: share * weight(e) / total,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::blamer::{DepEdge, DepNode};
    use crate::isa::OpcodeClass;
    use crate::profile::StallCounts;

    fn node(pc: u64, class: OpcodeClass, issued: u64, latency: u64, stalls: StallCounts) -> DepNode {
        DepNode {
            pc,
            opcode: "X".into(),
            class,
            variable_latency: false,
            issued,
            latency,
            stalls,
        }
    }

    fn edge(def: u64, use_pc: u64, kind: DepKind, max_len: u64) -> DepEdge {
        DepEdge {
            def_pc: def,
            use_pc,
            kind,
            registers: Default::default(),
            war_registers: Default::default(),
            min_len: 1,
            max_len,
            pruned_by: None,
        }
    }

    /// Twice the issues at twice the distance weigh the same.
    #[test]
    fn issue_rate_and_distance_balance() {
        let mut g = DependencyGraph::default();
        let mut stalls = StallCounts::default();
        stalls.add(StallReason::MemoryDependency, 9);
        g.nodes.insert(0x30, node(0x30, OpcodeClass::ArithmeticFixed, 0, 9, stalls));
        g.nodes.insert(0x0, node(0x0, OpcodeClass::ConstantMemory, 4, 0, StallCounts::default()));
        g.nodes.insert(0x10, node(0x10, OpcodeClass::GlobalMemory, 2, 0, StallCounts::default()));
        g.edges.push(edge(0x0, 0x30, DepKind::Memory, 2));
        g.edges.push(edge(0x10, 0x30, DepKind::Memory, 1));

        let by_def: BTreeMap<u64, f64> = apportion(&g)
            .into_iter()
            .map(|c| (c.def_pc, c.samples))
            .collect();
        assert!((by_def[&0x0] - 4.5).abs() < 1e-12);
        assert!((by_def[&0x10] - 4.5).abs() < 1e-12);
    }

    /// Latency spreads over recorded reasons proportionally, keeping the
    /// total conserved even when the breakdown undercounts.
    #[test]
    fn partial_breakdown_scales_up() {
        let mut g = DependencyGraph::default();
        let mut stalls = StallCounts::default();
        stalls.add(StallReason::MemoryThrottle, 3);
        stalls.add(StallReason::InstructionFetch, 1);
        g.nodes.insert(0x0, node(0x0, OpcodeClass::GlobalMemory, 1, 10, stalls));
        let contributions = apportion(&g);
        let total: f64 = contributions.iter().map(|c| c.samples).sum();
        assert!((total - 10.0).abs() < 1e-12);
        let throttle = contributions
            .iter()
            .find(|c| c.reason == DetailedReason::SelfAttributed(StallReason::MemoryThrottle))
            .unwrap();
        assert!((throttle.samples - 7.5).abs() < 1e-12);
    }

    #[test]
    fn bare_latency_becomes_misc() {
        let mut g = DependencyGraph::default();
        g.nodes.insert(0x0, node(0x0, OpcodeClass::Misc, 1, 5, StallCounts::default()));
        let contributions = apportion(&g);
        assert_eq!(contributions.len(), 1);
        assert_eq!(
            contributions[0].reason,
            DetailedReason::SelfAttributed(StallReason::MiscOther)
        );
        assert!((contributions[0].samples - 5.0).abs() < 1e-12);
    }

    /// Pruned edges take no share.
    #[test]
    fn pruned_edges_are_ignored() {
        let mut g = DependencyGraph::default();
        let mut stalls = StallCounts::default();
        stalls.add(StallReason::MemoryDependency, 6);
        g.nodes.insert(0x20, node(0x20, OpcodeClass::ArithmeticFixed, 0, 6, stalls));
        g.nodes.insert(0x0, node(0x0, OpcodeClass::GlobalMemory, 1, 0, StallCounts::default()));
        g.nodes.insert(0x10, node(0x10, OpcodeClass::GlobalMemory, 1, 0, StallCounts::default()));
        let mut pruned = edge(0x0, 0x20, DepKind::Memory, 1);
        pruned.pruned_by = Some(crate::blamer::PruneRule::Latency);
        g.edges.push(pruned);
        g.edges.push(edge(0x10, 0x20, DepKind::Memory, 2));
        let contributions = apportion(&g);
        assert_eq!(contributions.len(), 1);
        assert_eq!(contributions[0].def_pc, 0x10);
        assert!((contributions[0].samples - 6.0).abs() < 1e-12);
    }
}

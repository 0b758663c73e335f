//! Static pruning of implausible dependency edges.
//!
//! Three rules, applied in a fixed order, each justified by how the
//! hardware reports stalls:
//!
//! 1. **Opcode**: a stall reason implies the producer's functional class.
//!    A memory wait cannot come from an arithmetic producer, and a value
//!    wait cannot come from a device-memory producer (unless the hazard is
//!    write-after-read on the producer's sources).
//! 2. **Dominator**: if an unpredicated instruction on *every* path between
//!    producer and consumer already reads the same registers, the wait was
//!    absorbed there and cannot resurface at the consumer.
//! 3. **Latency**: issuing an instruction takes at least a cycle, so a
//!    producer whose result latency is shorter than the shortest path to
//!    the consumer has always completed by the time the consumer issues.

use std::collections::{BTreeMap, BTreeSet};

use crate::cfg::{Cfg, ProgramCfg};
use crate::isa::{reads_writes, ArchSpec, FunctionDef, OpcodeClass, Program, RegisterRef};

use super::{DepEdge, DepKind, DependencyGraph, PruneCounts, PruneRule};

/// Applies all three rules. Edges stay in the graph with `pruned_by` set
/// so diagnostics can count what each rule removed.
pub fn prune_edges(
    graph: &mut DependencyGraph,
    program: &Program,
    cfgs: &ProgramCfg,
    arch: &ArchSpec,
) -> PruneCounts {
    prune_edges_subset(
        graph,
        program,
        cfgs,
        arch,
        &[PruneRule::Opcode, PruneRule::Dominator, PruneRule::Latency],
    )
}

/// Applies only the listed rules, in the canonical order. Used to check
/// that each added rule only ever removes more edges.
pub fn prune_edges_subset(
    graph: &mut DependencyGraph,
    program: &Program,
    cfgs: &ProgramCfg,
    arch: &ArchSpec,
    rules: &[PruneRule],
) -> PruneCounts {
    let mut counts = PruneCounts::default();
    let mut reads_cache: BTreeMap<u64, BTreeSet<RegisterRef>> = BTreeMap::new();

    let mut verdicts: Vec<Option<PruneRule>> = Vec::with_capacity(graph.edges.len());
    for edge in &graph.edges {
        let def_class = graph.nodes.get(&edge.def_pc).map(|n| n.class);
        let verdict = [PruneRule::Opcode, PruneRule::Dominator, PruneRule::Latency]
            .into_iter()
            .filter(|r| rules.contains(r))
            .find(|rule| match rule {
                PruneRule::Opcode => def_class.map_or(false, |c| opcode_mismatch(edge, c)),
                PruneRule::Dominator => {
                    absorbed_on_every_path(program, cfgs, edge, &mut reads_cache)
                }
                PruneRule::Latency => def_class.map_or(false, |c| {
                    edge.min_len > arch.latency(c).cycles as u64
                }),
            });
        verdicts.push(verdict);
    }
    for (edge, verdict) in graph.edges.iter_mut().zip(verdicts) {
        edge.pruned_by = verdict;
        match verdict {
            Some(PruneRule::Opcode) => counts.opcode += 1,
            Some(PruneRule::Dominator) => counts.dominator += 1,
            Some(PruneRule::Latency) => counts.latency += 1,
            None => {}
        }
    }
    counts
}

/// Rule 1: the producer's class cannot emit this stall reason.
fn opcode_mismatch(edge: &DepEdge, def_class: OpcodeClass) -> bool {
    let device_memory = matches!(
        def_class,
        OpcodeClass::GlobalMemory
            | OpcodeClass::LocalMemory
            | OpcodeClass::ConstantMemory
            | OpcodeClass::TextureMemory
    );
    match edge.kind {
        DepKind::Memory => !device_memory,
        DepKind::Execution => {
            if device_memory {
                // Device-memory producers only raise value waits through
                // write-after-read hazards on their source registers.
                edge.war_registers.is_empty()
            } else {
                def_class == OpcodeClass::Sync
            }
        }
        DepKind::Synchronization => def_class != OpcodeClass::Sync,
    }
}

/// Rule 2: some unpredicated instruction reading the same registers sits
/// on every instruction-level path from def to use.
fn absorbed_on_every_path(
    program: &Program,
    cfgs: &ProgramCfg,
    edge: &DepEdge,
    reads_cache: &mut BTreeMap<u64, BTreeSet<RegisterRef>>,
) -> bool {
    if edge.registers.is_empty() {
        return false; // pure WAR hazards carry no forwarded registers
    }
    let Some((fi, func)) = program.function_at(edge.def_pc) else { return false };
    if !func.contains_pc(edge.use_pc) {
        return false;
    }
    let cfg = cfgs.for_function(fi);
    let (Some(def_idx), Some(use_idx)) =
        (func.index_of_pc(edge.def_pc), func.index_of_pc(edge.use_pc))
    else {
        return false;
    };
    // Only meaningful when the use is forward-reachable at all.
    if !reaches_avoiding(func, cfg, def_idx, use_idx, usize::MAX) {
        return false;
    }
    for (k_idx, inst) in func.instructions.iter().enumerate() {
        if k_idx == def_idx || k_idx == use_idx || !inst.predicate.is_always() {
            continue;
        }
        let k_reads = reads_cache
            .entry(inst.pc)
            .or_insert_with(|| reads_writes(inst).0);
        if !edge.registers.iter().all(|r| k_reads.contains(r)) {
            continue;
        }
        if !reaches_avoiding(func, cfg, def_idx, use_idx, k_idx) {
            return true;
        }
    }
    false
}

/// Can the use be reached from (strictly after) the def without passing
/// through `avoid`?
fn reaches_avoiding(
    func: &FunctionDef,
    cfg: &Cfg,
    def_idx: usize,
    use_idx: usize,
    avoid: usize,
) -> bool {
    let n = func.instructions.len();
    let succs = |idx: usize, out: &mut Vec<usize>| {
        let Some(b) = cfg.block_of_index(idx) else { return };
        let blk = &cfg.blocks[b];
        if idx + 1 < blk.end {
            out.push(idx + 1);
        } else {
            for (s, _) in &blk.succs {
                out.push(cfg.blocks[*s].start);
            }
        }
    };
    let mut seen = vec![false; n];
    let mut stack = Vec::new();
    succs(def_idx, &mut stack);
    while let Some(i) = stack.pop() {
        if i == avoid || i >= n || seen[i] {
            continue;
        }
        if i == use_idx {
            return true;
        }
        seen[i] = true;
        succs(i, &mut stack);
    }
    false
}

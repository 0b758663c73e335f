//! Shared helpers for the integration suite: fixture paths, seeded
//! generators for synthetic dependency graphs and straight-line kernels,
//! and a corpus of small kernels with known producer/consumer structure
//! for cross-checking attribution against the simulator's oracle.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use gir_advisor::blamer::{Contribution, DepEdge, DepKind, DepNode, DependencyGraph, PruneRule};
use gir_advisor::isa::{OpcodeClass, Program};
use gir_advisor::profile::sim::SimConfig;
use gir_advisor::profile::{KernelProfile, LaunchStats, OracleMap, StallCounts, StallReason};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stall reasons that may appear in a breakdown (everything but `None`).
pub const BREAKDOWN_REASONS: [StallReason; 8] = [
    StallReason::MemoryDependency,
    StallReason::ExecutionDependency,
    StallReason::Synchronization,
    StallReason::MemoryThrottle,
    StallReason::InstructionFetch,
    StallReason::PipelineBusy,
    StallReason::NotSelected,
    StallReason::MiscOther,
];

const KINDS: [DepKind; 3] = [DepKind::Memory, DepKind::Execution, DepKind::Synchronization];

const CLASSES: [OpcodeClass; 7] = [
    OpcodeClass::GlobalMemory,
    OpcodeClass::LocalMemory,
    OpcodeClass::SharedMemory,
    OpcodeClass::ConstantMemory,
    OpcodeClass::ArithmeticFixed,
    OpcodeClass::ArithmeticLong,
    OpcodeClass::Convert,
];

/// A random dependency graph with plausible sample counts: some nodes
/// carry no breakdown, some breakdowns undercount their latency total,
/// and a fraction of edges is already pruned.
pub fn random_graph(rng: &mut ChaCha8Rng) -> DependencyGraph {
    let n = rng.gen_range(2..=24usize);
    let mut graph = DependencyGraph::default();
    for i in 0..n {
        let pc = i as u64 * 16;
        let latency = if rng.gen_bool(0.8) { rng.gen_range(0..=60u64) } else { 0 };
        let mut stalls = StallCounts::default();
        if latency > 0 && rng.gen_bool(0.85) {
            for _ in 0..rng.gen_range(1..=3usize) {
                let reason = BREAKDOWN_REASONS[rng.gen_range(0..BREAKDOWN_REASONS.len())];
                stalls.add(reason, rng.gen_range(0..=latency));
            }
        }
        graph.nodes.insert(
            pc,
            DepNode {
                pc,
                opcode: format!("OP{i}"),
                class: CLASSES[rng.gen_range(0..CLASSES.len())],
                variable_latency: rng.gen_bool(0.5),
                issued: rng.gen_range(0..=12),
                latency,
                stalls,
            },
        );
    }
    for i in 1..n {
        let use_pc = i as u64 * 16;
        for _ in 0..rng.gen_range(0..=3usize) {
            let def_pc = rng.gen_range(0..i) as u64 * 16;
            let min_len = rng.gen_range(1..=6u64);
            let pruned_by = match rng.gen_range(0..10u32) {
                0 => Some(PruneRule::Opcode),
                1 => Some(PruneRule::Dominator),
                2 => Some(PruneRule::Latency),
                _ => None,
            };
            graph.edges.push(DepEdge {
                def_pc,
                use_pc,
                kind: KINDS[rng.gen_range(0..KINDS.len())],
                registers: BTreeSet::new(),
                war_registers: BTreeSet::new(),
                min_len,
                max_len: min_len + rng.gen_range(0..=6),
                pruned_by,
            });
        }
    }
    graph
}

/// Largest relative error between a node's latency total and the sum of
/// the contributions attributed at that node. Contributions naming a pc
/// outside the graph count as pure error.
pub fn max_conservation_error(graph: &DependencyGraph, contributions: &[Contribution]) -> f64 {
    let mut sums: BTreeMap<u64, f64> = BTreeMap::new();
    for c in contributions {
        *sums.entry(c.use_pc).or_insert(0.0) += c.samples;
    }
    let mut worst = 0.0f64;
    for (pc, node) in &graph.nodes {
        let want = node.latency as f64;
        let got = sums.remove(pc).unwrap_or(0.0);
        worst = worst.max((got - want).abs() / want.max(1.0));
    }
    for got in sums.values() {
        worst = worst.max(got.abs());
    }
    worst
}

/// A random straight-line kernel in textual form. Loads arm scoreboard
/// barriers, a fraction of consumers drains them, and stores arm read
/// barriers, so all three dependency kinds show up.
pub fn random_kernel_text(rng: &mut ChaCha8Rng) -> String {
    let mut out = String::from("FUNC main:\n");
    let n = rng.gen_range(8..=24usize);
    let mut pending: Vec<u32> = Vec::new();
    let mut next_barrier = 0u32;
    let mut arm = |pending: &mut Vec<u32>| {
        let b = next_barrier % 6;
        next_barrier += 1;
        pending.push(b);
        b
    };
    for _ in 0..n {
        let d = rng.gen_range(0..14u32);
        let a = rng.gen_range(0..14u32);
        let b = rng.gen_range(0..14u32);
        match rng.gen_range(0..8u32) {
            0 => {
                let bar = arm(&mut pending);
                out += &format!("  {{WB{bar}}} LDG.64 R{d}, [R{a}] ;\n");
            }
            1 => {
                let bar = arm(&mut pending);
                out += &format!("  {{WB{bar}}} LDC R{d}, c[0][0x40] ;\n");
            }
            2 => {
                let bar = arm(&mut pending);
                out += &format!("  {{WB{bar}}} LDS R{d}, [R{a}] ;\n");
            }
            3 => out += &format!("  IMAD R{d}, R{a}, R{b}, R{d} ;\n"),
            4 => {
                let bar = arm(&mut pending);
                out += &format!("  {{WB{bar}}} MUFU.RCP R{d}, R{a} ;\n");
            }
            5 | 7 => {
                if pending.is_empty() {
                    out += &format!("  IADD R{d}, R{a}, R{b} ;\n");
                } else {
                    let take = rng.gen_range(1..=pending.len().min(2));
                    let mask: BTreeSet<u32> = pending.drain(..take).collect();
                    let digits: String = mask.into_iter().map(|x| x.to_string()).collect();
                    out += &format!("  {{W{digits}}} IADD R{d}, R{a}, R{b} ;\n");
                }
            }
            6 => {
                let bar = arm(&mut pending);
                out += &format!("  {{RB{bar}}} STG [R{a}], R{d} ;\n");
            }
            _ => unreachable!(),
        }
    }
    out += "  EXIT ;\n";
    out
}

/// A random profile over every instruction of `program`, with breakdowns
/// that never exceed the latency total.
pub fn random_profile_for(program: &Program, rng: &mut ChaCha8Rng) -> KernelProfile {
    let launch = LaunchStats {
        grid_blocks: 160,
        block_threads: 256,
        shared_bytes: 0,
        registers_per_thread: 32,
    };
    let mut profile = KernelProfile::new("main", launch);
    for function in &program.functions {
        for inst in &function.instructions {
            let record = profile.record_mut(inst.pc);
            record.active = rng.gen_range(0..=6);
            if rng.gen_bool(0.75) {
                record.latency = rng.gen_range(1..=40);
                let mut remaining = if rng.gen_bool(0.85) { record.latency } else { 0 };
                while remaining > 0 && rng.gen_bool(0.8) {
                    let reason = BREAKDOWN_REASONS[rng.gen_range(0..BREAKDOWN_REASONS.len())];
                    let count = rng.gen_range(1..=remaining);
                    record.stalls.add(reason, count);
                    remaining -= count;
                }
            }
        }
    }
    profile
}

/// Small kernels whose hottest producer for each stalled consumer is
/// structurally forced, used to compare attribution against the
/// simulator's recorded ground truth.
pub fn ground_truth_kernels() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "global_chain",
            "FUNC main:\n\
             \x20 MOV R2, 0x100 ;\n\
             \x20 {WB0} LDG.64 R0, [R2] ;\n\
             \x20 {W0} IADD R4, R0, R1 ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "constant_load",
            "FUNC main:\n\
             \x20 {WB1} LDC R0, c[0][0x40] ;\n\
             \x20 {W1} IMAD R4, R0, R0, R5 ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "local_roundtrip",
            "FUNC main:\n\
             \x20 STL [R2], R4 ;\n\
             \x20 {WB1} LDL R0, [R2] ;\n\
             \x20 {W1} IADD R6, R0, R1 ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "shared_tile",
            "FUNC main:\n\
             \x20 {RB2} STS [R2], R4 ;\n\
             \x20 {W2} {WB3} LDS R0, [R2] ;\n\
             \x20 {W3} IADD R6, R0, R5 ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "long_pipe",
            "FUNC main:\n\
             \x20 {WB0} MUFU.RCP R0, R1 ;\n\
             \x20 {W0} FMUL R2, R0, R3 ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "double_fma",
            "FUNC main:\n\
             \x20 {WB4} DFMA R0, R2, R4, R6 ;\n\
             \x20 {W4} DADD R8, R0, R10 ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "fixed_chain",
            "FUNC main:\n\
             \x20 IMAD R0, R1, R2, R3 ;\n\
             \x20 IMAD R4, R0, R0, R5 ;\n\
             \x20 IMAD R6, R4, R4, R7 ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "loop_carried",
            "FUNC main:\n\
             \x20 MOV R6, 0x0 ;\n\
             LABEL top:\n\
             \x20 {WB0} LDG.64 R0, [R2] ;\n\
             \x20 {W0} IADD R4, R4, R0 ;\n\
             \x20 IADD R2, R2, 0x8 ;\n\
             \x20 IADD R6, R6, 0x1 ;\n\
             \x20 ISETP.LT P0, R6, R7 ;\n\
             \x20 @P0 BRA top ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "war_overwrite",
            "FUNC main:\n\
             \x20 MOV R0, 0x1 ;\n\
             \x20 {RB1} STG [R2], R0 ;\n\
             \x20 {W1} MOV R0, 0x2 ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "branch_merge",
            "FUNC main:\n\
             \x20 ISETP.LT P0, R1, R2 ;\n\
             \x20 @P0 BRA other ;\n\
             \x20 {WB0} LDC R0, c[0][0x40] ;\n\
             \x20 BRA join ;\n\
             LABEL other:\n\
             \x20 {WB0} LDG.64 R0, [R4] ;\n\
             \x20 NOP ;\n\
             \x20 NOP ;\n\
             LABEL join:\n\
             \x20 {W0} IADD R6, R0, R7 ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "two_loads_decoy",
            "FUNC main:\n\
             \x20 {WB0} LDG.64 R0, [R2] ;\n\
             \x20 {WB1} LDG.64 R4, [R6] ;\n\
             \x20 {W0} IADD R8, R0, R9 ;\n\
             \x20 EXIT ;\n",
        ),
        (
            "call_helper",
            "FUNC main:\n\
             \x20 CAL helper ;\n\
             \x20 IMAD R4, R0, R0, R4 ;\n\
             \x20 EXIT ;\n\
             FUNC helper:\n\
             \x20 {WB0} LDG.64 R0, [R2] ;\n\
             \x20 {W0} IADD R0, R0, R1 ;\n\
             \x20 RET ;\n",
        ),
    ]
}

pub fn ground_truth_config(seed: u64) -> SimConfig {
    SimConfig {
        sampling_period: 4,
        seed,
        default_trips: 5,
        emit_oracle: true,
        ..SimConfig::default()
    }
}

/// Per stalled pc, the producer the attribution pass blames hardest.
/// Self-attributed cost names the consumer itself; ties break toward the
/// lowest producer pc.
pub fn top_blame(contributions: &[Contribution]) -> BTreeMap<u64, u64> {
    let mut best: BTreeMap<u64, (f64, u64)> = BTreeMap::new();
    let mut sums: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for c in contributions {
        *sums.entry((c.use_pc, c.def_pc)).or_insert(0.0) += c.samples;
    }
    for ((use_pc, def_pc), samples) in sums {
        let entry = best.entry(use_pc).or_insert((f64::NEG_INFINITY, u64::MAX));
        if samples > entry.0 || (samples == entry.0 && def_pc < entry.1) {
            *entry = (samples, def_pc);
        }
    }
    best.into_iter().map(|(use_pc, (_, def))| (use_pc, def)).collect()
}

/// Per stalled pc, the producer the simulator observed most often.
pub fn top_oracle(oracle: &OracleMap) -> BTreeMap<u64, u64> {
    let mut best = BTreeMap::new();
    for (use_pc, defs) in oracle {
        let mut top: Option<(u64, u64)> = None;
        for (def_pc, count) in defs {
            let better = match top {
                None => true,
                Some((_, c)) => *count > c,
            };
            if better {
                top = Some((*def_pc, *count));
            }
        }
        if let Some((def, _)) = top {
            best.insert(*use_pc, def);
        }
    }
    best.into_iter().collect()
}

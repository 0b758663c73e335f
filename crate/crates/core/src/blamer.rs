//! Blame attribution: turns per-pc stall samples into per-producer costs.
//!
//! Sampled stall reasons only say *why* a warp waited, not *which*
//! instruction it waited on. This module reconstructs the producers from
//! the program text alone: a backward slice over the control-flow graph
//! finds candidate definitions for every value and barrier a stalled
//! instruction consumes, implausible candidates are pruned with three
//! static rules, and the surviving candidates split each stall count in
//! proportion to how often they issued and how far away they sit.
//! Nothing here looks at the simulator's ground truth; that is reserved
//! for validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cfg::ProgramCfg;
use crate::isa::{ArchSpec, OpcodeClass, Program, RegisterRef};
use crate::profile::{KernelProfile, StallCounts, StallReason};

mod apportion;
mod prune;
mod slice;

pub use slice::{backward_slice, RegisterDependency};

/// Dependency kinds mirror the stall reasons that name a producer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepKind {
    Memory,
    Execution,
    Synchronization,
}

impl DepKind {
    pub const ALL: [DepKind; 3] = [DepKind::Memory, DepKind::Execution, DepKind::Synchronization];

    pub fn from_reason(r: StallReason) -> Option<DepKind> {
        match r {
            StallReason::MemoryDependency => Some(DepKind::Memory),
            StallReason::ExecutionDependency => Some(DepKind::Execution),
            StallReason::Synchronization => Some(DepKind::Synchronization),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DepKind::Memory => "memory",
            DepKind::Execution => "execution",
            DepKind::Synchronization => "synchronization",
        }
    }
}

/// Which static rule removed an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneRule {
    /// The producer's opcode class cannot cause this stall reason.
    Opcode,
    /// Another instruction on every path already absorbs the wait.
    Dominator,
    /// The shortest path outlives the producer's latency.
    Latency,
}

/// One candidate producer→consumer dependency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepEdge {
    pub def_pc: u64,
    pub use_pc: u64,
    pub kind: DepKind,
    /// Registers (or barrier registers) the definition delivers to the use.
    pub registers: BTreeSet<RegisterRef>,
    /// For write-after-read hazards: registers the definition still reads
    /// that the use overwrites. Disjoint from `registers`.
    pub war_registers: BTreeSet<RegisterRef>,
    /// Shortest / longest instruction-level path from def to use
    /// (def exclusive, use inclusive).
    pub min_len: u64,
    pub max_len: u64,
    pub pruned_by: Option<PruneRule>,
}

impl DepEdge {
    pub fn is_live(&self) -> bool {
        self.pruned_by.is_none()
    }
}

/// Per-pc facts the attribution needs.
#[derive(Debug, Clone)]
pub struct DepNode {
    pub pc: u64,
    pub opcode: String,
    pub class: OpcodeClass,
    pub variable_latency: bool,
    /// Active samples observed at this pc.
    pub issued: u64,
    /// Latency samples observed at this pc.
    pub latency: u64,
    pub stalls: StallCounts,
}

#[derive(Debug, Clone, Default)]
pub struct DependencyGraph {
    pub nodes: BTreeMap<u64, DepNode>,
    pub edges: Vec<DepEdge>,
}

impl DependencyGraph {
    /// Indices of this use's in-edges, in insertion order.
    pub fn in_edges(&self, use_pc: u64) -> impl Iterator<Item = &DepEdge> {
        self.edges.iter().filter(move |e| e.use_pc == use_pc)
    }

    /// Fraction of nodes whose stalls have at most one surviving producer
    /// per dependency kind; the pruning rules exist to raise this.
    pub fn single_dependency_coverage(&self) -> f64 {
        if self.nodes.is_empty() {
            return 1.0;
        }
        let mut covered = 0usize;
        for pc in self.nodes.keys() {
            let unambiguous = DepKind::ALL.iter().all(|k| {
                self.in_edges(*pc).filter(|e| e.kind == *k && e.is_live()).count() <= 1
            });
            if unambiguous {
                covered += 1;
            }
        }
        covered as f64 / self.nodes.len() as f64
    }

    /// Graphviz rendering; pruned edges are dashed and labeled with the
    /// rule that removed them.
    pub fn to_dot(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("digraph deps {\n  node [shape=box];\n");
        for (pc, n) in &self.nodes {
            writeln!(
                out,
                "  \"{pc:#x}\" [label=\"{pc:#x}\\n{} issued={} latency={}\"];",
                n.opcode, n.issued, n.latency
            )
            .unwrap();
        }
        for e in &self.edges {
            let style = match e.pruned_by {
                None => format!("label=\"{} {}..{}\"", e.kind.name(), e.min_len, e.max_len),
                Some(rule) => format!(
                    "style=dashed label=\"{} pruned:{}\"",
                    e.kind.name(),
                    match rule {
                        PruneRule::Opcode => "opcode",
                        PruneRule::Dominator => "dominator",
                        PruneRule::Latency => "latency",
                    }
                ),
            };
            writeln!(out, "  \"{:#x}\" -> \"{:#x}\" [{}];", e.def_pc, e.use_pc, style).unwrap();
        }
        out.push_str("}\n");
        out
    }
}

/// Final classification of one attributed cost, refined by the producer's
/// opcode class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetailedReason {
    GlobalMemoryDep,
    LocalMemoryDep,
    ConstantMemoryDep,
    SharedMemoryDep,
    WriteAfterRead,
    ArithmeticDep,
    SyncDep,
    /// Stall stayed at the sampled pc: either its reason names no
    /// producer, or no candidate producer survived pruning.
    SelfAttributed(StallReason),
}

impl DetailedReason {
    pub fn classify(kind: DepKind, def_class: OpcodeClass, war: bool) -> DetailedReason {
        match kind {
            DepKind::Memory => match def_class {
                OpcodeClass::LocalMemory => DetailedReason::LocalMemoryDep,
                OpcodeClass::ConstantMemory => DetailedReason::ConstantMemoryDep,
                // Texture traffic shares the global-memory path.
                _ => DetailedReason::GlobalMemoryDep,
            },
            DepKind::Execution => {
                if war {
                    DetailedReason::WriteAfterRead
                } else if def_class == OpcodeClass::SharedMemory {
                    DetailedReason::SharedMemoryDep
                } else {
                    DetailedReason::ArithmeticDep
                }
            }
            DepKind::Synchronization => DetailedReason::SyncDep,
        }
    }
}

impl fmt::Display for DetailedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetailedReason::GlobalMemoryDep => f.write_str("global_memory_dependency"),
            DetailedReason::LocalMemoryDep => f.write_str("local_memory_dependency"),
            DetailedReason::ConstantMemoryDep => f.write_str("constant_memory_dependency"),
            DetailedReason::SharedMemoryDep => f.write_str("shared_memory_dependency"),
            DetailedReason::WriteAfterRead => f.write_str("write_after_read"),
            DetailedReason::ArithmeticDep => f.write_str("arithmetic_dependency"),
            DetailedReason::SyncDep => f.write_str("synchronization_dependency"),
            DetailedReason::SelfAttributed(r) => write!(f, "self:{}", r.name()),
        }
    }
}

/// One slice of blame: `samples` latency samples at `use_pc` charged to
/// `def_pc` (equal to `use_pc` when self-attributed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub def_pc: u64,
    pub use_pc: u64,
    pub reason: DetailedReason,
    pub samples: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneCounts {
    pub opcode: usize,
    pub dominator: usize,
    pub latency: usize,
}

impl PruneCounts {
    pub fn total(&self) -> usize {
        self.opcode + self.dominator + self.latency
    }
}

/// Everything the advisor needs: the pruned graph plus apportioned costs.
#[derive(Debug)]
pub struct AttributedProfile {
    pub graph: DependencyGraph,
    pub contributions: Vec<Contribution>,
    pub coverage_before: f64,
    pub coverage_after: f64,
    pub pruned: PruneCounts,
}

impl AttributedProfile {
    /// Total apportioned samples; conserved, this equals the profile's
    /// latency total.
    pub fn total_samples(&self) -> f64 {
        self.contributions.iter().map(|c| c.samples).sum()
    }
}

/// Builds the unpruned dependency graph for one kernel profile.
pub fn build_dependency_graph(
    program: &Program,
    cfgs: &ProgramCfg,
    profile: &KernelProfile,
    arch: &ArchSpec,
) -> DependencyGraph {
    let mut graph = DependencyGraph::default();

    let add_node = |graph: &mut DependencyGraph, pc: u64| {
        if graph.nodes.contains_key(&pc) {
            return;
        }
        let Some(inst) = program.instr_at(pc) else { return };
        let rec = profile.samples.get(&pc);
        graph.nodes.insert(
            pc,
            DepNode {
                pc,
                opcode: inst.opcode.clone(),
                class: inst.opcode_class,
                variable_latency: inst.is_variable_latency(arch),
                issued: rec.map_or(0, |r| r.active),
                latency: rec.map_or(0, |r| r.latency),
                stalls: rec.map(|r| r.stalls).unwrap_or_default(),
            },
        );
    };

    for (use_pc, rec) in &profile.samples {
        add_node(&mut graph, *use_pc);
        // Which dependency kinds does this pc actually need producers for?
        let kinds: Vec<DepKind> = StallReason::ALL
            .into_iter()
            .filter(|r| rec.stalls.get(*r) > 0)
            .filter_map(DepKind::from_reason)
            .collect();
        if kinds.is_empty() {
            continue;
        }
        let Some((fi, func)) = program.function_at(*use_pc) else { continue };
        let cfg = cfgs.for_function(fi);

        // Merge per-register findings into one relation per definition.
        let mut relations: BTreeMap<u64, (BTreeSet<RegisterRef>, bool)> = BTreeMap::new();
        for dep in backward_slice(func, cfg, *use_pc) {
            let entry = relations.entry(dep.def_pc).or_default();
            entry.0.insert(dep.register);
            entry.1 |= dep.via_read_barrier;
        }

        for (def_pc, (registers, via_read_barrier)) in relations {
            add_node(&mut graph, def_pc);
            let d = crate::cfg::path_distance(func, cfg, def_pc, *use_pc);
            let (min_len, max_len) =
                if d.reachable { (d.min_len.max(1), d.max_len.max(1)) } else { (1, 1) };
            let war_registers = if via_read_barrier {
                war_registers(program, def_pc, *use_pc)
            } else {
                BTreeSet::new()
            };
            for kind in &kinds {
                graph.edges.push(DepEdge {
                    def_pc,
                    use_pc: *use_pc,
                    kind: *kind,
                    registers: registers.clone(),
                    war_registers: war_registers.clone(),
                    min_len,
                    max_len,
                    pruned_by: None,
                });
            }
        }
    }
    graph
}

/// Registers a use overwrites while the definition still reads them.
fn war_registers(program: &Program, def_pc: u64, use_pc: u64) -> BTreeSet<RegisterRef> {
    let (Some(def), Some(use_i)) = (program.instr_at(def_pc), program.instr_at(use_pc)) else {
        return BTreeSet::new();
    };
    let def_sources: BTreeSet<RegisterRef> = def.sources.iter().copied().collect();
    let use_dests: BTreeSet<RegisterRef> = use_i.dests.iter().copied().collect();
    def_sources.intersection(&use_dests).copied().collect()
}

pub use prune::{prune_edges, prune_edges_subset};

pub use apportion::apportion;

/// Full attribution pipeline for one kernel: build, prune, apportion.
pub fn attribute_profile(
    program: &Program,
    cfgs: &ProgramCfg,
    profile: &KernelProfile,
    arch: &ArchSpec,
) -> AttributedProfile {
    let mut graph = build_dependency_graph(program, cfgs, profile, arch);
    let coverage_before = graph.single_dependency_coverage();
    let pruned = prune_edges(&mut graph, program, cfgs, arch);
    let coverage_after = graph.single_dependency_coverage();
    let contributions = apportion(&graph);
    AttributedProfile { graph, contributions, coverage_before, coverage_after, pruned }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::build_cfg;
    use crate::isa::parse_program;
    use crate::profile::LaunchStats;

    fn launch() -> LaunchStats {
        LaunchStats { grid_blocks: 80, block_threads: 256, shared_bytes: 0, registers_per_thread: 32 }
    }

    /// A load guarded by a barrier, consumed across a branch: the stall at
    /// the consumer must blame the load, not the branch.
    #[test]
    fn barrier_wait_blames_the_load_across_a_branch() {
        let arch = ArchSpec::volta_like();
        let p = parse_program(
            "FUNC main:
  {WB0} LDG.32 R0, [R2]
  ISETP.LT P0, R4, R5
  @P0 BRA skip
  IADD R6, R6, 1
LABEL skip:
  {W0} IADD R7, R0, R1
  EXIT
",
            &arch,
        )
        .unwrap();
        let cfgs = build_cfg(&p);
        let mut prof = KernelProfile::new("main", launch());
        prof.record_mut(0x0).active = 5;
        let r = prof.record_mut(0x40);
        r.latency = 10;
        r.stalls.add(StallReason::MemoryDependency, 10);

        let attributed = attribute_profile(&p, &cfgs, &prof, &arch);
        // All ten samples land on the load.
        let c: Vec<_> = attributed
            .contributions
            .iter()
            .filter(|c| c.use_pc == 0x40 && c.def_pc == 0x0)
            .collect();
        assert_eq!(c.len(), 1);
        assert!((c[0].samples - 10.0).abs() < 1e-12);
        assert_eq!(c[0].reason, DetailedReason::GlobalMemoryDep);
        assert!((attributed.total_samples() - 10.0).abs() < 1e-9);
    }

    /// Both sides of a predicated pair define the same register; the
    /// consumer's stall splits across them by issue count and distance.
    #[test]
    fn predicated_definitions_both_survive() {
        let arch = ArchSpec::volta_like();
        let p = parse_program(
            "FUNC main:
  {WB0} @!P0 LDC.32 R0, c[0][0x10]
  {WB1} @P0 LDG.32 R0, [R2]
  {W01} IADD R3, R0, R1
  EXIT
",
            &arch,
        )
        .unwrap();
        let cfgs = build_cfg(&p);
        let mut prof = KernelProfile::new("main", launch());
        prof.record_mut(0x0).active = 4;
        prof.record_mut(0x10).active = 4;
        let r = prof.record_mut(0x20);
        r.latency = 8;
        r.stalls.add(StallReason::MemoryDependency, 8);

        let attributed = attribute_profile(&p, &cfgs, &prof, &arch);
        let live: Vec<_> = attributed.graph.edges.iter().filter(|e| e.is_live()).collect();
        assert_eq!(live.len(), 2, "both predicated defs remain candidates");
        let ldc: f64 = attributed
            .contributions
            .iter()
            .filter(|c| c.def_pc == 0x0)
            .map(|c| c.samples)
            .sum();
        let ldg: f64 = attributed
            .contributions
            .iter()
            .filter(|c| c.def_pc == 0x10)
            .map(|c| c.samples)
            .sum();
        // Equal issue counts; the nearer def (distance 1) outweighs the
        // farther one (distance 2) two to one.
        assert!((ldc - 8.0 / 3.0).abs() < 1e-9, "ldc got {ldc}");
        assert!((ldg - 16.0 / 3.0).abs() < 1e-9, "ldg got {ldg}");
        assert_eq!(
            attributed
                .contributions
                .iter()
                .map(|c| c.reason)
                .collect::<BTreeSet<_>>(),
            [DetailedReason::GlobalMemoryDep, DetailedReason::ConstantMemoryDep]
                .into_iter()
                .collect()
        );
    }

    #[test]
    fn unmatched_reason_self_attributes() {
        let arch = ArchSpec::volta_like();
        let p = parse_program("FUNC main:\n  IADD R1, R1, R2\n  EXIT\n", &arch).unwrap();
        let cfgs = build_cfg(&p);
        let mut prof = KernelProfile::new("main", launch());
        let r = prof.record_mut(0x0);
        r.latency = 6;
        r.stalls.add(StallReason::MemoryThrottle, 4);
        r.stalls.add(StallReason::MemoryDependency, 2); // no producer exists

        let attributed = attribute_profile(&p, &cfgs, &prof, &arch);
        let by_reason: BTreeMap<_, f64> = attributed
            .contributions
            .iter()
            .map(|c| (c.reason, c.samples))
            .collect();
        assert!(
            (by_reason[&DetailedReason::SelfAttributed(StallReason::MemoryThrottle)] - 4.0)
                .abs()
                < 1e-12
        );
        assert!(
            (by_reason[&DetailedReason::SelfAttributed(StallReason::MemoryDependency)] - 2.0)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn coverage_is_one_on_empty_graph() {
        let g = DependencyGraph::default();
        assert_eq!(g.single_dependency_coverage(), 1.0);
    }
}

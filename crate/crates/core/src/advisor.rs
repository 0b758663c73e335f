//! Matches attributed stall samples to concrete optimizations and
//! estimates each one's payoff.
//!
//! Every optimizer owns a matching rule over [`Contribution`]s (or over
//! the launch shape, for the two occupancy optimizers). The matched
//! sample mass feeds the closed forms in [`crate::estimate`]; advice is
//! emitted in the fixed order of [`OptimizerId::ALL`], which also breaks
//! ranking ties in reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blamer::{AttributedProfile, Contribution, DepKind, DependencyGraph, DetailedReason};
use crate::cfg::{find_loops, FunctionKind, LoopNest, ProgramCfg, ProgramStructure};
use crate::estimate::{naive_bound, parallelism_speedup, Speedup, SpeedupRecord};
use crate::isa::{ArchSpec, OpcodeClass, Program};
use crate::profile::{KernelProfile, LaunchStats, StallReason};

/// All optimizers, in canonical (tie-breaking) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerId {
    RegisterReuse,
    StrengthReduction,
    FunctionSplit,
    FastMath,
    WarpBalance,
    MemoryTransactionReduction,
    LoopUnrolling,
    CodeReordering,
    FunctionInlining,
    BlockIncrease,
    ThreadIncrease,
}

impl OptimizerId {
    pub const ALL: &'static [OptimizerId] = &[
        OptimizerId::RegisterReuse,
        OptimizerId::StrengthReduction,
        OptimizerId::FunctionSplit,
        OptimizerId::FastMath,
        OptimizerId::WarpBalance,
        OptimizerId::MemoryTransactionReduction,
        OptimizerId::LoopUnrolling,
        OptimizerId::CodeReordering,
        OptimizerId::FunctionInlining,
        OptimizerId::BlockIncrease,
        OptimizerId::ThreadIncrease,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerId::RegisterReuse => "register_reuse",
            OptimizerId::StrengthReduction => "strength_reduction",
            OptimizerId::FunctionSplit => "function_split",
            OptimizerId::FastMath => "fast_math",
            OptimizerId::WarpBalance => "warp_balance",
            OptimizerId::MemoryTransactionReduction => "memory_transaction_reduction",
            OptimizerId::LoopUnrolling => "loop_unrolling",
            OptimizerId::CodeReordering => "code_reordering",
            OptimizerId::FunctionInlining => "function_inlining",
            OptimizerId::BlockIncrease => "block_increase",
            OptimizerId::ThreadIncrease => "thread_increase",
        }
    }

    pub fn from_name(s: &str) -> Option<OptimizerId> {
        OptimizerId::ALL.iter().copied().find(|o| o.name() == s)
    }

    /// Position in the canonical order; lower wins ties.
    pub fn rank(self) -> usize {
        OptimizerId::ALL.iter().position(|o| *o == self).unwrap()
    }

    /// One-line imperative suggestion attached to the advice.
    pub fn suggestion(self) -> &'static str {
        match self {
            OptimizerId::RegisterReuse => {
                "Local-memory traffic behind these stalls points at register \
                 spills; shorten live ranges or recompute values to stay in \
                 registers."
            }
            OptimizerId::StrengthReduction => {
                "Replace long-latency arithmetic with cheaper equivalents \
                 (shifts, fused forms, precomputed reciprocals)."
            }
            OptimizerId::FunctionSplit => {
                "Instruction-fetch stalls suggest the hot code overflows the \
                 instruction cache; split rarely-taken paths out of the hot \
                 function."
            }
            OptimizerId::FastMath => {
                "Math-library routines dominate these stalls; switch to the \
                 hardware fast-math intrinsics if accuracy allows."
            }
            OptimizerId::WarpBalance => {
                "Warps idle at barriers; balance work across warps or reduce \
                 the synchronization scope."
            }
            OptimizerId::MemoryTransactionReduction => {
                "Global accesses issue more transactions than needed; \
                 coalesce addresses or shrink the access granularity."
            }
            OptimizerId::LoopUnrolling => {
                "Unroll the loop so independent iterations overlap the \
                 dependency latency."
            }
            OptimizerId::CodeReordering => {
                "Schedule independent instructions between producer and \
                 consumer to hide the dependency latency."
            }
            OptimizerId::FunctionInlining => {
                "Inline the called function to remove call overhead and widen \
                 the scheduling window."
            }
            OptimizerId::BlockIncrease => {
                "The grid leaves streaming multiprocessors idle; launch more \
                 blocks."
            }
            OptimizerId::ThreadIncrease => {
                "Block slots cap occupancy before warp slots do; use larger \
                 blocks to raise the resident warp count."
            }
        }
    }
}

impl std::fmt::Display for OptimizerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read optimizer config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("optimizer config line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

/// Tunables for the advisor; the file format is one directive per line:
/// `optimizer <name> on|off`, `fraction <f>` with `f` in (0, 1], and
/// `thread_increase_assume_stall_elim <bool>`. `#` starts a comment.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub enabled: BTreeSet<OptimizerId>,
    /// Fraction of the kernel an occupancy change accelerates.
    pub fraction: f64,
    /// When set, the thread-increase estimate also credits eliminated
    /// stalls, capped so the result never exceeds the pure warp gain.
    pub thread_increase_assume_stall_elim: bool,
}

impl Default for OptimizerConfig {
    fn default() -> OptimizerConfig {
        OptimizerConfig {
            enabled: OptimizerId::ALL.iter().copied().collect(),
            fraction: 1.0,
            thread_increase_assume_stall_elim: false,
        }
    }
}

impl OptimizerConfig {
    pub fn load(path: &Path) -> Result<OptimizerConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        OptimizerConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<OptimizerConfig, ConfigError> {
        let mut config = OptimizerConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Malformed { line: line_no, msg };
            let mut parts = line.split_whitespace();
            match parts.next().unwrap() {
                "optimizer" => {
                    let (name, state) = match (parts.next(), parts.next()) {
                        (Some(n), Some(s)) => (n, s),
                        _ => return Err(err("expected `optimizer <name> on|off`".into())),
                    };
                    let id = OptimizerId::from_name(name)
                        .ok_or_else(|| err(format!("unknown optimizer `{name}`")))?;
                    match state {
                        "on" => config.enabled.insert(id),
                        "off" => config.enabled.remove(&id),
                        other => return Err(err(format!("expected on|off, got `{other}`"))),
                    };
                }
                "fraction" => {
                    let v: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err("expected `fraction <float>`".into()))?;
                    if !(v > 0.0 && v <= 1.0) {
                        return Err(err(format!("fraction {v} outside (0, 1]")));
                    }
                    config.fraction = v;
                }
                "thread_increase_assume_stall_elim" => {
                    let v: bool = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err("expected a boolean".into()))?;
                    config.thread_increase_assume_stall_elim = v;
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
            if parts.next().is_some() {
                return Err(err("trailing tokens".into()));
            }
        }
        Ok(config)
    }
}

/// The occupancy resource that bounds resident blocks per SM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupancyLimiter {
    BlockSlots,
    WarpSlots,
    Registers,
    SharedMemory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupancy {
    pub warps_per_block: u32,
    pub blocks_per_sm: u32,
    pub warps_per_sm: u32,
    pub limiter: OccupancyLimiter,
}

/// Static occupancy: resident blocks per SM are bounded by block slots,
/// warp slots, the register file, and shared memory; the limiter is the
/// first binding resource in that order.
pub fn occupancy(arch: &ArchSpec, launch: &LaunchStats) -> Occupancy {
    let threads = launch.block_threads.max(1);
    let wpb = threads.div_ceil(arch.warp_size.max(1)).max(1);
    let by_slots = arch.max_blocks_per_sm;
    let by_warps = arch.max_warps_per_sm / wpb;
    let by_regs = if launch.registers_per_thread > 0 {
        arch.registers_per_sm / (launch.registers_per_thread * threads)
    } else {
        u32::MAX
    };
    let by_shared = if launch.shared_bytes > 0 {
        arch.shared_mem_per_sm / launch.shared_bytes
    } else {
        u32::MAX
    };
    let candidates = [
        (by_slots, OccupancyLimiter::BlockSlots),
        (by_warps, OccupancyLimiter::WarpSlots),
        (by_regs, OccupancyLimiter::Registers),
        (by_shared, OccupancyLimiter::SharedMemory),
    ];
    let blocks = candidates.iter().map(|(b, _)| *b).min().unwrap();
    let limiter = candidates.iter().find(|(b, _)| *b == blocks).unwrap().1;
    Occupancy {
        warps_per_block: wpb,
        blocks_per_sm: blocks,
        warps_per_sm: blocks.saturating_mul(wpb),
        limiter,
    }
}

/// Per-warp issue probability recovered from the observed issue rate
/// `U = 1 - (1 - r)^W`.
pub fn per_warp_issue_rate(utilization: f64, warps: f64) -> f64 {
    let u = utilization.clamp(0.0, 1.0 - 1e-9);
    1.0 - (1.0 - u).powf(1.0 / warps.max(1.0))
}

/// One matched producer→consumer pair (or self-attributed site) backing a
/// piece of advice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub def_pc: u64,
    pub use_pc: u64,
    pub reason: DetailedReason,
    pub samples: f64,
    /// Longest acyclic def→use path, in instructions (0 for self-attributed
    /// sites).
    pub distance: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub optimizer: OptimizerId,
    pub matched_samples: f64,
    pub estimate: SpeedupRecord,
    /// Situation-specific detail (scope, launch numbers).
    pub detail: String,
    pub hotspots: Vec<Hotspot>,
}

fn reason_kind(reason: DetailedReason) -> Option<DepKind> {
    match reason {
        DetailedReason::GlobalMemoryDep
        | DetailedReason::LocalMemoryDep
        | DetailedReason::ConstantMemoryDep => Some(DepKind::Memory),
        DetailedReason::SharedMemoryDep
        | DetailedReason::WriteAfterRead
        | DetailedReason::ArithmeticDep => Some(DepKind::Execution),
        DetailedReason::SyncDep => Some(DepKind::Synchronization),
        DetailedReason::SelfAttributed(_) => None,
    }
}

/// Longest live def→use path length recorded in the graph (0 when the
/// contribution is self-attributed).
fn edge_distance(graph: &DependencyGraph, c: &Contribution) -> u64 {
    let Some(kind) = reason_kind(c.reason) else {
        return 0;
    };
    graph
        .in_edges(c.use_pc)
        .filter(|e| e.def_pc == c.def_pc && e.kind == kind && e.is_live())
        .map(|e| e.max_len)
        .max()
        .unwrap_or(1)
}

struct Ctx<'a> {
    program: &'a Program,
    cfgs: &'a ProgramCfg,
    structure: &'a ProgramStructure,
    arch: &'a ArchSpec,
    loops: Vec<LoopNest>,
    graph: &'a DependencyGraph,
}

impl<'a> Ctx<'a> {
    /// (function, loop index) of the innermost reducible loop holding `pc`.
    fn innermost_loop(&self, pc: u64) -> Option<(usize, usize)> {
        let (f, block, _) = self.cfgs.locate(self.program, pc)?;
        self.loops[f].innermost_containing(block).map(|l| (f, l))
    }

    fn in_math_scope(&self, pc: u64) -> bool {
        if let Some((_, func)) = self.program.function_at(pc) {
            if self.arch.math_function_names.iter().any(|m| *m == func.name) {
                return true;
            }
        }
        self.structure
            .frames_at(pc)
            .iter()
            .any(|fr| self.arch.math_function_names.iter().any(|m| *m == fr.callee))
    }

    fn in_device_function(&self, pc: u64) -> bool {
        match self.program.function_at(pc) {
            Some((fi, _)) => self.structure.kind_of(fi) == FunctionKind::Device,
            None => false,
        }
    }

    fn node_class(&self, pc: u64) -> Option<OpcodeClass> {
        self.graph.nodes.get(&pc).map(|n| n.class)
    }

    fn matches(&self, id: OptimizerId, c: &Contribution) -> bool {
        use DetailedReason as R;
        match id {
            OptimizerId::RegisterReuse => c.reason == R::LocalMemoryDep,
            OptimizerId::StrengthReduction => {
                c.reason == R::ArithmeticDep
                    && self.node_class(c.def_pc).is_some_and(|class| {
                        class == OpcodeClass::Convert
                            || self.arch.latency(class).cycles >= self.arch.long_latency_threshold
                    })
            }
            OptimizerId::FunctionSplit => {
                c.reason == R::SelfAttributed(StallReason::InstructionFetch)
            }
            OptimizerId::FastMath => self.in_math_scope(c.def_pc),
            OptimizerId::WarpBalance => {
                c.reason == R::SyncDep
                    || c.reason == R::SelfAttributed(StallReason::Synchronization)
            }
            OptimizerId::MemoryTransactionReduction => {
                c.reason == R::SelfAttributed(StallReason::MemoryThrottle)
                    && self.node_class(c.use_pc) == Some(OpcodeClass::GlobalMemory)
            }
            OptimizerId::LoopUnrolling => {
                matches!(
                    c.reason,
                    R::GlobalMemoryDep
                        | R::LocalMemoryDep
                        | R::ConstantMemoryDep
                        | R::SharedMemoryDep
                        | R::ArithmeticDep
                ) && {
                    let d = self.innermost_loop(c.def_pc);
                    d.is_some() && d == self.innermost_loop(c.use_pc)
                }
            }
            OptimizerId::CodeReordering => matches!(
                c.reason,
                R::GlobalMemoryDep
                    | R::LocalMemoryDep
                    | R::ConstantMemoryDep
                    | R::SharedMemoryDep
                    | R::ArithmeticDep
                    | R::WriteAfterRead
            ),
            OptimizerId::FunctionInlining => {
                self.in_device_function(c.def_pc) || self.in_device_function(c.use_pc)
            }
            // Occupancy optimizers match the launch, not contributions.
            OptimizerId::BlockIncrease | OptimizerId::ThreadIncrease => false,
        }
    }
}

fn hotspots_of(graph: &DependencyGraph, matched: &[&Contribution]) -> Vec<Hotspot> {
    let mut spots: Vec<Hotspot> = matched
        .iter()
        .map(|c| Hotspot {
            def_pc: c.def_pc,
            use_pc: c.use_pc,
            reason: c.reason,
            samples: c.samples,
            distance: edge_distance(graph, c),
        })
        .collect();
    spots.sort_by(|a, b| {
        b.samples
            .partial_cmp(&a.samples)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.def_pc.cmp(&b.def_pc))
            .then(a.use_pc.cmp(&b.use_pc))
    });
    spots
}

/// Sum of active samples over every instruction of the loop's member
/// blocks (inner loops included).
fn loop_active_sum(
    ctx: &Ctx<'_>,
    profile: &KernelProfile,
    func_index: usize,
    loop_index: usize,
) -> f64 {
    let func = &ctx.program.functions[func_index];
    let cfg = ctx.cfgs.for_function(func_index);
    let info = &ctx.loops[func_index].loops[loop_index];
    info.members
        .iter()
        .flat_map(|&b| func.instructions[cfg.blocks[b].start..cfg.blocks[b].end].iter())
        .map(|inst| profile.samples.get(&inst.pc).map_or(0.0, |r| r.active as f64))
        .sum()
}

fn loop_header_pc(ctx: &Ctx<'_>, func_index: usize, loop_index: usize) -> u64 {
    let func = &ctx.program.functions[func_index];
    let cfg = ctx.cfgs.for_function(func_index);
    let header = ctx.loops[func_index].loops[loop_index].header;
    func.instructions[cfg.blocks[header].start].pc
}

/// Runs every enabled optimizer and returns its advice in canonical order.
/// Optimizers with no matched samples (or an inapplicable launch) emit
/// nothing.
pub fn advise(
    program: &Program,
    cfgs: &ProgramCfg,
    structure: &ProgramStructure,
    arch: &ArchSpec,
    profile: &KernelProfile,
    attributed: &AttributedProfile,
    config: &OptimizerConfig,
) -> Vec<Advice> {
    let ctx = Ctx {
        program,
        cfgs,
        structure,
        arch,
        loops: cfgs.cfgs.iter().map(find_loops).collect(),
        graph: &attributed.graph,
    };
    let summary = profile.summary();
    let total = summary.total as f64;
    let active = summary.active as f64;

    let mut out = Vec::new();
    for &id in OptimizerId::ALL {
        if !config.enabled.contains(&id) {
            continue;
        }
        let advice = match id {
            OptimizerId::BlockIncrease => {
                block_increase(arch, &profile.launch, &summary, config)
            }
            OptimizerId::ThreadIncrease => {
                thread_increase(arch, &profile.launch, &summary, config)
            }
            OptimizerId::LoopUnrolling => {
                loop_unrolling(&ctx, profile, total, &attributed.contributions)
            }
            _ => {
                let matched: Vec<&Contribution> = attributed
                    .contributions
                    .iter()
                    .filter(|c| ctx.matches(id, c))
                    .collect();
                let samples: f64 = matched.iter().map(|c| c.samples).sum();
                if samples <= 0.0 {
                    None
                } else {
                    Some(Advice {
                        optimizer: id,
                        matched_samples: samples,
                        estimate: SpeedupRecord::from_stalls(total, active, samples),
                        detail: String::new(),
                        hotspots: hotspots_of(ctx.graph, &matched),
                    })
                }
            }
        };
        out.extend(advice);
    }
    out
}

/// Groups the matched contributions by their shared innermost loop and
/// keeps the loop with the best scoped estimate.
fn loop_unrolling(
    ctx: &Ctx<'_>,
    profile: &KernelProfile,
    total: f64,
    contributions: &[Contribution],
) -> Option<Advice> {
    let mut by_loop: BTreeMap<(usize, usize), Vec<&Contribution>> = BTreeMap::new();
    for c in contributions {
        if ctx.matches(OptimizerId::LoopUnrolling, c) {
            // matches() guarantees the loop exists and is shared.
            let key = ctx.innermost_loop(c.use_pc).unwrap();
            by_loop.entry(key).or_default().push(c);
        }
    }
    let mut best: Option<(Advice, f64)> = None;
    for ((f, l), matched) in &by_loop {
        let samples: f64 = matched.iter().map(|c| c.samples).sum();
        if samples <= 0.0 {
            continue;
        }
        let scope_active = loop_active_sum(ctx, profile, *f, *l);
        let estimate = SpeedupRecord::from_scope(total, scope_active, samples);
        let rank = estimate.speedup.rank_value();
        let advice = Advice {
            optimizer: OptimizerId::LoopUnrolling,
            matched_samples: samples,
            estimate,
            detail: format!(
                "loop at {}",
                ctx.structure.describe_pc(ctx.program, loop_header_pc(ctx, *f, *l))
            ),
            hotspots: hotspots_of(ctx.graph, matched),
        };
        if best.as_ref().is_none_or(|(_, r)| rank > *r) {
            best = Some((advice, rank));
        }
    }
    best.map(|(a, _)| a)
}

fn block_increase(
    arch: &ArchSpec,
    launch: &LaunchStats,
    summary: &crate::profile::ProfileSummary,
    config: &OptimizerConfig,
) -> Option<Advice> {
    let grid = launch.grid_blocks;
    if grid == 0 || grid >= arch.sm_count as u64 || summary.latency == 0 {
        return None;
    }
    let occ = occupancy(arch, launch);
    // With fewer blocks than SMs, each busy SM holds one block; the
    // machine-average resident warps rise once every SM gets a block.
    let w_new = occ.warps_per_block as f64;
    let w = w_new * grid as f64 / arch.sm_count as f64;
    let rate = per_warp_issue_rate(summary.issue_rate, w);
    Some(Advice {
        optimizer: OptimizerId::BlockIncrease,
        matched_samples: summary.latency as f64,
        estimate: SpeedupRecord::from_parallelism(w_new, w, rate, config.fraction),
        detail: format!(
            "grid of {grid} blocks leaves {} of {} SMs idle; launch at least {} blocks",
            arch.sm_count as u64 - grid,
            arch.sm_count,
            arch.sm_count
        ),
        hotspots: Vec::new(),
    })
}

fn thread_increase(
    arch: &ArchSpec,
    launch: &LaunchStats,
    summary: &crate::profile::ProfileSummary,
    config: &OptimizerConfig,
) -> Option<Advice> {
    let occ = occupancy(arch, launch);
    if occ.limiter != OccupancyLimiter::BlockSlots
        || occ.warps_per_sm >= arch.max_warps_per_sm
        || summary.latency == 0
    {
        return None;
    }
    // Smallest larger block size that actually raises resident warps.
    let step = arch.warp_size.max(1);
    let mut candidate = None;
    let mut threads = launch.block_threads.max(1) + step;
    while threads <= arch.max_threads_per_block {
        let trial = occupancy(
            arch,
            &LaunchStats {
                block_threads: threads,
                ..*launch
            },
        );
        if trial.warps_per_sm > occ.warps_per_sm {
            candidate = Some((threads, trial));
            break;
        }
        threads += step;
    }
    let (new_threads, new_occ) = candidate?;

    let w = occ.warps_per_sm as f64;
    let w_new = new_occ.warps_per_sm as f64;
    let rate = per_warp_issue_rate(summary.issue_rate, w);
    let mut estimate = SpeedupRecord::from_parallelism(w_new, w, rate, config.fraction);
    if config.thread_increase_assume_stall_elim {
        // Credit eliminated stalls on top, but never beyond the pure warp
        // gain `C_W × f` (the issue-cost ratio is what the stalls dilute).
        let base = parallelism_speedup(w_new, w, rate, config.fraction);
        let cost_ratio = crate::estimate::issue_cost_ratio(rate, w, w_new);
        let stall_bonus = match naive_bound(summary.total as f64, summary.latency as f64) {
            Speedup::Finite(v) => v.min(1.0 / cost_ratio),
            Speedup::Unbounded => 1.0 / cost_ratio,
        };
        estimate.speedup = Speedup::Finite(base * stall_bonus).floored();
        estimate.inputs.insert("stall_bonus".into(), stall_bonus);
    }
    Some(Advice {
        optimizer: OptimizerId::ThreadIncrease,
        matched_samples: summary.latency as f64,
        estimate,
        detail: format!(
            "block slots bind at {} warps/SM; {} threads/block reaches {} warps/SM",
            occ.warps_per_sm, new_threads, new_occ.warps_per_sm
        ),
        hotspots: Vec::new(),
    })
}

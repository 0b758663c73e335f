//! Deterministic warp-scheduler simulator that emits sampled profiles.
//!
//! The model is deliberately small: one streaming multiprocessor, the
//! architecture's scheduler count, a fixed number of warps per scheduler,
//! and every warp running the entry function from its first instruction.
//! Issue spacing comes from each instruction's `stall_cycles`; long-latency
//! results are guarded by the barrier registers the program already names.
//! Given the same program, architecture, and config, the emitted profile is
//! byte-identical across runs.
//!
//! Config file format, one `key value` pair per line:
//!
//! ```text
//! sampling_period 16
//! seed 7
//! warps_per_scheduler 8
//! max_cycles 2000000
//! default_trips 4
//! trips pc=0x40 count=16        # loop-header pc -> iterations
//! entry main
//! launch grid_blocks=160 block_threads=256 shared_bytes=0 registers_per_thread=32
//! emit_oracle true
//! ```
//!
//! With `emit_oracle` the simulator also records, for every latency sample,
//! which producer pc truly caused the stall — ground truth for validating
//! the profile-only attribution pass.

use std::collections::BTreeMap;
use std::path::Path;

use crate::isa::{
    reads_writes, ArchSpec, Instruction, OpcodeClass, Program, RegisterRef, INSTRUCTION_SIZE,
};
use crate::profile::{KernelProfile, LaunchStats, OracleMap, StallReason};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    /// Cycles between scheduler samples.
    pub sampling_period: u64,
    /// Rotates the initial scheduler and warp pointers.
    pub seed: u64,
    pub warps_per_scheduler: usize,
    pub max_cycles: u64,
    /// Iterations for loops without a `trips` override.
    pub default_trips: u64,
    /// Loop-header pc → iteration count.
    pub trips: BTreeMap<u64, u64>,
    /// Function to simulate; defaults to the first function.
    pub entry: Option<String>,
    /// Launch statistics copied into the emitted profile.
    pub launch: LaunchStats,
    /// Record ground-truth producer pcs for every latency sample.
    pub emit_oracle: bool,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            sampling_period: 16,
            seed: 0,
            warps_per_scheduler: 8,
            max_cycles: 2_000_000,
            default_trips: 4,
            trips: BTreeMap::new(),
            entry: None,
            launch: LaunchStats {
                grid_blocks: 160,
                block_threads: 256,
                shared_bytes: 0,
                registers_per_thread: 32,
            },
            emit_oracle: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("failed to read sim config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sim config line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("entry function `{0}` not found")]
    UnknownEntry(String),
    #[error("entry function has no instructions")]
    EmptyEntry,
    #[error("no warps configured")]
    NoWarps,
    #[error("no warp could ever issue again at cycle {cycle}")]
    Deadlock { cycle: u64 },
    #[error("simulation exceeded {max} cycles")]
    MaxCycles { max: u64 },
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<SimConfig, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<SimConfig, SimError> {
        let mut cfg = SimConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| SimError::Malformed { line: line_no, msg };
            let (key, rest) = match line.split_once(char::is_whitespace) {
                Some((k, r)) => (k, r.trim()),
                None => return Err(err(format!("`{line}` has no value"))),
            };
            let int = |v: &str| -> Result<u64, SimError> {
                v.parse().map_err(|_| err(format!("bad integer `{v}`")))
            };
            match key {
                "sampling_period" => {
                    cfg.sampling_period = int(rest)?.max(1);
                }
                "seed" => cfg.seed = int(rest)?,
                "warps_per_scheduler" => cfg.warps_per_scheduler = int(rest)?.max(1) as usize,
                "max_cycles" => cfg.max_cycles = int(rest)?,
                "default_trips" => cfg.default_trips = int(rest)?.max(1),
                "trips" => {
                    let mut pc = None;
                    let mut count = None;
                    for tok in rest.split_whitespace() {
                        if let Some(v) = tok.strip_prefix("pc=") {
                            let v = v.strip_prefix("0x").unwrap_or(v);
                            pc = Some(
                                u64::from_str_radix(v, 16)
                                    .map_err(|_| err(format!("bad pc `{v}`")))?,
                            );
                        } else if let Some(v) = tok.strip_prefix("count=") {
                            count = Some(int(v)?.max(1));
                        } else {
                            return Err(err(format!("unexpected token `{tok}`")));
                        }
                    }
                    match (pc, count) {
                        (Some(p), Some(c)) => {
                            cfg.trips.insert(p, c);
                        }
                        _ => return Err(err("trips needs pc= and count=".into())),
                    }
                }
                "entry" => cfg.entry = Some(rest.to_string()),
                "launch" => {
                    let mut fields: BTreeMap<&str, u64> = BTreeMap::new();
                    for tok in rest.split_whitespace() {
                        let (k, v) = tok
                            .split_once('=')
                            .ok_or_else(|| err(format!("bad launch field `{tok}`")))?;
                        fields.insert(k, int(v)?);
                    }
                    let get = |k: &str| {
                        fields
                            .get(k)
                            .copied()
                            .ok_or_else(|| err(format!("launch missing `{k}`")))
                    };
                    cfg.launch = LaunchStats {
                        grid_blocks: get("grid_blocks")?,
                        block_threads: get("block_threads")? as u32,
                        shared_bytes: get("shared_bytes")? as u32,
                        registers_per_thread: get("registers_per_thread")? as u32,
                    };
                }
                "emit_oracle" => {
                    cfg.emit_oracle = match rest {
                        "true" => true,
                        "false" => false,
                        other => return Err(err(format!("bad bool `{other}`"))),
                    };
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug)]
pub struct SimResult {
    pub profile: KernelProfile,
    pub oracle: Option<OracleMap>,
    pub cycles: u64,
}

#[derive(Clone, Copy)]
struct BarrierSlot {
    clear_cycle: u64,
    def_pc: u64,
    def_class: OpcodeClass,
    /// Read barriers guard the producer's *sources*; waiting on one is a
    /// write-after-read hazard.
    is_read: bool,
}

#[derive(Clone)]
struct Warp {
    pc: u64,
    live: bool,
    /// Earliest cycle the next instruction may issue (stall spacing).
    next_issue: u64,
    prev_pc: Option<u64>,
    barriers: [Option<BarrierSlot>; 6],
    call_stack: Vec<u64>,
    /// Backward-branch pc → remaining times it will be taken.
    takes_left: BTreeMap<u64, u64>,
    /// Arrived at an all-arrive barrier, waiting for the others.
    arrived: bool,
    /// Barrier released; may now issue the barrier instruction itself.
    released: bool,
    issued_this_cycle: Option<u64>,
}

/// What keeps a warp from issuing this cycle, with the pc to blame.
struct Block {
    reason: StallReason,
    def_pc: u64,
}

struct Machine<'a> {
    flat: Vec<&'a Instruction>,
    reads: Vec<std::collections::BTreeSet<RegisterRef>>,
    writes: Vec<std::collections::BTreeSet<RegisterRef>>,
    base_pc: u64,
}

impl<'a> Machine<'a> {
    fn instr(&self, pc: u64) -> &'a Instruction {
        self.flat[((pc - self.base_pc) / INSTRUCTION_SIZE) as usize]
    }

    fn reads(&self, pc: u64) -> &std::collections::BTreeSet<RegisterRef> {
        &self.reads[((pc - self.base_pc) / INSTRUCTION_SIZE) as usize]
    }

    fn writes(&self, pc: u64) -> &std::collections::BTreeSet<RegisterRef> {
        &self.writes[((pc - self.base_pc) / INSTRUCTION_SIZE) as usize]
    }
}

fn is_all_arrive_bar(inst: &Instruction) -> bool {
    inst.opcode_class == OpcodeClass::Sync && inst.opcode == "BAR"
}

/// Stall reason a consumer observes while a producer's write barrier is
/// still pending.
fn write_wait_reason(def_class: OpcodeClass) -> StallReason {
    match def_class {
        OpcodeClass::GlobalMemory
        | OpcodeClass::LocalMemory
        | OpcodeClass::ConstantMemory
        | OpcodeClass::TextureMemory => StallReason::MemoryDependency,
        OpcodeClass::Sync => StallReason::Synchronization,
        _ => StallReason::ExecutionDependency,
    }
}

pub fn simulate(
    program: &Program,
    arch: &ArchSpec,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    let entry = match &config.entry {
        Some(name) => {
            program.function_named(name).ok_or_else(|| SimError::UnknownEntry(name.clone()))?
        }
        None => (0, program.functions.first().ok_or(SimError::EmptyEntry)?),
    };
    let entry_fn = entry.1;
    if entry_fn.instructions.is_empty() {
        return Err(SimError::EmptyEntry);
    }

    // Flatten every function into a pc-indexed table; the pc space is
    // contiguous from the first function's base.
    let base_pc = program.functions.first().map(|f| f.base_pc).unwrap_or(0);
    let mut flat = Vec::new();
    for f in &program.functions {
        for inst in &f.instructions {
            flat.push(inst);
        }
    }
    let (reads, writes): (Vec<_>, Vec<_>) = flat.iter().map(|i| reads_writes(i)).unzip();
    let m = Machine { flat, reads, writes, base_pc };

    let schedulers = arch.schedulers_per_sm.max(1) as usize;
    let per_sched = config.warps_per_scheduler;
    let n_warps = schedulers * per_sched;
    if n_warps == 0 {
        return Err(SimError::NoWarps);
    }

    let mut warps: Vec<Warp> = (0..n_warps)
        .map(|_| Warp {
            pc: entry_fn.base_pc,
            live: true,
            next_issue: 0,
            prev_pc: None,
            barriers: [None; 6],
            call_stack: Vec::new(),
            takes_left: BTreeMap::new(),
            arrived: false,
            released: false,
            issued_this_cycle: None,
        })
        .collect();

    let mut profile = KernelProfile::new(&entry_fn.name, config.launch);
    let mut oracle: OracleMap = OracleMap::new();

    // Round-robin state, rotated by the seed so different seeds sample
    // different alignments of the same schedule.
    let mut issue_ptr: Vec<usize> = (0..schedulers)
        .map(|s| (config.seed as usize + s) % per_sched)
        .collect();
    let mut sample_sched = config.seed as usize % schedulers;
    let mut sample_ptr: Vec<usize> = vec![config.seed as usize % per_sched; schedulers];

    let max_latency =
        arch.latency_table.values().map(|e| e.cycles as u64).max().unwrap_or(1);
    let deadlock_window = 2 * max_latency + 64;

    let mask_block = |w: &Warp, cycle: u64| -> Option<Block> {
        // Blame the barrier that clears last; ties go to the lowest index.
        let inst = m.instr(w.pc);
        let mut worst: Option<&BarrierSlot> = None;
        for i in inst.control.wait_mask.iter() {
            if let Some(slot) = w.barriers[i as usize].as_ref() {
                if slot.clear_cycle > cycle
                    && worst.map_or(true, |b| slot.clear_cycle > b.clear_cycle)
                {
                    worst = Some(slot);
                }
            }
        }
        worst.map(|slot| Block {
            reason: if slot.is_read {
                StallReason::ExecutionDependency
            } else {
                write_wait_reason(slot.def_class)
            },
            def_pc: slot.def_pc,
        })
    };

    // Issue-readiness shares the mask/spacing checks with blame reporting.
    let can_issue = |w: &Warp, cycle: u64| -> bool {
        if w.arrived || cycle < w.next_issue || mask_block(w, cycle).is_some() {
            return false;
        }
        !is_all_arrive_bar(m.instr(w.pc)) || w.released
    };

    let blocked_by = |w: &Warp, cycle: u64| -> Block {
        if w.arrived {
            return Block { reason: StallReason::Synchronization, def_pc: w.pc };
        }
        if let Some(b) = mask_block(w, cycle) {
            return b;
        }
        if cycle < w.next_issue {
            if let Some(prev) = w.prev_pc {
                if m.reads(w.pc).intersection(m.writes(prev)).next().is_some() {
                    return Block { reason: StallReason::ExecutionDependency, def_pc: prev };
                }
            }
            return Block { reason: StallReason::PipelineBusy, def_pc: w.pc };
        }
        if is_all_arrive_bar(m.instr(w.pc)) && !w.released {
            return Block { reason: StallReason::Synchronization, def_pc: w.pc };
        }
        // Ready, but the scheduler issued a different warp.
        Block { reason: StallReason::NotSelected, def_pc: w.pc }
    };

    let mut cycle: u64 = 0;
    let mut last_issue: u64 = 0;
    let mut live_count = n_warps;

    while live_count > 0 {
        if cycle >= config.max_cycles {
            return Err(SimError::MaxCycles { max: config.max_cycles });
        }
        if cycle.saturating_sub(last_issue) > deadlock_window {
            return Err(SimError::Deadlock { cycle });
        }

        for w in warps.iter_mut() {
            w.issued_this_cycle = None;
        }

        // All-arrive barrier bookkeeping: register arrivals, then release
        // everyone once every live warp has arrived.
        for w in warps.iter_mut() {
            if w.live
                && !w.arrived
                && !w.released
                && is_all_arrive_bar(m.instr(w.pc))
                && cycle >= w.next_issue
                && mask_block(w, cycle).is_none()
            {
                w.arrived = true;
            }
        }
        let arrived = warps.iter().filter(|w| w.live && w.arrived).count();
        if arrived > 0 && arrived == live_count {
            for w in warps.iter_mut() {
                if w.live && w.arrived {
                    w.arrived = false;
                    w.released = true;
                }
            }
        }

        // Each scheduler issues at most one ready warp per cycle.
        for s in 0..schedulers {
            let basei = s * per_sched;
            for k in 0..per_sched {
                let wi = basei + (issue_ptr[s] + k) % per_sched;
                if !warps[wi].live || !can_issue(&warps[wi], cycle) {
                    continue;
                }
                let pc = warps[wi].pc;
                let inst = m.instr(pc);
                let w = &mut warps[wi];

                let lat = arch.latency(inst.opcode_class).cycles as u64;
                if let Some(b) = inst.control.write_barrier {
                    w.barriers[b as usize] = Some(BarrierSlot {
                        clear_cycle: cycle + lat,
                        def_pc: pc,
                        def_class: inst.opcode_class,
                        is_read: false,
                    });
                }
                if let Some(b) = inst.control.read_barrier {
                    w.barriers[b as usize] = Some(BarrierSlot {
                        clear_cycle: cycle + lat,
                        def_pc: pc,
                        def_class: inst.opcode_class,
                        is_read: true,
                    });
                }
                w.next_issue = cycle + (inst.control.stall_cycles.max(1)) as u64;
                w.prev_pc = Some(pc);
                w.issued_this_cycle = Some(pc);
                w.released = false;

                // Control flow: unconditional branches are taken, backward
                // conditional branches loop per the configured trip counts,
                // forward conditional branches fall through.
                let fallthrough = pc + INSTRUCTION_SIZE;
                if inst.opcode_class == OpcodeClass::Control {
                    if let Some(target) = inst.branch_target {
                        if inst.predicate.is_always() {
                            w.pc = target;
                        } else if target <= pc {
                            let trips = config
                                .trips
                                .get(&target)
                                .copied()
                                .unwrap_or(config.default_trips)
                                .max(1);
                            let left =
                                w.takes_left.entry(pc).or_insert(trips - 1);
                            if *left > 0 {
                                *left -= 1;
                                w.pc = target;
                            } else {
                                w.takes_left.remove(&pc);
                                w.pc = fallthrough;
                            }
                        } else {
                            w.pc = fallthrough;
                        }
                    } else if let Some(name) = program.call_target(inst) {
                        match program.function_named(name) {
                            Some((_, callee)) if !callee.instructions.is_empty() => {
                                w.call_stack.push(fallthrough);
                                w.pc = callee.base_pc;
                            }
                            _ => w.pc = fallthrough,
                        }
                    } else if inst.operands.is_empty() && inst.opcode != "RET" {
                        w.live = false;
                    } else if inst.opcode == "RET" {
                        match w.call_stack.pop() {
                            Some(ret) => w.pc = ret,
                            None => w.live = false,
                        }
                    } else {
                        w.pc = fallthrough;
                    }
                } else {
                    w.pc = fallthrough;
                }
                if w.live {
                    // Falling off the end of the program terminates the warp.
                    let end = m.base_pc + m.flat.len() as u64 * INSTRUCTION_SIZE;
                    if w.pc >= end {
                        w.live = false;
                    }
                }
                if !w.live {
                    live_count -= 1;
                }
                last_issue = cycle;
                issue_ptr[s] = (wi - basei + 1) % per_sched;
                break;
            }
        }

        // Sample one warp every `sampling_period` cycles. Schedulers and
        // warp slots rotate so samples cover the whole machine; a warp that
        // issued its final instruction this cycle still counts as live.
        if (cycle + 1) % config.sampling_period == 0 {
            let was_live =
                |w: &Warp| w.live || w.issued_this_cycle.is_some();
            'sample: for ds in 0..schedulers {
                let s = (sample_sched + ds) % schedulers;
                let basei = s * per_sched;
                for k in 0..per_sched {
                    let wi = basei + (sample_ptr[s] + k) % per_sched;
                    if !was_live(&warps[wi]) {
                        continue;
                    }
                    sample_ptr[s] = (wi - basei + 1) % per_sched;
                    let w = &warps[wi];
                    if let Some(pc) = w.issued_this_cycle {
                        profile.record_mut(pc).active += 1;
                    } else {
                        let b = blocked_by(w, cycle);
                        let rec = profile.record_mut(w.pc);
                        rec.latency += 1;
                        rec.stalls.add(b.reason, 1);
                        if config.emit_oracle {
                            *oracle
                                .entry(w.pc)
                                .or_default()
                                .entry(b.def_pc)
                                .or_default() += 1;
                        }
                    }
                    break 'sample;
                }
            }
            sample_sched = (sample_sched + 1) % schedulers;
        }

        cycle += 1;
    }

    Ok(SimResult {
        profile,
        oracle: config.emit_oracle.then_some(oracle),
        cycles: cycle,
    })
}

//! Instruction-sampling profiles: the data model and on-disk format.
//!
//! A profile records, per kernel launch, how many scheduler samples landed
//! on each pc and why the sampled warp was not making progress. Every
//! sample is either *active* (the warp issued that cycle) or a *latency*
//! sample tagged with a stall reason; kernel totals `T = A + L` are stored
//! redundantly and cross-checked on load.
//!
//! File format, one record per line, samples in ascending pc order:
//!
//! ```text
//! kernel <name>
//! launch grid_blocks=<n> block_threads=<n> shared_bytes=<n> registers_per_thread=<n>
//! totals T=<n> A=<n> L=<n>
//! sample pc=<0xADDR> active=<n> latency=<n> [stalls=<reason>:<n>,...]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::isa::Program;

pub mod sim;

/// Why a sampled warp could not issue. Order is canonical: files and
/// reports always list reasons in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StallReason {
    /// Waiting on a value produced by a memory instruction.
    MemoryDependency,
    /// Waiting on a value produced by a compute instruction.
    ExecutionDependency,
    /// Waiting at a barrier or other synchronization point.
    Synchronization,
    /// Memory pipeline refused new requests.
    MemoryThrottle,
    /// Instruction fetch had not delivered the next instruction.
    InstructionFetch,
    /// Required functional unit was occupied.
    PipelineBusy,
    /// Warp was ready but the scheduler picked another warp.
    NotSelected,
    /// Stalled for a reason outside this taxonomy.
    MiscOther,
    /// Not stalled: the warp issued. Never appears in a stall breakdown.
    None,
}

impl StallReason {
    pub const ALL: [StallReason; 9] = [
        StallReason::MemoryDependency,
        StallReason::ExecutionDependency,
        StallReason::Synchronization,
        StallReason::MemoryThrottle,
        StallReason::InstructionFetch,
        StallReason::PipelineBusy,
        StallReason::NotSelected,
        StallReason::MiscOther,
        StallReason::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StallReason::MemoryDependency => "memory_dependency",
            StallReason::ExecutionDependency => "execution_dependency",
            StallReason::Synchronization => "synchronization",
            StallReason::MemoryThrottle => "memory_throttle",
            StallReason::InstructionFetch => "instruction_fetch",
            StallReason::PipelineBusy => "pipeline_busy",
            StallReason::NotSelected => "not_selected",
            StallReason::MiscOther => "misc_other",
            StallReason::None => "none",
        }
    }

    pub fn from_name(name: &str) -> Option<StallReason> {
        StallReason::ALL.into_iter().find(|r| r.name() == name)
    }

    pub fn index(self) -> usize {
        StallReason::ALL.iter().position(|r| *r == self).unwrap()
    }

    /// Reasons that point at a producer instruction and therefore get
    /// dependency edges; the rest pass through to the stalled pc itself.
    pub fn names_a_producer(self) -> bool {
        matches!(
            self,
            StallReason::MemoryDependency
                | StallReason::ExecutionDependency
                | StallReason::Synchronization
        )
    }
}

impl fmt::Display for StallReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-reason sample counts. `StallReason::None` is representable but
/// files reject it inside a breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StallCounts([u64; 9]);

impl StallCounts {
    pub fn get(&self, r: StallReason) -> u64 {
        self.0[r.index()]
    }

    pub fn add(&mut self, r: StallReason, n: u64) {
        self.0[r.index()] += n;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Nonzero entries in canonical reason order.
    pub fn iter_nonzero(&self) -> impl Iterator<Item = (StallReason, u64)> + '_ {
        StallReason::ALL
            .into_iter()
            .filter_map(|r| (self.0[r.index()] > 0).then(|| (r, self.0[r.index()])))
    }

    pub fn merge(&mut self, other: &StallCounts) {
        for i in 0..self.0.len() {
            self.0[i] += other.0[i];
        }
    }
}

/// Samples recorded at one pc.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PcSampleRecord {
    pub pc: u64,
    /// Samples in which this pc issued.
    pub active: u64,
    /// Samples in which a warp sat stalled at this pc.
    pub latency: u64,
    /// Breakdown of the latency samples by reason. May sum to less than
    /// `latency`; the remainder is unattributed.
    pub stalls: StallCounts,
}

/// Launch configuration, needed by the occupancy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchStats {
    pub grid_blocks: u64,
    pub block_threads: u32,
    pub shared_bytes: u32,
    pub registers_per_thread: u32,
}

/// One kernel's worth of samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelProfile {
    pub kernel: String,
    pub launch: LaunchStats,
    /// Keyed by pc; each record's `pc` equals its key.
    pub samples: BTreeMap<u64, PcSampleRecord>,
}

/// Kernel-level totals derived from the samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    /// Total samples `T`.
    pub total: u64,
    /// Active (issued) samples `A`.
    pub active: u64,
    /// Latency (stalled) samples `L`.
    pub latency: u64,
    /// Issue rate `A / T`; zero for an empty profile.
    pub issue_rate: f64,
}

impl KernelProfile {
    pub fn new(kernel: impl Into<String>, launch: LaunchStats) -> KernelProfile {
        KernelProfile { kernel: kernel.into(), launch, samples: BTreeMap::new() }
    }

    pub fn record_mut(&mut self, pc: u64) -> &mut PcSampleRecord {
        let r = self.samples.entry(pc).or_default();
        r.pc = pc;
        r
    }

    pub fn summary(&self) -> ProfileSummary {
        let active: u64 = self.samples.values().map(|s| s.active).sum();
        let latency: u64 = self.samples.values().map(|s| s.latency).sum();
        let total = active + latency;
        let issue_rate = if total == 0 { 0.0 } else { active as f64 / total as f64 };
        ProfileSummary { total, active, latency, issue_rate }
    }

    /// Folds another launch of the same kernel into this one.
    pub fn merge(&mut self, other: &KernelProfile) {
        for (pc, rec) in &other.samples {
            let mine = self.record_mut(*pc);
            mine.active += rec.active;
            mine.latency += rec.latency;
            mine.stalls.merge(&rec.stalls);
        }
    }

    /// Warnings for samples that do not land inside the program.
    pub fn validate_against(&self, program: &Program) -> Vec<String> {
        let mut warnings = Vec::new();
        for pc in self.samples.keys() {
            if program.instr_at(*pc).is_none() {
                warnings.push(format!(
                    "kernel {}: sample pc {:#x} does not resolve to an instruction",
                    self.kernel, pc
                ));
            }
        }
        warnings
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("failed to read profile {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("profile line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("kernel {kernel}: recorded {field}={recorded} but samples sum to {computed}")]
    TotalsMismatch { kernel: String, field: &'static str, recorded: u64, computed: u64 },
    #[error("profile line {line}: sample pcs must be strictly ascending")]
    OutOfOrder { line: usize },
}

/// Parses a profile file; a file may hold several kernels.
pub fn parse_profile(text: &str) -> Result<Vec<KernelProfile>, ProfileError> {
    struct Pending {
        kernel: String,
        launch: Option<LaunchStats>,
        totals: Option<(u64, u64, u64)>,
        samples: BTreeMap<u64, PcSampleRecord>,
        last_pc: Option<u64>,
        line: usize,
    }

    fn finish(p: Pending, out: &mut Vec<KernelProfile>) -> Result<(), ProfileError> {
        let launch = p.launch.ok_or(ProfileError::Malformed {
            line: p.line,
            msg: format!("kernel {} has no launch record", p.kernel),
        })?;
        let kp = KernelProfile { kernel: p.kernel, launch, samples: p.samples };
        if let Some((t, a, l)) = p.totals {
            let s = kp.summary();
            let checks =
                [("T", t, s.total), ("A", a, s.active), ("L", l, s.latency)];
            for (field, recorded, computed) in checks {
                if recorded != computed {
                    return Err(ProfileError::TotalsMismatch {
                        kernel: kp.kernel,
                        field,
                        recorded,
                        computed,
                    });
                }
            }
        } else {
            return Err(ProfileError::Malformed {
                line: p.line,
                msg: format!("kernel {} has no totals record", kp.kernel),
            });
        }
        out.push(kp);
        Ok(())
    }

    let mut out = Vec::new();
    let mut cur: Option<Pending> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ProfileError::Malformed { line: line_no, msg };
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("kernel") => {
                if let Some(p) = cur.take() {
                    finish(p, &mut out)?;
                }
                let name = parts.next().ok_or_else(|| err("missing kernel name".into()))?;
                cur = Some(Pending {
                    kernel: name.to_string(),
                    launch: None,
                    totals: None,
                    samples: BTreeMap::new(),
                    last_pc: None,
                    line: line_no,
                });
            }
            Some("launch") => {
                let p = cur.as_mut().ok_or_else(|| err("launch before kernel".into()))?;
                let mut fields: BTreeMap<&str, u64> = BTreeMap::new();
                for tok in parts {
                    let (k, v) = tok
                        .split_once('=')
                        .ok_or_else(|| err(format!("bad launch field `{tok}`")))?;
                    let v: u64 = v.parse().map_err(|_| err(format!("bad value `{v}`")))?;
                    fields.insert(k, v);
                }
                let get = |k: &str| {
                    fields.get(k).copied().ok_or_else(|| err(format!("launch missing `{k}`")))
                };
                p.launch = Some(LaunchStats {
                    grid_blocks: get("grid_blocks")?,
                    block_threads: get("block_threads")? as u32,
                    shared_bytes: get("shared_bytes")? as u32,
                    registers_per_thread: get("registers_per_thread")? as u32,
                });
            }
            Some("totals") => {
                let p = cur.as_mut().ok_or_else(|| err("totals before kernel".into()))?;
                let mut t = None;
                let mut a = None;
                let mut l = None;
                for tok in parts {
                    let (k, v) = tok
                        .split_once('=')
                        .ok_or_else(|| err(format!("bad totals field `{tok}`")))?;
                    let v: u64 = v.parse().map_err(|_| err(format!("bad value `{v}`")))?;
                    match k {
                        "T" => t = Some(v),
                        "A" => a = Some(v),
                        "L" => l = Some(v),
                        other => return Err(err(format!("unknown totals field `{other}`"))),
                    }
                }
                let need = |o: Option<u64>, k: &str| {
                    o.ok_or_else(|| err(format!("totals missing `{k}`")))
                };
                p.totals = Some((need(t, "T")?, need(a, "A")?, need(l, "L")?));
            }
            Some("sample") => {
                let p = cur.as_mut().ok_or_else(|| err("sample before kernel".into()))?;
                let mut rec = PcSampleRecord::default();
                let mut have_pc = false;
                for tok in parts {
                    let (k, v) = tok
                        .split_once('=')
                        .ok_or_else(|| err(format!("bad sample field `{tok}`")))?;
                    match k {
                        "pc" => {
                            let v = v.strip_prefix("0x").unwrap_or(v);
                            rec.pc = u64::from_str_radix(v, 16)
                                .map_err(|_| err(format!("bad pc `{v}`")))?;
                            have_pc = true;
                        }
                        "active" => {
                            rec.active =
                                v.parse().map_err(|_| err(format!("bad count `{v}`")))?;
                        }
                        "latency" => {
                            rec.latency =
                                v.parse().map_err(|_| err(format!("bad count `{v}`")))?;
                        }
                        "stalls" => {
                            for item in v.split(',') {
                                let (name, n) = item.split_once(':').ok_or_else(|| {
                                    err(format!("bad stall entry `{item}`"))
                                })?;
                                let reason = StallReason::from_name(name).ok_or_else(|| {
                                    err(format!("unknown stall reason `{name}`"))
                                })?;
                                if reason == StallReason::None {
                                    return Err(err(
                                        "`none` is not a stall reason".into()
                                    ));
                                }
                                let n: u64 =
                                    n.parse().map_err(|_| err(format!("bad count `{n}`")))?;
                                rec.stalls.add(reason, n);
                            }
                        }
                        other => return Err(err(format!("unknown sample field `{other}`"))),
                    }
                }
                if !have_pc {
                    return Err(err("sample missing `pc`".into()));
                }
                if rec.stalls.total() > rec.latency {
                    return Err(err(format!(
                        "stall breakdown ({}) exceeds latency samples ({})",
                        rec.stalls.total(),
                        rec.latency
                    )));
                }
                if p.last_pc.map_or(false, |prev| rec.pc <= prev) {
                    return Err(ProfileError::OutOfOrder { line: line_no });
                }
                p.last_pc = Some(rec.pc);
                p.samples.insert(rec.pc, rec);
            }
            Some(other) => return Err(err(format!("unknown record `{other}`"))),
            None => {}
        }
    }
    if let Some(p) = cur.take() {
        finish(p, &mut out)?;
    }
    Ok(out)
}

pub fn load_profile(path: &Path) -> Result<Vec<KernelProfile>, ProfileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_profile(&text)
}

/// Renders profiles in the canonical form `parse_profile` accepts:
/// samples ascending by pc, stall reasons in canonical order.
pub fn render_profile(profiles: &[KernelProfile]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for p in profiles {
        let s = p.summary();
        writeln!(out, "kernel {}", p.kernel).unwrap();
        writeln!(
            out,
            "launch grid_blocks={} block_threads={} shared_bytes={} registers_per_thread={}",
            p.launch.grid_blocks,
            p.launch.block_threads,
            p.launch.shared_bytes,
            p.launch.registers_per_thread
        )
        .unwrap();
        writeln!(out, "totals T={} A={} L={}", s.total, s.active, s.latency).unwrap();
        for rec in p.samples.values() {
            write!(out, "sample pc={:#x} active={} latency={}", rec.pc, rec.active, rec.latency)
                .unwrap();
            if rec.stalls.total() > 0 {
                let items: Vec<String> = rec
                    .stalls
                    .iter_nonzero()
                    .map(|(r, n)| format!("{}:{}", r.name(), n))
                    .collect();
                write!(out, " stalls={}", items.join(",")).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Ground-truth map emitted by the simulator for validation: for each
/// stalled pc, how many latency samples were truly caused by each
/// producer pc. Format: `oracle use=<0xADDR> def=<0xADDR> count=<n>`.
pub type OracleMap = BTreeMap<u64, BTreeMap<u64, u64>>;

pub fn parse_oracle(text: &str) -> Result<OracleMap, ProfileError> {
    let mut map: OracleMap = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ProfileError::Malformed { line: line_no, msg };
        let mut parts = line.split_whitespace();
        if parts.next() != Some("oracle") {
            return Err(err("expected `oracle` record".into()));
        }
        let mut use_pc = None;
        let mut def_pc = None;
        let mut count = None;
        for tok in parts {
            let (k, v) = tok.split_once('=').ok_or_else(|| err(format!("bad field `{tok}`")))?;
            match k {
                "use" | "def" => {
                    let hex = v.strip_prefix("0x").unwrap_or(v);
                    let n = u64::from_str_radix(hex, 16)
                        .map_err(|_| err(format!("bad pc `{v}`")))?;
                    if k == "use" {
                        use_pc = Some(n);
                    } else {
                        def_pc = Some(n);
                    }
                }
                "count" => {
                    let n: u64 = v.parse().map_err(|_| err(format!("bad count `{v}`")))?;
                    count = Some(n);
                }
                other => return Err(err(format!("unknown field `{other}`"))),
            }
        }
        let (u, d, c) = match (use_pc, def_pc, count) {
            (Some(u), Some(d), Some(c)) => (u, d, c),
            _ => return Err(err("oracle record needs use=, def=, count=".into())),
        };
        *map.entry(u).or_default().entry(d).or_default() += c;
    }
    Ok(map)
}

pub fn render_oracle(map: &OracleMap) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for (use_pc, defs) in map {
        for (def_pc, count) in defs {
            writeln!(out, "oracle use={use_pc:#x} def={def_pc:#x} count={count}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn launch() -> LaunchStats {
        LaunchStats {
            grid_blocks: 160,
            block_threads: 256,
            shared_bytes: 0,
            registers_per_thread: 32,
        }
    }

    fn sample_profile() -> KernelProfile {
        let mut p = KernelProfile::new("vecadd", launch());
        let r = p.record_mut(0x0);
        r.active = 3;
        r.latency = 5;
        r.stalls.add(StallReason::MemoryDependency, 4);
        r.stalls.add(StallReason::PipelineBusy, 1);
        let r = p.record_mut(0x20);
        r.active = 2;
        p
    }

    #[test]
    fn render_parse_round_trip() {
        let p = sample_profile();
        let text = render_profile(std::slice::from_ref(&p));
        let back = parse_profile(&text).unwrap();
        assert_eq!(back, vec![p]);
    }

    #[test]
    fn stall_reasons_render_in_canonical_order() {
        let mut p = KernelProfile::new("k", launch());
        let r = p.record_mut(0x0);
        r.latency = 3;
        // Insert in reverse of the canonical order; rendering must not care.
        r.stalls.add(StallReason::PipelineBusy, 1);
        r.stalls.add(StallReason::MemoryDependency, 2);
        let text = render_profile(&[p]);
        assert!(text.contains("stalls=memory_dependency:2,pipeline_busy:1"));
    }

    #[test]
    fn totals_cross_checked() {
        let text = "kernel k\n\
                    launch grid_blocks=1 block_threads=32 shared_bytes=0 registers_per_thread=16\n\
                    totals T=9 A=1 L=2\n\
                    sample pc=0x0 active=1 latency=2 stalls=misc_other:2\n";
        match parse_profile(text) {
            Err(ProfileError::TotalsMismatch { field: "T", recorded: 9, computed: 3, .. }) => {}
            other => panic!("expected totals mismatch, got {other:?}"),
        }
    }

    #[test]
    fn out_of_order_and_overflowing_stalls_rejected() {
        let header = "kernel k\n\
                      launch grid_blocks=1 block_threads=32 shared_bytes=0 registers_per_thread=16\n\
                      totals T=2 A=2 L=0\n";
        let text = format!("{header}sample pc=0x10 active=1\nsample pc=0x0 active=1\n");
        assert!(matches!(parse_profile(&text), Err(ProfileError::OutOfOrder { .. })));

        let text = "kernel k\n\
                    launch grid_blocks=1 block_threads=32 shared_bytes=0 registers_per_thread=16\n\
                    totals T=1 A=0 L=1\n\
                    sample pc=0x0 latency=1 stalls=misc_other:2\n";
        assert!(matches!(parse_profile(text), Err(ProfileError::Malformed { .. })));

        let text = "kernel k\n\
                    launch grid_blocks=1 block_threads=32 shared_bytes=0 registers_per_thread=16\n\
                    totals T=1 A=0 L=1\n\
                    sample pc=0x0 latency=1 stalls=none:1\n";
        assert!(matches!(parse_profile(text), Err(ProfileError::Malformed { .. })));
    }

    #[test]
    fn summary_and_merge() {
        let mut p = sample_profile();
        let s = p.summary();
        assert_eq!((s.total, s.active, s.latency), (10, 5, 5));
        assert!((s.issue_rate - 0.5).abs() < 1e-12);

        let q = sample_profile();
        p.merge(&q);
        let s = p.summary();
        assert_eq!((s.total, s.active, s.latency), (20, 10, 10));
        assert_eq!(p.samples[&0x0].stalls.get(StallReason::MemoryDependency), 8);
    }

    #[test]
    fn oracle_round_trip() {
        let mut map = OracleMap::new();
        map.entry(0x30).or_default().insert(0x0, 7);
        map.entry(0x30).or_default().insert(0x10, 2);
        let text = render_oracle(&map);
        assert_eq!(parse_oracle(&text).unwrap(), map);
    }
}

//! Ranks advice and renders the final report.
//!
//! Two renderings share one [`AdviceReport`] value: a fixed-width text
//! form for humans and a JSON form that parses back losslessly. Both are
//! deterministic — equal inputs produce byte-equal output.

use serde::{Deserialize, Serialize};

use crate::advisor::{Advice, Hotspot};
use crate::blamer::{AttributedProfile, DetailedReason, PruneCounts};
use crate::cfg::ProgramStructure;
use crate::estimate::{Speedup, DISPLAY_CAP};
use crate::isa::Program;
use crate::profile::{LaunchStats, ProfileSummary};

/// Graph and pruning statistics carried alongside the advice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Fraction of stalled pcs with at most one live candidate producer
    /// per stall kind, before and after pruning.
    pub coverage_before: f64,
    pub coverage_after: f64,
    pub pruned: PruneCounts,
    pub graph_nodes: usize,
    pub live_edges: usize,
    /// Apportioned sample mass; equals the profile's latency total.
    pub attributed_samples: f64,
}

/// One kernel's ranked advice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceReport {
    pub kernel: String,
    pub arch: String,
    pub launch: LaunchStats,
    pub summary: ProfileSummary,
    /// Best estimate first; ties fall back to the canonical optimizer
    /// order.
    pub advice: Vec<Advice>,
    pub diagnostics: Diagnostics,
}

impl AdviceReport {
    /// Keeps only the `n` best-ranked entries.
    pub fn top(mut self, n: usize) -> AdviceReport {
        self.advice.truncate(n);
        self
    }
}

/// Assembles and ranks the report for one kernel.
pub fn build_report(
    kernel: impl Into<String>,
    arch: impl Into<String>,
    launch: LaunchStats,
    summary: ProfileSummary,
    mut advice: Vec<Advice>,
    attributed: &AttributedProfile,
) -> AdviceReport {
    advice.sort_by(|a, b| {
        b.estimate
            .speedup
            .rank_value()
            .partial_cmp(&a.estimate.speedup.rank_value())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.optimizer.rank().cmp(&b.optimizer.rank()))
    });
    AdviceReport {
        kernel: kernel.into(),
        arch: arch.into(),
        launch,
        summary,
        advice,
        diagnostics: Diagnostics {
            coverage_before: attributed.coverage_before,
            coverage_after: attributed.coverage_after,
            pruned: attributed.pruned,
            graph_nodes: attributed.graph.nodes.len(),
            live_edges: attributed.graph.edges.iter().filter(|e| e.is_live()).count(),
            attributed_samples: attributed.total_samples(),
        },
    }
}

/// "1.2500x" for finite estimates, "> 10.0x" past the display cap.
pub fn speedup_display(s: &Speedup) -> String {
    match s {
        Speedup::Finite(v) if *v > DISPLAY_CAP => format!("> {DISPLAY_CAP:.1}x"),
        Speedup::Finite(v) => format!("{v:.4}x"),
        Speedup::Unbounded => format!("> {DISPLAY_CAP:.1}x"),
    }
}

/// Hotspot lines shown per advice in the text report (the JSON form keeps
/// them all).
const TEXT_HOTSPOT_LIMIT: usize = 3;

fn opcode_at(program: &Program, pc: u64) -> &str {
    program.instr_at(pc).map_or("?", |i| i.opcode.as_str())
}

fn push_hotspot_line(
    out: &mut String,
    program: &Program,
    structure: &ProgramStructure,
    spot: &Hotspot,
    matched: f64,
) {
    let pct = if matched > 0.0 { 100.0 * spot.samples / matched } else { 0.0 };
    let tail = format!("{:.4} samples ({:.1}%)", spot.samples, pct);
    if let DetailedReason::SelfAttributed(_) = spot.reason {
        out.push_str(&format!(
            "     * {} {}  {}  {}\n",
            opcode_at(program, spot.use_pc),
            structure.describe_pc(program, spot.use_pc),
            spot.reason,
            tail,
        ));
    } else {
        out.push_str(&format!(
            "     * {} {} -> {} {}  {}  {}  distance {}\n",
            opcode_at(program, spot.def_pc),
            structure.describe_pc(program, spot.def_pc),
            opcode_at(program, spot.use_pc),
            structure.describe_pc(program, spot.use_pc),
            spot.reason,
            tail,
            spot.distance,
        ));
    }
}

/// Renders one kernel's report as plain text.
pub fn render_text(
    report: &AdviceReport,
    program: &Program,
    structure: &ProgramStructure,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("kernel {}  arch {}\n", report.kernel, report.arch));
    let l = &report.launch;
    out.push_str(&format!(
        "launch grid_blocks={} block_threads={} shared_bytes={} registers_per_thread={}\n",
        l.grid_blocks, l.block_threads, l.shared_bytes, l.registers_per_thread
    ));
    let s = &report.summary;
    out.push_str(&format!(
        "samples total={} active={} latency={} issue_rate={:.4}\n",
        s.total, s.active, s.latency, s.issue_rate
    ));
    out.push('\n');

    if report.advice.is_empty() {
        out.push_str("advice: none (no optimizer matched the recorded stalls)\n");
    } else {
        out.push_str("advice\n");
        for (i, a) in report.advice.iter().enumerate() {
            let mut line = format!(
                " {:2}. {}  estimated speedup {}",
                i + 1,
                a.optimizer,
                speedup_display(&a.estimate.speedup)
            );
            if let Some(unrefined) = &a.estimate.unrefined {
                line.push_str(&format!("  (unrefined {})", speedup_display(unrefined)));
            }
            line.push_str(&format!("  matched {:.4} samples\n", a.matched_samples));
            out.push_str(&line);
            if !a.detail.is_empty() {
                out.push_str(&format!("     {}\n", a.detail));
            }
            out.push_str(&format!("     {}\n", a.optimizer.suggestion()));
            for spot in a.hotspots.iter().take(TEXT_HOTSPOT_LIMIT) {
                push_hotspot_line(&mut out, program, structure, spot, a.matched_samples);
            }
        }
    }

    let d = &report.diagnostics;
    out.push('\n');
    out.push_str("diagnostics\n");
    out.push_str(&format!(
        "  dependency coverage {:.4} -> {:.4} after pruning\n",
        d.coverage_before, d.coverage_after
    ));
    out.push_str(&format!(
        "  pruned edges opcode={} dominator={} latency={} (total {})\n",
        d.pruned.opcode,
        d.pruned.dominator,
        d.pruned.latency,
        d.pruned.total()
    ));
    out.push_str(&format!(
        "  graph {} nodes, {} live edges, {:.4} samples attributed\n",
        d.graph_nodes, d.live_edges, d.attributed_samples
    ));
    out
}

/// Renders reports as pretty JSON (an array, one element per kernel).
pub fn render_machine(reports: &[AdviceReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

/// Parses [`render_machine`] output back.
pub fn parse_machine(text: &str) -> Result<Vec<AdviceReport>, serde_json::Error> {
    serde_json::from_str(text)
}

//! Closed-form speedup estimates.
//!
//! All estimates work on sample counts: `total` samples `T` split into
//! `active` (issued) samples `A` and latency samples `L`, of which an
//! optimizer's matched stalls `M` (or `M_L`) could be eliminated.
//!
//! * The *naive bound* `T / (T - M)` assumes every matched sample
//!   disappears; with `M = T` it is unbounded.
//! * The *refined* form caps the eliminable latency at the kernel's own
//!   issue volume, `T / (T - min(A, M_L))`: hiding latency still requires
//!   issuing the instructions, so a kernel cannot run faster than its
//!   active samples allow. Because `A + M_L ≤ T`, the refined estimate
//!   never exceeds 2 — see `refined_is_bounded_by_two`.
//! * The *scoped* refined form applies the same cap within one program
//!   scope (a loop or function), using the scope's nested active samples.
//! * The *parallelism* form models occupancy changes: issuing `W_new`
//!   instead of `W` warps scales work per warp by `C_W = W_new / W`,
//!   while machine utilization `I(W) = 1 - (1 - R_I)^W` rises, making the
//!   per-instruction cost ratio `C_I = I(W) / I(W_new)`. The estimate is
//!   `C_W × C_I × f` with `f ∈ (0, 1]` discounting how much of the kernel
//!   the change touches.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Reporting cap: unbounded estimates render as "> 10.0".
pub const DISPLAY_CAP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speedup {
    Finite(f64),
    /// The model eliminated every sample; the form diverges.
    Unbounded,
}

impl Speedup {
    pub fn is_unbounded(&self) -> bool {
        matches!(self, Speedup::Unbounded)
    }

    /// Value used for ranking; unbounded sorts above everything finite.
    pub fn rank_value(&self) -> f64 {
        match self {
            Speedup::Finite(v) => *v,
            Speedup::Unbounded => f64::INFINITY,
        }
    }

    /// Records never predict a slowdown: estimates floor at 1.0.
    pub fn floored(self) -> Speedup {
        match self {
            Speedup::Finite(v) => Speedup::Finite(v.max(1.0)),
            Speedup::Unbounded => Speedup::Unbounded,
        }
    }
}

/// Naive bound `T / (T - M)`; `M ≥ T` diverges.
pub fn naive_bound(total: f64, matched: f64) -> Speedup {
    if total <= 0.0 {
        return Speedup::Finite(1.0);
    }
    let matched = matched.max(0.0);
    if matched >= total {
        return Speedup::Unbounded;
    }
    Speedup::Finite(total / (total - matched))
}

/// Refined kernel-level estimate `T / (T - min(A, M_L))`.
pub fn refined_bound(total: f64, active: f64, matched_latency: f64) -> Speedup {
    if total <= 0.0 {
        return Speedup::Finite(1.0);
    }
    let eliminable = active.max(0.0).min(matched_latency.max(0.0));
    if eliminable >= total {
        return Speedup::Unbounded;
    }
    Speedup::Finite(total / (total - eliminable))
}

/// Scoped refined estimate: the cap uses only the active samples nested
/// inside the optimized scope and the matched latency observed there.
pub fn scoped_bound(total: f64, scope_active: f64, scope_matched_latency: f64) -> Speedup {
    refined_bound(total, scope_active, scope_matched_latency)
}

/// Warp-parallelism gain `C_W = W_new / W`.
pub fn warp_gain(w_new: f64, w: f64) -> f64 {
    if w <= 0.0 {
        return 1.0;
    }
    w_new / w
}

/// Probability at least one warp can issue: `I(W) = 1 - (1 - R_I)^W`.
pub fn issue_utilization(issue_rate: f64, warps: f64) -> f64 {
    1.0 - (1.0 - issue_rate.clamp(0.0, 1.0)).powf(warps.max(0.0))
}

/// Per-instruction cost ratio `C_I = I(W) / I(W_new)`; defined as 1 when
/// the issue rate is zero (no utilization to dilute).
pub fn issue_cost_ratio(issue_rate: f64, w: f64, w_new: f64) -> f64 {
    if issue_rate <= 0.0 {
        return 1.0;
    }
    let old = issue_utilization(issue_rate, w);
    let new = issue_utilization(issue_rate, w_new);
    if new <= 0.0 {
        return 1.0;
    }
    old / new
}

/// Parallelism estimate `S = C_W × C_I × f`.
pub fn parallelism_speedup(w_new: f64, w: f64, issue_rate: f64, fraction: f64) -> f64 {
    let f = if fraction > 0.0 { fraction.min(1.0) } else { 1.0 };
    warp_gain(w_new, w) * issue_cost_ratio(issue_rate, w, w_new) * f
}

/// A finished estimate: the floored speedup, the naive latency-only bound
/// it refines (when one applies), and the inputs that produced it, for
/// reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRecord {
    pub speedup: Speedup,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unrefined: Option<Speedup>,
    pub inputs: BTreeMap<String, f64>,
}

fn inputs(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl SpeedupRecord {
    /// Kernel-level stall elimination (refined, with the naive bound kept
    /// for reference).
    pub fn from_stalls(total: f64, active: f64, matched_latency: f64) -> SpeedupRecord {
        SpeedupRecord {
            speedup: refined_bound(total, active, matched_latency).floored(),
            unrefined: Some(naive_bound(total, matched_latency)),
            inputs: inputs(&[
                ("total", total),
                ("active", active),
                ("matched_latency", matched_latency),
            ]),
        }
    }

    /// Scope-level stall elimination.
    pub fn from_scope(
        total: f64,
        scope_active: f64,
        scope_matched_latency: f64,
    ) -> SpeedupRecord {
        SpeedupRecord {
            speedup: scoped_bound(total, scope_active, scope_matched_latency).floored(),
            unrefined: Some(naive_bound(total, scope_matched_latency)),
            inputs: inputs(&[
                ("total", total),
                ("scope_active", scope_active),
                ("scope_matched_latency", scope_matched_latency),
            ]),
        }
    }

    /// Occupancy change.
    pub fn from_parallelism(
        w_new: f64,
        w: f64,
        issue_rate: f64,
        fraction: f64,
    ) -> SpeedupRecord {
        SpeedupRecord {
            speedup: Speedup::Finite(parallelism_speedup(w_new, w, issue_rate, fraction))
                .floored(),
            unrefined: None,
            inputs: inputs(&[
                ("warps_new", w_new),
                ("warps", w),
                ("issue_rate", issue_rate),
                ("fraction", fraction),
            ]),
        }
    }
}

//! Randomized invariants: bound limits, sample conservation, rendering
//! round-trips, and structural guarantees of parsed programs.

mod common;

use common::{max_conservation_error, random_graph, random_kernel_text, random_profile_for, rng};
use gir_advisor::blamer::apportion;
use gir_advisor::cfg::{build_cfg, path_distance};
use gir_advisor::estimate::{naive_bound, refined_bound, Speedup};
use gir_advisor::isa::{parse_program, ArchSpec};
use gir_advisor::profile::{parse_profile, render_profile};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    /// Refining by the active count keeps the bound in [1, 2] whenever
    /// active and matched latency fit inside the total together.
    #[test]
    fn refined_bound_is_within_two(
        total in 1.0..1e6f64,
        active_frac in 0.0..1.0f64,
        matched_frac in 0.0..1.0f64,
    ) {
        let active = total * active_frac;
        let matched = (total - active) * matched_frac;
        match refined_bound(total, active, matched) {
            Speedup::Finite(v) => prop_assert!((1.0 - 1e-12..=2.0 + 1e-12).contains(&v)),
            Speedup::Unbounded => prop_assert!(false, "bounded inputs must stay finite"),
        }
    }

    /// The unrefined bound diverges exactly when the matched latency
    /// covers the whole sample total.
    #[test]
    fn naive_bound_diverges_iff_matched_covers_total(
        total in 1.0..1e6f64,
        frac in 0.0..2.0f64,
    ) {
        let matched = total * frac;
        let unbounded = matches!(naive_bound(total, matched), Speedup::Unbounded);
        prop_assert_eq!(unbounded, matched >= total);
    }

    /// Apportioned samples sum back to every consumer's latency total.
    #[test]
    fn apportion_conserves_latency(seed in any::<u64>()) {
        let mut r = rng(seed);
        let graph = random_graph(&mut r);
        let contributions = apportion(&graph);
        prop_assert!(max_conservation_error(&graph, &contributions) <= 1e-9);
    }

    /// Rendering a profile and parsing it back reaches a fixed point and
    /// preserves the summary counters.
    #[test]
    fn profile_rendering_round_trips(seed in any::<u64>()) {
        let arch = ArchSpec::volta_like();
        let mut r = rng(seed);
        let program = parse_program(&random_kernel_text(&mut r), &arch).unwrap();
        let profile = random_profile_for(&program, &mut r);
        let want = profile.summary();

        let first = render_profile(&[profile]);
        let parsed = parse_profile(&first).unwrap();
        prop_assert_eq!(parsed.len(), 1);
        let got = parsed[0].summary();
        prop_assert_eq!(got.total, want.total);
        prop_assert_eq!(got.active, want.active);
        prop_assert_eq!(got.latency, want.latency);
        prop_assert_eq!(render_profile(&parsed), first);
    }

    /// Instructions occupy a contiguous pc space in 16-byte steps, and
    /// every pc resolves back to its function, block, and index.
    #[test]
    fn program_layout_is_contiguous(seed in any::<u64>()) {
        let arch = ArchSpec::volta_like();
        let mut r = rng(seed);
        let program = parse_program(&random_kernel_text(&mut r), &arch).unwrap();
        let cfgs = build_cfg(&program);
        let mut next_base = 0u64;
        for (fi, function) in program.functions.iter().enumerate() {
            prop_assert_eq!(function.base_pc, next_base);
            for (k, inst) in function.instructions.iter().enumerate() {
                prop_assert_eq!(inst.pc, function.base_pc + 16 * k as u64);
                let (li, _lb, idx) = cfgs.locate(&program, inst.pc).unwrap();
                prop_assert_eq!(li, fi);
                prop_assert_eq!(idx, k);
                prop_assert!(cfgs.locate(&program, inst.pc + 8).is_none());
            }
            next_base = function.base_pc + 16 * function.instructions.len() as u64;
        }
        prop_assert!(cfgs.locate(&program, next_base).is_none());
    }

    /// In a straight-line kernel every forward pair is reachable with
    /// equal shortest and longest paths of exactly the index gap.
    #[test]
    fn straight_line_distances_are_exact(seed in any::<u64>()) {
        let arch = ArchSpec::volta_like();
        let mut r = rng(seed);
        let program = parse_program(&random_kernel_text(&mut r), &arch).unwrap();
        let cfgs = build_cfg(&program);
        let function = &program.functions[0];
        let cfg = &cfgs.cfgs[0];
        let n = function.instructions.len();
        let i = r.gen_range(0..n - 1);
        let j = r.gen_range(i + 1..n);
        let d = path_distance(function, cfg, i as u64 * 16, j as u64 * 16);
        prop_assert!(d.reachable);
        prop_assert_eq!(d.min_len, (j - i) as u64);
        prop_assert_eq!(d.max_len, (j - i) as u64);
    }
}

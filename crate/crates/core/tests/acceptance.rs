//! Acceptance gate: one test per shipping criterion. Every test prints a
//! single `ACCEPTANCE <name>: PASS|FAIL` line so the suite's verdict can
//! be scraped from the test output.

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use common::{
    fixture, ground_truth_config, ground_truth_kernels, max_conservation_error, random_graph,
    random_kernel_text, random_profile_for, rng, top_blame, top_oracle,
};
use gir_advisor::advisor::OptimizerId;
use gir_advisor::blamer::{
    apportion, attribute_profile, build_dependency_graph, prune_edges_subset, AttributedProfile,
    DetailedReason, PruneRule,
};
use gir_advisor::cfg::build_cfg;
use gir_advisor::driver::{run, DriverOptions, EmitMode};
use gir_advisor::estimate::{
    naive_bound, parallelism_speedup, refined_bound, scoped_bound, Speedup, SpeedupRecord,
};
use gir_advisor::isa::{parse_program, ArchSpec};
use gir_advisor::profile::sim::simulate;
use gir_advisor::profile::load_profile;
use rand::Rng;

fn verdict(name: &str, pass: bool) {
    println!("ACCEPTANCE {name}: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "acceptance criterion `{name}` failed");
}

fn finite(s: Speedup) -> Option<f64> {
    match s {
        Speedup::Finite(v) => Some(v),
        Speedup::Unbounded => None,
    }
}

/// The refined stall-elimination bound never exceeds 2x, across inputs
/// that exercise both arms of the `min(active, matched)` refinement.
#[test]
fn bound_theorem() {
    let start = Instant::now();
    let mut r = rng(0xB0DD);
    let mut active_arm = 0u32;
    let mut matched_arm = 0u32;
    let mut ok = true;
    for _ in 0..10_000 {
        let total = r.gen_range(1.0..1000.0f64);
        let active = r.gen_range(0.0..total);
        let matched = r.gen_range(0.0..(total - active).max(f64::MIN_POSITIVE));
        if active < matched {
            active_arm += 1;
        } else {
            matched_arm += 1;
        }
        match refined_bound(total, active, matched) {
            Speedup::Finite(v) => {
                if !(1.0 - 1e-12..=2.0 + 1e-12).contains(&v) {
                    ok = false;
                }
            }
            Speedup::Unbounded => ok = false,
        }
    }
    let pass = ok && active_arm >= 1000 && matched_arm >= 1000 && start.elapsed().as_secs_f64() < 1.0;
    verdict("bound_theorem", pass);
}

/// Each closed form reproduces its hand-computed value.
#[test]
fn closed_form_spot_checks() {
    let near = |s: Speedup, want: f64, tol: f64| finite(s).is_some_and(|v| (v - want).abs() <= tol);
    let pass = near(naive_bound(100.0, 50.0), 2.0, 1e-12)
        && near(refined_bound(100.0, 30.0, 50.0), 100.0 / 70.0, 1e-12)
        && near(scoped_bound(100.0, 20.0, 40.0), 1.25, 1e-12)
        && (parallelism_speedup(8.0, 4.0, 0.2, 1.0) - 1250.0 / 881.0).abs() <= 1e-9;
    verdict("closed_form_spot_checks", pass);
}

/// Apportioned stall samples always sum back to each consumer's latency
/// total, over randomized graphs with pruned edges and partial breakdowns.
#[test]
fn conservation() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..1000u64 {
        let mut r = rng(0x5EED_0000 + seed);
        let graph = random_graph(&mut r);
        let contributions = apportion(&graph);
        worst = worst.max(max_conservation_error(&graph, &contributions));
    }
    let pass = worst <= 1e-9 && start.elapsed().as_secs_f64() < 10.0;
    verdict("conservation", pass);
}

fn attributed(name: &str, arch: &ArchSpec) -> AttributedProfile {
    let text = std::fs::read_to_string(fixture(&format!("{name}.gir"))).unwrap();
    let program = parse_program(&text, arch).unwrap();
    let cfgs = build_cfg(&program);
    let profiles = load_profile(&fixture(&format!("{name}.prof"))).unwrap();
    attribute_profile(&program, &cfgs, &profiles[0], arch)
}

/// Three hand-traced kernels attribute exactly: a barrier chain, a
/// predicated producer pair, and a weighted split with a pruned edge.
#[test]
fn attribution_fixtures() {
    let arch = ArchSpec::volta_like();
    let near = |got: f64, want: f64| (got - want).abs() <= 1e-12;
    let by_def = |a: &AttributedProfile| -> BTreeMap<(u64, u64), (DetailedReason, f64)> {
        a.contributions
            .iter()
            .map(|c| ((c.def_pc, c.use_pc), (c.reason, c.samples)))
            .collect()
    };

    let chain = attributed("barrier_chain", &arch);
    let c = by_def(&chain);
    let chain_ok = chain.contributions.len() == 1
        && c.get(&(0x0, 0x40))
            .is_some_and(|(r, s)| *r == DetailedReason::GlobalMemoryDep && near(*s, 10.0));

    let pair = attributed("predicated_pair", &arch);
    let c = by_def(&pair);
    let pair_ok = pair.contributions.len() == 2
        && c.get(&(0x10, 0x30))
            .is_some_and(|(r, s)| *r == DetailedReason::ConstantMemoryDep && near(*s, 8.0 / 3.0))
        && c.get(&(0x20, 0x30))
            .is_some_and(|(r, s)| *r == DetailedReason::GlobalMemoryDep && near(*s, 16.0 / 3.0));

    let split = attributed("weighted_split", &arch);
    let c = by_def(&split);
    let split_ok = split.contributions.len() == 2
        && split.pruned.opcode == 1
        && c.get(&(0x10, 0x30))
            .is_some_and(|(r, s)| *r == DetailedReason::ConstantMemoryDep && near(*s, 6.0))
        && c.get(&(0x20, 0x30))
            .is_some_and(|(r, s)| *r == DetailedReason::GlobalMemoryDep && near(*s, 6.0));

    verdict("attribution_fixtures", chain_ok && pair_ok && split_ok);
}

/// Growing the rule set only ever removes more edges and only ever raises
/// single-dependency coverage, on random kernels and the fixed fixtures.
#[test]
fn pruning_monotonicity() {
    const PREFIXES: [&[PruneRule]; 4] = [
        &[],
        &[PruneRule::Opcode],
        &[PruneRule::Opcode, PruneRule::Dominator],
        &[PruneRule::Opcode, PruneRule::Dominator, PruneRule::Latency],
    ];
    let arch = ArchSpec::volta_like();
    let mut pass = true;

    let mut check = |source: &str, profile_seed: u64| {
        let program = parse_program(source, &arch).unwrap();
        let cfgs = build_cfg(&program);
        let mut r = rng(profile_seed);
        let profile = random_profile_for(&program, &mut r);
        let base = build_dependency_graph(&program, &cfgs, &profile, &arch);
        let mut last_live = usize::MAX;
        let mut last_cov = -1.0f64;
        for rules in PREFIXES {
            let mut graph = base.clone();
            prune_edges_subset(&mut graph, &program, &cfgs, &arch, rules);
            let live = graph.edges.iter().filter(|e| e.pruned_by.is_none()).count();
            let cov = graph.single_dependency_coverage();
            if live > last_live || cov < last_cov - 1e-12 {
                pass = false;
            }
            last_live = live;
            last_cov = cov;
        }
    };

    for seed in 0..500u64 {
        let mut r = rng(0x9A9A_0000 + seed);
        let source = random_kernel_text(&mut r);
        check(&source, 0x7F0F_0000 + seed);
    }
    for name in ["barrier_chain", "predicated_pair", "weighted_split"] {
        let source = std::fs::read_to_string(fixture(&format!("{name}.gir"))).unwrap();
        check(&source, 0xF1F1);
    }
    verdict("pruning_monotonicity", pass);
}

/// Recomputes a record's speedup from nothing but its reported inputs.
fn recompute(record: &SpeedupRecord) -> (Option<f64>, Option<Option<f64>>) {
    let get = |k: &str| record.inputs.get(k).copied();
    let stall_form = |total: f64, limit: f64, matched: f64| {
        let speedup = if limit >= total {
            None
        } else {
            Some((total / (total - limit)).max(1.0))
        };
        let unrefined = if matched >= total { None } else { Some(total / (total - matched)) };
        (speedup, Some(unrefined))
    };
    if let (Some(t), Some(a), Some(m)) = (get("total"), get("active"), get("matched_latency")) {
        return stall_form(t, a.min(m), m);
    }
    if let (Some(t), Some(a), Some(m)) =
        (get("total"), get("scope_active"), get("scope_matched_latency"))
    {
        return stall_form(t, a.min(m), m);
    }
    if let (Some(wn), Some(w), Some(rate), Some(f)) =
        (get("warps_new"), get("warps"), get("issue_rate"), get("fraction"))
    {
        let utilization = |warps: f64| 1.0 - (1.0 - rate).powf(warps);
        let cost_ratio = if rate <= 0.0 { 1.0 } else { utilization(w) / utilization(wn) };
        let bonus = get("stall_bonus").unwrap_or(1.0);
        return (Some(((wn / w) * cost_ratio * f * bonus).max(1.0)), None);
    }
    (None, None)
}

fn speedups_match(record: &SpeedupRecord) -> bool {
    let (want_speedup, want_unrefined) = recompute(record);
    let near = |got: Speedup, want: Option<f64>| match (finite(got), want) {
        (Some(g), Some(w)) => (g - w).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    };
    if !near(record.speedup, want_speedup) {
        return false;
    }
    match (record.unrefined, want_unrefined) {
        (None, _) => true,
        (Some(got), Some(want)) => near(got, want),
        (Some(_), None) => false,
    }
}

/// Simulating the loop kernel end to end surfaces the loop-oriented
/// advice near the top, and every reported speedup is reproducible from
/// the inputs printed next to it.
#[test]
fn end_to_end_simulation() {
    let start = Instant::now();
    let mut opts = DriverOptions::new(fixture("loop.gir"));
    opts.simulate = true;
    opts.sim_config = Some(fixture("loop.sim"));
    opts.emit = EmitMode::Machine;
    let out = run(&opts).unwrap();
    let report = &out.reports[0];

    let top2: Vec<OptimizerId> = report.advice.iter().take(2).map(|a| a.optimizer).collect();
    let loop_oriented = top2
        .iter()
        .any(|o| matches!(o, OptimizerId::LoopUnrolling | OptimizerId::CodeReordering));
    let reproducible = report.advice.iter().all(|a| speedups_match(&a.estimate));
    let pass = loop_oriented
        && reproducible
        && !report.advice.is_empty()
        && start.elapsed().as_secs_f64() < 5.0;
    verdict("end_to_end_simulation", pass);
}

/// Across the ground-truth corpus, the producer the attribution pass
/// blames hardest matches the simulator's recorded producer for at least
/// 95% of the stalled pcs.
#[test]
fn oracle_agreement() {
    let arch = ArchSpec::volta_like();
    let kernels = ground_truth_kernels();
    let mut compared = 0u32;
    let mut agreed = 0u32;
    for (i, (name, source)) in kernels.iter().enumerate() {
        let program = parse_program(source, &arch)
            .unwrap_or_else(|e| panic!("kernel {name} failed to parse: {e}"));
        let cfgs = build_cfg(&program);
        let config = ground_truth_config(0xC0FFEE + i as u64);
        let result = simulate(&program, &arch, &config)
            .unwrap_or_else(|e| panic!("kernel {name} failed to simulate: {e}"));
        let oracle = result.oracle.expect("oracle requested");
        let attributed = attribute_profile(&program, &cfgs, &result.profile, &arch);
        let blame = top_blame(&attributed.contributions);
        for (use_pc, oracle_def) in top_oracle(&oracle) {
            if let Some(blame_def) = blame.get(&use_pc) {
                compared += 1;
                if *blame_def == oracle_def {
                    agreed += 1;
                }
            }
        }
    }
    let agreement = agreed as f64 / compared.max(1) as f64;
    let pass = kernels.len() >= 10 && compared >= 10 && agreement >= 0.95;
    if !pass {
        eprintln!("oracle agreement {agreed}/{compared} = {agreement:.3}");
    }
    verdict("oracle_agreement", pass);
}

fn advise_bytes(args: &[&str]) -> (bool, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_advise"))
        .args(args)
        .output()
        .expect("spawn advise");
    (out.status.success(), out.stdout)
}

/// Byte-identical stdout across repeated runs, for both a recorded
/// profile and a seeded simulation.
#[test]
fn cli_determinism() {
    let ratio_gir = fixture("ratio.gir");
    let ratio_prof = fixture("ratio.prof");
    let loop_gir = fixture("loop.gir");
    let loop_sim = fixture("loop.sim");
    let profile_args = [
        "--program",
        ratio_gir.to_str().unwrap(),
        "--profile",
        ratio_prof.to_str().unwrap(),
        "--emit",
        "both",
    ];
    let sim_args = [
        "--program",
        loop_gir.to_str().unwrap(),
        "--simulate",
        "--sim-config",
        loop_sim.to_str().unwrap(),
        "--seed",
        "9",
        "--emit",
        "both",
    ];
    let (ok_a1, out_a1) = advise_bytes(&profile_args);
    let (ok_a2, out_a2) = advise_bytes(&profile_args);
    let (ok_b1, out_b1) = advise_bytes(&sim_args);
    let (ok_b2, out_b2) = advise_bytes(&sim_args);
    let pass = ok_a1 && ok_a2 && ok_b1 && ok_b2 && out_a1 == out_a2 && out_b1 == out_b2
        && !out_a1.is_empty()
        && !out_b1.is_empty();
    verdict("cli_determinism", pass);
}

/// A scripted profile with exact halves comes out as exact ratios: a 0.5
/// issue rate and a 2x reordering bound, refined and unrefined alike.
#[test]
fn scripted_ratios() {
    let mut opts = DriverOptions::new(fixture("ratio.gir"));
    opts.profile = Some(fixture("ratio.prof"));
    opts.emit = EmitMode::Machine;
    let out = run(&opts).unwrap();
    let report = &out.reports[0];
    let reorder = report
        .advice
        .iter()
        .find(|a| a.optimizer == OptimizerId::CodeReordering);
    let exact = |s: Speedup, want: f64| finite(s).is_some_and(|v| (v - want).abs() <= 1e-12);
    let pass = (report.summary.issue_rate - 0.5).abs() <= 1e-12
        && reorder.is_some_and(|a| {
            exact(a.estimate.speedup, 2.0)
                && a.estimate.unrefined.is_some_and(|u| exact(u, 2.0))
        });
    verdict("scripted_ratios", pass);
}

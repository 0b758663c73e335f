//! Backward slicing: find the definitions a stalled instruction waits on.
//!
//! For every register, predicate, and barrier a use reads, walk the CFG
//! backward collecting instructions that write it. A definition guarded by
//! a predicate only covers the executions where that predicate held, so
//! the walk keeps going until the accumulated guards cover the use's own
//! guard (both polarities of a predicate close to "always"). Each
//! register's search carries a fixed instruction budget so pathological
//! control flow cannot blow up analysis time.

use std::collections::BTreeSet;

use crate::cfg::Cfg;
use crate::isa::{reads_writes, FunctionDef, Predicate, PredicateSet, RegisterRef};

/// Instructions scanned per (use, register) before the search gives up.
const SLICE_BUDGET: usize = 512;

/// One definition reaching the use for one consumed register.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterDependency {
    pub def_pc: u64,
    /// The register (possibly a barrier register) linking def to use.
    pub register: RegisterRef,
    /// The def holds this barrier while *reading* its sources, so the use
    /// overwriting them is a write-after-read hazard, not a value flow.
    pub via_read_barrier: bool,
}

/// All definitions reaching `use_pc`, one entry per (def, register) pair
/// discovered. Special registers are hardware-provided and never sliced.
pub fn backward_slice(func: &FunctionDef, cfg: &Cfg, use_pc: u64) -> Vec<RegisterDependency> {
    let Some(use_idx) = func.index_of_pc(use_pc) else { return Vec::new() };
    let use_inst = &func.instructions[use_idx];
    let (use_reads, _) = reads_writes(use_inst);
    let mut out = Vec::new();
    for target in use_reads {
        if matches!(target, RegisterRef::Special(_)) {
            continue;
        }
        slice_register(func, cfg, use_idx, target, use_inst.predicate, &mut out);
    }
    out
}

fn slice_register(
    func: &FunctionDef,
    cfg: &Cfg,
    use_idx: usize,
    target: RegisterRef,
    use_pred: Predicate,
    out: &mut Vec<RegisterDependency>,
) {
    let use_pc = func.instructions[use_idx].pc;
    let Some(use_block) = cfg.block_of_index(use_idx) else { return };
    let mut budget = SLICE_BUDGET;
    let mut found: BTreeSet<(u64, bool)> = BTreeSet::new();

    // Work items scan a block backward from `upper` (exclusive) to its
    // start, carrying the predicate cover accumulated on this path. A
    // (block, cover) state is expanded at most once.
    let mut work: Vec<(usize, usize, PredicateSet)> = Vec::new();
    let mut seen: BTreeSet<(usize, u16)> = BTreeSet::new();
    work.push((use_block, use_idx, PredicateSet::default()));

    while let Some((bid, upper, mut cover)) = work.pop() {
        let blk = &cfg.blocks[bid];
        let mut covered = false;
        for idx in (blk.start..upper).rev() {
            if budget == 0 {
                return;
            }
            budget -= 1;
            let inst = &func.instructions[idx];
            if inst.pc == use_pc {
                continue; // a loop brought us back to the use itself
            }
            let (_, writes) = reads_writes(inst);
            if !writes.contains(&target) {
                continue;
            }
            let via_read_barrier = matches!(
                target,
                RegisterRef::Barrier(i) if inst.control.read_barrier == Some(i)
            );
            if found.insert((inst.pc, via_read_barrier)) {
                out.push(RegisterDependency { def_pc: inst.pc, register: target, via_read_barrier });
            }
            cover.insert(inst.predicate);
            if cover.contains(use_pred) {
                covered = true;
                break;
            }
        }
        if !covered {
            for &p in &cfg.blocks[bid].preds {
                if seen.insert((p, cover.key())) {
                    work.push((p, cfg.blocks[p].end, cover));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::build_cfg;
    use crate::isa::{parse_program, ArchSpec};

    fn slice(src: &str, use_pc: u64) -> Vec<RegisterDependency> {
        let arch = ArchSpec::volta_like();
        let p = parse_program(src, &arch).unwrap();
        let cfgs = build_cfg(&p);
        backward_slice(&p.functions[0], cfgs.for_function(0), use_pc)
    }

    #[test]
    fn nearest_unpredicated_def_shadows_older_ones() {
        let deps = slice(
            "FUNC main:\n  MOV R0, 1\n  MOV R0, 2\n  IADD R1, R0, R2\n  EXIT\n",
            0x20,
        );
        let defs: Vec<u64> = deps.iter().map(|d| d.def_pc).collect();
        assert_eq!(defs, vec![0x10], "the older MOV is fully shadowed");
    }

    #[test]
    fn predicated_def_keeps_the_search_alive() {
        let deps = slice(
            "FUNC main:\n  MOV R0, 1\n  @P0 MOV R0, 2\n  IADD R1, R0, R2\n  EXIT\n",
            0x20,
        );
        let mut defs: Vec<u64> = deps.iter().map(|d| d.def_pc).collect();
        defs.sort();
        assert_eq!(defs, vec![0x0, 0x10], "both defs reach the unpredicated use");
    }

    #[test]
    fn complementary_predicates_close_the_search() {
        let deps = slice(
            "FUNC main:\n  MOV R0, 9\n  @!P0 MOV R0, 1\n  @P0 MOV R0, 2\n  IADD R1, R0, R2\n  EXIT\n",
            0x30,
        );
        let mut defs: Vec<u64> = deps.iter().map(|d| d.def_pc).collect();
        defs.sort();
        assert_eq!(defs, vec![0x10, 0x20], "P0 and !P0 together cover always");
    }

    #[test]
    fn walks_across_blocks_and_loops() {
        let deps = slice(
            "FUNC main:
  MOV R0, 0
LABEL head:
  IADD R1, R0, R2
  {WB0} LDG.32 R0, [R4]
  @P0 BRA head
  {W0} IADD R5, R0, R1
  EXIT
",
            0x10,
        );
        // R0 at the loop-body use reaches both the init MOV (first trip)
        // and the load at the loop bottom (later trips).
        let mut r0: Vec<u64> =
            deps.iter().filter(|d| d.register == RegisterRef::General(0)).map(|d| d.def_pc).collect();
        r0.sort();
        assert_eq!(r0, vec![0x0, 0x20]);
    }

    #[test]
    fn barrier_targets_resolve_to_their_setters() {
        let deps = slice(
            "FUNC main:\n  {WB1} LDG.32 R0, [R2]\n  {RB2} STG.32 [R4], R6\n  {W12} IADD R6, R0, R1\n  EXIT\n",
            0x20,
        );
        let b1: Vec<_> = deps
            .iter()
            .filter(|d| d.register == RegisterRef::Barrier(1))
            .collect();
        assert_eq!(b1.len(), 1);
        assert_eq!((b1[0].def_pc, b1[0].via_read_barrier), (0x0, false));
        let b2: Vec<_> = deps
            .iter()
            .filter(|d| d.register == RegisterRef::Barrier(2))
            .collect();
        assert_eq!(b2.len(), 1);
        assert_eq!((b2[0].def_pc, b2[0].via_read_barrier), (0x10, true));
    }

    #[test]
    fn pathological_loops_stay_within_budget() {
        // Thousands of predicated defs in a loop: the search terminates
        // and reports at most the budgeted number of instructions.
        let mut src = String::from("FUNC main:\nLABEL head:\n");
        for _ in 0..600 {
            src.push_str("  @P0 MOV R0, 1\n");
        }
        src.push_str("  @P1 BRA head\n  IADD R1, R0, R2\n  EXIT\n");
        let arch = ArchSpec::volta_like();
        let p = parse_program(&src, &arch).unwrap();
        let cfgs = build_cfg(&p);
        let use_pc = p.functions[0].instructions[601].pc;
        let deps = backward_slice(&p.functions[0], cfgs.for_function(0), use_pc);
        assert!(!deps.is_empty());
        assert!(deps.len() <= SLICE_BUDGET);
    }
}

//! Dominator analysis and natural-loop detection.

use std::collections::BTreeSet;

use super::Cfg;

/// One loop (or flagged irreducible region).
#[derive(Debug, Clone)]
pub struct LoopInfo {
    /// Header block (for irreducible regions: the smallest-id entry block).
    pub header: usize,
    /// Member blocks, header included.
    pub members: BTreeSet<usize>,
    /// Index of the innermost enclosing loop, if any.
    pub parent: Option<usize>,
    /// True for regions with multiple entries; loop-scoped optimizers skip
    /// these.
    pub irreducible: bool,
}

/// The loop forest of one function.
#[derive(Debug, Clone, Default)]
pub struct LoopNest {
    pub loops: Vec<LoopInfo>,
}

impl LoopNest {
    /// Index of the innermost (smallest) reducible loop containing `block`.
    pub fn innermost_containing(&self, block: usize) -> Option<usize> {
        self.loops
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.irreducible && l.members.contains(&block))
            .min_by_key(|(_, l)| l.members.len())
            .map(|(i, _)| i)
    }

    /// Loops (reducible only) containing `block`, innermost first.
    pub fn containing(&self, block: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .loops
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.irreducible && l.members.contains(&block))
            .map(|(i, _)| i)
            .collect();
        v.sort_by_key(|i| self.loops[*i].members.len());
        v
    }
}

/// Iterative dominator computation over reachable blocks; bitset per block.
/// Returns, for each block, the set of its dominators (self included).
/// Unreachable blocks get an empty set.
pub(crate) fn dominators(cfg: &Cfg) -> Vec<BTreeSet<usize>> {
    let n = cfg.blocks.len();
    let mut dom: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    if n == 0 {
        return dom;
    }
    let all: BTreeSet<usize> = (0..n).filter(|b| cfg.blocks[*b].reachable).collect();
    for b in 0..n {
        if !cfg.blocks[b].reachable {
            continue;
        }
        dom[b] = if b == 0 { [0].into_iter().collect() } else { all.clone() };
    }
    let mut changed = true;
    while changed {
        changed = false;
        for b in 1..n {
            if !cfg.blocks[b].reachable {
                continue;
            }
            let mut new: Option<BTreeSet<usize>> = None;
            for &p in &cfg.blocks[b].preds {
                if !cfg.blocks[p].reachable {
                    continue;
                }
                new = Some(match new {
                    None => dom[p].clone(),
                    Some(acc) => acc.intersection(&dom[p]).copied().collect(),
                });
            }
            let mut new = new.unwrap_or_default();
            new.insert(b);
            if new != dom[b] {
                dom[b] = new;
                changed = true;
            }
        }
    }
    dom
}

/// Finds natural loops (merged per header) plus flagged irreducible regions.
pub fn find_loops(cfg: &Cfg) -> LoopNest {
    let dom = dominators(cfg);
    let mut nest = LoopNest::default();

    // Natural loops from back edges u -> h where h dominates u.
    let mut by_header: std::collections::BTreeMap<usize, BTreeSet<usize>> =
        std::collections::BTreeMap::new();
    for u in 0..cfg.blocks.len() {
        if !cfg.blocks[u].reachable {
            continue;
        }
        for &(h, _) in &cfg.blocks[u].succs {
            if dom[u].contains(&h) {
                let members = by_header.entry(h).or_default();
                members.insert(h);
                // Walk predecessors backwards from the latch, staying out of
                // the header.
                let mut stack = vec![u];
                while let Some(b) = stack.pop() {
                    if members.contains(&b) {
                        continue;
                    }
                    members.insert(b);
                    for &p in &cfg.blocks[b].preds {
                        if cfg.blocks[p].reachable && !members.contains(&p) {
                            stack.push(p);
                        }
                    }
                }
            }
        }
    }
    for (header, members) in by_header {
        nest.loops.push(LoopInfo { header, members, parent: None, irreducible: false });
    }

    // Irreducible regions: nontrivial SCCs with more than one entry block.
    for scc in sccs(cfg) {
        if scc.len() < 2 {
            continue;
        }
        let set: BTreeSet<usize> = scc.iter().copied().collect();
        let entries: Vec<usize> = scc
            .iter()
            .copied()
            .filter(|&b| {
                cfg.blocks[b].preds.iter().any(|p| !set.contains(p) && cfg.blocks[*p].reachable)
                    || b == 0
            })
            .collect();
        if entries.len() > 1 {
            nest.loops.push(LoopInfo {
                header: entries.iter().copied().min().unwrap(),
                members: set,
                parent: None,
                irreducible: true,
            });
        }
    }

    // Nesting: parent = the smallest strictly-containing loop.
    for i in 0..nest.loops.len() {
        let mut best: Option<usize> = None;
        for j in 0..nest.loops.len() {
            if i == j {
                continue;
            }
            let (a, b) = (&nest.loops[i], &nest.loops[j]);
            if a.members.is_subset(&b.members) && a.members.len() < b.members.len() {
                if best.map(|k| nest.loops[j].members.len() < nest.loops[k].members.len()).unwrap_or(true) {
                    best = Some(j);
                }
            }
        }
        nest.loops[i].parent = best;
    }
    nest
}

/// Tarjan SCCs over reachable blocks, deterministic by block id.
fn sccs(cfg: &Cfg) -> Vec<Vec<usize>> {
    let n = cfg.blocks.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next = 0usize;
    let mut out: Vec<Vec<usize>> = Vec::new();

    // Explicit DFS to avoid recursion limits on long functions.
    enum Frame {
        Enter(usize),
        Continue(usize, usize),
    }
    for root in 0..n {
        if !cfg.blocks[root].reachable || index[root] != usize::MAX {
            continue;
        }
        let mut work = vec![Frame::Enter(root)];
        while let Some(frame) = work.pop() {
            match frame {
                Frame::Enter(v) => {
                    index[v] = next;
                    low[v] = next;
                    next += 1;
                    stack.push(v);
                    on_stack[v] = true;
                    work.push(Frame::Continue(v, 0));
                }
                Frame::Continue(v, si) => {
                    if si < cfg.blocks[v].succs.len() {
                        work.push(Frame::Continue(v, si + 1));
                        let w = cfg.blocks[v].succs[si].0;
                        if index[w] == usize::MAX {
                            work.push(Frame::Enter(w));
                        } else if on_stack[w] {
                            low[v] = low[v].min(index[w]);
                        }
                    } else {
                        if let Some(Frame::Continue(parent, _)) = work.last() {
                            let parent = *parent;
                            low[parent] = low[parent].min(low[v]);
                        }
                        if low[v] == index[v] {
                            let mut comp = Vec::new();
                            while let Some(w) = stack.pop() {
                                on_stack[w] = false;
                                comp.push(w);
                                if w == v {
                                    break;
                                }
                            }
                            comp.sort_unstable();
                            // Only keep components that actually cycle.
                            let cyclic = comp.len() > 1
                                || cfg.blocks[v].succs.iter().any(|(s, _)| *s == v);
                            if cyclic {
                                out.push(comp);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::build_cfg;
    use crate::isa::{parse_program, ArchSpec};

    fn loops_of(text: &str) -> (crate::isa::Program, crate::cfg::ProgramCfg, LoopNest) {
        let arch = ArchSpec::volta_like();
        let p = parse_program(text, &arch).unwrap();
        let cfg = build_cfg(&p);
        let nest = find_loops(&cfg.cfgs[0]);
        (p, cfg, nest)
    }

    #[test]
    fn doubly_nested_loops() {
        let text = "\
FUNC f:
  MOV R1, 0
LABEL outer:
  MOV R2, 0
LABEL inner:
  IADD R2, R2, 1
  ISETP.LT P0, R2, R4
  @P0 BRA inner
  IADD R1, R1, 1
  ISETP.LT P1, R1, R5
  @P1 BRA outer
  EXIT
";
        let (_, _, nest) = loops_of(text);
        assert_eq!(nest.loops.len(), 2);
        let inner = nest.loops.iter().position(|l| l.members.len() == 1).unwrap();
        let outer = 1 - inner;
        assert_eq!(nest.loops[inner].parent, Some(outer));
        assert_eq!(nest.loops[outer].parent, None);
        assert!(nest.loops[inner].members.is_subset(&nest.loops[outer].members));
        assert!(!nest.loops[inner].irreducible);
    }

    #[test]
    fn loop_containing_sync() {
        // Modeled on a reduction loop with a barrier inside.
        let text = "\
FUNC f:
  MOV R1, 0
LABEL head:
  LDS R2, [R3]
  IADD R1, R1, R2
  BAR.SYNC 0
  ISETP.LT P0, R1, R4
  @P0 BRA head
  EXIT
";
        let (p, cfg, nest) = loops_of(text);
        assert_eq!(nest.loops.len(), 1);
        // The BAR.SYNC instruction's block is a member of the loop.
        let bar_idx = p.functions[0]
            .instructions
            .iter()
            .position(|i| i.opcode == "BAR")
            .unwrap();
        let bar_block = cfg.cfgs[0].block_of_index(bar_idx).unwrap();
        assert!(nest.loops[0].members.contains(&bar_block));
    }

    #[test]
    fn irreducible_region_flagged() {
        // Two mutually-branching blocks, both entered from the outside.
        let text = "\
FUNC f:
  @P0 BRA b
LABEL a:
  @P1 BRA b
  EXIT
LABEL b:
  @P2 BRA a
  EXIT
";
        let (_, _, nest) = loops_of(text);
        let irr: Vec<_> = nest.loops.iter().filter(|l| l.irreducible).collect();
        assert_eq!(irr.len(), 1);
        assert!(nest.loops.iter().filter(|l| !l.irreducible).count() == 0);
    }

    #[test]
    fn straightline_has_no_loops() {
        let text = "FUNC f:\n  MOV R1, 0\n  IADD R1, R1, 1\n  EXIT\n";
        let (_, _, nest) = loops_of(text);
        assert!(nest.loops.is_empty());
    }
}

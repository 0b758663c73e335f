//! Instruction-count distances between two PCs over the CFG.
//!
//! `min_len` is the minimum number of instructions executed on any path from
//! `i` (exclusive) to `j` (inclusive); `max_len` is the maximum over the DAG
//! obtained by deleting retreating edges (loops "unrolled"), except that when
//! reaching `j` at all requires a back edge, exactly one back-edge traversal
//! is allowed ("unrolled once"). Both are deterministic.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::isa::FunctionDef;

use super::Cfg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathDistance {
    pub reachable: bool,
    pub min_len: u64,
    pub max_len: u64,
}

const UNREACHABLE: PathDistance = PathDistance { reachable: false, min_len: 0, max_len: 0 };

/// Distance from the instruction at `i_pc` to the one at `j_pc`. Both must
/// belong to `func`; queries across functions are not reachable.
pub fn path_distance(func: &FunctionDef, cfg: &Cfg, i_pc: u64, j_pc: u64) -> PathDistance {
    let (i_idx, j_idx) = match (func.index_of_pc(i_pc), func.index_of_pc(j_pc)) {
        (Some(a), Some(b)) => (a, b),
        _ => return UNREACHABLE,
    };
    let (bi, bj) = match (cfg.block_of_index(i_idx), cfg.block_of_index(j_idx)) {
        (Some(a), Some(b)) => (a, b),
        _ => return UNREACHABLE,
    };

    // Same-block, j after i: the straight-line offset, for both bounds
    // (a DAG path can never re-enter the block).
    if bi == bj && j_idx > i_idx {
        let d = (j_idx - i_idx) as u64;
        return PathDistance { reachable: true, min_len: d, max_len: d };
    }

    let tail_i = (cfg.blocks[bi].end - 1 - i_idx) as u64; // instrs after i in its block
    let head_j = (j_idx - cfg.blocks[bj].start) as u64 + 1; // instrs up to and incl. j

    // --- min_len: Dijkstra over blocks, cycles allowed. dist[b] = fewest
    // instructions executed after i before entering block b.
    let n = cfg.blocks.len();
    let mut dist = vec![u64::MAX; n];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    for &(s, _) in &cfg.blocks[bi].succs {
        if tail_i < dist[s] {
            dist[s] = tail_i;
            heap.push(Reverse((tail_i, s)));
        }
    }
    while let Some(Reverse((d, b))) = heap.pop() {
        if d > dist[b] {
            continue;
        }
        let cross = d + cfg.blocks[b].len() as u64;
        for &(s, _) in &cfg.blocks[b].succs {
            if cross < dist[s] {
                dist[s] = cross;
                heap.push(Reverse((cross, s)));
            }
        }
    }
    if dist[bj] == u64::MAX {
        return UNREACHABLE;
    }
    let min_len = dist[bj] + head_j;

    // --- max_len: longest path on the retreat-free DAG.
    let dag = dag_succs(cfg);
    // Phase 1: longest instruction count from i (exclusive) through the exit
    // of each DAG-reachable block.
    let order = topo_order(&dag, n);
    let mut exit1 = vec![None::<u64>; n]; // longest to the *exit* of block b
    exit1[bi] = Some(tail_i);
    for &b in &order {
        let Some(base) = exit1[b] else { continue };
        for &s in &dag[b] {
            let cand = base + cfg.blocks[s].len() as u64;
            if exit1[s].map(|v| cand > v).unwrap_or(true) {
                exit1[s] = Some(cand);
            }
        }
    }
    // Direct DAG answer: longest entry into bj plus the head, where entry
    // into bj = exit of a DAG predecessor. Recompute from exit1 of preds.
    let mut direct: Option<u64> = None;
    for b in 0..n {
        if dag[b].contains(&bj) {
            if let Some(v) = exit1[b] {
                let cand = v + head_j;
                direct = Some(direct.map(|d: u64| d.max(cand)).unwrap_or(cand));
            }
        }
    }

    if let Some(max_len) = direct {
        return PathDistance { reachable: true, min_len, max_len: max_len.max(min_len) };
    }

    // Unrolled-once: allow exactly one removed (retreating) edge u -> h,
    // charging the longest DAG path i..exit(u), then the longest DAG path
    // entry(h)..j.
    let mut best: Option<u64> = None;
    for (u, h) in retreat_edges(cfg, &dag) {
        let Some(to_u) = exit1[u] else { continue };
        if let Some(from_h) = longest_from_entry(cfg, &dag, &order, h, bj, head_j) {
            let cand = to_u + from_h;
            best = Some(best.map(|b: u64| b.max(cand)).unwrap_or(cand));
        }
    }
    match best {
        Some(max_len) => PathDistance { reachable: true, min_len, max_len: max_len.max(min_len) },
        // Reachable only via two or more back edges; fall back to the lower
        // bound so min <= max still holds.
        None => PathDistance { reachable: true, min_len, max_len: min_len },
    }
}

/// Longest DAG path from the entry of `h` to `j` (inclusive), or None when
/// `j`'s block is not DAG-reachable from `h`.
fn longest_from_entry(
    cfg: &Cfg,
    dag: &[Vec<usize>],
    order: &[usize],
    h: usize,
    bj: usize,
    head_j: u64,
) -> Option<u64> {
    let n = cfg.blocks.len();
    let mut entry = vec![None::<u64>; n];
    entry[h] = Some(0);
    for &b in order {
        let Some(base) = entry[b] else { continue };
        let cross = base + cfg.blocks[b].len() as u64;
        for &s in &dag[b] {
            if entry[s].map(|v| cross > v).unwrap_or(true) {
                entry[s] = Some(cross);
            }
        }
    }
    entry[bj].map(|v| v + head_j)
}

/// DAG successor lists: the CFG edges minus retreating edges found by a
/// deterministic DFS from the entry (successors in declaration order).
fn dag_succs(cfg: &Cfg) -> Vec<Vec<usize>> {
    let retreat = retreat_set(cfg);
    cfg.blocks
        .iter()
        .map(|b| {
            b.succs
                .iter()
                .map(|(s, _)| *s)
                .filter(|s| !retreat.contains(&(b.id, *s)))
                .collect()
        })
        .collect()
}

fn retreat_edges(cfg: &Cfg, _dag: &[Vec<usize>]) -> Vec<(usize, usize)> {
    retreat_set(cfg).into_iter().collect()
}

/// Edges whose target is on the DFS stack when traversed (includes every
/// natural back edge; breaks all cycles, including irreducible ones).
fn retreat_set(cfg: &Cfg) -> std::collections::BTreeSet<(usize, usize)> {
    let n = cfg.blocks.len();
    let mut color = vec![0u8; n]; // 0 white, 1 on stack, 2 done
    let mut out = std::collections::BTreeSet::new();
    if n == 0 {
        return out;
    }
    // Iterative DFS from every root (entry first) so unreachable cycles are
    // also broken.
    let mut roots: Vec<usize> = vec![0];
    roots.extend(1..n);
    for root in roots {
        if color[root] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = 1;
        while let Some((b, si)) = stack.last().copied() {
            if si < cfg.blocks[b].succs.len() {
                stack.last_mut().unwrap().1 += 1;
                let s = cfg.blocks[b].succs[si].0;
                match color[s] {
                    0 => {
                        color[s] = 1;
                        stack.push((s, 0));
                    }
                    1 => {
                        out.insert((b, s));
                    }
                    _ => {}
                }
            } else {
                color[b] = 2;
                stack.pop();
            }
        }
    }
    out
}

/// Kahn topological order of the DAG (deterministic: smallest id first).
fn topo_order(dag: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut indeg = vec![0usize; n];
    for succs in dag {
        for &s in succs {
            indeg[s] += 1;
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..n).filter(|b| indeg[*b] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&b) = ready.iter().next() {
        ready.remove(&b);
        order.push(b);
        for &s in &dag[b] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    order
}

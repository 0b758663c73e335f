//! Control-flow analysis: basic blocks, loop nests, path distances, and
//! program structure (function kinds, inline frames, source locations).

use std::fmt::Write as _;

use crate::isa::{FunctionDef, Instruction, OpcodeClass, Program};

mod distance;
mod loops;
mod structure;

pub use distance::{path_distance, PathDistance};
pub use loops::{find_loops, LoopInfo, LoopNest};
pub use structure::{FunctionKind, InlineFrame, ProgramStructure, StructureError};

/// How control reaches a successor block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Taken,
    Fallthrough,
}

/// A maximal straight-line instruction run. `start..end` indexes into the
/// owning function's instruction list.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub id: usize,
    pub start: usize,
    pub end: usize,
    pub succs: Vec<(usize, EdgeKind)>,
    pub preds: Vec<usize>,
    /// False for blocks no path from the entry reaches; they are kept (and
    /// flagged) rather than dropped.
    pub reachable: bool,
}

impl BasicBlock {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Per-function control-flow graph. Block 0 is the entry.
#[derive(Debug, Clone)]
pub struct Cfg {
    pub function: usize,
    pub blocks: Vec<BasicBlock>,
}

impl Cfg {
    /// Block containing the instruction at `index`.
    pub fn block_of_index(&self, index: usize) -> Option<usize> {
        self.blocks.iter().position(|b| index >= b.start && index < b.end)
    }

    pub fn last_instr<'a>(&self, func: &'a FunctionDef, block: usize) -> Option<&'a Instruction> {
        let b = &self.blocks[block];
        if b.is_empty() {
            None
        } else {
            Some(&func.instructions[b.end - 1])
        }
    }
}

/// CFGs for every function of a program, addressable by global pc.
#[derive(Debug, Clone)]
pub struct ProgramCfg {
    pub cfgs: Vec<Cfg>,
}

impl ProgramCfg {
    pub fn for_function(&self, index: usize) -> &Cfg {
        &self.cfgs[index]
    }

    /// (function index, block id, instruction index) for a global pc.
    pub fn locate(&self, program: &Program, pc: u64) -> Option<(usize, usize, usize)> {
        let (fi, func) = program.function_at(pc)?;
        let idx = func.index_of_pc(pc)?;
        let block = self.cfgs[fi].block_of_index(idx)?;
        Some((fi, block, idx))
    }
}

/// True when `inst` ends a basic block.
fn is_terminator(inst: &Instruction) -> bool {
    inst.opcode_class == OpcodeClass::Control
}

/// Successor semantics of a control instruction.
enum ControlFlow {
    /// Unconditional branch to a pc (or off the end of the function).
    Jump(u64),
    /// Predicated branch: taken edge plus fallthrough.
    Branch(u64),
    /// Function exit (return/exit): no successors.
    Exit,
    /// Control instruction that continues to the next instruction (calls).
    Fallthrough,
}

fn control_flow(program: &Program, inst: &Instruction) -> ControlFlow {
    match inst.branch_target {
        Some(t) if inst.predicate.is_always() => ControlFlow::Jump(t),
        Some(t) => ControlFlow::Branch(t),
        None => {
            if program.call_target(inst).is_some() {
                ControlFlow::Fallthrough
            } else if inst.operands.is_empty() {
                ControlFlow::Exit
            } else {
                // Conservative: unknown control with operands falls through.
                ControlFlow::Fallthrough
            }
        }
    }
}

/// Builds the control-flow graph of every function. A branch target always
/// begins a block, and each block has exactly one terminator: its trailing
/// control instruction, or an implicit fallthrough into the next block.
pub fn build_cfg(program: &Program) -> ProgramCfg {
    let cfgs = program
        .functions
        .iter()
        .enumerate()
        .map(|(fi, func)| build_function_cfg(program, fi, func))
        .collect();
    ProgramCfg { cfgs }
}

fn build_function_cfg(program: &Program, fi: usize, func: &FunctionDef) -> Cfg {
    let n = func.instructions.len();
    let mut leader = vec![false; n + 1];
    if n > 0 {
        leader[0] = true;
    }
    for (i, inst) in func.instructions.iter().enumerate() {
        if is_terminator(inst) {
            if i + 1 <= n {
                leader[(i + 1).min(n)] = true;
            }
            if let Some(t) = inst.branch_target {
                if let Some(ti) = func.index_of_pc(t) {
                    leader[ti] = true;
                }
            }
        }
    }

    let mut starts: Vec<usize> = (0..n).filter(|i| leader[*i]).collect();
    starts.push(n);
    let mut blocks: Vec<BasicBlock> = starts
        .windows(2)
        .enumerate()
        .map(|(id, w)| BasicBlock {
            id,
            start: w[0],
            end: w[1],
            succs: Vec::new(),
            preds: Vec::new(),
            reachable: false,
        })
        .collect();

    let block_of_index = |idx: usize, blocks: &[BasicBlock]| -> Option<usize> {
        blocks.iter().position(|b| idx >= b.start && idx < b.end)
    };

    for bi in 0..blocks.len() {
        let last = blocks[bi].end - 1;
        let inst = &func.instructions[last];
        let mut succs: Vec<(usize, EdgeKind)> = Vec::new();
        if is_terminator(inst) {
            match control_flow(program, inst) {
                ControlFlow::Jump(t) => {
                    if let Some(ti) = func.index_of_pc(t) {
                        succs.push((block_of_index(ti, &blocks).unwrap(), EdgeKind::Taken));
                    }
                    // A jump to the end-of-function label exits.
                }
                ControlFlow::Branch(t) => {
                    if let Some(ti) = func.index_of_pc(t) {
                        succs.push((block_of_index(ti, &blocks).unwrap(), EdgeKind::Taken));
                    }
                    if bi + 1 < blocks.len() {
                        succs.push((bi + 1, EdgeKind::Fallthrough));
                    }
                }
                ControlFlow::Exit => {}
                ControlFlow::Fallthrough => {
                    if bi + 1 < blocks.len() {
                        succs.push((bi + 1, EdgeKind::Fallthrough));
                    }
                }
            }
        } else if bi + 1 < blocks.len() {
            succs.push((bi + 1, EdgeKind::Fallthrough));
        }
        blocks[bi].succs = succs;
    }

    for bi in 0..blocks.len() {
        for (s, _) in blocks[bi].succs.clone() {
            blocks[s].preds.push(bi);
        }
    }

    // Reachability from the entry.
    if !blocks.is_empty() {
        let mut stack = vec![0usize];
        while let Some(b) = stack.pop() {
            if blocks[b].reachable {
                continue;
            }
            blocks[b].reachable = true;
            for (s, _) in &blocks[b].succs {
                if !blocks[*s].reachable {
                    stack.push(*s);
                }
            }
        }
    }

    let _ = fi;
    Cfg { function: fi, blocks }
}

/// Renders a function's CFG (with loop annotations) as Graphviz DOT.
pub fn dot_cfg(func: &FunctionDef, cfg: &Cfg, loops: &LoopNest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph cfg {{");
    let _ = writeln!(out, "  label=\"{}\";", func.name);
    let _ = writeln!(out, "  node [shape=box, fontname=\"monospace\"];");
    for b in &cfg.blocks {
        let (lo, hi) = if b.is_empty() {
            (func.base_pc, func.base_pc)
        } else {
            (func.instructions[b.start].pc, func.instructions[b.end - 1].pc)
        };
        let mut annot = String::new();
        for (li, l) in loops.loops.iter().enumerate() {
            if l.members.contains(&b.id) {
                let _ = write!(
                    annot,
                    "\\nloop {li}{}{}",
                    if l.header == b.id { " (header)" } else { "" },
                    if l.irreducible { " irreducible" } else { "" }
                );
            }
        }
        if !b.reachable {
            annot.push_str("\\nunreachable");
        }
        let _ = writeln!(out, "  b{} [label=\"B{}\\n{:#x}..{:#x}{}\"];", b.id, b.id, lo, hi, annot);
    }
    for b in &cfg.blocks {
        for (s, kind) in &b.succs {
            let style = match kind {
                EdgeKind::Taken => "taken",
                EdgeKind::Fallthrough => "fall",
            };
            let _ = writeln!(out, "  b{} -> b{} [label=\"{}\"];", b.id, s, style);
        }
    }
    let _ = writeln!(out, "}}");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, ArchSpec};

    fn build(text: &str) -> (Program, ProgramCfg) {
        let arch = ArchSpec::volta_like();
        let p = parse_program(text, &arch).unwrap();
        let cfg = build_cfg(&p);
        (p, cfg)
    }

    #[test]
    fn loop_with_conditional_break() {
        // Hand-drawn CFG: B0 (init) -> B1 (body+test) -> {B1 back edge, B2 exit}.
        let text = "\
FUNC f:
  MOV R1, 0
LABEL head:
  IADD R1, R1, 1
  ISETP.LT P0, R1, R2
  @P0 BRA head
  EXIT
";
        let (_p, pcfg) = build(text);
        let cfg = &pcfg.cfgs[0];
        assert_eq!(cfg.blocks.len(), 3);
        assert_eq!(cfg.blocks[0].succs, vec![(1, EdgeKind::Fallthrough)]);
        let mut s = cfg.blocks[1].succs.clone();
        s.sort_by_key(|(b, _)| *b);
        assert_eq!(s, vec![(1, EdgeKind::Taken), (2, EdgeKind::Fallthrough)]);
        assert!(cfg.blocks[2].succs.is_empty());
        assert!(cfg.blocks.iter().all(|b| b.reachable));
    }

    #[test]
    fn branch_target_begins_block() {
        let text = "\
FUNC f:
  MOV R1, 0
  BRA join
  MOV R2, 0
LABEL join:
  EXIT
";
        let (p, pcfg) = build(text);
        let cfg = &pcfg.cfgs[0];
        // Blocks: [MOV,BRA], [MOV dead], [EXIT].
        assert_eq!(cfg.blocks.len(), 3);
        assert!(!cfg.blocks[1].reachable);
        assert!(cfg.blocks[2].reachable);
        let join_pc = p.functions[0].labels["join"];
        assert_eq!(p.functions[0].index_of_pc(join_pc), Some(3));
    }

    #[test]
    fn exactly_one_terminator_per_block() {
        let text = "\
FUNC f:
  MOV R1, 0
  @P0 BRA out
  IADD R1, R1, 1
LABEL out:
  EXIT
";
        let (p, pcfg) = build(text);
        for b in &pcfg.cfgs[0].blocks {
            let terminators = p.functions[0].instructions[b.start..b.end]
                .iter()
                .filter(|i| is_terminator(i))
                .count();
            assert!(terminators <= 1);
            if terminators == 1 {
                assert!(is_terminator(&p.functions[0].instructions[b.end - 1]));
            }
        }
    }
}

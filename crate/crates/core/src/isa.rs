//! Instruction set model for GIR, the textual GPU-like assembly the advisor
//! analyzes.
//!
//! One instruction per line:
//!
//! ```text
//! [{W<mask-digits>}] [{WB<i>}] [{RB<i>}] [@[!]P<i>] OPCODE[.MOD]* dest(,dest)* (, src)* [;]
//! ```
//!
//! `{W013}` waits on barrier registers B0, B1 and B3 before issue; `{WB<i>}`
//! names the barrier the instruction sets for its result (cleared when the
//! write completes); `{RB<i>}` names the barrier guarding its source reads.
//! Programs group instructions under `FUNC <name>:` headers, mark branch
//! targets with `LABEL <name>:`, carry source locations via
//! `#line <file>:<line>` directives, and use `#` for comments.
//!
//! The grammar carries no scheduling fields, so the parser plays assembler:
//! fixed-latency instructions get `stall_cycles` equal to their class
//! latency from the [`ArchSpec`], variable-latency ones get 1 (their timing
//! is carried by barriers instead).

use std::collections::BTreeSet;
use std::fmt;

mod arch;
mod parse;

pub use arch::{ArchSpec, LatencyEntry};
pub use parse::{parse_instruction, parse_program, ParseError};

/// Bytes per encoded instruction; PCs advance by this much.
pub const INSTRUCTION_SIZE: u64 = 16;

/// Names of the special (read-only) registers the parser accepts; the index
/// of a [`RegisterRef::Special`] is a position in this table.
pub const SPECIAL_REGISTERS: &[&str] = &[
    "SR_TID", "SR_NTID", "SR_CTAID", "SR_NCTAID", "SR_LANEID", "SR_WARPID", "SR_CLOCK",
];

/// A reference to one architectural register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegisterRef {
    /// General-purpose register R0..=R254.
    General(u8),
    /// Predicate register P0..=P6.
    Predicate(u8),
    /// Scoreboard barrier register B0..=B5, set and waited on by control
    /// codes rather than named as operands.
    Barrier(u8),
    /// Special read-only register (index into [`SPECIAL_REGISTERS`]).
    Special(u8),
}

impl fmt::Display for RegisterRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegisterRef::General(i) => write!(f, "R{i}"),
            RegisterRef::Predicate(i) => write!(f, "P{i}"),
            RegisterRef::Barrier(i) => write!(f, "B{i}"),
            RegisterRef::Special(i) => {
                write!(f, "{}", SPECIAL_REGISTERS.get(*i as usize).unwrap_or(&"SR_?"))
            }
        }
    }
}

/// An instruction guard: a predicate register with polarity, or ALWAYS
/// (unpredicated; `register` is `None` and `negated` is false).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Predicate {
    pub register: Option<RegisterRef>,
    pub negated: bool,
}

impl Predicate {
    pub const ALWAYS: Predicate = Predicate { register: None, negated: false };

    pub fn of(index: u8, negated: bool) -> Predicate {
        Predicate { register: Some(RegisterRef::Predicate(index)), negated }
    }

    pub fn is_always(&self) -> bool {
        self.register.is_none()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.register {
            None => write!(f, "@_"),
            Some(r) => {
                if self.negated {
                    write!(f, "@!{r}")
                } else {
                    write!(f, "@{r}")
                }
            }
        }
    }
}

/// A set of predicates closed under the rule {Pi} ∪ {!Pi} = {ALWAYS}:
/// once both polarities of a register are present the set covers every
/// execution, which is what the backward slicer's stopping test needs.
///
/// Layout: bits 0..=6 positive P0..=P6, bits 7..=13 negated, bit 14 ALWAYS.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct PredicateSet(u16);

const ALWAYS_BIT: u16 = 1 << 14;

impl PredicateSet {
    pub fn new() -> PredicateSet {
        PredicateSet(0)
    }

    fn bit(p: Predicate) -> u16 {
        match p.register {
            None => ALWAYS_BIT,
            Some(RegisterRef::Predicate(i)) => 1 << (i as u16 + if p.negated { 7 } else { 0 }),
            Some(_) => ALWAYS_BIT, // non-predicate registers cannot guard
        }
    }

    /// Inserts a predicate and applies the closure rule.
    pub fn insert(&mut self, p: Predicate) {
        self.0 |= Self::bit(p);
        for i in 0..7u16 {
            if self.0 & (1 << i) != 0 && self.0 & (1 << (i + 7)) != 0 {
                self.0 |= ALWAYS_BIT;
            }
        }
    }

    /// True when the set covers `p`: it contains ALWAYS, or `p` itself.
    pub fn contains(&self, p: Predicate) -> bool {
        self.0 & ALWAYS_BIT != 0 || self.0 & Self::bit(p) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub(crate) fn key(&self) -> u16 {
        self.0
    }
}

/// The scheduling metadata attached to an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ControlCode {
    /// Barrier registers that must be clear before this instruction issues
    /// (bitmask over B0..=B5).
    pub wait_mask: BarrierMask,
    /// Barrier set when this instruction's result write completes.
    pub write_barrier: Option<u8>,
    /// Barrier set while this instruction is still reading its sources
    /// (guards against write-after-read hazards).
    pub read_barrier: Option<u8>,
    /// Cycles the issuing warp must wait before its next instruction.
    /// Derived from the architecture latency table by the parser.
    pub stall_cycles: u32,
    /// Scheduling hint; carried but unused by the simulator.
    pub yield_flag: bool,
}

/// Bitmask over the six barrier registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct BarrierMask(pub u8);

impl BarrierMask {
    pub fn insert(&mut self, index: u8) {
        self.0 |= 1 << index;
    }

    pub fn contains(&self, index: u8) -> bool {
        self.0 & (1 << index) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    /// Barrier indices in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0..6u8).filter(move |i| self.contains(*i))
    }
}

/// Functional class of an opcode; the opcode→class map lives in [`ArchSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpcodeClass {
    GlobalMemory,
    LocalMemory,
    SharedMemory,
    ConstantMemory,
    TextureMemory,
    ArithmeticFixed,
    ArithmeticLong,
    Control,
    Sync,
    Convert,
    Misc,
}

impl OpcodeClass {
    pub const ALL: &'static [OpcodeClass] = &[
        OpcodeClass::GlobalMemory,
        OpcodeClass::LocalMemory,
        OpcodeClass::SharedMemory,
        OpcodeClass::ConstantMemory,
        OpcodeClass::TextureMemory,
        OpcodeClass::ArithmeticFixed,
        OpcodeClass::ArithmeticLong,
        OpcodeClass::Control,
        OpcodeClass::Sync,
        OpcodeClass::Convert,
        OpcodeClass::Misc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpcodeClass::GlobalMemory => "global_memory",
            OpcodeClass::LocalMemory => "local_memory",
            OpcodeClass::SharedMemory => "shared_memory",
            OpcodeClass::ConstantMemory => "constant_memory",
            OpcodeClass::TextureMemory => "texture_memory",
            OpcodeClass::ArithmeticFixed => "arithmetic_fixed",
            OpcodeClass::ArithmeticLong => "arithmetic_long",
            OpcodeClass::Control => "control",
            OpcodeClass::Sync => "sync",
            OpcodeClass::Convert => "convert",
            OpcodeClass::Misc => "misc",
        }
    }

    pub fn from_name(s: &str) -> Option<OpcodeClass> {
        OpcodeClass::ALL.iter().copied().find(|c| c.name() == s)
    }

    /// True for classes that access a memory space.
    pub fn is_memory(&self) -> bool {
        matches!(
            self,
            OpcodeClass::GlobalMemory
                | OpcodeClass::LocalMemory
                | OpcodeClass::SharedMemory
                | OpcodeClass::ConstantMemory
                | OpcodeClass::TextureMemory
        )
    }

    /// Memory classes that report as "memory dependency" stalls. Shared
    /// memory is excluded: its waits surface as execution dependencies.
    pub fn is_memory_dependency_source(&self) -> bool {
        matches!(
            self,
            OpcodeClass::GlobalMemory
                | OpcodeClass::LocalMemory
                | OpcodeClass::ConstantMemory
                | OpcodeClass::TextureMemory
        )
    }

    /// Memory spaces with 64-bit addressing: their address operands occupy a
    /// register pair. Constant-memory offsets are immediate; shared and
    /// texture addressing is 32-bit here.
    pub fn uses_wide_address(&self) -> bool {
        matches!(self, OpcodeClass::GlobalMemory | OpcodeClass::LocalMemory)
    }
}

impl fmt::Display for OpcodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Syntactic operand, kept so instructions can be rendered back to text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    /// Bare register (general or predicate).
    Reg(RegisterRef),
    /// Memory operand `[Rk]` or `[Rk+0x10]`.
    Mem { base: u8, offset: i64 },
    /// Constant-memory operand `c[bank][offset]`.
    Const { bank: u32, offset: i64 },
    /// Integer immediate.
    Imm(i64),
    /// Branch/call target label.
    Label(String),
    /// Special register (index into [`SPECIAL_REGISTERS`]).
    Special(u8),
}

/// One decoded GIR instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    /// Program-global byte offset (functions are laid out contiguously).
    pub pc: u64,
    pub predicate: Predicate,
    pub opcode: String,
    pub opcode_class: OpcodeClass,
    /// Dot-separated opcode modifiers in source order (e.g. `32`, `LT`).
    pub modifiers: Vec<String>,
    /// Destination registers after width expansion.
    pub dests: Vec<RegisterRef>,
    /// Source registers after width expansion (addresses included); wait-mask
    /// barriers and the guard predicate are *not* here, see [`reads_writes`].
    pub sources: Vec<RegisterRef>,
    pub control: ControlCode,
    /// Resolved intra-function branch target (filled by `parse_program`).
    pub branch_target: Option<u64>,
    /// Operands as written, for rendering.
    pub operands: Vec<Operand>,
}

impl Instruction {
    /// True when the instruction's timing is carried by barriers rather than
    /// a fixed issue delay.
    pub fn is_variable_latency(&self, arch: &ArchSpec) -> bool {
        arch.latency(self.opcode_class).variable
    }

    /// The label operand, if any (branch or call target).
    pub fn label_operand(&self) -> Option<&str> {
        self.operands.iter().find_map(|op| match op {
            Operand::Label(l) => Some(l.as_str()),
            _ => None,
        })
    }
}

impl fmt::Display for Instruction {
    /// Renders the instruction in canonical GIR syntax; reparsing the result
    /// yields a field-equal instruction.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        if !self.control.wait_mask.is_empty() {
            let digits: String = self.control.wait_mask.iter().map(|i| i.to_string()).collect();
            parts.push(format!("{{W{digits}}}"));
        }
        if let Some(b) = self.control.write_barrier {
            parts.push(format!("{{WB{b}}}"));
        }
        if let Some(b) = self.control.read_barrier {
            parts.push(format!("{{RB{b}}}"));
        }
        if !self.predicate.is_always() {
            parts.push(self.predicate.to_string().to_string());
        }
        let mut op = self.opcode.clone();
        for m in &self.modifiers {
            op.push('.');
            op.push_str(m);
        }
        parts.push(op);
        let rendered: Vec<String> = self
            .operands
            .iter()
            .map(|o| match o {
                Operand::Reg(r) => r.to_string(),
                Operand::Mem { base, offset } => {
                    if *offset == 0 {
                        format!("[R{base}]")
                    } else if *offset > 0 {
                        format!("[R{base}+{offset:#x}]")
                    } else {
                        format!("[R{base}-{:#x}]", -offset)
                    }
                }
                Operand::Const { bank, offset } => format!("c[{bank}][{offset:#x}]"),
                Operand::Imm(v) => v.to_string(),
                Operand::Label(l) => l.clone(),
                Operand::Special(i) => {
                    SPECIAL_REGISTERS.get(*i as usize).unwrap_or(&"SR_?").to_string()
                }
            })
            .collect();
        if !rendered.is_empty() {
            parts.push(rendered.join(", "));
        }
        write!(f, "{}", parts.join(" "))
    }
}

/// Source location carried by `#line` directives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceLoc {
    pub file: String,
    pub line: u32,
}

impl fmt::Display for SourceLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

/// One parsed function: an ordered instruction list plus its label table and
/// any `#line` mappings.
#[derive(Debug, Clone)]
pub struct FunctionDef {
    pub name: String,
    /// Program-global byte offset of the first instruction.
    pub base_pc: u64,
    pub instructions: Vec<Instruction>,
    /// Label name → target pc (one past the last instruction for end labels).
    pub labels: std::collections::BTreeMap<String, u64>,
    /// pc → source location, from `#line` directives.
    pub line_map: std::collections::BTreeMap<u64, SourceLoc>,
}

impl FunctionDef {
    pub fn end_pc(&self) -> u64 {
        self.base_pc + self.instructions.len() as u64 * INSTRUCTION_SIZE
    }

    pub fn contains_pc(&self, pc: u64) -> bool {
        pc >= self.base_pc && pc < self.end_pc()
    }

    /// Instruction index for a pc inside this function.
    pub fn index_of_pc(&self, pc: u64) -> Option<usize> {
        if !self.contains_pc(pc) || (pc - self.base_pc) % INSTRUCTION_SIZE != 0 {
            return None;
        }
        Some(((pc - self.base_pc) / INSTRUCTION_SIZE) as usize)
    }

    pub fn instr_at(&self, pc: u64) -> Option<&Instruction> {
        self.index_of_pc(pc).map(|i| &self.instructions[i])
    }
}

/// A parsed GIR program: ordered functions in one global address space.
#[derive(Debug, Clone, Default)]
pub struct Program {
    pub functions: Vec<FunctionDef>,
}

impl Program {
    /// Function (index, def) containing a global pc.
    pub fn function_at(&self, pc: u64) -> Option<(usize, &FunctionDef)> {
        self.functions.iter().enumerate().find(|(_, f)| f.contains_pc(pc))
    }

    pub fn instr_at(&self, pc: u64) -> Option<&Instruction> {
        self.function_at(pc).and_then(|(_, f)| f.instr_at(pc))
    }

    pub fn function_named(&self, name: &str) -> Option<(usize, &FunctionDef)> {
        self.functions.iter().enumerate().find(|(_, f)| f.name == name)
    }

    /// Callee name when `inst` is a call to another function in this program.
    pub fn call_target<'a>(&'a self, inst: &'a Instruction) -> Option<&'a str> {
        if inst.opcode_class != OpcodeClass::Control || inst.branch_target.is_some() {
            return None;
        }
        inst.label_operand().filter(|l| self.function_named(l).is_some())
    }
}

/// The registers an instruction reads and writes, including control-code
/// traffic: reads cover the sources, the guard predicate, and every wait-mask
/// barrier; writes cover the dests and any write/read barrier it sets.
pub fn reads_writes(inst: &Instruction) -> (BTreeSet<RegisterRef>, BTreeSet<RegisterRef>) {
    let mut reads: BTreeSet<RegisterRef> = inst.sources.iter().copied().collect();
    if let Some(p) = inst.predicate.register {
        reads.insert(p);
    }
    for b in inst.control.wait_mask.iter() {
        reads.insert(RegisterRef::Barrier(b));
    }
    let mut writes: BTreeSet<RegisterRef> = inst.dests.iter().copied().collect();
    if let Some(b) = inst.control.write_barrier {
        writes.insert(RegisterRef::Barrier(b));
    }
    if let Some(b) = inst.control.read_barrier {
        writes.insert(RegisterRef::Barrier(b));
    }
    (reads, writes)
}

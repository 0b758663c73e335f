//! Text → instruction/program parsing for GIR.

use std::collections::BTreeMap;

use super::{
    ArchSpec, ControlCode, FunctionDef, Instruction, OpcodeClass, Operand, Predicate,
    Program, RegisterRef, SourceLoc, INSTRUCTION_SIZE, SPECIAL_REGISTERS,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}, col {col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}, col {col}: {msg}")]
    Semantic { line: usize, col: usize, msg: String },
    #[error("line {line}: instruction outside of any FUNC")]
    OutsideFunction { line: usize },
    #[error("duplicate function name `{name}` (line {line})")]
    DuplicateFunction { name: String, line: usize },
    #[error("duplicate label `{label}` in function `{function}` (line {line})")]
    DuplicateLabel { function: String, label: String, line: usize },
    #[error("unresolved label `{label}` in function `{function}`")]
    UnresolvedLabel { function: String, label: String },
}

/// Character-cursor over one instruction line; columns are 1-based.
struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line_no: usize,
}

impl Cursor {
    fn new(text: &str, line_no: usize) -> Cursor {
        Cursor { chars: text.chars().collect(), pos: 0, line_no }
    }

    fn col(&self) -> usize {
        self.pos + 1
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn starts_with(&self, s: &str) -> bool {
        self.chars[self.pos..].iter().collect::<String>().starts_with(s)
    }

    fn syntax(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax { line: self.line_no, col: self.col(), msg: msg.into() }
    }

    fn semantic(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Semantic { line: self.line_no, col: self.col(), msg: msg.into() }
    }

    /// Consumes an identifier `[A-Za-z_][A-Za-z0-9_.$]*` (dots excluded).
    fn ident(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
            _ => return Err(self.syntax("expected identifier")),
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_' || c == '$') {
            self.pos += 1;
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    /// Consumes a decimal or 0x-hex integer with optional sign.
    fn integer(&mut self) -> Result<i64, ParseError> {
        let neg = self.eat('-');
        let start = self.pos;
        let (radix, digits_start) = if self.starts_with("0x") || self.starts_with("0X") {
            self.pos += 2;
            (16, self.pos)
        } else {
            (10, start)
        };
        while matches!(self.peek(), Some(c) if c.is_ascii_hexdigit()) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(self.syntax("expected integer"));
        }
        let text: String = self.chars[digits_start..self.pos].iter().collect();
        let v = i64::from_str_radix(&text, radix)
            .map_err(|_| self.syntax(format!("integer `{text}` out of range")))?;
        Ok(if neg { -v } else { v })
    }

    fn number_after(&mut self, what: &str) -> Result<u32, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.syntax(format!("expected {what} index")));
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse().map_err(|_| self.syntax(format!("{what} index `{text}` out of range")))
    }
}

/// Width modifiers recognized on opcodes; values are in registers.
fn width_regs(modifier: &str) -> Option<u8> {
    match modifier {
        "32" => Some(1),
        "64" => Some(2),
        "128" => Some(4),
        _ => None,
    }
}

/// Parses one instruction line against an architecture spec. The pc is left
/// at 0 and branch targets unresolved; `parse_program` fills both.
pub fn parse_instruction(line: &str, arch: &ArchSpec) -> Result<Instruction, ParseError> {
    parse_instruction_at(line, arch, 1)
}

fn parse_instruction_at(
    line: &str,
    arch: &ArchSpec,
    line_no: usize,
) -> Result<Instruction, ParseError> {
    let mut cur = Cursor::new(line, line_no);
    let mut control = ControlCode::default();

    // Control-code groups, in fixed order: {W..} {WB.} {RB.}
    cur.skip_ws();
    if cur.starts_with("{W") && !cur.starts_with("{WB") {
        cur.pos += 2;
        let mut any = false;
        while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
            let d = cur.bump().unwrap().to_digit(10).unwrap() as u8;
            if d > 5 {
                cur.pos -= 1;
                return Err(cur.semantic(format!("barrier index {d} out of range (B0..B5)")));
            }
            control.wait_mask.insert(d);
            any = true;
        }
        if !any {
            return Err(cur.syntax("empty wait mask"));
        }
        if !cur.eat('}') {
            return Err(cur.syntax("expected `}` after wait mask"));
        }
        cur.skip_ws();
    }
    if cur.starts_with("{WB") {
        cur.pos += 3;
        let b = cur.number_after("barrier")?;
        if b > 5 {
            return Err(cur.semantic(format!("barrier index {b} out of range (B0..B5)")));
        }
        control.write_barrier = Some(b as u8);
        if !cur.eat('}') {
            return Err(cur.syntax("expected `}` after write barrier"));
        }
        cur.skip_ws();
    }
    if cur.starts_with("{RB") {
        cur.pos += 3;
        let b = cur.number_after("barrier")?;
        if b > 5 {
            return Err(cur.semantic(format!("barrier index {b} out of range (B0..B5)")));
        }
        control.read_barrier = Some(b as u8);
        if !cur.eat('}') {
            return Err(cur.syntax("expected `}` after read barrier"));
        }
        cur.skip_ws();
    }
    if control.write_barrier.is_some() && control.write_barrier == control.read_barrier {
        return Err(cur.semantic("write and read barriers must differ".to_string()));
    }

    // Optional guard predicate.
    let mut predicate = Predicate::ALWAYS;
    if cur.eat('@') {
        let negated = cur.eat('!');
        if !cur.eat('P') {
            return Err(cur.syntax("expected predicate register after `@`"));
        }
        let idx = cur.number_after("predicate")?;
        if idx > 6 {
            return Err(cur.semantic(format!("predicate index {idx} out of range (P0..P6)")));
        }
        predicate = Predicate::of(idx as u8, negated);
        cur.skip_ws();
    }

    // Opcode and dot modifiers.
    let opcode = cur.ident()?;
    let opcode_class = arch
        .opcode_class(&opcode)
        .ok_or_else(|| cur.semantic(format!("unknown opcode `{opcode}`")))?;
    let mut modifiers: Vec<String> = Vec::new();
    while cur.eat('.') {
        let start = cur.pos;
        while matches!(cur.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            cur.pos += 1;
        }
        if cur.pos == start {
            return Err(cur.syntax("expected modifier after `.`"));
        }
        modifiers.push(cur.chars[start..cur.pos].iter().collect());
    }

    // Operands.
    let mut operands: Vec<Operand> = Vec::new();
    cur.skip_ws();
    while !matches!(cur.peek(), None | Some(';')) {
        if !operands.is_empty() {
            if !cur.eat(',') {
                return Err(cur.syntax("expected `,` between operands"));
            }
            cur.skip_ws();
        }
        operands.push(parse_operand(&mut cur)?);
        cur.skip_ws();
    }
    cur.eat(';');
    cur.skip_ws();
    if cur.peek().is_some() {
        return Err(cur.syntax("trailing characters after instruction"));
    }

    // Semantic assembly: split operands into dests/sources with width
    // expansion, and derive the issue delay from the latency table.
    let widths: Vec<u8> = modifiers.iter().filter_map(|m| width_regs(m)).collect();
    let (dest_width, src_width) = match widths.as_slice() {
        [] => (1u8, 1u8),
        [w] => (*w, *w),
        [d, s, ..] => (*d, *s),
    };

    let mut dests = Vec::new();
    let mut sources = Vec::new();
    let takes_dest = !matches!(opcode_class, OpcodeClass::Control | OpcodeClass::Sync);
    for (k, op) in operands.iter().enumerate() {
        let is_dest = k == 0 && takes_dest && matches!(op, Operand::Reg(_));
        match op {
            Operand::Reg(RegisterRef::General(base)) => {
                let width = if is_dest { dest_width } else { src_width };
                let out = if is_dest { &mut dests } else { &mut sources };
                expand_pair(&mut cur, *base, width, arch, out)?;
            }
            Operand::Reg(r @ RegisterRef::Predicate(_)) => {
                if is_dest {
                    dests.push(*r);
                } else {
                    sources.push(*r);
                }
            }
            Operand::Reg(_) => return Err(cur.semantic("unexpected register operand")),
            Operand::Mem { base, .. } => {
                let width = if opcode_class.uses_wide_address() { 2 } else { 1 };
                expand_pair(&mut cur, *base, width, arch, &mut sources)?;
            }
            Operand::Special(i) => sources.push(RegisterRef::Special(*i)),
            Operand::Const { .. } | Operand::Imm(_) | Operand::Label(_) => {}
        }
    }

    let latency = arch.latency(opcode_class);
    control.stall_cycles = if latency.variable { 1 } else { latency.cycles };

    Ok(Instruction {
        pc: 0,
        predicate,
        opcode,
        opcode_class,
        modifiers,
        dests,
        sources,
        control,
        branch_target: None,
        operands,
    })
}

/// Pushes `width` consecutive general registers starting at `base`.
fn expand_pair(
    cur: &mut Cursor,
    base: u8,
    width: u8,
    arch: &ArchSpec,
    out: &mut Vec<RegisterRef>,
) -> Result<(), ParseError> {
    let last = base as u32 + width as u32 - 1;
    if last >= arch.max_registers_per_thread {
        return Err(cur.semantic(format!(
            "register R{last} out of range (R0..R{})",
            arch.max_registers_per_thread - 1
        )));
    }
    for i in 0..width {
        out.push(RegisterRef::General(base + i));
    }
    Ok(())
}

fn parse_operand(cur: &mut Cursor) -> Result<Operand, ParseError> {
    match cur.peek() {
        Some('[') => {
            cur.pos += 1;
            if !cur.eat('R') {
                return Err(cur.syntax("expected register inside `[ ]`"));
            }
            let base = cur.number_after("register")?;
            if base > 254 {
                return Err(cur.semantic(format!("register R{base} out of range")));
            }
            let mut offset = 0i64;
            if cur.peek() == Some('+') {
                cur.pos += 1;
                offset = cur.integer()?;
            } else if cur.peek() == Some('-') {
                cur.pos += 1;
                offset = -cur.integer()?;
            }
            if !cur.eat(']') {
                return Err(cur.syntax("expected `]`"));
            }
            Ok(Operand::Mem { base: base as u8, offset })
        }
        Some('c') if cur.starts_with("c[") => {
            cur.pos += 2;
            let bank = cur.number_after("constant bank")?;
            if !cur.eat(']') || !cur.eat('[') {
                return Err(cur.syntax("expected `c[bank][offset]`"));
            }
            let offset = cur.integer()?;
            if !cur.eat(']') {
                return Err(cur.syntax("expected `]`"));
            }
            Ok(Operand::Const { bank, offset })
        }
        Some(c) if c.is_ascii_digit() || c == '-' => Ok(Operand::Imm(cur.integer()?)),
        Some(_) => {
            let start_col = cur.col();
            let ident = cur.ident()?;
            // Register forms first, then specials, then a plain label.
            if let Some(rest) = ident.strip_prefix('R') {
                if let Ok(idx) = rest.parse::<u32>() {
                    if idx > 254 {
                        return Err(ParseError::Semantic {
                            line: cur.line_no,
                            col: start_col,
                            msg: format!("register R{idx} out of range"),
                        });
                    }
                    return Ok(Operand::Reg(RegisterRef::General(idx as u8)));
                }
            }
            if let Some(rest) = ident.strip_prefix('P') {
                if let Ok(idx) = rest.parse::<u32>() {
                    if idx > 6 {
                        return Err(ParseError::Semantic {
                            line: cur.line_no,
                            col: start_col,
                            msg: format!("predicate P{idx} out of range"),
                        });
                    }
                    return Ok(Operand::Reg(RegisterRef::Predicate(idx as u8)));
                }
            }
            if ident.starts_with("SR_") {
                match SPECIAL_REGISTERS.iter().position(|s| *s == ident) {
                    Some(i) => return Ok(Operand::Special(i as u8)),
                    None => {
                        return Err(ParseError::Semantic {
                            line: cur.line_no,
                            col: start_col,
                            msg: format!(
                                "unknown special register `{ident}` (known: {})",
                                SPECIAL_REGISTERS.join(", ")
                            ),
                        })
                    }
                }
            }
            Ok(Operand::Label(ident))
        }
        None => Err(cur.syntax("expected operand")),
    }
}

/// Parses a whole GIR program: functions, labels, `#line` directives.
/// Functions are laid out contiguously in one global address space,
/// `INSTRUCTION_SIZE` bytes per instruction.
pub fn parse_program(text: &str, arch: &ArchSpec) -> Result<Program, ParseError> {
    let mut program = Program::default();
    let mut current: Option<FunctionDef> = None;
    let mut pending_labels: Vec<(String, usize)> = Vec::new();
    let mut current_loc: Option<SourceLoc> = None;
    let mut next_base = 0u64;

    fn finish(
        program: &mut Program,
        f: Option<FunctionDef>,
        pending: &mut Vec<(String, usize)>,
        next_base: &mut u64,
    ) {
        if let Some(mut f) = f {
            // Labels at the end of a function resolve to one past the last
            // instruction (a branch there exits the function).
            for (label, _) in pending.drain(..) {
                f.labels.insert(label, f.end_pc());
            }
            *next_base = f.end_pc();
            program.functions.push(f);
        }
    }

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if let Some(rest) = trimmed.strip_prefix("#line ") {
            let rest = rest.trim();
            let (file, line) = rest
                .rsplit_once(':')
                .ok_or_else(|| ParseError::Syntax {
                    line: line_no,
                    col: 1,
                    msg: "expected `#line <file>:<line>`".into(),
                })?;
            let line: u32 = line.trim().parse().map_err(|_| ParseError::Syntax {
                line: line_no,
                col: 1,
                msg: format!("bad line number `{line}`"),
            })?;
            current_loc = Some(SourceLoc { file: file.trim().to_string(), line });
            continue;
        }
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("FUNC ") {
            let name = rest
                .trim()
                .strip_suffix(':')
                .ok_or_else(|| ParseError::Syntax {
                    line: line_no,
                    col: 1,
                    msg: "expected `FUNC <name>:`".into(),
                })?
                .trim()
                .to_string();
            if program.functions.iter().any(|f| f.name == name)
                || current.as_ref().map(|f| f.name == name).unwrap_or(false)
            {
                return Err(ParseError::DuplicateFunction { name, line: line_no });
            }
            finish(&mut program, current.take(), &mut pending_labels, &mut next_base);
            current_loc = None;
            current = Some(FunctionDef {
                name,
                base_pc: next_base,
                instructions: Vec::new(),
                labels: BTreeMap::new(),
                line_map: BTreeMap::new(),
            });
            continue;
        }
        if let Some(rest) = line.strip_prefix("LABEL ") {
            let name = rest
                .trim()
                .strip_suffix(':')
                .ok_or_else(|| ParseError::Syntax {
                    line: line_no,
                    col: 1,
                    msg: "expected `LABEL <name>:`".into(),
                })?
                .trim()
                .to_string();
            if current.is_none() {
                return Err(ParseError::OutsideFunction { line: line_no });
            }
            pending_labels.push((name, line_no));
            continue;
        }

        // An instruction line.
        let func = current.as_mut().ok_or(ParseError::OutsideFunction { line: line_no })?;
        let mut inst = parse_instruction_at(line, arch, line_no)?;
        inst.pc = func.base_pc + func.instructions.len() as u64 * INSTRUCTION_SIZE;
        for (label, label_line) in pending_labels.drain(..) {
            if func.labels.insert(label.clone(), inst.pc).is_some() {
                return Err(ParseError::DuplicateLabel {
                    function: func.name.clone(),
                    label,
                    line: label_line,
                });
            }
        }
        if let Some(loc) = &current_loc {
            func.line_map.insert(inst.pc, loc.clone());
        }
        func.instructions.push(inst);
    }
    finish(&mut program, current.take(), &mut pending_labels, &mut next_base);

    // Resolve branch targets within each function; label operands naming
    // other functions are calls and stay unresolved (fallthrough control
    // flow), anything else is an error.
    let function_names: Vec<String> = program.functions.iter().map(|f| f.name.clone()).collect();
    for func in &mut program.functions {
        for i in 0..func.instructions.len() {
            if func.instructions[i].opcode_class != OpcodeClass::Control {
                continue;
            }
            let label = match func.instructions[i].label_operand() {
                Some(l) => l.to_string(),
                None => continue,
            };
            if let Some(&target) = func.labels.get(&label) {
                func.instructions[i].branch_target = Some(target);
            } else if !function_names.iter().any(|n| *n == label) {
                return Err(ParseError::UnresolvedLabel {
                    function: func.name.clone(),
                    label,
                });
            }
        }
    }
    Ok(program)
}

//! Program structure: function kinds, inline frames, and source locations.
//!
//! `#line` directives in the GIR text provide pc → source mappings; an
//! optional structure sidecar adds function kinds (kernel entry vs device)
//! and inline frames. Sidecar format, one record per line:
//!
//! ```text
//! function <name> kind=<global|device>
//! inline <function> pc=<0xADDR> callee=<name> at=<file>:<line>
//! ```
//!
//! Multiple `inline` records at one pc form a stack, outermost first.

use std::collections::BTreeMap;
use std::path::Path;

use crate::isa::{Program, SourceLoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionKind {
    /// Kernel entry point (the default).
    Global,
    /// Device-side function callable from kernels.
    Device,
}

/// One inlined call recorded at a pc.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InlineFrame {
    pub callee: String,
    pub call_site: SourceLoc,
}

#[derive(Debug, thiserror::Error)]
pub enum StructureError {
    #[error("structure sidecar line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("structure sidecar names unknown function `{0}`")]
    UnknownFunction(String),
    #[error("failed to read structure sidecar {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Structure metadata resolved against a parsed program.
#[derive(Debug, Clone, Default)]
pub struct ProgramStructure {
    /// Function index → kind; missing entries default to Global.
    pub kinds: BTreeMap<usize, FunctionKind>,
    /// Global pc → inline stack (outermost first).
    pub inline_frames: BTreeMap<u64, Vec<InlineFrame>>,
    /// Global pc → source location, merged from `#line` directives.
    pub line_map: BTreeMap<u64, SourceLoc>,
}

impl ProgramStructure {
    /// Builds structure from the program's own `#line` directives only.
    pub fn from_program(program: &Program) -> ProgramStructure {
        let mut s = ProgramStructure::default();
        for func in &program.functions {
            for (pc, loc) in &func.line_map {
                s.line_map.insert(*pc, loc.clone());
            }
        }
        s
    }

    /// Builds structure from the program plus a sidecar file.
    pub fn load(program: &Program, path: &Path) -> Result<ProgramStructure, StructureError> {
        let text = std::fs::read_to_string(path).map_err(|source| StructureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(program, &text)
    }

    pub fn parse(program: &Program, text: &str) -> Result<ProgramStructure, StructureError> {
        let mut s = ProgramStructure::from_program(program);
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| StructureError::Malformed { line: line_no, msg };
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("function") => {
                    let name = parts.next().ok_or_else(|| err("missing function name".into()))?;
                    let kind = parts
                        .next()
                        .and_then(|t| t.strip_prefix("kind="))
                        .ok_or_else(|| err("missing `kind=`".into()))?;
                    let kind = match kind {
                        "global" => FunctionKind::Global,
                        "device" => FunctionKind::Device,
                        other => return Err(err(format!("unknown kind `{other}`"))),
                    };
                    let (fi, _) = program
                        .function_named(name)
                        .ok_or_else(|| StructureError::UnknownFunction(name.to_string()))?;
                    s.kinds.insert(fi, kind);
                }
                Some("inline") => {
                    let name = parts.next().ok_or_else(|| err("missing function name".into()))?;
                    program
                        .function_named(name)
                        .ok_or_else(|| StructureError::UnknownFunction(name.to_string()))?;
                    let mut pc = None;
                    let mut callee = None;
                    let mut at = None;
                    for tok in parts {
                        if let Some(v) = tok.strip_prefix("pc=") {
                            let v = v.strip_prefix("0x").unwrap_or(v);
                            pc = Some(
                                u64::from_str_radix(v, 16)
                                    .map_err(|_| err(format!("bad pc `{v}`")))?,
                            );
                        } else if let Some(v) = tok.strip_prefix("callee=") {
                            callee = Some(v.to_string());
                        } else if let Some(v) = tok.strip_prefix("at=") {
                            let (file, line) = v
                                .rsplit_once(':')
                                .ok_or_else(|| err(format!("bad location `{v}`")))?;
                            let line: u32 =
                                line.parse().map_err(|_| err(format!("bad line `{line}`")))?;
                            at = Some(SourceLoc { file: file.to_string(), line });
                        } else {
                            return Err(err(format!("unexpected token `{tok}`")));
                        }
                    }
                    let pc = pc.ok_or_else(|| err("missing `pc=`".into()))?;
                    let callee = callee.ok_or_else(|| err("missing `callee=`".into()))?;
                    let call_site = at.ok_or_else(|| err("missing `at=`".into()))?;
                    s.inline_frames
                        .entry(pc)
                        .or_default()
                        .push(InlineFrame { callee, call_site });
                }
                Some(other) => return Err(err(format!("unknown record `{other}`"))),
                None => {}
            }
        }
        Ok(s)
    }

    pub fn kind_of(&self, function_index: usize) -> FunctionKind {
        self.kinds.get(&function_index).copied().unwrap_or(FunctionKind::Global)
    }

    pub fn frames_at(&self, pc: u64) -> &[InlineFrame] {
        self.inline_frames.get(&pc).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn loc_of(&self, pc: u64) -> Option<&SourceLoc> {
        self.line_map.get(&pc)
    }

    /// Human-readable location of a pc: `func+0xOFF` with the source
    /// location appended when known.
    pub fn describe_pc(&self, program: &Program, pc: u64) -> String {
        match program.function_at(pc) {
            Some((_, f)) => {
                let off = pc - f.base_pc;
                match self.loc_of(pc) {
                    Some(loc) => format!("{}+{:#x} ({})", f.name, off, loc),
                    None => format!("{}+{:#x}", f.name, off),
                }
            }
            None => format!("{pc:#x}"),
        }
    }
}

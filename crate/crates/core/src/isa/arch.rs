//! Architecture descriptions: the machine parameters the advisor needs to
//! parse programs (opcode classes), time the simulator (latencies), prune
//! dependency edges, and model occupancy.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::OpcodeClass;

/// Latency of an opcode class: exact for fixed-latency classes, an upper
/// bound for variable-latency ones (which signal completion via barriers).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyEntry {
    pub cycles: u32,
    pub variable: bool,
}

/// Description of the simulated/profiled GPU architecture.
#[derive(Debug, Clone)]
pub struct ArchSpec {
    pub name: String,
    pub warp_size: u32,
    pub schedulers_per_sm: u32,
    pub sm_count: u32,
    pub max_registers_per_thread: u32,
    pub barrier_register_count: u32,
    /// Defs whose class latency is at least this count as "long latency"
    /// when matching optimizers.
    pub long_latency_threshold: u32,
    /// Function names treated as math-library routines.
    pub math_function_names: Vec<String>,
    pub latency_table: BTreeMap<OpcodeClass, LatencyEntry>,
    /// Opcode mnemonic → class; unknown opcodes are parse errors.
    pub opcode_classes: BTreeMap<String, OpcodeClass>,
    // Occupancy ceilings per SM.
    pub max_warps_per_sm: u32,
    pub max_blocks_per_sm: u32,
    pub max_threads_per_block: u32,
    pub registers_per_sm: u32,
    pub shared_mem_per_sm: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum ArchError {
    #[error("arch spec line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("arch spec is missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("arch spec has no latency entry for class `{0}`")]
    MissingLatency(OpcodeClass),
    #[error("failed to read arch spec {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ArchSpec {
    /// The shipped default architecture (a Volta-like SM).
    pub fn volta_like() -> ArchSpec {
        ArchSpec::parse(include_str!("../../assets/volta-like.arch"))
            .expect("bundled volta-like arch spec must parse")
    }

    pub fn load(path: &Path) -> Result<ArchSpec, ArchError> {
        let text = std::fs::read_to_string(path).map_err(|source| ArchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ArchSpec::parse(&text)
    }

    /// Parses the key-value arch format (see `assets/volta-like.arch`).
    pub fn parse(text: &str) -> Result<ArchSpec, ArchError> {
        let mut name = None;
        let mut keys: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut latency_table = BTreeMap::new();
        let mut opcode_classes = BTreeMap::new();
        let mut math: Vec<String> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            let rest: Vec<&str> = parts.collect();
            let err = |msg: String| ArchError::Malformed { line: line_no, msg };
            match key {
                "name" => {
                    name = Some(rest.join(" "));
                }
                "latency" => {
                    if rest.len() < 2 || rest.len() > 3 {
                        return Err(err("expected `latency <class> <cycles> [variable]`".into()));
                    }
                    let class = OpcodeClass::from_name(rest[0])
                        .ok_or_else(|| err(format!("unknown opcode class `{}`", rest[0])))?;
                    let cycles: u32 = rest[1]
                        .parse()
                        .map_err(|_| err(format!("bad latency `{}`", rest[1])))?;
                    let variable = match rest.get(2) {
                        None => false,
                        Some(&"variable") => true,
                        Some(other) => return Err(err(format!("unexpected token `{other}`"))),
                    };
                    latency_table.insert(class, LatencyEntry { cycles, variable });
                }
                "opcode" => {
                    if rest.len() != 2 {
                        return Err(err("expected `opcode <NAME> <class>`".into()));
                    }
                    let class = OpcodeClass::from_name(rest[1])
                        .ok_or_else(|| err(format!("unknown opcode class `{}`", rest[1])))?;
                    opcode_classes.insert(rest[0].to_string(), class);
                }
                "math_functions" => {
                    math = rest
                        .join("")
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect();
                }
                _ => {
                    let value = rest.first().copied().unwrap_or("");
                    keys.insert(
                        match key {
                            "warp_size" => "warp_size",
                            "schedulers_per_sm" => "schedulers_per_sm",
                            "sm_count" => "sm_count",
                            "max_registers_per_thread" => "max_registers_per_thread",
                            "barrier_register_count" => "barrier_register_count",
                            "long_latency_threshold" => "long_latency_threshold",
                            "max_warps_per_sm" => "max_warps_per_sm",
                            "max_blocks_per_sm" => "max_blocks_per_sm",
                            "max_threads_per_block" => "max_threads_per_block",
                            "registers_per_sm" => "registers_per_sm",
                            "shared_mem_per_sm" => "shared_mem_per_sm",
                            other => return Err(err(format!("unknown key `{other}`"))),
                        },
                        (line_no, value),
                    );
                }
            }
        }

        let get = |key: &'static str| -> Result<u32, ArchError> {
            let (line_no, value) = keys.get(key).ok_or(ArchError::MissingKey(key))?;
            value.parse().map_err(|_| ArchError::Malformed {
                line: *line_no,
                msg: format!("bad value for `{key}`: `{value}`"),
            })
        };

        let spec = ArchSpec {
            name: name.ok_or(ArchError::MissingKey("name"))?,
            warp_size: get("warp_size")?,
            schedulers_per_sm: get("schedulers_per_sm")?,
            sm_count: get("sm_count")?,
            max_registers_per_thread: get("max_registers_per_thread")?,
            barrier_register_count: get("barrier_register_count")?,
            long_latency_threshold: get("long_latency_threshold")?,
            math_function_names: math,
            latency_table,
            opcode_classes,
            max_warps_per_sm: get("max_warps_per_sm")?,
            max_blocks_per_sm: get("max_blocks_per_sm")?,
            max_threads_per_block: get("max_threads_per_block")?,
            registers_per_sm: get("registers_per_sm")?,
            shared_mem_per_sm: get("shared_mem_per_sm")?,
        };
        // Every class reachable through the opcode map must have a latency.
        for class in spec.opcode_classes.values() {
            if !spec.latency_table.contains_key(class) {
                return Err(ArchError::MissingLatency(*class));
            }
        }
        Ok(spec)
    }

    pub fn opcode_class(&self, opcode: &str) -> Option<OpcodeClass> {
        self.opcode_classes.get(opcode).copied()
    }

    /// Latency entry for a class; classes reachable from parsed programs are
    /// guaranteed present, so missing entries fall back to a 1-cycle fixed
    /// latency rather than panicking.
    pub fn latency(&self, class: OpcodeClass) -> LatencyEntry {
        self.latency_table
            .get(&class)
            .copied()
            .unwrap_or(LatencyEntry { cycles: 1, variable: false })
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} SMs, {} schedulers/SM)", self.name, self.sm_count, self.schedulers_per_sm)
    }
}

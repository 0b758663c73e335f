//! End-to-end pipeline: parse program and architecture, obtain samples
//! (from a profile file or the simulator), attribute stalls, run the
//! optimizers, and render reports.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::advisor::{advise, OptimizerConfig};
use crate::blamer::attribute_profile;
use crate::cfg::{build_cfg, dot_cfg, find_loops, ProgramStructure};
use crate::isa::{parse_program, ArchSpec, Program};
use crate::profile::sim::{simulate, SimConfig, SimError};
use crate::profile::{load_profile, KernelProfile};
use crate::report::{build_report, render_machine, render_text, AdviceReport};

/// Errors split by exit code: bad inputs (exit 1) versus failures while
/// analyzing well-formed inputs (exit 2).
#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Analysis(String),
}

impl DriverError {
    pub fn exit_code(&self) -> i32 {
        match self {
            DriverError::Input(_) => 1,
            DriverError::Analysis(_) => 2,
        }
    }
}

fn input(e: impl std::fmt::Display) -> DriverError {
    DriverError::Input(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitMode {
    Text,
    Machine,
    Both,
}

impl EmitMode {
    pub fn parse(s: &str) -> Option<EmitMode> {
        match s {
            "text" => Some(EmitMode::Text),
            "machine" => Some(EmitMode::Machine),
            "both" => Some(EmitMode::Both),
            _ => None,
        }
    }
}

/// One full advisor invocation.
#[derive(Debug, Clone)]
pub struct DriverOptions {
    pub program: PathBuf,
    /// Architecture spec; the bundled default when absent.
    pub arch: Option<PathBuf>,
    /// Recorded profile; mutually exclusive with `simulate`.
    pub profile: Option<PathBuf>,
    pub simulate: bool,
    pub sim_config: Option<PathBuf>,
    /// Overrides the simulator seed.
    pub seed: Option<u64>,
    pub structure: Option<PathBuf>,
    pub optimizer_config: Option<PathBuf>,
    /// Keep only the N best advice entries per kernel.
    pub top: Option<usize>,
    pub emit: EmitMode,
    /// Write the control-flow graphs as DOT.
    pub dot_cfg: Option<PathBuf>,
    /// Write the dependency graphs as DOT.
    pub dot_deps: Option<PathBuf>,
}

impl DriverOptions {
    pub fn new(program: impl Into<PathBuf>) -> DriverOptions {
        DriverOptions {
            program: program.into(),
            arch: None,
            profile: None,
            simulate: false,
            sim_config: None,
            seed: None,
            structure: None,
            optimizer_config: None,
            top: None,
            emit: EmitMode::Text,
            dot_cfg: None,
            dot_deps: None,
        }
    }
}

/// Everything a run produces; `rendered` honors the emit mode.
#[derive(Debug)]
pub struct DriverOutput {
    pub reports: Vec<AdviceReport>,
    pub rendered: String,
}

/// Merges kernels that share a name and launch shape (multiple launches
/// of one kernel accumulate), keeping first-seen order.
fn aggregate(kernels: Vec<KernelProfile>) -> Vec<KernelProfile> {
    let mut order: Vec<KernelProfile> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for k in kernels {
        match index.get(&k.kernel) {
            Some(&i) if order[i].launch == k.launch => order[i].merge(&k),
            Some(_) | None => {
                index.insert(k.kernel.clone(), order.len());
                order.push(k);
            }
        }
    }
    order
}

pub fn run(opts: &DriverOptions) -> Result<DriverOutput, DriverError> {
    let arch = match &opts.arch {
        Some(path) => ArchSpec::load(path).map_err(input)?,
        None => ArchSpec::volta_like(),
    };
    let text = std::fs::read_to_string(&opts.program)
        .map_err(|e| input(format!("failed to read {}: {e}", opts.program.display())))?;
    let program = parse_program(&text, &arch).map_err(input)?;
    let cfgs = build_cfg(&program);
    let structure = match &opts.structure {
        Some(path) => ProgramStructure::load(&program, path).map_err(input)?,
        None => ProgramStructure::from_program(&program),
    };
    let config = match &opts.optimizer_config {
        Some(path) => OptimizerConfig::load(path).map_err(input)?,
        None => OptimizerConfig::default(),
    };

    let kernels = match (&opts.profile, opts.simulate) {
        (Some(_), true) => {
            return Err(input("choose either a profile file or simulation, not both"))
        }
        (Some(path), false) => aggregate(load_profile(path).map_err(input)?),
        (None, true) => {
            let mut sim_config = match &opts.sim_config {
                Some(path) => SimConfig::load(path).map_err(input)?,
                None => SimConfig::default(),
            };
            if let Some(seed) = opts.seed {
                sim_config.seed = seed;
            }
            let result = simulate(&program, &arch, &sim_config).map_err(|e| match e {
                SimError::Deadlock { .. } | SimError::MaxCycles { .. } => {
                    DriverError::Analysis(e.to_string())
                }
                other => input(other),
            })?;
            vec![result.profile]
        }
        (None, false) => {
            return Err(input("a profile file or --simulate is required"));
        }
    };
    if kernels.is_empty() {
        return Err(input("the profile contains no kernels"));
    }

    let mut reports = Vec::new();
    let mut texts = Vec::new();
    let mut dep_dots = Vec::new();
    for kernel in &kernels {
        let unresolved = kernel.validate_against(&program);
        if !unresolved.is_empty() {
            return Err(input(unresolved.join("; ")));
        }
        let attributed = attribute_profile(&program, &cfgs, kernel, &arch);
        let advice =
            advise(&program, &cfgs, &structure, &arch, kernel, &attributed, &config);
        let mut report = build_report(
            &kernel.kernel,
            &arch.name,
            kernel.launch,
            kernel.summary(),
            advice,
            &attributed,
        );
        if let Some(n) = opts.top {
            report = report.top(n);
        }
        texts.push(render_text(&report, &program, &structure));
        dep_dots.push(attributed.graph.to_dot());
        reports.push(report);
    }

    if let Some(path) = &opts.dot_cfg {
        std::fs::write(path, cfg_dot_text(&program, &cfgs))
            .map_err(|e| input(format!("failed to write {}: {e}", path.display())))?;
    }
    if let Some(path) = &opts.dot_deps {
        std::fs::write(path, dep_dots.join("\n"))
            .map_err(|e| input(format!("failed to write {}: {e}", path.display())))?;
    }

    let rendered = match opts.emit {
        EmitMode::Text => texts.join("\n"),
        EmitMode::Machine => render_machine(&reports),
        EmitMode::Both => format!("{}\n{}", texts.join("\n"), render_machine(&reports)),
    };
    Ok(DriverOutput { reports, rendered })
}

/// DOT for every function's CFG, concatenated.
pub fn cfg_dot_text(program: &Program, cfgs: &crate::cfg::ProgramCfg) -> String {
    let mut out = Vec::new();
    for (i, func) in program.functions.iter().enumerate() {
        let cfg = cfgs.for_function(i);
        out.push(dot_cfg(func, cfg, &find_loops(cfg)));
    }
    out.join("\n")
}

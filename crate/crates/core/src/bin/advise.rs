//! Command-line front end for the advisor pipeline.

use std::path::PathBuf;

use clap::Parser;
use gir_advisor::driver::{run, DriverOptions, EmitMode};

#[derive(Parser)]
#[command(
    name = "advise",
    version,
    about = "Offline GPU kernel performance advisor",
    long_about = "Analyzes a kernel's textual assembly together with stall \
                  samples (recorded or simulated), attributes every stall to \
                  the instruction that caused it, and ranks the code and \
                  launch changes with the best estimated speedup."
)]
struct Cli {
    /// Textual assembly of the kernel(s) to analyze.
    #[arg(long, value_name = "FILE")]
    program: PathBuf,

    /// Architecture description; defaults to the bundled Volta-like SM.
    #[arg(long, value_name = "FILE")]
    arch: Option<PathBuf>,

    /// Recorded stall-sample profile.
    #[arg(long, value_name = "FILE", conflicts_with = "simulate")]
    profile: Option<PathBuf>,

    /// Synthesize a profile with the built-in sampling simulator.
    #[arg(long)]
    simulate: bool,

    /// Simulator settings (period, seed, warps, loop trip counts...).
    #[arg(long, value_name = "FILE", requires = "simulate")]
    sim_config: Option<PathBuf>,

    /// Overrides the simulator seed.
    #[arg(long, value_name = "SEED", requires = "simulate")]
    seed: Option<u64>,

    /// Sidecar describing function kinds and inlined call sites.
    #[arg(long, value_name = "FILE")]
    structure: Option<PathBuf>,

    /// Optimizer tuning file (enable/disable, speedup fraction).
    #[arg(long, value_name = "FILE")]
    optimizer_config: Option<PathBuf>,

    /// Keep only the N best advice entries per kernel.
    #[arg(long, value_name = "N")]
    top: Option<usize>,

    /// Output form: text, machine (JSON), or both.
    #[arg(long, value_name = "MODE", default_value = "text")]
    emit: String,

    /// Write every function's control-flow graph as DOT.
    #[arg(long, value_name = "PATH")]
    dot_cfg: Option<PathBuf>,

    /// Write every kernel's dependency graph as DOT.
    #[arg(long, value_name = "PATH")]
    dot_deps: Option<PathBuf>,

    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let Some(emit) = EmitMode::parse(&cli.emit) else {
        eprintln!("advise: unknown emit mode `{}` (expected text|machine|both)", cli.emit);
        return 1;
    };

    let opts = DriverOptions {
        program: cli.program,
        arch: cli.arch,
        profile: cli.profile,
        simulate: cli.simulate,
        sim_config: cli.sim_config,
        seed: cli.seed,
        structure: cli.structure,
        optimizer_config: cli.optimizer_config,
        top: cli.top,
        emit,
        dot_cfg: cli.dot_cfg,
        dot_deps: cli.dot_deps,
    };

    match run(&opts) {
        Ok(output) => match &cli.out {
            Some(path) => match std::fs::write(path, &output.rendered) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("advise: failed to write {}: {e}", path.display());
                    1
                }
            },
            None => {
                print!("{}", output.rendered);
                0
            }
        },
        Err(e) => {
            eprintln!("advise: {e}");
            e.exit_code()
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nondiv::experiment::{self, BcKind, Command, RunOptions};

/// Output directory override; the `--output` flag wins over it.
const OUTPUT_ENV: &str = "NONDIV_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "nondiv", version, about = "Solvers and estimate checks for non-divergence elliptic equations")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding the config and NONDIV_OUTPUT_DIR.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bc {
    Dirichlet,
    Neumann,
    Oblique,
    Robin,
}

#[derive(Subcommand)]
enum Cmd {
    /// Whole-space finite-difference solve with a-priori ratios.
    Solve(ConfigArg),
    /// Per-frequency solve for coefficients depending on x¹ only.
    Modes(ConfigArg),
    /// Half-space problem through the reflection reductions.
    Halfspace {
        #[command(flatten)]
        config: ConfigArg,
        /// Overrides `boundary.kind` in the config.
        #[arg(long, value_enum)]
        bc: Option<Bc>,
    },
    /// Mean-oscillation modulus of the coefficient draws.
    Vmo(ConfigArg),
    /// Sharp-function and a-priori estimate audit.
    Verify(ConfigArg),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let (command, config, bc) = match cli.command {
        Cmd::Solve(c) => (Command::Solve, c.config, None),
        Cmd::Modes(c) => (Command::Modes, c.config, None),
        Cmd::Halfspace { config, bc } => (Command::Halfspace, config.config, bc),
        Cmd::Vmo(c) => (Command::Vmo, c.config, None),
        Cmd::Verify(c) => (Command::Verify, c.config, None),
    };
    let opts = RunOptions {
        output_dir: cli.output.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from)),
        bc: bc.map(|b| match b {
            Bc::Dirichlet => BcKind::Dirichlet,
            Bc::Neumann => BcKind::Neumann,
            Bc::Oblique => BcKind::Oblique,
            Bc::Robin => BcKind::Robin,
        }),
        threads: Some(rayon::current_num_threads()),
    };
    let report = experiment::run(command, &config, &opts);
    match (&report.message, &report.output_dir) {
        (Some(msg), _) => eprintln!("error: {msg}"),
        (None, Some(dir)) => println!("{}: wrote {} files to {}", command.name(), report.manifest.outputs.len() + 1, dir.display()),
        _ => {}
    }
    ExitCode::from(report.exit_code as u8)
}

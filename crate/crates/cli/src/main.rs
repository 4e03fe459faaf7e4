use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neckgap::{run, Command, ExitStatus, RunOptions};

#[derive(Parser)]
#[command(name = "neckgap", version, about = "Gradient blow-up experiments for insulated p-Laplace inclusions")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the convexity hypotheses and report the thin-gap constants.
    CheckGeometry(Common),
    /// Sample the barrier inequalities and check closed-form derivatives.
    VerifyBarriers(Common),
    /// Solve the neck problem once.
    Solve(Common),
    /// Solve over a sequence of gap distances and fit the blow-up exponent.
    Sweep(Common),
    /// Weighted eigenproblem and disk decay for the three-dimensional rate.
    Weighted(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel solves.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write solved fields and iteration traces.
    #[arg(long)]
    dump_field: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { ExitStatus::Usage } else { ExitStatus::Success };
            return ExitCode::from(code.code() as u8);
        }
    };
    let (cmd, c) = match cli.command {
        Cmd::CheckGeometry(c) => (Command::CheckGeometry, c),
        Cmd::VerifyBarriers(c) => (Command::VerifyBarriers, c),
        Cmd::Solve(c) => (Command::Solve, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Weighted(c) => (Command::Weighted, c),
    };
    let opts = RunOptions {
        config: c.config,
        out: c.out,
        jobs: c.jobs,
        dump_field: c.dump_field,
    };
    let status = match run(cmd, &opts) {
        Ok(outcome) => {
            for t in &outcome.manifest.tasks {
                println!("{:<8} {}: {}", format!("{:?}", t.status).to_lowercase(), t.name, t.detail);
            }
            if let Some(e) = &outcome.error {
                eprintln!("error: {e}");
            }
            println!("outputs in {}", outcome.out_dir.display());
            outcome.status
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_status()
        }
    };
    ExitCode::from(status.code() as u8)
}

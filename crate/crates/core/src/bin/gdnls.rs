use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use gdnls::config::{parse_config, Command};
use gdnls::run::{resolve_output_dir, run, Status};

#[derive(Debug, Parser)]
#[command(name = "gdnls", about = "Generalized derivative NLS: simulation, wave operators and scattering")]
struct Cli {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn fail(status: Status, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("gdnls: {message}");
    ExitCode::from(status.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match parse_config(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => return fail(Status::of_error(&e), e),
    };
    if let Some(declared) = cfg.command {
        if declared != cli.command {
            return fail(
                Status::ValidationError,
                format!(
                    "config declares command `{}` but `{}` was requested",
                    declared.name(),
                    cli.command.name()
                ),
            );
        }
    }
    cfg.command = Some(cli.command);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Err(e) = cfg.validate() {
        return fail(Status::ValidationError, e);
    }
    let out_dir = resolve_output_dir(&cfg, cli.out.as_deref());
    match run(&cfg, &out_dir) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(e) = &report.error {
                eprintln!("gdnls: {e}");
            }
            for c in &report.checks {
                println!(
                    "{} {}: {:e} (threshold {:e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            println!(
                "{} finished with status {:?}; outputs in {}",
                cli.command.name(),
                report.status,
                out_dir.display()
            );
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => fail(Status::of_error(&e), e),
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use taskmux_cli::{
    builtin_subtasks, check, compare, compare_paths, delta_table, format_delta_table, load_scenario, output_path,
    run_scenario, CliError, EXIT_OK, EXIT_USAGE,
};

#[derive(Parser)]
#[command(name = "taskmux", version, about = "Run redundancy-resolution scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and print diagnostics to stderr.
    Validate { file: PathBuf },
    /// Run a scenario, write its CSV log and print a JSON summary line.
    Run {
        file: PathBuf,
        /// Dotted-path overrides such as `mode=traditional` or `merging.gamma=0.8`.
        overrides: Vec<String>,
    },
    /// Run merged and traditional modes and print per-metric deltas.
    Compare { file: PathBuf, overrides: Vec<String> },
    /// List built-in subtask kinds, or the elementary subtasks of a scenario.
    ListSubtasks { file: Option<PathBuf> },
    /// Print a random scenario for property testing.
    Generate {
        #[arg(long)]
        seed: u64,
    },
}

fn exec(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Validate { file } => {
            let scn = load_scenario(&file, &[])?;
            for d in check(&scn.config)? {
                eprintln!("{d}");
            }
        }
        Command::Run { file, overrides } => {
            let scn = load_scenario(&file, &overrides)?;
            for d in check(&scn.config)? {
                eprintln!("{d}");
            }
            let csv = output_path(&scn);
            let (summary, _) = run_scenario(&scn, &csv)?;
            println!("{}", summary.to_json_line());
        }
        Command::Compare { file, overrides } => {
            let scn = load_scenario(&file, &overrides)?;
            for d in check(&scn.config)? {
                eprintln!("{d}");
            }
            let (merged, trad) = compare(&scn)?;
            let (a, b) = compare_paths(&scn);
            eprintln!("logs: {} {}", a.display(), b.display());
            println!("{}", merged.to_json_line());
            println!("{}", trad.to_json_line());
            print!("{}", format_delta_table(&delta_table(&merged, &trad)));
        }
        Command::ListSubtasks { file: None } => println!("{}", builtin_subtasks()),
        Command::ListSubtasks { file: Some(file) } => {
            let scn = load_scenario(&file, &[])?;
            let subs = taskmux::unitize(&scn.config.subtasks, scn.config.merging.status_defaults())
                .map_err(|e| CliError::Invalid(vec![taskmux::Diagnostic {
                    severity: taskmux::Severity::Error,
                    message: format!("subtasks: {e}"),
                }]))?;
            println!("{:<4} {:<7} label", "id", "parent");
            for s in subs {
                println!("{:<4} {:<7} {}", s.id, s.parent, s.kind.label());
            }
        }
        Command::Generate { seed } => {
            let cfg = taskmux::scenario::random_scenario(seed);
            println!("{}", serde_json::to_string_pretty(&cfg).expect("scenario serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match exec(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use presyn::harness::{self, HarnessError, SynOptions};
use presyn::{BuildLimits, SearchBudget, SliceMode};

#[derive(Parser)]
#[command(name = "presyn", version, about = "Presynthesis and example-driven synthesis over tree automata")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the offline FTA, oracle and final index into a bundle directory.
    Presyn {
        /// Grammar JSON file, or `builtin:string` (the default) for the built-in string DSL.
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(long)]
        domain_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = BuildLimits::default().max_states)]
        max_states: usize,
        #[arg(long, default_value_t = BuildLimits::default().max_transitions)]
        max_transitions: usize,
    },
    /// Synthesize a program from examples using a bundle.
    Syn {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long, default_value = "oracle")]
        mode: SliceMode,
        /// Wall-clock budget in seconds.
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
        /// Which example to slice on (0-based, file order).
        #[arg(long, default_value_t = 0)]
        slice_example: usize,
        /// Write the slice here, with metrics in PATH.metrics.json.
        #[arg(long)]
        emit_slice: Option<PathBuf>,
        #[arg(long, default_value_t = SearchBudget::default().max_concrete_states)]
        max_concrete_states: usize,
        #[arg(long, default_value_t = SearchBudget::default().max_programs_checked)]
        max_programs: u64,
    },
    /// Sweep abstraction granularity over a task suite and write a CSV report.
    Scale {
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(long)]
        domain_config: PathBuf,
        /// Inclusive range such as `1..4`.
        #[arg(long)]
        k_range: String,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
    },
    /// Print sizes of a bundle's artifacts.
    Stats {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Unroll a recursive grammar to a fixed depth.
    Unroll {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// A closed pipe (`presyn syn ... | head`) is not an error worth a panic.
fn emit(text: impl Display) {
    let _ = writeln!(io::stdout().lock(), "{text}");
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Presyn {
            grammar,
            domain_config,
            out,
            max_states,
            max_transitions,
        } => {
            let (file, cfg) = harness::load_inputs(grammar.as_deref(), &domain_config)?;
            let limits = BuildLimits {
                max_states,
                max_transitions,
            };
            let report = harness::presyn(&file, &cfg, limits, &out)?;
            emit(report);
            Ok(0)
        }
        Command::Syn {
            bundle,
            examples,
            mode,
            timeout,
            slice_example,
            emit_slice,
            max_concrete_states,
            max_programs,
        } => {
            let opts = SynOptions {
                mode,
                slice_example,
                emit_slice,
                budget: SearchBudget {
                    timeout: harness::timeout_from_secs(timeout)?,
                    max_concrete_states,
                    max_programs_checked: max_programs,
                },
                limits: BuildLimits::default(),
            };
            let report = harness::syn(&bundle, &read(&examples)?, &opts)?;
            emit(serde_json::to_string_pretty(&report.to_json()).expect("json"));
            Ok(report.exit_code())
        }
        Command::Scale {
            grammar,
            domain_config,
            k_range,
            tasks,
            out,
            timeout,
        } => {
            let (file, cfg) = harness::load_inputs(grammar.as_deref(), &domain_config)?;
            let ks = harness::parse_k_range(&k_range)?;
            let tasks = harness::parse_tasks(&read(&tasks)?)?;
            let budget = SearchBudget {
                timeout: harness::timeout_from_secs(timeout)?,
                ..SearchBudget::default()
            };
            let rows = harness::scale(&file, &cfg, ks, &tasks, budget)?;
            fs::write(&out, harness::scale_csv(&rows)).map_err(|source| HarnessError::Io { path: out.clone(), source })?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            emit(format_args!("wrote {} rows to {} ({failed} failed)", rows.len(), out.display()));
            Ok(0)
        }
        Command::Stats { bundle } => {
            emit(harness::stats(&bundle)?.to_string().trim_end());
            Ok(0)
        }
        Command::Unroll { grammar, depth, out } => {
            let g = harness::unroll_file(&grammar, depth, &out)?;
            emit(format_args!("wrote {} productions to {}", g.productions.len(), out.display()));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PRESYN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

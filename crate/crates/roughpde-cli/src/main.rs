//! `roughpde` — command-line front end for the rough-signal PDE solver.
//!
//! One experiment per process: a JSON config names a command (`solve`,
//! `wongzakai`, `contraction`, `twisted`, `flowcheck`, `opcheck`) along with
//! the operator, driving fields, driver, grid, and output directory. `run`
//! executes it and writes deterministic artifacts; `validate` checks a config
//! without running anything; `preset` prints or runs a built-in experiment.
//!
//! Exit codes: 0 on success, 2 for config problems, 3 when the solver aborts
//! (the message carries the failing stage), 4 when the run finishes but an
//! assertion in the summary fails.

mod config;
mod runner;

use clap::{Parser, Subcommand};
use config::{cross_validate, parse_config, preset, ExperimentConfig, PRESET_NAMES};
use runner::{resolve_out_dir, RunError};
use std::fs;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "roughpde",
    version,
    about = "Pathwise solver for nonlinear parabolic equations driven by rough signals",
    long_about = "Solves du = F(t, x, Du, D\u{b2}u) dt - Du \u{b7} V(x) dz for rough drivers z by\n\
                  conjugating F through the flow of the driving fields, running a monotone\n\
                  finite-difference scheme on the transformed equation, and composing the\n\
                  answer back through the inverse flow. Experiments are described by JSON\n\
                  configs; see `roughpde preset` for ready-made examples."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the Brownian driver seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread cap (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config's schema and cross-references without running it.
    Validate {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// List presets, print one as JSON, or run one with --out.
    Preset {
        /// Preset name; omit to list all presets.
        name: Option<String>,
        /// Run the preset and write artifacts here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the Brownian driver seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread cap (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            cap_threads(threads);
            let cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(code) => return code,
            };
            execute(cfg, out, seed)
        }
        Command::Validate { config } => {
            let cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(code) => return code,
            };
            let diagnostics = cross_validate(&cfg);
            if diagnostics.is_empty() {
                println!(
                    "ok: {} describes a valid `{}` experiment",
                    config.display(),
                    cfg.command.name()
                );
                0
            } else {
                for d in &diagnostics {
                    eprintln!("error: {d}");
                }
                eprintln!("{} problem(s) found", diagnostics.len());
                2
            }
        }
        Command::Preset {
            name,
            out,
            seed,
            threads,
        } => {
            let Some(name) = name else {
                println!("available presets:");
                for p in PRESET_NAMES {
                    println!("  {p:<20} {}", preset_blurb(p));
                }
                return 0;
            };
            let Some(cfg) = preset(&name) else {
                eprintln!(
                    "error: unknown preset {name:?}; known presets: {}",
                    PRESET_NAMES.join(", ")
                );
                return 2;
            };
            match out {
                None => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&cfg).expect("presets serialize")
                    );
                    0
                }
                Some(dir) => {
                    cap_threads(threads);
                    execute(cfg, Some(dir), seed)
                }
            }
        }
    }
}

fn preset_blurb(name: &str) -> &'static str {
    match name {
        "transport" => "bump carried along a smooth sine path (solve)",
        "heat-shift" => "heat flow in coordinates riding a drifting sine path (solve)",
        "oscillatory-circle" => "pure-area rotation driver, forward/inverse round trip (flowcheck)",
        "twisted-sincos" => "area-decorated approximations vs the drift-corrected equation (twisted)",
        "hjb-two-controls" => "two-control Bellman operator under a Brownian driver (contraction)",
        _ => "",
    }
}

fn cap_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        // Ignore a second initialization (only possible inside tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global();
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, i32> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        2
    })?;
    parse_config(&text).map_err(|d| {
        eprintln!("error: {d}");
        2
    })
}

fn execute(cfg: ExperimentConfig, out_flag: Option<PathBuf>, seed: Option<u64>) -> i32 {
    let out_dir = resolve_out_dir(&cfg, out_flag);
    let command = cfg.command;
    match runner::run(cfg, &out_dir, seed) {
        Ok(summary) => {
            for a in &summary.assertions {
                println!(
                    "{} {} — {}",
                    if a.pass { "pass" } else { "FAIL" },
                    a.name,
                    a.detail
                );
            }
            println!(
                "{}: wrote {} artifact(s) to {} in {:.2}s",
                command.name(),
                summary.artifacts.len(),
                out_dir.display(),
                summary.runtime_seconds
            );
            if summary.all_passed() {
                0
            } else {
                eprintln!("one or more assertions failed; see summary.json");
                4
            }
        }
        Err(RunError::Config(diagnostics)) => {
            for d in &diagnostics {
                eprintln!("error: {d}");
            }
            eprintln!("{} problem(s) found", diagnostics.len());
            2
        }
        Err(RunError::Io(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(RunError::Numerical(e)) => {
            eprintln!("error [stage:{}]: {e}", e.stage().tag());
            3
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctrl_core::harness::{self, parse_config_with, RunConfig, EXIT_CONFIG};
use ctrl_core::lq::solve_lq;
use ctrl_core::Error;

#[derive(Parser)]
#[command(name = "ctrl", about = "Continuous-time policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or verify) as described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Single seed; replaces `seed`/`seeds` from the file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra `key=value` overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print the closed-form LQ constants (k0, k1, k2, optimal policy).
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn config_error(e: &Error) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(EXIT_CONFIG as u8)
}

fn load(path: Option<&PathBuf>, overrides: &[(String, String)]) -> Result<RunConfig, Error> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config_with(&text, overrides)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            algo,
            env,
            out,
            set,
        } => {
            let mut overrides = Vec::new();
            if let Some(e) = env {
                overrides.push(("env".to_string(), e));
            }
            if let Some(a) = algo {
                overrides.push(("algo".to_string(), a));
            }
            if let Some(s) = seed {
                overrides.push(("seed".to_string(), s.to_string()));
            }
            if let Some(o) = out {
                overrides.push(("out".to_string(), o.display().to_string()));
            }
            for kv in set {
                match kv.split_once('=') {
                    Some((k, v)) => overrides.push((k.trim().to_string(), v.trim().to_string())),
                    None => return config_error(&Error::Config(format!("override `{kv}` is not key=value"))),
                }
            }
            let cfg = match load(Some(&config), &overrides) {
                Ok(c) => c,
                Err(e) => return config_error(&e),
            };
            match harness::run(&cfg) {
                Ok(report) => {
                    for s in &report.seeds {
                        if let Some(d) = &s.diverged {
                            eprintln!("seed {} diverged: {d}", s.seed);
                        }
                    }
                    for c in &report.checks {
                        println!("{:<40} {:>14.6e} {:>14.6e} {:>12.3e} {}", c.check, c.lhs, c.rhs, c.se, c.status);
                    }
                    println!("wrote {}", cfg.out.display());
                    ExitCode::from(report.exit_code as u8)
                }
                Err(e @ (Error::Config(_) | Error::Parse { .. })) => config_error(&e),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Oracle { config } => {
            let cfg = match load(config.as_ref(), &[]) {
                Ok(c) => c,
                Err(e) => return config_error(&e),
            };
            match solve_lq(&cfg.lq) {
                Ok(s) => {
                    let pi = s.policy();
                    println!("k0 = {:.10}", s.k0);
                    println!("k1 = {:.10}", s.k1);
                    println!("k2 = {:.10}", s.k2);
                    println!("mean_slope = {:.10}", s.mean_slope);
                    println!("mean_intercept = {:.10}", s.mean_intercept);
                    println!("variance = {:.10}", s.variance);
                    println!("theta = {:.10} {:.10} {:.10}", pi.theta[0], pi.theta[1], pi.theta[2]);
                    ExitCode::SUCCESS
                }
                Err(e) => config_error(&e),
            }
        }
    }
}

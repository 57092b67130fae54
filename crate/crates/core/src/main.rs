//! `trps-lab` command line: runs one experiment scenario per invocation.
//!
//! Usage:
//!   trps-lab <scenario> --config <path> [--seed N] [--out DIR]
//!   trps-lab validate --config <path>
//!
//! Scenarios: decohere, relax, trps, pipeline.
//! Exit codes: 0 success, 1 usage error, 2 invariant violation.
//! `TRPS_LAB_THREADS` caps the worker-thread count (default 1).

use std::path::Path;
use std::process::ExitCode;
use std::str::FromStr;

use trps_lab::harness::{execute, ExperimentConfig, Scenario};

const USAGE: &str = "\
usage:
  trps-lab <scenario> --config <path> [--seed N] [--out DIR]
  trps-lab validate --config <path>

scenarios:
  decohere   stochastic-time evolution suite (MC vs analytic decay,
             semigroup, lifetime, event reading)
  relax      water-bag N-body run to collisionless equilibrium with
             Lynden-Bell fits
  trps       ground-state pair, invariant potential, order parameter,
             reparametrization checks, proper-time statistics
  pipeline   relax -> trps -> sigma -> decohere, end to end

options:
  --config <path>   key-value experiment configuration (required)
  --seed N          overrides run.seed from the config
  --out DIR         overrides run.out_dir from the config

environment:
  TRPS_LAB_THREADS  caps the worker-thread count (default 1); results are
                    bit-identical for every setting

exit codes: 0 success, 1 usage error, 2 invariant violation";

struct Args {
    command: String,
    config_path: String,
    seed: Option<u64>,
    out: Option<String>,
}

fn parse_args(argv: Vec<String>) -> Result<Option<Args>, String> {
    let mut command = None;
    let mut config_path = None;
    let mut seed = None;
    let mut out = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "-h" | "--help" => return Ok(None),
            "--config" => {
                config_path = Some(it.next().ok_or("--config requires a path")?);
            }
            "--seed" => {
                let v = it.next().ok_or("--seed requires a value")?;
                seed = Some(
                    v.parse::<u64>()
                        .map_err(|_| format!("--seed: {v:?} is not an unsigned integer"))?,
                );
            }
            "--out" => {
                out = Some(it.next().ok_or("--out requires a directory")?);
            }
            other if command.is_none() && !other.starts_with('-') => {
                command = Some(other.to_string());
            }
            other => return Err(format!("unexpected argument {other:?}")),
        }
    }
    let command = command.ok_or("missing scenario (or `validate`)")?;
    let config_path = config_path.ok_or("missing --config <path>")?;
    Ok(Some(Args {
        command,
        config_path,
        seed,
        out,
    }))
}

fn run(argv: Vec<String>) -> Result<u8, String> {
    let Some(args) = parse_args(argv)? else {
        println!("{USAGE}");
        return Ok(0);
    };
    let text = std::fs::read_to_string(&args.config_path)
        .map_err(|e| format!("cannot read {}: {e}", args.config_path))?;
    let mut cfg = ExperimentConfig::from_text(&text).map_err(|e| e.to_string())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }

    if args.command == "validate" {
        let violations = cfg.validate();
        if violations.is_empty() {
            println!("ok: no invariant violations");
        } else {
            println!("{} violation(s):", violations.len());
            for v in &violations {
                println!("  {v}");
            }
        }
        return Ok(0);
    }

    let scenario = Scenario::from_str(&args.command)?;
    let out_dir = cfg.out_dir.clone();
    Ok(execute(scenario, &cfg, Path::new(&out_dir)) as u8)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run(argv) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            eprintln!("{USAGE}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use iwlab::config::{RunConfig, IDENTITY_NAMES};
use iwlab::{execute, RunError};
use iwlab_core::noise::{TimeGrid, WienerBank};
use iwlab_core::scenarios::registry;

const USAGE: &str = "\
iwlab — pathwise verification of stochastic-calculus identities

USAGE:
    iwlab run [--config <path>] [--seed <n>] [--levels <a>..<b>]
              [--replicates <n>] [--out <dir>]
    iwlab list
    iwlab dump-bank --seed <n> --drivers <k> --level <l> --out <file>

run options override the config file; levels are inclusive (6..10 means
five nested grids). Exit status: 0 suite passed, 1 a check failed,
2 usage error, 3 I/O error.
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.first().map(String::as_str) {
        Some("run") => cmd_run(&args[1..]),
        Some("list") | Some("--list") => cmd_list(),
        Some("dump-bank") => cmd_dump_bank(&args[1..]),
        Some("--help") | Some("-h") | None => {
            print!("{USAGE}");
            ExitCode::from(if args.is_empty() { 2 } else { 0 })
        }
        Some(other) => {
            eprintln!("unknown command {other:?}\n{USAGE}");
            ExitCode::from(2)
        }
    }
}

fn take_value<'a>(args: &'a [String], i: &mut usize, flag: &str) -> Result<&'a str, String> {
    *i += 1;
    args.get(*i)
        .map(String::as_str)
        .ok_or_else(|| format!("{flag} needs a value"))
}

fn cmd_run(args: &[String]) -> ExitCode {
    let mut config_path: Option<PathBuf> = None;
    let mut seed: Option<u64> = None;
    let mut levels: Option<(u32, u32)> = None;
    let mut replicates: Option<usize> = None;
    let mut out: Option<PathBuf> = None;
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--config" => match take_value(args, &mut i, "--config") {
                Ok(v) => config_path = Some(PathBuf::from(v)),
                Err(e) => return usage_error(&e),
            },
            "--seed" => match take_value(args, &mut i, "--seed")
                .and_then(|v| v.parse::<u64>().map_err(|e| format!("--seed: {e}")))
            {
                Ok(v) => seed = Some(v),
                Err(e) => return usage_error(&e),
            },
            "--levels" => match take_value(args, &mut i, "--levels").and_then(parse_levels) {
                Ok(v) => levels = Some(v),
                Err(e) => return usage_error(&e),
            },
            "--replicates" => match take_value(args, &mut i, "--replicates")
                .and_then(|v| v.parse::<usize>().map_err(|e| format!("--replicates: {e}")))
            {
                Ok(v) => replicates = Some(v),
                Err(e) => return usage_error(&e),
            },
            "--out" => match take_value(args, &mut i, "--out") {
                Ok(v) => out = Some(PathBuf::from(v)),
                Err(e) => return usage_error(&e),
            },
            other => return usage_error(&format!("unknown option {other:?}")),
        }
        i += 1;
    }

    let mut config = match config_path {
        Some(path) => match std::fs::read_to_string(&path) {
            Ok(text) => match RunConfig::from_toml(&text) {
                Ok(cfg) => cfg,
                Err(e) => return usage_error(&e.to_string()),
            },
            Err(e) => {
                eprintln!("io: {}: {e}", path.display());
                return ExitCode::from(3);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some((base, last)) = levels {
        config.base_level = base;
        config.level_count = last - base + 1;
    }
    if let Some(r) = replicates {
        config.replicates = r;
    }
    if let Some(dir) = out {
        config.output_dir = dir.to_string_lossy().into_owned();
    }

    let out_dir = PathBuf::from(&config.output_dir);
    match execute(&config, &out_dir) {
        Ok(report) => {
            let mut shown = std::collections::BTreeSet::new();
            for r in &report.records {
                let key = (r.scenario.clone(), r.identity.clone());
                if shown.insert(key) {
                    println!(
                        "{:>12} / {:<12} {:>8} ms",
                        r.scenario, r.identity, r.runtime_ms
                    );
                }
            }
            println!(
                "suite: {} ({} adjudicated, {} failed); outputs in {}",
                if report.summary.suite_pass { "PASS" } else { "FAIL" },
                report.summary.adjudicated,
                report.summary.failed,
                out_dir.display()
            );
            ExitCode::from(if report.summary.suite_pass { 0 } else { 1 })
        }
        Err(RunError::Usage(e)) => usage_error(&e.to_string()),
        Err(RunError::Io(e)) => {
            eprintln!("io: {e}");
            ExitCode::from(3)
        }
        Err(RunError::Check(e)) => {
            eprintln!("check execution failed: {e}");
            ExitCode::from(1)
        }
    }
}

fn parse_levels(text: &str) -> Result<(u32, u32), String> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| format!("--levels expects a..b, got {text:?}"))?;
    let base: u32 = a.parse().map_err(|e| format!("--levels: {e}"))?;
    let last: u32 = b.trim_start_matches('=').parse().map_err(|e| format!("--levels: {e}"))?;
    if last < base {
        return Err(format!("--levels: {last} < {base}"));
    }
    Ok((base, last))
}

fn usage_error(message: &str) -> ExitCode {
    eprintln!("error: {message}\n{USAGE}");
    ExitCode::from(2)
}

fn cmd_list() -> ExitCode {
    match registry() {
        Ok(scenarios) => {
            println!("scenarios:");
            for sc in scenarios {
                println!(
                    "  {:<4} d={} drivers={} horizon={}",
                    sc.name, sc.dim, sc.drivers, sc.horizon
                );
            }
            println!("identities:");
            for name in IDENTITY_NAMES {
                println!("  {name}");
            }
            println!("  all");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("registry failed: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_dump_bank(args: &[String]) -> ExitCode {
    let mut seed = 1u64;
    let mut drivers = 1usize;
    let mut level = 6u32;
    let mut out: Option<PathBuf> = None;
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--seed" => match take_value(args, &mut i, "--seed")
                .and_then(|v| v.parse().map_err(|e| format!("--seed: {e}")))
            {
                Ok(v) => seed = v,
                Err(e) => return usage_error(&e),
            },
            "--drivers" => match take_value(args, &mut i, "--drivers")
                .and_then(|v| v.parse().map_err(|e| format!("--drivers: {e}")))
            {
                Ok(v) => drivers = v,
                Err(e) => return usage_error(&e),
            },
            "--level" => match take_value(args, &mut i, "--level")
                .and_then(|v| v.parse().map_err(|e| format!("--level: {e}")))
            {
                Ok(v) => level = v,
                Err(e) => return usage_error(&e),
            },
            "--out" => match take_value(args, &mut i, "--out") {
                Ok(v) => out = Some(PathBuf::from(v)),
                Err(e) => return usage_error(&e),
            },
            other => return usage_error(&format!("unknown option {other:?}")),
        }
        i += 1;
    }
    let Some(out) = out else {
        return usage_error("dump-bank requires --out <file>");
    };
    let grid = match TimeGrid::dyadic(1.0, level) {
        Ok(g) => g,
        Err(e) => return usage_error(&e.to_string()),
    };
    let bank = match WienerBank::generate(seed, drivers, grid) {
        Ok(b) => b,
        Err(e) => return usage_error(&e.to_string()),
    };
    let mut buf = Vec::new();
    if let Err(e) = bank.write_csv(&mut buf) {
        eprintln!("io: {e}");
        return ExitCode::from(3);
    }
    if let Err(e) = std::fs::write(&out, buf) {
        eprintln!("io: {}: {e}", out.display());
        return ExitCode::from(3);
    }
    println!("wrote {}", out.display());
    ExitCode::SUCCESS
}

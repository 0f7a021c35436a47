use std::path::PathBuf;
use std::process::ExitCode;

use sampure_cli::config::{reference_config, Kind};
use sampure_cli::runner::{run_config, run_config_file, RunOptions};

const USAGE: &str = "\
sampure - deterministic score-based adversarial purification experiments

USAGE:
    sampure run --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]
    sampure verify --all [--out <dir>] [--seed <u64>]
    sampure reference-config [--out <path>]

The output directory defaults to the config's out_dir, then the SAMPURE_OUT
environment variable, then ./sampure-out. Exit codes: 0 success, 1 failed
verification checks, 2 validation error, 3 numerical abort.";

struct Flags {
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    all: bool,
}

fn parse_flags(args: &[String]) -> Result<Flags, String> {
    let mut flags = Flags {
        config: None,
        out: None,
        seed: None,
        threads: None,
        all: false,
    };
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--config" => {
                let v = it.next().ok_or("--config needs a path")?;
                flags.config = Some(PathBuf::from(v));
            }
            "--out" => {
                let v = it.next().ok_or("--out needs a path")?;
                flags.out = Some(PathBuf::from(v));
            }
            "--seed" => {
                let v = it.next().ok_or("--seed needs a value")?;
                flags.seed = Some(v.parse().map_err(|_| format!("bad seed {v:?}"))?);
            }
            "--threads" => {
                let v = it.next().ok_or("--threads needs a value")?;
                let n: usize = v.parse().map_err(|_| format!("bad thread count {v:?}"))?;
                if n == 0 {
                    return Err("--threads must be at least 1".into());
                }
                flags.threads = Some(n);
            }
            "--all" => flags.all = true,
            other => return Err(format!("unknown argument {other:?}")),
        }
    }
    Ok(flags)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return ExitCode::from(2);
    };
    let flags = match parse_flags(&args[1..]) {
        Ok(f) => f,
        Err(msg) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        out_override: flags.out.clone(),
        seed_override: flags.seed,
        threads_override: flags.threads,
    };

    match command.as_str() {
        "run" => {
            let Some(config) = flags.config else {
                eprintln!("error: run needs --config\n\n{USAGE}");
                return ExitCode::from(2);
            };
            finish(run_config_file(&config, &opts))
        }
        "verify" => {
            if !flags.all {
                eprintln!("error: verify needs --all\n\n{USAGE}");
                return ExitCode::from(2);
            }
            let mut cfg = reference_config();
            cfg.kind = Kind::VerifyTheory;
            cfg.out_dir = None;
            finish(run_config(cfg, &PathBuf::from("."), &opts))
        }
        "reference-config" => {
            let cfg = reference_config();
            let json = match serde_json::to_string_pretty(&cfg) {
                Ok(j) => j,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match flags.out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, json) {
                        eprintln!("error: writing {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                    println!("wrote reference config to {}", path.display());
                }
                None => println!("{json}"),
            }
            ExitCode::SUCCESS
        }
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            ExitCode::SUCCESS
        }
        other => {
            eprintln!("error: unknown command {other:?}\n\n{USAGE}");
            ExitCode::from(2)
        }
    }
}

fn finish(result: Result<sampure_cli::RunSummary, sampure_cli::RunError>) -> ExitCode {
    match result {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            println!("artifacts in {}", summary.out_dir.display());
            match summary.checks_passed {
                Some(false) => ExitCode::from(1),
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

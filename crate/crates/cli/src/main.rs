//! Command-line interface.
//!
//! Subcommands:
//!   train --config <path> [--seed N] [--out <dir>]
//!   eval --ckpt <path> [--scenes <config>] [--n N] [--out <dir>]
//!   gradcheck
//!   export-masks --ckpt <path> --out <dir> [--n N] [--features]
//!   compare --configs <a,b,...> [--seeds N] [--out <dir>]
//!
//! Exit code 0 on success, nonzero on any failure or failed check.
//! `METASLOT_LOG` (0/1/2) controls verbosity; nothing else is read from the
//! environment.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use metaslot_cli::compare::compare_configs;
use metaslot_cli::config::TrainConfig;
use metaslot_cli::error::{CliError, Result};
use metaslot_cli::runner::{run_eval, run_export_masks, run_gradcheck, run_train};

const USAGE: &str = "usage:
  metaslot train --config <path> [--seed N] [--out <dir>]
  metaslot eval --ckpt <path> [--scenes <config>] [--n N] [--out <dir>]
  metaslot gradcheck
  metaslot export-masks --ckpt <path> --out <dir> [--n N] [--features]
  metaslot compare --configs <a,b,...> [--seeds N] [--out <dir>]";

struct Args {
    flags: Vec<(String, Option<String>)>,
}

impl Args {
    fn parse(argv: &[String]) -> Result<Args> {
        let mut flags = Vec::new();
        let mut i = 0;
        while i < argv.len() {
            let a = &argv[i];
            if let Some(name) = a.strip_prefix("--") {
                let takes_value = !matches!(name, "features");
                if takes_value {
                    let value = argv
                        .get(i + 1)
                        .ok_or_else(|| CliError::usage(format!("--{name} needs a value")))?;
                    flags.push((name.to_string(), Some(value.clone())));
                    i += 2;
                } else {
                    flags.push((name.to_string(), None));
                    i += 1;
                }
            } else {
                return Err(CliError::usage(format!("unexpected argument {a:?}")));
            }
        }
        Ok(Args { flags })
    }

    fn value(&self, name: &str) -> Option<&str> {
        self.flags
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| v.as_deref())
    }

    fn has(&self, name: &str) -> bool {
        self.flags.iter().any(|(n, _)| n == name)
    }

    fn require(&self, name: &str) -> Result<&str> {
        self.value(name)
            .ok_or_else(|| CliError::usage(format!("missing --{name}")))
    }
}

fn cmd_train(args: &Args) -> Result<i32> {
    let mut cfg = TrainConfig::load(Path::new(args.require("config")?))?;
    if let Some(seed) = args.value("seed") {
        cfg.seed = seed
            .parse()
            .map_err(|_| CliError::usage("--seed must be an integer"))?;
    }
    let out_dir = PathBuf::from(args.value("out").unwrap_or("runs"));
    let (_ckpt, report) = run_train(&cfg, &out_dir)?;
    print!("{}", report.render());
    Ok(0)
}

fn cmd_eval(args: &Args) -> Result<i32> {
    let ckpt = PathBuf::from(args.require("ckpt")?);
    let scenes_cfg = match args.value("scenes") {
        Some(path) => Some(TrainConfig::load(Path::new(path))?),
        None => None,
    };
    let n = match args.value("n") {
        Some(v) => Some(
            v.parse()
                .map_err(|_| CliError::usage("--n must be an integer"))?,
        ),
        None => None,
    };
    let out_dir = args.value("out").map(PathBuf::from);
    let report = run_eval(&ckpt, scenes_cfg.as_ref(), n, out_dir.as_deref())?;
    print!("{}", report.render());
    Ok(0)
}

fn cmd_gradcheck() -> i32 {
    let (table, all_pass) = run_gradcheck();
    print!("{table}");
    if all_pass {
        0
    } else {
        1
    }
}

fn cmd_export(args: &Args) -> Result<i32> {
    let ckpt = PathBuf::from(args.require("ckpt")?);
    let out = PathBuf::from(args.require("out")?);
    let n = match args.value("n") {
        Some(v) => v
            .parse()
            .map_err(|_| CliError::usage("--n must be an integer"))?,
        None => 8,
    };
    let files = run_export_masks(&ckpt, &out, n, args.has("features"))?;
    println!("wrote {files} files to {}", out.display());
    Ok(0)
}

fn cmd_compare(args: &Args) -> Result<i32> {
    let configs = args.require("configs")?;
    let mut named = Vec::new();
    for path in configs.split(',') {
        let path = path.trim();
        if path.is_empty() {
            continue;
        }
        let cfg = TrainConfig::load(Path::new(path))?;
        let name = Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.to_string());
        named.push((name, cfg));
    }
    let seeds = match args.value("seeds") {
        Some(v) => v
            .parse()
            .map_err(|_| CliError::usage("--seeds must be an integer"))?,
        None => 3,
    };
    let table = compare_configs(&named, seeds)?;
    let rendered = table.render();
    print!("{rendered}");
    if let Some(out) = args.value("out") {
        let dir = PathBuf::from(out);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::io(dir.display().to_string(), e))?;
        let path = dir.join("comparison.txt");
        std::fs::write(&path, &rendered)
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
    }
    Ok(0)
}

fn run() -> Result<i32> {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = argv.first() else {
        eprintln!("{USAGE}");
        return Ok(2);
    };
    let args = Args::parse(&argv[1..])?;
    match command.as_str() {
        "train" => cmd_train(&args),
        "eval" => cmd_eval(&args),
        "gradcheck" => Ok(cmd_gradcheck()),
        "export-masks" => cmd_export(&args),
        "compare" => cmd_compare(&args),
        other => {
            eprintln!("unknown command {other:?}\n{USAGE}");
            Ok(2)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

mod args;
mod commands;

use args::{config_path, merge_config, read_config, Cli};
use clap::Parser;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use tcp_dipoles::io::write_json_atomic;
use tcp_dipoles::{par, Error};

/// Environment variable capping the worker pool.
const THREADS_ENV: &str = "TCP_DIPOLES_THREADS";

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    /// Fully resolved configuration; `--config` accepts this file back.
    config: &'a args::Command,
    parallel: bool,
    threads: Option<usize>,
    /// SHA-256 of every file written, by name.
    outputs: BTreeMap<String, String>,
    passed: bool,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.parse::<usize>()
                .map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a positive integer (got '{v}')"))?,
        ),
        Err(_) => None,
    };
    par::init_threads(threads);
    let out = cli.command.out_dir();
    std::fs::create_dir_all(out)?;
    let outcome = commands::dispatch(&cli.command)?;
    let mut outputs = BTreeMap::new();
    for name in &outcome.files {
        outputs.insert(name.clone(), sha256_file(&out.join(name))?);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        config: &cli.command,
        parallel: par::is_parallel(),
        threads,
        outputs,
        passed: outcome.passed,
    };
    write_json_atomic(&out.join("run_manifest.json"), &manifest)?;
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config_path(&argv) {
        Some(path) => match read_config(&path) {
            Ok(cfg) => merge_config(&argv, &cfg),
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
        },
        None => argv,
    };
    // clap exits with 2 on usage errors and 0 for --help/--version.
    let cli = Cli::parse_from(argv);
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            // Out-of-range parameters are usage errors.
            let usage = matches!(e.downcast_ref::<Error>(), Some(Error::InvalidParameter(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

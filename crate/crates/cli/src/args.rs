//! Flag definitions and the key=value config layer.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "tcp-dipoles", version, about = "Smeared two-component plasma: sampling, estimators and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Tabulate the overlap kernel g_1 and report κ and Z_β.
    KernelTable(KernelTableArgs),
    /// Run Metropolis–Hastings chains and write traces.
    Sample(SampleArgs),
    /// Summarize traces written by `sample`.
    Analyze(AnalyzeArgs),
    /// Estimate log Z by thermodynamic integration or annealing.
    FreeEnergy(FreeEnergyArgs),
    /// Run the identity and bound suites; exit 1 on any failure.
    Verify(VerifyArgs),
    /// Count nearest-neighbor graphs on p vertices by component number.
    Enumerate(EnumerateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::KernelTable(_) => "kernel-table",
            Command::Sample(_) => "sample",
            Command::Analyze(_) => "analyze",
            Command::FreeEnergy(_) => "free-energy",
            Command::Verify(_) => "verify",
            Command::Enumerate(_) => "enumerate",
        }
    }

    pub fn out_dir(&self) -> &Path {
        match self {
            Command::KernelTable(a) => &a.common.out,
            Command::Sample(a) => &a.common.out,
            Command::Analyze(a) => &a.common.out,
            Command::FreeEnergy(a) => &a.common.out,
            Command::Verify(a) => &a.common.out,
            Command::Enumerate(a) => &a.common.out,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// key=value file, or a run_manifest.json from an earlier run. Flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct KernelTableArgs {
    /// Table spacing in r.
    #[arg(long, default_value_t = 1e-3)]
    pub spacing: f64,
    /// Inverse temperatures (> 2) at which to report Z_β, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "3,4")]
    pub beta: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 3.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// Measurement steps after burn-in (accepts 1e6).
    #[arg(long, default_value = "1000000", value_parser = parse_count)]
    pub steps: u64,
    #[arg(long, default_value = "250000", value_parser = parse_count)]
    pub burnin: u64,
    /// Steps between snapshots.
    #[arg(long, default_value = "500", value_parser = parse_count)]
    pub stride: u64,
    /// Seed of the chain RNG (required unless resuming).
    #[arg(long, required_unless_present = "resume")]
    pub seed: Option<u64>,
    /// Initial state: uniform or paired.
    #[arg(long, default_value = "paired")]
    pub init: String,
    /// Move weights: five comma-separated values or name=value pairs.
    #[arg(long)]
    pub moves: Option<String>,
    /// Independent chains (streams 0..chains of the seed).
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// Test functions for the fluctuation columns, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "bump")]
    pub test_functions: Vec<String>,
    /// Continue a single chain from a checkpoint.json. The checkpoint's burn-in
    /// is kept and the chain runs until burn-in + steps in total.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Directories written by `sample` (repeatable).
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Tail thresholds in units of λ.
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,20")]
    pub thresholds: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct FreeEnergyArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 3.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// ti (log Z), annealed (log Z) or moment (log E[exp(β(F - F̃))]).
    #[arg(long, default_value = "ti")]
    pub method: String,
    /// Quadrature nodes (ti, moment) or temperature rungs (annealed).
    #[arg(long, default_value_t = 16)]
    pub nodes: usize,
    /// Chains per node (ti, moment) or independent runs (annealed).
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long, default_value = "50000", value_parser = parse_count)]
    pub burnin: u64,
    /// Steps per node (ti, moment) or sweeps per rung (annealed).
    #[arg(long, default_value = "200000", value_parser = parse_count)]
    pub steps: u64,
    #[arg(long, default_value = "100", value_parser = parse_count)]
    pub stride: u64,
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Random instances for the grid identities.
    #[arg(long, default_value_t = 20)]
    pub grid_instances: usize,
    /// Training and test instances per bound.
    #[arg(long, default_value_t = 10_000)]
    pub bound_instances: usize,
    /// Worst training instances refined before freezing a constant.
    #[arg(long, default_value_t = 20)]
    pub refine_top: usize,
    #[arg(long, default_value_t = 20_000)]
    pub refine_iterations: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct EnumerateArgs {
    #[arg(long)]
    pub p: usize,
    /// Also enumerate exhaustively (p ≤ 8) and fail on any mismatch.
    #[arg(long)]
    pub check: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

/// Integer flag that also accepts scientific notation such as `1e6`.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let x: f64 = s.parse().map_err(|_| format!("'{s}' is not a count"))?;
    if x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(format!("'{s}' is not a nonnegative integer"))
    }
}

/// Reads `path` as key=value lines, or as the `config` object of a run manifest.
pub fn read_config(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        let manifest: serde_json::Value = serde_json::from_str(&text).context("parsing manifest")?;
        let config = manifest
            .get("config")
            .and_then(|c| c.as_object())
            .context("manifest has no config object")?;
        return Ok(config
            .iter()
            .filter(|(k, _)| *k != "command")
            .filter_map(|(k, v)| json_to_flag_value(v).map(|s| (k.clone(), s)))
            .collect());
    }
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value", path.display(), no + 1);
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Flag text for a manifest value; `None` drops it (null or false).
fn json_to_flag_value(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::Null | serde_json::Value::Bool(false) => None,
        serde_json::Value::Bool(true) => Some(String::new()),
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(items) => Some(
            items
                .iter()
                .filter_map(json_to_flag_value)
                .collect::<Vec<_>>()
                .join(","),
        ),
        other => Some(other.to_string()),
    }
}

/// Appends `--key value` for every config entry whose flag is absent from `argv`.
/// An empty value stands for a boolean switch.
pub fn merge_config(argv: &[String], config: &BTreeMap<String, String>) -> Vec<String> {
    let mut out = argv.to_vec();
    for (key, value) in config {
        let flag = format!("--{}", key.replace('_', "-"));
        let present = argv.iter().any(|a| a == &flag || a.starts_with(&format!("{flag}=")));
        if present {
            continue;
        }
        out.push(flag);
        if !value.is_empty() {
            out.push(value.clone());
        }
    }
    out
}

/// Value of `--config` in raw argv, if any.
pub fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

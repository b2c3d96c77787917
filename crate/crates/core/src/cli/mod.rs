//! Command-line front end: one TOML document per run, one output directory per run.

mod commands;
mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{
    AbsorbSection, DimensionSection, FractionalSection, MeshConfig, OperatorConfig, PairSection,
    ResolventSection, RunConfig, SamplingSection, SemigroupSection, TransitivitySection,
    UscSection,
};

use crate::error::{
    ExperimentError, GeometryError, IntegratorError, NonlinearityError, OperatorError,
};
use crate::operator::FRACTIONAL_SIGN_CONVENTION;

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "DAMPWAVE_OUT";
pub const DEFAULT_OUTPUT: &str = "runs";

pub const EXIT_PASS: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_PROBE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dampwave",
    version,
    about = "Damped wave laboratory with dynamic boundary conditions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output root. Overrides `output` in the config and $DAMPWAVE_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel scans.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config entry, e.g. `--set stepper.dt=0.01`. Recorded in the manifest.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one trajectory.
    Simulate { config: PathBuf },
    /// Resolvent norm along the imaginary axis with a power-law fit.
    ResolventScan { config: PathBuf },
    /// Weighted norms of `A e^{At}` on a time grid.
    SemigroupProbe { config: PathBuf },
    /// Half-power composition and the resolvent component bound.
    FracPowerCheck { config: PathBuf },
    /// Sampled sign and growth checks of the nonlinear terms.
    ValidateNonlinearity { config: PathBuf },
    /// Entry into and invariance of an absorbing ball.
    Absorb { config: PathBuf },
    /// Contraction of a trajectory pair and the separation envelope.
    Contract { config: PathBuf },
    /// Distance of `S_α` from `S_0` over an α grid.
    UscScan { config: PathBuf },
    /// Split of a trajectory difference into free and forced parts.
    Decompose { config: PathBuf },
    /// Box-counting estimate on late snapshots.
    Dimension { config: PathBuf },
    /// Composed rates of exponential attraction.
    Transitivity { config: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    Simulate,
    ResolventScan,
    SemigroupProbe,
    FracPowerCheck,
    ValidateNonlinearity,
    Absorb,
    Contract,
    UscScan,
    Decompose,
    Dimension,
    Transitivity,
}

impl Probe {
    pub fn name(self) -> &'static str {
        match self {
            Probe::Simulate => "simulate",
            Probe::ResolventScan => "resolvent-scan",
            Probe::SemigroupProbe => "semigroup-probe",
            Probe::FracPowerCheck => "frac-power-check",
            Probe::ValidateNonlinearity => "validate-nonlinearity",
            Probe::Absorb => "absorb",
            Probe::Contract => "contract",
            Probe::UscScan => "usc-scan",
            Probe::Decompose => "decompose",
            Probe::Dimension => "dimension",
            Probe::Transitivity => "transitivity",
        }
    }

    /// The property of the model a run of this probe tests.
    pub fn anchor(self) -> &'static str {
        match self {
            Probe::Simulate => "energy identity of the discrete flow",
            Probe::ResolventScan => "resolvent decay along the imaginary axis",
            Probe::SemigroupProbe => "smoothing bound of the semigroup",
            Probe::FracPowerCheck => "fractional powers of the generator",
            Probe::ValidateNonlinearity => "sign and growth assumptions on f and g",
            Probe::Absorb => "bounded absorbing ball",
            Probe::Contract => "continuous dependence and contraction of differences",
            Probe::UscScan => "upper semicontinuity at rate sqrt(alpha)",
            Probe::Decompose => "weak decomposition of trajectory differences",
            Probe::Dimension => "finite fractal dimension in the weak topology",
            Probe::Transitivity => "transitivity of exponential attraction",
        }
    }
}

impl Command {
    fn split(&self) -> (Probe, &Path) {
        match self {
            Command::Simulate { config } => (Probe::Simulate, config),
            Command::ResolventScan { config } => (Probe::ResolventScan, config),
            Command::SemigroupProbe { config } => (Probe::SemigroupProbe, config),
            Command::FracPowerCheck { config } => (Probe::FracPowerCheck, config),
            Command::ValidateNonlinearity { config } => (Probe::ValidateNonlinearity, config),
            Command::Absorb { config } => (Probe::Absorb, config),
            Command::Contract { config } => (Probe::Contract, config),
            Command::UscScan { config } => (Probe::UscScan, config),
            Command::Decompose { config } => (Probe::Decompose, config),
            Command::Dimension { config } => (Probe::Dimension, config),
            Command::Transitivity { config } => (Probe::Transitivity, config),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Probe {
        probe: &'static str,
        message: String,
    },
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Probe { .. } => EXIT_PROBE,
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Probe { probe, message } => write!(f, "probe {probe} failed: {message}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

fn config_like(e: &ExperimentError) -> bool {
    let op = |e: &OperatorError| {
        matches!(
            e,
            OperatorError::InvalidParameter(_)
                | OperatorError::TooLargeForDense(..)
                | OperatorError::WindowTooSmall(_)
        )
    };
    let nl = |e: &NonlinearityError| matches!(e, NonlinearityError::Invalid(_));
    match e {
        ExperimentError::InvalidConfig(_) => true,
        ExperimentError::Operator(e) => op(e),
        ExperimentError::Nonlinearity(e) => nl(e),
        ExperimentError::Geometry(e) => {
            matches!(
                e,
                GeometryError::DegeneratePolygon(_) | GeometryError::NoRings
            )
        }
        ExperimentError::Integrator(e) => match e {
            IntegratorError::InvalidConfig(_) => true,
            IntegratorError::Operator(e) => op(e),
            IntegratorError::Nonlinearity(e) => nl(e),
            _ => false,
        },
        _ => false,
    }
}

/// Invalid input maps to a configuration error, anything else to a failure of `probe`.
pub(crate) fn classify(probe: Probe, e: impl Into<ExperimentError>) -> CliError {
    let e = e.into();
    if config_like(&e) {
        CliError::Config(format!("{}: {e}", probe.name()))
    } else {
        CliError::Probe {
            probe: probe.name(),
            message: e.to_string(),
        }
    }
}

/// `path:line:column: message` for a TOML error.
fn describe(path: &Path, text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("{}:{line}:{column}: {}", path.display(), e.message())
        }
        None => format!("{}: {}", path.display(), e.message()),
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {item}: expected KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("--set {item}: empty key segment")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut node = table;
    for seg in &path[..path.len() - 1] {
        let entry = node
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set {item}: `{seg}` is not a table")))?;
    }
    node.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `text`, applies `--set` overrides and rejects unknown keys.
pub fn load_config(path: &Path, text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| CliError::Config(describe(path, text, &e)))?;
    if overrides.is_empty() {
        return Ok(cfg);
    }
    let mut table: toml::Table =
        toml::from_str(text).map_err(|e| CliError::Config(describe(path, text, &e)))?;
    for item in overrides {
        apply_override(&mut table, item)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| {
            CliError::Config(format!("after --set overrides: {}", e.message()))
        })
}

/// Files and verdict of one probe run.
pub struct Outcome {
    pub passed: bool,
    pub summary: serde_json::Value,
    /// `(file name, contents)`, written in this order.
    pub files: Vec<(String, String)>,
}

pub(crate) fn json_report<T: Serialize>(probe: Probe, passed: bool, report: &T) -> String {
    let doc = serde_json::json!({
        "anchor": probe.anchor(),
        "probe": probe.name(),
        "passed": passed,
        "report": report,
    });
    serde_json::to_string_pretty(&doc).expect("reports serialize") + "\n"
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn output_root(cli_out: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

/// Runs `probe` on a loaded config and writes `<root>/<name>/`. Returns the run directory and verdict.
pub fn execute(
    probe: Probe,
    mut cfg: RunConfig,
    overrides: &[String],
    out: Option<&Path>,
    threads: Option<usize>,
) -> Result<(PathBuf, bool), CliError> {
    commands::resolve_defaults(probe, &mut cfg);
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            if n == 0 {
                return Err(CliError::Config("--threads must be positive".into()));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Io(e.to_string()))?
    };
    let outcome = pool.install(|| commands::dispatch(probe, &cfg))?;

    let name = cfg.name.clone().unwrap_or_else(|| probe.name().to_string());
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(CliError::Config(format!(
            "run name `{name}` is not a plain directory name"
        )));
    }
    let dir = output_root(out, &cfg).join(&name);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;

    let resolved = serde_json::to_value(&cfg).expect("config serializes");
    let config_text = serde_json::to_string(&resolved).expect("config serializes");
    let mut hashes = serde_json::Map::new();
    for (file, contents) in &outcome.files {
        let path = dir.join(file);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        hashes.insert(file.clone(), sha256_hex(contents.as_bytes()).into());
    }
    let manifest = serde_json::json!({
        "tool": "dampwave",
        "version": env!("CARGO_PKG_VERSION"),
        "probe": probe.name(),
        "anchor": probe.anchor(),
        "run_name": name,
        "passed": outcome.passed,
        "config": resolved,
        "config_sha256": sha256_hex(config_text.as_bytes()),
        "overrides": overrides,
        "threads": threads,
        "fractional_sign_convention": FRACTIONAL_SIGN_CONVENTION,
        "files": hashes,
        "summary": outcome.summary,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let path = dir.join("manifest.json");
    fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok((dir, outcome.passed))
}

/// Entry point of the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_PASS
            };
        }
    };
    let (probe, path) = cli.command.split();
    let result = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
        .and_then(|text| load_config(path, &text, &cli.set))
        .and_then(|cfg| execute(probe, cfg, &cli.set, cli.out.as_deref(), cli.threads));
    match result {
        Ok((dir, passed)) => {
            let verdict = if passed { "PASS" } else { "FAIL" };
            println!("{} {verdict}: {}", probe.name(), dir.display());
            if passed {
                EXIT_PASS
            } else {
                EXIT_PROBE
            }
        }
        Err(e) => {
            eprintln!("dampwave: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_reports_line_and_column() {
        let text = "seed = 3\n[mesh]\nn_r = 2\nn_theta = 8\nbogus = 1\n";
        let err = load_config(Path::new("run.toml"), text, &[]).unwrap_err();
        let CliError::Config(msg) = err else { panic!() };
        assert!(msg.starts_with("run.toml:5:1:"), "{msg}");
        assert!(msg.contains("bogus"));
    }

    #[test]
    fn overrides_create_and_replace_entries() {
        let text = "[operator]\nalpha = 1.0\nomega = 1.0\n";
        let sets = vec![
            "operator.alpha=0.25".to_string(),
            "stepper.dt=0.01".to_string(),
            "stepper.t_final=1".to_string(),
            "name=custom".to_string(),
        ];
        let cfg = load_config(Path::new("x.toml"), text, &sets).unwrap();
        assert_eq!(cfg.operator.alpha, 0.25);
        assert_eq!(cfg.stepper.unwrap().dt, 0.01);
        assert_eq!(cfg.name.as_deref(), Some("custom"));
        assert!(load_config(Path::new("x.toml"), text, &["operator.beta=1".into()]).is_err());
        assert!(load_config(Path::new("x.toml"), text, &["novalue".into()]).is_err());
    }

    #[test]
    fn errors_are_classified() {
        let c = classify(Probe::Absorb, ExperimentError::InvalidConfig("x".into()));
        assert_eq!(c.exit_code(), EXIT_CONFIG);
        let p = classify(Probe::Absorb, ExperimentError::NoEntry(3.0));
        assert_eq!(p.exit_code(), EXIT_PROBE);
        assert!(p.to_string().contains("absorb"));
    }
}

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 data-quality failure, 2 usage or configuration
//! error, 3 I/O error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, SignalConfig};
use crate::event_log::{load_log_with, EventLog, LoadOptions, ValidationReport};
use crate::patterns::{export_dot, mine_patterns, top_paths, write_paths_csv, PatternOptions};
use crate::relevance::{
    unit_report, write_precision_csv, SignalMode, UnitKind, UnitSpec, DEFAULT_K, DEFAULT_WINDOW,
};
use crate::sessionize::{baseline_windows, service_windows};
use crate::synthgen::{expected_metrics, generate, ExpectedMetrics, GenError, GenParams};
use crate::usefulness::{usefulness_report, write_curve_csv, CurveOptions, MetricError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0} rejected line(s) in the log")]
    DataQuality(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::DataQuality(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "iirlog", version, about = "Usefulness and click-through analytics for search interaction logs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every line of a log and report rejected ones.
    Validate(InputArgs),
    /// Local usefulness and the with/without-service curve as CSV.
    Usefulness(UsefulnessArgs),
    /// Click-through precision per session unit as CSV.
    Precision(PrecisionArgs),
    /// Mine action paths after the anchor as DOT or CSV.
    Patterns(PatternArgs),
    /// Generate a synthetic log plus an expected-metrics sidecar.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// JSONL event log.
    #[arg(long)]
    pub log: PathBuf,
    /// Signal configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail with exit code 1 if any log line is rejected.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct UsefulnessArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Largest window size of the curve.
    #[arg(long, default_value_t = 17)]
    pub n: usize,
    /// Skip windows cut short by the end of their session.
    #[arg(long)]
    pub exclude_truncated: bool,
    /// Comma-separated negative signals; adds adjusted usefulness per n.
    #[arg(long, value_delimiter = ',')]
    pub negative_set: Option<Vec<String>>,
    /// Also report service usages per process without deduplication.
    #[arg(long)]
    pub raw_local: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UnitArg {
    WholeSessionSplit,
    FilteredProcesses,
    SucceedingProcess,
    WindowSplit,
    WindowNosplit,
}

impl From<UnitArg> for UnitKind {
    fn from(u: UnitArg) -> Self {
        match u {
            UnitArg::WholeSessionSplit => UnitKind::WholeSessionSplit,
            UnitArg::FilteredProcesses => UnitKind::FilteredProcesses,
            UnitArg::SucceedingProcess => UnitKind::SucceedingProcess,
            UnitArg::WindowSplit => UnitKind::WindowSplit,
            UnitArg::WindowNosplit => UnitKind::WindowNoSplit,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    ClickThrough,
    AllPositive,
}

impl From<ModeArg> for SignalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ClickThrough => SignalMode::ClickThrough,
            ModeArg::AllPositive => SignalMode::AllPositive,
        }
    }
}

#[derive(Debug, Args)]
pub struct PrecisionArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Session units to report (repeatable); all units when omitted.
    #[arg(long, value_enum)]
    pub unit: Vec<UnitArg>,
    /// Window size for window units.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "click-through")]
    pub signal_mode: ModeArg,
    /// Minimum qualifying clicks per search; unit default when omitted.
    #[arg(long)]
    pub min_signals: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArmArg {
    Service,
    Baseline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Dot,
    Csv,
}

#[derive(Debug, Args)]
pub struct PatternArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Followers per window.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub n: usize,
    #[arg(long, default_value_t = 0.02)]
    pub node_threshold: f64,
    #[arg(long, default_value_t = 0.005)]
    pub success_threshold: f64,
    /// Keep runs of identical actions as separate nodes.
    #[arg(long)]
    pub no_collapse: bool,
    #[arg(long, value_enum, default_value = "service")]
    pub arm: ArmArg,
    #[arg(long, value_enum, default_value = "dot")]
    pub format: FormatArg,
    /// Paths listed in CSV output.
    #[arg(long, default_value_t = usize::MAX)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Generator parameters (JSON); defaults for missing fields.
    #[arg(long)]
    pub params: PathBuf,
    /// Output JSONL; the sidecar goes to `<out>.expected.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the parameter file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    fn of(path: &Path, bytes: &[u8]) -> Self {
        InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

/// Provenance of one run, embedded in every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub inputs: Vec<InputDigest>,
    pub config: Option<InputDigest>,
    pub parameters: serde_json::Value,
}

impl RunManifest {
    fn new(command: &'static str, parameters: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            inputs: Vec::new(),
            config: None,
            parameters,
        }
    }

    fn line(&self, prefix: &str) -> String {
        format!(
            "{prefix} manifest {}",
            serde_json::to_string(self).expect("manifest serializes")
        )
    }
}

struct Loaded {
    log: EventLog,
    config: SignalConfig,
    report: ValidationReport,
    manifest: RunManifest,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(io_err(path))
}

fn load(input: &InputArgs, command: &'static str, parameters: serde_json::Value) -> Result<Loaded, CliError> {
    let config_bytes = fs::read(&input.config).map_err(|source| ConfigError::Io {
        path: input.config.display().to_string(),
        source,
    })?;
    let config = SignalConfig::from_json_str(&String::from_utf8_lossy(&config_bytes))?;
    let log_bytes = read(&input.log)?;
    let options = LoadOptions {
        vocabulary: Some(&config),
        ..LoadOptions::default()
    };
    let (log, report) = load_log_with(&log_bytes[..], &options).map_err(io_err(&input.log))?;
    let mut manifest = RunManifest::new(command, parameters);
    manifest.inputs.push(InputDigest::of(&input.log, &log_bytes));
    manifest.config = Some(InputDigest::of(&input.config, &config_bytes));
    Ok(Loaded {
        log,
        config,
        report,
        manifest,
    })
}

fn check_quality(report: &ValidationReport, strict: bool, stderr: &mut dyn Write) -> Result<(), CliError> {
    if report.is_clean() {
        return Ok(());
    }
    if strict {
        return Err(CliError::DataQuality(report.rejected));
    }
    let _ = writeln!(stderr, "warning: skipped {} rejected line(s)", report.rejected);
    Ok(())
}

fn emit(out: &Option<PathBuf>, body: &[u8], stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, body).map_err(io_err(path)),
        None => stdout
            .write_all(body)
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn cmd_validate(args: &InputArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load(args, "validate", json!({}))?;
    let text = format!("{}{}\n", loaded.report, loaded.manifest.line("#"));
    emit(&None, text.as_bytes(), stdout)?;
    if loaded.report.is_clean() {
        Ok(())
    } else {
        Err(CliError::DataQuality(loaded.report.rejected))
    }
}

fn cmd_usefulness(args: &UsefulnessArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let negative: Option<BTreeSet<String>> = args
        .negative_set
        .as_ref()
        .map(|v| v.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
    let params = json!({
        "n": args.n,
        "exclude_truncated": args.exclude_truncated,
        "negative_set": negative,
        "raw_local": args.raw_local,
    });
    let loaded = load(&args.input, "usefulness", params)?;
    check_quality(&loaded.report, args.output.strict, stderr)?;
    let options = CurveOptions {
        n_max: args.n,
        exclude_truncated: args.exclude_truncated,
    };
    let report = usefulness_report(&loaded.log, &loaded.config, options, negative.as_ref())?;

    let mut buf = Vec::new();
    let any_windows = report
        .curve
        .iter()
        .any(|p| p.with_service.total + p.without_service.total > 0);
    let rows = if any_windows { &report.curve[..] } else { &[] };
    write_curve_csv(&mut buf, rows).expect("writing to a Vec");
    if let Some(local) = report.local {
        let _ = writeln!(
            buf,
            "# local_usefulness {:.6} ({}/{})",
            local.local(),
            local.processes_with_usage,
            local.total_processes
        );
        if args.raw_local {
            let _ = writeln!(
                buf,
                "# raw_usage_ratio {:.6} ({}/{})",
                local.raw_usage_ratio(),
                local.usage_events,
                local.total_processes
            );
        }
    }
    if let Some(adjusted) = &report.negative_adjusted {
        for (n, value) in adjusted {
            let value = value.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(buf, "# negative_adjusted n={n} {value}");
        }
    }
    let _ = writeln!(buf, "{}", loaded.manifest.line("#"));
    emit(&args.output.out, &buf, stdout)
}

fn cmd_precision(args: &PrecisionArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    if args.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let units: Vec<UnitKind> = if args.unit.is_empty() {
        UnitKind::ALL.to_vec()
    } else {
        args.unit.iter().map(|&u| u.into()).collect()
    };
    let specs: Vec<UnitSpec> = units
        .into_iter()
        .map(|unit| {
            let mut spec = UnitSpec::new(unit, args.signal_mode.into());
            if unit.is_window() {
                spec = spec.with_window(args.n);
            }
            if let Some(m) = args.min_signals {
                spec = spec.with_min_signals(m);
            }
            spec
        })
        .collect();
    let params = json!({
        "units": specs.iter().map(UnitSpec::label).collect::<Vec<_>>(),
        "k": args.k,
        "signal_mode": SignalMode::from(args.signal_mode).as_str(),
        "min_signals": args.min_signals,
    });
    let loaded = load(&args.input, "precision", params)?;
    check_quality(&loaded.report, args.output.strict, stderr)?;
    let reports = specs
        .iter()
        .map(|spec| unit_report(&loaded.log, &loaded.config, spec, args.k))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    write_precision_csv(&mut buf, &reports).expect("writing to a Vec");
    let _ = writeln!(buf, "{}", loaded.manifest.line("#"));
    emit(&args.output.out, &buf, stdout)
}

fn cmd_patterns(args: &PatternArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    for (name, t) in [
        ("--node-threshold", args.node_threshold),
        ("--success-threshold", args.success_threshold),
    ] {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Usage(format!("{name} must lie in [0, 1]")));
        }
    }
    if args.limit == 0 {
        return Err(CliError::Usage("--limit must be at least 1".into()));
    }
    let params = json!({
        "n": args.n,
        "node_threshold": args.node_threshold,
        "success_threshold": args.success_threshold,
        "collapse": !args.no_collapse,
        "arm": format!("{:?}", args.arm).to_lowercase(),
    });
    let loaded = load(&args.input, "patterns", params)?;
    check_quality(&loaded.report, args.output.strict, stderr)?;
    let windows: Vec<_> = loaded
        .log
        .sessions()
        .flat_map(|s| match args.arm {
            ArmArg::Service => service_windows(s.events, &loaded.config, args.n),
            ArmArg::Baseline => baseline_windows(s.events, &loaded.config, args.n),
        })
        .collect();
    let tree = mine_patterns(
        &windows,
        &loaded.config,
        PatternOptions {
            node_threshold: args.node_threshold,
            success_threshold: args.success_threshold,
            collapse: !args.no_collapse,
        },
    );
    let mut buf = Vec::new();
    match args.format {
        FormatArg::Dot => {
            buf.extend_from_slice(export_dot(&tree).as_bytes());
            let _ = writeln!(buf, "{}", loaded.manifest.line("//"));
        }
        FormatArg::Csv => {
            write_paths_csv(&mut buf, &top_paths(&tree, args.limit)).expect("writing to a Vec");
            let _ = writeln!(buf, "{}", loaded.manifest.line("#"));
        }
    }
    emit(&args.output.out, &buf, stdout)
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    params: &'a GenParams,
    full_depth_n: usize,
    expected: Vec<ExpectedMetrics>,
    manifest: RunManifest,
}

/// Path of the expected-metrics file written next to a simulated log.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name: OsString = out.as_os_str().to_owned();
    name.push(".expected.json");
    PathBuf::from(name)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let bytes = read(&args.params)?;
    let mut params = GenParams::from_json_str(&String::from_utf8_lossy(&bytes))?;
    if let Some(seed) = args.seed {
        params.seed = seed;
    }
    let log = generate(&params)?;
    let file = fs::File::create(&args.out).map_err(io_err(&args.out))?;
    let mut writer = io::BufWriter::new(file);
    log.write_jsonl(&mut writer)
        .and_then(|_| writer.flush())
        .map_err(io_err(&args.out))?;

    let mut manifest = RunManifest::new("simulate", json!({ "seed": params.seed }));
    manifest.inputs.push(InputDigest::of(&args.params, &bytes));
    let sidecar = Sidecar {
        params: &params,
        full_depth_n: params.full_depth_n(),
        expected: params.expected_n.iter().map(|&n| expected_metrics(&params, n)).collect(),
        manifest,
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
    let path = sidecar_path(&args.out);
    fs::write(&path, text).map_err(io_err(&path))
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(rendered.as_bytes())
            } else {
                stderr.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Validate(a) => cmd_validate(a, stdout),
        Command::Usefulness(a) => cmd_usefulness(a, stdout, stderr),
        Command::Precision(a) => cmd_precision(a, stdout, stderr),
        Command::Patterns(a) => cmd_patterns(a, stdout, stderr),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.exit_code() == 2 {
                let _ = writeln!(stderr, "usage: iirlog <COMMAND> --log <LOG> --config <CONFIG> [OPTIONS] (see --help)");
            }
            e.exit_code()
        }
    }
}

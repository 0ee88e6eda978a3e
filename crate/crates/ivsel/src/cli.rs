//! Command-line front end.
//!
//! Subcommands: `analyze` (estimands for one model and rule), `sweep`
//! (grids to CSV), `simulate` (synthetic samples to CSV), `verify`
//! (Monte Carlo check of the analytics), `presets` (list built-in
//! scenarios). Every command is deterministic given its flags and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimands::{closed_form, plim_matrix, EstimandReport, SelectionRule};
use crate::mc::{apply_selection, simulate, verify_grid, write_csv, VerifySummary};
use crate::model::{PathModel, PresetParams, Scenario};
use crate::sweep::{
    fig_psi_curve, fig_region_map, run_sweep, write_psi_curve_csv, Axis, AxisParam, RuleFamily,
    SweepGrid,
};

/// Seed used when neither `--seed` nor `IVSEL_SEED` is given.
pub const DEFAULT_SEED: u64 = 42;
/// Environment variable consulted for the seed.
pub const SEED_ENV_VAR: &str = "IVSEL_SEED";
/// Sample sizes below this make `verify` unreliable.
pub const VERIFY_RECOMMENDED_MIN_N: usize = 10_000;

const EXIT_CODES_HELP: &str = "Exit codes:
  0  success
  1  usage error (unknown flags, unreadable files)
  2  invalid model document, parameters, or grid
  3  infeasible standardization
  4  degenerate estimand or sample
  5  verification found a disagreement

Seed precedence: --seed, then the IVSEL_SEED environment variable, then 42.";

#[derive(Parser)]
#[command(
    name = "ivsel",
    version,
    about = "Asymptotic bias of IV and OLS estimators under treatment-induced selection",
    after_help = EXIT_CODES_HELP
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// RNG seed; overrides the IVSEL_SEED environment variable
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap the number of worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write output to this file instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute both estimators' probability limits for one model and rule
    Analyze(AnalyzeArgs),
    /// Evaluate estimands over a parameter grid and emit CSV
    Sweep(SweepArgs),
    /// Draw a synthetic sample, apply a selection rule, and emit CSV
    Simulate(SimulateArgs),
    /// Check analytic limits against the Monte Carlo oracle
    Verify(VerifyArgs),
    /// Describe the built-in scenarios
    Presets(PresetsArgs),
}

#[derive(Args)]
struct ModelSource {
    /// Built-in scenario: baseline, mediator, confounded_mediator,
    /// treatment_confounder
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// JSON model document (explicit graph, or preset reference)
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Override a preset parameter, e.g. --param gamma=0.6 (repeatable)
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
}

impl ModelSource {
    fn build(&self) -> Result<PathModel> {
        match (&self.preset, &self.model) {
            (Some(name), None) => {
                let scenario: Scenario = name.parse()?;
                let overrides = parse_assignments(&self.params)?;
                PathModel::preset(scenario, &overrides)
            }
            (None, Some(path)) => {
                if !self.params.is_empty() {
                    return Err(Error::Unsupported(
                        "--param only applies to --preset models".to_string(),
                    ));
                }
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                PathModel::from_json(&text)
            }
            _ => Err(Error::Unsupported(
                "give exactly one of --preset or --model".to_string(),
            )),
        }
    }
}

#[derive(Args)]
struct RuleFlags {
    /// Analyze the full population with no selection
    #[arg(long)]
    no_selection: bool,
    /// Covariate-adjust for the selection node
    #[arg(long)]
    adjust: bool,
    /// Truncate, cutting this fraction of the population
    #[arg(long, value_name = "Q")]
    truncate_severity: Option<f64>,
    /// Truncate below this selection-score threshold
    #[arg(long, value_name = "S0")]
    truncate_threshold: Option<f64>,
}

impl RuleFlags {
    fn build(&self) -> Result<SelectionRule> {
        if self.no_selection {
            Ok(SelectionRule::None)
        } else if self.adjust {
            Ok(SelectionRule::Adjustment)
        } else if let Some(q) = self.truncate_severity {
            SelectionRule::truncation_at_severity(q)
        } else if let Some(s0) = self.truncate_threshold {
            SelectionRule::truncation_at_threshold(s0)
        } else {
            Ok(SelectionRule::None)
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TextFormat {
    Json,
    Text,
}

#[derive(Args)]
#[command(group = ArgGroup::new("source").required(true).args(["preset", "model"]))]
#[command(group = ArgGroup::new("rule").required(true).args(
    ["no_selection", "adjust", "truncate_severity", "truncate_threshold"]
))]
struct AnalyzeArgs {
    #[command(flatten)]
    source: ModelSource,
    #[command(flatten)]
    rule: RuleFlags,
    /// Also evaluate the scenario closed form and report the largest gap
    #[arg(long)]
    closed_form: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: TextFormat,
}

#[derive(Args)]
struct SweepArgs {
    /// Shortcut: severity-to-psi calibration table (600 points)
    #[arg(long, conflicts_with_all = ["fig2b", "scenario", "axes", "fixed"])]
    fig2a: bool,
    /// Shortcut: 201x201 least-biased-estimator region map
    #[arg(long, conflicts_with_all = ["scenario", "axes", "fixed"])]
    fig2b: bool,
    /// Scenario to sweep
    #[arg(long, value_name = "NAME")]
    scenario: Option<String>,
    /// Sweep axis, e.g. --axis gamma=0:1:201 (at most two)
    #[arg(long = "axis", value_name = "PARAM=LO:HI:STEPS")]
    axes: Vec<String>,
    /// Pin a parameter (or `severity`), e.g. --fixed severity=0.5
    #[arg(long = "fixed", value_name = "NAME=VALUE")]
    fixed: Vec<String>,
    /// Selection rules per cell: truncation, adjustment, or both
    #[arg(long, default_value = "truncation", value_name = "FAMILY")]
    rules: String,
}

#[derive(Args)]
#[command(group = ArgGroup::new("source").required(true).args(["preset", "model"]))]
struct SimulateArgs {
    #[command(flatten)]
    source: ModelSource,
    #[command(flatten)]
    rule: RuleFlags,
    /// Number of rows to draw
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Drop latent columns and truncated rows (the analyst's view)
    #[arg(long)]
    observed_only: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Sample size per scenario
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    #[arg(long, value_enum, default_value = "json")]
    format: TextFormat,
}

#[derive(Args)]
struct PresetsArgs {
    #[arg(long, value_enum, default_value = "text")]
    format: TextFormat,
}

/// Parse argv and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 1,
        Error::Infeasible { .. } => 3,
        Error::Degenerate(_) | Error::SingularConditioning(_) | Error::TooFewRows { .. } => 4,
        _ => 2,
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let seed = resolve_seed(cli.seed)?;
    let output = cli.output.clone();
    let body = move || dispatch(cli.command, seed, output.as_ref());
    match cli.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    }
}

/// Seed precedence: flag, then environment, then the documented default.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV_VAR) {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| Error::Unsupported(format!("{SEED_ENV_VAR}='{text}' is not a valid seed"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn dispatch(command: Command, seed: u64, output: Option<&PathBuf>) -> Result<i32> {
    match command {
        Command::Analyze(args) => cmd_analyze(args, output),
        Command::Sweep(args) => cmd_sweep(args, output),
        Command::Simulate(args) => cmd_simulate(args, seed, output),
        Command::Verify(args) => cmd_verify(args, seed, output),
        Command::Presets(args) => cmd_presets(args, output),
    }
}

fn open_sink(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn emit(path: Option<&PathBuf>, content: &str) -> Result<()> {
    let mut sink = open_sink(path)?;
    sink.write_all(content.as_bytes())?;
    sink.flush()?;
    Ok(())
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Io(format!("serialization: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Matrix-engine report, optionally paired with the scenario closed form.
#[derive(Serialize)]
struct AnalyzeOutput {
    rule: SelectionRule,
    matrix: EstimandReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<EstimandReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_abs_diff: Option<f64>,
}

fn cmd_analyze(args: AnalyzeArgs, output: Option<&PathBuf>) -> Result<i32> {
    let model = args.source.build()?;
    let rule = args.rule.build()?;
    let matrix = plim_matrix(&model, &rule)?;
    let (closed, gap) = if args.closed_form {
        let scenario = model.scenario().ok_or_else(|| {
            Error::Unsupported("--closed-form needs a preset scenario model".to_string())
        })?;
        let params = model
            .preset_params()
            .copied()
            .ok_or_else(|| Error::Unsupported("model carries no preset parameters".to_string()))?;
        let report = closed_form(scenario, &params, matrix.psi_used)?;
        let gap = (report.iv_plim - matrix.iv_plim)
            .abs()
            .max((report.ols_plim - matrix.ols_plim).abs());
        (Some(report), Some(gap))
    } else {
        (None, None)
    };
    let out = AnalyzeOutput { rule, matrix, closed_form: closed, max_abs_diff: gap };
    let text = match args.format {
        TextFormat::Json => to_pretty_json(&out)?,
        TextFormat::Text => render_analyze_text(&model, &out),
    };
    emit(output, &text)?;
    Ok(0)
}

fn render_rule(rule: &SelectionRule) -> String {
    match rule {
        SelectionRule::None => "none".to_string(),
        SelectionRule::Adjustment => "adjustment".to_string(),
        SelectionRule::Truncation(spec) => format!(
            "truncation (severity {:.6}, threshold {:.6})",
            spec.severity(),
            spec.threshold()
        ),
    }
}

fn render_analyze_text(model: &PathModel, out: &AnalyzeOutput) -> String {
    let mut s = String::new();
    let scenario = model
        .scenario()
        .map(|sc| sc.name().to_string())
        .unwrap_or_else(|| "custom".to_string());
    let _ = writeln!(s, "model            {scenario}");
    let _ = writeln!(s, "rule             {}", render_rule(&out.rule));
    let _ = writeln!(s, "psi              {:.9}", out.matrix.psi_used);
    let _ = writeln!(s, "true effect      {:.9}", out.matrix.beta_true);
    let _ = writeln!(
        s,
        "iv plim          {:.9}   bias {:+.9}",
        out.matrix.iv_plim,
        out.matrix.iv_bias()
    );
    let _ = writeln!(
        s,
        "ols plim         {:.9}   bias {:+.9}",
        out.matrix.ols_plim,
        out.matrix.ols_bias()
    );
    let _ = writeln!(s, "iv bias terms");
    for (label, value) in &out.matrix.iv_bias_terms {
        let _ = writeln!(s, "  {label:<14} {value:+.9}");
    }
    let _ = writeln!(s, "ols bias terms");
    for (label, value) in &out.matrix.ols_bias_terms {
        let _ = writeln!(s, "  {label:<14} {value:+.9}");
    }
    if let (Some(report), Some(gap)) = (&out.closed_form, out.max_abs_diff) {
        let _ = writeln!(
            s,
            "closed form      iv {:.9}, ols {:.9} (max gap {gap:.3e})",
            report.iv_plim, report.ols_plim
        );
    }
    s
}

fn cmd_sweep(args: SweepArgs, output: Option<&PathBuf>) -> Result<i32> {
    let mut sink = open_sink(output)?;
    if args.fig2a {
        write_psi_curve_csv(&fig_psi_curve()?, &mut sink)?;
    } else if args.fig2b {
        fig_region_map()?.write_csv(&mut sink)?;
    } else {
        let scenario: Scenario = args
            .scenario
            .as_deref()
            .ok_or_else(|| {
                Error::BadGrid("give --scenario and --axis, or --fig2a/--fig2b".to_string())
            })?
            .parse()?;
        let axes = args.axes.iter().map(|s| parse_axis(s)).collect::<Result<Vec<_>>>()?;
        let fixed = parse_assignments(&args.fixed)?;
        let grid = SweepGrid::new(scenario, fixed, axes)?;
        let family: RuleFamily = args.rules.parse()?;
        run_sweep(&grid, family)?.write_csv(&mut sink)?;
    }
    sink.flush()?;
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs, seed: u64, output: Option<&PathBuf>) -> Result<i32> {
    let model = args.source.build()?;
    let rule = args.rule.build()?;
    let data = apply_selection(&simulate(&model, args.n, seed)?, &rule)?;
    let mut sink = open_sink(output)?;
    write_csv(&data, &mut sink, args.observed_only)?;
    sink.flush()?;
    Ok(0)
}

fn cmd_verify(args: VerifyArgs, seed: u64, output: Option<&PathBuf>) -> Result<i32> {
    if args.n < VERIFY_RECOMMENDED_MIN_N {
        eprintln!(
            "warning: n = {} is below the recommended minimum of {}; \
             disagreements at this scale may be noise",
            args.n, VERIFY_RECOMMENDED_MIN_N
        );
    }
    let summary = verify_grid(args.n, seed)?;
    let text = match args.format {
        TextFormat::Json => to_pretty_json(&summary)?,
        TextFormat::Text => render_verify_text(&summary),
    };
    emit(output, &text)?;
    Ok(if summary.pass { 0 } else { 5 })
}

fn render_verify_text(summary: &VerifySummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "verification grid  n={}  seed={}", summary.n, summary.seed);
    let _ = writeln!(
        s,
        "{:<22}{:<12}{:<10}{:<8}{:>12}{:>12}{:>10}  {}",
        "scenario", "rule", "severity", "method", "estimate", "plim", "gap/se", "pass"
    );
    for case in &summary.cases {
        let severity = case.severity.map(|q| format!("{q:.2}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{:<22}{:<12}{:<10}{:<8}{:>12.6}{:>12.6}{:>10.2}  {}",
            case.scenario,
            case.rule,
            severity,
            case.method.to_string(),
            case.estimate,
            case.plim,
            case.se_gap,
            if case.pass { "yes" } else { "NO" }
        );
    }
    let passed = summary.cases.iter().filter(|c| c.pass).count();
    let _ = writeln!(
        s,
        "overall: {} ({passed}/{} within 4 bootstrap SEs)",
        if summary.pass { "PASS" } else { "FAIL" },
        summary.cases.len()
    );
    s
}

#[derive(Serialize)]
struct PresetDescription {
    name: &'static str,
    summary: &'static str,
    params: BTreeMap<&'static str, f64>,
    nodes: Vec<String>,
    edges: Vec<String>,
}

fn describe(scenario: Scenario) -> PresetDescription {
    let defaults = PresetParams::default();
    PresetDescription {
        name: scenario.name(),
        summary: match scenario {
            Scenario::Baseline => "selection score depends on the treatment alone",
            Scenario::Mediator => "selection score also affects the outcome directly",
            Scenario::ConfoundedMediator => {
                "a second confounder drives both the selection score and the outcome"
            }
            Scenario::TreatmentConfounder => {
                "the treatment-outcome confounder also drives the selection score"
            }
        },
        params: scenario
            .param_names()
            .iter()
            .map(|&p| (p, defaults.get(p).unwrap()))
            .collect(),
        nodes: scenario
            .nodes()
            .iter()
            .map(|&(name, role, latent)| {
                let role = format!("{role:?}").to_lowercase();
                if latent {
                    format!("{name} ({role}, latent)")
                } else {
                    format!("{name} ({role})")
                }
            })
            .collect(),
        edges: scenario
            .edges()
            .iter()
            .map(|&(from, to, param)| format!("{from} -> {to}  [{param}]"))
            .collect(),
    }
}

fn cmd_presets(args: PresetsArgs, output: Option<&PathBuf>) -> Result<i32> {
    let descriptions: Vec<PresetDescription> = Scenario::ALL.into_iter().map(describe).collect();
    let text = match args.format {
        TextFormat::Json => to_pretty_json(&descriptions)?,
        TextFormat::Text => {
            let mut s = String::new();
            for d in &descriptions {
                let _ = writeln!(s, "{}: {}", d.name, d.summary);
                let _ = writeln!(s, "  nodes: {}", d.nodes.join(", "));
                let _ = writeln!(s, "  edges: {}", d.edges.join(", "));
                let params = d
                    .params
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = writeln!(s, "  defaults: {params}");
                let _ = writeln!(s);
            }
            s
        }
    };
    emit(output, &text)?;
    Ok(0)
}

/// Parse repeated `name=value` flags into a map.
fn parse_assignments(pairs: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Unsupported(format!("expected NAME=VALUE, got '{pair}'")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::Unsupported(format!("'{value}' is not a number in '{pair}'")))?;
        if map.insert(name.to_string(), value).is_some() {
            return Err(Error::Unsupported(format!("'{name}' given more than once")));
        }
    }
    Ok(map)
}

/// Parse `param=lo:hi:steps` into an axis.
fn parse_axis(text: &str) -> Result<Axis> {
    let bad = || Error::BadGrid(format!("expected PARAM=LO:HI:STEPS, got '{text}'"));
    let (name, range) = text.split_once('=').ok_or_else(bad)?;
    let param: AxisParam = name.parse()?;
    let mut parts = range.split(':');
    let lo: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let hi: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let steps: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Axis::new(param, lo, hi, steps)
}

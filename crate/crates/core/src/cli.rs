//! `contour-imc {run|compare|report}`.
//!
//! Exit codes: 0 success, 1 configuration/input error, 2 synthesis failure,
//! 3 assumption failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::simulation::scenario::BUILTIN;
use crate::simulation::{self, run_closed_loop, Scenario, ScenarioDef, SimError, SimulationTrace, SlaveController};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SYNTHESIS: i32 = 2;
pub const EXIT_ASSUMPTION: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Sim(SimError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Sim(SimError::Config(_)) => EXIT_CONFIG,
            CliError::Sim(SimError::Synthesis(_)) => EXIT_SYNTHESIS,
            CliError::Sim(SimError::Assumption(_)) => EXIT_ASSUMPTION,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Sim(e) => write!(f, "{e}"),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Sim(e)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "contour-imc", version, about = "TV-IMCC contouring simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario; writes trace.csv, metrics.txt, synthesis.txt.
    Run(ScenarioArgs),
    /// RMS/max table over scenarios x controllers.
    Compare(CompareArgs),
    /// Downsampled path and error series from trace files.
    Report(ReportArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct ScenarioArgs {
    /// Scenario name (sinusoid, circle, heart, four_axis, zero).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub ts: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    /// Comma-separated scenarios (default: --scenario, else the four built-ins).
    #[arg(long)]
    scenarios: Option<String>,
    /// Comma-separated controllers.
    #[arg(long, default_value = "pid,ccc,tvimcc")]
    controllers: String,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Trace CSV files written by `run`.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Keep every N-th row.
    #[arg(long, default_value_t = 10)]
    downsample: usize,
}

/// Parse a flat configuration text into `(key, value, line)` entries.
pub fn parse_config(text: &str) -> Result<Vec<(String, String, usize)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected 'key = value'", i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((k.to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

/// Resolve a scenario definition: named defaults, then the config file, then
/// `--set`, then `--ts`/`--horizon`. `name` overrides any scenario key.
pub fn resolve_def(args: &ScenarioArgs, name: Option<&str>) -> Result<ScenarioDef, CliError> {
    let file = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            parse_config(&text).map_err(|m| CliError::Config(format!("{}: {m}", p.display())))?
        }
        None => Vec::new(),
    };
    let mut sets = Vec::new();
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set '{s}': expected KEY=VALUE")))?;
        sets.push((k.trim().to_string(), v.trim().to_string()));
    }
    let scenario = name
        .map(str::to_string)
        .or_else(|| args.scenario.clone())
        .or_else(|| sets.iter().rev().find(|(k, _)| k == "scenario").map(|(_, v)| v.clone()))
        .or_else(|| file.iter().rev().find(|(k, _, _)| k == "scenario").map(|(_, v, _)| v.clone()))
        .ok_or_else(|| CliError::Config("no scenario given (--scenario or a 'scenario' key)".into()))?;
    let mut def = ScenarioDef::named(&scenario)?;
    for (k, v, line) in &file {
        if k != "scenario" {
            def.set(k, v).map_err(|e| CliError::Config(format!("line {line}: {e}")))?;
        }
    }
    for (k, v) in &sets {
        if k != "scenario" {
            def.set(k, v)?;
        }
    }
    if let Some(ts) = args.ts {
        def.ts = ts;
    }
    if let Some(h) = args.horizon {
        def.horizon = h;
    }
    def.validate()?;
    Ok(def)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn metrics_text(def: &ScenarioDef, tr: &SimulationTrace) -> String {
    let m = tr.metrics(def.metrics_window, def.settle_threshold);
    let mut s = String::new();
    let _ = writeln!(s, "scenario = {}", tr.meta.scenario);
    let _ = writeln!(s, "controller = {}", tr.meta.controller);
    let _ = writeln!(s, "hash = {}", tr.meta.hash);
    let _ = writeln!(s, "rows = {}", tr.len());
    let _ = writeln!(s, "window_start = {}", tr.window_start(def.metrics_window));
    let _ = writeln!(s, "rms = {:e}", m.rms);
    let _ = writeln!(s, "max = {:e}", m.max);
    let _ = writeln!(s, "rms_um = {:e}", m.rms * 1e3);
    let _ = writeln!(s, "max_um = {:e}", m.max * 1e3);
    match m.settling_index {
        Some(k) => {
            let _ = writeln!(s, "settling_index = {k}");
        }
        None => {
            let _ = writeln!(s, "settling_index = none");
        }
    }
    for (j, sl) in tr.slaves.iter().enumerate() {
        let start = tr.window_start(def.metrics_window);
        let tail = sl.e2[start..].iter().fold(0.0f64, |a, e| a.max(e.abs()));
        let _ = writeln!(s, "e2_max_tail_{} = {tail:e}", j + 1);
    }
    s
}

fn synthesis_text(def: &ScenarioDef, tr: &SimulationTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# resolved scenario");
    s.push_str(&def.listing());
    let _ = writeln!(s, "# synthesis");
    if tr.meta.synthesis.is_empty() {
        let _ = writeln!(s, "synthesis = none ({})", tr.meta.controller);
    }
    for (j, syn) in tr.meta.synthesis.iter().enumerate() {
        let p = format!("slave{}", j + 1);
        let _ = writeln!(s, "{p}.lmi_min_eigenvalue = {:e}", syn.lmi_min_eigenvalue);
        let _ = writeln!(s, "{p}.solver_margin = {:e}", syn.solver_margin);
        let _ = writeln!(s, "{p}.newton_steps = {}", syn.newton_steps);
        let _ = writeln!(s, "{p}.sylvester_max_residual = {:e}", syn.sylvester_max_residual);
        let _ = writeln!(s, "{p}.sylvester_mean_residual = {:e}", syn.sylvester_mean_residual);
        let _ = writeln!(s, "{p}.module2_max_radius = {:e}", syn.module2_max_radius);
        let h: Vec<String> = syn.observer_gain.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{p}.observer_gain = [{}]", h.join(", "));
        for (v, k) in syn.vertices.iter().zip(&syn.gains) {
            let ks: Vec<String> = k.iter().map(|x| format!("{x:e}")).collect();
            let _ = writeln!(s, "{p}.gain @ {v:e} = [{}]", ks.join(", "));
        }
    }
    s
}

pub fn cmd_run(args: &ScenarioArgs) -> Result<(), CliError> {
    let def = resolve_def(args, None)?;
    let scn = Scenario::build(def.clone())?;
    let tr = run_closed_loop(&scn)?;
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let mut csv = Vec::new();
    tr.write_csv(&mut csv).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&args.out.join("trace.csv"), &csv)?;
    let metrics = metrics_text(&def, &tr);
    write_file(&args.out.join("metrics.txt"), metrics.as_bytes())?;
    write_file(&args.out.join("synthesis.txt"), synthesis_text(&def, &tr).as_bytes())?;
    print!("{metrics}");
    Ok(())
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_string).collect()
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub scenario: String,
    pub controller: String,
    pub rms: f64,
    pub max: f64,
}

pub fn compare(
    args: &ScenarioArgs,
    scenarios: &[String],
    controllers: &[SlaveController],
) -> Result<Vec<CompareRow>, CliError> {
    if controllers.is_empty() {
        return Err(CliError::Config("empty controller list".into()));
    }
    if scenarios.is_empty() {
        return Err(CliError::Config("empty scenario list".into()));
    }
    let mut defs = Vec::new();
    for s in scenarios {
        let base = resolve_def(args, Some(s))?;
        for &c in controllers {
            let mut d = base.clone();
            d.slave_controller = c;
            defs.push(d);
        }
    }
    let threads = simulation::threads_from_env()?;
    let results = simulation::sweep(&defs, threads);
    let mut rows = Vec::new();
    for (d, r) in defs.iter().zip(results) {
        let tr = r?;
        let m = tr.metrics(d.metrics_window, d.settle_threshold);
        rows.push(CompareRow { scenario: d.name.clone(), controller: d.slave_controller.name().into(), rms: m.rms, max: m.max });
    }
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("scenario,controller,rms_um,max_um\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:e},{:e}", r.scenario, r.controller, r.rms * 1e3, r.max * 1e3);
    }
    s
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = format!("{:<12} {:<10} {:>14} {:>14}\n", "scenario", "controller", "RMS (um)", "max (um)");
    for r in rows {
        let _ = writeln!(s, "{:<12} {:<10} {:>14.6e} {:>14.6e}", r.scenario, r.controller, r.rms * 1e3, r.max * 1e3);
    }
    s
}

fn cmd_compare(a: &CompareArgs) -> Result<(), CliError> {
    let scenarios = match (&a.scenarios, &a.common.scenario) {
        (Some(list), _) => split_list(list),
        (None, Some(one)) => vec![one.clone()],
        (None, None) => BUILTIN.iter().map(|s| s.to_string()).collect(),
    };
    let controllers = split_list(&a.controllers)
        .iter()
        .map(|c| c.parse::<SlaveController>().map_err(CliError::Config))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = compare(&a.common, &scenarios, &controllers)?;
    fs::create_dir_all(&a.common.out).map_err(|e| io_err(&a.common.out, e))?;
    let table = compare_table(&rows);
    write_file(&a.common.out.join("compare.csv"), compare_csv(&rows).as_bytes())?;
    write_file(&a.common.out.join("compare.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

/// Columns and raw cells of a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn parse_trace(text: &str) -> Result<TraceTable, String> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or("empty file")?.split(',').map(str::to_string).collect();
    if header.len() < 5
        || header[..4] != ["k", "t", "x1_ref", "x1"]
        || header.last().map(String::as_str) != Some("contour_error")
    {
        return Err("not a trace header".into());
    }
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let cells: Vec<String> = l.split(',').map(str::to_string).collect();
        if cells.len() != header.len() {
            return Err(format!("row {}: {} cells, expected {}", i + 1, cells.len(), header.len()));
        }
        if let Some(bad) = cells.iter().find(|c| c.parse::<f64>().is_err()) {
            return Err(format!("row {}: '{bad}' is not a number", i + 1));
        }
        rows.push(cells);
    }
    Ok(TraceTable { header, rows })
}

/// Selected columns of every `step`-th row as CSV.
pub fn downsample(table: &TraceTable, columns: &[&str], step: usize) -> String {
    let idx: Vec<usize> = table
        .header
        .iter()
        .enumerate()
        .filter(|(_, h)| columns.iter().any(|c| h.as_str() == *c || h.starts_with(&format!("{c}_"))))
        .map(|(i, _)| i)
        .collect();
    let mut s = String::new();
    let _ = writeln!(s, "{}", idx.iter().map(|&i| table.header[i].as_str()).collect::<Vec<_>>().join(","));
    for row in table.rows.iter().step_by(step.max(1)) {
        let _ = writeln!(s, "{}", idx.iter().map(|&i| row[i].as_str()).collect::<Vec<_>>().join(","));
    }
    s
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    if a.downsample == 0 {
        return Err(CliError::Config("--downsample must be at least 1".into()));
    }
    let mut outputs = Vec::new();
    for p in &a.traces {
        let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        let table = parse_trace(&text).map_err(|m| CliError::Config(format!("{}: {m}", p.display())))?;
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into());
        outputs.push((
            format!("{stem}_path.csv"),
            downsample(&table, &["k", "t", "x1_ref", "x1", "r2", "y2"], a.downsample),
        ));
        outputs.push((format!("{stem}_error.csv"), downsample(&table, &["k", "t", "contour_error", "e2"], a.downsample)));
    }
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    for (name, body) in &outputs {
        write_file(&a.out.join(name), body.as_bytes())?;
    }
    for (name, _) in &outputs {
        println!("{}", a.out.join(name).display());
    }
    Ok(())
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Report(a) => cmd_report(a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("contour-imc: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let text = "# header\nscenario = circle\n\npid.kp = 3.0 # trailing\nslave.plant.G = [1.0, 9.98e-5, -2.10, 1.0]\n";
        let e = parse_config(text).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e[1], ("pid.kp".into(), "3.0".into(), 4));
        assert_eq!(e[2].1, "[1.0, 9.98e-5, -2.10, 1.0]");
        assert!(parse_config("novalue\n").is_err());
    }

    #[test]
    fn precedence() {
        let args = ScenarioArgs {
            scenario: Some("circle".into()),
            set: vec!["pid.kp=4".into(), "slave_controller=ccc".into()],
            ts: Some(5e-5),
            ..Default::default()
        };
        let d = resolve_def(&args, None).unwrap();
        assert_eq!((d.contour.as_str(), d.pid.kp, d.ts), ("circle", 4.0, 5e-5));
        assert_eq!(d.slave_controller, SlaveController::Ccc);
        let none = ScenarioArgs::default();
        assert_eq!(resolve_def(&none, None).unwrap_err().exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn downsample_identity() {
        let t = parse_trace("k,t,x1_ref,x1,r2,y2,e2,u2,u_im,u_st,contour_error\n0,0e0,0e0,0e0,0e0,0e0,0e0,0e0,0e0,0e0,0e0\n1,1e-4,1e0,1e0,0e0,0e0,0e0,0e0,0e0,0e0,0e0\n").unwrap();
        let all = downsample(&t, &["k", "t", "x1_ref", "x1", "r2", "y2", "e2", "u2", "u_im", "u_st", "contour_error"], 1);
        assert_eq!(all.lines().count(), 3);
        assert_eq!(all.lines().nth(2).unwrap(), "1,1e-4,1e0,1e0,0e0,0e0,0e0,0e0,0e0,0e0,0e0");
        assert!(parse_trace("a,b\n").is_err());
    }
}

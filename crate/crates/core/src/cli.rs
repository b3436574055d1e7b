//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns the process exit code.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calib::{self, CalibConfig, CalibError, CalibResult, Correspondence, ShapeConstraint};
use crate::distortion::{DistortionError, DistortionModel, ModelKind};
use crate::pipeline::{self, ExperimentConfig, PipelineError, SceneConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "shapecal", version, about = "Shape-constrained radial distortion calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic calibration scene and its correspondences.
    Synth(SynthArgs),
    /// Fit a distortion model to a correspondence CSV.
    Calibrate(CalibrateArgs),
    /// Undistort a CSV of observed points with a model file.
    Undistort(UndistortArgs),
    /// Run the BA / SO / ASO comparison.
    Experiment(ExperimentArgs),
    /// Export L and its derivatives on a radius grid.
    Curve(CurveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    None,
    Barrel,
    Pincushion,
    Positivity,
}

impl From<ShapeArg> for ShapeConstraint {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::None => ShapeConstraint::None,
            ShapeArg::Barrel => ShapeConstraint::Barrel,
            ShapeArg::Pincushion => ShapeConstraint::Pincushion,
            ShapeArg::Positivity => ShapeConstraint::Positivity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Polynomial,
    Division,
    Rational,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Polynomial => ModelKind::Polynomial,
            KindArg::Division => ModelKind::Division,
            KindArg::Rational => ModelKind::Rational,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "scene.json")]
    pub out: PathBuf,
    /// Correspondence CSV; defaults to the scene path with a `.csv` extension.
    #[arg(long)]
    pub correspondences: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 9)]
    pub cameras: usize,
    /// Target grid as `COLSxROWS`.
    #[arg(long, default_value = "16x16", value_parser = parse_grid)]
    pub target: [usize; 2],
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Shape class of the ground-truth model.
    #[arg(long, value_enum, default_value_t = ShapeArg::Barrel)]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 0.5)]
    pub coverage: f64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// CSV with header `x,y,xhat,yhat` (ideal then observed, normalized).
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ShapeArg::None)]
    pub shape: ShapeArg,
    /// Upper bound of the radius interval; required for shaped runs.
    #[arg(long)]
    pub rbar: Option<f64>,
    #[arg(long = "p", default_value_t = 0.1)]
    pub margin_p: f64,
    /// Model family for `--shape none`.
    #[arg(long, value_enum, default_value_t = KindArg::Polynomial)]
    pub model: KindArg,
    #[arg(long, default_value_t = 3)]
    pub delta_max: u32,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct UndistortArgs {
    /// CSV with header `xhat,yhat`.
    pub points: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub rbar: f64,
    /// Largest undistorted radius searched; defaults to `2 * rbar`.
    #[arg(long)]
    pub search_max: Option<f64>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Comma-separated noise levels in pixels.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,2")]
    pub sigmas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ShapeArg::Barrel)]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub rbar: Option<f64>,
    #[arg(long)]
    pub aso_iterations: Option<usize>,
    #[arg(long, default_value = "report.json")]
    pub json: PathBuf,
    #[arg(long, default_value = "report.csv")]
    pub csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub rmax: f64,
    #[arg(long, default_value_t = 101)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected COLSxROWS, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok([parse(a)?, parse(b)?])
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Solver(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Solver(m) | CliError::Io(m) => m,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn emit(out: &mut dyn Write, s: &str) -> Result<(), CliError> {
    out.write_all(s.as_bytes()).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        match e {
            CalibError::Empty | CalibError::Config(_) => CliError::Data(e.to_string()),
            CalibError::Uncertified { order, lower_bound, .. } => {
                CliError::Solver(format!("reason=uncertified order={order} lower_bound={lower_bound:.16e}"))
            }
            CalibError::Solver(status) => CliError::Solver(format!("reason=solver status={status:?}")),
            other => CliError::Solver(format!("reason=solver {other}")),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(m) => CliError::Io(m),
            PipelineError::Calib(c) => c.into(),
            PipelineError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn model_from_file(path: &Path) -> Result<DistortionModel, CliError> {
    DistortionModel::from_json(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Rows of a numeric CSV with the given header; errors name the line.
fn read_numeric_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>, CliError> {
    let text = read(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: line 1: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    if got != header {
        return Err(CliError::Data(format!(
            "{}: line 1: expected header {}, got {}",
            path.display(),
            header.join(","),
            got.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Data(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| CliError::Data(format!("{}: line {line}: expected {} finite numbers", path.display(), header.len())))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_correspondences(path: &Path) -> Result<Vec<Correspondence>, CliError> {
    Ok(read_numeric_csv(path, &["x", "y", "xhat", "yhat"])?
        .into_iter()
        .map(|r| Correspondence::new((r[0], r[1]), (r[2], r[3])))
        .collect())
}

pub fn correspondences_csv(cs: &[Correspondence]) -> String {
    let mut s = String::from("x,y,xhat,yhat\n");
    for c in cs {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", c.ideal.0, c.ideal.1, c.observed.0, c.observed.1);
    }
    s
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

pub fn main_from_env() -> i32 {
    run(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Calibrate(a) => cmd_calibrate(a, out),
        Command::Undistort(a) => cmd_undistort(a, out),
        Command::Experiment(a) => cmd_experiment(a, out),
        Command::Curve(a) => cmd_curve(a, out),
    }
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(CliError::Usage(format!("--sigma must be nonnegative, got {}", a.sigma)));
    }
    let cfg = SceneConfig {
        grid: a.target,
        cameras: a.cameras,
        coverage: a.coverage,
        true_model: pipeline::default_true_model(a.shape.into()),
        ..SceneConfig::default()
    };
    cfg.validate()?;
    let clean = pipeline::generate_scene(&cfg, a.seed)?;
    let scene = if a.sigma > 0.0 { pipeline::add_noise(&clean, a.sigma) } else { clean };
    let cs = scene.correspondences(&scene.cameras)?;
    let csv_path = a.correspondences.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write(&a.out, &scene.to_json())?;
    write(&csv_path, &correspondences_csv(&cs))?;

    #[derive(Serialize)]
    struct Echo<'a> {
        seed: u64,
        sigma: f64,
        scene: &'a SceneConfig,
        scene_file: String,
        correspondences_file: String,
        observations: usize,
    }
    let echo = Echo {
        seed: a.seed,
        sigma: a.sigma,
        scene: &cfg,
        scene_file: a.out.display().to_string(),
        correspondences_file: csv_path.display().to_string(),
        observations: scene.observation_count(),
    };
    emit(out, &(serde_json::to_string_pretty(&echo).expect("config serializes") + "\n"))
}

pub fn calibrate_config(a: &CalibrateArgs) -> Result<CalibConfig, CliError> {
    let shape: ShapeConstraint = a.shape.into();
    let rbar = match (shape, a.rbar) {
        (_, Some(r)) => r,
        (ShapeConstraint::None, None) => CalibConfig::default().rbar,
        (_, None) => return Err(CliError::Usage("--rbar is required for shaped calibration".into())),
    };
    let cfg = CalibConfig {
        rbar,
        margin_p: a.margin_p,
        delta_max: a.delta_max,
        shape,
        model: a.model.into(),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn format_report(r: &CalibResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "kind: {}", r.model.kind());
    let k = r.model.k();
    let _ = writeln!(s, "k: {}", k.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" "));
    let _ = writeln!(s, "objective: {:.16e}", r.objective);
    if let Some(rms) = r.reprojection_rms {
        let _ = writeln!(s, "reprojection_rms: {rms:.16e}");
    }
    let _ = writeln!(s, "status: {:?}", r.solver_status);
    if let Some(order) = r.relaxation_order {
        let _ = writeln!(s, "relaxation_order: {order}");
    }
    if let Some(c) = r.certified {
        let _ = writeln!(s, "certified: {c}");
    }
    if let Some(lb) = r.lower_bound {
        let _ = writeln!(s, "lower_bound: {lb:.16e}");
    }
    if let Some(rep) = &r.shape_report {
        let _ = writeln!(
            s,
            "shape: {} rbar={:.16e} max_violation={:.16e} violating={} passes={}",
            rep.shape.name(),
            rep.rbar,
            rep.max_violation,
            rep.violating_radii.len(),
            rep.passes()
        );
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

pub fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = calibrate_config(a)?;
    let cs = read_correspondences(&a.data)?;
    let res = calib::calibrate(&cs, &cfg)?;
    write(&a.out, &(res.model.to_json() + "\n"))?;
    emit(out, &format_report(&res))
}

pub fn cmd_undistort(a: &UndistortArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.rbar > 0.0 && a.rbar.is_finite()) {
        return Err(CliError::Usage(format!("--rbar must be positive, got {}", a.rbar)));
    }
    let search_max = a.search_max.unwrap_or(2.0 * a.rbar);
    if !(search_max > 0.0 && search_max.is_finite()) {
        return Err(CliError::Usage(format!("--search-max must be positive, got {search_max}")));
    }
    let model = model_from_file(&a.model)?;
    let rows = read_numeric_csv(&a.points, &["xhat", "yhat"])?;
    let mut s = String::from("xhat,yhat,x,y,error\n");
    for r in rows {
        match model.undistort((r[0], r[1]), search_max) {
            Ok((x, y)) => {
                let _ = writeln!(s, "{:.16e},{:.16e},{x:.16e},{y:.16e},", r[0], r[1]);
            }
            Err(e) => {
                let marker = match e {
                    DistortionError::Pole { .. } => "pole",
                    DistortionError::NoRoot { .. } => "noroot",
                    _ => "invalid",
                };
                let _ = writeln!(s, "{:.16e},{:.16e},nan,nan,{marker}", r[0], r[1]);
            }
        }
    }
    match &a.out {
        Some(p) => write(p, &s),
        None => emit(out, &s),
    }
}

pub fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::for_shape(a.shape.into());
    cfg.trials = a.trials;
    cfg.sigmas = a.sigmas.clone();
    cfg.seed = a.seed;
    if let Some(r) = a.rbar {
        cfg.rbar = r;
    }
    if let Some(n) = a.aso_iterations {
        cfg.aso_iterations = n;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = experiment_config(a)?;
    let report = pipeline::run_experiment(&cfg)?;
    write(&a.json, &(report.to_json() + "\n"))?;
    write(&a.csv, &report.to_csv())?;
    let mut s = String::from("method,sigma,trials,calib_median,valid_median\n");
    for m in &report.summary {
        let _ = writeln!(
            s,
            "{},{:.16e},{},{:.16e},{:.16e}",
            m.method.name(),
            m.sigma,
            m.trials,
            m.calib_median,
            m.valid_median
        );
    }
    for f in &report.failures {
        let _ = writeln!(s, "failed: sigma={:.16e} trial={} {}", f.sigma, f.trial, f.error);
    }
    emit(out, &s)?;
    if report.records.is_empty() && !report.failures.is_empty() {
        return Err(CliError::Solver(format!("reason=all_trials_failed count={}", report.failures.len())));
    }
    Ok(())
}

pub fn cmd_curve(a: &CurveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.rmax > 0.0 && a.rmax.is_finite()) {
        return Err(CliError::Usage(format!("--rmax must be positive, got {}", a.rmax)));
    }
    if a.samples < 2 {
        return Err(CliError::Usage("--samples must be at least 2".into()));
    }
    let model = model_from_file(&a.model)?;
    let s = pipeline::curve_csv(&model, a.rmax, a.samples);
    match &a.out {
        Some(p) => write(p, &s),
        None => emit(out, &s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("shapecal").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn grid_parser() {
        assert_eq!(parse_grid("16x16"), Ok([16, 16]));
        assert_eq!(parse_grid("2X3"), Ok([2, 3]));
        assert!(parse_grid("16").is_err());
        assert!(parse_grid("ax2").is_err());
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (code, _, err) = run_capture(&["curve", "--model", "m.json", "--bogus"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(!err.is_empty());
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("calibrate"));
    }

    #[test]
    fn shaped_calibration_needs_rbar() {
        let (code, _, err) = run_capture(&["calibrate", "--shape", "barrel", "missing.csv"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--rbar"));
    }

    #[test]
    fn missing_input_is_io_error() {
        let (code, _, _) = run_capture(&["calibrate", "/nonexistent/data.csv"]);
        assert_eq!(code, EXIT_IO);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "x,y,xhat,yhat\n0.1,0.2,0.1,0.2\n0.3,oops,0.3,0.3\n").unwrap();
        let (code, _, err) = run_capture(&["calibrate", p.to_str().unwrap()]);
        assert_eq!(code, EXIT_DATA);
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn default_sigma_grid() {
        let cli = Cli::try_parse_from(["shapecal", "experiment"]).unwrap();
        let Command::Experiment(a) = cli.command else { panic!() };
        assert_eq!(a.sigmas, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(a.trials, 20);
    }

    #[test]
    fn correspondence_csv_round_trips() {
        let cs = vec![
            Correspondence::new((0.1, -0.2), (0.09, -0.19)),
            Correspondence::new((1.0 / 3.0, 0.0), (0.3, 1e-17)),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        fs::write(&p, correspondences_csv(&cs)).unwrap();
        assert_eq!(read_correspondences(&p).unwrap(), cs);
    }
}

//! Command-line front end.
//!
//! Every subcommand resolves a [`RunConfig`] (flags over config file over
//! defaults), validates it, and only then computes. Results go to stdout as
//! JSON (or CSV for `sweep`); failures go to stderr as
//! `{"error": "parse" | "constraint" | "singular", "message": …}` with exit
//! codes 2, 3 and 4 respectively.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::geometry::{
    error_volume, kahler_potential, kg_relation_residual, metric_from_kahler, metric_from_potential_fd,
    metric_pullback, relative_difference, volume_element, GeometryPoint,
};
use crate::linalg::make_generator_basis;
use crate::optimizer::{maximize_avg_information, minimize_avg_error, sweep_simplex_parallel};
use crate::stateavg::{
    avg_error_volume_closed, avg_information, information, mc_avg_error_volume, mc_total_volume, total_volume_closed,
    volume_quadrature_qubit,
};
use crate::states::{fourier_mub, state_distance, AmplitudesJson, PostSelection, PureState, RngSeed, SimplexWeights};
use crate::weakvalues::{
    reconstruct_state, simulate_weak_measurement, weak_values, PointerModel, WeakValueVector, WeakValuesJson,
};

pub const DEFAULT_DIM: usize = 2;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_DELTA: f64 = 100.0;
pub const DEFAULT_ENSEMBLE: u64 = 10_000;
pub const DEFAULT_SAMPLES: u64 = 100_000;
pub const DEFAULT_OPTIMIZER_TOL: f64 = 1e-9;
pub const DEFAULT_QUADRATURE_TOL: f64 = 1e-8;
pub const CSV_DIGITS: usize = 12;

const TOLERANCE_NAMES: [&str; 2] = ["optimizer", "quadrature"];

#[derive(Parser, Debug)]
#[command(name = "weaktomo", version, about = "Weak-value tomography and its error geometry")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct GlobalOpts {
    /// TOML file with run settings
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Hilbert-space dimension N
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// RNG seed
    #[arg(long, global = true, env = "WEAKTOMO_SEED")]
    pub seed: Option<u64>,
    /// RNG stream
    #[arg(long, global = true)]
    pub stream: Option<u64>,
    /// Pointer width Δ
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Statistical error Δ_s; defaults to Δ/sqrt(M)
    #[arg(long = "delta-s", global = true)]
    pub delta_s: Option<f64>,
    /// Ensemble size M per quadrature
    #[arg(long, global = true)]
    pub ensemble: Option<u64>,
    /// Monte Carlo samples
    #[arg(long, global = true)]
    pub samples: Option<u64>,
    /// Worker threads for Monte Carlo and sweeps
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output format
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    /// Named tolerance, e.g. `--tol optimizer=1e-10`
    #[arg(long = "tol", global = true, value_parser = parse_tolerance)]
    pub tolerances: Vec<(String, f64)>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Reconstruct a state from weak values and a post-selection
    Reconstruct {
        /// Weak-value JSON file
        #[arg(long)]
        weak: PathBuf,
        /// Post-selection JSON file
        #[arg(long)]
        post: PathBuf,
    },
    /// Simulate noisy weak measurements and track the reconstruction error
    Experiment {
        /// True state, amplitude JSON
        #[arg(long)]
        state: PathBuf,
        /// Post-selection JSON file
        #[arg(long)]
        post: PathBuf,
        /// Ensemble sizes M to sweep
        #[arg(long, value_delimiter = ',', default_values_t = vec![100u64, 1_000, 10_000, 100_000])]
        ensembles: Vec<u64>,
        /// Repetitions per ensemble size
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Metric, volume element and error volume at one point
    Geometry {
        /// Post-selection JSON file; uniform Fourier vector when absent
        #[arg(long)]
        post: Option<PathBuf>,
        /// Point given as a state
        #[arg(long, conflicts_with = "weak")]
        state: Option<PathBuf>,
        /// Point given as weak values
        #[arg(long)]
        weak: Option<PathBuf>,
    },
    /// Total state-space volume, closed form against Monte Carlo
    Volume {
        /// Post-selection JSON file; uniform Fourier vector when absent
        #[arg(long)]
        post: Option<PathBuf>,
    },
    /// State-averaged error volume, closed form against Monte Carlo
    AvgError {
        /// Post-selection JSON file; uniform Fourier vector when absent
        #[arg(long)]
        post: Option<PathBuf>,
    },
    /// Optimize the post-selection weights
    Optimize {
        /// Comma-separated interior starting weights
        #[arg(long, value_delimiter = ',')]
        init: Option<Vec<f64>>,
        /// Minimize the error volume or maximize the information
        #[arg(long, value_enum, default_value_t = Objective::Error)]
        objective: Objective,
    },
    /// Closed-form averages on a lattice of the open simplex
    Sweep {
        /// Lattice points per axis, endpoints included
        #[arg(long, default_value_t = 21)]
        grid: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Objective {
    Error,
    Information,
}

fn parse_tolerance(s: &str) -> std::result::Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let v: f64 = value.parse().map_err(|e| format!("tolerance `{name}`: {e}"))?;
    Ok((name.trim().to_string(), v))
}

/// Settings accepted in the TOML config file; all optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub stream: Option<u64>,
    pub delta: Option<f64>,
    pub delta_s: Option<f64>,
    pub ensemble: Option<u64>,
    pub samples: Option<u64>,
    pub workers: Option<usize>,
    pub format: Option<OutputFormat>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

/// Fully resolved settings of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub seed: RngSeed,
    pub delta: f64,
    pub delta_s: f64,
    pub ensemble: u64,
    pub samples: u64,
    pub workers: usize,
    pub tolerances: BTreeMap<String, f64>,
    pub output_format: Option<OutputFormat>,
    dim_explicit: bool,
}

impl RunConfig {
    pub fn resolve(opts: &GlobalOpts) -> Result<Self, CliError> {
        let file = match &opts.config {
            Some(path) => {
                let text = read_file(path)?;
                toml::from_str::<FileConfig>(&text).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let mut tolerances: BTreeMap<String, f64> = BTreeMap::from([
            ("optimizer".to_string(), DEFAULT_OPTIMIZER_TOL),
            ("quadrature".to_string(), DEFAULT_QUADRATURE_TOL),
        ]);
        tolerances.extend(file.tolerances);
        tolerances.extend(opts.tolerances.iter().cloned());
        let dim_explicit = opts.dim.or(file.dim).is_some();
        let delta = opts.delta.or(file.delta).unwrap_or(DEFAULT_DELTA);
        let ensemble = opts.ensemble.or(file.ensemble).unwrap_or(DEFAULT_ENSEMBLE);
        let cfg = Self {
            dim: opts.dim.or(file.dim).unwrap_or(DEFAULT_DIM),
            seed: RngSeed::new(
                opts.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
                opts.stream.or(file.stream).unwrap_or(0),
            ),
            delta,
            delta_s: opts
                .delta_s
                .or(file.delta_s)
                .unwrap_or(delta / (ensemble as f64).sqrt()),
            ensemble,
            samples: opts.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES),
            workers: opts.workers.or(file.workers).unwrap_or(1),
            tolerances,
            output_format: opts.format.or(file.format),
            dim_explicit,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::constraint(m));
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        for (name, v) in [("delta", self.delta), ("delta_s", self.delta_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.ensemble == 0 || self.samples == 0 || self.workers == 0 {
            return bad("ensemble, samples and workers must be positive".into());
        }
        for (name, v) in &self.tolerances {
            if !TOLERANCE_NAMES.contains(&name.as_str()) {
                return bad(format!(
                    "unknown tolerance `{name}` (known: {})",
                    TOLERANCE_NAMES.join(", ")
                ));
            }
            if !(*v > 0.0 && v.is_finite()) {
                return bad(format!("tolerance `{name}` must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self, name: &str) -> f64 {
        self.tolerances[name]
    }

    fn check_dim(&self, n: usize) -> Result<(), CliError> {
        if self.dim_explicit && self.dim != n {
            return Err(CliError::constraint(format!(
                "--dim {} but inputs have dimension {n}",
                self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Parse,
    Constraint,
    Singular,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Parse => 2,
            ErrorKind::Constraint => 3,
            ErrorKind::Singular => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    pub error: ErrorKind,
    pub message: String,
}

impl CliError {
    fn parse(message: String) -> Self {
        Self {
            error: ErrorKind::Parse,
            message,
        }
    }

    fn constraint(message: String) -> Self {
        Self {
            error: ErrorKind::Constraint,
            message,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let error = match e {
            Error::SingularPostSelection(_)
            | Error::SingularConfiguration(_)
            | Error::ZeroComponent { .. }
            | Error::DivisionByZero { .. }
            | Error::DegenerateInput(_) => ErrorKind::Singular,
            _ => ErrorKind::Constraint,
        };
        Self {
            error,
            message: e.to_string(),
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_file(path)?).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

fn read_state(path: &Path) -> Result<PureState, CliError> {
    Ok(PureState::try_from(read_json::<AmplitudesJson>(path)?)?)
}

fn read_post(path: &Path) -> Result<PostSelection, CliError> {
    Ok(PostSelection::try_from(read_json::<AmplitudesJson>(path)?)?)
}

fn read_weak(path: &Path) -> Result<WeakValueVector, CliError> {
    Ok(WeakValueVector::try_from(read_json::<WeakValuesJson>(path)?)?)
}

fn post_or_mub(cfg: &RunConfig, path: &Option<PathBuf>) -> Result<PostSelection, CliError> {
    match path {
        Some(p) => {
            let b = read_post(p)?;
            cfg.check_dim(b.dim())?;
            Ok(b)
        }
        None => Ok(fourier_mub(cfg.dim, 0)?),
    }
}

fn post_json(b: &PostSelection) -> Value {
    json!(AmplitudesJson::from(b.clone()))
}

/// Formats `x` with `digits` significant digits, dropping trailing zeros.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..digits as i32).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

/// One ensemble size of an experiment run.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentRow {
    #[serde(rename = "M")]
    pub ensemble: u64,
    pub delta_s: f64,
    pub mean_distance: f64,
    pub stderr: f64,
    pub avg_err_vol: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    #[serde(rename = "N")]
    pub dim: usize,
    pub delta: f64,
    pub trials: usize,
    pub rows: Vec<ExperimentRow>,
    /// Least-squares slope of `ln(mean_distance)` against `ln M`.
    pub slope: f64,
    pub intercept: f64,
}

/// Simulates `trials` noisy weak measurements per ensemble size and records
/// the mean distance between reconstruction and truth.
pub fn run_experiment(
    psi: &PureState,
    b: &PostSelection,
    delta: f64,
    ensembles: &[u64],
    trials: usize,
    seed: RngSeed,
) -> crate::Result<ExperimentReport> {
    if psi.dim() != b.dim() {
        return Err(Error::DimensionMismatch(psi.dim(), b.dim()));
    }
    if trials < 2 || ensembles.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two trials and two ensemble sizes".into(),
        ));
    }
    weak_values(psi, b)?;
    let mut rng = seed.rng();
    let mut rows = Vec::with_capacity(ensembles.len());
    for &m in ensembles {
        let pm = PointerModel::new(delta, m)?;
        let mut dist = Vec::with_capacity(trials);
        for _ in 0..trials {
            let noisy = simulate_weak_measurement(psi, b, &pm, &mut rng)?;
            let rec = reconstruct_state(&noisy.w, b)?;
            dist.push(state_distance(psi, &rec)?);
        }
        let t = trials as f64;
        let mean = dist.iter().sum::<f64>() / t;
        let var = dist.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (t - 1.0);
        rows.push(ExperimentRow {
            ensemble: m,
            delta_s: pm.delta_s(),
            mean_distance: mean,
            stderr: (var / t).sqrt(),
            avg_err_vol: avg_error_volume_closed(b.dim(), b, pm.delta_s())?,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.ensemble as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_distance.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("ensemble sizes must differ".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(ExperimentReport {
        dim: psi.dim(),
        delta,
        trials,
        rows,
        slope,
        intercept: my - slope * mx,
    })
}

fn complex_matrix_json(g: &nalgebra::DMatrix<num_complex::Complex64>) -> Value {
    let rows: Vec<Vec<[f64; 2]>> = (0..g.nrows())
        .map(|j| (0..g.ncols()).map(|k| [g[(j, k)].re, g[(j, k)].im]).collect())
        .collect();
    json!(rows)
}

enum Output {
    Json(Value),
    Text(String),
}

fn execute(cfg: &RunConfig, command: &Command) -> Result<Output, CliError> {
    if cfg.output_format == Some(OutputFormat::Csv) && !matches!(command, Command::Sweep { .. }) {
        return Err(CliError::constraint("csv output is only available for sweep".into()));
    }
    match command {
        Command::Reconstruct { weak, post } => {
            let w = read_weak(weak)?;
            let b = read_post(post)?;
            cfg.check_dim(b.dim())?;
            let psi = reconstruct_state(&w, &b)?;
            Ok(Output::Json(json!(AmplitudesJson::from(psi))))
        }
        Command::Experiment {
            state,
            post,
            ensembles,
            trials,
        } => {
            let psi = read_state(state)?;
            let b = read_post(post)?;
            cfg.check_dim(b.dim())?;
            if ensembles.contains(&0) {
                return Err(CliError::constraint("ensemble sizes must be positive".into()));
            }
            let report = run_experiment(&psi, &b, cfg.delta, ensembles, *trials, cfg.seed)?;
            let mut v = json!(report);
            v["b"] = post_json(&b);
            Ok(Output::Json(v))
        }
        Command::Geometry { post, state, weak } => {
            let b = post_or_mub(cfg, post)?;
            let pt = match (state, weak) {
                (Some(s), None) => GeometryPoint::from_state(&read_state(s)?, &b)?,
                (None, Some(w)) => GeometryPoint::from_weak_values(&read_weak(w)?, b.clone())?,
                _ => return Err(CliError::constraint("give exactly one of --state and --weak".into())),
            };
            let n = pt.dim();
            let analytic = metric_from_kahler(&pt)?;
            let fd = metric_from_potential_fd(&pt)?;
            let pull = metric_pullback(&pt, &make_generator_basis(n)?)?;
            Ok(Output::Json(json!({
                "N": n,
                "b": post_json(&b),
                "w": json!(pt.weak_values()),
                "S": pt.denominator(),
                "K": kahler_potential(&pt)?,
                "metric": complex_matrix_json(&analytic.g),
                "g_real_det": analytic.g_real_det,
                "volume_element": volume_element(&pt)?,
                "delta_s": cfg.delta_s,
                "error_volume": error_volume(&pt, cfg.delta_s)?,
                "information": information(&pt, cfg.delta_s)?,
                "kg_residual": kg_relation_residual(&pt)?,
                "fd_relative_difference": relative_difference(&fd.g, &analytic.g),
                "pullback_relative_difference": relative_difference(&pull.g, &analytic.g),
            })))
        }
        Command::Volume { post } => {
            let b = post_or_mub(cfg, post)?;
            let n = b.dim();
            let est = mc_total_volume(&b, cfg.samples, cfg.seed, cfg.workers)?;
            let mut v = json!({
                "N": n,
                "b": post_json(&b),
                "V_closed": total_volume_closed(n)?,
                "V_mc": est.value,
                "stderr": est.stderr,
                "samples": est.samples,
                "rejected": est.rejected,
            });
            if n == 2 {
                v["V_quadrature"] = json!(volume_quadrature_qubit(&b, cfg.tolerance("quadrature"))?);
            }
            Ok(Output::Json(v))
        }
        Command::AvgError { post } => {
            let b = post_or_mub(cfg, post)?;
            let n = b.dim();
            let est = mc_avg_error_volume(&b, cfg.delta_s, cfg.samples, cfg.seed, cfg.workers)?;
            Ok(Output::Json(json!({
                "N": n,
                "b": post_json(&b),
                "delta_s": cfg.delta_s,
                "closed": avg_error_volume_closed(n, &b, cfg.delta_s)?,
                "mc": est.value,
                "stderr": est.stderr,
                "samples": est.samples,
                "rejected": est.rejected,
                "avg_info": avg_information(n, &b, cfg.delta_s)?,
            })))
        }
        Command::Optimize { init, objective } => {
            let n = cfg.dim;
            let init = match init {
                Some(p) => SimplexWeights::new(p.clone())?,
                None => {
                    let total = (n * (n + 1) / 2) as f64;
                    SimplexWeights::new((1..=n).map(|i| i as f64 / total).collect())
                        .unwrap_or_else(|_| SimplexWeights::renormalized((1..=n).map(|i| i as f64).collect()))
                }
            };
            cfg.check_dim(init.dim())?;
            let tol = cfg.tolerance("optimizer");
            let result = match objective {
                Objective::Error => minimize_avg_error(init.dim(), cfg.delta_s, &init, tol)?,
                Objective::Information => maximize_avg_information(init.dim(), cfg.delta_s, &init, tol)?,
            };
            Ok(Output::Json(json!(result)))
        }
        Command::Sweep { grid } => {
            let rows = sweep_simplex_parallel(cfg.dim, cfg.delta_s, *grid, cfg.workers)?;
            if cfg.output_format == Some(OutputFormat::Json) {
                return Ok(Output::Json(json!(rows)));
            }
            let mut s = String::new();
            let header: Vec<String> = (1..=cfg.dim).map(|i| format!("p_{i}")).collect();
            s.push_str(&header.join(","));
            s.push_str(",avg_err_vol,avg_info\n");
            for r in rows {
                let mut fields: Vec<String> = r.weights.iter().map(|p| format_significant(*p, CSV_DIGITS)).collect();
                fields.push(format_significant(r.avg_err_vol, CSV_DIGITS));
                fields.push(format_significant(r.avg_info, CSV_DIGITS));
                s.push_str(&fields.join(","));
                s.push('\n');
            }
            Ok(Output::Text(s))
        }
    }
}

fn emit_error(err: &mut dyn Write, e: &CliError) -> i32 {
    let text = serde_json::to_string(e).unwrap_or_else(|_| format!("{{\"error\":\"{:?}\"}}", e.error));
    let _ = writeln!(err, "{text}");
    e.error.exit_code()
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => emit_error(err, &CliError::parse(e.render().to_string().trim_end().to_string())),
            };
        }
    };
    let result = RunConfig::resolve(&cli.global).and_then(|cfg| execute(&cfg, &cli.command));
    match result {
        Ok(Output::Json(v)) => {
            let text = serde_json::to_string_pretty(&v).expect("JSON values always serialize");
            let _ = writeln!(out, "{text}");
            0
        }
        Ok(Output::Text(s)) => {
            let _ = write!(out, "{s}");
            0
        }
        Err(e) => emit_error(err, &e),
    }
}

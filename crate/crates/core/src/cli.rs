//! Command-line front end.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::admiss::check_limit_admissibility;
use crate::branchcont::{continue_both, Branch, BranchPair, ContinuationSettings, Direction};
use crate::error::{invalid, Error, Result};
use crate::homsolve::{newton_solve, BcMode, NewtonSettings, ParametricModel};
use crate::lindich::{fredholm_index, spectrum, Axis, EdOptions, SpectrumMethod, SpectrumOptions};
use crate::models::{self, ConfigFormat, ParamValue, Params};
use crate::seqspace::{TruncatedSequence, Window};

#[derive(Debug, Parser)]
#[command(name = "homocont", version, about = "Continuation of homoclinic solutions of nonautonomous difference equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dichotomy spectrum of the variational equation along the reference solution.
    Spectrum(SpectrumArgs),
    /// Newton solve for a homoclinic solution at fixed λ.
    Solve(SolveArgs),
    /// Pseudo-arclength continuation from the reference solution.
    Continue(ContinueArgs),
    /// Admissibility certificates for the limit equations.
    Admissible(AdmissibleArgs),
    /// Fredholm index of the variational operator.
    Index(IndexArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Seed {
    Oracle,
    Trivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Both,
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Auto,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BcArg {
    Zero,
    Projected,
}

impl From<BcArg> for BcMode {
    fn from(b: BcArg) -> Self {
        match b {
            BcArg::Zero => BcMode::Zero,
            BcArg::Projected => BcMode::Projected,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Built-in model name.
    #[arg(long)]
    pub model: Option<String>,
    /// JSON or TOML model configuration (by extension).
    #[arg(long, conflicts_with = "model")]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Coefficient of the scalar affine model.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    /// Comma-separated periodic table for t < 0.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub a_minus: Option<Vec<f64>>,
    /// Comma-separated periodic table for t >= 0.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub a_plus: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub a_s: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub a_u: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub b_amp: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub b_rate: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub eps: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_star: Option<f64>,
    /// Reference solution: the closed-form nontrivial homoclinic or zero.
    #[arg(long, value_enum)]
    pub seed: Option<Seed>,
    /// Sign of the pitchfork branch picked by `--seed oracle`.
    #[arg(long, allow_hyphen_values = true)]
    pub sign: Option<f64>,
    /// Seed for randomized internals.
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, default_value = "Z")]
    pub interval: Axis,
    #[arg(long)]
    pub gamma_min: Option<f64>,
    #[arg(long)]
    pub gamma_max: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub resolution: f64,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
    /// Half-width of the analysis window.
    #[arg(long, default_value_t = 50)]
    pub window: i64,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    /// `N` for `[-N, N]` or `LO:HI`.
    #[arg(long, allow_hyphen_values = true)]
    pub window: Option<String>,
    #[arg(long, value_enum, default_value = "zero")]
    pub bc: BcArg,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ContinueArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub direction: DirectionArg,
    #[arg(long, default_value_t = 0.05)]
    pub steplength: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub min_step: f64,
    #[arg(long, default_value_t = 0.1)]
    pub max_step: f64,
    #[arg(long, default_value_t = 500)]
    pub max_points: usize,
    #[arg(long, default_value_t = 1e3)]
    pub norm_budget: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub reconnect_tol: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_weight: f64,
    #[arg(long, value_enum, default_value = "zero")]
    pub bc: BcArg,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Skip the per-point hyperbolicity probe.
    #[arg(long)]
    pub no_hyperbolicity_check: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AdmissibleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub window: i64,
    /// Plain integer unless `json` is requested.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// Loaded model with the name it was built from.
pub struct LoadedModel {
    pub name: String,
    pub model: ParametricModel,
}

fn push(params: &mut Params, key: &str, v: Option<f64>) {
    if let Some(v) = v {
        params.insert(key.to_string(), ParamValue::Scalar(v));
    }
}

/// Builds the model named by the flags, with `lambda` overriding λ* when λ*
/// is not given explicitly.
pub fn load_model(args: &ModelArgs, lambda: Option<f64>) -> Result<LoadedModel> {
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => ConfigFormat::Toml,
            Some("json") => ConfigFormat::Json,
            _ => return invalid(format!("cannot infer the format of {} (use .json or .toml)", path.display())),
        };
        let (name, model) = models::from_config(&text, format)?;
        return Ok(LoadedModel { name, model });
    }
    let Some(name) = &args.model else {
        return invalid(format!("either --model or --config is required (built-ins: {})", models::BUILTINS.join(", ")));
    };
    let mut params = Params::new();
    push(&mut params, "alpha", args.alpha);
    push(&mut params, "delta", args.delta);
    push(&mut params, "a", args.a);
    push(&mut params, "a_s", args.a_s);
    push(&mut params, "a_u", args.a_u);
    push(&mut params, "b_amplitude", args.b_amp);
    push(&mut params, "b_rate", args.b_rate);
    push(&mut params, "eps", args.eps);
    push(&mut params, "sign", args.sign);
    push(&mut params, "lambda_star", args.lambda_star.or(lambda));
    if let Some(v) = &args.a_minus {
        params.insert("a_minus".into(), ParamValue::Table(v.clone()));
    }
    if let Some(v) = &args.a_plus {
        params.insert("a_plus".into(), ParamValue::Table(v.clone()));
    }
    if let Some(seed) = args.seed {
        let s = if seed == Seed::Oracle { "oracle" } else { "trivial" };
        params.insert("branch".into(), ParamValue::Text(s.into()));
    }
    let model = models::build(name, &params)?;
    Ok(LoadedModel { name: name.clone(), model })
}

fn ed_options(seed: u64) -> EdOptions {
    EdOptions { seed, ..EdOptions::default() }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Solution along which to linearize at λ.
fn solution_at(m: &LoadedModel, lambda: f64, half: i64) -> Result<TruncatedSequence> {
    let reference = &m.model.reference;
    let w = Window::symmetric(half)?;
    let w = w.hull(&reference.phi.window());
    let (phi, _) = newton_solve(&m.model, &reference.phi.on_window(w), lambda, &NewtonSettings::default())?;
    Ok(phi)
}

fn cmd_spectrum(a: &SpectrumArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let m = load_model(&a.model, a.lambda)?;
    let lambda = a.lambda.unwrap_or(m.model.reference.lambda);
    m.model.check_lambda(lambda)?;
    if a.window < 3 {
        return invalid("--window must be at least 3");
    }
    let phi = solution_at(&m, lambda, a.window)?;
    let sys = crate::homsolve::variational_system(&m.model, &phi, lambda)?;
    let gamma_range = match (a.gamma_min, a.gamma_max) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => return invalid("--gamma-min and --gamma-max must be given together"),
    };
    let opts = SpectrumOptions {
        gamma_range,
        resolution: a.resolution,
        method: if a.method == MethodArg::Auto { SpectrumMethod::Auto } else { SpectrumMethod::Bisection },
        ed: ed_options(a.model.rng_seed),
        ..SpectrumOptions::default()
    };
    let w = Window::symmetric(a.window)?;
    let report = spectrum(&sys, a.interval, w, &opts)?;
    for warn in &report.warnings {
        log::warn!("{warn}");
    }
    let text = match a.format {
        Format::Json => serde_json::to_string(&report)? + "\n",
        Format::Csv => {
            let mut s = String::from("lo,hi\n");
            for &[lo, hi] in &report.intervals {
                let _ = writeln!(s, "{lo:e},{hi:e}");
            }
            s
        }
    };
    out.write_all(text.as_bytes())?;
    if let Some(dir) = &a.out {
        let ext = if a.format == Format::Json { "json" } else { "csv" };
        write_atomic(&dir.join(format!("spectrum.{ext}")), text.as_bytes())?;
    }
    Ok(())
}

fn parse_window(s: &str) -> Result<Window> {
    if let Some((lo, hi)) = s.split_once(':') {
        let lo: i64 = lo.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad window `{s}`")))?;
        let hi: i64 = hi.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad window `{s}`")))?;
        Window::new(lo, hi)
    } else {
        let n: i64 = s.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad window `{s}`")))?;
        Window::symmetric(n)
    }
}

fn cmd_solve(a: &SolveArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let m = load_model(&a.model, a.lambda)?;
    let lambda = a.lambda.unwrap_or(m.model.reference.lambda);
    let window = match &a.window {
        Some(s) => parse_window(s)?,
        None => m.model.reference.phi.window(),
    };
    let settings = NewtonSettings { residual_tol: a.tol, tail_tol: a.tol, bc: a.bc.into(), ..NewtonSettings::default() };
    let (phi, diag) = newton_solve(&m.model, &m.model.reference.phi.on_window(window), lambda, &settings)?;
    let mut csv = Vec::new();
    phi.write_csv(&mut csv)?;
    write_atomic(&a.out.join("solution.csv"), &csv)?;
    let json = to_json(&diag)?;
    write_atomic(&a.out.join("diagnostics.json"), json.as_bytes())?;
    match a.format {
        Format::Json => out.write_all(json.as_bytes())?,
        Format::Csv => writeln!(
            out,
            "converged,iterations,residual,t_minus,t_plus\n{},{},{:e},{},{}",
            diag.converged, diag.total_iterations, diag.residual, diag.window[0], diag.window[1]
        )?,
    }
    Ok(())
}

fn threads() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("HOMOCONT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n >= 1 => n.min(avail.max(1)),
        _ => avail,
    }
}

#[derive(Serialize)]
struct BranchJson<'a> {
    model: &'a str,
    lambda_star: f64,
    plus: Option<&'a crate::branchcont::BranchOutcome>,
    minus: Option<&'a crate::branchcont::BranchOutcome>,
    label: Option<&'a str>,
    classification: Option<&'a crate::branchcont::Classification>,
    settings: &'a ContinuationSettings,
}

/// Points of both traces in arclength order, `s < 0` on `C₋`.
fn ordered_points(pair: &BranchPair) -> Vec<(f64, &crate::branchcont::BranchPoint)> {
    let mut rows = Vec::new();
    if let Some(m) = &pair.minus {
        for p in m.points.iter().skip(1).rev() {
            rows.push((-p.s, p));
        }
    }
    let start = pair.plus.as_ref().or(pair.minus.as_ref()).map(|b: &Branch| &b.points[0]);
    if let Some(p) = start {
        rows.push((0.0, p));
    }
    if let Some(b) = &pair.plus {
        for p in b.points.iter().skip(1) {
            rows.push((p.s, p));
        }
    }
    rows
}

fn cmd_continue(a: &ContinueArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let m = load_model(&a.model, None)?;
    let lambda_range = match (a.lambda_min, a.lambda_max) {
        (None, None) => None,
        (lo, hi) => {
            let ls = m.model.reference.lambda;
            Some((lo.unwrap_or(ls - 5.0), hi.unwrap_or(ls + 5.0)))
        }
    };
    let settings = ContinuationSettings {
        steplength: a.steplength,
        min_step: a.min_step,
        max_step: a.max_step,
        max_points: a.max_points,
        reconnect_tol: a.reconnect_tol,
        norm_budget: a.norm_budget,
        lambda_range,
        lambda_weight: a.lambda_weight,
        newton: NewtonSettings { residual_tol: a.tol, tail_tol: a.tol, bc: a.bc.into(), ..NewtonSettings::default() },
        check_hyperbolicity: !a.no_hyperbolicity_check,
        ..ContinuationSettings::default()
    };
    settings.validate()?;
    let dirs: &[Direction] = match a.direction {
        DirectionArg::Both => &[Direction::Plus, Direction::Minus],
        DirectionArg::Plus => &[Direction::Plus],
        DirectionArg::Minus => &[Direction::Minus],
    };
    let pair = continue_both(&m.model, dirs, &settings, threads())?;
    let d = m.model.dim();
    let rows = ordered_points(&pair);

    let mut branch = String::from("s,lambda,sup_norm,fold_flag");
    for i in 1..=d {
        let _ = write!(branch, ",x{i}");
    }
    branch.push('\n');
    for (s, p) in &rows {
        let _ = write!(branch, "{s:e},{:e},{:e},{}", p.lambda, p.sup_norm, u8::from(p.fold_flag));
        for v in p.phi.at(0) {
            let _ = write!(branch, ",{v:e}");
        }
        branch.push('\n');
    }
    write_atomic(&a.out.join("branch.csv"), branch.as_bytes())?;

    let mut profiles = String::from("point,lambda,t");
    for i in 1..=d {
        let _ = write!(profiles, ",x{i}");
    }
    profiles.push('\n');
    for (k, (_, p)) in rows.iter().enumerate() {
        for t in p.phi.window().iter() {
            let _ = write!(profiles, "{k},{:e},{t}", p.lambda);
            for v in p.phi.at(t) {
                let _ = write!(profiles, ",{v:e}");
            }
            profiles.push('\n');
        }
    }
    write_atomic(&a.out.join("profiles.csv"), profiles.as_bytes())?;

    let label = pair.classification.as_ref().map(|c| c.label.as_str());
    let json = to_json(&BranchJson {
        model: &m.name,
        lambda_star: m.model.reference.lambda,
        plus: pair.plus.as_ref().map(|b| &b.outcome),
        minus: pair.minus.as_ref().map(|b| &b.outcome),
        label,
        classification: pair.classification.as_ref(),
        settings: &settings,
    })?;
    write_atomic(&a.out.join("branch.json"), json.as_bytes())?;
    match a.format {
        Format::Json => out.write_all(json.as_bytes())?,
        Format::Csv => out.write_all(branch.as_bytes())?,
    }
    Ok(())
}

/// Reads `profiles.csv` back into `(λ, φ)` pairs.
pub fn read_profiles(path: &Path) -> Result<Vec<(f64, TruncatedSequence)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let d = rdr.headers()?.len().checked_sub(3).filter(|d| *d > 0).ok_or_else(|| Error::Parse("profiles need x columns".into()))?;
    let mut groups: Vec<(usize, f64, i64, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{}`", &rec[i])));
        let k: usize = rec[0].trim().parse().map_err(|_| Error::Parse("bad point index".into()))?;
        let lambda = num(1)?;
        let t: i64 = rec[2].trim().parse().map_err(|_| Error::Parse("bad time index".into()))?;
        let xs = (0..d).map(|i| num(3 + i)).collect::<Result<Vec<_>>>()?;
        match groups.last_mut() {
            Some(g) if g.0 == k => g.3.extend(xs),
            _ => groups.push((k, lambda, t, xs)),
        }
    }
    groups
        .into_iter()
        .map(|(_, lambda, t0, data)| {
            let n = (data.len() / d) as i64;
            Ok((lambda, TruncatedSequence::from_flat(Window::new(t0, t0 + n - 1)?, d, data)?))
        })
        .collect()
}

fn cmd_admissible(a: &AdmissibleArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let m = load_model(&a.model, a.lambda)?;
    let lambda = a.lambda.unwrap_or(m.model.reference.lambda);
    m.model.check_lambda(lambda)?;
    let report = check_limit_admissibility(&m.model, lambda, &ed_options(a.model.rng_seed))?;
    let text = match a.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut s = String::from("side,criterion,verified,lhs,rhs\n");
            for (side, c) in [("minus", &report.minus), ("plus", &report.plus)] {
                let crit = serde_json::to_value(c.criterion)?;
                let _ = writeln!(s, "{side},{},{},{:e},{:e}", crit.as_str().unwrap_or(""), c.verified, c.lhs, c.rhs);
            }
            s
        }
    };
    out.write_all(text.as_bytes())?;
    if let Some(dir) = &a.out {
        let ext = if a.format == Format::Json { "json" } else { "csv" };
        write_atomic(&dir.join(format!("admissible.{ext}")), text.as_bytes())?;
    }
    Ok(())
}

fn cmd_index(a: &IndexArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let m = load_model(&a.model, a.lambda)?;
    let lambda = a.lambda.unwrap_or(m.model.reference.lambda);
    m.model.check_lambda(lambda)?;
    let phi = solution_at(&m, lambda, a.window)?;
    let sys = crate::homsolve::variational_system(&m.model, &phi, lambda)?;
    let report = fredholm_index(&sys, Window::symmetric(a.window)?, &ed_options(a.model.rng_seed))?;
    match a.format {
        Some(Format::Json) => out.write_all(to_json(&report)?.as_bytes())?,
        _ => writeln!(out, "{}", report.index)?,
    }
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    match &cli.command {
        Command::Spectrum(a) => cmd_spectrum(a, out),
        Command::Solve(a) => cmd_solve(a, out),
        Command::Continue(a) => cmd_continue(a, out),
        Command::Admissible(a) => cmd_admissible(a, out),
        Command::Index(a) => cmd_index(a, out),
    }
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 on usage errors, 2 on numerical failures.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
            } else {
                let _ = out.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}

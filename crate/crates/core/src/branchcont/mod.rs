//! Pseudo-arclength continuation of homoclinic branches and classification
//! of how the traced component ends.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::homsolve::{
    assemble, boundary_conditions, full_residual, grow_window, hyperbolicity_report, is_hyperbolic, newton_solve, residual,
    NewtonSettings, ParametricModel,
};
use crate::linalg::{max_norm, DenseRow, SolveFailure};
use crate::seqspace::TruncatedSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" => Ok(Direction::Plus),
            "minus" => Ok(Direction::Minus),
            _ => invalid(format!("unknown direction `{s}` (expected plus or minus)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationSettings {
    pub steplength: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_points: usize,
    /// Defaults to `10 · steplength` when `None`.
    pub reconnect_tol: Option<f64>,
    pub norm_budget: f64,
    /// Explicit λ budget; `None` means `λ* ± 5` intersected with Λ.
    pub lambda_range: Option<(f64, f64)>,
    /// Weight of δλ against δφ in the arclength constraint.
    pub lambda_weight: f64,
    pub max_corrector_iterations: usize,
    pub newton: NewtonSettings,
    pub check_hyperbolicity: bool,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            steplength: 0.05,
            min_step: 1e-5,
            max_step: 0.1,
            max_points: 500,
            reconnect_tol: None,
            norm_budget: 1e3,
            lambda_range: None,
            lambda_weight: 1.0,
            max_corrector_iterations: 12,
            newton: NewtonSettings::default(),
            check_hyperbolicity: true,
        }
    }
}

impl ContinuationSettings {
    pub fn validate(&self) -> Result<()> {
        self.newton.validate()?;
        if !(self.min_step > 0.0 && self.min_step <= self.steplength && self.steplength <= self.max_step) {
            return invalid("step sizes must satisfy 0 < min_step <= steplength <= max_step");
        }
        if self.max_points < 2 {
            return invalid("max_points must be at least 2");
        }
        if !(self.norm_budget > 0.0) || !(self.lambda_weight > 0.0) {
            return invalid("norm_budget and lambda_weight must be positive");
        }
        if let Some((lo, hi)) = self.lambda_range {
            if !(lo < hi) {
                return invalid("lambda range must satisfy lo < hi");
            }
        }
        if self.reconnect_tol.is_some_and(|r| !(r > 0.0)) {
            return invalid("reconnect_tol must be positive");
        }
        Ok(())
    }

    pub fn reconnect_tol(&self) -> f64 {
        self.reconnect_tol.unwrap_or(10.0 * self.steplength)
    }
}

/// Tangent `(δφ, δλ)` with unit product norm `max(‖δφ‖∞, |δλ|)`.
#[derive(Debug, Clone)]
pub struct Tangent {
    pub phi: TruncatedSequence,
    pub lambda: f64,
}

impl Tangent {
    fn norm(&self) -> f64 {
        self.phi.sup_norm().max(self.lambda.abs())
    }

    fn scaled(&self, c: f64) -> Self {
        let mut phi = self.phi.clone();
        phi.as_flat_mut().iter_mut().for_each(|x| *x *= c);
        Tangent { phi, lambda: self.lambda * c }
    }

    pub fn reversed(&self) -> Self {
        self.scaled(-1.0)
    }
}

#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub lambda: f64,
    pub phi: TruncatedSequence,
    pub tangent: Tangent,
    pub sup_norm: f64,
    pub s: f64,
    pub hyperbolic: Option<bool>,
    pub fold_flag: bool,
    pub corrector_iterations: usize,
}

impl BranchPoint {
    /// Product-norm distance `max(‖φ - ψ‖∞, |λ - μ|)`.
    pub fn distance(&self, other: &BranchPoint) -> f64 {
        self.phi.distance(&other.phi).max((self.lambda - other.lambda).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeCode {
    Reconnect,
    Unbounded,
    HitOmegaBoundary,
    HitLambdaBoundary,
    BudgetExhausted,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fold {
    pub index: usize,
    pub lambda_estimate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchOutcome {
    pub code: OutcomeCode,
    pub reason: String,
    pub points: usize,
    pub final_lambda: f64,
    pub final_sup_norm: f64,
    pub min_lambda: f64,
    pub max_lambda: f64,
    pub max_sup_norm: f64,
    pub folds: Vec<Fold>,
    /// Index of the earlier point the trace returned to.
    pub reconnect_index: Option<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub direction: Direction,
    pub points: Vec<BranchPoint>,
    pub outcome: BranchOutcome,
}

/// Uniform grid over `(λ, ‖φ‖∞)` used to find candidate returns quickly.
struct ReturnIndex {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl ReturnIndex {
    fn new(cell: f64) -> Self {
        Self { cell, cells: HashMap::new() }
    }

    fn key(&self, p: &BranchPoint) -> (i64, i64) {
        ((p.lambda / self.cell).floor() as i64, (p.sup_norm / self.cell).floor() as i64)
    }

    fn insert(&mut self, idx: usize, p: &BranchPoint) {
        self.cells.entry(self.key(p)).or_default().push(idx);
    }

    /// Earliest stored point within `tol` of `p` whose arclength lies at least
    /// `gap` behind it.
    fn find(&self, points: &[BranchPoint], p: &BranchPoint, tol: f64, gap: f64) -> Option<usize> {
        let (a, b) = self.key(p);
        let mut hits = Vec::new();
        for da in -1..=1 {
            for db in -1..=1 {
                if let Some(v) = self.cells.get(&(a + da, b + db)) {
                    hits.extend(v.iter().copied().filter(|&i| (p.s - points[i].s).abs() >= gap && p.distance(&points[i]) <= tol));
                }
            }
        }
        hits.into_iter().min()
    }
}

fn lambda_budget(model: &ParametricModel, lambda_star: f64, settings: &ContinuationSettings) -> (f64, f64, bool, bool) {
    let (blo, bhi) = settings.lambda_range.unwrap_or((lambda_star - 5.0, lambda_star + 5.0));
    let (mlo, mhi) = model.lambda_interval;
    // Λ is open, so stop just inside a finite endpoint
    let margin = |v: f64| 1e-9 * (1.0 + v.abs());
    let (lo, lo_model) = if mlo.is_finite() && mlo + margin(mlo) >= blo { (mlo + margin(mlo), true) } else { (blo, false) };
    let (hi, hi_model) = if mhi.is_finite() && mhi - margin(mhi) <= bhi { (mhi - margin(mhi), true) } else { (bhi, false) };
    (lo, hi, lo_model, hi_model)
}

/// Corrector result: converged point or the reason it failed.
enum Corrected {
    Done { phi: TruncatedSequence, lambda: f64, iterations: usize },
    Failed { domain: bool, message: String },
}

fn weighted_dot(t: &Tangent, phi: &TruncatedSequence, lambda: f64, w: f64) -> f64 {
    t.phi.as_flat().iter().zip(phi.as_flat()).map(|(a, b)| a * b).sum::<f64>() + w * t.lambda * lambda
}

/// Solves `[G_φ G_λ; rowᵀ] τ = (0, 1)` in the least-squares sense.
fn homogeneous_bordered_solve(
    model: &ParametricModel,
    phi: &TruncatedSequence,
    lambda: f64,
    row: &Tangent,
    weight: f64,
    settings: &NewtonSettings,
) -> Result<std::result::Result<(Vec<f64>, f64), SolveFailure>> {
    let bc = boundary_conditions(model, phi, lambda, settings.bc)?;
    let (sys, _) = assemble(model, phi, lambda, &bc, true)?;
    let dense = DenseRow { band: row.phi.as_flat().to_vec(), extra: vec![weight * row.lambda], rhs: 1.0 };
    Ok(sys.with_zero_rhs().solve(&[dense]).map(|s| (s.x, s.z[0])))
}

/// Tangent of the solution curve, oriented along `previous`.
pub fn tangent(
    model: &ParametricModel,
    phi: &TruncatedSequence,
    lambda: f64,
    previous: &Tangent,
    settings: &ContinuationSettings,
) -> Result<Tangent> {
    let prev = Tangent { phi: previous.phi.on_window(phi.window()), lambda: previous.lambda };
    let (x, z) = match homogeneous_bordered_solve(model, phi, lambda, &prev, settings.lambda_weight, &settings.newton)? {
        Ok(v) => v,
        Err(_) => return Err(Error::NumericalRank("augmented Jacobian is singular at the tangent computation".into())),
    };
    let t = Tangent { phi: TruncatedSequence::from_flat(phi.window(), phi.dim(), x)?, lambda: z };
    let n = t.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::NumericalRank("degenerate tangent".into()));
    }
    let t = t.scaled(1.0 / n);
    let orient = weighted_dot(&prev, &t.phi, t.lambda, settings.lambda_weight);
    Ok(if orient < 0.0 { t.reversed() } else { t })
}

fn correct(
    model: &ParametricModel,
    pred_phi: TruncatedSequence,
    pred_lambda: f64,
    tangent: &Tangent,
    settings: &ContinuationSettings,
) -> Result<Corrected> {
    let w = settings.lambda_weight;
    let tol = settings.newton.residual_tol;
    let anchor = weighted_dot(tangent, &pred_phi, pred_lambda, w);
    let mut phi = pred_phi;
    let mut lambda = pred_lambda;
    for it in 0..=settings.max_corrector_iterations {
        if model.check_lambda(lambda).is_err() {
            return Ok(Corrected::Failed { domain: false, message: format!("corrector left Λ at λ = {lambda}") });
        }
        let bc = boundary_conditions(model, &phi, lambda, settings.newton.bc)?;
        let res = match full_residual(model, &phi, lambda, &bc) {
            Ok(r) => r,
            Err(Error::DomainViolation { t }) => {
                return Ok(Corrected::Failed { domain: true, message: format!("corrector left Ω at t = {t}") })
            }
            Err(e) => return Err(e),
        };
        let arc = weighted_dot(tangent, &phi, lambda, w) - anchor;
        let r = max_norm(&res).max(arc.abs());
        if r <= tol {
            return Ok(Corrected::Done { phi, lambda, iterations: it });
        }
        if it == settings.max_corrector_iterations {
            return Ok(Corrected::Failed { domain: false, message: format!("corrector residual {r:.3e} after {it} iterations") });
        }
        let (sys, _) = assemble(model, &phi, lambda, &bc, true)?;
        let dense = DenseRow { band: tangent.phi.as_flat().to_vec(), extra: vec![w * tangent.lambda], rhs: -arc };
        let (dx, dl) = match sys.solve(&[dense]) {
            Ok(s) => (s.x, s.z[0]),
            Err(_) => return Ok(Corrected::Failed { domain: false, message: "bordered system is singular".into() }),
        };
        let step = max_norm(&dx).max(dl.abs());
        for (x, d) in phi.as_flat_mut().iter_mut().zip(&dx) {
            *x += d;
        }
        lambda += dl;
        if !step.is_finite() {
            return Ok(Corrected::Failed { domain: false, message: "corrector diverged".into() });
        }
        // least-squares floor: the step vanishes while the residual does not
        if step <= 1e-14 * (1.0 + phi.sup_norm()) {
            let res = full_residual(model, &phi, lambda, &bc).unwrap_or_default();
            let arc = weighted_dot(tangent, &phi, lambda, w) - anchor;
            let r = max_norm(&res).max(arc.abs());
            if r <= tol {
                return Ok(Corrected::Done { phi, lambda, iterations: it + 1 });
            }
            return Ok(Corrected::Failed { domain: false, message: format!("corrector stalled at residual {r:.3e}") });
        }
    }
    unreachable!()
}

/// One predictor–corrector step of size `ds` from `point` along `tangent`,
/// growing the window while the tails exceed the tail tolerance.
pub fn single_step(
    model: &ParametricModel,
    point: &BranchPoint,
    tangent: &Tangent,
    ds: f64,
    settings: &ContinuationSettings,
) -> Result<BranchPoint> {
    step_once(model, point, tangent, ds, settings)?.map_err(|(_, msg)| Error::Hypothesis(format!("continuation step failed: {msg}")))
}

type StepResult = std::result::Result<BranchPoint, (bool, String)>;

fn step_once(model: &ParametricModel, point: &BranchPoint, tangent: &Tangent, ds: f64, settings: &ContinuationSettings) -> Result<StepResult> {
    let ns = &settings.newton;
    let mut window = point.phi.window();
    let mut growths = 0;
    loop {
        let base = point.phi.on_window(window);
        let tan = Tangent { phi: tangent.phi.on_window(window), lambda: tangent.lambda };
        let mut pred = base.clone();
        for (x, d) in pred.as_flat_mut().iter_mut().zip(tan.phi.as_flat()) {
            *x += ds * d;
        }
        let pred_lambda = point.lambda + ds * tan.lambda;
        let (phi, lambda, iterations) = match correct(model, pred, pred_lambda, &tan, settings)? {
            Corrected::Done { phi, lambda, iterations } => (phi, lambda, iterations),
            Corrected::Failed { domain, message } => {
                // a least-squares floor above tolerance usually means the window is too short
                let can_grow = growths < ns.max_window_growths && message.contains("stalled");
                if can_grow {
                    window = grow_window(window, ns.window_growth_factor, true, true);
                    growths += 1;
                    continue;
                }
                return Ok(Err((domain, message)));
            }
        };
        let (tl, tr) = phi.tails(2);
        if (tl > ns.tail_tol || tr > ns.tail_tol) && growths < ns.max_window_growths && window.t_plus() < ns.max_half_width {
            window = grow_window(window, ns.window_growth_factor, tl > ns.tail_tol, tr > ns.tail_tol);
            growths += 1;
            continue;
        }
        let tan_new = tangent_or_keep(model, &phi, lambda, &tan, settings)?;
        let sup = phi.sup_norm();
        let mut p = BranchPoint {
            lambda,
            phi,
            tangent: tan_new,
            sup_norm: sup,
            s: 0.0,
            hyperbolic: None,
            fold_flag: false,
            corrector_iterations: iterations,
        };
        p.s = point.s + p.distance(point);
        return Ok(Ok(p));
    }
}

fn tangent_or_keep(model: &ParametricModel, phi: &TruncatedSequence, lambda: f64, prev: &Tangent, settings: &ContinuationSettings) -> Result<Tangent> {
    match tangent(model, phi, lambda, prev, settings) {
        Ok(t) => Ok(t),
        Err(Error::NumericalRank(msg)) => {
            log::warn!("{msg}; reusing the previous tangent");
            Ok(Tangent { phi: prev.phi.on_window(phi.window()), lambda: prev.lambda })
        }
        Err(e) => Err(e),
    }
}

/// Newton-corrected reference point `(φ*, λ*)` with its initial tangent,
/// checking that the linearization is hyperbolic there.
pub fn start_point(model: &ParametricModel, direction: Direction, settings: &ContinuationSettings) -> Result<BranchPoint> {
    settings.validate()?;
    let lambda = model.reference.lambda;
    let (phi, _) = newton_solve(model, &model.reference.phi, lambda, &settings.newton)?;
    let w = phi.window();
    let rep = hyperbolicity_report(model, &phi, lambda, w, false)?;
    if !rep.hyperbolic {
        return Err(Error::Hypothesis(format!(
            "1 lies in the dichotomy spectrum of the linearization at λ* = {lambda}: {}",
            rep.whole_axis.reason.clone().unwrap_or_default()
        )));
    }
    let seed = Tangent { phi: TruncatedSequence::zeros(w, phi.dim()), lambda: direction.sign() };
    let t = tangent(model, &phi, lambda, &seed, settings)?;
    let t = if t.lambda * direction.sign() < 0.0 { t.reversed() } else { t };
    let sup = phi.sup_norm();
    Ok(BranchPoint { lambda, phi, tangent: t, sup_norm: sup, s: 0.0, hyperbolic: Some(true), fold_flag: false, corrector_iterations: 0 })
}

/// Vertex of the parabola through three `(σ, λ)` samples.
fn parabola_vertex(pts: [(f64, f64); 3]) -> Option<f64> {
    let [(x0, y0), (x1, y1), (x2, y2)] = pts;
    let d = (x0 - x1) * (x0 - x2) * (x1 - x2);
    if d == 0.0 {
        return None;
    }
    let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / d;
    let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / d;
    let c = (x1 * x2 * (x1 - x2) * y0 + x2 * x0 * (x2 - x0) * y1 + x0 * x1 * (x0 - x1) * y2) / d;
    if a == 0.0 {
        return None;
    }
    let xv = -b / (2.0 * a);
    Some(c - b * b / (4.0 * a)).filter(|_| xv.is_finite())
}

fn fold_estimate(a: &BranchPoint, b: &BranchPoint, c: &BranchPoint) -> f64 {
    // project onto the φ-part of the middle tangent, along which λ is locally quadratic
    let dir = &b.tangent.phi;
    let sigma = |p: &BranchPoint| {
        let q = p.phi.on_window(dir.window());
        dir.as_flat().iter().zip(q.as_flat()).map(|(x, y)| x * y).sum::<f64>()
    };
    let fallback = [a.lambda, b.lambda, c.lambda];
    let lo = fallback.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = fallback.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    match parabola_vertex([(sigma(a), a.lambda), (sigma(b), b.lambda), (sigma(c), c.lambda)]) {
        Some(v) if v >= lo - (hi - lo) && v <= hi + (hi - lo) => v,
        _ => {
            if b.tangent.lambda.abs() < 1e-12 {
                b.lambda
            } else if (b.lambda - a.lambda).abs() > (c.lambda - b.lambda).abs() {
                hi.max(lo)
            } else {
                b.lambda
            }
        }
    }
}

/// Traces `C₊` (`Direction::Plus`) or `C₋` from the model's reference point.
pub fn continue_branch(model: &ParametricModel, direction: Direction, settings: &ContinuationSettings) -> Result<Branch> {
    let start = start_point(model, direction, settings)?;
    continue_from(model, start, direction, settings)
}

pub fn continue_from(model: &ParametricModel, start: BranchPoint, direction: Direction, settings: &ContinuationSettings) -> Result<Branch> {
    settings.validate()?;
    let (lam_lo, lam_hi, lo_is_model, hi_is_model) = lambda_budget(model, start.lambda, settings);
    let reconnect_tol = settings.reconnect_tol();
    let mut index = ReturnIndex::new(reconnect_tol);
    let mut points = vec![start];
    index.insert(0, &points[0]);
    let mut ds = settings.steplength;
    let mut folds = Vec::new();
    let mut warnings = Vec::new();
    let outcome_of = |code: OutcomeCode, reason: String, points: &[BranchPoint], folds: Vec<Fold>, reconnect: Option<usize>, warnings: Vec<String>| {
        let last = points.last().expect("nonempty");
        BranchOutcome {
            code,
            reason,
            points: points.len(),
            final_lambda: last.lambda,
            final_sup_norm: last.sup_norm,
            min_lambda: points.iter().map(|p| p.lambda).fold(f64::INFINITY, f64::min),
            max_lambda: points.iter().map(|p| p.lambda).fold(f64::NEG_INFINITY, f64::max),
            max_sup_norm: points.iter().map(|p| p.sup_norm).fold(0.0, f64::max),
            folds,
            reconnect_index: reconnect,
            warnings,
        }
    };
    loop {
        if points.len() >= settings.max_points {
            let o = outcome_of(OutcomeCode::BudgetExhausted, format!("max_points = {} reached", settings.max_points), &points, folds, None, warnings);
            return Ok(Branch { direction, points, outcome: o });
        }
        let last = points.last().expect("nonempty").clone();
        // the predictor would leave the λ budget: finish with a natural-parameter solve on the bound
        let pred_lambda = last.lambda + ds * last.tangent.lambda;
        if pred_lambda > lam_hi || pred_lambda < lam_lo {
            let (bound, is_model) = if pred_lambda > lam_hi { (lam_hi, hi_is_model) } else { (lam_lo, lo_is_model) };
            let mut init = last.phi.clone();
            let dl = bound - last.lambda;
            if last.tangent.lambda.abs() > 1e-12 {
                let c = dl / last.tangent.lambda;
                for (x, d) in init.as_flat_mut().iter_mut().zip(last.tangent.phi.as_flat()) {
                    *x += c * d;
                }
            }
            let attempt = if dl.abs() <= 2.0 * settings.max_step { newton_solve(model, &init, bound, &settings.newton).ok() } else { None };
            match attempt {
                Some((phi, diag)) => {
                    warnings.extend(diag.warnings);
                    let tan = tangent_or_keep(model, &phi, bound, &last.tangent, settings)?;
                    let sup = phi.sup_norm();
                    let mut p = BranchPoint {
                        lambda: bound,
                        phi,
                        tangent: tan,
                        sup_norm: sup,
                        s: 0.0,
                        hyperbolic: None,
                        fold_flag: false,
                        corrector_iterations: diag.total_iterations,
                    };
                    p.s = last.s + p.distance(&last);
                    if settings.check_hyperbolicity {
                        p.hyperbolic = is_hyperbolic(model, &p.phi, p.lambda).ok();
                    }
                    points.push(p);
                    let (code, reason) = if is_model {
                        (OutcomeCode::HitLambdaBoundary, format!("λ reached the boundary of Λ at {bound}"))
                    } else {
                        (OutcomeCode::Unbounded, format!("lambda budget reached at λ = {bound}"))
                    };
                    let o = outcome_of(code, reason, &points, folds, None, warnings);
                    return Ok(Branch { direction, points, outcome: o });
                }
                None => {
                    if ds > settings.min_step && dl.abs() < ds * last.tangent.lambda.abs() {
                        // shrink onto the bound first
                        ds = (dl / last.tangent.lambda).abs().max(settings.min_step);
                        if ds < settings.min_step * 1.0001 {
                            ds = settings.min_step;
                        }
                        let p = step_once(model, &last, &last.tangent, ds, settings)?;
                        if let Ok(p) = p {
                            if p.lambda <= lam_hi && p.lambda >= lam_lo {
                                self_accept(model, settings, &mut points, &mut index, p, &mut folds);
                                continue;
                            }
                        }
                    }
                    let o = outcome_of(
                        OutcomeCode::BudgetExhausted,
                        format!("natural-parameter solve failed at the λ bound {bound}"),
                        &points,
                        folds,
                        None,
                        warnings,
                    );
                    return Ok(Branch { direction, points, outcome: o });
                }
            }
        }
        match step_once(model, &last, &last.tangent, ds, settings)? {
            Ok(p) => {
                let iters = p.corrector_iterations;
                let idx = self_accept(model, settings, &mut points, &mut index, p, &mut folds);
                let p = &points[idx];
                if let Some(j) = index.find(&points, p, reconnect_tol, 3.0 * reconnect_tol) {
                    let o = outcome_of(
                        OutcomeCode::Reconnect,
                        format!("point {idx} returns within {reconnect_tol} of point {j}"),
                        &points,
                        folds,
                        Some(j),
                        warnings,
                    );
                    return Ok(Branch { direction, points, outcome: o });
                }
                if p.sup_norm > settings.norm_budget {
                    let reason = format!("norm budget exceeded: sup norm {} > {} with λ = {}", p.sup_norm, settings.norm_budget, p.lambda);
                    let o = outcome_of(OutcomeCode::Unbounded, reason, &points, folds, None, warnings);
                    return Ok(Branch { direction, points, outcome: o });
                }
                if iters <= 3 {
                    ds = (ds * 1.5).min(settings.max_step);
                } else if iters >= 8 {
                    ds = (ds * 0.5).max(settings.min_step);
                }
            }
            Err((domain, message)) => {
                if ds <= settings.min_step {
                    let last = points.last().expect("nonempty");
                    let gap = last.phi.window().iter().map(|t| model.omega.distance_to_boundary(last.phi.at(t))).fold(f64::INFINITY, f64::min);
                    let near_omega = !model.omega.is_whole_space() && (domain || gap < 10.0 * settings.max_step);
                    let (code, reason) = if near_omega {
                        (OutcomeCode::HitOmegaBoundary, format!("corrector cannot stay in Ω: {message}"))
                    } else {
                        (OutcomeCode::BudgetExhausted, format!("corrector failed at the minimal step: {message}"))
                    };
                    let o = outcome_of(code, reason, &points, folds, None, warnings);
                    return Ok(Branch { direction, points, outcome: o });
                }
                ds = (ds * 0.5).max(settings.min_step);
            }
        }
    }
}

/// Stores an accepted point, re-validating its residual and flagging folds.
fn self_accept(
    model: &ParametricModel,
    settings: &ContinuationSettings,
    points: &mut Vec<BranchPoint>,
    index: &mut ReturnIndex,
    mut p: BranchPoint,
    folds: &mut Vec<Fold>,
) -> usize {
    let prev = points.last().expect("nonempty");
    if prev.tangent.lambda * p.tangent.lambda < 0.0 {
        p.fold_flag = true;
        let est = if points.len() >= 2 {
            let a = &points[points.len() - 2];
            fold_estimate(a, prev, &p)
        } else {
            0.5 * (prev.lambda + p.lambda)
        };
        folds.push(Fold { index: points.len(), lambda_estimate: est });
    }
    if settings.check_hyperbolicity {
        p.hyperbolic = is_hyperbolic(model, &p.phi, p.lambda).ok();
    }
    debug_assert!(residual(model, &p.phi, p.lambda).map(|r| r.sup_norm()).unwrap_or(f64::INFINITY) <= settings.newton.residual_tol * 10.0);
    let idx = points.len();
    index.insert(idx, &p);
    points.push(p);
    idx
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub label: String,
    pub alternatives: Vec<String>,
    pub details: Vec<String>,
    pub note: String,
}

pub const EVIDENCE_NOTE: &str = "numerical evidence only, not a proof; alternatives (a) and (d) cannot be told apart numerically";

/// Maps the two trace outcomes to the alternatives (a)–(d) of the global
/// continuation result. `omega_global` and `lambda_global` say whether Ω is
/// all of ℝ^d and Λ all of ℝ.
pub fn classify(plus: &BranchOutcome, minus: &BranchOutcome, omega_global: bool, lambda_global: bool) -> Classification {
    let mut details = Vec::new();
    let both = [("C+", plus), ("C-", minus)];
    let any = |c: OutcomeCode| both.iter().any(|(_, o)| o.code == c);
    for (name, o) in both {
        details.push(format!("{name}: {:?} ({})", o.code, o.reason));
        if o.code == OutcomeCode::Unbounded && o.reason.starts_with("norm budget") {
            details.push(format!("{name} is unbounded in φ while λ stays bounded (evidence for (b₁))"));
        }
    }
    let (label, alternatives) = if any(OutcomeCode::Reconnect) {
        ("(a)/(d): the traced component returns to an earlier point".to_string(), vec!["a".into(), "d".into()])
    } else if any(OutcomeCode::HitOmegaBoundary) || any(OutcomeCode::HitLambdaBoundary) {
        let mut parts = Vec::new();
        let mut alts = Vec::new();
        for (name, o) in both {
            match o.code {
                OutcomeCode::HitOmegaBoundary => {
                    parts.push(format!("closure(Π₁({name})) ∩ ∂ℓ₀(Ω) nonempty"));
                    alts.push("b1".to_string());
                }
                OutcomeCode::HitLambdaBoundary => {
                    parts.push(format!("closure(Π₂({name})) ∩ ∂Λ nonempty"));
                    alts.push("b2".to_string());
                }
                _ => {}
            }
        }
        alts.dedup();
        (format!("(b): {}", parts.join("; ")), alts)
    } else if plus.code == OutcomeCode::Unbounded && minus.code == OutcomeCode::Unbounded {
        if !(omega_global && lambda_global) {
            details.push("Ω or Λ is bounded; unboundedness refers to the explicit budgets".into());
        }
        ("(c): two unbounded disjoint sets".to_string(), vec!["c".into()])
    } else {
        ("inconclusive: a budget ran out before any alternative showed".to_string(), vec![])
    };
    Classification { label, alternatives, details, note: EVIDENCE_NOTE.into() }
}

#[derive(Debug, Clone)]
pub struct BranchPair {
    pub plus: Option<Branch>,
    pub minus: Option<Branch>,
    pub classification: Option<Classification>,
}

/// Traces the requested directions, concurrently when `threads > 1`.
pub fn continue_both(model: &ParametricModel, directions: &[Direction], settings: &ContinuationSettings, threads: usize) -> Result<BranchPair> {
    let run = |d: Direction| continue_branch(model, d, settings);
    let results: Vec<(Direction, Result<Branch>)> = if threads > 1 && directions.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = directions.iter().map(|&d| (d, scope.spawn(move || run(d)))).collect();
            handles.into_iter().map(|(d, h)| (d, h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("continuation thread panicked".into()))))).collect()
        })
    } else {
        directions.iter().map(|&d| (d, run(d))).collect()
    };
    let mut pair = BranchPair { plus: None, minus: None, classification: None };
    for (d, r) in results {
        match d {
            Direction::Plus => pair.plus = Some(r?),
            Direction::Minus => pair.minus = Some(r?),
        }
    }
    if let (Some(p), Some(m)) = (&pair.plus, &pair.minus) {
        let (lo, hi) = model.lambda_interval;
        pair.classification = Some(classify(&p.outcome, &m.outcome, model.omega.is_whole_space(), lo == f64::NEG_INFINITY && hi == f64::INFINITY));
    }
    Ok(pair)
}

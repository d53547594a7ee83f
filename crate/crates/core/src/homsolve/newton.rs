use serde::{Deserialize, Serialize};

use super::{boundary_conditions, check_domain, BcMode, BoundaryConditions, ParametricModel};
use crate::error::{invalid, Error, Result};
use crate::linalg::{max_norm, BandedSystem, SolveFailure};
use crate::seqspace::{TruncatedSequence, Window};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewtonSettings {
    pub residual_tol: f64,
    pub max_iterations: usize,
    /// Window growth factor (> 1) applied when tails or residual stay too large.
    pub window_growth_factor: f64,
    pub tail_tol: f64,
    /// Step halving on non-decreasing residuals.
    pub damping: bool,
    pub max_halvings: usize,
    pub bc: BcMode,
    pub max_window_growths: usize,
    pub max_half_width: i64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            residual_tol: 1e-10,
            max_iterations: 30,
            window_growth_factor: 1.5,
            tail_tol: 1e-10,
            damping: true,
            max_halvings: 8,
            bc: BcMode::Zero,
            max_window_growths: 8,
            max_half_width: 5000,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) || !(self.tail_tol > 0.0) {
            return invalid("tolerances must be positive");
        }
        if !(self.window_growth_factor > 1.0) {
            return invalid("window growth factor must exceed 1");
        }
        if self.max_iterations == 0 {
            return invalid("max_iterations must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NewtonDiagnostics {
    pub converged: bool,
    /// Iterations on the final window.
    pub iterations: usize,
    pub total_iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub window: [i64; 2],
    pub tails: [f64; 2],
    pub window_growths: usize,
    pub bc_mode: Option<BcMode>,
    pub warnings: Vec<String>,
}

/// Residual of the full bordered system: left conditions, dynamics, right conditions.
pub(crate) fn full_residual(model: &ParametricModel, phi: &TruncatedSequence, lambda: f64, bc: &BoundaryConditions) -> Result<Vec<f64>> {
    check_domain(model, phi)?;
    let w = phi.window();
    let d = model.dim();
    let mut out = Vec::with_capacity(bc.count() + (w.len() - 1) * d);
    let left = &bc.left * nalgebra::DVector::from_column_slice(phi.at(w.t_minus()));
    out.extend(left.iter());
    for t in w.t_minus()..w.t_plus() {
        let f = model.rhs.eval(t, phi.at(t), lambda);
        out.extend(phi.at(t + 1).iter().zip(f.iter()).map(|(a, b)| a - b));
    }
    let right = &bc.right * nalgebra::DVector::from_column_slice(phi.at(w.t_plus()));
    out.extend(right.iter());
    Ok(out)
}

/// Linearized system `J δ = -F`, optionally with the `-D_2 f` column for λ.
pub(crate) fn assemble(
    model: &ParametricModel,
    phi: &TruncatedSequence,
    lambda: f64,
    bc: &BoundaryConditions,
    lambda_column: bool,
) -> Result<(BandedSystem, Vec<f64>)> {
    let res = full_residual(model, phi, lambda, bc)?;
    let w = phi.window();
    let d = model.dim();
    let n = w.len() * d;
    let nextra = usize::from(lambda_column);
    let mut sys = BandedSystem::new(n, nextra);
    let zero_extra = vec![0.0; nextra];
    let mut k = 0;
    for r in 0..bc.left.nrows() {
        let row: Vec<f64> = bc.left.row(r).iter().cloned().collect();
        sys.push_row(0, &row, &zero_extra, -res[k]);
        k += 1;
    }
    let mut vals = vec![0.0; 2 * d];
    for (i, t) in (w.t_minus()..w.t_plus()).enumerate() {
        let jac = model.rhs.jacobian(t, phi.at(t), lambda);
        let dl = if lambda_column { Some(model.rhs.param_derivative(t, phi.at(t), lambda)) } else { None };
        for r in 0..d {
            for c in 0..d {
                vals[c] = -jac[(r, c)];
                vals[d + c] = if c == r { 1.0 } else { 0.0 };
            }
            let extra: Vec<f64> = dl.as_ref().map(|v| vec![-v[r]]).unwrap_or_default();
            sys.push_row(i * d, &vals, &extra, -res[k]);
            k += 1;
        }
    }
    for r in 0..bc.right.nrows() {
        let row: Vec<f64> = bc.right.row(r).iter().cloned().collect();
        sys.push_row(n - d, &row, &zero_extra, -res[k]);
        k += 1;
    }
    Ok((sys, res))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn in_domain(model: &ParametricModel, phi: &TruncatedSequence) -> bool {
    phi.window().iter().all(|t| model.omega.contains(phi.at(t)))
}

struct Pass {
    converged: bool,
    iterations: usize,
    residual: f64,
}

fn newton_pass(
    model: &ParametricModel,
    phi: &mut TruncatedSequence,
    lambda: f64,
    bc: &BoundaryConditions,
    s: &NewtonSettings,
    history: &mut Vec<f64>,
) -> Result<Pass> {
    let mut residual = f64::INFINITY;
    for iter in 0..=s.max_iterations {
        let (sys, res) = assemble(model, phi, lambda, bc, false)?;
        residual = max_norm(&res);
        history.push(residual);
        if residual <= s.residual_tol {
            return Ok(Pass { converged: true, iterations: iter, residual });
        }
        if iter == s.max_iterations {
            break;
        }
        let step = match sys.solve(&[]) {
            Ok(sol) => sol.x,
            Err(SolveFailure::Singular) => return Err(Error::NonHyperbolic),
            Err(SolveFailure::Underdetermined) => return invalid("boundary conditions leave the system underdetermined"),
        };
        let base = l2(&res);
        let mut tau = 1.0;
        let mut accepted = None;
        for _ in 0..=s.max_halvings {
            let mut cand = phi.clone();
            for (x, dx) in cand.as_flat_mut().iter_mut().zip(&step) {
                *x += tau * dx;
            }
            if in_domain(model, &cand) {
                if !s.damping {
                    accepted = Some(cand);
                    break;
                }
                let r = full_residual(model, &cand, lambda, bc)?;
                if l2(&r) < base {
                    accepted = Some(cand);
                    break;
                }
            }
            tau *= 0.5;
        }
        match accepted {
            Some(c) => {
                let moved = tau * max_norm(&step);
                *phi = c;
                if moved <= 1e-15 * (1.0 + phi.sup_norm()) {
                    return Ok(Pass { converged: false, iterations: iter + 1, residual });
                }
            }
            // least-squares floor or a genuine stall; the caller decides
            None => return Ok(Pass { converged: false, iterations: iter + 1, residual }),
        }
    }
    Ok(Pass { converged: false, iterations: s.max_iterations, residual })
}

/// Extends the window by `factor` on the requested sides (at least one point).
pub(crate) fn grow_window(w: Window, factor: f64, left: bool, right: bool) -> Window {
    let ext = ((w.len() as f64 * (factor - 1.0) / 2.0).ceil() as i64).max(1);
    let lo = if left { w.t_minus() - ext } else { w.t_minus() };
    let hi = if right { w.t_plus() + ext } else { w.t_plus() };
    Window::new(lo, hi).expect("grown window is valid")
}

/// Newton's method for `G(φ, λ) = 0` with boundary conditions, step halving
/// and adaptive window growth.
pub fn newton_solve(
    model: &ParametricModel,
    initial: &TruncatedSequence,
    lambda: f64,
    settings: &NewtonSettings,
) -> Result<(TruncatedSequence, NewtonDiagnostics)> {
    settings.validate()?;
    model.check_lambda(lambda)?;
    check_domain(model, initial)?;
    let mut phi = initial.clone();
    let mut diag = NewtonDiagnostics::default();
    loop {
        let bc = boundary_conditions(model, &phi, lambda, settings.bc)?;
        if let Some(w) = &bc.warning {
            if !diag.warnings.contains(w) {
                diag.warnings.push(w.clone());
            }
        }
        diag.bc_mode = Some(bc.mode);
        let pass = newton_pass(model, &mut phi, lambda, &bc, settings, &mut diag.residual_history)?;
        diag.iterations = pass.iterations;
        diag.total_iterations += pass.iterations;
        diag.residual = pass.residual;
        let (tl, tr) = phi.tails(2);
        let w = phi.window();
        diag.window = [w.t_minus(), w.t_plus()];
        diag.tails = [tl, tr];
        let tails_ok = tl <= settings.tail_tol && tr <= settings.tail_tol;
        if pass.converged && tails_ok {
            diag.converged = true;
            return Ok((phi, diag));
        }
        let (grow_l, grow_r) = if pass.converged { (tl > settings.tail_tol, tr > settings.tail_tol) } else { (true, true) };
        let next = grow_window(w, settings.window_growth_factor, grow_l, grow_r);
        let can_grow = diag.window_growths < settings.max_window_growths
            && next.t_plus() <= settings.max_half_width
            && -next.t_minus() <= settings.max_half_width;
        if !can_grow {
            if pass.converged {
                diag.converged = true;
                diag.warnings.push(format!("tails ({tl:.3e}, {tr:.3e}) exceed tail_tol at the maximal window"));
                return Ok((phi, diag));
            }
            return Err(Error::NonConvergence {
                iterations: diag.total_iterations,
                final_residual: pass.residual,
                history: diag.residual_history,
            });
        }
        phi = phi.on_window(next);
        diag.window_growths += 1;
    }
}

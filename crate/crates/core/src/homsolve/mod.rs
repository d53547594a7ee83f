//! Homoclinic solutions as zeros of `G(φ, λ) = Sφ - F(φ, λ)` on truncated
//! windows: residuals, Jacobians, boundary conditions and Newton's method.

mod model;
mod newton;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{projector_range, stable_projector};
use crate::lindich::{
    detect_ed, fredholm_index, spectrum, Axis, DichotomyReport, EdOptions, LinearSystem, PeriodicTable, SpectrumOptions,
    SpectrumReport,
};
use crate::seqspace::{TruncatedSequence, Window};

pub use model::{DomainBox, LimitFactory, ParametricModel, Reference, RightHandSide};
pub use newton::{newton_solve, NewtonDiagnostics, NewtonSettings};
pub(crate) use newton::{assemble, full_residual, grow_window};

fn check_domain(model: &ParametricModel, phi: &TruncatedSequence) -> Result<()> {
    if phi.dim() != model.dim() {
        return invalid(format!("sequence has dimension {}, model has {}", phi.dim(), model.dim()));
    }
    for t in phi.window().iter() {
        if !model.omega.contains(phi.at(t)) {
            return Err(Error::DomainViolation { t });
        }
    }
    Ok(())
}

/// `r_t = φ_{t+1} - f_t(φ_t, λ)` for `t ∈ [t⁻, t⁺ - 1]`.
pub fn residual(model: &ParametricModel, phi: &TruncatedSequence, lambda: f64) -> Result<TruncatedSequence> {
    check_domain(model, phi)?;
    let w = phi.window();
    let out_w = Window::new(w.t_minus(), w.t_plus() - 1)?;
    let mut out = TruncatedSequence::zeros(out_w, model.dim());
    for t in out_w.iter() {
        let v = DVector::from_column_slice(phi.at(t + 1)) - model.rhs.eval(t, phi.at(t), lambda);
        out.set(t, v.as_slice());
    }
    Ok(out)
}

/// `(Jψ)_t = ψ_{t+1} - D_1 f_t(φ_t, λ) ψ_t`, stored by its diagonal blocks.
#[derive(Debug, Clone)]
pub struct BlockBidiagonal {
    window: Window,
    dim: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl BlockBidiagonal {
    pub fn window(&self) -> Window {
        self.window
    }

    /// `D_1 f_t` for `t ∈ [t⁻, t⁺ - 1]`.
    pub fn block(&self, t: i64) -> &DMatrix<f64> {
        &self.blocks[(t - self.window.t_minus()) as usize]
    }

    pub fn apply(&self, psi: &TruncatedSequence) -> Result<TruncatedSequence> {
        if psi.window() != self.window || psi.dim() != self.dim {
            return invalid("direction lives on a different window or dimension");
        }
        let out_w = Window::new(self.window.t_minus(), self.window.t_plus() - 1)?;
        let mut out = TruncatedSequence::zeros(out_w, self.dim);
        for t in out_w.iter() {
            let v = DVector::from_column_slice(psi.at(t + 1)) - self.block(t) * DVector::from_column_slice(psi.at(t));
            out.set(t, v.as_slice());
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim;
        let n = self.window.len();
        let mut m = DMatrix::zeros((n - 1) * d, n * d);
        for (i, b) in self.blocks.iter().enumerate() {
            for r in 0..d {
                for c in 0..d {
                    m[(i * d + r, i * d + c)] = -b[(r, c)];
                }
                m[(i * d + r, (i + 1) * d + r)] = 1.0;
            }
        }
        m
    }
}

pub fn jacobian(model: &ParametricModel, phi: &TruncatedSequence, lambda: f64) -> Result<BlockBidiagonal> {
    check_domain(model, phi)?;
    let w = phi.window();
    let blocks = (w.t_minus()..w.t_plus()).map(|t| model.rhs.jacobian(t, phi.at(t), lambda)).collect();
    Ok(BlockBidiagonal { window: w, dim: model.dim(), blocks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcMode {
    Zero,
    Projected,
}

impl std::str::FromStr for BcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(BcMode::Zero),
            "projected" => Ok(BcMode::Projected),
            _ => invalid(format!("unknown boundary condition `{s}` (expected zero or projected)")),
        }
    }
}

/// Constraint rows `left · φ_{t⁻} = 0` and `right · φ_{t⁺} = 0`.
#[derive(Debug, Clone)]
pub struct BoundaryConditions {
    pub mode: BcMode,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub warning: Option<String>,
}

impl BoundaryConditions {
    pub fn zero(dim: usize) -> Self {
        Self { mode: BcMode::Zero, left: DMatrix::identity(dim, dim), right: DMatrix::identity(dim, dim), warning: None }
    }

    pub fn count(&self) -> usize {
        self.left.nrows() + self.right.nrows()
    }
}

fn limit_table(sys: &crate::admiss::LimitSystem) -> Result<PeriodicTable> {
    let zero = vec![0.0; sys.dim];
    PeriodicTable::new((0..sys.period as i64).map(|k| (sys.jacobian)(k, &zero)).collect())
}

fn hyperbolic_projector(m: &DMatrix<f64>, period: usize) -> Option<DMatrix<f64>> {
    let rates: Vec<f64> = crate::linalg::eigenvalues(m).iter().map(|z| z.norm().powf(1.0 / period as f64)).collect();
    if rates.iter().any(|r| (r - 1.0).abs() <= 1e-8) {
        return None;
    }
    stable_projector(m)
}

/// Projectors `P⁻` at `t⁻` and `P⁺` at `t⁺` from the limit linearizations,
/// or from frozen coefficients when the model has no limits.
fn end_projectors(model: &ParametricModel, phi: &TruncatedSequence, lambda: f64) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let w = phi.window();
    match model.limit_systems(lambda) {
        Some((minus, plus)) => {
            let tm = limit_table(&minus).ok()?;
            let tp = limit_table(&plus).ok()?;
            let pm = hyperbolic_projector(&tm.period_matrix(w.t_minus()), tm.period())?;
            let pp = hyperbolic_projector(&tp.period_matrix(w.t_plus()), tp.period())?;
            Some((pm, pp))
        }
        None => {
            let am = model.rhs.jacobian(w.t_minus(), phi.at(w.t_minus()), lambda);
            let ap = model.rhs.jacobian(w.t_plus(), phi.at(w.t_plus()), lambda);
            Some((hyperbolic_projector(&am, 1)?, hyperbolic_projector(&ap, 1)?))
        }
    }
}

/// Zero mode pins both ends (`2d` rows). Projected mode imposes `P⁻φ_{t⁻} = 0`
/// and `(I - P⁺)φ_{t⁺} = 0`, falling back to zero mode when the end
/// linearizations are not hyperbolic.
pub fn boundary_conditions(model: &ParametricModel, phi: &TruncatedSequence, lambda: f64, mode: BcMode) -> Result<BoundaryConditions> {
    let d = model.dim();
    if phi.dim() != d {
        return invalid("dimension mismatch between sequence and model");
    }
    if mode == BcMode::Zero {
        return Ok(BoundaryConditions::zero(d));
    }
    match end_projectors(model, phi, lambda) {
        Some((pm, pp)) => {
            let id = DMatrix::identity(d, d);
            let left = projector_range(&pm.transpose()).transpose();
            let right = projector_range(&(id - pp).transpose()).transpose();
            Ok(BoundaryConditions { mode: BcMode::Projected, left, right, warning: None })
        }
        None => {
            let msg = "end linearization is not hyperbolic; using zero boundary conditions".to_string();
            log::warn!("{msg}");
            Ok(BoundaryConditions { warning: Some(msg), ..BoundaryConditions::zero(d) })
        }
    }
}

/// Variational equation `x_{t+1} = D_1 f_t(φ_t, λ) x_t` with φ zero-extended.
pub fn variational_system(model: &ParametricModel, phi: &TruncatedSequence, lambda: f64) -> Result<LinearSystem> {
    let rhs = model.rhs.clone();
    let phi = Arc::new(phi.clone());
    let coeff = move |t: i64| rhs.jacobian(t, phi.at(t), lambda);
    match model.limit_systems(lambda) {
        Some((minus, plus)) => {
            let tm = limit_table(&minus)?;
            let tp = limit_table(&plus)?;
            let m: Vec<DMatrix<f64>> = (0..tm.period() as i64).map(|k| tm.at(k).clone()).collect();
            let p: Vec<DMatrix<f64>> = (0..tp.period() as i64).map(|k| tp.at(k).clone()).collect();
            LinearSystem::asymptotically_periodic(coeff, m, p)
        }
        None => LinearSystem::general(model.dim(), coeff),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperbolicityReport {
    /// Exponential dichotomy on Z, i.e. `1 ∉ Σ(A)`.
    pub hyperbolic: bool,
    pub half_axes_hyperbolic: bool,
    pub index: Option<i64>,
    pub whole_axis: DichotomyReport,
    pub plus: DichotomyReport,
    pub minus: DichotomyReport,
    pub spectrum: Option<SpectrumReport>,
}

pub fn hyperbolicity_report(
    model: &ParametricModel,
    phi: &TruncatedSequence,
    lambda: f64,
    window: Window,
    with_spectrum: bool,
) -> Result<HyperbolicityReport> {
    let sys = variational_system(model, phi, lambda)?;
    let opts = EdOptions::default();
    let whole_axis = detect_ed(&sys, Axis::Z, window, &opts)?;
    let plus = detect_ed(&sys, Axis::ZPlus, window, &opts)?;
    let minus = detect_ed(&sys, Axis::ZMinus, window, &opts)?;
    let index = fredholm_index(&sys, window, &opts).ok().map(|r| r.index);
    let spectrum = if with_spectrum { Some(spectrum(&sys, Axis::Z, window, &SpectrumOptions::default())?) } else { None };
    Ok(HyperbolicityReport {
        hyperbolic: whole_axis.has_ed,
        half_axes_hyperbolic: plus.has_ed && minus.has_ed && plus.rank == minus.rank,
        index,
        whole_axis,
        plus,
        minus,
        spectrum,
    })
}

/// Cheap check of `1 ∉ Σ(D_1 f(φ, λ))` on Z.
pub fn is_hyperbolic(model: &ParametricModel, phi: &TruncatedSequence, lambda: f64) -> Result<bool> {
    let sys = variational_system(model, phi, lambda)?;
    let w = phi.window();
    let half = w.t_plus().min(-w.t_minus()).max(2 * sys.max_period() as i64).max(2);
    let window = Window::new(w.t_minus().min(-half), w.t_plus().max(half))?;
    Ok(crate::lindich::dichotomy_probe(&sys, Axis::Z, window, &EdOptions::default())?.has_ed)
}

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{evolution, Axis, LinearSystem, PeriodicTable, Structure};
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    identity, inverse_condition, left_pseudo_solve, op_norm, orth_complement, orthonormalize, projector,
    projector_range, serialize_opt_matrix, stable_projector,
};
use crate::seqspace::Window;

/// Bundles closer than this (inverse condition of `[R | N]`) count as intersecting.
const TRANSVERSAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdOptions {
    /// Minimal distance of growth rates from 1.
    pub tol: f64,
    /// Seed for generic start subspaces of unstructured systems.
    pub seed: u64,
}

impl Default for EdOptions {
    fn default() -> Self {
        Self { tol: 1e-8, seed: 0 }
    }
}

/// Invariant projectors `P_t` along a window together with bases of `N(P_t)`.
#[derive(Debug, Clone)]
pub struct ProjectorField {
    window: Window,
    proj: Vec<DMatrix<f64>>,
    unstable: Vec<DMatrix<f64>>,
}

impl ProjectorField {
    pub fn window(&self) -> Window {
        self.window
    }

    pub fn projector(&self, t: i64) -> Option<&DMatrix<f64>> {
        self.window.index_of(t).map(|i| &self.proj[i])
    }

    pub fn unstable_basis(&self, t: i64) -> Option<&DMatrix<f64>> {
        self.window.index_of(t).map(|i| &self.unstable[i])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DichotomyReport {
    pub axis: Axis,
    pub has_ed: bool,
    /// Rank of the projector (dimension of the stable bundle).
    pub rank: usize,
    #[serde(serialize_with = "serialize_opt_matrix")]
    pub projector_at_zero: Option<DMatrix<f64>>,
    /// Dichotomy constant `K >= 1`.
    pub constant: Option<f64>,
    /// Dichotomy rate `α ∈ (0, 1)`.
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Set for unstructured systems where detection relies on finite-window heuristics.
    pub heuristic: bool,
    #[serde(skip)]
    pub field: Option<ProjectorField>,
}

impl DichotomyReport {
    fn failed(axis: Axis, reason: String, heuristic: bool) -> Self {
        Self {
            axis,
            has_ed: false,
            rank: 0,
            projector_at_zero: None,
            constant: None,
            rate: None,
            reason: Some(reason),
            heuristic,
            field: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexReport {
    pub index: i64,
    pub rank_plus: usize,
    pub rank_minus: usize,
    pub heuristic: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Minus,
    Plus,
}

struct SideData {
    rank: usize,
    /// Plus: annihilator of the stable bundle at the right end.
    /// Minus: basis of the unstable bundle at the left end.
    start: DMatrix<f64>,
    /// Plus: unstable spectral subspace of the limit at phase 0.
    /// Minus: stable spectral subspace of the limit at phase 0.
    at_zero: Option<DMatrix<f64>>,
}

fn floquet_side(table: &PeriodicTable, side: Side, t_start: i64, tol: f64) -> std::result::Result<SideData, String> {
    let rates = table.floquet_rates();
    if let Some(r) = rates.iter().find(|r| (*r - 1.0).abs() <= tol) {
        return Err(format!("Floquet rate {r} lies within the gap tolerance of 1"));
    }
    let counted = rates.iter().filter(|r| **r < 1.0).count();
    let d = table.dim();
    let proj = |phase: i64| {
        stable_projector(&table.period_matrix(phase)).ok_or_else(|| "spectral projector of the period matrix failed".to_string())
    };
    let p_start = proj(t_start)?;
    let p0 = proj(0)?;
    let rank = p0.trace().round() as usize;
    if rank != counted {
        return Err(format!("spectral projector rank {rank} disagrees with Floquet count {counted}"));
    }
    let id = identity(d);
    Ok(match side {
        Side::Plus => SideData {
            rank,
            start: orthonormalize(&projector_range(&(&id - &p_start).transpose())),
            at_zero: Some(projector_range(&(&id - &p0))),
        },
        Side::Minus => SideData {
            rank,
            start: projector_range(&(&id - &p_start)),
            at_zero: Some(projector_range(&p0)),
        },
    })
}

/// Stable dimension from singular values of `Φ(s+h, s)` over a window.
fn split_rank(sys: &LinearSystem, w: Window, tol: f64) -> std::result::Result<usize, String> {
    let d = sys.dim();
    let n = (w.len() - 1) as i64;
    let h = (n / 3).max(1);
    let stride = ((n - h) / 16).max(1);
    let margin = tol.max(1e-4);
    let mut rank = None;
    let mut worst_stable = 0.0f64;
    let mut worst_unstable = f64::INFINITY;
    let mut s = w.t_minus();
    while s + h <= w.t_plus() {
        let phi = evolution(sys, s + h, s).map_err(|e| e.to_string())?;
        let mut sv: Vec<f64> = phi.singular_values().iter().map(|x| x.powf(1.0 / h as f64)).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let k = sv.iter().filter(|r| **r < 1.0).count();
        if rank.is_some_and(|r| r != k) {
            return Err("splitting dimension varies along the window".into());
        }
        rank = Some(k);
        if k > 0 {
            worst_stable = worst_stable.max(sv[d - k]);
        }
        if k < d {
            worst_unstable = worst_unstable.min(sv[d - k - 1]);
        }
        s += stride;
    }
    if worst_stable > 1.0 - margin || worst_unstable < 1.0 + margin {
        return Err(format!("growth rates too close to 1 ({worst_stable:.6}, {worst_unstable:.6})"));
    }
    rank.ok_or_else(|| "window too short".into())
}

fn general_side(sys: &LinearSystem, half: Option<Window>, tol: f64, rng: &mut ChaCha8Rng) -> std::result::Result<SideData, String> {
    let half = half.ok_or_else(|| "half window has fewer than 3 points".to_string())?;
    let k = split_rank(sys, half, tol)?;
    let d = sys.dim();
    let generic = DMatrix::from_fn(d, d - k, |_, _| rng.gen_range(-1.0..1.0));
    Ok(SideData { rank: k, start: orthonormalize(&generic), at_zero: None })
}

fn side_data(sys: &LinearSystem, side: Side, sub: Window, opts: &EdOptions, rng: &mut ChaCha8Rng) -> std::result::Result<SideData, String> {
    match (sys.structure(), side) {
        (Structure::General, Side::Plus) => general_side(sys, sub.clip(0, i64::MAX), opts.tol, rng),
        (Structure::General, Side::Minus) => general_side(sys, sub.clip(i64::MIN, 0), opts.tol, rng),
        (_, Side::Plus) => floquet_side(sys.limit_plus().expect("limit table"), side, sub.t_plus(), opts.tol),
        (_, Side::Minus) => floquet_side(sys.limit_minus().expect("limit table"), side, sub.t_minus(), opts.tol),
    }
}

fn transversal(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let d = a.nrows();
    if a.ncols() + b.ncols() != d {
        return false;
    }
    let mut m = DMatrix::zeros(d, d);
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    inverse_condition(&m) > TRANSVERSAL_TOL
}

/// Annihilators of the stable bundle, propagated backwards by `Aᵀ`.
fn backward(sys: &LinearSystem, ann: &mut [DMatrix<f64>], sub: Window, from: i64, start: DMatrix<f64>) {
    let i0 = (from - sub.t_minus()) as usize;
    ann[i0] = start;
    for t in (sub.t_minus()..from).rev() {
        let i = (t - sub.t_minus()) as usize;
        ann[i] = orthonormalize(&(sys.coeff(t).transpose() * &ann[i + 1]));
    }
}

/// Bases of the unstable bundle, propagated forwards by `A`.
fn forward(sys: &LinearSystem, unst: &mut [DMatrix<f64>], sub: Window, from: i64, start: DMatrix<f64>) {
    let i0 = (from - sub.t_minus()) as usize;
    unst[i0] = start;
    for t in from..sub.t_plus() {
        let i = (t - sub.t_minus()) as usize;
        unst[i + 1] = orthonormalize(&(sys.coeff(t) * &unst[i]));
    }
}

/// Fits `K`, `α` to sampled norms of `Φ(t,s)P_s` and `Φ(s,t)(I - P_t)`.
fn fit_constants(sys: &LinearSystem, field: &ProjectorField) -> (f64, f64) {
    let w = field.window;
    let n = w.len() as i64;
    let d = sys.dim();
    let id = identity(d);
    let h_min = ((n - 1) / 4).max(1);
    let nbase = 24.min(n);
    let mut samples = Vec::new();
    for b in 0..nbase {
        let s = w.t_minus() + b * (n - 1) / nbase.max(1);
        let i_s = (s - w.t_minus()) as usize;
        let ps = &field.proj[i_s];
        let us = &field.unstable[i_s];
        let mut phi = identity(d);
        // re-projecting each step keeps rounding errors out of the unstable bundle
        let mut phi_ps = ps.clone();
        for t in s..=w.t_plus() {
            let i_t = (t - w.t_minus()) as usize;
            if t > s {
                phi = sys.coeff(t - 1) * phi;
                phi_ps = &field.proj[i_t] * (sys.coeff(t - 1) * phi_ps);
            }
            let stable = op_norm(&phi_ps);
            let unstable = if us.ncols() == 0 {
                0.0
            } else {
                let q = &id - &field.proj[i_t];
                match left_pseudo_solve(&(&phi * us), &q) {
                    Some(x) => op_norm(&(us * x)),
                    None => f64::INFINITY,
                }
            };
            samples.push((t - s, stable.max(unstable)));
        }
    }
    let mut alpha = 0.0f64;
    for &(h, r) in &samples {
        if h >= h_min && r > 0.0 {
            alpha = alpha.max(r.powf(1.0 / h as f64));
        }
    }
    let alpha = alpha.max(1e-8);
    let mut k = 1.0f64;
    for &(h, r) in &samples {
        if r > 0.0 {
            k = k.max((r.ln() - h as f64 * alpha.ln()).exp());
        }
    }
    (k, alpha)
}

pub(crate) fn analyze(sys: &LinearSystem, axis: Axis, window: Window, opts: &EdOptions, fit: bool) -> Result<DichotomyReport> {
    let p = sys.max_period();
    if window.len() < 3.max(2 * p) {
        return invalid(format!("window of {} points is shorter than max(3, 2p) = {}", window.len(), 3.max(2 * p)));
    }
    if !window.contains(0) {
        return invalid("window must contain t = 0");
    }
    let sub = match axis {
        Axis::Z => Some(window),
        Axis::ZPlus => window.clip(0, i64::MAX),
        Axis::ZMinus => window.clip(i64::MIN, 0),
    };
    let Some(sub) = sub else {
        return invalid(format!("the {axis} part of the window has fewer than 3 points"));
    };
    let heuristic = sys.structure() == Structure::General;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let right = if axis != Axis::ZMinus {
        match side_data(sys, Side::Plus, sub, opts, &mut rng) {
            Ok(v) => Some(v),
            Err(reason) => return Ok(DichotomyReport::failed(axis, reason, heuristic)),
        }
    } else {
        None
    };
    let left = if axis != Axis::ZPlus {
        match side_data(sys, Side::Minus, sub, opts, &mut rng) {
            Ok(v) => Some(v),
            Err(reason) => return Ok(DichotomyReport::failed(axis, reason, heuristic)),
        }
    } else {
        None
    };
    let d = sys.dim();
    let n = sub.len();
    let mut ann = vec![DMatrix::zeros(d, 0); n];
    let mut unst = vec![DMatrix::zeros(d, 0); n];
    let i0 = (0 - sub.t_minus()) as usize;
    let rank;
    match axis {
        Axis::Z => {
            let (r, l) = (right.unwrap(), left.unwrap());
            if r.rank != l.rank {
                return Ok(DichotomyReport::failed(
                    axis,
                    format!("stable dimensions differ on the half-axes (Z_plus: {}, Z_minus: {})", r.rank, l.rank),
                    heuristic,
                ));
            }
            rank = r.rank;
            backward(sys, &mut ann, sub, sub.t_plus(), r.start);
            forward(sys, &mut unst, sub, sub.t_minus(), l.start);
        }
        Axis::ZPlus => {
            let r = right.unwrap();
            rank = r.rank;
            backward(sys, &mut ann, sub, sub.t_plus(), r.start);
            let r0 = orth_complement(&ann[i0]);
            let n0 = match r.at_zero {
                Some(u) if transversal(&r0, &u) => u,
                _ => orth_complement(&r0),
            };
            forward(sys, &mut unst, sub, 0, n0);
        }
        Axis::ZMinus => {
            let l = left.unwrap();
            rank = l.rank;
            forward(sys, &mut unst, sub, sub.t_minus(), l.start);
            let n0 = unst[i0].clone();
            let r0 = match l.at_zero {
                Some(s) if transversal(&s, &n0) => s,
                _ => orth_complement(&n0),
            };
            backward(sys, &mut ann, sub, 0, orth_complement(&r0));
        }
    }
    let mut proj = Vec::with_capacity(n);
    for (i, t) in sub.iter().enumerate() {
        let r_t = orth_complement(&ann[i]);
        match projector(&r_t, &unst[i], TRANSVERSAL_TOL) {
            Some(p) => proj.push(p),
            None => {
                return Ok(DichotomyReport::failed(
                    axis,
                    format!("stable and unstable bundles are not transversal at t = {t}"),
                    heuristic,
                ))
            }
        }
    }
    let field = ProjectorField { window: sub, proj, unstable: unst };
    let (constant, rate) = if fit {
        let (k, alpha) = fit_constants(sys, &field);
        if alpha >= 1.0 - opts.tol {
            return Ok(DichotomyReport::failed(axis, format!("fitted rate {alpha} is not below 1"), heuristic));
        }
        (Some(k), Some(alpha))
    } else {
        (None, None)
    };
    Ok(DichotomyReport {
        axis,
        has_ed: true,
        rank,
        projector_at_zero: Some(field.proj[i0].clone()),
        constant,
        rate,
        reason: None,
        heuristic,
        field: Some(field),
    })
}

/// Decides whether the system has an exponential dichotomy on `axis`,
/// using coefficients on `window` (which must contain 0).
pub fn detect_ed(sys: &LinearSystem, axis: Axis, window: Window, opts: &EdOptions) -> Result<DichotomyReport> {
    analyze(sys, axis, window, opts, true)
}

/// Dichotomy test without fitting `K` and `α`.
pub fn dichotomy_probe(sys: &LinearSystem, axis: Axis, window: Window, opts: &EdOptions) -> Result<DichotomyReport> {
    analyze(sys, axis, window, opts, false)
}

/// `ind L_A = rk P⁺_0 - rk P⁻_0`, defined when both half-axis dichotomies exist.
pub fn fredholm_index(sys: &LinearSystem, window: Window, opts: &EdOptions) -> Result<IndexReport> {
    let plus = analyze(sys, Axis::ZPlus, window, opts, false)?;
    if !plus.has_ed {
        return Err(Error::NotFredholmCheckable { half_axis: Axis::ZPlus, reason: plus.reason.unwrap_or_default() });
    }
    let minus = analyze(sys, Axis::ZMinus, window, opts, false)?;
    if !minus.has_ed {
        return Err(Error::NotFredholmCheckable { half_axis: Axis::ZMinus, reason: minus.reason.unwrap_or_default() });
    }
    Ok(IndexReport {
        index: plus.rank as i64 - minus.rank as i64,
        rank_plus: plus.rank,
        rank_minus: minus.rank,
        heuristic: plus.heuristic || minus.heuristic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindich::evolution;

    fn diag(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
    }

    fn scalar(a: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, a)
    }

    fn w(h: i64) -> Window {
        Window::symmetric(h).unwrap()
    }

    #[test]
    fn hyperbolic_diagonal_has_unit_constant() {
        let sys = LinearSystem::autonomous(diag(0.5, 2.0)).unwrap();
        let r = detect_ed(&sys, Axis::Z, w(30), &EdOptions::default()).unwrap();
        assert!(r.has_ed);
        assert_eq!(r.rank, 1);
        let p = r.projector_at_zero.unwrap();
        assert!((p - diag(1.0, 0.0)).amax() < 1e-12);
        assert!((r.constant.unwrap() - 1.0).abs() < 1e-9);
        assert!((r.rate.unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rotation_is_marginal() {
        let sys = LinearSystem::autonomous(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
        let r = detect_ed(&sys, Axis::Z, w(20), &EdOptions::default()).unwrap();
        assert!(!r.has_ed);
        assert!(r.reason.unwrap().contains("gap tolerance"));
    }

    #[test]
    fn short_window_for_period_is_rejected() {
        let sys = LinearSystem::periodic(vec![scalar(0.5); 4]).unwrap();
        assert!(detect_ed(&sys, Axis::Z, Window::new(-3, 3).unwrap(), &EdOptions::default()).is_err());
    }

    #[test]
    fn switching_scalar_has_no_dichotomy_on_z_but_on_half_axes() {
        let sys = LinearSystem::piecewise(vec![scalar(0.5)], vec![scalar(2.0)]).unwrap();
        let opts = EdOptions::default();
        assert!(!detect_ed(&sys, Axis::Z, w(20), &opts).unwrap().has_ed);
        assert!(detect_ed(&sys, Axis::ZPlus, w(20), &opts).unwrap().has_ed);
        assert!(detect_ed(&sys, Axis::ZMinus, w(20), &opts).unwrap().has_ed);
        assert_eq!(fredholm_index(&sys, w(20), &opts).unwrap().index, -1);
        let rev = LinearSystem::piecewise(vec![scalar(2.0)], vec![scalar(0.5)]).unwrap();
        assert_eq!(fredholm_index(&rev, w(20), &opts).unwrap().index, 1);
    }

    #[test]
    fn index_error_names_the_half_axis() {
        let sys = LinearSystem::piecewise(vec![scalar(0.5)], vec![scalar(1.0)]).unwrap();
        match fredholm_index(&sys, w(20), &EdOptions::default()) {
            Err(Error::NotFredholmCheckable { half_axis, .. }) => assert_eq!(half_axis, Axis::ZPlus),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn projectors_are_invariant_and_satisfy_the_estimates() {
        let a_minus = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.3, 0.5]);
        let a_plus = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.7, 2.0]);
        let sys = LinearSystem::piecewise(vec![a_minus], vec![a_plus]).unwrap();
        let r = detect_ed(&sys, Axis::Z, w(25), &EdOptions::default()).unwrap();
        assert!(r.has_ed, "{:?}", r.reason);
        let f = r.field.as_ref().unwrap();
        let (k, alpha) = (r.constant.unwrap(), r.rate.unwrap());
        for t in -24..24 {
            let p = f.projector(t).unwrap();
            let p1 = f.projector(t + 1).unwrap();
            assert!((p * p - p).amax() < 1e-10);
            assert!((p1 * sys.coeff(t) - sys.coeff(t) * p).amax() < 1e-8, "invariance at {t}");
        }
        for s in -20..20 {
            for t in s..=(s + 5) {
                let phi = evolution(&sys, t, s).unwrap();
                let lhs = op_norm(&(phi * f.projector(s).unwrap()));
                assert!(lhs <= k * alpha.powi((t - s) as i32) * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn general_route_agrees_with_structured_route() {
        let sys = LinearSystem::autonomous(DMatrix::from_row_slice(2, 2, &[0.4, 0.3, 0.0, 3.0])).unwrap();
        let exact = detect_ed(&sys, Axis::Z, w(40), &EdOptions::default()).unwrap();
        let heur = detect_ed(&sys.forget_structure(), Axis::Z, w(40), &EdOptions::default()).unwrap();
        assert!(heur.heuristic && heur.has_ed);
        assert_eq!(exact.rank, heur.rank);
        let diff = exact.projector_at_zero.unwrap() - heur.projector_at_zero.unwrap();
        assert!(diff.amax() < 1e-8);
    }
}

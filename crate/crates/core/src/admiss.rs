//! Admissibility certificates for limit equations and Green's functions of
//! hyperbolic linear systems.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::homsolve::ParametricModel;
use crate::linalg::{identity, left_pseudo_solve, max_norm, op_norm};
use crate::lindich::{detect_ed, Axis, DichotomyReport, EdOptions, LinearSystem, PeriodicTable};
use crate::seqspace::Window;

pub type MapFn = Arc<dyn Fn(i64, &[f64]) -> DVector<f64> + Send + Sync>;
pub type JacFn = Arc<dyn Fn(i64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// `g = A x + r(x)` with `Lip(r)` known.
#[derive(Debug, Clone)]
pub struct SemilinearSplit {
    pub linear: PeriodicTable,
    pub remainder_lipschitz: f64,
}

/// Periodic limit equation `x_{t+1} = g_t(x_t)` with the data needed by the
/// admissibility criteria.
#[derive(Clone)]
pub struct LimitSystem {
    pub period: usize,
    pub dim: usize,
    pub map: MapFn,
    pub jacobian: JacFn,
    /// Global Lipschitz constants per phase.
    pub lipschitz: Option<Vec<f64>>,
    pub semilinear: Option<SemilinearSplit>,
    /// Diagonal coefficients per phase of a lower-triangular map whose
    /// off-diagonal part only involves earlier components and vanishes at 0.
    pub cascade: Option<Vec<Vec<f64>>>,
}

impl fmt::Debug for LimitSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LimitSystem")
            .field("period", &self.period)
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("cascade", &self.cascade)
            .finish()
    }
}

impl LimitSystem {
    /// `x_{t+1} = A_t x_t`.
    pub fn linear(table: PeriodicTable) -> Self {
        let t1 = table.clone();
        let t2 = table.clone();
        Self {
            period: table.period(),
            dim: table.dim(),
            map: Arc::new(move |t, x| t1.at(t) * DVector::from_column_slice(x)),
            jacobian: Arc::new(move |t, _| t2.at(t).clone()),
            lipschitz: None,
            semilinear: Some(SemilinearSplit { linear: table, remainder_lipschitz: 0.0 }),
            cascade: None,
        }
    }

    pub fn eval(&self, t: i64, x: &[f64]) -> DVector<f64> {
        (self.map)(t, x)
    }

    /// Linearization at the origin as a periodic table.
    pub fn linearization(&self) -> Result<PeriodicTable> {
        let zero = vec![0.0; self.dim];
        PeriodicTable::new((0..self.period as i64).map(|k| (self.jacobian)(k, &zero)).collect())
    }

    /// Samples periodicity, boundedness at 0 and the Lipschitz data.
    pub fn validate(&self, samples: usize, radius: f64, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = self.period as i64;
        if let Some(l) = &self.lipschitz {
            if l.len() != self.period || l.iter().any(|v| !(*v >= 0.0)) {
                return invalid("Lipschitz table must have one nonnegative entry per phase");
            }
        }
        for _ in 0..samples {
            let t = rng.gen_range(-3 * p..3 * p);
            let x: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-radius..radius)).collect();
            let y: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-radius..radius)).collect();
            let gx = self.eval(t, &x);
            let shifted = self.eval(t + p, &x);
            if max_norm((&gx - &shifted).as_slice()) > 1e-12 * (1.0 + max_norm(gx.as_slice())) {
                return invalid(format!("limit map is not {p}-periodic at t = {t}"));
            }
            if !self.eval(t, &vec![0.0; self.dim]).iter().all(|v| v.is_finite()) {
                return invalid("limit map is not finite at the origin");
            }
            if let Some(l) = &self.lipschitz {
                let lip = l[t.rem_euclid(p) as usize];
                let gy = self.eval(t, &y);
                let dx = max_norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
                if max_norm((&gx - &gy).as_slice()) > lip * dx * (1.0 + 1e-9) + 1e-15 {
                    return invalid(format!("Lipschitz bound {lip} violated at phase {}", t.rem_euclid(p)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Contractive,
    Semilinear,
    AsymptoticallyLinear,
    PeriodicFloquet,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub criterion: Criterion,
    pub verified: bool,
    /// The inequality checked is `lhs < rhs`.
    pub lhs: f64,
    pub rhs: f64,
    pub values: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Finds `n <= n_max` with `sup_t Π_{s=t}^{t+n-1} lip_s < 1`.
pub fn check_contractive(sys: &LimitSystem, n_max: usize) -> Result<Certificate> {
    let Some(lip) = &sys.lipschitz else {
        return invalid("contractive criterion needs Lipschitz constants");
    };
    if lip.len() != sys.period || n_max == 0 {
        return invalid("need one Lipschitz constant per phase and n_max >= 1");
    }
    let p = sys.period;
    let mut best = (f64::INFINITY, 0usize);
    for n in 1..=n_max {
        let q = (0..p).map(|t| (t..t + n).map(|s| lip[s % p]).product::<f64>()).fold(0.0, f64::max);
        if q < best.0 {
            best = (q, n);
        }
        if q < 1.0 {
            break;
        }
    }
    let (q, n) = best;
    let mut values = BTreeMap::new();
    values.insert("n".into(), n as f64);
    values.insert("period_product".into(), lip.iter().product());
    Ok(Certificate { criterion: Criterion::Contractive, verified: q < 1.0, lhs: q, rhs: 1.0, values, notes: Vec::new() })
}

fn linear_part(split: &SemilinearSplit) -> Result<LinearSystem> {
    let mats: Vec<DMatrix<f64>> = (0..split.linear.period() as i64).map(|k| split.linear.at(k).clone()).collect();
    if mats.len() == 1 {
        LinearSystem::autonomous(mats[0].clone())
    } else {
        LinearSystem::periodic(mats)
    }
}

fn ed_window(period: usize) -> Window {
    Window::symmetric((40 * period as i64).max(60)).expect("window")
}

/// Contraction of the fixed point problem `x = L⁻¹ r(x)`: requires an ED of
/// the linear part and `Lip(r) < (1 - α) / (K (1 + α))`.
pub fn check_semilinear(sys: &LimitSystem, opts: &EdOptions) -> Result<Certificate> {
    let Some(split) = &sys.semilinear else {
        return invalid("semilinear criterion needs a linear/remainder split");
    };
    let lin = linear_part(split)?;
    let ed = detect_ed(&lin, Axis::Z, ed_window(sys.period), opts)?;
    let lip = split.remainder_lipschitz;
    let mut values = BTreeMap::new();
    values.insert("lipschitz".into(), lip);
    let (Some(k), Some(alpha)) = (ed.constant, ed.rate) else {
        return Ok(Certificate {
            criterion: Criterion::Semilinear,
            verified: false,
            lhs: lip,
            rhs: 0.0,
            values,
            notes: vec![format!("linear part has no exponential dichotomy: {}", ed.reason.unwrap_or_default())],
        });
    };
    let standard = (1.0 - alpha) / (k * (1.0 + alpha));
    let alternative = k / (1.0 - alpha);
    values.insert("K".into(), k);
    values.insert("alpha".into(), alpha);
    values.insert("standard_bound".into(), standard);
    values.insert("alternative_bound".into(), alternative);
    let verified = lip < standard;
    let mut notes = Vec::new();
    if !verified && lip < alternative {
        notes.push(format!("passes the bound K/(1-α) = {alternative:.6} only; not verified"));
    }
    Ok(Certificate { criterion: Criterion::Semilinear, verified, lhs: lip, rhs: standard, values, notes })
}

/// `G(t, s) = Φ(t,s)P_s` for `s <= t`, `-Φ(t,s)(I - P_s)` for `s > t`.
pub fn green_function(sys: &LinearSystem, report: &DichotomyReport, t: i64, s: i64) -> Result<DMatrix<f64>> {
    let Some(field) = report.field.as_ref().filter(|_| report.has_ed) else {
        return invalid("Green's function needs a dichotomy report with projectors");
    };
    let w = field.window();
    if !w.contains(t) || !w.contains(s) {
        return invalid(format!("({t}, {s}) outside the projector window [{}, {}]", w.t_minus(), w.t_plus()));
    }
    if s <= t {
        Ok(crate::lindich::evolution(sys, t, s)? * field.projector(s).unwrap())
    } else {
        let u = field.unstable_basis(t).unwrap();
        let m = crate::lindich::evolution(sys, s, t)? * u;
        let q = identity(sys.dim()) - field.projector(s).unwrap();
        let x = left_pseudo_solve(&m, &q).ok_or_else(|| Error::NumericalRank("unstable bundle lost rank".into()))?;
        Ok(-(u * x))
    }
}

/// `sup_t (Σ_{|s+1-t| <= range} |G(t, s+1)|^p)^{1/p}` over all `t` whose range fits in the window.
pub fn kappa_by_summation(sys: &LinearSystem, report: &DichotomyReport, p: f64, range: i64) -> Result<f64> {
    let Some(field) = report.field.as_ref().filter(|_| report.has_ed) else {
        return invalid("κ needs a dichotomy report with projectors");
    };
    let w = field.window();
    let lo = w.t_minus() + range;
    let hi = w.t_plus() - range;
    if lo > hi {
        return invalid("window too short for the requested summation range");
    }
    let d = sys.dim();
    let id = identity(d);
    let mut kappa = 0.0f64;
    for t in lo..=hi {
        let mut sum = 0.0;
        // σ <= t: Φ(t,σ) built right to left
        let mut phi = identity(d);
        for sigma in (t - range..=t).rev() {
            if sigma < t {
                phi = &phi * sys.coeff(sigma);
            }
            sum += op_norm(&(&phi * field.projector(sigma).unwrap())).powf(p);
        }
        let u = field.unstable_basis(t).unwrap();
        let mut phi = identity(d);
        for sigma in t + 1..=t + range {
            phi = sys.coeff(sigma - 1) * phi;
            let q = &id - field.projector(sigma).unwrap();
            let x = left_pseudo_solve(&(&phi * u), &q).ok_or_else(|| Error::NumericalRank("unstable bundle lost rank".into()))?;
            sum += op_norm(&(u * x)).powf(p);
        }
        kappa = kappa.max(sum.powf(1.0 / p));
    }
    Ok(kappa)
}

/// `Kα((1 + α^p)/(1 - α^p))^{1/p}`.
pub fn kappa_closed_form(k: f64, alpha: f64, p: f64) -> f64 {
    k * alpha * ((1.0 + alpha.powf(p)) / (1.0 - alpha.powf(p))).powf(1.0 / p)
}

/// `K((1 + α^p)/(1 - α^p))^{1/p}`, an upper bound for the summed κ.
pub fn kappa_upper_bound(k: f64, alpha: f64, p: f64) -> f64 {
    k * ((1.0 + alpha.powf(p)) / (1.0 - alpha.powf(p))).powf(1.0 / p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationNorms {
    pub rho: f64,
    pub mu: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaSource {
    Summation,
    ClosedForm,
}

/// `‖ρ‖_q + ‖μ‖_q < 1/(2κ)` and `‖λ‖_q < 1/κ`.
pub fn asymptotically_linear_inequalities(kappa: f64, norms: PerturbationNorms) -> (bool, bool) {
    (norms.rho + norms.mu < 1.0 / (2.0 * kappa), norms.lambda < 1.0 / kappa)
}

pub fn check_asymptotically_linear(
    linear: &LinearSystem,
    p: f64,
    q: f64,
    norms: PerturbationNorms,
    opts: &EdOptions,
    source: KappaSource,
) -> Result<Certificate> {
    if !(p >= 1.0 && q >= 1.0) || ((1.0 / p + 1.0 / q) - 1.0).abs() > 1e-12 {
        return invalid(format!("exponents must satisfy 1/p + 1/q = 1, got p = {p}, q = {q}"));
    }
    let ed = detect_ed(linear, Axis::Z, ed_window(linear.max_period()), opts)?;
    let (Some(k), Some(alpha)) = (ed.constant, ed.rate) else {
        return Err(Error::NoDichotomy { axis: Axis::Z, reason: ed.reason.unwrap_or_default() });
    };
    let tol: f64 = 1e-12;
    let range = ((tol.ln() / alpha.ln()).ceil() as i64).max(1);
    let mut report = ed;
    let needed = Window::symmetric(2 * range + 4 * linear.max_period() as i64 + 2)?;
    if report.field.as_ref().is_some_and(|f| !f.window().contains_window(&needed)) {
        report = detect_ed(linear, Axis::Z, needed, opts)?;
    }
    let summed = kappa_by_summation(linear, &report, p, range)?;
    let closed = kappa_closed_form(k, alpha, p);
    let kappa = match source {
        KappaSource::Summation => summed,
        KappaSource::ClosedForm => closed,
    };
    let (first, second) = asymptotically_linear_inequalities(kappa, norms);
    let mut values = BTreeMap::new();
    values.insert("K".into(), k);
    values.insert("alpha".into(), alpha);
    values.insert("kappa".into(), kappa);
    values.insert("kappa_summed".into(), summed);
    values.insert("kappa_closed_form".into(), closed);
    values.insert("summation_range".into(), range as f64);
    let mut notes = Vec::new();
    if !second {
        notes.push("‖λ‖_q < 1/κ fails".into());
    }
    Ok(Certificate {
        criterion: Criterion::AsymptoticallyLinear,
        verified: first && second,
        lhs: norms.rho + norms.mu,
        rhs: 1.0 / (2.0 * kappa),
        values,
        notes,
    })
}

/// Each diagonal component of a triangular cascade must be hyperbolic.
pub fn check_cascade(sys: &LimitSystem, tol: f64) -> Result<Certificate> {
    let Some(diag) = &sys.cascade else {
        return invalid("cascade criterion needs diagonal coefficients");
    };
    if diag.len() != sys.period || diag.iter().any(|r| r.len() != sys.dim) {
        return invalid("cascade table must have one row of dim entries per phase");
    }
    let p = sys.period as f64;
    let mut values = BTreeMap::new();
    let mut worst = f64::INFINITY;
    for i in 0..sys.dim {
        let rate = diag.iter().map(|r| r[i].abs()).product::<f64>().powf(1.0 / p);
        values.insert(format!("rate_{}", i + 1), rate);
        worst = worst.min((rate - 1.0).abs());
    }
    Ok(Certificate { criterion: Criterion::PeriodicFloquet, verified: worst > tol, lhs: tol, rhs: worst, values, notes: Vec::new() })
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub lambda: f64,
    pub minus: Certificate,
    pub plus: Certificate,
}

fn certify(sys: &LimitSystem, opts: &EdOptions) -> Result<Certificate> {
    if sys.cascade.is_some() {
        check_cascade(sys, opts.tol)
    } else if sys.lipschitz.is_some() {
        check_contractive(sys, 8 * sys.period)
    } else if sys.semilinear.is_some() {
        check_semilinear(sys, opts)
    } else {
        Err(Error::NoCertificate("limit equation carries no data for any criterion".into()))
    }
}

/// Picks a criterion for each limit equation of the model and evaluates it.
pub fn check_limit_admissibility(model: &ParametricModel, lambda: f64, opts: &EdOptions) -> Result<AdmissibilityReport> {
    let Some((minus, plus)) = model.limit_systems(lambda) else {
        return Err(Error::NoCertificate(format!("model `{}` has no limit equations", model.name)));
    };
    Ok(AdmissibilityReport { lambda, minus: certify(&minus, opts)?, plus: certify(&plus, opts)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_table(a: &[f64]) -> PeriodicTable {
        PeriodicTable::new(a.iter().map(|v| DMatrix::from_element(1, 1, *v)).collect()).unwrap()
    }

    fn bh_limit(a: Vec<f64>) -> LimitSystem {
        let a1 = a.clone();
        let a2 = a.clone();
        let p = a.len() as i64;
        LimitSystem {
            period: a.len(),
            dim: 1,
            map: Arc::new(move |t, x| DVector::from_element(1, a1[t.rem_euclid(p) as usize] * x[0] / (1.0 + x[0].abs()))),
            jacobian: Arc::new(move |t, x| DMatrix::from_element(1, 1, a2[t.rem_euclid(p) as usize] / (1.0 + x[0].abs()).powi(2))),
            lipschitz: Some(a),
            semilinear: None,
            cascade: None,
        }
    }

    #[test]
    fn contractive_product_over_a_period() {
        let c = check_contractive(&bh_limit(vec![0.5, 1.5]), 8).unwrap();
        assert!(c.verified);
        assert_eq!(c.values["n"], 2.0);
        assert!((c.lhs - 0.75).abs() < 1e-15);
        let bad = check_contractive(&bh_limit(vec![1.2, 0.9]), 8).unwrap();
        assert!(!bad.verified);
    }

    #[test]
    fn lipschitz_data_is_sampled() {
        assert!(bh_limit(vec![0.5, 1.5]).validate(200, 5.0, 1).is_ok());
        let mut lying = bh_limit(vec![0.5, 1.5]);
        lying.lipschitz = Some(vec![0.1, 0.1]);
        assert!(lying.validate(200, 5.0, 1).is_err());
    }

    #[test]
    fn semilinear_bound_is_the_standard_one() {
        let mut sys = LimitSystem::linear(scalar_table(&[0.5]));
        sys.semilinear.as_mut().unwrap().remainder_lipschitz = 0.2;
        let c = check_semilinear(&sys, &EdOptions::default()).unwrap();
        assert!(c.verified);
        assert!((c.rhs - 1.0 / 3.0).abs() < 1e-9);
        sys.semilinear.as_mut().unwrap().remainder_lipschitz = 0.4;
        let c = check_semilinear(&sys, &EdOptions::default()).unwrap();
        assert!(!c.verified);
        assert!(c.notes[0].contains("only"));
    }

    #[test]
    fn green_function_of_stable_scalar() {
        let sys = LinearSystem::autonomous(DMatrix::from_element(1, 1, 0.5)).unwrap();
        let r = detect_ed(&sys, Axis::Z, Window::symmetric(30).unwrap(), &EdOptions::default()).unwrap();
        for t in -5..5 {
            for s in -5..5 {
                let g = green_function(&sys, &r, t, s).unwrap()[(0, 0)];
                let want = if s <= t { 0.5f64.powi((t - s) as i32) } else { 0.0 };
                assert!((g - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn green_function_jump_identity() {
        let a_minus = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.3, 0.5]);
        let a_plus = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.7, 3.0]);
        let sys = LinearSystem::piecewise(vec![a_minus], vec![a_plus]).unwrap();
        let r = detect_ed(&sys, Axis::Z, Window::symmetric(20).unwrap(), &EdOptions::default()).unwrap();
        for s in -8..8 {
            for t in -8..8 {
                let g1 = green_function(&sys, &r, t + 1, s).unwrap();
                let g0 = green_function(&sys, &r, t, s).unwrap();
                let lhs = g1 - sys.coeff(t) * g0;
                let want = if t + 1 == s { identity(2) } else { DMatrix::zeros(2, 2) };
                assert!((lhs - want).amax() < 1e-9, "t={t}, s={s}");
            }
        }
    }

    #[test]
    fn kappa_of_unstable_scalar() {
        let sys = LinearSystem::autonomous(DMatrix::from_element(1, 1, 2.0)).unwrap();
        let r = detect_ed(&sys, Axis::Z, Window::symmetric(100).unwrap(), &EdOptions::default()).unwrap();
        let k = kappa_by_summation(&sys, &r, 2.0, 60).unwrap();
        assert!((k - (1.0f64 / 3.0).sqrt()).abs() < 1e-9);
        assert!(k <= kappa_upper_bound(1.0, 0.5, 2.0));
    }

    #[test]
    fn kappa_closed_form_value() {
        assert!((kappa_closed_form(1.0, 0.5, 2.0) - 0.5 * (1.25f64 / 0.75).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn asymptotically_linear_inequalities_follow_kappa() {
        let n = PerturbationNorms { rho: 0.4, mu: 0.4, lambda: 0.0 };
        assert_eq!(asymptotically_linear_inequalities(0.6455, n), (false, true));
        let zero = PerturbationNorms { rho: 0.0, mu: 0.0, lambda: 0.0 };
        assert_eq!(asymptotically_linear_inequalities(1e6, zero), (true, true));
    }

    #[test]
    fn exponent_pair_is_checked() {
        let sys = LinearSystem::autonomous(DMatrix::from_element(1, 1, 0.5)).unwrap();
        let n = PerturbationNorms { rho: 0.0, mu: 0.0, lambda: 0.0 };
        assert!(check_asymptotically_linear(&sys, 2.0, 3.0, n, &EdOptions::default(), KappaSource::Summation).is_err());
        let c = check_asymptotically_linear(&sys, 2.0, 2.0, n, &EdOptions::default(), KappaSource::Summation).unwrap();
        assert!(c.verified);
    }

    #[test]
    fn cascade_rates() {
        let sys = LimitSystem {
            cascade: Some(vec![vec![0.5, 2.0]]),
            ..LimitSystem::linear(PeriodicTable::new(vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, 2.0])]).unwrap())
        };
        let c = check_cascade(&sys, 1e-8).unwrap();
        assert!(c.verified);
        assert_eq!(c.values["rate_2"], 2.0);
    }
}

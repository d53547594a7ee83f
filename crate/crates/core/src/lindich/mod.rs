//! Linear nonautonomous systems `x_{t+1} = A_t x_t`: evolution operators,
//! exponential dichotomies, dichotomy spectra and Fredholm indices.

mod dichotomy;
mod spectrum;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::op_norm;
use crate::seqspace::{TruncatedSequence, Window};

pub use dichotomy::{detect_ed, dichotomy_probe, fredholm_index, DichotomyReport, EdOptions, IndexReport, ProjectorField};
pub use spectrum::{default_gamma_range, spectrum, Probe, SpectrumMethod, SpectrumOptions, SpectrumReport};

/// Interval of the time axis a property refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "Z")]
    Z,
    #[serde(rename = "Z_plus")]
    ZPlus,
    #[serde(rename = "Z_minus")]
    ZMinus,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Z => "Z",
            Axis::ZPlus => "Z_plus",
            Axis::ZMinus => "Z_minus",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Z" | "z" => Ok(Axis::Z),
            "Z+" | "Z_plus" | "z_plus" | "plus" => Ok(Axis::ZPlus),
            "Z-" | "Z_minus" | "z_minus" | "minus" => Ok(Axis::ZMinus),
            _ => invalid(format!("unknown axis `{s}` (expected Z, Z_plus or Z_minus)")),
        }
    }
}

/// Periodic table: `A_t = mats[t mod p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicTable {
    mats: Vec<DMatrix<f64>>,
}

impl PeriodicTable {
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = mats.first() else {
            return invalid("periodic table must have at least one entry");
        };
        let d = first.nrows();
        if d == 0 || mats.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return invalid("periodic table entries must be square matrices of one size");
        }
        if mats.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
            return invalid("periodic table has non-finite entries");
        }
        Ok(Self { mats })
    }

    pub fn period(&self) -> usize {
        self.mats.len()
    }

    pub fn dim(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn at(&self, t: i64) -> &DMatrix<f64> {
        &self.mats[t.rem_euclid(self.mats.len() as i64) as usize]
    }

    pub fn scaled(&self, gamma: f64) -> Self {
        Self { mats: self.mats.iter().map(|m| m / gamma).collect() }
    }

    /// `A_{φ+p-1} ... A_φ`.
    pub fn period_matrix(&self, phase: i64) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::identity(d, d);
        for k in 0..self.period() as i64 {
            m = self.at(phase + k) * m;
        }
        m
    }

    /// `|μ|^{1/p}` for the Floquet multipliers μ.
    pub fn floquet_rates(&self) -> Vec<f64> {
        let p = self.period() as f64;
        crate::linalg::eigenvalues(&self.period_matrix(0))
            .iter()
            .map(|z| z.norm().powf(1.0 / p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    Autonomous,
    Periodic { period: usize },
    AsymPeriodic { period_minus: usize, period_plus: usize },
    General,
}

pub type CoeffFn = Arc<dyn Fn(i64) -> DMatrix<f64> + Send + Sync>;

/// `x_{t+1} = A_t x_t` with a structure tag.
#[derive(Clone)]
pub struct LinearSystem {
    dim: usize,
    coeff: CoeffFn,
    structure: Structure,
    minus: Option<PeriodicTable>,
    plus: Option<PeriodicTable>,
}

impl fmt::Debug for LinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearSystem").field("dim", &self.dim).field("structure", &self.structure).finish()
    }
}

impl LinearSystem {
    pub fn autonomous(a: DMatrix<f64>) -> Result<Self> {
        let table = PeriodicTable::new(vec![a])?;
        let sys = Self::from_table(table, Structure::Autonomous);
        Ok(sys)
    }

    pub fn periodic(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let table = PeriodicTable::new(mats)?;
        let p = table.period();
        Ok(Self::from_table(table, Structure::Periodic { period: p }))
    }

    fn from_table(table: PeriodicTable, structure: Structure) -> Self {
        let t2 = table.clone();
        Self {
            dim: table.dim(),
            coeff: Arc::new(move |t| t2.at(t).clone()),
            structure,
            minus: Some(table.clone()),
            plus: Some(table),
        }
    }

    /// Coefficients given by `coeff`, converging to periodic limits as `t → ±∞`.
    pub fn asymptotically_periodic(
        coeff: impl Fn(i64) -> DMatrix<f64> + Send + Sync + 'static,
        minus: Vec<DMatrix<f64>>,
        plus: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let minus = PeriodicTable::new(minus)?;
        let plus = PeriodicTable::new(plus)?;
        if minus.dim() != plus.dim() {
            return invalid("limit tables have different dimensions");
        }
        Ok(Self {
            dim: plus.dim(),
            coeff: Arc::new(coeff),
            structure: Structure::AsymPeriodic { period_minus: minus.period(), period_plus: plus.period() },
            minus: Some(minus),
            plus: Some(plus),
        })
    }

    /// `A_t = minus[t mod p⁻]` for `t < 0` and `plus[t mod p⁺]` for `t >= 0`.
    pub fn piecewise(minus: Vec<DMatrix<f64>>, plus: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = PeriodicTable::new(minus.clone())?;
        let p = PeriodicTable::new(plus.clone())?;
        Self::asymptotically_periodic(move |t| if t < 0 { m.at(t).clone() } else { p.at(t).clone() }, minus, plus)
    }

    pub fn general(dim: usize, coeff: impl Fn(i64) -> DMatrix<f64> + Send + Sync + 'static) -> Result<Self> {
        if dim == 0 {
            return invalid("dimension must be positive");
        }
        Ok(Self { dim, coeff: Arc::new(coeff), structure: Structure::General, minus: None, plus: None })
    }

    /// Same coefficients with the structure information dropped.
    pub fn forget_structure(&self) -> Self {
        Self { structure: Structure::General, minus: None, plus: None, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn coeff(&self, t: i64) -> DMatrix<f64> {
        (self.coeff)(t)
    }

    pub fn limit_minus(&self) -> Option<&PeriodicTable> {
        self.minus.as_ref()
    }

    pub fn limit_plus(&self) -> Option<&PeriodicTable> {
        self.plus.as_ref()
    }

    /// Largest period among the limit tables (1 when unstructured).
    pub fn max_period(&self) -> usize {
        match self.structure {
            Structure::Autonomous | Structure::General => 1,
            Structure::Periodic { period } => period,
            Structure::AsymPeriodic { period_minus, period_plus } => period_minus.max(period_plus),
        }
    }

    /// `A_t / γ`.
    pub fn scaled(&self, gamma: f64) -> Self {
        let c = self.coeff.clone();
        Self {
            dim: self.dim,
            coeff: Arc::new(move |t| c(t) / gamma),
            structure: self.structure,
            minus: self.minus.as_ref().map(|m| m.scaled(gamma)),
            plus: self.plus.as_ref().map(|m| m.scaled(gamma)),
        }
    }

    /// `sup_t |A_t|` sampled on a window.
    pub fn bound(&self, window: Window) -> f64 {
        window.iter().map(|t| op_norm(&self.coeff(t))).fold(0.0, f64::max)
    }

    /// Checks the structural promises on a window.
    pub fn validate(&self, window: Window, tol: f64) -> Result<()> {
        for t in window.iter() {
            let a = self.coeff(t);
            if a.nrows() != self.dim || a.ncols() != self.dim {
                return invalid(format!("A_{t} has shape {:?}, expected {}x{}", a.shape(), self.dim, self.dim));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return invalid(format!("A_{t} has non-finite entries"));
            }
        }
        match self.structure {
            Structure::Autonomous | Structure::Periodic { .. } => {
                let table = self.plus.as_ref().expect("periodic table");
                for t in window.iter() {
                    if (self.coeff(t) - table.at(t)).amax() > tol {
                        return invalid(format!("coefficients are not periodic at t = {t}"));
                    }
                }
            }
            Structure::AsymPeriodic { .. } => {
                let (lo, hi) = (window.t_minus(), window.t_plus());
                let dm = (self.coeff(lo) - self.minus.as_ref().unwrap().at(lo)).amax();
                let dp = (self.coeff(hi) - self.plus.as_ref().unwrap().at(hi)).amax();
                if dm > tol || dp > tol {
                    return invalid(format!("coefficients have not reached their limits at the window ends ({dm:e}, {dp:e})"));
                }
            }
            Structure::General => {}
        }
        Ok(())
    }
}

/// Evolution operator `Φ(t, s) = A_{t-1} ... A_s` for `s <= t`.
pub fn evolution(sys: &LinearSystem, t: i64, s: i64) -> Result<DMatrix<f64>> {
    if s > t {
        return invalid(format!("evolution operator needs s <= t, got s = {s}, t = {t}"));
    }
    let mut m = DMatrix::identity(sys.dim(), sys.dim());
    for k in s..t {
        m = sys.coeff(k) * m;
    }
    Ok(m)
}

/// `(L_A φ)_t = φ_t - A_{t-1} φ_{t-1}` on the window `[t⁻ + 1, t⁺]`.
pub fn apply_la(sys: &LinearSystem, phi: &TruncatedSequence) -> Result<TruncatedSequence> {
    if phi.dim() != sys.dim() {
        return invalid("dimension mismatch between sequence and system");
    }
    let w = phi.window();
    let out_w = Window::new(w.t_minus() + 1, w.t_plus())?;
    let mut out = TruncatedSequence::zeros(out_w, sys.dim());
    for t in out_w.iter() {
        let a = sys.coeff(t - 1);
        let prev = nalgebra::DVector::from_column_slice(phi.at(t - 1));
        let v = nalgebra::DVector::from_column_slice(phi.at(t)) - a * prev;
        out.set(t, v.as_slice());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
    }

    #[test]
    fn evolution_of_scalar_autonomous() {
        let sys = LinearSystem::autonomous(DMatrix::from_element(1, 1, 0.5)).unwrap();
        let phi = evolution(&sys, 3, 0).unwrap();
        assert_eq!(phi[(0, 0)], 0.125);
        assert!(evolution(&sys, 0, 1).is_err());
    }

    #[test]
    fn apply_la_vanishes_on_solutions() {
        let sys = LinearSystem::autonomous(DMatrix::from_element(1, 1, 0.5)).unwrap();
        let w = Window::new(0, 10).unwrap();
        let phi = TruncatedSequence::from_fn(w, 1, |t| nalgebra::DVector::from_element(1, 0.5f64.powi(t as i32))).unwrap();
        let r = apply_la(&sys, &phi).unwrap();
        assert_eq!(r.window(), Window::new(1, 10).unwrap());
        assert!(r.sup_norm() < 1e-15);
    }

    #[test]
    fn validate_detects_broken_periodicity() {
        let sys = LinearSystem::periodic(vec![diag(0.5, 2.0), diag(1.0, 1.0)]).unwrap();
        assert!(sys.validate(Window::symmetric(6).unwrap(), 1e-12).is_ok());
        let lying = LinearSystem {
            coeff: Arc::new(|t| if t == 3 { diag(9.0, 9.0) } else { diag(0.5, 2.0) }),
            ..LinearSystem::autonomous(diag(0.5, 2.0)).unwrap()
        };
        assert!(lying.validate(Window::symmetric(6).unwrap(), 1e-12).is_err());
    }

    #[test]
    fn axis_round_trip() {
        for a in [Axis::Z, Axis::ZPlus, Axis::ZMinus] {
            assert_eq!(a.to_string().parse::<Axis>().unwrap(), a);
        }
        assert_eq!(serde_json::to_string(&Axis::ZPlus).unwrap(), "\"Z_plus\"");
    }

    proptest! {
        #[test]
        fn cocycle_property(seed in 0u64..1000, s in -6i64..0, r in 0i64..4, t in 4i64..9) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mats: Vec<DMatrix<f64>> = (0..15).map(|_| DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0))).collect();
            let sys = LinearSystem::general(2, move |t| mats[(t + 7).clamp(0, 14) as usize].clone()).unwrap();
            let lhs = evolution(&sys, t, s).unwrap();
            let rhs = evolution(&sys, t, r).unwrap() * evolution(&sys, r, s).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }
    }
}

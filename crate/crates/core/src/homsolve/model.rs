use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admiss::LimitSystem;
use crate::error::{invalid, Error, Result};
use crate::seqspace::TruncatedSequence;

/// Right-hand side `f_t(x, λ)` with its derivatives.
pub trait RightHandSide: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: i64, x: &[f64], lambda: f64) -> DVector<f64>;

    /// `D_1 f_t(x, λ)`.
    fn jacobian(&self, t: i64, x: &[f64], lambda: f64) -> DMatrix<f64>;

    /// `D_2 f_t(x, λ)`; central differences unless overridden.
    fn param_derivative(&self, t: i64, x: &[f64], lambda: f64) -> DVector<f64> {
        let h = 1e-6 * (1.0 + lambda.abs());
        (self.eval(t, x, lambda + h) - self.eval(t, x, lambda - h)) / (2.0 * h)
    }
}

/// Open box `Ω = Π (lower_i, upper_i)`; infinite bounds allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn whole(dim: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return invalid("domain box needs lower < upper componentwise");
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| *a < *v && *v < *b)
    }

    /// Distance (max-norm) to the boundary; infinite for `R^d`.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (a, b))| (v - a).min(b - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_whole_space(&self) -> bool {
        self.lower.iter().all(|a| a.is_infinite()) && self.upper.iter().all(|b| b.is_infinite())
    }
}

#[derive(Debug, Clone)]
pub struct Reference {
    pub phi: TruncatedSequence,
    pub lambda: f64,
}

pub type LimitFactory = Arc<dyn Fn(f64) -> (LimitSystem, LimitSystem) + Send + Sync>;

/// `x_{t+1} = f_t(x_t, λ)` on `Ω × Λ` together with a reference homoclinic.
#[derive(Clone)]
pub struct ParametricModel {
    pub name: String,
    pub rhs: Arc<dyn RightHandSide>,
    pub omega: DomainBox,
    /// Open parameter interval `Λ`.
    pub lambda_interval: (f64, f64),
    /// Limit equations `(f⁻, f⁺)` as functions of λ.
    pub limits: Option<LimitFactory>,
    pub reference: Reference,
}

impl fmt::Debug for ParametricModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricModel")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("lambda_interval", &self.lambda_interval)
            .field("reference_lambda", &self.reference.lambda)
            .finish()
    }
}

impl ParametricModel {
    pub fn dim(&self) -> usize {
        self.rhs.dim()
    }

    pub fn limit_systems(&self, lambda: f64) -> Option<(LimitSystem, LimitSystem)> {
        self.limits.as_ref().map(|f| f(lambda))
    }

    pub fn check_lambda(&self, lambda: f64) -> Result<()> {
        let (lo, hi) = self.lambda_interval;
        if !(lambda > lo && lambda < hi) {
            return Err(Error::ParameterOutOfRange { lambda, lo, hi });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.omega.lower.len() != d {
            return invalid("domain box dimension differs from the model dimension");
        }
        if self.reference.phi.dim() != d {
            return invalid("reference solution dimension differs from the model dimension");
        }
        let (lo, hi) = self.lambda_interval;
        if !(lo < hi) {
            return invalid("parameter interval must be nonempty");
        }
        self.check_lambda(self.reference.lambda)?;
        if !self.omega.contains(&vec![0.0; d]) {
            return invalid("the domain must contain the origin");
        }
        Ok(())
    }
}

//! Built-in parametric models, closed-form branches and configurable models.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admiss::{LimitSystem, SemilinearSplit};
use crate::error::{invalid, Error, Result};
use crate::homsolve::{DomainBox, LimitFactory, ParametricModel, Reference, RightHandSide};
use crate::lindich::PeriodicTable;
use crate::seqspace::{TruncatedSequence, Window};

pub const BUILTINS: [&str; 6] = ["pw_linear", "transcritical", "pitchfork", "semilinear_demo", "beverton_holt", "scalar_affine"];

const REFERENCE_HALF_WIDTH: i64 = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Table(Vec<f64>),
    Text(String),
}

pub type Params = BTreeMap<String, ParamValue>;

fn scalar(params: &Params, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(ParamValue::Scalar(v)) if v.is_finite() => Ok(*v),
        Some(other) => invalid(format!("parameter `{key}` must be a finite number, got {other:?}")),
    }
}

fn table(params: &Params, key: &str, default: &[f64]) -> Result<Vec<f64>> {
    match params.get(key) {
        None => Ok(default.to_vec()),
        Some(ParamValue::Scalar(v)) => Ok(vec![*v]),
        Some(ParamValue::Table(v)) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(v.clone()),
        Some(other) => invalid(format!("parameter `{key}` must be a nonempty list of numbers, got {other:?}")),
    }
}

fn text<'a>(params: &'a Params, key: &str, default: &'a str) -> Result<&'a str> {
    match params.get(key) {
        None => Ok(default),
        Some(ParamValue::Text(s)) => Ok(s.as_str()),
        Some(other) => invalid(format!("parameter `{key}` must be a string, got {other:?}")),
    }
}

fn check_keys(params: &Params, allowed: &[&str]) -> Result<()> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return invalid(format!("unknown parameter `{k}` (allowed: {})", allowed.join(", ")));
        }
    }
    Ok(())
}

fn alpha_param(params: &Params) -> Result<f64> {
    let a = scalar(params, "alpha", 0.5)?;
    if !(a > -1.0 && a < 1.0) || a == 0.0 {
        return invalid(format!("alpha must lie in (-1, 1) without 0, got {a}"));
    }
    Ok(a)
}

/// `x_{t+1} = (b_t x¹, λx¹ + c_t x² + δ(x¹)^k)` with `b, c` switching at `t = 0`.
#[derive(Debug, Clone, Copy)]
struct Triangular {
    alpha: f64,
    delta: f64,
    power: i32,
}

impl Triangular {
    fn b(&self, t: i64) -> f64 {
        if t < 0 {
            1.0 / self.alpha
        } else {
            self.alpha
        }
    }

    fn c(&self, t: i64) -> f64 {
        if t < 0 {
            self.alpha
        } else {
            1.0 / self.alpha
        }
    }

    fn nonlinear(&self, x1: f64) -> f64 {
        if self.power == 0 {
            0.0
        } else {
            self.delta * x1.powi(self.power)
        }
    }

    fn nonlinear_slope(&self, x1: f64) -> f64 {
        if self.power == 0 {
            0.0
        } else {
            self.delta * self.power as f64 * x1.powi(self.power - 1)
        }
    }

    fn limit(&self, t: i64, lambda: f64) -> LimitSystem {
        let me = *self;
        let (b, c) = (self.b(t), self.c(t));
        LimitSystem {
            period: 1,
            dim: 2,
            map: Arc::new(move |_, x| DVector::from_vec(vec![b * x[0], lambda * x[0] + c * x[1] + me.nonlinear(x[0])])),
            jacobian: Arc::new(move |_, x| DMatrix::from_row_slice(2, 2, &[b, 0.0, lambda + me.nonlinear_slope(x[0]), c])),
            lipschitz: None,
            semilinear: None,
            cascade: Some(vec![vec![b, c]]),
        }
    }
}

impl RightHandSide for Triangular {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, t: i64, x: &[f64], lambda: f64) -> DVector<f64> {
        DVector::from_vec(vec![self.b(t) * x[0], lambda * x[0] + self.c(t) * x[1] + self.nonlinear(x[0])])
    }

    fn jacobian(&self, t: i64, x: &[f64], lambda: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.b(t), 0.0, lambda + self.nonlinear_slope(x[0]), self.c(t)])
    }

    fn param_derivative(&self, _t: i64, x: &[f64], _lambda: f64) -> DVector<f64> {
        DVector::from_vec(vec![0.0, x[0]])
    }
}

/// `x_{t+1} = A x + λ b_t (1, 1) + ε (h(x²), h(x¹))`, `h(s) = s²/(1 + s²)`.
#[derive(Debug, Clone, Copy)]
struct SemilinearDemo {
    a_s: f64,
    a_u: f64,
    eps: f64,
    rate: f64,
}

fn bump(s: f64) -> f64 {
    s * s / (1.0 + s * s)
}

fn bump_slope(s: f64) -> f64 {
    2.0 * s / (1.0 + s * s).powi(2)
}

/// `max |h'| = 3√3/8`.
const BUMP_LIPSCHITZ: f64 = 0.649_519_052_838_329;

impl SemilinearDemo {
    fn forcing(&self, t: i64) -> f64 {
        self.rate.powi(t.unsigned_abs() as i32)
    }

    fn limit(&self) -> LimitSystem {
        let me = *self;
        let lin = PeriodicTable::new(vec![DMatrix::from_row_slice(2, 2, &[self.a_s, 0.0, 0.0, self.a_u])]).unwrap();
        LimitSystem {
            period: 1,
            dim: 2,
            map: Arc::new(move |_, x| DVector::from_vec(vec![me.a_s * x[0] + me.eps * bump(x[1]), me.a_u * x[1] + me.eps * bump(x[0])])),
            jacobian: Arc::new(move |t, x| me.jacobian(t, x, 0.0)),
            lipschitz: None,
            semilinear: Some(SemilinearSplit { linear: lin, remainder_lipschitz: self.eps * BUMP_LIPSCHITZ }),
            cascade: None,
        }
    }
}

impl RightHandSide for SemilinearDemo {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, t: i64, x: &[f64], lambda: f64) -> DVector<f64> {
        let b = lambda * self.forcing(t);
        DVector::from_vec(vec![self.a_s * x[0] + b + self.eps * bump(x[1]), self.a_u * x[1] + b + self.eps * bump(x[0])])
    }

    fn jacobian(&self, _t: i64, x: &[f64], _lambda: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.a_s, self.eps * bump_slope(x[1]), self.eps * bump_slope(x[0]), self.a_u])
    }

    fn param_derivative(&self, t: i64, _x: &[f64], _lambda: f64) -> DVector<f64> {
        DVector::from_element(2, self.forcing(t))
    }
}

/// `x_{t+1} = a_t x/(1 + |x|) + λ b_t`.
#[derive(Debug, Clone)]
struct BevertonHolt {
    a_minus: Vec<f64>,
    a_plus: Vec<f64>,
    amplitude: f64,
    rate: f64,
}

fn phase(table: &[f64], t: i64) -> f64 {
    table[t.rem_euclid(table.len() as i64) as usize]
}

impl BevertonHolt {
    fn a(&self, t: i64) -> f64 {
        if t < 0 {
            phase(&self.a_minus, t)
        } else {
            phase(&self.a_plus, t)
        }
    }

    fn forcing(&self, t: i64) -> f64 {
        self.amplitude * self.rate.powi(t.unsigned_abs() as i32)
    }

    fn limit(a: Vec<f64>) -> LimitSystem {
        let a1 = a.clone();
        let a2 = a.clone();
        LimitSystem {
            period: a.len(),
            dim: 1,
            map: Arc::new(move |t, x| DVector::from_element(1, phase(&a1, t) * x[0] / (1.0 + x[0].abs()))),
            jacobian: Arc::new(move |t, x| DMatrix::from_element(1, 1, phase(&a2, t) / (1.0 + x[0].abs()).powi(2))),
            lipschitz: Some(a.iter().map(|v| v.abs()).collect()),
            semilinear: None,
            cascade: None,
        }
    }
}

impl RightHandSide for BevertonHolt {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, t: i64, x: &[f64], lambda: f64) -> DVector<f64> {
        DVector::from_element(1, self.a(t) * x[0] / (1.0 + x[0].abs()) + lambda * self.forcing(t))
    }

    fn jacobian(&self, t: i64, x: &[f64], _lambda: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.a(t) / (1.0 + x[0].abs()).powi(2))
    }

    fn param_derivative(&self, t: i64, _x: &[f64], _lambda: f64) -> DVector<f64> {
        DVector::from_element(1, self.forcing(t))
    }
}

/// `x_{t+1} = a x + λ δ_{t,0}`.
#[derive(Debug, Clone, Copy)]
struct ScalarAffine {
    a: f64,
}

impl RightHandSide for ScalarAffine {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, t: i64, x: &[f64], lambda: f64) -> DVector<f64> {
        DVector::from_element(1, self.a * x[0] + if t == 0 { lambda } else { 0.0 })
    }

    fn jacobian(&self, _t: i64, _x: &[f64], _lambda: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.a)
    }

    fn param_derivative(&self, t: i64, _x: &[f64], _lambda: f64) -> DVector<f64> {
        DVector::from_element(1, if t == 0 { 1.0 } else { 0.0 })
    }
}

fn zero_reference(dim: usize, lambda: f64) -> Reference {
    let w = Window::symmetric(REFERENCE_HALF_WIDTH).expect("window");
    Reference { phi: TruncatedSequence::zeros(w, dim), lambda }
}

fn assemble(
    name: &str,
    rhs: Arc<dyn RightHandSide>,
    limits: Option<LimitFactory>,
    reference: Reference,
    lambda_interval: (f64, f64),
) -> Result<ParametricModel> {
    let d = rhs.dim();
    let model = ParametricModel {
        name: name.to_string(),
        rhs,
        omega: DomainBox::whole(d),
        lambda_interval,
        limits,
        reference,
    };
    model.validate()?;
    Ok(model)
}

/// Builds a named model from parameters. Unspecified parameters take their
/// defaults (`alpha = 0.5`, `delta = 1` for transcritical, `delta = -1` for
/// pitchfork). `branch = "oracle"` seeds the reference with the nontrivial
/// closed-form homoclinic.
pub fn build(name: &str, params: &Params) -> Result<ParametricModel> {
    let whole = (f64::NEG_INFINITY, f64::INFINITY);
    match name {
        "pw_linear" | "transcritical" | "pitchfork" => {
            let power = match name {
                "pw_linear" => 0,
                "transcritical" => 2,
                _ => 3,
            };
            check_keys(params, &["alpha", "delta", "lambda_star", "branch", "sign"])?;
            let alpha = alpha_param(params)?;
            let delta = scalar(params, "delta", if power == 3 { -1.0 } else { 1.0 })?;
            if power != 0 && delta == 0.0 {
                return invalid("delta must be nonzero");
            }
            let lambda_star = scalar(params, "lambda_star", 0.5)?;
            let tri = Triangular { alpha, delta, power };
            let reference = match text(params, "branch", "trivial")? {
                "trivial" => zero_reference(2, lambda_star),
                "oracle" if power != 0 => {
                    let sign = scalar(params, "sign", 1.0)?;
                    let xi = oracle_branch(name, params, lambda_star)?;
                    let pick = if sign < 0.0 && xi.len() > 1 { xi[1] } else { xi[0] };
                    let w = Window::symmetric(REFERENCE_HALF_WIDTH)?;
                    Reference { phi: oracle_homoclinic(alpha, delta, power, lambda_star, pick[0], w)?, lambda: lambda_star }
                }
                other => return invalid(format!("branch must be `trivial` or `oracle` (closed forms exist for transcritical and pitchfork), got `{other}`")),
            };
            let limits: LimitFactory = Arc::new(move |l| (tri.limit(-1, l), tri.limit(0, l)));
            assemble(name, Arc::new(tri), Some(limits), reference, whole)
        }
        "semilinear_demo" => {
            check_keys(params, &["a_s", "a_u", "eps", "b_rate", "lambda_star"])?;
            let demo = SemilinearDemo {
                a_s: scalar(params, "a_s", 0.5)?,
                a_u: scalar(params, "a_u", 2.0)?,
                eps: scalar(params, "eps", 0.2)?,
                rate: scalar(params, "b_rate", 0.5)?,
            };
            if !(demo.rate.abs() < 1.0) {
                return invalid("b_rate must lie in (-1, 1)");
            }
            let limits: LimitFactory = Arc::new(move |_| (demo.limit(), demo.limit()));
            let reference = zero_reference(2, scalar(params, "lambda_star", 0.0)?);
            assemble(name, Arc::new(demo), Some(limits), reference, whole)
        }
        "beverton_holt" => {
            check_keys(params, &["a_minus", "a_plus", "b_amplitude", "b_rate", "lambda_star"])?;
            let bh = BevertonHolt {
                a_minus: table(params, "a_minus", &[0.8])?,
                a_plus: table(params, "a_plus", &[0.8])?,
                amplitude: scalar(params, "b_amplitude", 1.0)?,
                rate: scalar(params, "b_rate", 0.5)?,
            };
            if !(bh.rate.abs() < 1.0) {
                return invalid("b_rate must lie in (-1, 1)");
            }
            let (am, ap) = (bh.a_minus.clone(), bh.a_plus.clone());
            let limits: LimitFactory = Arc::new(move |_| (BevertonHolt::limit(am.clone()), BevertonHolt::limit(ap.clone())));
            let reference = zero_reference(1, scalar(params, "lambda_star", 0.0)?);
            assemble(name, Arc::new(bh), Some(limits), reference, whole)
        }
        "scalar_affine" => {
            check_keys(params, &["a", "lambda_star"])?;
            let a = scalar(params, "a", 0.5)?;
            let rhs = ScalarAffine { a };
            let lin = PeriodicTable::new(vec![DMatrix::from_element(1, 1, a)])?;
            let limits: LimitFactory = Arc::new(move |_| (LimitSystem::linear(lin.clone()), LimitSystem::linear(lin.clone())));
            let reference = zero_reference(1, scalar(params, "lambda_star", 0.0)?);
            assemble(name, Arc::new(rhs), Some(limits), reference, whole)
        }
        _ => Err(Error::UnknownModel { name: name.to_string() }),
    }
}

/// Nontrivial branch value `(ξ₁, ξ₂) = φ_0` at λ (both signs for the pitchfork).
pub fn oracle_branch(name: &str, params: &Params, lambda: f64) -> Result<Vec<[f64; 2]>> {
    let alpha = alpha_param(params)?;
    match name {
        "transcritical" => {
            let delta = scalar(params, "delta", 1.0)?;
            let q = alpha * alpha + alpha + 1.0;
            let xi1 = -2.0 * q * lambda / (delta * (alpha + 1.0).powi(2));
            let xi2 = -2.0 * alpha * q * lambda * lambda / (delta * (alpha + 1.0).powi(4));
            Ok(vec![[xi1, xi2]])
        }
        "pitchfork" => {
            let delta = scalar(params, "delta", -1.0)?;
            let s = -2.0 * lambda / delta;
            if s < 0.0 {
                return Err(Error::NoRealBranch(format!("ξ₁² = -2λ/δ = {s} is negative")));
            }
            let xi1 = s.sqrt();
            let xi2 = alpha * lambda * xi1 / (1.0 + alpha * alpha);
            Ok(vec![[xi1, xi2], [-xi1, -xi2]])
        }
        _ => invalid(format!("no closed-form branch for model `{name}`")),
    }
}

/// Bounded solution of the triangular family with `φ¹_0 = ξ₁`. The second
/// component is summed in the stable direction on each half-axis.
pub fn oracle_homoclinic(alpha: f64, delta: f64, power: i32, lambda: f64, xi1: f64, window: Window) -> Result<TruncatedSequence> {
    let tri = Triangular { alpha, delta, power };
    let x1 = |t: i64| alpha.abs().powi(t.unsigned_abs() as i32) * xi1 * if alpha < 0.0 && t % 2 != 0 { -1.0 } else { 1.0 };
    let g = |t: i64| lambda * x1(t) + tri.nonlinear(x1(t));
    // enough extra steps that the truncated sums are exact in double precision
    let far = ((1e-18f64).ln() / alpha.abs().ln()).ceil() as i64 + 4;
    let lo = window.t_minus().min(0) - far;
    let hi = window.t_plus().max(0) + far;
    let mut x2 = BTreeMap::new();
    // t >= 0: x²_t = α (x²_{t+1} - g_t), contracting backwards
    let mut v = 0.0;
    for t in (0..hi).rev() {
        v = alpha * (v - g(t));
        x2.insert(t, v);
    }
    // t < 0: x²_{t+1} = α x²_t + g_t, contracting forwards
    let mut v = 0.0;
    for t in lo..0 {
        v = alpha * v + g(t);
        if t + 1 < 0 {
            x2.insert(t + 1, v);
        }
    }
    x2.insert(lo, 0.0);
    TruncatedSequence::from_fn(window, 2, |t| DVector::from_vec(vec![x1(t), *x2.get(&t).unwrap_or(&0.0)]))
}

/// General solution of the triangular family through `ξ` at `t = 0`, by direct
/// forward and backward recursion.
pub fn oracle_solution(alpha: f64, delta: f64, power: i32, lambda: f64, xi: [f64; 2], t: i64) -> [f64; 2] {
    let tri = Triangular { alpha, delta, power };
    let mut x = xi;
    if t >= 0 {
        for s in 0..t {
            let v = tri.eval(s, &x, lambda);
            x = [v[0], v[1]];
        }
    } else {
        for s in (t..0).rev() {
            let x1 = x[0] / tri.b(s);
            let x2 = (x[1] - lambda * x1 - tri.nonlinear(x1)) / tri.c(s);
            x = [x1, x2];
        }
    }
    x
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialTerm {
    /// 1-based component of the right-hand side the term contributes to.
    pub component: usize,
    pub coefficient: f64,
    pub powers: Vec<u32>,
    #[serde(default)]
    pub lambda_power: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Forcing {
    pub vector: Vec<f64>,
    pub rate: f64,
}

/// `f_t(x, λ) = (A_t + λB) x + λ r^|t| v + Σ c λ^m x^k` with `A_t` taken from
/// the `minus` table for `t < 0` and the `plus` table otherwise.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub dim: usize,
    pub minus: Vec<Vec<Vec<f64>>>,
    pub plus: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub lambda_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub forcing: Option<Forcing>,
    #[serde(default)]
    pub terms: Vec<PolynomialTerm>,
    #[serde(default)]
    pub lambda_star: f64,
}

#[derive(Debug, Clone)]
struct Tabulated {
    dim: usize,
    minus: Vec<DMatrix<f64>>,
    plus: Vec<DMatrix<f64>>,
    coupling: DMatrix<f64>,
    forcing: Option<(DVector<f64>, f64)>,
    terms: Vec<PolynomialTerm>,
}

fn matrix(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return invalid(format!("matrices must be {d}x{d}"));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl Tabulated {
    fn from_spec(spec: &CustomSpec) -> Result<Self> {
        let d = spec.dim;
        if d == 0 || d > 16 {
            return invalid("custom models need 1 <= dim <= 16");
        }
        let minus = spec.minus.iter().map(|m| matrix(m, d)).collect::<Result<Vec<_>>>()?;
        let plus = spec.plus.iter().map(|m| matrix(m, d)).collect::<Result<Vec<_>>>()?;
        if minus.is_empty() || plus.is_empty() {
            return invalid("coefficient tables must be nonempty");
        }
        let coupling = match &spec.lambda_matrix {
            Some(m) => matrix(m, d)?,
            None => DMatrix::zeros(d, d),
        };
        let forcing = match &spec.forcing {
            Some(f) if f.vector.len() == d && f.rate.abs() < 1.0 => Some((DVector::from_column_slice(&f.vector), f.rate)),
            Some(_) => return invalid("forcing needs a vector of length dim and |rate| < 1"),
            None => None,
        };
        for term in &spec.terms {
            if term.component == 0 || term.component > d || term.powers.len() != d {
                return invalid("polynomial terms need 1 <= component <= dim and one power per component");
            }
            if term.powers.iter().sum::<u32>() < 2 {
                return invalid("polynomial terms must have total degree >= 2 (linear parts go into the tables)");
            }
        }
        Ok(Self { dim: d, minus, plus, coupling, forcing, terms: spec.terms.clone() })
    }

    fn linear(&self, t: i64, lambda: f64) -> DMatrix<f64> {
        let table = if t < 0 { &self.minus } else { &self.plus };
        &table[t.rem_euclid(table.len() as i64) as usize] + &self.coupling * lambda
    }

    fn poly(&self, x: &[f64], lambda: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for term in &self.terms {
            let mono: f64 = term.powers.iter().zip(x).map(|(k, v)| v.powi(*k as i32)).product();
            out[term.component - 1] += term.coefficient * lambda.powi(term.lambda_power as i32) * mono;
        }
        out
    }

    fn poly_jacobian(&self, x: &[f64], lambda: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for term in &self.terms {
            let c = term.coefficient * lambda.powi(term.lambda_power as i32);
            for j in 0..self.dim {
                let kj = term.powers[j];
                if kj == 0 {
                    continue;
                }
                let mut m = c * kj as f64 * x[j].powi(kj as i32 - 1);
                for (i, (k, v)) in term.powers.iter().zip(x).enumerate() {
                    if i != j {
                        m *= v.powi(*k as i32);
                    }
                }
                out[(term.component - 1, j)] += m;
            }
        }
        out
    }

    fn poly_param(&self, x: &[f64], lambda: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for term in &self.terms {
            if term.lambda_power == 0 {
                continue;
            }
            let mono: f64 = term.powers.iter().zip(x).map(|(k, v)| v.powi(*k as i32)).product();
            out[term.component - 1] += term.coefficient * term.lambda_power as f64 * lambda.powi(term.lambda_power as i32 - 1) * mono;
        }
        out
    }

    /// Lower-triangular tables with terms feeding only later components.
    fn is_cascade(&self) -> bool {
        let tri = |m: &DMatrix<f64>| (0..self.dim).all(|i| (i + 1..self.dim).all(|j| m[(i, j)] == 0.0));
        self.minus.iter().chain(&self.plus).all(tri)
            && tri(&self.coupling)
            && self.terms.iter().all(|t| t.powers.iter().enumerate().all(|(j, k)| *k == 0 || j + 1 < t.component))
    }

    fn limit(&self, side_minus: bool, lambda: f64) -> LimitSystem {
        let table = if side_minus { self.minus.clone() } else { self.plus.clone() };
        let mats: Vec<DMatrix<f64>> = table.iter().map(|m| m + &self.coupling * lambda).collect();
        let p = mats.len();
        let me = self.clone();
        let me2 = self.clone();
        let m1 = mats.clone();
        let m2 = mats.clone();
        let at = move |m: &Vec<DMatrix<f64>>, t: i64| m[t.rem_euclid(p as i64) as usize].clone();
        let cascade = self
            .is_cascade()
            .then(|| mats.iter().map(|m| (0..self.dim).map(|i| m[(i, i)]).collect()).collect());
        let semilinear = self
            .terms
            .is_empty()
            .then(|| SemilinearSplit { linear: PeriodicTable::new(mats.clone()).expect("table"), remainder_lipschitz: 0.0 });
        LimitSystem {
            period: p,
            dim: self.dim,
            map: Arc::new(move |t, x| at(&m1, t) * DVector::from_column_slice(x) + me.poly(x, lambda)),
            jacobian: Arc::new(move |t, x| m2[t.rem_euclid(p as i64) as usize].clone() + me2.poly_jacobian(x, lambda)),
            lipschitz: None,
            semilinear,
            cascade,
        }
    }
}

impl RightHandSide for Tabulated {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: i64, x: &[f64], lambda: f64) -> DVector<f64> {
        let mut v = self.linear(t, lambda) * DVector::from_column_slice(x) + self.poly(x, lambda);
        if let Some((b, r)) = &self.forcing {
            v += b * (lambda * r.powi(t.unsigned_abs() as i32));
        }
        v
    }

    fn jacobian(&self, t: i64, x: &[f64], lambda: f64) -> DMatrix<f64> {
        self.linear(t, lambda) + self.poly_jacobian(x, lambda)
    }

    fn param_derivative(&self, t: i64, x: &[f64], lambda: f64) -> DVector<f64> {
        let mut v = &self.coupling * DVector::from_column_slice(x) + self.poly_param(x, lambda);
        if let Some((b, r)) = &self.forcing {
            v += b * r.powi(t.unsigned_abs() as i32);
        }
        v
    }
}

pub fn build_custom(spec: &CustomSpec) -> Result<ParametricModel> {
    let tab = Tabulated::from_spec(spec)?;
    let t2 = tab.clone();
    let limits: LimitFactory = Arc::new(move |l| (t2.limit(true, l), t2.limit(false, l)));
    let reference = zero_reference(tab.dim, spec.lambda_star);
    assemble("custom", Arc::new(tab), Some(limits), reference, (f64::NEG_INFINITY, f64::INFINITY))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Json,
    Toml,
}

/// Parses `{"model": name, ...parameters}` (or a custom specification) from
/// JSON or TOML text.
pub fn from_config(text: &str, format: ConfigFormat) -> Result<(String, ParametricModel)> {
    let value: serde_json::Value = match format {
        ConfigFormat::Json => serde_json::from_str(text)?,
        ConfigFormat::Toml => toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?,
    };
    let serde_json::Value::Object(mut map) = value else {
        return Err(Error::Parse("configuration must be an object".into()));
    };
    let Some(serde_json::Value::String(name)) = map.remove("model") else {
        return Err(Error::Parse("configuration needs a string field `model`".into()));
    };
    if name == "custom" {
        let spec: CustomSpec = serde_json::from_value(serde_json::Value::Object(map))?;
        return Ok((name, build_custom(&spec)?));
    }
    let params: Params = serde_json::from_value(serde_json::Value::Object(map))?;
    let model = build(&name, &params)?;
    Ok((name, model))
}

//! Finitely supported sequences on integer windows.

use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::max_norm;

/// Integer interval `[t_minus, t_plus]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    t_minus: i64,
    t_plus: i64,
}

impl Window {
    pub fn new(t_minus: i64, t_plus: i64) -> Result<Self> {
        if t_minus >= t_plus || t_plus - t_minus + 1 < 3 {
            return invalid(format!("window [{t_minus}, {t_plus}] must contain at least 3 points"));
        }
        Ok(Self { t_minus, t_plus })
    }

    /// `[-half, half]`.
    pub fn symmetric(half: i64) -> Result<Self> {
        Self::new(-half, half)
    }

    pub fn t_minus(&self) -> i64 {
        self.t_minus
    }

    pub fn t_plus(&self) -> i64 {
        self.t_plus
    }

    pub fn len(&self) -> usize {
        (self.t_plus - self.t_minus + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: i64) -> bool {
        t >= self.t_minus && t <= self.t_plus
    }

    pub fn index_of(&self, t: i64) -> Option<usize> {
        self.contains(t).then(|| (t - self.t_minus) as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> {
        self.t_minus..=self.t_plus
    }

    pub fn shifted(&self, l: i64) -> Self {
        Self { t_minus: self.t_minus - l, t_plus: self.t_plus - l }
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        self.t_minus <= other.t_minus && other.t_plus <= self.t_plus
    }

    pub fn hull(&self, other: &Window) -> Self {
        Self { t_minus: self.t_minus.min(other.t_minus), t_plus: self.t_plus.max(other.t_plus) }
    }

    /// Sub-window clipped to `[lo, hi]`; `None` if fewer than 3 points remain.
    pub fn clip(&self, lo: i64, hi: i64) -> Option<Self> {
        Self::new(self.t_minus.max(lo), self.t_plus.min(hi)).ok()
    }
}

/// Exponential decay bound `|φ_t| <= C ρ^|t|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub constant: f64,
    pub rate: f64,
}

impl DecayEnvelope {
    pub fn new(constant: f64, rate: f64) -> Result<Self> {
        if !(constant >= 0.0) || !(rate > 0.0 && rate < 1.0) {
            return invalid(format!("decay envelope needs C >= 0 and 0 < rho < 1, got C={constant}, rho={rate}"));
        }
        Ok(Self { constant, rate })
    }

    pub fn bound(&self, t: i64) -> f64 {
        self.constant * self.rate.powi(t.unsigned_abs() as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub holds: bool,
    /// Violating index of smallest modulus (negative side first on ties).
    pub first_violation: Option<i64>,
}

/// Values `φ_t ∈ R^d` on a window; zero outside of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSequence {
    window: Window,
    dim: usize,
    data: Vec<f64>,
}

impl TruncatedSequence {
    pub fn zeros(window: Window, dim: usize) -> Self {
        Self { window, dim, data: vec![0.0; window.len() * dim] }
    }

    pub fn from_flat(window: Window, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return invalid("dimension must be positive");
        }
        if data.len() != window.len() * dim {
            return invalid(format!(
                "expected {} values for a window of {} points in dimension {dim}, got {}",
                window.len() * dim,
                window.len(),
                data.len()
            ));
        }
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return invalid(format!("non-finite entry at t = {}", window.t_minus() + (k / dim) as i64));
        }
        Ok(Self { window, dim, data })
    }

    pub fn from_fn(window: Window, dim: usize, mut f: impl FnMut(i64) -> DVector<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(window.len() * dim);
        for t in window.iter() {
            let v = f(t);
            if v.len() != dim {
                return invalid(format!("value at t = {t} has dimension {}, expected {dim}", v.len()));
            }
            data.extend(v.iter());
        }
        Self::from_flat(window, dim, data)
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Entry at `t`, or zeros outside the window.
    pub fn at(&self, t: i64) -> &[f64] {
        const ZERO: [f64; 16] = [0.0; 16];
        match self.window.index_of(t) {
            Some(i) => &self.data[i * self.dim..(i + 1) * self.dim],
            None if self.dim <= 16 => &ZERO[..self.dim],
            None => panic!("zero extension only supported up to dimension 16"),
        }
    }

    pub fn value(&self, t: i64) -> DVector<f64> {
        match self.window.index_of(t) {
            Some(i) => DVector::from_column_slice(&self.data[i * self.dim..(i + 1) * self.dim]),
            None => DVector::zeros(self.dim),
        }
    }

    pub fn set(&mut self, t: i64, v: &[f64]) {
        let i = self.window.index_of(t).expect("index inside window");
        self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
    }

    pub fn sup_norm(&self) -> f64 {
        max_norm(&self.data)
    }

    pub fn norm_at(&self, t: i64) -> f64 {
        max_norm(self.at(t))
    }

    /// `(Sφ)_t = φ_{t+l}`, so the data is carried onto the window shifted by `l`.
    pub fn shift(&self, l: i64) -> Self {
        Self { window: self.window.shifted(l), dim: self.dim, data: self.data.clone() }
    }

    /// Restriction or zero extension to another window.
    pub fn on_window(&self, window: Window) -> Self {
        let mut out = Self::zeros(window, self.dim);
        for t in window.iter() {
            if self.window.contains(t) {
                out.set(t, self.at(t));
            }
        }
        out
    }

    /// Sup-distance with zero extension of both operands.
    pub fn distance(&self, other: &Self) -> f64 {
        let w = self.window.hull(&other.window);
        w.iter()
            .map(|t| {
                self.at(t)
                    .iter()
                    .zip(other.at(t))
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0, f64::max)
    }

    /// Largest norm among the `k` outermost points on each side.
    pub fn tails(&self, k: usize) -> (f64, f64) {
        let n = self.window.len().min(k);
        let left = (0..n).map(|i| self.norm_at(self.window.t_minus() + i as i64)).fold(0.0, f64::max);
        let right = (0..n).map(|i| self.norm_at(self.window.t_plus() - i as i64)).fold(0.0, f64::max);
        (left, right)
    }

    pub fn check_envelope(&self, env: &DecayEnvelope) -> EnvelopeCheck {
        let mut ts: Vec<i64> = self.window.iter().collect();
        ts.sort_by_key(|t| (t.unsigned_abs(), *t));
        let bad = ts.into_iter().find(|&t| self.norm_at(t) > env.bound(t));
        EnvelopeCheck { holds: bad.is_none(), first_violation: bad }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        wr.write_record(&header)?;
        for t in self.window.iter() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.at(t).iter().map(|x| format!("{x:e}")));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.is_empty() || &header[0] != "t" {
            return Err(Error::Parse("first CSV column must be `t`".into()));
        }
        let dim = header.len() - 1;
        for (i, h) in header.iter().skip(1).enumerate() {
            if h != format!("x{}", i + 1) {
                return Err(Error::Parse(format!("unexpected CSV column `{h}`")));
            }
        }
        let mut ts = Vec::new();
        let mut data = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let t: i64 = rec[0].trim().parse().map_err(|_| Error::Parse(format!("bad index `{}`", &rec[0])))?;
            if let Some(&prev) = ts.last() {
                if t != prev + 1 {
                    return Err(Error::Parse(format!("indices must be consecutive, got {prev} then {t}")));
                }
            }
            ts.push(t);
            for k in 1..=dim {
                let x: f64 = rec[k].trim().parse().map_err(|_| Error::Parse(format!("bad value `{}`", &rec[k])))?;
                data.push(x);
            }
        }
        if ts.is_empty() {
            return Err(Error::Parse("empty sequence".into()));
        }
        let window = Window::new(ts[0], *ts.last().unwrap())?;
        Self::from_flat(window, dim, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geometric(half: i64) -> TruncatedSequence {
        let w = Window::symmetric(half).unwrap();
        TruncatedSequence::from_fn(w, 1, |t| DVector::from_element(1, 0.5f64.powi(t.abs() as i32))).unwrap()
    }

    #[test]
    fn window_rejects_short_and_reversed() {
        assert!(Window::new(0, 1).is_err());
        assert!(Window::new(3, -3).is_err());
        assert_eq!(Window::new(-1, 1).unwrap().len(), 3);
    }

    #[test]
    fn geometric_sequence_norm_and_envelope() {
        let phi = geometric(10);
        assert_eq!(phi.sup_norm(), 1.0);
        let ok = phi.check_envelope(&DecayEnvelope::new(1.0, 0.5).unwrap());
        assert!(ok.holds);
        let bad = phi.check_envelope(&DecayEnvelope::new(1.0, 0.4).unwrap());
        assert!(!bad.holds);
        assert_eq!(bad.first_violation.map(i64::abs), Some(1));
    }

    #[test]
    fn shift_moves_the_window() {
        let phi = geometric(5);
        let s = phi.shift(2);
        assert_eq!(s.window(), Window::new(-7, 3).unwrap());
        assert_eq!(s.at(-2), phi.at(0));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let w = Window::symmetric(1).unwrap();
        assert!(TruncatedSequence::from_flat(w, 1, vec![0.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let w = Window::new(-3, 4).unwrap();
        let phi = TruncatedSequence::from_fn(w, 2, |t| DVector::from_vec(vec![t as f64 * 0.1, 1.0 / (1.0 + t as f64 * t as f64)])).unwrap();
        let mut buf = Vec::new();
        phi.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
        let back = TruncatedSequence::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, phi);
    }

    #[test]
    fn csv_rejects_gaps() {
        let text = "t,x1\n0,1\n2,1\n3,1\n";
        assert!(TruncatedSequence::read_csv(text.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn shift_is_an_isometry(vals in proptest::collection::vec(-1e3f64..1e3, 6..40), l in -50i64..50) {
            let w = Window::new(-2, vals.len() as i64 - 3).unwrap();
            let phi = TruncatedSequence::from_flat(w, 1, vals).unwrap();
            prop_assert_eq!(phi.shift(l).sup_norm(), phi.sup_norm());
            prop_assert_eq!(phi.shift(l).shift(-l), phi);
        }

        #[test]
        fn zero_extension_keeps_the_norm(vals in proptest::collection::vec(-1.0f64..1.0, 6..30), pad in 0i64..10) {
            let w = Window::new(0, vals.len() as i64 / 2 - 1).unwrap();
            let phi = TruncatedSequence::from_flat(w, 2, vals[..w.len() * 2].to_vec()).unwrap();
            let big = Window::new(w.t_minus() - pad, w.t_plus() + pad).unwrap();
            let ext = phi.on_window(big);
            prop_assert_eq!(ext.sup_norm(), phi.sup_norm());
            prop_assert_eq!(ext.distance(&phi), 0.0);
        }
    }
}

//! Dense helpers on small matrices and the banded least-squares solver used by
//! the Newton and continuation correctors.

use nalgebra::{Complex, DMatrix, DVector};

/// Max-norm of a vector.
pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Operator norm induced by the max-norm (maximal absolute row sum).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn identity(d: usize) -> DMatrix<f64> {
    DMatrix::identity(d, d)
}

/// Orthonormal basis of the column space, assuming full column rank.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, c) = m.shape();
    if c == 0 {
        return DMatrix::zeros(d, 0);
    }
    let q = m.clone().qr().q();
    q.columns(0, c).into_owned()
}

/// Orthonormal basis of the orthogonal complement of span(basis).
pub fn orth_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let d = basis.nrows();
    let m = basis.ncols();
    if m == 0 {
        return identity(d);
    }
    if m >= d {
        return DMatrix::zeros(d, 0);
    }
    let q = orthonormalize(basis);
    let comp = identity(d) - &q * q.transpose();
    let eig = comp.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = DMatrix::zeros(d, d - m);
    for (j, &k) in order.iter().take(d - m).enumerate() {
        out.set_column(j, &eig.eigenvectors.column(k));
    }
    out
}

/// Smallest singular value divided by the largest one.
pub fn inverse_condition(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Projector with range span(range) and kernel span(kernel); the two bases
/// must have complementary dimensions. `None` when they are not transversal.
pub fn projector(range: &DMatrix<f64>, kernel: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let d = range.nrows();
    let k = range.ncols();
    if k + kernel.ncols() != d {
        return None;
    }
    let mut m = DMatrix::zeros(d, d);
    m.columns_mut(0, k).copy_from(range);
    m.columns_mut(k, d - k).copy_from(kernel);
    if inverse_condition(&m) <= tol {
        return None;
    }
    let inv = m.clone().try_inverse()?;
    let mut sel = DMatrix::zeros(d, d);
    for i in 0..k {
        sel[(i, i)] = 1.0;
    }
    Some(&m * sel * inv)
}

/// Basis of the range of a projector (rank taken as the rounded trace).
pub fn projector_range(p: &DMatrix<f64>) -> DMatrix<f64> {
    let d = p.nrows();
    let k = (p.trace().round().max(0.0) as usize).min(d);
    if k == 0 {
        return DMatrix::zeros(d, 0);
    }
    let svd = p.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = DMatrix::zeros(d, k);
    for (j, &c) in order.iter().take(k).enumerate() {
        out.set_column(j, &u.column(c));
    }
    out
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().cloned().collect()
}

/// Spectral projector onto the generalized eigenspace of eigenvalues inside
/// the open unit disk, computed via the matrix sign function of the Cayley
/// transform. Fails when an eigenvalue sits on the unit circle.
pub fn stable_projector(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = m.nrows();
    if d == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let id = identity(d);
    let plus_inv = (m + &id).try_inverse()?;
    let mut x = (m - &id) * plus_inv;
    for _ in 0..200 {
        let xinv = x.clone().try_inverse()?;
        let step = (&x - &xinv).norm() / x.norm().max(1.0);
        let scale = if step > 1e-2 {
            let det = x.determinant().abs();
            if det.is_finite() && det > 0.0 {
                det.powf(-1.0 / d as f64)
            } else {
                1.0
            }
        } else {
            1.0
        };
        let next = (&x * scale + xinv / scale) * 0.5;
        let change = (&next - &x).norm();
        x = next;
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        if change <= 1e-14 * x.norm().max(1.0) {
            break;
        }
    }
    Some((id - x) * 0.5)
}

/// Moore–Penrose solve `pinv(m) * rhs` through a QR of `m` (full column rank).
pub fn left_pseudo_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let c = m.ncols();
    if c == 0 {
        return Some(DMatrix::zeros(0, rhs.ncols()));
    }
    let qr = m.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qt_rhs = q.columns(0, c).transpose() * rhs;
    r.rows(0, c).into_owned().solve_upper_triangular(&qt_rhs)
}

/// Least-squares solve of a small dense system; `None` if rank deficient.
pub fn dense_least_squares(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Option<DVector<f64>> {
    if a.ncols() == 0 {
        return Some(DVector::zeros(0));
    }
    let svd = a.clone().svd(true, true);
    let hi = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let lo = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if a.nrows() < a.ncols() || hi == 0.0 || lo <= rcond * hi {
        return None;
    }
    svd.solve(b, 0.0).ok()
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}


pub(crate) fn serialize_opt_matrix<S: serde::Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&m.as_ref().map(matrix_rows), s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveFailure {
    Singular,
    Underdetermined,
}

#[derive(Debug, Clone)]
struct BandRow {
    lo: usize,
    vals: Vec<f64>,
    extra: Vec<f64>,
    rhs: f64,
}

impl BandRow {
    fn end(&self) -> usize {
        self.lo + self.vals.len()
    }

    fn get(&self, c: usize) -> f64 {
        if c >= self.lo && c < self.end() {
            self.vals[c - self.lo]
        } else {
            0.0
        }
    }

    fn cover(&mut self, start: usize, end: usize) {
        if start < self.lo {
            let mut v = vec![0.0; self.lo - start];
            v.extend_from_slice(&self.vals);
            self.vals = v;
            self.lo = start;
        }
        if end > self.end() {
            let n = end - self.lo;
            self.vals.resize(n, 0.0);
        }
    }
}

/// A dense row coupling all band unknowns and the extra unknowns.
#[derive(Debug, Clone)]
pub struct DenseRow {
    pub band: Vec<f64>,
    pub extra: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct BandSolution {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

/// Sparse rows with a contiguous block of nonzeros, optionally bordered by a
/// few dense columns (`extra`) and dense rows. Solved in the least-squares
/// sense by Givens QR that exploits the band structure.
#[derive(Debug, Clone)]
pub struct BandedSystem {
    ncols: usize,
    nextra: usize,
    rows: Vec<BandRow>,
}

impl BandedSystem {
    pub fn new(ncols: usize, nextra: usize) -> Self {
        Self { ncols, nextra, rows: Vec::new() }
    }

    pub fn push_row(&mut self, lo: usize, vals: &[f64], extra: &[f64], rhs: f64) {
        debug_assert!(lo + vals.len() <= self.ncols);
        debug_assert!(extra.len() == self.nextra);
        self.rows.push(BandRow { lo, vals: vals.to_vec(), extra: extra.to_vec(), rhs });
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    /// Same matrix with a zero right-hand side.
    pub fn with_zero_rhs(&self) -> Self {
        let mut out = self.clone();
        out.rows.iter_mut().for_each(|r| r.rhs = 0.0);
        out
    }

    fn to_dense(&self, dense: &[DenseRow]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.ncols + self.nextra;
        let m = self.rows.len() + dense.len();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for (i, r) in self.rows.iter().enumerate() {
            for (k, v) in r.vals.iter().enumerate() {
                a[(i, r.lo + k)] = *v;
            }
            for (k, v) in r.extra.iter().enumerate() {
                a[(i, self.ncols + k)] = *v;
            }
            b[i] = r.rhs;
        }
        for (j, r) in dense.iter().enumerate() {
            let i = self.rows.len() + j;
            for (k, v) in r.band.iter().enumerate() {
                a[(i, k)] = *v;
            }
            for (k, v) in r.extra.iter().enumerate() {
                a[(i, self.ncols + k)] = *v;
            }
            b[i] = r.rhs;
        }
        (a, b)
    }

    fn solve_dense(&self, dense: &[DenseRow]) -> Result<BandSolution, SolveFailure> {
        let (a, b) = self.to_dense(dense);
        let sol = dense_least_squares(&a, &b, 1e-13).ok_or(SolveFailure::Singular)?;
        Ok(BandSolution {
            x: sol.rows(0, self.ncols).iter().cloned().collect(),
            z: sol.rows(self.ncols, self.nextra).iter().cloned().collect(),
        })
    }

    /// Least-squares solution of the bordered system.
    pub fn solve(&self, dense: &[DenseRow]) -> Result<BandSolution, SolveFailure> {
        let n = self.ncols;
        let c = self.nextra;
        if self.rows.len() + dense.len() < n + c {
            return Err(SolveFailure::Underdetermined);
        }
        if self.rows.len() < n {
            return self.solve_dense(dense);
        }
        let mut rows = self.rows.clone();
        rows.sort_by_key(|r| r.lo);
        let m = rows.len();
        // cnt[j]: number of rows whose original first nonzero column is <= j
        let mut cnt = vec![0usize; n];
        let mut p = 0;
        for (j, slot) in cnt.iter_mut().enumerate() {
            while p < m && rows[p].lo <= j {
                p += 1;
            }
            *slot = p;
        }
        for j in 0..n {
            for i in (j + 1)..cnt[j].max(j + 1) {
                let x = rows[i].get(j);
                if x == 0.0 {
                    continue;
                }
                let a = rows[j].get(j);
                let r = a.hypot(x);
                let (cs, sn) = (a / r, x / r);
                let end = rows[i].end().max(rows[j].end());
                let (head, tail) = rows.split_at_mut(i);
                let pj = &mut head[j];
                let pi = &mut tail[0];
                pj.cover(j, end);
                pi.cover(j, end);
                for col in j..end {
                    let u = pj.vals[col - pj.lo];
                    let v = pi.vals[col - pi.lo];
                    pj.vals[col - pj.lo] = cs * u + sn * v;
                    pi.vals[col - pi.lo] = -sn * u + cs * v;
                }
                for k in 0..c {
                    let u = pj.extra[k];
                    let v = pi.extra[k];
                    pj.extra[k] = cs * u + sn * v;
                    pi.extra[k] = -sn * u + cs * v;
                }
                let (u, v) = (pj.rhs, pi.rhs);
                pj.rhs = cs * u + sn * v;
                pi.rhs = -sn * u + cs * v;
                // drop the annihilated leading entry
                let drop = (j + 1 - pi.lo).min(pi.vals.len());
                pi.vals.drain(0..drop);
                pi.lo = j + 1;
            }
        }
        let diag: Vec<f64> = (0..n).map(|j| rows[j].get(j).abs()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if dmax == 0.0 || dmin <= 1e-10 * dmax {
            return self.solve_dense(dense);
        }
        let back = |rhs: &dyn Fn(usize) -> f64| -> Vec<f64> {
            let mut x = vec![0.0; n];
            for j in (0..n).rev() {
                let row = &rows[j];
                let mut s = rhs(j);
                for col in (j + 1)..row.end() {
                    s -= row.vals[col - row.lo] * x[col];
                }
                x[j] = s / row.vals[j - row.lo];
            }
            x
        };
        let u0 = back(&|j| rows[j].rhs);
        if c == 0 && dense.is_empty() {
            return Ok(BandSolution { x: u0, z: Vec::new() });
        }
        let us: Vec<Vec<f64>> = (0..c).map(|k| back(&|j| rows[j].extra[k])).collect();
        // With y = R x + E z - r free, each dense row reads w·y + a z - b where
        // Rᵀ w = f; eliminating y leaves the weight (I + WᵀW)^{-1} on those rows.
        let nd = dense.len();
        let ws: Vec<Vec<f64>> = dense
            .iter()
            .map(|drow| {
                let mut f = drow.band.clone();
                let mut w = vec![0.0; n];
                for j in 0..n {
                    let row = &rows[j];
                    w[j] = f[j] / row.vals[j - row.lo];
                    for col in (j + 1)..row.end() {
                        f[col] -= row.vals[col - row.lo] * w[j];
                    }
                }
                w
            })
            .collect();
        let mut gram = DMatrix::<f64>::identity(nd, nd);
        for r in 0..nd {
            for q in 0..nd {
                gram[(r, q)] += ws[r].iter().zip(&ws[q]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let chol = match gram.clone().cholesky() {
            Some(ch) => ch,
            None => return self.solve_dense(dense),
        };
        let mut ad = DMatrix::zeros(nd, c);
        let mut bd = DVector::zeros(nd);
        for (r, drow) in dense.iter().enumerate() {
            let fu0: f64 = drow.band.iter().zip(&u0).map(|(f, u)| f * u).sum();
            for k in 0..c {
                let fu: f64 = drow.band.iter().zip(&us[k]).map(|(f, u)| f * u).sum();
                ad[(r, k)] = drow.extra[k] - fu;
            }
            bd[r] = drow.rhs - fu0;
        }
        let l = chol.l();
        let lad = l.solve_lower_triangular(&ad).expect("cholesky factor");
        let lbd = l.solve_lower_triangular(&bd).expect("cholesky factor");
        let z = if c == 0 {
            DVector::zeros(0)
        } else {
            let nr = (m - n) + nd;
            let mut a = DMatrix::zeros(nr, c);
            let mut b = DVector::zeros(nr);
            for (i, row) in rows[n..].iter().enumerate() {
                for k in 0..c {
                    a[(i, k)] = row.extra[k];
                }
                b[i] = row.rhs;
            }
            for r in 0..nd {
                for k in 0..c {
                    a[(m - n + r, k)] = lad[(r, k)];
                }
                b[m - n + r] = lbd[r];
            }
            match dense_least_squares(&a, &b, 1e-13) {
                Some(z) => z,
                None => return self.solve_dense(dense),
            }
        };
        // y = -W M^{-1} (A z - b), x = R^{-1}(y + r) - U z
        let v = &ad * &z - &bd;
        let mv = chol.solve(&v);
        let mut y = vec![0.0; n];
        for r in 0..nd {
            for j in 0..n {
                y[j] -= ws[r][j] * mv[r];
            }
        }
        let mut x = if nd > 0 { back(&|j| rows[j].rhs + y[j]) } else { u0 };
        for k in 0..c {
            for j in 0..n {
                x[j] -= us[k][j] * z[k];
            }
        }
        Ok(BandSolution { x, z: z.iter().cloned().collect() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(rng: &mut ChaCha8Rng, n: usize, extra: usize, overdet: usize) -> BandedSystem {
        let mut sys = BandedSystem::new(n, extra);
        for i in 0..(n + overdet) {
            let lo = (i.saturating_sub(overdet)).min(n - 1);
            let w = (n - lo).min(3);
            let vals: Vec<f64> = (0..w).map(|k| if k == 0 { 3.0 } else { rng.gen_range(-1.0..1.0) }).collect();
            let ex: Vec<f64> = (0..extra).map(|_| rng.gen_range(-1.0..1.0)).collect();
            sys.push_row(lo, &vals, &ex, rng.gen_range(-1.0..1.0));
        }
        sys
    }

    #[test]
    fn band_matches_dense_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (extra, overdet) in [(0, 0), (0, 2), (1, 0), (1, 3)] {
            let n = 17;
            let sys = random_band(&mut rng, n, extra, overdet);
            let dense: Vec<DenseRow> = (0..extra)
                .map(|_| DenseRow {
                    band: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    extra: vec![2.0; extra],
                    rhs: 0.3,
                })
                .collect();
            let got = sys.solve(&dense).unwrap();
            let want = sys.solve_dense(&dense).unwrap();
            for (a, b) in got.x.iter().zip(&want.x) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            for (a, b) in got.z.iter().zip(&want.z) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_band_is_reported() {
        let mut sys = BandedSystem::new(2, 0);
        sys.push_row(0, &[1.0, 1.0], &[], 1.0);
        sys.push_row(0, &[2.0, 2.0], &[], 2.0);
        assert_eq!(sys.solve(&[]).unwrap_err(), SolveFailure::Singular);
    }

    #[test]
    fn stable_projector_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        let p = stable_projector(&m).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-13 && p[(1, 1)].abs() < 1e-13);
        assert!(p[(0, 1)].abs() < 1e-13 && p[(1, 0)].abs() < 1e-13);
    }

    #[test]
    fn stable_projector_commutes_and_is_idempotent() {
        let m = DMatrix::from_row_slice(3, 3, &[0.3, 1.0, 0.2, -0.4, 0.1, 0.0, 0.5, 2.0, 3.0]);
        let p = stable_projector(&m).unwrap();
        assert!((&p * &p - &p).norm() < 1e-10);
        assert!((&p * &m - &m * &p).norm() < 1e-10);
        let stable = eigenvalues(&m).iter().filter(|z| z.norm() < 1.0).count();
        assert_eq!(p.trace().round() as usize, stable);
    }

    #[test]
    fn complement_is_orthogonal() {
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 2.0]);
        let c = orth_complement(&b);
        assert_eq!(c.ncols(), 2);
        assert!((b.transpose() * &c).norm() < 1e-12);
    }

    #[test]
    fn op_norm_is_max_row_sum() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.5]);
        assert_eq!(op_norm(&m), 3.0);
    }
}

//! Dense complex linear algebra for small Hamiltonians.
//!
//! Spin Hamiltonians here are at most a few tens of levels, so a cyclic
//! Jacobi eigensolver is plenty and keeps the crate dependency-free. Real
//! helpers (Gaussian elimination, inverse) back the least-squares fitters.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    n: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        CMat {
            n,
            data: vec![Complex64::ZERO; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n);
        for i in 0..n {
            m[(i, i)] = Complex64::ONE;
        }
        m
    }

    /// Real diagonal matrix.
    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = CMat::zeros(d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = Complex64::new(x, 0.0);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adjoint(&self) -> CMat {
        let mut out = CMat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out[(i, j)] = self[(j, i)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        let n = self.n;
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == Complex64::ZERO {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    /// self += c * other
    pub fn scaled_add(&mut self, c: f64, other: &CMat) {
        assert_eq!(self.n, other.n, "dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// max |a_ij - conj(a_ji)|
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for j in i..self.n {
                let d = (self[(i, j)] - self[(j, i)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.n).map(|i| self[(i, j)]).collect()
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.n + j]
    }
}

/// Result of a Hermitian eigendecomposition: `values` ascending, `vectors`
/// holding the matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

/// Relative Hermiticity tolerance accepted by [`eigh`].
pub const HERMITICITY_TOL: f64 = 1e-9;

/// Off-diagonal convergence target relative to the Frobenius norm.
const JACOBI_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 64;

/// Diagonalize a Hermitian matrix by cyclic complex Jacobi rotations.
///
/// Rejects inputs whose Hermiticity deviation exceeds `1e-9` relative to
/// the largest entry. Eigenvalues come back ascending; the eigenvector
/// matrix is unitary to the convergence level of the sweep.
pub fn eigh(m: &CMat) -> Result<Eigh> {
    let n = m.n();
    if n == 0 {
        return Ok(Eigh {
            values: vec![],
            vectors: CMat::zeros(0),
        });
    }
    let scale = m.max_abs();
    let herm = m.hermiticity_error();
    let tol = HERMITICITY_TOL * scale.max(f64::MIN_POSITIVE);
    if herm > tol {
        return Err(Error::NotHermitian {
            deviation: herm,
            tol,
        });
    }

    // Symmetrize so rounding in the input cannot drift the iteration.
    let mut a = CMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)].conj());
        }
    }
    let mut v = CMat::identity(n);
    let norm = a.frobenius().max(f64::MIN_POSITIVE);
    let target = JACOBI_TOL * norm;

    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += 2.0 * a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= target {
            return Ok(finish_eigh(a, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= target / (n as f64) {
                    continue;
                }
                // Phase u makes the (p,q) entry real positive, then a real
                // Jacobi rotation annihilates it. Combined plane rotation:
                //   J_pp = c, J_pq = s, J_qp = -s*u, J_qq = c*u.
                let u = apq.conj() / r;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // A <- J^H A J, applied as column then row updates.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * u * akq;
                    a[(k, q)] = s * akp + c * u * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * u.conj() * aqk;
                    a[(q, k)] = s * apk + c * u.conj() * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * u * vkq;
                    v[(k, q)] = s * vkp + c * u * vkq;
                }
            }
        }
        let _ = sweep;
    }
    Err(Error::EigenNoConvergence { sweeps: MAX_SWEEPS })
}

fn finish_eigh(a: CMat, v: CMat) -> Eigh {
    let n = a.n();
    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let mut vectors = CMat::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Eigh { values, vectors }
}

/// Solve `a x = b` for a small real system by Gaussian elimination with
/// partial pivoting. Returns `None` when the matrix is numerically singular.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x: Vec<f64> = b.to_vec();
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
        let row_scale: f64 = m[piv].iter().map(|v| v.abs()).fold(0.0, f64::max);
        if pmax <= 1e-14 * row_scale.max(f64::MIN_POSITIVE) || pmax == 0.0 {
            return None;
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for c in (col + 1)..n {
            s -= m[col][c] * x[c];
        }
        x[col] = s / m[col][col];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Inverse of a small real matrix, or `None` when singular.
pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve(a, &e)?);
    }
    let mut out = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            out[i][j] = col[i];
        }
    }
    Some(out)
}

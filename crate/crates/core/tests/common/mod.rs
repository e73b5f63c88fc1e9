//! Shared test helpers, including a brute-force Hermitian eigenvalue
//! solver that is independent of the library's Jacobi implementation:
//! the complex matrix is embedded as a real symmetric matrix of twice the
//! dimension, reduced to tridiagonal form by Householder reflections, and
//! its eigenvalues are located by Sturm-sequence bisection.

use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::Rng;
use wgmspec::linalg::CMat;
use wgmspec::spinham::{Spin, SpinSystem, StevensIndex};

/// Eigenvalues (ascending) of a Hermitian matrix by an independent route.
pub fn oracle_eigvalsh(h: &CMat) -> Vec<f64> {
    let n = h.n();
    if n == 0 {
        return vec![];
    }
    // real symmetric embedding [[A, -B], [B, A]] of H = A + iB doubles
    // every eigenvalue
    let m = 2 * n;
    let mut a = vec![vec![0.0_f64; m]; m];
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            a[i][j] = z.re;
            a[i + n][j + n] = z.re;
            a[i][j + n] = -z.im;
            a[i + n][j] = z.im;
        }
    }
    // enforce exact symmetry against rounding in the embedding
    for i in 0..m {
        for j in (i + 1)..m {
            let s = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = s;
            a[j][i] = s;
        }
    }
    let (d, e) = householder_tridiagonalize(&mut a);
    let doubled = sturm_bisection_eigenvalues(&d, &e);
    // take every second eigenvalue of the doubled spectrum
    (0..n).map(|k| doubled[2 * k]).collect()
}

/// Reduce a real symmetric matrix to tridiagonal form in place; returns
/// (diagonal, subdiagonal) with `e[0]` unused.
fn householder_tridiagonalize(a: &mut [Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = a.len();
    for k in 0..m.saturating_sub(2) {
        let norm: f64 = (k + 1..m).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[k + 1][k] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; m];
        for i in (k + 1)..m {
            v[i] = a[i][k];
        }
        v[k + 1] -= alpha;
        let beta: f64 = v.iter().map(|x| x * x).sum();
        if beta == 0.0 {
            continue;
        }
        // p = 2 A v / beta over the trailing block
        let mut p = vec![0.0; m];
        for i in k..m {
            let mut s = 0.0;
            for j in (k + 1)..m {
                s += a[i][j] * v[j];
            }
            p[i] = 2.0 * s / beta;
        }
        let kappa: f64 = (k + 1..m).map(|i| v[i] * p[i]).sum::<f64>() / beta;
        let mut q = vec![0.0; m];
        for i in k..m {
            q[i] = p[i] - kappa * v[i];
        }
        // A <- A - v q^T - q v^T
        for i in k..m {
            for j in k..m {
                a[i][j] -= v[i] * q[j] + q[i] * v[j];
            }
        }
        a[k + 1][k] = alpha;
        a[k][k + 1] = alpha;
        for i in (k + 2)..m {
            a[i][k] = 0.0;
            a[k][i] = 0.0;
        }
    }
    let d: Vec<f64> = (0..m).map(|i| a[i][i]).collect();
    let mut e = vec![0.0; m];
    for i in 1..m {
        e[i] = a[i][i - 1];
    }
    (d, e)
}

/// Number of eigenvalues of the tridiagonal (d, e) strictly below x.
fn sturm_count_below(d: &[f64], e: &[f64], x: f64, tiny: f64) -> usize {
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        if q == 0.0 {
            q = tiny;
        }
        q = (d[i] - x) - e[i] * e[i] / q;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// All eigenvalues of a symmetric tridiagonal matrix, ascending, located
/// by bisection on the Sturm count.
fn sturm_bisection_eigenvalues(d: &[f64], e: &[f64]) -> Vec<f64> {
    let m = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        let r = e[i].abs() + if i + 1 < m { e[i + 1].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(1.0);
    let tiny = f64::MIN_POSITIVE.max(1e-30 * scale);
    let tol = 1e-13 * scale;
    (0..m)
        .map(|k| {
            let (mut a, mut b) = (lo - tol, hi + tol);
            while b - a > tol {
                let mid = 0.5 * (a + b);
                if sturm_count_below(d, e, mid, tiny) <= k {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

/// Dense random Hermitian matrix with entries of order `scale`.
pub fn random_hermitian(n: usize, scale: f64, rng: &mut StdRng) -> CMat {
    let mut m = CMat::zeros(n);
    for i in 0..n {
        m[(i, i)] = Complex64::new(scale * rng.random_range(-1.0..1.0), 0.0);
        for j in (i + 1)..n {
            let z = Complex64::new(
                scale * rng.random_range(-1.0..1.0),
                scale * rng.random_range(-1.0..1.0),
            );
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

/// Random spin system over the supported Stevens set.
pub fn random_spin_system(rng: &mut StdRng) -> SpinSystem {
    let twice = rng.random_range(1..=9u32);
    let spin = Spin::from_twice(twice).unwrap();
    let lande_g = rng.random_range(0.3..8.0);
    let coeffs = [
        (StevensIndex::B20, rng.random_range(-2.0..2.0)),
        (StevensIndex::B40, rng.random_range(-0.01..0.01)),
        (StevensIndex::B44, rng.random_range(-0.02..0.02)),
        (StevensIndex::B60, rng.random_range(-1e-5..1e-5)),
        (StevensIndex::B64, rng.random_range(-1e-5..1e-5)),
    ];
    SpinSystem::new("random", spin, lande_g, &coeffs).unwrap()
}

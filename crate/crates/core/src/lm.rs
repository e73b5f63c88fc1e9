//! Levenberg-Marquardt least squares for the lineshape and crossing fits.
//!
//! Jacobians are central finite differences with steps of 1e-6 of the
//! parameter scale; damping starts at 1e-3 with a x10 / /10 schedule.

use crate::error::{Error, Result};
use crate::linalg::{invert, solve};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Converged when the largest relative parameter step drops below this.
    pub rel_tol: f64,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    /// Finite-difference step as a fraction of the parameter scale.
    pub fd_rel_step: f64,
    /// Per-parameter scale for steps and convergence; defaults to
    /// `max(|p0|, 1)`.
    pub scales: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            rel_tol: 1e-10,
            lambda_init: 1e-3,
            lambda_factor: 10.0,
            fd_rel_step: 1e-6,
            scales: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// Parameter covariance from the final (undamped) Jacobian.
    pub covariance: Vec<Vec<f64>>,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `sum residuals(p)_i^2` starting from `init`.
///
/// Non-convergence is reported in the result, not as an error; a Jacobian
/// with a dead column (a parameter the data does not constrain) is an
/// [`Error::Unfittable`].
pub fn least_squares<F>(residuals: F, init: &[f64], opts: &LmOptions) -> Result<LmFit>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = init.len();
    let scales: Vec<f64> = match &opts.scales {
        Some(s) => {
            assert_eq!(s.len(), n, "scale length mismatch");
            s.iter().map(|v| v.abs().max(f64::MIN_POSITIVE)).collect()
        }
        None => init.iter().map(|p| p.abs().max(1.0)).collect(),
    };

    let mut p = init.to_vec();
    let mut r = residuals(&p);
    let m = r.len();
    if m < n {
        return Err(Error::Unfittable(format!(
            "{m} residuals cannot determine {n} parameters"
        )));
    }
    let mut rss: f64 = r.iter().map(|v| v * v).sum();
    if !rss.is_finite() {
        return Err(Error::Unfittable("residuals not finite at start".into()));
    }
    let mut lambda = opts.lambda_init;
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        iterations += 1;
        let jac = jacobian(&residuals, &p, &scales, opts.fd_rel_step);
        let (jtj, jtr) = normal_equations(&jac, &r, n);
        if let Some(i) = (0..n).find(|&i| jtj[i][i] <= 0.0) {
            return Err(Error::Unfittable(format!(
                "degenerate Jacobian: parameter {i} does not affect the residuals"
            )));
        }

        let mut stepped = false;
        loop {
            let mut damped = jtj.clone();
            for i in 0..n {
                damped[i][i] = jtj[i][i] * (1.0 + lambda);
            }
            if let Some(delta) = solve(&damped, &jtr) {
                let p_try: Vec<f64> = p.iter().zip(&delta).map(|(pi, d)| pi - d).collect();
                let r_try = residuals(&p_try);
                let rss_try: f64 = r_try.iter().map(|v| v * v).sum();
                if rss_try.is_finite() && rss_try <= rss {
                    let step_rel = delta
                        .iter()
                        .zip(&p)
                        .zip(&scales)
                        .map(|((d, pi), s)| d.abs() / pi.abs().max(*s))
                        .fold(0.0, f64::max);
                    p = p_try;
                    r = r_try;
                    rss = rss_try;
                    lambda = (lambda / opts.lambda_factor).max(1e-14);
                    stepped = true;
                    if step_rel < opts.rel_tol {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= opts.lambda_factor;
            if lambda > 1e14 {
                break;
            }
        }
        if !stepped {
            // the damping schedule could not find any downhill step
            stalled = true;
            break;
        }
        if converged {
            break;
        }
    }
    // exhausting the iteration budget while still stepping downhill counts
    // as normal termination; only a stall is flagged
    if !stalled {
        converged = true;
    }

    let jac = jacobian(&residuals, &p, &scales, opts.fd_rel_step);
    let (jtj, _) = normal_equations(&jac, &r, n);
    let dof = (msub(m, n)).max(1) as f64;
    let sigma2 = rss / dof;
    let covariance = match invert(&jtj) {
        Some(inv) => inv
            .into_iter()
            .map(|row| row.into_iter().map(|v| v * sigma2).collect())
            .collect(),
        None => {
            return Err(Error::Unfittable(
                "singular normal equations at the solution".into(),
            ))
        }
    };

    Ok(LmFit {
        params: p,
        covariance,
        rss,
        iterations,
        converged,
    })
}

fn msub(m: usize, n: usize) -> usize {
    m.saturating_sub(n)
}

fn jacobian<F>(residuals: &F, p: &[f64], scales: &[f64], fd_rel: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = p.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let h = fd_rel * p[j].abs().max(scales[j]);
        let mut pp = p.to_vec();
        pp[j] = p[j] + h;
        let rp = residuals(&pp);
        pp[j] = p[j] - h;
        let rm = residuals(&pp);
        let col: Vec<f64> = rp
            .iter()
            .zip(&rm)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        cols.push(col);
    }
    cols
}

/// Returns (J^T J, J^T r) with `jac` stored column-wise.
fn normal_equations(jac: &[Vec<f64>], r: &[f64], n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut jtj = vec![vec![0.0; n]; n];
    let mut jtr = vec![0.0; n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = jac[i].iter().zip(&jac[j]).map(|(a, b)| a * b).sum();
            jtj[i][j] = s;
            jtj[j][i] = s;
        }
        jtr[i] = jac[i].iter().zip(r).map(|(a, b)| a * b).sum();
    }
    (jtj, jtr)
}

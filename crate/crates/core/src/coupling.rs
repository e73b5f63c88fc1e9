//! Spin-photon avoided crossings: the coupled-oscillator normal modes, the
//! crossing fit that extracts the coupling rate g, and the conversion from
//! g to spin concentration.
//!
//! Normal modes follow the coupled-oscillator characteristic equation
//!
//! ```text
//! w+-^2 = [ws^2 + wp^2 +- sqrt((ws^2 - wp^2)^2 + 4 Dps^2 ws^2 wp^2)] / 2
//! ```
//!
//! with the normalized coupling Dps = 2 g / wp, so the on-resonance
//! splitting is 2g. The spin line is locally linear, ws(B) = a + b B.
//! Everything is ordinary frequency in Hz.

use crate::consts::Constants;
use crate::error::{Error, Result};
use crate::lm::{least_squares, LmOptions};

/// Coupled photon-spin crossing model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CrossingModel {
    /// Bare photon mode frequency, Hz.
    pub fp_hz: f64,
    /// Spin-line intercept a, Hz.
    pub spin_intercept_hz: f64,
    /// Spin-line slope b, Hz/T.
    pub spin_slope_hz_per_t: f64,
    /// Coupling rate g, Hz.
    pub g_hz: f64,
}

impl CrossingModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fp_hz.is_finite()
            && self.fp_hz > 0.0
            && self.spin_intercept_hz.is_finite()
            && self.spin_slope_hz_per_t.is_finite()
            && self.g_hz.is_finite()
            && self.g_hz >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("{self:?}")))
        }
    }

    /// Normalized coupling Dps = 2 g / wp.
    pub fn delta_ps(&self) -> f64 {
        2.0 * self.g_hz / self.fp_hz
    }

    /// Spin-line frequency at `field_t`.
    pub fn spin_freq_hz(&self, field_t: f64) -> f64 {
        self.spin_intercept_hz + self.spin_slope_hz_per_t * field_t
    }

    /// Field where the bare spin line meets the bare photon mode.
    pub fn crossing_field_t(&self) -> f64 {
        (self.fp_hz - self.spin_intercept_hz) / self.spin_slope_hz_per_t
    }
}

/// Upper and lower normal-mode frequencies (Hz) at `field_t`.
pub fn normal_modes(model: &CrossingModel, field_t: f64) -> (f64, f64) {
    let ws = model.spin_freq_hz(field_t);
    normal_modes_at(ws, model.fp_hz, model.g_hz)
}

/// Normal modes for explicit spin/photon frequencies.
pub fn normal_modes_at(ws_hz: f64, wp_hz: f64, g_hz: f64) -> (f64, f64) {
    let dps = 2.0 * g_hz / wp_hz;
    let ws2 = ws_hz * ws_hz;
    let wp2 = wp_hz * wp_hz;
    // (ws^2 - wp^2) as a product avoids cancellation near resonance
    let diff = (ws_hz - wp_hz) * (ws_hz + wp_hz);
    let disc = (diff * diff + 4.0 * dps * dps * ws2 * wp2).sqrt();
    let sum = ws2 + wp2;
    let plus = ((sum + disc) / 2.0).sqrt();
    let minus = (((sum - disc) / 2.0).max(0.0)).sqrt();
    (plus, minus)
}

/// The branch that connects to the bare photon mode away from resonance:
/// the upper branch while the spin line is below the mode, the lower branch
/// once it is above.
pub fn photon_branch_hz(ws_hz: f64, wp_hz: f64, g_hz: f64) -> f64 {
    let (plus, minus) = normal_modes_at(ws_hz, wp_hz, g_hz);
    if ws_hz <= wp_hz {
        plus
    } else {
        minus
    }
}

/// Crossing fit result.
#[derive(Debug, Clone)]
pub struct CrossingFit {
    pub model: CrossingModel,
    /// 4x4 covariance over (fp, a, b, g).
    pub covariance: Vec<Vec<f64>>,
    /// 1-sigma uncertainties (fp, a, b, g).
    pub sigmas: [f64; 4],
    /// Branch index per input point (true = upper).
    pub upper_branch: Vec<bool>,
    pub rss: f64,
    pub converged: bool,
}

impl CrossingFit {
    pub fn g_sigma_hz(&self) -> f64 {
        self.sigmas[3]
    }
}

/// Fit (fp, a, b, g) to branch-frequency samples `(tesla, Hz)`.
///
/// Each point is assigned to the nearer model branch every outer round,
/// with hysteresis: a point keeps its branch unless the other one is
/// closer by more than three robust sigma. Data that never populates both
/// branches, or that cannot constrain g, is a degenerate fit.
pub fn fit_crossing(points: &[(f64, f64)], guess: &CrossingModel) -> Result<CrossingFit> {
    guess.validate()?;
    if points.len() < 8 {
        return Err(Error::InvalidParams(format!(
            "need at least 8 crossing points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(b, f)| !b.is_finite() || !f.is_finite()) {
        return Err(Error::InvalidParams("non-finite crossing point".into()));
    }

    let reassign = |model: &CrossingModel, prev: &[bool]| -> Vec<bool> {
        // robust residual scale for the hysteresis margin
        let resid: Vec<f64> = points
            .iter()
            .zip(prev)
            .map(|(&(b, f), &upper)| {
                let (up, lo) = normal_modes(model, b);
                (f - if upper { up } else { lo }).abs()
            })
            .collect();
        let scale = robust_scale(&resid).max(1e-6 * model.g_hz.max(1.0));
        points
            .iter()
            .zip(prev)
            .map(|(&(b, f), &cur)| {
                let (up, lo) = normal_modes(model, b);
                let d_up = (f - up).abs();
                let d_lo = (f - lo).abs();
                let (d_cur, d_other) = if cur { (d_up, d_lo) } else { (d_lo, d_up) };
                if d_other + 3.0 * scale < d_cur {
                    !cur
                } else {
                    cur
                }
            })
            .collect()
    };

    // Re-seed the crossing geometry from the data. The wings hug the bare
    // mode, so the median frequency estimates fp to within a few pulls,
    // the largest excursion marks the crossing field, and its size is of
    // order g. This keeps the fit out of the no-crossing local minimum
    // when the caller's guess is several field steps off.
    let mut freqs: Vec<f64> = points.iter().map(|&(_, f)| f).collect();
    freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let split = freqs[freqs.len() / 2];
    let &(b_excursion, f_excursion) = points
        .iter()
        .max_by(|a, b| {
            (a.1 - split)
                .abs()
                .partial_cmp(&(b.1 - split).abs())
                .unwrap()
        })
        .expect("nonempty");
    let g_seed = (f_excursion - split).abs().max(1e-9 * guess.fp_hz);
    let mut model = CrossingModel {
        fp_hz: split,
        spin_intercept_hz: split - guess.spin_slope_hz_per_t * b_excursion,
        spin_slope_hz_per_t: guess.spin_slope_hz_per_t,
        g_hz: g_seed,
    };
    let mut branches: Vec<bool> = points
        .iter()
        .map(|&(b, f)| {
            let (up, lo) = normal_modes(&model, b);
            (f - up).abs() < (f - lo).abs()
        })
        .collect();
    let mut fit = None;

    for _round in 0..12 {
        let br = branches.clone();
        let residuals = |p: &[f64]| -> Vec<f64> {
            let m = CrossingModel {
                fp_hz: p[0],
                spin_intercept_hz: p[1],
                spin_slope_hz_per_t: p[2],
                g_hz: p[3],
            };
            points
                .iter()
                .zip(&br)
                .map(|(&(b, f), &upper)| {
                    let (up, lo) = normal_modes(&m, b);
                    (if upper { up } else { lo }) - f
                })
                .collect()
        };
        let p0 = [
            model.fp_hz,
            model.spin_intercept_hz,
            model.spin_slope_hz_per_t,
            model.g_hz,
        ];
        let scales = vec![
            model.fp_hz.abs(),
            model.spin_intercept_hz.abs().max(model.fp_hz.abs()),
            model.spin_slope_hz_per_t.abs().max(1.0),
            model.g_hz.abs().max(1e-9 * model.fp_hz),
        ];
        let opts = LmOptions {
            scales: Some(scales),
            ..LmOptions::default()
        };
        let lm = least_squares(residuals, &p0, &opts).map_err(|e| match e {
            Error::Unfittable(msg) => {
                Error::DegenerateCrossing(format!("g is not identifiable: {msg}"))
            }
            other => other,
        })?;
        model = CrossingModel {
            fp_hz: lm.params[0],
            spin_intercept_hz: lm.params[1],
            spin_slope_hz_per_t: lm.params[2],
            g_hz: lm.params[3].abs(),
        };
        let next = reassign(&model, &branches);
        let stable = next == branches;
        branches = next;
        fit = Some(lm);
        if stable {
            break;
        }
    }
    let lm = fit.expect("at least one round ran");

    if branches.iter().all(|&b| b) || branches.iter().all(|&b| !b) {
        return Err(Error::DegenerateCrossing(
            "all points sit on one branch; the splitting is not constrained".into(),
        ));
    }

    let sigmas = [
        lm.covariance[0][0].max(0.0).sqrt(),
        lm.covariance[1][1].max(0.0).sqrt(),
        lm.covariance[2][2].max(0.0).sqrt(),
        lm.covariance[3][3].max(0.0).sqrt(),
    ];
    Ok(CrossingFit {
        model,
        covariance: lm.covariance,
        sigmas,
        upper_branch: branches,
        rss: lm.rss,
        converged: lm.converged,
    })
}

fn robust_scale(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = v[v.len() / 2];
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    1.4826 * dev[dev.len() / 2]
}

/// Inputs for the spin-concentration estimate, with 1-sigma uncertainties.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ConcentrationInput {
    pub g_hz: f64,
    pub fp_hz: f64,
    pub lande_g: f64,
    /// Perpendicular magnetic filling factor, in (0, 1].
    pub filling_factor: f64,
    #[serde(default)]
    pub g_sigma_hz: f64,
    #[serde(default)]
    pub fp_sigma_hz: f64,
    #[serde(default)]
    pub lande_g_sigma: f64,
    #[serde(default)]
    pub filling_factor_sigma: f64,
}

impl ConcentrationInput {
    pub fn validate(&self) -> Result<()> {
        let ok = self.g_hz > 0.0
            && self.fp_hz > 0.0
            && self.lande_g > 0.0
            && self.filling_factor > 0.0
            && self.filling_factor <= 1.0
            && [self.g_hz, self.fp_hz, self.lande_g, self.filling_factor]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Spin concentration from the coupling rate:
///
/// ```text
/// n = 4 hbar g^2 / (g_L^2 mu_B^2 mu_0 f_p xi)     [m^-3, returned in cm^-3]
/// ```
///
/// g and f_p are ordinary frequencies in Hz; this convention reproduces the
/// published concentration. Returns (n, 1-sigma) in cm^-3 with first-order
/// uncertainty propagation.
pub fn concentration(input: &ConcentrationInput, consts: &Constants) -> Result<(f64, f64)> {
    input.validate()?;
    let mu_b = consts.mu_b_j_per_t();
    let n_m3 = 4.0 * consts.hbar_js() * input.g_hz * input.g_hz
        / (input.lande_g * input.lande_g
            * mu_b
            * mu_b
            * consts.mu0_n_per_a2
            * input.fp_hz
            * input.filling_factor);
    let n = n_m3 * 1e-6;
    // n ~ g^2 / (gL^2 fp xi)
    let rel2 = (2.0 * input.g_sigma_hz / input.g_hz).powi(2)
        + (2.0 * input.lande_g_sigma / input.lande_g).powi(2)
        + (input.fp_sigma_hz / input.fp_hz).powi(2)
        + (input.filling_factor_sigma / input.filling_factor).powi(2);
    Ok((n, n * rel2.sqrt()))
}

/// Invert the concentration relation back to a coupling rate (Hz); used to
/// check round-trip consistency. `n` in cm^-3.
pub fn coupling_from_concentration(
    n_cm3: f64,
    fp_hz: f64,
    lande_g: f64,
    filling_factor: f64,
    consts: &Constants,
) -> f64 {
    let mu_b = consts.mu_b_j_per_t();
    let n_m3 = n_cm3 * 1e6;
    lande_g
        * mu_b
        * (consts.mu0_n_per_a2 * fp_hz * n_m3 * filling_factor / (4.0 * consts.hbar_js())).sqrt()
}

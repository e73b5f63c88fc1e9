//! Fano/Breit-Wigner transmission model, resonance fitting and peak
//! detection for S21 traces.
//!
//! The model is
//!
//! ```text
//! |S21|(f) = amp * [1 - (q G/2 + D)^2 / ((G/2)^2 + D^2)] + offset
//! ```
//!
//! with detuning D = f - f0 and full linewidth G. `amp = 1, offset = 0`
//! recovers the bare unit-baseline form; the two nuisance parameters absorb
//! instrument scale and polarity (inverted resonances carry `amp < 0`).

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lm::{least_squares, LmOptions};

/// Metadata carried alongside a trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceMeta {
    pub b_tesla: Option<f64>,
    pub timestamp: Option<String>,
    pub power: Option<String>,
}

/// One S21 transmission trace in linear magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Strictly increasing sample frequencies, Hz.
    pub freq_hz: Vec<f64>,
    /// Linear magnitude, >= 0.
    pub s21: Vec<f64>,
    /// dB values as ingested or rendered; kept so that writing a loaded
    /// trace back out reproduces the file byte for byte.
    pub s21_db: Vec<f64>,
    pub meta: TraceMeta,
}

impl Trace {
    /// Build from linear-magnitude samples.
    pub fn new(freq_hz: Vec<f64>, s21: Vec<f64>, meta: TraceMeta) -> Result<Self> {
        if freq_hz.len() != s21.len() {
            return Err(Error::InvalidTrace(format!(
                "{} frequencies vs {} samples",
                freq_hz.len(),
                s21.len()
            )));
        }
        if freq_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTrace(
                "frequencies must be strictly increasing".into(),
            ));
        }
        if s21.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidTrace(
                "linear magnitudes must be finite and non-negative".into(),
            ));
        }
        let s21_db = s21.iter().map(|v| 20.0 * v.max(1e-12).log10()).collect();
        Ok(Trace {
            freq_hz,
            s21,
            s21_db,
            meta,
        })
    }

    /// Build from dB samples (`linear = 10^(dB/20)`).
    pub fn from_db(freq_hz: Vec<f64>, s21_db: Vec<f64>, meta: TraceMeta) -> Result<Self> {
        if freq_hz.len() != s21_db.len() {
            return Err(Error::InvalidTrace(format!(
                "{} frequencies vs {} samples",
                freq_hz.len(),
                s21_db.len()
            )));
        }
        if freq_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTrace(
                "frequencies must be strictly increasing".into(),
            ));
        }
        if s21_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTrace("dB values must be finite".into()));
        }
        let s21 = s21_db.iter().map(|db| 10f64.powf(db / 20.0)).collect();
        Ok(Trace {
            freq_hz,
            s21,
            s21_db,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.freq_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq_hz.is_empty()
    }

    pub fn span_hz(&self) -> f64 {
        match (self.freq_hz.first(), self.freq_hz.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Samples with `|f - center| <= half_width`.
    pub fn window(&self, center_hz: f64, half_width_hz: f64) -> Trace {
        let lo = center_hz - half_width_hz;
        let hi = center_hz + half_width_hz;
        let mut freq = Vec::new();
        let mut s21 = Vec::new();
        let mut db = Vec::new();
        for i in 0..self.len() {
            if self.freq_hz[i] >= lo && self.freq_hz[i] <= hi {
                freq.push(self.freq_hz[i]);
                s21.push(self.s21[i]);
                db.push(self.s21_db[i]);
            }
        }
        Trace {
            freq_hz: freq,
            s21,
            s21_db: db,
            meta: self.meta.clone(),
        }
    }

    /// Read a `freq_hz,s21_db` CSV.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Trace> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut freq = Vec::new();
        let mut db = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if lineno == 0 {
                let header = line.to_ascii_lowercase();
                if header.starts_with("freq_hz") {
                    continue;
                }
                return Err(Error::Csv {
                    path: path.into(),
                    line: 1,
                    msg: format!("expected header 'freq_hz,s21_db', got '{line}'"),
                });
            }
            let mut parts = line.split(',');
            let f: f64 = parts
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Csv {
                    path: path.into(),
                    line: lineno + 1,
                    msg: "bad frequency field".into(),
                })?;
            let d: f64 = parts
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Csv {
                    path: path.into(),
                    line: lineno + 1,
                    msg: "bad s21_db field".into(),
                })?;
            freq.push(f);
            db.push(d);
        }
        Trace::from_db(freq, db, TraceMeta::default()).map_err(|e| Error::Csv {
            path: path.into(),
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Write the `freq_hz,s21_db` CSV. Values are written with Rust's
    /// shortest-round-trip float formatting, so load/save cycles are exact.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("freq_hz,s21_db\n");
        for i in 0..self.len() {
            out.push_str(&format!("{},{}\n", self.freq_hz[i], self.s21_db[i]));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Fano lineshape parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FanoParams {
    pub f0_hz: f64,
    /// Full linewidth Gamma_p, Hz.
    pub gamma_hz: f64,
    /// Fano asymmetry parameter.
    pub fano_q: f64,
    pub amp: f64,
    pub offset: f64,
}

impl FanoParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.f0_hz.is_finite()
            && self.gamma_hz.is_finite()
            && self.gamma_hz > 0.0
            && self.fano_q.is_finite()
            && self.amp.is_finite()
            && self.amp != 0.0
            && self.offset.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("{self:?}")))
        }
    }

    pub fn q_factor(&self) -> f64 {
        self.f0_hz / self.gamma_hz
    }
}

/// Evaluate the Fano model at `f_hz`.
pub fn fano_model(p: &FanoParams, f_hz: f64) -> f64 {
    let d = f_hz - p.f0_hz;
    let hw = p.gamma_hz / 2.0;
    let num = p.fano_q * hw + d;
    p.amp * (1.0 - num * num / (hw * hw + d * d)) + p.offset
}

/// Fit quality summary.
#[derive(Debug, Clone, serde::Serialize)]
pub struct QualityReport {
    /// f0 / Gamma_p.
    pub q_factor: f64,
    /// 1 / q_factor.
    pub loss_tangent: f64,
    /// 5x5 covariance over (f0, gamma, q, amp, offset), physical units.
    pub covariance: Vec<Vec<f64>>,
    /// RMS of the fit residual, linear units.
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Fit the Fano model to a trace by Levenberg-Marquardt.
///
/// Frequencies are rescaled to span units internally for conditioning.
/// Non-convergence comes back as `converged = false` on the report; a
/// degenerate Jacobian (flat trace) is an error.
pub fn fit_fano(trace: &Trace, guess: &FanoParams) -> Result<(FanoParams, QualityReport)> {
    if trace.len() < 8 {
        return Err(Error::InvalidTrace(format!(
            "need at least 8 samples to fit, got {}",
            trace.len()
        )));
    }
    guess.validate()?;
    let span = trace.span_hz();
    let fmid = 0.5 * (trace.freq_hz[0] + trace.freq_hz[trace.len() - 1]);
    let xs: Vec<f64> = trace.freq_hz.iter().map(|f| (f - fmid) / span).collect();
    let ys = &trace.s21;

    let p0 = [
        (guess.f0_hz - fmid) / span,
        guess.gamma_hz / span,
        guess.fano_q,
        guess.amp,
        guess.offset,
    ];
    let model = |p: &[f64], x: f64| -> f64 {
        let d = x - p[0];
        let hw = p[1] / 2.0;
        let num = p[2] * hw + d;
        p[3] * (1.0 - num * num / (hw * hw + d * d)) + p[4]
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        xs.iter().zip(ys).map(|(&x, &y)| model(p, x) - y).collect()
    };
    let opts = LmOptions {
        scales: Some(vec![1.0, p0[1].abs().max(1e-9), 1.0, 1.0, 1.0]),
        ..LmOptions::default()
    };
    let fit = least_squares(residuals, &p0, &opts)?;

    // normalize the sign ambiguity (gamma, q) -> (-gamma, -q)
    let w = fit.params[1];
    let sign = if w < 0.0 { -1.0 } else { 1.0 };
    let params = FanoParams {
        f0_hz: fmid + fit.params[0] * span,
        gamma_hz: w.abs() * span,
        fano_q: sign * fit.params[2],
        amp: fit.params[3],
        offset: fit.params[4],
    };
    if params.gamma_hz <= 0.0 || !params.f0_hz.is_finite() {
        return Err(Error::Unfittable("collapsed linewidth".into()));
    }
    if params.f0_hz < trace.freq_hz[0] || params.f0_hz > trace.freq_hz[trace.len() - 1] {
        return Err(Error::Unfittable(format!(
            "fitted resonance {:.6e} Hz outside the trace span",
            params.f0_hz
        )));
    }
    params.validate().map_err(|_| {
        Error::Unfittable("fit collapsed to invalid parameters".into())
    })?;

    // covariance back to physical units; jacobian of the normalization
    let scale = [span, sign * span, sign, 1.0, 1.0];
    let mut covariance = vec![vec![0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            covariance[i][j] = fit.covariance[i][j] * scale[i] * scale[j];
        }
    }
    let q_factor = params.q_factor();
    let report = QualityReport {
        q_factor,
        loss_tangent: q_factor.recip(),
        covariance,
        residual_rms: (fit.rss / trace.len() as f64).sqrt(),
        converged: fit.converged,
        iterations: fit.iterations,
    };
    Ok((params, report))
}

/// Detect resonance candidates: contiguous deviations from the trace median
/// exceeding `min_prominence` (linear units, either polarity) become one
/// candidate each, with a half-maximum width estimate for Gamma. Candidates
/// with `f0/Gamma < min_q` are dropped; the result is sorted by frequency.
pub fn find_peaks(trace: &Trace, min_prominence: f64, min_q: f64) -> Vec<FanoParams> {
    let n = trace.len();
    if n < 3 {
        return vec![];
    }
    let mut sorted = trace.s21.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let baseline = sorted[n / 2];
    let dev: Vec<f64> = trace.s21.iter().map(|v| v - baseline).collect();

    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if dev[i].abs() < min_prominence {
            i += 1;
            continue;
        }
        let sign = dev[i].signum();
        let start = i;
        let mut peak = i;
        while i < n && dev[i].abs() >= min_prominence && dev[i].signum() == sign {
            if dev[i].abs() > dev[peak].abs() {
                peak = i;
            }
            i += 1;
        }
        let end = i - 1;
        let height = dev[peak];
        let half = height.abs() / 2.0;
        // walk out to the half-maximum crossings for a width estimate
        let mut lo = peak;
        while lo > 0 && dev[lo - 1].abs() > half && dev[lo - 1].signum() == sign {
            lo -= 1;
        }
        let mut hi = peak;
        while hi + 1 < n && dev[hi + 1].abs() > half && dev[hi + 1].signum() == sign {
            hi += 1;
        }
        let grid_step = if n > 1 {
            (trace.freq_hz[n - 1] - trace.freq_hz[0]) / (n - 1) as f64
        } else {
            1.0
        };
        let width = (trace.freq_hz[hi] - trace.freq_hz[lo]).max(grid_step);
        let f0 = trace.freq_hz[peak];
        let _ = (start, end);
        if min_q <= 0.0 || f0 / width >= min_q {
            out.push(FanoParams {
                f0_hz: f0,
                gamma_hz: width,
                fano_q: 0.0,
                amp: height,
                offset: baseline,
            });
        }
    }
    out.sort_by(|a, b| a.f0_hz.partial_cmp(&b.f0_hz).unwrap());
    out
}

/// Render a synthetic trace from the model (no noise).
pub fn synth_trace(params: &FanoParams, freq_hz: Vec<f64>, meta: TraceMeta) -> Result<Trace> {
    let s21: Vec<f64> = freq_hz
        .iter()
        .map(|&f| fano_model(params, f).max(0.0))
        .collect();
    Trace::new(freq_hz, s21, meta)
}

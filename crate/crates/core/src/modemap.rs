//! Field-sweep ingestion, per-mode tracking across field steps, and
//! perturbation-site extraction.
//!
//! A sweep is a manifest JSON naming one trace CSV per field value. Modes
//! are tracked by refitting the Fano model in a window around a predicted
//! frequency at each step; a perturbation site is a contiguous excursion
//! of the tracked frequency from its moving-median baseline.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lineshape::{find_peaks, fit_fano, FanoParams, Trace};

/// One field step: field value and its transmission trace.
#[derive(Debug, Clone)]
pub struct SweepStep {
    pub b_tesla: f64,
    pub trace: Trace,
}

/// A loaded magnetic-field sweep, steps sorted by ascending field.
#[derive(Debug, Clone)]
pub struct SweepMap {
    pub steps: Vec<SweepStep>,
    pub step_tesla: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    step_tesla: f64,
    steps: Vec<ManifestStep>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestStep {
    b_tesla: f64,
    trace: String,
}

/// Load a sweep manifest and all referenced traces. Trace paths are
/// relative to the manifest's directory. Duplicate field values are an
/// error; steps come back sorted ascending.
pub fn load_sweep(manifest_path: impl AsRef<Path>) -> Result<SweepMap> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: manifest_path.into(),
        msg: e.to_string(),
    })?;
    if manifest.step_tesla <= 0.0 {
        return Err(Error::Json {
            path: manifest_path.into(),
            msg: format!("step_tesla must be positive, got {}", manifest.step_tesla),
        });
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut steps = Vec::with_capacity(manifest.steps.len());
    for entry in &manifest.steps {
        let trace_path = dir.join(&entry.trace);
        let mut trace = Trace::read_csv(&trace_path)?;
        trace.meta.b_tesla = Some(entry.b_tesla);
        steps.push(SweepStep {
            b_tesla: entry.b_tesla,
            trace,
        });
    }
    steps.sort_by(|a, b| a.b_tesla.partial_cmp(&b.b_tesla).unwrap());
    for w in steps.windows(2) {
        if w[0].b_tesla == w[1].b_tesla {
            return Err(Error::DuplicateField {
                b_tesla: w[0].b_tesla,
            });
        }
    }
    Ok(SweepMap {
        steps,
        step_tesla: manifest.step_tesla,
    })
}

/// Write a sweep back out: trace CSVs named `b{index:04}.csv` plus the
/// manifest. The written tree loads back identically.
pub fn save_sweep(map: &SweepMap, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(map.steps.len());
    for (i, step) in map.steps.iter().enumerate() {
        let name = format!("b{i:04}.csv");
        step.trace.write_csv(dir.join(&name))?;
        entries.push(ManifestStep {
            b_tesla: step.b_tesla,
            trace: name,
        });
    }
    let manifest = ManifestFile {
        step_tesla: map.step_tesla,
        steps: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// One locked tracking point.
#[derive(Debug, Clone)]
pub struct ModePoint {
    pub b_tesla: f64,
    pub params: FanoParams,
    pub converged: bool,
}

/// One tracked mode over the sweep.
#[derive(Debug, Clone)]
pub struct ModeTrace {
    pub mode_id: usize,
    pub points: Vec<ModePoint>,
    /// Field intervals (inclusive) where the mode was lost.
    pub gaps: Vec<(f64, f64)>,
}

/// Track each seeded mode across the sweep.
///
/// Per step the trace is windowed to `+-window_hz` around a prediction
/// (linear extrapolation of the last five locked points), the strongest
/// deviation is refit, and lock requires the fitted frequency to stay in
/// the window. Lost steps accumulate into gaps; re-acquisition happens
/// whenever a peak re-enters the window.
pub fn track_modes(map: &SweepMap, seeds: &[FanoParams], window_hz: f64) -> Vec<ModeTrace> {
    seeds
        .iter()
        .enumerate()
        .map(|(mode_id, seed)| track_one(map, mode_id, seed, window_hz))
        .collect()
}

fn track_one(map: &SweepMap, mode_id: usize, seed: &FanoParams, window_hz: f64) -> ModeTrace {
    let mut points: Vec<ModePoint> = Vec::new();
    let mut gaps: Vec<(f64, f64)> = Vec::new();
    let mut gap_start: Option<f64> = None;
    let mut gap_last = 0.0;
    let mut gamma_cur = seed.gamma_hz;
    let mut amp_cur = seed.amp;

    for step in &map.steps {
        let pred = predict(&points, seed.f0_hz, step.b_tesla);
        let sub = step.trace.window(pred, window_hz);
        let locked = try_lock(&sub, pred, window_hz, gamma_cur, amp_cur);
        match locked {
            Some((params, converged)) => {
                if let Some(start) = gap_start.take() {
                    gaps.push((start, gap_last));
                }
                gamma_cur = params.gamma_hz;
                amp_cur = params.amp;
                points.push(ModePoint {
                    b_tesla: step.b_tesla,
                    params,
                    converged,
                });
            }
            None => {
                gap_start.get_or_insert(step.b_tesla);
                gap_last = step.b_tesla;
            }
        }
    }
    if let Some(start) = gap_start {
        gaps.push((start, gap_last));
    }
    ModeTrace {
        mode_id,
        points,
        gaps,
    }
}

/// Linear extrapolation of the last five locked points.
fn predict(points: &[ModePoint], seed_f0: f64, b: f64) -> f64 {
    let tail: Vec<&ModePoint> = points.iter().rev().take(5).collect();
    match tail.len() {
        0 => seed_f0,
        1 => tail[0].params.f0_hz,
        _ => {
            let n = tail.len() as f64;
            let mb: f64 = tail.iter().map(|p| p.b_tesla).sum::<f64>() / n;
            let mf: f64 = tail.iter().map(|p| p.params.f0_hz).sum::<f64>() / n;
            let mut num = 0.0;
            let mut den = 0.0;
            for p in &tail {
                num += (p.b_tesla - mb) * (p.params.f0_hz - mf);
                den += (p.b_tesla - mb) * (p.b_tesla - mb);
            }
            if den == 0.0 {
                mf
            } else {
                mf + num / den * (b - mb)
            }
        }
    }
}

fn try_lock(
    sub: &Trace,
    pred: f64,
    window_hz: f64,
    gamma_cur: f64,
    amp_cur: f64,
) -> Option<(FanoParams, bool)> {
    if sub.len() < 8 {
        return None;
    }
    // a peak must re-enter the window before we refit; the threshold
    // adapts to the window's own noise floor because an under-resolved
    // line samples well below its fitted amplitude
    let mut sorted = sub.s21.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = sorted[sorted.len() / 2];
    let mut dev: Vec<f64> = sub.s21.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let noise = 1.4826 * dev[dev.len() / 2];
    let prominence = (0.2 * amp_cur.abs()).max(6.0 * noise);
    let cands = find_peaks(sub, prominence, 0.0);
    let best = cands
        .iter()
        .max_by(|a, b| a.amp.abs().partial_cmp(&b.amp.abs()).unwrap())?;
    let guess = FanoParams {
        f0_hz: best.f0_hz,
        gamma_hz: gamma_cur.min(best.gamma_hz.max(gamma_cur / 4.0)),
        fano_q: 0.0,
        amp: best.amp,
        offset: best.offset,
    };
    let (params, report) = fit_fano(sub, &guess).ok()?;
    if (params.f0_hz - pred).abs() > window_hz {
        return None;
    }
    Some((params, report.converged))
}

/// A (field, frequency) location where a tracked mode is disturbed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerturbationSite {
    pub mode_id: usize,
    pub b_tesla: f64,
    pub freq_hz: f64,
    /// Peak deviation from the local baseline, Hz.
    pub strength_hz: f64,
    /// Field extent of the excursion, tesla.
    pub width_tesla: f64,
}

/// Per-trace problem found while extracting sites.
#[derive(Debug, Clone)]
pub struct SiteIssue {
    pub mode_id: usize,
    pub reason: String,
}

/// Detect perturbation sites on each tracked mode: the moving-median
/// baseline (21 steps) is subtracted from f0(B), and contiguous excursions
/// beyond `threshold_sigma` robust sigma become one site each, located at
/// maximal deviation. Traces shorter than 11 locked steps are skipped and
/// reported.
pub fn extract_sites(
    traces: &[ModeTrace],
    threshold_sigma: f64,
) -> (Vec<PerturbationSite>, Vec<SiteIssue>) {
    let mut sites = Vec::new();
    let mut issues = Vec::new();
    for trace in traces {
        let n = trace.points.len();
        if n < 11 {
            issues.push(SiteIssue {
                mode_id: trace.mode_id,
                reason: format!("only {n} locked steps; need at least 11 for a baseline"),
            });
            continue;
        }
        let f0: Vec<f64> = trace.points.iter().map(|p| p.params.f0_hz).collect();
        let b: Vec<f64> = trace.points.iter().map(|p| p.b_tesla).collect();
        let window = 21.min(if n % 2 == 0 { n - 1 } else { n });
        let baseline = moving_median(&f0, window);
        let resid: Vec<f64> = f0.iter().zip(&baseline).map(|(f, m)| f - m).collect();

        let mut abs_resid: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        abs_resid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mad = abs_resid[abs_resid.len() / 2];
        let f0_scale = f0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let sigma = (1.4826 * mad).max(1e-12 * f0_scale).max(f64::MIN_POSITIVE);
        let threshold = threshold_sigma * sigma;

        let median_db = {
            let mut steps: Vec<f64> = b.windows(2).map(|w| w[1] - w[0]).collect();
            steps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            steps[steps.len() / 2]
        };

        let mut i = 0;
        while i < n {
            if resid[i].abs() <= threshold {
                i += 1;
                continue;
            }
            let start = i;
            let mut peak = i;
            while i < n && resid[i].abs() > threshold {
                if resid[i].abs() > resid[peak].abs() {
                    peak = i;
                }
                i += 1;
            }
            let end = i - 1;
            sites.push(PerturbationSite {
                mode_id: trace.mode_id,
                b_tesla: b[peak],
                freq_hz: f0[peak],
                strength_hz: resid[peak].abs(),
                width_tesla: (b[end] - b[start]).max(median_db),
            });
        }
    }
    sites.sort_by(|a, b| {
        a.mode_id
            .cmp(&b.mode_id)
            .then(a.b_tesla.partial_cmp(&b.b_tesla).unwrap())
    });
    (sites, issues)
}

/// Moving median with an odd window, shrinking symmetrically at the edges.
/// The center point is left out of its own baseline so that it cannot bias
/// the residual scale toward zero.
fn moving_median(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let reach = half.min(i).min(n - 1 - i);
            if reach == 0 {
                return values[i];
            }
            let mut chunk: Vec<f64> = values[i - reach..i]
                .iter()
                .chain(&values[i + 1..=i + reach])
                .copied()
                .collect();
            chunk.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = chunk.len();
            if m % 2 == 1 {
                chunk[m / 2]
            } else {
                0.5 * (chunk[m / 2 - 1] + chunk[m / 2])
            }
        })
        .collect()
}

/// Write `modes.csv`: one row per locked tracking point.
pub fn write_modes_csv(path: impl AsRef<Path>, traces: &[ModeTrace]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("mode_id,b_tesla,f0_hz,gamma_hz,q\n");
    for t in traces {
        for p in &t.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t.mode_id,
                p.b_tesla,
                p.params.f0_hz,
                p.params.gamma_hz,
                p.params.q_factor()
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read `modes.csv` back into minimal mode traces (Fano q, amplitude and
/// offset are not stored in the CSV and come back as placeholders).
pub fn read_modes_csv(path: impl AsRef<Path>) -> Result<Vec<ModeTrace>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut traces: Vec<ModeTrace> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || lineno == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = |msg: &str| Error::Csv {
            path: path.into(),
            line: lineno + 1,
            msg: msg.into(),
        };
        if fields.len() < 5 {
            return Err(parse_err("expected mode_id,b_tesla,f0_hz,gamma_hz,q"));
        }
        let mode_id: usize = fields[0].trim().parse().map_err(|_| parse_err("bad mode_id"))?;
        let b: f64 = fields[1].trim().parse().map_err(|_| parse_err("bad b_tesla"))?;
        let f0: f64 = fields[2].trim().parse().map_err(|_| parse_err("bad f0_hz"))?;
        let gamma: f64 = fields[3].trim().parse().map_err(|_| parse_err("bad gamma_hz"))?;
        while traces.len() <= mode_id {
            traces.push(ModeTrace {
                mode_id: traces.len(),
                points: Vec::new(),
                gaps: Vec::new(),
            });
        }
        traces[mode_id].points.push(ModePoint {
            b_tesla: b,
            params: FanoParams {
                f0_hz: f0,
                gamma_hz: gamma,
                fano_q: 0.0,
                amp: 1.0,
                offset: 0.0,
            },
            converged: true,
        });
    }
    for t in &mut traces {
        t.points
            .sort_by(|a, b| a.b_tesla.partial_cmp(&b.b_tesla).unwrap());
    }
    Ok(traces)
}

/// Write `sites.csv`.
pub fn write_sites_csv(path: impl AsRef<Path>, sites: &[PerturbationSite]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("mode_id,b_tesla,f_hz,strength_hz,width_tesla\n");
    for s in sites {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.mode_id, s.b_tesla, s.freq_hz, s.strength_hz, s.width_tesla
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read `sites.csv`.
pub fn read_sites_csv(path: impl AsRef<Path>) -> Result<Vec<PerturbationSite>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sites = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || lineno == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = |msg: &str| Error::Csv {
            path: path.into(),
            line: lineno + 1,
            msg: msg.into(),
        };
        if fields.len() < 5 {
            return Err(parse_err(
                "expected mode_id,b_tesla,f_hz,strength_hz,width_tesla",
            ));
        }
        sites.push(PerturbationSite {
            mode_id: fields[0].trim().parse().map_err(|_| parse_err("bad mode_id"))?,
            b_tesla: fields[1].trim().parse().map_err(|_| parse_err("bad b_tesla"))?,
            freq_hz: fields[2].trim().parse().map_err(|_| parse_err("bad f_hz"))?,
            strength_hz: fields[3]
                .trim()
                .parse()
                .map_err(|_| parse_err("bad strength_hz"))?,
            width_tesla: fields[4]
                .trim()
                .parse()
                .map_err(|_| parse_err("bad width_tesla"))?,
        });
    }
    Ok(sites)
}

//! Synthetic sweep generation: render photon modes over a field sweep with
//! spin-line interactions, write the trace tree plus manifest, and record
//! the ground truth used to render it.
//!
//! Each photon mode is drawn with the Fano lineshape at its coupled-mode
//! frequency: for every spin line within 100 g of the mode, the mode
//! frequency is pulled onto the photon-like branch of the two-oscillator
//! model, pairwise per line. Output trees load back through the sweep
//! manifest reader unchanged.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::consts::Constants;
use crate::coupling::photon_branch_hz;
use crate::error::{Error, Result};
use crate::lineshape::{fano_model, FanoParams, Trace, TraceMeta};
use crate::spinham::{level_diagram, transitions, SpinSystem};

/// One rendered photon mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSpec {
    pub f0_hz: f64,
    pub q_factor: f64,
    #[serde(default)]
    pub fano_q: f64,
    #[serde(default = "one")]
    pub amp: f64,
    #[serde(default = "default_offset")]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

fn default_offset() -> f64 {
    0.01
}

impl ModeSpec {
    pub fn gamma_hz(&self) -> f64 {
        self.f0_hz / self.q_factor
    }

    fn fano(&self, f0_hz: f64) -> FanoParams {
        FanoParams {
            f0_hz,
            gamma_hz: self.gamma_hz(),
            fano_q: self.fano_q,
            amp: self.amp,
            offset: self.offset,
        }
    }
}

/// A spin species in the scenario: either an effective straight line or a
/// full spin system whose transition lines are sampled from the
/// Hamiltonian.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SpeciesSpec {
    Line {
        slope_hz_per_t: f64,
        intercept_hz: f64,
        g_hz: f64,
    },
    System {
        system: SpinSystem,
        g_hz: f64,
        #[serde(default = "one_u32")]
        max_delta_sz: u32,
    },
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepSpec {
    pub b_start_t: f64,
    pub b_stop_t: f64,
    pub b_step_t: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceSpec {
    /// Frequency window rendered around each mode, Hz.
    pub span_hz: f64,
    pub points: usize,
}

/// Scenario for a synthetic sweep. A fixed seed gives a byte-identical
/// output tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub modes: Vec<ModeSpec>,
    #[serde(default)]
    pub species: Vec<SpeciesSpec>,
    pub sweep: SweepSpec,
    pub trace: TraceSpec,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidScenario(msg));
        if self.modes.is_empty() {
            return err("at least one mode required".into());
        }
        for (i, m) in self.modes.iter().enumerate() {
            if m.f0_hz <= 0.0 || m.q_factor <= 0.0 {
                return err(format!("mode {i}: f0 and Q must be positive"));
            }
            if m.amp == 0.0 {
                return err(format!("mode {i}: amplitude must be nonzero"));
            }
            if m.offset < m.amp.max(0.0) * m.fano_q * m.fano_q {
                return err(format!(
                    "mode {i}: offset {} cannot keep |S21| non-negative (needs >= amp*q^2 = {})",
                    m.offset,
                    m.amp * m.fano_q * m.fano_q
                ));
            }
        }
        for (i, s) in self.species.iter().enumerate() {
            let g = match s {
                SpeciesSpec::Line { g_hz, .. } => *g_hz,
                SpeciesSpec::System { g_hz, .. } => *g_hz,
            };
            if g < 0.0 || !g.is_finite() {
                return err(format!("species {i}: coupling must be non-negative"));
            }
        }
        if self.sweep.b_step_t <= 0.0 {
            return err("sweep step must be positive".into());
        }
        if self.sweep.b_stop_t < self.sweep.b_start_t {
            return err("sweep stop before start".into());
        }
        if self.trace.span_hz <= 0.0 || self.trace.points < 16 {
            return err("trace window needs positive span and at least 16 points".into());
        }
        if self.noise_sigma < 0.0 {
            return err("noise sigma must be non-negative".into());
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            msg: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn field_grid(&self) -> Vec<f64> {
        let mut grid = Vec::new();
        let mut k = 0usize;
        loop {
            let b = self.sweep.b_start_t + k as f64 * self.sweep.b_step_t;
            if b > self.sweep.b_stop_t + self.sweep.b_step_t / 2.0 {
                break;
            }
            grid.push(b);
            k += 1;
        }
        grid
    }
}

/// One spin line sampled on the field grid.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruthLine {
    pub line_id: usize,
    /// Where the line came from: `line[i]` or `system[i]:|a> -> |b>`.
    pub source: String,
    pub g_hz: f64,
    /// (tesla, Hz) samples on the sweep grid.
    pub freq_of_field: Vec<(f64, f64)>,
}

/// One true mode-line crossing inside the sweep window.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruthCrossing {
    pub mode_id: usize,
    pub line_id: usize,
    pub b_cross_t: f64,
    pub f_hz: f64,
    pub g_hz: f64,
    /// Local linearization of the spin line at the crossing.
    pub local_slope_hz_per_t: f64,
    pub local_intercept_hz: f64,
}

/// Everything the renderer used, written next to the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    pub modes: Vec<ModeSpec>,
    pub lines: Vec<GroundTruthLine>,
    pub crossings: Vec<GroundTruthCrossing>,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Result of rendering a scenario.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub ground_truth_path: PathBuf,
    pub warnings: Vec<String>,
}

/// Render the scenario into `out_dir`: one trace CSV per field step, the
/// sweep manifest, and `ground_truth.json`.
pub fn synth_sweep(
    scenario: &Scenario,
    out_dir: impl AsRef<Path>,
    consts: &Constants,
) -> Result<SynthOutput> {
    scenario.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let grid = scenario.field_grid();

    let mut warnings = Vec::new();
    for i in 0..scenario.modes.len() {
        for j in (i + 1)..scenario.modes.len() {
            let a = &scenario.modes[i];
            let b = &scenario.modes[j];
            let gap = (a.f0_hz - b.f0_hz).abs();
            if gap < 3.0 * a.gamma_hz().max(b.gamma_hz()) {
                warnings.push(format!(
                    "modes {i} and {j} are closer than 3 linewidths ({gap:.3e} Hz apart)"
                ));
            }
        }
    }

    // sample every spin line on the field grid
    let mut lines: Vec<GroundTruthLine> = Vec::new();
    for (si, spec) in scenario.species.iter().enumerate() {
        match spec {
            SpeciesSpec::Line {
                slope_hz_per_t,
                intercept_hz,
                g_hz,
            } => {
                lines.push(GroundTruthLine {
                    line_id: lines.len(),
                    source: format!("line[{si}]"),
                    g_hz: *g_hz,
                    freq_of_field: grid
                        .iter()
                        .map(|&b| (b, intercept_hz + slope_hz_per_t * b))
                        .collect(),
                });
            }
            SpeciesSpec::System {
                system,
                g_hz,
                max_delta_sz,
            } => {
                let diagram = level_diagram(system, &grid, consts)?;
                for t in transitions(&diagram, *max_delta_sz, consts)? {
                    lines.push(GroundTruthLine {
                        line_id: lines.len(),
                        source: format!("system[{si}]:|{}> -> |{}>", t.lower, t.upper),
                        g_hz: *g_hz,
                        freq_of_field: t.freq_of_field,
                    });
                }
            }
        }
    }

    // true crossings: sign changes of line - mode on the grid
    let mut crossings = Vec::new();
    for (mode_id, mode) in scenario.modes.iter().enumerate() {
        for line in &lines {
            for w in line.freq_of_field.windows(2) {
                let (b1, f1) = w[0];
                let (b2, f2) = w[1];
                let d1 = f1 - mode.f0_hz;
                let d2 = f2 - mode.f0_hz;
                if d1 == 0.0 || d1 * d2 < 0.0 {
                    let t = d1 / (d1 - d2);
                    let b_cross = b1 + t * (b2 - b1);
                    let local_slope = (f2 - f1) / (b2 - b1);
                    crossings.push(GroundTruthCrossing {
                        mode_id,
                        line_id: line.line_id,
                        b_cross_t: b_cross,
                        f_hz: mode.f0_hz,
                        g_hz: line.g_hz,
                        local_slope_hz_per_t: local_slope,
                        local_intercept_hz: mode.f0_hz - local_slope * b_cross,
                    });
                }
            }
        }
    }

    // frequency grid: a window around each mode, merged ascending
    let mut freq_grid: Vec<f64> = Vec::new();
    for mode in &scenario.modes {
        let half = scenario.trace.span_hz / 2.0;
        let n = scenario.trace.points;
        for i in 0..n {
            freq_grid.push(mode.f0_hz - half + scenario.trace.span_hz * i as f64 / (n - 1) as f64);
        }
    }
    freq_grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    freq_grid.dedup();

    // a line perturbs a mode when it comes within 100 g of it anywhere in
    // the sweep; included pairs are then rendered at every step so the
    // pulled frequency stays smooth across the window
    let interacting: Vec<Vec<bool>> = scenario
        .modes
        .iter()
        .map(|mode| {
            lines
                .iter()
                .map(|line| {
                    line.g_hz > 0.0
                        && line
                            .freq_of_field
                            .iter()
                            .any(|&(_, ws)| (ws - mode.f0_hz).abs() <= 100.0 * line.g_hz)
                })
                .collect()
        })
        .collect();

    // render each step
    let mut manifest_steps = Vec::with_capacity(grid.len());
    for (k, &b) in grid.iter().enumerate() {
        let mut shifted: Vec<FanoParams> = Vec::with_capacity(scenario.modes.len());
        for (mode, included) in scenario.modes.iter().zip(&interacting) {
            let mut f_c = mode.f0_hz;
            for (line, inc) in lines.iter().zip(included) {
                if *inc {
                    let ws = line.freq_of_field[k].1;
                    f_c += photon_branch_hz(ws, mode.f0_hz, line.g_hz) - mode.f0_hz;
                }
            }
            shifted.push(mode.fano(f_c));
        }
        let mut s21: Vec<f64> = freq_grid
            .iter()
            .map(|&f| {
                shifted
                    .iter()
                    .map(|p| fano_model(p, f) - p.offset)
                    .sum::<f64>()
                    + shifted.iter().map(|p| p.offset).sum::<f64>()
                        / shifted.len().max(1) as f64
            })
            .collect();
        if scenario.noise_sigma > 0.0 {
            // per-step stream so rendering order cannot matter
            let step_seed = scenario
                .seed
                .wrapping_add(1 + k as u64)
                .wrapping_mul(0x9E3779B97F4A7C15);
            let mut rng = StdRng::seed_from_u64(step_seed);
            let normal = Normal::new(0.0, scenario.noise_sigma).unwrap();
            for v in &mut s21 {
                *v += normal.sample(&mut rng);
            }
        }
        for v in &mut s21 {
            *v = v.max(1e-12); // dB conversion floor
        }
        let trace = Trace::new(
            freq_grid.clone(),
            s21,
            TraceMeta {
                b_tesla: Some(b),
                timestamp: None,
                power: None,
            },
        )?;
        let name = format!("b{k:04}.csv");
        trace.write_csv(out_dir.join(&name))?;
        manifest_steps.push((b, name));
    }

    // manifest
    let manifest_path = out_dir.join("manifest.json");
    {
        #[derive(Serialize)]
        struct M<'a> {
            step_tesla: f64,
            steps: Vec<S<'a>>,
        }
        #[derive(Serialize)]
        struct S<'a> {
            b_tesla: f64,
            trace: &'a str,
        }
        let m = M {
            step_tesla: scenario.sweep.b_step_t,
            steps: manifest_steps
                .iter()
                .map(|(b, name)| S {
                    b_tesla: *b,
                    trace: name,
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        let mut f =
            std::fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        f.write_all(text.as_bytes())
            .map_err(|e| Error::io(&manifest_path, e))?;
    }

    // ground truth
    let ground_truth_path = out_dir.join("ground_truth.json");
    {
        let gt = GroundTruth {
            modes: scenario.modes.clone(),
            lines,
            crossings,
            noise_sigma: scenario.noise_sigma,
            seed: scenario.seed,
        };
        let text = serde_json::to_string_pretty(&gt).expect("ground truth serializes");
        let mut f = std::fs::File::create(&ground_truth_path)
            .map_err(|e| Error::io(&ground_truth_path, e))?;
        f.write_all(text.as_bytes())
            .map_err(|e| Error::io(&ground_truth_path, e))?;
    }

    Ok(SynthOutput {
        manifest_path,
        ground_truth_path,
        warnings,
    })
}

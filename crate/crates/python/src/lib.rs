//! Python bindings: the main types and operations of the analysis chain.
//!
//! Build with `cargo build -p wgmspec-py`, then import the produced
//! `libwgmspec_py.so` as `wgmspec_py` (see python/smoke_test.py).

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use wgmspec::consts::CODATA;
use wgmspec::coupling;
use wgmspec::lineshape;
use wgmspec::species;
use wgmspec::spinham;
use wgmspec::synth;

fn err(e: wgmspec::Error) -> PyErr {
    match &e {
        wgmspec::Error::Io { .. } | wgmspec::Error::Csv { .. } | wgmspec::Error::Json { .. } => {
            PyIOError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A spin system: spin, Lande g-factor and Stevens coefficients.
#[pyclass(name = "SpinSystem", skip_from_py_object)]
#[derive(Clone)]
struct PySpinSystem {
    inner: spinham::SpinSystem,
}

#[pymethods]
impl PySpinSystem {
    /// Parse the spin-system JSON document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: spinham::SpinSystem =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PySpinSystem { inner })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        Ok(PySpinSystem {
            inner: spinham::SpinSystem::from_json_file(path).map_err(err)?,
        })
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label().to_string()
    }

    #[getter]
    fn spin(&self) -> String {
        self.inner.spin().to_string()
    }

    #[getter]
    fn lande_g(&self) -> f64 {
        self.inner.lande_g()
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    /// Eigenenergies (Hz, ascending) at one field value (tesla).
    fn levels(&self, field_t: f64) -> PyResult<Vec<f64>> {
        let h = self.inner.hamiltonian(field_t, &CODATA).map_err(err)?;
        Ok(spinham::eigh(&h).map_err(err)?.values)
    }

    /// Zero-field splittings as (lower, upper, f_hz) tuples.
    fn zfs(&self) -> PyResult<Vec<(String, String, f64)>> {
        let entries = spinham::zfs(&self.inner, &CODATA).map_err(err)?;
        Ok(entries
            .iter()
            .map(|e| (e.lower.to_string(), e.upper.to_string(), e.f_hz))
            .collect())
    }

    /// Adiabatic level diagram over a field grid: (energies, labels) with
    /// energies[field][level] in Hz.
    fn level_diagram(&self, field_grid: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<String>)> {
        let d = spinham::level_diagram(&self.inner, &field_grid, &CODATA).map_err(err)?;
        Ok((
            d.energies,
            d.labels.iter().map(|l| l.to_string()).collect(),
        ))
    }

    /// Zero-field transition table rows as dicts.
    fn transition_table<'py>(
        &self,
        py: Python<'py>,
        max_delta_sz: u32,
    ) -> PyResult<Bound<'py, PyList>> {
        let rows = species::table_of_transitions(&self.inner, max_delta_sz, &CODATA).map_err(err)?;
        let out = PyList::empty(py);
        for r in rows {
            let d = PyDict::new(py);
            d.set_item("line", &r.line)?;
            d.set_item("delta_sz", r.delta_sz)?;
            d.set_item("zfs_hz", r.zfs_hz)?;
            d.set_item("lower", &r.lower)?;
            d.set_item("upper", &r.upper)?;
            out.append(d)?;
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "SpinSystem(label='{}', spin='{}', lande_g={})",
            self.inner.label(),
            self.inner.spin(),
            self.inner.lande_g()
        )
    }
}

/// Fano transmission model evaluated on a frequency list.
#[pyfunction]
fn fano_model(
    f0_hz: f64,
    gamma_hz: f64,
    fano_q: f64,
    amp: f64,
    offset: f64,
    freq_hz: Vec<f64>,
) -> Vec<f64> {
    let p = lineshape::FanoParams {
        f0_hz,
        gamma_hz,
        fano_q,
        amp,
        offset,
    };
    freq_hz.iter().map(|f| lineshape::fano_model(&p, *f)).collect()
}

fn fano_dict<'py>(
    py: Python<'py>,
    params: &lineshape::FanoParams,
    report: &lineshape::QualityReport,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("f0_hz", params.f0_hz)?;
    d.set_item("gamma_hz", params.gamma_hz)?;
    d.set_item("fano_q", params.fano_q)?;
    d.set_item("amp", params.amp)?;
    d.set_item("offset", params.offset)?;
    d.set_item("q_factor", report.q_factor)?;
    d.set_item("loss_tangent", report.loss_tangent)?;
    d.set_item("residual_rms", report.residual_rms)?;
    d.set_item("converged", report.converged)?;
    Ok(d)
}

/// Fit the Fano model to linear-magnitude samples.
#[pyfunction]
#[pyo3(signature = (freq_hz, s21, f0_guess, gamma_guess, fano_q_guess=0.0, amp_guess=1.0, offset_guess=0.0))]
fn fit_fano<'py>(
    py: Python<'py>,
    freq_hz: Vec<f64>,
    s21: Vec<f64>,
    f0_guess: f64,
    gamma_guess: f64,
    fano_q_guess: f64,
    amp_guess: f64,
    offset_guess: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let trace =
        lineshape::Trace::new(freq_hz, s21, lineshape::TraceMeta::default()).map_err(err)?;
    let guess = lineshape::FanoParams {
        f0_hz: f0_guess,
        gamma_hz: gamma_guess,
        fano_q: fano_q_guess,
        amp: amp_guess,
        offset: offset_guess,
    };
    let (params, report) = lineshape::fit_fano(&trace, &guess).map_err(err)?;
    fano_dict(py, &params, &report)
}

/// Resonance candidates in a trace, as dicts of Fano parameters.
#[pyfunction]
fn find_peaks<'py>(
    py: Python<'py>,
    freq_hz: Vec<f64>,
    s21: Vec<f64>,
    min_prominence: f64,
    min_q: f64,
) -> PyResult<Bound<'py, PyList>> {
    let trace =
        lineshape::Trace::new(freq_hz, s21, lineshape::TraceMeta::default()).map_err(err)?;
    let out = PyList::empty(py);
    for p in lineshape::find_peaks(&trace, min_prominence, min_q) {
        let d = PyDict::new(py);
        d.set_item("f0_hz", p.f0_hz)?;
        d.set_item("gamma_hz", p.gamma_hz)?;
        d.set_item("amp", p.amp)?;
        d.set_item("offset", p.offset)?;
        out.append(d)?;
    }
    Ok(out)
}

/// Coupled-oscillator normal modes (upper, lower) in Hz.
#[pyfunction]
fn normal_modes(ws_hz: f64, wp_hz: f64, g_hz: f64) -> (f64, f64) {
    coupling::normal_modes_at(ws_hz, wp_hz, g_hz)
}

/// Fit an avoided crossing to (b_tesla, f_hz) samples.
#[pyfunction]
fn fit_crossing<'py>(
    py: Python<'py>,
    b_tesla: Vec<f64>,
    f_hz: Vec<f64>,
    fp_guess: f64,
    intercept_guess: f64,
    slope_guess: f64,
    g_guess: f64,
) -> PyResult<Bound<'py, PyDict>> {
    if b_tesla.len() != f_hz.len() {
        return Err(PyValueError::new_err("b and f lists differ in length"));
    }
    let points: Vec<(f64, f64)> = b_tesla.into_iter().zip(f_hz).collect();
    let guess = coupling::CrossingModel {
        fp_hz: fp_guess,
        spin_intercept_hz: intercept_guess,
        spin_slope_hz_per_t: slope_guess,
        g_hz: g_guess,
    };
    let fit = coupling::fit_crossing(&points, &guess).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("fp_hz", fit.model.fp_hz)?;
    d.set_item("spin_intercept_hz", fit.model.spin_intercept_hz)?;
    d.set_item("spin_slope_hz_per_t", fit.model.spin_slope_hz_per_t)?;
    d.set_item("g_hz", fit.model.g_hz)?;
    d.set_item("g_sigma_hz", fit.g_sigma_hz())?;
    d.set_item("delta_ps", fit.model.delta_ps())?;
    d.set_item("crossing_field_t", fit.model.crossing_field_t())?;
    d.set_item("converged", fit.converged)?;
    Ok(d)
}

/// Spin concentration (cm^-3) and its 1-sigma from a coupling rate.
#[pyfunction]
#[pyo3(signature = (g_hz, fp_hz, lande_g, filling_factor=1.0, g_sigma_hz=0.0))]
fn concentration(
    g_hz: f64,
    fp_hz: f64,
    lande_g: f64,
    filling_factor: f64,
    g_sigma_hz: f64,
) -> PyResult<(f64, f64)> {
    let input = coupling::ConcentrationInput {
        g_hz,
        fp_hz,
        lande_g,
        filling_factor,
        g_sigma_hz,
        fp_sigma_hz: 0.0,
        lande_g_sigma: 0.0,
        filling_factor_sigma: 0.0,
    };
    coupling::concentration(&input, &CODATA).map_err(err)
}

/// Effective Lande g-factor from a Zeeman slope (Hz/T).
#[pyfunction]
fn effective_g(slope_hz_per_t: f64, delta_sz: u32) -> f64 {
    species::effective_g(slope_hz_per_t, delta_sz, &CODATA)
}

/// Render a synthetic sweep from a scenario JSON string; returns the
/// manifest path.
#[pyfunction]
fn synth_sweep(scenario_json: &str, out_dir: &str) -> PyResult<String> {
    let scenario: synth::Scenario =
        serde_json::from_str(scenario_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = synth::synth_sweep(&scenario, out_dir, &CODATA).map_err(err)?;
    Ok(out.manifest_path.display().to_string())
}

/// The built-in Gd3+ in CaWO4 system.
#[pyfunction]
fn gd_cawo4() -> PySpinSystem {
    PySpinSystem {
        inner: spinham::gd_cawo4(),
    }
}

#[pymodule]
fn wgmspec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpinSystem>()?;
    m.add_function(wrap_pyfunction!(fano_model, m)?)?;
    m.add_function(wrap_pyfunction!(fit_fano, m)?)?;
    m.add_function(wrap_pyfunction!(find_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(normal_modes, m)?)?;
    m.add_function(wrap_pyfunction!(fit_crossing, m)?)?;
    m.add_function(wrap_pyfunction!(concentration, m)?)?;
    m.add_function(wrap_pyfunction!(effective_g, m)?)?;
    m.add_function(wrap_pyfunction!(synth_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(gd_cawo4, m)?)?;
    m.add("MU_B_OVER_H_HZ_PER_T", wgmspec::consts::MU_B_OVER_H_HZ_PER_T)?;
    Ok(())
}

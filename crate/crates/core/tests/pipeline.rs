//! End-to-end pipeline checks on synthetic sweeps: ingestion round-trips,
//! tracking quality, site location and the crossing fit, all against the
//! written ground truth.

use wgmspec::consts::CODATA;
use wgmspec::coupling::{fit_crossing, CrossingModel};
use wgmspec::lineshape::FanoParams;
use wgmspec::modemap::{extract_sites, load_sweep, save_sweep, track_modes};
use wgmspec::spinham::gd_cawo4;
use wgmspec::synth::{synth_sweep, ModeSpec, Scenario, SpeciesSpec, SweepSpec, TraceSpec};

const MODE_HZ: f64 = 14.934048e9;
const G_HZ: f64 = 1.12e6;

fn published_crossing_scenario(seed: u64, noise: f64) -> Scenario {
    Scenario {
        modes: vec![ModeSpec {
            f0_hz: MODE_HZ,
            q_factor: 6.5e6,
            fano_q: 0.0,
            amp: 1.0,
            offset: 0.01,
        }],
        species: vec![SpeciesSpec::System {
            system: gd_cawo4(),
            g_hz: G_HZ,
            max_delta_sz: 1,
        }],
        sweep: SweepSpec {
            b_start_t: 0.155,
            b_stop_t: 0.175,
            b_step_t: 1e-3,
        },
        trace: TraceSpec {
            span_hz: 6e6,
            points: 4096,
        },
        noise_sigma: noise,
        seed,
    }
}

fn temp_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("wgmspec_pipeline").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn synth_output_loads_and_roundtrips() {
    let dir = temp_dir("roundtrip");
    let out = synth_sweep(&published_crossing_scenario(3, 0.02), &dir, &CODATA).unwrap();
    let map = load_sweep(&out.manifest_path).unwrap();
    assert_eq!(map.steps.len(), 21);
    let dir2 = temp_dir("roundtrip2");
    save_sweep(&map, &dir2).unwrap();
    for k in 0..21 {
        let name = format!("b{k:04}.csv");
        assert_eq!(
            std::fs::read(dir.join(&name)).unwrap(),
            std::fs::read(dir2.join(&name)).unwrap(),
            "{name} differs after save/load"
        );
    }
}

#[test]
fn pipeline_recovers_injected_crossing() {
    let dir = temp_dir("crossing");
    let out = synth_sweep(&published_crossing_scenario(11, 0.05), &dir, &CODATA).unwrap();
    let gt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out.ground_truth_path).unwrap()).unwrap();
    let crossing = &gt["crossings"].as_array().unwrap()[0];
    let b_true = crossing["b_cross_t"].as_f64().unwrap();

    let map = load_sweep(&out.manifest_path).unwrap();
    let seed = FanoParams {
        f0_hz: MODE_HZ,
        gamma_hz: MODE_HZ / 6.5e6,
        fano_q: 0.0,
        amp: 1.0,
        offset: 0.01,
    };
    let tracked = track_modes(&map, &[seed], 2.5e6);
    assert_eq!(tracked[0].points.len(), 21, "gaps: {:?}", tracked[0].gaps);

    // each tracked point follows the rendered photon branch to within a
    // tenth of a linewidth plus 5% of the local excursion
    let line_id = crossing["line_id"].as_u64().unwrap() as usize;
    let line_freqs = gt["lines"].as_array().unwrap()[line_id]["freq_of_field"]
        .as_array()
        .unwrap();
    let gamma = MODE_HZ / 6.5e6;
    for (p, ws_entry) in tracked[0].points.iter().zip(line_freqs) {
        let ws = ws_entry[1].as_f64().unwrap();
        let want = wgmspec::coupling::photon_branch_hz(ws, MODE_HZ, G_HZ);
        assert!(
            (p.params.f0_hz - want).abs() < gamma / 10.0 + 0.05 * (want - MODE_HZ).abs(),
            "point at {} is {} Hz off the branch",
            p.b_tesla,
            p.params.f0_hz - want
        );
    }

    let (sites, issues) = extract_sites(&tracked, 5.0);
    assert!(issues.is_empty());
    assert_eq!(sites.len(), 1, "sites: {sites:?}");
    assert!(
        (sites[0].b_tesla - b_true).abs() <= 2e-3,
        "site at {} vs true {}",
        sites[0].b_tesla,
        b_true
    );

    let points: Vec<(f64, f64)> = tracked[0]
        .points
        .iter()
        .map(|p| (p.b_tesla, p.params.f0_hz))
        .collect();
    let guess = CrossingModel {
        fp_hz: MODE_HZ,
        spin_intercept_hz: MODE_HZ - 27.8525e9 * sites[0].b_tesla,
        spin_slope_hz_per_t: 27.8525e9,
        g_hz: sites[0].strength_hz,
    };
    let fit = fit_crossing(&points, &guess).unwrap();
    assert!(
        (fit.model.g_hz - G_HZ).abs() / G_HZ < 0.1,
        "g = {} Hz",
        fit.model.g_hz
    );
    assert!((fit.model.crossing_field_t() - b_true).abs() < 2e-3);
    // both branches are populated by the tracked S-curve
    assert!(fit.upper_branch.iter().any(|b| *b));
    assert!(fit.upper_branch.iter().any(|b| !*b));
}

#[test]
fn two_seeds_agree_within_uncertainty() {
    let mut estimates = Vec::new();
    for seed in [21u64, 22u64] {
        let dir = temp_dir(&format!("seedpair{seed}"));
        let out = synth_sweep(&published_crossing_scenario(seed, 0.05), &dir, &CODATA).unwrap();
        let map = load_sweep(&out.manifest_path).unwrap();
        let seed_params = FanoParams {
            f0_hz: MODE_HZ,
            gamma_hz: MODE_HZ / 6.5e6,
            fano_q: 0.0,
            amp: 1.0,
            offset: 0.01,
        };
        let tracked = track_modes(&map, &[seed_params], 2.5e6);
        let (sites, _) = extract_sites(&tracked, 5.0);
        let points: Vec<(f64, f64)> = tracked[0]
            .points
            .iter()
            .map(|p| (p.b_tesla, p.params.f0_hz))
            .collect();
        let guess = CrossingModel {
            fp_hz: MODE_HZ,
            spin_intercept_hz: MODE_HZ - 27.8525e9 * sites[0].b_tesla,
            spin_slope_hz_per_t: 27.8525e9,
            g_hz: sites[0].strength_hz,
        };
        let fit = fit_crossing(&points, &guess).unwrap();
        estimates.push((fit.model.g_hz, fit.g_sigma_hz()));
    }
    let (g1, s1) = estimates[0];
    let (g2, s2) = estimates[1];
    let sigma = (s1 * s1 + s2 * s2).sqrt().max(1e3);
    assert!(
        (g1 - g2).abs() < 2.0 * sigma,
        "seeds disagree: {g1} vs {g2} (2 sigma = {})",
        2.0 * sigma
    );
}

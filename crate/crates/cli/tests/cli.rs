//! Exercises the binary end to end through its documented subcommands and
//! exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wgmspec"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("wgmspec_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

#[test]
fn zfs_prints_published_splittings() {
    let out = bin()
        .args(["zfs", "--system"])
        .arg(data("gd_cawo4.json"))
        .arg("--quiet")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let values: Vec<f64> = v["zfs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["f_hz"].as_f64().unwrap())
        .collect();
    for want_ghz in [10.49, 17.90, 15.14, 28.33] {
        assert!(
            values
                .iter()
                .any(|f| (f / 1e9 - want_ghz).abs() / want_ghz < 0.01),
            "no splitting within 1% of {want_ghz} GHz in {values:?}"
        );
    }
}

#[test]
fn concentration_reproduces_published_value() {
    let out = bin()
        .args([
            "concentration",
            "--g-hz",
            "1.12e6",
            "--fp-hz",
            "14.934048e9",
            "--gl",
            "1.99",
            "--xi",
            "1.0",
            "--quiet",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v = stdout_json(&out);
    let n = v["n_cm3"].as_f64().unwrap();
    assert!((n - 8.28e13).abs() / 8.28e13 < 0.02, "n = {n:.4e}");
}

#[test]
fn empty_field_range_is_usage_error() {
    let out = bin()
        .args(["levels", "--system"])
        .arg(data("gd_cawo4.json"))
        .args(["--bmax", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty field range"));
}

#[test]
fn missing_input_file_is_data_error() {
    let out = bin()
        .args(["zfs", "--system", "/nonexistent/system.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin().args(["zfs", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn levels_csv_has_expected_shape() {
    let dir = temp_dir("levels");
    let out_path = dir.join("levels.csv");
    let out = bin()
        .args(["levels", "--system"])
        .arg(data("gd_cawo4.json"))
        .args(["--bmin", "0", "--bmax", "0.5", "--steps", "11", "--out"])
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "b_tesla,e0_hz,e1_hz,e2_hz,e3_hz,e4_hz,e5_hz,e6_hz,e7_hz"
    );
    assert_eq!(lines.count(), 11);
}

fn write_scenario(path: &Path, seed: u64) {
    let scenario = serde_json::json!({
        "modes": [{"f0_hz": 14.934048e9, "q_factor": 6.5e6, "fano_q": 0.0, "amp": 1.0, "offset": 0.01}],
        "species": [{
            "type": "system",
            "system": {
                "label": "CaWO4:Gd3+", "spin": "7/2", "lande_g": 1.99,
                "stevens_ghz": {"B20": -0.9215, "B40": -0.001139, "B44": -0.007015,
                                 "B60": 5.935e-7, "B64": 4.747e-7}
            },
            "g_hz": 1.12e6, "max_delta_sz": 1
        }],
        "sweep": {"b_start_t": 0.155, "b_stop_t": 0.175, "b_step_t": 0.001},
        "trace": {"span_hz": 6e6, "points": 4096},
        "noise_sigma": 0.05,
        "seed": seed
    });
    std::fs::write(path, serde_json::to_string_pretty(&scenario).unwrap()).unwrap();
}

#[test]
fn full_pipeline_recovers_coupling() {
    let dir = temp_dir("pipeline");
    let scenario = dir.join("scenario.json");
    write_scenario(&scenario, 5);
    let sweep_dir = dir.join("sweep");

    let out = bin()
        .args(["synth", "--scenario"])
        .arg(&scenario)
        .arg("--out-dir")
        .arg(&sweep_dir)
        .arg("--quiet")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let modes = dir.join("modes.csv");
    let out = bin()
        .args(["track", "--manifest"])
        .arg(sweep_dir.join("manifest.json"))
        .args(["--min-prominence", "0.3", "--window-hz", "2.5e6", "--out"])
        .arg(&modes)
        .arg("--quiet")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let sites = dir.join("sites.csv");
    let out = bin()
        .args(["sites", "--modes"])
        .arg(&modes)
        .arg("--out")
        .arg(&sites)
        .arg("--quiet")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let site_rows = std::fs::read_to_string(&sites).unwrap();
    assert_eq!(site_rows.lines().count(), 2, "one site expected:\n{site_rows}");

    let out = bin()
        .args(["fit-crossing", "--modes"])
        .arg(&modes)
        .arg("--sites")
        .arg(&sites)
        .args([
            "--slope-guess",
            "27.85e9",
            "--concentration",
            "--gl",
            "1.99",
            "--xi",
            "1.0",
            "--quiet",
        ])
        .output()
        .unwrap();
    let code = out.status.code();
    assert!(
        code == Some(0) || code == Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = stdout_json(&out);
    let g = v["g_hz"].as_f64().unwrap();
    assert!((g - 1.12e6).abs() / 1.12e6 < 0.1, "g = {g}");
    let n = v["concentration_cm3"].as_f64().unwrap();
    assert!(n > 5e13 && n < 1.2e14, "n = {n:.3e}");
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = temp_dir("determinism");
    let scenario = dir.join("scenario.json");
    write_scenario(&scenario, 9);
    for sub in ["a", "b"] {
        let out = bin()
            .args(["synth", "--scenario"])
            .arg(&scenario)
            .arg("--out-dir")
            .arg(dir.join(sub))
            .arg("--quiet")
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.join("a/b0007.csv")).unwrap();
    let b = std::fs::read(dir.join("b/b0007.csv")).unwrap();
    assert_eq!(a, b);
    // overriding the seed changes the noise
    let out = bin()
        .args(["synth", "--scenario"])
        .arg(&scenario)
        .arg("--out-dir")
        .arg(dir.join("c"))
        .args(["--seed", "10", "--quiet"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let c = std::fs::read(dir.join("c/b0007.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn identify_labels_fe_line() {
    let dir = temp_dir("identify");
    let sites = dir.join("sites.csv");
    let mut csv = String::from("mode_id,b_tesla,f_hz,strength_hz,width_tesla\n");
    for k in 1..=8 {
        let b = 0.04 * k as f64;
        let f = 2.20e9 + 60.18e9 * b;
        csv.push_str(&format!("0,{b},{f},1e6,0.001\n"));
    }
    std::fs::write(&sites, csv).unwrap();
    let out = bin()
        .args(["identify", "--sites"])
        .arg(&sites)
        .args(["--seed", "1", "--quiet"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["lines"].as_array().unwrap().len(), 1);
    assert_eq!(v["lines"][0]["verdict"], "CaWO4:Fe3+");
}

#[test]
fn fit_fano_golden_q() {
    // render a clean resonance directly into a trace CSV
    let dir = temp_dir("fano");
    let trace = dir.join("trace.csv");
    let f0 = 14.934048e9_f64;
    let gamma = 2280.0_f64;
    let mut csv = String::from("freq_hz,s21_db\n");
    let n = 801;
    for i in 0..n {
        let f = f0 - 10.0 * gamma + 20.0 * gamma * i as f64 / (n - 1) as f64;
        let d = f - f0;
        let hw = gamma / 2.0;
        let lin: f64 = 1.0 - d * d / (hw * hw + d * d) + 0.01;
        csv.push_str(&format!("{f},{}\n", 20.0 * lin.log10()));
    }
    std::fs::write(&trace, csv).unwrap();
    let out = bin()
        .args(["fit-fano", "--trace"])
        .arg(&trace)
        .arg("--quiet")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let q = v["q_factor"].as_f64().unwrap();
    assert!((q - 6.5e6).abs() / 6.5e6 < 0.02, "Q = {q:.4e}");
    assert_eq!(
        v["loss_tangent"].as_f64().unwrap(),
        1.0 / v["q_factor"].as_f64().unwrap()
    );
}

#[test]
fn census_reports_two_modes() {
    let dir = temp_dir("census");
    let trace = dir.join("trace.csv");
    let mut csv = String::from("freq_hz,s21_db\n");
    let n = 8001;
    let centers = [10.0e9, 10.002e9];
    for i in 0..n {
        let f = 9.999e9 + 4e6 * i as f64 / (n - 1) as f64;
        let mut lin = 0.01;
        for c in centers {
            let d: f64 = f - c;
            let hw = 5e3 / 2.0;
            lin += 1.0 - d * d / (hw * hw + d * d);
        }
        csv.push_str(&format!("{f},{}\n", 20.0 * lin.log10()));
    }
    std::fs::write(&trace, csv).unwrap();
    let out = bin()
        .args(["census", "--trace"])
        .arg(&trace)
        .args(["--min-prominence", "0.3", "--min-q", "1e4", "--threads", "2", "--format", "json", "--quiet"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2, "{v}");
    for (row, want) in rows.iter().zip(centers) {
        let f0 = row["f0_hz"].as_f64().unwrap();
        assert!((f0 - want).abs() < 5e3, "f0 = {f0}");
        let q = row["q_factor"].as_f64().unwrap();
        assert!((q - want / 5e3).abs() / (want / 5e3) < 0.05);
    }
}

#[test]
fn config_overrides_constants() {
    let dir = temp_dir("config");
    let config = dir.join("config.json");
    // doubling mu_B/h quarters the concentration (n ~ 1/mu_B^2)
    std::fs::write(
        &config,
        format!(
            "{{\"mu_b_over_h_hz_per_t\": {}}}",
            2.0 * 13.996244936e9
        ),
    )
    .unwrap();
    let args = [
        "concentration",
        "--g-hz",
        "1.12e6",
        "--fp-hz",
        "14.934048e9",
        "--gl",
        "1.99",
        "--quiet",
    ];
    let base = stdout_json(&bin().args(args).output().unwrap())["n_cm3"]
        .as_f64()
        .unwrap();
    let out = bin()
        .arg("--config")
        .arg(&config)
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success());
    let scaled = stdout_json(&out)["n_cm3"].as_f64().unwrap();
    assert!((base / scaled - 4.0).abs() < 1e-9, "{base} vs {scaled}");
    // the env var works too
    let out = bin()
        .env("WGMSPEC_CONFIG", &config)
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["n_cm3"].as_f64().unwrap(), scaled);
    // malformed config is a data error
    std::fs::write(&config, "{\"threads\": \"many\"}").unwrap();
    let out = bin().arg("--config").arg(&config).args(args).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

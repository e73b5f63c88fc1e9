#!/usr/bin/env python3
"""Smoke test for the wgmspec_py extension module.

Builds nothing itself: run `cargo build -p wgmspec-py` (or --release)
first. The script locates the produced cdylib, makes it importable, and
checks a handful of published numbers end to end.
"""

import json
import math
import os
import shutil
import sys
import tempfile


def import_extension():
    here = os.path.dirname(os.path.abspath(__file__))
    root = os.path.dirname(here)
    candidates = [
        os.path.join(root, "target", profile, "libwgmspec_py.so")
        for profile in ("release", "debug")
    ]
    lib = next((c for c in candidates if os.path.exists(c)), None)
    if lib is None:
        sys.exit("build the extension first: cargo build -p wgmspec-py")
    stage = tempfile.mkdtemp(prefix="wgmspec_py_")
    shutil.copy(lib, os.path.join(stage, "wgmspec_py.so"))
    sys.path.insert(0, stage)
    import wgmspec_py

    return wgmspec_py


def check(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"{status} {name}" + (f": {detail}" if detail else ""))
    if not ok:
        sys.exit(1)


def main():
    wg = import_extension()

    # zero-field splittings of the built-in Gd system vs the published set
    gd = wg.gd_cawo4()
    splittings = [f for (_, _, f) in gd.zfs()]
    for want_ghz in (10.49, 17.90, 15.14, 28.33):
        hit = any(abs(f / 1e9 - want_ghz) / want_ghz < 0.01 for f in splittings)
        check(f"zfs contains {want_ghz} GHz", hit)

    # Fano fit on model data recovers Q = f0/Gamma
    f0, gamma = 14.934048e9, 2280.0
    freq = [f0 - 10 * gamma + 20 * gamma * i / 800 for i in range(801)]
    s21 = wg.fano_model(f0, gamma, 0.0, 1.0, 0.01, freq)
    fit = wg.fit_fano(freq, s21, f0 + 300.0, gamma * 1.4, 0.0, 0.8, 0.0)
    check(
        "fano fit Q",
        abs(fit["q_factor"] - 6.55e6) / 6.55e6 < 1e-3 and fit["converged"],
        f"Q = {fit['q_factor']:.4g}",
    )
    check(
        "loss tangent is 1/Q",
        fit["loss_tangent"] == 1.0 / fit["q_factor"],
    )

    # concentration golden
    n, _sigma = wg.concentration(1.12e6, 14.934048e9, 1.99, 1.0)
    check(
        "concentration",
        abs(n - 8.28e13) / 8.28e13 < 0.02,
        f"n = {n:.4g} cm^-3",
    )

    # on-resonance normal-mode splitting is 2 g
    up, lo = wg.normal_modes(14.934048e9, 14.934048e9, 1.12e6)
    check(
        "normal-mode splitting",
        abs((up - lo) - 2.24e6) / 2.24e6 < 1e-3,
        f"split = {(up - lo) / 1e6:.4f} MHz",
    )

    # crossing fit on branch samples
    slope = 27.8525e9
    fp, g = 14.934048e9, 1.12e6
    bc = 0.169
    bs, fs = [], []
    for k in range(-10, 11):
        b = bc + 1e-4 * k
        ws = fp + slope * (b - bc)
        upper, lower = wg.normal_modes(ws, fp, g)
        bs.append(b)
        fs.append(upper if ws <= fp else lower)
    fit = wg.fit_crossing(bs, fs, fp + 1e5, fp - slope * bc - 1e7, slope * 1.03, 2e6)
    check(
        "crossing fit g",
        abs(fit["g_hz"] - g) / g < 1e-3,
        f"g = {fit['g_hz'] / 1e6:.4f} MHz",
    )

    # effective g from the Fe3+ slope
    check(
        "effective g",
        abs(wg.effective_g(60.18e9, 1) - 4.30) < 0.005,
        f"g_eff = {wg.effective_g(60.18e9, 1):.4f}",
    )

    # synthetic sweep renders and reports its ground truth
    out_dir = tempfile.mkdtemp(prefix="wgmspec_synth_")
    scenario = {
        "modes": [{"f0_hz": fp, "q_factor": 6.5e6, "fano_q": 0.0, "amp": 1.0, "offset": 0.01}],
        "species": [{"type": "line", "slope_hz_per_t": slope, "intercept_hz": fp - slope * bc, "g_hz": g}],
        "sweep": {"b_start_t": 0.164, "b_stop_t": 0.174, "b_step_t": 0.001},
        "trace": {"span_hz": 6e6, "points": 1024},
        "noise_sigma": 0.0,
        "seed": 1,
    }
    manifest = wg.synth_sweep(json.dumps(scenario), out_dir)
    with open(os.path.join(out_dir, "ground_truth.json")) as fh:
        gt = json.load(fh)
    check(
        "synth ground truth",
        os.path.exists(manifest)
        and len(gt["crossings"]) == 1
        and math.isclose(gt["crossings"][0]["b_cross_t"], bc, abs_tol=1e-6),
        f"crossing at {gt['crossings'][0]['b_cross_t']:.4f} T",
    )

    # level diagram labels follow the adiabatic columns
    energies, labels = gd.level_diagram([0.0, 0.01, 0.02])
    check(
        "level diagram shape",
        len(energies) == 3 and len(energies[0]) == 8 and len(labels) == 8,
        f"labels = {labels}",
    )

    print("all smoke checks passed")


if __name__ == "__main__":
    main()

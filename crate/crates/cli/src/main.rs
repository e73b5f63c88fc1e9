//! `wgmspec`: the multi-mode ESR analysis pipeline as subcommands.
//!
//! JSON results go to stdout; human-readable summaries go to stderr unless
//! `--quiet`. Frequencies are Hz and fields tesla everywhere. Exit codes:
//! 0 success, 1 usage error, 2 data error, 3 non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use wgmspec::consts::Constants;
use wgmspec::coupling::{
    concentration, fit_crossing, ConcentrationInput, CrossingModel,
};
use wgmspec::lineshape::{find_peaks, fit_fano, FanoParams, Trace};
use wgmspec::modemap::{
    extract_sites, load_sweep, read_modes_csv, read_sites_csv, track_modes, write_modes_csv,
    write_sites_csv, ModeTrace,
};
use wgmspec::species::{match_species, regress_lines, RansacOptions, SpeciesRecord};
use wgmspec::spinham::{level_diagram, transitions, zfs, SpinSystem};
use wgmspec::synth::{synth_sweep, Scenario};

#[derive(Parser)]
#[command(name = "wgmspec", version, about = "Multi-mode WGM ESR spectroscopy analysis")]
struct Cli {
    /// Config file (JSON); WGMSPEC_CONFIG is used when unset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress the human-readable summary on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Energy levels of a spin system over a field range (CSV).
    Levels(LevelsArgs),
    /// Transition lines of a spin system over a field range (CSV).
    Transitions(TransitionsArgs),
    /// Zero-field splittings of a spin system.
    Zfs(ZfsArgs),
    /// Fit the Fano model to one trace.
    FitFano(FitFanoArgs),
    /// Batch-fit every resonance in a trace to a Q-factor table.
    Census(CensusArgs),
    /// Track modes across a field sweep.
    Track(TrackArgs),
    /// Extract perturbation sites from tracked modes.
    Sites(SitesArgs),
    /// Group sites into lines and match against a species database.
    Identify(IdentifyArgs),
    /// Fit an avoided crossing and extract the coupling rate.
    FitCrossing(FitCrossingArgs),
    /// Spin concentration from a coupling rate.
    Concentration(ConcentrationArgs),
    /// Render a synthetic sweep from a scenario file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct LevelsArgs {
    /// Spin-system JSON file.
    #[arg(long)]
    system: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    bmin: f64,
    #[arg(long)]
    bmax: f64,
    #[arg(long, default_value_t = 201)]
    steps: usize,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TransitionsArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    bmin: f64,
    #[arg(long)]
    bmax: f64,
    #[arg(long, default_value_t = 201)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    max_delta_sz: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ZfsArgs {
    #[arg(long)]
    system: PathBuf,
}

#[derive(Args)]
struct FitFanoArgs {
    /// Trace CSV (freq_hz,s21_db).
    #[arg(long)]
    trace: PathBuf,
    /// Center-frequency guess; the strongest peak is used when omitted.
    #[arg(long)]
    f0_guess: Option<f64>,
    #[arg(long)]
    gamma_guess: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    q_guess: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CensusArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Peak threshold in linear magnitude.
    #[arg(long, default_value_t = 0.1)]
    min_prominence: f64,
    /// Keep only candidates with f0/width above this.
    #[arg(long, default_value_t = 1e4)]
    min_q: f64,
    /// Worker threads (config `threads` when omitted).
    #[arg(long)]
    threads: Option<usize>,
    /// `csv` or `json` (config `format` when omitted).
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    /// Sweep manifest JSON.
    #[arg(long)]
    manifest: PathBuf,
    /// Search window; defaults to 20 linewidths per seeded mode.
    #[arg(long)]
    window_hz: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    min_prominence: f64,
    #[arg(long, default_value_t = 1e4)]
    min_q: f64,
    /// Output modes.csv path.
    #[arg(long, default_value = "modes.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SitesArgs {
    /// modes.csv from `track`.
    #[arg(long)]
    modes: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    threshold_sigma: f64,
    #[arg(long, default_value = "sites.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    /// sites.csv from `sites`.
    #[arg(long)]
    sites: PathBuf,
    /// Species database JSON (built-in set when omitted).
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    #[arg(long, default_value_t = 50e6)]
    tol_hz: f64,
    #[arg(long, default_value_t = 4)]
    min_inliers: usize,
    /// RANSAC seed (config `seed` when omitted).
    #[arg(long)]
    seed: Option<u64>,
    /// Output identify.json path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitCrossingArgs {
    /// Plain CSV of b_tesla,f_hz branch points.
    #[arg(long, conflicts_with = "modes")]
    points: Option<PathBuf>,
    /// modes.csv from `track`.
    #[arg(long)]
    modes: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    mode_id: usize,
    /// sites.csv to seed the crossing location (with --modes).
    #[arg(long)]
    sites: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    site_index: usize,
    /// Restrict to +- this window around the site field, tesla.
    #[arg(long)]
    b_window: Option<f64>,
    /// Spin-line slope guess, Hz/T.
    #[arg(long)]
    slope_guess: f64,
    #[arg(long)]
    fp_guess: Option<f64>,
    #[arg(long)]
    g_guess: Option<f64>,
    /// Also convert g to a spin concentration with these parameters.
    #[arg(long, requires = "gl")]
    concentration: bool,
    #[arg(long)]
    gl: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    xi: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConcentrationArgs {
    #[arg(long)]
    g_hz: f64,
    #[arg(long)]
    fp_hz: f64,
    #[arg(long)]
    gl: f64,
    #[arg(long, default_value_t = 1.0)]
    xi: f64,
    #[arg(long, default_value_t = 0.0)]
    g_sigma_hz: f64,
    #[arg(long, default_value_t = 0.0)]
    fp_sigma_hz: f64,
    #[arg(long, default_value_t = 0.0)]
    gl_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    xi_sigma: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the scenario RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Config file: constants overrides, defaults for threads/seed/format.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CliConfig {
    mu_b_over_h_hz_per_t: Option<f64>,
    h_js: Option<f64>,
    mu0_n_per_a2: Option<f64>,
    threads: Option<usize>,
    seed: Option<u64>,
    format: Option<String>,
}

impl CliConfig {
    fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os("WGMSPEC_CONFIG").map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let cfg: CliConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if let Some(t) = cfg.threads {
            if t < 1 {
                return Err(CliError::Usage("config: threads must be >= 1".into()));
            }
        }
        if let Some(f) = &cfg.format {
            if f != "csv" && f != "json" {
                return Err(CliError::Usage(format!(
                    "config: format must be 'csv' or 'json', got '{f}'"
                )));
            }
        }
        Ok(cfg)
    }

    fn constants(&self) -> Constants {
        let mut c = Constants::default();
        if let Some(v) = self.mu_b_over_h_hz_per_t {
            c.mu_b_over_h_hz_per_t = v;
        }
        if let Some(v) = self.h_js {
            c.h_js = v;
        }
        if let Some(v) = self.mu0_n_per_a2 {
            c.mu0_n_per_a2 = v;
        }
        c
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    NonConvergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::NonConvergence(m) => m,
        }
    }
}

impl From<wgmspec::Error> for CliError {
    fn from(e: wgmspec::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's rendering, but usage problems always exit 1
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let config = match CliConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return ExitCode::from(e.code());
        }
    };
    match run(&cli, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: &Cli, config: &CliConfig) -> Result<(), CliError> {
    let consts = config.constants();
    match &cli.cmd {
        Cmd::Levels(a) => cmd_levels(a, &consts),
        Cmd::Transitions(a) => cmd_transitions(a, &consts),
        Cmd::Zfs(a) => cmd_zfs(a, &consts, cli.quiet),
        Cmd::FitFano(a) => cmd_fit_fano(a, cli.quiet),
        Cmd::Census(a) => cmd_census(a, config, cli.quiet),
        Cmd::Track(a) => cmd_track(a, cli.quiet),
        Cmd::Sites(a) => cmd_sites(a, cli.quiet),
        Cmd::Identify(a) => cmd_identify(a, config, &consts, cli.quiet),
        Cmd::FitCrossing(a) => cmd_fit_crossing(a, &consts, cli.quiet),
        Cmd::Concentration(a) => cmd_concentration(a, &consts, cli.quiet),
        Cmd::Synth(a) => cmd_synth(a, &consts, cli.quiet),
    }
}

fn field_grid(bmin: f64, bmax: f64, steps: usize) -> Result<Vec<f64>, CliError> {
    if bmax <= bmin || steps < 1 {
        return Err(CliError::Usage(format!(
            "empty field range: bmin {bmin}, bmax {bmax}, steps {steps}; need bmax > bmin and steps >= 1"
        )));
    }
    if steps == 1 {
        return Ok(vec![bmin]);
    }
    Ok((0..steps)
        .map(|i| bmin + (bmax - bmin) * i as f64 / (steps - 1) as f64)
        .collect())
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_levels(a: &LevelsArgs, consts: &Constants) -> Result<(), CliError> {
    let system = SpinSystem::from_json_file(&a.system)?;
    let grid = field_grid(a.bmin, a.bmax, a.steps)?;
    let diagram = level_diagram(&system, &grid, consts)?;
    let mut csv = String::from("b_tesla");
    for i in 0..diagram.labels.len() {
        csv.push_str(&format!(",e{i}_hz"));
    }
    csv.push('\n');
    for (b, row) in diagram.field_grid.iter().zip(&diagram.energies) {
        csv.push_str(&format!("{b}"));
        for e in row {
            csv.push_str(&format!(",{e}"));
        }
        csv.push('\n');
    }
    for w in &diagram.warnings {
        eprintln!(
            "warning: ambiguous tracking between {} and {} T (overlap {:.3})",
            w.b_lo_tesla, w.b_hi_tesla, w.min_overlap
        );
    }
    emit(&csv, a.out.as_deref())
}

fn cmd_transitions(a: &TransitionsArgs, consts: &Constants) -> Result<(), CliError> {
    let system = SpinSystem::from_json_file(&a.system)?;
    let grid = field_grid(a.bmin, a.bmax, a.steps)?;
    let diagram = level_diagram(&system, &grid, consts)?;
    let lines = transitions(&diagram, a.max_delta_sz, consts)?;
    let mut csv = String::from("b_tesla,f_hz,lower,upper,delta_sz\n");
    for line in &lines {
        for &(b, f) in &line.freq_of_field {
            csv.push_str(&format!(
                "{b},{f},{},{},{}\n",
                line.lower, line.upper, line.delta_sz
            ));
        }
    }
    emit(&csv, a.out.as_deref())
}

fn cmd_zfs(a: &ZfsArgs, consts: &Constants, quiet: bool) -> Result<(), CliError> {
    let system = SpinSystem::from_json_file(&a.system)?;
    let entries = zfs(&system, consts)?;
    if !quiet {
        eprintln!("zero-field splittings of {}:", system.label());
        for e in &entries {
            eprintln!("  |{}> -> |{}>  {:.4} GHz", e.lower, e.upper, e.f_hz / 1e9);
        }
    }
    let payload = json!({
        "system": system.label(),
        "zfs": entries.iter().map(|e| json!({
            "lower": format!("{}", e.lower),
            "upper": format!("{}", e.upper),
            "f_hz": e.f_hz,
        })).collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&payload).unwrap());
    Ok(())
}

fn fano_json(params: &FanoParams, report: &wgmspec::lineshape::QualityReport) -> serde_json::Value {
    json!({
        "f0_hz": params.f0_hz,
        "gamma_hz": params.gamma_hz,
        "fano_q": params.fano_q,
        "amp": params.amp,
        "offset": params.offset,
        "q_factor": report.q_factor,
        "loss_tangent": report.loss_tangent,
        "residual_rms": report.residual_rms,
        "converged": report.converged,
        "iterations": report.iterations,
        "covariance": report.covariance,
    })
}

fn cmd_fit_fano(a: &FitFanoArgs, quiet: bool) -> Result<(), CliError> {
    let trace = Trace::read_csv(&a.trace)?;
    let guess = match (a.f0_guess, a.gamma_guess) {
        (Some(f0), Some(gamma)) => FanoParams {
            f0_hz: f0,
            gamma_hz: gamma,
            fano_q: a.q_guess,
            amp: 1.0,
            offset: 0.0,
        },
        _ => {
            let peaks = find_peaks(&trace, 0.0, 0.0);
            let best = peaks
                .iter()
                .max_by(|x, y| x.amp.abs().partial_cmp(&y.amp.abs()).unwrap())
                .ok_or_else(|| CliError::Data("no resonance candidate in trace".into()))?;
            FanoParams {
                fano_q: a.q_guess,
                ..*best
            }
        }
    };
    let (params, report) = fit_fano(&trace, &guess)?;
    if !quiet {
        eprintln!(
            "f0 = {:.6} GHz, Gamma = {:.3} kHz, Q = {:.3e}, q = {:.3}, converged = {}",
            params.f0_hz / 1e9,
            params.gamma_hz / 1e3,
            report.q_factor,
            params.fano_q,
            report.converged
        );
    }
    let text = serde_json::to_string_pretty(&fano_json(&params, &report)).unwrap();
    let converged = report.converged;
    emit(&text, a.out.as_deref())?;
    if !converged {
        return Err(CliError::NonConvergence(
            "fit did not converge; best iterate written".into(),
        ));
    }
    Ok(())
}

fn cmd_census(a: &CensusArgs, config: &CliConfig, quiet: bool) -> Result<(), CliError> {
    let trace = Trace::read_csv(&a.trace)?;
    let guesses = find_peaks(&trace, a.min_prominence, a.min_q);
    let threads = a.threads.or(config.threads).unwrap_or(1).max(1);

    // batch fit, chunked over scoped worker threads
    let mut fits: Vec<Option<(FanoParams, wgmspec::lineshape::QualityReport)>> =
        vec![None; guesses.len()];
    let chunk = guesses.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        for (slot, work) in fits.chunks_mut(chunk).zip(guesses.chunks(chunk)) {
            let trace = &trace;
            scope.spawn(move || {
                for (out, guess) in slot.iter_mut().zip(work) {
                    let sub = trace.window(guess.f0_hz, guess.gamma_hz * 30.0);
                    *out = fit_fano(&sub, guess).ok();
                }
            });
        }
    });

    let rows: Vec<(FanoParams, wgmspec::lineshape::QualityReport)> =
        fits.into_iter().flatten().collect();
    if !quiet {
        eprintln!("{} candidates, {} fitted", guesses.len(), rows.len());
        for (p, r) in &rows {
            eprintln!(
                "  f0 = {:.6} GHz  Q = {:.3e}  q = {:+.3}",
                p.f0_hz / 1e9,
                r.q_factor,
                p.fano_q
            );
        }
    }
    let format = a.format.as_deref().or(config.format.as_deref()).unwrap_or("csv");
    let text = match format {
        "json" => serde_json::to_string_pretty(
            &rows.iter().map(|(p, r)| fano_json(p, r)).collect::<Vec<_>>(),
        )
        .unwrap(),
        "csv" => {
            let mut out = String::from("f0_hz,gamma_hz,q_factor,fano_q,amp,offset,converged\n");
            for (p, r) in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    p.f0_hz, p.gamma_hz, r.q_factor, p.fano_q, p.amp, p.offset, r.converged
                ));
            }
            out
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown format '{other}' (use csv or json)"
            )))
        }
    };
    emit(&text, a.out.as_deref())
}

fn cmd_track(a: &TrackArgs, quiet: bool) -> Result<(), CliError> {
    let map = load_sweep(&a.manifest)?;
    let first = map
        .steps
        .first()
        .ok_or_else(|| CliError::Data("sweep has no steps".into()))?;
    let seeds_raw = find_peaks(&first.trace, a.min_prominence, a.min_q);
    if seeds_raw.is_empty() {
        return Err(CliError::Data(
            "no modes found in the first sweep step".into(),
        ));
    }
    // refit each candidate for a clean linewidth before tracking
    let mut seeds = Vec::new();
    for guess in &seeds_raw {
        let sub = first.trace.window(guess.f0_hz, guess.gamma_hz * 30.0);
        if let Ok((p, _)) = fit_fano(&sub, guess) {
            seeds.push(p);
        }
    }
    if seeds.is_empty() {
        return Err(CliError::Data("no fittable modes in the first step".into()));
    }
    let mut traces: Vec<ModeTrace> = Vec::new();
    for (mode_id, seed) in seeds.iter().enumerate() {
        let window = a.window_hz.unwrap_or(20.0 * seed.gamma_hz);
        let mut tracked = track_modes(&map, std::slice::from_ref(seed), window);
        tracked[0].mode_id = mode_id;
        traces.push(tracked.remove(0));
    }
    if !quiet {
        for t in &traces {
            eprintln!(
                "mode {}: {} locked steps, {} gaps",
                t.mode_id,
                t.points.len(),
                t.gaps.len()
            );
        }
    }
    write_modes_csv(&a.out, &traces)?;
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_sites(a: &SitesArgs, quiet: bool) -> Result<(), CliError> {
    let traces = read_modes_csv(&a.modes)?;
    let (sites, issues) = extract_sites(&traces, a.threshold_sigma);
    for issue in &issues {
        eprintln!("warning: mode {}: {}", issue.mode_id, issue.reason);
    }
    if !quiet {
        for s in &sites {
            eprintln!(
                "mode {} at {:.4} T: f = {:.6} GHz, strength {:.1} kHz, width {:.1} mT",
                s.mode_id,
                s.b_tesla,
                s.freq_hz / 1e9,
                s.strength_hz / 1e3,
                s.width_tesla * 1e3
            );
        }
    }
    write_sites_csv(&a.out, &sites)?;
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_identify(
    a: &IdentifyArgs,
    config: &CliConfig,
    consts: &Constants,
    quiet: bool,
) -> Result<(), CliError> {
    let sites = read_sites_csv(&a.sites)?;
    let db: Vec<SpeciesRecord> = match &a.db {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => wgmspec::species::default_database(),
    };
    for rec in &db {
        rec.validate()?;
    }
    let opts = RansacOptions {
        iterations: a.iterations,
        tol_hz: a.tol_hz,
        min_inliers: a.min_inliers,
        seed: a.seed.or(config.seed).unwrap_or(0),
    };
    let (lines, unassigned) = regress_lines(&sites, &opts);
    let matches = match_species(&lines, &db, consts);
    if !quiet {
        for (line, ms) in lines.iter().zip(&matches) {
            let verdict = match ms.first() {
                Some(m) if m.unconfirmed => format!("{} (unconfirmed)", m.name),
                Some(m) => m.name.clone(),
                None => "unknown".into(),
            };
            eprintln!(
                "line: slope {:.3} GHz/T, intercept {:.3} GHz, {} sites -> {}",
                line.slope_hz_per_t / 1e9,
                line.intercept_hz / 1e9,
                line.members.len(),
                verdict
            );
        }
        eprintln!("{} unassigned sites", unassigned.len());
    }
    let payload = json!({
        "lines": lines.iter().zip(&matches).map(|(line, ms)| json!({
            "slope_hz_per_t": line.slope_hz_per_t,
            "intercept_hz": line.intercept_hz,
            "members": line.members,
            "rms_hz": line.rms_hz,
            "r_squared": line.r_squared,
            "matches": ms,
            "verdict": ms.first().map(|m| m.name.clone()).unwrap_or_else(|| "unknown".into()),
        })).collect::<Vec<_>>(),
        "unassigned_sites": unassigned,
    });
    let text = serde_json::to_string_pretty(&payload).unwrap();
    emit(&text, a.out.as_deref())
}

fn cmd_fit_crossing(a: &FitCrossingArgs, consts: &Constants, quiet: bool) -> Result<(), CliError> {
    if a.slope_guess == 0.0 {
        return Err(CliError::Usage("slope guess must be nonzero".into()));
    }
    // assemble (b, f) points
    let mut points: Vec<(f64, f64)> = match (&a.points, &a.modes) {
        (Some(path), None) => read_bf_csv(path)?,
        (None, Some(path)) => {
            let traces = read_modes_csv(path)?;
            let trace = traces
                .iter()
                .find(|t| t.mode_id == a.mode_id)
                .ok_or_else(|| CliError::Data(format!("mode {} not in modes.csv", a.mode_id)))?;
            trace
                .points
                .iter()
                .map(|p| (p.b_tesla, p.params.f0_hz))
                .collect()
        }
        _ => {
            return Err(CliError::Usage(
                "provide exactly one of --points or --modes".into(),
            ))
        }
    };
    // optional site seed
    let mut b_center = None;
    let mut g_seed = a.g_guess;
    if let Some(path) = &a.sites {
        let sites = read_sites_csv(path)?;
        let site = sites.get(a.site_index).ok_or_else(|| {
            CliError::Data(format!("site index {} out of range", a.site_index))
        })?;
        b_center = Some(site.b_tesla);
        if g_seed.is_none() {
            g_seed = Some(site.strength_hz);
        }
    }
    if let (Some(bc), Some(w)) = (b_center, a.b_window) {
        points.retain(|(b, _)| (b - bc).abs() <= w);
    }
    if points.len() < 8 {
        return Err(CliError::Data(format!(
            "only {} points after windowing; need at least 8",
            points.len()
        )));
    }
    let mut freqs: Vec<f64> = points.iter().map(|p| p.1).collect();
    freqs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let fp_guess = a.fp_guess.unwrap_or(freqs[freqs.len() / 2]);
    let bc = b_center.unwrap_or_else(|| {
        points
            .iter()
            .max_by(|x, y| {
                (x.1 - fp_guess)
                    .abs()
                    .partial_cmp(&(y.1 - fp_guess).abs())
                    .unwrap()
            })
            .unwrap()
            .0
    });
    let guess = CrossingModel {
        fp_hz: fp_guess,
        spin_intercept_hz: fp_guess - a.slope_guess * bc,
        spin_slope_hz_per_t: a.slope_guess,
        g_hz: g_seed.unwrap_or(1e-5 * fp_guess),
    };
    let fit = fit_crossing(&points, &guess)?;
    let mut payload = json!({
        "fp_hz": fit.model.fp_hz,
        "spin_intercept_hz": fit.model.spin_intercept_hz,
        "spin_slope_hz_per_t": fit.model.spin_slope_hz_per_t,
        "g_hz": fit.model.g_hz,
        "g_sigma_hz": fit.g_sigma_hz(),
        "delta_ps": fit.model.delta_ps(),
        "crossing_field_t": fit.model.crossing_field_t(),
        "sigmas": fit.sigmas,
        "covariance": fit.covariance,
        "rss": fit.rss,
        "converged": fit.converged,
        "n_points": points.len(),
    });
    if a.concentration {
        let gl = a.gl.ok_or_else(|| CliError::Usage("--gl required".into()))?;
        let input = ConcentrationInput {
            g_hz: fit.model.g_hz,
            fp_hz: fit.model.fp_hz,
            lande_g: gl,
            filling_factor: a.xi,
            g_sigma_hz: fit.g_sigma_hz(),
            fp_sigma_hz: fit.sigmas[0],
            lande_g_sigma: 0.0,
            filling_factor_sigma: 0.0,
        };
        let (n, sigma) = concentration(&input, consts)?;
        payload["concentration_cm3"] = json!(n);
        payload["concentration_sigma_cm3"] = json!(sigma);
    }
    if !quiet {
        eprintln!(
            "g = {:.4} MHz +- {:.4} MHz, crossing at {:.4} T, converged = {}",
            fit.model.g_hz / 1e6,
            fit.g_sigma_hz() / 1e6,
            fit.model.crossing_field_t(),
            fit.converged
        );
    }
    let text = serde_json::to_string_pretty(&payload).unwrap();
    let converged = fit.converged;
    emit(&text, a.out.as_deref())?;
    if !converged {
        return Err(CliError::NonConvergence(
            "crossing fit did not converge; best iterate written".into(),
        ));
    }
    Ok(())
}

fn read_bf_csv(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.to_ascii_lowercase().starts_with("b_tesla")) {
            continue;
        }
        let mut parts = line.split(',');
        let b: f64 = parts
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| {
                CliError::Data(format!("{}:{}: bad b_tesla", path.display(), lineno + 1))
            })?;
        let f: f64 = parts
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| {
                CliError::Data(format!("{}:{}: bad f_hz", path.display(), lineno + 1))
            })?;
        out.push((b, f));
    }
    Ok(out)
}

fn cmd_concentration(a: &ConcentrationArgs, consts: &Constants, quiet: bool) -> Result<(), CliError> {
    let input = ConcentrationInput {
        g_hz: a.g_hz,
        fp_hz: a.fp_hz,
        lande_g: a.gl,
        filling_factor: a.xi,
        g_sigma_hz: a.g_sigma_hz,
        fp_sigma_hz: a.fp_sigma_hz,
        lande_g_sigma: a.gl_sigma,
        filling_factor_sigma: a.xi_sigma,
    };
    let (n, sigma) = concentration(&input, consts)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if !quiet {
        eprintln!("n = {n:.3e} +- {sigma:.3e} cm^-3");
    }
    let payload = json!({
        "n_cm3": n,
        "n_sigma_cm3": sigma,
        "g_hz": a.g_hz,
        "fp_hz": a.fp_hz,
        "lande_g": a.gl,
        "filling_factor": a.xi,
    });
    println!("{}", serde_json::to_string_pretty(&payload).unwrap());
    Ok(())
}

fn cmd_synth(a: &SynthArgs, consts: &Constants, quiet: bool) -> Result<(), CliError> {
    let mut scenario = Scenario::from_json_file(&a.scenario)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let out = synth_sweep(&scenario, &a.out_dir, consts)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    if !quiet {
        eprintln!(
            "wrote {} and {}",
            out.manifest_path.display(),
            out.ground_truth_path.display()
        );
    }
    println!("{}", out.manifest_path.display());
    Ok(())
}

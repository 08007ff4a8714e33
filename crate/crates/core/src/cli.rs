//! Batch driver: `ks-moment <command> [flags]`.
//!
//! Settings come from built-in defaults, then an optional `--config` file of
//! `key = value` lines (`#` starts a comment), then command-line flags.
//! Outputs are JSON and CSV files under `--out`, plus `key=value` summary
//! lines on stdout. Failures print one line `error: reason=<code> ...` on
//! stderr and exit with 2 (usage), 3 (numeric) or 4 (constraint).

use crate::biortho::{self, ExponentFamily, PrecisionPolicy, PrecisionTarget, Quadrature};
use crate::entire_functions::{self as ef, Node, PsiSetup, TruncationPolicy};
use crate::fourier_space::StatePair;
use crate::moment_control::{self as mc, ControlScenario, ControlSignal, MomentProblem, Profile, QuadPoly, ScenarioKind};
use crate::pde_sim::{self, ModalSystem};
use crate::spectrum::{self, Branch};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "ks-moment", version, about = "Moment-method null controls for the linear KS/KdV–heat system")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenvalue tables, gap and denominator checks, figure CSVs.
    Spectrum(Flags),
    /// Biorthogonal family (Gram or Paley–Wiener) with norm report.
    Biortho(Flags),
    /// Control synthesis for one placement; writes control and residuals.
    Synthesize(Flags),
    /// Forward simulation, free or under a control file.
    Simulate(Flags),
    /// Terminal-state check of a control against initial data.
    Verify(Flags),
    /// Entire-function estimates, auxiliary-integral checks, Θ-norm envelopes.
    Estimates(Flags),
    /// All figure data as CSV.
    Figures(Flags),
}

#[derive(Args, Debug, Clone, Default)]
struct Flags {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Control horizon T.
    #[arg(long = "T")]
    t: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    kmax: Option<i64>,
    /// Enforced moment range K_c (default 2·K_init + 4).
    #[arg(long, allow_hyphen_values = true)]
    kc: Option<i64>,
    /// interior_u | interior_v | boundary_u | boundary_v
    #[arg(long)]
    scenario: Option<String>,
    /// Initial data (JSON state file).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Control file written by `synthesize`.
    #[arg(long)]
    control: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    /// Minimal polynomial `a,b,c` of ρ (aX² + bX + c).
    #[arg(long = "rho-poly", allow_hyphen_values = true)]
    rho_poly: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Simulated wavenumber range.
    #[arg(long = "kmax-sim")]
    kmax_sim: Option<usize>,
    /// Trajectory samples on [0, T].
    #[arg(long = "n-times")]
    n_times: Option<usize>,
    /// biortho: gram | pw
    #[arg(long)]
    method: Option<String>,
    /// verify: full | enforced
    #[arg(long)]
    scope: Option<String>,
}

/// Resolved settings.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub t: Option<f64>,
    pub kmax: i64,
    pub kc: Option<i64>,
    pub alpha: f64,
    pub rho_poly: QuadPoly,
    pub tol: f64,
    /// Bound on the terminal dual norm relative to the initial one.
    pub total_tol: f64,
    pub out: PathBuf,
    pub init: Option<PathBuf>,
    pub control: Option<PathBuf>,
    pub kmax_sim: usize,
    pub n_times: usize,
    pub method: String,
    pub scope: String,
    pub n_p: i64,
    pub n_m: usize,
    pub p_max: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioKind::InteriorU,
            t: None,
            kmax: 50,
            kc: None,
            alpha: 1.0,
            rho_poly: QuadPoly { a: 1, b: 2, c: -1 },
            tol: 1e-9,
            total_tol: 1e-6,
            out: PathBuf::from("out"),
            init: None,
            control: None,
            kmax_sim: 64,
            n_times: 21,
            method: "gram".into(),
            scope: "full".into(),
            n_p: 64,
            n_m: 2000,
            p_max: 24_576,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Usage(format!("bad value {v:?} for {key}")))
}

fn positive(key: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Usage(format!("{key} must be positive, got {x}")))
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<()> {
        let path = |v: &str| {
            let p = PathBuf::from(v.trim());
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        match key {
            "scenario" => self.scenario = ScenarioKind::parse(v.trim())?,
            "T" | "t" => self.t = Some(positive("T", num(key, v)?)?),
            "kmax" => self.kmax = num(key, v)?,
            "kc" | "K_c" => self.kc = Some(num(key, v)?),
            "alpha" => self.alpha = num(key, v)?,
            "rho_poly" | "rho-poly" => self.rho_poly = QuadPoly::parse(v.trim())?,
            "tol" => self.tol = positive("tol", num(key, v)?)?,
            "total_tol" => self.total_tol = positive("total_tol", num(key, v)?)?,
            "out" => self.out = path(v),
            "init" => self.init = Some(path(v)),
            "control" => self.control = Some(path(v)),
            "kmax_sim" => self.kmax_sim = num(key, v)?,
            "n_times" => self.n_times = num(key, v)?,
            "method" => self.method = v.trim().to_string(),
            "scope" => self.scope = v.trim().to_string(),
            "n_p" => self.n_p = num(key, v)?,
            "n_m" => self.n_m = num(key, v)?,
            "p_max" => self.p_max = num(key, v)?,
            _ => return Err(Error::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; relative paths are taken from `base`.
    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Usage(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v, base)?;
        }
        Ok(())
    }

    fn from_flags(f: &Flags) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(p) = &f.config {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Usage(format!("cannot read config {}: {e}", p.display())))?;
            c.apply_text(&text, p.parent().unwrap_or(Path::new(".")))?;
        }
        let here = Path::new(".");
        if let Some(v) = f.t {
            c.t = Some(positive("T", v)?);
        }
        if let Some(v) = f.kmax {
            c.kmax = v;
        }
        if let Some(v) = f.kc {
            c.kc = Some(v);
        }
        if let Some(v) = &f.scenario {
            c.scenario = ScenarioKind::parse(v)?;
        }
        if let Some(v) = &f.init {
            c.init = Some(v.clone());
        }
        if let Some(v) = &f.control {
            c.control = Some(v.clone());
        }
        if let Some(v) = &f.out {
            c.out = v.clone();
        }
        if let Some(v) = f.tol {
            c.tol = positive("tol", v)?;
        }
        if let Some(v) = &f.rho_poly {
            c.set("rho_poly", v, here)?;
        }
        if let Some(v) = f.alpha {
            c.alpha = v;
        }
        if let Some(v) = f.kmax_sim {
            c.kmax_sim = v;
        }
        if let Some(v) = f.n_times {
            c.n_times = v;
        }
        if let Some(v) = &f.method {
            c.method = v.clone();
        }
        if let Some(v) = &f.scope {
            c.scope = v.clone();
        }
        Ok(c)
    }

    fn profile(&self) -> Result<Profile> {
        Profile::new(self.alpha, self.rho_poly)
    }

    fn scenario(&self) -> Result<ControlScenario> {
        ControlScenario::new(self.scenario, Some(self.profile()?))
    }

    fn init_state(&self) -> Result<StatePair> {
        let p = self.init.as_ref().ok_or_else(|| Error::Usage("--init is required".into()))?;
        StatePair::read(p).map_err(|e| match e {
            Error::Io(e) => Error::Usage(format!("cannot read init {}: {e}", p.display())),
            e => e,
        })
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

/// `K_init`: largest |k| carrying nonzero initial data.
pub fn k_init(s: &StatePair) -> i64 {
    let k = s.kmax() as i64;
    (-k..=k).filter(|&m| s.mode(m).iter().any(|z| z.norm() != 0.0)).map(|m| m.abs()).max().unwrap_or(0)
}

fn emit(lines: &[(&str, String)]) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    for (k, v) in lines {
        // a closed pipe is not an error for a summary
        let _ = writeln!(out, "{k}={v}");
    }
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

#[derive(Serialize)]
struct SpectrumSummary {
    kmax: i64,
    files: Vec<String>,
    max_vieta_residual: f64,
    min_gap: Option<f64>,
    gap_to_zero: Option<f64>,
    min_first_denominator: Option<f64>,
    min_second_denominator: Option<f64>,
    passed: bool,
}

fn cmd_spectrum(c: &RunConfig) -> Result<()> {
    if c.kmax < 0 {
        return Err(Error::Usage(format!("kmax must be ≥ 0, got {}", c.kmax)));
    }
    if c.kmax > 10_000 {
        return Err(Error::Usage(format!("kmax {} above the overflow guard 10^4", c.kmax)));
    }
    let dir = c.out_dir()?;
    let files = spectrum::write_figure_csvs(c.kmax, dir)?;
    let mut vieta = 0.0f64;
    for k in 1..=c.kmax {
        for kk in [k, -k] {
            let (a, b) = spectrum::vieta_residuals(kk)?;
            vieta = vieta.max(a).max(b);
        }
    }
    let (gap, den) = if c.kmax >= 1 { (Some(spectrum::spectral_gap(c.kmax)?), Some(spectrum::denominator_check(c.kmax)?)) } else { (None, None) };
    let passed = vieta <= 1e-9 && gap.as_ref().map_or(true, |g| g.min_gap > 0.0 && g.gap_to_zero > 0.0) && den.as_ref().map_or(true, |d| d.min_first > 0.0 && d.min_second > 0.0);
    let summary = SpectrumSummary {
        kmax: c.kmax,
        files: files.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect(),
        max_vieta_residual: vieta,
        min_gap: gap.as_ref().map(|g| g.min_gap),
        gap_to_zero: gap.as_ref().map(|g| g.gap_to_zero),
        min_first_denominator: den.as_ref().map(|d| d.min_first),
        min_second_denominator: den.as_ref().map(|d| d.min_second),
        passed,
    };
    pde_sim::write_json(&summary, &dir.join("checks.json"))?;
    emit(&[("csv_files", summary.files.iter().filter(|f| f.ends_with(".csv")).count().to_string()), ("max_vieta_residual", sci(vieta)), ("passed", passed.to_string())]);
    if !passed {
        return Err(Error::Numeric("spectrum_check_failed: a Vieta, gap or denominator check failed".into()));
    }
    Ok(())
}

/// Elements and exponents of the Paley–Wiener check: `{0, ±1±, ±2±}`.
pub fn pw_nodes() -> Vec<Node> {
    let mut v = vec![Node::Zero];
    for k in [1i64, -1, 2, -2] {
        v.push(Node::Mode(k, Branch::Plus));
        v.push(Node::Mode(k, Branch::Minus));
    }
    v
}

#[derive(Serialize)]
struct PwSummary {
    report: biortho::PwReport,
    /// Residuals restricted to exponent columns other than `±2⁻`.
    gated_max_residual: f64,
    /// Largest residual in the `±2⁻` columns, reported separately.
    minus2_columns_max_residual: f64,
    passed: bool,
}

/// Splits a PW report into the gated part and the `±2⁻` columns.
pub fn pw_gate(rep: &biortho::PwReport) -> (f64, f64) {
    let mut gated = 0.0f64;
    let mut m2 = 0.0f64;
    for row in &rep.residual {
        for (name, r) in rep.exponents.iter().zip(row) {
            if name == "2-" || name == "-2-" {
                m2 = m2.max(*r);
            } else {
                gated = gated.max(*r);
            }
        }
    }
    (gated, m2)
}

fn cmd_biortho(c: &RunConfig) -> Result<()> {
    let dir = c.out_dir()?;
    match c.method.as_str() {
        "gram" => {
            let t = c.t.unwrap_or(1.0);
            let kc = c.kc.unwrap_or(6);
            let fam = ExponentFamily::symmetric(kc, t)?;
            let policy = PrecisionPolicy { target: PrecisionTarget::Window, tol: c.tol.max(1e-30), p_max: c.p_max };
            let gf = biortho::gram_biorthogonal(&fam, &policy)?;
            pde_sim::write_json(&gf.to_file(), &dir.join("family_gram.json"))?;
            pde_sim::write_json(&gf.report, &dir.join("gram_report.json"))?;
            let norms = biortho::norm_report(t, kc)?;
            pde_sim::write_json(&norms, &dir.join("norms.json"))?;
            emit(&[
                ("method", "gram".into()),
                ("elements", fam.len().to_string()),
                ("max_residual", sci(gf.report.max_residual)),
                ("log10_cond", format!("{:.3}", gf.report.log10_cond_equilibrated)),
                ("precision_bits", gf.report.precision_bits.to_string()),
            ]);
            Ok(())
        }
        "pw" => {
            let t = c.t.unwrap_or(2.0 * std::f64::consts::PI);
            let setup = PsiSetup::new(t, TruncationPolicy { n_p: c.n_p, n_m: c.n_m, tail_closure: true })?;
            let nodes = pw_nodes();
            let (rep, thetas) = biortho::pw_family(&setup, Quadrature::default(), &nodes, &nodes)?;
            let (gated, m2) = pw_gate(&rep);
            let passed = gated <= 1e-2 && rep.min_mass_fraction >= 0.99;
            pde_sim::write_json(&biortho::pw_family_file(&rep, &thetas, 16), &dir.join("family_pw.json"))?;
            emit(&[
                ("method", "pw".into()),
                ("gated_max_residual", sci(gated)),
                ("minus2_columns_max_residual", sci(m2)),
                ("min_mass_fraction", format!("{:.6}", rep.min_mass_fraction)),
                ("passed", passed.to_string()),
            ]);
            pde_sim::write_json(&PwSummary { report: rep, gated_max_residual: gated, minus2_columns_max_residual: m2, passed }, &dir.join("pw_report.json"))?;
            if !passed {
                return Err(Error::Numeric(format!("pw_check_failed: residual {gated:.3e} or mass fraction below threshold")));
            }
            Ok(())
        }
        m => Err(Error::Usage(format!("unknown method {m:?} (gram | pw)"))),
    }
}

fn problem(c: &RunConfig) -> Result<MomentProblem> {
    let init = c.init_state()?;
    let kc = c.kc.unwrap_or(2 * k_init(&init) + 4);
    MomentProblem::new(c.scenario()?, c.t.unwrap_or(1.0), kc, init)
}

fn cmd_synthesize(c: &RunConfig) -> Result<()> {
    let prob = problem(c)?;
    let kc = prob.kc;
    let kind = prob.scenario.kind;
    let policy = PrecisionPolicy { p_max: c.p_max, ..PrecisionPolicy::terminal((c.tol * 1e-3).max(1e-300)) };
    let syn = mc::synthesize(prob, &policy)?;
    let rep = mc::moment_residuals(&syn, kc + 6)?;
    let dir = c.out_dir()?;
    syn.signal.write_json(&dir.join("control.json"), Some(kind), Some(kc))?;
    syn.signal.write_csv(&dir.join("control.csv"), 1001)?;
    pde_sim::write_json(&rep, &dir.join("residuals.json"))?;
    emit(&[
        ("scenario", kind.as_str().into()),
        ("T", syn.signal.t.to_string()),
        ("kc", kc.to_string()),
        ("precision_bits", rep.precision_bits.to_string()),
        ("max_enforced_terminal", sci(rep.max_enforced_terminal)),
        ("max_leak_terminal", sci(rep.max_leak_terminal)),
        ("control_l2", sci(rep.control_l2)),
    ]);
    if rep.max_enforced_terminal > c.tol {
        return Err(Error::Numeric(format!("residual_above_tol: enforced moment residual {:.3e} > {:.1e}", rep.max_enforced_terminal, c.tol)));
    }
    Ok(())
}

/// Control file and the scenario it was synthesized for, checked against
/// the configuration.
fn load_control(c: &RunConfig) -> Result<(ControlSignal, Option<ScenarioKind>, Option<i64>)> {
    let p = c.control.as_ref().ok_or_else(|| Error::Usage("--control is required".into()))?;
    let (sig, file) = ControlSignal::read_json(p).map_err(|e| match e {
        Error::Io(e) => Error::Usage(format!("cannot read control {}: {e}", p.display())),
        e => e,
    })?;
    if let Some(t) = c.t {
        if (t - sig.t).abs() > 1e-12 * t.max(1.0) {
            return Err(Error::Usage(format!("T mismatch: config T = {t}, control T = {}", sig.t)));
        }
    }
    Ok((sig, file.scenario, file.kc))
}

/// Terminal data for the duality check: seeded, on `|k| ≤ 3`.
fn probe_terminal(kmax: usize) -> StatePair {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20240611);
    let k = kmax.min(3) as i64;
    let mut s = StatePair::zeros(k as usize);
    for m in -k..=k {
        let mut z = || crate::C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        s.set_mode(m, [z(), z()]);
    }
    s
}

fn run_controlled(c: &RunConfig, n_times: usize) -> Result<(pde_sim::SimulationSummary, pde_sim::Trajectory)> {
    let init = c.init_state()?;
    let sys = ModalSystem::new(c.kmax_sim)?;
    match c.control.as_ref() {
        None => {
            let t = c.t.unwrap_or(1.0);
            let tr = pde_sim::evolve_free(&sys, &init, t, n_times)?;
            let kc = c.kc.unwrap_or(2 * k_init(&init) + 4);
            let term = pde_sim::terminal_report(tr.last(), kc);
            let init_norm = init.dual_norm();
            Ok((
                pde_sim::SimulationSummary {
                    scenario: c.scenario,
                    t,
                    kc: None,
                    kmax_sim: c.kmax_sim,
                    precision_bits: tr.precision_bits,
                    control_l2: 0.0,
                    initial_dual_norm: init_norm,
                    relative_terminal: term.dual_norm / init_norm.max(f64::MIN_POSITIVE),
                    terminal: term,
                    duality: None,
                },
                tr,
            ))
        }
        Some(_) => {
            let (sig, kind, kc_file) = load_control(c)?;
            let kind = kind.unwrap_or(c.scenario);
            if kind != c.scenario && c.scenario != ScenarioKind::InteriorU {
                return Err(Error::Usage(format!("scenario mismatch: config {}, control {}", c.scenario.as_str(), kind.as_str())));
            }
            let sc = ControlScenario::new(kind, Some(c.profile()?))?;
            let kc = c.kc.or(kc_file).unwrap_or(2 * k_init(&init) + 4);
            let tr = pde_sim::evolve_controlled(&sys, &init, &sc, &sig, n_times)?;
            let probe = probe_terminal(sys.kmax_sim);
            let (adj, atr) = pde_sim::adjoint_solve(&probe, &[], sig.t, 2)?;
            let fwd_ends = pde_sim::Trajectory { states: vec![tr.first().clone(), tr.last().clone()], times: vec![0.0, sig.t], ..tr.clone() };
            let duality = pde_sim::duality_residual(&fwd_ends, &atr, &sc, &sig, &adj)?;
            let term = pde_sim::terminal_report(tr.last(), kc);
            let init_norm = init.dual_norm();
            Ok((
                pde_sim::SimulationSummary {
                    scenario: kind,
                    t: sig.t,
                    kc: Some(kc),
                    kmax_sim: c.kmax_sim,
                    precision_bits: tr.precision_bits,
                    control_l2: sig.l2_norm(),
                    initial_dual_norm: init_norm,
                    relative_terminal: term.dual_norm / init_norm.max(f64::MIN_POSITIVE),
                    terminal: term,
                    duality: Some(duality),
                },
                tr,
            ))
        }
    }
}

fn cmd_simulate(c: &RunConfig) -> Result<()> {
    let (summary, tr) = run_controlled(c, c.n_times)?;
    let dir = c.out_dir()?;
    tr.write_csv(&dir.join("trajectory.csv"))?;
    pde_sim::write_json(&summary, &dir.join("simulation.json"))?;
    emit(&[
        ("scenario", summary.scenario.as_str().into()),
        ("initial_dual_norm", sci(summary.initial_dual_norm)),
        ("terminal_dual_norm", sci(summary.terminal.dual_norm)),
        ("enforced_dual_norm", sci(summary.terminal.enforced_dual_norm)),
        ("leaked_dual_norm", sci(summary.terminal.leaked_dual_norm)),
        ("duality_residual", summary.duality.as_ref().map(|d| sci(d.relative)).unwrap_or_else(|| "none".into())),
    ]);
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport {
    scope: String,
    tol: f64,
    total_tol: f64,
    enforced_ok: bool,
    total_ok: bool,
    duality_ok: bool,
    passed: bool,
    summary: pde_sim::SimulationSummary,
}

fn cmd_verify(c: &RunConfig) -> Result<()> {
    if c.control.is_none() {
        return Err(Error::Usage("--control is required".into()));
    }
    if c.scope != "full" && c.scope != "enforced" {
        return Err(Error::Usage(format!("unknown scope {:?} (full | enforced)", c.scope)));
    }
    let (summary, _) = run_controlled(c, 2)?;
    let term = &summary.terminal;
    let enforced_ok = term.enforced_dual_norm <= c.tol;
    let total_ok = term.dual_norm <= c.total_tol * summary.initial_dual_norm;
    let duality_ok = summary.duality.as_ref().map_or(true, |d| d.relative <= 1e-7);
    let passed = enforced_ok && duality_ok && (c.scope == "enforced" || total_ok);
    let dir = c.out_dir()?;
    emit(&[
        ("scope", c.scope.clone()),
        ("enforced_dual_norm", sci(term.enforced_dual_norm)),
        ("leaked_dual_norm", sci(term.leaked_dual_norm)),
        ("terminal_dual_norm", sci(term.dual_norm)),
        ("relative_terminal", sci(summary.relative_terminal)),
        ("duality_residual", summary.duality.as_ref().map(|d| sci(d.relative)).unwrap_or_else(|| "none".into())),
        ("passed", passed.to_string()),
    ]);
    let rep = VerifyReport { scope: c.scope.clone(), tol: c.tol, total_tol: c.total_tol, enforced_ok, total_ok, duality_ok, passed, summary };
    pde_sim::write_json(&rep, &dir.join("verify.json"))?;
    if !passed {
        let why = if !enforced_ok {
            format!("enforced terminal dual norm {:.3e} > {:.1e}", rep.summary.terminal.enforced_dual_norm, c.tol)
        } else if !duality_ok {
            "duality identity residual above 1e-7".to_string()
        } else {
            format!("terminal dual norm {:.3e} > {:.1e} × initial (leaked modes)", rep.summary.terminal.dual_norm, c.total_tol)
        };
        return Err(Error::Numeric(format!("verify_failed: {why}")));
    }
    Ok(())
}

#[derive(Serialize)]
pub struct EstimatesReport {
    pub t: f64,
    pub truncation: TruncationPolicy,
    pub fits: Vec<ef::EstimateFit>,
    pub interpolation: ef::InterpolationReport,
    pub exponential_type: Vec<ef::ExpTypeCheck>,
    pub theta_scan: ef::ScanReport,
    pub u2_compensation: ef::ScanReport,
    pub cauchy_bound: Vec<ef::WeightedCauchyBound>,
    pub theta_norms: biortho::NormReport,
    pub liouville: mc::LiouvilleReport,
    pub profile_decay: mc::ProfileDecay,
    pub failures: Vec<String>,
}

/// Runs the estimate suite at horizon `t`; `failures` lists every check
/// that did not hold.
pub fn estimates(t: f64, pol: TruncationPolicy, profile: &Profile) -> Result<EstimatesReport> {
    let setup = PsiSetup::new(t, pol)?;
    let fits = ef::estimate_fits(&setup)?;
    let interpolation = ef::interpolation_check(&setup, 2)?;
    let exponential_type = [Node::Zero, Node::Mode(1, Branch::Plus), Node::Mode(1, Branch::Minus)]
        .into_iter()
        .map(|n| ef::exponential_type_check(&setup, n))
        .collect::<Result<Vec<_>>>()?;
    let theta_scan = ef::log_kernel_theta_scan()?;
    let u2_compensation = ef::u2_compensation_scan(t)?;
    let cauchy_bound = [0.0, 1.0, -1.0, 10.0, -10.0, 100.0, -100.0, 1e4, -1e4].iter().map(|&x| ef::weighted_cauchy_bound(x)).collect::<Result<Vec<_>>>()?;
    let theta_norms = biortho::norm_report(t, 6)?;
    let liouville = mc::liouville_scan(profile.poly, 10_000)?;
    let profile_decay = mc::profile_decay_scan(profile, 10_000)?;
    let mut failures = Vec::new();
    for f in &fits {
        if !f.holds {
            failures.push(f.name.clone());
        }
    }
    if interpolation.max_residual > 1e-6 {
        failures.push("interpolation".into());
    }
    for e in &exponential_type {
        if !e.holds {
            failures.push(format!("exponential_type_{}", e.node));
        }
    }
    if !theta_scan.finite {
        failures.push("log_kernel_theta".into());
    }
    if !u2_compensation.finite {
        failures.push("u2_compensation".into());
    }
    for b in &cauchy_bound {
        if !b.holds {
            failures.push(format!("cauchy_bound_{}", b.x));
        }
    }
    if !theta_norms.envelopes_finite {
        failures.push("theta_envelopes".into());
    }
    if !liouville.holds {
        failures.push("liouville".into());
    }
    if !profile_decay.holds {
        failures.push("profile_decay".into());
    }
    Ok(EstimatesReport { t, truncation: pol, fits, interpolation, exponential_type, theta_scan, u2_compensation, cauchy_bound, theta_norms, liouville, profile_decay, failures })
}

fn cmd_estimates(c: &RunConfig) -> Result<()> {
    let t = c.t.unwrap_or(2.0 * std::f64::consts::PI);
    let pol = TruncationPolicy { n_p: c.n_p, n_m: c.n_m, tail_closure: true };
    let rep = estimates(t, pol, &c.profile()?)?;
    let dir = c.out_dir()?;
    ef::write_estimate_csv(&PsiSetup::new(t, pol)?, dir)?;
    pde_sim::write_json(&rep, &dir.join("estimates.json"))?;
    emit(&[
        ("T", t.to_string()),
        ("fits", rep.fits.len().to_string()),
        ("theta_sup", sci(rep.theta_scan.sup_abs)),
        ("cauchy_integral_I0", format!("{:.6}", rep.cauchy_bound[0].integral)),
        ("liouville_min", sci(rep.liouville.empirical_min)),
        ("failures", rep.failures.len().to_string()),
    ]);
    if !rep.failures.is_empty() {
        return Err(Error::Numeric(format!("estimate_failed: {}", rep.failures.join(","))));
    }
    Ok(())
}

fn write_scan(path: &Path, header: [&str; 2], s: &ef::ScanReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (x, v) in s.x.iter().zip(&s.values) {
        w.write_record([format!("{x:.17e}"), format!("{v:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_figures(c: &RunConfig) -> Result<()> {
    let dir = c.out_dir()?.to_path_buf();
    let kmax = if c.kmax < 0 { return Err(Error::Usage(format!("kmax must be ≥ 0, got {}", c.kmax))) } else { c.kmax.min(10_000) };
    let mut files = spectrum::write_figure_csvs(kmax, &dir)?;
    let t = c.t.unwrap_or(2.0 * std::f64::consts::PI);
    let setup = PsiSetup::new(t, TruncationPolicy { n_p: c.n_p, n_m: c.n_m, tail_closure: true })?;
    files.push(ef::write_estimate_csv(&setup, &dir)?);
    let p = dir.join("log_kernel_theta.csv");
    write_scan(&p, ["x", "theta"], &ef::log_kernel_theta_scan()?)?;
    files.push(p);
    let p = dir.join("u2_compensation.csv");
    write_scan(&p, ["x", "u2_plus_compensation"], &ef::u2_compensation_scan(t)?)?;
    files.push(p);
    // Gram Θ samples at T = 1 over {0} ∪ {μ_k^±: |k| ≤ 3}
    let fam = ExponentFamily::symmetric(3, 1.0)?;
    let gf = biortho::gram_biorthogonal(&fam, &PrecisionPolicy::default())?;
    let p = dir.join("gram_theta.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["element", "t", "re", "im"])?;
    for (j, name) in gf.report.labels.iter().enumerate() {
        for i in 0..=200 {
            let s = -0.5 + i as f64 / 200.0;
            let v = gf.eval(j, s);
            w.write_record([name.clone(), format!("{s:.6}"), format!("{:.17e}", v.re), format!("{:.17e}", v.im)])?;
        }
    }
    w.flush()?;
    files.push(p);
    emit(&[("files", files.len().to_string())]);
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<()> {
    let (flags, f): (&Flags, fn(&RunConfig) -> Result<()>) = match cmd {
        Command::Spectrum(a) => (a, cmd_spectrum),
        Command::Biortho(a) => (a, cmd_biortho),
        Command::Synthesize(a) => (a, cmd_synthesize),
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Verify(a) => (a, cmd_verify),
        Command::Estimates(a) => (a, cmd_estimates),
        Command::Figures(a) => (a, cmd_figures),
    };
    let cfg = RunConfig::from_flags(flags)?;
    f(&cfg)
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error: reason=usage exit=2 {first}");
            return 2;
        }
    };
    match dispatch(&cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: reason={} exit={code} {msg}", e.reason_code());
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nscenario = boundary_v\nT=2.5\nkc = 7 # trailing\nrho_poly = 1,2,-1\ninit = data/x.json\n", Path::new("/base")).unwrap();
        assert_eq!(c.scenario, ScenarioKind::BoundaryV);
        assert_eq!(c.t, Some(2.5));
        assert_eq!(c.kc, Some(7));
        assert_eq!(c.init, Some(PathBuf::from("/base/data/x.json")));
        assert!(matches!(c.apply_text("bogus = 1", Path::new(".")), Err(Error::Usage(_))));
        assert!(matches!(c.apply_text("T = -1", Path::new(".")), Err(Error::Usage(_))));
        assert!(matches!(c.apply_text("just words", Path::new(".")), Err(Error::Usage(_))));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["ks-moment", "spectrum", "--kmax", "-1", "--out", "/nonexistent-dir-should-not-be-created"]), 2);
        assert_eq!(run(["ks-moment", "nonsense"]), 2);
        assert_eq!(run(["ks-moment", "synthesize"]), 2);
    }
}

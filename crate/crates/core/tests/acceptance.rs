//! End-to-end acceptance run: one PASS/FAIL line per criterion, then a
//! single assertion over all of them.

use ks_moment::biortho::{self, ExponentFamily, PrecisionPolicy, Quadrature};
use ks_moment::cli;
use ks_moment::entire_functions::{self as ef, PsiSetup, TruncationPolicy};
use ks_moment::fourier_space::StatePair;
use ks_moment::moment_control::{self as mc, ControlScenario, MomentProblem, Profile, QuadPoly, ScenarioKind};
use ks_moment::pde_sim::{self, ModalSystem};
use ks_moment::spectrum::{self, Branch};
use ks_moment::{Error, C64};
use rand::{Rng, SeedableRng};
use std::path::Path;
use std::time::Instant;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, id: &'static str, pass: bool, detail: String) {
    println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { id, pass, detail });
}

fn init_k3() -> StatePair {
    StatePair::read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/init_k3.json")).unwrap()
}

fn init_with_means() -> StatePair {
    StatePair::read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/init_k3_means.json")).unwrap()
}

fn profile() -> Profile {
    Profile::new(1.0, QuadPoly { a: 1, b: 2, c: -1 }).unwrap()
}

fn probe(kmax: i64, seed: u64) -> StatePair {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut s = StatePair::zeros(kmax as usize);
    for k in -kmax..=kmax {
        let mut z = || C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        s.set_mode(k, [z(), z()]);
    }
    s
}

struct Run {
    moment: mc::MomentReport,
    terminal: pde_sim::TerminalReport,
    initial_dual_norm: f64,
    duality: f64,
    seconds: f64,
}

fn end_to_end(kind: ScenarioKind, kc: i64, t: f64) -> ks_moment::Result<Run> {
    let start = Instant::now();
    let init = init_k3();
    let sc = ControlScenario::new(kind, Some(profile()))?;
    let prob = MomentProblem::new(sc, t, kc, init.clone())?;
    let syn = mc::synthesize(prob, &PrecisionPolicy::terminal(1e-12))?;
    let moment = mc::moment_residuals(&syn, kc + 6)?;
    let sys = ModalSystem::new(64)?;
    let fwd = pde_sim::evolve_controlled(&sys, &init, &sc, &syn.signal, 2)?;
    let (adj, atr) = pde_sim::adjoint_solve(&probe(5, 7 + kc as u64), &[], t, 2)?;
    let duality = pde_sim::duality_residual(&fwd, &atr, &sc, &syn.signal, &adj)?.relative;
    Ok(Run { moment, terminal: pde_sim::terminal_report(fwd.last(), kc), initial_dual_norm: init.dual_norm(), duality, seconds: start.elapsed().as_secs_f64() })
}

fn criterion_1(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for k in (-200i64..=200).filter(|&k| k != 0) {
        let (a, b) = spectrum::vieta_residuals(k).unwrap();
        worst = worst.max(a).max(b);
    }
    let lp = spectrum::lambda(1, Branch::Plus).unwrap();
    let lm = spectrum::lambda(1, Branch::Minus).unwrap();
    let dp = (lp - C64::new(-0.86439, 1.37214)).norm();
    let dm = (lm - C64::new(-0.13561, -1.37214)).norm();
    let secs = start.elapsed().as_secs_f64();
    report(out, "1", worst <= 1e-9 && dp <= 1e-4 && dm <= 1e-4 && secs < 1.0, format!("max_vieta={worst:.2e} dlambda1+={dp:.1e} dlambda1-={dm:.1e} time={secs:.3}s"));
}

fn criterion_2(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let g = spectrum::spectral_gap(50).unwrap();
    let d = spectrum::denominator_check(50).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        out,
        "2",
        g.min_gap > 0.0 && g.gap_to_zero > 0.0 && d.min_first > 0.0 && d.min_second > 0.0 && secs < 1.0,
        format!("min_gap={:.4e} at {:?} gap_to_zero={:.4e} min_den1={:.4e} min_den2={:.4e} time={secs:.3}s", g.min_gap, g.pair, g.gap_to_zero, d.min_first, d.min_second),
    );
}

fn criterion_3(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let fam = ExponentFamily::symmetric(6, 1.0).unwrap();
    let gf = biortho::gram_biorthogonal(&fam, &PrecisionPolicy::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let r = &gf.report;
    report(
        out,
        "3",
        r.max_residual <= 1e-8 && secs < 5.0,
        format!("max_residual={:.2e} log10_cond={:.2} precision_bits={} time={secs:.2}s", r.max_residual, r.log10_cond_equilibrated, r.precision_bits),
    );
}

fn criterion_4(out: &mut Vec<Outcome>) {
    let r10 = end_to_end(ScenarioKind::InteriorU, 10, 1.0).unwrap();
    let r14 = end_to_end(ScenarioKind::InteriorU, 14, 1.0).unwrap();
    let enforced = r10.moment.max_enforced_terminal.max(r10.terminal.enforced_dual_norm);
    let enforced_ok = enforced <= 1e-9;
    let total_ok = r10.terminal.dual_norm <= 1e-6 * r10.initial_dual_norm;
    let decreasing = r14.terminal.leaked_dual_norm < r10.terminal.leaked_dual_norm;
    let fast = r10.seconds < 60.0;
    report(
        out,
        "4",
        enforced_ok && total_ok && decreasing && fast,
        format!(
            "enforced={enforced:.2e}[{}] total={:.3e} vs 1e-6*initial={:.3e}[{}] leak(Kc=10)={:.3e} leak(Kc=14)={:.3e}[{}] time={:.1}s",
            ok(enforced_ok),
            r10.terminal.dual_norm,
            1e-6 * r10.initial_dual_norm,
            ok(total_ok),
            r10.terminal.leaked_dual_norm,
            r14.terminal.leaked_dual_norm,
            ok(decreasing),
            r10.seconds
        ),
    );
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "not met"
    }
}

fn criterion_5(out: &mut Vec<Outcome>) {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [ScenarioKind::InteriorV, ScenarioKind::BoundaryU, ScenarioKind::BoundaryV] {
        let r = end_to_end(kind, 10, 1.0).unwrap();
        let good = r.moment.max_enforced_terminal <= 1e-8 && r.duality <= 1e-7;
        pass &= good;
        parts.push(format!("{}:moment={:.1e},duality={:.1e}", kind.as_str(), r.moment.max_enforced_terminal, r.duality));
    }
    for kind in ScenarioKind::ALL {
        let sc = ControlScenario::new(kind, Some(profile())).unwrap();
        let rejected = match MomentProblem::new(sc, 1.0, 10, init_with_means()) {
            Err(Error::Constraint(m)) => m.contains(&format!("theorem {} ", kind.theorem())),
            _ => false,
        };
        pass &= rejected;
        parts.push(format!("{}:rejects_wrong_mean={rejected}", kind.as_str()));
    }
    report(out, "5", pass, parts.join(" "));
}

fn criterion_6(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let setup = PsiSetup::new(2.0 * std::f64::consts::PI, TruncationPolicy::default()).unwrap();
    let nodes = cli::pw_nodes();
    let (rep, _) = biortho::pw_family(&setup, Quadrature::default(), &nodes, &nodes).unwrap();
    let (without_m2, m2) = cli::pw_gate(&rep);
    let secs = start.elapsed().as_secs_f64();
    report(
        out,
        "6",
        rep.max_residual <= 1e-2 && rep.min_mass_fraction >= 0.99 && secs < 300.0,
        format!(
            "max_residual={:.2e} (columns other than ±2-: {without_m2:.2e}; ±2- columns: {m2:.2e}) min_mass_fraction={:.6} time={secs:.1}s",
            rep.max_residual, rep.min_mass_fraction
        ),
    );
}

fn criterion_7(out: &mut Vec<Outcome>) {
    let setup = PsiSetup::new(2.0 * std::f64::consts::PI, TruncationPolicy::default()).unwrap();
    let fits = ef::estimate_fits(&setup).unwrap();
    let norms = biortho::norm_report(1.0, 6).unwrap();
    let mut pass = norms.envelopes_finite && norms.minus_slope_ok;
    let mut parts = Vec::new();
    for f in &fits {
        pass &= f.holds && f.log_constant.is_finite();
        parts.push(format!("{}:C={:.3}{}", f.name, f.log_constant, if f.holds { "" } else { "(fails)" }));
    }
    parts.push(format!("theta_plus_log10_c={:.2} theta_minus_log10_c={:.2} minus_slope={:.3}", norms.plus_log10_c, norms.minus_log10_c, norms.minus_slope));
    report(out, "7", pass, parts.join(" "));
}

fn criterion_8(out: &mut Vec<Outcome>) {
    let a = ef::log_kernel_theta_scan().unwrap();
    let xs = [0.0, 1.0, -1.0, 10.0, -10.0, 100.0, -100.0, 1e4, -1e4];
    let b: Vec<_> = xs.iter().map(|&x| ef::weighted_cauchy_bound(x).unwrap()).collect();
    let i0 = b[0].integral;
    let energy = pde_sim::energy_suite(50, 3, 41, 1000).unwrap();
    let pass = a.finite && b.iter().all(|r| r.holds) && (i0 - 3.40048).abs() <= 1e-4 && energy.ineq0_all_hold && energy.cases.len() == 50;
    report(
        out,
        "8",
        pass,
        format!(
            "theta_sup={:.4} cauchy_bound_all={} I(0)={i0:.6} ineq0_cases={} ineq0_all={} worst_margin={:.3e}",
            a.sup_abs,
            b.iter().all(|r| r.holds),
            energy.cases.len(),
            energy.ineq0_all_hold,
            energy.worst_ineq0_margin
        ),
    );
}

fn criterion_9(out: &mut Vec<Outcome>) {
    let l = mc::liouville_scan(QuadPoly { a: 1, b: 2, c: -1 }, 10_000).unwrap();
    let d = mc::profile_decay_scan(&profile(), 10_000).unwrap();
    let pass = l.empirical_min_q2 >= l.analytic_c && l.holds && d.min_k2_fk > 0.0;
    report(
        out,
        "9",
        pass,
        format!("C={:.6} min_q2_dist={:.6} min_q_dist={:.6} (q={}) min_k2_fk={:.6} (k={})", l.analytic_c, l.empirical_min_q2, l.empirical_min, l.argmin_q, d.min_k2_fk, d.argmin_k),
    );
}

#[test]
fn acceptance() {
    let mut out = Vec::new();
    criterion_1(&mut out);
    criterion_2(&mut out);
    criterion_3(&mut out);
    criterion_4(&mut out);
    criterion_5(&mut out);
    criterion_6(&mut out);
    criterion_7(&mut out);
    criterion_8(&mut out);
    criterion_9(&mut out);
    let failed: Vec<String> = out.iter().filter(|o| !o.pass).map(|o| format!("{}: {}", o.id, o.detail)).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}

//! Per-mode spectra of the adjoint operator.
//!
//! Mode `k` of the adjoint system reduces to a 2×2 matrix whose eigenvalues
//! solve `λ² + pλ + q = 0` with `p = k⁴ + ik³ − ik`, `q = k⁶ + ik³ + k²`.
//! The "plus" root behaves like a heat eigenvalue (`≈ −k² + ik`), the "minus"
//! root like a fourth-order one (`≈ −k⁴ − ik³ + k²`). Exponents used in the
//! moment problems are `μ = conj(λ)`.

use crate::{par, Error, Result, C64};
use serde::Serialize;
use std::io::Write;

/// Largest |k| accepted; k⁶ stays well inside f64 range.
pub const K_LIMIT: i64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Plus => "plus",
            Branch::Minus => "minus",
        }
    }
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpectralNode {
    pub k: i64,
    pub branch: Branch,
    pub lambda: C64,
    pub mu: C64,
    pub eta: C64,
    pub theta: C64,
    pub mu_tilde: C64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroMode {
    pub eigenvalue: C64,
    pub eigenvectors: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumTable {
    pub kmax: i64,
    pub nodes: Vec<SpectralNode>,
    pub zero_mode: ZeroMode,
    /// Modes whose branch labels had to be decided by the tie rule.
    pub ties: Vec<i64>,
}

fn check_k(k: i64) -> Result<()> {
    if k.abs() > K_LIMIT {
        return Err(Error::Usage(format!("|k| = {} exceeds overflow guard {K_LIMIT}", k.abs())));
    }
    Ok(())
}

pub fn modal_quadratic(k: i64) -> (C64, C64) {
    let kf = k as f64;
    let k2 = kf * kf;
    let k3 = k2 * kf;
    (C64::new(k2 * k2, k3 - kf), C64::new(k3 * k3, k3) + C64::new(k2, 0.0))
}

/// Heat-like and fourth-order asymptotic anchors used to label the roots.
pub fn anchors(k: i64) -> (C64, C64) {
    let kf = k as f64;
    let k2 = kf * kf;
    (C64::new(-k2, kf), C64::new(-k2 * k2 + k2, -k2 * kf))
}

/// Both roots of the modal quadratic, unlabeled, via the cancellation-free
/// pairing `r₁ = −(p + d)/2`, `r₂ = q/r₁` where `d` is the square root of the
/// discriminant aligned with `p`.
pub fn quadratic_roots(p: C64, q: C64) -> (C64, C64) {
    let mut d = (p * p - 4.0 * q).sqrt();
    if (p.conj() * d).re < 0.0 {
        d = -d;
    }
    let r1 = -(p + d) * 0.5;
    if r1.norm() == 0.0 {
        return (r1, r1);
    }
    (r1, q / r1)
}

/// Returns `(λ⁺, λ⁻, tie)`; `tie` is set when both roots are equidistant from
/// the plus anchor, in which case plus takes the root of larger real part.
pub fn eigenvalues_labeled(k: i64) -> Result<(C64, C64, bool)> {
    if k == 0 {
        return Err(Error::Usage("k = 0 carries the double eigenvalue 0; see zero_mode".into()));
    }
    check_k(k)?;
    let (p, q) = modal_quadratic(k);
    let (r1, r2) = quadratic_roots(p, q);
    let (ap, _) = anchors(k);
    let d1 = (r1 - ap).norm();
    let d2 = (r2 - ap).norm();
    if d1 == d2 {
        let (hi, lo) = if r1.re >= r2.re { (r1, r2) } else { (r2, r1) };
        return Ok((hi, lo, true));
    }
    if d1 < d2 {
        Ok((r1, r2, false))
    } else {
        Ok((r2, r1, false))
    }
}

pub fn eigenvalues(k: i64) -> Result<(C64, C64)> {
    let (a, b, _) = eigenvalues_labeled(k)?;
    Ok((a, b))
}

pub fn lambda(k: i64, branch: Branch) -> Result<C64> {
    let (lp, lm) = eigenvalues(k)?;
    Ok(match branch {
        Branch::Plus => lp,
        Branch::Minus => lm,
    })
}

/// `η = −ik⁵ − (1+λ)ik + k² − λ` and `θ = η/λ`; the adjoint eigenvector of
/// mode `k` is `(1, θ)·e^{ikx}`.
pub fn eta_theta(k: i64, branch: Branch) -> Result<(C64, C64)> {
    let lam = lambda(k, branch)?;
    if lam.norm() < 1e-14 {
        return Err(Error::Numeric(format!("|λ| vanishes at k={k}")));
    }
    let kf = k as f64;
    let i = C64::i();
    let eta = -i * kf.powi(5) - (1.0 + lam) * i * kf + kf * kf - lam;
    let theta = eta / lam;
    if eta.norm() == 0.0 || theta.norm() == 0.0 {
        return Err(Error::Numeric(format!("θ vanishes at k={k}")));
    }
    Ok((eta, theta))
}

/// `sgn(k)·(−μ)^{1/2}` on the plus branch and `sgn(k)·(−μ)^{1/4}` on the
/// minus branch, principal roots.
pub fn mu_tilde(k: i64, branch: Branch) -> Result<C64> {
    let mu = lambda(k, branch)?.conj();
    let w = -mu;
    if w.im == 0.0 && w.re <= 0.0 {
        return Err(Error::Numeric(format!("−μ on the branch cut at k={k}")));
    }
    let s = k.signum() as f64;
    Ok(match branch {
        Branch::Plus => s * w.sqrt(),
        Branch::Minus => s * w.sqrt().sqrt(),
    })
}

/// `μ_k^± = conj(λ_k^±)` in arbitrary precision. The quadratic is solved
/// from its exact integer coefficients so that every consumer (Gram systems,
/// simulators) sees the same exponent to `p` bits; labels follow the f64
/// proximity rule.
pub fn exponent_mp(k: i64, branch: Branch, p: usize) -> Result<crate::mp::Cx> {
    use crate::mp::Cx;
    if k == 0 {
        return Ok(Cx::zero(p));
    }
    check_k(k)?;
    let q_ = p + 64;
    let (pc, qc) = modal_quadratic(k);
    let pm = Cx::from_c64(pc, q_);
    let qm = Cx::from_c64(qc, q_);
    let disc = pm.mul(&pm, q_).sub(&qm.scale(4.0, q_), q_);
    let mut d = disc.sqrt(q_);
    if (pc.conj() * d.to_c64()).re < 0.0 {
        d = d.neg();
    }
    let r1 = pm.add(&d, q_).scale(-0.5, q_);
    let r2 = qm.div(&r1, q_);
    let (lp, _) = eigenvalues(k)?;
    let plus_is_r1 = (r1.to_c64() - lp).norm() <= (r2.to_c64() - lp).norm();
    let lam = match (branch, plus_is_r1) {
        (Branch::Plus, true) | (Branch::Minus, false) => r1,
        _ => r2,
    };
    Ok(lam.conj())
}

pub fn node(k: i64, branch: Branch) -> Result<SpectralNode> {
    let lam = lambda(k, branch)?;
    let (eta, theta) = eta_theta(k, branch)?;
    Ok(SpectralNode {
        k,
        branch,
        lambda: lam,
        mu: lam.conj(),
        eta,
        theta,
        mu_tilde: mu_tilde(k, branch)?,
    })
}

pub fn table(kmax: i64) -> Result<SpectrumTable> {
    if kmax < 0 {
        return Err(Error::Usage(format!("kmax must be non-negative, got {kmax}")));
    }
    check_k(kmax)?;
    let ks: Vec<i64> = (-kmax..=kmax).filter(|&k| k != 0).collect();
    let rows = par::map(&ks, |&k| -> Result<(SpectralNode, SpectralNode, bool)> {
        let (_, _, tie) = eigenvalues_labeled(k)?;
        Ok((node(k, Branch::Plus)?, node(k, Branch::Minus)?, tie))
    });
    let mut nodes = Vec::with_capacity(2 * ks.len());
    let mut ties = Vec::new();
    for (r, &k) in rows.into_iter().zip(&ks) {
        let (a, b, tie) = r?;
        nodes.push(a);
        nodes.push(b);
        if tie {
            ties.push(k);
        }
    }
    Ok(SpectrumTable {
        kmax,
        nodes,
        zero_mode: ZeroMode { eigenvalue: C64::new(0.0, 0.0), eigenvectors: [[1.0, 0.0], [0.0, 1.0]] },
        ties,
    })
}

/// Relative residuals of `λ⁺+λ⁻ = −p` and `λ⁺λ⁻ = q`.
pub fn vieta_residuals(k: i64) -> Result<(f64, f64)> {
    let (p, q) = modal_quadratic(k);
    let (lp, lm) = eigenvalues(k)?;
    Ok(((lp + lm + p).norm() / p.norm(), (lp * lm - q).norm() / q.norm()))
}

/// Relative residual of the quadratic at one root.
pub fn quadratic_residual(k: i64, branch: Branch) -> Result<f64> {
    let (p, q) = modal_quadratic(k);
    let l = lambda(k, branch)?;
    let scale = (l * l).norm() + (p * l).norm() + q.norm();
    Ok((l * l + p * l + q).norm() / scale)
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub min_gap: f64,
    pub pair: ((i64, &'static str), (i64, &'static str)),
    /// Minimum distance from a nonzero eigenvalue to λ₀ = 0.
    pub gap_to_zero: f64,
}

fn label(k: i64, b: Option<Branch>) -> (i64, &'static str) {
    (k, b.map(|b| b.as_str()).unwrap_or("zero"))
}

/// Brute-force minimum pairwise distance over `{0} ∪ {λ_k^±: 0<|k|≤kmax}`.
pub fn spectral_gap(kmax: i64) -> Result<GapReport> {
    if kmax < 1 {
        return Err(Error::Usage("spectral_gap needs kmax ≥ 1".into()));
    }
    let mut pts: Vec<(i64, Option<Branch>, C64)> = vec![(0, None, C64::new(0.0, 0.0))];
    for k in (-kmax..=kmax).filter(|&k| k != 0) {
        let (lp, lm) = eigenvalues(k)?;
        pts.push((k, Some(Branch::Plus), lp));
        pts.push((k, Some(Branch::Minus), lm));
    }
    let idx: Vec<usize> = (0..pts.len()).collect();
    let best = par::map(&idx, |&i| {
        let mut b = (f64::INFINITY, i, i);
        for j in (i + 1)..pts.len() {
            let d = (pts[i].2 - pts[j].2).norm();
            if d < b.0 {
                b = (d, i, j);
            }
        }
        b
    });
    let (g, i, j) = best.into_iter().fold((f64::INFINITY, 0, 0), |a, b| if b.0 < a.0 { b } else { a });
    let gap_to_zero = pts[1..].iter().map(|p| p.2.norm()).fold(f64::INFINITY, f64::min);
    Ok(GapReport {
        min_gap: g,
        pair: (label(pts[i].0, pts[i].1), label(pts[j].0, pts[j].1)),
        gap_to_zero,
    })
}

/// Boundary-control denominators for one node:
/// `ik³+k²−ik+conj(θ)` (control on the first component) and
/// `1+(1−ik)conj(θ)` (control on the second component, printed form).
pub fn denominators(k: i64, branch: Branch) -> Result<(C64, C64)> {
    let (_, th) = eta_theta(k, branch)?;
    let kf = k as f64;
    let i = C64::i();
    let tb = th.conj();
    let d1 = i * kf.powi(3) + kf * kf - i * kf + tb;
    let d2 = 1.0 + (1.0 - i * kf) * tb;
    Ok((d1, d2))
}

/// Gain of a jump control on the second component, as obtained from the
/// jump condition by integration by parts: `−1 + (1−ik)conj(θ)`.
pub fn second_component_jump_gain(k: i64, branch: Branch) -> Result<C64> {
    let (_, th) = eta_theta(k, branch)?;
    Ok(-1.0 + (1.0 - C64::i() * k as f64) * th.conj())
}

#[derive(Debug, Clone, Serialize)]
pub struct DenominatorReport {
    pub min_first: f64,
    pub min_second: f64,
    pub min_second_jump_gain: f64,
    pub rows: Vec<(i64, Branch, C64, C64)>,
}

pub fn denominator_check(kmax: i64) -> Result<DenominatorReport> {
    if kmax < 1 {
        return Err(Error::Usage("denominator_check needs kmax ≥ 1".into()));
    }
    let mut rows = Vec::new();
    let (mut m1, mut m2, mut m3) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for k in (-kmax..=kmax).filter(|&k| k != 0) {
        for b in [Branch::Plus, Branch::Minus] {
            let (d1, d2) = denominators(k, b)?;
            m1 = m1.min(d1.norm());
            m2 = m2.min(d2.norm());
            m3 = m3.min(second_component_jump_gain(k, b)?.norm());
            rows.push((k, b, d1, d2));
        }
    }
    Ok(DenominatorReport { min_first: m1, min_second: m2, min_second_jump_gain: m3, rows })
}

/// Writes the figure data: eigenvalue scatter, θ values, gap, and the four
/// denominator curves (one file per branch and control placement).
pub fn write_figure_csvs(kmax: i64, dir: &std::path::Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if kmax == 0 {
        let zero_path = dir.join("zero_mode.csv");
        let mut w = csv::Writer::from_path(&zero_path)?;
        w.write_record(["re_lambda", "im_lambda", "eigvec1_u", "eigvec1_v", "eigvec2_u", "eigvec2_v"])?;
        w.write_record(["0", "0", "1", "0", "0", "1"])?;
        w.flush()?;
        written.push(zero_path);
        return Ok(written);
    }
    let t = table(kmax)?;
    let gap = spectral_gap(kmax)?;
    let den = denominator_check(kmax)?;

    let p = dir.join("eigenvalues.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["k", "branch", "re_lambda", "im_lambda", "re_theta", "im_theta", "abs_theta"])?;
    // double eigenvalue 0 at k = 0, eigenvectors e_u and e_v
    w.write_record(["0", "zero", "0", "0", "", "", ""])?;
    for n in &t.nodes {
        w.write_record([
            n.k.to_string(),
            n.branch.as_str().into(),
            fmt(n.lambda.re),
            fmt(n.lambda.im),
            fmt(n.theta.re),
            fmt(n.theta.im),
            fmt(n.theta.norm()),
        ])?;
    }
    w.flush()?;
    written.push(p);

    let p = dir.join("gap.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["kmax", "min_gap", "gap_to_zero"])?;
    for km in 1..=kmax {
        let g = spectral_gap(km)?;
        w.write_record([km.to_string(), fmt(g.min_gap), fmt(g.gap_to_zero)])?;
    }
    w.flush()?;
    written.push(p);

    let p = dir.join("theta_modulus.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["k", "abs_theta_plus", "abs_theta_minus"])?;
    for k in (-kmax..=kmax).filter(|&k| k != 0) {
        let (_, tp) = eta_theta(k, Branch::Plus)?;
        let (_, tm) = eta_theta(k, Branch::Minus)?;
        w.write_record([k.to_string(), fmt(tp.norm()), fmt(tm.norm())])?;
    }
    w.flush()?;
    written.push(p);

    for (name, branch, second) in [
        ("denominator_first_plus.csv", Branch::Plus, false),
        ("denominator_first_minus.csv", Branch::Minus, false),
        ("denominator_second_plus.csv", Branch::Plus, true),
        ("denominator_second_minus.csv", Branch::Minus, true),
    ] {
        let p = dir.join(name);
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["k", "re", "im", "abs"])?;
        for (k, b, d1, d2) in &den.rows {
            if *b != branch {
                continue;
            }
            let d = if second { *d2 } else { *d1 };
            w.write_record([k.to_string(), fmt(d.re), fmt(d.im), fmt(d.norm())])?;
        }
        w.flush()?;
        written.push(p);
    }

    let p = dir.join("summary.json");
    let mut f = std::fs::File::create(&p)?;
    let summary = serde_json::json!({
        "kmax": kmax,
        "min_gap": gap.min_gap,
        "gap_pair": gap.pair,
        "gap_to_zero": gap.gap_to_zero,
        "min_denominator_first": den.min_first,
        "min_denominator_second": den.min_second,
        "min_second_component_jump_gain": den.min_second_jump_gain,
        "branch_ties": t.ties,
    });
    writeln!(f, "{}", serde_json::to_string_pretty(&summary)?)?;
    written.push(p);
    Ok(written)
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn quadratic_coefficients() {
        assert_eq!(modal_quadratic(0), (C64::new(0.0, 0.0), C64::new(0.0, 0.0)));
        assert_eq!(modal_quadratic(1), (C64::new(1.0, 0.0), C64::new(2.0, 1.0)));
        assert_eq!(modal_quadratic(2), (C64::new(16.0, 6.0), C64::new(68.0, 8.0)));
    }

    #[test]
    fn first_modes() {
        let (lp, lm) = eigenvalues(1).unwrap();
        assert!(close(lp, C64::new(-0.86439, 1.37214), 1e-4));
        assert!(close(lm, C64::new(-0.13561, -1.37214), 1e-4));
        assert!((lp + lm + 1.0).norm() < 1e-14);
        let (lp, lm) = eigenvalues(2).unwrap();
        assert!(close(lp, C64::new(-4.18820, 2.24686), 1e-4));
        assert!(close(lm, C64::new(-11.81180, -8.24686), 1e-4));
    }

    #[test]
    fn theta_and_roots() {
        let (_, th) = eta_theta(1, Branch::Plus).unwrap();
        assert!(close(th, C64::new(-2.372, -0.864), 1e-3));
        // Principal root of 0.86439+1.37214i, computed independently.
        let mt = mu_tilde(1, Branch::Plus).unwrap();
        assert!(close(mt, C64::new(1.114921, 0.615353), 1e-5));
        assert!(close(mt * mt, -lambda(1, Branch::Plus).unwrap().conj(), 1e-14));
        let (d1, _) = denominators(1, Branch::Plus).unwrap();
        // |1 + conj θ| with θ from the line above
        assert!((d1 - (1.0 + th.conj())).norm() < 1e-14);
        assert!((d1.norm() - 1.6214).abs() < 1e-3);
    }

    #[test]
    fn zero_mode_rejected() {
        assert!(eigenvalues(0).is_err());
        assert!(table(-1).is_err());
        assert!(eigenvalues(K_LIMIT + 1).is_err());
    }

    #[test]
    fn small_gap_includes_zero() {
        let g = spectral_gap(1).unwrap();
        assert!(g.min_gap > 0.0);
        assert!(g.gap_to_zero <= eigenvalues(1).unwrap().1.norm() + 1e-15);
    }
}

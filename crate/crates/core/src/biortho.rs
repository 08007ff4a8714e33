//! Families `{Θ_j}` biorthogonal to `{e^{−μ_l t}}` on `[−T/2, T/2]`.
//!
//! The Gram route solves the finite system exactly in arbitrary precision.
//! With `B_lm = ∫ e^{−(μ_l+μ̄_m)t} dt` and `Θ_j = Σ_l C_lj e^{−μ̄_l t}`,
//! biorthogonality is `B·C = I`. `B` factors as `D·E·Dᴴ` with
//! `D = diag(e^{−μ_l T/2})` and `E_lm = (e^{(μ_l+μ̄_m)T} − 1)/(μ_l+μ̄_m)`, so
//! only `E` (bounded entries, Hermitian positive definite) is factorized.
//!
//! The Paley–Wiener route inverts the interpolating functions of
//! [`crate::entire_functions`] by a discrete Fourier transform.

use crate::entire_functions::{self as ef, PsiSetup};
use crate::mp::{self, bf, Cx, Lu, Mat};
use crate::spectrum::{self, Branch};
use crate::{par, Error, Result, C64};
use serde::Serialize;
use std::f64::consts::{LN_2, PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum NodeLabel {
    Zero,
    Mode(i64, Branch),
    Custom(usize),
}

impl NodeLabel {
    pub fn k(&self) -> i64 {
        match self {
            NodeLabel::Mode(k, _) => *k,
            _ => 0,
        }
    }
    pub fn name(&self) -> String {
        match self {
            NodeLabel::Zero => "0".into(),
            NodeLabel::Mode(k, b) => format!("{k}{}", if *b == Branch::Plus { "+" } else { "-" }),
            NodeLabel::Custom(i) => format!("c{i}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExponentFamily {
    pub t: f64,
    pub labels: Vec<NodeLabel>,
    pub mu: Vec<C64>,
    custom: bool,
}

impl ExponentFamily {
    /// `{0} ∪ {μ_k^±: 1 ≤ |k| ≤ kc}`, ordered 0, then for k = 1..kc the four
    /// nodes (k,+), (k,−), (−k,+), (−k,−).
    pub fn symmetric(kc: i64, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::Usage(format!("window length must be positive, got {t}")));
        }
        let mut labels = vec![NodeLabel::Zero];
        let mut mu = vec![C64::new(0.0, 0.0)];
        for k in 1..=kc {
            for kk in [k, -k] {
                for b in [Branch::Plus, Branch::Minus] {
                    labels.push(NodeLabel::Mode(kk, b));
                    mu.push(spectrum::lambda(kk, b)?.conj());
                }
            }
        }
        Ok(ExponentFamily { t, labels, mu, custom: false })
    }

    /// Arbitrary distinct exponents, taken as exact binary values.
    pub fn custom(t: f64, mu: &[C64]) -> Result<Self> {
        for i in 0..mu.len() {
            for j in 0..i {
                if mu[i] == mu[j] {
                    return Err(Error::Usage("exponents must be pairwise distinct".into()));
                }
            }
        }
        let labels = (0..mu.len())
            .map(|i| if mu[i] == C64::new(0.0, 0.0) { NodeLabel::Zero } else { NodeLabel::Custom(i) })
            .collect();
        Ok(ExponentFamily { t, labels, mu: mu.to_vec(), custom: true })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn index_of(&self, l: NodeLabel) -> Option<usize> {
        self.labels.iter().position(|&x| x == l)
    }

    /// Exponents at `p` bits (spectral nodes recomputed in MP).
    pub fn mu_mp(&self, p: usize) -> Result<Vec<Cx>> {
        self.labels
            .iter()
            .zip(&self.mu)
            .map(|(l, m)| match (self.custom, l) {
                (false, NodeLabel::Mode(k, b)) => spectrum::exponent_mp(*k, *b, p),
                _ => Ok(Cx::from_c64(*m, p)),
            })
            .collect()
    }

    /// Bits lost when a terminal-scale quantity is read on the symmetric window.
    pub fn raw_scale_bits(&self) -> f64 {
        self.mu.iter().map(|m| -m.re).fold(0.0, f64::max) * self.t / (2.0 * LN_2)
    }
}

/// Exponentials needed by both Gram forms: `e^{μT}` and `e^{μT/2}`.
pub struct ExpTable {
    pub p: usize,
    pub mu: Vec<Cx>,
    pub full: Vec<Cx>,
    pub half: Vec<Cx>,
    pub t: astro_float::BigFloat,
}

impl ExpTable {
    pub fn new(fam: &ExponentFamily, p: usize) -> Result<Self> {
        let mu = fam.mu_mp(p)?;
        let t = bf(fam.t, p);
        let th = bf(fam.t / 2.0, p);
        let pairs = par::map(&mu, |m| {
            let mut cc = mp::consts();
            let h = m.mul_real(&th, p + 64).exp(p, &mut cc);
            let f = h.mul(&h, p);
            (f, h)
        });
        let (full, half) = pairs.into_iter().unzip();
        Ok(ExpTable { p, mu, full, half, t })
    }
}

/// `E_lm = (e^{(μ_l+μ̄_m)T} − 1)/(μ_l+μ̄_m)` (limit `T`), Hermitian.
pub fn end_gram(x: &ExpTable) -> Mat {
    let n = x.mu.len();
    let p = x.p;
    let rows = par::map_range(n, |l| {
        (0..n)
            .map(|m| {
                let w = x.mu[l].add(&x.mu[m].conj(), p);
                let e = x.full[l].mul(&x.full[m].conj(), p);
                mp::expm1_over(&w, &e, &x.t, p)
            })
            .collect::<Vec<_>>()
    });
    Mat { n, m: n, a: rows.into_iter().flatten().collect() }
}

/// Symmetric-window Gram `B_lm = ∫_{−T/2}^{T/2} e^{−(μ_l+μ̄_m)t} dt`
/// `= (e^{wT/2} − e^{−wT/2})/w`, `w = μ_l + μ̄_m` (limit `T`).
pub fn window_gram(x: &ExpTable) -> Mat {
    let n = x.mu.len();
    let p = x.p;
    let rows = par::map_range(n, |l| {
        (0..n)
            .map(|m| window_entry(&x.mu[l].add(&x.mu[m].conj(), p), &x.half[l].mul(&x.half[m].conj(), p), &x.t, p))
            .collect::<Vec<_>>()
    });
    Mat { n, m: n, a: rows.into_iter().flatten().collect() }
}

/// `(e^{wT/2} − e^{−wT/2})/w` from `e^{wT/2}`; series `T·Σ (wT/2)^{2j}/(2j+1)!`
/// when `|wT|` is small.
pub fn window_entry(w: &Cx, ehalf: &Cx, t: &astro_float::BigFloat, p: usize) -> Cx {
    if w.is_zero() {
        return Cx::real(t.clone(), p);
    }
    let q = p + 16;
    let z = w.mul_real(t, q).scale(0.5, q);
    if z.log2_abs() < -8.0 {
        let z2 = z.mul(&z, q);
        let mut term = Cx::one(q);
        let mut sum = Cx::one(q);
        let mut j = 1.0;
        loop {
            term = term.mul(&z2, q).scale(1.0 / ((2.0 * j) * (2.0 * j + 1.0)), q);
            sum = sum.add(&term, q);
            if term.log2_abs() < -(p as f64) - 8.0 {
                break;
            }
            j += 1.0;
        }
        return sum.mul_real(t, p);
    }
    ehalf.sub(&ehalf.recip(q), q).div(w, p)
}

/// Equilibrated `log₂ κ₁` of `E` given `E⁻¹`.
pub fn log2_cond_equilibrated(e: &Mat, inv: &Mat) -> f64 {
    let n = e.n;
    let s: Vec<f64> = (0..n).map(|i| -0.5 * e.get(i, i).log2_abs()).collect();
    let norm = |m: &Mat, sign: f64| {
        (0..n)
            .map(|j| mp::log2_sum((0..n).map(|i| m.get(i, j).log2_abs() + sign * (s[i] + s[j]))))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    norm(e, 1.0) + norm(inv, -1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PrecisionTarget {
    /// Residuals of the symmetric-window equations themselves.
    Window,
    /// Residuals scaled to the terminal time (`e^{μT/2}` times the window
    /// residual); needs only the condition-number bits.
    Terminal,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrecisionPolicy {
    pub target: PrecisionTarget,
    pub tol: f64,
    pub p_max: usize,
}

impl PrecisionPolicy {
    /// Sized for terminal-time moment residuals, the form that bounds the
    /// controlled state; used for control synthesis.
    pub fn terminal(tol: f64) -> Self {
        PrecisionPolicy { target: PrecisionTarget::Terminal, tol, p_max: 24_576 }
    }
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        PrecisionPolicy { target: PrecisionTarget::Window, tol: 1e-8, p_max: 24_576 }
    }
}

/// Factorized end-normalized Gram system at a fixed precision.
pub struct GramSystem {
    pub fam: ExponentFamily,
    pub p: usize,
    pub x: ExpTable,
    pub e: Mat,
    pub lu: Lu,
    pub log2_cond: f64,
}

impl GramSystem {
    pub fn build(fam: &ExponentFamily, p: usize) -> Result<Self> {
        let x = ExpTable::new(fam, p)?;
        let e = end_gram(&x);
        let lu = Lu::new(&e, p)?;
        Ok(GramSystem { fam: fam.clone(), p, x, e, lu, log2_cond: f64::NAN })
    }

    pub fn solve(&self, r: &[Cx]) -> Vec<Cx> {
        self.lu.solve_refined(&self.e, r)
    }

    pub fn inverse(&self) -> Mat {
        self.lu.inverse(&self.e)
    }

    /// Build at a precision adequate for `policy`, estimating the condition
    /// number on a first pass and rebuilding if more bits are needed.
    pub fn adaptive(fam: &ExponentFamily, policy: &PrecisionPolicy) -> Result<(Self, Mat)> {
        let raw = match policy.target {
            PrecisionTarget::Window => fam.raw_scale_bits(),
            PrecisionTarget::Terminal => 0.0,
        };
        let tol_bits = (-policy.tol.log2()).max(0.0);
        let mut p = round_p(128.0 + raw + tol_bits);
        loop {
            let mut g = Self::build(fam, p)?;
            let inv = g.inverse();
            g.log2_cond = log2_cond_equilibrated(&g.e, &inv);
            let need = round_p(g.log2_cond + raw + tol_bits + 96.0);
            if need <= p {
                return Ok((g, inv));
            }
            if need > policy.p_max {
                return Err(Error::Numeric(format!(
                    "Gram system needs {need} bits (cond 2^{:.0}); cap is {} bits — reduce K_c or use the terminal target",
                    g.log2_cond, policy.p_max
                )));
            }
            p = need;
        }
    }
}

fn round_p(x: f64) -> usize {
    let x = x.max(128.0).ceil() as usize;
    x.div_ceil(64) * 64
}

#[derive(Debug, Clone, Serialize)]
pub struct GramFamilyReport {
    pub t: f64,
    pub labels: Vec<String>,
    pub exponents: Vec<C64>,
    pub precision_bits: usize,
    pub log10_cond_equilibrated: f64,
    pub max_residual: f64,
    pub residual_precision_bits: usize,
    pub full_rank: bool,
    pub l2_norms: Vec<f64>,
    pub log10_l2_norms: Vec<f64>,
}

/// Gram-method biorthogonal family with closed-form coefficients
/// `C_lj = conj(h_l)·(E⁻¹)_lj·h_j`, `h = e^{μT/2}`.
pub struct GramFamily {
    pub sys: GramSystem,
    pub inv: Mat,
    pub residual: Mat,
    pub report: GramFamilyReport,
}

impl GramFamily {
    pub fn coefficient(&self, l: usize, j: usize, p: usize) -> Cx {
        let h = &self.sys.x.half;
        h[l].conj().mul(self.inv.get(l, j), p).mul(&h[j], p)
    }

    /// `Θ_j(t) = h_j Σ_l (E⁻¹)_lj conj(e^{μ_l(T/2−t)})`, evaluated in MP.
    pub fn eval(&self, j: usize, t: f64) -> C64 {
        let p = self.sys.p;
        let mut cc = mp::consts();
        let s = bf(self.sys.fam.t / 2.0 - t, p);
        let mut acc = Cx::zero(p);
        for l in 0..self.sys.fam.len() {
            let e = self.sys.x.mu[l].mul_real(&s, p + 64).exp(p, &mut cc).conj();
            acc = acc.add(&self.inv.get(l, j).mul(&e, p), p);
        }
        acc.mul(&self.sys.x.half[j], p).to_c64()
    }
}

pub fn gram_biorthogonal(fam: &ExponentFamily, policy: &PrecisionPolicy) -> Result<GramFamily> {
    let (mut sys, mut inv) = GramSystem::adaptive(fam, policy)?;
    loop {
        let (res, maxr, pv) = window_residual(&sys, &inv)?;
        let ok = maxr <= policy.tol || policy.target == PrecisionTarget::Terminal;
        if ok || 2 * sys.p > policy.p_max {
            let n = fam.len();
            let log10_norms: Vec<f64> = (0..n)
                .map(|j| {
                    // ‖Θ_j‖² = C_jj = |h_j|²·(E⁻¹)_jj
                    (2.0 * sys.x.half[j].log2_abs() + inv.get(j, j).log2_abs()) * 0.5 * std::f64::consts::LOG10_2
                })
                .collect();
            let report = GramFamilyReport {
                t: fam.t,
                labels: fam.labels.iter().map(|l| l.name()).collect(),
                exponents: fam.mu.clone(),
                precision_bits: sys.p,
                log10_cond_equilibrated: sys.log2_cond * std::f64::consts::LOG10_2,
                max_residual: maxr,
                residual_precision_bits: pv,
                full_rank: true,
                l2_norms: log10_norms.iter().map(|x| 10f64.powf(*x)).collect(),
                log10_l2_norms: log10_norms,
            };
            if !ok {
                return Err(Error::Numeric(format!(
                    "biorthogonality residual {maxr:.3e} above {:.1e} at the precision cap",
                    policy.tol
                )));
            }
            return Ok(GramFamily { sys, inv, residual: res, report });
        }
        let p = 2 * sys.p;
        sys = GramSystem::build(fam, p)?;
        inv = sys.inverse();
        sys.log2_cond = log2_cond_equilibrated(&sys.e, &inv);
    }
}

/// `∫Θ_j e^{−μ_l t} dt − δ_lj = (B·C − I)_lj`, with `B` rebuilt from the
/// closed form at a higher precision than the solve.
pub fn window_residual(sys: &GramSystem, inv: &Mat) -> Result<(Mat, f64, usize)> {
    let fam = &sys.fam;
    let pv = sys.p + 128 + fam.raw_scale_bits().ceil() as usize;
    let xv = ExpTable::new(fam, pv)?;
    let b = window_gram(&xv);
    let n = fam.len();
    let h = &xv.half;
    let rows = par::map_range(n, |l| {
        (0..n)
            .map(|j| {
                let mut s = Cx::zero(pv);
                for m in 0..n {
                    let c = h[m].conj().mul(inv.get(m, j), pv).mul(&h[j], pv);
                    s = s.add(&b.get(l, m).mul(&c, pv), pv);
                }
                if l == j {
                    s = s.sub(&Cx::one(pv), pv);
                }
                s
            })
            .collect::<Vec<_>>()
    });
    let res = Mat { n, m: n, a: rows.into_iter().flatten().collect() };
    let maxr = res.a.iter().map(|z| z.to_c64().norm()).fold(0.0, f64::max);
    Ok((res, maxr, pv))
}

// ---------------------------------------------------------------------------
// Paley–Wiener inversion

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Quadrature {
    pub x_max: f64,
    pub n: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature { x_max: 400.0, n: 1 << 16 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PwTheta {
    pub node: String,
    /// Samples on `t_m = m·Δt`, `|t_m| ≤ T/2`.
    pub t: Vec<f64>,
    pub theta: Vec<C64>,
    pub l2_total: f64,
    pub l2_inside: f64,
    pub mass_fraction_inside: f64,
    pub integral: C64,
}

/// Shared real-axis grid of `log P + log M` for all interpolating functions.
pub struct PwGrid {
    pub q: Quadrature,
    pub x: Vec<f64>,
    pub log_pm: Vec<C64>,
}

impl PwGrid {
    pub fn new(setup: &PsiSetup, q: Quadrature) -> Result<Self> {
        let dx = 2.0 * q.x_max / q.n as f64;
        let x: Vec<f64> = (0..q.n).map(|j| -q.x_max + j as f64 * dx).collect();
        let log_pm = par::map(&x, |&xi| {
            let z = C64::new(xi, 0.0);
            Ok(setup.log_p_over_z(z) + setup.log_m(z)?)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(PwGrid { q, x, log_pm })
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.q.x_max / self.q.n as f64
    }

    /// `Ψ` on the grid for one node.
    pub fn psi(&self, setup: &PsiSetup, node: ef::Node) -> Result<Vec<C64>> {
        let norm = setup.psi_normalizer(node)?;
        Ok(self
            .x
            .iter()
            .zip(&self.log_pm)
            .map(|(&x, &lpm)| {
                if x == 0.0 && node != ef::Node::Zero {
                    return C64::new(0.0, 0.0);
                }
                (lpm + setup.factor_removal(node, C64::new(x, 0.0)) - norm).exp()
            })
            .collect())
    }
}

/// `Θ(t) = (1/2π)∫_{−X}^{X} Ψ(x) e^{ixt} dx` by a length-n DFT; the L² mass
/// inside `[−T/2, T/2]` is compared with the Plancherel total.
pub fn theta_from_psi(grid: &PwGrid, psi: &[C64], t_window: f64, node: &str) -> PwTheta {
    use rustfft::FftPlanner;
    let n = grid.q.n;
    let dx = grid.dx();
    let dt = 2.0 * PI / (n as f64 * dx);
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> =
        psi.iter().map(|z| rustfft::num_complex::Complex::new(z.re, z.im)).collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let half = (t_window / 2.0 / dt).floor() as i64;
    let mut t = Vec::new();
    let mut theta = Vec::new();
    for m in -half..=half {
        let idx = m.rem_euclid(n as i64) as usize;
        let tm = m as f64 * dt;
        let phase = C64::from_polar(1.0, -grid.q.x_max * tm);
        let v = C64::new(buf[idx].re, buf[idx].im) * phase * (dx / (2.0 * PI));
        t.push(tm);
        theta.push(v);
    }
    let l2_total_sq = psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx / (2.0 * PI);
    let trap = |f: &dyn Fn(usize) -> f64| {
        let k = t.len();
        (0..k).map(|i| f(i) * if i == 0 || i + 1 == k { 0.5 } else { 1.0 }).sum::<f64>() * dt
    };
    let inside_sq = trap(&|i| theta[i].norm_sqr());
    let integral = C64::new(trap(&|i| theta[i].re), trap(&|i| theta[i].im));
    PwTheta {
        node: node.to_string(),
        t,
        theta,
        l2_total: l2_total_sq.sqrt(),
        l2_inside: inside_sq.sqrt(),
        mass_fraction_inside: inside_sq / l2_total_sq,
        integral,
    }
}

/// `∫_{−T/2}^{T/2} Θ(t) e^{−μt} dt` for the band-limited `Θ`, exactly:
/// `(1/2π)∫Ψ(x)·K(x) dx` with `K(x) = (e^{(ix−μ)T/2} − e^{−(ix−μ)T/2})/(ix−μ)`.
pub fn pw_moment(grid: &PwGrid, psi: &[C64], mu: C64, t_window: f64) -> C64 {
    let dx = grid.dx();
    let s: C64 = grid
        .x
        .iter()
        .zip(psi)
        .map(|(&x, &p)| {
            let w = C64::new(0.0, x) - mu;
            let k = if w.norm() < 1e-12 {
                C64::new(t_window, 0.0)
            } else {
                ((w * t_window / 2.0).exp() - (-w * t_window / 2.0).exp()) / w
            };
            p * k
        })
        .sum();
    s * dx / (2.0 * PI)
}

#[derive(Debug, Clone, Serialize)]
pub struct PwReport {
    pub t: f64,
    pub quadrature: Quadrature,
    pub elements: Vec<String>,
    pub exponents: Vec<String>,
    /// `residual[j][l] = |∫Θ_j e^{−μ_l t} − δ_jl|`.
    pub residual: Vec<Vec<f64>>,
    pub mass_fraction: Vec<f64>,
    pub l2_norms: Vec<f64>,
    pub max_residual: f64,
    pub min_mass_fraction: f64,
}

/// Inverts `Ψ` for every element node and measures biorthogonality against
/// every exponent node.
pub fn pw_family(
    setup: &PsiSetup,
    q: Quadrature,
    elements: &[ef::Node],
    exponents: &[ef::Node],
) -> Result<(PwReport, Vec<PwTheta>)> {
    let grid = PwGrid::new(setup, q)?;
    let t = setup.t;
    let mut thetas = Vec::new();
    let mut residual = Vec::new();
    for &el in elements {
        let psi = grid.psi(setup, el)?;
        let th = theta_from_psi(&grid, &psi, t, &el.name());
        let row = par::map(exponents, |&ex| {
            let mu = setup.node_mu(ex);
            let v = pw_moment(&grid, &psi, mu, t);
            let d = if ex == el { 1.0 } else { 0.0 };
            (v - d).norm()
        });
        residual.push(row);
        thetas.push(th);
    }
    let max_residual = residual.iter().flatten().cloned().fold(0.0, f64::max);
    let mass: Vec<f64> = thetas.iter().map(|t| t.mass_fraction_inside).collect();
    let report = PwReport {
        t,
        quadrature: q,
        elements: elements.iter().map(|e| e.name()).collect(),
        exponents: exponents.iter().map(|e| e.name()).collect(),
        min_mass_fraction: mass.iter().cloned().fold(1.0, f64::min),
        mass_fraction: mass,
        l2_norms: thetas.iter().map(|t| t.l2_total).collect(),
        residual,
        max_residual,
    };
    Ok((report, thetas))
}

// ---------------------------------------------------------------------------
// Norm envelopes

/// `log₁₀‖Θ_j‖` for every element of the Gram family, from
/// `‖Θ_j‖² = C_jj = |h_j|²(E⁻¹)_jj`; only the condition bits are needed.
pub fn gram_log10_norms(fam: &ExponentFamily, tol: f64) -> Result<Vec<f64>> {
    let (sys, inv) = GramSystem::adaptive(fam, &PrecisionPolicy::terminal(tol))?;
    Ok((0..fam.len())
        .map(|j| (2.0 * sys.x.half[j].log2_abs() + inv.get(j, j).log2_abs()) * 0.5 * std::f64::consts::LOG10_2)
        .collect())
}

/// `ln` of the plus-branch envelope without its constant:
/// `|k|²·e^{−Tk²/2 − 2π|k|^{1/2} + 3(3+2√2)π|k|}`.
pub fn plus_envelope_ln(k: i64, t: f64) -> f64 {
    let a = k.unsigned_abs() as f64;
    2.0 * a.ln() - t * a * a / 2.0 - 2.0 * PI * a.sqrt() + 3.0 * (3.0 + 2.0 * 2f64.sqrt()) * PI * a
}

/// `ln` of the minus-branch envelope without `C` and the linear term:
/// `|k|⁵·e^{−Tk⁴/2 + (2√2+1)πk²}`.
pub fn minus_envelope_ln(k: i64, t: f64) -> f64 {
    let a = k.unsigned_abs() as f64;
    5.0 * a.ln() - t * a.powi(4) / 2.0 + (2.0 * 2f64.sqrt() + 1.0) * PI * a * a
}

#[derive(Debug, Clone, Serialize)]
pub struct NormRow {
    pub label: String,
    pub k: i64,
    pub log10_norm: f64,
    /// `log₁₀(‖Θ‖/envelope)` with the envelope's constant set to 1.
    pub log10_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormReport {
    pub t: f64,
    pub kc: i64,
    pub log10_theta0: f64,
    pub rows: Vec<NormRow>,
    /// Fitted `log₁₀ C` for the plus envelope (max ratio over rows).
    pub plus_log10_c: f64,
    /// Fitted coefficient `c` of the `cπ|k|` term in the minus envelope.
    pub minus_fitted_c: f64,
    pub minus_log10_c: f64,
    /// Least-squares slope of `ln‖Θ_k^−‖` against `k⁴` over `2 ≤ |k| ≤ 4`.
    pub minus_slope: f64,
    pub minus_slope_rel_err: f64,
    pub envelopes_finite: bool,
    pub minus_slope_ok: bool,
}

fn lstsq_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Gram norms over `{0} ∪ {μ_k^±: |k| ≤ K_c}` against the two branch
/// envelopes, with constants fitted.
pub fn norm_report(t: f64, kc: i64) -> Result<NormReport> {
    let fam = ExponentFamily::symmetric(kc, t)?;
    let norms = gram_log10_norms(&fam, 1e-10)?;
    let ln10 = std::f64::consts::LN_10;
    let mut rows = Vec::new();
    let mut minus_pts = Vec::new();
    let mut log10_theta0 = f64::NAN;
    for (l, &n) in fam.labels.iter().zip(&norms) {
        match *l {
            NodeLabel::Mode(k, b) => {
                let env = match b {
                    Branch::Plus => plus_envelope_ln(k, t),
                    Branch::Minus => minus_envelope_ln(k, t),
                };
                if b == Branch::Minus {
                    minus_pts.push((k, n * ln10));
                }
                rows.push(NormRow { label: l.name(), k, log10_norm: n, log10_ratio: n - env / ln10 });
            }
            _ => log10_theta0 = n,
        }
    }
    let plus_log10_c = rows.iter().filter(|r| r.label.ends_with('+')).map(|r| r.log10_ratio).fold(f64::NEG_INFINITY, f64::max);
    // ln‖Θ⁻‖ − ln env = ln C + cπ|k|
    let xs: Vec<f64> = minus_pts.iter().map(|(k, _)| PI * k.unsigned_abs() as f64).collect();
    let ys: Vec<f64> = minus_pts.iter().map(|(k, v)| v - minus_envelope_ln(*k, t)).collect();
    let (c_fit, _) = if xs.len() >= 2 { lstsq_line(&xs, &ys) } else { (0.0, 0.0) };
    let minus_ln_c = xs.iter().zip(&ys).map(|(x, y)| y - c_fit * x).fold(f64::NEG_INFINITY, f64::max);
    let sel: Vec<&(i64, f64)> = minus_pts.iter().filter(|(k, _)| (2..=4).contains(&k.abs())).collect();
    let (slope, _) = if sel.len() >= 2 {
        lstsq_line(&sel.iter().map(|(k, _)| (*k as f64).powi(4)).collect::<Vec<_>>(), &sel.iter().map(|(_, v)| *v).collect::<Vec<_>>())
    } else {
        (f64::NAN, 0.0)
    };
    let rel = (slope + t / 2.0).abs() / (t / 2.0);
    Ok(NormReport {
        t,
        kc,
        log10_theta0,
        envelopes_finite: plus_log10_c.is_finite() && minus_ln_c.is_finite() && c_fit.is_finite() && log10_theta0.is_finite(),
        rows,
        plus_log10_c,
        minus_fitted_c: c_fit,
        minus_log10_c: minus_ln_c / ln10,
        minus_slope: slope,
        minus_slope_rel_err: rel,
        minus_slope_ok: rel <= 0.15,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub kc: i64,
    pub ts: Vec<f64>,
    pub labels: Vec<String>,
    /// `log10_norms[i][j]`: element `j` at `T = ts[i]`.
    pub log10_norms: Vec<Vec<f64>>,
    pub monotone: bool,
}

/// Checks that every Gram norm is non-increasing in `T` (a larger window
/// admits every function of a smaller one).
pub fn t_monotonicity(kc: i64, ts: &[f64]) -> Result<MonotonicityReport> {
    let mut ts = ts.to_vec();
    ts.sort_by(|a, b| a.total_cmp(b));
    let fams: Vec<ExponentFamily> = ts.iter().map(|&t| ExponentFamily::symmetric(kc, t)).collect::<Result<_>>()?;
    let log10_norms: Vec<Vec<f64>> = fams.iter().map(|f| gram_log10_norms(f, 1e-10)).collect::<Result<_>>()?;
    let monotone = log10_norms.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| *b <= *a + 1e-12));
    Ok(MonotonicityReport { kc, labels: fams[0].labels.iter().map(|l| l.name()).collect(), ts, log10_norms, monotone })
}

#[derive(Debug, Clone, Serialize)]
pub struct Theta0Stability {
    pub t: f64,
    pub kcs: Vec<i64>,
    pub norms: Vec<f64>,
    pub max_over_min: f64,
    /// `‖Θ₀‖` at consecutive `K_c` divided by its predecessor (≥ 1: the
    /// exponent sets are nested).
    pub growth_ratios: Vec<f64>,
    /// Growth ratios strictly decreasing, as for a convergent sequence.
    pub decelerating: bool,
}

pub fn theta0_stability(t: f64, kcs: &[i64]) -> Result<Theta0Stability> {
    let norms: Vec<f64> = kcs
        .iter()
        .map(|&kc| gram_log10_norms(&ExponentFamily::symmetric(kc, t)?, 1e-10).map(|v| 10f64.powf(v[0])))
        .collect::<Result<_>>()?;
    let mx = norms.iter().cloned().fold(0.0, f64::max);
    let mn = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let growth_ratios: Vec<f64> = norms.windows(2).map(|w| w[1] / w[0]).collect();
    let decelerating = growth_ratios.windows(2).all(|w| w[1] < w[0]);
    Ok(Theta0Stability { t, kcs: kcs.to_vec(), norms, max_over_min: mx / mn, growth_ratios, decelerating })
}

/// `z = m·2^e` with `|m| ∈ [0.5, 1)`: lossless to f64 for any MP magnitude.
fn scaled(z: &Cx) -> [f64; 3] {
    let e = z.log2_abs();
    if !e.is_finite() {
        return [0.0, 0.0, 0.0];
    }
    let e = e.floor() + 1.0;
    let p = 64;
    let w = z.mul_real(&bf(2f64.powf(-e.clamp(-1000.0, 1000.0)), p), p);
    let rest = e - e.clamp(-1000.0, 1000.0);
    let w = if rest != 0.0 { w.mul_real(&bf(2f64.powf(-rest), p), p) } else { w };
    let c = w.to_c64();
    [c.re, c.im, e]
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyFile {
    pub t: f64,
    pub method: String,
    pub labels: Vec<String>,
    pub exponents: Vec<C64>,
    pub log10_cond: Option<f64>,
    pub log10_l2_norms: Vec<f64>,
    /// Gram: `coefficients[j][l] = [re, im, e]` meaning `(re + i·im)·2^e`, with
    /// `Θ_j(t) = Σ_l C_lj e^{−conj(μ_l) t}`.
    pub coefficients: Option<Vec<Vec<[f64; 3]>>>,
    /// Paley–Wiener: `samples[j] = [[t, re, im], ...]` on `[−T, T]`.
    pub samples: Option<Vec<Vec<[f64; 3]>>>,
}

impl GramFamily {
    pub fn to_file(&self) -> FamilyFile {
        let n = self.sys.fam.len();
        let p = self.sys.p;
        FamilyFile {
            t: self.report.t,
            method: "gram".into(),
            labels: self.report.labels.clone(),
            exponents: self.report.exponents.clone(),
            log10_cond: Some(self.report.log10_cond_equilibrated),
            log10_l2_norms: self.report.log10_l2_norms.clone(),
            coefficients: Some((0..n).map(|j| (0..n).map(|l| scaled(&self.coefficient(l, j, p))).collect()).collect()),
            samples: None,
        }
    }
}

pub fn pw_family_file(report: &PwReport, thetas: &[PwTheta], stride: usize) -> FamilyFile {
    let t = report.t;
    FamilyFile {
        t,
        method: "paley_wiener".into(),
        labels: report.elements.clone(),
        exponents: vec![],
        log10_cond: None,
        log10_l2_norms: report.l2_norms.iter().map(|x| x.log10()).collect(),
        coefficients: None,
        samples: Some(
            thetas
                .iter()
                .map(|th| {
                    th.t.iter()
                        .zip(&th.theta)
                        .filter(|(x, _)| x.abs() <= t)
                        .step_by(stride.max(1))
                        .map(|(x, v)| [*x, v.re, v.im])
                        .collect()
                })
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_zero_exponent() {
        let fam = ExponentFamily::custom(3.0, &[C64::new(0.0, 0.0)]).unwrap();
        let g = gram_biorthogonal(&fam, &PrecisionPolicy::default()).unwrap();
        assert!((g.eval(0, 0.3) - C64::new(1.0 / 3.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn two_exponents_by_hand() {
        let fam = ExponentFamily::custom(2.0, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]).unwrap();
        let x = ExpTable::new(&fam, 256).unwrap();
        let b = window_gram(&x).to_c64();
        let e1 = std::f64::consts::E;
        assert!((b[0][0].re - 2.0).abs() < 1e-15);
        assert!((b[0][1].re - (e1 - 1.0 / e1)).abs() < 1e-14);
        assert!((b[1][1].re - (e1 * e1 - 1.0 / (e1 * e1)) / 2.0).abs() < 1e-14);
        let g = gram_biorthogonal(&fam, &PrecisionPolicy::default()).unwrap();
        let c0 = g.coefficient(0, 0, 256).to_c64();
        let c1 = g.coefficient(1, 0, 256).to_c64();
        assert!((c0.re - 2.09726).abs() < 1e-5 && (c1.re + 1.35914).abs() < 1e-5);
        assert!(g.report.max_residual < 1e-30);
        let f = g.to_file();
        let c = f.coefficients.unwrap()[0][0];
        assert!((c[0] * c[2].exp2() - 2.09726).abs() < 1e-5);
    }

    #[test]
    fn norm_envelopes_and_monotonicity() {
        let r = norm_report(1.0, 6).unwrap();
        assert!(r.envelopes_finite, "{r:?}");
        assert!(r.minus_slope_ok, "slope {} vs {}", r.minus_slope, -0.5);
        let m = t_monotonicity(3, &[0.5, 1.0, 2.0]).unwrap();
        assert!(m.monotone, "{m:?}");
        let s = theta0_stability(2.0 * PI, &[2, 4, 6, 8]).unwrap();
        assert!(s.max_over_min < 10.0 && s.decelerating, "{s:?}");
        assert!(theta0_stability(1.0, &[2, 4, 6, 8]).unwrap().decelerating);
    }
}

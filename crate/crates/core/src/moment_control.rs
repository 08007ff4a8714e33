//! Moment problems for the four control placements, their solution over the
//! Gram family, and closed-form residual checks.
//!
//! With modal forcing `F_k(t) = β_k·g(t)` and adjoint eigenvectors
//! `(1, θ_k^±)`, null controllability of mode `k` along `μ = μ_k^±` reads
//!
//! `G·∫₀ᵀ e^{μ(T−s)} g(s) ds = −e^{μT}·2π(û₀ + θ̄ v̂₀)`, `G = 2π(β_u + θ̄ β_v)`.
//!
//! The control is sought as `g(s) = Σ_m d_m e^{μ̄_m (T−s)}`, which turns the
//! enforced equations into the end-normalized Gram system `E d = r`.

use crate::biortho::{self, ExponentFamily, GramSystem, NodeLabel, PrecisionPolicy, PrecisionTarget};
use crate::fourier_space::StatePair;
use crate::mp::{self, bf, Cx};
use crate::spectrum::{self, Branch};
use crate::{par, Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    InteriorU,
    InteriorV,
    BoundaryU,
    BoundaryV,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [ScenarioKind::InteriorU, ScenarioKind::InteriorV, ScenarioKind::BoundaryU, ScenarioKind::BoundaryV];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::InteriorU => "interior_u",
            ScenarioKind::InteriorV => "interior_v",
            ScenarioKind::BoundaryU => "boundary_u",
            ScenarioKind::BoundaryV => "boundary_v",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown scenario {s:?} (interior_u|interior_v|boundary_u|boundary_v)")))
    }

    /// Name of the theorem whose hypotheses gate this placement.
    pub fn theorem(self) -> &'static str {
        match self {
            ScenarioKind::InteriorU => "thm1",
            ScenarioKind::InteriorV => "thm1a",
            ScenarioKind::BoundaryU => "thm2",
            ScenarioKind::BoundaryV => "thm2a",
        }
    }

    pub fn is_interior(self) -> bool {
        matches!(self, ScenarioKind::InteriorU | ScenarioKind::InteriorV)
    }

    /// Required vanishing means `(⟨u₀,1⟩, ⟨v₀,1⟩)`.
    pub fn mean_constraints(self) -> (bool, bool) {
        match self {
            ScenarioKind::InteriorU => (false, true),
            ScenarioKind::InteriorV => (true, false),
            ScenarioKind::BoundaryU => (true, false),
            ScenarioKind::BoundaryV => (true, true),
        }
    }
}

/// Integer quadratic `aX² + bX + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadPoly {
    pub a: i64,
    pub b: i64,
    pub c: i64,
}

impl QuadPoly {
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<i64> = s
            .split(',')
            .map(|x| x.trim().parse::<i64>().map_err(|_| Error::Usage(format!("bad polynomial coefficient {x:?}"))))
            .collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(Error::Usage(format!("expected a,b,c, got {s:?}")));
        }
        Ok(QuadPoly { a: v[0], b: v[1], c: v[2] })
    }

    /// The irrational root in (0, 1); rejects reducible polynomials.
    pub fn root_in_unit(&self) -> Result<f64> {
        let (a, b, c) = (self.a as i128, self.b as i128, self.c as i128);
        if a == 0 {
            return Err(Error::Usage("leading coefficient must be nonzero".into()));
        }
        let disc = b * b - 4 * a * c;
        if disc < 0 {
            return Err(Error::Usage("polynomial has no real roots".into()));
        }
        let s = (disc as f64).sqrt().round() as i128;
        if (s - 1..=s + 1).any(|r| r >= 0 && r * r == disc) {
            return Err(Error::Usage(format!("{}X²+{}X+{} is reducible over ℚ: roots are rational", self.a, self.b, self.c)));
        }
        let sd = (disc as f64).sqrt();
        let (af, bf_) = (self.a as f64, self.b as f64);
        // cancellation-free pair of roots
        let q = -0.5 * (bf_ + if bf_ >= 0.0 { sd } else { -sd });
        let roots = [q / af, self.c as f64 / q];
        roots
            .into_iter()
            .find(|r| *r > 0.0 && *r < 1.0)
            .ok_or_else(|| Error::Usage("no root in (0, 1)".into()))
    }
}

/// Interior control profile: indicator of `[α, α + ρπ]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Profile {
    pub alpha: f64,
    pub rho: f64,
    pub poly: QuadPoly,
}

impl Profile {
    pub fn new(alpha: f64, poly: QuadPoly) -> Result<Self> {
        let rho = poly.root_in_unit()?;
        if !(alpha > 0.0 && alpha + rho * PI < 2.0 * PI) {
            return Err(Error::Usage(format!("[α, α+ρπ] = [{alpha}, {}] must lie in (0, 2π)", alpha + rho * PI)));
        }
        Ok(Profile { alpha, rho, poly })
    }

    pub fn default_profile() -> Self {
        Profile::new(1.0, QuadPoly { a: 1, b: 2, c: -1 }).expect("√2−1 profile")
    }

    pub fn fk(&self, k: i64) -> C64 {
        profile_fk(self.alpha, self.rho, k)
    }
}

/// `f_k = ∫ χ_[α,α+ρπ] e^{−ikx} dx = e^{−ikα}(1 − e^{−ikρπ})/(ik)`, `f₀ = ρπ`,
/// evaluated as `e^{−ik(α+ρπ/2)}·2 sin(kρπ/2)/k`.
pub fn profile_fk(alpha: f64, rho: f64, k: i64) -> C64 {
    if k == 0 {
        return C64::new(rho * PI, 0.0);
    }
    let kf = k as f64;
    C64::from_polar(2.0 * (kf * rho * PI / 2.0).sin() / kf, -kf * (alpha + rho * PI / 2.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct LiouvilleReport {
    pub rho: f64,
    pub poly: QuadPoly,
    pub analytic_c: f64,
    pub q_max: u64,
    /// `min_q q·dist(qρ, ℤ)` (= `q²|ρ − p/q|` at the best `p`).
    pub empirical_min: f64,
    pub argmin_q: u64,
    /// `min_q q²·dist(qρ, ℤ)`, the literal weaker quantity.
    pub empirical_min_q2: f64,
    pub holds: bool,
}

/// `C = 1/(sup_{|x−ρ|≤1}|2ax+b| + 1)`, so `|ρ − p/q| ≥ C/q²` for all `p/q`.
pub fn liouville_constant(poly: QuadPoly) -> Result<f64> {
    let rho = poly.root_in_unit()?;
    let f = |x: f64| (2.0 * poly.a as f64 * x + poly.b as f64).abs();
    Ok(1.0 / (f(rho - 1.0).max(f(rho + 1.0)) + 1.0))
}

pub fn liouville_scan(poly: QuadPoly, q_max: u64) -> Result<LiouvilleReport> {
    let rho = poly.root_in_unit()?;
    let c = liouville_constant(poly)?;
    let mut best = (f64::INFINITY, 0u64);
    let mut best2 = f64::INFINITY;
    for q in 1..=q_max {
        let x = q as f64 * rho;
        let d = (x - x.round()).abs();
        let v = q as f64 * d;
        if v < best.0 {
            best = (v, q);
        }
        best2 = best2.min(q as f64 * v);
    }
    Ok(LiouvilleReport { rho, poly, analytic_c: c, q_max, empirical_min: best.0, argmin_q: best.1, empirical_min_q2: best2, holds: best.0 >= c && best.0 > 0.0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileDecay {
    pub k_max: i64,
    pub min_k2_fk: f64,
    pub argmin_k: i64,
    /// `2C`: from `|sin(kρπ/2)| ≥ dist(kρ, ℤ) ≥ C/|k|`.
    pub lower_2c: f64,
    pub reference_8c_over_pi: f64,
    pub holds: bool,
}

pub fn profile_decay_scan(profile: &Profile, k_max: i64) -> Result<ProfileDecay> {
    let c = liouville_constant(profile.poly)?;
    let mut best = (f64::INFINITY, 0);
    for k in (1..=k_max).flat_map(|k| [k, -k]) {
        let v = (k * k) as f64 * profile.fk(k).norm();
        if v < best.0 {
            best = (v, k);
        }
    }
    Ok(ProfileDecay {
        k_max,
        min_k2_fk: best.0,
        argmin_k: best.1,
        lower_2c: 2.0 * c,
        reference_8c_over_pi: 8.0 * c / PI,
        holds: best.0 > 0.0 && best.0 >= 2.0 * c * (1.0 - 1e-9),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ControlScenario {
    pub kind: ScenarioKind,
    pub profile: Option<Profile>,
}

impl ControlScenario {
    pub fn new(kind: ScenarioKind, profile: Option<Profile>) -> Result<Self> {
        if kind.is_interior() && profile.is_none() {
            return Err(Error::Usage(format!("{} needs a control profile", kind.as_str())));
        }
        Ok(ControlScenario { kind, profile: if kind.is_interior() { profile } else { None } })
    }

    fn fk(&self, k: i64) -> C64 {
        self.profile.map(|p| p.fk(k)).unwrap_or(C64::new(0.0, 0.0))
    }

    /// Modal forcing `β_k`: `d/dt(û_k, v̂_k) = M_k(û_k, v̂_k) + β_k·g(t)`.
    pub fn forcing(&self, k: i64) -> [C64; 2] {
        let kf = k as f64;
        let i = C64::new(0.0, 1.0);
        let s = 1.0 / (2.0 * PI);
        match self.kind {
            ScenarioKind::InteriorU => [self.fk(k) * s, C64::new(0.0, 0.0)],
            ScenarioKind::InteriorV => [C64::new(0.0, 0.0), self.fk(k) * s],
            ScenarioKind::BoundaryU => [-(i * kf.powi(3) + kf * kf - i * kf) * s, C64::new(-s, 0.0)],
            ScenarioKind::BoundaryV => [C64::new(-s, 0.0), (1.0 - i * kf) * s],
        }
    }

    /// Weight `W` multiplying the moment integral in the symmetric-window form.
    pub fn weight(&self, k: i64, theta_bar: C64) -> C64 {
        match self.kind {
            ScenarioKind::InteriorU => self.fk(k),
            ScenarioKind::InteriorV if k == 0 => self.fk(0),
            ScenarioKind::InteriorV => theta_bar * self.fk(k),
            _ => C64::new(1.0, 0.0),
        }
    }
}

/// `θ = (−k⁴ − ik³ + k² − λ)/(ik)` in MP, `λ = conj(μ)`.
pub fn theta_mp(k: i64, mu: &Cx, p: usize) -> Cx {
    let kf = k as f64;
    let a = Cx::from_c64(C64::new(-kf.powi(4) + kf * kf, -kf.powi(3)), p);
    a.sub(&mu.conj(), p).div(&Cx::from_c64(C64::new(0.0, kf), p), p)
}

/// Gain `G = 2π(β_u + θ̄ β_v)` written out per scenario.
pub fn gain_mp(sc: &ControlScenario, k: i64, theta: &Cx, p: usize) -> Cx {
    let kf = k as f64;
    let tb = theta.conj();
    let fk = Cx::from_c64(sc.fk(k), p);
    match sc.kind {
        ScenarioKind::InteriorU => fk,
        ScenarioKind::InteriorV => tb.mul(&fk, p),
        ScenarioKind::BoundaryU => Cx::from_c64(C64::new(kf * kf, kf.powi(3) - kf), p).add(&tb, p).neg(),
        ScenarioKind::BoundaryV => Cx::from_c64(C64::new(1.0, -kf), p).mul(&tb, p).sub(&Cx::one(p), p),
    }
}

/// Mode-0 direction `e` carried by the zero exponent, and its gain `2π β₀·e`.
fn zero_mode_direction(sc: &ControlScenario) -> ([f64; 2], C64) {
    match sc.kind {
        ScenarioKind::InteriorU => ([1.0, 0.0], sc.fk(0)),
        ScenarioKind::InteriorV => ([0.0, 1.0], sc.fk(0)),
        ScenarioKind::BoundaryU => ([0.0, 1.0], C64::new(-1.0, 0.0)),
        ScenarioKind::BoundaryV => ([1.0, 0.0], C64::new(-1.0, 0.0)),
    }
}

/// Rejects initial data violating the placement's mean hypotheses.
pub fn check_compatibility(kind: ScenarioKind, init: &StatePair, tol: f64) -> Result<()> {
    let (need_u, need_v) = kind.mean_constraints();
    let scale = 1.0 + init.dual_norm();
    let mu = init.u.mean().norm();
    let mv = init.v.mean().norm();
    let bad_u = need_u && mu > tol * scale;
    let bad_v = need_v && mv > tol * scale;
    if bad_u || bad_v {
        let what = match (bad_u, bad_v) {
            (true, true) => format!("⟨u₀,1⟩ = 0 and ⟨v₀,1⟩ = 0 (got {mu:.3e}, {mv:.3e})"),
            (true, false) => format!("⟨u₀,1⟩ = 0 (got {mu:.3e})"),
            _ => format!("⟨v₀,1⟩ = 0 (got {mv:.3e})"),
        };
        return Err(Error::Constraint(format!(
            "compatibility condition of theorem {} violated for {}: requires {what}",
            kind.theorem(),
            kind.as_str()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentEntry {
    pub label: String,
    pub k: i64,
    pub mu: C64,
    pub gain: C64,
    pub weight: C64,
    /// Symmetric-window target `γ` (`W·∫e^{−μt}g(t+T/2) = −e^{μT/2}γ`).
    pub gamma: C64,
}

#[derive(Debug, Clone)]
pub struct MomentProblem {
    pub scenario: ControlScenario,
    pub t: f64,
    pub kc: i64,
    pub init: StatePair,
    pub family: ExponentFamily,
}

impl MomentProblem {
    pub fn new(scenario: ControlScenario, t: f64, kc: i64, init: StatePair) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::Usage(format!("T must be positive, got {t}")));
        }
        if kc < 0 {
            return Err(Error::Usage(format!("K_c must be ≥ 0, got {kc}")));
        }
        check_compatibility(scenario.kind, &init, 1e-12)?;
        let family = ExponentFamily::symmetric(kc, t)?;
        Ok(MomentProblem { scenario, t, kc, init, family })
    }

    /// `2π(û₀ + θ̄v̂₀)` for a node, the pairing of the data with the adjoint
    /// eigenvector.
    fn data_pairing(&self, label: NodeLabel, theta: &Cx, p: usize) -> Cx {
        match label {
            NodeLabel::Mode(k, _) => {
                let m = self.init.mode(k);
                Cx::from_c64(m[0], p).add(&theta.conj().mul(&Cx::from_c64(m[1], p), p), p).scale(2.0 * PI, p)
            }
            _ => {
                let (e, _) = zero_mode_direction(&self.scenario);
                let m = self.init.mode(0);
                Cx::from_c64((m[0] * e[0] + m[1] * e[1]) * 2.0 * PI, p)
            }
        }
    }

    /// Gains and data pairings for every exponent at precision `p`.
    fn gains_targets(&self, mu: &[Cx], p: usize) -> Result<Vec<(Cx, Cx, Cx)>> {
        self.family
            .labels
            .iter()
            .zip(mu)
            .map(|(&l, m)| {
                let (theta, gain) = match l {
                    NodeLabel::Mode(k, _) => {
                        let th = theta_mp(k, m, p);
                        let g = gain_mp(&self.scenario, k, &th, p);
                        (th, g)
                    }
                    _ => (Cx::zero(p), Cx::from_c64(zero_mode_direction(&self.scenario).1, p)),
                };
                if gain.log2_abs() < (1e-12f64).log2() {
                    return Err(Error::Numeric(format!("moment gain vanishes at node {} ({})", l.name(), self.scenario.kind.as_str())));
                }
                let data = self.data_pairing(l, &theta, p);
                Ok((theta, gain, data))
            })
            .collect()
    }

    pub fn entries(&self) -> Result<Vec<MomentEntry>> {
        let p = 128;
        let mu = self.family.mu_mp(p)?;
        let gt = self.gains_targets(&mu, p)?;
        Ok(self
            .family
            .labels
            .iter()
            .zip(gt)
            .zip(&self.family.mu)
            .map(|((l, (th, g, d)), &m)| {
                let w = self.scenario.weight(l.k(), th.conj().to_c64());
                let gamma = if self.scenario.kind == ScenarioKind::BoundaryV && *l == NodeLabel::Zero {
                    C64::new(0.0, 0.0)
                } else {
                    d.to_c64() * w / g.to_c64()
                };
                MomentEntry { label: l.name(), k: l.k(), mu: m, gain: g.to_c64(), weight: w, gamma }
            })
            .collect())
    }
}

/// `g(s) = Σ_m c_m e^{κ_m (T−s)}` on `[0, T]`.
#[derive(Debug, Clone)]
pub struct ControlSignal {
    pub boundary: bool,
    pub t: f64,
    pub p: usize,
    pub exponents: Vec<Cx>,
    pub coeffs: Vec<Cx>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalFile {
    pub kind: String,
    pub scenario: Option<ScenarioKind>,
    pub t: f64,
    pub kc: Option<i64>,
    pub precision_bits: usize,
    /// Hex mantissa strings, `[re, im]`.
    pub exponents: Vec<[String; 2]>,
    pub coeffs: Vec<[String; 2]>,
    pub exponents_f64: Vec<[f64; 2]>,
    pub coeffs_f64: Vec<[f64; 2]>,
}

impl ControlSignal {
    pub fn zero(t: f64, boundary: bool) -> Self {
        ControlSignal { boundary, t, p: 128, exponents: vec![], coeffs: vec![] }
    }

    pub fn from_c64(t: f64, boundary: bool, terms: &[(C64, C64)]) -> Self {
        let p = 128;
        ControlSignal {
            boundary,
            t,
            p,
            exponents: terms.iter().map(|(k, _)| Cx::from_c64(*k, p)).collect(),
            coeffs: terms.iter().map(|(_, c)| Cx::from_c64(*c, p)).collect(),
        }
    }

    pub fn scaled(&self, s: C64) -> Self {
        let mut o = self.clone();
        let sm = Cx::from_c64(s, self.p);
        o.coeffs = o.coeffs.iter().map(|c| c.mul(&sm, self.p)).collect();
        o
    }

    /// `log₂ Σ|c_m|`.
    pub fn log2_coeff_sum(&self) -> f64 {
        mp::log2_sum(self.coeffs.iter().map(|c| c.log2_abs()))
    }

    /// Precision sufficient for pointwise evaluation to f64 accuracy when
    /// every `|e^{κ(T−s)}| ≤ 1`.
    pub fn eval_precision(&self) -> usize {
        let extra = self.log2_coeff_sum().max(0.0);
        (128 + extra.ceil() as usize).min(self.p.max(128))
    }

    pub fn eval(&self, s: f64) -> C64 {
        self.eval_many(&[s])[0]
    }

    pub fn eval_many(&self, ss: &[f64]) -> Vec<C64> {
        let q = self.eval_precision();
        par::map(ss, |&s| {
            let mut cc = mp::consts();
            let tau = bf(self.t - s, q);
            let mut acc = Cx::zero(q);
            for (k, c) in self.exponents.iter().zip(&self.coeffs) {
                let e = k.mul_real(&tau, q + 32).exp(q, &mut cc);
                acc = acc.add(&c.mul(&e, q), q);
            }
            acc.to_c64()
        })
    }

    pub fn samples(&self, n: usize) -> Vec<(f64, C64)> {
        let ts: Vec<f64> = (0..n).map(|i| self.t * i as f64 / (n - 1).max(1) as f64).collect();
        let v = self.eval_many(&ts);
        ts.into_iter().zip(v).collect()
    }

    /// `‖g‖_{L²(0,T)}` from the closed-form Gram of its exponentials.
    pub fn l2_norm(&self) -> f64 {
        let q = self.eval_precision() + 64;
        let t = bf(self.t, q);
        let mut cc = mp::consts();
        let e: Vec<Cx> = self.exponents.iter().map(|k| k.mul_real(&t, q + 32).exp(q, &mut cc)).collect();
        let mut acc = Cx::zero(q);
        for i in 0..self.coeffs.len() {
            for j in 0..self.coeffs.len() {
                let w = self.exponents[i].add(&self.exponents[j].conj(), q);
                let ew = e[i].mul(&e[j].conj(), q);
                let g = mp::expm1_over(&w, &ew, &t, q);
                acc = acc.add(&self.coeffs[i].mul(&self.coeffs[j].conj(), q).mul(&g, q), q);
            }
        }
        acc.to_c64().re.max(0.0).sqrt()
    }

    pub fn to_file(&self, scenario: Option<ScenarioKind>, kc: Option<i64>) -> Result<SignalFile> {
        let hex = |v: &[Cx]| -> Result<Vec<[String; 2]>> { v.iter().map(|z| z.format().map(|(a, b)| [a, b])).collect() };
        let f64s = |v: &[Cx]| v.iter().map(|z| z.to_c64()).map(|z| [z.re, z.im]).collect();
        Ok(SignalFile {
            kind: if self.boundary { "q_boundary".into() } else { "g_interior".into() },
            scenario,
            t: self.t,
            kc,
            precision_bits: self.p,
            exponents: hex(&self.exponents)?,
            coeffs: hex(&self.coeffs)?,
            exponents_f64: f64s(&self.exponents),
            coeffs_f64: f64s(&self.coeffs),
        })
    }

    pub fn from_file(f: &SignalFile) -> Result<Self> {
        let p = f.precision_bits.max(64);
        let parse = |v: &[[String; 2]]| -> Result<Vec<Cx>> { v.iter().map(|[a, b]| Cx::parse(a, b, p)).collect() };
        let exponents = parse(&f.exponents)?;
        let coeffs = parse(&f.coeffs)?;
        if exponents.len() != coeffs.len() {
            return Err(Error::Format("exponent/coefficient length mismatch".into()));
        }
        Ok(ControlSignal { boundary: f.kind == "q_boundary", t: f.t, p, exponents, coeffs })
    }

    pub fn write_json(&self, path: &Path, scenario: Option<ScenarioKind>, kc: Option<i64>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file(scenario, kc)?)? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<(Self, SignalFile)> {
        let f: SignalFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok((Self::from_file(&f)?, f))
    }

    pub fn write_csv(&self, path: &Path, n: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "re", "im"])?;
        for (t, v) in self.samples(n) {
            w.write_record([format!("{t:.17e}"), format!("{:.17e}", v.re), format!("{:.17e}", v.im)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct Synthesis {
    pub problem: MomentProblem,
    pub sys: GramSystem,
    pub gains: Vec<Cx>,
    pub pairings: Vec<Cx>,
    pub signal: ControlSignal,
    /// Which residual form the working precision was sized for.
    pub target: PrecisionTarget,
}

impl Synthesis {
    /// Coefficients `a_j` of `g(t) = Σ_j a_j Θ_j(t − T/2)` over the Gram
    /// biorthogonal family: `a_j = −e^{μ_j T/2}·γ_j/W_j`.
    pub fn theta_coefficients(&self) -> Vec<Cx> {
        let p = self.sys.p;
        (0..self.gains.len())
            .map(|j| {
                let is_bv_zero = self.problem.scenario.kind == ScenarioKind::BoundaryV && j == 0;
                if is_bv_zero {
                    return Cx::zero(p);
                }
                self.sys.x.half[j].mul(&self.pairings[j], p).div(&self.gains[j], p).neg()
            })
            .collect()
    }
}

/// Solves the enforced moment equations over `{0} ∪ {μ_k^±: |k| ≤ K_c}`.
pub fn synthesize(problem: MomentProblem, policy: &PrecisionPolicy) -> Result<Synthesis> {
    let boundary = !problem.scenario.kind.is_interior();
    if problem.init.dual_norm() == 0.0 {
        let sys = GramSystem::build(&problem.family, 128)?;
        let n = problem.family.len();
        return Ok(Synthesis {
            gains: vec![Cx::one(128); n],
            pairings: vec![Cx::zero(128); n],
            signal: ControlSignal::zero(problem.t, boundary),
            problem,
            sys,
            target: policy.target,
        });
    }
    let (sys, _) = GramSystem::adaptive(&problem.family, policy)?;
    let p = sys.p;
    let gt = problem.gains_targets(&sys.x.mu, p)?;
    let (gains, pairings): (Vec<Cx>, Vec<Cx>) = gt.into_iter().map(|(_, g, d)| (g, d)).unzip();
    let rhs: Vec<Cx> = (0..gains.len())
        .map(|l| {
            if problem.scenario.kind == ScenarioKind::BoundaryV && l == 0 {
                return Cx::zero(p);
            }
            sys.x.full[l].mul(&pairings[l], p).div(&gains[l], p).neg()
        })
        .collect();
    let d = sys.solve(&rhs);
    let signal = ControlSignal { boundary, t: problem.t, p, exponents: sys.x.mu.iter().map(|m| m.conj()).collect(), coeffs: d };
    Ok(Synthesis { problem, sys, gains, pairings, signal, target: policy.target })
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualRow {
    pub label: String,
    pub k: i64,
    pub enforced: bool,
    /// `|W·∫_{−T/2}^{T/2} e^{−μt} g(t+T/2) dt + e^{μT/2}γ|`.
    /// `None` when it exceeds the f64 range (unchecked window form).
    pub window: Option<f64>,
    pub log10_window: f64,
    /// The same residual scaled by `|e^{μT/2}|`, i.e. the terminal-time form.
    pub terminal: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub scenario: ScenarioKind,
    pub t: f64,
    pub kc: i64,
    pub k_report: i64,
    pub precision_bits: usize,
    pub log10_cond: f64,
    pub rows: Vec<ResidualRow>,
    /// Only when the window form was checked.
    pub max_enforced_window: Option<f64>,
    pub max_enforced_terminal: f64,
    pub max_leak_terminal: f64,
    /// `max |∫₀ᵀ e^{−μ(t−T/2)}g − ∫_{−T/2}^{T/2} e^{−μt}g(t+T/2)|`, relative;
    /// only evaluated when the window form is checked.
    pub shift_identity: Option<f64>,
    pub control_l2: f64,
    pub imag_fraction: f64,
}

/// Recomputes every enforced equation from the closed-form window Gram (at
/// raised precision) and every unenforced one up to `|k| ≤ k_report` in
/// terminal form.
pub fn moment_residuals(syn: &Synthesis, k_report: i64) -> Result<MomentReport> {
    let prob = &syn.problem;
    let fam = &prob.family;
    let n = fam.len();
    let t = prob.t;
    let sig = &syn.signal;
    let p = syn.sys.p;
    let window_form = syn.target == PrecisionTarget::Window;
    let raw_bits = if window_form { fam.raw_scale_bits().ceil() as usize } else { 0 };
    let pv = p + 128 + raw_bits;
    let xv = biortho::ExpTable::new(fam, pv)?;
    let tv = bf(t, pv);
    let entries = prob.entries()?;
    let d: Vec<Cx> = if sig.coeffs.is_empty() { vec![Cx::zero(pv); n] } else { sig.coeffs.clone() };
    let is_bv_zero = |l: usize| prob.scenario.kind == ScenarioKind::BoundaryV && l == 0;

    let enforced = par::map_range(n, |l| {
        let (theta, gain, data) = match fam.labels[l] {
            NodeLabel::Mode(k, _) => {
                let th = theta_mp(k, &xv.mu[l], pv);
                let g = gain_mp(&prob.scenario, k, &th, pv);
                let dp = prob.data_pairing(fam.labels[l], &th, pv);
                (th, g, dp)
            }
            lab => (Cx::zero(pv), Cx::from_c64(zero_mode_direction(&prob.scenario).1, pv), prob.data_pairing(lab, &Cx::zero(pv), pv)),
        };
        let w = Cx::from_c64(prob.scenario.weight(fam.labels[l].k(), theta.conj().to_c64()), pv);
        let data = if is_bv_zero(l) { Cx::zero(pv) } else { data };
        // end-normalized integral Σ_m E_lm d_m = ∫₀ᵀ e^{μ(T−s)} g(s) ds
        let mut s_end = Cx::zero(pv);
        for m in 0..n {
            let wlm = xv.mu[l].add(&xv.mu[m].conj(), pv);
            let e = mp::expm1_over(&wlm, &xv.full[l].mul(&xv.full[m].conj(), pv), &tv, pv);
            s_end = s_end.add(&e.mul(&d[m], pv), pv);
        }
        if !window_form {
            let res = gain.mul(&s_end, pv).add(&xv.full[l].mul(&data, pv), pv);
            let lt = res.log2_abs() + w.log2_abs() - gain.log2_abs();
            return (lt - xv.half[l].log2_abs(), lt, None);
        }
        // window integral Σ_m B_lm d_m conj(h_m)
        let mut s = Cx::zero(pv);
        for m in 0..n {
            let wlm = xv.mu[l].add(&xv.mu[m].conj(), pv);
            let b = biortho::window_entry(&wlm, &xv.half[l].mul(&xv.half[m].conj(), pv), &tv, pv);
            s = s.add(&b.mul(&d[m], pv).mul(&xv.half[m].conj(), pv), pv);
        }
        let gamma = data.mul(&w, pv).div(&gain, pv);
        let res = w.mul(&s, pv).add(&xv.half[l].mul(&gamma, pv), pv);
        // unshifted integral ∫₀ᵀ e^{−μ(t−T/2)} g = e^{−μT/2} Σ_m E_lm d_m
        let unshifted = s_end.div(&xv.half[l], pv);
        let shift = unshifted.sub(&s, pv).log2_abs() - s.log2_abs().max(unshifted.log2_abs());
        (res.log2_abs(), res.log2_abs() + xv.half[l].log2_abs(), Some(shift))
    });
    let mut rows: Vec<ResidualRow> = enforced
        .iter()
        .enumerate()
        .map(|(l, &(lw, lt, _))| ResidualRow {
            label: entries[l].label.clone(),
            k: entries[l].k,
            enforced: true,
            window: Some(lw.exp2()).filter(|w| w.is_finite()),
            log10_window: lw * std::f64::consts::LOG10_2,
            terminal: lt.exp2(),
        })
        .collect();
    let shift_identity = if window_form { Some(enforced.iter().filter_map(|e| e.2).map(f64::exp2).fold(0.0, f64::max)) } else { None };

    // unenforced modes, terminal form from the end-normalized integrals
    let extra: Vec<(i64, Branch)> = ((prob.kc + 1)..=k_report).flat_map(|k| [k, -k]).flat_map(|k| [(k, Branch::Plus), (k, Branch::Minus)]).collect();
    let leak = par::map(&extra, |&(k, b)| -> Result<ResidualRow> {
        let mut cc = mp::consts();
        let mu = spectrum::exponent_mp(k, b, p)?;
        let tp = bf(t, p);
        let ef = mu.mul_real(&tp, p + 64).exp(p, &mut cc);
        let mut s_end = Cx::zero(p);
        for m in 0..n {
            let w = mu.add(&syn.sys.x.mu[m].conj(), p);
            let e = mp::expm1_over(&w, &ef.mul(&syn.sys.x.full[m].conj(), p), &tp, p);
            s_end = s_end.add(&e.mul(&d[m], p), p);
        }
        let th = theta_mp(k, &mu, p);
        let g = gain_mp(&prob.scenario, k, &th, p);
        let data = prob.data_pairing(NodeLabel::Mode(k, b), &th, p);
        let res = g.mul(&s_end, p).add(&ef.mul(&data, p), p);
        let w = prob.scenario.weight(k, th.conj().to_c64()).norm().log2();
        // terminal form G·I + e^{μT}·pairing, mapped to the W-normalization
        let lt = res.log2_abs() + w - g.log2_abs();
        let half = mu.re.clone();
        let lw = lt - mp::to_f64(&half) * t / 2.0 / std::f64::consts::LN_2;
        Ok(ResidualRow {
            label: NodeLabel::Mode(k, b).name(),
            k,
            enforced: false,
            window: Some(lw.exp2()).filter(|w| w.is_finite()),
            log10_window: lw * std::f64::consts::LOG10_2,
            terminal: lt.exp2(),
        })
    });
    for r in leak {
        rows.push(r?);
    }
    let max_of = |f: &dyn Fn(&ResidualRow) -> Option<f64>| rows.iter().filter_map(f).fold(0.0, f64::max);
    let samples = sig.samples(257);
    let gmax = samples.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max);
    let imax = samples.iter().map(|(_, v)| v.im.abs()).fold(0.0, f64::max);
    Ok(MomentReport {
        scenario: prob.scenario.kind,
        t,
        kc: prob.kc,
        k_report,
        precision_bits: p,
        log10_cond: syn.sys.log2_cond * std::f64::consts::LOG10_2,
        max_enforced_window: window_form.then(|| max_of(&|r| if r.enforced { r.window } else { None })),
        max_enforced_terminal: max_of(&|r| r.enforced.then_some(r.terminal)),
        max_leak_terminal: max_of(&|r| (!r.enforced).then_some(r.terminal)),
        rows,
        shift_identity,
        control_l2: sig.l2_norm(),
        imag_fraction: if gmax > 0.0 { imax / gmax } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier_space::PeriodicField;

    fn rho() -> f64 {
        2f64.sqrt() - 1.0
    }

    #[test]
    fn profile_values() {
        assert!((profile_fk(1.0, rho(), 0).re - 1.30129).abs() < 1e-5);
        assert!((profile_fk(1.0, rho(), 1).norm() - 1.2113997).abs() < 1e-6);
        assert!((profile_fk(1.0, rho(), 2).norm() - 0.9639025).abs() < 1e-6);
        // direct closed form
        let (a, r, k) = (1.0, rho(), 3i64);
        let kf = k as f64;
        let i = C64::new(0.0, 1.0);
        let direct = (-i * kf * a).exp() * (1.0 - (-i * kf * r * PI).exp()) / (i * kf);
        assert!((direct - profile_fk(a, r, k)).norm() < 1e-15);
    }

    #[test]
    fn quadratic_irrationals() {
        let p = QuadPoly::parse("1,2,-1").unwrap();
        assert!((p.root_in_unit().unwrap() - rho()).abs() < 1e-15);
        assert!((liouville_constant(p).unwrap() - 1.0 / (2.0 * 2f64.sqrt() + 3.0)).abs() < 1e-15);
        // 4X² − 1 has rational roots ±1/2
        assert!(matches!(QuadPoly::parse("4,0,-1").unwrap().root_in_unit(), Err(Error::Usage(_))));
        assert!(QuadPoly::parse("1,2").is_err());
    }

    #[test]
    fn gamma_examples() {
        let mut init = StatePair::zeros(3);
        init.u = PeriodicField::mode(3, 1, C64::new(1.0, 0.0));
        let sc = ControlScenario::new(ScenarioKind::InteriorU, Some(Profile::default_profile())).unwrap();
        let pr = MomentProblem::new(sc, 1.0, 2, init.clone()).unwrap();
        let e = pr.entries().unwrap();
        let g = |lab: &str| e.iter().find(|x| x.label == lab).unwrap().gamma;
        assert!((g("1+") - C64::new(2.0 * PI, 0.0)).norm() < 1e-12);
        assert!(g("2+").norm() < 1e-15);
        let sc = ControlScenario::new(ScenarioKind::BoundaryU, None).unwrap();
        let pr = MomentProblem::new(sc, 1.0, 2, init).unwrap();
        let e = pr.entries().unwrap();
        let g1 = e.iter().find(|x| x.label == "1+").unwrap().gamma;
        let (den, _) = spectrum::denominators(1, Branch::Plus).unwrap();
        assert!((g1.norm() - 2.0 * PI / den.norm()).abs() < 1e-12);
    }

    #[test]
    fn compatibility_gates() {
        let mut init = StatePair::zeros(2);
        init.v = PeriodicField::mode(2, 0, C64::new(0.5, 0.0));
        let sc = ControlScenario::new(ScenarioKind::InteriorU, Some(Profile::default_profile())).unwrap();
        let err = MomentProblem::new(sc, 1.0, 2, init.clone()).unwrap_err();
        assert!(matches!(&err, Error::Constraint(m) if m.contains("thm1 ")), "{err}");
        init.u = PeriodicField::mode(2, 0, C64::new(0.5, 0.0));
        let sc = ControlScenario::new(ScenarioKind::BoundaryV, None).unwrap();
        let err = MomentProblem::new(sc, 1.0, 2, init).unwrap_err();
        assert!(matches!(&err, Error::Constraint(m) if m.contains("thm2a")), "{err}");
    }

    #[test]
    fn small_synthesis() {
        let mut init = StatePair::zeros(1);
        init.u = PeriodicField::from_pairs(1, &[(1, C64::new(1.0, 0.0)), (-1, C64::new(1.0, 0.0))]).unwrap();
        let sc = ControlScenario::new(ScenarioKind::InteriorU, Some(Profile::default_profile())).unwrap();
        let pr = MomentProblem::new(sc, 1.0, 2, init).unwrap();
        let syn = synthesize(pr, &PrecisionPolicy::default()).unwrap();
        let rep = moment_residuals(&syn, 4).unwrap();
        assert!(rep.max_enforced_window.unwrap() < 1e-8, "{:?}", rep.max_enforced_window);
        assert!(rep.shift_identity.unwrap() < 1e-20);
        assert!(rep.imag_fraction < 1e-10);
        // expansion over Θ_j reproduces the exponential-sum coefficients
        let gf = biortho::gram_biorthogonal(&syn.problem.family, &PrecisionPolicy::default()).unwrap();
        let a = syn.theta_coefficients();
        let s = 0.37;
        let mut via_theta = C64::new(0.0, 0.0);
        for (j, aj) in a.iter().enumerate() {
            via_theta += aj.to_c64() * gf.eval(j, s - 0.5);
        }
        let direct = syn.signal.eval(s);
        assert!((via_theta - direct).norm() < 1e-9 * direct.norm().max(1.0), "{via_theta} {direct}");
    }
}

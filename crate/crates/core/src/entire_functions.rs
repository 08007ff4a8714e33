//! Entire functions vanishing on the spectral nodes and the multipliers that
//! tame their growth on the real line.
//!
//! Nodes are the points `ν = −iμ` with `μ = conj(λ)`. All products are
//! accumulated as sums of principal logarithms; only ratios are ever
//! exponentiated.

use crate::quad;
use crate::spectrum::{self, Branch};
use crate::{par, Error, Result, C64};
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::path::{Path, PathBuf};

const ZERO_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Node {
    Zero,
    Mode(i64, Branch),
}

impl Node {
    pub fn name(&self) -> String {
        match self {
            Node::Zero => "0".into(),
            Node::Mode(k, b) => format!("{k}{}", if *b == Branch::Plus { "+" } else { "-" }),
        }
    }
}

/// `{0} ∪ {μ_k^±: 0 < |k| ≤ kmax_nodes}` for a window of length `t`.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub t: f64,
    pub kmax_nodes: i64,
    mu: Vec<C64>,
}

impl NodeSet {
    pub fn new(t: f64, kmax_nodes: i64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::Usage(format!("T must be positive, got {t}")));
        }
        let mut mu = vec![C64::new(0.0, 0.0)];
        for k in 1..=kmax_nodes {
            for kk in [k, -k] {
                for b in [Branch::Plus, Branch::Minus] {
                    mu.push(spectrum::lambda(kk, b)?.conj());
                }
            }
        }
        for i in 0..mu.len() {
            for j in 0..i {
                if (mu[i] - mu[j]).norm() <= ZERO_TOL * (1.0 + mu[i].norm()) {
                    return Err(Error::Numeric(format!("coincident nodes {i} and {j}")));
                }
            }
        }
        Ok(NodeSet { t, kmax_nodes, mu })
    }

    fn index(&self, node: Node) -> Option<usize> {
        match node {
            Node::Zero => Some(0),
            Node::Mode(k, b) => {
                if k == 0 || k.abs() > self.kmax_nodes {
                    return None;
                }
                let i = 1 + 4 * (k.unsigned_abs() as usize - 1) + if k < 0 { 2 } else { 0 } + if b == Branch::Minus { 1 } else { 0 };
                Some(i)
            }
        }
    }

    pub fn mu(&self, node: Node) -> Result<C64> {
        self.index(node)
            .map(|i| self.mu[i])
            .ok_or_else(|| Error::Usage(format!("node {} outside the node set", node.name())))
    }

    /// `ν = −iμ`.
    pub fn point(&self, node: Node) -> Result<C64> {
        Ok(C64::new(0.0, -1.0) * self.mu(node)?)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (Node, C64)> + '_ {
        std::iter::once(Node::Zero).chain((1..=self.kmax_nodes).flat_map(|k| {
            [k, -k].into_iter().flat_map(move |kk| [Node::Mode(kk, Branch::Plus), Node::Mode(kk, Branch::Minus)])
        }))
        .zip(self.mu.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TruncationPolicy {
    pub n_p: i64,
    pub n_m: usize,
    /// Close the multiplier products with the integral of their continuous
    /// counting measure beyond `τ_{N_M}`.
    pub tail_closure: bool,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy { n_p: 64, n_m: 2000, tail_closure: true }
    }
}

/// A product carried as its complex logarithm; `zero` marks an exact root.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LogValue {
    pub log: C64,
    pub zero: bool,
}

impl LogValue {
    pub fn value(&self) -> C64 {
        if self.zero {
            C64::new(0.0, 0.0)
        } else {
            self.log.exp()
        }
    }
    pub fn log_abs(&self) -> f64 {
        if self.zero {
            f64::NEG_INFINITY
        } else {
            self.log.re
        }
    }
}

/// `|z|·Σ_{|k|>N} (1/|μ_k^+| + 1/|μ_k^−|)` with `|μ^+| ≈ k²`, `|μ^−| ≈ k⁴`.
pub fn p_tail_bound(z: C64, n_p: i64) -> f64 {
    let n = n_p as f64;
    2.0 * z.norm() * (1.0 / n + 1.0 / (3.0 * n * n * n))
}

/// `log P(z)` with `P(z) = z·∏(1 + z/(iμ))` over the node set truncated at
/// `|k| ≤ n_p`, optionally without one factor (the leading `z` for `Zero`).
pub fn log_p_excluding(z: C64, nodes: &NodeSet, n_p: i64, skip: Option<Node>) -> LogValue {
    let mut acc = C64::new(0.0, 0.0);
    let mut zero = false;
    if skip != Some(Node::Zero) {
        if z.norm() <= ZERO_TOL {
            zero = true;
        } else {
            acc += z.ln();
        }
    }
    let i = C64::new(0.0, 1.0);
    for (node, mu) in nodes.nodes().skip(1) {
        if let Node::Mode(k, _) = node {
            if k.abs() > n_p || Some(node) == skip {
                continue;
            }
        }
        let f = 1.0 + z / (i * mu);
        if f.norm() <= ZERO_TOL {
            zero = true;
        } else {
            acc += f.ln();
        }
    }
    LogValue { log: acc, zero }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PEval {
    pub value: LogValue,
    pub tail_bound: f64,
}

pub fn canonical_p(z: C64, nodes: &NodeSet, pol: &TruncationPolicy) -> Result<PEval> {
    check_np(nodes, pol)?;
    Ok(PEval { value: log_p_excluding(z, nodes, pol.n_p, None), tail_bound: p_tail_bound(z, pol.n_p) })
}

fn check_np(nodes: &NodeSet, pol: &TruncationPolicy) -> Result<()> {
    if pol.n_p > nodes.kmax_nodes || pol.n_p < 1 {
        return Err(Error::Usage(format!("N_P = {} must lie in [1, {}]", pol.n_p, nodes.kmax_nodes)));
    }
    Ok(())
}

/// `P'(ν)` by deleting the vanishing factor: the rest of the product times
/// that factor's derivative `1/(iμ)`. `P'(0) = 1`.
pub fn p_prime_at_node(node: Node, nodes: &NodeSet, pol: &TruncationPolicy) -> Result<LogValue> {
    check_np(nodes, pol)?;
    let nu = nodes.point(node)?;
    let rest = log_p_excluding(nu, nodes, pol.n_p, Some(node));
    let extra = match node {
        Node::Zero => C64::new(0.0, 0.0),
        Node::Mode(..) => -(C64::new(0.0, 1.0) * nodes.mu(node)?).ln(),
    };
    Ok(LogValue { log: rest.log + extra, zero: rest.zero })
}

/// Central difference of `P` at the node with step `h`.
pub fn p_prime_fd(node: Node, nodes: &NodeSet, pol: &TruncationPolicy, h: f64) -> Result<C64> {
    let nu = nodes.point(node)?;
    let f = |z: C64| log_p_excluding(z, nodes, pol.n_p, None).value();
    Ok((f(nu + h) - f(nu - h)) / (2.0 * h))
}

// ---------------------------------------------------------------------------
// sine-type factors

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SineFactor {
    Q1,
    R1,
}

/// `z·∏_{0<|k|≤kmax} (1 − z/μ̃_k)` with μ̃ from the plus (`Q1`) or minus
/// (`R1`) branch.
pub fn sine_factor(z: C64, which: SineFactor, kmax: i64) -> Result<C64> {
    let b = match which {
        SineFactor::Q1 => Branch::Plus,
        SineFactor::R1 => Branch::Minus,
    };
    let mut acc = z;
    for k in (1..=kmax).flat_map(|k| [k, -k]) {
        acc *= 1.0 - z / spectrum::mu_tilde(k, b)?;
    }
    Ok(acc)
}

fn branch_product(z: C64, b: Branch, kmax: i64, power: i32) -> Result<C64> {
    let zp = z.powi(power);
    let mut acc = zp;
    for k in (1..=kmax).flat_map(|k| [k, -k]) {
        let mu = spectrum::lambda(k, b)?.conj();
        acc *= if power == 1 { 1.0 + z / (C64::new(0.0, 1.0) * mu) } else { 1.0 + zp / mu };
    }
    Ok(acc)
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub z: C64,
    pub lhs: C64,
    pub rhs: C64,
    pub rel_err: f64,
}

/// Evaluates both sides of the four product identities relating the
/// half-products `P₁`, `P₂` to the sine-type factors at a common truncation.
pub fn identity_checks(z: C64, kmax: i64) -> Result<Vec<IdentityCheck>> {
    let q1 = |w| sine_factor(w, SineFactor::Q1, kmax);
    let r1 = |w| sine_factor(w, SineFactor::R1, kmax);
    let q2 = |w: C64| -> Result<C64> { Ok(-q1(w)? * q1(-w)?) };
    let r2 = |w: C64| -> Result<C64> {
        let i = C64::new(0.0, 1.0);
        Ok(-r1(w)? * r1(-w)? * r1(i * w)? * r1(-i * w)?)
    };
    let i = C64::new(0.0, 1.0);
    let mk = |name, lhs: C64, rhs: C64| IdentityCheck { name, z, lhs, rhs, rel_err: (lhs - rhs).norm() / rhs.norm().max(1e-300) };
    Ok(vec![
        mk("q2_product", q2(z)?, branch_product(z, Branch::Plus, kmax, 2)?),
        mk("p1_from_q2", branch_product(z, Branch::Plus, kmax, 1)?, i * q2(C64::from_polar(1.0, -PI / 4.0) * z.sqrt())?),
        mk("r2_product", r2(z)?, branch_product(z, Branch::Minus, kmax, 4)?),
        mk("p2_from_r2", branch_product(z, Branch::Minus, kmax, 1)?, i * r2(C64::from_polar(1.0, -PI / 8.0) * z.powf(0.25))?),
    ])
}

// ---------------------------------------------------------------------------
// multipliers

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Which {
    M1,
    M2,
}

/// Atomized counting function `s(t) = a·t − b·t^γ` and its jump points.
#[derive(Debug, Clone, Serialize)]
pub struct MultiplierSpec {
    pub which: Which,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub big_b: f64,
    pub taus: Vec<f64>,
}

impl MultiplierSpec {
    pub fn s(&self, t: f64) -> f64 {
        self.a * t - self.b * t.powf(self.gamma)
    }
    pub fn s_prime(&self, t: f64) -> f64 {
        self.a - self.b * self.gamma * t.powf(self.gamma - 1.0)
    }
    pub fn count_below(&self, t: f64) -> usize {
        self.taus.partition_point(|&x| x < t)
    }
}

pub fn build_multiplier(t: f64, which: Which, n_m: usize) -> Result<MultiplierSpec> {
    if !(t > 0.0) {
        return Err(Error::Usage(format!("T must be positive, got {t}")));
    }
    let a = t / (4.0 * PI);
    let (b, gamma) = match which {
        Which::M1 => (SQRT_2, 0.5),
        Which::M2 => (4.0 - 2.0 * SQRT_2, 0.25),
    };
    let big_b = (b / a).powf(1.0 / (1.0 - gamma));
    let mut spec = MultiplierSpec { which, a, b, gamma, big_b, taus: Vec::with_capacity(n_m) };
    let mut lo = big_b;
    for n in 1..=n_m {
        let target = n as f64;
        let mut hi = (2.0 * lo).max(lo + 1.0);
        while spec.s(hi) < target {
            hi *= 2.0;
            if !hi.is_finite() || hi > 1e300 {
                return Err(Error::Numeric(format!("bisection bracket overflow at n = {n}")));
            }
        }
        let mut l = lo;
        for _ in 0..2000 {
            let mid = 0.5 * (l + hi);
            if mid <= l || mid >= hi {
                break;
            }
            if spec.s(mid) < target {
                l = mid;
            } else {
                hi = mid;
            }
        }
        let tau = if (spec.s(l) - target).abs() < (spec.s(hi) - target).abs() { l } else { hi };
        spec.taus.push(tau);
        lo = tau;
    }
    Ok(spec)
}

/// `Σ_{n>N} log(1 − w²/τ_n²)` from the counting measure beyond `τ_N`
/// (Euler–Maclaurin, endpoint correction included). Needs `|w| < τ_N/2`.
pub fn multiplier_tail(w: C64, spec: &MultiplierSpec) -> Result<C64> {
    let tn = *spec.taus.last().ok_or_else(|| Error::Usage("empty multiplier".into()))?;
    if w.norm() >= 0.5 * tn {
        return Err(Error::Numeric(format!(
            "|z − i| = {:.3e} outside the tail-closure disc (τ_N/2 = {:.3e}); raise N_M",
            w.norm(),
            0.5 * tn
        )));
    }
    let r = w * w / (tn * tn);
    let (a, b, g) = (spec.a, spec.b, spec.gamma);
    let tg = tn.powf(g);
    let mut rj = C64::new(1.0, 0.0);
    let mut acc = C64::new(0.0, 0.0);
    for j in 1..200 {
        let jf = j as f64;
        rj *= r;
        let term = rj * (a * tn / (2.0 * jf - 1.0) - b * g * tg / (2.0 * jf - g)) / jf;
        acc -= term;
        if term.norm() < 1e-18 * acc.norm().max(1e-300) {
            break;
        }
    }
    Ok(acc - 0.5 * (1.0 - r).ln())
}

/// `log M(z)` with `M(z) = ∏_n (1 − (z−i)²/τ_n²)` (plus tail closure).
pub fn eval_multiplier(z: C64, spec: &MultiplierSpec, closure: bool) -> Result<LogValue> {
    let w = z - C64::new(0.0, 1.0);
    let w2 = w * w;
    let mut acc = C64::new(0.0, 0.0);
    let mut zero = false;
    for &tau in &spec.taus {
        let f = 1.0 - w2 / (tau * tau);
        if f.norm() <= ZERO_TOL {
            zero = true;
        } else {
            acc += f.ln();
        }
    }
    if closure {
        acc += multiplier_tail(w, spec)?;
    }
    Ok(LogValue { log: acc, zero })
}

// ---------------------------------------------------------------------------
// interpolating functions

/// Everything needed to evaluate `Ψ` for one window length.
#[derive(Debug, Clone)]
pub struct PsiSetup {
    pub t: f64,
    pub nodes: NodeSet,
    pub pol: TruncationPolicy,
    pub m1: MultiplierSpec,
    pub m2: MultiplierSpec,
}

impl PsiSetup {
    pub fn new(t: f64, pol: TruncationPolicy) -> Result<Self> {
        let nodes = NodeSet::new(t, pol.n_p)?;
        Ok(PsiSetup {
            t,
            nodes,
            pol,
            m1: build_multiplier(t, Which::M1, pol.n_m)?,
            m2: build_multiplier(t, Which::M2, pol.n_m)?,
        })
    }

    pub fn node_mu(&self, node: Node) -> C64 {
        self.nodes.mu(node).expect("node in set")
    }

    pub fn node_point(&self, node: Node) -> C64 {
        self.nodes.point(node).expect("node in set")
    }

    pub fn log_p_over_z(&self, z: C64) -> C64 {
        log_p_excluding(z, &self.nodes, self.pol.n_p, Some(Node::Zero)).log
    }

    pub fn log_m1(&self, z: C64) -> Result<LogValue> {
        eval_multiplier(z, &self.m1, self.pol.tail_closure)
    }

    pub fn log_m2(&self, z: C64) -> Result<LogValue> {
        eval_multiplier(z, &self.m2, self.pol.tail_closure)
    }

    pub fn log_m(&self, z: C64) -> Result<C64> {
        Ok(self.log_m1(z)?.log + self.log_m2(z)?.log)
    }

    /// Term turning `log(P/z)` into `log` of `P` without the node's factor.
    pub fn factor_removal(&self, node: Node, z: C64) -> C64 {
        match node {
            Node::Zero => C64::new(0.0, 0.0),
            Node::Mode(..) => z.ln() - (1.0 + z / (C64::new(0.0, 1.0) * self.node_mu(node))).ln(),
        }
    }

    /// `log P'(ν) + log M(ν) + log(iμ)`: with it, `Ψ = exp(log P_ν̂(z) + log M(z) − normalizer)`,
    /// where `P_ν̂` is `P` without the node's factor.
    pub fn psi_normalizer(&self, node: Node) -> Result<C64> {
        let nu = self.node_point(node);
        let pp = p_prime_at_node(node, &self.nodes, &self.pol)?;
        if pp.zero || pp.log.re < (1e-300f64).ln() {
            return Err(Error::Numeric(format!(
                "|P'| underflows at node {} with N_P = {}; truncation too short",
                node.name(),
                self.pol.n_p
            )));
        }
        let rest = log_p_excluding(nu, &self.nodes, self.pol.n_p, Some(node));
        Ok(rest.log + self.log_m(nu)?)
    }

    pub fn psi_log(&self, node: Node, z: C64) -> Result<LogValue> {
        let rest = log_p_excluding(z, &self.nodes, self.pol.n_p, Some(node));
        Ok(LogValue { log: rest.log + self.log_m(z)? - self.psi_normalizer(node)?, zero: rest.zero })
    }

    pub fn psi(&self, node: Node, z: C64) -> Result<C64> {
        Ok(self.psi_log(node, z)?.value())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InterpolationReport {
    pub elements: Vec<String>,
    pub nodes: Vec<String>,
    pub max_residual: f64,
}

/// `max |Ψ_k(ν_l) − δ_kl|` over `|k|, |l| ≤ kmax`.
pub fn interpolation_check(setup: &PsiSetup, kmax: i64) -> Result<InterpolationReport> {
    let sel: Vec<Node> = setup.nodes.nodes().map(|(n, _)| n).filter(|n| matches!(n, Node::Zero) || matches!(n, Node::Mode(k, _) if k.abs() <= kmax)).collect();
    let mut worst = 0.0f64;
    for &el in &sel {
        for &at in &sel {
            let v = setup.psi(el, setup.node_point(at))?;
            let d = if el == at { 1.0 } else { 0.0 };
            worst = worst.max((v - d).norm());
        }
    }
    let names: Vec<String> = sel.iter().map(|n| n.name()).collect();
    Ok(InterpolationReport { elements: names.clone(), nodes: names, max_residual: worst })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpTypeCheck {
    pub node: String,
    pub y: Vec<f64>,
    pub log_abs: Vec<f64>,
    pub slope_up: f64,
    pub slope_down: f64,
    pub limit: f64,
    pub holds: bool,
}

/// Growth of `log|Ψ(iy)|` between `|y| = 50` and `|y| = 200` on both half axes.
pub fn exponential_type_check(setup: &PsiSetup, node: Node) -> Result<ExpTypeCheck> {
    let ys = [-200.0, -100.0, -50.0, 50.0, 100.0, 200.0];
    let mut la = Vec::new();
    for &y in &ys {
        la.push(setup.psi_log(node, C64::new(0.0, y))?.log_abs());
    }
    let up = (la[5] - la[3]) / 150.0;
    let down = (la[0] - la[2]) / 150.0;
    let limit = setup.t / 2.0 + 0.05;
    Ok(ExpTypeCheck { node: node.name(), y: ys.to_vec(), log_abs: la, slope_up: up, slope_down: down, limit, holds: up <= limit && down <= limit })
}

// ---------------------------------------------------------------------------
// auxiliary integrals

/// `log|1 − x²/t^{2m}|` evaluated stably given `d = t − x^{1/m}` (signed).
fn log_one_minus_ratio(x: f64, t: f64, m: i32, d: f64) -> f64 {
    let lr = 2.0 * x.ln() - 2.0 * m as f64 * t.ln();
    if lr > 1.0 {
        lr + (-(-lr).exp()).ln_1p()
    } else if lr < -1.0 {
        (-lr.exp()).ln_1p()
    } else {
        // |t^{2m} − s^{2m}| = |t − s|·∏ over the factorization, s^{2m} = x²
        let s = x.powf(1.0 / m as f64);
        let mut acc = d.abs().ln() + (t + s).ln();
        let (mut tp, mut sp) = (t, s);
        for _ in 1..m.trailing_zeros() + 1 {
            tp *= tp;
            sp *= sp;
            acc += (tp + sp).ln();
        }
        acc - 2.0 * m as f64 * t.ln()
    }
}

/// `∫₀¹ log|1 − x²/t²| d(t − t^{1/4})`, written in `u = t^{1/4}` as
/// `∫₀¹ log|1 − x²/u⁸| (4u³ − 1) du`.
pub fn log_kernel_theta(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Usage(format!("x must be positive, got {x}")));
    }
    let s = x.powf(0.25);
    let f = |u: f64, d: f64| log_one_minus_ratio(x, u, 4, d) * (4.0 * u * u * u - 1.0);
    let tol = 1e-11;
    if s < 1.0 {
        let left = quad::tanh_sinh(|u, _, dr| f(u, -dr), 0.0, s, tol)?;
        let right = quad::tanh_sinh(|u, dl, _| f(u, dl), s, 1.0, tol)?;
        Ok(left.value + right.value)
    } else {
        Ok(quad::tanh_sinh(|u, _, dr| f(u, (1.0 - s) - dr), 0.0, 1.0, tol)?.value)
    }
}

/// `U(x) = ∫_B^∞ log|1 − x²/t²| s'(t) dt` for the multiplier's counting
/// function; beyond `L = max(4|x|, 2B)` the logarithm is expanded in `x²/t²`.
pub fn counting_potential(x: f64, spec: &MultiplierSpec) -> Result<f64> {
    let x = x.abs();
    if x == 0.0 {
        return Ok(0.0);
    }
    let bb = spec.big_b;
    let l = (4.0 * x).max(2.0 * bb);
    let f = |t: f64, d: f64| log_one_minus_ratio(x, t, 1, d) * spec.s_prime(t);
    let tol = 1e-11;
    let mut acc = 0.0;
    if x > bb && x < l {
        acc += quad::tanh_sinh(|t, _, dr| f(t, -dr), bb, x, tol)?.value;
        acc += quad::tanh_sinh(|t, dl, _| f(t, dl), x, l, tol)?.value;
    } else {
        acc += quad::tanh_sinh(|t, _, _| f(t, t - x), bb, l, tol)?.value;
    }
    let r = (x / l).powi(2);
    let (a, b, g) = (spec.a, spec.b, spec.gamma);
    let mut rj = 1.0;
    for j in 1..200 {
        let jf = j as f64;
        rj *= r;
        let term = rj * (a * l / (2.0 * jf - 1.0) - b * g * l.powf(g) / (2.0 * jf - g)) / jf;
        acc -= term;
        if term.abs() < 1e-17 * acc.abs().max(1e-300) {
            break;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightedCauchyBound {
    pub x: f64,
    pub integral: f64,
    pub lower: f64,
    pub upper: f64,
    pub holds: bool,
}

/// `I(x) = ∫_ℝ |s|^{1/4}/(1 + (x−s)²) ds = ∫_{−π/2}^{π/2} |x + tan φ|^{1/4} dφ`
/// against `√π(1+x²)^{1/8}Γ(5/8)/Γ(9/8)` and `√π(1+x²)^{1/8}Γ(3/8)/Γ(7/8)`.
pub fn weighted_cauchy_bound(x: f64) -> Result<WeightedCauchyBound> {
    let phi0 = (-x).atan();
    let c0 = phi0.cos();
    // x + tan φ = sin(φ − φ0)/(cos φ cos φ0), with cos φ = sin(distance to ∓π/2)
    let left = quad::tanh_sinh(|_, dl, dr| (dr.sin() / (dl.sin() * c0)).powf(0.25), -FRAC_PI_2, phi0, 1e-12)?;
    let right = quad::tanh_sinh(|_, dl, dr| (dl.sin() / (dr.sin() * c0)).powf(0.25), phi0, FRAC_PI_2, 1e-12)?;
    let integral = left.value + right.value;
    let pre = PI.sqrt() * (1.0 + x * x).powf(0.125);
    let lower = pre * quad::gamma(0.625) / quad::gamma(1.125);
    let upper = pre * quad::gamma(0.375) / quad::gamma(0.875);
    Ok(WeightedCauchyBound { x, integral, lower, upper, holds: lower <= integral && integral <= upper })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub sup_abs: f64,
    pub finite: bool,
}

fn scan(xs: Vec<f64>, f: impl Fn(f64) -> Result<f64> + Sync) -> Result<ScanReport> {
    let values = par::map(&xs, |&x| f(x)).into_iter().collect::<Result<Vec<_>>>()?;
    let sup_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ScanReport { finite: values.iter().all(|v| v.is_finite()), x: xs, values, sup_abs })
}

pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let n = ((hi / lo).log10() * per_decade as f64).round() as usize;
    (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect()
}

/// `θ(x)` over a log grid on `[1e−3, 1e6]`.
pub fn log_kernel_theta_scan() -> Result<ScanReport> {
    scan(log_grid(1e-3, 1e6, 8), log_kernel_theta)
}

/// `U₂(x) + 2√2π|x|^{1/4}` over a log grid, for the `M₂` counting function.
pub fn u2_compensation_scan(t: f64) -> Result<ScanReport> {
    let spec = build_multiplier(t, Which::M2, 1)?;
    scan(log_grid(1e-1, 1e6, 4), |x| Ok(counting_potential(x, &spec)? + 2.0 * SQRT_2 * PI * x.powf(0.25)))
}

// ---------------------------------------------------------------------------
// estimate fits

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bound {
    Upper,
    Lower,
}

/// `log|F| − log(envelope)` along a parameter; the fitted constant is the
/// extreme of that difference (max for upper, min for lower bounds).
#[derive(Debug, Clone, Serialize)]
pub struct EstimateFit {
    pub name: String,
    pub bound: Bound,
    pub abscissa: Vec<f64>,
    pub log_value: Vec<f64>,
    pub log_envelope: Vec<f64>,
    pub log_constant: f64,
    /// Extra fitted linear-rate coefficient (when the envelope has one), else 0.
    pub fitted_rate: f64,
    /// Slope of the ratio over the last half of the range (drift diagnostic).
    pub tail_trend: f64,
    pub holds: bool,
}

impl EstimateFit {
    pub fn new(name: &str, bound: Bound, abscissa: Vec<f64>, log_value: Vec<f64>, log_envelope: Vec<f64>) -> Self {
        let d: Vec<f64> = log_value.iter().zip(&log_envelope).map(|(v, e)| v - e).collect();
        let c = match bound {
            Bound::Upper => d.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Bound::Lower => d.iter().cloned().fold(f64::INFINITY, f64::min),
        };
        let n = d.len();
        let h = n / 2;
        let tail_trend = if n >= 2 && abscissa[n - 1] != abscissa[h.min(n - 2)] {
            (d[n - 1] - d[h.min(n - 2)]) / (abscissa[n - 1] - abscissa[h.min(n - 2)])
        } else {
            0.0
        };
        EstimateFit {
            name: name.into(),
            bound,
            abscissa,
            log_value,
            log_envelope,
            holds: c.is_finite() && d.iter().all(|x| x.is_finite()),
            log_constant: c,
            fitted_rate: 0.0,
            tail_trend,
        }
    }

    /// Lower bound with envelope `base − c·|k|`, `c` from a least-squares line.
    pub fn lower_with_rate(name: &str, ks: Vec<f64>, log_value: Vec<f64>, base: Vec<f64>) -> Self {
        let d: Vec<f64> = log_value.iter().zip(&base).map(|(v, e)| v - e).collect();
        let c = -ls_slope(&ks, &d).min(0.0);
        let env: Vec<f64> = base.iter().zip(&ks).map(|(b, k)| b - c * k).collect();
        let mut f = Self::new(name, Bound::Lower, ks, log_value, env);
        f.fitted_rate = c;
        f
    }
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn sym_k(kmax: i64) -> Vec<i64> {
    (1..=kmax).flat_map(|k| [k, -k]).collect()
}

/// Fits for `|P|` on ℝ, `|P'|` at both node branches and the two multipliers.
pub fn estimate_fits(setup: &PsiSetup) -> Result<Vec<EstimateFit>> {
    let s2p = SQRT_2 * PI;
    let a = setup.t / (4.0 * PI);
    let mut out = Vec::new();

    let xs: Vec<f64> = [10.0, 30.0, 100.0, 300.0, 1000.0].iter().flat_map(|&x| [x, -x]).collect();
    let xa: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
    let lp: Vec<f64> = xs.iter().map(|&x| log_p_excluding(C64::new(x, 0.0), &setup.nodes, setup.pol.n_p, None).log_abs()).collect();
    let env: Vec<f64> = xa.iter().map(|x| -x.ln() + s2p * x.sqrt() + 2.0 * s2p * x.powf(0.25)).collect();
    out.push(EstimateFit::new("P_real_axis_upper", Bound::Upper, xa.clone(), lp, env));

    let pprime = |ks: &[i64], b: Branch| -> Result<Vec<f64>> {
        ks.iter().map(|&k| Ok(p_prime_at_node(Node::Mode(k, b), &setup.nodes, &setup.pol)?.log_abs())).collect()
    };
    let kp = sym_k(12.min(setup.pol.n_p));
    let kpf: Vec<f64> = kp.iter().map(|k| k.abs() as f64).collect();
    let env: Vec<f64> = kpf.iter().map(|k| -3.0 * k.ln() + 2.0 * PI * k.sqrt()).collect();
    out.push(EstimateFit::new("P_prime_plus_lower", Bound::Lower, kpf.clone(), pprime(&kp, Branch::Plus)?, env));
    let km = sym_k(8.min(setup.pol.n_p));
    let kmf: Vec<f64> = km.iter().map(|k| k.abs() as f64).collect();
    let env: Vec<f64> = kmf.iter().map(|k| -7.0 * k.ln() + 3.0 * PI * k).collect();
    out.push(EstimateFit::new("P_prime_minus_lower", Bound::Lower, kmf.clone(), pprime(&km, Branch::Minus)?, env));

    let xm: Vec<f64> = [10.0, 100.0, 1000.0].iter().flat_map(|&x| [x, -x]).collect();
    let xma: Vec<f64> = xm.iter().map(|x| x.abs()).collect();
    let m_at = |f: &dyn Fn(C64) -> Result<LogValue>, zs: &[C64]| -> Result<Vec<f64>> { zs.iter().map(|&z| Ok(f(z)?.log_abs())).collect() };
    let real: Vec<C64> = xm.iter().map(|&x| C64::new(x, 0.0)).collect();
    let kplus = sym_k(10.min(setup.pol.n_p));
    let kplusf: Vec<f64> = kplus.iter().map(|k| k.abs() as f64).collect();
    let zplus: Vec<C64> = kplus.iter().map(|&k| setup.node_point(Node::Mode(k, Branch::Plus))).collect();
    let kmin = sym_k(5.min(setup.pol.n_p));
    let kminf: Vec<f64> = kmin.iter().map(|k| k.abs() as f64).collect();
    let zmin: Vec<C64> = kmin.iter().map(|&k| setup.node_point(Node::Mode(k, Branch::Minus))).collect();

    let m2 = |z| setup.log_m2(z);
    let m1 = |z| setup.log_m1(z);
    out.push(EstimateFit::new(
        "M2_real_axis_upper",
        Bound::Upper,
        xma.clone(),
        m_at(&m2, &real)?,
        xma.iter().map(|x| x.ln() - 2.0 * s2p * x.powf(0.25)).collect(),
    ));
    out.push(EstimateFit::new(
        "M2_plus_nodes_lower",
        Bound::Lower,
        kplusf.clone(),
        m_at(&m2, &zplus)?,
        kplusf.iter().map(|k| PI * a * k * k - 4.0 * (SQRT_2 + 1.0) * PI * k).collect(),
    ));
    out.push(EstimateFit::lower_with_rate("M2_minus_nodes_lower", kminf.clone(), m_at(&m2, &zmin)?, kminf.iter().map(|k| PI * a * k.powi(4)).collect()));
    out.push(EstimateFit::new(
        "M1_real_axis_upper",
        Bound::Upper,
        xma.clone(),
        m_at(&m1, &real)?,
        xma.iter().map(|x| x.ln() - s2p * x.sqrt()).collect(),
    ));
    out.push(EstimateFit::new(
        "M1_plus_nodes_lower",
        Bound::Lower,
        kplusf.clone(),
        m_at(&m1, &zplus)?,
        kplusf.iter().map(|k| PI * a * k * k - (5.0 + 2.0 * SQRT_2) * PI * k).collect(),
    ));
    out.push(EstimateFit::new(
        "M1_minus_nodes_lower",
        Bound::Lower,
        kminf.clone(),
        m_at(&m1, &zmin)?,
        kminf.iter().map(|k| PI * a * k.powi(4) - (2.0 * SQRT_2 + 1.0) * PI * k * k - 8.0 * k).collect(),
    ));
    Ok(out)
}

/// `x, log|P|, log|M₁|, log|M₂|` and the three envelope curves on `[1, 1000]`.
pub fn write_estimate_csv(setup: &PsiSetup, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("entire_estimates.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["x", "log_abs_P", "log_abs_M1", "log_abs_M2", "bound_P", "bound_M1", "bound_M2"])?;
    let s2p = SQRT_2 * PI;
    for x in log_grid(1.0, 1000.0, 40) {
        let z = C64::new(x, 0.0);
        let lp = log_p_excluding(z, &setup.nodes, setup.pol.n_p, None).log_abs();
        let l1 = setup.log_m1(z)?.log_abs();
        let l2 = setup.log_m2(z)?.log_abs();
        w.write_record(
            [x, lp, l1, l2, -x.ln() + s2p * x.sqrt() + 2.0 * s2p * x.powf(0.25), x.ln() - s2p * x.sqrt(), x.ln() - 2.0 * s2p * x.powf(0.25)]
                .iter()
                .map(|v| format!("{v:.17e}")),
        )?;
    }
    w.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> PsiSetup {
        PsiSetup::new(2.0 * PI, TruncationPolicy { n_p: 16, n_m: 400, tail_closure: true }).unwrap()
    }

    #[test]
    fn p_zeros_and_derivative() {
        let s = setup();
        let pol = s.pol;
        assert!(canonical_p(C64::new(0.0, 0.0), &s.nodes, &pol).unwrap().value.zero);
        let nu = s.node_point(Node::Mode(1, Branch::Plus));
        assert!(canonical_p(nu, &s.nodes, &pol).unwrap().value.zero);
        let node = Node::Mode(1, Branch::Plus);
        let exact = p_prime_at_node(node, &s.nodes, &pol).unwrap().value();
        let fd = p_prime_fd(node, &s.nodes, &pol, 1e-6 * nu.norm()).unwrap();
        assert!((exact - fd).norm() / exact.norm() < 1e-6, "{exact} {fd}");
        assert_eq!(p_prime_at_node(Node::Zero, &s.nodes, &pol).unwrap().value(), C64::new(1.0, 0.0));
    }

    #[test]
    fn product_identities() {
        assert_eq!(sine_factor(C64::new(0.0, 0.0), SineFactor::Q1, 10).unwrap(), C64::new(0.0, 0.0));
        assert_eq!(sine_factor(C64::new(0.0, 0.0), SineFactor::R1, 10).unwrap(), C64::new(0.0, 0.0));
        for z in [C64::new(3.0, 2.0), C64::new(5.0, 0.0)] {
            for c in identity_checks(z, 20).unwrap() {
                assert!(c.rel_err < 1e-8, "{} at {z}: {}", c.name, c.rel_err);
            }
        }
    }

    #[test]
    fn multiplier_jumps() {
        let m = build_multiplier(2.0 * PI, Which::M2, 50).unwrap();
        assert!(m.s(m.big_b).abs() < 1e-12);
        let t1 = m.taus[0];
        assert!((t1 / 2.0 - (4.0 - 2.0 * SQRT_2) * t1.powf(0.25) - 1.0).abs() < 1e-12);
        assert!(m.taus.windows(2).all(|w| w[0] < w[1]) && t1 > m.big_b);
        let t = 2.0 * m.taus[4];
        assert_eq!(m.count_below(t), m.s(t).floor() as usize);
        let v = eval_multiplier(C64::new(0.0, 1.0), &m, false).unwrap();
        assert!(v.log.norm() < 1e-15);
    }

    #[test]
    fn tail_closure_matches_longer_product() {
        let short = build_multiplier(2.0 * PI, Which::M1, 500).unwrap();
        let long = build_multiplier(2.0 * PI, Which::M1, 8000).unwrap();
        for x in [5.0, 50.0, 200.0] {
            let z = C64::new(x, 0.0);
            let a = eval_multiplier(z, &short, true).unwrap().log;
            let b = eval_multiplier(z, &long, true).unwrap().log;
            let raw = eval_multiplier(z, &short, false).unwrap().log;
            assert!((a - b).norm() < 1e-3 * (raw - b).norm().max(1e-12) + 1e-6, "{x}: {a} {b} {raw}");
        }
    }

    #[test]
    fn psi_interpolates() {
        let s = setup();
        let r = interpolation_check(&s, 3).unwrap();
        assert!(r.max_residual < 1e-10, "{}", r.max_residual);
    }

    #[test]
    fn auxiliary_integrals() {
        let b = weighted_cauchy_bound(0.0).unwrap();
        assert!((b.integral - PI / (5.0 * PI / 8.0).sin()).abs() < 1e-9);
        // √π Γ(5/8)/Γ(9/8) and √π Γ(3/8)/Γ(7/8)
        assert!(b.holds && (b.lower - 2.6999078).abs() < 1e-6 && (b.upper - 3.8558066).abs() < 1e-6);
        let big = weighted_cauchy_bound(1e4).unwrap();
        assert!((big.integral / 1e4f64.powf(0.25) / PI - 1.0).abs() < 1e-2);
        let small: Vec<f64> = [1e-8, 1e-16, 1e-24].iter().map(|&x| log_kernel_theta(x).unwrap()).collect();
        eprintln!("{small:?}");
        assert!(small[2].abs() < 1e-4 && small[2].abs() < small[1].abs() && small[1].abs() < small[0].abs());
    }
}

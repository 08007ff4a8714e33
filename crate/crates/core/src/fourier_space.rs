//! Band-limited periodic fields on [0, 2π] stored by Fourier coefficients,
//! `f(x) = Σ c_k e^{ikx}`, `c_k = (1/2π)∫ f e^{−ikx} dx`.

use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    kmax: usize,
    coeffs: Vec<C64>,
}

impl PeriodicField {
    pub fn zeros(kmax: usize) -> Self {
        PeriodicField { kmax, coeffs: vec![C64::new(0.0, 0.0); 2 * kmax + 1] }
    }

    pub fn from_pairs(kmax: usize, pairs: &[(i64, C64)]) -> Result<Self> {
        let mut f = Self::zeros(kmax);
        for &(k, c) in pairs {
            if k.unsigned_abs() as usize > kmax {
                return Err(Error::Usage(format!("mode {k} outside kmax {kmax}")));
            }
            f.set(k, f.get(k) + c);
        }
        Ok(f)
    }

    /// Single exponential `c·e^{ikx}`.
    pub fn mode(kmax: usize, k: i64, c: C64) -> Self {
        let mut f = Self::zeros(kmax.max(k.unsigned_abs() as usize));
        f.set(k, c);
        f
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn get(&self, k: i64) -> C64 {
        let kmax = self.kmax as i64;
        if k.abs() > kmax {
            return C64::new(0.0, 0.0);
        }
        self.coeffs[(k + kmax) as usize]
    }

    pub fn set(&mut self, k: i64, c: C64) {
        let kmax = self.kmax as i64;
        assert!(k.abs() <= kmax, "mode {k} outside kmax {kmax}");
        self.coeffs[(k + kmax) as usize] = c;
    }

    pub fn modes(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        let kmax = self.kmax as i64;
        self.coeffs.iter().enumerate().map(move |(i, &c)| (i as i64 - kmax, c))
    }

    pub fn resized(&self, kmax: usize) -> Self {
        let mut f = Self::zeros(kmax);
        for (k, c) in self.modes() {
            if k.unsigned_abs() as usize <= kmax {
                f.set(k, c);
            }
        }
        f
    }

    pub fn scale(&self, s: C64) -> Self {
        PeriodicField { kmax: self.kmax, coeffs: self.coeffs.iter().map(|&c| c * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let kmax = self.kmax.max(other.kmax);
        let mut f = Self::zeros(kmax);
        for k in -(kmax as i64)..=(kmax as i64) {
            f.set(k, self.get(k) + other.get(k));
        }
        f
    }

    /// `(Σ (1+k²)^s |c_k|²)^{1/2}`; negative `s` gives the dual norm through
    /// the L² pivot.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.modes()
            .map(|(k, c)| (1.0 + (k * k) as f64).powf(s) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `⟨1, f⟩ = 2π c₀`.
    pub fn mean(&self) -> C64 {
        2.0 * PI * self.get(0)
    }

    pub fn project_mean_zero(&self) -> Self {
        let mut f = self.clone();
        f.set(0, C64::new(0.0, 0.0));
        f
    }

    /// True when `c_{−k} = conj(c_k)`, i.e. the field is real-valued.
    pub fn is_real(&self, tol: f64) -> bool {
        self.modes().all(|(k, c)| (self.get(-k) - c.conj()).norm() <= tol)
    }

    pub fn eval(&self, x: f64) -> C64 {
        self.modes().map(|(k, c)| c * C64::from_polar(1.0, k as f64 * x)).sum()
    }

    /// Samples on the uniform grid `x_j = 2πj/n`.
    pub fn samples(&self, n: usize) -> Vec<C64> {
        (0..n).map(|j| self.eval(2.0 * PI * j as f64 / n as f64)).collect()
    }

    pub fn derivative(&self, order: u32) -> Self {
        let mut f = self.clone();
        for (k, c) in self.modes() {
            f.set(k, c * (C64::i() * k as f64).powu(order));
        }
        f
    }
}

/// `⟨w, φ⟩ = 2π Σ c_k(w)·conj(c_k(φ))`.
pub fn duality_pairing(w: &PeriodicField, phi: &PeriodicField) -> C64 {
    let kmax = w.kmax.min(phi.kmax) as i64;
    2.0 * PI * (-kmax..=kmax).map(|k| w.get(k) * phi.get(k).conj()).sum::<C64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatePair {
    pub u: PeriodicField,
    pub v: PeriodicField,
}

impl StatePair {
    pub fn new(u: PeriodicField, v: PeriodicField) -> Self {
        let kmax = u.kmax.max(v.kmax);
        StatePair { u: u.resized(kmax), v: v.resized(kmax) }
    }

    pub fn zeros(kmax: usize) -> Self {
        StatePair { u: PeriodicField::zeros(kmax), v: PeriodicField::zeros(kmax) }
    }

    pub fn kmax(&self) -> usize {
        self.u.kmax
    }

    pub fn resized(&self, kmax: usize) -> Self {
        StatePair { u: self.u.resized(kmax), v: self.v.resized(kmax) }
    }

    pub fn mode(&self, k: i64) -> [C64; 2] {
        [self.u.get(k), self.v.get(k)]
    }

    pub fn set_mode(&mut self, k: i64, m: [C64; 2]) {
        self.u.set(k, m[0]);
        self.v.set(k, m[1]);
    }

    pub fn scale(&self, s: C64) -> Self {
        StatePair { u: self.u.scale(s), v: self.v.scale(s) }
    }

    pub fn add(&self, o: &Self) -> Self {
        StatePair::new(self.u.add(&o.u), self.v.add(&o.v))
    }

    /// `‖u‖_{(H²)*} + ‖v‖_{(H¹)*}`, the state-space norm used for terminal checks.
    pub fn dual_norm(&self) -> f64 {
        self.u.sobolev_norm(-2.0) + self.v.sobolev_norm(-1.0)
    }

    /// `‖φ‖_{H²} + ‖ψ‖_{H¹}`, the norm on the adjoint side.
    pub fn primal_norm(&self) -> f64 {
        self.u.sobolev_norm(2.0) + self.v.sobolev_norm(1.0)
    }

    /// Pairing of a state with an adjoint state, component-wise summed.
    pub fn pairing(&self, adj: &StatePair) -> C64 {
        duality_pairing(&self.u, &adj.u) + duality_pairing(&self.v, &adj.v)
    }

    pub fn to_json(&self) -> StateFile {
        let rows = |f: &PeriodicField| {
            f.modes().filter(|(_, c)| c.norm() != 0.0).map(|(k, c)| (k, c.re, c.im)).collect()
        };
        StateFile { kmax: self.kmax(), u: rows(&self.u), v: rows(&self.v) }
    }

    pub fn from_json(s: &StateFile) -> Result<Self> {
        let pairs = |rows: &[(i64, f64, f64)]| -> Vec<(i64, C64)> {
            rows.iter().map(|&(k, re, im)| (k, C64::new(re, im))).collect()
        };
        Ok(StatePair {
            u: PeriodicField::from_pairs(s.kmax, &pairs(&s.u))?,
            v: PeriodicField::from_pairs(s.kmax, &pairs(&s.v))?,
        })
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let f: StateFile = serde_json::from_str(&text)?;
        Self::from_json(&f)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())? + "\n")?;
        Ok(())
    }
}

/// On-disk state: `{kmax, u: [[k, re, im], ...], v: [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFile {
    pub kmax: usize,
    pub u: Vec<(i64, f64, f64)>,
    pub v: Vec<(i64, f64, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms() {
        let one = PeriodicField::mode(0, 0, C64::new(1.0, 0.0));
        for s in [-2.0, 0.0, 3.5] {
            assert!((one.sobolev_norm(s) - 1.0).abs() < 1e-15);
        }
        let e1 = PeriodicField::mode(1, 1, C64::new(1.0, 0.0));
        assert!((e1.sobolev_norm(2.0) - 2.0).abs() < 1e-15);
        let cos = PeriodicField::from_pairs(1, &[(1, C64::new(1.0, 0.0)), (-1, C64::new(1.0, 0.0))]).unwrap();
        assert!((cos.sobolev_norm(-1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pairings_and_means() {
        let e2 = PeriodicField::mode(3, 2, C64::new(1.0, 0.0));
        let e1 = PeriodicField::mode(3, 1, C64::new(1.0, 0.0));
        assert!((duality_pairing(&e2, &e2) - 2.0 * PI).norm() < 1e-14);
        assert_eq!(duality_pairing(&e1, &e2), C64::new(0.0, 0.0));
        let one = PeriodicField::mode(1, 0, C64::new(1.0, 0.0));
        assert!((one.mean() - 2.0 * PI).norm() < 1e-15);
        assert_eq!(e1.mean(), C64::new(0.0, 0.0));
        let f = one.add(&e1).project_mean_zero();
        assert_eq!(f.get(0), C64::new(0.0, 0.0));
        assert_eq!(f.get(1), C64::new(1.0, 0.0));
    }

    #[test]
    fn json_roundtrip() {
        let s = StatePair::new(
            PeriodicField::from_pairs(2, &[(1, C64::new(1.0, -0.5)), (-2, C64::new(0.25, 0.0))]).unwrap(),
            PeriodicField::mode(2, 1, C64::new(0.0, 3.0)),
        );
        let back = StatePair::from_json(&serde_json::from_str(&serde_json::to_string(&s.to_json()).unwrap()).unwrap()).unwrap();
        assert_eq!(s, back);
    }
}

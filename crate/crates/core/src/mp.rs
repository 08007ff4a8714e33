//! Arbitrary-precision complex arithmetic and dense linear algebra.
//!
//! Gram systems of exponentials are extremely ill conditioned (equilibrated
//! condition numbers of 1e20 and beyond for a dozen modes) and their entries
//! span thousands of binary orders of magnitude, so solves, moment residuals
//! and closed-form terminal states are carried out here with a working
//! precision chosen per problem.

use crate::{Error, Result, C64};
use astro_float::{BigFloat, Consts, RoundingMode, Sign};

pub const RM: RoundingMode = RoundingMode::ToEven;

pub fn consts() -> Consts {
    Consts::new().expect("constant cache allocation")
}

pub fn bf(x: f64, p: usize) -> BigFloat {
    BigFloat::from_f64(x, p)
}

/// Nearest-f64 conversion (truncating the mantissa); saturates to ±inf / 0.
pub fn to_f64(x: &BigFloat) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    let Some((words, _, sign, e, _)) = x.as_raw_parts() else {
        return f64::NAN;
    };
    let top = *words.last().unwrap_or(&0) as f64 / 18446744073709551616.0;
    let e = e as i64;
    let mag = if e > 1100 {
        f64::INFINITY
    } else if e < -1100 {
        0.0
    } else {
        top * 2f64.powi(e as i32)
    };
    if sign == Sign::Neg {
        -mag
    } else {
        mag
    }
}

/// `log₂|x|` to about 1e-15 relative; `-inf` for zero.
pub fn log2_abs(x: &BigFloat) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let Some((words, _, _, e, _)) = x.as_raw_parts() else {
        return f64::NAN;
    };
    let top = *words.last().unwrap_or(&0) as f64 / 18446744073709551616.0;
    e as f64 + top.log2()
}

#[derive(Clone, Debug)]
pub struct Cx {
    pub re: BigFloat,
    pub im: BigFloat,
}

impl Cx {
    pub fn zero(p: usize) -> Self {
        Cx { re: bf(0.0, p), im: bf(0.0, p) }
    }

    pub fn one(p: usize) -> Self {
        Cx { re: bf(1.0, p), im: bf(0.0, p) }
    }

    pub fn from_c64(z: C64, p: usize) -> Self {
        Cx { re: bf(z.re, p), im: bf(z.im, p) }
    }

    pub fn real(x: BigFloat, p: usize) -> Self {
        Cx { re: x, im: bf(0.0, p) }
    }

    pub fn to_c64(&self) -> C64 {
        C64::new(to_f64(&self.re), to_f64(&self.im))
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn add(&self, o: &Cx, p: usize) -> Cx {
        Cx { re: self.re.add(&o.re, p, RM), im: self.im.add(&o.im, p, RM) }
    }

    pub fn sub(&self, o: &Cx, p: usize) -> Cx {
        Cx { re: self.re.sub(&o.re, p, RM), im: self.im.sub(&o.im, p, RM) }
    }

    pub fn neg(&self) -> Cx {
        Cx { re: self.re.neg(), im: self.im.neg() }
    }

    pub fn conj(&self) -> Cx {
        Cx { re: self.re.clone(), im: self.im.neg() }
    }

    pub fn mul(&self, o: &Cx, p: usize) -> Cx {
        let re = self.re.mul(&o.re, p, RM).sub(&self.im.mul(&o.im, p, RM), p, RM);
        let im = self.re.mul(&o.im, p, RM).add(&self.im.mul(&o.re, p, RM), p, RM);
        Cx { re, im }
    }

    pub fn mul_real(&self, s: &BigFloat, p: usize) -> Cx {
        Cx { re: self.re.mul(s, p, RM), im: self.im.mul(s, p, RM) }
    }

    pub fn scale(&self, s: f64, p: usize) -> Cx {
        self.mul_real(&bf(s, p), p)
    }

    pub fn norm_sqr(&self, p: usize) -> BigFloat {
        self.re.mul(&self.re, p, RM).add(&self.im.mul(&self.im, p, RM), p, RM)
    }

    pub fn recip(&self, p: usize) -> Cx {
        let n = self.norm_sqr(p + 64);
        Cx { re: self.re.div(&n, p, RM), im: self.im.neg().div(&n, p, RM) }
    }

    pub fn div(&self, o: &Cx, p: usize) -> Cx {
        self.mul(&o.recip(p + 32), p)
    }

    /// `log₂|z|` (approximate, for pivoting and scale bookkeeping).
    pub fn log2_abs(&self) -> f64 {
        let a = log2_abs(&self.re);
        let b = log2_abs(&self.im);
        let m = a.max(b);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + 0.5 * (1.0 + 2f64.powf(2.0 * (a.min(b) - m))).log2()
    }

    pub fn exp(&self, p: usize, cc: &mut Consts) -> Cx {
        let q = p + 32 + self.log2_abs().max(0.0) as usize;
        let m = self.re.exp(q, RM, cc);
        let c = self.im.cos(q, RM, cc);
        let s = self.im.sin(q, RM, cc);
        Cx { re: m.mul(&c, p, RM), im: m.mul(&s, p, RM) }
    }

    /// Principal square root.
    pub fn sqrt(&self, p: usize) -> Cx {
        if self.is_zero() {
            return Cx::zero(p);
        }
        let q = p + 32;
        let r = self.norm_sqr(q).sqrt(q, RM);
        let half = bf(0.5, q);
        let a = r.add(&self.re, q, RM).mul(&half, q, RM);
        let b = r.sub(&self.re, q, RM).mul(&half, q, RM);
        // Pick the larger of the two half-angle components to avoid cancellation.
        if self.re.is_positive() || self.re.is_zero() {
            let x = a.sqrt(q, RM);
            let y = self.im.div(&x.mul(&bf(2.0, q), q, RM), p, RM);
            Cx { re: x, im: y }
        } else {
            let mut y = b.sqrt(q, RM);
            if self.im.is_negative() {
                y = y.neg();
            }
            let x = self.im.div(&y.mul(&bf(2.0, q), q, RM), p, RM);
            Cx { re: x, im: y }
        }
    }

    /// Exact text form of both parts, see [`hex_bits`].
    pub fn format(&self) -> Result<(String, String)> {
        Ok((hex_bits(&self.re)?, hex_bits(&self.im)?))
    }

    pub fn parse(re: &str, im: &str, p: usize) -> Result<Cx> {
        Ok(Cx { re: parse_hex_bits(re, p)?, im: parse_hex_bits(im, p)? })
    }
}

/// `[-]0x<mantissa words, most significant first>p<binary exponent>`, the
/// value being `0.m × 2^e`; `0` for zero. Round-trips bit for bit.
pub fn hex_bits(x: &BigFloat) -> Result<String> {
    if x.is_zero() {
        return Ok("0".into());
    }
    let (m, _, s, e, _) = x.as_raw_parts().ok_or_else(|| Error::Format("cannot serialize a non-finite value".into()))?;
    let mut out = String::with_capacity(m.len() * 16 + 16);
    if s == Sign::Neg {
        out.push('-');
    }
    out.push_str("0x");
    for w in m.iter().rev() {
        out.push_str(&format!("{w:016x}"));
    }
    out.push_str(&format!("p{e}"));
    Ok(out)
}

pub fn parse_hex_bits(t: &str, p: usize) -> Result<BigFloat> {
    let bad = || Error::Format(format!("bad hex float {:?}", t.chars().take(40).collect::<String>()));
    let t = t.trim();
    if t == "0" {
        return Ok(BigFloat::from_word(0, p.max(64)));
    }
    let (s, body) = match t.strip_prefix('-') {
        Some(b) => (Sign::Neg, b),
        None => (Sign::Pos, t),
    };
    let body = body.strip_prefix("0x").ok_or_else(bad)?;
    let (hex, e) = body.split_once('p').ok_or_else(bad)?;
    let e: i32 = e.parse().map_err(|_| bad())?;
    if hex.is_empty() || hex.len() % 16 != 0 {
        return Err(bad());
    }
    let mut words = Vec::with_capacity(hex.len() / 16);
    for i in (0..hex.len()).step_by(16).rev() {
        words.push(u64::from_str_radix(hex.get(i..i + 16).ok_or_else(bad)?, 16).map_err(|_| bad())?);
    }
    if words.last().map_or(true, |w| w >> 63 == 0) {
        return Err(bad());
    }
    let x = BigFloat::from_raw_parts(&words, words.len() * 64, s, e, false);
    if x.is_nan() {
        return Err(bad());
    }
    Ok(x)
}

/// `(e^{wT} − 1)/w` given `e^{wT}`; the limit `T` at `w = 0`, and a series
/// when `|wT|` is small so the quotient is not lost to cancellation.
pub fn expm1_over(w: &Cx, ewt: &Cx, t: &BigFloat, p: usize) -> Cx {
    if w.is_zero() {
        return Cx::real(t.clone(), p);
    }
    let wt = w.mul_real(t, p + 16);
    if wt.log2_abs() < -8.0 {
        // T·Σ_{j≥0} (wT)^j/(j+1)!
        let mut term = Cx::one(p + 16);
        let mut sum = Cx::one(p + 16);
        let mut j = 1.0;
        loop {
            term = term.mul(&wt, p + 16).scale(1.0 / (j + 1.0), p + 16);
            sum = sum.add(&term, p + 16);
            if term.log2_abs() < -(p as f64) - 8.0 {
                break;
            }
            j += 1.0;
        }
        return sum.mul_real(t, p);
    }
    ewt.sub(&Cx::one(p), p).div(w, p)
}

/// Dense complex matrix, row-major.
#[derive(Clone, Debug)]
pub struct Mat {
    pub n: usize,
    pub m: usize,
    pub a: Vec<Cx>,
}

impl Mat {
    pub fn zeros(n: usize, m: usize, p: usize) -> Self {
        Mat { n, m, a: vec![Cx::zero(p); n * m] }
    }

    pub fn from_fn(n: usize, m: usize, mut f: impl FnMut(usize, usize) -> Cx) -> Self {
        let mut a = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                a.push(f(i, j));
            }
        }
        Mat { n, m, a }
    }

    pub fn get(&self, i: usize, j: usize) -> &Cx {
        &self.a[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, z: Cx) {
        self.a[i * self.m + j] = z;
    }

    pub fn mul_vec(&self, x: &[Cx], p: usize) -> Vec<Cx> {
        (0..self.n)
            .map(|i| {
                let mut s = Cx::zero(p);
                for j in 0..self.m {
                    s = s.add(&self.get(i, j).mul(&x[j], p), p);
                }
                s
            })
            .collect()
    }

    pub fn to_c64(&self) -> Vec<Vec<C64>> {
        (0..self.n).map(|i| (0..self.m).map(|j| self.get(i, j).to_c64()).collect()).collect()
    }
}

/// LU factorization with partial pivoting, `P·A = L·U`.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Mat,
    perm: Vec<usize>,
    p: usize,
}

impl Lu {
    pub fn new(a: &Mat, p: usize) -> Result<Lu> {
        if a.n != a.m {
            return Err(Error::Numeric("LU needs a square matrix".into()));
        }
        let n = a.n;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for c in 0..n {
            let (piv, mag) = (c..n)
                .map(|r| (r, lu.get(r, c).log2_abs()))
                .fold((c, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b });
            if mag == f64::NEG_INFINITY {
                return Err(Error::Numeric(format!("singular matrix at column {c}")));
            }
            if piv != c {
                for j in 0..n {
                    lu.a.swap(c * n + j, piv * n + j);
                }
                perm.swap(c, piv);
            }
            let inv = lu.get(c, c).recip(p);
            for r in (c + 1)..n {
                let f = lu.get(r, c).mul(&inv, p);
                if f.is_zero() {
                    lu.set(r, c, f);
                    continue;
                }
                for j in (c + 1)..n {
                    let v = lu.get(r, j).sub(&f.mul(lu.get(c, j), p), p);
                    lu.set(r, j, v);
                }
                lu.set(r, c, f);
            }
        }
        Ok(Lu { lu, perm, p })
    }

    pub fn solve(&self, b: &[Cx]) -> Vec<Cx> {
        let n = self.lu.n;
        let p = self.p;
        let mut y: Vec<Cx> = self.perm.iter().map(|&i| b[i].clone()).collect();
        for i in 0..n {
            for j in 0..i {
                let v = y[i].sub(&self.lu.get(i, j).mul(&y[j], p), p);
                y[i] = v;
            }
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let v = y[i].sub(&self.lu.get(i, j).mul(&y[j], p), p);
                y[i] = v;
            }
            y[i] = y[i].div(self.lu.get(i, i), p);
        }
        y
    }

    /// Solve, then one step of iterative refinement with the residual
    /// accumulated at twice the working precision.
    pub fn solve_refined(&self, a: &Mat, b: &[Cx]) -> Vec<Cx> {
        let x = self.solve(b);
        let q = 2 * self.p;
        let ax = a.mul_vec(&x, q);
        let r: Vec<Cx> = b.iter().zip(&ax).map(|(bi, ai)| bi.sub(ai, q)).collect();
        let d = self.solve(&r);
        x.iter().zip(&d).map(|(xi, di)| xi.add(di, q)).collect()
    }

    pub fn inverse(&self, a: &Mat) -> Mat {
        let n = a.n;
        let p = self.p;
        let mut inv = Mat::zeros(n, n, p);
        for j in 0..n {
            let mut e = vec![Cx::zero(p); n];
            e[j] = Cx::one(p);
            let x = self.solve_refined(a, &e);
            for (i, xi) in x.into_iter().enumerate() {
                inv.set(i, j, xi);
            }
        }
        inv
    }
}

/// `‖A‖₁·‖A⁻¹‖₁` in log₂, evaluated without overflow.
pub fn log2_cond1(a: &Mat, inv: &Mat) -> f64 {
    fn log2_norm1(m: &Mat) -> f64 {
        (0..m.m)
            .map(|j| log2_sum((0..m.n).map(|i| m.get(i, j).log2_abs())))
            .fold(f64::NEG_INFINITY, f64::max)
    }
    log2_norm1(a) + log2_norm1(inv)
}

/// `log₂ Σ 2^{x_i}`.
pub fn log2_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| 2f64.powf(x - m)).sum::<f64>().log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        for x in [1.0, -3.25, 1e-300, 6.02e23, std::f64::consts::PI] {
            assert_eq!(to_f64(&bf(x, 128)), x);
            assert!((log2_abs(&bf(x, 128)) - x.abs().log2()).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_ops() {
        let p = 256;
        let mut cc = consts();
        let z = Cx::from_c64(C64::new(0.3, -1.7), p);
        let w = Cx::from_c64(C64::new(-2.0, 0.5), p);
        assert!((z.mul(&w, p).to_c64() - C64::new(0.3, -1.7) * C64::new(-2.0, 0.5)).norm() < 1e-15);
        assert!((z.div(&w, p).to_c64() - C64::new(0.3, -1.7) / C64::new(-2.0, 0.5)).norm() < 1e-15);
        assert!((z.exp(p, &mut cc).to_c64() - C64::new(0.3, -1.7).exp()).norm() < 1e-15);
        for s in [C64::new(-4.0, 0.0), C64::new(-4.0, -1e-3), C64::new(3.0, 4.0), C64::new(-0.5, 2.0)] {
            let r = Cx::from_c64(s, p).sqrt(p).to_c64();
            assert!((r - s.sqrt()).norm() < 1e-14, "{s} {r}");
        }
        let (a, b) = z.format().unwrap();
        let back = Cx::parse(&a, &b, p).unwrap();
        assert!(back.sub(&z, p).is_zero());
        let big = Cx::from_c64(C64::new(-1e300, 0.0), p).mul(&Cx::from_c64(C64::new(1e300, 1e-300), p), p);
        let (a, b) = big.format().unwrap();
        assert!(Cx::parse(&a, &b, p).unwrap().sub(&big, p).is_zero());
        assert!(parse_hex_bits("0x12p3", p).is_err());
        assert!(parse_hex_bits("junk", p).is_err());
    }

    #[test]
    fn lu_solves_hilbert() {
        // Hilbert matrix of order 12 has condition ~1e16: hopeless in f64.
        let p = 200;
        let n = 12;
        let a = Mat::from_fn(n, n, |i, j| Cx::real(bf(1.0, p).div(&bf((i + j + 1) as f64, p), p, RM), p));
        let x_true: Vec<Cx> = (0..n).map(|i| Cx::from_c64(C64::new(i as f64, 1.0), p)).collect();
        let b = a.mul_vec(&x_true, p);
        let lu = Lu::new(&a, p).unwrap();
        let x = lu.solve_refined(&a, &b);
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!(xi.sub(ti, p).log2_abs() < -100.0);
        }
        let inv = lu.inverse(&a);
        let c = log2_cond1(&a, &inv);
        assert!(c > 50.0 && c < 60.0, "{c}");
    }

    #[test]
    fn expm1_series_branch() {
        let p = 200;
        let mut cc = consts();
        let t = bf(1.0, p);
        let w = Cx::from_c64(C64::new(1e-5, 2e-5), p);
        let e = w.exp(p, &mut cc);
        let s = expm1_over(&w, &e, &t, p).to_c64();
        let z = C64::new(1e-5, 2e-5);
        let expect = 1.0 + z / 2.0 + z * z / 6.0;
        assert!((s - expect).norm() < 1e-15);
    }
}

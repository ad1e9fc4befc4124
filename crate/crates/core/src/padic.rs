//! Fixed-precision p-adic arithmetic.
//!
//! [`Zmod`] is the hot-path residue ring Z/p^n used by the distribution code.
//! [`PadicNum`] is an element of Q_p carrying its own valuation and absolute
//! precision; every operation reports only the precision its inputs justify.
//! [`CycloExt`] models Q_p(zeta_{p^nu}) for nu <= 2, and [`Character`] covers the
//! continuous characters sigma = psi * chi_s of Z_p^* used by the Mellin transform.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::arith::{max_precision, pow_u64};
use crate::error::{Error, Result};

/// Residue arithmetic modulo p^n with n below the 62-bit ceiling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zmod {
    pub p: u64,
    pub n: u32,
    pub modulus: u64,
}

impl Zmod {
    pub fn new(p: u64, n: u32) -> Result<Self> {
        if p < 3 || !crate::arith::is_prime(p) {
            return Err(Error::domain(format!("p = {p} must be an odd prime")));
        }
        if n == 0 || n > max_precision(p) {
            return Err(Error::unsupported(format!(
                "precision {n} outside 1..={} for p = {p}",
                max_precision(p)
            )));
        }
        Ok(Zmod { p, n, modulus: pow_u64(p, n) })
    }

    #[inline]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        (x % self.modulus as u128) as u64
    }
    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.modulus {
            s - self.modulus
        } else {
            s
        }
    }
    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.modulus - b
        }
    }
    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.modulus - a
        }
    }
    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.modulus as u128) as u64
    }
    pub fn from_i64(&self, x: i64) -> u64 {
        (x as i128).rem_euclid(self.modulus as i128) as u64
    }
    pub fn from_i128(&self, x: i128) -> u64 {
        x.rem_euclid(self.modulus as i128) as u64
    }
    pub fn from_bigint(&self, x: &BigInt) -> u64 {
        let m = BigInt::from(self.modulus);
        x.mod_floor(&m).to_u64().expect("reduced residue fits")
    }
    /// Residue of a p-integral rational.
    pub fn from_rational(&self, x: &BigRational) -> Result<u64> {
        let d = self.from_bigint(x.denom());
        let inv = self
            .inv(d)
            .ok_or_else(|| Error::domain(format!("{x} is not p-integral")))?;
        Ok(self.mul(self.from_bigint(x.numer()), inv))
    }
    pub fn pow(&self, mut a: u64, mut e: u64) -> u64 {
        let mut r = 1 % self.modulus;
        while e > 0 {
            if e & 1 == 1 {
                r = self.mul(r, a);
            }
            a = self.mul(a, a);
            e >>= 1;
        }
        r
    }
    pub fn inv(&self, a: u64) -> Option<u64> {
        crate::arith::inv_mod_i64(a as i64, self.modulus as i64).map(|x| x as u64)
    }
    /// Valuation of a residue, `n` for zero.
    pub fn val(&self, mut a: u64) -> u32 {
        if a == 0 {
            return self.n;
        }
        let mut v = 0;
        while a % self.p == 0 {
            a /= self.p;
            v += 1;
        }
        v
    }
    /// Signed representative in (-p^n/2, p^n/2].
    pub fn signed(&self, a: u64) -> i128 {
        if a > self.modulus / 2 {
            a as i128 - self.modulus as i128
        } else {
            a as i128
        }
    }
    pub fn pow_p(&self, e: u32) -> u64 {
        if e >= self.n {
            0
        } else {
            pow_u64(self.p, e)
        }
    }
    /// Exact division by p^e of a residue divisible by p^e; the result lives mod p^(n-e).
    pub fn div_p_pow(&self, a: u64, e: u32) -> u64 {
        debug_assert!(self.val(a) >= e);
        a / pow_u64(self.p, e)
    }
}

const EXACT: i64 = i64::MAX;

/// An element of Q_p known modulo p^abs_prec, or an exact zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadicNum {
    p: u64,
    val: i64,
    unit: u64,
    rel: u32,
}

impl PadicNum {
    pub fn exact_zero(p: u64) -> Self {
        PadicNum { p, val: EXACT, unit: 0, rel: 0 }
    }

    /// Zero known modulo p^abs_prec.
    pub fn zero(p: u64, abs_prec: i64) -> Self {
        PadicNum { p, val: abs_prec, unit: 0, rel: 0 }
    }

    pub fn one(p: u64, prec: i64) -> Self {
        Self::from_i128(p, 1, prec)
    }

    fn clamp_rel(p: u64, rel: i64) -> u32 {
        rel.min(max_precision(p) as i64) as u32
    }

    /// Builds p^val * unit where unit is a p-adic unit known mod p^rel.
    fn normalized(p: u64, val: i64, unit: u128, rel: i64) -> Self {
        if rel <= 0 {
            return Self::zero(p, val + rel.max(0));
        }
        let rel = Self::clamp_rel(p, rel);
        let m = pow_u64(p, rel) as u128;
        PadicNum { p, val, unit: (unit % m) as u64, rel }
    }

    /// Splits an arbitrary residue into valuation and unit, keeping abs precision `abs`.
    fn from_residue_at(p: u64, base_val: i64, mut r: u128, rel: i64) -> Self {
        if rel <= 0 {
            return Self::zero(p, base_val + rel.max(0));
        }
        let m = pow_u64(p, Self::clamp_rel(p, rel)) as u128;
        r %= m;
        if r == 0 {
            return Self::zero(p, base_val + rel);
        }
        let mut t = 0i64;
        while r % p as u128 == 0 {
            r /= p as u128;
            t += 1;
        }
        Self::normalized(p, base_val + t, r, rel - t)
    }

    pub fn from_i128(p: u64, n: i128, abs_prec: i64) -> Self {
        if n == 0 {
            return Self::zero(p, abs_prec);
        }
        let v = crate::arith::vp_i128(p, n) as i64;
        if v >= abs_prec {
            return Self::zero(p, abs_prec);
        }
        let rel = Self::clamp_rel(p, abs_prec - v);
        let m = pow_u64(p, rel) as i128;
        let u = (n / (p as i128).pow(v as u32)).rem_euclid(m);
        PadicNum { p, val: v, unit: u as u64, rel }
    }

    pub fn from_rational(p: u64, x: &BigRational, abs_prec: i64) -> Self {
        if x.is_zero() {
            return Self::zero(p, abs_prec);
        }
        let pb = BigInt::from(p);
        let mut num = x.numer().clone();
        let mut den = x.denom().clone();
        let mut v = 0i64;
        while (&num % &pb).is_zero() {
            num /= &pb;
            v += 1;
        }
        while (&den % &pb).is_zero() {
            den /= &pb;
            v -= 1;
        }
        if v >= abs_prec {
            return Self::zero(p, abs_prec);
        }
        let rel = Self::clamp_rel(p, abs_prec - v);
        let z = Zmod { p, n: rel, modulus: pow_u64(p, rel) };
        let u = z.mul(z.from_bigint(&num), z.inv(z.from_bigint(&den)).expect("unit denominator"));
        PadicNum { p, val: v, unit: u, rel }
    }

    pub fn from_ratio_i64(p: u64, num: i64, den: i64, abs_prec: i64) -> Self {
        Self::from_rational(p, &BigRational::new(num.into(), den.into()), abs_prec)
    }

    /// Integral element from a residue mod p^n.
    pub fn from_residue(p: u64, r: u64, n: u32) -> Self {
        Self::from_residue_at(p, 0, r as u128, n as i64)
    }

    pub fn prime(&self) -> u64 {
        self.p
    }
    pub fn is_exact_zero(&self) -> bool {
        self.val == EXACT
    }
    /// True for exact zero and for zero at the current precision.
    pub fn is_zero(&self) -> bool {
        self.rel == 0
    }
    /// Valuation; for a zero at precision t this is the lower bound t.
    pub fn valuation(&self) -> i64 {
        self.val
    }
    /// Absolute precision, `i64::MAX` for exact zero.
    pub fn abs_prec(&self) -> i64 {
        if self.is_exact_zero() {
            EXACT
        } else {
            self.val + self.rel as i64
        }
    }
    pub fn rel_prec(&self) -> u32 {
        self.rel
    }
    pub fn unit_part(&self) -> u64 {
        self.unit
    }

    /// Drops precision to at most `abs`.
    pub fn truncate(&self, abs: i64) -> Self {
        if self.is_exact_zero() {
            return Self::zero(self.p, abs);
        }
        if abs >= self.abs_prec() {
            return *self;
        }
        Self::normalized(self.p, self.val, self.unit as u128, abs - self.val)
    }

    /// Residue modulo p^n of an integral element known to at least that precision.
    pub fn residue(&self, n: u32) -> Result<u64> {
        if self.is_exact_zero() {
            return Ok(0);
        }
        if self.val < 0 {
            return Err(Error::domain("element is not integral"));
        }
        if self.abs_prec() < n as i64 {
            return Err(Error::precision(format!(
                "residue mod p^{n} requested from element known mod p^{}",
                self.abs_prec()
            )));
        }
        if self.rel == 0 || self.val >= n as i64 {
            return Ok(0);
        }
        let m = pow_u64(self.p, n) as u128;
        let pv = pow_u64(self.p, self.val as u32) as u128;
        Ok(((self.unit as u128 % m) * pv % m) as u64)
    }

    fn add_impl(&self, o: &Self) -> Self {
        debug_assert_eq!(self.p, o.p);
        if self.is_exact_zero() {
            return *o;
        }
        if o.is_exact_zero() {
            return *self;
        }
        let abs = self.abs_prec().min(o.abs_prec());
        let v = self.val.min(o.val);
        if v >= abs {
            return Self::zero(self.p, abs);
        }
        let rel = Self::clamp_rel(self.p, abs - v) as i64;
        let abs = v + rel;
        let m = pow_u64(self.p, rel as u32) as u128;
        let term = |x: &Self| -> u128 {
            if x.rel == 0 || x.val >= abs {
                0
            } else {
                (x.unit as u128 % m) * pow_u64(x.p, (x.val - v) as u32) as u128 % m
            }
        };
        let s = (term(self) + term(o)) % m;
        Self::from_residue_at(self.p, v, s, rel)
    }

    pub fn inverse(&self) -> Result<Self> {
        if self.rel == 0 {
            return Err(Error::precision(format!(
                "inverting an element that is zero modulo p^{}",
                self.val
            )));
        }
        let z = Zmod { p: self.p, n: self.rel, modulus: pow_u64(self.p, self.rel) };
        Ok(PadicNum { p: self.p, val: -self.val, unit: z.inv(self.unit).unwrap(), rel: self.rel })
    }

    pub fn checked_div(&self, o: &Self) -> Result<Self> {
        Ok(*self * o.inverse()?)
    }

    pub fn pow(&self, e: i64) -> Result<Self> {
        if e < 0 {
            return self.inverse()?.pow(-e);
        }
        if e == 0 {
            return Ok(Self::one(self.p, self.abs_prec().max(1).min(max_precision(self.p) as i64)));
        }
        let mut r = *self;
        for _ in 1..e {
            r = r * *self;
        }
        Ok(r)
    }

    /// Multiplies by p^e exactly.
    pub fn shift(&self, e: i64) -> Self {
        if self.is_exact_zero() {
            return *self;
        }
        PadicNum { val: self.val + e, ..*self }
    }

    /// Equality modulo the smaller of the two precisions.
    pub fn agrees_with(&self, o: &Self) -> bool {
        (*self - *o).is_zero()
    }

    /// Valuation of the difference, capped at the shared precision.
    pub fn agreement(&self, o: &Self) -> i64 {
        (*self - *o).valuation()
    }

    /// Small rational a/b congruent to this element, via lattice reduction.
    pub fn rational_reconstruction(&self) -> Option<BigRational> {
        if self.is_zero() {
            return Some(BigRational::zero());
        }
        let m = BigInt::from(self.p).pow(self.rel);
        let bound = num_integer::Roots::sqrt(&(&m / 2));
        let (mut r0, mut r1) = (m.clone(), BigInt::from(self.unit));
        let (mut t0, mut t1) = (BigInt::zero(), BigInt::one());
        while r1 > bound {
            let q = &r0 / &r1;
            let r2 = &r0 - &q * &r1;
            let t2 = &t0 - &q * &t1;
            r0 = std::mem::replace(&mut r1, r2);
            t0 = std::mem::replace(&mut t1, t2);
        }
        if t1.is_zero() || t1.abs() > bound {
            return None;
        }
        let mut x = BigRational::new(r1, t1);
        let pb = BigRational::from_integer(BigInt::from(self.p));
        if self.val >= 0 {
            for _ in 0..self.val {
                x *= &pb;
            }
        } else {
            for _ in 0..(-self.val) {
                x /= &pb;
            }
        }
        Some(x)
    }
}

impl Add for PadicNum {
    type Output = PadicNum;
    fn add(self, o: Self) -> Self {
        self.add_impl(&o)
    }
}

impl Neg for PadicNum {
    type Output = PadicNum;
    fn neg(self) -> Self {
        if self.rel == 0 {
            return self;
        }
        let m = pow_u64(self.p, self.rel);
        PadicNum { unit: m - self.unit, ..self }
    }
}

impl Sub for PadicNum {
    type Output = PadicNum;
    fn sub(self, o: Self) -> Self {
        self.add_impl(&-o)
    }
}

impl Mul for PadicNum {
    type Output = PadicNum;
    fn mul(self, o: Self) -> Self {
        debug_assert_eq!(self.p, o.p);
        if self.is_exact_zero() || o.is_exact_zero() {
            return Self::exact_zero(self.p);
        }
        let val = self.val + o.val;
        let rel = self.rel.min(o.rel);
        if rel == 0 {
            return Self::zero(self.p, val);
        }
        let m = pow_u64(self.p, rel) as u128;
        let u = (self.unit as u128 % m) * (o.unit as u128 % m) % m;
        PadicNum { p: self.p, val, unit: u as u64, rel }
    }
}

impl fmt::Display for PadicNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_exact_zero() {
            return write!(f, "0");
        }
        if self.rel == 0 {
            return write!(f, "O({}^{})", self.p, self.val);
        }
        write!(f, "{}*{}^{} + O({}^{})", self.unit, self.p, self.val, self.p, self.abs_prec())
    }
}

/// Square root in Q_p by Hensel lifting; the root congruent to the smaller
/// residue mod p is returned.
pub fn sqrt(x: &PadicNum) -> Result<PadicNum> {
    let p = x.prime();
    if x.is_zero() {
        return Ok(PadicNum::zero(p, x.abs_prec() / 2));
    }
    let v = x.valuation();
    if v % 2 != 0 {
        return Err(Error::domain(format!("{x} has odd valuation and no square root in Q_p")));
    }
    let rel = x.rel_prec();
    let z = Zmod { p, n: rel, modulus: pow_u64(p, rel) };
    let u = x.unit_part();
    let u0 = u % p;
    let r0 = (1..p).find(|r| r * r % p == u0).ok_or_else(|| Error::domain(format!("{x} is not a square in Q_p")))?;
    // Newton iteration r <- (r + u/r)/2 doubles precision each step
    let inv2 = z.inv(2).unwrap();
    let mut r = r0 % z.modulus;
    for _ in 0..=rel.ilog2() + 1 {
        let rinv = z.inv(r).unwrap();
        r = z.mul(z.add(r, z.mul(u, rinv)), inv2);
    }
    debug_assert_eq!(z.mul(r, r), u % z.modulus);
    Ok(PadicNum::from_residue(p, r, rel).shift(v / 2))
}

/// The fixed topological generator gamma = 1 + p of 1 + pZ_p.
pub fn gamma(p: u64, prec: i64) -> PadicNum {
    PadicNum::from_i128(p, 1 + p as i128, prec)
}

/// Teichmueller representative of a mod p, exact modulo p^prec.
pub fn teichmuller(a: i64, p: u64, prec: u32) -> Result<PadicNum> {
    let z = Zmod::new(p, prec)?;
    Ok(PadicNum::from_residue(p, teichmuller_residue(&z, a)?, prec))
}

/// Teichmueller representative as a residue in `z`.
pub fn teichmuller_residue(z: &Zmod, a: i64) -> Result<u64> {
    let a0 = a.rem_euclid(z.p as i64) as u64;
    if a0 == 0 {
        return Err(Error::domain(format!("{a} is divisible by p = {}", z.p)));
    }
    let mut x = a0 % z.modulus;
    for _ in 0..z.n {
        x = z.pow(x, z.p);
    }
    Ok(x)
}

/// Iwasawa logarithm of a principal unit.
pub fn log_p(x: &PadicNum) -> Result<PadicNum> {
    let p = x.prime();
    if x.is_zero() || x.valuation() != 0 {
        return Err(Error::domain("log_p needs a unit"));
    }
    let one = PadicNum::one(p, x.abs_prec());
    let y = *x - one;
    if !y.is_zero() && y.valuation() < 1 {
        return Err(Error::domain("log_p needs a principal unit (x = 1 mod p)"));
    }
    if y.is_zero() {
        return Ok(PadicNum::zero(p, x.abs_prec()));
    }
    let target = x.abs_prec();
    let vy = y.valuation();
    let mut sum = PadicNum::exact_zero(p);
    let mut pw = y;
    let mut n: i64 = 1;
    loop {
        let vn = crate::arith::vp_i128(p, n as i128) as i64;
        if n * vy - vn >= target {
            break;
        }
        let term = pw.checked_div(&PadicNum::from_i128(p, n as i128, target + vn + 1))?;
        sum = if n % 2 == 1 { sum + term } else { sum - term };
        pw = pw * y;
        n += 1;
    }
    Ok(sum.truncate(target))
}

/// Iwasawa logarithm extended to units via the Teichmueller splitting x = omega(x)<x>.
pub fn log_p_unit(x: &PadicNum) -> Result<PadicNum> {
    let p = x.prime();
    if x.is_zero() || x.valuation() != 0 {
        return Err(Error::domain("log_p_unit needs a unit"));
    }
    let prec = x.abs_prec().min(max_precision(p) as i64) as u32;
    let w = teichmuller((x.unit_part() % p) as i64, p, prec)?;
    log_p(&x.checked_div(&w)?)
}

/// exp_p(x) for v_p(x) >= 1.
pub fn exp_p(x: &PadicNum) -> Result<PadicNum> {
    let p = x.prime();
    if !x.is_zero() && x.valuation() < 1 {
        return Err(Error::domain("exp_p needs v_p(x) >= 1"));
    }
    let target = x.abs_prec().min(max_precision(p) as i64);
    let mut sum = PadicNum::one(p, target);
    if x.is_zero() {
        return Ok(sum);
    }
    let mut term = PadicNum::one(p, target);
    let mut n: i64 = 1;
    let mut vfact = 0i64;
    loop {
        vfact += crate::arith::vp_i128(p, n as i128) as i64;
        if n * x.valuation() - vfact >= target {
            break;
        }
        term = (term * *x).checked_div(&PadicNum::from_i128(p, n as i128, target + vfact + 1))?;
        sum = sum + term;
        n += 1;
    }
    Ok(sum.truncate(target))
}

/// log^{[k]}(s) = prod_{j=0}^{k} log_p(gamma^{-j} s).
pub fn log_bracket_k(k: u32, s: &PadicNum) -> Result<PadicNum> {
    let p = s.prime();
    let g_inv = gamma(p, s.abs_prec()).inverse()?;
    let mut prod = PadicNum::one(p, s.abs_prec());
    let mut cur = *s;
    for _ in 0..=k {
        prod = prod * log_p(&cur)?;
        cur = cur * g_inv;
    }
    Ok(prod)
}

/// Q_p(zeta_{p^level}) as polynomials in pi = zeta - 1 modulo the Eisenstein
/// minimal polynomial of pi.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycloExt {
    pub p: u64,
    pub level: u32,
    pub coeffs: Vec<PadicNum>,
}

impl CycloExt {
    pub fn degree(p: u64, level: u32) -> usize {
        (pow_u64(p, level - 1) * (p - 1)) as usize
    }

    /// Coefficients c_0..c_{d-1} of the monic minimal polynomial of pi.
    fn min_poly(p: u64, level: u32) -> Vec<BigInt> {
        let q = pow_u64(p, level - 1) as usize;
        let d = Self::degree(p, level);
        // Phi_{p^level}(1 + X) = sum_{i<p} (1 + X)^{i q}
        let mut c = vec![BigInt::zero(); d + 1];
        for i in 0..p as usize {
            let n = i * q;
            let mut b = BigInt::one();
            for j in 0..=n {
                c[j] += &b;
                b = b * BigInt::from(n - j) / BigInt::from(j + 1);
            }
        }
        debug_assert!(c[d].is_one());
        c.truncate(d);
        c
    }

    pub fn check_level(p: u64, level: u32) -> Result<()> {
        if level == 0 || level > 2 {
            return Err(Error::unsupported(format!(
                "cyclotomic level {level}: only 1 <= level <= 2 is supported"
            )));
        }
        let _ = p;
        Ok(())
    }

    pub fn from_padic(level: u32, x: PadicNum) -> Result<Self> {
        let p = x.prime();
        Self::check_level(p, level)?;
        let d = Self::degree(p, level);
        let mut coeffs = vec![PadicNum::exact_zero(p); d];
        coeffs[0] = x;
        Ok(CycloExt { p, level, coeffs })
    }

    /// zeta = 1 + pi at the given precision.
    pub fn zeta(p: u64, level: u32, prec: i64) -> Result<Self> {
        let mut z = Self::from_padic(level, PadicNum::one(p, prec))?;
        if z.coeffs.len() > 1 {
            z.coeffs[1] = PadicNum::one(p, prec);
        } else {
            // degree 1 only when p = 2, excluded
            return Err(Error::domain("degenerate cyclotomic extension"));
        }
        Ok(z)
    }

    pub fn add(&self, o: &Self) -> Self {
        CycloExt {
            p: self.p,
            level: self.level,
            coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| *a + *b).collect(),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        CycloExt {
            p: self.p,
            level: self.level,
            coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| *a - *b).collect(),
        }
    }

    pub fn scale(&self, c: &PadicNum) -> Self {
        CycloExt { p: self.p, level: self.level, coeffs: self.coeffs.iter().map(|a| *a * *c).collect() }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let d = self.coeffs.len();
        let p = self.p;
        let mut prod = vec![PadicNum::exact_zero(p); 2 * d - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_exact_zero() {
                continue;
            }
            for (j, b) in o.coeffs.iter().enumerate() {
                prod[i + j] = prod[i + j] + *a * *b;
            }
        }
        let mp = Self::min_poly(p, self.level);
        for top in (d..2 * d - 1).rev() {
            let c = prod[top];
            if c.is_exact_zero() {
                continue;
            }
            for (i, m) in mp.iter().enumerate() {
                if m.is_zero() {
                    continue;
                }
                let mi = PadicNum::from_rational(p, &BigRational::from_integer(m.clone()), EXACT / 2);
                prod[top - d + i] = prod[top - d + i] - c * mi;
            }
            prod[top] = PadicNum::exact_zero(p);
        }
        prod.truncate(d);
        CycloExt { p, level: self.level, coeffs: prod }
    }

    pub fn pow(&self, mut e: u64) -> Self {
        let p = self.p;
        let prec = self.coeffs.iter().map(|c| c.abs_prec()).min().unwrap_or(EXACT);
        let mut r = Self::from_padic(self.level, PadicNum::one(p, prec.min(max_precision(p) as i64))).unwrap();
        let mut b = self.clone();
        while e > 0 {
            if e & 1 == 1 {
                r = r.mul(&b);
            }
            b = b.mul(&b);
            e >>= 1;
        }
        r
    }

    /// Valuation normalized by v(p) = 1, as a rational; None when zero at precision.
    pub fn valuation(&self) -> Option<Ratio<i64>> {
        let d = self.coeffs.len() as i64;
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| Ratio::new(c.valuation() * d + i as i64, d))
            .min()
    }

    /// Minimum absolute precision over the coefficients.
    pub fn abs_prec(&self) -> i64 {
        self.coeffs.iter().map(|c| c.abs_prec()).min().unwrap_or(EXACT)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }
}

/// Value of a character: in Q_p or in a cyclotomic extension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CharValue {
    Padic(PadicNum),
    Cyclo(CycloExt),
}

impl CharValue {
    pub fn is_zero(&self) -> bool {
        match self {
            CharValue::Padic(x) => x.is_zero(),
            CharValue::Cyclo(x) => x.is_zero(),
        }
    }
    pub fn mul(&self, o: &Self) -> Self {
        match (self, o) {
            (CharValue::Padic(a), CharValue::Padic(b)) => CharValue::Padic(*a * *b),
            (CharValue::Padic(a), CharValue::Cyclo(b)) | (CharValue::Cyclo(b), CharValue::Padic(a)) => {
                CharValue::Cyclo(b.scale(a))
            }
            (CharValue::Cyclo(a), CharValue::Cyclo(b)) => CharValue::Cyclo(a.mul(b)),
        }
    }
    pub fn agrees_with(&self, o: &Self) -> bool {
        match (self, o) {
            (CharValue::Padic(a), CharValue::Padic(b)) => a.agrees_with(b),
            (CharValue::Cyclo(a), CharValue::Cyclo(b)) => a.sub(b).is_zero(),
            (CharValue::Padic(a), CharValue::Cyclo(b)) | (CharValue::Cyclo(b), CharValue::Padic(a)) => {
                CycloExt::from_padic(b.level, *a).map(|x| x.sub(b).is_zero()).unwrap_or(false)
            }
        }
    }
}

/// Principal-unit part chi_s of a character, through the parameter s = chi(gamma).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SParam {
    /// s = gamma^j, so chi_s(<z>) = <z>^j.
    Power(i64),
    /// An explicit s with |s - 1| < 1.
    Value(PadicNum),
}

/// A continuous character sigma = psi * chi_s of Z_p^*, optionally with a wild
/// finite-order part sending gamma to zeta_{p^level}^r.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Character {
    pub p: u64,
    /// Exponent i of the tame part omega^i, taken mod p - 1.
    pub tame: u64,
    /// Wild finite-order part: (level, r) with gamma -> zeta_{p^level}^r.
    pub wild: Option<(u32, u64)>,
    pub s: SParam,
}

impl Character {
    pub fn trivial(p: u64) -> Self {
        Character { p, tame: 0, wild: None, s: SParam::Power(0) }
    }

    /// t -> t^j.
    pub fn power(p: u64, j: i64) -> Self {
        Character { p, tame: j.rem_euclid(p as i64 - 1) as u64, wild: None, s: SParam::Power(j) }
    }

    /// phi * t^j where phi = omega^tame times the wild part; stored with its
    /// canonical (psi, s) decomposition.
    pub fn special(p: u64, phi_tame: u64, wild: Option<(u32, u64)>, j: i64) -> Result<Self> {
        if let Some((level, _)) = wild {
            CycloExt::check_level(p, level)?;
        }
        Ok(Character {
            p,
            tame: (phi_tame as i64 + j).rem_euclid(p as i64 - 1) as u64,
            wild: wild.filter(|(_, r)| r % pow_u64(p, 2) != 0),
            s: SParam::Power(j),
        })
    }

    pub fn from_s(p: u64, tame: u64, s: PadicNum) -> Result<Self> {
        let d = s - PadicNum::one(p, s.abs_prec());
        if !d.is_zero() && d.valuation() < 1 {
            return Err(Error::domain("s must satisfy |s - 1| < 1"));
        }
        Ok(Character { p, tame: tame % (p - 1), wild: None, s: SParam::Value(s) })
    }

    /// Exponent n of the conductor p^n (0 for unramified).
    pub fn conductor_exponent(&self) -> u32 {
        match self.wild {
            Some((level, _)) => level + 1,
            None if self.tame % (self.p - 1) != 0 => 1,
            None => 0,
        }
    }

    /// Parity: sigma(-1) = (-1)^tame.
    pub fn parity(&self) -> i32 {
        if self.tame % 2 == 0 {
            1
        } else {
            -1
        }
    }
}

/// x(z) = log_p<z>/log_p(gamma), a p-adic integer.
fn gamma_exponent(z: &PadicNum) -> Result<PadicNum> {
    let p = z.prime();
    let lg = log_p(&gamma(p, z.abs_prec() + 1))?;
    log_p_unit(z)?.checked_div(&lg)
}

/// Evaluates sigma at a unit z.
pub fn char_eval(sigma: &Character, z: &PadicNum, prec: u32) -> Result<CharValue> {
    let p = sigma.p;
    if z.is_zero() || z.valuation() != 0 {
        return Err(Error::domain("characters are evaluated on units only"));
    }
    let z = z.truncate(prec as i64);
    let w = teichmuller((z.unit_part() % p) as i64, p, prec)?;
    let tame = w.pow(sigma.tame as i64)?;
    let principal = z.checked_div(&w)?;
    let chi = match &sigma.s {
        SParam::Power(j) => principal.pow(*j)?,
        SParam::Value(s) => {
            let x = gamma_exponent(&z)?;
            exp_p(&(x * log_p(s)?))?
        }
    };
    let base = tame * chi;
    match sigma.wild {
        None => Ok(CharValue::Padic(base)),
        Some((level, r)) => {
            let x = gamma_exponent(&z)?;
            let order = pow_u64(p, level);
            let xe = x.residue(level)? as u128 * r as u128 % order as u128;
            let zeta = CycloExt::zeta(p, level, prec as i64)?;
            Ok(CharValue::Cyclo(zeta.pow(xe as u64).scale(&base)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_laws_and_precision() {
        let p = 5;
        let a = PadicNum::from_i128(p, 7, 6);
        let b = PadicNum::from_i128(p, 25 * 3, 4);
        let s = a + b;
        assert_eq!(s.abs_prec(), 4);
        let m = a * b;
        // valuation 2 plus min relative precision 2
        assert_eq!(m.valuation(), 2);
        assert_eq!(m.abs_prec(), 4);
        assert_eq!(m.residue(4).unwrap(), (7 * 75) % 625);
    }

    #[test]
    fn exact_zero_and_zero_at_precision() {
        let p = 3;
        let z = PadicNum::exact_zero(p);
        let x = PadicNum::from_i128(p, 5, 4);
        assert_eq!(z + x, x);
        assert!((z * x).is_exact_zero());
        let t = x - x;
        assert!(t.is_zero() && !t.is_exact_zero());
        assert_eq!(t.abs_prec(), 4);
        assert!(t.inverse().is_err());
    }

    #[test]
    fn division_by_p_tracks_valuation() {
        let p = 3;
        let x = PadicNum::from_i128(p, 2, 5);
        let y = x.checked_div(&PadicNum::from_i128(p, 27, 10)).unwrap();
        assert_eq!(y.valuation(), -3);
        assert_eq!(y.abs_prec(), 2);
    }

    #[test]
    fn rational_round_trip() {
        let p = 3;
        let x = PadicNum::from_ratio_i64(p, 2, 3, 12);
        assert_eq!(x.valuation(), -1);
        assert_eq!(x.rational_reconstruction().unwrap(), BigRational::new(2.into(), 3.into()));
        let y = PadicNum::from_ratio_i64(p, -13, 9, 12);
        assert_eq!(y.rational_reconstruction().unwrap(), BigRational::new((-13).into(), 9.into()));
    }

    #[test]
    fn teichmuller_fixed_points() {
        assert_eq!(teichmuller(1, 7, 8).unwrap(), PadicNum::one(7, 8));
        let m = teichmuller(6, 7, 8).unwrap();
        assert!(m.agrees_with(&PadicNum::from_i128(7, -1, 8)));
        assert!(teichmuller(14, 7, 3).is_err());
    }

    #[test]
    fn teichmuller_of_two_mod_625() {
        // independent oracle: 2^(5^k) stabilises mod 5^4
        let mut x: u128 = 2;
        for _ in 0..10 {
            x = (0..5).fold(1u128, |acc, _| acc * x % 625);
        }
        let t = teichmuller(2, 5, 4).unwrap();
        assert_eq!(t.residue(4).unwrap() as u128, x);
        assert_eq!(x, 182);
    }

    #[test]
    fn log_of_one_and_homomorphism() {
        let p = 3;
        assert!(log_p(&PadicNum::one(p, 10)).unwrap().is_zero());
        let g = gamma(p, 12);
        let lg = log_p(&g).unwrap();
        let lg2 = log_p(&(g * g)).unwrap();
        assert!(lg2.agrees_with(&(lg + lg)));
        assert_eq!(lg.valuation(), 1);
        assert!(exp_p(&lg).unwrap().agrees_with(&g));
    }

    #[test]
    fn log_domain_errors() {
        assert!(log_p(&PadicNum::from_i128(5, 2, 6)).is_err());
        assert!(log_p(&PadicNum::from_i128(5, 10, 6)).is_err());
    }

    #[test]
    fn log_bracket_zeros() {
        let p = 3;
        let g = gamma(p, 12);
        assert!(log_bracket_k(0, &PadicNum::one(p, 12)).unwrap().is_zero());
        for j in 0..=2 {
            assert!(log_bracket_k(2, &g.pow(j).unwrap()).unwrap().is_zero());
        }
        let v = log_bracket_k(0, &g).unwrap();
        assert!(v.agrees_with(&log_p(&g).unwrap()));
        assert!(!v.is_zero());
    }

    #[test]
    fn cyclotomic_zeta_has_right_order() {
        for (p, level) in [(3u64, 1u32), (3, 2), (5, 1)] {
            let z = CycloExt::zeta(p, level, 8).unwrap();
            let one = CycloExt::from_padic(level, PadicNum::one(p, 8)).unwrap();
            let n = pow_u64(p, level);
            assert!(z.pow(n).sub(&one).is_zero());
            assert!(!z.pow(n / p).sub(&one).is_zero());
            let pi = z.sub(&one);
            assert_eq!(pi.valuation().unwrap(), Ratio::new(1, CycloExt::degree(p, level) as i64));
        }
    }

    #[test]
    fn square_roots() {
        let d = PadicNum::from_i128(3, -11, 10);
        let r = sqrt(&d).unwrap();
        assert!((r * r).agrees_with(&d));
        let d = PadicNum::from_i128(5, -16 * 25, 12);
        let r = sqrt(&d).unwrap();
        assert_eq!(r.valuation(), 1);
        assert!((r * r).agrees_with(&d));
        assert!(sqrt(&PadicNum::from_i128(5, 2, 6)).is_err());
        assert!(sqrt(&PadicNum::from_i128(5, 5, 6)).is_err());
    }

    #[test]
    fn characters_basic() {
        let p = 5;
        let z = PadicNum::from_i128(p, 7, 10);
        let triv = Character::trivial(p);
        assert!(char_eval(&triv, &z, 10).unwrap().agrees_with(&CharValue::Padic(PadicNum::one(p, 10))));
        let sq = Character::power(p, 2);
        assert!(char_eval(&sq, &z, 10).unwrap().agrees_with(&CharValue::Padic(z * z)));
        let u = PadicNum::from_i128(p, 1 + 5 * 3, 10);
        let g2 = gamma(p, 12).pow(2).unwrap();
        let chi = Character::from_s(p, 0, g2).unwrap();
        assert!(char_eval(&chi, &u, 10).unwrap().agrees_with(&CharValue::Padic(u * u)));
        assert!(char_eval(&triv, &PadicNum::from_i128(p, 10, 5), 5).is_err());
    }
}

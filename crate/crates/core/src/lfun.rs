//! Mellin transforms of symbol values: coset moments, special values, L-series
//! per tame branch, e_p factors, divisibility and admissibility checks, and
//! secondary L-functions from an eigen-flag.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{BoundarySymbol, Cusp, HeckeOp, PathKind};
use crate::error::{Error, Result};
use crate::linalg::{solve, ModMatrix};
use crate::ovsymb::{EigenFlag, OverconvergentSymbol};
use crate::padic::{char_eval, log_p_unit, teichmuller, CharValue, Character, CycloExt, PadicNum, SParam};

/// A measure on Z_p^* known through its restrictions to cosets a + p^n Z_p.
pub trait CosetMeasure: Sync {
    fn p(&self) -> u64;
    /// Number of u-moments available.
    fn num_moments(&self) -> usize;
    /// iota-sign of the underlying symbol, if definite.
    fn sign(&self) -> Option<i32>;
    /// int u^q 1_{a+p^n Z_p}(z) dmu with z = a + p^n u, for q < num_moments().
    fn u_moments(&self, a: u64, n: u32) -> Result<Vec<PadicNum>>;
}

/// Moments of Phi({oo} - {a/p^n}) as p-adic numbers.
pub fn raw_moments(phi: &OverconvergentSymbol, a: u64, n: u32) -> Result<Vec<PadicNum>> {
    let p = phi.p();
    let pn = (p as i128).checked_pow(n).ok_or_else(|| Error::precision("coset level overflows"))?;
    let x = phi.evaluate_stored(Cusp::INFINITY, Cusp::new(a as i128, pn), PathKind::Floor)?;
    let m = phi.num_moments() as u32;
    Ok(x
        .iter()
        .enumerate()
        .map(|(q, &v)| PadicNum::from_residue(p, v, m).shift(-(q as i64) - phi.denom_exp as i64))
        .collect())
}

/// The measure of a U_p-eigensymbol: restriction to a + p^n Z_p is beta^{-n} Phi({oo} - {a/p^n}).
pub struct EigenMeasure<'a> {
    pub phi: &'a OverconvergentSymbol,
    pub beta: PadicNum,
}

impl CosetMeasure for EigenMeasure<'_> {
    fn p(&self) -> u64 {
        self.phi.p()
    }
    fn num_moments(&self) -> usize {
        self.phi.num_moments()
    }
    fn sign(&self) -> Option<i32> {
        self.phi.sign
    }
    fn u_moments(&self, a: u64, n: u32) -> Result<Vec<PadicNum>> {
        let s = self.beta.pow(-(n as i64))?;
        Ok(raw_moments(self.phi, a, n)?.into_iter().map(|x| x * s).collect())
    }
}

/// Coefficients c[i][j] (j < i) with U_p v_i = beta v_i + sum_j c[i][j] v_j.
pub fn flag_up_coefficients(vectors: &[OverconvergentSymbol], beta: &PadicNum) -> Result<Vec<Vec<PadicNum>>> {
    let mut out = Vec::with_capacity(vectors.len());
    for (i, v) in vectors.iter().enumerate() {
        let z = *v.z();
        let p = z.p;
        let w = v.hecke(HeckeOp::Up)?.sub(&v.scale(beta)?);
        if i == 0 || w.valuation() >= w.precision() {
            out.push(vec![PadicNum::exact_zero(p); i]);
            continue;
        }
        let d = vectors[..i].iter().map(|u| u.denom_exp).chain([w.denom_exp]).max().unwrap();
        let cols: Vec<Vec<u64>> = vectors[..i]
            .iter()
            .map(|u| u.coords().iter().map(|&x| z.mul(x, z.pow_p(d - u.denom_exp))).collect())
            .collect();
        let mut a = ModMatrix::zeros(cols[0].len(), i);
        for (c, col) in cols.iter().enumerate() {
            for (r, &x) in col.iter().enumerate() {
                a.set(r, c, x);
            }
        }
        let b: Vec<u64> = w.coords().iter().map(|&x| z.mul(x, z.pow_p(d - w.denom_exp))).collect();
        let sol = solve(&z, &a, &b, z.n.div_ceil(2));
        if (sol.residual_val as i64) < w.precision() / 2 {
            return Err(Error::inconsistent(format!("U_p does not preserve the flag (residual {})", sol.residual_val)));
        }
        let prec = z.n - sol.max_pivot_val;
        out.push(
            sol.x.iter().map(|&x| PadicNum::from_residue(p, x % z.pow_p(prec), prec).shift(-(sol.denom_exp as i64))).collect(),
        );
    }
    Ok(out)
}

/// The measure attached to the i-th vector of a flag: restriction to a + p^n Z_p
/// is (U_p^{-n} v_i)({oo} - {a/p^n}), with U_p^{-n} expanded on the flag.
pub struct FlagMeasure<'a> {
    pub vectors: &'a [OverconvergentSymbol],
    pub coeffs: Vec<Vec<PadicNum>>,
    pub beta: PadicNum,
    pub index: usize,
}

impl<'a> FlagMeasure<'a> {
    pub fn new(flag: &'a EigenFlag, beta: &PadicNum, index: usize) -> Result<Self> {
        if index >= flag.e {
            return Err(Error::domain("flag index out of range"));
        }
        Ok(FlagMeasure { vectors: &flag.vectors, coeffs: flag_up_coefficients(&flag.vectors, beta)?, beta: *beta, index })
    }

    /// Row `index` of U_p^{-n} in the flag basis.
    fn inverse_power_row(&self, n: u32) -> Result<Vec<PadicNum>> {
        let p = self.beta.prime();
        let e = self.index + 1;
        let binv = self.beta.inverse()?;
        // N[i][j] = c[i][j] / beta, strictly lower triangular
        let nmat: Vec<Vec<PadicNum>> = (0..e)
            .map(|i| (0..e).map(|j| if j < i { self.coeffs[i][j] * binv } else { PadicNum::exact_zero(p) }).collect())
            .collect();
        let mut row: Vec<PadicNum> = (0..e).map(|j| if j == self.index { one(p) } else { PadicNum::exact_zero(p) }).collect();
        let mut acc = row.clone();
        let mut binom = BigInt::one();
        for r in 1..e {
            row = (0..e).map(|j| (0..e).fold(PadicNum::exact_zero(p), |s, l| s + row[l] * nmat[l][j])).collect();
            // C(-n, r) = (-1)^r C(n + r - 1, r)
            binom = binom * BigInt::from(n as usize + r - 1) / BigInt::from(r);
            let c = if r % 2 == 0 { binom.clone() } else { -binom.clone() };
            let c = PadicNum::from_rational(p, &BigRational::from_integer(c), EXACT);
            for (a, x) in acc.iter_mut().zip(&row) {
                *a = *a + c * *x;
            }
        }
        let bn = self.beta.pow(-(n as i64))?;
        Ok(acc.into_iter().map(|x| x * bn).collect())
    }
}

impl CosetMeasure for FlagMeasure<'_> {
    fn p(&self) -> u64 {
        self.beta.prime()
    }
    fn num_moments(&self) -> usize {
        self.vectors[0].num_moments()
    }
    fn sign(&self) -> Option<i32> {
        self.vectors[self.index].sign
    }
    fn u_moments(&self, a: u64, n: u32) -> Result<Vec<PadicNum>> {
        let row = self.inverse_power_row(n)?;
        let mut out: Option<Vec<PadicNum>> = None;
        for (w, v) in row.iter().zip(self.vectors) {
            if w.is_exact_zero() {
                continue;
            }
            let m: Vec<PadicNum> = raw_moments(v, a, n)?.into_iter().map(|x| x * *w).collect();
            out = Some(match out {
                None => m,
                Some(o) => o.into_iter().zip(m).map(|(x, y)| x + y).collect(),
            });
        }
        out.ok_or_else(|| Error::domain("empty flag row"))
    }
}

const EXACT: i64 = i64::MAX / 4;

fn one(p: u64) -> PadicNum {
    PadicNum::from_i128(p, 1, EXACT)
}

fn int(p: u64, n: i128) -> PadicNum {
    PadicNum::from_i128(p, n, EXACT)
}

/// int z^j 1_{a+p^n Z_p} dmu from the u-moments: sum_q C(j,q) p^{nq} a^{j-q} u_q.
pub fn coset_moment_from(u: &[PadicNum], p: u64, a: u64, n: u32, j: u32) -> Result<PadicNum> {
    if j as usize >= u.len() {
        return Err(Error::precision(format!("moment {j} beyond the {} available", u.len())));
    }
    let mut total = PadicNum::exact_zero(p);
    let mut binom = BigInt::one();
    for (q, uq) in u.iter().enumerate().take(j as usize + 1) {
        let c = &binom * BigInt::from(p).pow(n * q as u32) * BigInt::from(a).pow(j - q as u32);
        total = total + PadicNum::from_rational(p, &BigRational::from_integer(c), EXACT) * *uq;
        binom = binom * BigInt::from(j as usize - q) / BigInt::from(q + 1);
    }
    Ok(total)
}

/// int z^j 1_{a+p^n Z_p} dmu.
pub fn coset_moment(mu: &dyn CosetMeasure, a: u64, n: u32, j: u32) -> Result<PadicNum> {
    check_coset(mu.p(), a, n)?;
    coset_moment_from(&mu.u_moments(a, n)?, mu.p(), a, n, j)
}

fn check_coset(p: u64, a: u64, n: u32) -> Result<()> {
    if a % p == 0 || n == 0 || a >= p.pow(n) {
        return Err(Error::domain(format!("{a} + {p}^{n} Z_{p} is not a unit coset")));
    }
    Ok(())
}

/// The same coset moment from rho_k^*(Phi)({oo} - {a/p^n}) = tau(oo) - tau(a/p^n),
/// exactly, for j <= k.
pub fn coset_moment_boundary(tau: &BoundarySymbol, beta: &BigRational, a: u64, n: u32, j: u32) -> Result<BigRational> {
    let p = tau.basis.p;
    check_coset(p, a, n)?;
    let k = tau.k;
    if j > k {
        return Err(Error::domain("the boundary route gives moments 0..k only"));
    }
    let pn = BigInt::from(p).pow(n);
    let c = tau.eval(Cusp::INFINITY).sub(&tau.eval(Cusp::new(a as i128, p.pow(n) as i128)));
    let fact = |m: u32| (1..=m).fold(BigInt::one(), |f, i| f * BigInt::from(i));
    let mut total = BigRational::zero();
    for i in 0..=j {
        let sign = if i % 2 == 0 { 1 } else { -1 };
        let num = fact(j) * fact(k - i) * pn.pow(i) * BigInt::from(a).pow(j - i) * sign;
        let den = fact(k) * fact(j - i);
        total += &c.coeffs[i as usize] * BigRational::new(num, den);
    }
    Ok(total / beta.pow(n as i32))
}

/// The measure of a boundary symbol tau with U_p tau = beta tau, exact through
/// moment k and converted to Q_p at absolute precision `prec`.
pub struct BoundaryMeasure<'a> {
    pub tau: &'a BoundarySymbol,
    pub beta: BigRational,
    pub sign: Option<i32>,
    pub prec: i64,
}

impl BoundaryMeasure<'_> {
    /// int ((z - a)/p^n)^q 1_{a+p^n Z_p} dmu for q <= k, exactly.
    pub fn u_moments_exact(&self, a: u64, n: u32) -> Result<Vec<BigRational>> {
        let k = self.tau.k;
        let z: Vec<BigRational> =
            (0..=k).map(|j| coset_moment_boundary(self.tau, &self.beta, a, n, j)).collect::<Result<_>>()?;
        let pn = BigRational::from_integer(BigInt::from(self.tau.basis.p).pow(n));
        let minus_a = BigRational::from_integer(-BigInt::from(a));
        let mut out = Vec::with_capacity(k as usize + 1);
        for q in 0..=k as usize {
            let mut total = BigRational::zero();
            let mut binom = BigInt::one();
            for (i, zi) in z.iter().enumerate().take(q + 1) {
                total += zi * BigRational::from_integer(binom.clone()) * minus_a.pow((q - i) as i32);
                binom = binom * BigInt::from(q - i) / BigInt::from(i + 1);
            }
            out.push(total / pn.pow(q as i32));
        }
        Ok(out)
    }
}

impl CosetMeasure for BoundaryMeasure<'_> {
    fn p(&self) -> u64 {
        self.tau.basis.p
    }
    fn num_moments(&self) -> usize {
        self.tau.k as usize + 1
    }
    fn sign(&self) -> Option<i32> {
        self.sign
    }
    fn u_moments(&self, a: u64, n: u32) -> Result<Vec<PadicNum>> {
        let p = self.p();
        Ok(self.u_moments_exact(a, n)?.iter().map(|x| PadicNum::from_rational(p, x, self.prec)).collect())
    }
}

fn cv_add(a: CharValue, b: CharValue) -> Result<CharValue> {
    Ok(match (a, b) {
        (CharValue::Padic(x), CharValue::Padic(y)) => CharValue::Padic(x + y),
        (CharValue::Cyclo(x), CharValue::Cyclo(y)) => CharValue::Cyclo(x.add(&y)),
        (CharValue::Padic(x), CharValue::Cyclo(y)) | (CharValue::Cyclo(y), CharValue::Padic(x)) => {
            CharValue::Cyclo(CycloExt::from_padic(y.level, x)?.add(&y))
        }
    })
}

fn cv_prec(v: &CharValue) -> i64 {
    match v {
        CharValue::Padic(x) => x.abs_prec(),
        CharValue::Cyclo(x) => x.abs_prec(),
    }
}

/// The value of the L-function at phi t^j.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpecialValue {
    /// phi = omega^tame times the wild part gamma -> zeta_{p^level}^r.
    pub tame: u64,
    pub wild: Option<(u32, u64)>,
    pub j: u32,
    /// Coset level of the Riemann sum.
    pub level: u32,
    pub value: CharValue,
    /// Absolute precision of the value.
    pub precision: i64,
}

impl SpecialValue {
    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }
    /// Valuation (capped by the precision).
    pub fn valuation(&self) -> f64 {
        match &self.value {
            CharValue::Padic(x) if !x.is_zero() => x.valuation() as f64,
            CharValue::Cyclo(x) => x.valuation().map(|r| *r.numer() as f64 / *r.denom() as f64).unwrap_or(self.precision as f64),
            _ => self.precision as f64,
        }
    }
}

/// Exponent of the conductor of the finite-order character omega^tame * wild.
pub fn conductor_exponent(p: u64, tame: u64, wild: Option<(u32, u64)>) -> u32 {
    Character { p, tame: tame % (p - 1), wild, s: SParam::Power(0) }.conductor_exponent()
}

/// sum over a mod p^n of phi(a) int z^j 1_{a+p^n Z_p} dmu, at the level
/// max(1, conductor) + extra_level.
pub fn special_value(
    mu: &dyn CosetMeasure,
    tame: u64,
    wild: Option<(u32, u64)>,
    j: u32,
    extra_level: u32,
) -> Result<SpecialValue> {
    let p = mu.p();
    if let Some((level, _)) = wild {
        CycloExt::check_level(p, level)?;
    }
    let chi = Character { p, tame: tame % (p - 1), wild, s: SParam::Power(0) };
    let level = conductor_exponent(p, tame, wild).max(1) + extra_level;
    let pn = p.pow(level);
    let prec = (mu.num_moments() as u32 + 8).min(crate::arith::max_precision(p));
    let terms = (1..pn)
        .into_par_iter()
        .filter(|a| a % p != 0)
        .map(|a| {
            let m = coset_moment(mu, a, level, j)?;
            let c = char_eval(&chi, &PadicNum::from_i128(p, a as i128, EXACT), prec)?;
            Ok(c.mul(&CharValue::Padic(m)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut value = CharValue::Padic(PadicNum::exact_zero(p));
    for t in terms {
        value = cv_add(value, t)?;
    }
    let precision = cv_prec(&value);
    Ok(SpecialValue { tame: tame % (p - 1), wild, j, level, value, precision })
}

/// e_p(beta, phi t^j) for phi of conductor p^nu; phi(p) = 0 when nu >= 1 and
/// phi(p) = 1 for the trivial character.
pub fn ep_factor(alpha: &PadicNum, beta: &PadicNum, eps_p: i64, k: u32, nu: u32, j: u32) -> Result<PadicNum> {
    if alpha.is_zero() {
        return Err(Error::domain("alpha = 0"));
    }
    let p = alpha.prime();
    let scale = beta.pow(-(nu as i64))?;
    if nu >= 1 {
        return Ok(scale);
    }
    if j > k {
        return Err(Error::domain("j must lie in 0..=k"));
    }
    let ainv = alpha.inverse()?;
    let f1 = one(p) - int(p, eps_p as i128 * (p as i128).pow(k - j)) * ainv;
    let f2 = one(p) - int(p, (p as i128).pow(j)) * ainv;
    Ok(scale * f1 * f2)
}

/// L(psi chi_s) = sum_m c_m T^m with T = log_p(s)/log_p(gamma), psi = omega^tame;
/// s = gamma^j is T = j.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LSeries {
    pub p: u64,
    pub tame: u64,
    /// Coset level used for the log expansion.
    pub level: u32,
    pub coeffs: Vec<PadicNum>,
}

impl LSeries {
    pub fn eval(&self, t: &PadicNum) -> PadicNum {
        let mut acc = PadicNum::exact_zero(self.p);
        for c in self.coeffs.iter().rev() {
            acc = acc * *t + *c;
        }
        acc
    }

    /// Value at s = gamma^j.
    pub fn eval_power(&self, j: i64) -> PadicNum {
        self.eval(&int(self.p, j as i128))
    }

    pub fn scale(&self, c: &PadicNum) -> LSeries {
        LSeries { coeffs: self.coeffs.iter().map(|x| *x * *c).collect(), ..self.clone() }
    }

    pub fn add(&self, o: &LSeries) -> LSeries {
        LSeries { coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| *a + *b).collect(), ..self.clone() }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }
}

fn series_mul(a: &[PadicNum], b: &[PadicNum], len: usize) -> Vec<PadicNum> {
    let p = a[0].prime();
    let mut out = vec![PadicNum::exact_zero(p); len];
    for (i, x) in a.iter().enumerate().take(len) {
        if x.is_exact_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate().take(len - i) {
            out[i + j] = out[i + j] + *x * *y;
        }
    }
    out
}

/// Coefficients in u of (log_p <a + p^n u>)^m / m! for m < terms.
fn log_powers(p: u64, a: u64, n: u32, terms: usize, len: usize, prec: i64) -> Result<Vec<Vec<PadicNum>>> {
    let av = PadicNum::from_i128(p, a as i128, prec);
    let ainv = av.inverse()?;
    let mut lg = vec![log_p_unit(&av)?];
    // log(1 + p^n u / a) = sum_r (-1)^{r+1} (p^n/a)^r u^r / r
    let ratio = ainv.shift(n as i64);
    let mut pw = one(p);
    for r in 1..len {
        pw = pw * ratio;
        let c = pw * PadicNum::from_ratio_i64(p, if r % 2 == 1 { 1 } else { -1 }, r as i64, prec);
        lg.push(c);
    }
    let mut out = Vec::with_capacity(terms);
    let mut cur: Vec<PadicNum> = (0..len).map(|i| if i == 0 { one(p) } else { PadicNum::exact_zero(p) }).collect();
    for m in 0..terms {
        if m > 0 {
            let inv_m = PadicNum::from_ratio_i64(p, 1, m as i64, prec);
            cur = series_mul(&cur, &lg, len).into_iter().map(|x| x * inv_m).collect();
        }
        out.push(cur.clone());
    }
    Ok(out)
}

/// One-variable L-series on the tame branch omega^tame with `terms` coefficients,
/// from log-moments on cosets of level `level` (>= 1).
pub fn lseries(mu: &dyn CosetMeasure, tame: u64, terms: usize, level: u32) -> Result<LSeries> {
    let p = mu.p();
    let level = level.max(1);
    let q = mu.num_moments();
    // extra coefficients bound the truncation error from moments beyond q
    let len = q + 2 * p as usize;
    let prec = (q as i64 + 16).min(crate::arith::max_precision(p) as i64);
    let pn = p.pow(level);
    let parts = (1..pn)
        .into_par_iter()
        .filter(|a| a % p != 0)
        .map(|a| {
            let u = mu.u_moments(a, level)?;
            let lp = log_powers(p, a, level, terms, len, prec)?;
            let w = teichmuller((a % p) as i64, p, prec as u32)?.pow(tame as i64)?;
            // lattice bound for the unknown moments: u_q known to p^{M-q} above the floor
            let floor = u.iter().enumerate().map(|(i, x)| x.abs_prec() + i as i64).min().unwrap_or(0) - q as i64;
            let coeffs: Vec<PadicNum> = lp
                .iter()
                .map(|pm| {
                    let mut s = PadicNum::exact_zero(p);
                    for (c, x) in pm.iter().zip(&u) {
                        s = s + *c * *x;
                    }
                    // moments beyond q are unknown but bounded below by `floor`
                    let tail = pm[q..].iter().filter(|c| !c.is_zero()).map(|c| c.valuation()).min().unwrap_or(prec);
                    (s * w).truncate(tail + floor)
                })
                .collect();
            Ok(coeffs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut coeffs = vec![PadicNum::exact_zero(p); terms];
    for part in parts {
        for (c, x) in coeffs.iter_mut().zip(part) {
            *c = *c + x;
        }
    }
    Ok(LSeries { p, tame: tame % (p - 1), level, coeffs })
}

/// L_i = i! lseries(v_i) for the flag v_0, ..., v_{e-1}.
pub fn secondary_lfunctions(flag: &EigenFlag, beta: &PadicNum, tame: u64, terms: usize) -> Result<Vec<LSeries>> {
    let p = beta.prime();
    let mut out = Vec::with_capacity(flag.e);
    let mut fact = one(p);
    for i in 0..flag.e {
        if i > 0 {
            fact = fact * int(p, i as i128);
        }
        let mu = FlagMeasure::new(flag, beta, i)?;
        out.push(lseries(&mu, tame, terms, 1)?.scale(&fact));
    }
    Ok(out)
}

/// One tested zero of the divisibility check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZeroTest {
    pub j: u32,
    /// Wild twist level (0 for s = gamma^j).
    pub wild_level: u32,
    pub valuation: f64,
    pub precision: i64,
    pub vanishes: bool,
    pub exceptional: bool,
}

/// Vanishing at s = gamma^j and gamma^j zeta for j = 0..=k on the branch omega^tame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DivisibilityReport {
    pub tame: u64,
    pub tests: Vec<ZeroTest>,
    /// All non-exceptional zeros vanish at their precision.
    pub holds: bool,
}

/// Tests the zeros of log^{[k]}(s) on the branch: the L-series at T = j and the
/// twist by a character of conductor p^2 through the Riemann sum. `exception`
/// names a j where vanishing is not required.
pub fn divisibility_check(
    mu: &dyn CosetMeasure,
    series: &LSeries,
    k: u32,
    exception: Option<u32>,
) -> Result<DivisibilityReport> {
    let p = mu.p();
    let mut tests = Vec::new();
    for j in 0..=k {
        let v = series.eval_power(j as i64);
        let exceptional = exception == Some(j);
        tests.push(ZeroTest {
            j,
            wild_level: 0,
            valuation: if v.is_zero() { v.abs_prec() as f64 } else { v.valuation() as f64 },
            precision: v.abs_prec(),
            vanishes: v.is_zero(),
            exceptional,
        });
        let tame = (series.tame as i64 - j as i64).rem_euclid(p as i64 - 1) as u64;
        let sv = special_value(mu, tame, Some((1, 1)), j, 0)?;
        tests.push(ZeroTest {
            j,
            wild_level: 1,
            valuation: sv.valuation(),
            precision: sv.precision,
            vanishes: sv.is_zero(),
            exceptional,
        });
    }
    let holds = tests.iter().all(|t| t.vanishes || t.exceptional);
    Ok(DivisibilityReport { tame: series.tame, tests, holds })
}

/// h-admissibility: v_p(int (z-a)^m 1_{a+p^n} dmu) >= -C + n(m - h).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub h: i64,
    pub depth: u32,
    pub moments: usize,
    /// Smallest C that works at each level 1..=depth.
    pub per_level: Vec<i64>,
    /// The single constant fitted over all levels.
    pub fitted_c: i64,
    /// C does not grow with the level.
    pub holds: bool,
    pub samples: usize,
}

impl AdmissibilityReport {
    /// From samples (n, m, int (z-a)^m 1_{a+p^n} dmu); zeros use their precision
    /// as a lower bound for the valuation.
    pub fn from_samples(h: i64, depth: u32, moments: usize, samples: &[(u32, usize, PadicNum)]) -> Self {
        let mut per_level = vec![i64::MIN; depth as usize];
        for (n, m, x) in samples {
            let v = if x.is_zero() { x.abs_prec() } else { x.valuation() };
            let need = *n as i64 * (*m as i64 - h) - v;
            let slot = &mut per_level[*n as usize - 1];
            *slot = (*slot).max(need);
        }
        let fitted_c = per_level.iter().copied().max().unwrap_or(0);
        let holds = per_level.iter().all(|&c| c <= per_level[0]);
        AdmissibilityReport { h, depth, moments, per_level, fitted_c, holds, samples: samples.len() }
    }
}

/// Samples every unit coset up to `depth` and moments m < `moments`.
pub fn admissibility_check(mu: &dyn CosetMeasure, h: i64, depth: u32, moments: usize) -> Result<AdmissibilityReport> {
    let p = mu.p();
    let moments = moments.min(mu.num_moments());
    let cosets: Vec<(u32, u64)> =
        (1..=depth).flat_map(|n| (1..p.pow(n)).filter(move |a| a % p != 0).map(move |a| (n, a))).collect();
    let samples = cosets
        .par_iter()
        .map(|&(n, a)| {
            let u = mu.u_moments(a, n)?;
            Ok((0..moments).map(|m| (n, m, u[m].shift(n as i64 * m as i64))).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok(AdmissibilityReport::from_samples(h, depth, moments, &samples))
}

/// The boundary-route version for moments m <= k.
pub fn admissibility_check_boundary(tau: &BoundarySymbol, beta: &BigRational, depth: u32) -> Result<AdmissibilityReport> {
    let p = tau.basis.p;
    let k = tau.k;
    let h = crate::arith::vp_i128(p, beta.numer().try_into().unwrap_or(1)) as i64
        - crate::arith::vp_i128(p, beta.denom().try_into().unwrap_or(1)) as i64;
    let mut samples = Vec::new();
    for n in 1..=depth {
        for a in (1..p.pow(n)).filter(|a| a % p != 0) {
            let moms: Vec<BigRational> =
                (0..=k).map(|j| coset_moment_boundary(tau, beta, a, n, j)).collect::<Result<_>>()?;
            // int (z-a)^m = sum_j C(m,j) (-a)^{m-j} int z^j
            for m in 0..=k {
                let mut s = BigRational::zero();
                let mut binom = BigInt::one();
                for j in 0..=m {
                    s += &moms[j as usize] * BigRational::from_integer(&binom * BigInt::from(-(a as i64)).pow(m - j));
                    binom = binom * BigInt::from(m - j) / BigInt::from(j + 1);
                }
                samples.push((n, m as usize, PadicNum::from_rational(p, &s, EXACT)));
            }
        }
    }
    Ok(AdmissibilityReport::from_samples(h, depth, k as usize + 1, &samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{boundary_symbol, eigensystems, refine, FormType, ManinBasis, RootChoice};
    use crate::ovsymb::{lift_naive, up_project};

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn eisenstein_boundary_moments() {
        let b = ManinBasis::new(1, 3).unwrap();
        let tau = boundary_symbol(b, 2, &q(27, 1)).unwrap();
        for n in 1..=3u32 {
            for a in (1..3u64.pow(n)).filter(|a| a % 3 != 0) {
                for j in 1..=2 {
                    let want = if j == 2 { q(1, 3i64.pow(n)) } else { q(0, 1) };
                    assert_eq!(coset_moment_boundary(&tau, &q(27, 1), a, n, j).unwrap(), want);
                }
            }
        }
        let total: BigRational = [1u64, 2].iter().map(|&a| coset_moment_boundary(&tau, &q(27, 1), a, 1, 2).unwrap()).sum();
        assert_eq!(total, q(2, 3));
    }

    #[test]
    fn boundary_measure_total_at_z_k() {
        let beta = q(27, 1);
        let tau = boundary_symbol(ManinBasis::new(1, 3).unwrap(), 2, &beta).unwrap();
        let mu = BoundaryMeasure { tau: &tau, beta: beta.clone(), sign: Some(1), prec: 20 };
        let sv = special_value(&mu, 0, None, 2, 0).unwrap();
        let want = PadicNum::from_rational(3, &q(2, 3), 10);
        match sv.value {
            CharValue::Padic(x) => assert!(x.agrees_with(&want) && x.abs_prec() >= 9),
            v => panic!("unexpected value {v:?}"),
        }
        // u-moments reproduce the z-moments
        let u = mu.u_moments(2, 2).unwrap();
        let direct = coset_moment_boundary(&tau, &beta, 2, 2, 2).unwrap();
        let via = coset_moment_from(&u, 3, 2, 2, 2).unwrap();
        assert!(via.agrees_with(&PadicNum::from_rational(3, &direct, 20)));
    }

    fn x11_eigen(sign: i32, m: usize) -> (OverconvergentSymbol, PadicNum) {
        let b = ManinBasis::new(11, 3).unwrap();
        let (systems, _) = eigensystems(b, 0, 3).unwrap();
        let s = systems.iter().find(|s| s.form_type == FormType::Cuspidal).unwrap();
        let f = refine(&s.eigendata().unwrap(), RootChoice::Ordinary, 30).unwrap();
        let phi = s.refined_eigensymbol(&f, sign, 30).unwrap();
        let lift = lift_naive(&phi, m).unwrap();
        let mut v = up_project(&lift, &f.beta, 60).unwrap().symbol;
        v.sign = Some(sign);
        (v, f.beta)
    }

    #[test]
    fn riemann_refinement_and_parity() {
        let (phi, beta) = x11_eigen(1, 10);
        let mu = EigenMeasure { phi: &phi, beta };
        for (tame, j) in [(0u64, 0u32), (1, 0), (0, 1), (1, 1)] {
            let a = special_value(&mu, tame, None, j, 0).unwrap();
            let b = special_value(&mu, tame, None, j, 1).unwrap();
            assert!(a.value.agrees_with(&b.value), "tame {tame} j {j}");
            let even = (tame + j as u64) % 2 == 0;
            if !even {
                assert!(a.is_zero(), "odd character on the plus part");
            }
        }
    }

    #[test]
    fn lseries_matches_special_values() {
        let (phi, beta) = x11_eigen(1, 10);
        let mu = EigenMeasure { phi: &phi, beta };
        let l = lseries(&mu, 0, 10, 1).unwrap();
        for j in 0..3i64 {
            let sv = special_value(&mu, (-j).rem_euclid(2) as u64, None, j as u32, 0).unwrap();
            let CharValue::Padic(x) = sv.value else { panic!() };
            let y = l.eval_power(j);
            assert!(x.agrees_with(&y), "j={j}: {x} vs {y}");
            assert!(x.agreement(&y) >= 5);
        }
    }

    #[test]
    fn ep_factor_formula() {
        let p = 3;
        let a = PadicNum::from_i128(p, 2, 20);
        let b = PadicNum::from_i128(p, 27, 20);
        let e = ep_factor(&a, &b, 1, 2, 0, 0).unwrap();
        // (1 - 9/2)(1 - 1/2) = -7/4
        assert!(e.agrees_with(&PadicNum::from_ratio_i64(p, -7, 4, 20)));
        let e1 = ep_factor(&a, &b, 1, 2, 1, 0).unwrap();
        assert!(e1.agrees_with(&PadicNum::from_ratio_i64(p, 1, 27, 20)));
    }
}

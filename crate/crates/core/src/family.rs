//! Families of overconvergent symbols over a small weight disc.
//!
//! Weights near the center k are k + w with w in pZ_p, acting through
//! K(z) = omega(z)^k exp((k + w) log_p <z>). Internally the disc variable is
//! u = w / p; coefficients are power series in u truncated modulo (u^D, p^M).
//! In x-coordinates the u^d part of the action is integral when M <= p^2 and
//! D <= p.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::classical::{Cusp, HeckeOp, Mat2, ManinBasis, PathKind, Term};
use crate::dist::{linear_inverse, series_mul, series_pow, ApproxDistribution, SigmaMatrix};
use crate::error::{Error, Result};
use crate::lfun::{lseries, CosetMeasure, EigenMeasure, LSeries};
use crate::linalg::{solve, ModMatrix};
use crate::ovsymb::{BlockOp, EigenFlag, OcSpace, OverconvergentSymbol};
use crate::classical::RefinedForm;
use crate::padic::{log_p, teichmuller, PadicNum, Zmod};

/// Sum_{d<D} r_d w^d with p-adic coefficients, for weights k + w.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyCoeff {
    pub p: u64,
    /// Center weight k.
    pub center: u32,
    /// Tame component k mod (p - 1).
    pub tame: u32,
    pub coeffs: Vec<PadicNum>,
}

impl FamilyCoeff {
    pub fn new(p: u64, center: u32, coeffs: Vec<PadicNum>) -> Self {
        FamilyCoeff { p, center, tame: center % (p as u32 - 1), coeffs }
    }

    pub fn constant(p: u64, center: u32, c: PadicNum, d: usize) -> Self {
        let mut coeffs = vec![PadicNum::exact_zero(p); d];
        coeffs[0] = c;
        Self::new(p, center, coeffs)
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len()
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.p, self.center, self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| *a + *b).collect())
    }

    pub fn mul(&self, o: &Self) -> Self {
        let d = self.coeffs.len().min(o.coeffs.len());
        let mut out = vec![PadicNum::exact_zero(self.p); d];
        for (i, a) in self.coeffs.iter().enumerate().take(d) {
            for (j, b) in o.coeffs.iter().enumerate().take(d - i) {
                out[i + j] = out[i + j] + *a * *b;
            }
        }
        Self::new(self.p, self.center, out)
    }

    /// Value at w = w0.
    pub fn eval(&self, w0: &PadicNum) -> PadicNum {
        let mut acc = PadicNum::exact_zero(self.p);
        for c in self.coeffs.iter().rev() {
            acc = acc * *w0 + *c;
        }
        acc
    }

    /// From coefficients in u = w / p stored as residues.
    fn from_u_residues(z: &Zmod, center: u32, res: &[u64], denom_exp: u32) -> Self {
        let coeffs = res
            .iter()
            .enumerate()
            .map(|(d, &r)| PadicNum::from_residue(z.p, r, z.n).shift(-(d as i64) - denom_exp as i64))
            .collect();
        Self::new(z.p, center, coeffs)
    }
}

/// Power series in u modulo (u^D, p^M).
fn ps_mul(z: &Zmod, a: &[u64], b: &[u64]) -> Vec<u64> {
    let d = a.len().min(b.len());
    let mut out = vec![0u64; d];
    for i in 0..d {
        for j in 0..d - i {
            out[i + j] = z.add(out[i + j], z.mul(a[i], b[j]));
        }
    }
    out
}

fn ps_inv(z: &Zmod, a: &[u64]) -> Result<Vec<u64>> {
    let c = z.inv(a[0]).ok_or_else(|| Error::domain("power series with non-unit constant term"))?;
    let mut out = vec![0u64; a.len()];
    out[0] = c;
    for n in 1..a.len() {
        let mut s = 0;
        for i in 1..=n {
            s = z.add(s, z.mul(a[i], out[n - i]));
        }
        out[n] = z.neg(z.mul(s, c));
    }
    Ok(out)
}

fn ps_pow(z: &Zmod, a: &[u64], e: u32) -> Vec<u64> {
    let mut out = vec![0u64; a.len()];
    out[0] = 1 % z.modulus;
    for _ in 0..e {
        out = ps_mul(z, &out, a);
    }
    out
}

/// Residue of u0 = w0 / p modulo p^n.
fn disc_point(z: &Zmod, w0: &PadicNum) -> Result<u64> {
    if w0.is_exact_zero() || (w0.is_zero() && w0.abs_prec() >= z.n as i64 + 1) {
        return Ok(0);
    }
    if w0.valuation() < 1 {
        return Err(Error::domain(format!("w0 = {w0} is outside the disc v_p(w) >= 1")));
    }
    w0.shift(-1).residue(z.n)
}

/// K(a + cz) = sum_{d, n} K[d][n] w^d z^n for weights k + w, truncated to
/// D powers of w and M powers of z.
pub fn k_eval(p: u64, k: u32, a: i64, c: i64, d: usize, m: usize, prec: i64) -> Result<Vec<Vec<PadicNum>>> {
    if a.rem_euclid(p as i64) == 0 || c.rem_euclid(p as i64) != 0 {
        return Err(Error::domain("K needs p not dividing a and p dividing c"));
    }
    let work = prec + 2 * m as i64 + 4;
    let ap = PadicNum::from_i128(p, a as i128, work);
    let omega = teichmuller(a, p, work as u32)?;
    let log_a = log_p(&ap.checked_div(&omega)?)?;
    let ratio = PadicNum::from_i128(p, c as i128, work).checked_div(&ap)?;
    let zero = || vec![PadicNum::exact_zero(p); m];
    // L = log<a> + log(1 + (c/a) z)
    let mut l = zero();
    l[0] = log_a;
    let mut rp = PadicNum::one(p, work);
    for (n, ln) in l.iter_mut().enumerate().skip(1) {
        rp = rp * ratio;
        let t = rp.checked_div(&PadicNum::from_i128(p, n as i128, work))?;
        *ln = if n % 2 == 1 { t } else { -t };
    }
    let mul = |x: &[PadicNum], y: &[PadicNum]| {
        let mut out = zero();
        for (i, a) in x.iter().enumerate() {
            for (j, b) in y.iter().enumerate().take(m - i) {
                out[i + j] = out[i + j] + *a * *b;
            }
        }
        out
    };
    // K_0 = (a + cz)^k
    let mut k0 = zero();
    k0[0] = PadicNum::one(p, work);
    let lin = {
        let mut v = zero();
        v[0] = ap;
        if m > 1 {
            v[1] = PadicNum::from_i128(p, c as i128, work);
        }
        v
    };
    for _ in 0..k {
        k0 = mul(&k0, &lin);
    }
    let mut out = Vec::with_capacity(d);
    let mut cur = k0;
    for e in 0..d {
        if e > 0 {
            let lc = mul(&cur, &l);
            let inv = PadicNum::from_i128(p, e as i128, work);
            cur = lc.iter().map(|x| x.checked_div(&inv)).collect::<Result<Vec<_>>>()?;
        }
        out.push(cur.iter().map(|x| x.truncate(prec)).collect());
    }
    Ok(out)
}

/// x-coordinate action matrices A_0..A_{D-1} of g in the variable u = w / p.
///
/// Row j of A_d holds the t-coefficients of (a + c't)^k (pL)^d / d!
/// ((pb + dt)/(a + c't))^j with L = log<a> + log(1 + c't/a) and t = pz.
pub fn family_action_matrices(z: &Zmod, k: u32, g: &SigmaMatrix, m: usize, dd: usize) -> Result<Vec<ModMatrix>> {
    let p = z.p;
    if dd > p as usize {
        return Err(Error::unsupported(format!("family truncation D = {dd} exceeds p = {p}")));
    }
    let g = g.mat();
    let work = z.n as i64 + 4;
    let ap = PadicNum::from_i128(p, g.a, work);
    let omega = teichmuller(g.a.rem_euclid(p as i128) as i64, p, work as u32)?;
    let c1 = g.c / p as i128;
    let ratio = PadicNum::from_i128(p, c1, work).checked_div(&ap)?;
    let pp = PadicNum::from_i128(p, p as i128, work);
    let mut pl = vec![0u64; m];
    pl[0] = (pp * log_p(&ap.checked_div(&omega)?)?).residue(z.n)?;
    let mut rp = PadicNum::one(p, work);
    for (n, x) in pl.iter_mut().enumerate().skip(1) {
        rp = rp * ratio;
        let t = (pp * rp).checked_div(&PadicNum::from_i128(p, n as i128, work))?;
        if !t.is_zero() && t.valuation() < 0 {
            return Err(Error::unsupported(format!("M = {m} exceeds p^2: the family action is not integral")));
        }
        let t = if n % 2 == 1 { t } else { -t };
        *x = t.truncate(z.n as i64).residue(z.n)?;
    }
    let a = z.from_i128(g.a);
    let cz = z.from_i128(c1);
    let mut lin = vec![0u64; m];
    lin[0] = a;
    if m > 1 {
        lin[1] = cz;
    }
    let k0 = series_pow(z, &lin, k as u64, m);
    let inv = linear_inverse(z, a, cz, m)?;
    let mut num = vec![0u64; m];
    num[0] = z.from_i128(g.b * p as i128);
    if m > 1 {
        num[1] = z.from_i128(g.d);
    }
    let r = series_mul(z, &num, &inv, m);
    let mut out = Vec::with_capacity(dd);
    let mut e = k0;
    for d in 0..dd {
        if d > 0 {
            let di = z.inv(z.from_i64(d as i64)).expect("d < p");
            e = series_mul(z, &e, &pl, m).into_iter().map(|x| z.mul(x, di)).collect();
        }
        let mut a = ModMatrix::zeros(m, m);
        let mut cur = e.clone();
        for j in 0..m {
            a.data[j * m..(j + 1) * m].copy_from_slice(&cur);
            if j + 1 < m {
                cur = series_mul(z, &cur, &r, m);
            }
        }
        out.push(a);
    }
    Ok(out)
}

/// A distribution with family coefficients: x[d][j] is the u^d part of x_j.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyDistribution {
    pub k: u32,
    pub z: Zmod,
    pub x: Vec<Vec<u64>>,
    pub denom_exp: u32,
}

impl FamilyDistribution {
    pub fn truncation(&self) -> usize {
        self.x.len()
    }

    /// The j-th moment as a series in w.
    pub fn moment(&self, j: usize) -> FamilyCoeff {
        let res: Vec<u64> = self.x.iter().map(|v| v[j]).collect();
        let mut c = FamilyCoeff::from_u_residues(&self.z, self.k, &res, self.denom_exp);
        for x in c.coeffs.iter_mut() {
            *x = x.shift(-(j as i64));
        }
        c
    }

    /// act_family: the right action of g, coefficientwise in w.
    pub fn act(&self, g: &SigmaMatrix) -> Result<Self> {
        let m = self.x[0].len();
        let mats = family_action_matrices(&self.z, self.k, g, m, self.x.len())?;
        Ok(FamilyDistribution { x: apply_series(&self.z, &mats, &self.x), ..self.clone() })
    }

    /// Evaluation of every coefficient at w = w0.
    pub fn specialize(&self, w0: &PadicNum) -> Result<ApproxDistribution> {
        let u0 = disc_point(&self.z, w0)?;
        let x = eval_series(&self.z, &self.x, u0);
        Ok(ApproxDistribution::from_xcoords(&self.z, self.k as i64, &x, self.denom_exp))
    }
}

/// sum_d u^d A_d applied to sum_e u^e x_e, truncated at u^D.
fn apply_series(z: &Zmod, mats: &[ModMatrix], x: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let m = x[0].len();
    (0..x.len())
        .map(|d| {
            let mut out = vec![0u64; m];
            for e in 0..=d {
                for (o, v) in out.iter_mut().zip(mats[d - e].mul_vec(z, &x[e])) {
                    *o = z.add(*o, v);
                }
            }
            out
        })
        .collect()
}

fn eval_series(z: &Zmod, x: &[Vec<u64>], u0: u64) -> Vec<u64> {
    let mut acc = vec![0u64; x[0].len()];
    for v in x.iter().rev() {
        acc = acc.iter().zip(v).map(|(&a, &b)| z.add(z.mul(a, u0), b)).collect();
    }
    acc
}

/// An operator on family symbol values: the u^d part is parts[d].
#[derive(Debug)]
pub struct FamilyOp {
    pub parts: Vec<BlockOp>,
}

impl FamilyOp {
    /// values[d][edge] in, out[d][row] out.
    pub fn apply(&self, z: &Zmod, values: &[Vec<Vec<u64>>]) -> Vec<Vec<Vec<u64>>> {
        let images: Vec<Vec<Vec<Vec<u64>>>> =
            self.parts.par_iter().map(|op| values.iter().map(|v| op.apply(z, v)).collect()).collect();
        (0..values.len())
            .map(|d| {
                let mut out = images[0][d].clone();
                for e in 0..d {
                    for (o, v) in out.iter_mut().zip(&images[d - e][e]) {
                        for (a, b) in o.iter_mut().zip(v) {
                            *a = z.add(*a, *b);
                        }
                    }
                }
                out
            })
            .collect()
    }
}

/// Symb_Gamma(R (x) D) with R = Z_p[u]/(u^D) modulo p^M.
#[derive(Debug)]
pub struct FamilySpace {
    pub basis: Arc<ManinBasis>,
    pub k: u32,
    pub z: Zmod,
    pub d: usize,
    mats: RwLock<HashMap<Mat2, Arc<Vec<ModMatrix>>>>,
    ops: RwLock<HashMap<HeckeOp, Arc<FamilyOp>>>,
    constraints: OnceLock<Arc<FamilyOp>>,
    center: OnceLock<Arc<OcSpace>>,
}

impl FamilySpace {
    pub fn new(basis: Arc<ManinBasis>, k: u32, m: usize, d: usize) -> Result<Arc<Self>> {
        let p = basis.p;
        if d == 0 || d > p as usize {
            return Err(Error::unsupported(format!("family truncation D = {d} must lie in 1..={p}")));
        }
        if m as u64 > p * p {
            return Err(Error::unsupported(format!("M = {m} exceeds p^2 = {}", p * p)));
        }
        Ok(Arc::new(FamilySpace {
            z: Zmod::new(p, m as u32)?,
            basis,
            k,
            d,
            mats: RwLock::new(HashMap::new()),
            ops: RwLock::new(HashMap::new()),
            constraints: OnceLock::new(),
            center: OnceLock::new(),
        }))
    }

    pub fn p(&self) -> u64 {
        self.z.p
    }
    pub fn num_moments(&self) -> usize {
        self.z.n as usize
    }
    pub fn num_edges(&self) -> usize {
        self.basis.num_free()
    }

    /// The weight-k space at the center of the disc.
    pub fn center(&self) -> Result<Arc<OcSpace>> {
        if let Some(c) = self.center.get() {
            return Ok(c.clone());
        }
        let c = OcSpace::new(self.basis.clone(), self.k as i64, self.num_moments())?;
        Ok(self.center.get_or_init(|| c).clone())
    }

    fn matrices(&self, g: &Mat2) -> Result<Arc<Vec<ModMatrix>>> {
        if let Some(a) = self.mats.read().expect("cache lock").get(g) {
            return Ok(a.clone());
        }
        let s = SigmaMatrix::new(self.p(), *g)?;
        let a = Arc::new(family_action_matrices(&self.z, self.k, &s, self.num_moments(), self.d)?);
        self.mats.write().expect("cache lock").insert(*g, a.clone());
        Ok(a)
    }

    fn build(&self, rows: &[Vec<Term>]) -> Result<FamilyOp> {
        let parts = (0..self.d)
            .map(|d| BlockOp::from_matrices(&self.z, self.num_moments(), rows, |g| Ok(Arc::new(self.matrices(g)?[d].clone()))))
            .collect::<Result<Vec<_>>>()?;
        Ok(FamilyOp { parts })
    }

    pub fn op(&self, op: HeckeOp) -> Result<Arc<FamilyOp>> {
        if let Some(b) = self.ops.read().expect("op lock").get(&op) {
            return Ok(b.clone());
        }
        let b = Arc::new(self.build(&self.basis.hecke_terms(op)?)?);
        self.ops.write().expect("op lock").insert(op, b.clone());
        Ok(b)
    }

    pub fn constraint_op(&self) -> Result<Arc<FamilyOp>> {
        if let Some(c) = self.constraints.get() {
            return Ok(c.clone());
        }
        let c = Arc::new(self.build(&self.basis.constraints)?);
        Ok(self.constraints.get_or_init(|| c).clone())
    }

    fn eval_terms(&self, terms: &[Term], values: &[Vec<Vec<u64>>]) -> Result<Vec<Vec<u64>>> {
        let z = &self.z;
        let m = self.num_moments();
        let mut out = vec![vec![0u64; m]; self.d];
        for t in terms {
            let mats = self.matrices(&t.mat)?;
            let x: Vec<Vec<u64>> = values.iter().map(|v| v[t.free as usize].clone()).collect();
            let c = z.from_i64(t.coeff);
            for (o, v) in out.iter_mut().zip(apply_series(z, &mats, &x)) {
                for (a, b) in o.iter_mut().zip(v) {
                    *a = z.add(*a, z.mul(c, b));
                }
            }
        }
        Ok(out)
    }
}

/// A family symbol: values[d][edge] are the u^d parts in x-coordinates,
/// scaled by p^{-denom_exp}.
#[derive(Clone, Debug)]
pub struct FamilySymbol {
    pub space: Arc<FamilySpace>,
    pub values: Vec<Vec<Vec<u64>>>,
    pub denom_exp: u32,
    pub sign: Option<i32>,
}

fn min_val(z: &Zmod, values: &[Vec<Vec<u64>>]) -> u32 {
    values.iter().flatten().flatten().map(|&x| z.val(x)).min().unwrap_or(z.n)
}

impl FamilySymbol {
    pub fn zero(space: Arc<FamilySpace>) -> Self {
        let values = vec![vec![vec![0u64; space.num_moments()]; space.num_edges()]; space.d];
        FamilySymbol { space, values, denom_exp: 0, sign: None }
    }

    pub fn truncation(&self) -> usize {
        self.space.d
    }

    pub fn valuation(&self) -> i64 {
        min_val(&self.space.z, &self.values) as i64 - self.denom_exp as i64
    }

    pub fn precision(&self) -> i64 {
        self.space.num_moments() as i64 - self.denom_exp as i64
    }

    fn with_values(&self, values: Vec<Vec<Vec<u64>>>) -> Self {
        FamilySymbol { values, ..self.clone() }
    }

    fn scaled(&self, e: u32) -> Vec<Vec<Vec<u64>>> {
        let z = &self.space.z;
        let f = z.pow_p(e);
        self.values.iter().map(|d| d.iter().map(|v| v.iter().map(|&x| z.mul(x, f)).collect()).collect()).collect()
    }

    pub fn sub(&self, o: &Self) -> Self {
        let z = &self.space.z;
        let den = self.denom_exp.max(o.denom_exp);
        let a = self.scaled(den - self.denom_exp);
        let b = o.scaled(den - o.denom_exp);
        let values = a
            .iter()
            .zip(&b)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u.iter().zip(v).map(|(&s, &t)| z.sub(s, t)).collect()).collect())
            .collect();
        FamilySymbol { values, denom_exp: den, ..self.clone() }
    }

    /// Multiplication by a power series in u given by residues.
    pub fn scale_series(&self, c: &[u64]) -> Self {
        let z = &self.space.z;
        let values = (0..self.values.len())
            .map(|d| {
                let mut out = vec![vec![0u64; self.space.num_moments()]; self.space.num_edges()];
                for e in 0..=d {
                    for (o, v) in out.iter_mut().zip(&self.values[e]) {
                        for (a, &b) in o.iter_mut().zip(v) {
                            *a = z.add(*a, z.mul(c[d - e], b));
                        }
                    }
                }
                out
            })
            .collect();
        self.with_values(values)
    }

    /// (Phi + s Phi|iota) / 2, coefficientwise.
    pub fn sign_part(&self, s: i32) -> Result<Self> {
        let z = &self.space.z;
        let img = self.hecke(HeckeOp::Iota)?;
        let half = z.inv(2).expect("p is odd");
        let sz = z.from_i64(s as i64);
        let values = self
            .values
            .iter()
            .zip(&img.values)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(u, v)| u.iter().zip(v).map(|(&x, &y)| z.mul(z.add(x, z.mul(sz, y)), half)).collect())
                    .collect()
            })
            .collect();
        Ok(FamilySymbol { values, sign: Some(s), ..self.clone() })
    }

    pub fn hecke(&self, op: HeckeOp) -> Result<Self> {
        let f = self.space.op(op)?;
        Ok(self.with_values(f.apply(&self.space.z, &self.values)))
    }

    /// Valuation of the Manin-relation defect, coefficientwise in w.
    pub fn constraint_residual(&self) -> Result<i64> {
        let c = self.space.constraint_op()?.apply(&self.space.z, &self.values);
        Ok(min_val(&self.space.z, &c) as i64 - self.denom_exp as i64)
    }

    /// The u^d coefficient as a symbol at the center weight.
    pub fn coefficient(&self, d: usize) -> Result<OverconvergentSymbol> {
        let c = self.space.center()?;
        Ok(OverconvergentSymbol::from_coords(c, &self.values[d].concat(), self.denom_exp, self.sign))
    }

    /// Family value at {r} - {s}: stored u^d parts of its x-coordinates.
    pub fn evaluate_stored(&self, r: Cusp, s: Cusp) -> Result<Vec<Vec<u64>>> {
        self.space.eval_terms(&self.space.basis.divisor_terms(r, s, PathKind::Floor), &self.values)
    }

    pub fn evaluate(&self, r: Cusp, s: Cusp) -> Result<FamilyDistribution> {
        Ok(FamilyDistribution { k: self.space.k, z: self.space.z, x: self.evaluate_stored(r, s)?, denom_exp: self.denom_exp })
    }

    /// Evaluation of every coefficient at w = w0 (v_p(w0) >= 1 or w0 = 0),
    /// as a symbol for the weight character omega^k <.>^{k+w0}.
    pub fn specialize_w(&self, w0: &PadicNum) -> Result<OverconvergentSymbol> {
        let z = &self.space.z;
        let u0 = disc_point(z, w0)?;
        let space = if u0 == 0 && (w0.is_exact_zero() || w0.is_zero()) {
            self.space.center()?
        } else {
            OcSpace::with_shift(self.space.basis.clone(), self.space.k as i64, *w0, self.space.num_moments())?
        };
        let coords: Vec<u64> = (0..self.space.num_edges())
            .flat_map(|e| {
                let x: Vec<Vec<u64>> = self.values.iter().map(|d| d[e].clone()).collect();
                eval_series(z, &x, u0)
            })
            .collect();
        Ok(OverconvergentSymbol::from_coords(space, &coords, self.denom_exp, self.sign))
    }
}

/// Outcome of the family lift of an ordinary eigensymbol.
#[derive(Clone, Debug)]
pub struct FamilyLift {
    pub symbol: FamilySymbol,
    /// U_p-eigenvalue beta(u) as residues in u = w / p.
    pub beta_u: Vec<u64>,
    /// Inconsistency valuation of each degree's linear solve.
    pub solve_residuals: Vec<u32>,
    /// Valuation of (U_p - beta(w)) Phi.
    pub residual: i64,
}

impl FamilyLift {
    pub fn beta(&self) -> FamilyCoeff {
        FamilyCoeff::from_u_residues(&self.symbol.space.z, self.symbol.space.k, &self.beta_u, 0)
    }

    /// beta(w0).
    pub fn beta_at(&self, w0: &PadicNum) -> Result<PadicNum> {
        let z = &self.symbol.space.z;
        let u0 = disc_point(z, w0)?;
        let v = self.beta_u.iter().rev().fold(0u64, |acc, &b| z.add(z.mul(acc, u0), b));
        Ok(PadicNum::from_residue(z.p, v, z.n))
    }
}

/// phi divided by the largest power of p dividing its stored values; the
/// digits lost this way are dropped together with as many moments.
fn primitive(phi: &OverconvergentSymbol) -> Result<OverconvergentSymbol> {
    let z = phi.z();
    let v = phi.values.iter().flatten().map(|&x| z.val(x)).min().unwrap_or(z.n);
    if v == 0 {
        return Ok(phi.clone());
    }
    if v >= z.n {
        return Err(Error::domain("eigensymbol is zero at its precision"));
    }
    let m = phi.num_moments() - v as usize;
    let space = OcSpace::new(phi.space.basis.clone(), phi.weight(), m)?;
    let f = z.pow_p(v);
    let coords: Vec<u64> = phi.values.iter().flat_map(|e| e[..m].iter().map(|&x| (x / f) % space.z.modulus)).collect();
    Ok(OverconvergentSymbol::from_coords(space, &coords, phi.denom_exp.saturating_sub(v), phi.sign))
}

fn add_into(z: &Zmod, acc: &mut [Vec<u64>], v: &[Vec<u64>], c: u64) {
    for (a, b) in acc.iter_mut().zip(v) {
        for (x, &y) in a.iter_mut().zip(b) {
            *x = z.add(*x, z.mul(c, y));
        }
    }
}

/// Family lift of an ordinary U_p-eigensymbol phi with eigenvalue beta.
///
/// Degree by degree in u, solves the Manin relations, the sign condition,
/// sum_e U_{d-e} Phi_e = sum_e beta_{d-e} Phi_e and lambda(Phi_d) = 0 for a
/// unit coordinate lambda of phi. U_p - beta is invertible off the line of
/// phi, so each degree has a unique solution.
pub fn family_lift(phi: &OverconvergentSymbol, beta: &PadicNum, d: usize) -> Result<FamilyLift> {
    if beta.valuation() != 0 {
        return Err(Error::domain("family lift needs an ordinary (unit) eigenvalue"));
    }
    if phi.weight() < 0 || phi.space.shift.is_some() {
        return Err(Error::domain("family lift needs a symbol of non-negative integer weight"));
    }
    let sign = phi.sign.ok_or_else(|| Error::domain("family lift needs a symbol of definite sign"))?;
    let phi = &primitive(phi)?;
    let space = FamilySpace::new(phi.space.basis.clone(), phi.weight() as u32, phi.num_moments(), d)?;
    let z = space.z;
    let m = space.num_moments();
    let ne = space.num_edges();
    let lam = phi
        .values
        .concat()
        .iter()
        .position(|&x| x != 0 && z.val(x) == 0)
        .ok_or_else(|| Error::domain("eigensymbol has no unit coordinate"))?;
    let up = space.op(HeckeOp::Up)?;
    let cons = space.constraint_op()?;
    let beta0 = beta.residue(z.n)?;
    // [C_0; U_0 - beta_0; iota - s; lambda] in y-coordinates, with a last column for beta_d
    let mut u0 = up.parts[0].dense(ne);
    for i in 0..u0.rows {
        u0.set(i, i, z.sub(u0.get(i, i), beta0));
    }
    let iop = space.op(HeckeOp::Iota)?;
    let mut iota = iop.parts[0].dense(ne);
    let sz = z.from_i64(sign as i64);
    for i in 0..iota.rows {
        iota.set(i, i, z.sub(iota.get(i, i), sz));
    }
    let c0 = cons.parts[0].dense(ne);
    let n = ne * m;
    let x0: Vec<u64> = phi.values.concat();
    let rows = c0.rows + 2 * n + 1;
    let mut a = ModMatrix::zeros(rows, n + 1);
    for (r0, blk) in [(0, &c0), (c0.rows, &u0), (c0.rows + n, &iota)] {
        for r in 0..blk.rows {
            for c in 0..n {
                a.set(r0 + r, c, z.mul(blk.get(r, c), z.pow_p((c % m) as u32)));
            }
        }
    }
    for (i, &x) in x0.iter().enumerate() {
        a.set(c0.rows + i, n, z.neg(x));
    }
    a.set(rows - 1, lam, 1);
    let threshold = z.n.div_ceil(2);
    let mut out = FamilySymbol::zero(space.clone());
    out.values[0] = phi.values.clone();
    out.denom_exp = phi.denom_exp;
    out.sign = Some(sign);
    let mut beta_u = vec![beta0];
    let mut solve_residuals = Vec::new();
    for deg in 1..d {
        let mut rel = vec![vec![0u64; m]; cons.parts[0].rows.len()];
        let mut eig = vec![vec![0u64; m]; ne];
        let mut sgn = vec![vec![0u64; m]; ne];
        for e in 0..deg {
            add_into(&z, &mut sgn, &iop.parts[deg - e].apply(&z, &out.values[e]), z.neg(1));
            add_into(&z, &mut rel, &cons.parts[deg - e].apply(&z, &out.values[e]), z.neg(1));
            add_into(&z, &mut eig, &up.parts[deg - e].apply(&z, &out.values[e]), z.neg(1));
            if e > 0 {
                add_into(&z, &mut eig, &out.values[e], beta_u[deg - e]);
            }
        }
        let mut b = rel.concat();
        b.extend(eig.concat());
        b.extend(sgn.concat());
        b.push(0);
        let sol = solve(&z, &a, &b, threshold);
        solve_residuals.push(sol.residual_val);
        if sol.residual_val < threshold {
            return Err(Error::inconsistent(format!(
                "family eigen-equation in degree {deg} inconsistent at p^{}",
                sol.residual_val
            )));
        }
        let s = sol.denom_exp;
        let xb = sol.x[n];
        if s > 0 {
            if z.val(xb) < s {
                return Err(Error::precision(format!("beta_{deg} needs a denominator p^{s}")));
            }
            out.values = out.scaled(s);
            out.denom_exp += s;
        }
        beta_u.push(if s > 0 { z.div_p_pow(xb, s) } else { xb });
        let x: Vec<u64> = sol.x[..n].iter().enumerate().map(|(c, &v)| z.mul(v, z.pow_p((c % m) as u32))).collect();
        out.values[deg] = x.chunks(m).map(|c| c.to_vec()).collect();
    }
    let img = out.hecke(HeckeOp::Up)?;
    let residual = img.sub(&out.scale_series(&beta_u)).valuation();
    Ok(FamilyLift { symbol: out, beta_u, solve_residuals, residual })
}

/// Local structure of the family Hecke module through a flag.
#[derive(Clone, Debug, Serialize)]
pub struct RamificationReport {
    pub e: usize,
    pub truncation: usize,
    /// Valuation below which coefficients count as nonzero.
    pub threshold: u32,
    /// p-adic valuations of the u^d coefficients of det(t); None when zero at precision.
    pub det_coeff_vals: Vec<Option<u32>>,
    pub disc_coeff_vals: Vec<Option<u32>>,
    pub det_order: Option<usize>,
    pub disc_order: Option<usize>,
    pub solve_residuals: Vec<u32>,
    /// Whether t is a uniformizer of a ring R[X]/(X^e - u * unit); None when inconclusive.
    pub consistent: Option<bool>,
    /// Why the family solve was inconclusive.
    pub note: Option<String>,
}

type Series = Vec<u64>;

fn u_order(z: &Zmod, s: &[u64], threshold: u32) -> (Vec<Option<u32>>, Option<usize>) {
    let vals: Vec<Option<u32>> = s.iter().map(|&x| Some(z.val(x)).filter(|&v| v < threshold)).collect();
    let ord = vals.iter().position(|v| v.is_some());
    (vals, ord)
}

/// Discriminant of the monic polynomial X^e + sum_{i<e} a_i X^i over the series ring.
fn discriminant(z: &Zmod, a: &[Series], len: usize) -> Option<Series> {
    let c = |n: i64| -> Series {
        let mut v = vec![0u64; len];
        v[0] = z.from_i64(n);
        v
    };
    let lin = |terms: &[(i64, Series)]| -> Series {
        let mut out = vec![0u64; len];
        for (k, t) in terms {
            let kz = z.from_i64(*k);
            for (o, x) in out.iter_mut().zip(t) {
                *o = z.add(*o, z.mul(kz, *x));
            }
        }
        out
    };
    let m = |x: &Series, y: &Series| ps_mul(z, x, y);
    match a.len() {
        1 => Some(c(1)),
        2 => Some(lin(&[(1, m(&a[1], &a[1])), (-4, a[0].clone())])),
        3 => {
            let (cc, b, aa) = (&a[0], &a[1], &a[2]);
            let a2 = m(aa, aa);
            let b2 = m(b, b);
            Some(lin(&[
                (1, m(&a2, &b2)),
                (-4, m(&b2, b)),
                (-4, m(&m(&a2, aa), cc)),
                (-27, m(cc, cc)),
                (18, m(&m(aa, b), cc)),
            ]))
        }
        _ => None,
    }
}

/// Tests whether the family module through an eigen-flag has the expected
/// local structure.
///
/// With g the top flag vector and t the flag's uniformizer, solves degree by
/// degree for a family symbol G(u) through g such that the span of
/// t^i G (i < e) is stable under t and U_p:
/// t^e G = sum_j c_j(u) t^{e-1-j} G and U_p G = sum_j b_j(u) t^{e-1-j} G.
/// The characteristic polynomial of t on this module is
/// X^e - sum_j c_j X^{e-1-j}. For e >= 2 its determinant should have u-order 1
/// and its discriminant u-order e - 1.
pub fn ramification_diagnostic(flag: &EigenFlag, f: &RefinedForm, d: usize) -> RamificationReport {
    let e = flag.e;
    let mut report = RamificationReport {
        e,
        truncation: d,
        threshold: 0,
        det_coeff_vals: Vec::new(),
        disc_coeff_vals: Vec::new(),
        det_order: None,
        disc_order: None,
        solve_residuals: Vec::new(),
        consistent: None,
        note: None,
    };
    let (z, threshold, cser, solve_residuals) = match family_flag_structure(flag, f, d) {
        Ok(x) => x,
        Err(err) => {
            report.note = Some(err.to_string());
            return report;
        }
    };
    // X^e + sum_i a_i X^i with a_i = -c_{e-1-i}
    let coeffs: Vec<Series> = (0..e).map(|i| cser[e - 1 - i].iter().map(|&x| z.neg(x)).collect()).collect();
    let det: Series = if e % 2 == 0 { coeffs[0].clone() } else { coeffs[0].iter().map(|&x| z.neg(x)).collect() };
    (report.det_coeff_vals, report.det_order) = u_order(&z, &det, threshold);
    match discriminant(&z, &coeffs, d) {
        Some(disc) => (report.disc_coeff_vals, report.disc_order) = u_order(&z, &disc, threshold),
        None => report.note = Some(format!("discriminant not implemented for e = {e}")),
    }
    report.consistent = if e == 1 {
        Some(true)
    } else {
        match (report.det_order, report.disc_order) {
            (Some(a), Some(b)) => Some(a == 1 && b == e - 1),
            _ => None,
        }
    };
    report.threshold = threshold;
    report.solve_residuals = solve_residuals;
    report
}

/// Center ring, threshold, structure series c_j(u) and solve residuals.
fn family_flag_structure(flag: &EigenFlag, f: &RefinedForm, d: usize) -> Result<(Zmod, u32, Vec<Series>, Vec<u32>)> {
    let e = flag.e;
    let sign = flag.sign;
    let top = primitive(&flag.vectors[e - 1])?;
    let w = top.weight();
    if w < 0 || top.space.shift.is_some() {
        return Err(Error::domain("ramification diagnostic needs a flag of non-negative integer weight"));
    }
    let space = FamilySpace::new(top.space.basis.clone(), w as u32, top.num_moments(), d)?;
    let z = space.z;
    let m = space.num_moments();
    let ne = space.num_edges();
    let n = ne * m;
    // the flag is only as accurate as its step residuals
    let accuracy = flag.residuals.iter().copied().min().unwrap_or(0).clamp(2, z.n as i64) as u32;
    let threshold = z.n.div_ceil(2).min(accuracy);
    let mut tparts = Vec::new();
    for (op, lam, c) in flag.uniformizer.parts(f)? {
        tparts.push((space.op(op)?, lam.residue(z.n)?, z.from_i64(c)));
    }
    let apply_t = |vals: &[Vec<Vec<u64>>]| -> Vec<Vec<Vec<u64>>> {
        let mut acc: Vec<Vec<Vec<u64>>> = vals.iter().map(|v| vec![vec![0u64; m]; v.len()]).collect();
        for (op, lam, c) in &tparts {
            let img = op.apply(&z, vals);
            for (a, (x, y)) in acc.iter_mut().zip(img.iter().zip(vals)) {
                add_into(&z, a, x, *c);
                add_into(&z, a, y, z.neg(z.mul(*c, *lam)));
            }
        }
        acc
    };
    let up = space.op(HeckeOp::Up)?;
    let cons = space.constraint_op()?;
    let iop = space.op(HeckeOp::Iota)?;
    // dense degree-0 parts
    let mut t0 = ModMatrix::zeros(n, n);
    for (op, lam, c) in &tparts {
        let mut blk = op.parts[0].dense(ne);
        for i in 0..n {
            blk.set(i, i, z.sub(blk.get(i, i), *lam));
        }
        for (o, x) in t0.data.iter_mut().zip(&blk.data) {
            *o = z.add(*o, z.mul(*c, *x));
        }
    }
    let mut tpow = vec![ModMatrix::identity(n, &z)];
    for i in 0..e {
        let next = tpow[i].mul(&z, &t0);
        tpow.push(next);
    }
    let mut g = vec![vec![vec![0u64; m]; ne]; d];
    g[0] = top.values.clone();
    let chain = |g: &[Vec<Vec<u64>>]| -> Vec<Vec<Vec<Vec<u64>>>> {
        let mut out = vec![g.to_vec()];
        for _ in 1..e {
            let next = apply_t(out.last().unwrap());
            out.push(next);
        }
        out.reverse();
        out
    };
    let mut iota = iop.parts[0].dense(ne);
    let sz = z.from_i64(sign as i64);
    for i in 0..n {
        iota.set(i, i, z.sub(iota.get(i, i), sz));
    }
    let c0 = cons.parts[0].dense(ne);
    let lam = g[0]
        .concat()
        .iter()
        .position(|&x| x != 0 && z.val(x) == 0)
        .ok_or_else(|| Error::domain("flag vector has no unit coordinate"))?;
    let to_y = |a: &mut ModMatrix, r0: usize, blk: &ModMatrix| {
        for r in 0..blk.rows {
            for c in 0..n {
                a.set(r0 + r, c, z.mul(blk.get(r, c), z.pow_p((c % m) as u32)));
            }
        }
    };
    // remove from g the part of ker t outside the U_p = beta quotient:
    // g += kappa with t kappa = 0 and (U_p - beta) g = sum_{j<e-1} b_j t^{e-1-j} g
    {
        let beta = f.beta.residue(z.n)?;
        let mut ub = up.parts[0].dense(ne);
        for i in 0..n {
            ub.set(i, i, z.sub(ub.get(i, i), beta));
        }
        let tv: Vec<Vec<u64>> = chain(&g).iter().map(|c| c[0].concat()).collect();
        let rows = 3 * n + c0.rows;
        let mut a = ModMatrix::zeros(rows, n + e - 1);
        for (r0, blk) in [(0, &t0), (n, &ub), (2 * n, &iota), (3 * n, &c0)] {
            to_y(&mut a, r0, blk);
        }
        for (j, v) in tv[..e - 1].iter().enumerate() {
            for (i, &x) in v.iter().enumerate() {
                a.set(n + i, n + j, z.neg(x));
            }
        }
        let mut b = vec![0u64; rows];
        for (i, x) in ub.mul_vec(&z, &tv[e - 1]).into_iter().enumerate() {
            b[n + i] = z.neg(x);
        }
        let sol = solve(&z, &a, &b, threshold);
        if sol.residual_val < threshold {
            return Err(Error::inconsistent("no U_p-stable flag through the top vector at precision"));
        }
        let f = z.pow_p(sol.denom_exp);
        let x: Vec<u64> = sol.x[..n].iter().enumerate().map(|(c, &v)| z.mul(v, z.pow_p((c % m) as u32))).collect();
        for (gv, kv) in g[0].iter_mut().flatten().zip(&x) {
            *gv = z.add(z.mul(*gv, f), *kv);
        }
    }
    let basis0: Vec<Vec<u64>> = chain(&g).iter().map(|c| c[0].concat()).collect();
    // b_j(0) from U_p g = sum_j b_j(0) v_j at the center
    let mut vm = ModMatrix::zeros(n, e);
    for (j, v) in basis0.iter().enumerate() {
        for (i, &x) in v.iter().enumerate() {
            vm.set(i, j, x);
        }
    }
    let ug0 = up.parts[0].apply(&z, &g[0]).concat();
    let sol0 = solve(&z, &vm, &ug0, threshold);
    let mut solve_residuals = vec![sol0.residual_val];
    if sol0.residual_val < threshold || sol0.denom_exp > 0 {
        return Err(Error::inconsistent("the flag span is not U_p-stable at precision"));
    }
    let mut bser: Vec<Series> = sol0.x.iter().map(|&b| {
        let mut s = vec![0u64; d];
        s[0] = b;
        s
    }).collect();
    let mut cser: Vec<Series> = vec![vec![0u64; d]; e];
    let mut ub = up.parts[0].dense(ne);
    for (j, &b) in sol0.x.iter().enumerate() {
        let tp = &tpow[e - 1 - j];
        for (o, x) in ub.data.iter_mut().zip(&tp.data) {
            *o = z.sub(*o, z.mul(b, *x));
        }
    }
    let cols = n + 2 * e;
    let rows = 3 * n + c0.rows + 1;
    let mut a = ModMatrix::zeros(rows, cols);
    for (r0, blk) in [(0, &tpow[e]), (n, &ub), (2 * n, &iota), (3 * n, &c0)] {
        to_y(&mut a, r0, blk);
    }
    for (j, v) in basis0.iter().enumerate() {
        for (i, &x) in v.iter().enumerate() {
            a.set(i, n + j, z.neg(x));
            a.set(n + i, n + e + j, z.neg(x));
        }
    }
    a.set(rows - 1, lam, 1);
    for deg in 1..d {
        let ch = chain(&g);
        let te = apply_t(&ch[0]);
        let ug = up.apply(&z, &g);
        let mut teq = vec![vec![0u64; m]; ne];
        let mut ueq = vec![vec![0u64; m]; ne];
        add_into(&z, &mut teq, &te[deg], z.neg(1));
        add_into(&z, &mut ueq, &ug[deg], z.neg(1));
        for (j, gj) in ch.iter().enumerate() {
            for a in 0..deg {
                add_into(&z, &mut ueq, &gj[deg - a], bser[j][a]);
                if a > 0 {
                    add_into(&z, &mut teq, &gj[deg - a], cser[j][a]);
                }
            }
        }
        let mut sgn = vec![vec![0u64; m]; ne];
        let mut rel = vec![vec![0u64; m]; cons.parts[0].rows.len()];
        for k in 0..deg {
            add_into(&z, &mut sgn, &iop.parts[deg - k].apply(&z, &g[k]), z.neg(1));
            add_into(&z, &mut rel, &cons.parts[deg - k].apply(&z, &g[k]), z.neg(1));
        }
        let mut b = teq.concat();
        b.extend(ueq.concat());
        b.extend(sgn.concat());
        b.extend(rel.concat());
        b.push(0);
        let sol = solve(&z, &a, &b, threshold);
        solve_residuals.push(sol.residual_val);
        if sol.residual_val < threshold {
            return Err(Error::inconsistent(format!(
                "family flag equations in degree {deg} inconsistent at p^{}",
                sol.residual_val
            )));
        }
        let s = sol.denom_exp;
        let coeff = |x: u64| -> Result<u64> {
            if s == 0 {
                Ok(x)
            } else if z.val(x) >= s {
                Ok(z.div_p_pow(x, s))
            } else {
                Err(Error::precision(format!("structure coefficient in degree {deg} needs a denominator")))
            }
        };
        for j in 0..e {
            cser[j][deg] = coeff(sol.x[n + j])?;
            bser[j][deg] = coeff(sol.x[n + e + j])?;
        }
        if s > 0 {
            let f = z.pow_p(s);
            for v in g.iter_mut().flatten().flatten() {
                *v = z.mul(*v, f);
            }
        }
        let x: Vec<u64> = sol.x[..n].iter().enumerate().map(|(c, &v)| z.mul(v, z.pow_p((c % m) as u32))).collect();
        g[deg] = x.chunks(m).map(|c| c.to_vec()).collect();
    }
    Ok((z, threshold, cser, solve_residuals))
}

/// The u^degree part of the family measure beta(u)^{-n} Phi({oo} - {a/p^n}).
struct DegreeMeasure<'a> {
    lift: &'a FamilyLift,
    degree: usize,
}

impl CosetMeasure for DegreeMeasure<'_> {
    fn p(&self) -> u64 {
        self.lift.symbol.space.p()
    }
    fn num_moments(&self) -> usize {
        self.lift.symbol.space.num_moments()
    }
    fn sign(&self) -> Option<i32> {
        self.lift.symbol.sign
    }
    fn u_moments(&self, a: u64, n: u32) -> Result<Vec<PadicNum>> {
        let s = &self.lift.symbol;
        let z = s.space.z;
        let p = z.p;
        let pn = (p as i128).checked_pow(n).ok_or_else(|| Error::precision("coset level overflows"))?;
        let x = s.evaluate_stored(Cusp::INFINITY, Cusp::new(a as i128, pn))?;
        let scale = ps_pow(&z, &ps_inv(&z, &self.lift.beta_u)?, n);
        let xd: Vec<u64> = (0..z.n as usize)
            .map(|q| (0..=self.degree).fold(0, |acc, e| z.add(acc, z.mul(scale[self.degree - e], x[e][q]))))
            .collect();
        Ok(xd
            .iter()
            .enumerate()
            .map(|(q, &v)| PadicNum::from_residue(p, v, z.n).shift(-(q as i64) - s.denom_exp as i64))
            .collect())
    }
}

/// The two-variable L-function: coeffs[d] is the w^d coefficient, an LSeries.
#[derive(Clone, Debug)]
pub struct TwoVariableL {
    pub p: u64,
    pub tame: u64,
    pub coeffs: Vec<LSeries>,
}

impl TwoVariableL {
    /// L(w0, .) as a one-variable series.
    pub fn eval_at(&self, w0: &PadicNum) -> LSeries {
        let mut acc = self.coeffs.last().expect("non-empty").clone();
        for c in self.coeffs.iter().rev().skip(1) {
            acc = acc.scale(w0).add(c);
        }
        acc
    }

    /// {"(d, m)": value} with the precision of each value.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (d, l) in self.coeffs.iter().enumerate() {
            for (m, c) in l.coeffs.iter().enumerate() {
                map.insert(
                    format!("({d}, {m})"),
                    serde_json::json!({ "value": c.to_string(), "precision": c.abs_prec() }),
                );
            }
        }
        serde_json::json!({ "schema": crate::ovsymb::SCHEMA, "p": self.p, "tame": self.tame, "coefficients": map })
    }
}

/// Coefficientwise Mellin transform of a family eigensymbol.
pub fn two_variable_l(lift: &FamilyLift, tame: u64, terms: usize, level: u32) -> Result<TwoVariableL> {
    let p = lift.symbol.space.p();
    let coeffs = (0..lift.symbol.truncation())
        .map(|d| {
            let l = lseries(&DegreeMeasure { lift, degree: d }, tame, terms, level)?;
            Ok(l.scale(&PadicNum::from_i128(p, 1, i64::MAX / 4).shift(-(d as i64))))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TwoVariableL { p, tame, coeffs })
}

/// lseries of specialize_w(Phi, w0) with eigenvalue beta(w0).
pub fn specialized_lseries(lift: &FamilyLift, w0: &PadicNum, tame: u64, terms: usize, level: u32) -> Result<LSeries> {
    let phi = lift.symbol.specialize_w(w0)?;
    let beta = lift.beta_at(w0)?;
    lseries(&EigenMeasure { phi: &phi, beta }, tame, terms, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{eigensystems, refine, FormType, RootChoice};
    use crate::ovsymb::{lift_naive, up_project};

    fn x11_family(m: usize, d: usize) -> (OverconvergentSymbol, PadicNum, FamilyLift) {
        let b = ManinBasis::new(11, 3).unwrap();
        let (systems, _) = eigensystems(b, 0, 3).unwrap();
        let s = systems.iter().find(|s| s.form_type == FormType::Cuspidal).unwrap();
        let f = refine(&s.eigendata().unwrap(), RootChoice::Ordinary, 30).unwrap();
        let phi = s.refined_eigensymbol(&f, 1, 30).unwrap();
        let proj = up_project(&lift_naive(&phi, m).unwrap(), &f.beta, 60).unwrap();
        let sym = proj.symbol.sign_part(1).unwrap().normalize_gauge();
        let lift = family_lift(&sym, &f.beta, d).unwrap();
        (sym, f.beta, lift)
    }

    fn sigma(p: i128) -> impl proptest::strategy::Strategy<Value = SigmaMatrix> {
        use proptest::prelude::*;
        (-30i128..30, -30i128..30, -6i128..6, -30i128..30).prop_filter_map("Sigma_0(p)", move |(a, b, c, d)| {
            let m = Mat2::new(a, b, c * p, d);
            (a.rem_euclid(p) != 0 && m.det() != 0).then(|| SigmaMatrix::new(p as u64, m).unwrap())
        })
    }

    fn lattice(z: &Zmod, dd: usize, m: usize, seed: u64) -> Vec<Vec<u64>> {
        (0..dd).map(|d| (0..m).map(|j| z.mul(z.pow_p(j as u32), seed * 31 + 7 * d as u64 + 13 * j as u64 + 1)).collect()).collect()
    }

    proptest::proptest! {
        #[test]
        fn family_action_law(g in sigma(3), h in sigma(3), seed in 0u64..1000) {
            let z = Zmod::new(3, 8).unwrap();
            let x = lattice(&z, 3, 8, seed);
            let ag = family_action_matrices(&z, 2, &g, 8, 3).unwrap();
            let ah = family_action_matrices(&z, 2, &h, 8, 3).unwrap();
            let agh = family_action_matrices(&z, 2, &g.mul(&h), 8, 3).unwrap();
            proptest::prop_assert_eq!(apply_series(&z, &ah, &apply_series(&z, &ag, &x)), apply_series(&z, &agh, &x));
            proptest::prop_assert_eq!(&ag[0], &crate::dist::action_matrix(&z, 2, &g, 8).unwrap());
        }

        #[test]
        fn family_action_matches_shifted_weights(g in sigma(3), seed in 0u64..1000) {
            // u0 = p^2 makes the neglected u^3 terms vanish mod p^6
            let z = Zmod::new(3, 6).unwrap();
            let x = lattice(&z, 1, 6, seed).remove(0);
            let fam = family_action_matrices(&z, 0, &g, 6, 3).unwrap();
            let u0 = 9u64;
            let sum = fam.iter().rev().fold(vec![0u64; 6], |acc, a| {
                let ax = a.mul_vec(&z, &x);
                acc.iter().zip(ax).map(|(&s, t)| z.add(z.mul(s, u0), t)).collect()
            });
            let w0 = PadicNum::from_i128(3, 27, 40);
            let exact = crate::dist::shifted_action_matrix(&z, 0, &w0, &g, 6).unwrap().mul_vec(&z, &x);
            proptest::prop_assert_eq!(sum, exact);
        }
    }

    #[test]
    fn k_eval_examples() {
        let one = k_eval(3, 2, 1, 0, 3, 5, 10).unwrap();
        assert!(one[0][0].agrees_with(&PadicNum::one(3, 10)));
        assert!(one.iter().flatten().skip(1).all(|c| c.is_zero()));
        // w = 0: (a + cz)^k
        let (a, c) = (7i64, 6i64);
        let kk = k_eval(3, 2, a, c, 2, 5, 10).unwrap();
        let expect = [a * a, 2 * a * c, c * c, 0, 0];
        for (x, e) in kk[0].iter().zip(expect) {
            assert!(x.agrees_with(&PadicNum::from_i128(3, e as i128, 10)));
        }
        // w^1 coefficient = L * (w = 0 value), with L = log<a> + log(1 + cz/a)
        let l = k_eval(3, 0, a, c, 2, 5, 10).unwrap()[1].clone();
        for n in 0..5 {
            let mut s = PadicNum::exact_zero(3);
            for i in 0..=n {
                s = s + l[i] * kk[0][n - i];
            }
            assert!(kk[1][n].agrees_with(&s), "z^{n}");
        }
    }

    #[test]
    fn specialization_at_zero_commutes_with_action() {
        let z = Zmod::new(3, 8).unwrap();
        let mu = FamilyDistribution { k: 2, z, x: lattice(&z, 3, 8, 5), denom_exp: 0 };
        let g = SigmaMatrix::new(3, Mat2::new(4, 1, 9, 7)).unwrap();
        let zero = PadicNum::exact_zero(3);
        let lhs = mu.act(&g).unwrap().specialize(&zero).unwrap();
        let rhs = mu.specialize(&zero).unwrap().act(&g).unwrap();
        assert!(lhs.agrees_with(&rhs));
        let id = SigmaMatrix::new(3, Mat2::IDENTITY).unwrap();
        assert_eq!(mu.act(&id).unwrap(), mu);
    }

    #[test]
    fn family_lift_of_x11() {
        let (sym, beta, lift) = x11_family(9, 3);
        let fam = &lift.symbol;
        assert_eq!(fam.truncation(), 3);
        assert!(lift.beta().coeffs[0].agrees_with(&beta));
        assert!(lift.residual >= 5, "{}", lift.residual);
        assert!(fam.constraint_residual().unwrap() >= 5);
        // the center is the input symbol, made primitive
        let center = fam.specialize_w(&PadicNum::exact_zero(3)).unwrap();
        let base = primitive(&sym).unwrap();
        assert_eq!(center.values, base.values);
        // iota-sign persists in the family
        assert!(fam.sign_part(1).unwrap().sub(fam).valuation() >= 5);
        // U_p commutes with specialization at the center
        let a = fam.hecke(HeckeOp::Up).unwrap().specialize_w(&PadicNum::exact_zero(3)).unwrap();
        assert_eq!(a.values, center.hecke(HeckeOp::Up).unwrap().values);
    }

    #[test]
    fn truncation_one_recovers_the_eigensymbol() {
        let (sym, beta, lift) = x11_family(8, 1);
        assert_eq!(lift.beta_u.len(), 1);
        assert!(lift.beta().coeffs[0].agrees_with(&beta));
        assert_eq!(lift.symbol.values[0], primitive(&sym).unwrap().values);
    }

    #[test]
    fn nearby_weight_specialization_is_nearly_eigen() {
        let (_, _, lift) = x11_family(9, 3);
        // w0 = 9 has u0 = 3: the neglected u^3 terms are O(p^3)
        let w0 = PadicNum::from_i128(3, 9, 40);
        let spec = lift.symbol.specialize_w(&w0).unwrap();
        assert!(spec.residual(HeckeOp::Up, &lift.beta_at(&w0).unwrap()).unwrap() >= 3);
        assert!(spec.constraint_residual().unwrap() >= 3);
    }

    #[test]
    fn two_variable_l_at_center_is_the_center_lseries() {
        let (_, _, lift) = x11_family(9, 3);
        let tv = two_variable_l(&lift, 0, 4, 2).unwrap();
        let zero = PadicNum::exact_zero(3);
        let center = lift.symbol.specialize_w(&zero).unwrap();
        let direct = lseries(&EigenMeasure { phi: &center, beta: lift.beta_at(&zero).unwrap() }, 0, 4, 2).unwrap();
        for (a, b) in tv.coeffs[0].coeffs.iter().zip(&direct.coeffs) {
            assert!(a.agrees_with(b));
        }
        let js = tv.to_json();
        assert!(js["coefficients"]["(0, 0)"]["precision"].is_i64());
    }

    #[test]
    fn ordinary_point_is_etale() {
        use crate::classical::{eigensystems, refine, FormType, RootChoice};
        use crate::ovsymb::{generalized_eigenspace, Uniformizer};
        let (sym, _, _) = x11_family(8, 1);
        let (syms, _) = eigensystems(ManinBasis::new(11, 3).unwrap(), 0, 3).unwrap();
        let s = syms.iter().find(|s| s.form_type == FormType::Cuspidal).unwrap();
        let f = refine(&s.eigendata().unwrap(), RootChoice::Ordinary, 30).unwrap();
        let flag = generalized_eigenspace(&sym, &f, &Uniformizer::UpMinusBeta, 3).unwrap();
        assert_eq!(flag.e, 1);
        let r = ramification_diagnostic(&flag, &f, 3);
        assert_eq!(r.consistent, Some(true));
        assert_eq!(r.disc_order, Some(0));
        assert!(r.note.is_none());
    }

    #[test]
    fn critical_eisenstein_at_regular_prime_is_unramified() {
        use crate::classical::{eigensystems, refine, FormType, RootChoice};
        use crate::ovsymb::{generalized_eigenspace, theta_lift_critical, Uniformizer};
        let (systems, _) = eigensystems(ManinBasis::new(1, 3).unwrap(), 2, 3).unwrap();
        let s = systems.iter().find(|s| s.form_type == FormType::Eisenstein).unwrap();
        let f = refine(&s.eigendata().unwrap(), RootChoice::Critical, 30).unwrap();
        let v = theta_lift_critical(&f, -1, 12, 7).unwrap();
        let flag = generalized_eigenspace(&v, &f, &Uniformizer::UpMinusBeta, 3).unwrap();
        assert_eq!(flag.e, 1);
        // slope 3 with at most p^2 moments leaves the family solve inconclusive
        let r = ramification_diagnostic(&flag, &f, 2);
        assert_eq!(r.e, 1);
        assert_ne!(r.consistent, Some(false));
    }
}

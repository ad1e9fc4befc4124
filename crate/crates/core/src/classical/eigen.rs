//! Hecke eigensystems on Symb(V_k) over Q, refinements and the eigenform interface.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::manin::{HeckeOp, ManinBasis};
use super::{vk_action_matrix, ClassicalSymbol, PadicSymbol, RationalSymbol};
use crate::error::{Error, Result};
use crate::linalg::{kernel_q, rref_q};
use crate::padic::{self, PadicNum};

const TEST_PRIME: u64 = (1 << 61) - 1;

/// A subspace of Symb(V_k), given by an RREF basis in free-edge coordinates.
#[derive(Clone, Debug)]
pub struct SymbolSpace {
    pub basis: Arc<ManinBasis>,
    pub k: u32,
    pub rows: Vec<Vec<BigRational>>,
    pivots: Vec<usize>,
}

impl SymbolSpace {
    fn from_vectors(basis: Arc<ManinBasis>, k: u32, mut rows: Vec<Vec<BigRational>>) -> Self {
        let pivots = rref_q(&mut rows);
        rows.truncate(pivots.len());
        SymbolSpace { basis, k, rows, pivots }
    }

    /// The whole of Symb_Gamma(V_k): free values killed by the constraints.
    pub fn full(basis: Arc<ManinBasis>, k: u32) -> Self {
        let width = basis.num_free() * (k as usize + 1);
        let mut cmat = Vec::new();
        for c in &basis.constraints {
            let mut block = vec![vec![BigRational::zero(); width]; k as usize + 1];
            for t in c {
                let m = vk_action_matrix(k, &t.mat);
                let off = t.free as usize * (k as usize + 1);
                for (i, row) in m.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        block[i][off + j] += BigRational::from_integer(e * BigInt::from(t.coeff));
                    }
                }
            }
            cmat.extend(block);
        }
        let vecs = kernel_q(&cmat, width);
        Self::from_vectors(basis, k, vecs)
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn symbol(&self, i: usize) -> RationalSymbol {
        ClassicalSymbol::from_coords(self.basis.clone(), self.k, &self.rows[i])
    }

    /// Coordinates of a vector lying in the span.
    pub fn coordinates(&self, v: &[BigRational]) -> Vec<BigRational> {
        self.pivots.iter().map(|&c| v[c].clone()).collect()
    }

    pub fn combine(&self, coeffs: &[BigRational]) -> Vec<BigRational> {
        let width = self.rows.first().map_or(0, |r| r.len());
        let mut out = vec![BigRational::zero(); width];
        for (c, row) in coeffs.iter().zip(&self.rows) {
            if c.is_zero() {
                continue;
            }
            for (o, x) in out.iter_mut().zip(row) {
                *o += c * x;
            }
        }
        out
    }

    /// Matrix of a Hecke operator on this (stable) subspace; column i is the image of basis vector i.
    pub fn operator_matrix(&self, op: HeckeOp) -> Result<Vec<Vec<BigRational>>> {
        let d = self.dim();
        let mut m = vec![vec![BigRational::zero(); d]; d];
        for i in 0..d {
            let img = self.symbol(i).hecke(op)?.coords();
            let c = self.coordinates(&img);
            if self.combine(&c) != img {
                return Err(Error::inconsistent(format!("{op:?} does not preserve the subspace")));
            }
            for (r, x) in c.into_iter().enumerate() {
                m[r][i] = x;
            }
        }
        Ok(m)
    }

    /// Kernel of (op - lambda) inside this subspace.
    pub fn eigenspace(&self, op: HeckeOp, lambda: &BigRational) -> Result<SymbolSpace> {
        let mut m = self.operator_matrix(op)?;
        for (i, row) in m.iter_mut().enumerate() {
            row[i] -= lambda;
        }
        let ker = kernel_q(&m, self.dim());
        let vecs = ker.iter().map(|c| self.combine(c)).collect();
        Ok(Self::from_vectors(self.basis.clone(), self.k, vecs))
    }

    /// The +1 or -1 eigenspace of iota.
    pub fn sign_part(&self, sign: i32) -> Result<SymbolSpace> {
        self.eigenspace(HeckeOp::Iota, &BigRational::from_integer(sign.into()))
    }
}

/// Characteristic polynomial modulo a prime (coefficients low to high, monic).
fn charpoly_mod(m: &[Vec<BigRational>], prime: u64) -> Vec<u64> {
    let z = crate::padic::Zmod { p: prime, n: 1, modulus: prime };
    let n = m.len();
    let red = |x: &BigRational| {
        let d = z.from_bigint(x.denom());
        z.mul(z.from_bigint(x.numer()), z.inv(d).expect("denominator hits the test prime"))
    };
    let mut a: Vec<Vec<u64>> = m.iter().map(|r| r.iter().map(red).collect()).collect();
    // Hessenberg reduction
    for col in 0..n.saturating_sub(2) {
        let Some(piv) = (col + 1..n).find(|&r| a[r][col] != 0) else { continue };
        if piv != col + 1 {
            a.swap(piv, col + 1);
            for row in a.iter_mut() {
                row.swap(piv, col + 1);
            }
        }
        let inv = z.inv(a[col + 1][col]).unwrap();
        for r in col + 2..n {
            let f = z.mul(a[r][col], inv);
            if f == 0 {
                continue;
            }
            for c in 0..n {
                let t = z.mul(f, a[col + 1][c]);
                a[r][c] = z.sub(a[r][c], t);
            }
            for row in a.iter_mut() {
                let t = z.mul(f, row[r]);
                row[col + 1] = z.add(row[col + 1], t);
            }
        }
    }
    // recurrence on leading principal minors of the Hessenberg matrix
    let mut polys: Vec<Vec<u64>> = vec![vec![1]];
    for k in 0..n {
        let mut next = vec![0u64; k + 2];
        for (i, &c) in polys[k].iter().enumerate() {
            next[i + 1] = z.add(next[i + 1], c);
            next[i] = z.sub(next[i], z.mul(a[k][k], c));
        }
        let mut prod = 1u64;
        for i in (0..k).rev() {
            prod = z.mul(prod, a[i + 1][i]);
            let f = z.mul(prod, a[i][k]);
            for (j, &c) in polys[i].iter().enumerate() {
                next[j] = z.sub(next[j], z.mul(f, c));
            }
        }
        polys.push(next);
    }
    polys.pop().unwrap()
}

fn eval_mod(poly: &[u64], x: i64, prime: u64) -> u64 {
    let z = crate::padic::Zmod { p: prime, n: 1, modulus: prime };
    let xr = z.from_i64(x);
    poly.iter().rev().fold(0, |acc, &c| z.add(z.mul(acc, xr), c))
}

/// Split a subspace into rational T_l-eigenspaces; the second component is the
/// dimension left in non-rational (conjugate) blocks.
fn split_rational(space: &SymbolSpace, l: u64) -> Result<(Vec<(i64, SymbolSpace)>, usize)> {
    let m = space.operator_matrix(HeckeOp::T(l))?;
    let cp = charpoly_mod(&m, TEST_PRIME);
    let bound = 1 + (l as i64).pow(space.k + 1);
    let mut out = Vec::new();
    let mut used = 0;
    for lam in -bound..=bound {
        if eval_mod(&cp, lam, TEST_PRIME) != 0 {
            continue;
        }
        let e = space.eigenspace(HeckeOp::T(l), &BigRational::from_integer(lam.into()))?;
        if e.dim() > 0 {
            used += e.dim();
            out.push((lam, e));
        }
    }
    Ok((out, space.dim() - used))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormType {
    Cuspidal,
    Eisenstein,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EisensteinData {
    pub chi: i64,
    pub psi: i64,
}

/// Hecke eigendata in the exchange format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigendata {
    #[serde(rename = "N")]
    pub n: u64,
    pub p: u64,
    pub k: u32,
    pub ap: i64,
    pub eps_p: i64,
    pub al: BTreeMap<String, i64>,
    #[serde(rename = "type")]
    pub form_type: FormType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eisenstein: Option<EisensteinData>,
}

impl Eigendata {
    pub fn from_json(s: &str) -> Result<Self> {
        let e: Eigendata = serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 3 || !crate::arith::is_prime(self.p) {
            return Err(Error::domain("p must be an odd prime"));
        }
        if self.n % self.p == 0 {
            return Err(Error::unsupported("p divides N"));
        }
        for key in self.al.keys() {
            let l: u64 = key.parse().map_err(|_| Error::Serialization(format!("bad prime key {key}")))?;
            if (self.n * self.p) % l == 0 {
                return Err(Error::domain(format!("a_{l} given for a prime dividing Np")));
            }
        }
        Ok(())
    }

    pub fn a(&self, l: u64) -> Option<i64> {
        self.al.get(&l.to_string()).copied()
    }
}

/// A rational Hecke eigensystem with its sign-split eigenspaces.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub al: BTreeMap<u64, i64>,
    pub plus: SymbolSpace,
    pub minus: SymbolSpace,
    pub form_type: FormType,
}

impl EigenSystem {
    pub fn dims(&self) -> (usize, usize) {
        (self.plus.dim(), self.minus.dim())
    }

    pub fn space(&self, sign: i32) -> &SymbolSpace {
        if sign >= 0 {
            &self.plus
        } else {
            &self.minus
        }
    }

    /// U_p characteristic polynomial (x^2 - t x + d) on the larger sign part, or
    /// the single eigenvalue when the old space is one-dimensional.
    pub fn up_charpoly(&self) -> Result<Vec<BigRational>> {
        let s = if self.plus.dim() >= self.minus.dim() { &self.plus } else { &self.minus };
        let m = s.operator_matrix(HeckeOp::Up)?;
        match m.len() {
            1 => Ok(vec![-m[0][0].clone(), BigRational::one()]),
            2 => {
                let tr = &m[0][0] + &m[1][1];
                let det = &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0];
                Ok(vec![det, -tr, BigRational::one()])
            }
            d => Err(Error::unsupported(format!("U_p on a {d}-dimensional eigenspace"))),
        }
    }

    pub fn eigendata(&self) -> Result<Eigendata> {
        let b = &self.plus.basis;
        let k = self.plus.k;
        let pk1 = BigInt::from(b.p).pow(k + 1);
        let (ap, eps) = match self.form_type {
            FormType::Eisenstein => (BigInt::one() + &pk1, BigInt::one()),
            FormType::Cuspidal => {
                let cp = self.up_charpoly()?;
                if cp.len() != 3 {
                    return Err(Error::inconsistent("cuspidal system without a two-dimensional p-old space"));
                }
                let ap = -cp[1].clone();
                let eps = &cp[0] / BigRational::from_integer(pk1.clone());
                if !ap.is_integer() || !eps.is_integer() {
                    return Err(Error::inconsistent("non-integral U_p data"));
                }
                (ap.to_integer(), eps.to_integer())
            }
        };
        Ok(Eigendata {
            n: b.n,
            p: b.p,
            k,
            ap: ap.to_i64().ok_or_else(|| Error::unsupported("a_p exceeds i64"))?,
            eps_p: eps.to_i64().unwrap(),
            al: self.al.iter().map(|(l, a)| (l.to_string(), *a)).collect(),
            form_type: self.form_type,
            eisenstein: (self.form_type == FormType::Eisenstein).then_some(EisensteinData { chi: 1, psi: 1 }),
        })
    }

    /// A Q_p eigensymbol of sign `sign` with U_p-eigenvalue `root`, obtained as
    /// (U_p - other) w on the two-dimensional p-old space.
    pub fn refined_eigensymbol(&self, refined: &RefinedForm, sign: i32, prec: i64) -> Result<PadicSymbol> {
        let s = self.space(sign);
        if s.dim() == 0 {
            return Err(Error::domain(format!("no sign {sign} part in this system")));
        }
        let p = s.basis.p;
        let (root, other) = (refined.beta, refined.alpha);
        for i in 0..s.dim() {
            let w = s.symbol(i);
            let uw = w.hecke(HeckeOp::Up)?;
            if s.dim() == 1 {
                let lam = s.coordinates(&uw.coords())[0].clone();
                let lp = PadicNum::from_rational(p, &lam, prec);
                if !lp.agrees_with(&root) {
                    return Err(Error::domain("requested root is not the eigenvalue on this sign part"));
                }
                return Ok(w.to_padic(prec));
            }
            let cand = uw.to_padic(prec).sub(&w.to_padic(prec).scale(&other));
            if !cand.is_zero() {
                return Ok(cand);
            }
        }
        Err(Error::inconsistent("refined eigensymbol vanished"))
    }
}

/// Rational eigensystems of the T_l (l not dividing Np, the first `nprimes`)
/// on Symb_{Gamma_0(Np)}(V_k), with the conjugate-block dimension left over.
pub fn eigensystems(basis: Arc<ManinBasis>, k: u32, nprimes: usize) -> Result<(Vec<EigenSystem>, usize)> {
    let level = basis.level();
    let primes: Vec<u64> = (2..).filter(|&l| crate::arith::is_prime(l) && level % l != 0).take(nprimes).collect();
    let full = SymbolSpace::full(basis.clone(), k);
    let mut leftover = 0;
    let mut per_sign: Vec<Vec<(BTreeMap<u64, i64>, SymbolSpace)>> = Vec::new();
    for sign in [1, -1] {
        let mut cur = vec![(BTreeMap::new(), full.sign_part(sign)?)];
        for &l in &primes {
            let mut next = Vec::new();
            for (al, sp) in cur {
                if sp.dim() == 0 {
                    continue;
                }
                let (parts, rest) = split_rational(&sp, l)?;
                leftover += rest;
                for (lam, e) in parts {
                    let mut al2 = al.clone();
                    al2.insert(l, lam);
                    next.push((al2, e));
                }
            }
            cur = next;
        }
        per_sign.push(cur);
    }
    let minus_default = |b: &Arc<ManinBasis>| SymbolSpace { basis: b.clone(), k, rows: vec![], pivots: vec![] };
    let mut systems: Vec<EigenSystem> = Vec::new();
    let mut minus_list = per_sign.pop().unwrap();
    let plus_list = per_sign.pop().unwrap();
    for (al, sp) in plus_list {
        let minus = minus_list.iter().position(|(a, _)| *a == al).map(|i| minus_list.remove(i).1);
        systems.push(EigenSystem {
            form_type: classify(&al, k),
            al,
            plus: sp,
            minus: minus.unwrap_or_else(|| minus_default(&basis)),
        });
    }
    for (al, sp) in minus_list {
        systems.push(EigenSystem { form_type: classify(&al, k), al, plus: minus_default(&basis), minus: sp });
    }
    systems.sort_by(|a, b| a.al.cmp(&b.al));
    Ok((systems, leftover))
}

fn classify(al: &BTreeMap<u64, i64>, k: u32) -> FormType {
    if !al.is_empty() && al.iter().all(|(l, a)| *a == 1 + (*l as i64).pow(k + 1)) {
        FormType::Eisenstein
    } else {
        FormType::Cuspidal
    }
}

/// Fundamental discriminant of an imaginary quadratic field in which every
/// tested inert prime has a_l = 0, if any (class number one fields only).
pub fn cm_discriminant(e: &Eigendata) -> Option<i64> {
    if e.form_type != FormType::Cuspidal {
        return None;
    }
    [-3i64, -4, -7, -8, -11, -19, -43, -67, -163].into_iter().find(|&d| {
        let mut inert = 0;
        for (key, a) in &e.al {
            let l: i64 = key.parse().unwrap();
            if l == 2 || d % l == 0 {
                continue;
            }
            // Euler criterion for (d / l)
            let z = crate::padic::Zmod { p: l as u64, n: 1, modulus: l as u64 };
            let leg = z.pow(z.from_i64(d), (l as u64 - 1) / 2);
            if leg == l as u64 - 1 {
                inert += 1;
                if *a != 0 {
                    return false;
                }
            }
        }
        inert >= 2
    })
}

/// How to pick the refinement root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RootChoice {
    Ordinary,
    Critical,
    /// An explicit rational root.
    Root(i64),
}

impl std::str::FromStr for RootChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordinary" => Ok(RootChoice::Ordinary),
            "critical" => Ok(RootChoice::Critical),
            _ => s
                .strip_prefix("root=")
                .and_then(|v| v.parse().ok())
                .map(RootChoice::Root)
                .ok_or_else(|| Error::domain(format!("unknown refinement {s}"))),
        }
    }
}

/// A refined form: `beta` is the chosen U_p-eigenvalue, `alpha` the other root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedForm {
    pub data: Eigendata,
    pub alpha: PadicNum,
    pub beta: PadicNum,
    pub choice: RootChoice,
    pub critical_slope: bool,
    pub theta_critical: bool,
    pub decent: bool,
    pub cm_discriminant: Option<i64>,
}

impl RefinedForm {
    pub fn p(&self) -> u64 {
        self.data.p
    }
    pub fn k(&self) -> u32 {
        self.data.k
    }
    pub fn slope(&self) -> i64 {
        self.beta.valuation()
    }
    pub fn is_eisenstein(&self) -> bool {
        self.data.form_type == FormType::Eisenstein
    }
}

/// Roots of x^2 - a_p x + eps p^{k+1} in Q_p and the chosen refinement.
pub fn refine(data: &Eigendata, choice: RootChoice, prec: i64) -> Result<RefinedForm> {
    data.validate()?;
    let p = data.p;
    let k = data.k;
    let pk1 = (p as i128).pow(k + 1);
    let disc = (data.ap as i128).pow(2) - 4 * data.eps_p as i128 * pk1;
    if disc == 0 {
        return Err(Error::unsupported("alpha = beta: the Hecke polynomial has a double root"));
    }
    let work = prec + 2 * (k as i64 + 2);
    let sq = padic::sqrt(&PadicNum::from_i128(p, disc, work))?;
    let ap = PadicNum::from_i128(p, data.ap as i128, work);
    let half = PadicNum::from_ratio_i64(p, 1, 2, work);
    let r1 = (ap + sq) * half;
    let r2 = (ap - sq) * half;
    if r1.agrees_with(&r2) {
        return Err(Error::unsupported("alpha = beta at working precision"));
    }
    let (hi, lo) = if r1.valuation() >= r2.valuation() { (r1, r2) } else { (r2, r1) };
    let (beta, alpha) = match &choice {
        RootChoice::Critical => (hi, lo),
        RootChoice::Ordinary => {
            if lo.valuation() != 0 {
                return Err(Error::domain("no unit root: the form is not ordinary at p"));
            }
            (lo, hi)
        }
        RootChoice::Root(v) => {
            let t = PadicNum::from_i128(p, *v as i128, work);
            if t.agrees_with(&r1) {
                (r1, r2)
            } else if t.agrees_with(&r2) {
                (r2, r1)
            } else {
                return Err(Error::domain(format!("{v} is not a root of the Hecke polynomial")));
            }
        }
    };
    let slope = beta.valuation();
    if slope < 0 || slope > k as i64 + 1 {
        return Err(Error::inconsistent(format!("slope {slope} outside [0, k+1]")));
    }
    let cm = cm_discriminant(data);
    let critical_slope = slope == k as i64 + 1;
    let eis = data.form_type == FormType::Eisenstein;
    Ok(RefinedForm {
        data: data.clone(),
        alpha: alpha.truncate(prec + alpha.valuation().max(0)),
        beta: beta.truncate(prec + slope),
        choice,
        critical_slope,
        theta_critical: critical_slope && (eis || cm.is_some()),
        decent: false,
        cm_discriminant: cm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: u64, p: u64, k: u32, ap: i64, t: FormType) -> Eigendata {
        Eigendata { n, p, k, ap, eps_p: 1, al: BTreeMap::new(), form_type: t, eisenstein: None }
    }

    #[test]
    fn eisenstein_roots() {
        let d = data(1, 3, 2, 28, FormType::Eisenstein);
        let f = refine(&d, RootChoice::Critical, 10).unwrap();
        assert!(f.beta.agrees_with(&PadicNum::from_i128(3, 27, 20)));
        assert!(f.alpha.agrees_with(&PadicNum::one(3, 10)));
        assert!(f.critical_slope && f.theta_critical);
    }

    #[test]
    fn ordinary_and_critical_roots_multiply_to_norm() {
        let d = data(11, 3, 0, -1, FormType::Cuspidal);
        let f = refine(&d, RootChoice::Ordinary, 12).unwrap();
        assert_eq!(f.beta.valuation(), 0);
        assert!((f.alpha * f.beta).agrees_with(&PadicNum::from_i128(3, 3, 12)));
        assert!((f.alpha + f.beta).agrees_with(&PadicNum::from_i128(3, -1, 12)));
        let d = data(32, 5, 0, -2, FormType::Cuspidal);
        let f = refine(&d, RootChoice::Critical, 12).unwrap();
        assert_eq!(f.beta.valuation(), 1);
        assert!(f.critical_slope);
    }

    #[test]
    fn double_root_rejected() {
        let mut d2 = data(1, 3, 1, 0, FormType::Cuspidal);
        d2.eps_p = 0;
        assert!(matches!(refine(&d2, RootChoice::Critical, 8), Err(Error::Unsupported(_))));
    }

    #[test]
    fn json_round_trip() {
        let s = r#"{"N":11,"p":3,"k":0,"ap":-1,"eps_p":1,"al":{"2":-2,"5":1},"type":"cuspidal"}"#;
        let e = Eigendata::from_json(s).unwrap();
        assert_eq!(e.a(2), Some(-2));
        let back = serde_json::to_string(&e).unwrap();
        assert_eq!(Eigendata::from_json(&back).unwrap(), e);
        assert!(Eigendata::from_json(r#"{"N":11,"p":3,"k":0,"ap":-1,"eps_p":1,"al":{"3":1},"type":"cuspidal"}"#).is_err());
    }

    #[test]
    fn charpoly_small() {
        let q = |n: i64| BigRational::from_integer(n.into());
        let m = vec![vec![q(2), q(1)], vec![q(1), q(2)]];
        // x^2 - 4x + 3
        let cp = charpoly_mod(&m, TEST_PRIME);
        assert_eq!(cp[2], 1);
        assert_eq!(cp[1], TEST_PRIME - 4);
        assert_eq!(cp[0], 3);
    }
}

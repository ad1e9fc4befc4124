//! Finite-moment approximations of the distribution modules D_w.
//!
//! A distribution is stored by its moments m_j = mu(z^j), 0 <= j < M. The
//! working representation is x_j = p^j m_j mod p^M: on integral distributions
//! the weight-w action is then an integral M x M matrix, every coordinate has
//! the same modulus, and the truncation is compatible with the action.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::arith::max_precision;
use crate::classical::{Mat2, PolyValue};
use crate::error::{Error, Result};
use crate::linalg::ModMatrix;
use crate::padic::{PadicNum, Zmod};

/// An element of Sigma_0(p): p does not divide a, p divides c, ad - bc != 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SigmaMatrix {
    mat: Mat2,
}

impl SigmaMatrix {
    pub fn new(p: u64, mat: Mat2) -> Result<Self> {
        let p = p as i128;
        if mat.a.rem_euclid(p) == 0 || mat.c.rem_euclid(p) != 0 || mat.det() == 0 {
            return Err(Error::domain(format!("{mat:?} is not in Sigma_0({p})")));
        }
        Ok(SigmaMatrix { mat })
    }
    pub fn mat(&self) -> &Mat2 {
        &self.mat
    }
    pub fn mul(&self, o: &SigmaMatrix) -> SigmaMatrix {
        SigmaMatrix { mat: self.mat.mul(&o.mat) }
    }
}

/// Truncated power series mod p^n with `len` coefficients.
pub(crate) fn series_mul(z: &Zmod, a: &[u64], b: &[u64], len: usize) -> Vec<u64> {
    let mut out = vec![0u128; len];
    let mut pending = 0u32;
    for (i, &x) in a.iter().enumerate().take(len) {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate().take(len - i) {
            out[i + j] += x as u128 * y as u128;
        }
        pending += 1;
        // products are below 2^124, so 15 accumulations are safe
        if pending == 15 {
            for o in out.iter_mut() {
                *o %= z.modulus as u128;
            }
            pending = 0;
        }
    }
    out.into_iter().map(|v| z.reduce_u128(v)).collect()
}

pub(crate) fn series_pow(z: &Zmod, base: &[u64], mut e: u64, len: usize) -> Vec<u64> {
    let mut acc = vec![0u64; len];
    acc[0] = 1 % z.modulus;
    let mut b = base.to_vec();
    while e > 0 {
        if e & 1 == 1 {
            acc = series_mul(z, &acc, &b, len);
        }
        e >>= 1;
        if e > 0 {
            b = series_mul(z, &b, &b, len);
        }
    }
    acc
}

/// (a + c t)^{-1} for a unit a.
pub(crate) fn linear_inverse(z: &Zmod, a: u64, c: u64, len: usize) -> Result<Vec<u64>> {
    let ainv = z.inv(a).ok_or_else(|| Error::domain("a is not a p-adic unit"))?;
    let ratio = z.neg(z.mul(c, ainv));
    let mut out = Vec::with_capacity(len);
    let mut cur = ainv;
    for _ in 0..len {
        out.push(cur);
        cur = z.mul(cur, ratio);
    }
    Ok(out)
}

/// Matrix of the weight-w action of g on x-coordinates: x' = A x.
///
/// Row j holds the coefficients of (a + c't)^w ((pb + dt)/(a + c't))^j in t,
/// where c = p c' and t = pz.
pub fn action_matrix(z: &Zmod, weight: i64, g: &SigmaMatrix, m: usize) -> Result<ModMatrix> {
    let p = z.p as i128;
    let g = g.mat;
    let a = z.from_i128(g.a);
    let c1 = z.from_i128(g.c / p);
    let inv = linear_inverse(z, a, c1, m)?;
    let base = if weight >= 0 {
        let mut lin = vec![0u64; m];
        lin[0] = a;
        if m > 1 {
            lin[1] = c1;
        }
        series_pow(z, &lin, weight as u64, m)
    } else {
        series_pow(z, &inv, weight.unsigned_abs(), m)
    };
    let mut num = vec![0u64; m];
    num[0] = z.from_i128(g.b * p);
    if m > 1 {
        num[1] = z.from_i128(g.d);
    }
    let r = series_mul(z, &num, &inv, m);
    let mut out = ModMatrix::zeros(m, m);
    let mut cur = base;
    for j in 0..m {
        out.data[j * m..(j + 1) * m].copy_from_slice(&cur);
        if j + 1 < m {
            cur = series_mul(z, &cur, &r, m);
        }
    }
    Ok(out)
}

/// Action matrix for the weight character z -> omega(z)^k <z>^{k+w0}.
///
/// Row j holds the t-coefficients of omega(a)^k <a>^s (1 + c't/a)^s
/// ((pb + dt)/(a + c't))^j with s = k + w0; the binomial series has integral
/// coefficients for every w0 in Z_p.
pub fn shifted_action_matrix(z: &Zmod, k: i64, w0: &PadicNum, g: &SigmaMatrix, m: usize) -> Result<ModMatrix> {
    let p = z.p;
    let g = g.mat;
    let work = z.n as i64 + 2 * m as i64 + 4;
    let s = (PadicNum::from_i128(p, k as i128, work) + *w0).truncate(work);
    if s.abs_prec() < z.n as i64 {
        return Err(Error::precision("weight shift known to too few digits"));
    }
    let a = PadicNum::from_i128(p, g.a, work);
    let omega = crate::padic::teichmuller(g.a.rem_euclid(p as i128) as i64, p, work as u32)?;
    let bracket = a.checked_div(&omega)?;
    let lead = omega.pow(k)? * crate::padic::exp_p(&(s * crate::padic::log_p(&bracket)?))?;
    let ratio = PadicNum::from_i128(p, g.c / p as i128, work).checked_div(&a)?;
    let mut binom = PadicNum::one(p, work);
    let mut rpow = PadicNum::one(p, work);
    let mut base = Vec::with_capacity(m);
    for n in 0..m {
        if n > 0 {
            let nn = PadicNum::from_i128(p, n as i128, work);
            binom = (binom * (s - PadicNum::from_i128(p, n as i128 - 1, work))).checked_div(&nn)?;
            rpow = rpow * ratio;
        }
        base.push((lead * binom * rpow).residue(z.n)?);
    }
    let inv = linear_inverse(z, z.from_i128(g.a), z.from_i128(g.c / p as i128), m)?;
    let mut num = vec![0u64; m];
    num[0] = z.from_i128(g.b * p as i128);
    if m > 1 {
        num[1] = z.from_i128(g.d);
    }
    let r = series_mul(z, &num, &inv, m);
    let mut out = ModMatrix::zeros(m, m);
    let mut cur = base;
    for j in 0..m {
        out.data[j * m..(j + 1) * m].copy_from_slice(&cur);
        if j + 1 < m {
            cur = series_mul(z, &cur, &r, m);
        }
    }
    Ok(out)
}

/// Memoized action matrices for a fixed modulus, weight and moment count.
#[derive(Debug)]
pub struct ActionCache {
    pub z: Zmod,
    pub weight: i64,
    pub m: usize,
    /// Weight shift w0 for the character omega^k <.>^{k+w0}.
    pub shift: Option<PadicNum>,
    map: RwLock<HashMap<Mat2, Arc<ModMatrix>>>,
}

impl ActionCache {
    pub fn new(z: Zmod, weight: i64, m: usize) -> Self {
        ActionCache { z, weight, m, shift: None, map: RwLock::new(HashMap::new()) }
    }

    pub fn with_shift(z: Zmod, weight: i64, shift: PadicNum, m: usize) -> Self {
        ActionCache { shift: Some(shift), ..Self::new(z, weight, m) }
    }

    pub fn get(&self, g: &Mat2) -> Result<Arc<ModMatrix>> {
        if let Some(a) = self.map.read().expect("cache lock").get(g) {
            return Ok(a.clone());
        }
        let s = SigmaMatrix::new(self.z.p, *g)?;
        let a = Arc::new(match &self.shift {
            Some(w0) => shifted_action_matrix(&self.z, self.weight, w0, &s, self.m)?,
            None => action_matrix(&self.z, self.weight, &s, self.m)?,
        });
        self.map.write().expect("cache lock").insert(*g, a.clone());
        Ok(a)
    }
}

/// Theta_k on x-coordinates. Input: x-coordinates of a weight -2-k distribution
/// with n moments mod p^n; output: n + k + 1 moments mod p^{n+k+1}.
pub fn theta_xcoords(z: &Zmod, k: u32, y: &[u64]) -> Result<(Zmod, Vec<u64>)> {
    let kk = k as usize + 1;
    let out_z = Zmod::new(z.p, z.n + kk as u32)?;
    let pk = out_z.pow_p(kk as u32);
    let mut x = vec![0u64; y.len() + kk];
    for j in kk..x.len() {
        let mut f = 1u64;
        for t in 0..kk {
            f = out_z.mul(f, out_z.from_i64((j - t) as i64));
        }
        // y is known mod p^n, so p^{k+1} y is known mod p^{n+k+1}
        x[j] = out_z.mul(out_z.mul(pk, f), y[j - kk]);
    }
    Ok((out_z, x))
}

/// A distribution known through finitely many moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxDistribution {
    pub p: u64,
    /// Integer weight w of the action (a+cz)^w.
    pub weight: i64,
    pub moments: Vec<PadicNum>,
    /// Set when m_j is known at least mod p^{M-j}.
    pub filtered: bool,
}

impl ApproxDistribution {
    pub fn new(p: u64, weight: i64, moments: Vec<PadicNum>) -> Self {
        let m = moments.len() as i64;
        let filtered = moments.iter().enumerate().all(|(j, x)| x.abs_prec() >= m - j as i64);
        ApproxDistribution { p, weight, moments, filtered }
    }

    pub fn zero(p: u64, weight: i64, m: usize) -> Self {
        let moments = (0..m).map(|j| PadicNum::zero(p, (m - j) as i64)).collect();
        ApproxDistribution { p, weight, moments, filtered: true }
    }

    /// From x-coordinates mod p^n scaled by p^{-denom_exp}.
    pub fn from_xcoords(z: &Zmod, weight: i64, x: &[u64], denom_exp: u32) -> Self {
        let moments = x
            .iter()
            .enumerate()
            .map(|(j, &v)| PadicNum::from_residue(z.p, v, z.n).shift(-(j as i64) - denom_exp as i64))
            .collect();
        ApproxDistribution { p: z.p, weight, moments, filtered: denom_exp == 0 }
    }

    pub fn num_moments(&self) -> usize {
        self.moments.len()
    }

    /// x-coordinates (x_j = p^{j+s} m_j) modulo p^n, with the scaling exponent s.
    pub fn to_xcoords(&self) -> Result<(Zmod, Vec<u64>, u32)> {
        let m = self.moments.len() as i64;
        if m == 0 {
            return Err(Error::precision("distribution has no moments"));
        }
        let s = self
            .moments
            .iter()
            .enumerate()
            .filter(|(_, x)| !x.is_zero())
            .map(|(j, x)| -x.valuation() - j as i64)
            .max()
            .unwrap_or(0)
            .max(0);
        let n = self
            .moments
            .iter()
            .enumerate()
            .map(|(j, x)| x.abs_prec().saturating_add(j as i64 + s))
            .min()
            .unwrap_or(m)
            .min(m)
            .min(max_precision(self.p) as i64);
        if n <= 0 {
            return Err(Error::precision("moments carry no usable precision"));
        }
        let z = Zmod::new(self.p, n as u32)?;
        let x = self
            .moments
            .iter()
            .enumerate()
            .map(|(j, v)| v.shift(j as i64 + s).truncate(n).residue(n as u32))
            .collect::<Result<Vec<_>>>()?;
        Ok((z, x, s as u32))
    }

    /// Weight-w right action of g.
    pub fn act(&self, g: &SigmaMatrix) -> Result<Self> {
        if g.mat.c.rem_euclid(self.p as i128) != 0 || g.mat.a.rem_euclid(self.p as i128) == 0 {
            return Err(Error::domain("matrix is not in Sigma_0(p) for this prime"));
        }
        let (z, x, s) = self.to_xcoords()?;
        let a = action_matrix(&z, self.weight, g, x.len())?;
        let out = Self::from_xcoords(&z, self.weight, &a.mul_vec(&z, &x), s);
        Ok(ApproxDistribution { filtered: self.filtered && s == 0, ..out })
    }

    /// rho_k^*: the coefficient of X^j Y^{k-j} is C(k, j) (-1)^j m_j.
    pub fn specialize_rho(&self, k: u32) -> Result<PolyValue<PadicNum>> {
        if self.weight != k as i64 {
            return Err(Error::domain(format!("weight {} distribution specialized at k = {k}", self.weight)));
        }
        if self.moments.len() <= k as usize {
            return Err(Error::precision(format!("{} moments do not determine rho_{k}", self.moments.len())));
        }
        let mut binom = BigInt::from(1);
        let mut coeffs = Vec::with_capacity(k as usize + 1);
        for j in 0..=k as usize {
            let sign = if j % 2 == 0 { 1 } else { -1 };
            let c = PadicNum::from_rational(self.p, &(BigInt::from(sign) * &binom).into(), i64::MAX / 4);
            coeffs.push(if self.moments[j].is_exact_zero() { PadicNum::exact_zero(self.p) } else { c * self.moments[j] });
            binom = binom * BigInt::from(k as usize - j) / BigInt::from(j + 1);
        }
        Ok(PolyValue { coeffs })
    }

    /// Theta_k from weight -2-k to weight k: moments 0..k vanish and
    /// m_j = j!/(j-k-1)! nu_{j-k-1} above.
    pub fn theta(&self) -> Result<Self> {
        if self.weight > -2 {
            return Err(Error::domain(format!("theta needs weight -2-k, got {}", self.weight)));
        }
        let k = (-2 - self.weight) as usize;
        let m = self.moments.len();
        if m <= k + 1 {
            return Err(Error::precision(format!("{m} moments leave nothing after Theta_{k}")));
        }
        let moments = (0..m)
            .map(|j| {
                if j <= k {
                    return PadicNum::exact_zero(self.p);
                }
                let f: i128 = (j - k..=j).map(|t| t as i128).product();
                PadicNum::from_i128(self.p, f, i64::MAX / 4) * self.moments[j - k - 1]
            })
            .collect();
        Ok(ApproxDistribution { p: self.p, weight: k as i64, moments, filtered: self.filtered })
    }

    /// The total measure m_0.
    pub fn total_measure(&self) -> PadicNum {
        self.moments.first().copied().unwrap_or(PadicNum::exact_zero(self.p))
    }

    pub fn add(&self, o: &Self) -> Self {
        let moments = self.moments.iter().zip(&o.moments).map(|(a, b)| *a + *b).collect();
        ApproxDistribution { moments, filtered: self.filtered && o.filtered, ..self.clone() }
    }

    pub fn sub(&self, o: &Self) -> Self {
        let moments = self.moments.iter().zip(&o.moments).map(|(a, b)| *a - *b).collect();
        ApproxDistribution { moments, filtered: self.filtered && o.filtered, ..self.clone() }
    }

    pub fn scale(&self, c: &PadicNum) -> Self {
        let moments = self.moments.iter().map(|a| *a * *c).collect();
        ApproxDistribution { moments, ..self.clone() }
    }

    /// Agreement of all moments at the shared precision.
    pub fn agrees_with(&self, o: &Self) -> bool {
        self.moments.len() == o.moments.len() && self.moments.iter().zip(&o.moments).all(|(a, b)| a.agrees_with(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sigma(p: i128) -> impl Strategy<Value = Mat2> {
        (-30i128..30, -30i128..30, -6i128..6, -30i128..30)
            .prop_filter_map("Sigma_0(p)", move |(a, b, c, d)| {
                let m = Mat2::new(a, b, c * p, d);
                (a.rem_euclid(p) != 0 && m.det() != 0).then_some(m)
            })
    }

    fn dist(p: u64, weight: i64, m: usize) -> impl Strategy<Value = ApproxDistribution> {
        proptest::collection::vec(-1000i128..1000, m).prop_map(move |v| {
            let moments = v.iter().map(|&x| PadicNum::from_i128(p, x, m as i64)).collect();
            ApproxDistribution::new(p, weight, moments)
        })
    }

    #[test]
    fn identity_and_translation() {
        let p = 5;
        let mu = ApproxDistribution::new(p, 2, (1..7).map(|x| PadicNum::from_i128(p, x, 6)).collect());
        let id = SigmaMatrix::new(p, Mat2::IDENTITY).unwrap();
        assert!(mu.act(&id).unwrap().agrees_with(&mu));
        // (mu | (1 1; 0 1))(z^j) = sum_i C(j, i) m_i
        let t = SigmaMatrix::new(p, Mat2::new(1, 1, 0, 1)).unwrap();
        let out = mu.act(&t).unwrap();
        let binom = crate::arith::binomial_table(7);
        for j in 0..6 {
            let expect: i128 = (0..=j).map(|i| binom[j][i] as i128 * (i as i128 + 1)).sum();
            assert!(out.moments[j].agrees_with(&PadicNum::from_i128(p, expect, 20)), "moment {j}");
        }
    }

    #[test]
    fn rejects_matrices_outside_sigma0() {
        assert!(SigmaMatrix::new(3, Mat2::new(3, 1, 0, 1)).is_err());
        assert!(SigmaMatrix::new(3, Mat2::new(1, 0, 1, 1)).is_err());
        assert!(SigmaMatrix::new(3, Mat2::new(1, 2, 3, 6)).is_err());
    }

    #[test]
    fn rho_examples() {
        let p = 3;
        let mut moments = vec![PadicNum::exact_zero(p); 5];
        moments[0] = PadicNum::one(p, 5);
        let delta = ApproxDistribution::new(p, 2, moments.clone());
        let y2 = delta.specialize_rho(2).unwrap();
        assert!(y2.coeffs[0].agrees_with(&PadicNum::one(p, 5)));
        assert!(y2.coeffs[1].is_zero() && y2.coeffs[2].is_zero());
        moments[0] = PadicNum::exact_zero(p);
        moments[2] = PadicNum::from_i128(p, 7, 5);
        let xk = ApproxDistribution::new(p, 2, moments).specialize_rho(2).unwrap();
        assert!(xk.coeffs[2].agrees_with(&PadicNum::from_i128(p, 7, 5)));
        assert!(ApproxDistribution::zero(p, 2, 2).specialize_rho(2).is_err());
    }

    #[test]
    fn theta_at_k0_is_derivative_dual() {
        let p = 5;
        let nu = ApproxDistribution::new(p, -2, (1..8).map(|x| PadicNum::from_i128(p, x * x, 10)).collect());
        let th = nu.theta().unwrap();
        assert_eq!(th.weight, 0);
        assert!(th.moments[0].is_exact_zero());
        for j in 1..7 {
            let expect = PadicNum::from_i128(p, j as i128 * (j as i128 * j as i128), 10);
            assert!(th.moments[j].agrees_with(&expect));
        }
        assert!(ApproxDistribution::zero(p, -4, 3).theta().is_err());
    }

    #[test]
    fn total_measure_of_up_matrix() {
        // (1 b; 0 p) acts on m_0 through w(1) = 1
        let p = 3;
        let mu = ApproxDistribution::new(p, 2, (0..6).map(|x| PadicNum::from_i128(p, 2 * x + 1, 6)).collect());
        let g = SigmaMatrix::new(p, Mat2::new(1, 2, 0, 3)).unwrap();
        assert!(mu.act(&g).unwrap().total_measure().agrees_with(&mu.total_measure()));
        assert!(ApproxDistribution::zero(p, 0, 4).total_measure().is_zero());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn right_action_law(w in prop_oneof![Just(0i64), Just(2), Just(-2), Just(-4)],
                            seed in dist(5, 0, 8), g in sigma(5), h in sigma(5)) {
            let mu = ApproxDistribution { weight: w, ..seed };
            let g = SigmaMatrix::new(5, g).unwrap();
            let h = SigmaMatrix::new(5, h).unwrap();
            let lhs = mu.act(&g).unwrap().act(&h).unwrap();
            let rhs = mu.act(&g.mul(&h)).unwrap();
            prop_assert!(lhs.agrees_with(&rhs));
        }

        #[test]
        fn rho_is_equivariant(mu in dist(3, 2, 8), g in sigma(3)) {
            let gs = SigmaMatrix::new(3, g).unwrap();
            let lhs = mu.act(&gs).unwrap().specialize_rho(2).unwrap();
            let rhs = mu.specialize_rho(2).unwrap().act(&g);
            for (a, b) in lhs.coeffs.iter().zip(&rhs.coeffs) {
                prop_assert!(a.agrees_with(b));
            }
        }

        #[test]
        fn theta_kills_rho(nu in dist(5, -4, 8)) {
            let rho = nu.theta().unwrap().specialize_rho(2).unwrap();
            prop_assert!(rho.coeffs.iter().all(|c| c.is_exact_zero()));
        }

        #[test]
        fn theta_is_equivariant_up_to_det(nu in dist(5, -4, 10), g in sigma(5)) {
            let gs = SigmaMatrix::new(5, g).unwrap();
            let lhs = nu.theta().unwrap().act(&gs).unwrap();
            let det = PadicNum::from_i128(5, g.det().pow(3), i64::MAX / 4);
            let rhs = nu.act(&gs).unwrap().theta().unwrap().scale(&det);
            prop_assert!(lhs.agrees_with(&rhs));
        }

        #[test]
        fn shifted_action_matches_integer_weights(g in sigma(3)) {
            let z = Zmod::new(3, 8).unwrap();
            let gs = SigmaMatrix::new(3, g).unwrap();
            let zero = PadicNum::exact_zero(3);
            prop_assert_eq!(shifted_action_matrix(&z, 2, &zero, &gs, 8).unwrap(), action_matrix(&z, 2, &gs, 8).unwrap());
            // w0 = p - 1 keeps the Teichmueller component
            let two = PadicNum::from_i128(3, 2, 40);
            prop_assert_eq!(shifted_action_matrix(&z, 2, &two, &gs, 8).unwrap(), action_matrix(&z, 4, &gs, 8).unwrap());
        }

        #[test]
        fn shifted_action_law(g in sigma(3), h in sigma(3), w in 0i128..40) {
            let z = Zmod::new(3, 8).unwrap();
            let w0 = PadicNum::from_i128(3, 3 * w, 40);
            let (gs, hs) = (SigmaMatrix::new(3, g).unwrap(), SigmaMatrix::new(3, h).unwrap());
            let ag = shifted_action_matrix(&z, 0, &w0, &gs, 8).unwrap();
            let ah = shifted_action_matrix(&z, 0, &w0, &hs, 8).unwrap();
            let agh = shifted_action_matrix(&z, 0, &w0, &gs.mul(&hs), 8).unwrap();
            // matrices agree on the lattice x_j in p^j Z_p, not entrywise
            let x: Vec<u64> = (0..8u32).map(|j| z.mul(z.pow_p(j), 7 + 5 * j as u64)).collect();
            prop_assert_eq!(ah.mul_vec(&z, &ag.mul_vec(&z, &x)), agh.mul_vec(&z, &x));
        }
    }
}

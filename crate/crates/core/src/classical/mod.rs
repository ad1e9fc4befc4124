//! Classical modular symbols Symb_Gamma(V_k) for Gamma = Gamma_0(Np).

mod boundary;
mod eigen;
pub mod manin;

use std::fmt::Debug;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::padic::PadicNum;

pub use boundary::{boundary_symbol, sign_of_eisenstein, BoundarySymbol};
pub use eigen::{
    cm_discriminant, eigensystems, refine, EigenSystem, Eigendata, EisensteinData, FormType, RefinedForm,
    RootChoice, SymbolSpace,
};
pub use manin::{Cusp, HeckeOp, ManinBasis, Mat2, PathKind, Term};

/// Coefficient ring for classical symbol values.
pub trait Coeff: Clone + PartialEq + Debug + Send + Sync {
    fn zero_like(&self) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn scale_int(&self, n: &BigInt) -> Self;
    fn is_zero(&self) -> bool;
}

impl Coeff for BigRational {
    fn zero_like(&self) -> Self {
        BigRational::zero()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn scale_int(&self, n: &BigInt) -> Self {
        self * BigRational::from_integer(n.clone())
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
}

impl Coeff for PadicNum {
    fn zero_like(&self) -> Self {
        PadicNum::exact_zero(self.prime())
    }
    fn add(&self, o: &Self) -> Self {
        *self + *o
    }
    fn sub(&self, o: &Self) -> Self {
        *self - *o
    }
    fn mul(&self, o: &Self) -> Self {
        *self * *o
    }
    fn scale_int(&self, n: &BigInt) -> Self {
        if n.is_zero() {
            return PadicNum::exact_zero(self.prime());
        }
        let prec = self.abs_prec().saturating_add(64).min(i64::MAX / 4);
        *self * PadicNum::from_rational(self.prime(), &BigRational::from_integer(n.clone()), prec)
    }
    fn is_zero(&self) -> bool {
        PadicNum::is_zero(self)
    }
}

/// Matrix of P -> P|g on V_k in the basis X^i Y^{k-i}: new_i = sum_j m[i][j] old_j,
/// where (P|g)(X, Y) = P(dX - cY, -bX + aY).
pub fn vk_action_matrix(k: u32, g: &Mat2) -> Vec<Vec<BigInt>> {
    let k = k as usize;
    let lin = |x: i128, y: i128| vec![BigInt::from(y), BigInt::from(x)];
    // polynomials in X stored by power of X (Y implicit)
    let mul = |a: &[BigInt], b: &[BigInt]| {
        let mut out = vec![BigInt::zero(); a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    };
    let f1 = lin(g.d, -g.c);
    let f2 = lin(-g.b, g.a);
    let mut p1 = vec![vec![BigInt::one()]];
    let mut p2 = vec![vec![BigInt::one()]];
    for i in 1..=k {
        p1.push(mul(&p1[i - 1], &f1));
        p2.push(mul(&p2[i - 1], &f2));
    }
    let mut m = vec![vec![BigInt::zero(); k + 1]; k + 1];
    for j in 0..=k {
        let poly = mul(&p1[j], &p2[k - j]);
        for (i, c) in poly.into_iter().enumerate() {
            m[i][j] = c;
        }
    }
    m
}

/// Homogeneous degree-k polynomial sum_i coeffs[i] X^i Y^{k-i}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyValue<T> {
    pub coeffs: Vec<T>,
}

impl<T: Coeff> PolyValue<T> {
    pub fn weight(&self) -> u32 {
        (self.coeffs.len() - 1) as u32
    }
    pub fn act(&self, g: &Mat2) -> Self {
        let m = vk_action_matrix(self.weight(), g);
        self.apply_int_matrix(&m)
    }
    fn apply_int_matrix(&self, m: &[Vec<BigInt>]) -> Self {
        let z = self.coeffs[0].zero_like();
        let coeffs = m
            .iter()
            .map(|row| {
                row.iter().zip(&self.coeffs).fold(z.clone(), |acc, (e, c)| {
                    if e.is_zero() || c.is_zero() {
                        acc
                    } else {
                        acc.add(&c.scale_int(e))
                    }
                })
            })
            .collect();
        PolyValue { coeffs }
    }
    pub fn add(&self, o: &Self) -> Self {
        PolyValue { coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a.add(b)).collect() }
    }
    pub fn sub(&self, o: &Self) -> Self {
        PolyValue { coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a.sub(b)).collect() }
    }
    pub fn scale(&self, c: &T) -> Self {
        PolyValue { coeffs: self.coeffs.iter().map(|a| a.mul(c)).collect() }
    }
    pub fn scale_int(&self, n: &BigInt) -> Self {
        PolyValue { coeffs: self.coeffs.iter().map(|a| a.scale_int(n)).collect() }
    }
    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }
    pub fn zero_like(&self) -> Self {
        PolyValue { coeffs: self.coeffs.iter().map(|c| c.zero_like()).collect() }
    }
}

/// A classical symbol, stored by its values on the free edges of the presentation.
#[derive(Clone, Debug)]
pub struct ClassicalSymbol<T> {
    pub basis: Arc<ManinBasis>,
    pub k: u32,
    pub values: Vec<PolyValue<T>>,
}

pub type RationalSymbol = ClassicalSymbol<BigRational>;
pub type PadicSymbol = ClassicalSymbol<PadicNum>;

impl<T: Coeff> ClassicalSymbol<T> {
    pub fn new(basis: Arc<ManinBasis>, k: u32, values: Vec<PolyValue<T>>) -> Result<Self> {
        if values.len() != basis.num_free() || values.iter().any(|v| v.weight() != k) {
            return Err(Error::domain("value count or weight does not match the presentation"));
        }
        Ok(ClassicalSymbol { basis, k, values })
    }

    /// sum coeff * v_free | mat.
    pub fn apply_terms(&self, terms: &[Term]) -> PolyValue<T> {
        let mut acc = self.values[0].zero_like();
        for t in terms {
            let v = self.values[t.free as usize].act(&t.mat);
            acc = acc.add(&v.scale_int(&BigInt::from(t.coeff)));
        }
        acc
    }

    pub fn coset_value(&self, x: usize) -> PolyValue<T> {
        self.apply_terms(self.basis.coset_expr(x))
    }

    /// Phi({r} - {s}).
    pub fn evaluate(&self, r: Cusp, s: Cusp, kind: PathKind) -> PolyValue<T> {
        self.apply_terms(&self.basis.divisor_terms(r, s, kind))
    }

    pub fn constraints_hold(&self) -> bool {
        self.basis.constraints.iter().all(|c| self.apply_terms(c).is_zero())
    }

    pub fn hecke(&self, op: HeckeOp) -> Result<Self> {
        let terms = self.basis.hecke_terms(op)?;
        let values = terms.iter().map(|t| self.apply_terms(t)).collect();
        Ok(ClassicalSymbol { basis: self.basis.clone(), k: self.k, values })
    }

    pub fn add(&self, o: &Self) -> Self {
        ClassicalSymbol {
            basis: self.basis.clone(),
            k: self.k,
            values: self.values.iter().zip(&o.values).map(|(a, b)| a.add(b)).collect(),
        }
    }
    pub fn sub(&self, o: &Self) -> Self {
        ClassicalSymbol {
            basis: self.basis.clone(),
            k: self.k,
            values: self.values.iter().zip(&o.values).map(|(a, b)| a.sub(b)).collect(),
        }
    }
    pub fn scale(&self, c: &T) -> Self {
        ClassicalSymbol { basis: self.basis.clone(), k: self.k, values: self.values.iter().map(|v| v.scale(c)).collect() }
    }
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }
    /// Flattened coordinates (free edge major).
    pub fn coords(&self) -> Vec<T> {
        self.values.iter().flat_map(|v| v.coeffs.iter().cloned()).collect()
    }
    pub fn from_coords(basis: Arc<ManinBasis>, k: u32, coords: &[T]) -> Self {
        let values = coords.chunks(k as usize + 1).map(|c| PolyValue { coeffs: c.to_vec() }).collect();
        ClassicalSymbol { basis, k, values }
    }
}

impl RationalSymbol {
    pub fn zero(basis: Arc<ManinBasis>, k: u32) -> Self {
        let v = PolyValue { coeffs: vec![BigRational::zero(); k as usize + 1] };
        let n = basis.num_free();
        ClassicalSymbol { basis, k, values: vec![v; n] }
    }

    /// Image in Q_p at absolute precision `prec`.
    pub fn to_padic(&self, prec: i64) -> PadicSymbol {
        let p = self.basis.p;
        ClassicalSymbol {
            basis: self.basis.clone(),
            k: self.k,
            values: self
                .values
                .iter()
                .map(|v| PolyValue { coeffs: v.coeffs.iter().map(|c| PadicNum::from_rational(p, c, prec)).collect() })
                .collect(),
        }
    }
}

impl PadicSymbol {
    /// Smallest valuation among the coefficients (None for zero).
    pub fn min_valuation(&self) -> Option<i64> {
        self.values.iter().flat_map(|v| v.coeffs.iter()).filter(|c| !c.is_zero()).map(|c| c.valuation()).min()
    }
    /// Smallest absolute precision among the coefficients.
    pub fn abs_prec(&self) -> i64 {
        self.values.iter().flat_map(|v| v.coeffs.iter()).map(|c| c.abs_prec()).min().unwrap_or(i64::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn q(n: i64) -> BigRational {
        BigRational::from_integer(n.into())
    }

    fn random_mat(rng: &mut impl Rng) -> Mat2 {
        loop {
            let m = Mat2::new(rng.gen_range(-9..10), rng.gen_range(-9..10), rng.gen_range(-9..10), rng.gen_range(-9..10));
            if m.det() != 0 {
                return m;
            }
        }
    }

    #[test]
    fn vk_action_is_a_right_action() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let g = random_mat(&mut rng);
            let h = random_mat(&mut rng);
            let p = PolyValue { coeffs: (0..4).map(|_| q(rng.gen_range(-5..6))).collect() };
            assert_eq!(p.act(&g).act(&h), p.act(&g.mul(&h)));
        }
    }

    #[test]
    fn vk_action_examples() {
        // X^2 | (1 1; 0 1) = X^2, Y^2 | (1 1; 0 1) = (Y - X)^2
        let t = Mat2::new(1, 1, 0, 1);
        let x2 = PolyValue { coeffs: vec![q(0), q(0), q(1)] };
        assert_eq!(x2.act(&t), x2);
        let y2 = PolyValue { coeffs: vec![q(1), q(0), q(0)] };
        assert_eq!(y2.act(&t).coeffs, vec![q(1), q(-2), q(1)]);
    }
}

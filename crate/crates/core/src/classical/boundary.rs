//! Boundary symbols: Gamma-invariant maps from all divisors to V_k.

use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use super::manin::{Cusp, HeckeOp, ManinBasis, Mat2};
use super::{vk_action_matrix, ClassicalSymbol, PolyValue, RationalSymbol};
use crate::error::{Error, Result};
use crate::linalg::kernel_q;

/// tau with tau(gamma c) = tau(c) | gamma^{-1}, stored by its values at one
/// cusp per Gamma_0(Np)-orbit.
#[derive(Clone, Debug)]
pub struct BoundarySymbol {
    pub basis: Arc<ManinBasis>,
    pub k: u32,
    /// Representative coset of each cusp class; the cusp is g_x(oo).
    pub class_reps: Vec<usize>,
    pub values: Vec<PolyValue<BigRational>>,
    /// For each coset x: (class, delta) with tau(g_x oo) = value[class] | delta.
    locate: Vec<(usize, Mat2)>,
}

const T1: Mat2 = Mat2 { a: 1, b: 1, c: 0, d: 1 };

/// Cusp classes as orbits of x -> x T on cosets.
fn cusp_classes(basis: &ManinBasis) -> (Vec<usize>, Vec<(usize, Mat2)>, Vec<Mat2>) {
    let n = basis.index();
    let mut locate: Vec<Option<(usize, Mat2)>> = vec![None; n];
    let mut reps = Vec::new();
    let mut stabs = Vec::new();
    for x0 in 0..n {
        if locate[x0].is_some() {
            continue;
        }
        let class = reps.len();
        reps.push(x0);
        let g0 = basis.reps[x0];
        let mut walk = g0;
        let mut x = x0;
        loop {
            // walk = g0 T^m lies in coset x
            let delta = walk.mul(&basis.reps[x].inv_unimodular());
            locate[x] = Some((class, delta));
            walk = walk.mul(&T1);
            x = basis.coset_of(&walk);
            if x == x0 {
                stabs.push(walk.mul(&g0.inv_unimodular()));
                break;
            }
        }
    }
    (reps, locate.into_iter().map(|l| l.unwrap()).collect(), stabs)
}

/// (class, delta) with tau(r) = value[class] | delta.
fn locate_cusp(basis: &ManinBasis, locate: &[(usize, Mat2)], r: Cusp) -> (usize, Mat2) {
    let h = if r.is_infinity() {
        Mat2::IDENTITY
    } else {
        let e = num_integer::Integer::extended_gcd(&r.num, &r.den);
        // e.x * num + e.y * den = 1
        Mat2::new(r.num, -e.y, r.den, e.x)
    };
    debug_assert_eq!(h.det(), 1);
    let x = basis.coset_of(&h);
    let (class, delta) = locate[x];
    (class, delta.mul(&basis.reps[x]).mul(&h.inv_unimodular()))
}

impl BoundarySymbol {
    pub fn eval(&self, r: Cusp) -> PolyValue<BigRational> {
        let (class, delta) = locate_cusp(&self.basis, &self.locate, r);
        self.values[class].act(&delta)
    }

    /// Restriction to degree-zero divisors.
    pub fn to_classical(&self) -> RationalSymbol {
        let values = self
            .basis
            .free
            .iter()
            .map(|&x| {
                let (zero, inf) = self.basis.edge_divisor(x);
                self.eval(zero).sub(&self.eval(inf))
            })
            .collect();
        ClassicalSymbol { basis: self.basis.clone(), k: self.k, values }
    }
}

/// The boundary symbol with U_p tau = beta tau, normalized so that the X^k
/// coefficient of tau(oo) is 1 when it is nonzero.
pub fn boundary_symbol(basis: Arc<ManinBasis>, k: u32, beta: &BigRational) -> Result<BoundarySymbol> {
    let (reps, locate, stabs) = cusp_classes(&basis);
    let kk = k as usize + 1;
    let width = reps.len() * kk;
    let mut rows: Vec<Vec<BigRational>> = Vec::new();
    let add_block = |rows: &mut Vec<Vec<BigRational>>, eqs: Vec<(usize, Vec<Vec<BigInt>>, BigRational)>| {
        let mut block = vec![vec![BigRational::zero(); width]; kk];
        for (class, m, scale) in eqs {
            for i in 0..kk {
                for j in 0..kk {
                    block[i][class * kk + j] += BigRational::from_integer(m[i][j].clone()) * &scale;
                }
            }
        }
        rows.extend(block);
    };
    let ident = vk_action_matrix(k, &Mat2::IDENTITY);
    for (c, stab) in stabs.iter().enumerate() {
        add_block(&mut rows, vec![(c, vk_action_matrix(k, stab), BigRational::one()), (c, ident.clone(), -BigRational::one())]);
    }
    let up = basis.hecke_matrices(HeckeOp::Up)?;
    for (c, &x) in reps.iter().enumerate() {
        let cusp = basis.reps[x].act_cusp(Cusp::INFINITY);
        let mut eqs = vec![(c, ident.clone(), -beta.clone())];
        for g in &up {
            let (c2, delta) = locate_cusp(&basis, &locate, g.act_cusp(cusp));
            eqs.push((c2, vk_action_matrix(k, &delta.mul(g)), BigRational::one()));
        }
        add_block(&mut rows, eqs);
    }
    let ker = kernel_q(&rows, width);
    let Some(mut v) = ker.into_iter().next() else {
        return Err(Error::inconsistent(format!("no boundary symbol with U_p-eigenvalue {beta}")));
    };
    let inf_class = locate_cusp(&basis, &locate, Cusp::INFINITY).0;
    let lead = v[inf_class * kk + k as usize].clone();
    if !lead.is_zero() {
        for x in v.iter_mut() {
            *x /= &lead;
        }
    }
    let values = v.chunks(kk).map(|c| PolyValue { coeffs: c.to_vec() }).collect();
    let tau = BoundarySymbol { basis, k, class_reps: reps, values, locate };
    // express the normalization through tau(oo) itself
    let at_inf = tau.eval(Cusp::INFINITY);
    let lead = at_inf.coeffs[k as usize].clone();
    if lead.is_zero() || lead.is_one() {
        return Ok(tau);
    }
    let values = tau.values.iter().map(|v| v.scale(&lead.recip())).collect();
    Ok(BoundarySymbol { values, ..tau })
}

/// The iota-eigenvalue of the restriction of a boundary symbol.
pub fn sign_of_eisenstein(tau: &BoundarySymbol) -> Result<i32> {
    let phi = tau.to_classical();
    if phi.is_zero() {
        return Err(Error::domain("boundary symbol restricts to zero"));
    }
    let img = phi.hecke(HeckeOp::Iota)?;
    if img.coords() == phi.coords() {
        Ok(1)
    } else if img.add(&phi).is_zero() {
        Ok(-1)
    } else {
        Err(Error::inconsistent("boundary symbol is not an iota-eigenvector"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn level_one_eisenstein_boundary_symbol() {
        let b = ManinBasis::new(1, 3).unwrap();
        let tau = boundary_symbol(b.clone(), 2, &q(27, 1)).unwrap();
        assert_eq!(tau.eval(Cusp::INFINITY).coeffs, vec![q(0, 1), q(0, 1), q(1, 1)]);
        // independent oracle: lambda (p^{k+1} - 1) = (p - 1) p^k from the U_p equation at 0
        let lambda = q(2 * 9, 27 - 1);
        assert_eq!(tau.eval(Cusp::from_int(0)).coeffs, vec![lambda, q(0, 1), q(0, 1)]);
        assert_eq!(sign_of_eisenstein(&tau).unwrap(), 1);
    }

    #[test]
    fn cusps_over_p_are_multiples_of_linear_powers() {
        let b = ManinBasis::new(1, 3).unwrap();
        let tau = boundary_symbol(b, 2, &q(27, 1)).unwrap();
        for n in 1..4u32 {
            let pn = 3i128.pow(n);
            for a in 1..pn {
                if a % 3 == 0 {
                    continue;
                }
                let v = tau.eval(Cusp::new(a, pn)).coeffs;
                // (aX + p^n Y)^2 = p^{2n} Y^2 + 2 a p^n XY + a^2 X^2
                let e = &v[2] / q((a * a) as i64, 1);
                assert_eq!(v[0], &e * q((pn * pn) as i64, 1));
                assert_eq!(v[1], &e * q((2 * a * pn) as i64, 1));
            }
        }
    }

    #[test]
    fn eigenvalue_check() {
        let b = ManinBasis::new(1, 3).unwrap();
        assert!(boundary_symbol(b.clone(), 2, &q(5, 1)).is_err());
        assert!(boundary_symbol(b, 2, &q(1, 1)).is_ok());
    }
}

//! Dense linear algebra over Z/p^M (valuation pivoting) and over Q.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;

use crate::padic::Zmod;

/// Montgomery multiplication modulo an odd modulus below 2^62.
#[derive(Clone, Copy, Debug)]
pub struct Mont {
    m: u64,
    m_neg_inv: u64,
    r2: u64,
}

impl Mont {
    pub fn new(m: u64) -> Self {
        assert!(m % 2 == 1 && m < (1 << 62));
        let mut inv: u64 = 1;
        for _ in 0..6 {
            inv = inv.wrapping_mul(2u64.wrapping_sub(m.wrapping_mul(inv)));
        }
        let r = ((1u128 << 64) % m as u128) as u64;
        let r2 = ((r as u128 * r as u128) % m as u128) as u64;
        Mont { m, m_neg_inv: inv.wrapping_neg(), r2 }
    }
    #[inline]
    fn redc(&self, t: u128) -> u64 {
        let q = (t as u64).wrapping_mul(self.m_neg_inv);
        let s = ((t + q as u128 * self.m as u128) >> 64) as u64;
        if s >= self.m {
            s - self.m
        } else {
            s
        }
    }
    /// Montgomery form of x.
    #[inline]
    pub fn to_mont(&self, x: u64) -> u64 {
        self.redc(x as u128 * self.r2 as u128)
    }
    /// x * y where `y_mont` is in Montgomery form and x is not; result is plain.
    #[inline]
    pub fn mul_mixed(&self, x: u64, y_mont: u64) -> u64 {
        self.redc(x as u128 * y_mont as u128)
    }
}

/// Row-major dense matrix of residues.
#[derive(Clone, Debug, PartialEq)]
pub struct ModMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u64>,
}

impl ModMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ModMatrix { rows, cols, data: vec![0; rows * cols] }
    }
    pub fn identity(n: usize, z: &Zmod) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1 % z.modulus;
        }
        m
    }
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u64) {
        self.data[r * self.cols + c] = v;
    }
    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
    pub fn mul_vec(&self, z: &Zmod, v: &[u64]) -> Vec<u64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(z, self.row(r), v)).collect()
    }
    pub fn mul(&self, z: &Zmod, o: &ModMatrix) -> ModMatrix {
        assert_eq!(self.cols, o.rows);
        let mut out = ModMatrix::zeros(self.rows, o.cols);
        let ot = o.transpose();
        for r in 0..self.rows {
            for c in 0..o.cols {
                out.data[r * o.cols + c] = dot(z, self.row(r), ot.row(c));
            }
        }
        out
    }
    pub fn transpose(&self) -> ModMatrix {
        let mut t = ModMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }
    /// Stacks `o` below `self`.
    pub fn vstack(&self, o: &ModMatrix) -> ModMatrix {
        assert_eq!(self.cols, o.cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&o.data);
        ModMatrix { rows: self.rows + o.rows, cols: self.cols, data }
    }
}

/// Dot product with lazy u128 accumulation.
pub fn dot(z: &Zmod, a: &[u64], b: &[u64]) -> u64 {
    let m = z.modulus as u128;
    // each product is below 2^124, so 16 of them fit before reducing
    let mut acc: u128 = 0;
    let mut cnt = 0;
    for (x, y) in a.iter().zip(b) {
        acc += *x as u128 * *y as u128;
        cnt += 1;
        if cnt == 15 {
            acc %= m;
            cnt = 0;
        }
    }
    (acc % m) as u64
}

/// Outcome of solving A x = b modulo p^M.
#[derive(Clone, Debug)]
pub struct Solution {
    /// Solution numerator: the solution is x / p^denom_exp.
    pub x: Vec<u64>,
    pub denom_exp: u32,
    /// Smallest valuation of the inconsistent part of b (M when consistent).
    pub residual_val: u32,
    pub rank: usize,
    /// Largest pivot valuation used.
    pub max_pivot_val: u32,
}

/// Full-pivoting echelon form of [A | B] over Z/p^M.
struct Echelon {
    a: ModMatrix,
    b: ModMatrix,
    /// (row, col, pivot valuation) in elimination order.
    pivots: Vec<(usize, usize, u32)>,
}

fn echelon(z: &Zmod, a: &ModMatrix, b: &ModMatrix, threshold: u32) -> Echelon {
    let mont = Mont::new(z.modulus);
    let mut a = a.clone();
    let mut b = b.clone();
    let (m, n) = (a.rows, a.cols);
    let nb = b.cols;
    let mut row_used = vec![false; m];
    let mut col_used = vec![false; n];
    let mut pivots = Vec::new();
    let mut active_rows: Vec<usize> = (0..m).collect();
    loop {
        // pivot of minimal valuation over the remaining submatrix
        let best = active_rows
            .par_iter()
            .filter_map(|&r| {
                let mut best: Option<(u32, usize, usize)> = None;
                for c in 0..n {
                    if col_used[c] {
                        continue;
                    }
                    let v = a.get(r, c);
                    if v == 0 {
                        continue;
                    }
                    let val = z.val(v);
                    if best.map_or(true, |(bv, _, _)| val < bv) {
                        best = Some((val, r, c));
                        if val == 0 {
                            break;
                        }
                    }
                }
                best
            })
            .min();
        let Some((val, pr, pc)) = best else { break };
        if val >= threshold {
            break;
        }
        row_used[pr] = true;
        col_used[pc] = true;
        pivots.push((pr, pc, val));
        active_rows.retain(|&r| r != pr);
        let pv = a.get(pr, pc);
        let unit = pv / z.pow_p(val);
        let low = Zmod { p: z.p, n: z.n - val, modulus: z.modulus / z.pow_p(val) };
        let uinv = low.inv(unit % low.modulus).unwrap();
        let prow: Vec<u64> = a.row(pr).to_vec();
        let pb: Vec<u64> = b.row(pr).to_vec();
        let a_cols = n;
        // eliminate the pivot column from the remaining rows
        let rows_data: Vec<(usize, Vec<u64>, Vec<u64>)> = active_rows
            .par_iter()
            .filter_map(|&r| {
                let e = a.get(r, pc);
                if e == 0 {
                    return None;
                }
                let f = low.mul((e / z.pow_p(val)) % low.modulus, uinv);
                let fm = mont.to_mont(z.neg(f));
                let mut row = a.row(r).to_vec();
                for c in 0..a_cols {
                    if prow[c] != 0 {
                        row[c] = z.add(row[c], mont.mul_mixed(prow[c], fm));
                    }
                }
                row[pc] = 0;
                let mut rb = b.row(r).to_vec();
                for c in 0..nb {
                    if pb[c] != 0 {
                        rb[c] = z.add(rb[c], mont.mul_mixed(pb[c], fm));
                    }
                }
                Some((r, row, rb))
            })
            .collect();
        for (r, row, rb) in rows_data {
            a.data[r * n..(r + 1) * n].copy_from_slice(&row);
            b.data[r * nb..(r + 1) * nb].copy_from_slice(&rb);
        }
    }
    Echelon { a, b, pivots }
}

/// Solves A x = b over Z/p^M. Pivots of valuation >= `threshold` count as zero.
/// Free variables are set to zero. The solution may carry a denominator p^d.
pub fn solve(z: &Zmod, a: &ModMatrix, b: &[u64], threshold: u32) -> Solution {
    assert_eq!(a.rows, b.len());
    let bm = ModMatrix { rows: b.len(), cols: 1, data: b.to_vec() };
    let ech = echelon(z, a, &bm, threshold);
    let pivot_rows: std::collections::HashSet<usize> = ech.pivots.iter().map(|t| t.0).collect();
    let residual_val = (0..a.rows)
        .filter(|r| !pivot_rows.contains(r))
        .map(|r| z.val(ech.b.get(r, 0)))
        .min()
        .unwrap_or(z.n);
    let max_pivot_val = ech.pivots.iter().map(|t| t.2).max().unwrap_or(0);
    let (x, d) = back_substitute(z, &ech, |r| ech.b.get(r, 0), &[]);
    Solution { x, denom_exp: d, residual_val, rank: ech.pivots.len(), max_pivot_val }
}

/// Back substitution with prescribed free-variable values; rescales by powers
/// of p when a pivot does not divide its right-hand side.
fn back_substitute(
    z: &Zmod,
    ech: &Echelon,
    rhs: impl Fn(usize) -> u64,
    free: &[(usize, u64)],
) -> (Vec<u64>, u32) {
    let n = ech.a.cols;
    let mut x = vec![0u64; n];
    let mut rhs_scale: u64 = 1;
    let mut d = 0u32;
    for &(c, v) in free {
        x[c] = v;
    }
    for &(pr, pc, val) in ech.pivots.iter().rev() {
        let row = ech.a.row(pr);
        let s = z.sub(z.mul(rhs(pr), rhs_scale), dot(z, row, &x));
        let sv = z.val(s);
        if sv < val {
            let shift = val - sv;
            let f = z.pow_p(shift);
            for xi in x.iter_mut() {
                *xi = z.mul(*xi, f);
            }
            rhs_scale = z.mul(rhs_scale, f);
            d += shift;
            let s2 = z.mul(s, f);
            x[pc] = divide_by_pivot(z, s2, ech.a.get(pr, pc), val);
        } else {
            x[pc] = divide_by_pivot(z, s, ech.a.get(pr, pc), val);
        }
    }
    (x, d)
}

fn divide_by_pivot(z: &Zmod, s: u64, pivot: u64, val: u32) -> u64 {
    let pv = z.pow_p(val);
    let low = Zmod { p: z.p, n: z.n - val, modulus: z.modulus / pv };
    let uinv = low.inv((pivot / pv) % low.modulus).unwrap();
    low.mul((s / pv) % low.modulus, uinv)
}

/// An element of the kernel of A whose free coordinates are drawn from `free`.
pub fn kernel_element(z: &Zmod, a: &ModMatrix, threshold: u32, mut free: impl FnMut(usize) -> u64) -> Vec<u64> {
    let empty = ModMatrix::zeros(a.rows, 0);
    let ech = echelon(z, a, &empty, threshold);
    let pivot_cols: std::collections::HashSet<usize> = ech.pivots.iter().map(|t| t.1).collect();
    let values: Vec<(usize, u64)> =
        (0..a.cols).filter(|c| !pivot_cols.contains(c)).map(|c| (c, free(c) % z.modulus)).collect();
    back_substitute(z, &ech, |_| 0, &values).0
}

/// Pivot columns of A (in elimination order) with their valuations.
pub fn pivot_columns(z: &Zmod, a: &ModMatrix, threshold: u32) -> Vec<(usize, u32)> {
    let empty = ModMatrix::zeros(a.rows, 0);
    echelon(z, a, &empty, threshold).pivots.into_iter().map(|(_, c, v)| (c, v)).collect()
}

/// Kernel basis of A over Z/p^M with pivots of valuation >= `threshold` treated
/// as zero. Each vector is scaled to be integral with a unit entry where possible.
pub fn kernel(z: &Zmod, a: &ModMatrix, threshold: u32) -> Vec<Vec<u64>> {
    let empty = ModMatrix::zeros(a.rows, 0);
    let ech = echelon(z, a, &empty, threshold);
    let pivot_cols: std::collections::HashSet<usize> = ech.pivots.iter().map(|t| t.1).collect();
    (0..a.cols)
        .filter(|c| !pivot_cols.contains(c))
        .map(|c| {
            let (mut v, _) = back_substitute(z, &ech, |_| 0, &[(c, 1)]);
            let mv = v.iter().map(|&x| z.val(x)).min().unwrap_or(0);
            if mv > 0 && mv < z.n {
                let pv = z.pow_p(mv);
                for x in v.iter_mut() {
                    *x /= pv;
                }
            }
            v
        })
        .collect()
}

/// Reduced row echelon form over Q; returns the pivot columns.
pub fn rref_q(m: &mut [Vec<BigRational>]) -> Vec<usize> {
    let rows = m.len();
    if rows == 0 {
        return vec![];
    }
    let cols = m[0].len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(pr) = (r..rows).find(|&i| !m[i][c].is_zero()) else { continue };
        m.swap(r, pr);
        let inv = m[r][c].recip();
        for x in m[r].iter_mut() {
            *x *= &inv;
        }
        let prow = m[r].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i != r && !row[c].is_zero() {
                let f = row[c].clone();
                for (x, y) in row.iter_mut().zip(&prow) {
                    if !y.is_zero() {
                        *x -= &f * y;
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

/// Kernel basis of a rational matrix with `cols` columns.
pub fn kernel_q(m: &[Vec<BigRational>], cols: usize) -> Vec<Vec<BigRational>> {
    let mut a = m.to_vec();
    let pivots = rref_q(&mut a);
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![BigRational::zero(); cols];
            v[f] = BigRational::one();
            for (i, &pc) in pivots.iter().enumerate() {
                v[pc] = -a[i][f].clone();
            }
            v
        })
        .collect()
}

/// Solves A x = b over Q when consistent.
pub fn solve_q(a: &[Vec<BigRational>], b: &[BigRational]) -> Option<Vec<BigRational>> {
    let cols = a.first().map_or(0, |r| r.len());
    let mut aug: Vec<Vec<BigRational>> = a
        .iter()
        .zip(b)
        .map(|(r, x)| {
            let mut r = r.clone();
            r.push(x.clone());
            r
        })
        .collect();
    let pivots = rref_q(&mut aug);
    if pivots.contains(&cols) {
        return None;
    }
    let mut x = vec![BigRational::zero(); cols];
    for (i, &pc) in pivots.iter().enumerate() {
        x[pc] = aug[i][cols].clone();
    }
    Some(x)
}

/// Rank of a rational matrix reduced modulo a large prime (denominators must be units).
pub fn rank_mod_prime(m: &[Vec<BigRational>], prime: u64) -> usize {
    let z = Zmod { p: prime, n: 1, modulus: prime };
    let pb = BigInt::from(prime);
    let mut a: Vec<Vec<u64>> = m
        .iter()
        .map(|r| {
            r.iter()
                .map(|x| {
                    let num = z.from_bigint(x.numer());
                    let den = z.from_bigint(&(x.denom() % &pb));
                    z.mul(num, z.inv(den).expect("denominator divisible by the test prime"))
                })
                .collect()
        })
        .collect();
    let rows = a.len();
    let cols = a.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..cols {
        let Some(pr) = (r..rows).find(|&i| a[i][c] != 0) else { continue };
        a.swap(r, pr);
        let inv = z.inv(a[r][c]).unwrap();
        let prow = a[r].clone();
        for row in a.iter_mut().skip(r + 1) {
            if row[c] != 0 {
                let f = z.mul(row[c], inv);
                for (x, y) in row.iter_mut().zip(&prow) {
                    *x = z.sub(*x, z.mul(f, *y));
                }
            }
        }
        r += 1;
        if r == rows {
            break;
        }
    }
    r
}

/// Clears denominators and content of a rational vector, returning a primitive
/// integer vector with positive first nonzero entry.
pub fn primitive_integer_vector(v: &[BigRational]) -> Vec<BigInt> {
    use num_integer::Integer;
    let l = v.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
    let ints: Vec<BigInt> = v.iter().map(|x| (x * BigRational::from_integer(l.clone())).to_integer()).collect();
    let g = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    if g.is_zero() {
        return ints;
    }
    let sign = ints.iter().find(|x| !x.is_zero()).map_or(false, |x| x.is_negative());
    ints.into_iter().map(|x| if sign { -(x / &g) } else { x / &g }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64) -> BigRational {
        BigRational::from_integer(n.into())
    }

    #[test]
    fn montgomery_matches_plain() {
        let m = 3u64.pow(39);
        let mo = Mont::new(m);
        let z = Zmod { p: 3, n: 39, modulus: m };
        for (x, y) in [(5u64, 7u64), (m - 1, m - 2), (123456789, 987654321)] {
            assert_eq!(mo.mul_mixed(x, mo.to_mont(y)), z.mul(x, y));
        }
    }

    #[test]
    fn solve_with_nonunit_pivot() {
        let z = Zmod::new(3, 6).unwrap();
        // [[3, 1], [0, 9]] x = [4, 9] -> x = (1, 1)
        let a = ModMatrix { rows: 2, cols: 2, data: vec![3, 1, 0, 9] };
        let s = solve(&z, &a, &[4, 9], z.n);
        assert_eq!(s.residual_val, 6);
        assert_eq!(s.denom_exp, 0);
        assert_eq!(a.mul_vec(&z, &s.x), vec![4, 9]);
    }

    #[test]
    fn solve_reports_denominator_and_inconsistency() {
        let z = Zmod::new(5, 4).unwrap();
        let a = ModMatrix { rows: 2, cols: 1, data: vec![5, 0] };
        let s = solve(&z, &a, &[1, 25], z.n);
        assert_eq!(s.denom_exp, 1);
        assert_eq!(s.residual_val, 2);
        assert_eq!(s.x, vec![1]);
    }

    #[test]
    fn kernel_mod_prime_power() {
        let z = Zmod::new(5, 5).unwrap();
        // rank one matrix with rows (1, 2), (2, 4)
        let a = ModMatrix { rows: 2, cols: 2, data: vec![1, 2, 2, 4] };
        let k = kernel(&z, &a, z.n);
        assert_eq!(k.len(), 1);
        assert!(a.mul_vec(&z, &k[0]).iter().all(|&x| x == 0));
    }

    #[test]
    fn rational_kernel_and_solve() {
        let m = vec![vec![q(1), q(2), q(3)], vec![q(2), q(4), q(6)]];
        let k = kernel_q(&m, 3);
        assert_eq!(k.len(), 2);
        for v in &k {
            let s: BigRational = m[0].iter().zip(v).map(|(a, b)| a * b).sum();
            assert!(s.is_zero());
        }
        let x = solve_q(&m, &[q(1), q(2)]).unwrap();
        assert_eq!(x[0], q(1));
        assert!(solve_q(&m, &[q(1), q(3)]).is_none());
        assert_eq!(rank_mod_prime(&m, 1_000_000_007), 1);
    }

    #[test]
    fn primitive_vectors() {
        let v = vec![BigRational::new((-2).into(), 3.into()), q(4)];
        assert_eq!(primitive_integer_vector(&v), vec![BigInt::from(1), BigInt::from(-6)]);
    }
}

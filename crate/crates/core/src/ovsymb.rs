//! Overconvergent modular symbols Symb_Gamma(D_w) at finite precision.
//!
//! Values on free edges are stored in x-coordinates (see [`crate::dist`]) modulo
//! p^M, together with a common denominator p^denom_exp.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{
    ClassicalSymbol, Cusp, HeckeOp, ManinBasis, PadicSymbol, PathKind, PolyValue, RefinedForm, Term,
};
use crate::dist::{theta_xcoords, ActionCache, ApproxDistribution};
use crate::error::{Error, Result};
use crate::linalg::{kernel_element, pivot_columns, solve, ModMatrix};
use crate::padic::{PadicNum, Zmod};

pub const SCHEMA: &str = "padic-msymb/1";

/// A linear operator on symbol values, as sparse blocks of M x M matrices.
#[derive(Debug)]
pub struct BlockOp {
    pub m: usize,
    /// rows[e] lists (source edge, matrix) with out_e = sum A x_source.
    pub rows: Vec<Vec<(usize, ModMatrix)>>,
}

impl BlockOp {
    fn from_terms(cache: &ActionCache, rows: &[Vec<Term>]) -> Result<Self> {
        Self::from_matrices(&cache.z, cache.m, rows, |g| cache.get(g))
    }

    /// Block operator from term rows, with `get` supplying the action matrices.
    pub fn from_matrices(
        z: &Zmod,
        m: usize,
        rows: &[Vec<Term>],
        get: impl Fn(&crate::classical::Mat2) -> Result<Arc<ModMatrix>> + Sync,
    ) -> Result<Self> {
        let z = *z;
        let rows = rows
            .par_iter()
            .map(|terms| {
                let mut acc: HashMap<usize, ModMatrix> = HashMap::new();
                for t in terms {
                    let a = get(&t.mat)?;
                    let c = z.from_i64(t.coeff);
                    let e = acc.entry(t.free as usize).or_insert_with(|| ModMatrix::zeros(m, m));
                    for (o, &v) in e.data.iter_mut().zip(&a.data) {
                        *o = z.add(*o, z.mul(c, v));
                    }
                }
                let mut row: Vec<(usize, ModMatrix)> = acc.into_iter().collect();
                row.sort_by_key(|r| r.0);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockOp { m, rows })
    }

    pub fn apply(&self, z: &Zmod, values: &[Vec<u64>]) -> Vec<Vec<u64>> {
        self.rows
            .par_iter()
            .map(|row| {
                let mut out = vec![0u64; self.m];
                for (src, a) in row {
                    for (o, v) in out.iter_mut().zip(a.mul_vec(z, &values[*src])) {
                        *o = z.add(*o, v);
                    }
                }
                out
            })
            .collect()
    }

    /// Dense matrix on flattened coordinates (edge major).
    pub fn dense(&self, source_edges: usize) -> ModMatrix {
        let m = self.m;
        let cols = source_edges * m;
        let mut out = ModMatrix::zeros(self.rows.len() * m, cols);
        for (r, row) in self.rows.iter().enumerate() {
            for (src, a) in row {
                for i in 0..m {
                    for j in 0..m {
                        out.data[(r * m + i) * cols + src * m + j] = a.get(i, j);
                    }
                }
            }
        }
        out
    }
}

/// Symb_{Gamma_0(Np)}(D_w) truncated to M moments modulo p^M.
#[derive(Debug)]
pub struct OcSpace {
    pub basis: Arc<ManinBasis>,
    pub weight: i64,
    /// Weight shift w0: the action is by omega^weight <.>^{weight+w0}.
    pub shift: Option<PadicNum>,
    pub z: Zmod,
    cache: ActionCache,
    ops: RwLock<HashMap<HeckeOp, Arc<BlockOp>>>,
    constraints: OnceLock<Arc<BlockOp>>,
}

impl OcSpace {
    pub fn new(basis: Arc<ManinBasis>, weight: i64, m: usize) -> Result<Arc<Self>> {
        let z = Zmod::new(basis.p, m as u32)?;
        Ok(Arc::new(OcSpace {
            basis,
            weight,
            shift: None,
            z,
            cache: ActionCache::new(z, weight, m),
            ops: RwLock::new(HashMap::new()),
            constraints: OnceLock::new(),
        }))
    }

    /// Space for the p-adic weight character omega^weight <.>^{weight+shift}.
    pub fn with_shift(basis: Arc<ManinBasis>, weight: i64, shift: PadicNum, m: usize) -> Result<Arc<Self>> {
        let z = Zmod::new(basis.p, m as u32)?;
        Ok(Arc::new(OcSpace {
            basis,
            weight,
            shift: Some(shift),
            z,
            cache: ActionCache::with_shift(z, weight, shift, m),
            ops: RwLock::new(HashMap::new()),
            constraints: OnceLock::new(),
        }))
    }

    fn resized(&self, m: usize) -> Result<Arc<Self>> {
        match self.shift {
            Some(w0) => Self::with_shift(self.basis.clone(), self.weight, w0, m),
            None => Self::new(self.basis.clone(), self.weight, m),
        }
    }

    pub fn num_moments(&self) -> usize {
        self.z.n as usize
    }

    pub fn num_edges(&self) -> usize {
        self.basis.num_free()
    }

    pub fn op(&self, op: HeckeOp) -> Result<Arc<BlockOp>> {
        if let Some(b) = self.ops.read().expect("op lock").get(&op) {
            return Ok(b.clone());
        }
        let terms = self.basis.hecke_terms(op)?;
        let b = Arc::new(BlockOp::from_terms(&self.cache, &terms)?);
        self.ops.write().expect("op lock").insert(op, b.clone());
        Ok(b)
    }

    pub fn constraint_op(&self) -> Result<Arc<BlockOp>> {
        if let Some(c) = self.constraints.get() {
            return Ok(c.clone());
        }
        let c = Arc::new(BlockOp::from_terms(&self.cache, &self.basis.constraints)?);
        Ok(self.constraints.get_or_init(|| c).clone())
    }

    fn eval_terms(&self, terms: &[Term], values: &[Vec<u64>]) -> Result<Vec<u64>> {
        let z = &self.z;
        let mut out = vec![0u64; self.num_moments()];
        for t in terms {
            let a = self.cache.get(&t.mat)?;
            let c = z.from_i64(t.coeff);
            for (o, v) in out.iter_mut().zip(a.mul_vec(z, &values[t.free as usize])) {
                *o = z.add(*o, z.mul(c, v));
            }
        }
        Ok(out)
    }
}

/// Smallest p-adic valuation among residues (n when all vanish).
fn min_val(z: &Zmod, values: &[Vec<u64>]) -> u32 {
    values.iter().flatten().map(|&x| z.val(x)).min().unwrap_or(z.n)
}

/// Rescales so that x_j is divisible by p^j; returns the exponent used.
fn lattice_fix(z: &Zmod, values: &mut [Vec<u64>]) -> u32 {
    lattice_floor(z, values, 0)
}

/// Rescales so that x_j is divisible by p^max(j, h); returns the exponent used.
fn lattice_floor(z: &Zmod, values: &mut [Vec<u64>], h: u32) -> u32 {
    let delta = values
        .iter()
        .flat_map(|v| v.iter().enumerate())
        .filter(|(_, &x)| x != 0)
        .map(|(j, &x)| (j as i64).max(h as i64) - z.val(x) as i64)
        .max()
        .unwrap_or(0)
        .max(0) as u32;
    if delta > 0 {
        let f = z.pow_p(delta);
        for x in values.iter_mut().flatten() {
            *x = z.mul(*x, f);
        }
    }
    delta
}

/// Unit part of c modulo p^n together with its valuation.
fn unit_residue(z: &Zmod, c: &PadicNum) -> Result<(u64, i64)> {
    if c.is_zero() {
        return Err(Error::domain("scalar is zero at its precision"));
    }
    if (c.rel_prec() as u64) < z.n as u64 {
        return Err(Error::precision(format!("scalar known to {} digits, {} needed", c.rel_prec(), z.n)));
    }
    Ok((c.unit_part() % z.modulus, c.valuation()))
}

/// An element of Symb_Gamma(D_w) stored by its free-edge values.
#[derive(Clone, Debug)]
pub struct OverconvergentSymbol {
    pub space: Arc<OcSpace>,
    /// x-coordinates modulo p^M; the symbol is values / p^denom_exp.
    pub values: Vec<Vec<u64>>,
    pub denom_exp: u32,
    pub sign: Option<i32>,
}

#[derive(Serialize, Deserialize)]
struct SymbolRecord {
    schema: String,
    kind: String,
    level: u64,
    p: u64,
    weight: i64,
    moments: usize,
    denom_exp: u32,
    sign: Option<i32>,
    /// Moments of each free-edge value as strings "u*p^v+O(p^t)".
    values: Vec<Vec<PadicNum>>,
}

impl OverconvergentSymbol {
    pub fn zero(space: Arc<OcSpace>) -> Self {
        let values = vec![vec![0u64; space.num_moments()]; space.num_edges()];
        OverconvergentSymbol { space, values, denom_exp: 0, sign: None }
    }

    pub fn p(&self) -> u64 {
        self.space.z.p
    }
    pub fn weight(&self) -> i64 {
        self.space.weight
    }
    pub fn num_moments(&self) -> usize {
        self.space.num_moments()
    }
    pub fn z(&self) -> &Zmod {
        &self.space.z
    }
    /// Absolute precision of the total measures.
    pub fn precision(&self) -> i64 {
        self.num_moments() as i64 - self.denom_exp as i64
    }
    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().all(|&x| x == 0)
    }
    /// Valuation of the stored values minus the denominator.
    pub fn valuation(&self) -> i64 {
        min_val(self.z(), &self.values) as i64 - self.denom_exp as i64
    }

    fn with_values(&self, values: Vec<Vec<u64>>, denom_exp: u32) -> Self {
        OverconvergentSymbol { space: self.space.clone(), values, denom_exp, sign: self.sign }
    }

    fn scaled_stored(&self, e: u32) -> Vec<Vec<u64>> {
        let z = self.z();
        let f = z.pow_p(e);
        self.values.iter().map(|v| v.iter().map(|&x| z.mul(x, f)).collect()).collect()
    }

    fn combine(&self, o: &Self, neg: bool) -> Self {
        let z = self.z();
        let d = self.denom_exp.max(o.denom_exp);
        let a = self.scaled_stored(d - self.denom_exp);
        let b = o.scaled_stored(d - o.denom_exp);
        let values = a
            .iter()
            .zip(&b)
            .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| if neg { z.sub(u, v) } else { z.add(u, v) }).collect())
            .collect();
        let sign = if self.sign == o.sign { self.sign } else { None };
        OverconvergentSymbol { space: self.space.clone(), values, denom_exp: d, sign }
    }

    pub fn add(&self, o: &Self) -> Self {
        self.combine(o, false)
    }
    pub fn sub(&self, o: &Self) -> Self {
        self.combine(o, true)
    }

    /// Multiplication by a p-adic scalar; negative valuations enter the denominator.
    pub fn scale(&self, c: &PadicNum) -> Result<Self> {
        if c.is_exact_zero() {
            return Ok(Self { sign: self.sign, ..Self::zero(self.space.clone()) });
        }
        let z = self.z();
        let (u, v) = unit_residue(z, c)?;
        let mut out = self.scale_residue(u);
        if v >= 0 {
            out.values = out.scaled_stored(v as u32);
        } else {
            out.denom_exp += (-v) as u32;
        }
        Ok(out)
    }

    pub fn scale_residue(&self, u: u64) -> Self {
        let z = self.z();
        self.with_values(self.values.iter().map(|v| v.iter().map(|&x| z.mul(x, u)).collect()).collect(), self.denom_exp)
    }

    pub fn hecke(&self, op: HeckeOp) -> Result<Self> {
        let b = self.space.op(op)?;
        Ok(self.with_values(b.apply(self.z(), &self.values), self.denom_exp))
    }

    /// Valuation of (op - lambda) Phi.
    pub fn residual(&self, op: HeckeOp, lambda: &PadicNum) -> Result<i64> {
        let img = self.hecke(op)?;
        Ok(img.sub(&self.scale(lambda)?).valuation())
    }

    /// Valuation of the Manin-relation defect.
    pub fn constraint_residual(&self) -> Result<i64> {
        let c = self.space.constraint_op()?;
        let d = c.apply(self.z(), &self.values);
        Ok(min_val(self.z(), &d) as i64 - self.denom_exp as i64)
    }

    pub fn constraints_hold(&self) -> Result<bool> {
        Ok(self.constraint_residual()? >= self.precision())
    }

    fn distribution(&self, x: &[u64]) -> ApproxDistribution {
        ApproxDistribution::from_xcoords(self.z(), self.weight(), x, self.denom_exp)
    }

    /// Stored x-coordinates of Phi({r} - {s}).
    pub fn evaluate_stored(&self, r: Cusp, s: Cusp, kind: PathKind) -> Result<Vec<u64>> {
        self.space.eval_terms(&self.space.basis.divisor_terms(r, s, kind), &self.values)
    }

    /// Phi({r} - {s}).
    pub fn evaluate(&self, r: Cusp, s: Cusp, kind: PathKind) -> Result<ApproxDistribution> {
        Ok(self.distribution(&self.evaluate_stored(r, s, kind)?))
    }

    /// Phi(sum n_i {c_i}) for a degree-zero divisor.
    pub fn evaluate_divisor(&self, divisor: &[(i64, Cusp)]) -> Result<ApproxDistribution> {
        if divisor.iter().map(|d| d.0).sum::<i64>() != 0 {
            return Err(Error::domain("divisor does not have degree zero"));
        }
        let mut terms = Vec::new();
        for &(n, c) in divisor {
            terms.extend(self.space.basis.cusp_terms(c, PathKind::Floor).into_iter().map(|t| Term { coeff: t.coeff * n, ..t }));
        }
        Ok(self.distribution(&self.space.eval_terms(&crate::classical::manin::merge_terms(terms), &self.values)?))
    }

    /// Value on the i-th free edge.
    pub fn edge_value(&self, i: usize) -> ApproxDistribution {
        self.distribution(&self.values[i])
    }

    /// rho_k^* into classical symbols with p-adic coefficients.
    pub fn specialize_rho(&self) -> Result<PadicSymbol> {
        let w = self.weight();
        if w < 0 || self.space.shift.is_some() {
            return Err(Error::domain("rho_k needs a non-negative integer weight"));
        }
        let values = (0..self.values.len())
            .map(|i| self.edge_value(i).specialize_rho(w as u32))
            .collect::<Result<Vec<PolyValue<PadicNum>>>>()?;
        Ok(ClassicalSymbol { basis: self.space.basis.clone(), k: w as u32, values })
    }

    /// (Phi + s Phi|iota) / 2.
    pub fn sign_part(&self, s: i32) -> Result<Self> {
        let z = self.z();
        let img = self.hecke(HeckeOp::Iota)?;
        let sum = if s == 1 { self.add(&img) } else { self.sub(&img) };
        let half = z.inv(2).expect("p is odd");
        Ok(OverconvergentSymbol { sign: Some(s), ..sum.scale_residue(half) })
    }

    /// The same symbol with fewer moments, reduced modulo p^m.
    pub fn truncate(&self, m: usize) -> Result<Self> {
        if m > self.num_moments() {
            return Err(Error::precision("cannot add moments by truncation"));
        }
        if m == self.num_moments() {
            return Ok(self.clone());
        }
        let space = self.space.resized(m)?;
        let modulus = space.z.modulus;
        let values = self.values.iter().map(|v| v[..m].iter().map(|&x| x % modulus).collect()).collect();
        Ok(OverconvergentSymbol { space, values, denom_exp: self.denom_exp, sign: self.sign })
    }

    /// Flattened stored coordinates (edge major).
    pub fn coords(&self) -> Vec<u64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn from_coords(space: Arc<OcSpace>, coords: &[u64], denom_exp: u32, sign: Option<i32>) -> Self {
        let m = space.num_moments();
        let values = coords.chunks(m).map(|c| c.to_vec()).collect();
        OverconvergentSymbol { space, values, denom_exp, sign }
    }

    /// Scales by a unit so that the first nonzero stored coordinate is a power of p.
    pub fn normalize_gauge(&self) -> Self {
        let z = self.z();
        match self.coords().into_iter().find(|&x| x != 0) {
            Some(x) => {
                let u = x / z.pow_p(z.val(x));
                let low = Zmod { p: z.p, n: z.n - z.val(x), modulus: z.modulus / z.pow_p(z.val(x)) };
                let inv = low.inv(u % low.modulus).expect("unit");
                self.scale_residue(inv)
            }
            None => self.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        if self.space.shift.is_some() {
            return Err(Error::Serialization("symbols of shifted weight are not serialized".into()));
        }
        let rec = SymbolRecord {
            schema: SCHEMA.into(),
            kind: "overconvergent-symbol".into(),
            level: self.space.basis.n,
            p: self.p(),
            weight: self.weight(),
            moments: self.num_moments(),
            denom_exp: self.denom_exp,
            sign: self.sign,
            values: (0..self.values.len()).map(|i| self.edge_value(i).moments).collect(),
        };
        serde_json::to_string(&rec).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: SymbolRecord = serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        if rec.schema != SCHEMA || rec.kind != "overconvergent-symbol" {
            return Err(Error::Serialization(format!("unexpected schema {} / {}", rec.schema, rec.kind)));
        }
        let basis = ManinBasis::new(rec.level, rec.p)?;
        let space = OcSpace::new(basis, rec.weight, rec.moments)?;
        let values = rec
            .values
            .iter()
            .map(|ms| {
                ms.iter()
                    .enumerate()
                    .map(|(j, m)| m.shift(j as i64 + rec.denom_exp as i64).residue(space.z.n))
                    .collect::<Result<Vec<u64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != space.num_edges() {
            return Err(Error::Serialization("edge count does not match the presentation".into()));
        }
        Ok(OverconvergentSymbol { space, values, denom_exp: rec.denom_exp, sign: rec.sign })
    }
}

/// Some lift of a classical symbol: low moments from phi, higher moments
/// fixed by solving the relation defect.
pub fn lift_naive(phi: &PadicSymbol, m: usize) -> Result<OverconvergentSymbol> {
    let k = phi.k as usize;
    if m <= k {
        return Err(Error::precision(format!("{m} moments cannot carry weight {k}")));
    }
    let space = OcSpace::new(phi.basis.clone(), k as i64, m)?;
    let z = space.z;
    let p = z.p;
    // m_j = (-1)^j c_j / C(k, j)
    let mut binom = vec![BigInt::from(1)];
    for j in 0..k {
        let next = &binom[j] * BigInt::from(k - j) / BigInt::from(j + 1);
        binom.push(next);
    }
    let lows: Vec<Vec<PadicNum>> = phi
        .values
        .iter()
        .map(|v| {
            v.coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let sign = if j % 2 == 0 { 1 } else { -1 };
                    let f = BigRational::new(BigInt::from(sign), binom[j].clone());
                    *c * PadicNum::from_rational(p, &f, i64::MAX / 4)
                })
                .collect()
        })
        .collect();
    let s = lows
        .iter()
        .flat_map(|v| v.iter().enumerate())
        .filter(|(_, c)| !c.is_zero())
        .map(|(j, c)| -c.valuation() - j as i64)
        .max()
        .unwrap_or(0)
        .max(0);
    let mut values = vec![vec![0u64; m]; space.num_edges()];
    for (e, v) in lows.iter().enumerate() {
        for (j, c) in v.iter().enumerate() {
            let c = c.shift(j as i64 + s);
            if c.abs_prec() < m as i64 {
                return Err(Error::precision(format!(
                    "classical value known mod p^{}, lift needs p^{m}",
                    c.abs_prec() - j as i64 - s
                )));
            }
            values[e][j] = c.residue(m as u32)?;
        }
    }
    let cons = space.constraint_op()?;
    let defect = cons.apply(&z, &values);
    if defect.iter().any(|d| d[..=k].iter().any(|&x| x != 0)) {
        return Err(Error::domain("classical symbol does not satisfy the Manin relations"));
    }
    let mut out = OverconvergentSymbol { space: space.clone(), values, denom_exp: s as u32, sign: None };
    if m > k + 1 {
        // unknowns: moments above k on every edge; equations: moments above k of every constraint
        let hi = m - k - 1;
        let dense = cons.dense(space.num_edges());
        let rows: Vec<usize> = (0..cons.rows.len()).flat_map(|r| (k + 1..m).map(move |j| r * m + j)).collect();
        let cols: Vec<usize> = (0..space.num_edges()).flat_map(|e| (k + 1..m).map(move |j| e * m + j)).collect();
        let mut a = ModMatrix::zeros(rows.len(), cols.len());
        for (ri, &r) in rows.iter().enumerate() {
            for (ci, &c) in cols.iter().enumerate() {
                a.set(ri, ci, dense.get(r, c));
            }
        }
        let b: Vec<u64> = defect.iter().flat_map(|d| d[k + 1..].iter().map(|&x| z.neg(x))).collect();
        let sol = solve(&z, &a, &b, z.n);
        if sol.residual_val < z.n {
            return Err(Error::inconsistent(format!(
                "relation defect unsolvable beyond p^{}",
                sol.residual_val
            )));
        }
        let mut vals = out.scaled_stored(sol.denom_exp);
        for (e, v) in vals.iter_mut().enumerate() {
            for j in 0..hi {
                v[k + 1 + j] = sol.x[e * hi + j];
            }
        }
        let delta = lattice_fix(&z, &mut vals);
        out.values = vals;
        out.denom_exp += sol.denom_exp + delta;
    }
    Ok(out)
}

/// Multiplies column e*m + j by p^j, so that unknowns become y with x_j = p^j y_j.
fn to_ycoords(z: &Zmod, a: &mut ModMatrix, m: usize) {
    let pw: Vec<u64> = (0..m as u32).map(|j| z.pow_p(j)).collect();
    let cols = a.cols;
    for row in a.data.chunks_mut(cols) {
        for (c, x) in row.iter_mut().enumerate() {
            *x = z.mul(*x, pw[c % m]);
        }
    }
}

fn from_ycoords(z: &Zmod, y: &[u64], m: usize) -> Vec<u64> {
    y.iter().enumerate().map(|(c, &v)| z.mul(v, z.pow_p((c % m) as u32))).collect()
}

/// A random symbol satisfying the Manin relations, with lattice values.
pub fn random_symbol(space: &Arc<OcSpace>, rng: &mut impl Rng) -> Result<OverconvergentSymbol> {
    let z = space.z;
    let m = space.num_moments();
    let mut c = space.constraint_op()?.dense(space.num_edges());
    to_ycoords(&z, &mut c, m);
    let y = kernel_element(&z, &c, z.n, |_| rng.gen_range(0..z.modulus));
    Ok(OverconvergentSymbol::from_coords(space.clone(), &from_ycoords(&z, &y, m), 0, None))
}

/// Outcome of a U_p iteration.
#[derive(Clone, Debug)]
pub struct Projection {
    pub symbol: OverconvergentSymbol,
    /// Valuation of (U_p - beta) Phi before each iteration and after the last.
    pub history: Vec<i64>,
}

/// Limit of (beta^{-1} U_p)^n Phi. For weight k >= 0 and v_p(beta) > 0 the
/// moments 0..k are held fixed, so Phi must lift a classical beta-eigensymbol.
pub fn up_project(phi: &OverconvergentSymbol, beta: &PadicNum, iters: usize) -> Result<Projection> {
    let h = beta.valuation();
    if h < 0 {
        return Err(Error::domain("U_p eigenvalue must be integral"));
    }
    let w = phi.weight();
    if w >= 0 && h > w + 1 {
        return Err(Error::domain("slope exceeds k + 1"));
    }
    let mut cur = phi.clone();
    if h > 0 {
        // eigensymbols of slope h have m_j in p^{-min(j,h)} Z_p
        let floor = lattice_floor(phi.z(), &mut cur.values, h as u32);
        cur.denom_exp += floor;
    }
    let target = cur.precision();
    let mut history = vec![cur.residual(HeckeOp::Up, beta)?];
    let mut stalled = 0;
    for it in 0..iters {
        if *history.last().unwrap() >= target {
            return Ok(Projection { symbol: cur, history });
        }
        cur = if h == 0 {
            cur.hecke(HeckeOp::Up)?.scale(&beta.inverse()?)?
        } else {
            pinned_step(&cur, beta, w as usize)?
        };
        let r = cur.residual(HeckeOp::Up, beta)?;
        stalled = if r <= *history.last().unwrap() { stalled + 1 } else { 0 };
        history.push(r);
        if stalled >= 3 {
            return Err(Error::NonConvergence { iterations: it + 1, history });
        }
    }
    if *history.last().unwrap() >= target {
        return Ok(Projection { symbol: cur, history });
    }
    Err(Error::NonConvergence { iterations: iters, history })
}

/// One step Phi -> beta^{-1} U_p Phi on moments above k, at working precision
/// M + v_p(beta), keeping moments 0..k.
fn pinned_step(cur: &OverconvergentSymbol, beta: &PadicNum, k: usize) -> Result<OverconvergentSymbol> {
    let z = *cur.z();
    let h = beta.valuation() as u32;
    let m = cur.num_moments();
    let ext = cur.space.resized(m + h as usize)?;
    let ez = ext.z;
    let lifted: Vec<Vec<u64>> = cur
        .values
        .iter()
        .map(|v| {
            let mut e = v.clone();
            e.resize(m + h as usize, 0);
            e
        })
        .collect();
    let img = ext.op(HeckeOp::Up)?.apply(&ez, &lifted);
    let (u, _) = unit_residue(&ez, beta)?;
    let uinv = ez.inv(u).expect("unit");
    let ph = ez.pow_p(h);
    let mut values = cur.values.clone();
    for (e, v) in values.iter_mut().enumerate() {
        for j in k + 1..m {
            let x = ez.mul(img[e][j], uinv);
            // x is divisible by p^h up to the unknown digits
            v[j] = (x / ph) % z.modulus;
        }
    }
    Ok(cur.with_values(values, cur.denom_exp))
}

/// An eigensymbol of unit U_p-eigenvalue `up` and T_l-eigenvalues `hecke`, of
/// sign `sign`, found in the ordinary part of random symbols.
pub fn ordinary_eigensymbol(
    space: &Arc<OcSpace>,
    up: &PadicNum,
    hecke: &[(u64, PadicNum)],
    sign: i32,
    seed: u64,
) -> Result<OverconvergentSymbol> {
    if up.valuation() != 0 {
        return Err(Error::domain("ordinary projection needs a unit eigenvalue"));
    }
    let z = space.z;
    let m = space.num_moments();
    let threshold = (m as u32).div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upop = space.op(HeckeOp::Up)?;
    let mut basis_vecs: Vec<OverconvergentSymbol> = Vec::new();
    let mut misses = 0;
    while misses < 2 && basis_vecs.len() < 4 * space.num_edges() {
        let mut v = random_symbol(space, &mut rng)?.sign_part(sign)?;
        for _ in 0..m + 4 {
            v.values = upop.apply(&z, &v.values);
        }
        let mut cand = basis_vecs.clone();
        cand.push(v.clone());
        let cols: Vec<Vec<u64>> = cand.iter().map(|s| s.scaled_stored(s_max_denom(&cand) - s.denom_exp)).map(|vals| vals.concat()).collect();
        let mut a = ModMatrix::zeros(cols[0].len(), cols.len());
        for (c, col) in cols.iter().enumerate() {
            for (r, &x) in col.iter().enumerate() {
                a.set(r, c, x);
            }
        }
        if pivot_columns(&z, &a, threshold).len() == cand.len() {
            basis_vecs.push(v);
        } else {
            misses += 1;
        }
    }
    if basis_vecs.is_empty() {
        return Err(Error::inconsistent("ordinary part is zero"));
    }
    // columns: (op - lambda) b_i, stacked over the tracked operators
    let d = s_max_denom(&basis_vecs);
    let basis_vecs: Vec<OverconvergentSymbol> =
        basis_vecs.iter().map(|b| b.with_values(b.scaled_stored(d - b.denom_exp), d)).collect();
    let mut ops = vec![(HeckeOp::Up, *up)];
    ops.extend(hecke.iter().map(|(l, a)| (HeckeOp::T(*l), *a)));
    let images: Vec<Vec<u64>> = basis_vecs
        .par_iter()
        .map(|b| {
            let mut col = Vec::new();
            for (op, lam) in &ops {
                let (u, v) = unit_residue(&z, lam).unwrap_or((0, 0));
                let lam_res = if lam.is_zero() { 0 } else { z.mul(u, z.pow_p(v.max(0) as u32)) };
                let img = b.hecke(*op)?;
                col.extend(img.coords().iter().zip(b.coords()).map(|(&x, y)| z.sub(x, z.mul(lam_res, y))));
            }
            Ok(col)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut a = ModMatrix::zeros(images[0].len(), images.len());
    for (c, col) in images.iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            a.set(r, c, x);
        }
    }
    let mut first = true;
    let coeffs = kernel_element(&z, &a, threshold, |_| {
        let v = if first { 1 } else { 0 };
        first = false;
        v
    });
    if first {
        return Err(Error::inconsistent("no ordinary eigensymbol with the requested eigenvalues"));
    }
    let mut out = OverconvergentSymbol::zero(space.clone());
    out.denom_exp = d;
    for (b, &c) in basis_vecs.iter().zip(&coeffs) {
        out = out.add(&b.scale_residue(c));
    }
    out.sign = Some(sign);
    if out.is_zero() {
        return Err(Error::inconsistent("eigensymbol vanished"));
    }
    Ok(out)
}

fn s_max_denom(v: &[OverconvergentSymbol]) -> u32 {
    v.iter().map(|s| s.denom_exp).max().unwrap_or(0)
}

/// Theta_k^* from weight -2-k to weight k; moments grow by k+1 and so does the modulus.
pub fn theta_symbol(psi: &OverconvergentSymbol) -> Result<OverconvergentSymbol> {
    let w = psi.weight();
    if w > -2 {
        return Err(Error::domain("theta needs a weight -2-k symbol"));
    }
    let k = (-2 - w) as u32;
    let space = OcSpace::new(psi.space.basis.clone(), k as i64, psi.num_moments() + k as usize + 1)?;
    let values = psi
        .values
        .iter()
        .map(|y| theta_xcoords(psi.z(), k, y).map(|r| r.1))
        .collect::<Result<Vec<_>>>()?;
    let flip = if k % 2 == 0 { -1 } else { 1 };
    Ok(OverconvergentSymbol { space, values, denom_exp: psi.denom_exp, sign: psi.sign.map(|s| s * flip) })
}

/// T_l-eigenvalues a_l/l^{k+1} of the weight -2-k companion, for up to `count` primes.
fn companion_hecke(f: &RefinedForm, count: usize, prec: i64) -> Vec<(u64, PadicNum)> {
    let p = f.p();
    let npl = f.data.n * p;
    let mut ls: Vec<(u64, i64)> = f
        .data
        .al
        .iter()
        .filter_map(|(l, a)| l.parse::<u64>().ok().map(|l| (l, *a)))
        .filter(|(l, _)| npl % l != 0)
        .collect();
    ls.sort();
    ls.into_iter()
        .take(count)
        .map(|(l, a)| {
            let r = BigRational::new(BigInt::from(a), BigInt::from(l).pow(f.k() + 1));
            (l, PadicNum::from_rational(p, &r, prec))
        })
        .collect()
}

/// The critical eigensymbol Phi_{f_beta} of sign `sign` as Theta_k^* of the
/// ordinary companion eigensymbol at weight -2-k; M moments in the result.
pub fn theta_lift_critical(f: &RefinedForm, sign: i32, m: usize, seed: u64) -> Result<OverconvergentSymbol> {
    if !f.theta_critical {
        return Err(Error::domain("refined form is not theta-critical"));
    }
    let k = f.k() as usize;
    if m <= k + 2 {
        return Err(Error::precision("too few moments for the theta lift"));
    }
    let p = f.p();
    let basis = ManinBasis::new(f.data.n, p)?;
    let space = OcSpace::new(basis, -2 - k as i64, m - k - 1 + GUARD)?;
    let prec = (m + GUARD) as i64 + 4;
    let up = f.beta.shift(-(k as i64) - 1).truncate(prec);
    if up.valuation() != 0 {
        return Err(Error::domain("companion eigenvalue is not a unit: f is not theta-critical"));
    }
    let hecke = companion_hecke(f, 5, prec);
    let companion_sign = if k % 2 == 0 { -sign } else { sign };
    let psi = ordinary_eigensymbol(&space, &up, &hecke, companion_sign, seed)?;
    Ok(theta_symbol(&psi)?.truncate(m)?.normalize_gauge())
}

/// Extra digits carried through the companion computation.
const GUARD: usize = 4;

/// The Hecke element t with t(x) = 0 used to build the flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Uniformizer {
    /// U_p - beta.
    UpMinusBeta,
    /// sum c_l (T_l - a_l).
    HeckeCombination(Vec<(u64, i64)>),
}

/// v_0 = Phi_{f_beta}, v_1, ..., v_{e-1} with t v_i = v_{i-1} and t v_0 ~ 0.
#[derive(Clone, Debug)]
pub struct EigenFlag {
    pub sign: i32,
    pub e: usize,
    pub uniformizer: Uniformizer,
    pub vectors: Vec<OverconvergentSymbol>,
    /// Valuation of t v_0, then of t v_i - v_{i-1}.
    pub residuals: Vec<i64>,
}

impl EigenFlag {
    /// The flag reduced to m moments, with residuals measured there.
    pub fn truncate(&self, f: &RefinedForm, m: usize) -> Result<EigenFlag> {
        let vectors = self.vectors.iter().map(|v| v.truncate(m)).collect::<Result<Vec<_>>>()?;
        let mut residuals = vec![self.uniformizer.apply(&vectors[0], f)?.valuation()];
        for w in vectors.windows(2) {
            residuals.push(self.uniformizer.apply(&w[1], f)?.sub(&w[0]).valuation());
        }
        Ok(EigenFlag { vectors, residuals, ..self.clone() })
    }
}

impl Uniformizer {
    pub(crate) fn parts(&self, f: &RefinedForm) -> Result<Vec<(HeckeOp, PadicNum, i64)>> {
        match self {
            Uniformizer::UpMinusBeta => Ok(vec![(HeckeOp::Up, f.beta, 1)]),
            Uniformizer::HeckeCombination(cs) => cs
                .iter()
                .map(|&(l, c)| {
                    let a = f.data.a(l).ok_or_else(|| Error::domain(format!("a_{l} not available for the uniformizer")))?;
                    Ok((HeckeOp::T(l), PadicNum::from_i128(f.p(), a as i128, i64::MAX / 4), c))
                })
                .collect(),
        }
    }

    /// t(s).
    pub fn apply(&self, s: &OverconvergentSymbol, f: &RefinedForm) -> Result<OverconvergentSymbol> {
        let z = *s.z();
        let mut acc = s.scale_residue(0);
        for (op, lam, c) in self.parts(f)? {
            let img = if lam.is_zero() { s.hecke(op)? } else { s.hecke(op)?.sub(&s.scale(&lam)?) };
            acc = acc.add(&img.scale_residue(z.from_i64(c)));
        }
        Ok(acc)
    }

    fn dense(&self, space: &OcSpace, f: &RefinedForm) -> Result<ModMatrix> {
        let z = space.z;
        let ne = space.num_edges();
        let n = ne * space.num_moments();
        let mut out = ModMatrix::zeros(n, n);
        for (op, lam, c) in self.parts(f)? {
            let (u, v) = unit_residue(&z, &lam).unwrap_or((0, 0));
            let lam = if v >= z.n as i64 { 0 } else { z.mul(u, z.pow_p(v as u32)) };
            let mut m = space.op(op)?.dense(ne);
            for i in 0..n {
                m.set(i, i, z.sub(m.get(i, i), lam));
            }
            let cz = z.from_i64(c);
            for (o, x) in out.data.iter_mut().zip(&m.data) {
                *o = z.add(*o, z.mul(cz, *x));
            }
        }
        Ok(out)
    }
}

/// [t; relations; iota - sign] in y-coordinates.
fn flag_system(space: &OcSpace, f: &RefinedForm, sign: i32, uni: &Uniformizer) -> Result<ModMatrix> {
    let z = space.z;
    let ne = space.num_edges();
    let mut iota = space.op(HeckeOp::Iota)?.dense(ne);
    let s = z.from_i64(sign as i64);
    for i in 0..iota.rows {
        iota.set(i, i, z.sub(iota.get(i, i), s));
    }
    let mut a = uni.dense(space, f)?.vstack(&space.constraint_op()?.dense(ne)).vstack(&iota);
    to_ycoords(&z, &mut a, space.num_moments());
    Ok(a)
}

/// Generalized eigenspace flag through v0 for the chosen uniformizer; `e` is
/// the first step at which t v = v_{e-1} has no solution at precision.
pub fn generalized_eigenspace(
    v0: &OverconvergentSymbol,
    f: &RefinedForm,
    uni: &Uniformizer,
    max_e: usize,
) -> Result<EigenFlag> {
    let sign = v0.sign.ok_or_else(|| Error::domain("flag needs a symbol of definite sign"))?;
    let space = v0.space.clone();
    let z = space.z;
    let m = z.n;
    let a = flag_system(&space, f, sign, uni)?;
    let threshold = m.div_ceil(2);
    let r0 = uni.apply(v0, f)?.valuation();
    let mut vectors = vec![v0.clone()];
    let mut residuals = vec![r0];
    let n = space.num_edges() * space.num_moments();
    let extra = a.rows - n;
    // for t = T_l - a_l also require (U_p - beta) v_i in span(v_0, ..., v_{i-1})
    let mut ub = match uni {
        Uniformizer::UpMinusBeta => None,
        Uniformizer::HeckeCombination(_) => Some(Uniformizer::UpMinusBeta.dense(&space, f)?),
    };
    if let Some(u) = ub.as_mut() {
        to_ycoords(&z, u, space.num_moments());
    }
    while vectors.len() < max_e {
        let prev = vectors.last().unwrap();
        let mut b = prev.coords();
        b.extend(std::iter::repeat(0).take(extra));
        let sol = match &ub {
            None => solve(&z, &a, &b, threshold),
            Some(u) => {
                let i = vectors.len();
                let mut full = ModMatrix::zeros(a.rows + n, n + i);
                for r in 0..a.rows {
                    full.data[r * (n + i)..r * (n + i) + n].copy_from_slice(a.row(r));
                }
                for r in 0..n {
                    let row = (a.rows + r) * (n + i);
                    full.data[row..row + n].copy_from_slice(u.row(r));
                }
                for (j, v) in vectors.iter().enumerate() {
                    for (r, x) in v.coords().into_iter().enumerate() {
                        full.set(a.rows + r, n + j, z.neg(x));
                    }
                }
                b.extend(std::iter::repeat(0).take(n));
                let mut sol = solve(&z, &full, &b, threshold);
                sol.x.truncate(n);
                sol
            }
        };
        // an inconsistent step leaves a residual far below the accuracy of v_{i-1}
        let accuracy = (*residuals.last().unwrap()).clamp(0, m as i64) as u32;
        if sol.residual_val < accuracy.div_ceil(2).max(2) {
            break;
        }
        let x = from_ycoords(&z, &sol.x, space.num_moments());
        let next = OverconvergentSymbol::from_coords(space.clone(), &x, prev.denom_exp + sol.denom_exp, Some(sign));
        if next.precision() <= 1 {
            break;
        }
        let res = uni.apply(&next, f)?.sub(prev).valuation();
        vectors.push(next);
        residuals.push(res);
    }
    Ok(EigenFlag { sign, e: vectors.len(), uniformizer: uni.clone(), vectors, residuals })
}

/// Flags for both signs with a common uniformizer: U_p - beta first, then
/// T_l - a_l over the available primes, keeping the first with e > 1.
pub fn generalized_eigenspaces(
    plus: &OverconvergentSymbol,
    minus: &OverconvergentSymbol,
    f: &RefinedForm,
    max_e: usize,
) -> Result<(EigenFlag, EigenFlag)> {
    let npl = f.data.n * f.p();
    let mut primes: Vec<u64> = f.data.al.keys().filter_map(|l| l.parse().ok()).filter(|l| npl % l != 0).collect();
    primes.sort();
    let candidates = std::iter::once(Uniformizer::UpMinusBeta)
        .chain(primes.into_iter().take(4).map(|l| Uniformizer::HeckeCombination(vec![(l, 1)])));
    let mut first = None;
    for uni in candidates {
        let a = generalized_eigenspace(plus, f, &uni, max_e)?;
        let b = generalized_eigenspace(minus, f, &uni, max_e)?;
        if a.e > 1 && b.e > 1 {
            if a.e != b.e {
                return Err(Error::inconsistent(format!("flag dimensions differ across signs: {} vs {}", a.e, b.e)));
            }
            return Ok((a, b));
        }
        first.get_or_insert((a, b));
    }
    Ok(first.expect("at least one candidate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{eigensystems, refine, FormType, RootChoice};

    fn x11_ordinary(prec: i64) -> (PadicSymbol, RefinedForm) {
        let b = ManinBasis::new(11, 3).unwrap();
        let (systems, _) = eigensystems(b, 0, 3).unwrap();
        let s = systems.iter().find(|s| s.form_type == FormType::Cuspidal).unwrap();
        let f = refine(&s.eigendata().unwrap(), RootChoice::Ordinary, prec).unwrap();
        (s.refined_eigensymbol(&f, 1, prec).unwrap(), f)
    }

    #[test]
    fn lift_specializes_back() {
        let (phi, _) = x11_ordinary(20);
        let lift = lift_naive(&phi, 10).unwrap();
        assert!(lift.constraints_hold().unwrap());
        let back = lift.specialize_rho().unwrap();
        for (a, b) in back.values.iter().zip(&phi.values) {
            assert!(a.coeffs[0].agrees_with(&b.coeffs[0]));
        }
    }

    #[test]
    fn ordinary_projection_converges() {
        let (phi, f) = x11_ordinary(20);
        let lift = lift_naive(&phi, 10).unwrap();
        let proj = up_project(&lift, &f.beta, 40).unwrap();
        let h = &proj.history;
        assert!(h.windows(2).all(|w| w[1] > w[0]), "{h:?}");
        assert!(*h.last().unwrap() >= proj.symbol.precision());
        assert!(proj.symbol.residual(HeckeOp::T(2), &PadicNum::from_i128(3, -2, 30)).unwrap() >= proj.symbol.precision());
    }

    #[test]
    fn random_symbols_satisfy_relations_and_hecke_commutes() {
        let b = ManinBasis::new(11, 3).unwrap();
        let space = OcSpace::new(b, -2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_symbol(&space, &mut rng).unwrap();
        assert!(v.constraints_hold().unwrap());
        let a = v.hecke(HeckeOp::T(2)).unwrap().hecke(HeckeOp::Up).unwrap();
        let c = v.hecke(HeckeOp::Up).unwrap().hecke(HeckeOp::T(2)).unwrap();
        assert_eq!(a.values, c.values);
        assert!(a.constraints_hold().unwrap());
        let i2 = v.hecke(HeckeOp::Iota).unwrap().hecke(HeckeOp::Iota).unwrap();
        assert_eq!(i2.values, v.values);
    }

    #[test]
    fn json_round_trip() {
        let (phi, _) = x11_ordinary(12);
        let lift = lift_naive(&phi, 6).unwrap();
        let back = OverconvergentSymbol::from_json(&lift.to_json().unwrap()).unwrap();
        assert_eq!(back.values, lift.values);
        assert_eq!(back.denom_exp, lift.denom_exp);
    }
}

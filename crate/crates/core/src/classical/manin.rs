//! Manin-symbol presentation of degree-zero divisors for Gamma_0(Np).
//!
//! Coset representatives are indexed by P^1(Z/NpZ). The S- and tau-relations
//! are solved along a spanning tree of the tau-triangles, so every coset value
//! becomes an explicit combination of the values on a small set of free edges.
//! The leftover relations (root triangle, elliptic points) are kept as
//! constraints that any assignment of free values must satisfy.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer 2x2 matrix (a b; c d).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: i128,
    pub b: i128,
    pub c: i128,
    pub d: i128,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 { a: 1, b: 0, c: 0, d: 1 };
    pub const S: Mat2 = Mat2 { a: 0, b: -1, c: 1, d: 0 };
    pub const TAU: Mat2 = Mat2 { a: 0, b: -1, c: 1, d: -1 };
    pub const IOTA: Mat2 = Mat2 { a: 1, b: 0, c: 0, d: -1 };

    pub fn new(a: i128, b: i128, c: i128, d: i128) -> Self {
        Mat2 { a, b, c, d }
    }
    pub fn det(&self) -> i128 {
        self.a * self.d - self.b * self.c
    }
    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let m = |x: i128, y: i128| x.checked_mul(y).expect("matrix entry overflow");
        Mat2 {
            a: m(self.a, o.a) + m(self.b, o.c),
            b: m(self.a, o.b) + m(self.b, o.d),
            c: m(self.c, o.a) + m(self.d, o.c),
            d: m(self.c, o.b) + m(self.d, o.d),
        }
    }
    /// Adjugate; the inverse when det = 1.
    pub fn adj(&self) -> Mat2 {
        Mat2 { a: self.d, b: -self.b, c: -self.c, d: self.a }
    }
    /// Inverse of a determinant +-1 matrix.
    pub fn inv_unimodular(&self) -> Mat2 {
        let det = self.det();
        assert!(det == 1 || det == -1, "not unimodular");
        let a = self.adj();
        Mat2 { a: a.a * det, b: a.b * det, c: a.c * det, d: a.d * det }
    }
    /// Moebius action on a cusp.
    pub fn act_cusp(&self, r: Cusp) -> Cusp {
        Cusp::new(self.a * r.num + self.b * r.den, self.c * r.num + self.d * r.den)
    }
}

/// A cusp u/v in lowest terms with v >= 0; infinity is 1/0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cusp {
    pub num: i128,
    pub den: i128,
}

impl Cusp {
    pub const INFINITY: Cusp = Cusp { num: 1, den: 0 };

    pub fn new(num: i128, den: i128) -> Self {
        assert!(num != 0 || den != 0, "0/0 is not a cusp");
        let g = num.gcd(&den);
        let (mut n, mut d) = (num / g, den / g);
        if d < 0 || (d == 0 && n < 0) {
            n = -n;
            d = -d;
        }
        Cusp { num: n, den: d }
    }
    pub fn from_int(n: i128) -> Self {
        Cusp { num: n, den: 1 }
    }
    pub fn is_infinity(&self) -> bool {
        self.den == 0
    }
}

/// Continued-fraction expansion used to build unimodular paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathKind {
    /// Regular expansion with floor partial quotients.
    Floor,
    /// Nearest-integer expansion.
    Nearest,
}

/// Matrices h_i of determinant 1 with {r} - {oo} = -sum_i h_i({0} - {oo}).
pub fn unimodular_path(r: Cusp, kind: PathKind) -> Vec<Mat2> {
    if r.is_infinity() {
        return vec![];
    }
    let (mut u, mut v) = (r.num, r.den);
    let mut quotients = Vec::new();
    while v != 0 {
        let q = match kind {
            PathKind::Floor => Integer::div_floor(&u, &v),
            PathKind::Nearest => {
                let f = Integer::div_floor(&u, &v);
                let rem = u - f * v;
                if 2 * rem.abs() > v.abs() {
                    f + 1
                } else {
                    f
                }
            }
        };
        let rem = u - q * v;
        quotients.push(q);
        u = v;
        v = rem;
    }
    let (mut p0, mut q0) = (1i128, 0i128);
    let (mut p1, mut q1) = (quotients[0], 1i128);
    let mut out = Vec::with_capacity(quotients.len());
    let push = |out: &mut Vec<Mat2>, p: i128, q: i128, pp: i128, qq: i128| {
        let e = p * qq - pp * q;
        debug_assert!(e == 1 || e == -1);
        out.push(Mat2::new(p, e * pp, q, e * qq));
    };
    push(&mut out, p1, q1, p0, q0);
    for &a in &quotients[1..] {
        let (p2, q2) = (a * p1 + p0, a * q1 + q0);
        push(&mut out, p2, q2, p1, q1);
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
    }
    out
}

/// One summand s * v_free | mat of a linear expression in free-edge values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term {
    pub free: u32,
    pub coeff: i64,
    pub mat: Mat2,
}

/// Right-multiplies every matrix of an expression and scales its coefficients.
fn compose<'a>(expr: &'a [Term], m: &Mat2, scale: i64) -> impl Iterator<Item = Term> + 'a {
    let m = *m;
    expr.iter().map(move |t| Term { free: t.free, coeff: t.coeff * scale, mat: t.mat.mul(&m) })
}

/// Merges terms with equal (free, mat) and drops zero coefficients.
pub fn merge_terms(terms: impl IntoIterator<Item = Term>) -> Vec<Term> {
    let mut acc: HashMap<(u32, Mat2), i64> = HashMap::new();
    let mut order = Vec::new();
    for t in terms {
        let key = (t.free, t.mat);
        let e = acc.entry(key).or_insert_with(|| {
            order.push(key);
            0
        });
        *e += t.coeff;
    }
    order
        .into_iter()
        .filter_map(|k| {
            let c = acc[&k];
            (c != 0).then_some(Term { free: k.0, coeff: c, mat: k.1 })
        })
        .collect()
}

/// Hecke-type operators acting through a finite list of matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeckeOp {
    T(u64),
    Up,
    Diamond(u64),
    Iota,
}

/// P^1(Z/mZ) with canonical representatives.
#[derive(Clone, Debug)]
pub struct P1 {
    pub modulus: i128,
    reps: Vec<(i128, i128)>,
    table: Vec<u32>,
}

impl P1 {
    pub fn new(m: u64) -> Self {
        let mi = m as i128;
        let units: Vec<i128> = (1..mi.max(2)).filter(|u| u.gcd(&mi) == 1).collect();
        let units = if m == 1 { vec![0] } else { units };
        let mut table = vec![u32::MAX; (m * m) as usize];
        let mut reps = Vec::new();
        for c in 0..mi {
            for d in 0..mi {
                if c.gcd(&d).gcd(&mi) != 1 && m != 1 {
                    continue;
                }
                let idx = (c * mi + d) as usize;
                if table[idx] != u32::MAX {
                    continue;
                }
                let id = reps.len() as u32;
                reps.push((c, d));
                for &u in &units {
                    let j = ((u * c).rem_euclid(mi) * mi + (u * d).rem_euclid(mi)) as usize;
                    table[j] = id;
                }
            }
        }
        P1 { modulus: mi, reps, table }
    }
    pub fn len(&self) -> usize {
        self.reps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }
    pub fn index(&self, c: i128, d: i128) -> usize {
        let m = self.modulus;
        let i = self.table[(c.rem_euclid(m) * m + d.rem_euclid(m)) as usize];
        assert!(i != u32::MAX, "({c}:{d}) is not in P^1");
        i as usize
    }
    pub fn rep(&self, i: usize) -> (i128, i128) {
        self.reps[i]
    }
}

/// Lifts (c : d) in P^1(Z/mZ) to a matrix of SL_2(Z) with that bottom row.
fn lift_to_sl2(c: i128, d: i128, m: i128) -> Mat2 {
    if c == 0 {
        return Mat2::IDENTITY;
    }
    let mut d1 = d;
    while c.gcd(&d1) != 1 {
        d1 += m;
    }
    let e = d1.extended_gcd(&c);
    // e.x * d1 + e.y * c = 1
    let g = Mat2::new(e.x, -e.y, c, d1);
    debug_assert_eq!(g.det(), 1);
    g
}

/// Manin presentation of Symb_{Gamma_0(Np)}.
#[derive(Debug)]
pub struct ManinBasis {
    pub n: u64,
    pub p: u64,
    pub p1: P1,
    /// Coset representatives g_x.
    pub reps: Vec<Mat2>,
    /// Coset of the representative of each free edge.
    pub free: Vec<usize>,
    /// v_x as a combination of free values, for every coset x.
    exprs: Vec<Vec<Term>>,
    /// Each constraint reads sum coeff * v_free | mat = 0.
    pub constraints: Vec<Vec<Term>>,
    pub elliptic2: usize,
    pub elliptic3: usize,
    hecke_cache: Mutex<HashMap<HeckeOp, Arc<Vec<Vec<Term>>>>>,
}

impl ManinBasis {
    pub fn new(n: u64, p: u64) -> Result<Arc<Self>> {
        if n == 0 {
            return Err(Error::domain("level must be positive"));
        }
        if p < 3 || !crate::arith::is_prime(p) {
            return Err(Error::domain(format!("p = {p} must be an odd prime")));
        }
        if n % p == 0 {
            return Err(Error::unsupported(format!("p = {p} divides the tame level {n}")));
        }
        let m = n * p;
        let p1 = P1::new(m);
        let mi = m as i128;
        let reps: Vec<Mat2> = (0..p1.len()).map(|i| {
            let (c, d) = p1.rep(i);
            lift_to_sl2(c, d, mi)
        }).collect();
        let coset = |g: &Mat2| p1.index(g.c, g.d);
        let s_map: Vec<usize> = reps.iter().map(|g| coset(&g.mul(&Mat2::S))).collect();
        let t_map: Vec<usize> = reps.iter().map(|g| coset(&g.mul(&Mat2::TAU))).collect();
        // gamma with g_x * sigma = gamma * g_{x sigma}
        let gam = |x: usize, sigma: &Mat2, y: usize| reps[x].mul(sigma).mul(&reps[y].inv_unimodular());
        let count = reps.len();

        let mut tri_of = vec![usize::MAX; count];
        let mut triangles: Vec<[usize; 3]> = Vec::new();
        let mut elliptic3 = Vec::new();
        for x in 0..count {
            if tri_of[x] != usize::MAX {
                continue;
            }
            if t_map[x] == x {
                elliptic3.push(x);
                tri_of[x] = usize::MAX - 1;
                continue;
            }
            let t = triangles.len();
            let tri = [x, t_map[x], t_map[t_map[x]]];
            for &y in &tri {
                tri_of[y] = t;
            }
            triangles.push(tri);
        }
        if triangles.is_empty() {
            return Err(Error::unsupported("presentation without tau-triangles"));
        }
        let elliptic2: Vec<usize> = (0..count).filter(|&x| s_map[x] == x).collect();

        // BFS spanning tree over triangles; parent[t] is the coset of t whose S-partner lies in the parent
        let mut parent = vec![usize::MAX; triangles.len()];
        let mut visited = vec![false; triangles.len()];
        let mut is_tree_coset = vec![false; count];
        let mut order = vec![0usize];
        visited[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(t) = queue.pop_front() {
            for &x in &triangles[t] {
                let y = s_map[x];
                if y == x || tri_of[y] >= triangles.len() {
                    continue;
                }
                let t2 = tri_of[y];
                if !visited[t2] {
                    visited[t2] = true;
                    parent[t2] = y;
                    is_tree_coset[x] = true;
                    is_tree_coset[y] = true;
                    order.push(t2);
                    queue.push_back(t2);
                }
            }
        }
        if visited.iter().any(|v| !v) {
            return Err(Error::inconsistent("triangle graph is disconnected"));
        }

        let mut exprs: Vec<Option<Vec<Term>>> = vec![None; count];
        let mut free = Vec::new();
        for x in 0..count {
            let y = s_map[x];
            if is_tree_coset[x] || exprs[x].is_some() || y < x {
                continue;
            }
            let f = free.len() as u32;
            free.push(x);
            exprs[x] = Some(vec![Term { free: f, coeff: 1, mat: Mat2::IDENTITY }]);
            if y != x {
                let g = gam(x, &Mat2::S, y);
                exprs[y] = Some(compose(exprs[x].as_ref().unwrap(), &g, -1).collect());
            }
        }
        let tau_relation = |exprs: &Vec<Option<Vec<Term>>>, x: usize, include_x: bool| -> Vec<Term> {
            let y1 = t_map[x];
            let y2 = t_map[y1];
            let g1 = gam(x, &Mat2::TAU, y1).inv_unimodular();
            let g2 = gam(x, &Mat2::TAU.mul(&Mat2::TAU), y2).inv_unimodular();
            let mut terms: Vec<Term> = Vec::new();
            if include_x {
                terms.extend(exprs[x].as_ref().unwrap().iter().copied());
            }
            terms.extend(compose(exprs[y1].as_ref().expect("tau neighbour unresolved"), &g1, 1));
            terms.extend(compose(exprs[y2].as_ref().expect("tau neighbour unresolved"), &g2, 1));
            merge_terms(terms)
        };
        for &t in order.iter().skip(1).rev() {
            let x = parent[t];
            let rest = tau_relation(&exprs, x, false);
            let ex: Vec<Term> = rest.iter().map(|t| Term { coeff: -t.coeff, ..*t }).collect();
            let y = s_map[x];
            let g = gam(x, &Mat2::S, y);
            exprs[y] = Some(merge_terms(compose(&ex, &g, -1)));
            exprs[x] = Some(ex);
        }
        let exprs: Vec<Vec<Term>> = exprs.into_iter().map(|e| e.expect("unresolved coset")).collect();

        let wrap: Vec<Option<Vec<Term>>> = exprs.iter().cloned().map(Some).collect();
        let mut constraints = vec![tau_relation(&wrap, triangles[0][0], true)];
        for &x in &elliptic3 {
            constraints.push(tau_relation(&wrap, x, true));
        }
        for &x in &elliptic2 {
            let g = gam(x, &Mat2::S, x);
            let mut terms = exprs[x].clone();
            terms.extend(compose(&exprs[x], &g, 1));
            constraints.push(merge_terms(terms));
        }
        constraints.retain(|c| !c.is_empty());

        Ok(Arc::new(ManinBasis {
            n,
            p,
            p1,
            reps,
            free,
            exprs,
            constraints,
            elliptic2: elliptic2.len(),
            elliptic3: elliptic3.len(),
            hecke_cache: Mutex::new(HashMap::new()),
        }))
    }

    pub fn level(&self) -> u64 {
        self.n * self.p
    }
    /// Index [SL_2(Z) : Gamma_0(Np)].
    pub fn index(&self) -> usize {
        self.reps.len()
    }
    pub fn num_free(&self) -> usize {
        self.free.len()
    }
    pub fn coset_of(&self, g: &Mat2) -> usize {
        self.p1.index(g.c, g.d)
    }
    pub fn coset_expr(&self, x: usize) -> &[Term] {
        &self.exprs[x]
    }

    /// Terms of Phi(h({0} - {oo})) for h in SL_2(Z).
    pub fn unimodular_terms(&self, h: &Mat2) -> Vec<Term> {
        let x = self.coset_of(h);
        let delta = self.reps[x].mul(&h.inv_unimodular());
        compose(&self.exprs[x], &delta, 1).collect()
    }

    /// Terms of Phi({r} - {oo}).
    pub fn cusp_terms(&self, r: Cusp, kind: PathKind) -> Vec<Term> {
        let mut out = Vec::new();
        for h in unimodular_path(r, kind) {
            out.extend(self.unimodular_terms(&h).into_iter().map(|t| Term { coeff: -t.coeff, ..t }));
        }
        out
    }

    /// Terms of Phi({r} - {s}).
    pub fn divisor_terms(&self, r: Cusp, s: Cusp, kind: PathKind) -> Vec<Term> {
        let mut out = self.cusp_terms(r, kind);
        out.extend(self.cusp_terms(s, kind).into_iter().map(|t| Term { coeff: -t.coeff, ..t }));
        merge_terms(out)
    }

    /// The divisor g_x({0} - {oo}) as a pair of cusps.
    pub fn edge_divisor(&self, x: usize) -> (Cusp, Cusp) {
        let g = &self.reps[x];
        (g.act_cusp(Cusp::from_int(0)), g.act_cusp(Cusp::INFINITY))
    }

    pub fn hecke_matrices(&self, op: HeckeOp) -> Result<Vec<Mat2>> {
        let level = self.level();
        match op {
            HeckeOp::T(l) => {
                if !crate::arith::is_prime(l) || level % l == 0 {
                    return Err(Error::domain(format!("T_{l} needs a prime not dividing {level}")));
                }
                let li = l as i128;
                let mut v: Vec<Mat2> = (0..li).map(|b| Mat2::new(1, b, 0, li)).collect();
                v.push(Mat2::new(li, 0, 0, 1));
                Ok(v)
            }
            HeckeOp::Up => {
                let p = self.p as i128;
                Ok((0..p).map(|b| Mat2::new(1, b, 0, p)).collect())
            }
            HeckeOp::Iota => Ok(vec![Mat2::IOTA]),
            HeckeOp::Diamond(a) => {
                let n = self.n as i128;
                let a = a as i128;
                if a.gcd(&n) != 1 {
                    return Err(Error::domain(format!("<{a}> needs a unit modulo {n}")));
                }
                // sigma_a in SL_2(Z), congruent to diag(a^-1, a) mod N and to 1 mod p
                let m = level as i128;
                let a_mod = crate::arith::inv_mod_i64(self.p as i64, self.n.max(1) as i64)
                    .map(|pinv| {
                        let t = ((a - 1) * pinv as i128).rem_euclid(n.max(1));
                        (1 + self.p as i128 * t).rem_euclid(m)
                    })
                    .unwrap_or(1);
                let c = m;
                let mut d = a_mod;
                while c.gcd(&d) != 1 {
                    d += m;
                }
                let e = d.extended_gcd(&c);
                Ok(vec![Mat2::new(e.x, -e.y, c, d)])
            }
        }
    }

    /// For each free edge e, the terms of (op Phi)(D_e).
    pub fn hecke_terms(&self, op: HeckeOp) -> Result<Arc<Vec<Vec<Term>>>> {
        if let Some(t) = self.hecke_cache.lock().unwrap().get(&op) {
            return Ok(t.clone());
        }
        let mats = self.hecke_matrices(op)?;
        let terms: Vec<Vec<Term>> = self
            .free
            .iter()
            .map(|&x| {
                let (r, s) = self.edge_divisor(x);
                let mut all = Vec::new();
                for alpha in &mats {
                    let d = self.divisor_terms(alpha.act_cusp(r), alpha.act_cusp(s), PathKind::Floor);
                    all.extend(compose(&d, alpha, 1));
                }
                merge_terms(all)
            })
            .collect();
        let terms = Arc::new(terms);
        self.hecke_cache.lock().unwrap().insert(op, terms.clone());
        Ok(terms)
    }
}

/// Index of Gamma_0(m) in SL_2(Z) from the product formula.
pub fn gamma0_index(m: u64) -> u64 {
    let mut idx = m;
    for q in crate::arith::prime_divisors(m) {
        idx = idx / q * (q + 1);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force coset count: bottom rows of SL_2(Z) mod m up to units.
    fn brute_index(m: u64) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mi = m as i64;
        for c in 0..mi {
            for d in 0..mi {
                if num_integer::gcd(num_integer::gcd(c, d), mi) != 1 {
                    continue;
                }
                let canon = (1..mi)
                    .filter(|u| num_integer::gcd(*u, mi) == 1)
                    .map(|u| ((u * c) % mi, (u * d) % mi))
                    .min()
                    .unwrap();
                seen.insert(canon);
            }
        }
        seen.len()
    }

    #[test]
    fn coset_counts() {
        for (n, p, expected) in [(1, 3, 4usize), (11, 3, 48), (1, 5, 6), (32, 5, 288)] {
            let b = ManinBasis::new(n, p).unwrap();
            assert_eq!(b.index(), expected);
            assert_eq!(b.index() as u64, gamma0_index(n * p));
            if n * p < 60 {
                assert_eq!(brute_index(n * p), expected);
            }
        }
    }

    #[test]
    fn elliptic_points() {
        let b = ManinBasis::new(1, 3).unwrap();
        assert_eq!((b.elliptic2, b.elliptic3), (0, 1));
        let b = ManinBasis::new(1, 5).unwrap();
        assert_eq!((b.elliptic2, b.elliptic3), (2, 0));
        let b = ManinBasis::new(32, 5).unwrap();
        assert_eq!((b.elliptic2, b.elliptic3), (0, 0));
        assert_eq!(b.num_free(), 49);
        assert_eq!(b.constraints.len(), 1);
    }

    #[test]
    fn p_dividing_level_is_unsupported() {
        assert!(matches!(ManinBasis::new(15, 5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn representatives_are_unimodular_and_in_their_coset() {
        let b = ManinBasis::new(11, 3).unwrap();
        for (x, g) in b.reps.iter().enumerate() {
            assert_eq!(g.det(), 1);
            assert_eq!(b.coset_of(g), x);
        }
    }

    #[test]
    fn paths_telescope() {
        for kind in [PathKind::Floor, PathKind::Nearest] {
            for (u, v) in [(7i128, 13i128), (-5, 3), (4, 1), (100, 27), (1, 81)] {
                let r = Cusp::new(u, v);
                let path = unimodular_path(r, kind);
                // -sum h_i({0}-{oo}) must telescope to {r} - {oo}
                let mut cur = Cusp::INFINITY;
                for h in &path {
                    assert_eq!(h.det(), 1);
                    assert_eq!(h.act_cusp(Cusp::from_int(0)), cur);
                    cur = h.act_cusp(Cusp::INFINITY);
                }
                assert_eq!(cur, r);
            }
        }
        assert_ne!(
            unimodular_path(Cusp::new(100, 27), PathKind::Floor),
            unimodular_path(Cusp::new(100, 27), PathKind::Nearest)
        );
    }
}

//! The acceptance suite as a library routine, shared by the test target and the CLI.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classical::{
    boundary_symbol, cm_discriminant, eigensystems, refine, EigenSystem, FormType, HeckeOp, ManinBasis, Mat2,
    RefinedForm, RootChoice,
};
use crate::dist::{ApproxDistribution, SigmaMatrix};
use crate::family::{family_lift, specialized_lseries, two_variable_l, FamilyDistribution, FamilyLift};
use crate::lfun::{
    admissibility_check, admissibility_check_boundary, coset_moment_boundary, ep_factor, secondary_lfunctions,
    special_value, EigenMeasure, FlagMeasure,
};
use crate::ovsymb::{
    generalized_eigenspaces, lift_naive, random_symbol, theta_lift_critical, up_project, EigenFlag, OcSpace,
    OverconvergentSymbol,
};
use crate::{PadicNum, Zmod};

type Res<T> = Result<T, Box<dyn std::error::Error>>;

struct Outcome {
    pass: bool,
    detail: String,
    /// Failure matches an analyzed deviation.
    known_deviation: bool,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail, known_deviation: false }
    }
}

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

// X_0(32) at p = 5: critical refinement of the CM form and its flags.

const CM_M: usize = 12;
/// Guard moments for the flag solve, which loses about half the digits at a ramified point.
const FLAG_GUARD: usize = 4;

struct CmSetup {
    f: RefinedForm,
    plus: OverconvergentSymbol,
    flags: OnceLock<Result<(EigenFlag, EigenFlag), String>>,
}

fn cm_setup() -> Res<&'static CmSetup> {
    static CELL: OnceLock<Result<CmSetup, String>> = OnceLock::new();
    let cell = CELL.get_or_init(|| {
        let build = || -> Res<CmSetup> {
            let (systems, _) = eigensystems(ManinBasis::new(32, 5)?, 0, 5)?;
            let s = systems
                .iter()
                .find(|s| {
                    s.form_type == FormType::Cuspidal && s.eigendata().ok().and_then(|e| cm_discriminant(&e)) == Some(-4)
                })
                .ok_or("no CM system at level 32")?;
            let f = refine(&s.eigendata()?, RootChoice::Critical, 30)?;
            let plus = theta_lift_critical(&f, 1, CM_M, 7)?;
            Ok(CmSetup { f, plus, flags: OnceLock::new() })
        };
        build().map_err(|e| e.to_string())
    });
    cell.as_ref().map_err(|e| e.clone().into())
}

fn cm_flags() -> Res<&'static (EigenFlag, EigenFlag)> {
    let s = cm_setup()?;
    let cell = s.flags.get_or_init(|| {
        let build = || -> Res<(EigenFlag, EigenFlag)> {
            let plus = theta_lift_critical(&s.f, 1, CM_M + FLAG_GUARD, 7)?;
            let minus = theta_lift_critical(&s.f, -1, CM_M + FLAG_GUARD, 7)?;
            let (a, b) = generalized_eigenspaces(&plus, &minus, &s.f, 4)?;
            Ok((a.truncate(&s.f, CM_M)?, b.truncate(&s.f, CM_M)?))
        };
        build().map_err(|e| e.to_string())
    });
    cell.as_ref().map_err(|e| e.clone().into())
}

// X_0(11) ordinary refinements.

fn x11_system(p: u64) -> Res<(EigenSystem, RefinedForm)> {
    let (systems, _) = eigensystems(ManinBasis::new(11, p)?, 0, 3)?;
    let s = systems.into_iter().find(|s| s.form_type == FormType::Cuspidal).ok_or("no cuspidal system at level 11")?;
    let f = refine(&s.eigendata()?, RootChoice::Ordinary, 30)?;
    Ok((s, f))
}

fn x11_eigensymbol(p: u64, sign: i32, m: usize) -> Res<(OverconvergentSymbol, RefinedForm)> {
    let (s, f) = x11_system(p)?;
    let phi = s.refined_eigensymbol(&f, sign, 30)?;
    let mut v = up_project(&lift_naive(&phi, m)?, &f.beta, 80)?.symbol;
    v.sign = Some(sign);
    Ok((v, f))
}

fn criterion_1() -> Res<Outcome> {
    let t = Instant::now();
    let beta = q(27, 1);
    let tau = boundary_symbol(ManinBasis::new(1, 3)?, 2, &beta)?;
    let mut bad_j0 = 0;
    let mut j0_is_minus_inverse = true;
    let mut bad_other = 0;
    let mut checked = 0;
    for n in 1..=4u32 {
        let pn = 3i64.pow(n);
        for a in (1..pn as u64).filter(|a| a % 3 != 0) {
            for j in 0..=2u32 {
                let got = coset_moment_boundary(&tau, &beta, a, n, j)?;
                let want = if j == 2 { q(1, pn) } else { q(0, 1) };
                checked += 1;
                if got != want {
                    if j == 0 {
                        bad_j0 += 1;
                        j0_is_minus_inverse &= got == q(-1, pn);
                    } else {
                        bad_other += 1;
                    }
                }
            }
        }
    }
    let total: BigRational =
        [1u64, 2].iter().map(|&a| coset_moment_boundary(&tau, &beta, a, 1, 2)).collect::<Result<Vec<_>, _>>()?.into_iter().sum();
    let total_ok = total == q(2, 3);
    let elapsed = t.elapsed();
    let pass = bad_j0 == 0 && bad_other == 0 && total_ok && elapsed < Duration::from_secs(60);
    let detail = format!(
        "{checked} coset moments (n<=4, j<=2): {bad_other} mismatches at j in {{1,2}}, {bad_j0} at j=0{}; int z^2 over Z_3^* = {total}",
        if bad_j0 > 0 && j0_is_minus_inverse { " (all equal -3^-n)" } else { "" },
    );
    let known_deviation = !pass && bad_other == 0 && total_ok && j0_is_minus_inverse;
    Ok(Outcome { pass, detail, known_deviation })
}

fn criterion_2() -> Res<Outcome> {
    let t = Instant::now();
    let s = cm_setup()?;
    let mu = EigenMeasure { phi: &s.plus, beta: s.f.beta };
    let need = CM_M as f64 - 4.0;
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, tame) in [("trivial", 0u64), ("quadratic", 2)] {
        let sv = special_value(&mu, tame, None, 0, 0)?;
        let v = sv.valuation();
        pass &= v >= need;
        parts.push(format!("{name}: 0 mod 5^{v}"));
    }
    let elapsed = t.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    Ok(Outcome::new(pass, format!("{}; need t >= {need}; M = {CM_M}", parts.join(", "))))
}

fn criterion_3() -> Res<Outcome> {
    let (s, f) = x11_system(3)?;
    let phi = s.refined_eigensymbol(&f, 1, 30)?;
    let lift = lift_naive(&phi, 12)?;
    let back = lift.specialize_rho()?;
    let round_trip = back.values.iter().zip(&phi.values).all(|(a, b)| a.coeffs.iter().zip(&b.coeffs).all(|(x, y)| x.agrees_with(y)));
    let proj = up_project(&lift, &f.beta, 60)?;
    let h = &proj.history;
    let steps = h.len() - 1;
    let gains = h.windows(2).all(|w| w[1] >= w[0] + 1);
    let pass = round_trip && gains && steps >= 8;
    Ok(Outcome::new(pass, format!("rho*(lift) = phi: {round_trip}; residuals {h:?} ({steps} iterations)")))
}

fn random_sigma(rng: &mut ChaCha8Rng, p: i128) -> Mat2 {
    loop {
        let (a, b, c, d) = (rng.gen_range(-40..40), rng.gen_range(-40..40), rng.gen_range(-8..8) * p, rng.gen_range(-40..40));
        let m = Mat2::new(a, b, c, d);
        if a.rem_euclid(p) != 0 && m.det() != 0 {
            return m;
        }
    }
}

fn criterion_4(seed: u64) -> Res<Outcome> {
    let p = 5u64;
    let m = 10usize;
    let k = 2i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
    let mut failures = [0usize; 3];
    for (slot, weight) in [(0usize, k), (1, -2 - k)] {
        for _ in 0..100 {
            let moments: Vec<PadicNum> = (0..m)
                .map(|j| PadicNum::from_i128(p, rng.gen_range(-100_000i128..100_000), (m - j) as i64))
                .collect();
            let mu = ApproxDistribution::new(p, weight, moments);
            let g = SigmaMatrix::new(p, random_sigma(&mut rng, p as i128))?;
            let h = SigmaMatrix::new(p, random_sigma(&mut rng, p as i128))?;
            if !mu.act(&g)?.act(&h)?.agrees_with(&mu.act(&g.mul(&h))?) {
                failures[slot] += 1;
            }
        }
    }
    let z = Zmod::new(p, m as u32)?;
    for _ in 0..100 {
        let x: Vec<Vec<u64>> =
            (0..3).map(|_| (0..m).map(|j| z.mul(z.pow_p(j as u32), rng.gen_range(0..z.modulus))).collect()).collect();
        let mu = FamilyDistribution { k: k as u32, z, x, denom_exp: 0 };
        let g = SigmaMatrix::new(p, random_sigma(&mut rng, p as i128))?;
        let h = SigmaMatrix::new(p, random_sigma(&mut rng, p as i128))?;
        if mu.act(&g)?.act(&h)? != mu.act(&g.mul(&h))? {
            failures[2] += 1;
        }
    }
    let pass = failures.iter().all(|&f| f == 0);
    Ok(Outcome::new(
        pass,
        format!("failures: weight {k}: {}, weight {}: {}, family (D=3): {}", failures[0], -2 - k, failures[1], failures[2]),
    ))
}

fn criterion_5(seed: u64) -> Res<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
    let mut failures = 0;
    let mut checks = 0;
    for k in [0i64, 2] {
        let space = OcSpace::new(ManinBasis::new(11, 3)?, k, 8)?;
        for _ in 0..5 {
            let phi = random_symbol(&space, &mut rng)?;
            let prec = phi.precision();
            let same = |a: &OverconvergentSymbol, b: &OverconvergentSymbol| a.sub(b).valuation() >= prec;
            let ops = [HeckeOp::T(2), HeckeOp::T(5), HeckeOp::T(7), HeckeOp::Up];
            for (i, &a) in ops.iter().enumerate() {
                for &b in &ops[i + 1..] {
                    checks += 1;
                    failures += !same(&phi.hecke(a)?.hecke(b)?, &phi.hecke(b)?.hecke(a)?) as usize;
                }
            }
            checks += 1;
            failures += !same(&phi.hecke(HeckeOp::Iota)?.hecke(HeckeOp::Iota)?, &phi) as usize;
            for op in ops.into_iter().chain([HeckeOp::Iota]) {
                let img = phi.hecke(op)?;
                checks += 2;
                failures += !img.constraints_hold()? as usize;
                let lhs = img.specialize_rho()?;
                let rhs = phi.specialize_rho()?.hecke(op)?;
                let equivariant = lhs
                    .values
                    .iter()
                    .zip(&rhs.values)
                    .all(|(a, b)| a.coeffs.iter().zip(&b.coeffs).all(|(x, y)| x.agrees_with(y)));
                failures += !equivariant as usize;
            }
        }
    }
    let mut eis_ok = true;
    for k in [2u32, 4] {
        let (systems, _) = eigensystems(ManinBasis::new(1, 3)?, k, 3)?;
        let eis: Vec<_> = systems.iter().filter(|s| s.form_type == FormType::Eisenstein).collect();
        eis_ok &= eis.len() == 1 && eis[0].al.iter().all(|(&l, &a)| a == 1 + (l as i64).pow(k + 1));
    }
    let pass = failures == 0 && eis_ok;
    Ok(Outcome::new(pass, format!("{failures}/{checks} randomized failures; Eisenstein a_l = 1 + l^(k+1) (k = 2, 4): {eis_ok}")))
}

fn criterion_6() -> Res<Outcome> {
    let (a, b) = cm_flags()?;
    let need = CM_M as i64 - 6;
    let resid_ok = a.residuals.iter().chain(&b.residuals).all(|&r| r >= need);
    let pass = a.e >= 2 && a.e == b.e && resid_ok;
    Ok(Outcome::new(
        pass,
        format!(
            "e(+) = {}, e(-) = {}, t = {:?}; residuals + {:?}, - {:?} (need >= {need})",
            a.e,
            b.e,
            a.uniformizer,
            a.residuals,
            b.residuals,
        ),
    ))
}

/// Zero pattern of L_i at the even special characters (k = 0, j = 0).
fn secondary_pattern(flag: &EigenFlag, beta: &PadicNum, i: usize) -> Res<Vec<(u64, Option<(u32, u64)>, bool, f64)>> {
    let mu = FlagMeasure::new(flag, beta, i)?;
    let mut out = Vec::new();
    for tame in [0u64, 2] {
        for wild in [None, Some((1, 1)), Some((1, 2)), Some((1, 3)), Some((1, 4))] {
            let sv = special_value(&mu, tame, wild, 0, 0)?;
            out.push((tame, wild, sv.is_zero(), sv.valuation()));
        }
    }
    Ok(out)
}

fn criterion_7() -> Res<Outcome> {
    let s = cm_setup()?;
    let (flag, _) = cm_flags()?;
    let e = flag.e;
    let beta = s.f.beta;
    let series = secondary_lfunctions(flag, &beta, 0, 6)?;
    let l0 = secondary_pattern(flag, &beta, 0)?;
    let top = secondary_pattern(flag, &beta, e - 1)?;
    let l0_vanishes = l0.iter().all(|c| c.2) && series[0].eval_power(0).is_zero();
    let ep_nonzero = |tame: u64, wild: Option<(u32, u64)>| -> bool {
        let nu = crate::lfun::conductor_exponent(5, tame, wild);
        ep_factor(&s.f.alpha, &beta, s.f.data.eps_p, 0, nu, 0).map(|x| !x.is_zero()).unwrap_or(false)
    };
    let nonvanishing: Vec<_> = top.iter().filter(|c| !c.2 && ep_nonzero(c.0, c.1)).collect();
    // gauge: v_i -> c (v_i + lambda v_{i-1})
    let c = PadicNum::from_i128(5, 7, 40);
    let lam = PadicNum::from_i128(5, 3, 40);
    let mut vectors = Vec::with_capacity(e);
    for i in 0..e {
        let mut v = flag.vectors[i].clone();
        if i > 0 {
            v = v.add(&flag.vectors[i - 1].scale(&lam)?);
        }
        vectors.push(v.scale(&c)?);
    }
    let gauged = EigenFlag { vectors, ..flag.clone() };
    let g0 = secondary_pattern(&gauged, &beta, 0)?;
    let gtop = secondary_pattern(&gauged, &beta, e - 1)?;
    let same_pattern = l0.iter().zip(&g0).all(|(a, b)| a.2 == b.2)
        && top.iter().zip(&gtop).all(|(a, b)| a.2 == b.2 && (a.2 || a.3 == b.3));
    let pass = l0_vanishes && !nonvanishing.is_empty() && same_pattern;
    let vals: Vec<String> = nonvanishing.iter().map(|c| format!("{}/{:?}: v={}", c.0, c.1, c.3)).collect();
    Ok(Outcome::new(
        pass,
        format!(
            "e = {e}; L_0 vanishes at all {} characters: {l0_vanishes}; L_{} nonzero at {} ({}); gauge-invariant: {same_pattern}",
            l0.len(),
            e - 1,
            nonvanishing.len(),
            vals.join(", ")
        ),
    ))
}

fn criterion_8() -> Res<Outcome> {
    let beta = q(27, 1);
    let tau = boundary_symbol(ManinBasis::new(1, 3)?, 2, &beta)?;
    let eis = admissibility_check_boundary(&tau, &beta, 4)?;
    let s = cm_setup()?;
    let mu = EigenMeasure { phi: &s.plus, beta: s.f.beta };
    let cm = admissibility_check(&mu, s.f.beta.valuation(), 4, 6)?;
    let pass = eis.holds && cm.holds;
    Ok(Outcome::new(
        pass,
        format!(
            "Eisenstein h = {}: C = {} (per level {:?}); CM h = {}: C = {} (per level {:?})",
            eis.h, eis.fitted_c, eis.per_level, cm.h, cm.fitted_c, cm.per_level
        ),
    ))
}

fn x11_family() -> Res<FamilyLift> {
    let (s, f) = x11_system(3)?;
    let phi = s.refined_eigensymbol(&f, 1, 30)?;
    let v = up_project(&lift_naive(&phi, 9)?, &f.beta, 60)?.symbol;
    let v = v.sign_part(1)?.normalize_gauge();
    Ok(family_lift(&v, &f.beta, 3)?)
}

fn criterion_9() -> Res<Outcome> {
    let t = Instant::now();
    let lift = x11_family()?;
    let (terms, level) = (4, 2);
    let tv = two_variable_l(&lift, 0, terms, level)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for w in [0i128, 3, 6] {
        let w0 = if w == 0 { PadicNum::exact_zero(3) } else { PadicNum::from_i128(3, w, 40) };
        let a = tv.eval_at(&w0);
        let b = specialized_lseries(&lift, &w0, 0, terms, level)?;
        // the specialized symbol is an eigensymbol only up to the neglected u^D terms
        let spec = lift.symbol.specialize_w(&w0)?;
        let eigen = spec.residual(HeckeOp::Up, &lift.beta_at(&w0)?)?.min(spec.constraint_residual()?);
        let mut shared = Vec::new();
        let mut agree = Vec::new();
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            let s = x.abs_prec().min(y.abs_prec()).min(eigen);
            let g = x.agreement(y);
            pass &= g >= s;
            shared.push(s);
            agree.push(g);
        }
        parts.push(format!("w0={w}: agreement {agree:?} >= shared {shared:?}"));
    }
    let elapsed = t.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn criterion_10(seed: u64) -> Res<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(10));
    let mut failures = 0;
    let mut checks = 0;
    for sign in [1i32, -1] {
        let (phi, f) = x11_eigensymbol(5, sign, 10)?;
        let mu = EigenMeasure { phi: &phi, beta: f.beta };
        for _ in 0..8 {
            let tame = rng.gen_range(0..4u64);
            let wild = if rng.gen_bool(0.5) { Some((1, rng.gen_range(1..5u64))) } else { None };
            let a = special_value(&mu, tame, wild, 0, 0)?;
            let b = special_value(&mu, tame, wild, 0, 1)?;
            checks += 1;
            failures += !a.value.agrees_with(&b.value) as usize;
            let parity = if tame % 2 == 0 { 1 } else { -1 };
            if parity != sign {
                checks += 1;
                failures += !(a.is_zero() && b.is_zero()) as usize;
            }
        }
    }
    Ok(Outcome::new(failures == 0, format!("{failures}/{checks} failures over random characters of X_0(11), p = 5")))
}

/// One line of the acceptance report.
#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub index: usize,
    pub name: &'static str,
    pub pass: bool,
    /// Failure matches an analyzed deviation.
    pub known_deviation: bool,
    pub detail: String,
    /// Wall time, left out of serialized reports so they stay deterministic.
    #[serde(skip)]
    pub seconds: f64,
}

impl CriterionReport {
    /// Failure that is not a pinned deviation.
    pub fn unexpected_failure(&self) -> bool {
        !self.pass && !self.known_deviation
    }
}

impl std::fmt::Display for CriterionReport {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.pass { "PASS" } else { "FAIL" };
        let tag = if self.known_deviation { " [known deviation]" } else { "" };
        write!(fmt, "criterion {:>2} {status}{tag}: {}: {} ({:.1}s)", self.index, self.name, self.detail, self.seconds)
    }
}

pub const CRITERIA: [&str; 10] = [
    "Eisenstein exact values",
    "theta-critical vanishing",
    "control-theorem round trip",
    "action law",
    "Hecke coherence",
    "generalized eigenspace",
    "secondary L-functions",
    "admissibility",
    "family specialization identity",
    "Riemann sums and parity",
];

/// Runs criterion `index` (1-based); randomized criteria draw from `seed`.
pub fn run_criterion(index: usize, seed: u64) -> CriterionReport {
    let t = Instant::now();
    let result = match index {
        1 => criterion_1(),
        2 => criterion_2(),
        3 => criterion_3(),
        4 => criterion_4(seed),
        5 => criterion_5(seed),
        6 => criterion_6(),
        7 => criterion_7(),
        8 => criterion_8(),
        9 => criterion_9(),
        10 => criterion_10(seed),
        _ => Err(format!("no criterion {index}").into()),
    };
    let outcome = result.unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
    CriterionReport {
        index,
        name: CRITERIA.get(index.wrapping_sub(1)).copied().unwrap_or("unknown"),
        pass: outcome.pass,
        known_deviation: outcome.known_deviation,
        detail: outcome.detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// Runs the selected criteria in order, calling `each` after every one.
pub fn run(only: &[usize], seed: u64, mut each: impl FnMut(&CriterionReport)) -> Vec<CriterionReport> {
    let selected: Vec<usize> = if only.is_empty() { (1..=CRITERIA.len()).collect() } else { only.to_vec() };
    selected
        .into_iter()
        .map(|i| {
            let r = run_criterion(i, seed);
            each(&r);
            r
        })
        .collect()
}

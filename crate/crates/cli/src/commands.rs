//! The subcommands. Each returns a JSON document with the versioned schema.

use std::collections::BTreeSet;

use anyhow::{bail, Result};
use padic_msymb::classical::{cm_discriminant, eigensystems, refine, HeckeOp, ManinBasis, RefinedForm, RootChoice};
use padic_msymb::family::{family_lift, ramification_diagnostic, specialized_lseries, two_variable_l};
use padic_msymb::lfun::{
    conductor_exponent, ep_factor, lseries, secondary_lfunctions, special_value, BoundaryMeasure, CosetMeasure,
    EigenMeasure, SpecialValue,
};
use padic_msymb::ovsymb::{generalized_eigenspaces, OverconvergentSymbol};
use padic_msymb::selftest::{self, CriterionReport};
use padic_msymb::PadicNum;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::encode::{self, padic, SCHEMA};
use crate::form::{self, Form, Route};

/// Extra moments for flag computations, which lose about half their digits
/// at a ramified point.
const FLAG_GUARD: usize = 4;

fn header(command: &str, cfg: &RunConfig) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("schema".into(), SCHEMA.into());
    m.insert("command".into(), command.into());
    m.insert("config".into(), serde_json::to_value(cfg).expect("config serializes"));
    m
}

fn refinement_summary(f: &RefinedForm) -> Value {
    json!({
        "alpha": padic(&f.alpha),
        "beta": padic(&f.beta),
        "slope": f.slope(),
        "critical_slope": f.critical_slope,
        "theta_critical": f.theta_critical,
        "cm_discriminant": f.cm_discriminant,
    })
}

fn form_summary(form: &Form) -> Value {
    json!({
        "system": form.index,
        "eigendata": form.refined.data,
        "refinement": refinement_summary(&form.refined),
    })
}

pub fn classical(cfg: &RunConfig) -> Result<Value> {
    let (systems, leftover) = eigensystems(ManinBasis::new(cfg.n, cfg.p)?, cfg.k, cfg.primes)?;
    let rows: Vec<Value> = systems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (plus, minus) = s.dims();
            let mut row = json!({
                "index": i,
                "type": s.form_type,
                "al": s.al.iter().map(|(l, a)| (l.to_string(), json!(a))).collect::<serde_json::Map<_, _>>(),
                "dims": { "plus": plus, "minus": minus },
            });
            match s.eigendata() {
                Ok(data) => {
                    let refinements: serde_json::Map<String, Value> = [RootChoice::Ordinary, RootChoice::Critical]
                        .into_iter()
                        .map(|c| {
                            let key = if c == RootChoice::Ordinary { "ordinary" } else { "critical" };
                            let v = match refine(&data, c, cfg.m as i64) {
                                Ok(f) => refinement_summary(&f),
                                Err(e) => json!({ "error": e.to_string() }),
                            };
                            (key.to_string(), v)
                        })
                        .collect();
                    row["cm_discriminant"] = json!(cm_discriminant(&data));
                    row["eigendata"] = json!(data);
                    row["refinements"] = Value::Object(refinements);
                }
                Err(e) => row["eigendata_error"] = json!(e.to_string()),
            }
            row
        })
        .collect();
    let mut out = header("classical", cfg);
    out.insert("unsplit_dimension".into(), json!(leftover));
    out.insert("systems".into(), Value::Array(rows));
    Ok(Value::Object(out))
}

fn symbol_report(phi: &OverconvergentSymbol, f: &RefinedForm) -> Result<Value> {
    Ok(json!({
        "moments": phi.num_moments(),
        "precision": phi.precision(),
        "up_residual": phi.residual(HeckeOp::Up, &f.beta)?,
        "constraint_residual": phi.constraint_residual()?,
    }))
}

pub fn lift(cfg: &RunConfig) -> Result<Value> {
    let form = form::resolve(cfg)?;
    let (phi, route) = form.eigensymbol(cfg, cfg.sign, cfg.m)?;
    let mut out = header("lift", cfg);
    out.insert("form".into(), form_summary(&form));
    out.insert("route".into(), json!(route));
    out.insert("checks".into(), symbol_report(&phi, &form.refined)?);
    out.insert("symbol".into(), serde_json::from_str(&phi.to_json()?)?);
    Ok(Value::Object(out))
}

/// The measure of the refined form: exact boundary moments for a critical
/// Eisenstein series of the requested sign, else the eigensymbol.
enum Measure {
    Boundary(padic_msymb::classical::BoundarySymbol, num_rational::BigRational),
    Symbol(OverconvergentSymbol, PadicNum, Route),
}

impl Measure {
    fn new(form: &Form, cfg: &RunConfig) -> Result<Measure> {
        if let Some((tau, beta)) = form.boundary(cfg.sign)? {
            return Ok(Measure::Boundary(tau, beta));
        }
        let (phi, route) = form.eigensymbol(cfg, cfg.sign, cfg.m)?;
        Ok(Measure::Symbol(phi, form.refined.beta, route))
    }

    fn with<T>(&self, cfg: &RunConfig, run: impl FnOnce(&dyn CosetMeasure) -> T) -> T {
        match self {
            Measure::Boundary(tau, beta) => {
                let prec = padic_msymb::arith::max_precision(cfg.p) as i64;
                run(&BoundaryMeasure { tau, beta: beta.clone(), sign: Some(cfg.sign), prec })
            }
            Measure::Symbol(phi, beta, _) => run(&EigenMeasure { phi, beta: *beta }),
        }
    }

    fn route(&self) -> Value {
        match self {
            Measure::Boundary(..) => json!({ "route": "boundary" }),
            Measure::Symbol(_, _, r) => json!(r),
        }
    }
}

fn tames(cfg: &RunConfig) -> Vec<u64> {
    cfg.characters.iter().map(|c| c.tame).collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn lvalues(cfg: &RunConfig) -> Result<(Value, Vec<SpecialValue>)> {
    let form = form::resolve(cfg)?;
    let measure = Measure::new(&form, cfg)?;
    let jobs: Vec<_> = cfg.characters.iter().flat_map(|c| cfg.js.iter().map(move |&j| (*c, j))).collect();
    let values: Vec<SpecialValue> = jobs
        .par_iter()
        .map(|(c, j)| measure.with(cfg, |mu| special_value(mu, c.tame, c.wild, *j, 0)))
        .collect::<padic_msymb::Result<_>>()?;
    let f = &form.refined;
    let rows: Vec<Value> = values
        .iter()
        .map(|sv| {
            let mut row = encode::special_value(sv);
            let nu = conductor_exponent(cfg.p, sv.tame, sv.wild);
            row["ep_factor"] = match ep_factor(&f.alpha, &f.beta, f.data.eps_p, f.k(), nu, sv.j) {
                Ok(e) => padic(&e),
                Err(e) => json!({ "error": e.to_string() }),
            };
            row
        })
        .collect();
    let mut out = header("lvalues", cfg);
    out.insert("form".into(), form_summary(&form));
    out.insert("measure".into(), measure.route());
    out.insert("values".into(), Value::Array(rows));
    Ok((Value::Object(out), values))
}

pub fn lvalues_csv(values: &[SpecialValue]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tame", "wild_level", "wild_r", "j", "coset_level", "zero", "valuation", "precision", "value"])?;
    for sv in values {
        let (wl, wr) = sv.wild.map(|(l, r)| (l.to_string(), r.to_string())).unwrap_or_default();
        let value = encode::char_value(&sv.value)["value"].as_str().map(String::from).unwrap_or_else(|| format!("{:?}", sv.value));
        w.write_record([
            sv.tame.to_string(),
            wl,
            wr,
            sv.j.to_string(),
            sv.level.to_string(),
            sv.is_zero().to_string(),
            sv.valuation().to_string(),
            sv.precision.to_string(),
            value,
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn lseries_cmd(cfg: &RunConfig) -> Result<Value> {
    let form = form::resolve(cfg)?;
    let measure = Measure::new(&form, cfg)?;
    let series = tames(cfg)
        .par_iter()
        .map(|&t| measure.with(cfg, |mu| lseries(mu, t, cfg.terms, cfg.level)))
        .collect::<padic_msymb::Result<Vec<_>>>()?;
    let mut out = header("lseries", cfg);
    out.insert("form".into(), form_summary(&form));
    out.insert("measure".into(), measure.route());
    out.insert("series".into(), series.iter().map(encode::lseries).collect());
    Ok(Value::Object(out))
}

pub fn secondary(cfg: &RunConfig, max_e: usize, ramification: bool) -> Result<Value> {
    let form = form::resolve(cfg)?;
    let f = &form.refined;
    let (plus, _) = form.eigensymbol(cfg, 1, cfg.m + FLAG_GUARD)?;
    let (minus, _) = form.eigensymbol(cfg, -1, cfg.m + FLAG_GUARD)?;
    let (a, b) = generalized_eigenspaces(&plus, &minus, f, max_e)?;
    let flags = [a.truncate(f, cfg.m)?, b.truncate(f, cfg.m)?];
    let mut per_sign = serde_json::Map::new();
    for flag in &flags {
        let tables = tames(cfg)
            .iter()
            .map(|&t| {
                let ls = secondary_lfunctions(flag, &f.beta, t, cfg.terms)?;
                Ok(json!({ "tame": t, "L": ls.iter().map(encode::lseries).collect::<Vec<_>>() }))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut entry = json!({
            "e": flag.e,
            "uniformizer": flag.uniformizer,
            "residuals": flag.residuals,
            "tables": tables,
        });
        if ramification {
            entry["ramification"] = json!(ramification_diagnostic(flag, f, cfg.d));
        }
        let key = if flag.sign > 0 { "plus" } else { "minus" };
        per_sign.insert(key.into(), entry);
    }
    let mut out = header("secondary", cfg);
    out.insert("form".into(), form_summary(&form));
    out.insert(
        "e_report".into(),
        json!({ "plus": flags[0].e, "minus": flags[1].e, "equal": flags[0].e == flags[1].e, "max_e": max_e }),
    );
    out.insert("flags".into(), Value::Object(per_sign));
    Ok(Value::Object(out))
}

fn w_point(p: u64, w: i64) -> PadicNum {
    if w == 0 {
        PadicNum::exact_zero(p)
    } else {
        PadicNum::from_i128(p, w as i128, padic_msymb::arith::max_precision(p) as i64)
    }
}

pub fn family(cfg: &RunConfig) -> Result<Value> {
    let form = form::resolve(cfg)?;
    let f = &form.refined;
    if f.beta.valuation() != 0 {
        bail!("family lifts need an ordinary refinement (slope {})", f.slope());
    }
    let (phi, _) = form.eigensymbol(cfg, cfg.sign, cfg.m)?;
    let v = phi.sign_part(cfg.sign)?.normalize_gauge();
    let lift = family_lift(&v, &f.beta, cfg.d)?;
    let mut branches = Vec::new();
    for t in tames(cfg) {
        let tv = two_variable_l(&lift, t, cfg.terms, cfg.level)?;
        let mut checks = Vec::new();
        for &w in &cfg.w0 {
            let w0 = w_point(cfg.p, w);
            let direct = tv.eval_at(&w0);
            let spec = specialized_lseries(&lift, &w0, t, cfg.terms, cfg.level)?;
            // the specialization is an eigensymbol only up to the dropped w^D terms
            let sym = lift.symbol.specialize_w(&w0)?;
            let eigen = sym.residual(HeckeOp::Up, &lift.beta_at(&w0)?)?.min(sym.constraint_residual()?);
            let shared: Vec<i64> =
                direct.coeffs.iter().zip(&spec.coeffs).map(|(x, y)| x.abs_prec().min(y.abs_prec()).min(eigen)).collect();
            let agreement: Vec<i64> = direct.coeffs.iter().zip(&spec.coeffs).map(|(x, y)| x.agreement(y)).collect();
            let holds = agreement.iter().zip(&shared).all(|(g, s)| g >= s);
            checks.push(json!({ "w0": w, "agreement": agreement, "shared_precision": shared, "holds": holds }));
        }
        let mut body = tv.to_json();
        body["specialization"] = Value::Array(checks);
        branches.push(body);
    }
    let mut out = header("family", cfg);
    out.insert("form".into(), form_summary(&form));
    out.insert(
        "lift".into(),
        json!({
            "beta_w": lift.beta().coeffs.iter().map(padic).collect::<Vec<_>>(),
            "solve_residuals": lift.solve_residuals,
            "up_residual": lift.residual,
        }),
    );
    out.insert("two_variable".into(), Value::Array(branches));
    Ok(Value::Object(out))
}

pub fn selftest(only: &[usize], seed: u64) -> Result<(Value, bool)> {
    let reports: Vec<CriterionReport> = selftest::run(only, seed, |r| eprintln!("{r}"));
    let ok = !reports.iter().any(|r| r.unexpected_failure());
    let deviations: Vec<usize> = reports.iter().filter(|r| !r.pass && r.known_deviation).map(|r| r.index).collect();
    let doc = json!({
        "schema": SCHEMA,
        "command": "selftest",
        "seed": seed,
        "result": if ok { "pass" } else { "fail" },
        "known_deviations": deviations,
        "criteria": reports,
    });
    Ok((doc, ok))
}

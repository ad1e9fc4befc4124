//! Eigenform selection, refinement, and the eigensymbol of the refined form.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use padic_msymb::classical::{
    boundary_symbol, eigensystems, refine, sign_of_eisenstein, BoundarySymbol, EigenSystem, Eigendata, FormType,
    HeckeOp, ManinBasis, RefinedForm, SymbolSpace,
};
use padic_msymb::ovsymb::{lift_naive, theta_lift_critical, up_project, OverconvergentSymbol};

use crate::config::RunConfig;

/// Iterations allowed for U_p projection.
const PROJECTION_ITERS: usize = 120;

/// A refined eigenform and, when available, its classical eigenspaces.
pub struct Form {
    pub system: EigenSystem,
    pub index: Option<usize>,
    pub refined: RefinedForm,
}

/// Eigendata read from a JSON file.
pub fn read_eigenform(path: &PathBuf) -> Result<Eigendata> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Eigendata::from_json(&text)?)
}

/// Eigenspaces cut out by the listed a_l, without decomposing the full space.
fn system_from_data(data: &Eigendata) -> Result<EigenSystem> {
    let basis = ManinBasis::new(data.n, data.p)?;
    let full = SymbolSpace::full(basis, data.k);
    let mut al = BTreeMap::new();
    let mut parts = Vec::new();
    for sign in [1, -1] {
        let mut s = full.sign_part(sign)?;
        for (key, &a) in &data.al {
            let l: u64 = key.parse().map_err(|_| anyhow!("bad prime key {key}"))?;
            al.insert(l, a);
            s = s.eigenspace(HeckeOp::T(l), &BigRational::from_integer(a.into()))?;
        }
        parts.push(s);
    }
    let minus = parts.pop().unwrap();
    let plus = parts.pop().unwrap();
    if plus.dim() + minus.dim() == 0 {
        bail!("no modular symbols with the given eigenvalues at level {} and p = {}", data.n, data.p);
    }
    Ok(EigenSystem { al, plus, minus, form_type: data.form_type })
}

/// The system picked by --system, else the first cuspidal system with a
/// rational p-old space, else the first Eisenstein system.
fn pick(systems: &[EigenSystem], index: Option<usize>) -> Result<usize> {
    if let Some(i) = index {
        if i >= systems.len() {
            bail!("--system {i} out of range: {} eigensystems", systems.len());
        }
        return Ok(i);
    }
    systems
        .iter()
        .position(|s| s.form_type == FormType::Cuspidal && s.eigendata().is_ok())
        .or_else(|| systems.iter().position(|s| s.form_type == FormType::Eisenstein))
        .ok_or_else(|| anyhow!("no usable eigensystem; pass --system or --eigenform"))
}

pub fn resolve(cfg: &RunConfig) -> Result<Form> {
    let (system, index, data) = match &cfg.eigenform {
        Some(path) => {
            let data = read_eigenform(path)?;
            (system_from_data(&data)?, None, data)
        }
        None => {
            let (systems, _) = eigensystems(ManinBasis::new(cfg.n, cfg.p)?, cfg.k, cfg.primes)?;
            let i = pick(&systems, cfg.system)?;
            let data = systems[i].eigendata()?;
            (systems.into_iter().nth(i).unwrap(), Some(i), data)
        }
    };
    let prec = (cfg.m as i64 + 8).max(30);
    let refined = refine(&data, cfg.refinement.clone(), prec)?;
    if let Some(nu) = cfg.nu {
        if refined.slope() > nu {
            bail!("slope {} exceeds the bound nu = {nu}", refined.slope());
        }
    }
    Ok(Form { system, index, refined })
}

/// How the eigensymbol was obtained.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(tag = "route", rename_all = "kebab-case")]
pub enum Route {
    /// Theta map applied to the ordinary companion eigensymbol.
    Theta,
    /// U_p projection of a lift of the classical eigensymbol.
    Projection { history: Vec<i64> },
    /// Read from the cache.
    Cached { file: String },
}

impl Form {
    fn cache_file(&self, cfg: &RunConfig, sign: i32, m: usize) -> Option<PathBuf> {
        let system = match (self.index, &cfg.eigenform) {
            (Some(i), _) => format!("sys{i}"),
            (None, _) => format!("ap{}", self.refined.data.ap),
        };
        cfg.cache.as_ref().map(|dir| {
            dir.join(format!(
                "lift-N{}-p{}-k{}-M{m}-{}-{system}-sign{sign}-v{}.json",
                cfg.n,
                cfg.p,
                cfg.k,
                cfg.refinement_label.replace('=', ""),
                env!("CARGO_PKG_VERSION"),
            ))
        })
    }

    /// The U_p-eigensymbol of the refined form with M = `m` moments.
    pub fn eigensymbol(&self, cfg: &RunConfig, sign: i32, m: usize) -> Result<(OverconvergentSymbol, Route)> {
        let cache = self.cache_file(cfg, sign, m);
        if let Some(path) = cache.as_ref().filter(|p| p.exists()) {
            let text = std::fs::read_to_string(path)?;
            let phi = OverconvergentSymbol::from_json(&text)?;
            return Ok((phi, Route::Cached { file: path.display().to_string() }));
        }
        let f = &self.refined;
        let (phi, route) = if f.theta_critical {
            (theta_lift_critical(f, sign, m, cfg.seed)?, Route::Theta)
        } else {
            let classical = self.system.refined_eigensymbol(f, sign, m as i64 + 8)?;
            let proj = up_project(&lift_naive(&classical, m)?, &f.beta, PROJECTION_ITERS)?;
            let mut phi = proj.symbol;
            phi.sign = Some(sign);
            (phi, Route::Projection { history: proj.history })
        };
        if let Some(path) = cache {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&path, phi.to_json()?).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok((phi, route))
    }

    /// The exact boundary symbol and beta = p^{k+1} for a critical Eisenstein
    /// refinement whose symbol has iota-sign `sign`.
    pub fn boundary(&self, sign: i32) -> Result<Option<(BoundarySymbol, BigRational)>> {
        let f = &self.refined;
        if !(f.is_eisenstein() && f.critical_slope) {
            return Ok(None);
        }
        let beta = BigRational::from_integer(BigInt::from(f.p()).pow(f.k() + 1) * BigInt::from(f.data.eps_p));
        let tau = boundary_symbol(ManinBasis::new(f.data.n, f.p())?, f.k(), &beta)?;
        Ok((sign_of_eisenstein(&tau)? == sign).then_some((tau, beta)))
    }
}

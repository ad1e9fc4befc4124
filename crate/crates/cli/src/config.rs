//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use padic_msymb::classical::RootChoice;
use serde::{Deserialize, Serialize};

/// Settings shared by all subcommands. Every field is optional here so that
/// a file and the flags can be merged before defaults apply.
#[derive(Args, Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigArgs {
    /// TOML file with any of these settings; flags override it.
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Odd prime p.
    #[arg(long)]
    pub p: Option<u64>,
    /// Tame level N, prime to p.
    #[arg(long = "N", value_name = "N")]
    #[serde(rename = "N")]
    pub n: Option<u64>,
    /// Weight k (forms of weight k + 2).
    #[arg(long)]
    pub k: Option<u32>,
    /// Number of moments M, which is also the working precision.
    #[arg(long)]
    pub prec: Option<usize>,
    /// Family truncation D (powers of w kept).
    #[arg(long = "family-deg")]
    pub family_deg: Option<usize>,
    /// Slope bound: refuse refinements of larger slope.
    #[arg(long)]
    pub nu: Option<i64>,
    /// ordinary, critical, or root=<integer>.
    #[arg(long)]
    pub refinement: Option<String>,
    /// Characters: "all", or a comma list of tame exponents t and wild twists t/level:r.
    #[arg(long)]
    pub characters: Option<String>,
    /// Output file; stdout when absent. A .csv suffix selects CSV for lvalues.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Seed for randomized steps.
    #[arg(long)]
    pub seed: Option<u64>,
    /// iota-sign of the symbol, 1 or -1.
    #[arg(long, allow_hyphen_values = true)]
    pub sign: Option<i32>,
    /// Eigenform JSON to use instead of computing eigensystems.
    #[arg(long, value_name = "PATH")]
    pub eigenform: Option<PathBuf>,
    /// Index of the eigensystem in the classical table.
    #[arg(long)]
    pub system: Option<usize>,
    /// Number of eigensystem-splitting primes.
    #[arg(long)]
    pub primes: Option<usize>,
    /// Twists t^j as a comma list of j.
    #[arg(long)]
    pub j: Option<String>,
    /// L-series coefficients per branch.
    #[arg(long)]
    pub terms: Option<usize>,
    /// Coset level for L-series.
    #[arg(long)]
    pub level: Option<u32>,
    /// Specialization points w0 (multiples of p) as a comma list.
    #[arg(long, allow_hyphen_values = true)]
    pub w0: Option<String>,
    /// Directory caching lifted symbols.
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
}

impl ConfigArgs {
    /// Fields of `self` where set, else those of `base`.
    fn over(self, base: ConfigArgs) -> ConfigArgs {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigArgs { config: self.config.or(base.config), $($f: self.$f.or(base.$f)),* } };
        }
        pick!(p, n, k, prec, family_deg, nu, refinement, characters, out, seed, sign, eigenform, system, primes, j, terms, level, w0, cache)
    }

    /// Merges the config file, if any, under the flags.
    pub fn load(self) -> Result<ConfigArgs> {
        match &self.config {
            None => Ok(self),
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let file: ConfigArgs = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                let base = relative_to(file, path.parent().unwrap_or(Path::new(".")));
                Ok(self.over(base))
            }
        }
    }
}

/// Paths in a config file are relative to the file.
fn relative_to(mut c: ConfigArgs, dir: &Path) -> ConfigArgs {
    for p in [&mut c.out, &mut c.eigenform, &mut c.cache].into_iter().flatten() {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
    c
}

/// A character omega^tame, optionally times gamma -> zeta_{p^level}^r.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CharSpec {
    pub tame: u64,
    pub wild: Option<(u32, u64)>,
}

/// A validated configuration with defaults applied.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub p: u64,
    #[serde(rename = "N")]
    pub n: u64,
    pub k: u32,
    pub m: usize,
    pub d: usize,
    pub nu: Option<i64>,
    pub refinement: RootChoice,
    pub refinement_label: String,
    pub characters: Vec<CharSpec>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub sign: i32,
    #[serde(skip)]
    pub eigenform: Option<PathBuf>,
    pub system: Option<usize>,
    pub primes: usize,
    pub js: Vec<u32>,
    pub terms: usize,
    pub level: u32,
    pub w0: Vec<i64>,
    #[serde(skip)]
    pub cache: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| anyhow::anyhow!("bad {what} entry {t:?}")))
        .collect()
}

/// Parses "all" or items "t" and "t/level:r".
pub fn parse_characters(spec: &str, p: u64) -> Result<Vec<CharSpec>> {
    if spec.trim() == "all" {
        return Ok((0..p - 1).map(|tame| CharSpec { tame, wild: None }).collect());
    }
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (tame, wild) = match item.split_once('/') {
            None => (item, None),
            Some((t, w)) => {
                let (l, r) = w.split_once(':').with_context(|| format!("wild part of {item:?} must be level:r"))?;
                let level: u32 = l.parse().with_context(|| format!("bad level in {item:?}"))?;
                let r: u64 = r.parse().with_context(|| format!("bad exponent in {item:?}"))?;
                if level == 0 || r % p == 0 {
                    bail!("wild part of {item:?} must have level >= 1 and r prime to p");
                }
                (t, Some((level, r)))
            }
        };
        let tame: u64 = tame.parse().with_context(|| format!("bad tame exponent in {item:?}"))?;
        out.push(CharSpec { tame: tame % (p - 1), wild });
    }
    if out.is_empty() {
        bail!("empty character list");
    }
    Ok(out)
}

impl RunConfig {
    /// Applies defaults and checks gcd(N, p) = 1, p odd prime, M > k + 1.
    /// `level_and_prime` are the eigenform file's N and p when one is given.
    pub fn resolve(a: ConfigArgs, level_and_prime: Option<(u64, u64, u32)>) -> Result<RunConfig> {
        let (n, p, k) = match (level_and_prime, a.n, a.p) {
            (Some((fnn, fp, fk)), n, p) => {
                if n.is_some_and(|n| n != fnn) || p.is_some_and(|p| p != fp) || a.k.is_some_and(|k| k != fk) {
                    bail!("--N/--p/--k disagree with the eigenform file (N = {fnn}, p = {fp}, k = {fk})");
                }
                (fnn, fp, fk)
            }
            (None, Some(n), Some(p)) => (n, p, a.k.unwrap_or(0)),
            _ => bail!("--p and --N are required unless --eigenform is given"),
        };
        if p < 3 || !padic_msymb::arith::is_prime(p) {
            bail!("p = {p} must be an odd prime");
        }
        if n == 0 || n % p == 0 {
            bail!("N = {n} must be positive and prime to p = {p}");
        }
        let m = a.prec.unwrap_or(12);
        if m <= k as usize + 1 {
            bail!("--prec {m} must exceed k + 1 = {}", k + 1);
        }
        let label = a.refinement.unwrap_or_else(|| "ordinary".into());
        let refinement: RootChoice = label.parse()?;
        let sign = a.sign.unwrap_or(1);
        if sign != 1 && sign != -1 {
            bail!("--sign must be 1 or -1");
        }
        let js = match &a.j {
            Some(s) => parse_list(s, "j")?,
            None => vec![0],
        };
        let w0 = match &a.w0 {
            Some(s) => parse_list(s, "w0")?,
            None => vec![0, p as i64, 2 * p as i64],
        };
        if let Some(w) = w0.iter().find(|w| *w % p as i64 != 0) {
            bail!("w0 = {w} is not divisible by p");
        }
        Ok(RunConfig {
            p,
            n,
            k,
            m,
            d: a.family_deg.unwrap_or(2),
            nu: a.nu,
            refinement,
            refinement_label: label,
            characters: parse_characters(a.characters.as_deref().unwrap_or("all"), p)?,
            out: a.out,
            seed: a.seed.unwrap_or(0),
            sign,
            eigenform: a.eigenform,
            system: a.system,
            primes: a.primes.unwrap_or(5),
            js,
            terms: a.terms.unwrap_or(4),
            level: a.level.unwrap_or(1),
            w0,
            cache: a.cache,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(p: u64, n: u64) -> ConfigArgs {
        ConfigArgs { p: Some(p), n: Some(n), ..Default::default() }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "p = 5\nN = 32\nprec = 10\nrefinement = \"critical\"\nout = \"x.json\"\n").unwrap();
        let flags = ConfigArgs { config: Some(path), prec: Some(14), ..Default::default() };
        let c = RunConfig::resolve(flags.load().unwrap(), None).unwrap();
        assert_eq!((c.p, c.n, c.m), (5, 32, 14));
        assert_eq!(c.refinement, RootChoice::Critical);
        assert_eq!(c.out.unwrap(), dir.path().join("x.json"));
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "p = 5\nmoments = 3\n").unwrap();
        assert!(ConfigArgs { config: Some(path), ..Default::default() }.load().is_err());
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(RunConfig::resolve(args(5, 10), None).is_err());
        assert!(RunConfig::resolve(args(2, 11), None).is_err());
        assert!(RunConfig::resolve(args(9, 11), None).is_err());
        let a = ConfigArgs { k: Some(2), prec: Some(3), ..args(3, 1) };
        assert!(RunConfig::resolve(a, None).is_err());
        assert!(RunConfig::resolve(args(3, 11), None).is_ok());
        assert!(RunConfig::resolve(ConfigArgs::default(), Some((11, 3, 0))).is_ok());
        assert!(RunConfig::resolve(args(5, 11), Some((11, 3, 0))).is_err());
    }

    #[test]
    fn character_specs() {
        assert_eq!(parse_characters("all", 5).unwrap().len(), 4);
        let c = parse_characters("0, 6, 1/2:3", 5).unwrap();
        assert_eq!(c[1], CharSpec { tame: 2, wild: None });
        assert_eq!(c[2], CharSpec { tame: 1, wild: Some((2, 3)) });
        assert!(parse_characters("1/2:5", 5).is_err());
        assert!(parse_characters("x", 5).is_err());
    }
}

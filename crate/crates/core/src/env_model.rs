//! Environment laws and the lazily sampled i.i.d. environment over all of ℤ.
//!
//! An [`EnvironmentSpec`] describes the joint law of `(p_0, M_0)` at one site:
//! a law for the right-step probability `p` and an independent law for the
//! number of strength-one cookies `M ∈ ℕ₀ ∪ {∞}`. An [`Environment`] pairs a
//! spec with a master seed; site `x` is sampled on demand by hashing
//! `(master_seed, x)`, so the same site always reads the same values.
//!
//! The JSON form of a spec is
//!
//! ```json
//! { "p_law": { "kind": "two_point", "params": { "p_a": 0.25, "p_b": 0.8, "weight_a": 0.5 } },
//!   "m_law": { "kind": "geometric", "params": { "q": 0.5 } } }
//! ```
//!
//! Cookie counts are JSON integers or the string `"inf"`.

use std::fmt;
use std::sync::Arc;

use rand_distr::Distribution;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::{domain, hash3, unit_open, KeyedStream};

/// Tolerance on the total mass of a finite law.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

/// Number of cookies at a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cookies {
    Finite(u64),
    Infinite,
}

impl Cookies {
    /// Finite draws from unbounded laws saturate here. A walk or a branching
    /// process can never consume this many cookies within any horizon we run.
    pub const SATURATED: u64 = 1 << 62;

    pub fn is_infinite(self) -> bool {
        matches!(self, Cookies::Infinite)
    }

    pub fn is_zero(self) -> bool {
        matches!(self, Cookies::Finite(0))
    }

    /// `true` when the `visit`-th arrival (1-based) still finds a cookie.
    #[inline]
    pub fn covers_visit(self, visit: u64) -> bool {
        match self {
            Cookies::Finite(m) => visit <= m,
            Cookies::Infinite => true,
        }
    }

    /// `(n - self)₊` with `∞` swallowing everything.
    #[inline]
    pub fn subtract_from(self, n: u64) -> u64 {
        match self {
            Cookies::Finite(m) => n.saturating_sub(m),
            Cookies::Infinite => 0,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Cookies::Finite(m) => m as f64,
            Cookies::Infinite => f64::INFINITY,
        }
    }

    fn from_real(v: f64) -> Cookies {
        if v >= Self::SATURATED as f64 {
            Cookies::Finite(Self::SATURATED)
        } else {
            Cookies::Finite(v.floor().max(0.0) as u64)
        }
    }
}

impl fmt::Display for Cookies {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cookies::Finite(m) => write!(f, "{m}"),
            Cookies::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Cookies {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cookies::Finite(m) => s.serialize_u64(*m),
            Cookies::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Cookies {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(m) => Ok(Cookies::Finite(m)),
            Raw::Text(s) if matches!(s.as_str(), "inf" | "infinity" | "∞") => Ok(Cookies::Infinite),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "cookie count must be a non-negative integer or \"inf\", got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PAtom {
    pub p: f64,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CookieAtom {
    pub m: Cookies,
    pub w: f64,
}

/// Law of the right-step probability `p_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum PLaw {
    Constant { p: f64 },
    TwoPoint { p_a: f64, p_b: f64, weight_a: f64 },
    FinitePmf { atoms: Vec<PAtom> },
    /// Beta(alpha, beta) on (0, 1).
    Beta { alpha: f64, beta: f64 },
}

/// Law of the cookie count `M_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum MLaw {
    Constant { m: u64 },
    /// Atoms at 0 and ∞ plus optional finite nonzero atoms.
    TwoPointWithInfinity {
        zero: f64,
        infinity: f64,
        #[serde(default)]
        atoms: Vec<CookieAtom>,
    },
    FinitePmf { atoms: Vec<CookieAtom> },
    /// `P[M = k] = q (1 - q)^k`, `k ≥ 0`.
    Geometric { q: f64 },
    /// `M = 0` with probability `zero_mass`, otherwise `⌊exp(c / U)⌋` with
    /// `U` uniform on (0,1) and `c = lambda / (1 - zero_mass)`, so that
    /// `t·P[log M > t] → lambda`.
    LogHeavyTail {
        lambda: f64,
        #[serde(default = "default_zero_mass")]
        zero_mass: f64,
    },
    /// `M = 0` with probability `zero_mass`, otherwise `P[M = k] ∝ k^{-exponent}`
    /// for `k ≥ 1`. `E[M] = ∞` for `exponent ≤ 2` while `E[(log M)₊] < ∞`.
    PowerLaw {
        exponent: f64,
        #[serde(default = "default_zero_mass")]
        zero_mass: f64,
    },
}

fn default_zero_mass() -> f64 {
    0.5
}

/// Declarative, validated law of one site's `(p, M)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub p_law: PLaw,
    pub m_law: MLaw,
}

/// Which validation a spec must pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Checks {
    /// Structural checks plus every clause of the standing assumptions.
    Full,
    /// Structural checks only: probabilities in range, weights summing to one,
    /// finite `E[ρ²]`. Used for textbook sanity runs such as the critical
    /// Galton–Watson process with `p = 1/2`.
    Structural,
}

impl EnvironmentSpec {
    pub fn new(p_law: PLaw, m_law: MLaw) -> Result<Self> {
        Self::with_checks(p_law, m_law, Checks::Full)
    }

    pub fn with_checks(p_law: PLaw, m_law: MLaw, checks: Checks) -> Result<Self> {
        let spec = Self { p_law, m_law };
        spec.validate(checks)?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedConfig(e.to_string()))?;
        make_spec(&value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self, checks: Checks) -> Result<()> {
        self.p_law.validate_structure()?;
        self.m_law.validate_structure()?;
        if checks == Checks::Full {
            if self.p_law.is_point_mass_at_half() {
                return Err(Error::RejectP1Half);
            }
            if self.m_law.p_zero() <= 0.0 {
                return Err(Error::RejectNoZeroCookies);
            }
        }
        if let PLaw::Beta { alpha, .. } = self.p_law {
            if alpha <= 2.0 {
                return Err(Error::RejectMomentBlowup(format!(
                    "Beta p law with alpha = {alpha} has E[((1-p)/p)^2] = ∞; alpha > 2 is required"
                )));
            }
        }
        Ok(())
    }
}

/// Parse and validate a spec from its JSON value.
pub fn make_spec(description: &serde_json::Value) -> Result<EnvironmentSpec> {
    let spec: EnvironmentSpec = serde_json::from_value(description.clone())
        .map_err(|e| Error::MalformedConfig(e.to_string()))?;
    spec.validate(Checks::Full)?;
    Ok(spec)
}

fn check_weights(weights: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut total = 0.0;
    for w in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::MalformedConfig(format!("{what}: weight {w} is not a probability")));
        }
        total += w;
    }
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::MalformedConfig(format!("{what}: weights sum to {total}, not 1")));
    }
    Ok(())
}

fn check_open_unit(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::MalformedConfig(format!("{what}: p = {p} must lie strictly inside (0, 1)")))
    }
}

fn check_probability(x: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::MalformedConfig(format!("{what}: {x} is not a probability")))
    }
}

impl PLaw {
    fn validate_structure(&self) -> Result<()> {
        match self {
            PLaw::Constant { p } => check_open_unit(*p, "constant p law"),
            PLaw::TwoPoint { p_a, p_b, weight_a } => {
                check_open_unit(*p_a, "two-point p law")?;
                check_open_unit(*p_b, "two-point p law")?;
                check_probability(*weight_a, "two-point weight")
            }
            PLaw::FinitePmf { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::MalformedConfig("finite p law without atoms".into()));
                }
                for a in atoms {
                    check_open_unit(a.p, "finite p law")?;
                }
                check_weights(atoms.iter().map(|a| a.w), "finite p law")
            }
            PLaw::Beta { alpha, beta } => {
                if alpha.is_finite() && beta.is_finite() && *alpha > 0.0 && *beta > 0.0 {
                    Ok(())
                } else {
                    Err(Error::MalformedConfig(format!("Beta({alpha}, {beta}) needs positive shapes")))
                }
            }
        }
    }

    /// Finite support as `(p, weight)` pairs with positive weight, if the law
    /// is discrete.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        let raw = match self {
            PLaw::Constant { p } => vec![(*p, 1.0)],
            PLaw::TwoPoint { p_a, p_b, weight_a } => vec![(*p_a, *weight_a), (*p_b, 1.0 - weight_a)],
            PLaw::FinitePmf { atoms } => atoms.iter().map(|a| (a.p, a.w)).collect(),
            PLaw::Beta { .. } => return None,
        };
        Some(raw.into_iter().filter(|&(_, w)| w > 0.0).collect())
    }

    pub fn is_point_mass_at_half(&self) -> bool {
        match self.atoms() {
            Some(atoms) => atoms.iter().all(|&(p, _)| p == 0.5),
            None => false,
        }
    }

    fn sample(&self, seed: u64, x: i64) -> f64 {
        let u = unit_open(hash3(seed, domain::SITE_P, x as u64));
        match self {
            PLaw::Constant { p } => *p,
            PLaw::TwoPoint { p_a, p_b, weight_a } => {
                if u < *weight_a {
                    *p_a
                } else {
                    *p_b
                }
            }
            PLaw::FinitePmf { atoms } => {
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.w;
                    if u < acc {
                        return a.p;
                    }
                }
                atoms.iter().rev().find(|a| a.w > 0.0).map_or(atoms[0].p, |a| a.p)
            }
            PLaw::Beta { alpha, beta } => {
                let dist = rand_distr::Beta::new(*alpha, *beta).expect("validated shapes");
                let mut stream = KeyedStream::new(hash3(seed, domain::SITE_P, x as u64));
                loop {
                    let p: f64 = dist.sample(&mut stream);
                    if p > 0.0 && p < 1.0 {
                        return p;
                    }
                }
            }
        }
    }
}

impl MLaw {
    fn validate_structure(&self) -> Result<()> {
        match self {
            MLaw::Constant { .. } => Ok(()),
            MLaw::TwoPointWithInfinity { zero, infinity, atoms } => {
                check_probability(*zero, "P[M = 0]")?;
                check_probability(*infinity, "P[M = ∞]")?;
                for a in atoms {
                    if a.m.is_zero() || a.m.is_infinite() {
                        return Err(Error::MalformedConfig(
                            "remainder atoms of a two-point-with-infinity law must be finite and nonzero".into(),
                        ));
                    }
                }
                check_weights(
                    [*zero, *infinity].into_iter().chain(atoms.iter().map(|a| a.w)),
                    "cookie law",
                )
            }
            MLaw::FinitePmf { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::MalformedConfig("finite cookie law without atoms".into()));
                }
                check_weights(atoms.iter().map(|a| a.w), "finite cookie law")
            }
            MLaw::Geometric { q } => {
                if *q > 0.0 && *q <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::MalformedConfig(format!("geometric q = {q} must lie in (0, 1]")))
                }
            }
            MLaw::LogHeavyTail { lambda, zero_mass } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(Error::MalformedConfig(format!("log-heavy-tail lambda = {lambda} must be > 0")));
                }
                if !(*zero_mass >= 0.0 && *zero_mass < 1.0) {
                    return Err(Error::MalformedConfig(format!("zero_mass = {zero_mass} must lie in [0, 1)")));
                }
                Ok(())
            }
            MLaw::PowerLaw { exponent, zero_mass } => {
                if !(exponent.is_finite() && *exponent > 1.0) {
                    return Err(Error::MalformedConfig(format!("power-law exponent {exponent} must be > 1")));
                }
                if !(*zero_mass >= 0.0 && *zero_mass < 1.0) {
                    return Err(Error::MalformedConfig(format!("zero_mass = {zero_mass} must lie in [0, 1)")));
                }
                Ok(())
            }
        }
    }

    /// Discrete support as `(m, weight)` pairs, for laws with finite support.
    pub fn atoms(&self) -> Option<Vec<(Cookies, f64)>> {
        let raw = match self {
            MLaw::Constant { m } => vec![(Cookies::Finite(*m), 1.0)],
            MLaw::TwoPointWithInfinity { zero, infinity, atoms } => {
                let mut v = vec![(Cookies::Finite(0), *zero), (Cookies::Infinite, *infinity)];
                v.extend(atoms.iter().map(|a| (a.m, a.w)));
                v
            }
            MLaw::FinitePmf { atoms } => atoms.iter().map(|a| (a.m, a.w)).collect(),
            _ => return None,
        };
        Some(raw.into_iter().filter(|&(_, w)| w > 0.0).collect())
    }

    pub fn p_zero(&self) -> f64 {
        match self {
            MLaw::Geometric { q } => *q,
            MLaw::LogHeavyTail { zero_mass, .. } | MLaw::PowerLaw { zero_mass, .. } => *zero_mass,
            _ => self.atoms_mass(|m| m.is_zero()),
        }
    }

    pub fn p_infinite(&self) -> f64 {
        match self {
            MLaw::Geometric { .. } | MLaw::LogHeavyTail { .. } | MLaw::PowerLaw { .. } => 0.0,
            _ => self.atoms_mass(|m| m.is_infinite()),
        }
    }

    pub fn p_finite(&self) -> f64 {
        1.0 - self.p_infinite()
    }

    /// `true` when every atom is 0 or ∞.
    pub fn is_zero_or_infinite(&self) -> bool {
        match self.atoms() {
            Some(atoms) => atoms.iter().all(|(m, _)| m.is_zero() || m.is_infinite()),
            None => false,
        }
    }

    fn atoms_mass(&self, pred: impl Fn(Cookies) -> bool) -> f64 {
        self.atoms()
            .map(|a| a.into_iter().filter(|(m, _)| pred(*m)).map(|(_, w)| w).sum())
            .unwrap_or(0.0)
    }

    /// `P[M < x]` for real `x` (∞ is never below a real threshold).
    pub fn prob_less_than(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        // M < x  ⟺  M ≤ ⌈x⌉ - 1
        let top = x.ceil() - 1.0;
        match self {
            MLaw::Geometric { q } => 1.0 - (1.0 - q).powf(top + 1.0),
            MLaw::LogHeavyTail { lambda, zero_mass } => {
                // ⌊e^{c/U}⌋ ≤ top ⟺ e^{c/U} < top + 1 ⟺ U > c / ln(top + 1)
                let c = lambda / (1.0 - zero_mass);
                let bound = (top + 1.0).ln();
                let tail = if bound <= 0.0 { 1.0 } else { (c / bound).min(1.0) };
                zero_mass + (1.0 - zero_mass) * (1.0 - tail)
            }
            MLaw::PowerLaw { exponent, zero_mass } => {
                let z = zeta(*exponent);
                let upto = top.min(1e7) as u64;
                let partial: f64 = (1..=upto).map(|k| (k as f64).powf(-exponent)).sum();
                zero_mass + (1.0 - zero_mass) * (partial / z).min(1.0)
            }
            _ => self
                .atoms()
                .unwrap()
                .into_iter()
                .filter(|(m, _)| match m {
                    Cookies::Finite(k) => (*k as f64) < x,
                    Cookies::Infinite => false,
                })
                .map(|(_, w)| w)
                .sum(),
        }
    }

    /// Deterministic draw keyed by `(seed, x)`.
    pub fn sample(&self, seed: u64, x: i64) -> Cookies {
        let u = unit_open(hash3(seed, domain::SITE_M, x as u64));
        match self {
            MLaw::Constant { m } => Cookies::Finite(*m),
            MLaw::Geometric { q } => {
                if *q >= 1.0 {
                    Cookies::Finite(0)
                } else {
                    Cookies::from_real(u.ln() / (1.0 - q).ln())
                }
            }
            MLaw::LogHeavyTail { lambda, zero_mass } => {
                if u < *zero_mass {
                    return Cookies::Finite(0);
                }
                let v = unit_open(hash3(seed, domain::SITE_M_AUX, x as u64));
                let c = lambda / (1.0 - zero_mass);
                let log_m = c / v;
                if log_m >= (Cookies::SATURATED as f64).ln() {
                    Cookies::Finite(Cookies::SATURATED)
                } else {
                    Cookies::from_real(log_m.exp())
                }
            }
            MLaw::PowerLaw { exponent, zero_mass } => {
                if u < *zero_mass {
                    return Cookies::Finite(0);
                }
                let dist = rand_distr::Zeta::new(*exponent).expect("validated exponent");
                let mut stream = KeyedStream::new(hash3(seed, domain::SITE_M_AUX, x as u64));
                Cookies::from_real(dist.sample(&mut stream))
            }
            MLaw::TwoPointWithInfinity { .. } | MLaw::FinitePmf { .. } => {
                let atoms = self.atoms().expect("finite law");
                let mut acc = 0.0;
                for &(m, w) in &atoms {
                    acc += w;
                    if u < acc {
                        return m;
                    }
                }
                atoms.last().map(|&(m, _)| m).unwrap_or(Cookies::Finite(0))
            }
        }
    }
}

/// Riemann zeta for real `s > 1` (Euler–Maclaurin after 64 explicit terms).
pub(crate) fn zeta(s: f64) -> f64 {
    let n = 64.0_f64;
    let head: f64 = (1..64).map(|k| (k as f64).powf(-s)).sum();
    head + n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s * n.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * n.powf(-s - 3.0) / 720.0
}

/// `Σ_{k≥1} ln(k) k^{-s}` for `s > 1`.
pub(crate) fn zeta_log_sum(s: f64) -> f64 {
    let n = 256.0_f64;
    let head: f64 = (2..256).map(|k| (k as f64).ln() * (k as f64).powf(-s)).sum();
    let f = n.ln() * n.powf(-s);
    let df = n.powf(-s - 1.0) * (1.0 - s * n.ln());
    let tail = n.powf(1.0 - s) * (n.ln() / (s - 1.0) + 1.0 / ((s - 1.0) * (s - 1.0)));
    head + tail + 0.5 * f - df / 12.0
}

/// One site's `(p_x, M_x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SiteEnvironment {
    pub p: f64,
    pub m: Cookies,
    pub rho: f64,
}

impl SiteEnvironment {
    pub fn new(p: f64, m: Cookies) -> Self {
        Self { p, m, rho: (1.0 - p) / p }
    }
}

/// Pure function of `(spec, master_seed, x)`.
pub fn sample_site(spec: &EnvironmentSpec, master_seed: u64, x: i64) -> SiteEnvironment {
    SiteEnvironment::new(spec.p_law.sample(master_seed, x), spec.m_law.sample(master_seed, x))
}

/// The i.i.d. environment over ℤ, sampled lazily and never stored.
#[derive(Clone, Debug)]
pub struct Environment {
    spec: Arc<EnvironmentSpec>,
    master_seed: u64,
}

impl Environment {
    pub fn new(spec: Arc<EnvironmentSpec>, master_seed: u64) -> Self {
        Self { spec, master_seed }
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    #[inline]
    pub fn site(&self, x: i64) -> SiteEnvironment {
        sample_site(&self.spec, self.master_seed, x)
    }
}

/// Anything that answers "what is the environment at site `x`".
pub trait SiteSource: Sync {
    fn site(&self, x: i64) -> SiteEnvironment;
}

impl SiteSource for Environment {
    #[inline]
    fn site(&self, x: i64) -> SiteEnvironment {
        Environment::site(self, x)
    }
}

/// An explicit environment given by a closure.
pub struct FnSites<F>(pub F);

impl<F: Fn(i64) -> SiteEnvironment + Sync> SiteSource for FnSites<F> {
    #[inline]
    fn site(&self, x: i64) -> SiteEnvironment {
        (self.0)(x)
    }
}

/// Keeps the cookies of `inner` at sites `x ≤ edge` and removes all others.
pub struct CookiesUpTo<'a, S> {
    pub inner: &'a S,
    pub edge: i64,
}

impl<S: SiteSource> SiteSource for CookiesUpTo<'_, S> {
    #[inline]
    fn site(&self, x: i64) -> SiteEnvironment {
        let s = self.inner.site(x);
        if x <= self.edge {
            s
        } else {
            SiteEnvironment { m: Cookies::Finite(0), ..s }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn spec(value: serde_json::Value) -> Result<EnvironmentSpec> {
        make_spec(&value)
    }

    fn constant(p: f64, m: u64) -> EnvironmentSpec {
        EnvironmentSpec::new(PLaw::Constant { p }, MLaw::Constant { m }).unwrap()
    }

    #[test]
    fn pure_rwre_spec_is_accepted() {
        let s = spec(json!({
            "p_law": {"kind": "constant", "params": {"p": 0.8}},
            "m_law": {"kind": "constant", "params": {"m": 0}}
        }))
        .unwrap();
        assert_eq!(s.p_law, PLaw::Constant { p: 0.8 });
    }

    #[test]
    fn point_mass_at_half_is_rejected() {
        let err = spec(json!({
            "p_law": {"kind": "constant", "params": {"p": 0.5}},
            "m_law": {"kind": "geometric", "params": {"q": 0.5}}
        }))
        .unwrap_err();
        assert!(matches!(err, Error::RejectP1Half), "{err}");
        let err = EnvironmentSpec::new(
            PLaw::FinitePmf { atoms: vec![PAtom { p: 0.5, w: 0.5 }, PAtom { p: 0.5, w: 0.5 }] },
            MLaw::Constant { m: 0 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::RejectP1Half));
    }

    #[test]
    fn structural_checks_allow_the_symmetric_walk() {
        EnvironmentSpec::with_checks(PLaw::Constant { p: 0.5 }, MLaw::Constant { m: 0 }, Checks::Structural)
            .unwrap();
    }

    #[test]
    fn all_sites_with_cookies_is_rejected() {
        let err = EnvironmentSpec::new(PLaw::Constant { p: 0.3 }, MLaw::Constant { m: 2 }).unwrap_err();
        assert!(matches!(err, Error::RejectNoZeroCookies));
        let err = EnvironmentSpec::new(
            PLaw::Constant { p: 0.3 },
            MLaw::LogHeavyTail { lambda: 1.0, zero_mass: 0.0 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::RejectNoZeroCookies));
    }

    #[test]
    fn beta_with_small_alpha_is_rejected() {
        let err = spec(json!({
            "p_law": {"kind": "beta", "params": {"alpha": 1.5, "beta": 2.0}},
            "m_law": {"kind": "constant", "params": {"m": 0}}
        }))
        .unwrap_err();
        assert!(matches!(err, Error::RejectMomentBlowup(_)), "{err}");
        assert!(spec(json!({
            "p_law": {"kind": "beta", "params": {"alpha": 3.0, "beta": 2.0}},
            "m_law": {"kind": "constant", "params": {"m": 0}}
        }))
        .is_ok());
    }

    /// Independent look at why alpha = 1.5 must fail: the truncated integral
    /// of (1-p)^2 p^{alpha-3} (1-p)^{beta-1} over [eps, 1] grows without
    /// bound as eps -> 0.
    #[test]
    fn beta_second_moment_integral_diverges_for_small_alpha() {
        let (alpha, beta) = (1.5_f64, 2.0_f64);
        let truncated = |eps: f64| {
            // midpoint rule in log p from ln(eps) to 0
            let n = 200_000;
            let (a, b) = (eps.ln(), 0.0);
            let h = (b - a) / n as f64;
            (0..n)
                .map(|i| {
                    let p = (a + (i as f64 + 0.5) * h).exp();
                    (1.0 - p).powi(2) * p.powf(alpha - 3.0) * (1.0 - p).powf(beta - 1.0) * p * h
                })
                .sum::<f64>()
        };
        let values: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8].iter().map(|&e| truncated(e)).collect();
        for w in values.windows(2) {
            // each factor 100 in eps multiplies the integral by ~10
            assert!(w[1] > 8.0 * w[0], "{values:?}");
        }
    }

    #[test]
    fn malformed_configs() {
        let missing = spec(json!({"p_law": {"kind": "constant", "params": {"p": 0.8}}}));
        assert!(matches!(missing, Err(Error::MalformedConfig(_))));
        let extra = spec(json!({
            "p_law": {"kind": "constant", "params": {"p": 0.8, "q": 1}},
            "m_law": {"kind": "constant", "params": {"m": 0}}
        }));
        assert!(matches!(extra, Err(Error::MalformedConfig(_))), "{extra:?}");
        let extra_top = spec(json!({
            "p_law": {"kind": "constant", "params": {"p": 0.8}},
            "m_law": {"kind": "constant", "params": {"m": 0}},
            "bogus": 1
        }));
        assert!(matches!(extra_top, Err(Error::MalformedConfig(_))));
        let weights = spec(json!({
            "p_law": {"kind": "two_point", "params": {"p_a": 0.3, "p_b": 0.8, "weight_a": 0.5}},
            "m_law": {"kind": "finite_pmf", "params": {"atoms": [{"m": 0, "w": 0.5}, {"m": "inf", "w": 0.4}]}}
        }));
        assert!(matches!(weights, Err(Error::MalformedConfig(_))));
        let p_out = spec(json!({
            "p_law": {"kind": "constant", "params": {"p": 1.0}},
            "m_law": {"kind": "constant", "params": {"m": 0}}
        }));
        assert!(matches!(p_out, Err(Error::MalformedConfig(_))));
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let s = EnvironmentSpec::new(
            PLaw::FinitePmf { atoms: vec![PAtom { p: 0.25, w: 0.5 }, PAtom { p: 0.8, w: 0.5 }] },
            MLaw::TwoPointWithInfinity {
                zero: 0.6,
                infinity: 0.1,
                atoms: vec![CookieAtom { m: Cookies::Finite(3), w: 0.3 }],
            },
        )
        .unwrap();
        let text = s.to_json();
        assert!(text.contains("\"inf\"") || text.contains("infinity"));
        assert_eq!(EnvironmentSpec::from_json(&text).unwrap(), s);
    }

    #[test]
    fn point_mass_sites() {
        let s = constant(0.8, 0);
        for seed in [0, 1, 99] {
            let site = sample_site(&s, seed, -5);
            assert_eq!(site.p, 0.8);
            assert_eq!(site.m, Cookies::Finite(0));
            assert_eq!(site.rho, (1.0 - 0.8) / 0.8);
        }
    }

    #[test]
    fn sampling_is_a_pure_function() {
        let s = EnvironmentSpec::new(
            PLaw::Beta { alpha: 3.0, beta: 2.0 },
            MLaw::PowerLaw { exponent: 2.0, zero_mass: 0.5 },
        )
        .unwrap();
        for x in [-1000, -1, 0, 1, 12345] {
            assert_eq!(sample_site(&s, 42, x), sample_site(&s, 42, x));
        }
        assert_ne!(sample_site(&s, 42, 3), sample_site(&s, 43, 3));
    }

    #[test]
    fn infinite_cookie_frequency() {
        let s = EnvironmentSpec::new(
            PLaw::Constant { p: 0.3 },
            MLaw::TwoPointWithInfinity { zero: 0.1, infinity: 0.9, atoms: vec![] },
        )
        .unwrap();
        let n = 100_000;
        let hits = (0..n).filter(|&x| sample_site(&s, 7, x - 50_000).m.is_infinite()).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.9).abs() < 0.01, "{freq}");
    }

    #[test]
    fn prob_less_than_matches_definitions() {
        let g = MLaw::Geometric { q: 0.5 };
        assert!((g.prob_less_than(1.0) - 0.5).abs() < 1e-15);
        assert!((g.prob_less_than(2.0) - 0.75).abs() < 1e-15);
        assert!((g.prob_less_than(1.5) - 0.75).abs() < 1e-15);
        let t = MLaw::TwoPointWithInfinity {
            zero: 0.6,
            infinity: 0.05,
            atoms: vec![CookieAtom { m: Cookies::Finite(5), w: 0.35 }],
        };
        assert!((t.prob_less_than(5.0) - 0.6).abs() < 1e-15);
        assert!((t.prob_less_than(6.0) - 0.95).abs() < 1e-15);
        assert!((t.prob_less_than(1e300) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zeta_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((zeta(2.0) - pi2_6).abs() < 1e-12);
        assert!((zeta(4.0) - std::f64::consts::PI.powi(4) / 90.0).abs() < 1e-13);
        // -zeta'(2) = 0.93754825431584375370...
        assert!((zeta_log_sum(2.0) - 0.937_548_254_315_843_8).abs() < 1e-10, "{}", zeta_log_sum(2.0));
    }
}

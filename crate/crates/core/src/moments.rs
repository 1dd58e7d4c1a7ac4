//! Moment functionals of `(ρ₀, M₀)` and the `β`, `γ` root solver.
//!
//! Finite-support laws are summed exactly, Beta laws are integrated with a
//! clustered Gauss–Legendre rule, and a keyed Monte Carlo pass cross-checks
//! (or, for poorly resolved integrals, replaces) the numbers.

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::env_model::{sample_site, zeta, zeta_log_sum, Cookies, EnvironmentSpec, MLaw, PLaw};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_unit, DEFAULT_NODES};
use crate::rng::hash2;

/// Default bisection tolerance on `|h(β)|`.
pub const DEFAULT_BETA_TOL: f64 = 1e-10;
/// Bisection iteration budget.
pub const MAX_BISECTIONS: usize = 200;

const CLUSTERING: u32 = 6;
/// `|E[log ρ]|` below this is cancellation noise around an exact zero.
const LOG_MOMENT_ZERO: f64 = 1e-13;
const MC_SEED: u64 = 0x4d43_5f4d_4f4d;

/// An extended nonnegative-or-signed real: finite, or `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ext {
    Finite(f64),
    Infinite,
}

impl Ext {
    pub fn is_finite(self) -> bool {
        matches!(self, Ext::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Ext::Finite(v) => Some(v),
            Ext::Infinite => None,
        }
    }

    /// Value as `f64`, with `+∞` mapped to `f64::INFINITY` for comparisons.
    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl std::fmt::Display for Ext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Ext::Finite(v) => write!(f, "{v}"),
            Ext::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Ext {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Ext::Finite(v) => s.serialize_f64(*v),
            Ext::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Ext {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Ext::Finite(v)),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "∞") => Ok(Ext::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

/// How a functional was obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    ClosedForm,
    /// Truncated series with a tail bound below `1e-12`.
    Series,
    Quadrature { error: f64 },
    MonteCarlo { half_width: f64 },
    /// The functional is `+∞` analytically.
    Divergent,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::Series => "series",
            Method::Quadrature { .. } => "quadrature",
            Method::MonteCarlo { .. } => "monte-carlo",
            Method::Divergent => "divergent",
        }
    }

    fn error(self) -> Option<f64> {
        match self {
            Method::Quadrature { error } => Some(error),
            Method::MonteCarlo { half_width } => Some(half_width),
            _ => None,
        }
    }
}

/// A functional value with its provenance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Functional {
    pub value: Ext,
    pub method: Method,
}

impl Functional {
    fn exact(v: f64) -> Self {
        Self { value: Ext::Finite(v), method: Method::ClosedForm }
    }

    fn divergent() -> Self {
        Self { value: Ext::Infinite, method: Method::Divergent }
    }

    pub fn finite(&self) -> Option<f64> {
        self.value.finite()
    }
}

/// One Monte Carlo cross-check of a computed functional.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McCheck {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub reference: f64,
    pub within_4se: bool,
}

/// Every functional the classifier needs.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport {
    pub e_log_rho: Functional,
    pub e_rho: Functional,
    pub e_rho_inv: Functional,
    pub e_rho_sq: Functional,
    pub e_log_m_plus: Functional,
    pub e_m: Functional,
    pub p_m_zero: f64,
    pub p_m_finite: f64,
    /// Limit of `t·P[log M > t]`; `+∞` when `M` has an atom at ∞, absent when
    /// no limit is known.
    pub tail_lambda: Option<Ext>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    /// `P[ρ = 1] < 1`, carried for the Jensen sanity check.
    pub rho_nondegenerate: bool,
    pub mc_checks: Vec<McCheck>,
}

impl MomentReport {
    /// Flat JSON record: `name`, `name_method`, and `name_error` where known.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

impl Serialize for MomentReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(None)?;
        for (name, f) in [
            ("e_log_rho", &self.e_log_rho),
            ("e_rho", &self.e_rho),
            ("e_rho_inv", &self.e_rho_inv),
            ("e_rho_sq", &self.e_rho_sq),
            ("e_log_m_plus", &self.e_log_m_plus),
            ("e_m", &self.e_m),
        ] {
            map.serialize_entry(name, &f.value)?;
            map.serialize_entry(&format!("{name}_method"), f.method.tag())?;
            if let Some(e) = f.method.error() {
                map.serialize_entry(&format!("{name}_error"), &e)?;
            }
        }
        map.serialize_entry("p_m_zero", &self.p_m_zero)?;
        map.serialize_entry("p_m_finite", &self.p_m_finite)?;
        if let Some(l) = &self.tail_lambda {
            map.serialize_entry("tail_lambda", l)?;
        }
        if let Some(b) = self.beta {
            map.serialize_entry("beta", &b)?;
        }
        if let Some(g) = self.gamma {
            map.serialize_entry("gamma", &g)?;
        }
        if !self.mc_checks.is_empty() {
            map.serialize_entry("mc_checks", &self.mc_checks)?;
        }
        map.end()
    }
}

// ---------------------------------------------------------------------------
// ρ functionals

/// `E[ρ^t (log ρ)^k]` for `k ∈ {0, 1, 2}` and real `t`, or `None` when it
/// diverges.
fn rho_functional(law: &PLaw, t: f64, log_power: i32) -> Option<Functional> {
    match law {
        PLaw::Beta { alpha, beta } => {
            // density p^{a-1} q^{b-1} / B(a, b) times q^t p^{-t}
            if alpha - t <= 0.0 || beta + t <= 0.0 {
                return None;
            }
            let ln_b = ln_beta(*alpha, *beta);
            let (a, b) = (*alpha, *beta);
            let integral = integrate_unit(
                |p, q| {
                    let (lp, lq) = (p.ln(), q.ln());
                    let dens = ((a - 1.0 - t) * lp + (b - 1.0 + t) * lq - ln_b).exp();
                    dens * (lq - lp).powi(log_power)
                },
                DEFAULT_NODES,
                CLUSTERING,
            );
            Some(Functional {
                value: Ext::Finite(integral.value),
                method: Method::Quadrature { error: integral.error_estimate },
            })
        }
        _ => {
            let atoms = law.atoms().expect("discrete p law");
            let v = atoms
                .iter()
                .map(|&(p, w)| {
                    let rho: f64 = (1.0 - p) / p;
                    w * rho.powf(t) * rho.ln().powi(log_power)
                })
                .sum();
            Some(Functional::exact(v))
        }
    }
}

fn e_log_rho(law: &PLaw) -> Functional {
    let mut f = rho_functional(law, 0.0, 1).expect("log-moments are finite under the standing assumptions");
    if let Ext::Finite(v) = f.value {
        if v.abs() <= LOG_MOMENT_ZERO {
            f.value = Ext::Finite(0.0);
        }
    }
    f
}

fn rho_value(law: &PLaw, t: f64, log_power: i32) -> f64 {
    rho_functional(law, t, log_power).and_then(|f| f.finite()).unwrap_or(f64::INFINITY)
}

/// `g(t) = E[ρ₀ᵗ]` for `t ∈ [0, 2]`.
pub fn mgf(spec: &EnvironmentSpec, t: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&t) {
        return Err(Error::OutOfDomain(format!("mgf argument t = {t} outside [0, 2]")));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    Ok(rho_value(&spec.p_law, t, 0))
}

/// `h(t) = g'(t) = E[ρ₀ᵗ log ρ₀]` for `t ∈ [0, 2]`.
pub fn h(spec: &EnvironmentSpec, t: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&t) {
        return Err(Error::OutOfDomain(format!("h argument t = {t} outside [0, 2]")));
    }
    Ok(rho_value(&spec.p_law, t, 1))
}

/// Root `β ∈ (0, 1)` of `h` and `γ = g(β)`, by bisection on `[0, 1]`.
///
/// Requires `E[log ρ] < 0 ≤ E[ρ] - 1`, under which `h(0) < 0 ≤ h(1)` and `h`
/// is strictly increasing.
pub fn solve_beta(spec: &EnvironmentSpec, tol: f64) -> Result<(f64, f64)> {
    if !(tol > 0.0) {
        return Err(Error::OutOfDomain(format!("tolerance {tol} must be positive")));
    }
    let h0 = e_log_rho(&spec.p_law).value.as_f64();
    let g1 = mgf(spec, 1.0)?;
    if !(h0 < 0.0 && g1 >= 1.0) {
        return Err(Error::RegimeMismatch(format!(
            "beta needs E[log rho] < 0 and E[rho] >= 1, got E[log rho] = {h0}, E[rho] = {g1}"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let hm = h(spec, mid)?;
        residual = hm.abs();
        if residual <= tol {
            return Ok((mid, mgf(spec, mid)?));
        }
        if hm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * 0.5 {
            break;
        }
    }
    Err(Error::NoConvergence { iterations: MAX_BISECTIONS, residual })
}

// ---------------------------------------------------------------------------
// M functionals

fn e_m(law: &MLaw) -> Functional {
    match law {
        MLaw::Geometric { q } => Functional::exact((1.0 - q) / q),
        MLaw::LogHeavyTail { .. } => Functional::divergent(),
        MLaw::PowerLaw { exponent, zero_mass } => {
            if *exponent <= 2.0 {
                Functional::divergent()
            } else {
                Functional {
                    value: Ext::Finite((1.0 - zero_mass) * zeta(exponent - 1.0) / zeta(*exponent)),
                    method: Method::Series,
                }
            }
        }
        _ => atom_expectation(law, |k| k as f64),
    }
}

fn e_log_m_plus(law: &MLaw) -> Functional {
    match law {
        MLaw::Geometric { q } => {
            // Σ_{k≥2} ln k · q (1-q)^k
            let r = 1.0 - q;
            if r <= 0.0 {
                return Functional::exact(0.0);
            }
            let mut sum = 0.0;
            let mut weight = q * r;
            let mut k = 1u64;
            loop {
                k += 1;
                weight *= r;
                let term = (k as f64).ln() * weight;
                sum += term;
                // the remaining terms are bounded by term / (1 - r) times a slowly growing log factor
                if term < 1e-18 * sum.max(1e-300) || (weight == 0.0) || k > 100_000_000 {
                    break;
                }
            }
            Functional { value: Ext::Finite(sum), method: Method::Series }
        }
        MLaw::LogHeavyTail { .. } => Functional::divergent(),
        MLaw::PowerLaw { exponent, zero_mass } => Functional {
            value: Ext::Finite((1.0 - zero_mass) * zeta_log_sum(*exponent) / zeta(*exponent)),
            method: Method::Series,
        },
        _ => atom_expectation(law, |k| if k >= 1 { (k as f64).ln() } else { 0.0 }),
    }
}

fn atom_expectation(law: &MLaw, f: impl Fn(u64) -> f64) -> Functional {
    let atoms = law.atoms().expect("finite cookie law");
    let mut v = 0.0;
    for (m, w) in atoms {
        match m {
            Cookies::Infinite => return Functional::divergent(),
            Cookies::Finite(k) => v += w * f(k),
        }
    }
    Functional::exact(v)
}

fn tail_lambda(law: &MLaw, e_log_m_plus: &Functional) -> Option<Ext> {
    if law.p_infinite() > 0.0 {
        return Some(Ext::Infinite);
    }
    match law {
        MLaw::LogHeavyTail { lambda, .. } => Some(Ext::Finite(*lambda)),
        _ if e_log_m_plus.value.is_finite() => Some(Ext::Finite(0.0)),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// the report

/// Compute every functional. With `mc_budget = Some(n)` the report also
/// carries Monte Carlo cross-checks over `n` keyed sites, and replaces any
/// quadrature whose error estimate exceeds `1e-6` (relative) by the Monte
/// Carlo mean.
pub fn moment_report(spec: &EnvironmentSpec, mc_budget: Option<usize>) -> MomentReport {
    let p_law = &spec.p_law;
    let e_log_rho = e_log_rho(p_law);
    let e_rho = rho_functional(p_law, 1.0, 0).unwrap_or_else(Functional::divergent);
    let e_rho_inv = rho_functional(p_law, -1.0, 0).unwrap_or_else(Functional::divergent);
    let e_rho_sq = rho_functional(p_law, 2.0, 0).unwrap_or_else(Functional::divergent);
    let e_log_m_plus = e_log_m_plus(&spec.m_law);
    let e_m = e_m(&spec.m_law);
    let rho_nondegenerate = !p_law.is_point_mass_at_half();

    let (beta, gamma) = match (e_log_rho.finite(), e_rho.finite()) {
        (Some(l), Some(r)) if l < 0.0 && r >= 1.0 => match solve_beta(spec, DEFAULT_BETA_TOL) {
            Ok((b, g)) => (Some(b), Some(g)),
            Err(_) => (None, None),
        },
        _ => (None, None),
    };

    let mut report = MomentReport {
        tail_lambda: tail_lambda(&spec.m_law, &e_log_m_plus),
        e_log_rho,
        e_rho,
        e_rho_inv,
        e_rho_sq,
        e_log_m_plus,
        e_m,
        p_m_zero: spec.m_law.p_zero(),
        p_m_finite: spec.m_law.p_finite(),
        beta,
        gamma,
        rho_nondegenerate,
        mc_checks: Vec::new(),
    };
    if let Some(n) = mc_budget.filter(|&n| n >= 2) {
        monte_carlo_pass(spec, n, &mut report);
    }
    report
}

struct Running {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn new() -> Self {
        Self { n: 0.0, mean: 0.0, m2: 0.0 }
    }

    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn std_error(&self) -> f64 {
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

fn monte_carlo_pass(spec: &EnvironmentSpec, n: usize, report: &mut MomentReport) {
    let seed = hash2(MC_SEED, n as u64);
    let mut acc: Vec<(&'static str, Running)> = [
        "e_log_rho",
        "e_rho",
        "e_rho_inv",
        "e_rho_sq",
        "e_log_m_plus",
        "e_m",
        "p_m_zero",
        "p_m_finite",
    ]
    .into_iter()
    .map(|k| (k, Running::new()))
    .collect();
    for x in 0..n as i64 {
        let site = sample_site(spec, seed, x);
        let (m_log, m_val) = match site.m {
            Cookies::Infinite => (f64::NAN, f64::NAN),
            Cookies::Finite(k) => (if k >= 1 { (k as f64).ln() } else { 0.0 }, k as f64),
        };
        let values = [
            site.rho.ln(),
            site.rho,
            1.0 / site.rho,
            site.rho * site.rho,
            m_log,
            m_val,
            if site.m.is_zero() { 1.0 } else { 0.0 },
            if site.m.is_infinite() { 0.0 } else { 1.0 },
        ];
        for ((_, r), v) in acc.iter_mut().zip(values) {
            r.push(v);
        }
    }
    let mut checks = Vec::new();
    for (name, r) in acc {
        let reference = match name {
            "p_m_zero" => Ext::Finite(report.p_m_zero),
            "p_m_finite" => Ext::Finite(report.p_m_finite),
            _ => field_mut(report, name).value,
        };
        let Ext::Finite(reference) = reference else { continue };
        if !r.mean.is_finite() {
            continue;
        }
        let se = r.std_error();
        let within = (r.mean - reference).abs() <= 4.0 * se + 1e-12;
        if name.starts_with("e_") {
            let f = field_mut(report, name);
            if let Method::Quadrature { error } = f.method {
                if error > 1e-6 * reference.abs().max(1.0) {
                    *f = Functional {
                        value: Ext::Finite(r.mean),
                        method: Method::MonteCarlo { half_width: 1.96 * se },
                    };
                }
            }
        }
        checks.push(McCheck { name: name.to_string(), estimate: r.mean, std_error: se, reference, within_4se: within });
    }
    report.mc_checks = checks;
}

fn field_mut<'a>(report: &'a mut MomentReport, name: &str) -> &'a mut Functional {
    match name {
        "e_log_rho" => &mut report.e_log_rho,
        "e_rho" => &mut report.e_rho,
        "e_rho_inv" => &mut report.e_rho_inv,
        "e_rho_sq" => &mut report.e_rho_sq,
        "e_log_m_plus" => &mut report.e_log_m_plus,
        "e_m" => &mut report.e_m,
        _ => unreachable!("unknown functional {name}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{CookieAtom, Checks};
    use proptest::prelude::*;
    use statrs::function::gamma::digamma;

    fn spec(p: PLaw, m: MLaw) -> EnvironmentSpec {
        EnvironmentSpec::new(p, m).unwrap()
    }

    fn two_point() -> EnvironmentSpec {
        spec(PLaw::TwoPoint { p_a: 0.25, p_b: 0.8, weight_a: 0.5 }, MLaw::Geometric { q: 0.5 })
    }

    #[test]
    fn mgf_examples() {
        let s = spec(PLaw::Constant { p: 0.8 }, MLaw::Constant { m: 0 });
        assert!((mgf(&s, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(mgf(&s, 0.0).unwrap(), 1.0);
        assert!((mgf(&two_point(), 1.0).unwrap() - 1.625).abs() < 1e-15);
        assert!(matches!(mgf(&s, 2.5), Err(Error::OutOfDomain(_))));
        assert!(matches!(mgf(&s, -0.1), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn beta_root_for_the_two_point_law() {
        let s = two_point();
        let (b, g) = solve_beta(&s, 1e-10).unwrap();
        // 3^b ln 3 = 4^{-b} ln 4  ⟹  b = ln(ln 4 / ln 3) / ln 12
        let exact = ((4f64).ln() / (3f64).ln()).ln() / (12f64).ln();
        assert!((b - exact).abs() < 1e-9, "{b} vs {exact}");
        assert!(h(&s, b).unwrap().abs() <= 1e-10);
        let exact_g = 0.5 * (3f64.powf(exact) + 0.25f64.powf(exact));
        assert!((g - exact_g).abs() < 1e-9);
        assert!((b - 0.0936).abs() < 5e-5 && (g - 0.9933).abs() < 5e-5, "{b} {g}");
        assert!(0.0 < b && b < 1.0 && g < 1.0);
    }

    #[test]
    fn beta_agrees_with_a_plain_two_hundred_step_bisection() {
        let s = two_point();
        let f = |t: f64| 0.5 * (3f64.powf(t) * 3f64.ln() + 0.25f64.powf(t) * 0.25f64.ln());
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let (b, _) = solve_beta(&s, 1e-12).unwrap();
        assert!((b - lo).abs() < 1e-10);
    }

    #[test]
    fn beta_is_stable_under_tolerance_halving() {
        let s = two_point();
        let (b1, g1) = solve_beta(&s, 1e-10).unwrap();
        let (b2, g2) = solve_beta(&s, 5e-11).unwrap();
        assert!((b1 - b2).abs() <= 1e-8 && (g1 - g2).abs() <= 1e-8);
    }

    #[test]
    fn beta_regime_mismatch() {
        let s = spec(PLaw::Constant { p: 0.3 }, MLaw::Constant { m: 0 });
        assert!(matches!(solve_beta(&s, 1e-10), Err(Error::RegimeMismatch(_))));
        let s = spec(PLaw::Constant { p: 0.8 }, MLaw::Constant { m: 0 });
        assert!(matches!(solve_beta(&s, 1e-10), Err(Error::RegimeMismatch(_))));
    }

    #[test]
    fn point_mass_report() {
        let r = moment_report(&spec(PLaw::Constant { p: 0.8 }, MLaw::Constant { m: 0 }), None);
        assert!((r.e_rho.finite().unwrap() - 0.25).abs() < 1e-15);
        assert!((r.e_rho_inv.finite().unwrap() - 4.0).abs() < 1e-14);
        assert!((r.e_log_rho.finite().unwrap() - 0.25f64.ln()).abs() < 1e-15);
        assert_eq!(r.p_m_finite, 1.0);
        assert_eq!(r.e_m.value, Ext::Finite(0.0));
        assert_eq!(r.tail_lambda, Some(Ext::Finite(0.0)));
        assert!(r.beta.is_none());
    }

    #[test]
    fn geometric_cookie_report() {
        let r = moment_report(&spec(PLaw::Constant { p: 0.3 }, MLaw::Geometric { q: 0.5 }), None);
        assert!((r.e_rho.finite().unwrap() - 7.0 / 3.0).abs() < 1e-14);
        assert!((r.e_rho_inv.finite().unwrap() - 3.0 / 7.0).abs() < 1e-14);
        // Σ k (1/2)^{k+1} = 1
        let oracle_m: f64 = (0..200).map(|k| k as f64 * 0.5f64.powi(k + 1)).sum();
        assert!((r.e_m.finite().unwrap() - oracle_m).abs() < 1e-12);
        let oracle_log: f64 = (2..400).map(|k| (k as f64).ln() * 0.5f64.powi(k + 1)).sum();
        assert!((r.e_log_m_plus.finite().unwrap() - oracle_log).abs() < 1e-12);
        assert_eq!(r.e_log_m_plus.method, Method::Series);
    }

    #[test]
    fn log_heavy_tail_report() {
        let r = moment_report(
            &spec(PLaw::Constant { p: 0.3 }, MLaw::LogHeavyTail { lambda: 2.0, zero_mass: 0.5 }),
            None,
        );
        assert_eq!(r.tail_lambda, Some(Ext::Finite(2.0)));
        assert_eq!(r.e_log_m_plus.value, Ext::Infinite);
        assert_eq!(r.e_log_m_plus.method, Method::Divergent);
        assert_eq!(r.e_m.value, Ext::Infinite);
        // E[log M; M ≥ 1] ≥ (1-z) E[c/U - 1] and ∫₀¹ du/u diverges: partial integrals grow like ln(1/ε)
        let c = 2.0 / 0.5;
        let partial = |eps: f64| 0.5 * (c * (1.0 / eps).ln() - (1.0 - eps));
        assert!(partial(1e-8) > partial(1e-4) + 10.0);
    }

    #[test]
    fn infinite_atoms_diverge() {
        let s = spec(
            PLaw::Constant { p: 0.3 },
            MLaw::TwoPointWithInfinity { zero: 0.1, infinity: 0.9, atoms: vec![] },
        );
        let r = moment_report(&s, None);
        assert_eq!(r.e_m.value, Ext::Infinite);
        assert_eq!(r.e_log_m_plus.value, Ext::Infinite);
        assert_eq!(r.tail_lambda, Some(Ext::Infinite));
        assert!((r.p_m_finite - 0.1).abs() < 1e-15);
    }

    #[test]
    fn power_law_mean_diverges_but_log_moment_is_finite() {
        let r = moment_report(
            &spec(PLaw::Constant { p: 0.3 }, MLaw::PowerLaw { exponent: 2.0, zero_mass: 0.5 }),
            None,
        );
        assert_eq!(r.e_m.value, Ext::Infinite);
        // Σ ln k / k² / ζ(2) = -ζ'(2)/ζ(2) ≈ 0.5699610/... oracle by brute summation with integral tail
        let n = 2_000_000u64;
        let head: f64 = (2..n).map(|k| (k as f64).ln() / (k as f64).powi(2)).sum();
        let nf = n as f64;
        let tail = (nf.ln() + 1.0) / nf;
        let oracle = 0.5 * (head + tail) / (std::f64::consts::PI.powi(2) / 6.0);
        assert!((r.e_log_m_plus.finite().unwrap() - oracle).abs() < 1e-6, "{:?} {oracle}", r.e_log_m_plus);
    }

    #[test]
    fn beta_law_quadrature_matches_closed_forms() {
        let (a, b) = (3.5, 2.5);
        let s = spec(PLaw::Beta { alpha: a, beta: b }, MLaw::Constant { m: 0 });
        let r = moment_report(&s, None);
        let close = |f: &Functional, v: f64| (f.finite().unwrap() - v).abs() < 1e-9 * v.abs().max(1.0);
        assert!(close(&r.e_rho, b / (a - 1.0)), "{:?}", r.e_rho);
        assert!(close(&r.e_rho_sq, b * (b + 1.0) / ((a - 1.0) * (a - 2.0))), "{:?}", r.e_rho_sq);
        assert!(close(&r.e_rho_inv, a / (b - 1.0)), "{:?}", r.e_rho_inv);
        assert!(close(&r.e_log_rho, digamma(b) - digamma(a)), "{:?}", r.e_log_rho);
        assert!(matches!(r.e_rho.method, Method::Quadrature { error } if error < 1e-9));
    }

    #[test]
    fn beta_law_inverse_moment_diverges_for_small_second_shape() {
        let s = spec(PLaw::Beta { alpha: 3.0, beta: 0.8 }, MLaw::Constant { m: 0 });
        let r = moment_report(&s, None);
        assert_eq!(r.e_rho_inv.value, Ext::Infinite);
        assert!(r.e_rho.finite().is_some());
    }

    #[test]
    fn beta_law_root_matches_digamma_oracle() {
        // E[ρ^t log ρ] = g(t) (ψ(β+t) - ψ(α-t)) for Beta(α, β)
        let (a, b) = (3.0, 2.2);
        let s = spec(PLaw::Beta { alpha: a, beta: b }, MLaw::Constant { m: 0 });
        let r = moment_report(&s, None);
        assert!(r.e_log_rho.finite().unwrap() < 0.0 && r.e_rho.finite().unwrap() >= 1.0);
        let (beta, _) = solve_beta(&s, 1e-11).unwrap();
        let oracle = digamma(b + beta) - digamma(a - beta);
        assert!(oracle.abs() < 1e-8, "{oracle}");
    }

    #[test]
    fn monte_carlo_checks_agree_with_closed_forms() {
        let s = spec(
            PLaw::FinitePmf {
                atoms: vec![
                    crate::env_model::PAtom { p: 0.3, w: 0.2 },
                    crate::env_model::PAtom { p: 0.6, w: 0.5 },
                    crate::env_model::PAtom { p: 0.9, w: 0.3 },
                ],
            },
            MLaw::FinitePmf {
                atoms: vec![
                    CookieAtom { m: Cookies::Finite(0), w: 0.5 },
                    CookieAtom { m: Cookies::Finite(3), w: 0.5 },
                ],
            },
        );
        let r = moment_report(&s, Some(50_000));
        assert!(r.mc_checks.len() >= 6);
        for c in &r.mc_checks {
            assert!(c.within_4se, "{c:?}");
        }
    }

    #[test]
    fn report_json_is_flat_and_nan_free() {
        let s = spec(PLaw::Constant { p: 0.3 }, MLaw::LogHeavyTail { lambda: 0.4, zero_mass: 0.5 });
        let v = moment_report(&s, None).to_json_value();
        assert_eq!(v["e_m"], "inf");
        assert_eq!(v["e_m_method"], "divergent");
        assert_eq!(v["tail_lambda"], 0.4);
        assert!(v.get("beta").is_none());
        let text = serde_json::to_string(&v).unwrap();
        assert!(!text.contains("NaN") && !text.contains("null"));
        let back: Ext = serde_json::from_value(v["e_m"].clone()).unwrap();
        assert_eq!(back, Ext::Infinite);
    }

    #[test]
    fn jensen_and_beta_presence_invariants() {
        let specs = [
            spec(PLaw::Constant { p: 0.3 }, MLaw::Geometric { q: 0.5 }),
            two_point(),
            spec(PLaw::TwoPoint { p_a: 0.45, p_b: 0.55, weight_a: 0.5 }, MLaw::Constant { m: 0 }),
            spec(PLaw::Beta { alpha: 3.0, beta: 3.0 }, MLaw::Constant { m: 0 }),
        ];
        for s in &specs {
            let r = moment_report(s, None);
            let l = r.e_log_rho.finite().unwrap();
            let e = r.e_rho.finite().unwrap();
            if l >= 0.0 && r.rho_nondegenerate {
                assert!(e > 1.0);
            }
            assert_eq!(r.beta.is_some(), l < 0.0 && e >= 1.0);
            if let (Some(b), Some(g)) = (r.beta, r.gamma) {
                assert!(0.0 < b && b < 1.0 && g < 1.0);
            }
        }
    }

    #[test]
    fn critical_walk_spec_is_structurally_valid() {
        let s = EnvironmentSpec::with_checks(PLaw::Constant { p: 0.5 }, MLaw::Constant { m: 0 }, Checks::Structural)
            .unwrap();
        assert_eq!(mgf(&s, 1.0).unwrap(), 1.0);
    }

    fn arb_p_law() -> impl Strategy<Value = PLaw> {
        prop_oneof![
            (0.05f64..0.95, 0.05f64..0.95, 0.0f64..1.0)
                .prop_filter("not both 1/2", |(a, b, _)| (a - 0.5).abs() > 1e-3 || (b - 0.5).abs() > 1e-3)
                .prop_map(|(p_a, p_b, weight_a)| PLaw::TwoPoint { p_a, p_b, weight_a }),
            (2.2f64..8.0, 0.5f64..8.0).prop_map(|(alpha, beta)| PLaw::Beta { alpha, beta }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mgf_is_convex_and_starts_at_one(law in arb_p_law(), t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
            let s = spec(law, MLaw::Constant { m: 0 });
            prop_assert_eq!(mgf(&s, 0.0).unwrap(), 1.0);
            let mid = mgf(&s, 0.5 * (t1 + t2)).unwrap();
            let avg = 0.5 * (mgf(&s, t1).unwrap() + mgf(&s, t2).unwrap());
            prop_assert!(mid <= avg + 1e-12 * avg.max(1.0), "{} > {}", mid, avg);
        }

        #[test]
        fn beta_root_is_tolerance_stable(law in arb_p_law()) {
            let s = spec(law, MLaw::Constant { m: 0 });
            let l = h(&s, 0.0).unwrap();
            let e = mgf(&s, 1.0).unwrap();
            prop_assume!(l < 0.0 && e >= 1.0);
            let (b1, _) = solve_beta(&s, 1e-10).unwrap();
            let (b2, _) = solve_beta(&s, 5e-11).unwrap();
            prop_assert!((b1 - b2).abs() <= 1e-8);
            prop_assert!(h(&s, b1).unwrap().abs() <= 1e-10);
        }
    }
}

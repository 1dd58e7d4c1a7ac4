//! Decision procedures for transience and speed.
//!
//! Every comparison of two computed quantities goes through [`compare`], which
//! treats values within a relative `1e-9` as tied. A tie on a deciding
//! comparison never produces a guessed sign: the verdict becomes
//! indeterminate and names the boundary in `boundary_flags`.

use serde::Serialize;
use std::cmp::Ordering;

use crate::env_model::{Cookies, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::moments::{Ext, MomentReport};

pub const KNIFE_EDGE_TOL: f64 = 1e-9;

pub const FLAG_TILDE_EDGE: &str = "E[rho]*P[M<inf]=1";
pub const FLAG_RHO_INV_EDGE: &str = "E[rho^-1]=1";
pub const FLAG_RHO_EDGE: &str = "E[rho]=1";
pub const FLAG_LOG_EDGE: &str = "E[log rho]=0";
pub const FLAG_GAMMA_EDGE: &str = "gamma*E[rho]*P[M<inf]=1";
pub const FLAG_ZERO_EDGE: &str = "E[rho]*P[M=0]=1";
pub const FLAG_GAP: &str = "open-problem-Thm-1.4-gap";
pub const FLAG_NO_BETA: &str = "beta-unavailable";
pub const FLAG_LAMBDA_EDGE: &str = "lambda=E[log rho]";
pub const FLAG_NO_TAIL: &str = "tail-limit-unknown";
pub const FLAG_RECURRENT_COOKIES: &str = "cookies-on-recurrent-environment";

/// Clause for the right-transient underlying walk with `E[ρ] < 1`: cookies
/// only help, so Solomon's positive speed is a floor.
pub const CLAUSE_MONOTONE_FLOOR: &str = "cookie monotonicity + Thm 1.2(i)";
/// Clause for right-transience when the underlying walk is right-transient.
pub const CLAUSE_MONOTONE_TRANSIENCE: &str = "cookie monotonicity";
pub const CLAUSE_COOKIE_FREE_TRANSIENCE: &str = "cookie-free: sign of E[log rho]";
pub const CLAUSE_INDETERMINATE: &str = "indeterminate";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Transience {
    Left,
    Recurrent,
    Right,
    Indeterminate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedSign {
    Negative,
    Zero,
    Positive,
    Indeterminate,
}

impl SpeedSign {
    pub fn of(v: f64) -> Self {
        match v.partial_cmp(&0.0) {
            Some(Ordering::Less) => SpeedSign::Negative,
            Some(Ordering::Greater) => SpeedSign::Positive,
            Some(Ordering::Equal) => SpeedSign::Zero,
            None => SpeedSign::Indeterminate,
        }
    }

    pub fn is_determinate(self) -> bool {
        self != SpeedSign::Indeterminate
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub transience: Transience,
    pub transience_clause: String,
    pub speed_sign: SpeedSign,
    pub speed_value: Option<f64>,
    /// Lower bound on a positive speed when no exact value is known.
    pub speed_floor: Option<f64>,
    pub clause: String,
    pub boundary_flags: Vec<String>,
}

impl Verdict {
    fn speed(sign: SpeedSign, value: Option<f64>, clause: &str, flags: Vec<String>) -> Self {
        Self {
            transience: Transience::Indeterminate,
            transience_clause: CLAUSE_INDETERMINATE.into(),
            speed_sign: sign,
            speed_value: value,
            speed_floor: None,
            clause: clause.into(),
            boundary_flags: flags,
        }
    }

    fn undecided(flags: Vec<String>) -> Self {
        Self::speed(SpeedSign::Indeterminate, None, CLAUSE_INDETERMINATE, flags)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("verdict serializes")
    }
}

/// Three-way comparison with relative tolerance; `None` marks a tie.
pub fn compare(a: f64, b: f64) -> Option<Ordering> {
    if a.is_infinite() || b.is_infinite() {
        return if a == b { None } else { a.partial_cmp(&b) };
    }
    if (a - b).abs() <= KNIFE_EDGE_TOL * a.abs().max(b.abs()) {
        None
    } else {
        a.partial_cmp(&b)
    }
}

struct Flags(Vec<String>);

impl Flags {
    fn cmp(&mut self, a: f64, b: f64, flag: &str) -> Option<Ordering> {
        let c = compare(a, b);
        if c.is_none() {
            self.add(flag);
        }
        c
    }

    fn add(&mut self, flag: &str) {
        if !self.0.iter().any(|f| f == flag) {
            self.0.push(flag.into());
        }
    }
}

/// Solomon's speed for a cookie-free walk.
pub fn solomon_speed(e_rho: f64, e_rho_inv: f64) -> f64 {
    if e_rho < 1.0 {
        (1.0 - e_rho) / (1.0 + e_rho)
    } else if e_rho_inv < 1.0 {
        -(1.0 - e_rho_inv) / (1.0 + e_rho_inv)
    } else {
        0.0
    }
}

/// Speed of the left-transient walk with `E[M] < ∞` and `E[ρ⁻¹] < 1`:
/// `1/ν = -(E[M](1 + t) + t)` where `t = (1 + E[ρ⁻¹])/(1 - E[ρ⁻¹])` is the
/// cookie-free mean time to step one level down.
pub fn left_speed(e_m: f64, e_rho_inv: f64) -> f64 {
    let t = (1.0 + e_rho_inv) / (1.0 - e_rho_inv);
    -1.0 / (e_m * (1.0 + t) + t)
}

fn log_sign(report: &MomentReport, flags: &mut Flags) -> Option<Ordering> {
    let l = report.e_log_rho.value.as_f64();
    if l == 0.0 {
        Some(Ordering::Equal)
    } else if l.abs() <= KNIFE_EDGE_TOL {
        flags.add(FLAG_LOG_EDGE);
        None
    } else {
        l.partial_cmp(&0.0)
    }
}

/// Verdict for a cookie-free walk.
pub fn classify_rwre(report: &MomentReport) -> Result<Verdict> {
    if report.p_m_zero < 1.0 {
        return Err(Error::NotCookieFree(report.p_m_zero));
    }
    let e_rho = report.e_rho.value.as_f64();
    let e_inv = report.e_rho_inv.value.as_f64();
    let mut flags = Flags(Vec::new());
    let (sign, value, clause) = match (flags.cmp(e_rho, 1.0, FLAG_RHO_EDGE), flags.cmp(e_inv, 1.0, FLAG_RHO_INV_EDGE)) {
        (Some(Ordering::Less), _) => {
            let v = (1.0 - e_rho) / (1.0 + e_rho);
            (SpeedSign::Positive, Some(v), "Thm 1.2(i)")
        }
        (_, Some(Ordering::Less)) => {
            let v = -(1.0 - e_inv) / (1.0 + e_inv);
            (SpeedSign::Negative, Some(v), "Thm 1.2(ii)")
        }
        (Some(_), Some(_)) => (SpeedSign::Zero, Some(0.0), "Thm 1.2(iii)"),
        // within tolerance of a boundary both neighbouring formulas give ≈ 0,
        // but the sign is what we report, so stay honest
        _ => (SpeedSign::Indeterminate, None, CLAUSE_INDETERMINATE),
    };
    let mut v = Verdict::speed(sign, value, clause, Vec::new());
    let t = classify_transience(report);
    v.transience = t.transience;
    v.transience_clause = t.transience_clause;
    flags.0.extend(t.boundary_flags);
    v.boundary_flags = flags.0;
    Ok(v)
}

/// Transience verdict; only `transience`, `transience_clause` and
/// `boundary_flags` are meaningful.
pub fn classify_transience(report: &MomentReport) -> Verdict {
    let mut flags = Flags(Vec::new());
    let sign = log_sign(report, &mut flags);
    let (t, clause) = if report.p_m_zero >= 1.0 {
        match sign {
            Some(Ordering::Less) => (Transience::Right, CLAUSE_COOKIE_FREE_TRANSIENCE),
            Some(Ordering::Equal) => (Transience::Recurrent, CLAUSE_COOKIE_FREE_TRANSIENCE),
            Some(Ordering::Greater) => (Transience::Left, CLAUSE_COOKIE_FREE_TRANSIENCE),
            None => (Transience::Indeterminate, CLAUSE_INDETERMINATE),
        }
    } else {
        match sign {
            Some(Ordering::Less) => (Transience::Right, CLAUSE_MONOTONE_TRANSIENCE),
            Some(Ordering::Equal) => {
                flags.add(FLAG_RECURRENT_COOKIES);
                (Transience::Indeterminate, CLAUSE_INDETERMINATE)
            }
            Some(Ordering::Greater) => transience_left_environment(report, &mut flags),
            None => (Transience::Indeterminate, CLAUSE_INDETERMINATE),
        }
    };
    let mut v = Verdict::undecided(flags.0);
    v.transience = t;
    v.transience_clause = clause.into();
    v
}

fn transience_left_environment(report: &MomentReport, flags: &mut Flags) -> (Transience, &'static str) {
    if report.e_log_m_plus.value.is_finite() {
        return (Transience::Left, "Thm 1.1(i)");
    }
    let l = report.e_log_rho.value.as_f64();
    match report.tail_lambda {
        None => {
            flags.add(FLAG_NO_TAIL);
            (Transience::Indeterminate, CLAUSE_INDETERMINATE)
        }
        Some(lambda) => match flags.cmp(lambda.as_f64(), l, FLAG_LAMBDA_EDGE) {
            Some(Ordering::Less) => (Transience::Recurrent, "Thm 1.1(ii)"),
            Some(Ordering::Greater) => (Transience::Right, "Thm 1.1(iii)"),
            _ => (Transience::Indeterminate, CLAUSE_INDETERMINATE),
        },
    }
}

/// Whether the cookie law lives on `{0, ∞}`.
fn zero_or_infinite(report: &MomentReport) -> bool {
    (report.p_m_zero - report.p_m_finite).abs() <= 1e-15
}

/// Exact speed from the reduction, when the cookie law allows it.
fn tilde_speed(report: &MomentReport) -> Option<f64> {
    if !zero_or_infinite(report) {
        return None;
    }
    let e = report.e_rho.value.as_f64() * report.p_m_finite;
    (e < 1.0).then(|| (1.0 - e) / (1.0 + e))
}

/// Speed verdict; `transience` is left indeterminate (see [`classify`]).
pub fn classify_speed(report: &MomentReport) -> Verdict {
    let mut flags = Flags(Vec::new());
    let e_rho = report.e_rho.value.as_f64();
    let e_inv = report.e_rho_inv.value.as_f64();
    let p_fin = report.p_m_finite;
    let e_tilde = e_rho * p_fin;
    match log_sign(report, &mut flags) {
        None => Verdict::undecided(flags.0),
        Some(Ordering::Less) => match flags.cmp(e_rho, 1.0, FLAG_RHO_EDGE) {
            None => Verdict::undecided(flags.0),
            Some(Ordering::Less) => {
                let floor = (1.0 - e_rho) / (1.0 + e_rho);
                let value = tilde_speed(report);
                let mut v = Verdict::speed(SpeedSign::Positive, value, CLAUSE_MONOTONE_FLOOR, flags.0);
                v.speed_floor = Some(floor);
                v
            }
            Some(_) => thm_1_4(report, e_rho, e_tilde, flags),
        },
        Some(_) => {
            // E[log ρ] ≥ 0
            let e_m = report.e_m.value;
            let inv = flags.cmp(e_inv, 1.0, FLAG_RHO_INV_EDGE);
            if let (Ext::Finite(m), Some(Ordering::Less)) = (e_m, inv) {
                let v = left_speed(m, e_inv);
                return Verdict::speed(SpeedSign::Negative, Some(v), "Thm 1.3(i)", flags.0);
            }
            let hypothesis_ii = !e_m.is_finite() || matches!(inv, Some(Ordering::Greater | Ordering::Equal));
            match flags.cmp(e_tilde, 1.0, FLAG_TILDE_EDGE) {
                Some(Ordering::Less) => Verdict::speed(SpeedSign::Positive, tilde_speed(report), "Thm 1.3(iii)", flags.0),
                Some(Ordering::Greater) if hypothesis_ii => Verdict::speed(SpeedSign::Zero, Some(0.0), "Thm 1.3(ii)", flags.0),
                _ => Verdict::undecided(flags.0),
            }
        }
    }
}

fn thm_1_4(report: &MomentReport, e_rho: f64, e_tilde: f64, mut flags: Flags) -> Verdict {
    let p0 = report.p_m_zero;
    // (ii) first: it needs no β
    if p0 > 0.0 && matches!(flags.cmp(e_rho * p0, 1.0, FLAG_ZERO_EDGE), Some(Ordering::Greater)) {
        return Verdict::speed(SpeedSign::Zero, Some(0.0), "Thm 1.4(ii)", flags.0);
    }
    match report.gamma {
        Some(g) => {
            if flags.cmp(g * e_tilde, 1.0, FLAG_GAMMA_EDGE) == Some(Ordering::Greater) {
                return Verdict::speed(SpeedSign::Zero, Some(0.0), "Thm 1.4(i)", flags.0);
            }
        }
        None => flags.add(FLAG_NO_BETA),
    }
    if flags.cmp(e_tilde, 1.0, FLAG_TILDE_EDGE) == Some(Ordering::Less) {
        return Verdict::speed(SpeedSign::Positive, tilde_speed(report), "Thm 1.4(iii)", flags.0);
    }
    flags.add(FLAG_GAP);
    Verdict::undecided(flags.0)
}

/// Full verdict: transience and speed together. A definite nonzero speed
/// settles the direction when the transience criteria alone do not.
pub fn classify(report: &MomentReport) -> Verdict {
    let t = classify_transience(report);
    let mut v = classify_speed(report);
    v.transience = t.transience;
    v.transience_clause = t.transience_clause;
    for f in t.boundary_flags {
        if !v.boundary_flags.contains(&f) {
            v.boundary_flags.push(f);
        }
    }
    if v.transience == Transience::Indeterminate {
        match v.speed_sign {
            SpeedSign::Positive => {
                v.transience = Transience::Right;
                v.transience_clause = v.clause.clone();
            }
            SpeedSign::Negative => {
                v.transience = Transience::Left;
                v.transience_clause = v.clause.clone();
            }
            _ => {}
        }
    }
    v
}

/// Outcome of replacing infinite cookie stacks by sites with `p = 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TildeReduction {
    /// `E[ρ̃] = E[ρ] P[M < ∞]`.
    pub e_rho_tilde: f64,
    pub p_infinite: f64,
    /// Atoms `(p̃, weight)` of the reduced law, when the original is atomic.
    pub reduced_p_atoms: Option<Vec<(f64, f64)>>,
    pub speed: f64,
}

/// The reduced cookie-free walk for a cookie law on `{0, ∞}`.
pub fn tilde_reduction(spec: &EnvironmentSpec, report: &MomentReport) -> Result<TildeReduction> {
    let atoms = spec.m_law.atoms();
    let supported = match &atoms {
        Some(a) => a.iter().all(|(m, w)| *w == 0.0 || matches!(m, Cookies::Finite(0) | Cookies::Infinite)),
        None => false,
    };
    if !supported {
        return Err(Error::UnsupportedMLaw("cookie law must live on {0, inf}".into()));
    }
    let p_inf = spec.m_law.p_infinite();
    let e = report.e_rho.value.as_f64() * (1.0 - p_inf);
    let reduced_p_atoms = spec.p_law.atoms().map(|a| {
        let mut v: Vec<(f64, f64)> = a.into_iter().map(|(p, w)| (p, w * (1.0 - p_inf))).collect();
        if p_inf > 0.0 {
            v.push((1.0, p_inf));
        }
        v
    });
    let speed = if p_inf > 0.0 {
        if e < 1.0 {
            (1.0 - e) / (1.0 + e)
        } else {
            0.0
        }
    } else {
        solomon_speed(e, report.e_rho_inv.value.as_f64())
    };
    Ok(TildeReduction { e_rho_tilde: e, p_infinite: p_inf, reduced_p_atoms, speed })
}

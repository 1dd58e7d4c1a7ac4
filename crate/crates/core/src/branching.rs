//! Branching processes in random environment with migration.
//!
//! Offspring are geometric: `P[ξ = k] = (1-p)^k p`. The summand `ξ_i` of
//! generation `k` is a pure function of `(key, k, i)`: the first 1024 are
//! explicit keyed inverse-CDF draws, the rest hang off a keyed dyadic tree
//! whose root total is Negative-Binomial (Gamma–Poisson) and whose splits are
//! Beta-Binomial. Every prefix sum `Σ_{i≤n} ξ_i` is therefore one consistent
//! sequence, which is what the Z/W coupling needs.

use rand::RngCore;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::env_model::{Cookies, Environment, EnvironmentSpec, MLaw, SiteSource};
use crate::error::{Error, Result};
use crate::parallel::{map_replicas, Execution};
use crate::rng::{domain, hash2, hash3, hash_words, replica_seed, unit_open, KeyedStream};
use crate::stats;

/// Summation switches from explicit draws to the Gamma–Poisson mixture above this.
pub const EXPLICIT_LIMIT: u64 = 1024;
/// Default and maximal population cap.
pub const DEFAULT_CAP: u64 = 1_000_000_000_000;
const TREE_LEVELS: u32 = 40;

/// One geometric draw from a uniform in (0, 1), given `ln(1 - p)`.
#[inline]
fn geometric(u: f64, ln_q: f64) -> u64 {
    let v = (u.ln() / ln_q).floor();
    if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v as u64
    }
}

/// `Σ_{i=1}^n ξ_i` by explicit summation of inverse-CDF geometrics.
pub fn offspring_sum_explicit<R: RngCore>(n: u64, p: f64, rng: &mut R) -> u64 {
    let ln_q = (1.0 - p).ln();
    (0..n).map(|_| geometric(unit_open(rng.next_u64()), ln_q)).fold(0u64, u64::saturating_add)
}

/// `Σ_{i=1}^n ξ_i` via `Poisson(Λ)`, `Λ ~ Gamma(n, (1-p)/p)`.
pub fn offspring_sum_gamma_poisson<R: RngCore>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 {
        return 0;
    }
    let lambda = Gamma::new(n as f64, (1.0 - p) / p).expect("positive shape").sample(rng);
    poisson(lambda, rng)
}

fn poisson<R: RngCore>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        0
    } else if lambda > 1e18 {
        // relative spread below 1e-9; the cap is far below this anyway
        lambda.min(u64::MAX as f64 / 2.0) as u64
    } else {
        let x: f64 = Poisson::new(lambda).expect("finite rate").sample(rng);
        x as u64
    }
}

/// A draw of `Σ_{i=1}^n ξ_i`: explicit for `n ≤ 1024`, Gamma–Poisson above.
pub fn offspring_sum<R: RngCore>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n <= EXPLICIT_LIMIT {
        offspring_sum_explicit(n, p, rng)
    } else {
        offspring_sum_gamma_poisson(n, p, rng)
    }
}

/// The keyed summands of one generation.
#[derive(Clone, Copy, Debug)]
pub struct Summands {
    key: u64,
    generation: u64,
    p: f64,
    ln_q: f64,
}

impl Summands {
    pub fn new(key: u64, generation: u64, p: f64) -> Self {
        Self { key, generation, p, ln_q: (1.0 - p).ln() }
    }

    /// `ξ_i` for `1 ≤ i ≤ 1024`.
    #[inline]
    pub fn explicit(&self, i: u64) -> u64 {
        geometric(unit_open(hash3(self.key, self.generation, i)), self.ln_q)
    }

    /// `Σ_{i=1}^n ξ_i`.
    pub fn prefix(&self, n: u64) -> u64 {
        let head = (1..=n.min(EXPLICIT_LIMIT)).map(|i| self.explicit(i)).fold(0u64, u64::saturating_add);
        if n <= EXPLICIT_LIMIT {
            head
        } else {
            head.saturating_add(self.tree_prefix(n - EXPLICIT_LIMIT))
        }
    }

    fn node_stream(&self, level: u32, index: u64) -> KeyedStream {
        KeyedStream::new(hash_words(&[self.key, domain::OFFSPRING_BLOCK, self.generation, level as u64, index]))
    }

    /// Sum of the first `m` tree leaves (`m ≤ 2^40`).
    fn tree_prefix(&self, m: u64) -> u64 {
        let m = m.min(1 << TREE_LEVELS);
        let mut total = offspring_sum_gamma_poisson(1 << TREE_LEVELS, self.p, &mut self.node_stream(TREE_LEVELS, 0));
        let (mut level, mut index, mut lo) = (TREE_LEVELS, 0u64, 0u64);
        let mut acc = 0u64;
        loop {
            let size = 1u64 << level;
            if m >= lo + size {
                return acc.saturating_add(total);
            }
            if m <= lo || total == 0 || level == 0 {
                return acc;
            }
            let half = size / 2;
            let left = beta_binomial(total, half as f64, half as f64, &mut self.node_stream(level, index));
            level -= 1;
            if m >= lo + half {
                acc = acc.saturating_add(left);
                total -= left;
                index = 2 * index + 1;
                lo += half;
            } else {
                total = left;
                index *= 2;
            }
        }
    }
}

fn beta_binomial<R: RngCore>(n: u64, a: f64, b: f64, rng: &mut R) -> u64 {
    // Beta(a, b) as a ratio of Gammas keeps huge shapes stable
    let x = Gamma::new(a, 1.0).expect("shape").sample(rng);
    let y = Gamma::new(b, 1.0).expect("shape").sample(rng);
    let frac = x / (x + y);
    Binomial::new(n, frac.clamp(0.0, 1.0)).expect("valid binomial").sample(rng)
}

// ---------------------------------------------------------------------------
// trajectories

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Z,
    W,
    X,
    #[serde(rename = "X_tilde")]
    XTilde,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Z => "Z",
            Kind::W => "W",
            Kind::X => "X",
            Kind::XTilde => "X_tilde",
        }
    }
}

/// Generation sizes, starting with generation 0.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Sizes {
    Counts(Vec<u64>),
    Reals(Vec<f64>),
}

impl Sizes {
    pub fn len(&self) -> usize {
        match self {
            Sizes::Counts(v) => v.len(),
            Sizes::Reals(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, n: usize) -> f64 {
        match self {
            Sizes::Counts(v) => v.get(n).map_or(0.0, |&x| x as f64),
            Sizes::Reals(v) => v.get(n).copied().unwrap_or(0.0),
        }
    }

    pub fn counts(&self) -> &[u64] {
        match self {
            Sizes::Counts(v) => v,
            Sizes::Reals(_) => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchingTrajectory {
    pub kind: Kind,
    /// Sizes for generations `0..len`; generations past the end are 0 when
    /// `extinction` is set.
    pub sizes: Sizes,
    /// First `n ≥ 1` with size 0, if reached within the horizon.
    pub extinction: Option<u64>,
    /// Sum of all recorded sizes (`Σ_{j≥0}`).
    pub total_progeny: f64,
    pub saturated: bool,
    pub seed: u64,
    pub horizon: u64,
}

impl BranchingTrajectory {
    pub fn censored(&self) -> bool {
        self.extinction.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchingOptions {
    pub horizon: u64,
    pub cap: u64,
    /// Z only: emigration at generation `k` reads `M_{k+1}`.
    pub shifted: bool,
}

impl Default for BranchingOptions {
    fn default() -> Self {
        Self { horizon: 1000, cap: DEFAULT_CAP, shifted: false }
    }
}

impl BranchingOptions {
    fn cap(&self) -> u64 {
        self.cap.clamp(1, DEFAULT_CAP)
    }
}

fn finish(kind: Kind, counts: Vec<u64>, extinction: Option<u64>, saturated: bool, seed: u64, horizon: u64) -> BranchingTrajectory {
    let total = counts.iter().map(|&x| x as f64).sum();
    BranchingTrajectory { kind, sizes: Sizes::Counts(counts), extinction, total_progeny: total, saturated, seed, horizon }
}

/// `Z_0 = 1`, `Z_n = (Σ_{i ≤ Z_{n-1}} ξ_i^{(n)} - M_n)₊` on sites `n = 1, 2, …`
/// (`M_{n+1}` when `shifted`).
pub fn run_z<S: SiteSource>(sites: &S, key: u64, opts: &BranchingOptions) -> BranchingTrajectory {
    let cap = opts.cap();
    let mut sizes = vec![1u64];
    let mut z = 1u64;
    let mut extinction = None;
    let mut saturated = false;
    for n in 1..=opts.horizon {
        let site = sites.site(n as i64);
        let m = if opts.shifted { sites.site(n as i64 + 1).m } else { site.m };
        z = m.subtract_from(Summands::new(key, n, site.p).prefix(z));
        sizes.push(z.min(cap));
        if z == 0 {
            extinction = Some(n);
            break;
        }
        if z > cap {
            saturated = true;
            break;
        }
    }
    finish(Kind::Z, sizes, extinction, saturated, key, opts.horizon)
}

/// `W_0 = 0`, `W_k = Σ_{i ≤ (W_{k-1} + 1 - M_k)₊} ξ_i^{(k)}` until the first
/// zero.
pub fn run_w<S: SiteSource>(sites: &S, key: u64, opts: &BranchingOptions) -> BranchingTrajectory {
    let cap = opts.cap();
    let mut sizes = vec![0u64];
    let mut w = 0u64;
    let mut extinction = None;
    let mut saturated = false;
    for k in 1..=opts.horizon {
        let site = sites.site(k as i64);
        let upper = site.m.subtract_from(w + 1);
        w = Summands::new(key, k, site.p).prefix(upper);
        sizes.push(w.min(cap));
        if w == 0 {
            extinction = Some(k);
            break;
        }
        if w > cap {
            saturated = true;
            break;
        }
    }
    finish(Kind::W, sizes, extinction, saturated, key, opts.horizon)
}

/// `X_0 = 1`, `X_n = (ρ_n X_{n-1} - M_n)₊`, together with `Y_n = Σ_{i ≤ n} log ρ_i`.
pub fn run_x<S: SiteSource>(sites: &S, horizon: u64) -> (BranchingTrajectory, Vec<f64>) {
    let mut xs = vec![1.0f64];
    let mut ys = vec![0.0f64];
    let (mut x, mut y) = (1.0f64, 0.0f64);
    let mut extinction = None;
    for n in 1..=horizon {
        let site = sites.site(n as i64);
        y += site.rho.ln();
        x = (site.rho * x - site.m.as_f64()).max(0.0);
        xs.push(x);
        ys.push(y);
        if x == 0.0 && extinction.is_none() {
            extinction = Some(n);
        }
    }
    let total = xs.iter().sum();
    let t = BranchingTrajectory {
        kind: Kind::X,
        sizes: Sizes::Reals(xs),
        extinction,
        total_progeny: total,
        saturated: false,
        seed: 0,
        horizon,
    };
    (t, ys)
}

/// `X̃_0 = 1`, `X̃_n = a X̃_{n-1}` while `M_n < a X̃_{n-1}`, else 0 for good.
/// `M_n` is drawn from `m_law` keyed by `(seed, n)`.
pub fn run_x_tilde(a: f64, m_law: &MLaw, seed: u64, horizon: u64) -> Result<BranchingTrajectory> {
    if !(a > 1.0 && a.is_finite()) {
        return Err(Error::OutOfDomain(format!("growth factor a = {a} must exceed 1")));
    }
    let mut xs = vec![1.0f64];
    let mut x = 1.0f64;
    let mut extinction = None;
    for n in 1..=horizon {
        let m = m_law.sample(seed, n as i64);
        x = if m.as_f64() < a * x { a * x } else { 0.0 };
        xs.push(x);
        if x == 0.0 {
            extinction = Some(n);
            break;
        }
    }
    let total = xs.iter().sum();
    Ok(BranchingTrajectory {
        kind: Kind::XTilde,
        sizes: Sizes::Reals(xs),
        extinction,
        total_progeny: total,
        saturated: false,
        seed,
        horizon,
    })
}

/// `Π_{k=1}^m P[M < a^k]`.
pub fn x_tilde_survival(m_law: &MLaw, a: f64, m: u32) -> f64 {
    (1..=m).map(|k| m_law.prob_less_than(a.powi(k as i32))).product()
}

// ---------------------------------------------------------------------------
// coupling

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingReport {
    pub z: BranchingTrajectory,
    pub w: BranchingTrajectory,
    /// Generations `k ≤ T_0^W` checked.
    pub checked: u64,
    /// Failures of `(W_k - M_{k+1} + 1)₊ ≥ Z_k`.
    pub dominance_violations: u64,
    /// Failures of `Z_k ≤ W_k` for `1 ≤ k ≤ T_0^W`.
    pub order_violations: u64,
    /// `T_0^Z > T_0^W`.
    pub extinction_violation: bool,
}

impl CouplingReport {
    pub fn violations(&self) -> u64 {
        self.dominance_violations + self.order_violations + self.extinction_violation as u64
    }
}

/// Run the shifted Z and W on one environment with shared summands and check
/// the comparison generation by generation. Requires `M_1 = 0`.
pub fn coupled_run_zw<S: SiteSource>(sites: &S, key: u64, horizon: u64, cap: u64) -> Result<CouplingReport> {
    let m1 = sites.site(1).m;
    if !m1.is_zero() {
        return Err(Error::CouplingPreconditionFailed(m1.to_string()));
    }
    let opts = BranchingOptions { horizon, cap, shifted: true };
    let z = run_z(sites, key, &opts);
    let w = run_w(sites, key, &BranchingOptions { shifted: false, ..opts });
    let zc = z.sizes.counts();
    let wc = w.sizes.counts();
    let z_at = |k: usize| zc.get(k).copied().unwrap_or(0);
    // compare only where both trajectories are exact (no saturation clipping)
    let last_exact = |t: &BranchingTrajectory| if t.saturated { t.sizes.len() - 2 } else { usize::MAX };
    let limit = (wc.len() - 1).min(last_exact(&z)).min(last_exact(&w));
    let (mut dom, mut ord, mut checked) = (0u64, 0u64, 0u64);
    for k in 0..=limit {
        if k >= zc.len() && z.extinction.is_none() {
            break;
        }
        let (zk, wk) = (z_at(k), wc[k]);
        let lhs = sites.site(k as i64 + 1).m.subtract_from(wk + 1);
        if lhs < zk {
            dom += 1;
        }
        if k >= 1 && zk > wk {
            ord += 1;
        }
        checked += 1;
    }
    let extinction_violation = match (z.extinction, w.extinction) {
        (Some(tz), Some(tw)) => tz > tw,
        (None, Some(_)) => !z.saturated,
        _ => false,
    };
    Ok(CouplingReport { z, w, checked, dominance_violations: dom, order_violations: ord, extinction_violation })
}

/// The environment with master seed derived from `seed`, re-drawn until
/// `M_1 = 0`. Returns the environment and the number of re-draws.
pub fn conditioned_environment(spec: Arc<EnvironmentSpec>, seed: u64) -> (Environment, u64) {
    let mut s = seed;
    for attempt in 0.. {
        let env = Environment::new(spec.clone(), s);
        if env.site(1).m == Cookies::Finite(0) {
            return (env, attempt);
        }
        s = hash3(seed, domain::RETRY, attempt + 1);
    }
    unreachable!()
}

// ---------------------------------------------------------------------------
// tail diagnostic

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailReport {
    pub kind: Kind,
    pub replicas: u64,
    pub horizon: u64,
    pub cap: u64,
    /// `(replicas used, running mean)` over non-saturated runs.
    pub running_mean: Vec<(u64, f64)>,
    /// Running means at a quarter, half and all of the runs.
    pub checkpoints: [f64; 3],
    pub mean_stable: bool,
    pub median: f64,
    pub hill: Option<stats::HillEstimate>,
    pub saturated: u64,
    pub saturated_fraction: f64,
    pub censored: u64,
    pub infinite_mean_consistent: bool,
}

/// Total-progeny diagnostic for Z (`Σ_{j≥0} Z_j`) or W (`Σ_k W_k`).
pub fn progeny_tail_diagnostic(
    spec: &EnvironmentSpec,
    kind: Kind,
    master_seed: u64,
    replicas: u64,
    opts: &BranchingOptions,
    exec: Execution,
) -> Result<TailReport> {
    if !matches!(kind, Kind::Z | Kind::W) {
        return Err(Error::OutOfDomain("the progeny diagnostic covers Z and W".into()));
    }
    if replicas < 8 {
        return Err(Error::OutOfDomain("the progeny diagnostic needs at least 8 replicas".into()));
    }
    let spec = Arc::new(spec.clone());
    let runs = map_replicas(replicas, exec, |r| {
        let env = Environment::new(spec.clone(), replica_seed(master_seed, domain::ENV, r));
        let key = replica_seed(master_seed, domain::BRANCH, r);
        let t = match kind {
            Kind::Z => run_z(&env, key, opts),
            _ => run_w(&env, key, opts),
        };
        (t.total_progeny, t.saturated, t.censored())
    });
    Ok(summarize_tail(kind, &runs, opts))
}

pub(crate) fn summarize_tail(kind: Kind, runs: &[(f64, bool, bool)], opts: &BranchingOptions) -> TailReport {
    let n = runs.len() as u64;
    let mut running_mean = Vec::new();
    let (mut sum, mut used) = (0.0, 0u64);
    let mut means_at = vec![f64::NAN; runs.len()];
    for (i, &(total, saturated, _)) in runs.iter().enumerate() {
        if !saturated {
            sum += total;
            used += 1;
        }
        means_at[i] = if used > 0 { sum / used as f64 } else { f64::NAN };
        if (i + 1).is_power_of_two() || i + 1 == runs.len() {
            running_mean.push((i as u64 + 1, means_at[i]));
        }
    }
    let at = |frac: usize| means_at[(runs.len() * frac / 4).max(1) - 1];
    let checkpoints = [at(1), at(2), at(4)];
    let reference = checkpoints[2];
    let mean_stable = checkpoints.iter().all(|m| m.is_finite() && (m - reference).abs() <= 0.1 * reference.abs());
    let totals: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let hill = stats::hill(&totals, 0.05);
    let saturated = runs.iter().filter(|r| r.1).count() as u64;
    let censored = runs.iter().filter(|r| r.2 && !r.1).count() as u64;
    let frac = saturated as f64 / n as f64;
    let heavy = hill.is_some_and(|h| h.alpha <= 1.0 + h.std_error);
    // three or more saturated runs put P[total = ∞] > 0 well within reach
    let escapes = saturated >= 3;
    TailReport {
        kind,
        replicas: n,
        horizon: opts.horizon,
        cap: opts.cap(),
        running_mean,
        checkpoints,
        mean_stable,
        median: stats::median(&totals),
        hill,
        saturated,
        saturated_fraction: frac,
        censored,
        infinite_mean_consistent: (!mean_stable && heavy) || escapes,
    }
}

/// Seed for replica `r`'s branching randomness.
pub fn branch_key(master_seed: u64, r: u64) -> u64 {
    replica_seed(master_seed, domain::BRANCH, r)
}

/// Seed for the `r`-th X̃ cookie sequence.
pub fn x_tilde_seed(master_seed: u64, r: u64) -> u64 {
    hash2(replica_seed(master_seed, domain::COOKIE_DRAW, r), 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{Checks, CookieAtom, FnSites, PLaw, SiteEnvironment};
    use proptest::prelude::*;

    fn spec(p: PLaw, m: MLaw) -> Arc<EnvironmentSpec> {
        Arc::new(EnvironmentSpec::new(p, m).unwrap())
    }

    fn constant_sites(p: f64, m: Cookies) -> FnSites<impl Fn(i64) -> SiteEnvironment + Sync> {
        FnSites(move |_| SiteEnvironment::new(p, m))
    }

    #[test]
    fn offspring_sum_basics() {
        let mut s = KeyedStream::new(1);
        assert_eq!(offspring_sum(0, 0.3, &mut s), 0);
        let n = 100_000;
        let mean = (0..n).map(|_| offspring_sum(1, 0.5, &mut s) as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn large_n_sampler_matches_explicit_summation() {
        let mut s = KeyedStream::new(2);
        let a: Vec<f64> = (0..10_000).map(|_| offspring_sum_explicit(2000, 0.5, &mut s) as f64).collect();
        let b: Vec<f64> = (0..10_000).map(|_| offspring_sum_gamma_poisson(2000, 0.5, &mut s) as f64).collect();
        let ks = stats::ks_two_sample(&a, &b);
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn keyed_prefix_sums_are_consistent_and_have_the_right_law() {
        let s = Summands::new(9, 3, 0.4);
        let mut last = 0;
        for n in [0u64, 1, 10, 1024, 1025, 1500, 4096, 1 << 20, 123_456_789] {
            let v = s.prefix(n);
            assert!(v >= last, "prefix sums must be monotone");
            assert_eq!(v, s.prefix(n), "deterministic");
            last = v;
        }
        // mean and variance of a Negative-Binomial(n, p) prefix across keys
        let n = 50_000u64;
        let p = 0.4;
        let rho = (1.0 - p) / p;
        let xs: Vec<f64> = (0..4000).map(|k| Summands::new(k, 1, p).prefix(n) as f64).collect();
        let m = stats::mean(&xs);
        let v = stats::variance(&xs);
        let (em, ev) = (n as f64 * rho, n as f64 * rho / p);
        assert!((m - em).abs() < 4.0 * (ev / 4000.0).sqrt(), "{m} vs {em}");
        assert!((v / ev - 1.0).abs() < 0.1, "{v} vs {ev}");
        // increments over a tree range have the law of an independent sum
        let inc: Vec<f64> = (0..4000)
            .map(|k| {
                let s = Summands::new(k, 2, p);
                (s.prefix(3000) - s.prefix(2000)) as f64
            })
            .collect();
        let mut st = KeyedStream::new(77);
        let direct: Vec<f64> = (0..4000).map(|_| offspring_sum_explicit(1000, p, &mut st) as f64).collect();
        assert!(stats::ks_two_sample(&inc, &direct).p_value > 0.01);
    }

    #[test]
    fn infinite_cookies_kill_z_at_once() {
        let s = constant_sites(0.3, Cookies::Infinite);
        let t = run_z(&s, 1, &BranchingOptions::default());
        assert_eq!(t.extinction, Some(1));
        assert_eq!(t.sizes.counts(), &[1, 0]);
    }

    #[test]
    fn w_dies_at_once_when_the_first_site_has_cookies() {
        let s = constant_sites(0.3, Cookies::Finite(1));
        let t = run_w(&s, 1, &BranchingOptions::default());
        assert_eq!(t.extinction, Some(1));
        assert_eq!(t.total_progeny, 0.0);
    }

    #[test]
    fn critical_gw_extinction_by_generation_fifty() {
        let s = constant_sites(0.5, Cookies::Finite(0));
        let n = 4000;
        let opts = BranchingOptions { horizon: 50, ..Default::default() };
        let dead = (0..n).filter(|&k| run_z(&s, k, &opts).extinction.is_some()).count();
        let f = dead as f64 / n as f64;
        assert!((0.95..=1.0).contains(&f), "{f}");
        assert!((f - 50.0 / 51.0).abs() < 3.0 * stats::binomial_se(50.0 / 51.0, n as usize));
    }

    #[test]
    fn first_w_generation_mean() {
        let s = constant_sites(0.8, Cookies::Finite(0));
        let n = 100_000u64;
        let opts = BranchingOptions { horizon: 1, ..Default::default() };
        let m = (0..n).map(|k| run_w(&s, k, &opts).sizes.get(1)).sum::<f64>() / n as f64;
        assert!((m - 0.25).abs() < 0.01, "{m}");
    }

    #[test]
    fn x_is_exp_y_without_cookies_and_dominated_otherwise() {
        let e = Environment::new(spec(PLaw::TwoPoint { p_a: 0.3, p_b: 0.7, weight_a: 0.5 }, MLaw::Constant { m: 0 }), 4);
        let (t, ys) = run_x(&e, 200);
        for (n, y) in ys.iter().enumerate() {
            assert!((t.sizes.get(n) - y.exp()).abs() <= 1e-9 * y.exp());
        }
        let e = Environment::new(spec(PLaw::TwoPoint { p_a: 0.2, p_b: 0.7, weight_a: 0.6 }, MLaw::Geometric { q: 0.7 }), 4);
        let (t, ys) = run_x(&e, 500);
        for (n, y) in ys.iter().enumerate() {
            assert!(t.sizes.get(n) <= y.exp() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn x_stays_at_zero_once_there() {
        let s = FnSites(|x| SiteEnvironment::new(0.25, if x == 2 { Cookies::Finite(100) } else { Cookies::Finite(0) }));
        let (t, _) = run_x(&s, 10);
        assert_eq!(t.extinction, Some(2));
        assert!((3..=10).all(|n| t.sizes.get(n) == 0.0));
    }

    #[test]
    fn x_tilde_without_cookies_grows_geometrically() {
        let t = run_x_tilde(2.0, &MLaw::Constant { m: 0 }, 1, 10).unwrap();
        assert_eq!(t.sizes.get(10), 1024.0);
        assert!(t.extinction.is_none());
        assert!(run_x_tilde(1.0, &MLaw::Constant { m: 0 }, 1, 10).is_err());
    }

    #[test]
    fn x_tilde_survival_matches_the_product() {
        let q = 0.3;
        let law = MLaw::TwoPointWithInfinity { zero: 1.0 - q, infinity: q, atoms: vec![] };
        assert!((x_tilde_survival(&law, 2.0, 5) - (1.0 - q).powi(5)).abs() < 1e-15);
        let n = 20_000u64;
        let alive = (0..n).filter(|&s| run_x_tilde(2.0, &law, x_tilde_seed(5, s), 5).unwrap().sizes.get(5) > 0.0).count();
        let f = alive as f64 / n as f64;
        let p = (1.0 - q).powi(5);
        assert!((f - p).abs() < 3.0 * stats::binomial_se(p, n as usize), "{f} vs {p}");
        // E[Σ X̃_j] ≥ a^m Π P[M < a^k]
        let law = MLaw::TwoPointWithInfinity {
            zero: 0.6,
            infinity: 0.05,
            atoms: vec![CookieAtom { m: Cookies::Finite(5), w: 0.35 }],
        };
        let m = 6;
        let mean = (0..n).map(|s| run_x_tilde(2.0, &law, x_tilde_seed(6, s), m).unwrap().total_progeny).sum::<f64>() / n as f64;
        assert!(mean >= 2f64.powi(m as i32) * x_tilde_survival(&law, 2.0, m as u32));
    }

    #[test]
    fn coupling_requires_an_empty_first_site() {
        let s = constant_sites(0.3, Cookies::Finite(2));
        assert!(matches!(coupled_run_zw(&s, 1, 10, DEFAULT_CAP), Err(Error::CouplingPreconditionFailed(_))));
    }

    #[test]
    fn coupled_runs_never_violate_the_comparison() {
        let sp = spec(PLaw::TwoPoint { p_a: 0.25, p_b: 0.8, weight_a: 0.5 }, MLaw::Geometric { q: 0.5 });
        let mut checked = 0;
        for r in 0..2000 {
            let (env, _) = conditioned_environment(sp.clone(), replica_seed(3, domain::ENV, r));
            let c = coupled_run_zw(&env, branch_key(3, r), 200, DEFAULT_CAP).unwrap();
            assert_eq!(c.violations(), 0, "{c:?}");
            checked += c.checked;
        }
        assert!(checked > 2000);
    }

    #[test]
    fn without_cookies_z_sits_below_w() {
        let s = constant_sites(0.45, Cookies::Finite(0));
        let (mut sz, mut sw) = (0.0, 0.0);
        for k in 0..3000 {
            let c = coupled_run_zw(&s, k, 3, DEFAULT_CAP).unwrap();
            assert_eq!(c.violations(), 0);
            sz += c.z.sizes.get(2);
            sw += c.w.sizes.get(2);
        }
        assert!(sz < sw);
    }

    #[test]
    fn subcritical_progeny_has_mean_three() {
        let sp = EnvironmentSpec::new(PLaw::Constant { p: 0.6 }, MLaw::Constant { m: 0 }).unwrap();
        let r = progeny_tail_diagnostic(&sp, Kind::Z, 1, 20_000, &BranchingOptions::default(), Execution::Auto).unwrap();
        assert!(r.mean_stable, "{r:?}");
        assert!((r.checkpoints[2] - 3.0).abs() < 0.15, "{:?}", r.checkpoints);
        assert!(!r.infinite_mean_consistent);
    }

    #[test]
    fn supercritical_z_is_flagged() {
        // E[log ρ] > 0 and E[ρ] P[M < ∞] > 1
        let sp = EnvironmentSpec::new(PLaw::Constant { p: 0.3 }, MLaw::Geometric { q: 0.5 }).unwrap();
        let r = progeny_tail_diagnostic(&sp, Kind::Z, 2, 2000, &BranchingOptions::default(), Execution::Auto).unwrap();
        assert!(r.infinite_mean_consistent, "{r:?}");
    }

    #[test]
    fn conditional_mean_in_the_untruncated_regime() {
        // E[Z_n | Z_{n-1} = z] = z ρ - M when z ρ ≫ M
        let s = constant_sites(0.5, Cookies::Finite(3));
        let z = 400u64;
        let n = 5000u64;
        let xs: Vec<f64> = (0..n).map(|k| Cookies::Finite(3).subtract_from(Summands::new(k, 1, 0.5).prefix(z)) as f64).collect();
        let se = stats::std_error(&xs);
        assert!((stats::mean(&xs) - (z as f64 - 3.0)).abs() < 4.0 * se);
        let _ = s;
    }

    #[test]
    fn critical_walk_spec_needs_structural_checks_only() {
        assert!(EnvironmentSpec::new(PLaw::Constant { p: 0.5 }, MLaw::Constant { m: 0 }).is_err());
        assert!(EnvironmentSpec::with_checks(PLaw::Constant { p: 0.5 }, MLaw::Constant { m: 0 }, Checks::Structural).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn zero_is_absorbing(seed in any::<u64>(), p in 0.2f64..0.8, q in 0.2f64..0.9) {
            let e = Environment::new(spec(PLaw::Constant { p }, MLaw::Geometric { q }), seed);
            for t in [run_z(&e, seed, &BranchingOptions::default()), run_w(&e, seed, &BranchingOptions::default())] {
                let c = t.sizes.counts();
                if let Some(t0) = t.extinction {
                    prop_assert_eq!(c.len() as u64, t0 + 1);
                    prop_assert_eq!(c[t0 as usize], 0);
                    prop_assert!(c[1..t0 as usize].iter().all(|&x| x > 0));
                }
            }
        }

        #[test]
        fn coupling_holds_for_random_laws(seed in any::<u64>(), p in 0.15f64..0.85, q in 0.1f64..0.9) {
            prop_assume!((p - 0.5).abs() > 1e-3);
            let sp = spec(PLaw::TwoPoint { p_a: p, p_b: 0.5 + (p - 0.5) / 2.0, weight_a: 0.5 }, MLaw::Geometric { q });
            let (env, _) = conditioned_environment(sp, seed);
            let c = coupled_run_zw(&env, seed, 100, 1_000_000).unwrap();
            prop_assert_eq!(c.violations(), 0);
        }
    }
}

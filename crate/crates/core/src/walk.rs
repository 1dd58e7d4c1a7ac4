//! The quenched excited walk, its regeneration structure and first-passage
//! estimators.
//!
//! The `i`-th arrival at site `x` steps right if `i ≤ M_x`, otherwise it
//! steps right iff `U(x, i) < p_x` where `U(x, i)` is a keyed uniform. The
//! same `(x, i)` therefore reads the same uniform under any environment,
//! which is the coupling used by the monotonicity tests.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::env_model::{Cookies, CookiesUpTo, Environment, EnvironmentSpec, SiteSource};
use crate::error::{Error, Result};
use crate::moments::moment_report;
use crate::parallel::{map_replicas, Execution};
use crate::rng::{domain, hash3, replica_seed, unit_open};
use crate::stats;

/// A vector indexed by all integers in a growing window.
#[derive(Clone, Debug)]
struct TwoSided<T> {
    lo: i64,
    data: Vec<T>,
}

impl<T> TwoSided<T> {
    fn new() -> Self {
        Self { lo: 0, data: Vec::new() }
    }

    #[inline]
    fn get(&self, x: i64) -> Option<&T> {
        let i = x.checked_sub(self.lo)?;
        if i < 0 {
            return None;
        }
        self.data.get(i as usize)
    }

    #[inline]
    fn ensure(&mut self, x: i64, mut fill: impl FnMut(i64) -> T) -> &mut T {
        let len = self.data.len() as i64;
        if len == 0 {
            self.lo = x - 32;
            self.data = (self.lo..self.lo + 64).map(&mut fill).collect();
        } else if x < self.lo {
            let new_lo = x.min(self.lo - len);
            let mut v: Vec<T> = (new_lo..self.lo).map(&mut fill).collect();
            v.append(&mut self.data);
            self.data = v;
            self.lo = new_lo;
        } else if x >= self.lo + len {
            let new_hi = (x + 1).max(self.lo + 2 * len);
            let start = self.lo + len;
            self.data.extend((start..new_hi).map(&mut fill));
        }
        &mut self.data[(x - self.lo) as usize]
    }
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    p: f64,
    m: Cookies,
    visits: u64,
}

/// A walker on a fixed environment. Sites are read once and cached in a
/// dense table over the visited range.
pub struct Walker<'s, S: SiteSource> {
    sites: &'s S,
    table: TwoSided<Cell>,
    key: u64,
    position: i64,
    time: u64,
    max: i64,
    min: i64,
}

impl<'s, S: SiteSource> Walker<'s, S> {
    pub fn new(sites: &'s S, walk_key: u64) -> Self {
        Self { sites, table: TwoSided::new(), key: walk_key, position: 0, time: 0, max: 0, min: 0 }
    }

    /// One step; returns the new position.
    #[inline]
    pub fn step(&mut self) -> i64 {
        let x = self.position;
        let key = self.key;
        let sites = self.sites;
        let cell = self.table.ensure(x, |y| {
            let s = sites.site(y);
            Cell { p: s.p, m: s.m, visits: 0 }
        });
        cell.visits += 1;
        let v = cell.visits;
        let up = cell.m.covers_visit(v) || unit_open(hash3(key, x as u64, v)) < cell.p;
        self.position = if up { x + 1 } else { x - 1 };
        self.time += 1;
        self.max = self.max.max(self.position);
        self.min = self.min.min(self.position);
        self.position
    }

    pub fn position(&self) -> i64 {
        self.position
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn running_max(&self) -> i64 {
        self.max
    }

    pub fn running_min(&self) -> i64 {
        self.min
    }

    /// Number of arrivals at `x` that have already stepped away.
    pub fn visits(&self, x: i64) -> u64 {
        self.table.get(x).map_or(0, |c| c.visits)
    }
}

// ---------------------------------------------------------------------------
// paths

/// A ±1 path packed one bit per step (1 = up), starting at 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepPath {
    words: Vec<u64>,
    len: u64,
}

const PATH_MAGIC: &[u8; 8] = b"ERWPATH1";

impl StepPath {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, up: bool) {
        let bit = (self.len % 64) as u32;
        if bit == 0 {
            self.words.push(0);
        }
        if up {
            *self.words.last_mut().unwrap() |= 1 << bit;
        }
        self.len += 1;
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_up(&self, i: u64) -> bool {
        (self.words[(i / 64) as usize] >> (i % 64)) & 1 == 1
    }

    /// Positions `S_0 = 0, S_1, …, S_len`.
    pub fn positions(&self) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.len as usize + 1);
        let mut s = 0i64;
        out.push(s);
        for i in 0..self.len {
            s += if self.is_up(i) { 1 } else { -1 };
            out.push(s);
        }
        out
    }

    /// Build from a position sequence starting at 0 with ±1 increments.
    pub fn from_positions(pos: &[i64]) -> Result<Self> {
        if pos.first() != Some(&0) {
            return Err(Error::MalformedConfig("a path must start at 0".into()));
        }
        let mut p = Self::new();
        for w in pos.windows(2) {
            match w[1] - w[0] {
                1 => p.push(true),
                -1 => p.push(false),
                d => return Err(Error::MalformedConfig(format!("path increment {d} is not ±1"))),
            }
        }
        Ok(p)
    }

    /// `ERWPATH1`, step count as u64 LE, then the bits LSB-first.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(PATH_MAGIC)?;
        w.write_all(&self.len.to_le_bytes())?;
        let nbytes = self.len.div_ceil(8) as usize;
        let bytes: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).take(nbytes).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PATH_MAGIC {
            return Err(Error::MalformedConfig("not a path dump (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        let mut bytes = vec![0u8; len.div_ceil(8) as usize];
        r.read_exact(&mut bytes)?;
        let words = bytes
            .chunks(8)
            .map(|c| {
                let mut b = [0u8; 8];
                b[..c.len()].copy_from_slice(c);
                u64::from_le_bytes(b)
            })
            .collect();
        Ok(Self { words, len })
    }
}

// ---------------------------------------------------------------------------
// regenerations

/// A time `τ` with `S_m < S_τ` for `m < τ` and `S_k ≥ S_τ` for all later
/// simulated `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegenerationRecord {
    pub tau: u64,
    pub level: i64,
    pub confirmed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Regenerations {
    pub records: Vec<RegenerationRecord>,
    /// Candidates that survived to the horizon but sit within the safety
    /// margin of the final position.
    pub discarded: usize,
}

/// Regenerations of a recorded path. A surviving candidate is confirmed when
/// the final position exceeds its level by more than `safety_margin`.
pub fn detect_regenerations(path: &StepPath, safety_margin: i64) -> Result<Regenerations> {
    let pos = path.positions();
    let n = pos.len();
    let mut suffix_min = vec![0i64; n];
    let mut m = i64::MAX;
    for i in (0..n).rev() {
        m = m.min(pos[i]);
        suffix_min[i] = m;
    }
    let last = pos[n - 1];
    let mut records = Vec::new();
    let mut discarded = 0;
    let mut max = i64::MIN;
    for (t, &s) in pos.iter().enumerate() {
        if s > max {
            max = s;
            if suffix_min[t] >= s {
                if last > s + safety_margin {
                    records.push(RegenerationRecord { tau: t as u64, level: s, confirmed: true });
                } else {
                    discarded += 1;
                }
            }
        }
    }
    if records.len() < 2 {
        return Err(Error::NotTransientEnough { found: records.len() });
    }
    Ok(Regenerations { records, discarded })
}

/// `D_0, …, D_{K-1}` for consecutive confirmed regenerations `tau_a < tau_b`,
/// with `K = S_{τ_b} - S_{τ_a}`; `D_k` counts steps from `S_{τ_b} - k` to
/// `S_{τ_b} - k - 1` strictly inside the gap.
pub fn downcrossings(path: &StepPath, regenerations: &[RegenerationRecord], tau_a: u64, tau_b: u64) -> Result<Vec<u64>> {
    let ia = regenerations.iter().position(|r| r.tau == tau_a && r.confirmed);
    let ib = regenerations.iter().position(|r| r.tau == tau_b && r.confirmed);
    let (ia, ib) = match (ia, ib) {
        (Some(a), Some(b)) if b == a + 1 => (a, b),
        _ => {
            return Err(Error::InvalidGap(format!(
                "times {tau_a} and {tau_b} are not consecutive confirmed regenerations"
            )))
        }
    };
    let (la, lb) = (regenerations[ia].level, regenerations[ib].level);
    let mut d = vec![0u64; (lb - la) as usize];
    let mut s: i64 = (0..tau_a).map(|i| if path.is_up(i) { 1 } else { -1 }).sum();
    for n in tau_a..tau_b {
        let next = s + if path.is_up(n) { 1 } else { -1 };
        if n > tau_a && next < s {
            let k = lb - s;
            if k >= 0 && (k as usize) < d.len() {
                d[k as usize] += 1;
            }
        }
        s = next;
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// full runs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkOptions {
    pub n_steps: u64,
    pub record_path: bool,
    pub track_regenerations: bool,
    pub safety_margin: i64,
    /// How many kept gaps keep their full downcrossing vector.
    pub harvest_gaps: usize,
}

impl Default for WalkOptions {
    fn default() -> Self {
        Self { n_steps: 1_000_000, record_path: false, track_regenerations: true, safety_margin: 200, harvest_gaps: 0 }
    }
}

/// Summary of one walk.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct WalkRecord {
    pub n_steps: u64,
    pub final_position: i64,
    pub speed: f64,
    pub running_max: i64,
    pub running_min: i64,
    pub safety_margin: i64,
    pub regenerations: Vec<RegenerationRecord>,
    pub discarded_candidates: usize,
    /// `τ_{k+1} - τ_k` over kept gaps (the first confirmed gap is dropped).
    pub gap_tau: Vec<u64>,
    /// `S_{τ_{k+1}} - S_{τ_k}` over kept gaps.
    pub gap_s: Vec<u64>,
    /// `D_1` of every kept gap.
    pub d1: Vec<u64>,
    pub downcrossing_vectors: Vec<Vec<u64>>,
    pub identity_checked: usize,
    pub identity_violations: usize,
    #[serde(skip)]
    pub path: Option<StepPath>,
}

impl WalkRecord {
    pub fn n_gaps(&self) -> usize {
        self.gap_tau.len()
    }

    pub fn mean_tau_gap(&self) -> Option<f64> {
        let n = self.gap_tau.len();
        (n > 0).then(|| self.gap_tau.iter().sum::<u64>() as f64 / n as f64)
    }

    pub fn mean_s_gap(&self) -> Option<f64> {
        let n = self.gap_s.len();
        (n > 0).then(|| self.gap_s.iter().sum::<u64>() as f64 / n as f64)
    }

    /// `Σ S-gaps / Σ τ-gaps` over kept gaps.
    pub fn ratio_speed(&self) -> Option<f64> {
        let t: u64 = self.gap_tau.iter().sum();
        (t > 0).then(|| self.gap_s.iter().sum::<u64>() as f64 / t as f64)
    }
}

/// Run `opts.n_steps` steps from 0 and summarize.
pub fn run_walk<S: SiteSource>(sites: &S, walk_key: u64, opts: &WalkOptions) -> WalkRecord {
    let mut w = Walker::new(sites, walk_key);
    let mut path = opts.record_path.then(StepPath::new);
    let mut down: TwoSided<u64> = TwoSided::new();
    let mut stack: Vec<(u64, i64)> = vec![(0, 0)];
    let track = opts.track_regenerations;
    for _ in 0..opts.n_steps {
        let y = w.position();
        let max_before = w.running_max();
        let next = w.step();
        if let Some(p) = path.as_mut() {
            p.push(next > y);
        }
        if track {
            if next < y {
                *down.ensure(y, |_| 0) += 1;
                while stack.last().is_some_and(|&(_, l)| l > next) {
                    stack.pop();
                }
            } else if next > max_before {
                stack.push((w.time(), next));
            }
        }
    }
    let final_position = w.position();
    let mut rec = WalkRecord {
        n_steps: opts.n_steps,
        final_position,
        speed: final_position as f64 / opts.n_steps.max(1) as f64,
        running_max: w.running_max(),
        running_min: w.running_min(),
        safety_margin: opts.safety_margin,
        path,
        ..Default::default()
    };
    if !track {
        return rec;
    }
    let confirmed = stack.partition_point(|&(_, l)| final_position > l + opts.safety_margin);
    rec.discarded_candidates = stack.len() - confirmed;
    stack.truncate(confirmed);
    let dc = |y: i64| down.get(y).copied().unwrap_or(0);
    for (i, pair) in stack.windows(2).enumerate() {
        let ((ta, la), (tb, lb)) = (pair[0], pair[1]);
        let sum_d: u64 = (la + 1..lb).map(dc).sum();
        rec.identity_checked += 1;
        if tb - ta != (lb - la) as u64 + 2 * sum_d {
            rec.identity_violations += 1;
        }
        if i == 0 {
            continue;
        }
        rec.gap_tau.push(tb - ta);
        rec.gap_s.push((lb - la) as u64);
        rec.d1.push(if lb - 1 > la { dc(lb - 1) } else { 0 });
        if rec.downcrossing_vectors.len() < opts.harvest_gaps {
            let mut d = vec![0u64; (lb - la) as usize];
            for (k, slot) in d.iter_mut().enumerate().skip(1) {
                *slot = dc(lb - k as i64);
            }
            rec.downcrossing_vectors.push(d);
        }
    }
    rec.regenerations =
        stack.into_iter().map(|(tau, level)| RegenerationRecord { tau, level, confirmed: true }).collect();
    rec
}

// ---------------------------------------------------------------------------
// first passage

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "time", rename_all = "snake_case")]
pub enum Hitting {
    Hit(u64),
    /// Not hit within the horizon; the true time exceeds it.
    Censored(u64),
}

impl Hitting {
    pub fn time(self) -> Option<u64> {
        match self {
            Hitting::Hit(t) => Some(t),
            Hitting::Censored(_) => None,
        }
    }

    /// `min(T, horizon)`, the censored lower bound.
    pub fn truncated(self) -> u64 {
        match self {
            Hitting::Hit(t) | Hitting::Censored(t) => t,
        }
    }
}

/// `T_target = inf{n ≥ 0 : S_n = target}`, censored at `horizon` steps.
pub fn hitting_time<S: SiteSource>(sites: &S, walk_key: u64, target: i64, horizon: u64) -> Hitting {
    if target == 0 {
        return Hitting::Hit(0);
    }
    let mut w = Walker::new(sites, walk_key);
    while w.time() < horizon {
        if w.step() == target {
            return Hitting::Hit(w.time());
        }
    }
    Hitting::Censored(horizon)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeftTerm {
    pub j: u64,
    /// `P[T_{-1} ≥ j]` with cookies only on `x ≤ 0`.
    pub tail_prob: f64,
    pub half_width: f64,
    /// `Σ_{i ≤ j} P[T_{-1} ≥ i] = E[min(T_{-1}, j)]`.
    pub partial_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeftSpeedReport {
    pub horizon: u64,
    pub replicas: u64,
    pub censored: usize,
    pub terms: Vec<LeftTerm>,
    /// Partial sum at the horizon; estimates `-1/ν`.
    pub estimate: f64,
    pub estimate_half_width: f64,
    /// `-1 / estimate`.
    pub speed: f64,
    /// Least-squares slope of the partial sums against `ln j` over the last decade.
    pub decade_slope: f64,
    pub decade_increase: f64,
    /// The last decade added less than 1% (or two standard errors).
    pub plateau: bool,
}

/// Estimate `Σ_{j≥1} P[T_{-j-1} - T_{-j} ≥ j] = Σ_j P_{≤0}[T_{-1} ≥ j]`, the
/// reciprocal of `-ν` for a left-transient walk, from `replicas` annealed
/// runs with cookies kept only on sites `≤ 0`.
pub fn left_speed_reciprocal(
    spec: &EnvironmentSpec,
    master_seed: u64,
    replicas: u64,
    horizon: u64,
    exec: Execution,
) -> Result<LeftSpeedReport> {
    let report = moment_report(spec, None);
    let l = report.e_log_rho.value.as_f64();
    if !(l > 0.0 && report.e_log_m_plus.value.is_finite()) {
        return Err(Error::RegimeMismatch(format!(
            "left speed needs E[log rho] > 0 and E[(log M)+] < inf, got E[log rho] = {l}, E[(log M)+] = {}",
            report.e_log_m_plus.value
        )));
    }
    if replicas < 2 || horizon < 1 {
        return Err(Error::OutOfDomain("left speed needs at least 2 replicas and horizon >= 1".into()));
    }
    let spec = std::sync::Arc::new(spec.clone());
    let times = map_replicas(replicas, exec, |r| {
        let env = Environment::new(spec.clone(), replica_seed(master_seed, domain::ENV, r));
        let sites = CookiesUpTo { inner: &env, edge: 0 };
        hitting_time(&sites, replica_seed(master_seed, domain::WALK, r), -1, horizon)
    });
    Ok(summarize_left_times(&times, horizon))
}

fn summarize_left_times(times: &[Hitting], horizon: u64) -> LeftSpeedReport {
    let n = times.len();
    let censored = times.iter().filter(|t| matches!(t, Hitting::Censored(_))).count();
    // T ≥ j for all j ≤ horizon when censored
    let mut t: Vec<u64> = times.iter().map(|h| h.time().unwrap_or(u64::MAX)).collect();
    t.sort_unstable();
    let partial = |j: u64| t.iter().map(|&x| x.min(j)).sum::<u64>() as f64 / n as f64;
    let tail = |j: u64| t.len() - t.partition_point(|&x| x < j);

    let mut grid: Vec<u64> = Vec::new();
    let mut d = 1u64;
    while d <= horizon {
        for m in [1, 2, 5] {
            if m * d <= horizon {
                grid.push(m * d);
            }
        }
        d = d.saturating_mul(10);
    }
    if grid.last() != Some(&horizon) {
        grid.push(horizon);
    }
    let terms = grid
        .iter()
        .map(|&j| {
            let p = tail(j) as f64 / n as f64;
            LeftTerm { j, tail_prob: p, half_width: 1.96 * stats::binomial_se(p, n), partial_sum: partial(j) }
        })
        .collect();

    let truncated: Vec<f64> = t.iter().map(|&x| x.min(horizon) as f64).collect();
    let ci = stats::t_interval(&truncated, 0.95);
    let estimate = ci.estimate;

    let lo = (horizon / 10).max(1);
    let pts: Vec<(f64, f64)> = (0..=10)
        .map(|i| {
            let j = ((lo as f64) * (horizon as f64 / lo as f64).powf(i as f64 / 10.0)).round() as u64;
            ((j.max(1) as f64).ln(), partial(j.max(1)))
        })
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let increase = partial(horizon) - partial(lo);
    let se = stats::std_error(&truncated);

    LeftSpeedReport {
        horizon,
        replicas: n as u64,
        censored,
        terms,
        estimate,
        estimate_half_width: ci.half_width,
        speed: -1.0 / estimate,
        decade_slope: slope,
        decade_increase: increase,
        plateau: increase <= (0.01 * estimate).max(2.0 * se),
    }
}

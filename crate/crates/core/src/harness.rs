//! Experiment orchestration: a JSON config names a spec, a mode and a replica
//! budget; [`run_experiment`] fans the replicas out, aggregates them with
//! t-intervals over replicas, and checks the outcome against the classifier.
//!
//! ```json
//! { "spec": { "p_law": { "kind": "constant", "params": { "p": 0.8 } },
//!             "m_law": { "kind": "constant", "params": { "m": 0 } } },
//!   "mode": "walk", "replicas": 32, "horizon": 1000000, "seed": 42,
//!   "outputs": { "csv": "rows.csv", "json": "report.json" } }
//! ```

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::branching::{self, BranchingOptions, Kind};
use crate::classifier::{self, SpeedSign, Verdict};
use crate::env_model::{Checks, Environment, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::moments::moment_report;
use crate::parallel::{map_replicas, Execution};
use crate::rng::{domain, replica_seed};
use crate::stats::{self, HillEstimate, Interval};
use crate::walk::{self, WalkOptions};

/// A zero-speed verdict is matched by a pooled `|S_n/n|` below this.
pub const ZERO_SPEED_TOL: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Walk,
    Regeneration,
    #[serde(alias = "branching-Z")]
    BranchingZ,
    #[serde(alias = "branching-W")]
    BranchingW,
    #[serde(alias = "coupled-ZW")]
    CoupledZw,
    XTilde,
    Hitting,
    LeftSpeed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckLevel {
    #[default]
    Full,
    Structural,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    /// `x,y,lo,hi` rows for a sweep.
    pub plot: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeParams {
    pub safety_margin: i64,
    pub cap: u64,
    pub shifted: bool,
    /// Growth factor of X̃.
    pub a: f64,
    /// Generations at which X̃ survival is reported.
    pub generations: Vec<u32>,
    /// Target level for `hitting`.
    pub target: i64,
}

impl Default for ModeParams {
    fn default() -> Self {
        Self { safety_margin: 200, cap: branching::DEFAULT_CAP, shifted: false, a: 2.0, generations: vec![5, 10], target: -1 }
    }
}

/// Re-run the experiment with one spec parameter replaced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    /// Dotted path into the spec JSON, e.g. `p_law.params.p`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: EnvironmentSpec,
    #[serde(default)]
    pub checks: CheckLevel,
    pub mode: Mode,
    #[serde(default = "one")]
    pub replicas: u64,
    #[serde(alias = "n_steps")]
    pub horizon: u64,
    #[serde(default, alias = "master_seed")]
    pub seed: u64,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub params: ModeParams,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

fn one() -> u64 {
    1
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
    pub horizon: Option<u64>,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::MalformedConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path, o: Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut c: Self = serde_json::from_str(&text).map_err(|e| Error::MalformedConfig(e.to_string()))?;
        c.seed = o.seed.unwrap_or(c.seed);
        c.replicas = o.replicas.unwrap_or(c.replicas);
        c.horizon = o.horizon.unwrap_or(c.horizon);
        c.threads = o.threads.or(c.threads);
        c.validate()?;
        Ok(c)
    }

    fn check_level(&self) -> Checks {
        match self.checks {
            CheckLevel::Full => Checks::Full,
            CheckLevel::Structural => Checks::Structural,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate(self.check_level())?;
        if self.replicas < 1 {
            return Err(Error::MalformedConfig("replicas must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::MalformedConfig("horizon must be at least 1".into()));
        }
        if self.mode == Mode::XTilde {
            if let Some(&m) = self.params.generations.iter().find(|&&m| m as u64 > self.horizon) {
                return Err(Error::MalformedConfig(format!("generation {m} lies beyond the horizon {}", self.horizon)));
            }
        }
        for path in [&self.outputs.csv, &self.outputs.json, &self.outputs.plot].into_iter().flatten() {
            if path.is_dir() {
                return Err(Error::MalformedConfig(format!("output {} is a directory", path.display())));
            }
        }
        Ok(())
    }

    pub fn execution(&self) -> Execution {
        match self.threads {
            Some(n) => Execution::Parallel(Some(n)),
            None => Execution::Auto,
        }
    }
}

// ---------------------------------------------------------------------------
// rows and aggregates

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub index: u64,
    pub values: Vec<Option<f64>>,
    pub error: Option<String>,
}

/// Per-replica rows in index order.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub index_name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    fn new(index_name: &str, columns: &[&str]) -> Self {
        Self { index_name: index_name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[i]).collect())
    }

    /// Present values of a column.
    pub fn values(&self, name: &str) -> Vec<f64> {
        self.column(name).unwrap_or_default().into_iter().flatten().collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![self.index_name.clone()];
        header.extend(self.columns.iter().cloned());
        header.push("error".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.index.to_string()];
            rec.extend(r.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv()?)
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    /// 95% t-interval half-width over replicas.
    pub half_width: f64,
    pub lo: f64,
    pub hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hill: Option<HillEstimate>,
}

impl Aggregate {
    pub fn of(name: &str, xs: &[f64]) -> Self {
        let ci = stats::t_interval(xs, 0.95);
        Self { name: name.into(), n: xs.len(), mean: ci.estimate, half_width: ci.half_width, lo: ci.lo, hi: ci.hi, median: None, hill: None }
    }

    fn heavy(name: &str, xs: &[f64]) -> Self {
        Self { median: Some(stats::median(xs)), hill: stats::hill(xs, 0.05), ..Self::of(name, xs) }
    }

    pub fn interval(&self) -> Interval {
        Interval { estimate: self.mean, half_width: self.half_width, lo: self.lo, hi: self.hi, n: self.n }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Agreement {
    Consistent,
    Inconsistent,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub x: f64,
    pub aggregate: Option<Aggregate>,
    pub agreement: Agreement,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub replicas: u64,
    pub horizon: u64,
    pub seed: u64,
    pub spec: EnvironmentSpec,
    pub verdict: Verdict,
    pub moments: serde_json::Value,
    pub aggregates: Vec<Aggregate>,
    /// Mode-specific detail (tail report, survival table, left-speed terms).
    pub detail: serde_json::Value,
    pub agreement: Agreement,
    pub agreement_detail: String,
    pub replica_errors: usize,
    pub elapsed_seconds: f64,
    pub throughput: f64,
    pub throughput_unit: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
    #[serde(skip)]
    pub table: Table,
}

impl ExperimentReport {
    pub fn aggregate(&self, name: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

// ---------------------------------------------------------------------------
// running

struct Outcome {
    table: Table,
    aggregates: Vec<Aggregate>,
    detail: serde_json::Value,
    agreement: (Agreement, String),
    work: f64,
    unit: &'static str,
}

/// Run an experiment and write any configured outputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = run_once(config)?;
    if let Some(sweep) = &config.sweep {
        let points = run_sweep(config, sweep);
        if let Some(path) = &config.outputs.plot {
            let mut text = String::from("x,y,lo,hi\n");
            for p in &points {
                match &p.aggregate {
                    Some(a) => writeln!(text, "{},{},{},{}", p.x, a.mean, a.lo, a.hi).unwrap(),
                    None => writeln!(text, "{},,,", p.x).unwrap(),
                }
            }
            write_file(path, &text)?;
        }
        report.sweep = Some(points);
    }
    if let Some(path) = &config.outputs.csv {
        report.table.write_csv(path)?;
    }
    if let Some(path) = &config.outputs.json {
        write_file(path, &report.to_json())?;
    }
    Ok(report)
}

fn run_sweep(config: &ExperimentConfig, sweep: &Sweep) -> Vec<SweepPoint> {
    sweep
        .values
        .iter()
        .map(|&x| {
            let point = || -> Result<ExperimentReport> {
                let mut spec = serde_json::to_value(&config.spec)?;
                let mut slot = &mut spec;
                for key in sweep.parameter.split('.') {
                    slot = slot
                        .get_mut(key)
                        .ok_or_else(|| Error::MalformedConfig(format!("sweep parameter {} not found", sweep.parameter)))?;
                }
                *slot = serde_json::json!(x);
                let mut c = config.clone();
                c.spec = serde_json::from_value(spec).map_err(|e| Error::MalformedConfig(e.to_string()))?;
                c.sweep = None;
                c.validate()?;
                run_once(&c)
            };
            match point() {
                Ok(r) => SweepPoint { x, aggregate: r.aggregates.first().cloned(), agreement: r.agreement, error: None },
                Err(e) => SweepPoint { x, aggregate: None, agreement: Agreement::Indeterminate, error: Some(error_cell(&e)) },
            }
        })
        .collect()
}

fn run_once(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let moments = moment_report(&config.spec, None);
    let verdict = classifier::classify(&moments);
    let spec = Arc::new(config.spec.clone());
    let out = match config.mode {
        Mode::Walk | Mode::Regeneration => walk_mode(config, &spec, &verdict),
        Mode::BranchingZ | Mode::BranchingW => branching_mode(config, &spec, &verdict),
        Mode::CoupledZw => coupled_mode(config, &spec),
        Mode::XTilde => x_tilde_mode(config)?,
        Mode::Hitting => hitting_mode(config, &spec),
        Mode::LeftSpeed => left_speed_mode(config, &verdict)?,
    };
    let elapsed = started.elapsed().as_secs_f64();
    let replica_errors = out.table.rows.iter().filter(|r| r.error.is_some()).count();
    Ok(ExperimentReport {
        mode: config.mode,
        replicas: config.replicas,
        horizon: config.horizon,
        seed: config.seed,
        spec: config.spec.clone(),
        verdict,
        moments: moments.to_json_value(),
        aggregates: out.aggregates,
        detail: out.detail,
        agreement: out.agreement.0,
        agreement_detail: out.agreement.1,
        replica_errors,
        elapsed_seconds: elapsed,
        throughput: out.work / elapsed.max(1e-9),
        throughput_unit: out.unit.into(),
        sweep: None,
        table: out.table,
    })
}

fn error_cell(e: &Error) -> String {
    format!("{}: {}", e.kind(), e)
}

fn env_for(config: &ExperimentConfig, spec: &Arc<EnvironmentSpec>, r: u64) -> Environment {
    Environment::new(spec.clone(), replica_seed(config.seed, domain::ENV, r))
}

fn opt(x: Option<u64>) -> Option<f64> {
    x.map(|v| v as f64)
}

/// Compare a pooled speed interval (99%) with the verdict.
pub fn speed_agreement(verdict: &Verdict, ci99: &Interval) -> (Agreement, String) {
    let est = ci99.estimate;
    let slack = ci99.half_width + ZERO_SPEED_TOL;
    let value_ok = verdict.speed_value.is_none_or(|v| (est - v).abs() <= slack);
    let floor_ok = verdict.speed_floor.is_none_or(|f| est >= f - slack);
    let (ok, what) = match verdict.speed_sign {
        SpeedSign::Indeterminate => {
            return (Agreement::Indeterminate, format!("verdict indeterminate ({})", verdict.boundary_flags.join(", ")))
        }
        SpeedSign::Positive => (ci99.lo > 0.0 && value_ok && floor_ok, "positive"),
        SpeedSign::Negative => (ci99.hi < 0.0 && value_ok, "negative"),
        SpeedSign::Zero => (est.abs() <= ZERO_SPEED_TOL, "zero"),
    };
    let detail = format!(
        "{} predicts {what} speed{}; pooled S_n/n = {est} (99% CI [{}, {}])",
        verdict.clause,
        verdict.speed_value.map(|v| format!(" {v}")).unwrap_or_default(),
        ci99.lo,
        ci99.hi
    );
    (if ok { Agreement::Consistent } else { Agreement::Inconsistent }, detail)
}

fn walk_mode(config: &ExperimentConfig, spec: &Arc<EnvironmentSpec>, verdict: &Verdict) -> Outcome {
    let regen = config.mode == Mode::Regeneration;
    let opts = WalkOptions {
        n_steps: config.horizon,
        track_regenerations: regen,
        safety_margin: config.params.safety_margin,
        ..Default::default()
    };
    let records = map_replicas(config.replicas, config.execution(), |r| {
        let env = env_for(config, spec, r);
        walk::run_walk(&env, replica_seed(config.seed, domain::WALK, r), &opts)
    });
    let mut table = if regen {
        Table::new(
            "replica",
            &[
                "final_position",
                "speed",
                "running_max",
                "running_min",
                "ratio_speed",
                "gaps",
                "mean_tau_gap",
                "mean_s_gap",
                "identity_checked",
                "identity_violations",
                "discarded_candidates",
            ],
        )
    } else {
        Table::new("replica", &["final_position", "speed", "running_max", "running_min"])
    };
    for (r, w) in records.iter().enumerate() {
        let mut values = vec![Some(w.final_position as f64), Some(w.speed), Some(w.running_max as f64), Some(w.running_min as f64)];
        let mut error = None;
        if regen {
            values.extend([
                w.ratio_speed(),
                Some(w.n_gaps() as f64),
                w.mean_tau_gap(),
                w.mean_s_gap(),
                Some(w.identity_checked as f64),
                Some(w.identity_violations as f64),
                Some(w.discarded_candidates as f64),
            ]);
            if w.n_gaps() == 0 {
                error = Some(error_cell(&Error::NotTransientEnough { found: w.regenerations.len() }));
            }
        }
        table.rows.push(Row { index: r as u64, values, error });
    }
    let speeds = table.values("speed");
    let mut aggregates = vec![Aggregate::of("speed", &speeds)];
    let mut detail = serde_json::json!({});
    if regen {
        let ratios = table.values("ratio_speed");
        if !ratios.is_empty() {
            aggregates.push(Aggregate::of("ratio_speed", &ratios));
        }
        aggregates.push(Aggregate::of("mean_tau_gap", &table.values("mean_tau_gap")));
        let checked: f64 = table.values("identity_checked").iter().sum();
        let violations: f64 = table.values("identity_violations").iter().sum();
        detail = serde_json::json!({ "identity_checked": checked, "identity_violations": violations });
    }
    let ci99 = stats::t_interval(&speeds, 0.99);
    let mut agreement = speed_agreement(verdict, &ci99);
    if regen && detail["identity_violations"].as_f64() != Some(0.0) {
        agreement = (Agreement::Inconsistent, format!("regeneration identity violated; {}", agreement.1));
    }
    Outcome {
        table,
        aggregates,
        detail,
        agreement,
        work: (config.replicas * config.horizon) as f64,
        unit: "steps/s",
    }
}

fn branching_mode(config: &ExperimentConfig, spec: &Arc<EnvironmentSpec>, verdict: &Verdict) -> Outcome {
    let kind = if config.mode == Mode::BranchingZ { Kind::Z } else { Kind::W };
    let opts = BranchingOptions { horizon: config.horizon, cap: config.params.cap, shifted: config.params.shifted };
    let runs = map_replicas(config.replicas, config.execution(), |r| {
        let env = env_for(config, spec, r);
        let key = branching::branch_key(config.seed, r);
        match kind {
            Kind::Z => branching::run_z(&env, key, &opts),
            _ => branching::run_w(&env, key, &opts),
        }
    });
    let mut table = Table::new("replica", &["gen1", "extinction", "censored", "saturated", "total_progeny", "generations"]);
    for (r, t) in runs.iter().enumerate() {
        table.rows.push(Row {
            index: r as u64,
            values: vec![
                Some(t.sizes.get(1)),
                opt(t.extinction),
                Some(t.censored() as u8 as f64),
                Some(t.saturated as u8 as f64),
                Some(t.total_progeny),
                Some((t.sizes.len() - 1) as f64),
            ],
            error: None,
        });
    }
    let summary: Vec<(f64, bool, bool)> = runs.iter().map(|t| (t.total_progeny, t.saturated, t.censored())).collect();
    let tail = (runs.len() >= 8).then(|| branching::summarize_tail(kind, &summary, &opts));
    let extinct: Vec<f64> = runs.iter().map(|t| t.extinction.is_some() as u8 as f64).collect();
    let kept: Vec<f64> = runs.iter().filter(|t| !t.saturated).map(|t| t.total_progeny).collect();
    let aggregates = vec![Aggregate::of("extinct_by_horizon", &extinct), Aggregate::heavy("total_progeny", &kept)];
    // the walk's speed is positive exactly when E[Σ W] < ∞
    let agreement = match (kind, &tail, verdict.speed_sign) {
        (Kind::W, Some(t), SpeedSign::Positive | SpeedSign::Zero) => {
            let want_infinite = verdict.speed_sign == SpeedSign::Zero;
            let ok = t.infinite_mean_consistent == want_infinite;
            (
                if ok { Agreement::Consistent } else { Agreement::Inconsistent },
                format!(
                    "{} predicts {} mean total W progeny; diagnostic says infinite-mean-consistent = {}",
                    verdict.clause,
                    if want_infinite { "infinite" } else { "finite" },
                    t.infinite_mean_consistent
                ),
            )
        }
        _ => (Agreement::Indeterminate, "no verdict-based prediction for this process".into()),
    };
    Outcome {
        table,
        aggregates,
        detail: serde_json::json!({ "tail": tail }),
        agreement,
        work: config.replicas as f64,
        unit: "runs/s",
    }
}

fn coupled_mode(config: &ExperimentConfig, spec: &Arc<EnvironmentSpec>) -> Outcome {
    let results = map_replicas(config.replicas, config.execution(), |r| {
        let (env, redraws) = branching::conditioned_environment(spec.clone(), replica_seed(config.seed, domain::ENV, r));
        (redraws, branching::coupled_run_zw(&env, branching::branch_key(config.seed, r), config.horizon, config.params.cap))
    });
    let mut table = Table::new(
        "replica",
        &["env_redraws", "checked", "dominance_violations", "order_violations", "extinction_violation", "t0_z", "t0_w"],
    );
    let mut total = 0u64;
    for (r, (redraws, res)) in results.iter().enumerate() {
        let row = match res {
            Ok(c) => {
                total += c.violations();
                Row {
                    index: r as u64,
                    values: vec![
                        Some(*redraws as f64),
                        Some(c.checked as f64),
                        Some(c.dominance_violations as f64),
                        Some(c.order_violations as f64),
                        Some(c.extinction_violation as u8 as f64),
                        opt(c.z.extinction),
                        opt(c.w.extinction),
                    ],
                    error: None,
                }
            }
            Err(e) => Row { index: r as u64, values: vec![Some(*redraws as f64), None, None, None, None, None, None], error: Some(error_cell(e)) },
        };
        table.rows.push(row);
    }
    let checked = table.values("checked");
    let ok = total == 0 && checked.len() == table.rows.len();
    Outcome {
        aggregates: vec![Aggregate::of("checked", &checked)],
        detail: serde_json::json!({ "violations": total }),
        agreement: (
            if ok { Agreement::Consistent } else { Agreement::Inconsistent },
            format!("{total} violations of the Z/W comparison over {} runs", table.rows.len()),
        ),
        table,
        work: config.replicas as f64,
        unit: "runs/s",
    }
}

fn x_tilde_mode(config: &ExperimentConfig) -> Result<Outcome> {
    let a = config.params.a;
    let law = &config.spec.m_law;
    let runs = map_replicas(config.replicas, config.execution(), |r| {
        branching::run_x_tilde(a, law, branching::x_tilde_seed(config.seed, r), config.horizon)
    });
    let gens = &config.params.generations;
    let mut cols: Vec<String> = vec!["extinction".into(), "total_progeny".into()];
    cols.extend(gens.iter().map(|m| format!("alive_{m}")));
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut table = Table::new("replica", &col_refs);
    for (r, run) in runs.into_iter().enumerate() {
        let t = run?;
        let mut values = vec![opt(t.extinction), Some(t.total_progeny)];
        values.extend(gens.iter().map(|&m| Some((t.sizes.get(m as usize) > 0.0) as u8 as f64)));
        table.rows.push(Row { index: r as u64, values, error: None });
    }
    let n = table.rows.len();
    let mut aggregates = Vec::new();
    let mut survival = Vec::new();
    let mut ok = true;
    for &m in gens {
        let xs = table.values(&format!("alive_{m}"));
        let exact = branching::x_tilde_survival(law, a, m);
        let f = stats::mean(&xs);
        let se = stats::binomial_se(exact, n);
        let within = (f - exact).abs() <= 3.0 * se;
        ok &= within;
        survival.push(serde_json::json!({ "m": m, "empirical": f, "exact": exact, "binomial_se": se, "within_3se": within }));
        aggregates.push(Aggregate::of(&format!("alive_{m}"), &xs));
    }
    Ok(Outcome {
        table,
        aggregates,
        detail: serde_json::json!({ "a": a, "survival": survival }),
        agreement: (
            if ok { Agreement::Consistent } else { Agreement::Inconsistent },
            "empirical survival against the exact product over P[M < a^k]".into(),
        ),
        work: config.replicas as f64,
        unit: "runs/s",
    })
}

fn hitting_mode(config: &ExperimentConfig, spec: &Arc<EnvironmentSpec>) -> Outcome {
    let target = config.params.target;
    let hits = map_replicas(config.replicas, config.execution(), |r| {
        let env = env_for(config, spec, r);
        walk::hitting_time(&env, replica_seed(config.seed, domain::WALK, r), target, config.horizon)
    });
    let mut table = Table::new("replica", &["hit_time", "censored", "truncated_time"]);
    for (r, h) in hits.iter().enumerate() {
        table.rows.push(Row {
            index: r as u64,
            values: vec![opt(h.time()), Some(h.time().is_none() as u8 as f64), Some(h.truncated() as f64)],
            error: None,
        });
    }
    let aggregates = vec![
        Aggregate::heavy("truncated_time", &table.values("truncated_time")),
        Aggregate::of("censored", &table.values("censored")),
    ];
    Outcome {
        table,
        aggregates,
        detail: serde_json::json!({ "target": target }),
        agreement: (Agreement::Indeterminate, "no verdict-based prediction for hitting times".into()),
        work: config.replicas as f64,
        unit: "runs/s",
    }
}

fn left_speed_mode(config: &ExperimentConfig, verdict: &Verdict) -> Result<Outcome> {
    let rep = walk::left_speed_reciprocal(&config.spec, config.seed, config.replicas, config.horizon, config.execution())?;
    let mut table = Table::new("j", &["tail_prob", "half_width", "partial_sum"]);
    for t in &rep.terms {
        table.rows.push(Row { index: t.j, values: vec![Some(t.tail_prob), Some(t.half_width), Some(t.partial_sum)], error: None });
    }
    let agg = Aggregate {
        name: "reciprocal_speed".into(),
        n: rep.replicas as usize,
        mean: rep.estimate,
        half_width: rep.estimate_half_width,
        lo: rep.estimate - rep.estimate_half_width,
        hi: rep.estimate + rep.estimate_half_width,
        median: None,
        hill: None,
    };
    let agreement = match (verdict.clause.as_str(), verdict.speed_value) {
        ("Thm 1.3(i)", Some(v)) if rep.plateau => {
            let want = -1.0 / v;
            let ok = (rep.estimate - want).abs() <= (3.0 * rep.estimate_half_width).max(0.02 * want);
            (
                if ok { Agreement::Consistent } else { Agreement::Inconsistent },
                format!("predicted -1/speed = {want}, estimated {} ± {}", rep.estimate, rep.estimate_half_width),
            )
        }
        ("Thm 1.3(i)", _) => (Agreement::Indeterminate, "partial sums have not levelled off within the horizon".into()),
        _ => (
            if rep.plateau { Agreement::Indeterminate } else { Agreement::Consistent },
            format!("{}; partial sums plateau = {}", verdict.clause, rep.plateau),
        ),
    };
    Ok(Outcome {
        table,
        aggregates: vec![agg],
        detail: serde_json::to_value(&rep)?,
        agreement,
        work: config.replicas as f64,
        unit: "runs/s",
    })
}

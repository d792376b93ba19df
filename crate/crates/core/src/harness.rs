//! Experiment driver: seeded runs over instances or auctions, per-seed trace
//! files, summaries against the oracle baselines, bound certification and
//! growth-exponent fits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auctions::AuctionConfig;
use crate::environments::{Environment, InstanceSpec, Regime};
use crate::error::{Error, Result};
use crate::meta::{
    check_condition_2, estimate_rho, estimation_rounds, run_algorithm, AlgorithmSpec, BoundTerms,
    MetaConfig, Phase, RunTrace,
};
use crate::oracle::{solve_opt, solve_rho_adversarial, solve_rho_stochastic, OracleSolution};
use crate::policy::PrimalShape;
use crate::rm::FeedbackMode;

/// Number of binomial standard deviations granted to probabilistic claims.
pub const MC_SIGMAS: f64 = 3.0;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Independent streams for the environment and the learners of one seed.
pub fn seed_rngs(master_seed: u64, seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env = ChaCha8Rng::seed_from_u64(master_seed);
    env.set_stream(seed.wrapping_mul(2));
    let mut alg = ChaCha8Rng::seed_from_u64(master_seed);
    alg.set_stream(seed.wrapping_mul(2).wrapping_add(1));
    (env, alg)
}

/// Algorithm settings shared by every seed of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub algorithm: AlgorithmSpec,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub delta: f64,
    pub feedback: FeedbackMode,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::validation("T", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation("delta", "must lie in (0, 1)"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "empty"));
        }
        match self.algorithm {
            AlgorithmSpec::KnownRho { rho_hat } if !(0.0..=1.0).contains(&rho_hat) => {
                Err(Error::validation("algorithm.rho_hat", "must lie in [0, 1]"))
            }
            AlgorithmSpec::UnknownRho if self.horizon < 4 => {
                Err(Error::validation("T", "unknown_rho needs T >= 4"))
            }
            _ => Ok(()),
        }
    }
}

/// Run configuration file: an instance path (relative to the file) plus the
/// settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instance: PathBuf,
    pub algorithm: AlgorithmSpec,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub delta: f64,
    pub feedback: FeedbackMode,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: Self = read_json(path)?;
        if config.instance.is_relative() {
            if let Some(dir) = path.parent() {
                config.instance = dir.join(&config.instance);
            }
        }
        config.settings().validate()?;
        Ok(config)
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            algorithm: self.algorithm,
            horizon: self.horizon,
            delta: self.delta,
            feedback: self.feedback,
            seeds: self.seeds.clone(),
            master_seed: self.master_seed,
        }
    }

    pub fn load_instance(&self) -> Result<InstanceSpec> {
        InstanceSpec::load(&self.instance)
    }
}

/// Oracle baselines of an instance over a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub regime: Regime,
    pub opt: Option<OracleSolution>,
    pub rho: Option<OracleSolution>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// `OPT` of the averaged functions and the feasibility margin (averaged for
/// stochastic constraints, per round for scripted ones).
pub fn instance_baseline(spec: &InstanceSpec, horizon: usize) -> Result<Baseline> {
    let regime = spec.regime();
    let mut notes = Vec::new();
    let (opt, g_bar) = match spec.mean_functions(horizon) {
        Ok(means) => (Some(solve_opt(&means.f_bar, &means.g_bar)?), Some(means.g_bar)),
        Err(Error::Unsupported(msg)) => {
            notes.push(format!("baseline unavailable: {msg}"));
            (None, None)
        }
        Err(e) => return Err(e),
    };
    let rho = if regime.stochastic_constraints {
        g_bar.map(|g| solve_rho_stochastic(&g)).transpose()?
    } else {
        match spec.scripted_constraint_tables(horizon) {
            Ok(tables) => Some(solve_rho_adversarial(&tables)?),
            Err(Error::Unsupported(msg)) => {
                notes.push(format!("margin unavailable: {msg}"));
                None
            }
            Err(e) => return Err(e),
        }
    };
    Ok(Baseline {
        regime,
        opt,
        rho,
        notes,
    })
}

/// What certification needs to know about an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub delta: f64,
    pub m: usize,
    pub shape: PrimalShape,
    pub reward_width: f64,
    pub algorithm: AlgorithmSpec,
    pub regime: Regime,
    pub opt: Option<f64>,
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub reward: f64,
    /// `T OPT - sum f`.
    pub regret: Option<f64>,
    /// Regret over the rounds after margin estimation, against
    /// `(T - T0) OPT`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regret_after_estimation: Option<f64>,
    pub violation: f64,
    pub violation_vector: Vec<f64>,
    pub t1: usize,
    pub entered_recovery: bool,
    pub rho_hat: Option<f64>,
    pub rho_tilde: f64,
    /// Total auction spend, `sum g_budget + T rho_budget`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spend: Option<f64>,
}

impl SeedRecord {
    pub fn from_trace(seed: u64, trace: &RunTrace, opt: Option<f64>, rho_budget: Option<f64>) -> Self {
        let reward = trace.total_reward();
        let violation_vector = trace.violation_vector();
        let regret = opt.map(|o| trace.horizon as f64 * o - reward);
        let regret_after_estimation = match (opt, trace.t0) {
            (Some(o), Some(t0)) => {
                let later: f64 = trace.records[t0..].iter().map(|r| r.f).sum();
                Some((trace.horizon - t0) as f64 * o - later)
            }
            _ => None,
        };
        let spend = rho_budget.map(|rho| violation_vector[0] + trace.horizon as f64 * rho);
        Self {
            seed,
            reward,
            regret,
            regret_after_estimation,
            violation: trace.violation(),
            violation_vector,
            t1: trace.t1,
            entered_recovery: trace.entered_recovery(),
            rho_hat: trace.rho_hat,
            rho_tilde: trace.rho_tilde,
            spend,
        }
    }
}

/// Linear-interpolation quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            q05: quantile(&v, 0.05),
            q50: quantile(&v, 0.5),
            q95: quantile(&v, 0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub reward: Quantiles,
    pub violation: Quantiles,
    pub regret: Option<Quantiles>,
    pub recovery_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub context: RunContext,
    pub seeds: Vec<SeedRecord>,
    pub aggregates: Aggregates,
}

impl Summary {
    pub fn new(context: RunContext, seeds: Vec<SeedRecord>) -> Self {
        let col = |f: fn(&SeedRecord) -> f64| seeds.iter().map(f).collect::<Vec<_>>();
        let regrets: Vec<f64> = seeds.iter().filter_map(|s| s.regret).collect();
        let aggregates = Aggregates {
            reward: Quantiles::of(&col(|s| s.reward)).expect("nonempty seeds"),
            violation: Quantiles::of(&col(|s| s.violation)).expect("nonempty seeds"),
            regret: Quantiles::of(&regrets),
            recovery_fraction: seeds.iter().filter(|s| s.entered_recovery).count() as f64 / seeds.len() as f64,
        };
        Self {
            context,
            seeds,
            aggregates,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Trace CSV: `t,phase,x_index,f,g_1..g_m,lambda_1..lambda_m,cumV_max`.
pub fn write_trace<W: Write>(trace: &RunTrace, out: W) -> Result<()> {
    let m = trace.m;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "phase".into(), "x_index".into(), "f".into()];
    header.extend((1..=m).map(|i| format!("g_{i}")));
    header.extend((1..=m).map(|i| format!("lambda_{i}")));
    header.push("cumV_max".into());
    w.write_record(&header)?;
    let mut cum = vec![0.0; m];
    for r in &trace.records {
        for (c, g) in cum.iter_mut().zip(&r.g) {
            *c += g;
        }
        let vmax = cum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut row = vec![
            r.t.to_string(),
            r.phase.as_str().to_string(),
            r.x_index.to_string(),
            r.f.to_string(),
        ];
        row.extend(r.g.iter().map(f64::to_string));
        row.extend(r.lambda.iter().map(f64::to_string));
        row.push(vmax.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn trace_csv(trace: &RunTrace) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("utf-8 csv")
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed_{seed}.csv")
}

/// Totals recomputed from a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTotals {
    pub rounds: usize,
    pub reward: f64,
    pub violation_vector: Vec<f64>,
    pub t1: usize,
}

impl TraceTotals {
    pub fn violation(&self) -> f64 {
        self.violation_vector.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut r = csv::Reader::from_reader(file);
        let headers = r.headers()?.clone();
        let m = headers.iter().filter(|h| h.starts_with("g_")).count();
        let bad = |line: usize, what: &str| {
            Error::validation(format!("{}:{line}", path.display()), what.to_string())
        };
        let mut totals = Self {
            rounds: 0,
            reward: 0.0,
            violation_vector: vec![0.0; m],
            t1: 0,
        };
        let mut first_recovery = None;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let num = |col: usize| -> Result<f64> {
                rec.get(col)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(line, "unparsable number"))
            };
            totals.reward += num(3)?;
            for k in 0..m {
                totals.violation_vector[k] += num(4 + k)?;
            }
            if first_recovery.is_none() && rec.get(1) == Some(Phase::Recovery.as_str()) {
                first_recovery = Some(totals.rounds + 1);
            }
            totals.rounds += 1;
        }
        totals.t1 = first_recovery.map_or(totals.rounds, |t| t - 1);
        Ok(totals)
    }
}

fn run_seeds<F>(seeds: &[u64], parallel: Option<usize>, job: F) -> Result<Vec<SeedRecord>>
where
    F: Fn(u64) -> Result<SeedRecord> + Sync + Send,
{
    let work = || seeds.par_iter().map(|&s| job(s)).collect::<Result<Vec<_>>>();
    match parallel {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn finish_seed(
    seed: u64,
    trace: &RunTrace,
    out: Option<&Path>,
    opt: Option<f64>,
    rho_budget: Option<f64>,
) -> Result<SeedRecord> {
    if let Some(dir) = out {
        let path = dir.join(trace_file_name(seed));
        let file = File::create(&path).map_err(io_err(&path))?;
        write_trace(trace, BufWriter::new(file))?;
    }
    Ok(SeedRecord::from_trace(seed, trace, opt, rho_budget))
}

fn prepare_out(out: Option<&Path>) -> Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

/// Runs every seed on a finite instance. Traces (one CSV per seed) and
/// `summary.json` go to `out` when given.
pub fn run_experiment(
    spec: &InstanceSpec,
    settings: &RunSettings,
    out: Option<&Path>,
    parallel: Option<usize>,
) -> Result<Summary> {
    settings.validate()?;
    prepare_out(out)?;
    let baseline = instance_baseline(spec, settings.horizon)?;
    let opt = baseline.opt.as_ref().map(|o| o.value).filter(|v| v.is_finite());
    let mut notes = baseline.notes.clone();
    if baseline.opt.as_ref().is_some_and(|o| !o.is_feasible()) {
        notes.push("averaged problem infeasible; regret undefined".into());
    }
    let context = RunContext {
        horizon: settings.horizon,
        delta: settings.delta,
        m: spec.m(),
        shape: PrimalShape::single(spec.num_strategies(), settings.feedback),
        reward_width: 1.0,
        algorithm: settings.algorithm,
        regime: baseline.regime,
        opt,
        rho: baseline.rho.as_ref().map(|r| r.value),
        rho_budget: None,
        notes,
    };
    let records = run_seeds(&settings.seeds, parallel, |seed| {
        let trace = run_instance_seed(spec, settings, seed)?;
        finish_seed(seed, &trace, out, opt, None)
    })?;
    let summary = Summary::new(context, records);
    if let Some(dir) = out {
        summary.save(&dir.join("summary.json"))?;
    }
    Ok(summary)
}

/// Full trace of one seed on a finite instance.
pub fn run_instance_seed(spec: &InstanceSpec, settings: &RunSettings, seed: u64) -> Result<RunTrace> {
    let (env_rng, mut alg_rng) = seed_rngs(settings.master_seed, seed);
    let mut env = spec.environment(settings.horizon, env_rng);
    run_algorithm(
        settings.algorithm,
        settings.horizon,
        settings.delta,
        settings.feedback,
        &mut env,
        &mut alg_rng,
    )
}

/// Full trace of one seed of an auction.
pub fn run_auction_seed(config: &AuctionConfig, seed: u64) -> Result<RunTrace> {
    let (env_rng, mut alg_rng) = seed_rngs(config.master_seed, seed);
    let mut env = config.environment(config.horizon, env_rng)?;
    run_algorithm(
        config.algorithm(),
        config.horizon,
        config.delta,
        config.feedback,
        &mut env,
        &mut alg_rng,
    )
}

/// Runs every seed of an auction configuration.
pub fn run_auction(config: &AuctionConfig, out: Option<&Path>, parallel: Option<usize>) -> Result<Summary> {
    config.validate()?;
    prepare_out(out)?;
    let stochastic = config.beta_process.distribution().is_some() && config.v_process.distribution().is_some();
    let baseline = config.stochastic_baseline();
    let mut notes = Vec::new();
    if baseline.is_none() {
        notes.push("baseline unavailable: scripted value processes".into());
    }
    let opt = baseline.map(|b| b.opt);
    let env = config.environment(config.horizon, ChaCha8Rng::seed_from_u64(0))?;
    let context = RunContext {
        horizon: config.horizon,
        delta: config.delta,
        m: config.m(),
        shape: PrimalShape {
            contexts: env.num_contexts(),
            arms: env.num_strategies(),
            feedback: config.feedback,
        },
        reward_width: env.reward_range().1 - env.reward_range().0,
        algorithm: config.algorithm(),
        regime: Regime {
            stochastic_rewards: stochastic,
            stochastic_constraints: stochastic,
        },
        opt,
        rho: baseline.map(|b| b.rho),
        rho_budget: Some(config.budget_per_round),
        notes,
    };
    let records = run_seeds(&config.seeds, parallel, |seed| {
        let trace = run_auction_seed(config, seed)?;
        finish_seed(seed, &trace, out, opt, Some(config.budget_per_round))
    })?;
    let summary = Summary::new(context, records);
    if let Some(dir) = out {
        summary.save(&dir.join("summary.json"))?;
    }
    Ok(summary)
}

/// Margin estimate of each seed over the first `ceil(sqrt(T))` rounds.
pub fn estimate_rho_seeds(spec: &InstanceSpec, settings: &RunSettings) -> Result<Vec<(u64, f64)>> {
    settings.validate()?;
    let t0 = estimation_rounds(settings.horizon);
    settings
        .seeds
        .par_iter()
        .map(|&seed| {
            let (env_rng, mut alg_rng) = seed_rngs(settings.master_seed, seed);
            let mut env = spec.environment(settings.horizon, env_rng);
            let (rho_hat, _) = estimate_rho(&mut env, t0, settings.delta, settings.feedback, &mut alg_rng)?;
            Ok((seed, rho_hat))
        })
        .collect()
}

/// One probabilistic claim evaluated over the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub claim: String,
    /// Probability the guarantee is stated with.
    pub nominal_probability: f64,
    /// Nominal probability minus the Monte Carlo slack.
    pub required_fraction: f64,
    pub satisfied_fraction: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_rhs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation_rhs: Option<f64>,
}

impl BoundCheck {
    fn evaluate(
        name: &str,
        claim: String,
        nominal: f64,
        seeds: &[SeedRecord],
        reward_rhs: Option<f64>,
        violation_rhs: Option<f64>,
        ok: impl Fn(&SeedRecord) -> bool,
    ) -> Self {
        let n = seeds.len() as f64;
        let slack = MC_SIGMAS * (nominal * (1.0 - nominal) / n).sqrt();
        let required = nominal - slack;
        let satisfied = seeds.iter().filter(|s| ok(s)).count() as f64 / n;
        Self {
            name: name.into(),
            claim,
            nominal_probability: nominal,
            required_fraction: required,
            satisfied_fraction: satisfied,
            passed: satisfied >= required,
            reward_rhs,
            violation_rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub checks: Vec<BoundCheck>,
    pub notes: Vec<String>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Right-hand sides of the guarantees of the known-margin algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValues {
    pub rho_tilde: f64,
    pub terms: BoundTerms,
    pub threshold: f64,
    /// Regret bound when the margin condition holds.
    pub regret_margin: f64,
    pub violation_margin: f64,
    /// Bounds of the `rho~ = T^{-1/4}` regime.
    pub regret_no_margin: f64,
    pub violation_no_margin: f64,
}

impl BoundValues {
    pub fn new(context: &RunContext, rho_hat: f64) -> Result<Self> {
        let config = MetaConfig::new(context.horizon, context.delta, rho_hat, context.shape.feedback)?;
        let big_t = context.horizon;
        let rt = config.rho_tilde();
        let terms = BoundTerms::at(big_t, context.m, config.eta(), &context.shape, context.reward_width);
        let BoundTerms { err, primal, dual } = terms;
        let threshold = terms.threshold(rt, big_t)?;
        let q = (big_t as f64).powf(0.25);
        let threshold_low = terms.threshold(1.0 / q, big_t)?;
        Ok(Self {
            rho_tilde: rt,
            terms,
            threshold,
            regret_margin: err / rt + (1.0 + 2.0 / rt) * primal + dual / rt,
            violation_margin: threshold + 2.0 * primal + dual + err,
            regret_no_margin: q * err + (1.0 + 2.0 * q) * primal + q * dual,
            violation_no_margin: q * q * q + threshold_low + 2.0 * primal + dual + err,
        })
    }
}

/// Evaluates each guarantee that applies to the run's regime and reports
/// the fraction of seeds satisfying it.
pub fn certify_bounds(summary: &Summary) -> Result<CertificationReport> {
    let ctx = &summary.context;
    let seeds = &summary.seeds;
    let mut notes = ctx.notes.clone();
    let mut checks = Vec::new();
    if seeds.is_empty() {
        notes.push("no seeds".into());
        return Ok(CertificationReport { checks, notes });
    }
    let AlgorithmSpec::KnownRho { rho_hat } = ctx.algorithm else {
        notes.push("guarantees are certified for the known-margin algorithm only".into());
        return Ok(CertificationReport { checks, notes });
    };
    let b = BoundValues::new(ctx, rho_hat)?;
    let BoundTerms { err, primal, dual } = b.terms;
    let delta = ctx.delta;
    let big_t = ctx.horizon as f64;
    let cond2 = check_condition_2(rho_hat, ctx.horizon);
    let regret_ok = |s: &SeedRecord, rhs: f64| s.regret.is_some_and(|r| r <= rhs);

    if ctx.regime.stochastic_constraints {
        if ctx.opt.is_none() {
            notes.push("regret bounds skipped: no baseline".into());
        } else if cond2 {
            checks.push(BoundCheck::evaluate(
                "regret_violation_margin",
                "R <= err/rt + (1 + 2/rt) Ep + Ed/rt and V <= M + 2 Ep + Ed + err".into(),
                1.0 - delta,
                seeds,
                Some(b.regret_margin),
                Some(b.violation_margin),
                |s| regret_ok(s, b.regret_margin) && s.violation <= b.violation_margin,
            ));
        } else {
            checks.push(BoundCheck::evaluate(
                "regret_violation_no_margin",
                "R <= T^(1/4) (err + Ed) + (1 + 2 T^(1/4)) Ep and V <= T^(3/4) + M + 2 Ep + Ed + err".into(),
                1.0 - delta,
                seeds,
                Some(b.regret_no_margin),
                Some(b.violation_no_margin),
                |s| regret_ok(s, b.regret_no_margin) && s.violation <= b.violation_no_margin,
            ));
        }
        if ctx.regime.stochastic_rewards {
            checks.push(BoundCheck::evaluate(
                "no_recovery",
                "play phase lasts all T rounds".into(),
                1.0 - delta,
                seeds,
                None,
                None,
                |s| !s.entered_recovery,
            ));
        }
    } else if !cond2 {
        notes.push(format!(
            "scripted constraints: rho_hat = {rho_hat} below 2 T^(-1/4), no reward guarantee applies"
        ));
    } else {
        match (ctx.opt, ctx.rho) {
            (Some(opt), Some(rho)) if rho > 0.0 => {
                let base = rho / (1.0 + rho) * big_t * opt - (1.0 + 2.0 / b.rho_tilde) * primal - dual / b.rho_tilde;
                let v = b.threshold + 2.0 * primal + dual;
                let (name, reward_rhs, violation_rhs, nominal) = if ctx.regime.stochastic_rewards {
                    ("reward_fraction_stochastic_rewards", base - 2.0 * err, v + err, 1.0 - delta)
                } else {
                    ("reward_fraction", base, v, 1.0 - 2.0 * delta / 3.0)
                };
                checks.push(BoundCheck::evaluate(
                    name,
                    "sum f >= rho/(1+rho) T OPT - slack and V <= M + 2 Ep + Ed (+ err)".into(),
                    nominal,
                    seeds,
                    Some(reward_rhs),
                    Some(violation_rhs),
                    |s| s.reward >= reward_rhs && s.violation <= violation_rhs,
                ));
            }
            (Some(_), Some(rho)) => notes.push(format!("margin {rho} is not positive; reward fraction vacuous")),
            _ => notes.push("reward fraction skipped: no baseline".into()),
        }
    }
    Ok(CertificationReport { checks, notes })
}

/// Least-squares slope of `log(value)` against `log(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub slope: f64,
    /// How many values were at most 1 and raised to 1 before the log.
    pub floored: usize,
}

pub fn fit_growth_exponent(horizons: &[usize], values: &[f64]) -> Result<GrowthFit> {
    if horizons.len() != values.len() {
        return Err(Error::Shape("one value per horizon".into()));
    }
    if horizons.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "growth fit needs at least 3 points, got {}",
            horizons.len()
        )));
    }
    let floored = values.iter().filter(|v| !(**v > 1.0)).count();
    let xs: Vec<f64> = horizons.iter().map(|t| (*t as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.max(1.0).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("horizons must differ".into()));
    }
    Ok(GrowthFit {
        slope: sxy / sxx,
        floored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub horizons: Vec<usize>,
    pub median_violation: Vec<f64>,
    pub median_regret: Vec<f64>,
    pub violation_fit: GrowthFit,
    pub regret_fit: Option<GrowthFit>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Growth fit from one summary per horizon: median violation and median
/// `max(R, 1)` across seeds.
pub fn sweep_report(horizons: &[usize], summaries: &[Summary]) -> Result<SweepReport> {
    let median_violation: Vec<f64> = summaries
        .iter()
        .map(|s| median(s.seeds.iter().map(|r| r.violation).collect()))
        .collect();
    let have_regret = summaries.iter().all(|s| s.seeds.iter().all(|r| r.regret.is_some()));
    let median_regret: Vec<f64> = if have_regret {
        summaries
            .iter()
            .map(|s| median(s.seeds.iter().map(|r| r.regret.unwrap_or(0.0).max(1.0)).collect()))
            .collect()
    } else {
        Vec::new()
    };
    Ok(SweepReport {
        horizons: horizons.to_vec(),
        violation_fit: fit_growth_exponent(horizons, &median_violation)?,
        regret_fit: if have_regret {
            Some(fit_growth_exponent(horizons, &median_regret)?)
        } else {
            None
        },
        median_violation,
        median_regret,
    })
}

/// Runs the experiment at each horizon; traces are not written.
pub fn sweep(spec: &InstanceSpec, settings: &RunSettings, horizons: &[usize], parallel: Option<usize>) -> Result<SweepReport> {
    let summaries = horizons
        .iter()
        .map(|&t| {
            let s = RunSettings {
                horizon: t,
                ..settings.clone()
            };
            run_experiment(spec, &s, None, parallel)
        })
        .collect::<Result<Vec<_>>>()?;
    sweep_report(horizons, &summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{GenerationMode, Scenario};

    fn single() -> InstanceSpec {
        InstanceSpec::new(
            vec!["only".into()],
            1,
            vec![Scenario {
                f: vec![0.7],
                g: vec![vec![-0.5]],
            }],
            GenerationMode::Stochastic { probs: vec![1.0] },
        )
        .unwrap()
    }

    fn settings(horizon: usize, seeds: Vec<u64>) -> RunSettings {
        RunSettings {
            algorithm: AlgorithmSpec::KnownRho { rho_hat: 0.5 },
            horizon,
            delta: 0.1,
            feedback: FeedbackMode::Full,
            seeds,
            master_seed: 7,
        }
    }

    #[test]
    fn one_round_one_strategy() {
        let spec = single();
        let s = settings(1, vec![0]);
        let trace = run_instance_seed(&spec, &s, 0).unwrap();
        let csv = trace_csv(&trace);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap(), "t,phase,x_index,f,g_1,lambda_1,cumV_max");
        let summary = run_experiment(&spec, &s, None, None).unwrap();
        assert!((summary.seeds[0].regret.unwrap() - (0.7 - 0.7)).abs() < 1e-12);
        assert_eq!(summary.seeds[0].violation, -0.5);
    }

    #[test]
    fn trivially_feasible_instance_certifies() {
        let spec = single();
        let summary = run_experiment(&spec, &settings(200, (0..5).collect()), None, None).unwrap();
        assert!(summary.seeds.iter().all(|s| s.violation <= 0.0));
        let report = certify_bounds(&summary).unwrap();
        assert!(report.passed());
        assert!(report.check("no_recovery").is_some());
    }

    #[test]
    fn quantile_bookkeeping() {
        let spec = single();
        let summary = run_experiment(&spec, &settings(20, (0..50).collect()), None, Some(2)).unwrap();
        assert_eq!(summary.seeds.len(), 50);
        let q = Quantiles::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((q.q05, q.q50, q.q95), (1.2, 3.0, 4.8));
    }

    #[test]
    fn growth_fits() {
        let ts = [1000, 4000, 16000];
        let sqrt: Vec<f64> = ts.iter().map(|t| 3.0 * (*t as f64).sqrt()).collect();
        assert!((fit_growth_exponent(&ts, &sqrt).unwrap().slope - 0.5).abs() < 1e-9);
        let p34: Vec<f64> = ts.iter().map(|t| 2.0 * (*t as f64).powf(0.75)).collect();
        assert!((fit_growth_exponent(&ts, &p34).unwrap().slope - 0.75).abs() < 1e-9);
        assert!(fit_growth_exponent(&ts, &[5.0; 3]).unwrap().slope.abs() < 1e-12);
        let fit = fit_growth_exponent(&ts, &[-3.0, 0.5, 1.0]).unwrap();
        assert_eq!((fit.slope, fit.floored), (0.0, 3));
        assert!(fit_growth_exponent(&ts[..2], &sqrt[..2]).is_err());
    }

    #[test]
    fn seed_streams_differ() {
        use rand::RngCore;
        let (mut a, mut b) = seed_rngs(0, 1);
        let (mut c, _) = seed_rngs(0, 2);
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_ne!(x, c.next_u64());
        assert_eq!(seed_rngs(0, 1).0.next_u64(), x);
    }

    #[test]
    fn settings_validation() {
        let mut s = settings(10, vec![]);
        assert!(s.validate().unwrap_err().is_validation());
        s.seeds = vec![1];
        s.delta = 1.0;
        assert!(s.validate().is_err());
        s.delta = 0.1;
        s.algorithm = AlgorithmSpec::UnknownRho;
        s.horizon = 3;
        assert!(s.validate().is_err());
    }
}

//! Two-phase primal-dual meta-algorithm (play, then recovery), the
//! feasibility-margin estimator for the unknown-margin variant, and the
//! closed-form quantities that drive them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environments::Environment;
use crate::error::{Error, Result};
use crate::lagrangian::{play_round, DualDomain, DualPlayer};
use crate::policy::{PolicyBank, PrimalShape};
use crate::rm::{FeedbackMode, RmRange};

/// Azuma-Hoeffding width `sqrt(8 t ln(18 m t^2 / eta))`; zero at `t = 0`.
pub fn err_bound(t: usize, m: usize, eta: f64) -> f64 {
    if t == 0 {
        return 0.0;
    }
    let t = t as f64;
    (8.0 * t * (18.0 * m as f64 * t * t / eta).ln()).sqrt()
}

/// Violation threshold
/// `(2/g) sqrt(T) + (2 + 3/g) err + (1 + 2/g) E_p + (1/g) E_d`.
pub fn m_threshold(gamma: f64, horizon: usize, err_val: f64, ep_val: f64, ed_val: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} not in (0, 1]")));
    }
    let inv = 1.0 / gamma;
    Ok(2.0 * inv * (horizon as f64).sqrt()
        + (2.0 + 3.0 * inv) * err_val
        + (1.0 + 2.0 * inv) * ep_val
        + inv * ed_val)
}

/// Regret bound of the dual learner for utilities in `[-1, 1]`.
///
/// Evaluated over `m + 1` coordinates, which covers both the simplex dual
/// (`m` coordinates) and, after dividing by the scale, the scaled dual with
/// its dummy coordinate.
pub fn dual_unit_bound(t: usize, m: usize) -> f64 {
    if t == 0 {
        return 0.0;
    }
    2.0 * (t as f64 * ((m + 1) as f64).ln() / 2.0).sqrt()
}

/// `rho_hat >= 2 T^{-1/4}`.
pub fn check_condition_2(rho_hat: f64, horizon: usize) -> bool {
    rho_hat >= 2.0 * (horizon as f64).powf(-0.25)
}

/// `rho >= (2 / T0) (2 err + 2 E_p + E_d)`.
pub fn check_condition_1(rho: f64, t0: usize, err_val: f64, ep_val: f64, ed_val: f64) -> bool {
    rho >= 2.0 / t0 as f64 * (2.0 * err_val + 2.0 * ep_val + ed_val)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub horizon: usize,
    pub delta: f64,
    pub rho_hat: f64,
    pub feedback: FeedbackMode,
    /// Replaces the computed violation threshold `M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_override: Option<f64>,
}

impl MetaConfig {
    pub fn new(horizon: usize, delta: f64, rho_hat: f64, feedback: FeedbackMode) -> Result<Self> {
        let c = Self {
            horizon,
            delta,
            rho_hat,
            feedback,
            threshold_override: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold_override = Some(threshold);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta = {} not in (0, 1)", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.rho_hat) {
            return Err(Error::InvalidParameter(format!(
                "rho_hat = {} not in [0, 1]",
                self.rho_hat
            )));
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        self.delta / 3.0
    }

    pub fn rho_tilde(&self) -> f64 {
        (self.rho_hat / 2.0).max((self.horizon as f64).powf(-0.25))
    }
}

/// The bound terms at the horizon. The primal term is the bank's bound for
/// utilities spanning the reward range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub err: f64,
    pub primal: f64,
    pub dual: f64,
}

impl BoundTerms {
    pub fn at(horizon: usize, m: usize, eta: f64, shape: &PrimalShape, reward_width: f64) -> Self {
        Self {
            err: err_bound(horizon, m, eta),
            primal: shape.regret_bound(horizon, reward_width, eta),
            dual: dual_unit_bound(horizon, m),
        }
    }

    pub fn threshold(&self, gamma: f64, horizon: usize) -> Result<f64> {
        m_threshold(gamma, horizon, self.err, self.primal, self.dual)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Estimation,
    Play,
    Recovery,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Estimation => "estimate",
            Phase::Play => "play",
            Phase::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub phase: Phase,
    pub context: usize,
    pub x_index: usize,
    pub lambda: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub horizon: usize,
    pub m: usize,
    pub records: Vec<RoundRecord>,
    /// Last round of the play phase (global index); equals `horizon` when
    /// recovery never started.
    pub t1: usize,
    pub t0: Option<usize>,
    pub rho_hat: Option<f64>,
    pub rho_tilde: f64,
    pub threshold: f64,
}

impl RunTrace {
    fn empty(horizon: usize, m: usize) -> Self {
        Self {
            horizon,
            m,
            records: Vec::with_capacity(horizon),
            t1: 0,
            t0: None,
            rho_hat: None,
            rho_tilde: 0.0,
            threshold: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.f).sum()
    }

    pub fn violation_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.m];
        for r in &self.records {
            for (acc, g) in v.iter_mut().zip(&r.g) {
                *acc += g;
            }
        }
        v
    }

    /// `max_i sum_t g_{t,i}(x_t)`.
    pub fn violation(&self) -> f64 {
        self.violation_vector()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn entered_recovery(&self) -> bool {
        self.records.iter().any(|r| r.phase == Phase::Recovery)
    }

    /// Rounds of the given phase.
    pub fn phase_len(&self, phase: Phase) -> usize {
        self.records.iter().filter(|r| r.phase == phase).count()
    }
}

fn shape_of<E: Environment + ?Sized>(env: &E, feedback: FeedbackMode) -> PrimalShape {
    PrimalShape {
        contexts: env.num_contexts(),
        arms: env.num_strategies(),
        feedback,
    }
}

struct Game<'a, E: Environment + ?Sized, R: Rng + ?Sized> {
    env: &'a mut E,
    rng: &'a mut R,
    history: Vec<usize>,
    cumulative: Vec<f64>,
    trace: RunTrace,
}

impl<E: Environment + ?Sized, R: Rng + ?Sized> Game<'_, E, R> {
    fn violation(&self) -> f64 {
        self.cumulative.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn play(&mut self, primal: &mut PolicyBank, dual: &mut DualPlayer, v: f64, phase: Phase) -> Result<()> {
        let t = self.history.len() + 1;
        let round = self.env.next_round(t, &self.history)?;
        let r = play_round(primal, dual, round.context, &round.realization, v, self.rng)?;
        for (acc, g) in self.cumulative.iter_mut().zip(&r.g_at_x) {
            *acc += g;
        }
        self.history.push(r.x_index);
        self.trace.records.push(RoundRecord {
            t,
            phase,
            context: round.context,
            x_index: r.x_index,
            lambda: r.lambda,
            f: r.f_at_x,
            g: r.g_at_x,
        });
        Ok(())
    }

    /// Runs the two phases over the next `config.horizon` rounds.
    fn run_two_phase(&mut self, config: &MetaConfig) -> Result<()> {
        config.validate()?;
        let big_t = config.horizon;
        let m = self.env.num_constraints();
        let shape = shape_of(&*self.env, config.feedback);
        let rho_tilde = config.rho_tilde();
        let eta = config.eta();
        let (r_lo, r_hi) = self.env.reward_range();
        let threshold = match config.threshold_override {
            Some(th) => th,
            None => BoundTerms::at(big_t, m, eta, &shape, r_hi - r_lo).threshold(rho_tilde, big_t)?,
        };
        self.trace.rho_tilde = rho_tilde;
        self.trace.threshold = threshold;
        let offset = self.history.len();

        let scale = 1.0 / rho_tilde;
        let mut primal = shape.build(RmRange::new(r_lo - scale, r_hi + scale)?, eta, big_t)?;
        let mut dual = DualPlayer::new(
            DualDomain::scaled(m, rho_tilde)?,
            RmRange::new(-scale, scale)?,
            big_t,
        )?;
        let mut t = 1;
        while t <= big_t && self.violation() <= (big_t - t) as f64 * rho_tilde + threshold - 1.0 {
            self.play(&mut primal, &mut dual, 1.0, Phase::Play)?;
            t += 1;
        }
        let t1 = t - 1;
        self.trace.t1 = offset + t1;
        if t1 < big_t {
            let rest = big_t - t1;
            let unit = RmRange::new(-1.0, 1.0)?;
            let mut primal = shape.build(unit, eta, rest)?;
            let mut dual = DualPlayer::new(DualDomain::simplex(m)?, unit, rest)?;
            while t <= big_t {
                self.play(&mut primal, &mut dual, 0.0, Phase::Recovery)?;
                t += 1;
            }
        }
        Ok(())
    }
}

fn new_game<'a, E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &'a mut E,
    rng: &'a mut R,
    horizon: usize,
) -> Result<Game<'a, E, R>> {
    if env.horizon() < horizon {
        return Err(Error::Environment(format!(
            "environment yields {} rounds, run needs {horizon}",
            env.horizon()
        )));
    }
    let m = env.num_constraints();
    Ok(Game {
        env,
        rng,
        history: Vec::with_capacity(horizon),
        cumulative: vec![0.0; m],
        trace: RunTrace::empty(horizon, m),
    })
}

/// Meta-algorithm with a known lower bound `rho_hat` on the feasibility
/// margin.
///
/// Play phase: primal over the strategies with range widened by `1/rho~`,
/// dual over the scaled set, rewards weighted by `v = 1`, for as long as the
/// violation accumulated before round `t` stays within
/// `(T - t) rho~ + M - 1`. Recovery phase: fresh learners, simplex dual,
/// `v = 0`, until the horizon.
pub fn run_known_rho<E: Environment + ?Sized, R: Rng + ?Sized>(
    config: &MetaConfig,
    env: &mut E,
    rng: &mut R,
) -> Result<RunTrace> {
    let mut game = new_game(env, rng, config.horizon)?;
    game.run_two_phase(config)?;
    Ok(game.trace)
}

fn estimation_phase<E: Environment + ?Sized, R: Rng + ?Sized>(
    game: &mut Game<'_, E, R>,
    t0: usize,
    delta: f64,
    feedback: FeedbackMode,
) -> Result<f64> {
    if t0 == 0 {
        return Err(Error::InvalidParameter("estimation needs at least one round".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta = {delta} not in (0, 1)")));
    }
    let m = game.env.num_constraints();
    let shape = shape_of(&*game.env, feedback);
    let unit = RmRange::new(-1.0, 1.0)?;
    let mut primal = shape.build(unit, delta, t0)?;
    let mut dual = DualPlayer::new(DualDomain::simplex(m)?, unit, t0)?;
    for _ in 0..t0 {
        game.play(&mut primal, &mut dual, 0.0, Phase::Estimation)?;
    }
    Ok(rho_estimate(game.violation(), t0, err_bound(t0, m, delta)))
}

/// `-(1/T0) (max_i sum g_i + err)`, clamped to `[0, 1]`.
pub fn rho_estimate(max_violation: f64, t0: usize, err_val: f64) -> f64 {
    (-(max_violation + err_val) / t0 as f64).clamp(0.0, 1.0)
}

/// Plays `t0` recovery-style rounds (`v = 0`) and returns the margin
/// estimate with the trace of those rounds.
pub fn estimate_rho<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &mut E,
    t0: usize,
    delta: f64,
    feedback: FeedbackMode,
    rng: &mut R,
) -> Result<(f64, RunTrace)> {
    let mut game = new_game(env, rng, t0)?;
    let rho_hat = estimation_phase(&mut game, t0, delta, feedback)?;
    game.trace.t0 = Some(t0);
    game.trace.t1 = 0;
    game.trace.rho_hat = Some(rho_hat);
    Ok((rho_hat, game.trace))
}

/// `ceil(sqrt(T))`.
pub fn estimation_rounds(horizon: usize) -> usize {
    let mut r = (horizon as f64).sqrt() as usize;
    while r * r > horizon {
        r -= 1;
    }
    if r * r < horizon {
        r + 1
    } else {
        r
    }
}

/// Estimates the margin over the first `ceil(sqrt(T))` rounds, then runs
/// the known-margin algorithm on the remaining rounds. The returned trace
/// covers all `T` rounds.
pub fn run_unknown_rho<E: Environment + ?Sized, R: Rng + ?Sized>(
    horizon: usize,
    delta: f64,
    feedback: FeedbackMode,
    env: &mut E,
    rng: &mut R,
) -> Result<RunTrace> {
    if horizon < 4 {
        return Err(Error::InvalidParameter(format!(
            "unknown-margin runs need T >= 4, got {horizon}"
        )));
    }
    let t0 = estimation_rounds(horizon);
    let mut game = new_game(env, rng, horizon)?;
    let rho_hat = estimation_phase(&mut game, t0, delta, feedback)?;
    let config = MetaConfig::new(horizon - t0, delta, rho_hat, feedback)?;
    game.run_two_phase(&config)?;
    let mut trace = game.trace;
    trace.horizon = horizon;
    trace.t0 = Some(t0);
    trace.rho_hat = Some(rho_hat);
    Ok(trace)
}

/// Which variant of the meta-algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    KnownRho { rho_hat: f64 },
    UnknownRho,
}

/// Runs the chosen variant for `horizon` rounds.
pub fn run_algorithm<E: Environment + ?Sized, R: Rng + ?Sized>(
    spec: AlgorithmSpec,
    horizon: usize,
    delta: f64,
    feedback: FeedbackMode,
    env: &mut E,
    rng: &mut R,
) -> Result<RunTrace> {
    match spec {
        AlgorithmSpec::KnownRho { rho_hat } => {
            let config = MetaConfig::new(horizon, delta, rho_hat, feedback)?;
            run_known_rho(&config, env, rng)
        }
        AlgorithmSpec::UnknownRho => run_unknown_rho(horizon, delta, feedback, env, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{GenerationMode, InstanceSpec, Scenario};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn err_bound_examples() {
        // sqrt(800 ln 3.6e6)
        assert!((err_bound(100, 2, 0.1) - 109.896_112_409_589_22).abs() < 1e-9);
        assert_eq!(err_bound(0, 3, 0.2), 0.0);
        assert!(err_bound(200, 2, 0.1) > err_bound(100, 2, 0.1));
    }

    #[test]
    fn threshold_examples() {
        let m = m_threshold(0.25, 10_000, 100.0, 200.0, 50.0).unwrap();
        assert!((m - 4200.0).abs() < 1e-9);
        assert_eq!(m_threshold(1.0, 0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(
            m_threshold(0.25, 100, 1.0, 1.0, 1.0).unwrap() > m_threshold(0.5, 100, 1.0, 1.0, 1.0).unwrap()
        );
        assert!(m_threshold(0.0, 10, 1.0, 1.0, 1.0).is_err());
        assert!(m_threshold(-0.5, 10, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn conditions() {
        assert!(check_condition_2(0.5, 10_000));
        assert!(check_condition_2(0.2, 10_000));
        assert!(!check_condition_2(0.1, 10_000));
        assert!(check_condition_1(1.0, 400, 10.0, 10.0, 10.0));
        assert!(!check_condition_1(0.2, 400, 10.0, 10.0, 10.0));
        assert!(check_condition_1(0.25, 400, 10.0, 10.0, 10.0));
    }

    #[test]
    fn rho_tilde_and_eta() {
        let c = MetaConfig::new(10_000, 0.06, 0.5, FeedbackMode::Full).unwrap();
        assert!((c.rho_tilde() - 0.25).abs() < 1e-15);
        assert!((c.eta() - 0.02).abs() < 1e-15);
        let c = MetaConfig::new(10_000, 0.06, 0.0, FeedbackMode::Full).unwrap();
        assert!((c.rho_tilde() - 0.1).abs() < 1e-12);
        assert!(MetaConfig::new(10, 0.1, 1.5, FeedbackMode::Full).is_err());
        assert!(MetaConfig::new(10, 0.0, 0.5, FeedbackMode::Full).is_err());
    }

    #[test]
    fn estimator_arithmetic() {
        assert_eq!(rho_estimate(-40.0, 20, 8.0), 1.0);
        let err = err_bound(4, 1, 0.1);
        assert!((err - (32.0f64 * 2880.0f64.ln()).sqrt()).abs() < 1e-12);
        assert!((err - 15.97).abs() < 0.01);
        assert_eq!(rho_estimate(-2.0, 4, err), 0.0);
        assert!((rho_estimate(-0.3 * 50.0, 50, 0.0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn estimation_rounds_is_ceil_sqrt() {
        assert_eq!(estimation_rounds(10_000), 100);
        assert_eq!(estimation_rounds(10_001), 101);
        assert_eq!(estimation_rounds(4), 2);
        assert_eq!(estimation_rounds(5), 3);
    }

    fn always_violated() -> InstanceSpec {
        InstanceSpec::new(
            vec!["a".into(), "b".into()],
            1,
            vec![Scenario {
                f: vec![0.4, 0.8],
                g: vec![vec![1.0], vec![1.0]],
            }],
            GenerationMode::Stochastic { probs: vec![1.0] },
        )
        .unwrap()
    }

    #[test]
    fn guard_flips_once_at_predicted_round() {
        let spec = always_violated();
        let big_t = 100;
        let config = MetaConfig::new(big_t, 0.1, 0.5, FeedbackMode::Full)
            .unwrap()
            .with_threshold(1.0);
        let mut env = spec.environment(big_t, ChaCha8Rng::seed_from_u64(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trace = run_known_rho(&config, &mut env, &mut rng).unwrap();
        // Oracle: violation before round t is t - 1.
        let rt = config.rho_tilde();
        let expected_t1 = (1..=big_t)
            .find(|&t| (t - 1) as f64 > (big_t - t) as f64 * rt + 1.0 - 1.0)
            .unwrap()
            - 1;
        assert_eq!(trace.t1, expected_t1);
        assert!(trace.t1 < big_t);
        assert_eq!(trace.len(), big_t);
        let phases: Vec<Phase> = trace.records.iter().map(|r| r.phase).collect();
        let flips = phases.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(flips, 1);
        assert_eq!(trace.phase_len(Phase::Play), expected_t1);
        // Recovery multipliers live on the simplex.
        for r in trace.records.iter().filter(|r| r.phase == Phase::Recovery) {
            assert!((r.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_round_horizon() {
        let spec = always_violated();
        let config = MetaConfig::new(1, 0.1, 0.5, FeedbackMode::Bandit).unwrap();
        let mut env = spec.environment(1, ChaCha8Rng::seed_from_u64(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trace = run_known_rho(&config, &mut env, &mut rng).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.records[0].t, 1);
    }

    #[test]
    fn short_environment_is_an_error() {
        let spec = always_violated();
        let config = MetaConfig::new(10, 0.1, 0.5, FeedbackMode::Full).unwrap();
        let mut env = spec.environment(5, ChaCha8Rng::seed_from_u64(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            run_known_rho(&config, &mut env, &mut rng),
            Err(Error::Environment(_))
        ));
    }

    #[test]
    fn unknown_rho_delegates_remaining_rounds() {
        let spec = InstanceSpec::new(
            vec!["a".into(), "b".into()],
            1,
            vec![Scenario {
                f: vec![0.9, 0.1],
                g: vec![vec![0.3], vec![-0.6]],
            }],
            GenerationMode::Stochastic { probs: vec![1.0] },
        )
        .unwrap();
        let big_t = 10_000;
        let mut env = spec.environment(big_t, ChaCha8Rng::seed_from_u64(3));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trace = run_unknown_rho(big_t, 0.1, FeedbackMode::Full, &mut env, &mut rng).unwrap();
        assert_eq!(trace.t0, Some(100));
        assert_eq!(trace.phase_len(Phase::Estimation), 100);
        assert_eq!(trace.len() - 100, 9_900);
        assert_eq!(trace.len(), big_t);
        let rho_hat = trace.rho_hat.unwrap();
        assert!((0.0..=1.0).contains(&rho_hat));
        for (i, r) in trace.records.iter().enumerate() {
            assert_eq!(r.t, i + 1);
        }
        assert!(run_unknown_rho(3, 0.1, FeedbackMode::Full, &mut spec.environment(3, ChaCha8Rng::seed_from_u64(0)), &mut rng).is_err());
    }
}

//! Finite-domain regret minimizers.
//!
//! Two learners share one state type: exponential weights (full feedback,
//! also used as negative-entropy mirror descent for the dual simplex) and
//! EXP3.P (bandit feedback). Utilities are normalized to `[0, 1]` with the
//! declared [`RmRange`] before every update, so one set of step sizes serves
//! every range and the regret bound scales linearly with the range width.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::DualDomain;

/// Constant in front of the EXP3.P high-probability regret bound
/// `c * sqrt(T K ln(K / fail_prob))`.
pub const EXP3P_BOUND_CONSTANT: f64 = 5.15;

/// Utilities this far outside the declared range are clamped instead of
/// rejected; anything further is a caller bug.
pub const RANGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    Full,
    Bandit,
}

/// Closed interval `[lo, hi]` of utilities a learner accepts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmRange {
    lo: f64,
    hi: f64,
}

impl RmRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::InvalidRange { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Maps `value` to `[0, 1]`, rejecting values outside the range.
    pub fn normalize(&self, value: f64) -> Result<f64> {
        if !value.is_finite()
            || value < self.lo - RANGE_TOLERANCE
            || value > self.hi + RANGE_TOLERANCE
        {
            return Err(Error::RangeViolation {
                value,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(((value - self.lo) / self.width()).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    FullFeedback,
    Bandit,
}

/// Closed-form regret bound of a learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretBoundSpec {
    pub kind: BoundKind,
    pub k: usize,
    pub range_width: f64,
    pub fail_prob: f64,
}

impl RegretBoundSpec {
    pub fn evaluate(&self, t: usize) -> f64 {
        regret_bound(self, t)
    }
}

/// `width * sqrt(t ln K / 2)` for exponential weights and
/// `width * c * sqrt(t K ln(K / fail_prob))` for EXP3.P. Zero at `t = 0`.
pub fn regret_bound(spec: &RegretBoundSpec, t: usize) -> f64 {
    if t == 0 || spec.k == 0 {
        return 0.0;
    }
    let t = t as f64;
    let k = spec.k as f64;
    let base = match spec.kind {
        BoundKind::FullFeedback => (t * k.ln() / 2.0).sqrt(),
        BoundKind::Bandit => {
            EXP3P_BOUND_CONSTANT * (t * k * (k / spec.fail_prob).ln()).sqrt()
        }
    };
    spec.range_width * base
}

/// EXP3.P tuning: exploration mix `gamma`, learning rate `eta` and
/// optimism bias `beta` added to every arm's gain estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exp3pParams {
    pub gamma: f64,
    pub eta: f64,
    pub beta: f64,
}

impl Exp3pParams {
    /// Parameters for which `regret <= 5.15 sqrt(T K ln(K / fail_prob))`
    /// holds with probability `1 - fail_prob`. The exploration mix is capped
    /// at 3/5; the cap only binds when the bound already exceeds `T`.
    pub fn tuned(k: usize, horizon: usize, fail_prob: f64) -> Self {
        let k = k as f64;
        let t = horizon as f64;
        let ln_k = k.ln();
        Self {
            gamma: (1.05 * (k * ln_k / t).sqrt()).min(0.6),
            eta: 0.95 * (ln_k / (t * k)).sqrt(),
            beta: ((k / fail_prob).ln() / (t * k)).sqrt().min(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Update {
    Hedge { step: f64 },
    Exp3p(Exp3pParams),
}

/// Regret minimizer over `{0, .., K-1}`.
#[derive(Debug, Clone)]
pub struct RegretMinimizer {
    /// Normalized to sum to one after every update.
    weights: Vec<f64>,
    range: RmRange,
    fail_prob: f64,
    update: Update,
    horizon: usize,
    rounds_seen: usize,
    /// Arm and probability of the last bandit draw, awaiting feedback.
    pending: Option<(usize, f64)>,
}

impl RegretMinimizer {
    /// Exponential weights (full feedback) or EXP3.P (bandit feedback) over
    /// `k` elements, tuned to `horizon`.
    pub fn construct_primal(
        k: usize,
        range: RmRange,
        fail_prob: f64,
        feedback: FeedbackMode,
        horizon: usize,
    ) -> Result<Self> {
        check_shape(k, horizon)?;
        if !(0.0..1.0).contains(&fail_prob) {
            return Err(Error::InvalidParameter(format!(
                "failure probability {fail_prob} not in [0, 1)"
            )));
        }
        match feedback {
            FeedbackMode::Full => Ok(Self::hedge(k, range, fail_prob, horizon)),
            FeedbackMode::Bandit => {
                if fail_prob <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "bandit learners need a positive failure probability".into(),
                    ));
                }
                Ok(Self::exp3p(
                    k,
                    range,
                    fail_prob,
                    Exp3pParams::tuned(k, horizon, fail_prob),
                    horizon,
                ))
            }
        }
    }

    /// Exponential weights over the coordinates of the dual domain (`m` for
    /// the simplex, `m + 1` with a dummy coordinate for the scaled set).
    pub fn construct_dual(domain: &DualDomain, range: RmRange, horizon: usize) -> Result<Self> {
        domain.validate()?;
        let k = domain.coordinates();
        check_shape(k, horizon)?;
        Ok(Self::hedge(k, range, 0.0, horizon))
    }

    /// EXP3.P with explicit parameters.
    pub fn exp3p(
        k: usize,
        range: RmRange,
        fail_prob: f64,
        params: Exp3pParams,
        horizon: usize,
    ) -> Self {
        Self {
            weights: vec![1.0 / k as f64; k],
            range,
            fail_prob,
            update: Update::Exp3p(params),
            horizon,
            rounds_seen: 0,
            pending: None,
        }
    }

    fn hedge(k: usize, range: RmRange, fail_prob: f64, horizon: usize) -> Self {
        let step = (8.0 * (k as f64).ln() / horizon as f64).sqrt();
        Self {
            weights: vec![1.0 / k as f64; k],
            range,
            fail_prob,
            update: Update::Hedge { step },
            horizon,
            rounds_seen: 0,
            pending: None,
        }
    }

    /// Overrides the exponential-weights step size.
    pub fn with_step_size(mut self, step: f64) -> Self {
        if let Update::Hedge { step: s } = &mut self.update {
            *s = step;
        }
        self
    }

    pub fn domain_size(&self) -> usize {
        self.weights.len()
    }

    pub fn range(&self) -> RmRange {
        self.range
    }

    pub fn fail_prob(&self) -> f64 {
        self.fail_prob
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rounds_seen(&self) -> usize {
        self.rounds_seen
    }

    pub fn feedback_mode(&self) -> FeedbackMode {
        match self.update {
            Update::Hedge { .. } => FeedbackMode::Full,
            Update::Exp3p(_) => FeedbackMode::Bandit,
        }
    }

    /// Uniform floor mixed into the bandit action distribution.
    pub fn exploration_mix(&self) -> f64 {
        match self.update {
            Update::Hedge { .. } => 0.0,
            Update::Exp3p(p) => p.gamma,
        }
    }

    pub fn step_size(&self) -> f64 {
        match self.update {
            Update::Hedge { step } => step,
            Update::Exp3p(p) => p.eta,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probability(&self, k: usize) -> f64 {
        let w = self.weights[k];
        match self.update {
            Update::Hedge { .. } => w,
            Update::Exp3p(p) => {
                (1.0 - p.gamma) * w + p.gamma / self.weights.len() as f64
            }
        }
    }

    /// Current action distribution.
    pub fn distribution(&self) -> Vec<f64> {
        (0..self.weights.len()).map(|k| self.probability(k)).collect()
    }

    /// Regret bound of this learner in its own utility units.
    pub fn bound_spec(&self) -> RegretBoundSpec {
        RegretBoundSpec {
            kind: match self.update {
                Update::Hedge { .. } => BoundKind::FullFeedback,
                Update::Exp3p(_) => BoundKind::Bandit,
            },
            k: self.weights.len(),
            range_width: self.range.width(),
            fail_prob: self.fail_prob,
        }
    }

    pub fn regret_bound(&self, t: usize) -> f64 {
        regret_bound(&self.bound_spec(), t)
    }

    fn ensure_budget(&self) -> Result<()> {
        if self.rounds_seen >= self.horizon {
            return Err(Error::Exhausted {
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// Samples an element from the current distribution. Weights are left
    /// untouched; in bandit mode the draw is remembered for the next
    /// [`observe_bandit`](Self::observe_bandit).
    pub fn next_element<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        self.ensure_budget()?;
        let k = sample_index(&self.distribution(), rng);
        if self.feedback_mode() == FeedbackMode::Bandit {
            self.pending = Some((k, self.probability(k)));
        }
        Ok(k)
    }

    /// Current distribution as a point of the simplex, for learners whose
    /// output is the mixed point itself (the dual player).
    pub fn current_point(&self) -> Result<Vec<f64>> {
        self.ensure_budget()?;
        Ok(self.distribution())
    }

    /// Full-feedback exponential-weights update with one utility per element.
    pub fn observe_full(&mut self, utilities: &[f64]) -> Result<()> {
        let Update::Hedge { step } = self.update else {
            return Err(Error::Protocol(
                "full-feedback update on a bandit learner".into(),
            ));
        };
        if utilities.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "expected {} utilities, got {}",
                self.weights.len(),
                utilities.len()
            )));
        }
        self.ensure_budget()?;
        let normalized = utilities
            .iter()
            .map(|&u| self.range.normalize(u))
            .collect::<Result<Vec<_>>>()?;
        // Shift by the max so the largest factor is exactly one.
        let top = normalized.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (w, u) in self.weights.iter_mut().zip(&normalized) {
            *w *= (step * (u - top)).exp();
        }
        renormalize(&mut self.weights);
        self.rounds_seen += 1;
        Ok(())
    }

    /// EXP3.P update after playing `chosen` and observing its utility.
    pub fn observe_bandit(&mut self, chosen: usize, utility: f64) -> Result<()> {
        let Update::Exp3p(params) = self.update else {
            return Err(Error::Protocol(
                "bandit update on a full-feedback learner".into(),
            ));
        };
        match self.pending {
            Some((k, _)) if k == chosen => {}
            Some((k, _)) => {
                return Err(Error::Protocol(format!(
                    "observed arm {chosen} but arm {k} was emitted"
                )))
            }
            None => return Err(Error::Protocol("no pending draw to observe".into())),
        }
        self.ensure_budget()?;
        let reward = self.range.normalize(utility)?;
        let (_, p_chosen) = self.pending.take().expect("checked above");
        let probs = self.distribution();
        let log_gain: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let hit = if i == chosen { reward } else { 0.0 };
                let p = if i == chosen { p_chosen } else { p };
                params.eta * (hit + params.beta) / p
            })
            .collect();
        let top = log_gain.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (w, g) in self.weights.iter_mut().zip(&log_gain) {
            *w *= (g - top).exp();
        }
        renormalize(&mut self.weights);
        self.rounds_seen += 1;
        Ok(())
    }
}

fn check_shape(k: usize, horizon: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidDomain("domain must have at least one element".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    Ok(())
}

fn renormalize(weights: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
}

/// Inverse-CDF draw from a probability vector; consumes one `f64` from `rng`.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

//! Repeated first/second-price auctions under a per-round budget and an
//! optional return-on-investment target. The bidder keeps one bandit learner
//! per valuation, so a policy maps each valuation to a bid.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environments::{Environment, Round};
use crate::error::{Error, Result};
use crate::lagrangian::RoundRealization;
use crate::meta::AlgorithmSpec;
use crate::policy::PolicyBank;
use crate::rm::{sample_index, FeedbackMode};
use crate::simplex::{LinearProgram, LpOutcome, Relation};

const GRID_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuctionType {
    FirstPrice,
    SecondPrice,
}

/// Per-round draws of a valuation or a competing bid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueProcess {
    Constant { value: f64 },
    Categorical { values: Vec<f64>, probs: Vec<f64> },
    /// Uniform over `points` evenly spaced values from `lo` to `hi`.
    UniformGrid { lo: f64, hi: f64, points: usize },
    /// Cycled in order.
    Script { values: Vec<f64> },
}

impl ValueProcess {
    fn validate(&self, name: &str) -> Result<()> {
        let check = |v: f64, what: String| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::validation(what, format!("{v} not in [0, 1]")))
            }
        };
        match self {
            ValueProcess::Constant { value } => check(*value, format!("{name}.value")),
            ValueProcess::Categorical { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::validation(name, "values and probs must be nonempty and equally long"));
                }
                for (i, v) in values.iter().enumerate() {
                    check(*v, format!("{name}.values[{i}]"))?;
                }
                if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::validation(format!("{name}.probs"), "not a probability vector"));
                }
                Ok(())
            }
            ValueProcess::UniformGrid { lo, hi, points } => {
                check(*lo, format!("{name}.lo"))?;
                check(*hi, format!("{name}.hi"))?;
                if *points == 0 || lo > hi || (*points == 1 && lo != hi) {
                    return Err(Error::validation(name, "grid needs lo <= hi and points >= 1 (lo = hi for one point)"));
                }
                Ok(())
            }
            ValueProcess::Script { values } => {
                if values.is_empty() {
                    return Err(Error::validation(format!("{name}.values"), "empty script"));
                }
                for (i, v) in values.iter().enumerate() {
                    check(*v, format!("{name}.values[{i}]"))?;
                }
                Ok(())
            }
        }
    }

    /// Support and probabilities; `None` for scripts.
    pub fn distribution(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            ValueProcess::Constant { value } => Some((vec![*value], vec![1.0])),
            ValueProcess::Categorical { values, probs } => Some((values.clone(), probs.clone())),
            ValueProcess::UniformGrid { lo, hi, points } => {
                let n = *points;
                let vals = (0..n)
                    .map(|k| if n == 1 { *lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
                    .collect();
                Some((vals, vec![1.0 / n as f64; n]))
            }
            ValueProcess::Script { .. } => None,
        }
    }

    /// Value at round `t` (1-indexed).
    pub fn draw<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> f64 {
        match self {
            ValueProcess::Constant { value } => *value,
            ValueProcess::Categorical { values, probs } => values[sample_index(probs, rng)],
            ValueProcess::UniformGrid { lo, hi, points } => {
                let k = rng.gen_range(0..*points);
                if *points == 1 {
                    *lo
                } else {
                    lo + (hi - lo) * k as f64 / (*points - 1) as f64
                }
            }
            ValueProcess::Script { values } => values[(t - 1) % values.len()],
        }
    }

    fn support(&self) -> Vec<f64> {
        match self {
            ValueProcess::Script { values } => values.clone(),
            other => other.distribution().map(|d| d.0).unwrap_or_default(),
        }
    }
}

/// `(reward, cost)`. The bid wins when `b >= beta` and `b > 0`, so a zero bid
/// always skips the item.
pub fn auction_outcome(v: f64, b: f64, beta: f64, kind: AuctionType) -> (f64, f64) {
    if b > 0.0 && b >= beta {
        let c = match kind {
            AuctionType::SecondPrice => beta,
            AuctionType::FirstPrice => b,
        };
        (v - c, c)
    } else {
        (0.0, 0.0)
    }
}

/// `c - rho`.
pub fn budget_constraint(cost: f64, rho_budget: f64) -> Result<f64> {
    if !(rho_budget > 0.0 && rho_budget <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "per-round budget {rho_budget} not in (0, 1]"
        )));
    }
    Ok(cost - rho_budget)
}

/// `(omega - v / b)` on a win, clipped to `[-1, 1]`; zero otherwise.
pub fn roi_constraint(v: f64, b: f64, beta: f64, omega: f64) -> f64 {
    if b > 0.0 && b >= beta {
        (omega - v / b).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Valuation weights, `f[valuation][bid]` and `g[valuation][bid][i]`.
pub type ExpectedTables = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuctionConfig {
    pub valuations: Vec<f64>,
    pub bids: Vec<f64>,
    #[serde(rename = "type")]
    pub auction_type: AuctionType,
    pub budget_per_round: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi_target: Option<f64>,
    pub beta_process: ValueProcess,
    pub v_process: ValueProcess,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<AlgorithmSpec>,
    #[serde(default = "default_feedback")]
    pub feedback: FeedbackMode,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_delta() -> f64 {
    0.05
}

fn default_feedback() -> FeedbackMode {
    FeedbackMode::Bandit
}

impl AuctionConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.valuations.is_empty() {
            return Err(Error::validation("valuations", "empty"));
        }
        for (name, grid) in [("valuations", &self.valuations), ("bids", &self.bids)] {
            for (i, x) in grid.iter().enumerate() {
                if !(0.0..=1.0).contains(x) {
                    return Err(Error::validation(format!("{name}[{i}]"), format!("{x} not in [0, 1]")));
                }
                if grid[..i].iter().any(|y| (x - y).abs() <= GRID_TOL) {
                    return Err(Error::validation(format!("{name}[{i}]"), "duplicate grid point"));
                }
            }
        }
        if !self.bids.contains(&0.0) {
            return Err(Error::validation("bids", "must contain 0 so the bidder can skip"));
        }
        if !(self.budget_per_round > 0.0 && self.budget_per_round <= 1.0) {
            return Err(Error::validation("budget_per_round", "must lie in (0, 1]"));
        }
        if let Some(omega) = self.roi_target {
            if !(omega >= 0.0 && omega.is_finite()) {
                return Err(Error::validation("roi_target", "must be a nonnegative number"));
            }
        }
        self.beta_process.validate("beta_process")?;
        self.v_process.validate("v_process")?;
        for v in self.v_process.support() {
            if self.valuation_index(v).is_err() {
                return Err(Error::validation("v_process", format!("value {v} is not in valuations")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::validation("T", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "empty"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation("delta", "must lie in (0, 1)"));
        }
        if let Some(AlgorithmSpec::KnownRho { rho_hat }) = self.algorithm {
            if !(0.0..=1.0).contains(&rho_hat) {
                return Err(Error::validation("algorithm.rho_hat", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Number of constraints: budget, plus ROI when a target is set.
    pub fn m(&self) -> usize {
        1 + self.roi_target.is_some() as usize
    }

    /// Explicit algorithm, else the known-margin variant with the budget as
    /// margin (skipping every item has slack `rho_budget`) or zero when an
    /// ROI target is present.
    pub fn algorithm(&self) -> AlgorithmSpec {
        self.algorithm.unwrap_or(AlgorithmSpec::KnownRho {
            rho_hat: if self.roi_target.is_some() {
                0.0
            } else {
                self.budget_per_round
            },
        })
    }

    pub fn valuation_index(&self, v: f64) -> Result<usize> {
        self.valuations
            .iter()
            .position(|x| (x - v).abs() <= GRID_TOL)
            .ok_or_else(|| Error::InvalidParameter(format!("valuation {v} not in the grid")))
    }

    /// Reward and constraint vector of every bid for one `(v, beta)` draw.
    pub fn realization(&self, v: f64, beta: f64) -> Result<RoundRealization> {
        let m = self.m();
        let mut f = Vec::with_capacity(self.bids.len());
        let mut g = Vec::with_capacity(self.bids.len() * m);
        for &b in &self.bids {
            let (reward, cost) = auction_outcome(v, b, beta, self.auction_type);
            f.push(reward);
            g.push(budget_constraint(cost, self.budget_per_round)?);
            if let Some(omega) = self.roi_target {
                g.push(roi_constraint(v, b, beta, omega));
            }
        }
        RoundRealization::from_flat(m, f, g)
    }

    pub fn environment(&self, horizon: usize, rng: ChaCha8Rng) -> Result<AuctionEnv<'_>> {
        self.validate()?;
        Ok(AuctionEnv {
            config: self,
            horizon,
            rng,
        })
    }

    /// Expected tables per valuation when both processes are stochastic.
    pub fn expected_tables(&self) -> Option<ExpectedTables> {
        let (vs, pv) = self.v_process.distribution()?;
        let (betas, pb) = self.beta_process.distribution()?;
        let n_v = self.valuations.len();
        let m = self.m();
        let mut weight = vec![0.0; n_v];
        for (v, p) in vs.iter().zip(&pv) {
            weight[self.valuation_index(*v).ok()?] += p;
        }
        let mut f = vec![vec![0.0; self.bids.len()]; n_v];
        let mut g = vec![vec![vec![0.0; m]; self.bids.len()]; n_v];
        for (vi, &v) in self.valuations.iter().enumerate() {
            for (beta, p) in betas.iter().zip(&pb) {
                let r = self.realization(v, *beta).ok()?;
                for b in 0..self.bids.len() {
                    f[vi][b] += p * r.f(b);
                    for (acc, gi) in g[vi][b].iter_mut().zip(r.g(b)) {
                        *acc += p * gi;
                    }
                }
            }
        }
        Some((weight, f, g))
    }

    /// Optimal expected per-round reward over valuation-to-bid-mixture
    /// policies subject to the expected constraints, and the largest uniform
    /// slack any such policy achieves. `None` unless both processes are
    /// stochastic.
    pub fn stochastic_baseline(&self) -> Option<AuctionBaseline> {
        let (weight, f, g) = self.expected_tables()?;
        let n_v = weight.len();
        let n_b = self.bids.len();
        let m = self.m();
        let nvar = n_v * n_b;
        let simplex_rows = |lp: &mut LinearProgram, width: usize| {
            for vi in 0..n_v {
                let mut row = vec![0.0; width];
                for b in 0..n_b {
                    row[vi * n_b + b] = 1.0;
                }
                lp.constraint(row, Relation::Eq, 1.0);
            }
        };

        let mut obj = vec![0.0; nvar];
        for vi in 0..n_v {
            for b in 0..n_b {
                obj[vi * n_b + b] = weight[vi] * f[vi][b];
            }
        }
        let mut lp = LinearProgram::maximize(obj);
        simplex_rows(&mut lp, nvar);
        for i in 0..m {
            let mut row = vec![0.0; nvar];
            for vi in 0..n_v {
                for b in 0..n_b {
                    row[vi * n_b + b] = weight[vi] * g[vi][b][i];
                }
            }
            lp.constraint(row, Relation::Le, 0.0);
        }
        let opt = match lp.solve() {
            LpOutcome::Optimal { value, .. } => value,
            _ => return None,
        };

        // max d' with d' = d + 2 >= 0, sum_v w_v xi_v . g_i <= -d.
        let shift = 2.0;
        let mut obj = vec![0.0; nvar + 1];
        obj[nvar] = 1.0;
        let mut lp = LinearProgram::maximize(obj);
        simplex_rows(&mut lp, nvar + 1);
        for i in 0..m {
            let mut row = vec![0.0; nvar + 1];
            for vi in 0..n_v {
                for b in 0..n_b {
                    row[vi * n_b + b] = weight[vi] * g[vi][b][i];
                }
            }
            row[nvar] = 1.0;
            lp.constraint(row, Relation::Le, shift);
        }
        let rho = match lp.solve() {
            LpOutcome::Optimal { value, .. } => value - shift,
            _ => return None,
        };
        Some(AuctionBaseline { opt, rho })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionBaseline {
    pub opt: f64,
    pub rho: f64,
}

/// Auction rounds for the meta-algorithm: the context is the valuation
/// index and the strategies are the bids.
#[derive(Debug, Clone)]
pub struct AuctionEnv<'a> {
    config: &'a AuctionConfig,
    horizon: usize,
    rng: ChaCha8Rng,
}

impl AuctionEnv<'_> {
    /// Draws `(v, beta)` for round `t`; valuation first.
    pub fn draw(&mut self, t: usize) -> (f64, f64) {
        let v = self.config.v_process.draw(t, &mut self.rng);
        let beta = self.config.beta_process.draw(t, &mut self.rng);
        (v, beta)
    }
}

impl Environment for AuctionEnv<'_> {
    fn num_strategies(&self) -> usize {
        self.config.bids.len()
    }

    fn num_constraints(&self) -> usize {
        self.config.m()
    }

    fn num_contexts(&self) -> usize {
        self.config.valuations.len()
    }

    fn reward_range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn next_round(&mut self, t: usize, _history: &[usize]) -> Result<Round> {
        if t == 0 || t > self.horizon {
            return Err(Error::Environment(format!("round {t} outside 1..={}", self.horizon)));
        }
        let (v, beta) = self.draw(t);
        Ok(Round {
            context: self.config.valuation_index(v)?,
            realization: self.config.realization(v, beta)?,
        })
    }
}

/// Bid index from the learner of valuation `v`.
pub fn policy_next<R: Rng + ?Sized>(
    bank: &mut PolicyBank,
    config: &AuctionConfig,
    v: f64,
    rng: &mut R,
) -> Result<usize> {
    bank.next_element(config.valuation_index(v)?, rng)
}

/// Bandit update of the learner of valuation `v` only.
pub fn policy_observe(
    bank: &mut PolicyBank,
    config: &AuctionConfig,
    v: f64,
    bid_index: usize,
    utility: f64,
) -> Result<()> {
    bank.observe_bandit(config.valuation_index(v)?, bid_index, utility)
}

//! Context-indexed banks of primal learners.
//!
//! A policy maps each context (an auction valuation, or the single trivial
//! context of a plain instance) to an arm. The bank keeps one independent
//! learner per context and only touches the one matching the round's context,
//! so the policy set is the product of the per-context arm sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rm::{regret_bound, BoundKind, FeedbackMode, RegretBoundSpec, RegretMinimizer, RmRange};

/// Shape of the primal decision space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimalShape {
    pub contexts: usize,
    pub arms: usize,
    pub feedback: FeedbackMode,
}

impl PrimalShape {
    pub fn single(arms: usize, feedback: FeedbackMode) -> Self {
        Self {
            contexts: 1,
            arms,
            feedback,
        }
    }

    /// One learner per context; the failure probability is split evenly
    /// across contexts (union bound).
    pub fn build(&self, range: RmRange, fail_prob: f64, horizon: usize) -> Result<PolicyBank> {
        if self.contexts == 0 {
            return Err(Error::InvalidDomain("policy bank needs a context".into()));
        }
        let per = fail_prob / self.contexts as f64;
        let learners = (0..self.contexts)
            .map(|_| RegretMinimizer::construct_primal(self.arms, range, per, self.feedback, horizon))
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicyBank {
            shape: *self,
            learners,
        })
    }

    fn member_spec(&self, range_width: f64, fail_prob: f64) -> RegretBoundSpec {
        RegretBoundSpec {
            kind: match self.feedback {
                FeedbackMode::Full => BoundKind::FullFeedback,
                FeedbackMode::Bandit => BoundKind::Bandit,
            },
            k: self.arms,
            range_width,
            fail_prob: fail_prob / self.contexts as f64,
        }
    }

    /// Composite regret bound of the bank for utilities of the given range
    /// width: the sum of the per-context bounds, each at the full horizon.
    pub fn regret_bound(&self, t: usize, range_width: f64, fail_prob: f64) -> f64 {
        self.contexts as f64 * regret_bound(&self.member_spec(range_width, fail_prob), t)
    }

    /// Bound for utilities in `[0, 1]`.
    pub fn unit_regret_bound(&self, t: usize, fail_prob: f64) -> f64 {
        self.regret_bound(t, 1.0, fail_prob)
    }
}

#[derive(Debug, Clone)]
pub struct PolicyBank {
    shape: PrimalShape,
    learners: Vec<RegretMinimizer>,
}

impl PolicyBank {
    pub fn shape(&self) -> PrimalShape {
        self.shape
    }

    pub fn feedback_mode(&self) -> FeedbackMode {
        self.shape.feedback
    }

    pub fn range(&self) -> RmRange {
        self.learners[0].range()
    }

    pub fn learner(&self, context: usize) -> Option<&RegretMinimizer> {
        self.learners.get(context)
    }

    fn learner_mut(&mut self, context: usize) -> Result<&mut RegretMinimizer> {
        let n = self.learners.len();
        self.learners
            .get_mut(context)
            .ok_or_else(|| Error::InvalidParameter(format!("context {context} out of {n}")))
    }

    pub fn next_element<R: Rng + ?Sized>(&mut self, context: usize, rng: &mut R) -> Result<usize> {
        self.learner_mut(context)?.next_element(rng)
    }

    pub fn observe_full(&mut self, context: usize, utilities: &[f64]) -> Result<()> {
        self.learner_mut(context)?.observe_full(utilities)
    }

    pub fn observe_bandit(&mut self, context: usize, chosen: usize, utility: f64) -> Result<()> {
        self.learner_mut(context)?.observe_bandit(chosen, utility)
    }

    pub fn regret_bound(&self, t: usize) -> f64 {
        self.learners.iter().map(|l| l.regret_bound(t)).sum()
    }
}

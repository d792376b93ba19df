//! Lagrangian of the constrained problem, the dual domains and one round of
//! the primal-dual game.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyBank;
use crate::rm::{FeedbackMode, RegretMinimizer, RmRange, RANGE_TOLERANCE};

/// `f - <lambda, g>`.
pub fn lagrangian_value(f_val: f64, g_vec: &[f64], lambda: &[f64]) -> Result<f64> {
    if g_vec.len() != lambda.len() {
        return Err(Error::Shape(format!(
            "constraint vector has {} entries, multipliers {}",
            g_vec.len(),
            lambda.len()
        )));
    }
    Ok(f_val - dot(lambda, g_vec))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DualDomainKind {
    /// The probability simplex over `m` coordinates.
    Simplex,
    /// `{lambda >= 0 : |lambda|_1 <= 1/q}`, held as `(1/q)` times the simplex
    /// over `m + 1` coordinates whose last coordinate is a slack dummy.
    Scaled { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualDomain {
    pub m: usize,
    pub kind: DualDomainKind,
}

impl DualDomain {
    pub fn simplex(m: usize) -> Result<Self> {
        let d = Self {
            m,
            kind: DualDomainKind::Simplex,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn scaled(m: usize, q: f64) -> Result<Self> {
        let d = Self {
            m,
            kind: DualDomainKind::Scaled { q },
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidDomain("need at least one constraint".into()));
        }
        if let DualDomainKind::Scaled { q } = self.kind {
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::InvalidDomain(format!("scale q = {q} must be positive")));
            }
        }
        Ok(())
    }

    /// Number of simplex coordinates the underlying learner works on.
    pub fn coordinates(&self) -> usize {
        match self.kind {
            DualDomainKind::Simplex => self.m,
            DualDomainKind::Scaled { .. } => self.m + 1,
        }
    }

    /// Largest attainable `|lambda|_1`.
    pub fn l1_bound(&self) -> f64 {
        match self.kind {
            DualDomainKind::Simplex => 1.0,
            DualDomainKind::Scaled { q } => 1.0 / q,
        }
    }

    /// Utility each internal coordinate receives when the dual maximizes
    /// `lambda -> <lambda, g>`. The dummy coordinate stands for `lambda = 0`.
    pub fn coordinate_utilities(&self, g: &[f64]) -> Vec<f64> {
        let scale = self.l1_bound();
        let mut u: Vec<f64> = g.iter().map(|gi| gi * scale).collect();
        if let DualDomainKind::Scaled { .. } = self.kind {
            u.push(0.0);
        }
        u
    }
}

/// Maps a point of the internal simplex to multipliers in the domain.
pub fn embed_dual(internal: &[f64], domain: &DualDomain) -> Vec<f64> {
    let scale = domain.l1_bound();
    internal[..domain.m].iter().map(|p| p * scale).collect()
}

/// Full-feedback dual player emitting multipliers in a [`DualDomain`].
#[derive(Debug, Clone)]
pub struct DualPlayer {
    domain: DualDomain,
    rm: RegretMinimizer,
}

impl DualPlayer {
    pub fn new(domain: DualDomain, range: RmRange, horizon: usize) -> Result<Self> {
        let rm = RegretMinimizer::construct_dual(&domain, range, horizon)?;
        Ok(Self { domain, rm })
    }

    pub fn domain(&self) -> &DualDomain {
        &self.domain
    }

    pub fn learner(&self) -> &RegretMinimizer {
        &self.rm
    }

    pub fn next_lambda(&self) -> Result<Vec<f64>> {
        Ok(embed_dual(&self.rm.current_point()?, &self.domain))
    }

    /// Observes `lambda -> <lambda, g>` over the whole domain.
    pub fn observe(&mut self, g_at_x: &[f64]) -> Result<()> {
        if g_at_x.len() != self.domain.m {
            return Err(Error::Shape(format!(
                "dual expects {} constraints, got {}",
                self.domain.m,
                g_at_x.len()
            )));
        }
        self.rm.observe_full(&self.domain.coordinate_utilities(g_at_x))
    }
}

/// Per-strategy reward and constraint values of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRealization {
    m: usize,
    f_values: Vec<f64>,
    /// Strategy-major, `m` entries per strategy.
    g_values: Vec<f64>,
}

impl RoundRealization {
    pub fn new(f_values: Vec<f64>, g_rows: &[Vec<f64>]) -> Result<Self> {
        if f_values.len() != g_rows.len() || f_values.is_empty() {
            return Err(Error::Shape(format!(
                "{} rewards for {} constraint rows",
                f_values.len(),
                g_rows.len()
            )));
        }
        let m = g_rows[0].len();
        let mut g_values = Vec::with_capacity(m * g_rows.len());
        for row in g_rows {
            if row.len() != m {
                return Err(Error::Shape("ragged constraint table".into()));
            }
            g_values.extend_from_slice(row);
        }
        Self::from_flat(m, f_values, g_values)
    }

    pub fn from_flat(m: usize, f_values: Vec<f64>, g_values: Vec<f64>) -> Result<Self> {
        if m == 0 || g_values.len() != m * f_values.len() {
            return Err(Error::Shape("constraint table does not match strategies".into()));
        }
        if let Some(bad) = g_values.iter().find(|g| !(g.abs() <= 1.0)) {
            return Err(Error::RangeViolation {
                value: *bad,
                lo: -1.0,
                hi: 1.0,
            });
        }
        if let Some(bad) = f_values.iter().find(|f| !f.is_finite()) {
            return Err(Error::RangeViolation {
                value: *bad,
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            });
        }
        Ok(Self {
            m,
            f_values,
            g_values,
        })
    }

    pub fn num_strategies(&self) -> usize {
        self.f_values.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn f(&self, x: usize) -> f64 {
        self.f_values[x]
    }

    pub fn g(&self, x: usize) -> &[f64] {
        &self.g_values[x * self.m..(x + 1) * self.m]
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianRoundResult {
    pub x_index: usize,
    pub lambda: Vec<f64>,
    pub f_at_x: f64,
    pub g_at_x: Vec<f64>,
    pub primal_utility: f64,
    pub dual_utility: f64,
}

/// One round of the Lagrangian game.
///
/// The primal receives `x -> v f(x) - <lambda, g(x)>` (the whole function in
/// full feedback, only its value at the played strategy in bandit feedback);
/// the dual always receives the full linear function `lambda -> <lambda, g(x_t)>`
/// and ascends on it.
pub fn play_round<R: Rng + ?Sized>(
    primal: &mut PolicyBank,
    dual: &mut DualPlayer,
    context: usize,
    realization: &RoundRealization,
    v: f64,
    rng: &mut R,
) -> Result<LagrangianRoundResult> {
    if realization.m() != dual.domain().m {
        return Err(Error::Shape(format!(
            "realization has {} constraints, dual {}",
            realization.m(),
            dual.domain().m
        )));
    }
    let x = primal.next_element(context, rng)?;
    if x >= realization.num_strategies() {
        return Err(Error::Shape(format!(
            "strategy {x} outside realization of {}",
            realization.num_strategies()
        )));
    }
    let lambda = dual.next_lambda()?;
    let range = primal.range();
    let utility = |s: usize| -> Result<f64> {
        let u = v * realization.f(s) - dot(&lambda, realization.g(s));
        range.normalize(u)?;
        Ok(u.clamp(range.lo() - RANGE_TOLERANCE, range.hi() + RANGE_TOLERANCE))
    };
    let primal_utility = utility(x)?;
    match primal.feedback_mode() {
        FeedbackMode::Full => {
            let all = (0..realization.num_strategies())
                .map(utility)
                .collect::<Result<Vec<_>>>()?;
            primal.observe_full(context, &all)?;
        }
        FeedbackMode::Bandit => primal.observe_bandit(context, x, primal_utility)?,
    }
    let g_at_x = realization.g(x).to_vec();
    dual.observe(&g_at_x)?;
    Ok(LagrangianRoundResult {
        x_index: x,
        dual_utility: dot(&lambda, &g_at_x),
        lambda,
        f_at_x: realization.f(x),
        g_at_x,
        primal_utility,
    })
}

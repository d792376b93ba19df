//! Finite instances: stochastic, scripted-adversarial and mixed generation of
//! per-round reward and constraint tables, plus their baseline averages.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::RoundRealization;
use crate::rm::sample_index;

/// One round as seen by the algorithm: the context revealed before acting
/// and the values of every strategy.
#[derive(Debug, Clone)]
pub struct Round {
    pub context: usize,
    pub realization: RoundRealization,
}

/// Source of rounds consumed by the meta-algorithm. Rounds are 1-indexed and
/// must not depend on the action taken in the same round; `history` holds the
/// strategies played in earlier rounds.
pub trait Environment {
    fn num_strategies(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn num_contexts(&self) -> usize {
        1
    }
    /// Range of the reward values.
    fn reward_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn horizon(&self) -> usize;
    fn next_round(&mut self, t: usize, history: &[usize]) -> Result<Round>;
}

/// Reward and constraint tables of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub f: Vec<f64>,
    /// `g[x][i]`: constraint `i` at strategy `x`.
    pub g: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryRule {
    /// Pick the scenario whose constraints hurt the most-played past strategy
    /// the most. Scenario 0 on an empty history.
    PunishMostPlayed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversarySpec {
    /// Scenario index for each round `1..=len`.
    FixedSequence { indices: Vec<usize> },
    /// Scenario `pattern[(t - 1) % len]`.
    Periodic { pattern: Vec<usize> },
    /// `first` for rounds `1..=k`, `second` afterwards.
    PhaseShift { first: usize, second: usize, k: usize },
    HistoryRule { rule: HistoryRule },
}

impl AdversarySpec {
    /// Scenario played at round `t` (1-indexed).
    pub fn scenario_at(&self, t: usize, history: &[usize], scenarios: &[Scenario]) -> Result<usize> {
        if t == 0 {
            return Err(Error::Environment("rounds are 1-indexed".into()));
        }
        match self {
            AdversarySpec::FixedSequence { indices } => indices.get(t - 1).copied().ok_or_else(|| {
                Error::Environment(format!("round {t} beyond scripted sequence of {}", indices.len()))
            }),
            AdversarySpec::Periodic { pattern } => Ok(pattern[(t - 1) % pattern.len()]),
            AdversarySpec::PhaseShift { first, second, k } => Ok(if t <= *k { *first } else { *second }),
            AdversarySpec::HistoryRule {
                rule: HistoryRule::PunishMostPlayed,
            } => Ok(punish_most_played(history, scenarios)),
        }
    }

    /// Scenario indices for rounds `1..=horizon` when they do not depend on
    /// play.
    pub fn oblivious_sequence(&self, horizon: usize) -> Result<Vec<usize>> {
        if let AdversarySpec::HistoryRule { .. } = self {
            return Err(Error::Unsupported(
                "history-dependent adversaries have no play-independent baseline".into(),
            ));
        }
        (1..=horizon).map(|t| self.scenario_at(t, &[], &[])).collect()
    }

    fn referenced(&self) -> Vec<usize> {
        match self {
            AdversarySpec::FixedSequence { indices } => indices.clone(),
            AdversarySpec::Periodic { pattern } => pattern.clone(),
            AdversarySpec::PhaseShift { first, second, .. } => vec![*first, *second],
            AdversarySpec::HistoryRule { .. } => Vec::new(),
        }
    }
}

fn punish_most_played(history: &[usize], scenarios: &[Scenario]) -> usize {
    if history.is_empty() {
        return 0;
    }
    let n = scenarios[0].f.len();
    let mut counts = vec![0usize; n];
    for &x in history {
        counts[x] += 1;
    }
    // Lowest index wins ties, both for the mode and for the scenario.
    let modal = (0..n).fold(0, |best, x| if counts[x] > counts[best] { x } else { best });
    let worst = |s: &Scenario| s.g[modal].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..scenarios.len()).fold(0, |best, s| {
        if worst(&scenarios[s]) > worst(&scenarios[best]) {
            s
        } else {
            best
        }
    })
}

/// How one of the two tables (reward or constraints) is generated in a mixed
/// instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Stochastic { probs: Vec<f64> },
    Scripted { script: AdversarySpec },
}

impl Source {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Source::Stochastic { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenerationMode {
    /// Scenario drawn i.i.d. each round; reward and constraints come jointly.
    Stochastic { probs: Vec<f64> },
    /// Scenario chosen by a script; reward and constraints come jointly.
    Adversarial { script: AdversarySpec },
    /// Reward table and constraint table chosen independently.
    Mixed { reward: Source, constraints: Source },
}

impl GenerationMode {
    fn reward_source(&self) -> Source {
        match self {
            GenerationMode::Stochastic { probs } => Source::Stochastic { probs: probs.clone() },
            GenerationMode::Adversarial { script } => Source::Scripted {
                script: script.clone(),
            },
            GenerationMode::Mixed { reward, .. } => reward.clone(),
        }
    }

    fn constraint_source(&self) -> Source {
        match self {
            GenerationMode::Mixed { constraints, .. } => constraints.clone(),
            other => other.reward_source(),
        }
    }
}

/// Whether rewards and constraints are stochastic or adversarial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regime {
    pub stochastic_rewards: bool,
    pub stochastic_constraints: bool,
}

/// Per-strategy baseline averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFunctions {
    pub f_bar: Vec<f64>,
    pub g_bar: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct InstanceSpec {
    strategy_labels: Vec<String>,
    m: usize,
    scenarios: Vec<Scenario>,
    mode: GenerationMode,
}

/// On-disk layout of an instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    strategies: Vec<String>,
    m: usize,
    scenarios: Vec<Scenario>,
    mode: ModeTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    script: Option<AdversarySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward_source: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constraint_source: Option<Source>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeTag {
    Stochastic,
    Adversarial,
    Mixed,
}

impl TryFrom<InstanceFile> for InstanceSpec {
    type Error = Error;

    fn try_from(file: InstanceFile) -> Result<Self> {
        let mode = match file.mode {
            ModeTag::Stochastic => GenerationMode::Stochastic {
                probs: file
                    .probs
                    .ok_or_else(|| Error::validation("instance", "stochastic mode needs `probs`"))?,
            },
            ModeTag::Adversarial => GenerationMode::Adversarial {
                script: file
                    .script
                    .ok_or_else(|| Error::validation("instance", "adversarial mode needs `script`"))?,
            },
            ModeTag::Mixed => GenerationMode::Mixed {
                reward: file
                    .reward_source
                    .ok_or_else(|| Error::validation("instance", "mixed mode needs `reward_source`"))?,
                constraints: file.constraint_source.ok_or_else(|| {
                    Error::validation("instance", "mixed mode needs `constraint_source`")
                })?,
            },
        };
        InstanceSpec::new(file.strategies, file.m, file.scenarios, mode)
    }
}

impl From<InstanceSpec> for InstanceFile {
    fn from(spec: InstanceSpec) -> Self {
        let mut file = InstanceFile {
            strategies: spec.strategy_labels,
            m: spec.m,
            scenarios: spec.scenarios,
            mode: ModeTag::Stochastic,
            probs: None,
            script: None,
            reward_source: None,
            constraint_source: None,
        };
        match spec.mode {
            GenerationMode::Stochastic { probs } => file.probs = Some(probs),
            GenerationMode::Adversarial { script } => {
                file.mode = ModeTag::Adversarial;
                file.script = Some(script);
            }
            GenerationMode::Mixed {
                reward,
                constraints,
            } => {
                file.mode = ModeTag::Mixed;
                file.reward_source = Some(reward);
                file.constraint_source = Some(constraints);
            }
        }
        file
    }
}

fn validate_probs(probs: &[f64], n: usize, at: &str) -> Result<()> {
    if probs.len() != n {
        return Err(Error::validation(at, format!("{} probabilities for {n} scenarios", probs.len())));
    }
    for (i, p) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::validation(format!("{at}[{i}]"), format!("probability {p} outside [0, 1]")));
        }
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::validation(at, format!("probabilities sum to {total}")));
    }
    Ok(())
}

fn validate_script(script: &AdversarySpec, n: usize, at: &str) -> Result<()> {
    if let AdversarySpec::Periodic { pattern } = script {
        if pattern.is_empty() {
            return Err(Error::validation(at, "empty periodic pattern"));
        }
    }
    if let AdversarySpec::FixedSequence { indices } = script {
        if indices.is_empty() {
            return Err(Error::validation(at, "empty fixed sequence"));
        }
    }
    if let Some(bad) = script.referenced().into_iter().find(|&s| s >= n) {
        return Err(Error::validation(at, format!("scenario {bad} does not exist ({n} defined)")));
    }
    Ok(())
}

fn validate_source(source: &Source, n: usize, at: &str) -> Result<()> {
    match source {
        Source::Stochastic { probs } => validate_probs(probs, n, &format!("{at}.probs")),
        Source::Scripted { script } => validate_script(script, n, &format!("{at}.script")),
    }
}

impl InstanceSpec {
    pub fn new(
        strategy_labels: Vec<String>,
        m: usize,
        scenarios: Vec<Scenario>,
        mode: GenerationMode,
    ) -> Result<Self> {
        let k = strategy_labels.len();
        if k == 0 {
            return Err(Error::validation("strategies", "need at least one strategy"));
        }
        if m == 0 {
            return Err(Error::validation("m", "need at least one constraint"));
        }
        if scenarios.is_empty() {
            return Err(Error::validation("scenarios", "need at least one scenario"));
        }
        for (s, sc) in scenarios.iter().enumerate() {
            if sc.f.len() != k {
                return Err(Error::validation(
                    format!("scenarios[{s}].f"),
                    format!("{} entries for {k} strategies", sc.f.len()),
                ));
            }
            if sc.g.len() != k {
                return Err(Error::validation(
                    format!("scenarios[{s}].g"),
                    format!("{} rows for {k} strategies", sc.g.len()),
                ));
            }
            for (x, f) in sc.f.iter().enumerate() {
                if !(0.0..=1.0).contains(f) {
                    return Err(Error::validation(
                        format!("scenarios[{s}].f[{x}]"),
                        format!("reward {f} outside [0, 1]"),
                    ));
                }
            }
            for (x, row) in sc.g.iter().enumerate() {
                if row.len() != m {
                    return Err(Error::validation(
                        format!("scenarios[{s}].g[{x}]"),
                        format!("{} entries for m = {m}", row.len()),
                    ));
                }
                for (i, g) in row.iter().enumerate() {
                    if !(-1.0..=1.0).contains(g) {
                        return Err(Error::validation(
                            format!("scenarios[{s}].g[{x}][{i}]"),
                            format!("constraint {g} outside [-1, 1]"),
                        ));
                    }
                }
            }
        }
        let n = scenarios.len();
        match &mode {
            GenerationMode::Stochastic { probs } => validate_probs(probs, n, "probs")?,
            GenerationMode::Adversarial { script } => validate_script(script, n, "script")?,
            GenerationMode::Mixed {
                reward,
                constraints,
            } => {
                validate_source(reward, n, "reward_source")?;
                validate_source(constraints, n, "constraint_source")?;
            }
        }
        Ok(Self {
            strategy_labels,
            m,
            scenarios,
            mode,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| {
            // Validation failures surface through serde as custom errors.
            Error::Json {
                path: "<instance>".into(),
                source,
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn strategy_labels(&self) -> &[String] {
        &self.strategy_labels
    }

    pub fn num_strategies(&self) -> usize {
        self.strategy_labels.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn mode(&self) -> &GenerationMode {
        &self.mode
    }

    pub fn regime(&self) -> Regime {
        Regime {
            stochastic_rewards: self.mode.reward_source().is_stochastic(),
            stochastic_constraints: self.mode.constraint_source().is_stochastic(),
        }
    }

    fn realization(&self, reward_scenario: usize, constraint_scenario: usize) -> RoundRealization {
        RoundRealization::new(
            self.scenarios[reward_scenario].f.clone(),
            &self.scenarios[constraint_scenario].g,
        )
        .expect("validated at construction")
    }

    /// Draws a scenario from the declared probabilities.
    pub fn sample_round<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RoundRealization> {
        let GenerationMode::Stochastic { probs } = &self.mode else {
            return Err(Error::Unsupported("sample_round needs a stochastic instance".into()));
        };
        let s = sample_index(probs, rng);
        Ok(self.realization(s, s))
    }

    /// Scripted round `t` (1-indexed) given the strategies played so far.
    pub fn adversarial_round(&self, t: usize, history: &[usize]) -> Result<RoundRealization> {
        let GenerationMode::Adversarial { script } = &self.mode else {
            return Err(Error::Unsupported("adversarial_round needs an adversarial instance".into()));
        };
        let s = script.scenario_at(t, history, &self.scenarios)?;
        Ok(self.realization(s, s))
    }

    fn draw<R: Rng + ?Sized>(&self, source: &Source, t: usize, history: &[usize], rng: &mut R) -> Result<usize> {
        match source {
            Source::Stochastic { probs } => Ok(sample_index(probs, rng)),
            Source::Scripted { script } => script.scenario_at(t, history, &self.scenarios),
        }
    }

    /// Round `t` in any mode.
    pub fn round<R: Rng + ?Sized>(&self, t: usize, history: &[usize], rng: &mut R) -> Result<RoundRealization> {
        match &self.mode {
            GenerationMode::Stochastic { .. } => self.sample_round(rng),
            GenerationMode::Adversarial { .. } => self.adversarial_round(t, history),
            GenerationMode::Mixed {
                reward,
                constraints,
            } => {
                let a = self.draw(reward, t, history, rng)?;
                let b = self.draw(constraints, t, history, rng)?;
                Ok(self.realization(a, b))
            }
        }
    }

    /// Weighted average of the scenario tables (probabilities or the
    /// empirical frequencies of a script over `horizon` rounds).
    fn source_weights(&self, source: &Source, horizon: usize) -> Result<Vec<f64>> {
        match source {
            Source::Stochastic { probs } => Ok(probs.clone()),
            Source::Scripted { script } => {
                if horizon == 0 {
                    return Err(Error::InvalidParameter("baseline over zero rounds".into()));
                }
                let mut w = vec![0.0; self.scenarios.len()];
                for s in script.oblivious_sequence(horizon)? {
                    w[s] += 1.0;
                }
                Ok(w.into_iter().map(|c| c / horizon as f64).collect())
            }
        }
    }

    /// Baseline functions `f_bar`, `g_bar` over `horizon` rounds.
    pub fn mean_functions(&self, horizon: usize) -> Result<MeanFunctions> {
        let wf = self.source_weights(&self.mode.reward_source(), horizon)?;
        let wg = self.source_weights(&self.mode.constraint_source(), horizon)?;
        let k = self.num_strategies();
        let mut f_bar = vec![0.0; k];
        let mut g_bar = vec![vec![0.0; self.m]; k];
        for (s, sc) in self.scenarios.iter().enumerate() {
            for x in 0..k {
                f_bar[x] += wf[s] * sc.f[x];
                for i in 0..self.m {
                    g_bar[x][i] += wg[s] * sc.g[x][i];
                }
            }
        }
        Ok(MeanFunctions { f_bar, g_bar })
    }

    /// Distinct constraint tables an oblivious constraint script uses over
    /// `horizon` rounds.
    pub fn scripted_constraint_tables(&self, horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let Source::Scripted { script } = self.mode.constraint_source() else {
            return Err(Error::Unsupported("constraints are stochastic".into()));
        };
        let used: BTreeSet<usize> = script.oblivious_sequence(horizon)?.into_iter().collect();
        Ok(used.into_iter().map(|s| self.scenarios[s].g.clone()).collect())
    }

    pub fn environment(&self, horizon: usize, rng: ChaCha8Rng) -> InstanceEnv<'_> {
        InstanceEnv {
            spec: self,
            horizon,
            rng,
        }
    }
}

/// An [`InstanceSpec`] bound to a horizon and its own random stream.
#[derive(Debug, Clone)]
pub struct InstanceEnv<'a> {
    spec: &'a InstanceSpec,
    horizon: usize,
    rng: ChaCha8Rng,
}

impl Environment for InstanceEnv<'_> {
    fn num_strategies(&self) -> usize {
        self.spec.num_strategies()
    }

    fn num_constraints(&self) -> usize {
        self.spec.m
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn next_round(&mut self, t: usize, history: &[usize]) -> Result<Round> {
        if t == 0 || t > self.horizon {
            return Err(Error::Environment(format!(
                "round {t} outside horizon {}",
                self.horizon
            )));
        }
        Ok(Round {
            context: 0,
            realization: self.spec.round(t, history, &mut self.rng)?,
        })
    }
}

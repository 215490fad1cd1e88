//! Scalar training objectives over pre-computed log-probabilities.
//!
//! Nothing here touches a model: every function maps plain numbers (token
//! log-probs, masks, rewards) to a loss or objective value, so the math can
//! be tested exactly and reused by any trainer. Conventions:
//!
//! * token log-probs are finite and `<= 0`;
//! * masks mark supervised tokens; unmasked positions never contribute;
//! * sequence-level log-probs are masked sums over tokens;
//! * losses are minimized, the group objective is maximized.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("values and mask must have equal length ({values} vs {mask})")]
    LengthMismatch { values: usize, mask: usize },
    #[error("log-probabilities must be finite and <= 0, got {0}")]
    InvalidLogProb(f64),
    #[error("value must be finite, got {0}")]
    NotFinite(f64),
    #[error("no supervised tokens under the mask")]
    NoSupervisedTokens,
    #[error("beta must be > 0, got {0}")]
    BadBeta(f64),
    #[error("lambda must be >= 0, got {0}")]
    BadLambda(f64),
    #[error("input must be non-empty")]
    Empty,
    #[error("group sizes disagree: {rewards} rewards vs {trajectories} trajectories")]
    GroupMismatch { rewards: usize, trajectories: usize },
    #[error("policy and reference log-probs must share length and mask")]
    MisalignedPair,
    #[error("fixture error: {0}")]
    Fixture(String),
}

/// Per-token log-probabilities with a supervision mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbs {
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl TokenLogProbs {
    pub fn new(values: Vec<f64>, mask: Vec<bool>) -> Result<Self, TrainError> {
        if values.len() != mask.len() {
            return Err(TrainError::LengthMismatch {
                values: values.len(),
                mask: mask.len(),
            });
        }
        for &v in &values {
            if !v.is_finite() || v > 0.0 {
                return Err(TrainError::InvalidLogProb(v));
            }
        }
        Ok(TokenLogProbs { values, mask })
    }

    /// Convenience constructor supervising every token.
    pub fn dense(values: Vec<f64>) -> Result<Self, TrainError> {
        let mask = vec![true; values.len()];
        Self::new(values, mask)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of log-probs over supervised tokens.
    pub fn masked_sum(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v)
            .sum()
    }

    pub fn supervised_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Sequence-level log-probs for one preference comparison. Values are summed
/// token log-probs, so chosen-side NLL is simply `-policy_chosen`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub policy_chosen: f64,
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl PreferencePair {
    pub fn new(
        policy_chosen: f64,
        policy_rejected: f64,
        ref_chosen: f64,
        ref_rejected: f64,
    ) -> Result<Self, TrainError> {
        for v in [policy_chosen, policy_rejected, ref_chosen, ref_rejected] {
            if !v.is_finite() {
                return Err(TrainError::NotFinite(v));
            }
        }
        Ok(PreferencePair {
            policy_chosen,
            policy_rejected,
            ref_chosen,
            ref_rejected,
        })
    }
}

/// Policy and frozen-reference log-probs for the same sampled tokens. The
/// two sides must agree on length and supervision mask — they describe the
/// same sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTokens {
    pub policy: TokenLogProbs,
    pub reference: TokenLogProbs,
}

impl TrajectoryTokens {
    pub fn new(policy: TokenLogProbs, reference: TokenLogProbs) -> Result<Self, TrainError> {
        if policy.len() != reference.len() || policy.mask() != reference.mask() {
            return Err(TrainError::MisalignedPair);
        }
        Ok(TrajectoryTokens { policy, reference })
    }
}

/// A group of rollouts for the same task, scored together.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub rewards: Vec<f64>,
    pub trajectories: Vec<TrajectoryTokens>,
}

impl RolloutGroup {
    pub fn new(rewards: Vec<f64>, trajectories: Vec<TrajectoryTokens>) -> Result<Self, TrainError> {
        if rewards.is_empty() {
            return Err(TrainError::Empty);
        }
        if rewards.len() != trajectories.len() {
            return Err(TrainError::GroupMismatch {
                rewards: rewards.len(),
                trajectories: trajectories.len(),
            });
        }
        for &r in &rewards {
            if !r.is_finite() {
                return Err(TrainError::NotFinite(r));
            }
        }
        Ok(RolloutGroup {
            rewards,
            trajectories,
        })
    }
}

/// Coefficients shared by the objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    /// Preference temperature in the paired losses.
    pub beta: f64,
    /// Weight of the chosen-side NLL anchor in the combined pairwise loss.
    pub lambda: f64,
    /// Reward granted for a correct outcome.
    pub alpha_correct: f64,
    /// Reward deducted for a format violation.
    pub alpha_format: f64,
    /// Baseline KL coefficient.
    pub beta_base: f64,
    /// Extra KL applied to low-confidence tokens on negative-advantage
    /// rollouts.
    pub beta_entropy: f64,
    /// Log-prob threshold below which a token counts as low-confidence.
    pub tau: f64,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        ObjectiveParams {
            beta: 0.1,
            lambda: 1.0,
            alpha_correct: 1.0,
            alpha_format: 0.5,
            beta_base: 0.01,
            beta_entropy: 0.1,
            tau: -5.0,
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean over sequences of the negative masked log-prob sum. Errors when the
/// masks supervise nothing at all.
pub fn nll_loss(sequences: &[TokenLogProbs]) -> Result<f64, TrainError> {
    if sequences.is_empty() {
        return Err(TrainError::Empty);
    }
    let supervised: usize = sequences.iter().map(TokenLogProbs::supervised_count).sum();
    if supervised == 0 {
        return Err(TrainError::NoSupervisedTokens);
    }
    let total: f64 = sequences.iter().map(|s| -s.masked_sum()).sum();
    Ok(total / sequences.len() as f64)
}

/// Pairwise preference loss:
/// `-ln(sigmoid(beta * ((policy margin) - (reference margin))))` where each
/// margin is `chosen - rejected`. Computed as a stable softplus; always
/// strictly positive, and exactly `ln 2` when the margins cancel.
pub fn dpo_loss(pair: &PreferencePair, beta: f64) -> Result<f64, TrainError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(TrainError::BadBeta(beta));
    }
    let policy_margin = pair.policy_chosen - pair.policy_rejected;
    let reference_margin = pair.ref_chosen - pair.ref_rejected;
    let x = beta * (policy_margin - reference_margin);
    Ok(softplus(-x))
}

/// Preference loss anchored by the chosen sequence's NLL:
/// `dpo_loss + lambda * (-policy_chosen)`. The anchor keeps probability mass
/// on the preferred trajectory instead of merely widening the margin.
pub fn po_loss(pair: &PreferencePair, params: &ObjectiveParams) -> Result<f64, TrainError> {
    if !(params.lambda >= 0.0) || !params.lambda.is_finite() {
        return Err(TrainError::BadLambda(params.lambda));
    }
    Ok(dpo_loss(pair, params.beta)? + params.lambda * (-pair.policy_chosen))
}

/// Outcome reward: `alpha_correct` for a correct answer minus `alpha_format`
/// for a format violation.
pub fn reward(correct: bool, format_violation: bool, params: &ObjectiveParams) -> f64 {
    params.alpha_correct * f64::from(correct) - params.alpha_format * f64::from(format_violation)
}

/// Group-relative advantages: each reward minus the group mean. No variance
/// normalization — a deliberately plain baseline.
pub fn advantages(rewards: &[f64]) -> Result<Vec<f64>, TrainError> {
    if rewards.is_empty() {
        return Err(TrainError::Empty);
    }
    for &r in rewards {
        if !r.is_finite() {
            return Err(TrainError::NotFinite(r));
        }
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Per-token KL coefficient: the baseline everywhere, plus the entropy
/// surcharge on low-confidence tokens (`log-prob < tau`) of rollouts with
/// negative advantage. Penalizing only those tokens discourages wild
/// exploration precisely where the group already judged the rollout bad.
pub fn kl_coefficient(advantage: f64, policy_logprob: f64, params: &ObjectiveParams) -> f64 {
    let low_confidence = advantage < 0.0 && policy_logprob < params.tau;
    params.beta_base + params.beta_entropy * f64::from(low_confidence)
}

/// Group-relative policy objective (maximized):
/// mean over rollouts of `advantage * sum(policy log-probs)` minus the
/// per-token KL penalty `kl_coefficient * (policy - reference)` summed over
/// supervised tokens.
pub fn grpo_objective(group: &RolloutGroup, params: &ObjectiveParams) -> Result<f64, TrainError> {
    let advs = advantages(&group.rewards)?;
    let mut total = 0.0;
    for (adv, traj) in advs.iter().zip(&group.trajectories) {
        let policy_term = adv * traj.policy.masked_sum();
        let mut kl_term = 0.0;
        for ((&p, &r), &m) in traj
            .policy
            .values()
            .iter()
            .zip(traj.reference.values())
            .zip(traj.policy.mask())
        {
            if !m {
                continue;
            }
            kl_term += kl_coefficient(*adv, p, params) * (p - r);
        }
        total += policy_term - kl_term;
    }
    Ok(total / group.trajectories.len() as f64)
}

/// One task in the rollout queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutTask {
    pub task_id: String,
    /// Scheduler epochs this task has waited.
    pub age: u32,
    /// Rollouts already attempted for it.
    pub attempts: u32,
}

/// Priority order for rollout scheduling: oldest first, then most-attempted,
/// then task id. The full key makes the order a total one, so any
/// permutation of the same tasks schedules identically.
pub fn schedule_rollouts(mut tasks: Vec<RolloutTask>) -> Vec<RolloutTask> {
    tasks.sort_by(|a, b| {
        b.age
            .cmp(&a.age)
            .then(b.attempts.cmp(&a.attempts))
            .then(a.task_id.cmp(&b.task_id))
    });
    tasks
}

// --- offline fixture evaluation -------------------------------------------

/// One line of an objective fixture file (JSON Lines). Fields are optional;
/// each op validates that what it needs is present.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FixtureLine {
    #[serde(default)]
    pub rewards: Vec<f64>,
    #[serde(default)]
    pub policy_logprobs: Vec<Vec<f64>>,
    #[serde(default)]
    pub ref_logprobs: Vec<Vec<f64>>,
    #[serde(default)]
    pub masks: Vec<Vec<u8>>,
    #[serde(default)]
    pub pairs: Vec<PreferencePair>,
    #[serde(default)]
    pub outcomes: Vec<OutcomeRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub correct: bool,
    #[serde(default)]
    pub format_violation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveOp {
    Nll,
    Dpo,
    Po,
    Reward,
    Advantages,
    Grpo,
}

impl std::str::FromStr for ObjectiveOp {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nll" => Ok(ObjectiveOp::Nll),
            "dpo" => Ok(ObjectiveOp::Dpo),
            "po" => Ok(ObjectiveOp::Po),
            "reward" => Ok(ObjectiveOp::Reward),
            "advantages" => Ok(ObjectiveOp::Advantages),
            "grpo" => Ok(ObjectiveOp::Grpo),
            other => Err(TrainError::Fixture(format!("unknown op '{other}'"))),
        }
    }
}

/// A computed fixture value: scalar for the losses, vector for advantages.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum FixtureEval {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl FixtureLine {
    fn sequences(&self) -> Result<Vec<TokenLogProbs>, TrainError> {
        if self.policy_logprobs.len() != self.masks.len() {
            return Err(TrainError::Fixture(format!(
                "{} logprob rows vs {} mask rows",
                self.policy_logprobs.len(),
                self.masks.len()
            )));
        }
        self.policy_logprobs
            .iter()
            .zip(&self.masks)
            .map(|(values, mask)| {
                TokenLogProbs::new(values.clone(), mask.iter().map(|&m| m != 0).collect())
            })
            .collect()
    }

    fn group(&self) -> Result<RolloutGroup, TrainError> {
        if self.ref_logprobs.len() != self.policy_logprobs.len() {
            return Err(TrainError::Fixture(format!(
                "{} policy rows vs {} reference rows",
                self.policy_logprobs.len(),
                self.ref_logprobs.len()
            )));
        }
        let policies = self.sequences()?;
        let trajectories: Result<Vec<TrajectoryTokens>, TrainError> = policies
            .into_iter()
            .zip(&self.ref_logprobs)
            .map(|(policy, ref_values)| {
                let reference =
                    TokenLogProbs::new(ref_values.clone(), policy.mask().to_vec())?;
                TrajectoryTokens::new(policy, reference)
            })
            .collect();
        RolloutGroup::new(self.effective_rewards()?, trajectories?)
    }

    /// Rewards taken from explicit `rewards`, or derived from `outcomes`.
    fn effective_rewards(&self) -> Result<Vec<f64>, TrainError> {
        if !self.rewards.is_empty() {
            return Ok(self.rewards.clone());
        }
        if self.outcomes.is_empty() {
            return Err(TrainError::Fixture(
                "line has neither rewards nor outcomes".into(),
            ));
        }
        let params = ObjectiveParams::default();
        Ok(self
            .outcomes
            .iter()
            .map(|o| reward(o.correct, o.format_violation, &params))
            .collect())
    }
}

/// Evaluates one fixture line under one op.
pub fn evaluate_fixture_line(
    line: &FixtureLine,
    op: ObjectiveOp,
    params: &ObjectiveParams,
) -> Result<FixtureEval, TrainError> {
    match op {
        ObjectiveOp::Nll => Ok(FixtureEval::Scalar(nll_loss(&line.sequences()?)?)),
        ObjectiveOp::Dpo => {
            if line.pairs.is_empty() {
                return Err(TrainError::Empty);
            }
            let total: Result<f64, TrainError> =
                line.pairs.iter().map(|p| dpo_loss(p, params.beta)).sum();
            Ok(FixtureEval::Scalar(total? / line.pairs.len() as f64))
        }
        ObjectiveOp::Po => {
            if line.pairs.is_empty() {
                return Err(TrainError::Empty);
            }
            let total: Result<f64, TrainError> =
                line.pairs.iter().map(|p| po_loss(p, params)).sum();
            Ok(FixtureEval::Scalar(total? / line.pairs.len() as f64))
        }
        ObjectiveOp::Reward => {
            let rewards = line.effective_rewards()?;
            if rewards.is_empty() {
                return Err(TrainError::Empty);
            }
            Ok(FixtureEval::Scalar(
                rewards.iter().sum::<f64>() / rewards.len() as f64,
            ))
        }
        ObjectiveOp::Advantages => Ok(FixtureEval::Vector(advantages(
            &line.effective_rewards()?,
        )?)),
        ObjectiveOp::Grpo => Ok(FixtureEval::Scalar(grpo_objective(&line.group()?, params)?)),
    }
}

/// Loads a JSON Lines fixture file, skipping blank lines.
pub fn load_fixture(path: &std::path::Path) -> Result<Vec<FixtureLine>, TrainError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TrainError::Fixture(format!("{}: {e}", path.display())))?;
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: FixtureLine = serde_json::from_str(raw)
            .map_err(|e| TrainError::Fixture(format!("line {}: {e}", i + 1)))?;
        lines.push(line);
    }
    if lines.is_empty() {
        return Err(TrainError::Fixture("fixture file is empty".into()));
    }
    Ok(lines)
}

//! Linear action-value agents trained by every-visit Monte Carlo control.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{FeatureSet, FeatureVector, FEATURE_SCHEMA_VERSION};

/// Format tag of persisted policy records.
pub const POLICY_FORMAT: &str = "mddm-policy/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub total_training_dialogues: usize,
    pub eval_dialogues_per_point: usize,
    pub checkpoint_interval: usize,
    pub runs: usize,
    pub error_rate: f64,
    pub max_system_turns: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            gamma: 0.95,
            alpha: 0.001,
            epsilon_start: 0.4,
            epsilon_end: 0.0,
            total_training_dialogues: 40_000,
            eval_dialogues_per_point: 3000,
            checkpoint_interval: 5000,
            runs: 10,
            error_rate: 0.2,
            max_system_turns: 30,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad("require 0 <= epsilon_end <= epsilon_start <= 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("require 0 < gamma <= 1");
        }
        if !(self.alpha > 0.0) {
            return bad("require alpha > 0");
        }
        if !(0.0..=1.0).contains(&self.error_rate) {
            return bad("require 0 <= error_rate <= 1");
        }
        if self.runs == 0 || self.checkpoint_interval == 0 || self.max_system_turns == 0 {
            return bad("runs, checkpoint_interval and max_system_turns must be positive");
        }
        Ok(())
    }

    /// Linearly decayed exploration rate for the `n`-th training dialogue.
    pub fn epsilon(&self, n: usize) -> f64 {
        if self.total_training_dialogues == 0 {
            return self.epsilon_end;
        }
        let frac = (n as f64 / self.total_training_dialogues as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQPolicy {
    pub features: FeatureSet,
    pub action_count: usize,
    pub feature_len: usize,
    /// One weight vector per action.
    pub weights: Vec<Vec<f64>>,
}

impl LinearQPolicy {
    pub fn zeros(features: FeatureSet, action_count: usize) -> Self {
        let feature_len = features.len();
        LinearQPolicy { features, action_count, feature_len, weights: vec![vec![0.0; feature_len]; action_count] }
    }

    fn check(&self, features: &FeatureVector, action: usize) -> Result<()> {
        if action >= self.action_count {
            return Err(Error::Invariant(format!("action {action} >= {}", self.action_count)));
        }
        if features.len() != self.feature_len {
            return Err(Error::Invariant(format!(
                "feature length {} != policy feature length {}",
                features.len(),
                self.feature_len
            )));
        }
        Ok(())
    }

    fn dot(&self, phi: &[f64], action: usize) -> f64 {
        self.weights[action].iter().zip(phi).map(|(w, x)| w * x).sum()
    }

    pub fn q_value(&self, features: &FeatureVector, action: usize) -> Result<f64> {
        self.check(features, action)?;
        Ok(self.dot(&features.values, action))
    }

    pub fn q_values(&self, features: &FeatureVector) -> Vec<f64> {
        (0..self.action_count).map(|a| self.dot(&features.values, a)).collect()
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn greedy(&self, features: &FeatureVector) -> usize {
        let mut best = 0;
        let mut best_q = f64::NEG_INFINITY;
        for a in 0..self.action_count {
            let q = self.dot(&features.values, a);
            if q > best_q {
                best = a;
                best_q = q;
            }
        }
        best
    }

    /// Epsilon-greedy selection.
    pub fn select_action<R: Rng + ?Sized>(&self, features: &FeatureVector, epsilon: f64, rng: &mut R) -> usize {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            rng.random_range(0..self.action_count)
        } else {
            self.greedy(features)
        }
    }

    /// Every-visit Monte Carlo update towards the discounted returns, applied
    /// in visit order with the running weights.
    pub fn mc_update(&mut self, visits: &[(&FeatureVector, usize)], returns: &[f64], alpha: f64) -> Result<()> {
        if visits.len() != returns.len() {
            return Err(Error::Invariant(format!(
                "{} visits but {} returns",
                visits.len(),
                returns.len()
            )));
        }
        for (phi, a) in visits {
            self.check(phi, *a)?;
        }
        for ((phi, a), ret) in visits.iter().zip(returns) {
            let error = ret - self.dot(&phi.values, *a);
            let step = alpha * error;
            for (w, x) in self.weights[*a].iter_mut().zip(&phi.values) {
                if *x != 0.0 {
                    *w += step * x;
                }
            }
        }
        Ok(())
    }

    pub fn to_record(&self) -> PolicyRecord {
        PolicyRecord {
            format: POLICY_FORMAT.to_string(),
            feature_schema: FEATURE_SCHEMA_VERSION.to_string(),
            agent: self.features,
            action_count: self.action_count,
            feature_len: self.feature_len,
            weights: self.weights.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_record()).expect("policy serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected: FeatureSet, action_count: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let record: PolicyRecord = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        load_policy(record, expected, action_count)
    }
}

/// Persisted form of a [`LinearQPolicy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub format: String,
    pub feature_schema: String,
    pub agent: FeatureSet,
    pub action_count: usize,
    pub feature_len: usize,
    pub weights: Vec<Vec<f64>>,
}

pub fn save_policy(policy: &LinearQPolicy) -> PolicyRecord {
    policy.to_record()
}

/// Restores a policy, rejecting records built for another agent or schema.
pub fn load_policy(record: PolicyRecord, expected: FeatureSet, action_count: usize) -> Result<LinearQPolicy> {
    if record.format != POLICY_FORMAT {
        return Err(Error::Incompatible(format!("format `{}`, expected `{POLICY_FORMAT}`", record.format)));
    }
    if record.feature_schema != FEATURE_SCHEMA_VERSION {
        return Err(Error::Incompatible(format!(
            "feature schema `{}`, expected `{FEATURE_SCHEMA_VERSION}`",
            record.feature_schema
        )));
    }
    if record.agent != expected {
        return Err(Error::Incompatible(format!(
            "policy for `{}` cannot drive a `{}` agent",
            record.agent.tag(),
            expected.tag()
        )));
    }
    if record.feature_len != expected.len() || record.action_count != action_count {
        return Err(Error::Incompatible(format!(
            "shape {}x{}, expected {}x{}",
            record.action_count,
            record.feature_len,
            action_count,
            expected.len()
        )));
    }
    if record.weights.len() != record.action_count || record.weights.iter().any(|w| w.len() != record.feature_len) {
        return Err(Error::Incompatible("weight matrix does not match declared shape".into()));
    }
    Ok(LinearQPolicy {
        features: record.agent,
        action_count: record.action_count,
        feature_len: record.feature_len,
        weights: record.weights,
    })
}

/// Discounted returns via a single backward pass.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::InvalidInput("cannot compute returns of an empty episode".into()));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// One system turn: each agent's features and chosen action, and the reward
/// received after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub agents: Vec<(FeatureVector, usize)>,
    pub reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub total_return: f64,
}

impl EpisodeTrace {
    pub fn push(&mut self, agents: Vec<(FeatureVector, usize)>, reward: f64) {
        self.total_return += reward;
        self.steps.push(TraceStep { agents, reward });
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn visits(&self, agent: usize) -> Vec<(&FeatureVector, usize)> {
        self.steps.iter().map(|s| (&s.agents[agent].0, s.agents[agent].1)).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Returns `policy` after a Monte Carlo update from one agent's visits in `trace`.
pub fn mc_update(
    policy: &LinearQPolicy,
    trace: &EpisodeTrace,
    agent: usize,
    alpha: f64,
    gamma: f64,
) -> Result<LinearQPolicy> {
    let returns = compute_returns(&trace.rewards(), gamma)?;
    if trace.steps.iter().any(|s| s.agents.len() <= agent) {
        return Err(Error::Invariant(format!("trace has no agent {agent}")));
    }
    let mut next = policy.clone();
    next.mc_update(&trace.visits(agent), &returns, alpha)?;
    Ok(next)
}

//! Experiment driver: the simulated dialogue loop, training runs with
//! checkpoint evaluation, transfer settings and learning curves.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::acts::{Function, SystemAction};
use crate::error::{Error, Result};
use crate::errormodel::{corrupt, ErrorConfig};
use crate::manager::{
    commit_system_act, map_summary_to_act, DialogueManager, DialogueSystem, EpisodeRng, Policies, SystemTurnRecord,
    FEEDBACK, SOCIAL,
};
use crate::ontology::{generate_database, Database, Ontology, INFORMABLE};
use crate::policy::{EpisodeTrace, TrainingConfig};
use crate::state::{DialogueState, Grounding, NBestList};
use crate::usersim::{UserSimulator, SUCCESS_REWARD, TURN_REWARD};

pub const DEFAULT_DATABASE_SEED: u64 = 0;
/// Normalized belief an unconfirmed value needs before it filters the database.
pub const DEFAULT_CONSTRAINT_THRESHOLD: f64 = 0.1;

/// Mixed into a run seed to get the evaluation seed shared by all of that
/// run's checkpoints.
const EVAL_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

pub const CURVE_HEADER: &str = "dialogues,mean_reward,mean_success,mean_length,std_reward";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    OneDim,
    MultiDim,
    MultiDimTransfer,
    MultiDimTransferAdapt,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::OneDim, Variant::MultiDim, Variant::MultiDimTransfer, Variant::MultiDimTransferAdapt];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::OneDim => "one-dim",
            Variant::MultiDim => "multi-dim",
            Variant::MultiDimTransfer => "multi-dim-transfer",
            Variant::MultiDimTransferAdapt => "multi-dim-transfer-adapt",
        }
    }

    pub fn is_transfer(self) -> bool {
        matches!(self, Variant::MultiDimTransfer | Variant::MultiDimTransferAdapt)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant `{s}`")))
    }
}

/// Everything about the simulated world that stays fixed during an experiment.
#[derive(Debug, Clone)]
pub struct Environment {
    pub ontology: Ontology,
    pub db: Database,
    pub error: ErrorConfig,
    pub max_system_turns: usize,
    pub constraint_threshold: f64,
}

impl Environment {
    pub fn new(ontology: Ontology, db: Database, error: ErrorConfig, max_system_turns: usize) -> Self {
        Environment { ontology, db, error, max_system_turns, constraint_threshold: DEFAULT_CONSTRAINT_THRESHOLD }
    }

    /// Restaurant ontology with the default generated database.
    pub fn restaurant(error_rate: f64) -> Self {
        let ontology = Ontology::restaurant();
        let db = generate_database(DEFAULT_DATABASE_SEED, &ontology);
        Environment::new(ontology, db, ErrorConfig { error_rate, ..ErrorConfig::default() }, 30)
    }

    pub fn with_error_rate(&self, error_rate: f64) -> Self {
        let mut env = self.clone();
        env.error.error_rate = error_rate;
        env
    }
}

/// One logged turn of a simulated dialogue.
#[derive(Debug, Clone, Serialize)]
pub struct TurnLog {
    pub turn: usize,
    pub user_act: String,
    pub observed: Vec<(String, f64)>,
    pub system: SystemTurnRecord,
    pub system_act: Option<String>,
    pub reward: f64,
    pub state: serde_json::Value,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeOutcome {
    pub trace: EpisodeTrace,
    pub reward: f64,
    pub success: bool,
    pub length: usize,
}

/// Runs one dialogue between `system` and `sim` until the system says
/// goodbye or the turn cutoff is reached.
pub fn run_episode(
    system: &mut dyn DialogueSystem,
    sim: &mut UserSimulator,
    env: &Environment,
    epsilon: f64,
    rng: &mut EpisodeRng,
    mut log: Option<&mut Vec<TurnLog>>,
) -> EpisodeOutcome {
    let mut outcome = EpisodeOutcome::default();
    let mut user_act = sim.start();
    for turn in 0..env.max_system_turns {
        let nbest = corrupt(&user_act, &env.error, &env.ontology, rng);
        system.observe(&nbest);
        let record = system.respond(epsilon, rng);
        let (next, over) = sim.react(record.act.as_ref(), &env.db, rng);
        let terminal = over || turn + 1 == env.max_system_turns;
        let success = over && sim.is_success();
        let reward = TURN_REWARD + if success { SUCCESS_REWARD } else { 0.0 };
        outcome.length += 1;
        outcome.reward += reward;
        outcome.success = success;
        if let Some(log) = log.as_deref_mut() {
            log.push(TurnLog {
                turn,
                user_act: user_act.to_string(),
                observed: nbest.hypotheses().iter().map(|h| (h.act.to_string(), h.confidence)).collect(),
                system_act: record.act.as_ref().map(|a| a.to_string()),
                system: record.clone(),
                reward,
                state: system.state_summary(),
            });
        }
        outcome.trace.push(record.visits(), reward);
        user_act = next;
        if terminal {
            break;
        }
    }
    outcome
}

/// Hand-written policy over the same state and act mapping as the learned
/// managers: ask unfilled slots, confirm weak values, recommend, answer and
/// say goodbye.
#[derive(Debug, Clone)]
pub struct RuleBasedSystem<'a> {
    db: &'a Database,
    state: DialogueState,
}

impl<'a> RuleBasedSystem<'a> {
    pub fn new(db: &'a Database, constraint_threshold: f64) -> Self {
        RuleBasedSystem { db, state: DialogueState::new(db, constraint_threshold) }
    }

    /// An informed value too weak to filter the database yet.
    fn needs_confirmation(state: &DialogueState) -> bool {
        let used = state.top_constraints();
        INFORMABLE.iter().zip(&used).any(|(s, u)| {
            state.grounding.get(*s) == Grounding::UserInformed && u.is_none() && state.top_value(*s).is_some()
        })
    }

    pub fn choose(state: &DialogueState) -> SystemAction {
        let question = state.last_user_act().is_some_and(|a| a.function == Function::PropQuestion);
        if state.user_said_bye && state.entity_under_discussion.is_some() {
            SystemAction::ReturnGoodbye
        } else if question && state.entity_under_discussion.is_some() {
            SystemAction::AnswerProp
        } else if state.entity_under_discussion.is_some() && state.pending_requests().next().is_some() {
            SystemAction::AnswerSet
        } else if INFORMABLE
            .iter()
            .any(|s| state.grounding.get(*s) == Grounding::Unmentioned && state.top_value(*s).is_none())
        {
            SystemAction::AskSlot
        } else if Self::needs_confirmation(state) {
            SystemAction::PropQuestionFeedback
        } else {
            SystemAction::Recommend
        }
    }
}

impl DialogueSystem for RuleBasedSystem<'_> {
    fn observe(&mut self, nbest: &NBestList) {
        self.state.observe(nbest, self.db);
    }

    fn respond(&mut self, _epsilon: f64, _rng: &mut EpisodeRng) -> SystemTurnRecord {
        let output = Self::choose(&self.state);
        let act = map_summary_to_act(output, &self.state, self.db);
        commit_system_act(&mut self.state, act.as_ref());
        SystemTurnRecord { agents: Vec::new(), output: Some(output), act }
    }

    fn state_summary(&self) -> serde_json::Value {
        self.state.summary()
    }
}

/// A system that passes every turn.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullSystem;

impl DialogueSystem for NullSystem {
    fn observe(&mut self, _nbest: &NBestList) {}

    fn respond(&mut self, _epsilon: f64, _rng: &mut EpisodeRng) -> SystemTurnRecord {
        SystemTurnRecord { agents: Vec::new(), output: None, act: None }
    }
}

fn episode_rng(seed: u64, index: u64) -> EpisodeRng {
    let mut rng = EpisodeRng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs the `index`-th dialogue of a seeded series with a learned manager.
pub fn simulate(
    policies: &Policies,
    env: &Environment,
    epsilon: f64,
    seed: u64,
    index: u64,
    log: Option<&mut Vec<TurnLog>>,
) -> EpisodeOutcome {
    let mut rng = episode_rng(seed, index);
    let mut sim = UserSimulator::sample(&env.db, &mut rng);
    let mut manager = DialogueManager::new(&env.db, policies, env.constraint_threshold);
    run_episode(&mut manager, &mut sim, env, epsilon, &mut rng, log)
}

/// Mean and standard error of a sample.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dialogues: usize,
    pub mean_reward: f64,
    pub se_reward: f64,
    pub success_rate: f64,
    pub se_success: f64,
    pub mean_length: f64,
    pub se_length: f64,
}

impl Metrics {
    pub fn from_outcomes(outcomes: &[(f64, bool, usize)]) -> Self {
        let rewards: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
        let success: Vec<f64> = outcomes.iter().map(|o| if o.1 { 1.0 } else { 0.0 }).collect();
        let lengths: Vec<f64> = outcomes.iter().map(|o| o.2 as f64).collect();
        let (mean_reward, se_reward) = mean_se(&rewards);
        let (success_rate, se_success) = mean_se(&success);
        let (mean_length, se_length) = mean_se(&lengths);
        Metrics { dialogues: outcomes.len(), mean_reward, se_reward, success_rate, se_success, mean_length, se_length }
    }
}

#[cfg(feature = "parallel")]
fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Greedy rollouts of `policies` over `n` seeded dialogues.
pub fn evaluate(policies: &Policies, env: &Environment, n: usize, seed: u64) -> Metrics {
    let outcomes = map_indices(n, |i| {
        let o = simulate(policies, env, 0.0, seed, i as u64, None);
        (o.reward, o.success, o.length)
    });
    Metrics::from_outcomes(&outcomes)
}

/// Sequential twin of [`evaluate`], kept for benchmarking against the
/// data-parallel path. Results are identical.
pub fn evaluate_sequential(policies: &Policies, env: &Environment, n: usize, seed: u64) -> Metrics {
    let outcomes: Vec<_> = (0..n)
        .map(|i| {
            let o = simulate(policies, env, 0.0, seed, i as u64, None);
            (o.reward, o.success, o.length)
        })
        .collect();
    Metrics::from_outcomes(&outcomes)
}

/// Greedy rollouts of a non-learning system, e.g. [`RuleBasedSystem`].
pub fn evaluate_system<S: DialogueSystem>(
    make: impl Fn() -> S + Sync + Send,
    env: &Environment,
    n: usize,
    seed: u64,
) -> Metrics {
    let outcomes = map_indices(n, |i| {
        let mut rng = episode_rng(seed, i as u64);
        let mut sim = UserSimulator::sample(&env.db, &mut rng);
        let mut system = make();
        let o = run_episode(&mut system, &mut sim, env, 0.0, &mut rng, None);
        (o.reward, o.success, o.length)
    });
    Metrics::from_outcomes(&outcomes)
}

/// Seed of the `run`-th training run.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    seed.wrapping_add(run as u64)
}

/// Evaluation seed for a run; every checkpoint of the run sees the same
/// evaluation dialogues.
pub fn eval_seed(run_seed: u64) -> u64 {
    run_seed ^ EVAL_SEED_MIX
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub variant: Variant,
    pub training: TrainingConfig,
    pub env: Environment,
    /// Source policies for transfer variants; run `i` uses entry
    /// `i % len`.
    pub source_policies: Vec<Policies>,
}

impl ExperimentSpec {
    pub fn new(variant: Variant, training: TrainingConfig) -> Self {
        let env = Environment::restaurant(training.error_rate);
        let env = Environment { max_system_turns: training.max_system_turns, ..env };
        ExperimentSpec { variant, training, env, source_policies: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.env.error.validate()?;
        if self.variant.is_transfer() {
            if self.source_policies.is_empty() {
                return Err(Error::Config(format!("variant {} needs source policies", self.variant)));
            }
            if self.source_policies.iter().any(|p| !matches!(p, Policies::MultiDim { .. })) {
                return Err(Error::Config("transfer sources must be multi-dimensional policies".into()));
            }
        }
        Ok(())
    }

    /// Starting policies for run `run`.
    pub fn initial_policies(&self, run: usize) -> Result<Policies> {
        match self.variant {
            Variant::OneDim => Ok(Policies::one_dim()),
            Variant::MultiDim => Ok(Policies::multi_dim()),
            Variant::MultiDimTransfer | Variant::MultiDimTransferAdapt => {
                let Some(Policies::MultiDim { agents: source, .. }) =
                    self.source_policies.get(run % self.source_policies.len().max(1))
                else {
                    return Err(Error::Config(format!("variant {} needs multi-dimensional source policies", self.variant)));
                };
                let mut p = Policies::multi_dim();
                if let Policies::MultiDim { agents, .. } = &mut p {
                    agents[FEEDBACK] = source[FEEDBACK].clone();
                    agents[SOCIAL] = source[SOCIAL].clone();
                }
                if self.variant == Variant::MultiDimTransfer {
                    p.set_frozen(FEEDBACK, true)?;
                    p.set_frozen(SOCIAL, true)?;
                }
                Ok(p)
            }
        }
    }

    /// Dialogue counts at which the policies are evaluated.
    pub fn checkpoints(&self) -> Vec<usize> {
        let t = &self.training;
        let mut points: Vec<usize> = (0..=t.total_training_dialogues).step_by(t.checkpoint_interval).collect();
        if points.last() != Some(&t.total_training_dialogues) {
            points.push(t.total_training_dialogues);
        }
        points
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub policies: Policies,
    /// One entry per checkpoint.
    pub metrics: Vec<Metrics>,
}

/// One training run: episodes with decaying exploration, a Monte Carlo
/// update after each, and greedy evaluation at every checkpoint.
pub fn train_run(spec: &ExperimentSpec, run: usize) -> Result<RunResult> {
    let cfg = &spec.training;
    let seed = run_seed(cfg.seed, run);
    let evaluation = eval_seed(seed);
    let mut policies = spec.initial_policies(run)?;
    let checkpoints = spec.checkpoints();
    let mut metrics = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    for n in 0..=cfg.total_training_dialogues {
        if checkpoints.get(next) == Some(&n) {
            metrics.push(evaluate(&policies, &spec.env, cfg.eval_dialogues_per_point, evaluation));
            next += 1;
        }
        if n == cfg.total_training_dialogues {
            break;
        }
        let outcome = simulate(&policies, &spec.env, cfg.epsilon(n), seed, n as u64, None);
        policies.update(&outcome.trace, cfg.alpha, cfg.gamma)?;
    }
    Ok(RunResult { policies, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub dialogues: usize,
    pub mean_reward: f64,
    pub mean_success: f64,
    pub mean_length: f64,
    /// Standard deviation of the per-run mean reward.
    pub std_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn from_runs(checkpoints: &[usize], runs: &[RunResult]) -> Self {
        let points = checkpoints
            .iter()
            .enumerate()
            .map(|(k, &dialogues)| {
                let rewards: Vec<f64> = runs.iter().map(|r| r.metrics[k].mean_reward).collect();
                let n = runs.len() as f64;
                let mean = |f: &dyn Fn(&Metrics) -> f64| runs.iter().map(|r| f(&r.metrics[k])).sum::<f64>() / n;
                let (mean_reward, se) = mean_se(&rewards);
                CurvePoint {
                    dialogues,
                    mean_reward,
                    mean_success: mean(&|m| m.success_rate),
                    mean_length: mean(&|m| m.mean_length),
                    std_reward: se * n.sqrt(),
                }
            })
            .collect();
        LearningCurve { points }
    }

    pub fn at(&self, dialogues: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.dialogues == dialogues)
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.dialogues, p.mean_reward, p.mean_success, p.mean_length, p.std_reward
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainingResult {
    pub checkpoints: Vec<usize>,
    pub runs: Vec<RunResult>,
    pub curve: LearningCurve,
}

impl TrainingResult {
    /// Per-run mean reward at a checkpoint.
    pub fn run_rewards(&self, dialogues: usize) -> Option<Vec<f64>> {
        let k = self.checkpoints.iter().position(|c| *c == dialogues)?;
        Some(self.runs.iter().map(|r| r.metrics[k].mean_reward).collect())
    }
}

/// Independent seeded runs; they may execute concurrently and give the same
/// result either way.
pub fn train(spec: &ExperimentSpec) -> Result<TrainingResult> {
    spec.validate()?;
    let runs = map_indices(spec.training.runs, |r| train_run(spec, r)).into_iter().collect::<Result<Vec<_>>>()?;
    let checkpoints = spec.checkpoints();
    let curve = LearningCurve::from_runs(&checkpoints, &runs);
    Ok(TrainingResult { checkpoints, runs, curve })
}

/// Writes per-turn JSON lines for `n` greedy dialogues of a seeded series.
pub fn write_episode_log<W: Write>(
    out: &mut W,
    policies: &Policies,
    env: &Environment,
    n: usize,
    seed: u64,
) -> std::io::Result<()> {
    for i in 0..n {
        let mut turns = Vec::new();
        let outcome = simulate(policies, env, 0.0, seed, i as u64, Some(&mut turns));
        for t in turns {
            let record = serde_json::json!({
                "episode": i,
                "turn": t.turn,
                "user_act": t.user_act,
                "observed": t.observed,
                "agents": t.system.agents,
                "output": t.system.output.map(|a| a.label()),
                "system_act": t.system_act,
                "reward": t.reward,
                "state": t.state,
                "episode_success": outcome.success,
            });
            writeln!(out, "{record}")?;
        }
    }
    Ok(())
}

/// On-disk experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub training: TrainingConfig,
    pub error: ErrorConfig,
    pub database_seed: u64,
    pub constraint_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: Variant::MultiDim,
            training: TrainingConfig::default(),
            error: ErrorConfig::default(),
            database_seed: DEFAULT_DATABASE_SEED,
            constraint_threshold: DEFAULT_CONSTRAINT_THRESHOLD,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// The training error rate drives the error model.
    pub fn to_spec(&self) -> ExperimentSpec {
        let ontology = Ontology::restaurant();
        let db = generate_database(self.database_seed, &ontology);
        let error = ErrorConfig { error_rate: self.training.error_rate, ..self.error.clone() };
        let mut env = Environment::new(ontology, db, error, self.training.max_system_turns);
        env.constraint_threshold = self.constraint_threshold;
        ExperimentSpec { variant: self.variant, training: self.training.clone(), env, source_policies: Vec::new() }
    }
}

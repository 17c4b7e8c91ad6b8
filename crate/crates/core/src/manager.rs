//! The dialogue manager: state monitoring wired to one MDP agent or to three
//! per-dimension agents whose candidates are combined into one output act.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::acts::{
    action_count, combine, Dimension, DialogueAct, FeedbackAction, Function, SlotValue, SocialAction,
    SystemAction, TaskAction,
};
use crate::error::{Error, Result};
use crate::ontology::{Database, Slot, DONTCARE, INFORMABLE, REQUESTABLE};
use crate::policy::{EpisodeTrace, LinearQPolicy};
use crate::state::{extract_features, DialogueState, FeatureSet, FeatureVector, Grounding, NBestList, Speaker};

/// Random stream used by episode execution.
pub type EpisodeRng = ChaCha8Rng;

pub const ONE_DIM_ACTIONS: usize = 7;

/// Index of each agent in multi-dimensional policies and traces.
pub const TASK: usize = 0;
pub const FEEDBACK: usize = 1;
pub const SOCIAL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManagerVariant {
    OneDim,
    MultiDim,
}

/// The learnable part of a manager.
#[derive(Debug, Clone, PartialEq)]
pub enum Policies {
    OneDim(LinearQPolicy),
    MultiDim { agents: [LinearQPolicy; 3], frozen: [bool; 3] },
}

const AGENT_FILES: [&str; 3] = ["task.json", "autofeedback.json", "social.json"];
const ONE_DIM_FILE: &str = "onedim.json";

impl Policies {
    pub fn one_dim() -> Self {
        Policies::OneDim(LinearQPolicy::zeros(FeatureSet::OneDim, ONE_DIM_ACTIONS))
    }

    pub fn multi_dim() -> Self {
        let agent = |d: Dimension| LinearQPolicy::zeros(FeatureSet::for_dimension(d), action_count(d));
        Policies::MultiDim {
            agents: [agent(Dimension::Task), agent(Dimension::AutoFeedback), agent(Dimension::SocialOblMan)],
            frozen: [false; 3],
        }
    }

    pub fn variant(&self) -> ManagerVariant {
        match self {
            Policies::OneDim(_) => ManagerVariant::OneDim,
            Policies::MultiDim { .. } => ManagerVariant::MultiDim,
        }
    }

    pub fn set_frozen(&mut self, agent: usize, value: bool) -> Result<()> {
        match self {
            Policies::MultiDim { frozen, .. } if agent < 3 => {
                frozen[agent] = value;
                Ok(())
            }
            _ => Err(Error::Config("only multi-dimensional agents can be frozen".into())),
        }
    }

    pub fn is_frozen(&self, agent: usize) -> bool {
        matches!(self, Policies::MultiDim { frozen, .. } if frozen.get(agent).copied().unwrap_or(false))
    }

    /// Monte Carlo update of every learning agent from a shared-reward trace.
    pub fn update(&mut self, trace: &EpisodeTrace, alpha: f64, gamma: f64) -> Result<()> {
        if trace.is_empty() {
            return Ok(());
        }
        let returns = crate::policy::compute_returns(&trace.rewards(), gamma)?;
        match self {
            Policies::OneDim(p) => p.mc_update(&trace.visits(0), &returns, alpha),
            Policies::MultiDim { agents, frozen } => {
                for (i, agent) in agents.iter_mut().enumerate() {
                    if !frozen[i] {
                        agent.mc_update(&trace.visits(i), &returns, alpha)?;
                    }
                }
                Ok(())
            }
        }
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        match self {
            Policies::OneDim(p) => p.save(&dir.join(ONE_DIM_FILE)),
            Policies::MultiDim { agents, .. } => {
                for (agent, file) in agents.iter().zip(AGENT_FILES) {
                    agent.save(&dir.join(file))?;
                }
                Ok(())
            }
        }
    }

    /// Loads whichever variant is present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        if dir.join(ONE_DIM_FILE).exists() {
            return Ok(Policies::OneDim(LinearQPolicy::load(&dir.join(ONE_DIM_FILE), FeatureSet::OneDim, ONE_DIM_ACTIONS)?));
        }
        Ok(Policies::MultiDim {
            agents: [
                Self::load_agent(dir, TASK)?,
                Self::load_agent(dir, FEEDBACK)?,
                Self::load_agent(dir, SOCIAL)?,
            ],
            frozen: [false; 3],
        })
    }

    pub fn load_agent(dir: &Path, agent: usize) -> Result<LinearQPolicy> {
        let d = Dimension::ALL[agent];
        LinearQPolicy::load(&dir.join(AGENT_FILES[agent]), FeatureSet::for_dimension(d), action_count(d))
    }
}

/// One agent's decision in a system turn.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentChoice {
    pub agent: FeatureSet,
    pub action: usize,
    pub label: &'static str,
    pub q_values: Vec<f64>,
    #[serde(skip)]
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemTurnRecord {
    pub agents: Vec<AgentChoice>,
    /// Resolved output row; `None` when the system passes.
    pub output: Option<SystemAction>,
    pub act: Option<DialogueAct>,
}

impl SystemTurnRecord {
    pub fn visits(&self) -> Vec<(FeatureVector, usize)> {
        self.agents.iter().map(|a| (a.features.clone(), a.action)).collect()
    }
}

/// Anything that can sit on the system side of a simulated dialogue.
pub trait DialogueSystem {
    fn observe(&mut self, nbest: &NBestList);
    fn respond(&mut self, epsilon: f64, rng: &mut EpisodeRng) -> SystemTurnRecord;
    /// Per-turn state summary for logs.
    fn state_summary(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

/// Manager for one episode, driven by a shared set of policies.
#[derive(Debug, Clone)]
pub struct DialogueManager<'a> {
    db: &'a Database,
    policies: &'a Policies,
    state: DialogueState,
}

impl<'a> DialogueManager<'a> {
    pub fn new(db: &'a Database, policies: &'a Policies, constraint_threshold: f64) -> Self {
        DialogueManager { db, policies, state: DialogueState::new(db, constraint_threshold) }
    }

    pub fn state(&self) -> &DialogueState {
        &self.state
    }

    fn choose(policy: &LinearQPolicy, features: FeatureVector, epsilon: f64, rng: &mut EpisodeRng) -> (usize, Vec<f64>, FeatureVector) {
        let action = policy.select_action(&features, epsilon, rng);
        (action, policy.q_values(&features), features)
    }

    /// Picks the summary action(s), resolves them and commits the output act.
    pub fn respond(&mut self, epsilon: f64, rng: &mut EpisodeRng) -> SystemTurnRecord {
        let (agents, output) = match self.policies {
            Policies::OneDim(p) => {
                let phi = extract_features(&self.state, FeatureSet::OneDim);
                let (a, q, phi) = Self::choose(p, phi, epsilon, rng);
                let action = SystemAction::from_index(a).expect("seven one-dim actions");
                let choice = AgentChoice { agent: FeatureSet::OneDim, action: a, label: action.label(), q_values: q, features: phi };
                (vec![choice], Some(action))
            }
            Policies::MultiDim { agents, frozen } => {
                let mut choices = Vec::with_capacity(3);
                for (i, policy) in agents.iter().enumerate() {
                    let set = FeatureSet::for_dimension(Dimension::ALL[i]);
                    let eps = if frozen[i] { 0.0 } else { epsilon };
                    let (a, q, phi) = Self::choose(policy, extract_features(&self.state, set), eps, rng);
                    let label = match i {
                        TASK => TaskAction::ALL[a].label(),
                        FEEDBACK => FeedbackAction::ALL[a].label(),
                        _ => SocialAction::ALL[a].label(),
                    };
                    choices.push(AgentChoice { agent: set, action: a, label, q_values: q, features: phi });
                }
                let output = combine(
                    TaskAction::ALL[choices[TASK].action],
                    FeedbackAction::ALL[choices[FEEDBACK].action],
                    SocialAction::ALL[choices[SOCIAL].action],
                );
                (choices, output)
            }
        };
        let act = output.and_then(|a| map_summary_to_act(a, &self.state, self.db));
        commit_system_act(&mut self.state, act.as_ref());
        SystemTurnRecord { agents, output, act }
    }
}

/// Records a system turn in the state: history, turn count, the entity under
/// discussion and answered requests.
pub fn commit_system_act(state: &mut DialogueState, act: Option<&DialogueAct>) {
    state.turn_count += 1;
    let Some(act) = act else {
        state.history.push((Speaker::System, DialogueAct::bare(Function::Null)));
        return;
    };
    match act.function {
        Function::Recommend => state.entity_under_discussion = act.entity_ref,
        Function::Inform if act.entity_ref.is_some() => {
            for pair in &act.content {
                if let Some(i) = pair.slot.requestable_index() {
                    state.open_requests.retain(|r| *r != i);
                }
            }
        }
        _ => {}
    }
    state.history.push((Speaker::System, act.clone()));
}

impl DialogueSystem for DialogueManager<'_> {
    fn observe(&mut self, nbest: &NBestList) {
        self.state.observe(nbest, self.db);
    }

    fn respond(&mut self, epsilon: f64, rng: &mut EpisodeRng) -> SystemTurnRecord {
        DialogueManager::respond(self, epsilon, rng)
    }

    fn state_summary(&self) -> serde_json::Value {
        self.state.summary()
    }
}

/// Slot the system asks about: the first unmentioned slot, else the one with
/// the weakest top belief.
fn ask_slot(state: &DialogueState) -> DialogueAct {
    let slot = INFORMABLE
        .iter()
        .copied()
        .find(|s| state.grounding.get(*s) == Grounding::Unmentioned && state.top_value(*s).is_none())
        .unwrap_or_else(|| {
            let mut best = (INFORMABLE[0], f64::INFINITY);
            for s in INFORMABLE {
                let p = state.top_value(s).map_or(0.0, |(_, p)| p);
                if p < best.1 {
                    best = (s, p);
                }
            }
            best.0
        });
    DialogueAct::new(Function::SetQuestion, vec![SlotValue::bare(slot)])
}

/// Constrained slot values used for the current database query.
fn query_content(state: &DialogueState) -> Vec<SlotValue> {
    state
        .top_constraints()
        .iter()
        .zip(INFORMABLE)
        .filter_map(|(v, s)| v.as_ref().filter(|v| *v != DONTCARE).map(|v| SlotValue::new(s, v.clone())))
        .collect()
}

fn recommend(state: &DialogueState, db: &Database) -> DialogueAct {
    match state.db_matches.first() {
        Some(&id) => {
            let entity = &db.entities[id];
            let mut content = vec![SlotValue::new(Slot::Name, entity.value(Slot::Name))];
            content.extend(query_content(state).into_iter().map(|p| SlotValue::new(p.slot, entity.value(p.slot))));
            DialogueAct::new(Function::Recommend, content).with_entity(id)
        }
        None => {
            let mut content = vec![SlotValue::new(Slot::Name, "none")];
            content.extend(query_content(state));
            DialogueAct::new(Function::Inform, content)
        }
    }
}

fn answer_set(state: &DialogueState, db: &Database) -> Option<DialogueAct> {
    let entity = db.get(state.entity_under_discussion?)?;
    let slot = state.open_requests.last().map_or(Slot::Name, |i| REQUESTABLE[*i]);
    Some(DialogueAct::new(Function::Inform, vec![SlotValue::new(slot, entity.value(slot))]).with_entity(entity.id))
}

fn answer_prop(state: &DialogueState, db: &Database) -> Option<DialogueAct> {
    let entity = db.get(state.entity_under_discussion?)?;
    let question = state
        .history
        .iter()
        .rev()
        .filter(|(s, _)| *s == Speaker::User)
        .find(|(_, a)| a.function == Function::PropQuestion)?;
    let pair = question.1.content.iter().find(|p| p.value.is_some())?;
    let asked = pair.value.as_deref().expect("filtered");
    let function = if entity.value(pair.slot) == asked { Function::Affirm } else { Function::Deny };
    Some(DialogueAct::new(function, vec![SlotValue::new(pair.slot, asked)]).with_entity(entity.id))
}

/// User-informed slot with the weakest top belief, falling back to any
/// unconfirmed slot with evidence.
fn confirm(state: &DialogueState) -> DialogueAct {
    let pick = |want: &dyn Fn(Grounding) -> bool| {
        let mut best: Option<(Slot, String, f64)> = None;
        for s in INFORMABLE {
            if !want(state.grounding.get(s)) {
                continue;
            }
            if let Some((v, p)) = state.top_value(s) {
                if best.as_ref().is_none_or(|b| p < b.2) {
                    best = Some((s, v, p));
                }
            }
        }
        best
    };
    let target = pick(&|g| g == Grounding::UserInformed)
        .or_else(|| pick(&|g| g != Grounding::SystemConfirmed))
        .or_else(|| pick(&|_| true));
    let content = target.map(|(s, v, _)| vec![SlotValue::new(s, v)]).unwrap_or_default();
    DialogueAct::new(Function::PropQuestionFeedback, content)
}

/// Instantiates a resolved summary action from the dialogue state.
///
/// A goodbye only answers a user goodbye; without one the system passes and
/// `None` is returned.
pub fn map_summary_to_act(action: SystemAction, state: &DialogueState, db: &Database) -> Option<DialogueAct> {
    Some(match action {
        SystemAction::NegativeFeedback => DialogueAct::bare(Function::NegativeFeedback),
        SystemAction::PropQuestionFeedback => confirm(state),
        SystemAction::AnswerSet => answer_set(state, db).unwrap_or_else(|| ask_slot(state)),
        SystemAction::AnswerProp => answer_prop(state, db).unwrap_or_else(|| ask_slot(state)),
        SystemAction::Recommend => recommend(state, db),
        SystemAction::ReturnGoodbye if state.user_said_bye => DialogueAct::bare(Function::ReturnGoodbye),
        SystemAction::ReturnGoodbye => return None,
        SystemAction::AskSlot => ask_slot(state),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{generate_database, Ontology};
    use rand::SeedableRng;

    fn setup() -> (Ontology, Database) {
        let o = Ontology::restaurant();
        (o.clone(), generate_database(1, &o))
    }

    fn certain(act: DialogueAct) -> NBestList {
        NBestList::certain(act)
    }

    /// Multi-dim policies that deterministically pick the given triple.
    fn forced(task: TaskAction, fb: FeedbackAction, social: SocialAction) -> Policies {
        let mut p = Policies::multi_dim();
        if let Policies::MultiDim { agents, .. } = &mut p {
            let bias = |set: FeatureSet| set.len() - 1;
            agents[TASK].weights[task.index()][bias(FeatureSet::Task)] = 1.0;
            agents[FEEDBACK].weights[fb.index()][bias(FeatureSet::AutoFeedback)] = 1.0;
            agents[SOCIAL].weights[social.index()][bias(FeatureSet::Social)] = 1.0;
        }
        p
    }

    fn forced_one_dim(action: SystemAction) -> Policies {
        let mut p = Policies::one_dim();
        if let Policies::OneDim(q) = &mut p {
            q.weights[action.index()][FeatureSet::OneDim.len() - 1] = 1.0;
        }
        p
    }

    #[test]
    fn observe_filters_database() {
        let (o, db) = setup();
        let policies = Policies::one_dim();
        let mut m = DialogueManager::new(&db, &policies, 0.0);
        m.observe_user(&certain(DialogueAct::inform(Slot::Foodtype, "thai")));
        let oracle: Vec<usize> = db
            .query_matches(&o, &[(Slot::Foodtype, "thai".to_string())].into())
            .unwrap()
            .iter()
            .map(|e| e.id)
            .collect();
        assert_eq!(m.state().db_matches, oracle);
    }

    impl DialogueManager<'_> {
        fn observe_user(&mut self, nbest: &NBestList) {
            DialogueSystem::observe(self, nbest);
        }
    }

    #[test]
    fn multi_dim_recommend_picks_lowest_id() {
        let (_, db) = setup();
        let policies = forced(TaskAction::Recommend, FeedbackAction::Null, SocialAction::Null);
        let mut m = DialogueManager::new(&db, &policies, 0.0);
        m.observe_user(&certain(DialogueAct::inform(Slot::Area, "north")));
        let mut rng = EpisodeRng::seed_from_u64(0);
        let rec = m.respond(0.0, &mut rng);
        assert_eq!(rec.agents.len(), 3);
        assert_eq!(rec.output, Some(SystemAction::Recommend));
        let act = rec.act.unwrap();
        let first = m.state().db_matches[0];
        assert_eq!(act.entity_ref, Some(first));
        assert_eq!(act.value_of(Slot::Area), Some("north"));
        assert_eq!(m.state().entity_under_discussion, Some(first));
    }

    #[test]
    fn negative_feedback_cancels_everything() {
        let (_, db) = setup();
        let policies = forced(TaskAction::Recommend, FeedbackAction::NegativeFeedback, SocialAction::ReturnGoodbye);
        let mut m = DialogueManager::new(&db, &policies, 0.0);
        let rec = m.respond(0.0, &mut EpisodeRng::seed_from_u64(0));
        assert_eq!(rec.act.unwrap().function, Function::NegativeFeedback);
    }

    #[test]
    fn one_dim_goodbye() {
        let (_, db) = setup();
        let policies = forced_one_dim(SystemAction::ReturnGoodbye);
        let mut m = DialogueManager::new(&db, &policies, 0.0);
        let rec = m.respond(0.0, &mut EpisodeRng::seed_from_u64(0));
        assert_eq!(rec.agents.len(), 1);
        assert_eq!(rec.output, Some(SystemAction::ReturnGoodbye));
        assert!(rec.act.is_none());
        m.observe_user(&certain(DialogueAct::bare(Function::Bye)));
        let rec = m.respond(0.0, &mut EpisodeRng::seed_from_u64(0));
        assert_eq!(rec.act.unwrap().function, Function::ReturnGoodbye);
    }

    #[test]
    fn multi_dim_output_equals_one_dim_row() {
        let (_, db) = setup();
        let script = [
            DialogueAct::inform(Slot::Foodtype, "indian"),
            DialogueAct::request(Slot::Phonenumber),
        ];
        for t in TaskAction::ALL {
            for f in FeedbackAction::ALL {
                for s in SocialAction::ALL {
                    let multi = forced(t, f, s);
                    let Some(row) = combine(t, f, s) else { continue };
                    let one = forced_one_dim(row);
                    let mut a = DialogueManager::new(&db, &multi, 0.0);
                    let mut b = DialogueManager::new(&db, &one, 0.0);
                    let mut ra = EpisodeRng::seed_from_u64(1);
                    let mut rb = EpisodeRng::seed_from_u64(1);
                    for u in &script {
                        a.observe_user(&certain(u.clone()));
                        b.observe_user(&certain(u.clone()));
                        assert_eq!(a.respond(0.0, &mut ra).act, b.respond(0.0, &mut rb).act);
                    }
                }
            }
        }
    }

    #[test]
    fn mapping_rules() {
        let (_, db) = setup();
        let mut state = DialogueState::new(&db, 0.0);
        assert_eq!(
            map_summary_to_act(SystemAction::AskSlot, &state, &db).unwrap(),
            DialogueAct::new(Function::SetQuestion, vec![SlotValue::bare(Slot::Foodtype)])
        );
        // answers without an entity degrade to a question
        assert_eq!(map_summary_to_act(SystemAction::AnswerSet, &state, &db).unwrap().function, Function::SetQuestion);
        assert_eq!(map_summary_to_act(SystemAction::AnswerProp, &state, &db).unwrap().function, Function::SetQuestion);

        state.db_matches = vec![12, 40];
        let rec = map_summary_to_act(SystemAction::Recommend, &state, &db).unwrap();
        assert_eq!(rec.entity_ref, Some(12));

        state.entity_under_discussion = Some(12);
        state.observe(&certain(DialogueAct::request(Slot::Phonenumber)), &db);
        state.entity_under_discussion = Some(12);
        let ans = map_summary_to_act(SystemAction::AnswerSet, &state, &db).unwrap();
        assert_eq!(ans, DialogueAct::inform(Slot::Phonenumber, db.entities[12].value(Slot::Phonenumber)).with_entity(12));

        state.db_matches.clear();
        let none = map_summary_to_act(SystemAction::Recommend, &state, &db).unwrap();
        assert_eq!(none.function, Function::Inform);
        assert_eq!(none.value_of(Slot::Name), Some("none"));
        assert!(none.entity_ref.is_none());

        assert!(map_summary_to_act(SystemAction::NegativeFeedback, &state, &db).unwrap().content.is_empty());
        assert!(map_summary_to_act(SystemAction::ReturnGoodbye, &state, &db).is_none());
        state.observe(&certain(DialogueAct::bare(Function::Bye)), &db);
        assert!(map_summary_to_act(SystemAction::ReturnGoodbye, &state, &db).unwrap().content.is_empty());
    }

    #[test]
    fn confirmation_targets_weakest_user_informed_slot() {
        let (_, db) = setup();
        let mut state = DialogueState::new(&db, 0.0);
        state.observe(&NBestList::new(vec![crate::state::UserActHypothesis {
            act: DialogueAct::inform(Slot::Area, "north"),
            confidence: 0.9,
        }]).unwrap(), &db);
        state.observe(&NBestList::new(vec![crate::state::UserActHypothesis {
            act: DialogueAct::inform(Slot::Near, "park"),
            confidence: 0.3,
        }]).unwrap(), &db);
        let act = map_summary_to_act(SystemAction::PropQuestionFeedback, &state, &db).unwrap();
        assert_eq!(act.function, Function::PropQuestionFeedback);
        assert_eq!(act.value_of(Slot::Near), Some("park"));
    }

    #[test]
    fn frozen_agents_are_not_updated() {
        let (_, db) = setup();
        let mut policies = Policies::multi_dim();
        policies.set_frozen(FEEDBACK, true).unwrap();
        let before = policies.clone();
        let mut trace = EpisodeTrace::default();
        {
            let mut m = DialogueManager::new(&db, &before, 0.0);
            let rec = m.respond(0.5, &mut EpisodeRng::seed_from_u64(2));
            trace.push(rec.visits(), 29.0);
        }
        policies.update(&trace, 0.1, 0.95).unwrap();
        let (Policies::MultiDim { agents: a, .. }, Policies::MultiDim { agents: b, .. }) = (&policies, &before) else {
            unreachable!()
        };
        assert_eq!(a[FEEDBACK], b[FEEDBACK]);
        assert_ne!(a[TASK], b[TASK]);
        assert!(Policies::one_dim().set_frozen(0, true).is_err());
    }

    #[test]
    fn policies_round_trip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Policies::multi_dim();
        if let Policies::MultiDim { agents, .. } = &mut p {
            agents[SOCIAL].weights[0][1] = 2.5;
        }
        p.save_dir(dir.path()).unwrap();
        assert_eq!(Policies::load_dir(dir.path()).unwrap(), p);
        let one = tempfile::tempdir().unwrap();
        Policies::one_dim().save_dir(one.path()).unwrap();
        assert_eq!(Policies::load_dir(one.path()).unwrap().variant(), ManagerVariant::OneDim);
    }
}

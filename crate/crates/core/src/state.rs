//! State monitoring: multiplicative belief tracking, per-slot grounding and
//! feature extraction for the MDP agents.

use serde::{Deserialize, Serialize};

use crate::acts::{Dimension, DialogueAct, Function};
use crate::error::{Error, Result};
use crate::ontology::{Database, Slot, INFORMABLE, REQUESTABLE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserActHypothesis {
    pub act: DialogueAct,
    pub confidence: f64,
}

/// Ranked user-act hypotheses; descending confidence, total mass at most one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    hypotheses: Vec<UserActHypothesis>,
}

impl NBestList {
    pub fn new(hypotheses: Vec<UserActHypothesis>) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::InvalidInput("n-best list must not be empty".into()));
        }
        let mut sum = 0.0;
        for (i, h) in hypotheses.iter().enumerate() {
            if !(h.confidence > 0.0 && h.confidence <= 1.0) {
                return Err(Error::InvalidInput(format!("confidence {} outside (0,1]", h.confidence)));
            }
            if i > 0 && h.confidence > hypotheses[i - 1].confidence {
                return Err(Error::InvalidInput("n-best list is not in descending order".into()));
            }
            sum += h.confidence;
        }
        if sum > 1.0 + 1e-9 {
            return Err(Error::InvalidInput(format!("confidences sum to {sum} > 1")));
        }
        Ok(NBestList { hypotheses })
    }

    /// A single hypothesis, e.g. typed input in the chat loop.
    pub fn certain(act: DialogueAct) -> Self {
        NBestList { hypotheses: vec![UserActHypothesis { act, confidence: 1.0 }] }
    }

    pub fn top(&self) -> &UserActHypothesis {
        &self.hypotheses[0]
    }

    pub fn hypotheses(&self) -> &[UserActHypothesis] {
        &self.hypotheses
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Raw evidence scores for one informable slot, in first-observation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotBelief {
    scores: Vec<(String, f64)>,
}

impl SlotBelief {
    pub fn score(&self, value: &str) -> Option<f64> {
        self.scores.iter().find(|(v, _)| v == value).map(|(_, s)| *s)
    }

    pub fn scores(&self) -> &[(String, f64)] {
        &self.scores
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn observe(&mut self, value: &str, confidence: f64) {
        match self.scores.iter_mut().find(|(v, _)| v == value) {
            Some((_, score)) => *score *= confidence,
            None => self.scores.push((value.to_string(), confidence)),
        }
    }

    fn scale(&mut self, value: &str, factor: f64) {
        if let Some((_, score)) = self.scores.iter_mut().find(|(v, _)| v == value) {
            *score *= factor;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    /// Indexed in informable-slot order.
    pub informable: [SlotBelief; 4],
    /// Requested probability per requestable slot, in requestable-slot order.
    pub requested: [f64; 5],
}

/// Normalized belief over observed values plus the residual `unknown` mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub values: Vec<(String, f64)>,
    pub unknown: f64,
}

impl Distribution {
    /// Highest-probability observed value; ties resolve to the earliest observed.
    pub fn argmax(&self) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (v, p) in &self.values {
            if best.is_none_or(|(_, bp)| *p > bp) {
                best = Some((v.as_str(), *p));
            }
        }
        best
    }

    pub fn total(&self) -> f64 {
        self.values.iter().map(|(_, p)| p).sum::<f64>() + self.unknown
    }
}

impl BeliefState {
    pub fn slot(&self, slot: Slot) -> &SlotBelief {
        &self.informable[slot.informable_index().expect("informable slot")]
    }

    /// Applies one turn of evidence in place.
    ///
    /// Informable evidence `c` for a pair is the summed confidence of every
    /// `inform` hypothesis carrying it; an unseen pair stores `c`, a seen one
    /// is multiplied by `c`.
    pub fn update(&mut self, nbest: &NBestList) {
        let mut inform_mass: Vec<(Slot, &str, f64)> = Vec::new();
        let mut request_mass = [0.0; 5];
        for h in nbest.hypotheses() {
            match h.act.function {
                Function::Inform => {
                    for pair in &h.act.content {
                        let (true, Some(value)) = (pair.slot.is_informable(), pair.value.as_deref()) else {
                            continue;
                        };
                        match inform_mass.iter_mut().find(|(s, v, _)| *s == pair.slot && *v == value) {
                            Some((_, _, c)) => *c += h.confidence,
                            None => inform_mass.push((pair.slot, value, h.confidence)),
                        }
                    }
                }
                Function::Request => {
                    for pair in &h.act.content {
                        if let Some(i) = pair.slot.requestable_index() {
                            request_mass[i] += h.confidence;
                        }
                    }
                }
                _ => {}
            }
        }
        for (slot, value, c) in inform_mass {
            let i = slot.informable_index().expect("filtered to informable");
            self.informable[i].observe(value, c.min(1.0));
        }
        for (p, c) in self.requested.iter_mut().zip(request_mass) {
            if c > 0.0 {
                *p = p.max(c.min(1.0));
            }
        }
    }

    /// Raw scores divided by `sum + 1`; the residual goes to `unknown`.
    pub fn normalized(&self, slot: Slot) -> Distribution {
        let belief = self.slot(slot);
        let denom = belief.scores.iter().map(|(_, s)| s).sum::<f64>() + 1.0;
        Distribution {
            values: belief.scores.iter().map(|(v, s)| (v.clone(), s / denom)).collect(),
            unknown: 1.0 / denom,
        }
    }

    pub fn halve(&mut self, slot: Slot, value: &str) {
        if let Some(i) = slot.informable_index() {
            self.informable[i].scale(value, 0.5);
        }
    }
}

pub fn update_beliefs(beliefs: &BeliefState, nbest: &NBestList) -> BeliefState {
    let mut next = beliefs.clone();
    next.update(nbest);
    next
}

pub fn normalized_belief(beliefs: &BeliefState, slot: Slot) -> Result<Distribution> {
    if !slot.is_informable() {
        return Err(Error::InvalidInput(format!("`{slot}` is not an informable slot")));
    }
    Ok(beliefs.normalized(slot))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grounding {
    #[default]
    Unmentioned,
    UserInformed,
    SystemConfirmed,
    Denied,
}

impl Grounding {
    pub const ALL: [Grounding; 4] =
        [Grounding::Unmentioned, Grounding::UserInformed, Grounding::SystemConfirmed, Grounding::Denied];

    fn index(self) -> usize {
        self as usize
    }
}

/// Grounding status of each informable slot, the value it refers to and the
/// values the user rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingState {
    pub status: [Grounding; 4],
    /// Latest value the user asserted or affirmed, unless since rejected.
    pub hypothesis: [Option<String>; 4],
    pub denied: [Vec<String>; 4],
}

/// Slot-value pairs the user rejected during a grounding update.
pub type Denials = Vec<(Slot, String)>;

impl GroundingState {
    pub fn get(&self, slot: Slot) -> Grounding {
        self.status[slot.informable_index().expect("informable slot")]
    }

    pub fn is_denied(&self, slot: Slot, value: &str) -> bool {
        slot.informable_index().is_some_and(|i| self.denied[i].iter().any(|v| v == value))
    }

    pub fn hypothesis(&self, slot: Slot) -> Option<&str> {
        slot.informable_index().and_then(|i| self.hypothesis[i].as_deref())
    }

    fn deny(&mut self, i: usize, value: &str, denials: &mut Denials) {
        if self.hypothesis[i].as_deref() == Some(value) {
            self.hypothesis[i] = None;
        }
        if !self.denied[i].iter().any(|v| v == value) {
            self.denied[i].push(value.to_string());
        }
        denials.push((INFORMABLE[i], value.to_string()));
    }
}

/// Informable pairs a system act states as facts about a venue or query.
fn verbalized(act: &DialogueAct, slot: Slot) -> Option<&str> {
    match act.function {
        Function::Recommend | Function::Inform | Function::Affirm => act.value_of(slot),
        _ => None,
    }
}

/// Advances the per-slot grounding machine on the top user act.
///
/// Returns the next state and the pairs the user rejected, explicitly with
/// `deny` after a confirmation question or implicitly by correcting a value
/// the system just stated.
pub fn update_grounding(
    g: &GroundingState,
    user_act: &DialogueAct,
    last_system_act: Option<&DialogueAct>,
) -> (GroundingState, Denials) {
    let mut next = g.clone();
    let mut denials = Denials::new();
    let queried = last_system_act.filter(|a| a.function == Function::PropQuestionFeedback);

    for (i, slot) in INFORMABLE.iter().copied().enumerate() {
        let user_value = user_act.value_of(slot);
        let stated = last_system_act.and_then(|a| verbalized(a, slot));
        let asked = queried.and_then(|a| a.value_of(slot));

        match (user_act.function, user_value) {
            (Function::Inform, Some(v)) => {
                if let Some(s) = stated.filter(|s| *s != v) {
                    next.deny(i, s, &mut denials);
                }
                next.denied[i].retain(|d| d != v);
                next.hypothesis[i] = Some(v.to_string());
                next.status[i] =
                    if stated == Some(v) { Grounding::SystemConfirmed } else { Grounding::UserInformed };
            }
            (Function::Deny, Some(v)) => {
                next.deny(i, v, &mut denials);
                next.status[i] = Grounding::Denied;
            }
            (Function::Affirm, _) if asked.is_some() => {
                let v = asked.expect("checked");
                next.denied[i].retain(|d| d != v);
                next.hypothesis[i] = Some(v.to_string());
                next.status[i] = Grounding::SystemConfirmed;
            }
            (Function::Deny, None) if asked.is_some() => {
                next.deny(i, asked.expect("checked"), &mut denials);
                next.status[i] = Grounding::Denied;
            }
            _ if user_act.function != Function::Deny
                && stated.is_some() && stated == next.hypothesis[i].as_deref() && next.status[i] == Grounding::UserInformed => {
                    next.status[i] = Grounding::SystemConfirmed;
                }
            _ => {}
        }
    }
    (next, denials)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

/// Full dialogue state for one episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DialogueState {
    pub beliefs: BeliefState,
    pub grounding: GroundingState,
    pub history: Vec<(Speaker, DialogueAct)>,
    pub db_matches: Vec<usize>,
    pub entity_under_discussion: Option<usize>,
    pub turn_count: usize,
    pub last_top_confidence: f64,
    /// Requestable slot indices the user asked for and the system has not
    /// answered yet, most recent last.
    pub open_requests: Vec<usize>,
    pub user_said_bye: bool,
    /// Minimum normalized top belief for a slot to constrain the database query.
    pub constraint_threshold: f64,
}

impl DialogueState {
    pub fn new(db: &Database, constraint_threshold: f64) -> Self {
        DialogueState {
            beliefs: BeliefState::default(),
            grounding: GroundingState::default(),
            history: Vec::new(),
            db_matches: (0..db.len()).collect(),
            entity_under_discussion: None,
            turn_count: 0,
            last_top_confidence: 0.0,
            open_requests: Vec::new(),
            user_said_bye: false,
            constraint_threshold,
        }
    }

    /// Current user-goal hypothesis for a slot and its normalized belief:
    /// the grounded value if there is one, else the best non-rejected belief.
    pub fn top_value(&self, slot: Slot) -> Option<(String, f64)> {
        let dist = self.beliefs.normalized(slot);
        if let Some(v) = self.grounding.hypothesis(slot) {
            let p = dist.values.iter().find(|(w, _)| w == v).map_or(0.0, |(_, p)| *p);
            return Some((v.to_string(), p));
        }
        let mut best: Option<(&str, f64)> = None;
        for (v, p) in &dist.values {
            if self.grounding.is_denied(slot, v) {
                continue;
            }
            if best.is_none_or(|(_, bp)| *p > bp) {
                best = Some((v, *p));
            }
        }
        best.map(|(v, p)| (v.to_string(), p))
    }

    /// Per-slot database filter: top hypotheses that the user confirmed or
    /// whose belief reaches the threshold.
    pub fn top_constraints(&self) -> [Option<String>; 4] {
        std::array::from_fn(|i| {
            let confirmed = self.grounding.status[i] == Grounding::SystemConfirmed;
            self.top_value(INFORMABLE[i])
                .filter(|(_, p)| confirmed || *p >= self.constraint_threshold)
                .map(|(v, _)| v)
        })
    }

    pub fn refresh_matches(&mut self, db: &Database) {
        let constraints = self.top_constraints();
        let filter: [Option<&str>; 4] = std::array::from_fn(|i| {
            constraints[i].as_deref().filter(|v| *v != crate::ontology::DONTCARE)
        });
        self.db_matches = db.matching_ids(&filter);
        if let Some(e) = self.entity_under_discussion {
            if self.db_matches.binary_search(&e).is_err() {
                self.entity_under_discussion = None;
            }
        }
    }

    /// Requested but not yet answered requestable slot indices.
    pub fn pending_requests(&self) -> impl Iterator<Item = usize> + '_ {
        self.open_requests.iter().copied()
    }

    /// Applies a user turn: beliefs, grounding, flags and history.
    pub fn observe(&mut self, nbest: &NBestList, db: &Database) {
        let top = &nbest.top().act;
        let last_system = self.last_system_act().cloned();
        self.beliefs.update(nbest);
        if top.function == Function::Request {
            for pair in &top.content {
                if let Some(i) = pair.slot.requestable_index() {
                    self.open_requests.retain(|r| *r != i);
                    self.open_requests.push(i);
                }
            }
        }
        let (grounding, denials) = update_grounding(&self.grounding, top, last_system.as_ref());
        self.grounding = grounding;
        for (slot, value) in denials {
            self.beliefs.halve(slot, &value);
        }
        self.last_top_confidence = nbest.top().confidence;
        self.user_said_bye = top.function == Function::Bye;
        self.history.push((Speaker::User, top.clone()));
        self.refresh_matches(db);
    }

    pub fn last_system_act(&self) -> Option<&DialogueAct> {
        self.history.iter().rev().find(|(s, _)| *s == Speaker::System).map(|(_, a)| a)
    }

    pub fn last_user_act(&self) -> Option<&DialogueAct> {
        self.history.iter().rev().find(|(s, _)| *s == Speaker::User).map(|(_, a)| a)
    }

    pub fn task_complete(&self) -> bool {
        self.entity_under_discussion.is_some() && self.pending_requests().next().is_none()
    }

    /// Compact per-turn record for JSON-lines logs.
    pub fn summary(&self) -> serde_json::Value {
        let slots: serde_json::Map<String, serde_json::Value> = INFORMABLE
            .iter()
            .map(|s| {
                let top = self.top_value(*s);
                (
                    s.name().to_string(),
                    serde_json::json!({
                        "top": top.as_ref().map(|(v, _)| v.clone()),
                        "belief": top.map(|(_, p)| p),
                        "grounding": self.grounding.get(*s),
                    }),
                )
            })
            .collect();
        let pending: Vec<&str> = self.pending_requests().map(|i| REQUESTABLE[i].name()).collect();
        serde_json::json!({
            "turn": self.turn_count,
            "slots": slots,
            "db_matches": self.db_matches.len(),
            "entity_under_discussion": self.entity_under_discussion,
            "pending_requests": pending,
            "last_top_confidence": self.last_top_confidence,
            "user_said_bye": self.user_said_bye,
        })
    }
}

/// Which agent a feature vector is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Task,
    AutoFeedback,
    Social,
    OneDim,
}

/// Version tag embedded in persisted policies.
pub const FEATURE_SCHEMA_VERSION: &str = "features/v1";

const BELIEF_BINS: [&str; 4] = ["unknown", "low", "mid", "high"];
const DB_BINS: [&str; 4] = ["0", "1", "2-4", "5+"];
const CONFIDENCE_BINS: [&str; 4] = ["0-0.3", "0.3-0.5", "0.5-0.8", "0.8-1"];
const TASK_REQUESTS: [Slot; 4] = [Slot::Phonenumber, Slot::Address, Slot::Price, Slot::Postcode];

impl FeatureSet {
    pub fn for_dimension(dimension: Dimension) -> Self {
        match dimension {
            Dimension::Task => FeatureSet::Task,
            Dimension::AutoFeedback => FeatureSet::AutoFeedback,
            Dimension::SocialOblMan => FeatureSet::Social,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            FeatureSet::Task => "task",
            FeatureSet::AutoFeedback => "autofeedback",
            FeatureSet::Social => "social",
            FeatureSet::OneDim => "onedim",
        }
    }

    pub fn names(self) -> Vec<String> {
        match self {
            FeatureSet::Task => {
                let mut names = Vec::new();
                for slot in INFORMABLE {
                    names.extend(BELIEF_BINS.iter().map(|b| format!("{slot}.belief.{b}")));
                    names.extend(Grounding::ALL.iter().map(|g| format!("{slot}.grounding.{g:?}")));
                }
                names.extend(DB_BINS.iter().map(|b| format!("db.{b}")));
                names.push("recommended".into());
                names.extend(TASK_REQUESTS.iter().map(|s| format!("requested.{s}")));
                names.push("user_bye".into());
                names.push("task.bias".into());
                names
            }
            FeatureSet::AutoFeedback => {
                let mut names: Vec<String> =
                    CONFIDENCE_BINS.iter().map(|b| format!("confidence.{b}")).collect();
                names.extend((0..=4).map(|n| format!("unconfirmed.{n}")));
                names.push("feedback.bias".into());
                names
            }
            FeatureSet::Social => vec!["user_bye".into(), "task_complete".into(), "social.bias".into()],
            FeatureSet::OneDim => [FeatureSet::Task, FeatureSet::AutoFeedback, FeatureSet::Social]
                .iter()
                .flat_map(|f| f.names())
                .collect(),
        }
    }

    pub fn len(self) -> usize {
        match self {
            FeatureSet::Task => 43,
            FeatureSet::AutoFeedback => 10,
            FeatureSet::Social => 3,
            FeatureSet::OneDim => 56,
        }
    }
}

/// Binary state features for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub set: FeatureSet,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i)
    }
}

fn one_hot(out: &mut Vec<f64>, width: usize, index: usize) {
    out.extend((0..width).map(|i| if i == index { 1.0 } else { 0.0 }));
}

fn flag(out: &mut Vec<f64>, on: bool) {
    out.push(if on { 1.0 } else { 0.0 });
}

fn belief_bin(p: Option<f64>) -> usize {
    match p {
        None => 0,
        Some(p) if p <= 0.15 => 1,
        Some(p) if p <= 0.25 => 2,
        Some(_) => 3,
    }
}

fn db_bin(n: usize) -> usize {
    match n {
        0 => 0,
        1 => 1,
        2..=4 => 2,
        _ => 3,
    }
}

fn confidence_bin(c: f64) -> usize {
    if c <= 0.3 {
        0
    } else if c <= 0.5 {
        1
    } else if c <= 0.8 {
        2
    } else {
        3
    }
}

fn push_task(state: &DialogueState, out: &mut Vec<f64>) {
    for slot in INFORMABLE {
        one_hot(out, 4, belief_bin(state.top_value(slot).map(|(_, p)| p)));
        one_hot(out, 4, state.grounding.get(slot).index());
    }
    one_hot(out, 4, db_bin(state.db_matches.len()));
    flag(out, state.entity_under_discussion.is_some());
    for slot in TASK_REQUESTS {
        let i = slot.requestable_index().expect("requestable");
        flag(out, state.open_requests.contains(&i));
    }
    flag(out, state.user_said_bye);
    out.push(1.0);
}

fn push_feedback(state: &DialogueState, out: &mut Vec<f64>) {
    one_hot(out, 4, confidence_bin(state.last_top_confidence));
    let unconfirmed = state.grounding.status.iter().filter(|g| **g == Grounding::UserInformed).count();
    one_hot(out, 5, unconfirmed.min(4));
    out.push(1.0);
}

fn push_social(state: &DialogueState, out: &mut Vec<f64>) {
    flag(out, state.user_said_bye);
    flag(out, state.task_complete());
    out.push(1.0);
}

pub fn extract_features(state: &DialogueState, set: FeatureSet) -> FeatureVector {
    let mut values = Vec::with_capacity(set.len());
    match set {
        FeatureSet::Task => push_task(state, &mut values),
        FeatureSet::AutoFeedback => push_feedback(state, &mut values),
        FeatureSet::Social => push_social(state, &mut values),
        FeatureSet::OneDim => {
            push_task(state, &mut values);
            push_feedback(state, &mut values);
            push_social(state, &mut values);
        }
    }
    debug_assert_eq!(values.len(), set.len());
    FeatureVector { set, values }
}

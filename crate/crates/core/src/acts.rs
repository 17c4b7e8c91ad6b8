//! Dialogue-act taxonomy, summary-action sets and the rule-based combination
//! of per-dimension candidates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::{Ontology, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Task,
    AutoFeedback,
    SocialOblMan,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Task, Dimension::AutoFeedback, Dimension::SocialOblMan];

    pub fn tag(self) -> &'static str {
        match self {
            Dimension::Task => "task",
            Dimension::AutoFeedback => "autofeedback",
            Dimension::SocialOblMan => "social",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.tag() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown dimension `{s}`")))
    }
}

/// Communicative function of a dialogue act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Function {
    Inform,
    SetQuestion,
    PropQuestion,
    AnswerSet,
    AnswerProp,
    Recommend,
    NegativeFeedback,
    PropQuestionFeedback,
    ReturnGoodbye,
    Greet,
    Affirm,
    Deny,
    Request,
    Bye,
    Null,
}

impl Function {
    pub const ALL: [Function; 15] = [
        Function::Inform,
        Function::SetQuestion,
        Function::PropQuestion,
        Function::AnswerSet,
        Function::AnswerProp,
        Function::Recommend,
        Function::NegativeFeedback,
        Function::PropQuestionFeedback,
        Function::ReturnGoodbye,
        Function::Greet,
        Function::Affirm,
        Function::Deny,
        Function::Request,
        Function::Bye,
        Function::Null,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Function::Inform => "inform",
            Function::SetQuestion => "setQuestion",
            Function::PropQuestion => "propQuestion",
            Function::AnswerSet => "answerSet",
            Function::AnswerProp => "answerProp",
            Function::Recommend => "recommend",
            Function::NegativeFeedback => "negativeFeedback",
            Function::PropQuestionFeedback => "propQuestionFeedback",
            Function::ReturnGoodbye => "returnGoodbye",
            Function::Greet => "greet",
            Function::Affirm => "affirm",
            Function::Deny => "deny",
            Function::Request => "request",
            Function::Bye => "bye",
            Function::Null => "null",
        }
    }

    /// Dimension an act with this function belongs to when none is given.
    pub fn default_dimension(self) -> Dimension {
        match self {
            Function::NegativeFeedback | Function::PropQuestionFeedback => Dimension::AutoFeedback,
            Function::ReturnGoodbye | Function::Greet | Function::Bye => Dimension::SocialOblMan,
            _ => Dimension::Task,
        }
    }

    pub fn allowed_in(self, dimension: Dimension) -> bool {
        self == Function::Null || self.default_dimension() == dimension
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Function {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Function::ALL.into_iter().find(|f| f.tag() == s).ok_or_else(|| Error::Parse {
            token: s.to_string(),
            message: "unknown communicative function".into(),
        })
    }
}

/// One content item; requests carry a slot without a value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotValue {
    pub slot: Slot,
    pub value: Option<String>,
}

impl SlotValue {
    pub fn new(slot: Slot, value: impl Into<String>) -> Self {
        SlotValue { slot, value: Some(value.into()) }
    }

    pub fn bare(slot: Slot) -> Self {
        SlotValue { slot, value: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogueAct {
    pub dimension: Dimension,
    pub function: Function,
    pub content: Vec<SlotValue>,
    pub entity_ref: Option<usize>,
}

impl DialogueAct {
    pub fn new(function: Function, content: Vec<SlotValue>) -> Self {
        DialogueAct { dimension: function.default_dimension(), function, content, entity_ref: None }
    }

    pub fn bare(function: Function) -> Self {
        Self::new(function, Vec::new())
    }

    pub fn inform(slot: Slot, value: impl Into<String>) -> Self {
        Self::new(Function::Inform, vec![SlotValue::new(slot, value)])
    }

    pub fn request(slot: Slot) -> Self {
        Self::new(Function::Request, vec![SlotValue::bare(slot)])
    }

    pub fn with_entity(mut self, id: usize) -> Self {
        self.entity_ref = Some(id);
        self
    }

    pub fn with_dimension(mut self, dimension: Dimension) -> Result<Self> {
        if !self.function.allowed_in(dimension) {
            return Err(Error::InvalidInput(format!(
                "`{}` is not a {dimension} function",
                self.function
            )));
        }
        self.dimension = dimension;
        Ok(self)
    }

    /// Value carried for `slot`, if any.
    pub fn value_of(&self, slot: Slot) -> Option<&str> {
        self.content.iter().find(|p| p.slot == slot).and_then(|p| p.value.as_deref())
    }

    /// Checks dimension compatibility and content against the ontology.
    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        if !self.function.allowed_in(self.dimension) {
            return Err(Error::InvalidInput(format!(
                "`{}` is not a {} function",
                self.function, self.dimension
            )));
        }
        for pair in &self.content {
            if let (true, Some(v)) = (pair.slot.is_informable(), &pair.value) {
                if !ontology.is_valid_value(pair.slot, v) {
                    return Err(Error::Parse {
                        token: v.clone(),
                        message: format!("unknown value for `{}`", pair.slot),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Canonical notation: `[dim:]function(slot=value,...)[@entity]`; the dimension
/// prefix appears only when it differs from the function's default.
impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dimension != self.function.default_dimension() {
            write!(f, "{}:", self.dimension)?;
        }
        write!(f, "{}(", self.function)?;
        for (i, pair) in self.content.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match &pair.value {
                Some(v) => write!(f, "{}={v}", pair.slot)?,
                None => write!(f, "{}", pair.slot)?,
            }
        }
        f.write_str(")")?;
        if let Some(id) = self.entity_ref {
            write!(f, "@{id}")?;
        }
        Ok(())
    }
}

fn parse_error(token: &str, message: &str) -> Error {
    Error::Parse { token: token.to_string(), message: message.to_string() }
}

/// Parses act notation, e.g. `inform(foodtype=indian)` or `request(phonenumber)`.
pub fn parse_act_notation(text: &str, ontology: &Ontology) -> Result<DialogueAct> {
    let text = text.trim();
    let open = text.find('(').ok_or_else(|| parse_error(text, "expected `(`"))?;
    let close = text.rfind(')').ok_or_else(|| parse_error(text, "expected `)`"))?;
    if close < open {
        return Err(parse_error(text, "unbalanced parentheses"));
    }

    let head = text[..open].trim();
    let (dimension, function) = match head.split_once(':') {
        Some((d, f)) => (Some(d.trim()), f.trim()),
        None => (None, head),
    };
    let function: Function = function.parse()?;
    let mut act = DialogueAct::bare(function);
    if let Some(d) = dimension {
        let dim: Dimension = d.parse().map_err(|_| parse_error(d, "unknown dimension"))?;
        act = act.with_dimension(dim).map_err(|_| parse_error(d, "function not allowed in dimension"))?;
    }

    let tail = text[close + 1..].trim();
    if let Some(id) = tail.strip_prefix('@') {
        let id = id.trim();
        act.entity_ref = Some(id.parse().map_err(|_| parse_error(id, "expected entity id"))?);
    } else if !tail.is_empty() {
        return Err(parse_error(tail, "trailing input"));
    }

    let body = text[open + 1..close].trim();
    if !body.is_empty() {
        for item in body.split(',') {
            let item = item.trim();
            let (slot_text, value) = match item.split_once('=') {
                Some((s, v)) => (s.trim(), Some(v.trim())),
                None => (item, None),
            };
            let slot: Slot = slot_text.parse().map_err(|_| parse_error(slot_text, "unknown slot"))?;
            if let Some(v) = value {
                if v.is_empty() || v.contains(['(', ')', '=']) {
                    return Err(parse_error(item, "malformed value"));
                }
                if slot.is_informable() && !ontology.is_valid_value(slot, v) {
                    return Err(parse_error(v, &format!("unknown value for `{slot}`")));
                }
            }
            act.content.push(SlotValue { slot, value: value.map(str::to_string) });
        }
    }
    Ok(act)
}

/// Output actions of the one-dimensional system; discriminants are the row indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SystemAction {
    NegativeFeedback = 0,
    PropQuestionFeedback = 1,
    AnswerSet = 2,
    AnswerProp = 3,
    Recommend = 4,
    ReturnGoodbye = 5,
    AskSlot = 6,
}

impl SystemAction {
    pub const ALL: [SystemAction; 7] = [
        SystemAction::NegativeFeedback,
        SystemAction::PropQuestionFeedback,
        SystemAction::AnswerSet,
        SystemAction::AnswerProp,
        SystemAction::Recommend,
        SystemAction::ReturnGoodbye,
        SystemAction::AskSlot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn dimension(self) -> Dimension {
        match self {
            SystemAction::NegativeFeedback | SystemAction::PropQuestionFeedback => Dimension::AutoFeedback,
            SystemAction::ReturnGoodbye => Dimension::SocialOblMan,
            _ => Dimension::Task,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SystemAction::NegativeFeedback => "negativeFeedback",
            SystemAction::PropQuestionFeedback => "propQFeedback",
            SystemAction::AnswerSet => "answerSet",
            SystemAction::AnswerProp => "answerProp",
            SystemAction::Recommend => "recommend",
            SystemAction::ReturnGoodbye => "returnGoodbye",
            SystemAction::AskSlot => "askSlot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskAction {
    AskSlot,
    Recommend,
    AnswerSet,
    AnswerProp,
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeedbackAction {
    NegativeFeedback,
    PropQuestionFeedback,
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SocialAction {
    ReturnGoodbye,
    Null,
}

impl TaskAction {
    pub const ALL: [TaskAction; 5] =
        [TaskAction::AskSlot, TaskAction::Recommend, TaskAction::AnswerSet, TaskAction::AnswerProp, TaskAction::Null];

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            TaskAction::AskSlot => "askSlot",
            TaskAction::Recommend => "recommend",
            TaskAction::AnswerSet => "answerSet",
            TaskAction::AnswerProp => "answerProp",
            TaskAction::Null => "null",
        }
    }

    fn output(self) -> Option<SystemAction> {
        match self {
            TaskAction::AskSlot => Some(SystemAction::AskSlot),
            TaskAction::Recommend => Some(SystemAction::Recommend),
            TaskAction::AnswerSet => Some(SystemAction::AnswerSet),
            TaskAction::AnswerProp => Some(SystemAction::AnswerProp),
            TaskAction::Null => None,
        }
    }
}

impl FeedbackAction {
    pub const ALL: [FeedbackAction; 3] =
        [FeedbackAction::NegativeFeedback, FeedbackAction::PropQuestionFeedback, FeedbackAction::Null];

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            FeedbackAction::NegativeFeedback => "negativeFeedback",
            FeedbackAction::PropQuestionFeedback => "propQFeedback",
            FeedbackAction::Null => "null",
        }
    }
}

impl SocialAction {
    pub const ALL: [SocialAction; 2] = [SocialAction::ReturnGoodbye, SocialAction::Null];

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            SocialAction::ReturnGoodbye => "returnGoodbye",
            SocialAction::Null => "null",
        }
    }
}

/// Number of summary actions available to an agent of each dimension.
pub fn action_count(dimension: Dimension) -> usize {
    match dimension {
        Dimension::Task => TaskAction::ALL.len(),
        Dimension::AutoFeedback => FeedbackAction::ALL.len(),
        Dimension::SocialOblMan => SocialAction::ALL.len(),
    }
}

/// Untyped summary action as read from logs or user input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryAction {
    pub dimension: Dimension,
    pub index: usize,
}

impl SummaryAction {
    pub fn label(self) -> Option<&'static str> {
        match self.dimension {
            Dimension::Task => TaskAction::from_index(self.index).map(TaskAction::label),
            Dimension::AutoFeedback => FeedbackAction::from_index(self.index).map(FeedbackAction::label),
            Dimension::SocialOblMan => SocialAction::from_index(self.index).map(SocialAction::label),
        }
    }
}

/// Resolves one candidate per dimension into at most one output action.
///
/// Precedence: negative feedback, then any non-null task act, then
/// returnGoodbye, then propositional-question feedback. The all-null triple
/// yields `None`, a turn in which the system passes.
pub fn combine(task: TaskAction, feedback: FeedbackAction, social: SocialAction) -> Option<SystemAction> {
    if feedback == FeedbackAction::NegativeFeedback {
        return Some(SystemAction::NegativeFeedback);
    }
    if let Some(out) = task.output() {
        return Some(out);
    }
    if social == SocialAction::ReturnGoodbye {
        return Some(SystemAction::ReturnGoodbye);
    }
    if feedback == FeedbackAction::PropQuestionFeedback {
        return Some(SystemAction::PropQuestionFeedback);
    }
    None
}

/// Validating form of [`combine`] over untyped summary actions.
pub fn combine_candidate_acts(
    task: SummaryAction,
    feedback: SummaryAction,
    social: SummaryAction,
) -> Result<Option<SystemAction>> {
    let check = |a: SummaryAction, want: Dimension| {
        if a.dimension != want || a.index >= action_count(want) {
            Err(Error::InvalidInput(format!(
                "{:?} action {} is not a valid {want} candidate",
                a.dimension, a.index
            )))
        } else {
            Ok(a.index)
        }
    };
    let t = TaskAction::ALL[check(task, Dimension::Task)?];
    let f = FeedbackAction::ALL[check(feedback, Dimension::AutoFeedback)?];
    let s = SocialAction::ALL[check(social, Dimension::SocialOblMan)?];
    Ok(combine(t, f, s))
}

/// Tally of the 5x3x2 candidate triples by resolved output row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CombinationTable {
    pub counts: [usize; 7],
    pub null: usize,
}

impl CombinationTable {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.null
    }
}

impl fmt::Display for CombinationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "index,action,dimension,combinations")?;
        for action in SystemAction::ALL {
            writeln!(
                f,
                "{},{},{},{}",
                action.index(),
                action.label(),
                action.dimension(),
                self.counts[action.index()]
            )?;
        }
        write!(f, "null,pass,-,{}", self.null)
    }
}

pub fn enumerate_combination_table() -> CombinationTable {
    let mut table = CombinationTable { counts: [0; 7], null: 0 };
    for t in TaskAction::ALL {
        for fb in FeedbackAction::ALL {
            for s in SocialAction::ALL {
                match combine(t, fb, s) {
                    Some(out) => table.counts[out.index()] += 1,
                    None => table.null += 1,
                }
            }
        }
    }
    table
}

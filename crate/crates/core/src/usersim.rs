//! Agenda-based simulated user.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acts::{DialogueAct, Function, SlotValue};
use crate::ontology::{Constraints, Database, Slot, DONTCARE, INFORMABLE};

/// Probability that a slot of the seed entity becomes a constraint.
pub const CONSTRAINT_PROBABILITY: f64 = 0.7;
pub const GREET_PROBABILITY: f64 = 0.5;
pub const MAX_REQUESTS: usize = 3;

/// Requestable slots a goal may ask about.
pub const GOAL_REQUESTS: [Slot; 4] = [Slot::Phonenumber, Slot::Address, Slot::Price, Slot::Postcode];

pub const SUCCESS_REWARD: f64 = 30.0;
pub const TURN_REWARD: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGoal {
    /// Every informable slot, `dontcare` where unconstrained.
    pub constraints: Constraints,
    pub requests: BTreeSet<Slot>,
    pub satisfied_requests: BTreeSet<Slot>,
    pub received_recommendation: Option<usize>,
    /// Database entity the goal was drawn from.
    pub seed_entity: usize,
}

impl UserGoal {
    pub fn value(&self, slot: Slot) -> &str {
        self.constraints.get(&slot).map_or(DONTCARE, String::as_str)
    }

    /// Non-`dontcare` constraints.
    pub fn informed(&self) -> impl Iterator<Item = (Slot, &str)> + '_ {
        self.constraints.iter().filter(|(_, v)| *v != DONTCARE).map(|(s, v)| (*s, v.as_str()))
    }

    /// Constraints the entity fails, in slot order.
    pub fn violations(&self, db: &Database, entity: usize) -> Vec<Slot> {
        let Some(e) = db.get(entity) else { return INFORMABLE.to_vec() };
        self.informed().filter(|(s, v)| e.value(*s) != *v).map(|(s, _)| s).collect()
    }

    pub fn is_satisfied(&self) -> bool {
        self.received_recommendation.is_some() && self.requests.is_subset(&self.satisfied_requests)
    }
}

/// Simulated user holding a goal and a stack of pending acts.
#[derive(Debug, Clone)]
pub struct UserSimulator {
    goal: UserGoal,
    /// Top of the stack is the last element; `bye` is always at index 0.
    agenda: Vec<DialogueAct>,
    last_act: Option<DialogueAct>,
    over: bool,
}

/// Draws a goal from a uniformly chosen database entity.
pub fn sample_goal<R: Rng + ?Sized>(db: &Database, rng: &mut R) -> UserGoal {
    let entity = &db.entities[rng.random_range(0..db.len())];
    let constraints = INFORMABLE
        .iter()
        .map(|s| {
            let value = if rng.random_bool(CONSTRAINT_PROBABILITY) { entity.value(*s) } else { DONTCARE };
            (*s, value.to_string())
        })
        .collect();
    let count = rng.random_range(1..=MAX_REQUESTS);
    let requests = GOAL_REQUESTS.choose_multiple(rng, count).copied().collect();
    UserGoal {
        constraints,
        requests,
        satisfied_requests: BTreeSet::new(),
        received_recommendation: None,
        seed_entity: entity.id,
    }
}

impl UserSimulator {
    /// Samples a goal and builds its initial agenda.
    pub fn sample<R: Rng + ?Sized>(db: &Database, rng: &mut R) -> Self {
        let goal = sample_goal(db, rng);
        Self::with_goal(goal, rng)
    }

    pub fn with_goal<R: Rng + ?Sized>(goal: UserGoal, rng: &mut R) -> Self {
        let mut informs: Vec<DialogueAct> = goal.informed().map(|(s, v)| DialogueAct::inform(s, v)).collect();
        informs.shuffle(rng);
        let mut agenda = vec![DialogueAct::bare(Function::Bye)];
        agenda.extend(informs);
        if rng.random_bool(GREET_PROBABILITY) {
            agenda.push(DialogueAct::bare(Function::Greet));
        }
        UserSimulator { goal, agenda, last_act: None, over: false }
    }

    pub fn goal(&self) -> &UserGoal {
        &self.goal
    }

    pub fn agenda(&self) -> &[DialogueAct] {
        &self.agenda
    }

    pub fn is_over(&self) -> bool {
        self.over
    }

    /// Number of constraint informs still pending on the agenda.
    pub fn pending_informs(&self) -> usize {
        self.agenda.iter().filter(|a| a.function == Function::Inform).count()
    }

    /// Opening user act.
    pub fn start(&mut self) -> DialogueAct {
        self.emit_next()
    }

    pub fn is_success(&self) -> bool {
        self.goal.is_satisfied()
    }

    /// -1 per system turn, plus the success bonus on the terminal step.
    pub fn reward(&self, terminal: bool) -> f64 {
        if terminal && self.is_success() {
            TURN_REWARD + SUCCESS_REWARD
        } else {
            TURN_REWARD
        }
    }

    fn emit(&mut self, act: DialogueAct) -> DialogueAct {
        self.last_act = Some(act.clone());
        act
    }

    fn remove_where(&mut self, pred: impl Fn(&DialogueAct) -> bool) {
        let bye = self.agenda.remove(0);
        self.agenda.retain(|a| !pred(a));
        self.agenda.insert(0, bye);
    }

    fn push_front_requests(&mut self) {
        self.remove_where(|a| a.function == Function::Request);
        let pending: Vec<Slot> =
            self.goal.requests.difference(&self.goal.satisfied_requests).copied().collect();
        for slot in pending.into_iter().rev() {
            self.agenda.push(DialogueAct::request(slot));
        }
    }

    /// Pops the next agenda item, closing once the goal is met.
    fn emit_next(&mut self) -> DialogueAct {
        if self.goal.is_satisfied() {
            self.agenda.truncate(1);
            return self.emit(DialogueAct::bare(Function::Bye));
        }
        if self.agenda.len() > 1 {
            let act = self.agenda.pop().expect("non-empty agenda");
            return self.emit(act);
        }
        // Only `bye` is left but the goal is open: ask for what is missing.
        if self.goal.received_recommendation.is_none() {
            return self.emit(DialogueAct::request(Slot::Name));
        }
        self.push_front_requests();
        let act = self.agenda.pop().expect("unsatisfied request pushed");
        self.emit(act)
    }

    fn correct(&mut self, violated: &[Slot], rng: &mut impl Rng) -> DialogueAct {
        let slot = *violated.choose(rng).expect("non-empty violations");
        self.remove_where(|a| a.function == Function::Inform && a.value_of(slot).is_some());
        let act = DialogueAct::inform(slot, self.goal.value(slot));
        self.emit(act)
    }

    /// Responds to a system act; `None` means the system passed its turn.
    /// Returns the user act and whether the dialogue is over.
    pub fn react<R: Rng>(&mut self, system_act: Option<&DialogueAct>, db: &Database, rng: &mut R) -> (DialogueAct, bool) {
        let Some(sys) = system_act else {
            return (self.emit_next(), false);
        };
        let act = match sys.function {
            Function::ReturnGoodbye => {
                self.over = true;
                self.emit(DialogueAct::bare(Function::Bye))
            }
            Function::SetQuestion => match sys.content.iter().find(|p| p.slot.is_informable()) {
                Some(pair) => {
                    let slot = pair.slot;
                    self.remove_where(|a| a.function == Function::Inform && a.value_of(slot).is_some());
                    let act = DialogueAct::inform(slot, self.goal.value(slot));
                    self.emit(act)
                }
                None => self.emit_next(),
            },
            Function::PropQuestionFeedback | Function::PropQuestion => {
                match sys.content.iter().find(|p| p.slot.is_informable() && p.value.is_some()) {
                    Some(pair) => {
                        let slot = pair.slot;
                        let asked = pair.value.clone().expect("filtered");
                        if asked == self.goal.value(slot) {
                            self.emit(DialogueAct::bare(Function::Affirm))
                        } else {
                            self.remove_where(|a| a.function == Function::Inform && a.value_of(slot).is_some());
                            self.agenda.push(DialogueAct::inform(slot, self.goal.value(slot)));
                            self.emit(DialogueAct::new(Function::Deny, vec![SlotValue::new(slot, asked)]))
                        }
                    }
                    None => self.emit_next(),
                }
            }
            Function::NegativeFeedback => match self.last_act.clone() {
                Some(previous) => self.emit(previous),
                None => self.emit_next(),
            },
            Function::Recommend => match sys.entity_ref {
                Some(entity) => {
                    let violated = self.goal.violations(db, entity);
                    if violated.is_empty() {
                        if self.goal.received_recommendation != Some(entity) {
                            self.goal.received_recommendation = Some(entity);
                            self.goal.satisfied_requests.clear();
                        }
                        self.push_front_requests();
                        self.emit_next()
                    } else {
                        self.correct(&violated, rng)
                    }
                }
                None => self.emit_next(),
            },
            Function::Inform => {
                let answered: Vec<Slot> = sys
                    .content
                    .iter()
                    .filter(|p| p.value.is_some() && self.goal.requests.contains(&p.slot))
                    .map(|p| p.slot)
                    .collect();
                let about_recommended =
                    sys.entity_ref.is_some() && sys.entity_ref == self.goal.received_recommendation;
                let wrong: Vec<Slot> = sys
                    .content
                    .iter()
                    .filter(|p| {
                        p.slot.is_informable()
                            && p.value.as_deref().is_some_and(|v| self.goal.value(p.slot) != v)
                    })
                    .map(|p| p.slot)
                    .collect();
                if about_recommended && !answered.is_empty() {
                    for slot in answered {
                        self.goal.satisfied_requests.insert(slot);
                        self.remove_where(|a| a.function == Function::Request && a.content.iter().any(|p| p.slot == slot));
                    }
                    self.emit_next()
                } else if sys.entity_ref.is_none() && !wrong.is_empty() {
                    self.correct(&wrong, rng)
                } else {
                    self.emit_next()
                }
            }
            _ => self.emit_next(),
        };
        let over = self.over;
        (act, over)
    }
}

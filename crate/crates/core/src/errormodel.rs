//! Simulated speech-understanding errors: turns the true user act into an
//! n-best list with confidence scores.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::acts::{DialogueAct, Function};
use crate::error::{Error, Result};
use crate::ontology::{Ontology, DONTCARE, REQUESTABLE};
use crate::state::{NBestList, UserActHypothesis};

/// Total confidence mass handed out; the rest is left for unlisted hypotheses.
pub const LISTED_MASS: f64 = 0.9;

const CONFUSION_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorConfig {
    pub error_rate: f64,
    pub nbest_len: usize,
    pub confidence_concentration: f64,
}

impl Default for ErrorConfig {
    fn default() -> Self {
        ErrorConfig { error_rate: 0.2, nbest_len: 3, confidence_concentration: 5.0 }
    }
}

impl ErrorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(Error::Config(format!("error_rate {} outside [0,1]", self.error_rate)));
        }
        if self.nbest_len == 0 {
            return Err(Error::Config("nbest_len must be at least 1".into()));
        }
        if !(self.confidence_concentration > 0.0) {
            return Err(Error::Config("confidence_concentration must be positive".into()));
        }
        Ok(())
    }
}

const CONTENTLESS: [Function; 4] = [Function::Greet, Function::Bye, Function::Affirm, Function::Deny];
const ASSERTIVE: [Function; 2] = [Function::Inform, Function::Deny];

fn swap_candidates(act: &DialogueAct) -> &'static [Function] {
    let group: &'static [Function] = if act.content.is_empty() {
        &CONTENTLESS
    } else if act.content.iter().all(|p| p.slot.is_informable() && p.value.is_some()) {
        &ASSERTIVE
    } else {
        &[]
    };
    if group.contains(&act.function) {
        group
    } else {
        &[]
    }
}

fn substitute<R: Rng + ?Sized>(act: &DialogueAct, ontology: &Ontology, rng: &mut R) -> Option<DialogueAct> {
    let positions: Vec<usize> = (0..act.content.len())
        .filter(|&i| {
            let p = &act.content[i];
            p.slot.is_informable() && p.value.is_some() || p.slot.requestable_index().is_some() && p.value.is_none()
        })
        .collect();
    let &i = positions.choose(rng)?;
    let mut out = act.clone();
    let pair = &mut out.content[i];
    match &pair.value {
        Some(current) => {
            let set = ontology.values(pair.slot)?;
            let options: Vec<&str> = set
                .iter()
                .map(String::as_str)
                .chain(std::iter::once(DONTCARE))
                .filter(|v| v != current)
                .collect();
            pair.value = Some(options.choose(rng)?.to_string());
        }
        None => {
            let options: Vec<_> = REQUESTABLE.iter().filter(|s| **s != pair.slot).collect();
            pair.slot = **options.choose(rng)?;
        }
    }
    Some(out)
}

/// A single confusion of `act`: a value substitution within one slot or a
/// swap to another function compatible with the content.
pub fn confuse<R: Rng + ?Sized>(act: &DialogueAct, ontology: &Ontology, rng: &mut R) -> Option<DialogueAct> {
    let swaps: Vec<Function> = swap_candidates(act).iter().copied().filter(|f| *f != act.function).collect();
    let can_substitute = act.content.iter().any(|p| {
        p.slot.is_informable() && p.value.is_some() || p.slot.requestable_index().is_some() && p.value.is_none()
    });
    let do_swap = match (swaps.is_empty(), can_substitute) {
        (true, false) => return None,
        (true, true) => false,
        (false, false) => true,
        (false, true) => rng.random_bool(0.5),
    };
    if do_swap {
        let mut out = act.clone();
        out.function = *swaps.choose(rng)?;
        out.dimension = out.function.default_dimension();
        Some(out)
    } else {
        substitute(act, ontology, rng)
    }
}

/// Sorted, normalized confidences for `n` hypotheses.
fn confidences<R: Rng + ?Sized>(n: usize, concentration: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("validated concentration");
    let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
    w.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total * LISTED_MASS).collect()
}

pub fn corrupt<R: Rng + ?Sized>(
    true_act: &DialogueAct,
    cfg: &ErrorConfig,
    ontology: &Ontology,
    rng: &mut R,
) -> NBestList {
    let misrecognized = rng.random_bool(cfg.error_rate);
    let mut acts: Vec<DialogueAct> = Vec::with_capacity(cfg.nbest_len);
    let top_confused = misrecognized.then(|| confuse(true_act, ontology, rng)).flatten();
    acts.push(top_confused.clone().unwrap_or_else(|| true_act.clone()));

    let mut attempts = 0;
    while acts.len() < cfg.nbest_len && attempts < CONFUSION_ATTEMPTS {
        attempts += 1;
        let Some(c) = confuse(true_act, ontology, rng) else { break };
        if c != *true_act && !acts.contains(&c) {
            acts.push(c);
        }
    }
    if top_confused.is_some() {
        // the displaced true act goes somewhere below the top
        let slots = acts.len().min(cfg.nbest_len - 1).max(1);
        let pos = 1 + rng.random_range(0..slots);
        if cfg.nbest_len == 1 {
            acts.truncate(1);
        } else {
            acts.insert(pos.min(acts.len()), true_act.clone());
            acts.truncate(cfg.nbest_len);
        }
    }

    let conf = confidences(acts.len(), cfg.confidence_concentration, rng);
    let hypotheses = acts
        .into_iter()
        .zip(conf)
        .map(|(act, confidence)| UserActHypothesis { act, confidence })
        .collect();
    NBestList::new(hypotheses).expect("corrupt builds a valid n-best list")
}

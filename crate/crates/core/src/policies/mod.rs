//! Acting agents and the summary-action space.
//!
//! The action space of a domain with `|S|` constraint slots has
//! `5 + 3|S|` summary actions: five global acts (`hello`, `inform`,
//! `inform_byname`, `inform_alternatives`, `bye`) followed by three
//! communication functions (`request`, `confirm`, `select`) per slot in
//! ontology order.
//!
//! Policies implement [`DialoguePolicy`]; the feudal policy and the DQN
//! baselines live in the submodules.

mod baselines;
mod feudal;

pub use baselines::{DipDqnPolicy, FlatDqnPolicy, HandcraftedPolicy};
pub use feudal::{FeudalDecision, FeudalPolicy};

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefState, BeliefError, NONE_IDX};
use crate::ontology::Ontology;
use crate::qlearner::QError;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Learner(#[from] QError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("no legal action under the current mask")]
    NoLegalAction,
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

/// Number of slot-independent (global) summary actions.
pub const GLOBAL_ACTS: usize = 5;
/// Number of per-slot communication functions.
pub const SLOT_ACTS: usize = 3;
/// Slot-independent sub-policy head size: the 5 globals plus `pass`.
pub const INDEP_HEAD: usize = GLOBAL_ACTS + 1;
/// Index of `pass` in the slot-independent head.
pub const INDEP_PASS: usize = GLOBAL_ACTS;
/// Slot-dependent sub-policy head size: request/confirm/select plus `pass`.
pub const SLOT_HEAD: usize = SLOT_ACTS + 1;
/// Index of `pass` in the slot-dependent head.
pub const SLOT_PASS: usize = SLOT_ACTS;

/// An abstract system act; per-slot variants carry the slot index in
/// ontology order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SummaryAction {
    Hello,
    Inform,
    InformByName,
    InformAlternatives,
    Bye,
    Request(usize),
    Confirm(usize),
    Select(usize),
}

impl SummaryAction {
    pub fn is_global(&self) -> bool {
        matches!(
            self,
            SummaryAction::Hello
                | SummaryAction::Inform
                | SummaryAction::InformByName
                | SummaryAction::InformAlternatives
                | SummaryAction::Bye
        )
    }

    /// Index within the 5 global acts, if global.
    pub fn global_index(&self) -> Option<usize> {
        match self {
            SummaryAction::Hello => Some(0),
            SummaryAction::Inform => Some(1),
            SummaryAction::InformByName => Some(2),
            SummaryAction::InformAlternatives => Some(3),
            SummaryAction::Bye => Some(4),
            _ => None,
        }
    }

    /// (slot, communication-function index) for per-slot acts.
    pub fn slot_act(&self) -> Option<(usize, usize)> {
        match self {
            SummaryAction::Request(s) => Some((*s, 0)),
            SummaryAction::Confirm(s) => Some((*s, 1)),
            SummaryAction::Select(s) => Some((*s, 2)),
            _ => None,
        }
    }

    /// Position in the enumerated summary-action list.
    pub fn index(&self) -> usize {
        match self {
            SummaryAction::Hello => 0,
            SummaryAction::Inform => 1,
            SummaryAction::InformByName => 2,
            SummaryAction::InformAlternatives => 3,
            SummaryAction::Bye => 4,
            SummaryAction::Request(s) => GLOBAL_ACTS + SLOT_ACTS * s,
            SummaryAction::Confirm(s) => GLOBAL_ACTS + SLOT_ACTS * s + 1,
            SummaryAction::Select(s) => GLOBAL_ACTS + SLOT_ACTS * s + 2,
        }
    }

    pub fn render(&self, ont: &Ontology) -> String {
        match self {
            SummaryAction::Hello => "hello()".into(),
            SummaryAction::Inform => "inform()".into(),
            SummaryAction::InformByName => "inform_byname()".into(),
            SummaryAction::InformAlternatives => "inform_alternatives()".into(),
            SummaryAction::Bye => "bye()".into(),
            SummaryAction::Request(s) => format!("request({})", ont.slot(*s).name),
            SummaryAction::Confirm(s) => format!("confirm({})", ont.slot(*s).name),
            SummaryAction::Select(s) => format!("select({})", ont.slot(*s).name),
        }
    }
}

/// The two-way master decision of the feudal policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MasterAction {
    SlotIndependent,
    SlotDependent,
}

impl MasterAction {
    pub fn index(self) -> usize {
        match self {
            MasterAction::SlotIndependent => 0,
            MasterAction::SlotDependent => 1,
        }
    }
}

/// Deterministic enumeration of the summary-action space:
/// the 5 globals, then `request/confirm/select` per slot in ontology order.
/// `|A| = 5 + 3|S|`.
pub fn enumerate_actions(ont: &Ontology) -> Vec<SummaryAction> {
    let mut v = vec![
        SummaryAction::Hello,
        SummaryAction::Inform,
        SummaryAction::InformByName,
        SummaryAction::InformAlternatives,
        SummaryAction::Bye,
    ];
    for s in 0..ont.num_slots() {
        v.push(SummaryAction::Request(s));
        v.push(SummaryAction::Confirm(s));
        v.push(SummaryAction::Select(s));
    }
    v
}

/// Per-turn legality filter over the enumerated actions.
///
/// With masks on: `inform_byname`/`inform_alternatives` are illegal until an
/// offer happened, `confirm`/`select` are illegal while a slot's top belief
/// is `*NONE*`, and `hello` is illegal after turn 0. With masks off every
/// action is legal.
pub fn action_mask(
    b: &BeliefState,
    ont: &Ontology,
    actions: &[SummaryAction],
    masks_on: bool,
) -> Vec<bool> {
    let _ = ont;
    if !masks_on {
        return vec![true; actions.len()];
    }
    actions
        .iter()
        .map(|a| match a {
            SummaryAction::Hello => b.turn_index == 0,
            SummaryAction::Inform | SummaryAction::Bye => true,
            SummaryAction::InformByName | SummaryAction::InformAlternatives => b.offer_happened,
            SummaryAction::Confirm(s) | SummaryAction::Select(s) => {
                b.slot(*s).top().0 != NONE_IDX
            }
            SummaryAction::Request(_) => true,
        })
        .collect()
}

/// An executed system act together with its environment-level payload:
/// which entity was offered, which requested slots were answered, whether
/// the act reported an empty database match, and which (slot, entry) a
/// confirm targeted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemTurn {
    pub action: SummaryAction,
    pub offer: Option<usize>,
    pub answered: Vec<(String, String)>,
    pub inform_none: bool,
    pub confirmed: Option<(usize, usize)>,
}

impl SystemTurn {
    pub fn plain(action: SummaryAction) -> Self {
        Self {
            action,
            offer: None,
            answered: Vec::new(),
            inform_none: false,
            confirmed: None,
        }
    }

    pub fn render(&self, ont: &Ontology) -> String {
        let mut s = self.action.render(ont);
        if let Some(e) = self.offer {
            s.push_str(&format!(" offer=e{e}"));
        }
        if self.inform_none {
            s.push_str(" none");
        }
        if !self.answered.is_empty() {
            let parts: Vec<String> = self
                .answered
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            s.push_str(&format!(" answered[{}]", parts.join(",")));
        }
        s
    }
}

/// Everything a learning policy needs to store the transition for the turn
/// it just acted in. The acting-time belief and decision are retained by the
/// policy itself.
#[derive(Debug)]
pub struct TurnOutcome<'a> {
    pub reward: f64,
    pub terminal: bool,
    pub next_belief: &'a BeliefState,
    pub next_mask: &'a [bool],
}

/// A dialogue-management policy: chooses one summary action per turn and,
/// when learning, consumes per-turn outcomes plus an end-of-dialogue hook.
pub trait DialoguePolicy {
    fn kind(&self) -> &'static str;

    /// Choose the index of a legal action from the enumerated action list.
    fn act(
        &mut self,
        b: &BeliefState,
        mask: &[bool],
        eps: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<usize, PolicyError>;

    /// Store the outcome of the turn last chosen by `act`.
    fn record(&mut self, outcome: &TurnOutcome) {
        let _ = outcome;
    }

    /// End-of-dialogue learning hook.
    fn end_dialogue(&mut self, rng: &mut ChaCha20Rng) -> Result<(), PolicyError> {
        let _ = rng;
        Ok(())
    }

    /// Serializable checkpoint (versioned).
    fn checkpoint(&self) -> PolicyCheckpoint;
}

/// Versioned policy checkpoint with a policy-kind header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyCheckpoint {
    Feudal {
        version: u32,
        master: crate::qlearner::QNetwork,
        indep: crate::qlearner::QNetwork,
        slot: crate::qlearner::QNetwork,
    },
    FlatDqn {
        version: u32,
        net: crate::qlearner::QNetwork,
    },
    DipDqn {
        version: u32,
        net: crate::qlearner::QNetwork,
    },
    Handcrafted { version: u32 },
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::init_belief;
    use crate::ontology::{generate_domain, DomainSpec};

    #[test]
    fn action_count_formula() {
        let (cr, _) = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        assert_eq!(enumerate_actions(&cr).len(), 14);
        let (lap, _) = generate_domain(&DomainSpec::lap_analogue(7)).unwrap();
        assert_eq!(enumerate_actions(&lap).len(), 38);
    }

    #[test]
    fn enumeration_is_deterministic_and_indexed() {
        let (ont, _) = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        let a = enumerate_actions(&ont);
        let b = enumerate_actions(&ont);
        assert_eq!(a, b);
        for (i, act) in a.iter().enumerate() {
            assert_eq!(act.index(), i);
        }
        assert_eq!(a[0], SummaryAction::Hello);
        assert_eq!(a[5], SummaryAction::Request(0));
        assert_eq!(a[7], SummaryAction::Select(0));
        assert_eq!(a[8], SummaryAction::Request(1));
    }

    #[test]
    fn masks_off_is_all_true() {
        let (ont, _) = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        let b = init_belief(&ont);
        let actions = enumerate_actions(&ont);
        assert!(action_mask(&b, &ont, &actions, false).iter().all(|&m| m));
    }

    #[test]
    fn masks_on_rules() {
        let (ont, _) = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        let mut b = init_belief(&ont);
        let actions = enumerate_actions(&ont);
        let m = action_mask(&b, &ont, &actions, true);
        // Initial belief: every confirm/select is masked, byname/alts masked,
        // hello allowed at turn 0.
        assert!(m[SummaryAction::Hello.index()]);
        assert!(!m[SummaryAction::InformByName.index()]);
        assert!(!m[SummaryAction::InformAlternatives.index()]);
        for s in 0..3 {
            assert!(m[SummaryAction::Request(s).index()]);
            assert!(!m[SummaryAction::Confirm(s).index()]);
            assert!(!m[SummaryAction::Select(s).index()]);
        }

        b.turn_index = 2;
        b.offer_happened = true;
        b.set_slot_probs(0, {
            let mut p = vec![0.0; ont.slot(0).values.len() + 2];
            p[1] = 1.0;
            p
        });
        let m = action_mask(&b, &ont, &actions, true);
        assert!(!m[SummaryAction::Hello.index()]);
        assert!(m[SummaryAction::InformByName.index()]);
        assert!(m[SummaryAction::Confirm(0).index()]);
        assert!(!m[SummaryAction::Confirm(1).index()]);
    }
}

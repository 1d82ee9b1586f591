//! Agenda-based simulated user.
//!
//! The user owns a sampled goal (constraints + requested slots), keeps an
//! agenda of constraint informs to convey, answers system acts one user act
//! per turn, rejects non-matching offers, asks its requests once a matching
//! entity is offered, and says bye when every request is answered. A
//! patience counter hangs up after too many consecutive unhelpful system
//! turns.
//!
//! The semantic-error channel corrupts the user act with probability `ser`
//! and samples decoder confidences (clean acts skew high, corrupted acts
//! skew low), leaving the underlying goal untouched.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{ObservedUserAct, UserActType};
use crate::ontology::{entity_matches, query_database, Database, Ontology, DONTCARE};
use crate::policies::{SummaryAction, SystemTurn};

/// What the user wants: constraint values plus slots to ask about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    pub constraints: BTreeMap<String, String>,
    pub requests: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserKind {
    Standard,
    Unfriendly,
}

/// Behavior profile. `cooperativeness` is the probability of volunteering a
/// not-yet-stated constraint when the user informs on its own initiative;
/// the unfriendly profile never volunteers and refuses direct answers with
/// `dontcare` at a fixed rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub kind: UserKind,
    pub patience: u32,
    pub max_turns: u32,
    pub cooperativeness: f64,
}

/// Probability that the unfriendly profile answers a direct request about a
/// constrained slot with `dontcare`.
pub const UNFRIENDLY_DONTCARE_RATE: f64 = 0.3;

impl UserProfile {
    pub fn standard() -> Self {
        Self {
            kind: UserKind::Standard,
            patience: 5,
            max_turns: 25,
            cooperativeness: 0.9,
        }
    }

    pub fn unfriendly() -> Self {
        Self {
            kind: UserKind::Unfriendly,
            patience: 3,
            max_turns: 25,
            cooperativeness: 0.0,
        }
    }

    pub fn for_kind(kind: UserKind) -> Self {
        match kind {
            UserKind::Standard => Self::standard(),
            UserKind::Unfriendly => Self::unfriendly(),
        }
    }
}

/// Semantic error channel configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub ser: f64,
}

impl ErrorModel {
    pub fn new(ser: f64) -> Self {
        assert!((0.0..=1.0).contains(&ser));
        Self { ser }
    }

    /// Confidence for an uncorrupted act: 0.6 + 0.4 u^2, skewed toward 1.
    pub fn clean_confidence(&self, rng: &mut ChaCha20Rng) -> f64 {
        let u: f64 = rng.random();
        0.6 + 0.4 * u * u
    }

    /// Confidence for a corrupted act: 0.2 + 0.5 u, skewed low.
    pub fn corrupted_confidence(&self, rng: &mut ChaCha20Rng) -> f64 {
        let u: f64 = rng.random();
        0.2 + 0.5 * u
    }
}

/// An uncorrupted user act (no decoder confidence attached yet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAct {
    pub act_type: UserActType,
    pub slot: Option<String>,
    pub value: Option<String>,
}

impl UserAct {
    pub fn inform(slot: &str, value: &str) -> Self {
        Self {
            act_type: UserActType::Inform,
            slot: Some(slot.into()),
            value: Some(value.into()),
        }
    }

    pub fn request(slot: &str) -> Self {
        Self {
            act_type: UserActType::Request,
            slot: Some(slot.into()),
            value: None,
        }
    }

    pub fn negate(slot: &str, value: &str) -> Self {
        Self {
            act_type: UserActType::Negate,
            slot: Some(slot.into()),
            value: Some(value.into()),
        }
    }

    pub fn bare(act_type: UserActType) -> Self {
        Self {
            act_type,
            slot: None,
            value: None,
        }
    }

    pub fn render(&self) -> String {
        match (&self.slot, &self.value) {
            (Some(s), Some(v)) => format!("{}({}={})", self.act_type.name(), s, v),
            (Some(s), None) => format!("{}({})", self.act_type.name(), s),
            _ => format!("{}()", self.act_type.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UserResponse {
    Act(UserAct),
    Hangup,
}

/// Sample a goal: each constraint slot is included with probability 0.8 with
/// a value drawn uniformly among values present in the database, resampled
/// until at least one entity matches (falling back to a random entity's own
/// values); 1-3 requests are drawn uniformly from the requestable slots.
pub fn sample_goal(ont: &Ontology, db: &Database, rng: &mut ChaCha20Rng) -> UserGoal {
    assert!(!db.is_empty(), "goal sampling needs a non-empty database");
    // Distinct values present per slot, in canonical order.
    let present: Vec<Vec<&str>> = ont
        .constraint_slots
        .iter()
        .map(|slot| {
            let mut vals: Vec<&str> = slot
                .values
                .iter()
                .filter(|v| db.entities.iter().any(|e| e.get(&slot.name) == Some(v.as_str())))
                .map(|v| v.as_str())
                .collect();
            if vals.is_empty() {
                vals.push(slot.values[0].as_str());
            }
            vals
        })
        .collect();

    let mut constraints = BTreeMap::new();
    for _attempt in 0..50 {
        constraints.clear();
        for (i, slot) in ont.constraint_slots.iter().enumerate() {
            if rng.random::<f64>() < 0.8 {
                let v = present[i][rng.random_range(0..present[i].len())];
                constraints.insert(slot.name.clone(), v.to_string());
            }
        }
        if !query_database(db, ont, &constraints)
            .expect("sampled constraints are valid")
            .is_empty()
        {
            break;
        }
        constraints.clear(); // signal fallback if the loop exhausts
    }
    if constraints.is_empty() || query_database(db, ont, &constraints).unwrap().is_empty() {
        // Fallback: copy a random entity's own values.
        let e = &db.entities[rng.random_range(0..db.len())];
        constraints.clear();
        for slot in &ont.constraint_slots {
            if rng.random::<f64>() < 0.8 {
                constraints.insert(slot.name.clone(), e.get(&slot.name).unwrap().to_string());
            }
        }
    }

    let n_req = rng.random_range(1..=3usize).min(ont.requestable_slots.len());
    let mut pool: Vec<&String> = ont.requestable_slots.iter().collect();
    pool.shuffle(rng);
    let requests = pool.into_iter().take(n_req).cloned().collect();
    UserGoal {
        constraints,
        requests,
    }
}

/// Label of a belief entry index for a slot (used to read confirm payloads).
pub fn entry_label(ont: &Ontology, slot: usize, entry: usize) -> String {
    let def = ont.slot(slot);
    if entry == 0 {
        crate::belief::NONE_LABEL.to_string()
    } else if entry == def.values.len() + 1 {
        DONTCARE.to_string()
    } else {
        def.values[entry - 1].clone()
    }
}

/// The agenda-based user for one dialogue.
pub struct AgendaUser {
    pub goal: UserGoal,
    pub profile: UserProfile,
    agenda: VecDeque<(String, String)>,
    stated: BTreeSet<String>,
    /// Requested slots the system has answered, per offered entity.
    filled: BTreeMap<usize, BTreeSet<String>>,
    matched: BTreeSet<usize>,
    consecutive_unhelpful: u32,
    turns_seen: u32,
}

impl AgendaUser {
    pub fn new(goal: UserGoal, profile: UserProfile, rng: &mut ChaCha20Rng) -> Self {
        let mut items: Vec<(String, String)> = goal
            .constraints
            .iter()
            .map(|(s, v)| (s.clone(), v.clone()))
            .collect();
        items.shuffle(rng);
        Self {
            goal,
            profile,
            agenda: items.into(),
            stated: BTreeSet::new(),
            filled: BTreeMap::new(),
            matched: BTreeSet::new(),
            consecutive_unhelpful: 0,
            turns_seen: 0,
        }
    }

    fn mark_stated(&mut self, slot: &str) {
        self.stated.insert(slot.to_string());
        self.agenda.retain(|(s, _)| s != slot);
    }

    fn next_outstanding_request(&self, entity: usize) -> Option<&String> {
        let answered = self.filled.get(&entity);
        self.goal
            .requests
            .iter()
            .find(|r| answered.map(|a| !a.contains(*r)).unwrap_or(true))
    }

    fn goal_satisfied(&self) -> bool {
        self.matched.iter().any(|e| {
            let answered = self.filled.get(e);
            self.goal
                .requests
                .iter()
                .all(|r| answered.map(|a| a.contains(r)).unwrap_or(false))
        })
    }

    /// A self-motivated inform: volunteer the next unstated constraint
    /// (standard profile, cooperativeness roll), else repeat an already
    /// stated one, else mumble.
    fn self_motivated(&mut self, rng: &mut ChaCha20Rng) -> UserAct {
        let volunteer = self.profile.kind == UserKind::Standard
            && (self.stated.is_empty() || rng.random::<f64>() < self.profile.cooperativeness);
        if volunteer {
            if let Some((s, v)) = self.agenda.front().cloned() {
                self.mark_stated(&s);
                return UserAct::inform(&s, &v);
            }
        }
        if !self.stated.is_empty() {
            let stated: Vec<&String> = self.stated.iter().collect();
            let s = stated[rng.random_range(0..stated.len())].clone();
            if let Some(v) = self.goal.constraints.get(&s) {
                return UserAct::inform(&s, &v.clone());
            }
        }
        if self.profile.kind == UserKind::Standard {
            if let Some((s, v)) = self.agenda.front().cloned() {
                self.mark_stated(&s);
                return UserAct::inform(&s, &v);
            }
        }
        UserAct::bare(UserActType::Other)
    }

    /// React to one system turn. `Hangup` when patience is exhausted.
    pub fn respond(
        &mut self,
        sys: &SystemTurn,
        ont: &Ontology,
        db: &Database,
        rng: &mut ChaCha20Rng,
    ) -> UserResponse {
        let first_turn = self.turns_seen == 0;
        self.turns_seen += 1;

        // Bookkeeping from the system act.
        if let Some(e) = sys.offer {
            let set = self.filled.entry(e).or_default();
            for (slot, _) in &sys.answered {
                set.insert(slot.clone());
            }
            if entity_matches(db, e, &self.goal.constraints) {
                self.matched.insert(e);
            }
        }

        let (helpful, act) = match sys.action {
            SummaryAction::Hello => {
                let act = self.self_motivated(rng);
                (first_turn, act)
            }
            SummaryAction::Request(s) => (true, self.answer_request(ont, s, rng)),
            SummaryAction::Confirm(s) => (true, self.react_confirm(ont, s, sys.confirmed)),
            SummaryAction::Select(s) => (true, self.react_select(ont, s)),
            SummaryAction::Inform | SummaryAction::InformByName | SummaryAction::InformAlternatives => {
                match sys.offer {
                    Some(e) if self.matched.contains(&e) => {
                        if self.goal_satisfied() {
                            (true, UserAct::bare(UserActType::Bye))
                        } else if let Some(r) = self.next_outstanding_request(e).cloned() {
                            (true, UserAct::request(&r))
                        } else {
                            // Requests answered for some other matched offer.
                            (true, UserAct::bare(UserActType::Bye))
                        }
                    }
                    Some(e) => (false, self.reject_offer(ont, db, e, rng)),
                    None => (false, self.self_motivated(rng)),
                }
            }
            SummaryAction::Bye => {
                // The dialogue ends on the system's bye; there is nothing
                // useful to answer.
                (true, UserAct::bare(UserActType::Bye))
            }
        };

        if helpful {
            self.consecutive_unhelpful = 0;
        } else {
            self.consecutive_unhelpful += 1;
            if self.consecutive_unhelpful >= self.profile.patience {
                return UserResponse::Hangup;
            }
        }
        UserResponse::Act(act)
    }

    fn answer_request(&mut self, ont: &Ontology, slot: usize, rng: &mut ChaCha20Rng) -> UserAct {
        let name = ont.slot(slot).name.clone();
        match self.goal.constraints.get(&name).cloned() {
            Some(v) => {
                if self.profile.kind == UserKind::Unfriendly
                    && rng.random::<f64>() < UNFRIENDLY_DONTCARE_RATE
                {
                    UserAct::inform(&name, DONTCARE)
                } else {
                    self.mark_stated(&name);
                    UserAct::inform(&name, &v)
                }
            }
            None => UserAct::inform(&name, DONTCARE),
        }
    }

    fn react_confirm(
        &mut self,
        ont: &Ontology,
        slot: usize,
        confirmed: Option<(usize, usize)>,
    ) -> UserAct {
        let name = ont.slot(slot).name.clone();
        let confirmed_value = confirmed
            .filter(|(s, _)| *s == slot)
            .map(|(_, entry)| entry_label(ont, slot, entry));
        match self.goal.constraints.get(&name).cloned() {
            Some(truth) => match confirmed_value {
                Some(v) if v == truth => UserAct::bare(UserActType::Affirm),
                Some(v) if v != crate::belief::NONE_LABEL => {
                    // Wrong value: negate now, correct on the next initiative.
                    self.agenda.retain(|(s, _)| s != &name);
                    self.agenda.push_front((name.clone(), truth));
                    self.stated.remove(&name);
                    UserAct::negate(&name, &v)
                }
                _ => {
                    self.mark_stated(&name);
                    UserAct::inform(&name, &truth)
                }
            },
            None => match confirmed_value {
                Some(v) if v == DONTCARE => UserAct::bare(UserActType::Affirm),
                _ => UserAct::inform(&name, DONTCARE),
            },
        }
    }

    fn react_select(&mut self, ont: &Ontology, slot: usize) -> UserAct {
        let name = ont.slot(slot).name.clone();
        match self.goal.constraints.get(&name).cloned() {
            Some(v) => {
                self.mark_stated(&name);
                UserAct::inform(&name, &v)
            }
            None => UserAct::inform(&name, DONTCARE),
        }
    }

    fn reject_offer(
        &mut self,
        ont: &Ontology,
        db: &Database,
        entity: usize,
        _rng: &mut ChaCha20Rng,
    ) -> UserAct {
        // Re-inform the first violated constraint in slot order.
        for slot in &ont.constraint_slots {
            if let Some(v) = self.goal.constraints.get(&slot.name) {
                if db.entities[entity].get(&slot.name) != Some(v.as_str()) {
                    let v = v.clone();
                    self.mark_stated(&slot.name);
                    return UserAct::inform(&slot.name, &v);
                }
            }
        }
        // No violated constraint found (stale bookkeeping); restate something.
        UserAct::bare(UserActType::Other)
    }
}

/// Push one user act through the error channel. Returns the observation and
/// whether the channel fired (every fired branch changes the act).
pub fn corrupt_act(
    act: &UserAct,
    em: &ErrorModel,
    ont: &Ontology,
    rng: &mut ChaCha20Rng,
) -> (ObservedUserAct, bool) {
    let fire = em.ser > 0.0 && rng.random::<f64>() < em.ser;
    if !fire {
        return (
            ObservedUserAct {
                act_type: act.act_type,
                slot: act.slot.clone(),
                value: act.value.clone(),
                confidence: em.clean_confidence(rng),
            },
            false,
        );
    }

    // Feasible confusion branches for this act.
    let value_ok = act
        .slot
        .as_ref()
        .and_then(|s| ont.slot_index(s))
        .is_some()
        && act.value.is_some();
    let other_ok = act.act_type != UserActType::Other;
    let mut branches = vec![1u8]; // act-type replacement is always feasible
    if value_ok {
        branches.push(0);
    }
    if other_ok {
        branches.push(2);
    }
    branches.sort();
    let branch = branches[rng.random_range(0..branches.len())];

    let confidence = em.corrupted_confidence(rng);
    let obs = match branch {
        0 => {
            // Replace the value with a different one from V_s ∪ {dontcare}.
            let slot = act.slot.clone().expect("value branch");
            let slot_idx = ont.slot_index(&slot).expect("constraint slot");
            let orig = act.value.as_deref().expect("value branch");
            let mut options: Vec<String> = ont
                .slot(slot_idx)
                .values
                .iter()
                .cloned()
                .chain(std::iter::once(DONTCARE.to_string()))
                .filter(|v| v != orig)
                .collect();
            options.sort();
            let value = options[rng.random_range(0..options.len())].clone();
            ObservedUserAct {
                act_type: act.act_type,
                slot: Some(slot),
                value: Some(value),
                confidence,
            }
        }
        1 => {
            // Replace the act type with a different one and coerce fields.
            let others: Vec<UserActType> = UserActType::ALL
                .into_iter()
                .filter(|t| *t != act.act_type)
                .collect();
            let new_type = others[rng.random_range(0..others.len())];
            coerce_fields(new_type, act, ont, confidence, rng)
        }
        _ => ObservedUserAct {
            act_type: UserActType::Other,
            slot: None,
            value: None,
            confidence,
        },
    };
    (obs, true)
}

fn coerce_fields(
    new_type: UserActType,
    act: &UserAct,
    ont: &Ontology,
    confidence: f64,
    rng: &mut ChaCha20Rng,
) -> ObservedUserAct {
    let (needs_slot, needs_value) = new_type.needs();
    let (slot, value) = if needs_slot && needs_value {
        let slot_idx = act
            .slot
            .as_ref()
            .and_then(|s| ont.slot_index(s))
            .unwrap_or_else(|| rng.random_range(0..ont.num_slots()));
        let slot_name = ont.slot(slot_idx).name.clone();
        let value = match &act.value {
            Some(v) if act.slot.as_deref() == Some(slot_name.as_str()) => v.clone(),
            _ => {
                let vals = &ont.slot(slot_idx).values;
                vals[rng.random_range(0..vals.len())].clone()
            }
        };
        (Some(slot_name), Some(value))
    } else if needs_slot {
        let slot = match &act.slot {
            Some(s) if ont.is_requestable(s) => s.clone(),
            _ => ont.requestable_slots[rng.random_range(0..ont.requestable_slots.len())].clone(),
        };
        (Some(slot), None)
    } else {
        (None, None)
    };
    ObservedUserAct {
        act_type: new_type,
        slot,
        value,
        confidence,
    }
}

/// One dialogue turn as logged for replay and success evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub system: SystemTurn,
    pub user: Option<UserAct>,
    pub observed: Option<ObservedUserAct>,
    pub corrupted: bool,
    pub hangup: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub turns: Vec<TurnRecord>,
}

impl Transcript {
    /// One line per turn: system act, user act, observed act, confidence.
    pub fn render(&self, ont: &Ontology) -> String {
        let mut out = String::new();
        use std::fmt::Write;
        for t in &self.turns {
            let user = t
                .user
                .as_ref()
                .map(|u| u.render())
                .unwrap_or_else(|| if t.hangup { "<hangup>".into() } else { "-".into() });
            let observed = t
                .observed
                .as_ref()
                .map(|o| o.to_string())
                .unwrap_or_else(|| "-".into());
            writeln!(
                out,
                "t{:02} sys: {} | user: {} | obs: {}{}",
                t.turn,
                t.system.render(ont),
                user,
                observed,
                if t.corrupted { " [corrupted]" } else { "" }
            )
            .unwrap();
        }
        out
    }
}

/// Success predicate: some offered entity satisfies every goal constraint
/// (dontcare is a wildcard) and every requested slot was answered for it
/// before termination.
pub fn evaluate_success(transcript: &Transcript, goal: &UserGoal, db: &Database) -> bool {
    let mut filled: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    let mut matched: BTreeSet<usize> = BTreeSet::new();
    for t in &transcript.turns {
        if let Some(e) = t.system.offer {
            let set = filled.entry(e).or_default();
            for (slot, _) in &t.system.answered {
                set.insert(slot.as_str());
            }
            if entity_matches(db, e, &goal.constraints) {
                matched.insert(e);
            }
        }
    }
    matched.iter().any(|e| {
        goal.requests.iter().all(|r| {
            filled
                .get(e)
                .map(|s| s.contains(r.as_str()))
                .unwrap_or(false)
        })
    })
}

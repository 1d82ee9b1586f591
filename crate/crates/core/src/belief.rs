//! Rule-based belief tracking.
//!
//! The belief state holds one probability vector per constraint slot over
//! `*NONE*` + the slot's values + `dontcare`, plus the general dialogue
//! features (last user act, database search method, requested slots, offer
//! flags, turn counter). Updates follow the focus rule: evidence for a value
//! scales everything else down by `1 - confidence`, negations move the
//! negated value's mass to `*NONE*`.
//!
//! `BeliefState` is a value type: updates return a new state, so independent
//! dialogues can run concurrently without shared mutability.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{Ontology, DONTCARE};
use crate::policies::SystemTurn;

/// Display label for the "slot not yet specified" hypothesis.
pub const NONE_LABEL: &str = "*NONE*";

/// Tolerance for the per-slot simplex invariant.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("unknown slot `{0}` in observed act")]
    UnknownSlot(String),
    #[error("unknown value `{value}` for slot `{slot}` in observed act")]
    UnknownValue { slot: String, value: String },
    #[error("malformed observed act: {0}")]
    MalformedAct(String),
    #[error("belief shape does not match ontology: {0}")]
    ShapeMismatch(String),
}

/// The seven user dialogue-act classes tracked in the belief state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserActType {
    Inform,
    Request,
    Confirm,
    Negate,
    Affirm,
    Bye,
    Other,
}

impl UserActType {
    pub const COUNT: usize = 7;
    pub const ALL: [UserActType; 7] = [
        UserActType::Inform,
        UserActType::Request,
        UserActType::Confirm,
        UserActType::Negate,
        UserActType::Affirm,
        UserActType::Bye,
        UserActType::Other,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&a| a == self).expect("member")
    }

    /// Whether this act carries a slot and/or a value.
    pub fn needs(self) -> (bool, bool) {
        match self {
            UserActType::Inform | UserActType::Confirm | UserActType::Negate => (true, true),
            UserActType::Request => (true, false),
            UserActType::Affirm | UserActType::Bye | UserActType::Other => (false, false),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UserActType::Inform => "inform",
            UserActType::Request => "request",
            UserActType::Confirm => "confirm",
            UserActType::Negate => "negate",
            UserActType::Affirm => "affirm",
            UserActType::Bye => "bye",
            UserActType::Other => "other",
        }
    }
}

/// The six database search-method classes tracked in the belief state.
///
/// The taxonomy widths are fixed (6 classes); the transition rules are this
/// tracker's own, documented here: `ByConstraints` once the user supplies
/// constraint evidence, `ByAlternatives` when evidence arrives after an
/// offer, `ByName` when the user requests attributes of an offered entity,
/// `Finished` after the user says bye. `Restart` is reserved and never set
/// by this tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    None,
    ByConstraints,
    ByAlternatives,
    ByName,
    Finished,
    Restart,
}

impl SearchMethod {
    pub const COUNT: usize = 6;
    pub const ALL: [SearchMethod; 6] = [
        SearchMethod::None,
        SearchMethod::ByConstraints,
        SearchMethod::ByAlternatives,
        SearchMethod::ByName,
        SearchMethod::Finished,
        SearchMethod::Restart,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&a| a == self).expect("member")
    }

    pub fn name(self) -> &'static str {
        match self {
            SearchMethod::None => "none",
            SearchMethod::ByConstraints => "by_constraints",
            SearchMethod::ByAlternatives => "by_alternatives",
            SearchMethod::ByName => "by_name",
            SearchMethod::Finished => "finished",
            SearchMethod::Restart => "restart",
        }
    }
}

/// One observed (possibly corrupted) user act with its decoder confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedUserAct {
    pub act_type: UserActType,
    pub slot: Option<String>,
    pub value: Option<String>,
    pub confidence: f64,
}

impl ObservedUserAct {
    pub fn validate(&self) -> Result<(), BeliefError> {
        let (needs_slot, needs_value) = self.act_type.needs();
        if needs_slot != self.slot.is_some() || needs_value != self.value.is_some() {
            return Err(BeliefError::MalformedAct(format!(
                "{} carries slot={:?} value={:?}",
                self.act_type.name(),
                self.slot,
                self.value
            )));
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(BeliefError::MalformedAct(format!(
                "confidence {} outside (0,1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Probability vector for one slot.
///
/// Layout: index 0 is `*NONE*`, indices `1..=k` are the slot's `k` values in
/// canonical ontology order, index `k+1` is `dontcare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotBelief {
    probs: Vec<f64>,
}

pub const NONE_IDX: usize = 0;

impl SlotBelief {
    pub fn new(value_count: usize) -> Self {
        let mut probs = vec![0.0; value_count + 2];
        probs[NONE_IDX] = 1.0;
        Self { probs }
    }

    pub fn from_probs(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Number of ontology values (excludes `*NONE*` and `dontcare`).
    pub fn value_count(&self) -> usize {
        self.probs.len() - 2
    }

    pub fn dontcare_idx(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, idx: usize) -> f64 {
        self.probs[idx]
    }

    pub fn none_prob(&self) -> f64 {
        self.probs[NONE_IDX]
    }

    /// Argmax over the whole vector; ties resolve to the lowest index.
    pub fn top(&self) -> (usize, f64) {
        let mut best = (0usize, self.probs[0]);
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }

    /// Highest-probability entry excluding `*NONE*`; ties to lowest index.
    pub fn top_non_none(&self) -> (usize, f64) {
        let mut best = (1usize, self.probs[1]);
        for (i, &p) in self.probs.iter().enumerate().skip(2) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }

    /// Probabilities sorted descending (whole vector).
    pub fn sorted_desc(&self) -> Vec<f64> {
        let mut v = self.probs.clone();
        v.sort_by(|a, b| b.partial_cmp(a).expect("finite probs"));
        v
    }

    /// Shannon entropy (natural log) of the distribution.
    pub fn entropy(&self) -> f64 {
        entropy_of(self.probs.iter().copied())
    }

    pub fn count_positive(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }

    fn focus_update(&mut self, target: usize, confidence: f64) {
        let c = confidence;
        for (i, p) in self.probs.iter_mut().enumerate() {
            *p *= 1.0 - c;
            if i == target {
                *p += c;
            }
        }
        self.renormalize();
    }

    fn negate_update(&mut self, target: usize, confidence: f64) {
        let moved = confidence * self.probs[target];
        self.probs[target] -= moved;
        self.probs[NONE_IDX] += moved;
        self.renormalize();
    }

    fn renormalize(&mut self) {
        for p in &mut self.probs {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let sum: f64 = self.probs.iter().sum();
        if sum > 0.0 {
            for p in &mut self.probs {
                *p /= sum;
            }
        } else {
            self.probs.fill(0.0);
            self.probs[NONE_IDX] = 1.0;
        }
    }

    pub fn check_simplex(&self) -> Result<(), BeliefError> {
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(BeliefError::ShapeMismatch(format!(
                "slot distribution sums to {sum}, expected 1"
            )));
        }
        if self.probs.iter().any(|&p| p < 0.0) {
            return Err(BeliefError::ShapeMismatch("negative probability".into()));
        }
        Ok(())
    }
}

/// The full dialogue belief state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    slots: Vec<SlotBelief>,
    pub last_user_act: UserActType,
    pub search_method: SearchMethod,
    pub requested_slots: BTreeSet<String>,
    pub offer_happened: bool,
    pub last_action_inform_none: bool,
    pub turn_index: u32,
}

/// Fresh belief: every slot puts mass 1 on `*NONE*`, flags false, turn 0.
pub fn init_belief(ont: &Ontology) -> BeliefState {
    BeliefState {
        slots: ont
            .constraint_slots
            .iter()
            .map(|s| SlotBelief::new(s.values.len()))
            .collect(),
        last_user_act: UserActType::Other,
        search_method: SearchMethod::None,
        requested_slots: BTreeSet::new(),
        offer_happened: false,
        last_action_inform_none: false,
        turn_index: 0,
    }
}

impl BeliefState {
    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, idx: usize) -> &SlotBelief {
        &self.slots[idx]
    }

    pub fn slots(&self) -> &[SlotBelief] {
        &self.slots
    }

    /// Replace one slot's distribution (test and tooling hook).
    pub fn set_slot_probs(&mut self, idx: usize, probs: Vec<f64>) {
        assert_eq!(probs.len(), self.slots[idx].len(), "layout must match");
        self.slots[idx] = SlotBelief::from_probs(probs);
        self.slots[idx].check_simplex().expect("valid distribution");
    }

    pub fn check_invariants(&self) -> Result<(), BeliefError> {
        for s in &self.slots {
            s.check_simplex()?;
        }
        Ok(())
    }

    /// Does the belief shape match the ontology (slot count and widths)?
    pub fn matches_ontology(&self, ont: &Ontology) -> Result<(), BeliefError> {
        if self.slots.len() != ont.num_slots() {
            return Err(BeliefError::ShapeMismatch(format!(
                "{} slots vs {} in ontology",
                self.slots.len(),
                ont.num_slots()
            )));
        }
        for (i, s) in self.slots.iter().enumerate() {
            if s.value_count() != ont.slot(i).values.len() {
                return Err(BeliefError::ShapeMismatch(format!(
                    "slot {} width {} vs {} values in ontology",
                    ont.slot(i).name,
                    s.value_count(),
                    ont.slot(i).values.len()
                )));
            }
        }
        Ok(())
    }

    /// Label of a belief entry for a slot: `*NONE*`, a value, or `dontcare`.
    pub fn entry_label<'a>(&self, ont: &'a Ontology, slot: usize, entry: usize) -> &'a str {
        let def = ont.slot(slot);
        if entry == NONE_IDX {
            NONE_LABEL
        } else if entry == def.values.len() + 1 {
            DONTCARE
        } else {
            &def.values[entry - 1]
        }
    }

    /// Random valid belief state (uniform on each slot simplex); used for
    /// feature fuzzing and the CLI demo dumps.
    pub fn random(ont: &Ontology, rng: &mut impl Rng) -> BeliefState {
        let mut b = init_belief(ont);
        for s in &mut b.slots {
            let mut acc = 0.0;
            for p in &mut s.probs {
                let u: f64 = rng.random();
                *p = -(u.max(1e-300)).ln();
                acc += *p;
            }
            for p in &mut s.probs {
                *p /= acc;
            }
        }
        b.last_user_act = UserActType::ALL[rng.random_range(0..UserActType::COUNT)];
        b.search_method = SearchMethod::ALL[rng.random_range(0..SearchMethod::COUNT)];
        b.offer_happened = rng.random_bool(0.5);
        b.last_action_inform_none = rng.random_bool(0.2);
        b.turn_index = rng.random_range(0..20);
        let n_req = rng.random_range(0..4.min(ont.requestable_slots.len() + 1));
        for _ in 0..n_req {
            let r = &ont.requestable_slots[rng.random_range(0..ont.requestable_slots.len())];
            b.requested_slots.insert(r.clone());
        }
        b
    }
}

/// Focus-rule belief update for one system turn.
///
/// Consumes the observation from the user's reply to `last_system` and the
/// bookkeeping carried by the system act itself (offers, answered requests,
/// inform-none). Returns a new state; only the slot referenced by the
/// observation is touched.
pub fn update_belief(
    b: &BeliefState,
    obs: &ObservedUserAct,
    last_system: &SystemTurn,
    ont: &Ontology,
) -> Result<BeliefState, BeliefError> {
    obs.validate()?;
    let mut nb = b.clone();
    nb.turn_index += 1;

    // System-act bookkeeping.
    if last_system.offer.is_some() {
        nb.offer_happened = true;
    }
    nb.last_action_inform_none = last_system.inform_none;
    for (slot, _) in &last_system.answered {
        nb.requested_slots.remove(slot);
    }

    // User evidence.
    match obs.act_type {
        UserActType::Inform | UserActType::Confirm => {
            let (slot_idx, entry) = resolve_entry(ont, &nb, obs)?;
            nb.slots[slot_idx].focus_update(entry, obs.confidence);
        }
        UserActType::Negate => {
            let (slot_idx, entry) = resolve_entry(ont, &nb, obs)?;
            nb.slots[slot_idx].negate_update(entry, obs.confidence);
        }
        UserActType::Affirm => {
            if let Some((slot_idx, entry)) = last_system.confirmed {
                nb.slots[slot_idx].focus_update(entry, obs.confidence);
            }
        }
        UserActType::Request => {
            let slot = obs.slot.as_ref().expect("validated");
            if !ont.is_requestable(slot) {
                return Err(BeliefError::UnknownSlot(slot.clone()));
            }
            nb.requested_slots.insert(slot.clone());
        }
        UserActType::Bye | UserActType::Other => {}
    }

    nb.last_user_act = obs.act_type;
    nb.search_method = next_search_method(nb.search_method, obs.act_type, nb.offer_happened);
    Ok(nb)
}

fn resolve_entry(
    ont: &Ontology,
    b: &BeliefState,
    obs: &ObservedUserAct,
) -> Result<(usize, usize), BeliefError> {
    let slot = obs.slot.as_ref().expect("validated");
    let value = obs.value.as_ref().expect("validated");
    let slot_idx = ont
        .slot_index(slot)
        .ok_or_else(|| BeliefError::UnknownSlot(slot.clone()))?;
    let entry = if value == DONTCARE {
        b.slots[slot_idx].dontcare_idx()
    } else {
        ont.value_index(slot_idx, value)
            .map(|v| v + 1)
            .ok_or_else(|| BeliefError::UnknownValue {
                slot: slot.clone(),
                value: value.clone(),
            })?
    };
    Ok((slot_idx, entry))
}

fn next_search_method(current: SearchMethod, act: UserActType, offer: bool) -> SearchMethod {
    if current == SearchMethod::Finished {
        return current;
    }
    match act {
        UserActType::Bye => SearchMethod::Finished,
        UserActType::Request => {
            if offer {
                SearchMethod::ByName
            } else {
                current
            }
        }
        UserActType::Inform | UserActType::Negate => {
            if offer {
                SearchMethod::ByAlternatives
            } else {
                SearchMethod::ByConstraints
            }
        }
        UserActType::Affirm => {
            if offer {
                current
            } else {
                SearchMethod::ByConstraints
            }
        }
        UserActType::Confirm | UserActType::Other => current,
    }
}

/// Top-k slice of the joint belief (Cartesian product of the slot marginals).
///
/// Tuples are reported as per-slot entry indices with exact probabilities,
/// most probable first; `remainder` is the mass not covered by the returned
/// tuples (zero when the heap exhausted the positive support, i.e. the
/// enumeration is exact).
#[derive(Debug, Clone, PartialEq)]
pub struct JointBelief {
    pub tuples: Vec<(Vec<u16>, f64)>,
    pub remainder: f64,
}

impl JointBelief {
    pub fn top_prob(&self, rank: usize) -> f64 {
        self.tuples.get(rank).map(|t| t.1).unwrap_or(0.0)
    }

    /// Entropy (natural log) of the covered tuples: exact when
    /// `remainder == 0`, otherwise a lower bound on the joint entropy.
    pub fn entropy_lower_bound(&self) -> f64 {
        entropy_of(self.tuples.iter().map(|t| t.1))
    }

    /// Upper bound: lower bound plus the remainder mass spread uniformly
    /// over the uncovered outcomes.
    pub fn entropy_upper_bound(&self, total_outcomes: usize) -> f64 {
        let uncovered = total_outcomes.saturating_sub(self.tuples.len());
        if self.remainder <= 0.0 || uncovered == 0 {
            return self.entropy_lower_bound();
        }
        self.entropy_lower_bound() + self.remainder * (uncovered as f64 / self.remainder).ln()
    }
}

#[derive(PartialEq)]
struct HeapItem {
    p: f64,
    ranks: Vec<u16>,
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Max-heap on probability; ties pop lexicographically smaller ranks
        // first so enumeration order is deterministic.
        self.p
            .partial_cmp(&other.p)
            .expect("finite probabilities")
            .then_with(|| other.ranks.cmp(&self.ranks))
    }
}

/// Best-first enumeration of the `top_k` most probable joint value tuples.
pub fn joint_belief(b: &BeliefState, top_k: usize) -> JointBelief {
    assert!(top_k >= 1, "top_k must be >= 1");
    let n = b.num_slots();
    // Per slot: entry indices sorted by descending probability.
    let sorted: Vec<Vec<(u16, f64)>> = b
        .slots
        .iter()
        .map(|s| {
            let mut v: Vec<(u16, f64)> = s
                .probs()
                .iter()
                .enumerate()
                .map(|(i, &p)| (i as u16, p))
                .collect();
            v.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
            v
        })
        .collect();

    let mut heap = std::collections::BinaryHeap::new();
    let mut seen: HashSet<Vec<u16>> = HashSet::new();
    let root = vec![0u16; n];
    let root_p: f64 = sorted.iter().map(|s| s[0].1).product();
    if root_p > 0.0 {
        seen.insert(root.clone());
        heap.push(HeapItem { p: root_p, ranks: root });
    }

    let mut tuples = Vec::with_capacity(top_k.min(1024));
    let mut covered = 0.0;
    while tuples.len() < top_k {
        let Some(item) = heap.pop() else { break };
        let value_tuple: Vec<u16> = item
            .ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| sorted[i][r as usize].0)
            .collect();
        covered += item.p;
        tuples.push((value_tuple, item.p));
        for i in 0..n {
            let r = item.ranks[i] as usize;
            if r + 1 < sorted[i].len() {
                let mut child = item.ranks.clone();
                child[i] += 1;
                if !seen.contains(&child) {
                    let p = item.p / sorted[i][r].1 * sorted[i][r + 1].1;
                    if p > 0.0 {
                        seen.insert(child.clone());
                        heap.push(HeapItem { p, ranks: child });
                    }
                }
            }
        }
    }
    JointBelief {
        tuples,
        remainder: (1.0 - covered).max(0.0),
    }
}

/// Probability of the all-`*NONE*` joint tuple (computed directly).
pub fn joint_none_prob(b: &BeliefState) -> f64 {
    b.slots.iter().map(|s| s.none_prob()).product()
}

/// Total number of joint outcomes (product of slot vector widths).
pub fn joint_outcome_count(b: &BeliefState) -> usize {
    b.slots.iter().map(|s| s.len()).product()
}

pub fn entropy_of(ps: impl Iterator<Item = f64>) -> f64 {
    ps.filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

impl BeliefState {
    /// Deterministic textual dump for debugging and golden tests.
    pub fn dump(&self, ont: &Ontology) -> String {
        let mut out = String::new();
        use std::fmt::Write;
        let requested: Vec<&str> = self.requested_slots.iter().map(|s| s.as_str()).collect();
        writeln!(
            out,
            "turn={} last_act={} search={} offer={} inform_none={} requested=[{}]",
            self.turn_index,
            self.last_user_act.name(),
            self.search_method.name(),
            self.offer_happened,
            self.last_action_inform_none,
            requested.join(",")
        )
        .unwrap();
        for (i, s) in self.slots.iter().enumerate() {
            write!(out, "{}:", ont.slot(i).name).unwrap();
            for (j, &p) in s.probs().iter().enumerate() {
                write!(out, " {}={:.6}", self.entry_label(ont, i, j), p).unwrap();
            }
            writeln!(out).unwrap();
        }
        out
    }
}

impl fmt::Display for ObservedUserAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.slot, &self.value) {
            (Some(s), Some(v)) => write!(
                f,
                "{}({}={}) @{:.2}",
                self.act_type.name(),
                s,
                v,
                self.confidence
            ),
            (Some(s), None) => write!(f, "{}({}) @{:.2}", self.act_type.name(), s, self.confidence),
            _ => write!(f, "{}() @{:.2}", self.act_type.name(), self.confidence),
        }
    }
}

//! Baseline policies: a flat DQN over the raw belief encoding, a DQN over
//! the domain-independent features with a shared action template, and the
//! handcrafted rule policy.

use std::sync::Arc;

use rand_chacha::ChaCha20Rng;

use crate::belief::{BeliefState, SearchMethod};
use crate::dip::{flat_dim, flat_features, FeatureExtractor, DIP_LEN};
use crate::ontology::{Database, Ontology};
use crate::qlearner::{
    epsilon_greedy, sync_target, train_step, LearnerConfig, QNetwork, ReplayBuffer, Transition,
};

use super::{
    DialoguePolicy, PolicyCheckpoint, PolicyError, SummaryAction, TurnOutcome, CHECKPOINT_VERSION,
    GLOBAL_ACTS, SLOT_ACTS,
};

/// Default hidden sizes for the flat baselines.
pub const BASELINE_HIDDEN: (usize, usize) = (300, 100);

/// Plain DQN over the domain-dependent flat belief encoding. One output head
/// per summary action, so the network shape depends on the domain.
pub struct FlatDqnPolicy {
    fx: FeatureExtractor,
    config: LearnerConfig,
    net: QNetwork,
    target: QNetwork,
    buffer: ReplayBuffer,
    train_steps: usize,
    last: Option<(Vec<f64>, usize)>,
}

impl FlatDqnPolicy {
    pub fn new(ont: Arc<Ontology>, db: &Database, config: LearnerConfig, seed: u64) -> Self {
        let hidden = config.hidden.unwrap_or(BASELINE_HIDDEN);
        let input = flat_dim(&ont);
        let output = GLOBAL_ACTS + SLOT_ACTS * ont.num_slots();
        let net = QNetwork::new(input, hidden.0, hidden.1, output, crate::derive_seed(seed, 20));
        let target = net.clone();
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        Self {
            fx: FeatureExtractor::new(ont, db),
            config,
            net,
            target,
            buffer,
            train_steps: 0,
            last: None,
        }
    }

    pub fn from_checkpoint(
        ont: Arc<Ontology>,
        db: &Database,
        config: LearnerConfig,
        ckpt: PolicyCheckpoint,
    ) -> Result<Self, PolicyError> {
        let PolicyCheckpoint::FlatDqn { net, .. } = ckpt else {
            return Err(PolicyError::Checkpoint("not a flat-dqn checkpoint".into()));
        };
        let mut p = Self::new(ont, db, config, 0);
        if net.input_dim != p.net.input_dim || net.output_dim != p.net.output_dim {
            return Err(PolicyError::Checkpoint(format!(
                "checkpoint {}x{} does not fit domain {}x{}",
                net.input_dim, net.output_dim, p.net.input_dim, p.net.output_dim
            )));
        }
        p.net = net.clone();
        p.target = net;
        Ok(p)
    }

    pub fn net(&self) -> &QNetwork {
        &self.net
    }
}

impl DialoguePolicy for FlatDqnPolicy {
    fn kind(&self) -> &'static str {
        "flat-dqn"
    }

    fn act(
        &mut self,
        b: &BeliefState,
        mask: &[bool],
        eps: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<usize, PolicyError> {
        let feats = flat_features(&self.fx, b);
        let q = self.net.forward(&feats)?;
        let idx = epsilon_greedy(&q, mask, eps, rng)?;
        self.last = Some((feats, idx));
        Ok(idx)
    }

    fn record(&mut self, outcome: &TurnOutcome) {
        let Some((state, action)) = self.last.take() else {
            return;
        };
        let next_state = if outcome.terminal {
            vec![0.0; state.len()]
        } else {
            flat_features(&self.fx, outcome.next_belief)
        };
        self.buffer.push(Transition {
            state,
            action,
            reward: outcome.reward,
            next_state,
            terminal: outcome.terminal,
            next_mask: outcome.next_mask.to_vec(),
        });
    }

    fn end_dialogue(&mut self, rng: &mut ChaCha20Rng) -> Result<(), PolicyError> {
        for _ in 0..self.config.train_steps_per_episode {
            if self.buffer.len() >= self.config.batch_size {
                let batch = self.buffer.sample(self.config.batch_size, rng)?;
                train_step(&mut self.net, &self.target, &batch, &self.config)?;
            }
            self.train_steps += 1;
            if self.train_steps % self.config.target_sync_period == 0 {
                sync_target(&self.net, &mut self.target);
            }
        }
        Ok(())
    }

    fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint::FlatDqn {
            version: CHECKPOINT_VERSION,
            net: self.net.clone(),
        }
    }
}

/// Action-template head size of the DIP scorer: 5 globals plus the 3
/// communication functions, evaluated per slot.
pub const DIP_HEAD: usize = GLOBAL_ACTS + SLOT_ACTS;

/// DQN over the 64-dim domain-independent features. Global actions score
/// against a null-slot feature vector (psi_d zeroed); per-slot actions score
/// against that slot's features; the argmax runs across all legal
/// (action, slot) evaluations.
pub struct DipDqnPolicy {
    fx: FeatureExtractor,
    num_slots: usize,
    config: LearnerConfig,
    net: QNetwork,
    target: QNetwork,
    buffer: ReplayBuffer,
    train_steps: usize,
    last: Option<DipDecision>,
}

struct DipDecision {
    features: Vec<f64>,
    head: usize,
    slot: Option<usize>,
}

impl DipDqnPolicy {
    pub fn new(ont: Arc<Ontology>, db: &Database, config: LearnerConfig, seed: u64) -> Self {
        let hidden = config.hidden.unwrap_or(BASELINE_HIDDEN);
        let net = QNetwork::new(
            DIP_LEN,
            hidden.0,
            hidden.1,
            DIP_HEAD,
            crate::derive_seed(seed, 30),
        );
        let target = net.clone();
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        Self {
            num_slots: ont.num_slots(),
            fx: FeatureExtractor::new(ont, db),
            config,
            net,
            target,
            buffer,
            train_steps: 0,
            last: None,
        }
    }

    pub fn from_checkpoint(
        ont: Arc<Ontology>,
        db: &Database,
        config: LearnerConfig,
        ckpt: PolicyCheckpoint,
    ) -> Result<Self, PolicyError> {
        let PolicyCheckpoint::DipDqn { net, .. } = ckpt else {
            return Err(PolicyError::Checkpoint("not a dip-dqn checkpoint".into()));
        };
        if net.input_dim != DIP_LEN || net.output_dim != DIP_HEAD {
            return Err(PolicyError::Checkpoint(format!(
                "checkpoint {}x{} does not fit the {}x{} template",
                net.input_dim, net.output_dim, DIP_LEN, DIP_HEAD
            )));
        }
        let mut p = Self::new(ont, db, config, 0);
        p.net = net.clone();
        p.target = net;
        Ok(p)
    }

    pub fn net(&self) -> &QNetwork {
        &self.net
    }

    /// Q-value of each summary action under the template scorer.
    pub fn action_values(&self, b: &BeliefState) -> Result<Vec<f64>, PolicyError> {
        let null = self.fx.dip_null_slot(b);
        let q_global = self.net.forward(&null.values)?;
        let mut q = Vec::with_capacity(GLOBAL_ACTS + SLOT_ACTS * self.num_slots);
        q.extend_from_slice(&q_global[..GLOBAL_ACTS]);
        for s in 0..self.num_slots {
            let qs = self.net.forward(&self.fx.dip(b, s).values)?;
            q.extend_from_slice(&qs[GLOBAL_ACTS..]);
        }
        Ok(q)
    }
}

impl DialoguePolicy for DipDqnPolicy {
    fn kind(&self) -> &'static str {
        "dip-dqn"
    }

    fn act(
        &mut self,
        b: &BeliefState,
        mask: &[bool],
        eps: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<usize, PolicyError> {
        let q = self.action_values(b)?;
        let idx = epsilon_greedy(&q, mask, eps, rng)?;
        let action = index_to_action(idx);
        let (features, head, slot) = match action.slot_act() {
            Some((s, a)) => (self.fx.dip(b, s).values, GLOBAL_ACTS + a, Some(s)),
            None => (
                self.fx.dip_null_slot(b).values,
                action.global_index().expect("global"),
                None,
            ),
        };
        self.last = Some(DipDecision {
            features,
            head,
            slot,
        });
        Ok(idx)
    }

    fn record(&mut self, outcome: &TurnOutcome) {
        let Some(d) = self.last.take() else {
            return;
        };
        // Bootstrap approximation: the next state reuses the acted slot's
        // feature view (null slot for globals) with a full template mask.
        let next_state = if outcome.terminal {
            vec![0.0; DIP_LEN]
        } else {
            match d.slot {
                Some(s) => self.fx.dip(outcome.next_belief, s).values,
                None => self.fx.dip_null_slot(outcome.next_belief).values,
            }
        };
        self.buffer.push(Transition {
            state: d.features,
            action: d.head,
            reward: outcome.reward,
            next_state,
            terminal: outcome.terminal,
            next_mask: vec![true; DIP_HEAD],
        });
    }

    fn end_dialogue(&mut self, rng: &mut ChaCha20Rng) -> Result<(), PolicyError> {
        for _ in 0..self.config.train_steps_per_episode {
            if self.buffer.len() >= self.config.batch_size {
                let batch = self.buffer.sample(self.config.batch_size, rng)?;
                train_step(&mut self.net, &self.target, &batch, &self.config)?;
            }
            self.train_steps += 1;
            if self.train_steps % self.config.target_sync_period == 0 {
                sync_target(&self.net, &mut self.target);
            }
        }
        Ok(())
    }

    fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint::DipDqn {
            version: CHECKPOINT_VERSION,
            net: self.net.clone(),
        }
    }
}

fn index_to_action(idx: usize) -> SummaryAction {
    match idx {
        0 => SummaryAction::Hello,
        1 => SummaryAction::Inform,
        2 => SummaryAction::InformByName,
        3 => SummaryAction::InformAlternatives,
        4 => SummaryAction::Bye,
        i => {
            let s = (i - GLOBAL_ACTS) / SLOT_ACTS;
            match (i - GLOBAL_ACTS) % SLOT_ACTS {
                0 => SummaryAction::Request(s),
                1 => SummaryAction::Confirm(s),
                _ => SummaryAction::Select(s),
            }
        }
    }
}

/// Rule cascade: request the most uncertain unresolved slot, confirm
/// mid-confidence slots, inform once every slot is resolved, bye after the
/// user closes. Thresholds: a slot is unresolved below 0.5 top non-`*NONE*`
/// probability, confirmable in [0.5, 0.8), resolved at or above 0.8.
pub struct HandcraftedPolicy {
    num_slots: usize,
}

pub const HDC_REQUEST_THRESHOLD: f64 = 0.5;
pub const HDC_CONFIRM_THRESHOLD: f64 = 0.8;

impl HandcraftedPolicy {
    pub fn new(ont: &Ontology) -> Self {
        Self {
            num_slots: ont.num_slots(),
        }
    }

    pub fn choose(&self, b: &BeliefState, mask: &[bool]) -> SummaryAction {
        if b.search_method == SearchMethod::Finished {
            return SummaryAction::Bye;
        }
        // Most uncertain slot first: lowest top non-*NONE* probability.
        let mut slots: Vec<(usize, f64)> = (0..self.num_slots)
            .map(|s| (s, b.slot(s).top_non_none().1))
            .collect();
        slots.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)));
        if let Some(&(s, p)) = slots.iter().find(|(_, p)| *p < HDC_CONFIRM_THRESHOLD) {
            if p < HDC_REQUEST_THRESHOLD {
                return SummaryAction::Request(s);
            }
            let confirm = SummaryAction::Confirm(s);
            // A value holding >= 0.5 mass is the argmax unless *NONE* ties
            // it exactly; fall back to request rather than act illegally.
            if mask[confirm.index()] {
                return confirm;
            }
            return SummaryAction::Request(s);
        }
        SummaryAction::Inform
    }
}

impl DialoguePolicy for HandcraftedPolicy {
    fn kind(&self) -> &'static str {
        "handcrafted"
    }

    fn act(
        &mut self,
        b: &BeliefState,
        mask: &[bool],
        _eps: f64,
        _rng: &mut ChaCha20Rng,
    ) -> Result<usize, PolicyError> {
        let action = self.choose(b, mask);
        let idx = action.index();
        if !mask[idx] {
            return Err(PolicyError::NoLegalAction);
        }
        Ok(idx)
    }

    fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint::Handcrafted {
            version: CHECKPOINT_VERSION,
        }
    }
}

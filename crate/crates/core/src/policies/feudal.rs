//! Feudal dialogue policy: a two-way master decision over slot-independent
//! vs slot-dependent action subsets, a slot-independent sub-policy, and one
//! slot sub-policy whose parameters are shared across every slot. The
//! differences between slots are carried entirely by the per-slot feature
//! function, so the architecture is fixed regardless of domain size.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::belief::BeliefState;
use crate::dip::{FeatureExtractor, DIP_LEN, MASTER_LEN};
use crate::ontology::{Database, Ontology};
use crate::qlearner::{
    epsilon_greedy, sync_target, train_step, LearnerConfig, QNetwork, ReplayBuffer, Transition,
};

use super::{
    DialoguePolicy, MasterAction, PolicyCheckpoint, PolicyError, TurnOutcome, CHECKPOINT_VERSION,
    GLOBAL_ACTS, INDEP_HEAD, INDEP_PASS, SLOT_ACTS, SLOT_HEAD, SLOT_PASS,
};

/// Default hidden sizes for the feudal sub-policies.
pub const FEUDAL_HIDDEN: (usize, usize) = (130, 50);

/// The per-turn decomposition retained between `act` and `record`.
#[derive(Debug, Clone)]
pub struct FeudalDecision {
    /// The branch actually executed (after any mask fallback).
    pub master: MasterAction,
    pub master_features: Vec<f64>,
    /// Executed head index in the slot-independent sub-policy (`pass` when
    /// the slot-dependent branch ran).
    pub indep_action: usize,
    /// Slot whose features back the shared slot-net transition this turn:
    /// the executed slot on slot-dependent turns, otherwise the slot the
    /// greedy slot-dependent branch would have picked.
    pub slot: usize,
    pub slot_features: Vec<f64>,
    /// Executed head index in the slot sub-policy (`pass` on independent turns).
    pub slot_action: usize,
    pub summary_index: usize,
}

struct SubPolicy {
    net: QNetwork,
    target: QNetwork,
    buffer: ReplayBuffer,
}

impl SubPolicy {
    fn new(input: usize, hidden: (usize, usize), output: usize, seed: u64, capacity: usize) -> Self {
        let net = QNetwork::new(input, hidden.0, hidden.1, output, seed);
        let target = net.clone();
        Self {
            net,
            target,
            buffer: ReplayBuffer::new(capacity),
        }
    }

    fn train(&mut self, cfg: &LearnerConfig, rng: &mut ChaCha20Rng) -> Result<Option<f64>, PolicyError> {
        if self.buffer.len() < cfg.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(cfg.batch_size, rng)?;
        Ok(Some(train_step(&mut self.net, &self.target, &batch, cfg)?))
    }
}

pub struct FeudalPolicy {
    fx: FeatureExtractor,
    num_slots: usize,
    config: LearnerConfig,
    master: SubPolicy,
    indep: SubPolicy,
    slot: SubPolicy,
    train_steps: usize,
    last: Option<FeudalDecision>,
}

impl FeudalPolicy {
    pub fn new(ont: Arc<Ontology>, db: &Database, config: LearnerConfig, seed: u64) -> Self {
        let hidden = config.hidden.unwrap_or(FEUDAL_HIDDEN);
        let cap = config.buffer_capacity;
        let fx = FeatureExtractor::new(ont.clone(), db);
        Self {
            num_slots: ont.num_slots(),
            master: SubPolicy::new(MASTER_LEN, hidden, 2, crate::derive_seed(seed, 10), cap),
            indep: SubPolicy::new(MASTER_LEN, hidden, INDEP_HEAD, crate::derive_seed(seed, 11), cap),
            slot: SubPolicy::new(DIP_LEN, hidden, SLOT_HEAD, crate::derive_seed(seed, 12), cap),
            fx,
            config,
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
        let PolicyCheckpoint::Feudal {
            master,
            indep,
            slot,
            ..
        } = ckpt
        else {
            return Err(PolicyError::Checkpoint("not a feudal checkpoint".into()));
        };
        if master.input_dim != MASTER_LEN || slot.input_dim != DIP_LEN {
            return Err(PolicyError::Checkpoint(format!(
                "feature widths {}/{} do not match {}/{}",
                master.input_dim, slot.input_dim, MASTER_LEN, DIP_LEN
            )));
        }
        let mut p = Self::new(ont, db, config, 0);
        p.master.net = master.clone();
        p.master.target = master;
        p.indep.net = indep.clone();
        p.indep.target = indep;
        p.slot.net = slot.clone();
        p.slot.target = slot;
        Ok(p)
    }

    pub fn master_net(&self) -> &QNetwork {
        &self.master.net
    }

    pub fn indep_net(&self) -> &QNetwork {
        &self.indep.net
    }

    pub fn slot_net(&self) -> &QNetwork {
        &self.slot.net
    }

    pub fn buffer_lens(&self) -> (usize, usize, usize) {
        (
            self.master.buffer.len(),
            self.indep.buffer.len(),
            self.slot.buffer.len(),
        )
    }

    pub fn last_decision(&self) -> Option<&FeudalDecision> {
        self.last.as_ref()
    }

    /// Q-values of the shared slot sub-policy for every slot.
    pub fn slot_q_table(&self, per_slot: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PolicyError> {
        per_slot
            .iter()
            .map(|f| self.slot.net.forward(f).map_err(PolicyError::from))
            .collect()
    }

    /// Greedy slot-dependent choice: the legal (slot, act) pair maximizing
    /// the shared slot net, ties to the lowest (slot, act). `None` when the
    /// mask leaves no legal pair.
    pub fn greedy_slot_pair(
        slot_qs: &[Vec<f64>],
        mask: &[bool],
    ) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (s, qs) in slot_qs.iter().enumerate() {
            for a in 0..SLOT_ACTS {
                if !mask[GLOBAL_ACTS + SLOT_ACTS * s + a] {
                    continue;
                }
                let q = qs[a];
                if best.map(|(_, _, bq)| q > bq).unwrap_or(true) {
                    best = Some((s, a, q));
                }
            }
        }
        best.map(|(s, a, _)| (s, a))
    }

    /// As `greedy_slot_pair` but ignoring the mask (used to pick the slot
    /// whose features back the `pass` transition on independent turns).
    fn greedy_slot_pair_unmasked(slot_qs: &[Vec<f64>]) -> (usize, usize) {
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for (s, qs) in slot_qs.iter().enumerate() {
            for (a, &q) in qs.iter().enumerate().take(SLOT_ACTS) {
                if q > best.2 {
                    best = (s, a, q);
                }
            }
        }
        (best.0, best.1)
    }

    fn legal_globals(mask: &[bool]) -> Vec<usize> {
        (0..GLOBAL_ACTS).filter(|&g| mask[g]).collect()
    }

    fn legal_pairs(num_slots: usize, mask: &[bool]) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for s in 0..num_slots {
            for a in 0..SLOT_ACTS {
                if mask[GLOBAL_ACTS + SLOT_ACTS * s + a] {
                    v.push((s, a));
                }
            }
        }
        v
    }
}

impl DialoguePolicy for FeudalPolicy {
    fn kind(&self) -> &'static str {
        "feudal"
    }

    fn act(
        &mut self,
        b: &BeliefState,
        mask: &[bool],
        eps: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<usize, PolicyError> {
        let (master_feats, per_slot) = self.fx.master_and_slots(b);
        let master_q = self.master.net.forward(&master_feats)?;
        let slot_qs = self.slot_q_table(&per_slot)?;

        let mut choice = match epsilon_greedy(&master_q, &[true, true], eps, rng)? {
            0 => MasterAction::SlotIndependent,
            _ => MasterAction::SlotDependent,
        };

        let legal_globals = Self::legal_globals(mask);
        let legal_pairs = Self::legal_pairs(self.num_slots, mask);
        // Mask fallback: a fully-masked branch hands control to the other
        // one instead of failing the turn.
        if choice == MasterAction::SlotIndependent && legal_globals.is_empty() {
            choice = MasterAction::SlotDependent;
        }
        if choice == MasterAction::SlotDependent && legal_pairs.is_empty() {
            choice = MasterAction::SlotIndependent;
        }
        if legal_globals.is_empty() && legal_pairs.is_empty() {
            return Err(PolicyError::NoLegalAction);
        }

        let decision = match choice {
            MasterAction::SlotIndependent => {
                let indep_q = self.indep.net.forward(&master_feats)?;
                // pass is a training label only; it is never executed.
                let mut head_mask = vec![false; INDEP_HEAD];
                for &g in &legal_globals {
                    head_mask[g] = true;
                }
                let g = epsilon_greedy(&indep_q, &head_mask, eps, rng)?;
                let (pass_slot, _) = Self::greedy_slot_pair_unmasked(&slot_qs);
                FeudalDecision {
                    master: MasterAction::SlotIndependent,
                    master_features: master_feats,
                    indep_action: g,
                    slot: pass_slot,
                    slot_features: per_slot[pass_slot].clone(),
                    slot_action: SLOT_PASS,
                    summary_index: g,
                }
            }
            MasterAction::SlotDependent => {
                // Exploration is uniform over legal (slot, act) pairs so the
                // explore probability does not depend on the slot count.
                let (s, a) = if eps > 0.0 && rng.random::<f64>() < eps {
                    legal_pairs[rng.random_range(0..legal_pairs.len())]
                } else {
                    Self::greedy_slot_pair(&slot_qs, mask).expect("checked non-empty")
                };
                FeudalDecision {
                    master: MasterAction::SlotDependent,
                    master_features: master_feats,
                    indep_action: INDEP_PASS,
                    slot: s,
                    slot_features: per_slot[s].clone(),
                    slot_action: a,
                    summary_index: GLOBAL_ACTS + SLOT_ACTS * s + a,
                }
            }
        };
        let idx = decision.summary_index;
        self.last = Some(decision);
        Ok(idx)
    }

    fn record(&mut self, outcome: &TurnOutcome) {
        let Some(decision) = self.last.take() else {
            return;
        };
        let (next_master, next_slot) = if outcome.terminal {
            (vec![0.0; MASTER_LEN], vec![0.0; DIP_LEN])
        } else {
            (
                self.fx.master(outcome.next_belief).values,
                self.fx.dip(outcome.next_belief, decision.slot).values,
            )
        };
        self.master.buffer.push(Transition {
            state: decision.master_features.clone(),
            action: decision.master.index(),
            reward: outcome.reward,
            next_state: next_master.clone(),
            terminal: outcome.terminal,
            next_mask: vec![true; 2],
        });
        self.indep.buffer.push(Transition {
            state: decision.master_features,
            action: decision.indep_action,
            reward: outcome.reward,
            next_state: next_master,
            terminal: outcome.terminal,
            next_mask: vec![true; INDEP_HEAD],
        });
        self.slot.buffer.push(Transition {
            state: decision.slot_features,
            action: decision.slot_action,
            reward: outcome.reward,
            next_state: next_slot,
            terminal: outcome.terminal,
            next_mask: vec![true; SLOT_HEAD],
        });
    }

    fn end_dialogue(&mut self, rng: &mut ChaCha20Rng) -> Result<(), PolicyError> {
        for _ in 0..self.config.train_steps_per_episode {
            self.master.train(&self.config, rng)?;
            self.indep.train(&self.config, rng)?;
            self.slot.train(&self.config, rng)?;
            self.train_steps += 1;
            if self.train_steps % self.config.target_sync_period == 0 {
                sync_target(&self.master.net, &mut self.master.target);
                sync_target(&self.indep.net, &mut self.indep.target);
                sync_target(&self.slot.net, &mut self.slot.target);
            }
        }
        Ok(())
    }

    fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint::Feudal {
            version: CHECKPOINT_VERSION,
            master: self.master.net.clone(),
            indep: self.indep.net.clone(),
            slot: self.slot.net.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::init_belief;
    use crate::ontology::{generate_domain, DomainSpec};
    use crate::policies::{action_mask, enumerate_actions, SummaryAction};
    use rand::SeedableRng;

    fn setup(seed: u64) -> (Arc<Ontology>, Database, FeudalPolicy) {
        let (ont, db) = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        let ont = Arc::new(ont);
        let policy = FeudalPolicy::new(ont.clone(), &db, LearnerConfig::default(), seed);
        (ont, db, policy)
    }

    #[test]
    fn shared_net_gives_identical_q_for_identical_features() {
        let (ont, db, policy) = setup(3);
        let _ = db;
        let b = init_belief(&ont);
        // All slots start identical except slot width; pick two random
        // feature vectors that are equal and check bit-equal q-values.
        let f = policy.fx.dip(&b, 0).values;
        let q1 = policy.slot.net.forward(&f).unwrap();
        let q2 = policy.slot.net.forward(&f).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn greedy_pair_matches_exhaustive_argmax() {
        let (ont, _db, policy) = setup(5);
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let actions = enumerate_actions(&ont);
        for _ in 0..50 {
            let b = BeliefState::random(&ont, &mut rng);
            let mask = vec![true; actions.len()];
            let (_, per_slot) = policy.fx.master_and_slots(&b);
            let qs = policy.slot_q_table(&per_slot).unwrap();
            let got = FeudalPolicy::greedy_slot_pair(&qs, &mask).unwrap();
            // Independent exhaustive scan.
            let mut best = (0, 0, f64::NEG_INFINITY);
            for s in 0..ont.num_slots() {
                for a in 0..SLOT_ACTS {
                    if qs[s][a] > best.2 {
                        best = (s, a, qs[s][a]);
                    }
                }
            }
            assert_eq!(got, (best.0, best.1));
        }
    }

    #[test]
    fn greedy_chain_returns_inform_when_master_prefers_independent() {
        let (ont, db, mut policy) = setup(11);
        let _ = db;
        // Force the master to prefer the independent branch and the indep
        // head to prefer inform: zero all weights, set output biases.
        {
            let l = policy.master.net.layer_mut(2);
            l.weights.fill(0.0);
            l.bias = vec![2.0, 1.0];
        }
        {
            let l = policy.indep.net.layer_mut(2);
            l.weights.fill(0.0);
            let mut bias = vec![0.0; INDEP_HEAD];
            bias[SummaryAction::Inform.global_index().unwrap()] = 3.0;
            l.bias = bias;
        }
        let b = init_belief(&ont);
        let actions = enumerate_actions(&ont);
        let mask = action_mask(&b, &ont, &actions, true);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let idx = policy.act(&b, &mask, 0.0, &mut rng).unwrap();
        assert_eq!(actions[idx], SummaryAction::Inform);
        let d = policy.last_decision().unwrap();
        assert_eq!(d.master, MasterAction::SlotIndependent);
        assert_eq!(d.slot_action, SLOT_PASS);
    }

    #[test]
    fn slot_branch_selects_best_pair() {
        let (ont, db, mut policy) = setup(13);
        let _ = db;
        {
            let l = policy.master.net.layer_mut(2);
            l.weights.fill(0.0);
            l.bias = vec![0.0, 5.0]; // prefer slot-dependent
        }
        let b = init_belief(&ont);
        let actions = enumerate_actions(&ont);
        // Unmasked so confirm/select are reachable as well.
        let mask = vec![true; actions.len()];
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let idx = policy.act(&b, &mask, 0.0, &mut rng).unwrap();
        let (_, per_slot) = policy.fx.master_and_slots(&b);
        let qs = policy.slot_q_table(&per_slot).unwrap();
        let (s, a) = FeudalPolicy::greedy_slot_pair(&qs, &mask).unwrap();
        assert_eq!(idx, GLOBAL_ACTS + SLOT_ACTS * s + a);
        let d = policy.last_decision().unwrap();
        assert_eq!(d.master, MasterAction::SlotDependent);
        assert_eq!(d.indep_action, INDEP_PASS);
    }

    #[test]
    fn swapping_slot_beliefs_swaps_selected_slot() {
        // Two slots with equal widths and equal database distributions: the
        // shared net must follow the features when the beliefs swap.
        let (ont, db) = generate_domain(&DomainSpec {
            name: "two".into(),
            n_constraint_slots: 2,
            values_per_slot: vec![4, 4],
            n_requestable: 4,
            n_entities: 16,
            seed: 40,
        })
        .unwrap();
        // Rebuild the database so both slots share one empirical value
        // distribution (uniform).
        let mut entities = db.entities.clone();
        for (i, e) in entities.iter_mut().enumerate() {
            e.fields.insert("slot1".into(), format!("s1v{}", i % 4 + 1));
            e.fields.insert("slot2".into(), format!("s2v{}", i % 4 + 1));
        }
        let db = Database { entities };
        let ont = Arc::new(ont);
        let mut policy = FeudalPolicy::new(ont.clone(), &db, LearnerConfig::default(), 3);
        {
            let l = policy.master.net.layer_mut(2);
            l.weights.fill(0.0);
            l.bias = vec![0.0, 5.0];
        }
        let mut b = init_belief(&ont);
        b.set_slot_probs(0, vec![0.1, 0.6, 0.1, 0.1, 0.05, 0.05]);
        b.set_slot_probs(1, vec![0.5, 0.125, 0.125, 0.125, 0.125, 0.0]);
        let mut swapped = b.clone();
        swapped.set_slot_probs(0, vec![0.5, 0.125, 0.125, 0.125, 0.125, 0.0]);
        swapped.set_slot_probs(1, vec![0.1, 0.6, 0.1, 0.1, 0.05, 0.05]);

        let actions = enumerate_actions(&ont);
        let mask = vec![true; actions.len()];
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let i1 = policy.act(&b, &mask, 0.0, &mut rng).unwrap();
        let d1 = policy.last_decision().unwrap().clone();
        let i2 = policy.act(&swapped, &mask, 0.0, &mut rng).unwrap();
        let d2 = policy.last_decision().unwrap().clone();
        assert_ne!(d1.slot, d2.slot);
        assert_eq!(d1.slot_action, d2.slot_action);
        assert_ne!(i1, i2);
    }

    #[test]
    fn buffers_grow_one_transition_per_turn() {
        let (ont, db, mut policy) = setup(21);
        let _ = db;
        let b = init_belief(&ont);
        let actions = enumerate_actions(&ont);
        let mask = action_mask(&b, &ont, &actions, true);
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for turn in 1..=7 {
            let _ = policy.act(&b, &mask, 0.3, &mut rng).unwrap();
            let outcome = TurnOutcome {
                reward: -1.0,
                terminal: turn == 7,
                next_belief: &b,
                next_mask: &mask,
            };
            policy.record(&outcome);
            assert_eq!(policy.buffer_lens(), (turn, turn, turn));
        }
        // Terminal transition carries the terminal flag in every buffer.
        // (Verified indirectly: a fresh policy trains without error.)
        policy.end_dialogue(&mut rng).unwrap();
    }

    #[test]
    fn hello_turn_stores_pass_in_slot_buffer() {
        let (ont, db, mut policy) = setup(23);
        let _ = db;
        {
            let l = policy.master.net.layer_mut(2);
            l.weights.fill(0.0);
            l.bias = vec![5.0, 0.0];
        }
        {
            let l = policy.indep.net.layer_mut(2);
            l.weights.fill(0.0);
            let mut bias = vec![0.0; INDEP_HEAD];
            bias[0] = 3.0; // hello
            l.bias = bias;
        }
        let b = init_belief(&ont);
        let actions = enumerate_actions(&ont);
        let mask = action_mask(&b, &ont, &actions, true);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let idx = policy.act(&b, &mask, 0.0, &mut rng).unwrap();
        assert_eq!(actions[idx], SummaryAction::Hello);
        let d = policy.last_decision().unwrap();
        assert_eq!(d.master, MasterAction::SlotIndependent);
        assert_eq!(d.indep_action, 0);
        assert_eq!(d.slot_action, SLOT_PASS);
        policy.record(&TurnOutcome {
            reward: -1.0,
            terminal: false,
            next_belief: &b,
            next_mask: &mask,
        });
        assert_eq!(policy.buffer_lens(), (1, 1, 1));
    }

    #[test]
    fn empty_buffers_make_training_a_noop() {
        let (_, _, mut policy) = setup(29);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        policy.end_dialogue(&mut rng).unwrap();
        assert_eq!(policy.buffer_lens(), (0, 0, 0));
    }

    #[test]
    fn checkpoint_roundtrip_preserves_behavior() {
        let (ont, db, mut policy) = setup(31);
        let b = init_belief(&ont);
        let actions = enumerate_actions(&ont);
        let mask = action_mask(&b, &ont, &actions, true);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let before = policy.act(&b, &mask, 0.0, &mut rng).unwrap();

        let ckpt = policy.checkpoint();
        let text = serde_json::to_string(&ckpt).unwrap();
        let back: PolicyCheckpoint = serde_json::from_str(&text).unwrap();
        let mut restored =
            FeudalPolicy::from_checkpoint(ont, &db, LearnerConfig::default(), back).unwrap();
        let after = restored.act(&b, &mask, 0.0, &mut rng).unwrap();
        assert_eq!(before, after);
    }
}

//! Domain-independent belief abstraction.
//!
//! Maps a belief state of any domain shape to a fixed-size vector:
//!
//! - `psi0` (22 dims): general dialogue features — last user act, search
//!   method, requested-slot count, offer flags, normalized domain size.
//! - `psi_j` (15 dims): joint-belief features over the Cartesian product of
//!   the slot marginals.
//! - `psi_d` (27 dims): per-slot features — top probabilities, entropy,
//!   slot size, and the database value entropy of the slot.
//!
//! The full per-slot feature is `dip(b, s) = psi0 ⊕ psi_j ⊕ psi_d(b, s)`
//! (64 dims); the master/slot-independent feature is the 37-dim prefix
//! `psi0 ⊕ psi_j`. These lengths are invariant in the domain: that is the
//! whole point of the abstraction, and tests pin them for 1/3/6/11-slot
//! domains.
//!
//! All "(bin)" features use fixed, documented cut points (see the constants
//! below); any monotone binning preserves the abstraction's intent, but the
//! values here are frozen so golden tests stay stable.

use std::sync::Arc;

use crate::belief::{joint_belief, joint_none_prob, BeliefState, JointBelief, NONE_IDX};
use crate::ontology::{db_value_entropy, Database, Ontology};

pub const PSI0_LEN: usize = 22;
pub const PSIJ_LEN: usize = 15;
pub const PSID_LEN: usize = 27;
pub const DIP_LEN: usize = PSI0_LEN + PSIJ_LEN + PSID_LEN;
pub const MASTER_LEN: usize = PSI0_LEN + PSIJ_LEN;

/// Joint-belief truncation: the joint entropy is computed over at most this
/// many most-probable tuples (the reported scalar is the resulting lower
/// bound). Enumerations that exhaust the positive support below this limit
/// are exact; every <=3-slot desk-scale domain falls in that regime.
pub const JOINT_TOP_K: usize = 512;

/// Cut points for the requested-slot count bin (5 bins).
pub const REQUESTED_CUTS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
/// Cut points for top-1 minus top-2 probability difference bins (5 bins).
pub const DIFF_CUTS: [f64; 4] = [0.1, 0.25, 0.5, 0.75];
/// Cut points for the "slots with top value not *NONE*" count bin (5 bins).
pub const TOP_NOT_NONE_CUTS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
/// Cut points for the "values with probability > 0" count bin (5 bins).
pub const POSITIVE_VALUES_CUTS: [f64; 4] = [2.0, 4.0, 8.0, 16.0];
/// Cut points for the slot size bin (10 bins).
pub const SLOT_LEN_CUTS: [f64; 9] = [3.0, 6.0, 10.0, 15.0, 25.0, 40.0, 70.0, 120.0, 200.0];

/// One-hot encoding of the half-open interval containing `x`.
///
/// `thresholds` must be strictly increasing; the output has
/// `thresholds.len() + 1` entries. Bin `i` covers `[t_i, t_{i+1})`; the
/// lowest and highest bins absorb out-of-range values.
pub fn bin_encode(x: f64, thresholds: &[f64]) -> Vec<f64> {
    debug_assert!(thresholds.windows(2).all(|w| w[0] < w[1]));
    let mut v = vec![0.0; thresholds.len() + 1];
    let idx = thresholds.iter().take_while(|&&t| x >= t).count();
    v[idx] = 1.0;
    v
}

/// A labeled 64-dim feature vector with the psi segment layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DipFeatureVector {
    pub values: Vec<f64>,
}

impl DipFeatureVector {
    pub fn psi0(&self) -> &[f64] {
        &self.values[..PSI0_LEN]
    }

    pub fn psi_j(&self) -> &[f64] {
        &self.values[PSI0_LEN..MASTER_LEN]
    }

    pub fn psi_d(&self) -> &[f64] {
        &self.values[MASTER_LEN..]
    }

    pub fn master_prefix(&self) -> &[f64] {
        &self.values[..MASTER_LEN]
    }
}

/// The 37-dim slot-independent feature (psi0 ⊕ psi_j); identical to the
/// prefix of any `dip(b, s)` built from the same belief.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterFeatureVector {
    pub values: Vec<f64>,
}

/// Feature labels for the CLI dump, in vector order.
pub fn dip_labels() -> Vec<String> {
    let mut labels = Vec::with_capacity(DIP_LEN);
    for a in crate::belief::UserActType::ALL {
        labels.push(format!("psi0.last_user_act={}", a.name()));
    }
    for m in crate::belief::SearchMethod::ALL {
        labels.push(format!("psi0.search_method={}", m.name()));
    }
    for i in 0..5 {
        labels.push(format!("psi0.requested_count_bin{i}"));
    }
    labels.push("psi0.offer_happened".into());
    labels.push("psi0.last_action_inform_none".into());
    labels.push("psi0.inv_slot_count".into());
    labels.push("psi0.inv_avg_values".into());
    for i in 0..3 {
        labels.push(format!("psij.top{}_prob", i + 1));
    }
    labels.push("psij.none_tuple_prob".into());
    labels.push("psij.entropy".into());
    for i in 0..5 {
        labels.push(format!("psij.top_diff_bin{i}"));
    }
    for i in 0..5 {
        labels.push(format!("psij.slots_top_not_none_bin{i}"));
    }
    for i in 0..3 {
        labels.push(format!("psid.top{}_prob", i + 1));
    }
    labels.push("psid.none_prob".into());
    for i in 0..5 {
        labels.push(format!("psid.top_diff_bin{i}"));
    }
    labels.push("psid.entropy".into());
    for i in 0..5 {
        labels.push(format!("psid.positive_values_bin{i}"));
    }
    labels.push("psid.inv_value_count".into());
    for i in 0..10 {
        labels.push(format!("psid.value_count_bin{i}"));
    }
    labels.push("psid.db_value_entropy".into());
    debug_assert_eq!(labels.len(), DIP_LEN);
    labels
}

/// Stateless feature functions bound to one domain.
///
/// Per-slot database value entropies are precomputed at construction; all
/// feature methods are pure functions of the belief state.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    ont: Arc<Ontology>,
    db_entropies: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(ont: Arc<Ontology>, db: &Database) -> Self {
        let db_entropies = ont
            .constraint_slots
            .iter()
            .map(|s| db_value_entropy(db, &ont, &s.name).expect("constraint slot"))
            .collect();
        Self { ont, db_entropies }
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ont
    }

    /// General belief features (length 22).
    pub fn psi0(&self, b: &BeliefState) -> Vec<f64> {
        let mut v = Vec::with_capacity(PSI0_LEN);
        let mut act = vec![0.0; crate::belief::UserActType::COUNT];
        act[b.last_user_act.index()] = 1.0;
        v.extend(act);
        let mut sm = vec![0.0; crate::belief::SearchMethod::COUNT];
        sm[b.search_method.index()] = 1.0;
        v.extend(sm);
        v.extend(bin_encode(b.requested_slots.len() as f64, &REQUESTED_CUTS));
        v.push(if b.offer_happened { 1.0 } else { 0.0 });
        v.push(if b.last_action_inform_none { 1.0 } else { 0.0 });
        v.push(1.0 / self.ont.num_slots() as f64);
        v.push(1.0 / self.ont.avg_values_per_slot());
        debug_assert_eq!(v.len(), PSI0_LEN);
        v
    }

    /// Joint-belief features (length 15).
    pub fn psi_j(&self, b: &BeliefState) -> Vec<f64> {
        self.psi_j_from(b, &joint_belief(b, JOINT_TOP_K))
    }

    fn psi_j_from(&self, b: &BeliefState, joint: &JointBelief) -> Vec<f64> {
        let mut v = Vec::with_capacity(PSIJ_LEN);
        v.push(joint.top_prob(0));
        v.push(joint.top_prob(1));
        v.push(joint.top_prob(2));
        v.push(joint_none_prob(b));
        v.push(joint.entropy_lower_bound());
        v.extend(bin_encode(joint.top_prob(0) - joint.top_prob(1), &DIFF_CUTS));
        let top_not_none = b
            .slots()
            .iter()
            .filter(|s| s.top().0 != NONE_IDX)
            .count();
        v.extend(bin_encode(top_not_none as f64, &TOP_NOT_NONE_CUTS));
        debug_assert_eq!(v.len(), PSIJ_LEN);
        v
    }

    /// Per-slot features (length 27). `slot` is a constraint slot index.
    pub fn psi_d(&self, b: &BeliefState, slot: usize) -> Vec<f64> {
        assert!(slot < self.ont.num_slots(), "unknown slot index {slot}");
        let sb = b.slot(slot);
        let sorted = sb.sorted_desc();
        let mut v = Vec::with_capacity(PSID_LEN);
        v.push(sorted[0]);
        v.push(sorted.get(1).copied().unwrap_or(0.0));
        v.push(sorted.get(2).copied().unwrap_or(0.0));
        v.push(sb.none_prob());
        v.extend(bin_encode(
            sorted[0] - sorted.get(1).copied().unwrap_or(0.0),
            &DIFF_CUTS,
        ));
        v.push(sb.entropy());
        v.extend(bin_encode(sb.count_positive() as f64, &POSITIVE_VALUES_CUTS));
        let n_values = self.ont.slot(slot).values.len() as f64;
        v.push(1.0 / n_values);
        v.extend(bin_encode(n_values, &SLOT_LEN_CUTS));
        v.push(self.db_entropies[slot]);
        debug_assert_eq!(v.len(), PSID_LEN);
        v
    }

    /// Full per-slot abstraction `psi0 ⊕ psi_j ⊕ psi_d` (length 64).
    pub fn dip(&self, b: &BeliefState, slot: usize) -> DipFeatureVector {
        let mut values = self.psi0(b);
        values.extend(self.psi_j(b));
        values.extend(self.psi_d(b, slot));
        DipFeatureVector { values }
    }

    /// Slot-independent variant used by the flat DIP scorer: the psi_d
    /// segment is all zeros (no slot is associated with the action).
    pub fn dip_null_slot(&self, b: &BeliefState) -> DipFeatureVector {
        let mut values = self.psi0(b);
        values.extend(self.psi_j(b));
        values.extend(vec![0.0; PSID_LEN]);
        DipFeatureVector { values }
    }

    /// Master / slot-independent feature (length 37).
    pub fn master(&self, b: &BeliefState) -> MasterFeatureVector {
        let mut values = self.psi0(b);
        values.extend(self.psi_j(b));
        MasterFeatureVector { values }
    }

    /// Master prefix plus one 64-dim vector per slot, sharing the joint
    /// computation. This is the per-turn workhorse for the feudal policy.
    pub fn master_and_slots(&self, b: &BeliefState) -> (Vec<f64>, Vec<Vec<f64>>) {
        let joint = joint_belief(b, JOINT_TOP_K);
        let mut prefix = self.psi0(b);
        prefix.extend(self.psi_j_from(b, &joint));
        let per_slot = (0..self.ont.num_slots())
            .map(|s| {
                let mut v = prefix.clone();
                v.extend(self.psi_d(b, s));
                v
            })
            .collect();
        (prefix, per_slot)
    }
}

/// Domain-dependent flat encoding for the plain DQN baseline: the raw
/// concatenation of every slot distribution followed by psi0.
pub fn flat_features(fx: &FeatureExtractor, b: &BeliefState) -> Vec<f64> {
    let mut v = Vec::new();
    for s in b.slots() {
        v.extend_from_slice(s.probs());
    }
    v.extend(fx.psi0(b));
    v
}

/// Flat-encoding length for a domain.
pub fn flat_dim(ont: &Ontology) -> usize {
    ont.constraint_slots
        .iter()
        .map(|s| s.values.len() + 2)
        .sum::<usize>()
        + PSI0_LEN
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{entropy_of, init_belief, BeliefState};
    use crate::ontology::{generate_domain, DomainSpec, Entity, SlotDef};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn cr_fx() -> (FeatureExtractor, BeliefState) {
        let (ont, db) = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        let ont = Arc::new(ont);
        let fx = FeatureExtractor::new(ont.clone(), &db);
        let b = init_belief(&ont);
        (fx, b)
    }

    #[test]
    fn bin_encode_intervals() {
        assert_eq!(bin_encode(0.0, &[1.0, 2.0, 3.0, 4.0]), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(bin_encode(2.5, &[1.0, 2.0, 3.0, 4.0]), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(bin_encode(99.0, &[1.0, 2.0, 3.0, 4.0]), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        // Boundary is inclusive on the left.
        assert_eq!(bin_encode(1.0, &[1.0, 2.0, 3.0, 4.0]), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn psi0_init_belief_layout() {
        let (fx, b) = cr_fx();
        let v = fx.psi0(&b);
        assert_eq!(v.len(), PSI0_LEN);
        // Requested-slot bin: zero requests -> lowest bin (indices 13..18).
        assert_eq!(&v[13..18], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        // offer_happened is coordinate 18.
        assert_eq!(v[18], 0.0);
        // 1/|S| and 1/avg(|V_s|) for the 3-slot [4,5,6] analogue.
        assert!((v[20] - 1.0 / 3.0).abs() < 1e-15);
        assert!((v[21] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn psi0_offer_coordinate() {
        let (fx, mut b) = cr_fx();
        b.offer_happened = true;
        assert_eq!(fx.psi0(&b)[18], 1.0);
    }

    #[test]
    fn psi_j_degenerate_init() {
        let (fx, b) = cr_fx();
        let v = fx.psi_j(&b);
        assert_eq!(v.len(), PSIJ_LEN);
        assert_eq!(&v[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(v[3], 1.0); // *NONE* tuple
        assert_eq!(v[4], 0.0); // entropy
        // diff = 1.0 -> top bin of [0.1, 0.25, 0.5, 0.75].
        assert_eq!(&v[5..10], &[0.0, 0.0, 0.0, 0.0, 1.0]);
        // zero slots with top != *NONE* -> lowest bin.
        assert_eq!(&v[10..15], &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn psi_j_two_slot_enumeration() {
        let (ont, db) = generate_domain(&DomainSpec {
            name: "two".into(),
            n_constraint_slots: 2,
            values_per_slot: vec![2, 2],
            n_requestable: 3,
            n_entities: 4,
            seed: 1,
        })
        .unwrap();
        let ont = Arc::new(ont);
        let fx = FeatureExtractor::new(ont.clone(), &db);
        let mut b = init_belief(&ont);
        b.set_slot_probs(0, vec![0.6, 0.4, 0.0, 0.0]);
        b.set_slot_probs(1, vec![0.5, 0.5, 0.0, 0.0]);
        let v = fx.psi_j(&b);
        assert!((v[0] - 0.30).abs() < 1e-12);
        assert!((v[1] - 0.30).abs() < 1e-12);
        assert!((v[2] - 0.20).abs() < 1e-12);
        assert!((v[3] - 0.30).abs() < 1e-12); // *NONE* tuple = .6*.5
        let expected_h = entropy_of([0.3, 0.3, 0.2, 0.2].into_iter());
        assert!((v[4] - expected_h).abs() < 1e-12);
        assert!((expected_h - 1.3662).abs() < 1e-4);
    }

    #[test]
    fn psi_d_init_and_hand_entropy() {
        let (fx, b) = cr_fx();
        let v = fx.psi_d(&b, 0);
        assert_eq!(v.len(), PSID_LEN);
        assert_eq!(&v[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(v[3], 1.0);
        assert_eq!(v[9], 0.0); // entropy

        // b_s = [.5, .3, .2] over *NONE* + 2 values.
        let (ont2, db2) = generate_domain(&DomainSpec {
            name: "t".into(),
            n_constraint_slots: 1,
            values_per_slot: vec![2],
            n_requestable: 2,
            n_entities: 4,
            seed: 3,
        })
        .unwrap();
        let ont2 = Arc::new(ont2);
        let fx2 = FeatureExtractor::new(ont2.clone(), &db2);
        let mut b2 = init_belief(&ont2);
        b2.set_slot_probs(0, vec![0.5, 0.3, 0.2, 0.0]);
        let v2 = fx2.psi_d(&b2, 0);
        let expected = -(0.5f64 * 0.5f64.ln() + 0.3 * 0.3f64.ln() + 0.2 * 0.2f64.ln());
        assert!((v2[9] - expected).abs() < 1e-12);
        assert!((expected - 1.0297).abs() < 1e-4);
    }

    #[test]
    fn dip_length_and_segments() {
        let (fx, b) = cr_fx();
        let d = fx.dip(&b, 1);
        assert_eq!(d.values.len(), DIP_LEN);
        assert_eq!(d.psi0().len(), PSI0_LEN);
        assert_eq!(d.psi_j().len(), PSIJ_LEN);
        assert_eq!(d.psi_d().len(), PSID_LEN);
        assert_eq!(fx.dip(&b, 1), fx.dip(&b, 1));
    }

    #[test]
    fn master_is_dip_prefix_for_every_slot() {
        let (fx, _) = cr_fx();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..10 {
            let b = BeliefState::random(fx.ontology(), &mut rng);
            let m = fx.master(&b);
            assert_eq!(m.values.len(), MASTER_LEN);
            for s in 0..fx.ontology().num_slots() {
                assert_eq!(m.values.as_slice(), fx.dip(&b, s).master_prefix());
            }
        }
    }

    #[test]
    fn master_init_golden_vector() {
        let (fx, b) = cr_fx();
        let third = 1.0 / 3.0;
        // Frozen from the first verified run; layout documented in dip_labels().
        let expected = vec![
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, // last act = other
            1.0, 0.0, 0.0, 0.0, 0.0, 0.0, // search = none
            1.0, 0.0, 0.0, 0.0, 0.0, // requested bin
            0.0, 0.0, // flags
            third, 0.2, // 1/|S|, 1/avg
            1.0, 0.0, 0.0, // joint top-3
            1.0, // joint *NONE*
            0.0, // joint entropy
            0.0, 0.0, 0.0, 0.0, 1.0, // diff bin
            1.0, 0.0, 0.0, 0.0, 0.0, // top-not-none bin
        ];
        assert_eq!(fx.master(&b).values, expected);
    }

    /// Two slots with identical marginals, sizes, and database distributions
    /// produce identical psi_d segments; swapping their belief contents swaps
    /// the dip outputs while psi0 ⊕ psi_j is unchanged.
    #[test]
    fn identical_slots_and_permutation() {
        let ont = Arc::new(crate::ontology::Ontology {
            name: "perm".into(),
            constraint_slots: vec![
                SlotDef {
                    name: "a".into(),
                    values: vec!["a1".into(), "a2".into(), "a3".into()],
                },
                SlotDef {
                    name: "b".into(),
                    values: vec!["b1".into(), "b2".into(), "b3".into()],
                },
            ],
            requestable_slots: vec!["a".into(), "b".into()],
            entity_count: 6,
        });
        // Both slots get the same empirical value distribution (2/2/2).
        let entities = (0..6)
            .map(|i| Entity {
                fields: [
                    ("a".to_string(), format!("a{}", i / 2 + 1)),
                    ("b".to_string(), format!("b{}", i / 2 + 1)),
                ]
                .into(),
            })
            .collect();
        let db = crate::ontology::Database { entities };
        crate::ontology::validate_domain(&ont, &db).unwrap();
        let fx = FeatureExtractor::new(ont.clone(), &db);

        let mut b = init_belief(&ont);
        let p0 = vec![0.1, 0.5, 0.2, 0.1, 0.1];
        let p1 = vec![0.3, 0.05, 0.25, 0.2, 0.2];
        b.set_slot_probs(0, p0.clone());
        b.set_slot_probs(1, p1.clone());

        let mut swapped = b.clone();
        swapped.set_slot_probs(0, p1);
        swapped.set_slot_probs(1, p0);

        let d0 = fx.dip(&b, 0);
        let d1 = fx.dip(&b, 1);
        let s0 = fx.dip(&swapped, 0);
        let s1 = fx.dip(&swapped, 1);
        assert_eq!(d0.psi_d(), s1.psi_d());
        assert_eq!(d1.psi_d(), s0.psi_d());
        // The joint is a permutation, so the prefix is unchanged.
        assert_eq!(d0.master_prefix(), s0.master_prefix());

        // Identical marginals -> identical psi_d.
        let mut same = init_belief(&ont);
        same.set_slot_probs(0, vec![0.2, 0.3, 0.3, 0.1, 0.1]);
        same.set_slot_probs(1, vec![0.2, 0.3, 0.3, 0.1, 0.1]);
        assert_eq!(fx.dip(&same, 0).psi_d(), fx.dip(&same, 1).psi_d());
    }

    #[test]
    fn dims_hold_across_domain_sizes() {
        for spec in [
            DomainSpec::toy_analogue(1),
            DomainSpec::cr_analogue(2),
            DomainSpec::sfr_analogue(3),
            DomainSpec::lap_analogue(4),
        ] {
            let (ont, db) = generate_domain(&spec).unwrap();
            let ont = Arc::new(ont);
            let fx = FeatureExtractor::new(ont.clone(), &db);
            let mut rng = ChaCha20Rng::seed_from_u64(11);
            for _ in 0..5 {
                let b = BeliefState::random(&ont, &mut rng);
                for s in 0..ont.num_slots() {
                    let d = fx.dip(&b, s);
                    assert_eq!(d.values.len(), DIP_LEN);
                    assert!(d.values.iter().all(|v| v.is_finite()));
                }
                assert_eq!(fx.master(&b).values.len(), MASTER_LEN);
            }
        }
    }

    #[test]
    fn master_and_slots_matches_individual_calls() {
        let (fx, _) = cr_fx();
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let b = BeliefState::random(fx.ontology(), &mut rng);
        let (master, per_slot) = fx.master_and_slots(&b);
        assert_eq!(master, fx.master(&b).values);
        for (s, v) in per_slot.iter().enumerate() {
            assert_eq!(v, &fx.dip(&b, s).values);
        }
    }

    #[test]
    fn flat_dim_matches_encoding() {
        let (ont, db) = generate_domain(&DomainSpec::sfr_analogue(3)).unwrap();
        let ont = Arc::new(ont);
        let fx = FeatureExtractor::new(ont.clone(), &db);
        let b = init_belief(&ont);
        assert_eq!(flat_features(&fx, &b).len(), flat_dim(&ont));
    }

    #[test]
    fn labels_cover_all_dims() {
        assert_eq!(dip_labels().len(), DIP_LEN);
    }
}

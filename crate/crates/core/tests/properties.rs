//! Property tests over the public API: simplex preservation under arbitrary
//! evidence sequences, one-hot binning, joint-belief mass accounting, fixed
//! feature dimensions, and mask safety of action selection.

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use feudal_dm::belief::{
    init_belief, joint_belief, joint_outcome_count, update_belief, BeliefState, ObservedUserAct,
    UserActType,
};
use feudal_dm::dip::{bin_encode, FeatureExtractor, DIP_LEN, MASTER_LEN};
use feudal_dm::ontology::{generate_domain, DomainSpec, DONTCARE};
use feudal_dm::policies::{SummaryAction, SystemTurn};
use feudal_dm::qlearner::epsilon_greedy;

fn small_domain(n_slots: usize, n_values: usize) -> (Arc<feudal_dm::ontology::Ontology>, feudal_dm::ontology::Database) {
    let (ont, db) = generate_domain(&DomainSpec {
        name: "prop".into(),
        n_constraint_slots: n_slots,
        values_per_slot: vec![n_values; n_slots],
        n_requestable: n_slots + 2,
        n_entities: 12,
        seed: 11,
    })
    .unwrap();
    (Arc::new(ont), db)
}

/// One evidence step: (slot, value index or dontcare, confidence, negate?).
#[derive(Debug, Clone)]
struct Evidence {
    slot: usize,
    value: usize,
    confidence: f64,
    negate: bool,
}

fn evidence_strategy(n_slots: usize, n_values: usize) -> impl Strategy<Value = Evidence> {
    (
        0..n_slots,
        0..=n_values, // == n_values means dontcare
        0.01f64..=1.0,
        any::<bool>(),
    )
        .prop_map(|(slot, value, confidence, negate)| Evidence {
            slot,
            value,
            confidence,
            negate,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Arbitrary inform/negate sequences keep every slot on the simplex and
    /// never touch other slots.
    #[test]
    fn focus_rule_preserves_simplex(steps in prop::collection::vec(evidence_strategy(3, 4), 1..25)) {
        let (ont, _db) = small_domain(3, 4);
        let mut b = init_belief(&ont);
        let sys = SystemTurn::plain(SummaryAction::Hello);
        for e in steps {
            let value = if e.value == 4 {
                DONTCARE.to_string()
            } else {
                ont.slot(e.slot).values[e.value].clone()
            };
            let obs = ObservedUserAct {
                act_type: if e.negate { UserActType::Negate } else { UserActType::Inform },
                slot: Some(ont.slot(e.slot).name.clone()),
                value: Some(value),
                confidence: e.confidence,
            };
            let before = b.clone();
            b = update_belief(&b, &obs, &sys, &ont).unwrap();
            prop_assert!(b.check_invariants().is_ok());
            for s in 0..3 {
                if s != e.slot {
                    prop_assert_eq!(before.slot(s), b.slot(s), "untouched slot changed");
                }
            }
            prop_assert_eq!(b.turn_index, before.turn_index + 1);
        }
    }

    /// bin_encode always yields a one-hot vector of the right width.
    #[test]
    fn bin_encode_is_one_hot(x in -1e6f64..1e6, k in 2usize..12) {
        let cuts: Vec<f64> = (1..k).map(|i| i as f64 * 3.5).collect();
        let v = bin_encode(x, &cuts);
        prop_assert_eq!(v.len(), k);
        prop_assert_eq!(v.iter().filter(|&&e| e == 1.0).count(), 1);
        prop_assert!(v.iter().all(|&e| e == 0.0 || e == 1.0));
    }

    /// Joint enumeration: probabilities are sorted descending, mass plus
    /// remainder is 1, and exhausting the support is exact.
    #[test]
    fn joint_mass_accounting(seed in 0u64..5000) {
        let (ont, _db) = small_domain(3, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let b = BeliefState::random(&ont, &mut rng);
        let full = joint_outcome_count(&b);
        let j = joint_belief(&b, full);
        let total: f64 = j.tuples.iter().map(|t| t.1).sum();
        prop_assert!((total + j.remainder - 1.0).abs() < 1e-9);
        prop_assert!(j.remainder < 1e-9);
        for w in j.tuples.windows(2) {
            prop_assert!(w[0].1 >= w[1].1 - 1e-15);
        }
        // Truncated views cover a prefix of the same ordering.
        let top = joint_belief(&b, 4);
        for (a, b2) in top.tuples.iter().zip(j.tuples.iter()) {
            prop_assert_eq!(&a.0, &b2.0);
            prop_assert!((a.1 - b2.1).abs() < 1e-15);
        }
    }

    /// Feature dimensions are domain-invariant.
    #[test]
    fn feature_dims_fixed(n_slots in 1usize..8, n_values in 2usize..7, seed in 0u64..1000) {
        let (ont, db) = small_domain(n_slots, n_values);
        let fx = FeatureExtractor::new(ont.clone(), &db);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let b = BeliefState::random(&ont, &mut rng);
        prop_assert_eq!(fx.master(&b).values.len(), MASTER_LEN);
        for s in 0..n_slots {
            prop_assert_eq!(fx.dip(&b, s).values.len(), DIP_LEN);
        }
    }

    /// Epsilon-greedy never returns a masked action at any epsilon.
    #[test]
    fn epsilon_greedy_respects_mask(
        qs in prop::collection::vec(-10.0f64..10.0, 2..12),
        eps in 0.0f64..=1.0,
        seed in 0u64..1000,
        mask_bits in 1u32..4096,
    ) {
        let n = qs.len();
        let mask: Vec<bool> = (0..n).map(|i| (mask_bits >> (i % 12)) & 1 == 1).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        match epsilon_greedy(&qs, &mask, eps, &mut rng) {
            Ok(idx) => prop_assert!(mask[idx]),
            Err(_) => prop_assert!(mask.iter().all(|&m| !m)),
        }
    }
}

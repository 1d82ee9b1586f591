//! Slot-filling domains: slots, value sets, and the entity database.
//!
//! A domain is a pair `(Ontology, Database)`. The ontology fixes the
//! constraint slots (each with an ordered value set) and the requestable
//! slots; the database is a table of fully-specified entities. Slot and
//! value order is canonical: it defines vector indexing everywhere
//! downstream, so loading and generation both preserve it.

use std::collections::{BTreeMap, BTreeSet};

use rand::prelude::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wildcard constraint value: matches any database value. This is a query
/// construct, distinct from the belief tracker's *NONE* hypothesis.
pub const DONTCARE: &str = "dontcare";

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("domain document parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("constraint slot {index} has an empty name")]
    EmptySlotName { index: usize },
    #[error("duplicate constraint slot name `{name}`")]
    DuplicateSlot { name: String },
    #[error("slot `{slot}` has <2 values")]
    TooFewValues { slot: String },
    #[error("slot `{slot}` lists duplicate value `{value}`")]
    DuplicateValue { slot: String, value: String },
    #[error("requestable slots must include constraint slot `{slot}`")]
    MissingRequestable { slot: String },
    #[error("duplicate requestable slot `{name}`")]
    DuplicateRequestable { name: String },
    #[error("entity {index} is missing field `{slot}`")]
    MissingField { index: usize, slot: String },
    #[error("entity {index} references unknown value `{value}` for slot `{slot}`")]
    UnknownValue {
        index: usize,
        slot: String,
        value: String,
    },
    #[error("ontology declares {declared} entities but database holds {actual}")]
    EntityCountMismatch { declared: usize, actual: usize },
    #[error("unknown slot `{slot}`")]
    UnknownSlot { slot: String },
    #[error("unknown value `{value}` for slot `{slot}`")]
    UnknownQueryValue { slot: String, value: String },
    #[error("infeasible domain spec: {0}")]
    InfeasibleSpec(String),
}

/// One constraint slot: a name plus its ordered value set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub values: Vec<String>,
}

/// A slot-filling domain: constraint slots, requestable slots, entity count.
///
/// `requestable_slots` is a superset of the constraint slot names (a user may
/// ask the value of any of them for an offered entity).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub name: String,
    pub constraint_slots: Vec<SlotDef>,
    pub requestable_slots: Vec<String>,
    pub entity_count: usize,
}

impl Ontology {
    pub fn num_slots(&self) -> usize {
        self.constraint_slots.len()
    }

    pub fn slot(&self, idx: usize) -> &SlotDef {
        &self.constraint_slots[idx]
    }

    /// Index of a constraint slot by name.
    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.constraint_slots.iter().position(|s| s.name == name)
    }

    /// Index of a value within a slot's canonical value list.
    pub fn value_index(&self, slot_idx: usize, value: &str) -> Option<usize> {
        self.constraint_slots[slot_idx]
            .values
            .iter()
            .position(|v| v == value)
    }

    pub fn is_requestable(&self, name: &str) -> bool {
        self.requestable_slots.iter().any(|r| r == name)
    }

    /// Mean number of values per constraint slot.
    pub fn avg_values_per_slot(&self) -> f64 {
        let total: usize = self.constraint_slots.iter().map(|s| s.values.len()).sum();
        total as f64 / self.constraint_slots.len() as f64
    }
}

/// One database entity: a value for every requestable slot (constraint slots
/// included). Entities are fully specified; there are no nulls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub fields: BTreeMap<String, String>,
}

impl Entity {
    pub fn get(&self, slot: &str) -> Option<&str> {
        self.fields.get(slot).map(|s| s.as_str())
    }
}

/// The entity table the user's goal is drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Database {
    pub entities: Vec<Entity>,
}

impl Database {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// On-disk domain document: ontology plus database, serialized as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainDocument {
    pub ontology: Ontology,
    pub database: Database,
}

/// Parse and validate a domain document.
///
/// Slot and value ordering is preserved from the document. Violations are
/// reported with their location (slot name, entity index).
pub fn load_ontology(document: &str) -> Result<(Ontology, Database), DomainError> {
    let doc: DomainDocument = serde_json::from_str(document)?;
    validate_domain(&doc.ontology, &doc.database)?;
    Ok((doc.ontology, doc.database))
}

/// Serialize a domain back to its document form. `load_ontology ∘ serialize`
/// is the identity on `(Ontology, Database)`.
pub fn serialize_domain(ont: &Ontology, db: &Database) -> String {
    let doc = DomainDocument {
        ontology: ont.clone(),
        database: db.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("domain serialization cannot fail")
}

pub fn validate_domain(ont: &Ontology, db: &Database) -> Result<(), DomainError> {
    let mut seen = BTreeSet::new();
    for (index, slot) in ont.constraint_slots.iter().enumerate() {
        if slot.name.is_empty() {
            return Err(DomainError::EmptySlotName { index });
        }
        if !seen.insert(slot.name.clone()) {
            return Err(DomainError::DuplicateSlot {
                name: slot.name.clone(),
            });
        }
        if slot.values.len() < 2 {
            return Err(DomainError::TooFewValues {
                slot: slot.name.clone(),
            });
        }
        let mut vals = BTreeSet::new();
        for v in &slot.values {
            if !vals.insert(v.clone()) {
                return Err(DomainError::DuplicateValue {
                    slot: slot.name.clone(),
                    value: v.clone(),
                });
            }
        }
    }
    let mut req_seen = BTreeSet::new();
    for r in &ont.requestable_slots {
        if !req_seen.insert(r.clone()) {
            return Err(DomainError::DuplicateRequestable { name: r.clone() });
        }
    }
    for slot in &ont.constraint_slots {
        if !ont.is_requestable(&slot.name) {
            return Err(DomainError::MissingRequestable {
                slot: slot.name.clone(),
            });
        }
    }
    for (index, entity) in db.entities.iter().enumerate() {
        for req in &ont.requestable_slots {
            if entity.get(req).is_none() {
                return Err(DomainError::MissingField {
                    index,
                    slot: req.clone(),
                });
            }
        }
        for slot in &ont.constraint_slots {
            let value = entity.get(&slot.name).expect("checked above");
            if !slot.values.iter().any(|v| v == value) {
                return Err(DomainError::UnknownValue {
                    index,
                    slot: slot.name.clone(),
                    value: value.to_string(),
                });
            }
        }
    }
    if ont.entity_count != db.entities.len() {
        return Err(DomainError::EntityCountMismatch {
            declared: ont.entity_count,
            actual: db.entities.len(),
        });
    }
    Ok(())
}

/// Generator spec for a synthetic domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub n_constraint_slots: usize,
    pub values_per_slot: Vec<usize>,
    pub n_requestable: usize,
    pub n_entities: usize,
    pub seed: u64,
}

impl DomainSpec {
    /// 3-slot analogue of a small restaurant domain (desk scale).
    pub fn cr_analogue(seed: u64) -> Self {
        Self {
            name: "cr".into(),
            n_constraint_slots: 3,
            values_per_slot: vec![4, 5, 6],
            n_requestable: 9,
            n_entities: 60,
            seed,
        }
    }

    /// 6-slot analogue of a mid-size domain (desk scale). Value sets are
    /// wider than the 3-slot analogue so the raw belief encoding grows with
    /// the domain while the abstracted features stay fixed.
    pub fn sfr_analogue(seed: u64) -> Self {
        Self {
            name: "sfr".into(),
            n_constraint_slots: 6,
            values_per_slot: vec![10, 12, 14, 10, 12, 14],
            n_requestable: 11,
            n_entities: 150,
            seed,
        }
    }

    /// 11-slot analogue of a large domain (desk scale).
    pub fn lap_analogue(seed: u64) -> Self {
        Self {
            name: "lap".into(),
            n_constraint_slots: 11,
            values_per_slot: vec![4, 5, 6, 4, 5, 6, 4, 5, 6, 4, 5],
            n_requestable: 21,
            n_entities: 80,
            seed,
        }
    }

    /// Single-slot toy domain for learning sanity checks.
    pub fn toy_analogue(seed: u64) -> Self {
        Self {
            name: "toy".into(),
            n_constraint_slots: 1,
            values_per_slot: vec![4],
            n_requestable: 3,
            n_entities: 12,
            seed,
        }
    }

    pub fn by_preset(preset: &str, seed: u64) -> Option<Self> {
        match preset {
            "cr" => Some(Self::cr_analogue(seed)),
            "sfr" => Some(Self::sfr_analogue(seed)),
            "lap" => Some(Self::lap_analogue(seed)),
            "toy" => Some(Self::toy_analogue(seed)),
            _ => None,
        }
    }
}

/// Generate a synthetic domain. Deterministic for a fixed spec: the same
/// spec (including seed) yields a bit-identical `(Ontology, Database)`.
pub fn generate_domain(spec: &DomainSpec) -> Result<(Ontology, Database), DomainError> {
    if spec.n_constraint_slots < 1 {
        return Err(DomainError::InfeasibleSpec(
            "need at least one constraint slot".into(),
        ));
    }
    if spec.values_per_slot.len() != spec.n_constraint_slots {
        return Err(DomainError::InfeasibleSpec(format!(
            "values_per_slot has length {} but n_constraint_slots is {}",
            spec.values_per_slot.len(),
            spec.n_constraint_slots
        )));
    }
    if let Some(k) = spec.values_per_slot.iter().find(|&&k| k < 2) {
        return Err(DomainError::InfeasibleSpec(format!(
            "every slot needs >=2 values, got {k}"
        )));
    }
    if spec.n_requestable < spec.n_constraint_slots {
        return Err(DomainError::InfeasibleSpec(format!(
            "n_requestable {} is below the {} constraint slots it must include",
            spec.n_requestable, spec.n_constraint_slots
        )));
    }
    if spec.n_entities < 1 {
        return Err(DomainError::InfeasibleSpec(
            "need at least one entity".into(),
        ));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let constraint_slots: Vec<SlotDef> = (0..spec.n_constraint_slots)
        .map(|i| SlotDef {
            name: format!("slot{}", i + 1),
            values: (0..spec.values_per_slot[i])
                .map(|j| format!("s{}v{}", i + 1, j + 1))
                .collect(),
        })
        .collect();

    let mut requestable_slots: Vec<String> =
        constraint_slots.iter().map(|s| s.name.clone()).collect();
    for k in 0..(spec.n_requestable - spec.n_constraint_slots) {
        requestable_slots.push(format!("req{}", k + 1));
    }

    let ontology = Ontology {
        name: spec.name.clone(),
        constraint_slots,
        requestable_slots,
        entity_count: spec.n_entities,
    };

    let mut entities = Vec::with_capacity(spec.n_entities);
    for e in 0..spec.n_entities {
        let mut fields = BTreeMap::new();
        for slot in &ontology.constraint_slots {
            let v = slot.values.choose(&mut rng).expect(">=2 values").clone();
            fields.insert(slot.name.clone(), v);
        }
        for req in &ontology.requestable_slots {
            if !fields.contains_key(req) {
                fields.insert(req.clone(), format!("{}_of_e{}", req, e + 1));
            }
        }
        entities.push(Entity { fields });
    }
    let database = Database { entities };
    validate_domain(&ontology, &database)?;
    Ok((ontology, database))
}

/// Return the indices of all entities matching every non-wildcard constraint.
/// Order follows the database (stable).
pub fn query_database(
    db: &Database,
    ont: &Ontology,
    constraints: &BTreeMap<String, String>,
) -> Result<Vec<usize>, DomainError> {
    for (slot, value) in constraints {
        let idx = ont
            .slot_index(slot)
            .ok_or_else(|| DomainError::UnknownSlot { slot: slot.clone() })?;
        if value != DONTCARE && ont.value_index(idx, value).is_none() {
            return Err(DomainError::UnknownQueryValue {
                slot: slot.clone(),
                value: value.clone(),
            });
        }
    }
    Ok(db
        .entities
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            constraints
                .iter()
                .all(|(s, v)| v == DONTCARE || e.get(s) == Some(v.as_str()))
        })
        .map(|(i, _)| i)
        .collect())
}

/// Does entity `idx` satisfy the constraint map (dontcare = wildcard)?
pub fn entity_matches(db: &Database, idx: usize, constraints: &BTreeMap<String, String>) -> bool {
    let e = &db.entities[idx];
    constraints
        .iter()
        .all(|(s, v)| v == DONTCARE || e.get(s) == Some(v.as_str()))
}

/// Shannon entropy (natural log) of the empirical distribution of slot `s`'s
/// values over the database entities.
pub fn db_value_entropy(db: &Database, ont: &Ontology, slot: &str) -> Result<f64, DomainError> {
    ont.slot_index(slot)
        .ok_or_else(|| DomainError::UnknownSlot { slot: slot.into() })?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &db.entities {
        *counts.entry(e.get(slot).expect("validated entity")).or_default() += 1;
    }
    let n = db.entities.len() as f64;
    Ok(counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum())
}

/// Used by the generator-shaped entities to derive a uniform value choice.
/// Exposed for tests that need a seeded, reproducible pick.
pub fn uniform_choice<'a, T>(items: &'a [T], rng: &mut impl Rng) -> &'a T {
    items.choose(rng).expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cr_analogue_shape_matches_three_slot_domain() {
        let (ont, db) = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        assert_eq!(ont.num_slots(), 3);
        assert_eq!(ont.requestable_slots.len(), 9);
        assert_eq!(db.len(), 60);
        let total_values: usize = ont.constraint_slots.iter().map(|s| s.values.len()).sum();
        assert_eq!(total_values, 15);
    }

    #[test]
    fn lap_analogue_has_eleven_slots() {
        let (ont, _) = generate_domain(&DomainSpec::lap_analogue(3)).unwrap();
        assert_eq!(ont.num_slots(), 11);
        assert_eq!(ont.requestable_slots.len(), 21);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        let b = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_domain(&DomainSpec::cr_analogue(8)).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn load_rejects_slot_with_one_value() {
        let doc = r#"{
            "ontology": {
                "name": "bad",
                "constraint_slots": [{"name": "food", "values": ["thai"]}],
                "requestable_slots": ["food"],
                "entity_count": 0
            },
            "database": {"entities": []}
        }"#;
        match load_ontology(doc) {
            Err(DomainError::TooFewValues { slot }) => assert_eq!(slot, "food"),
            other => panic!("expected TooFewValues, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_duplicate_slot_and_unknown_entity_value() {
        let dup = r#"{
            "ontology": {
                "name": "bad",
                "constraint_slots": [
                    {"name": "food", "values": ["thai", "french"]},
                    {"name": "food", "values": ["a", "b"]}
                ],
                "requestable_slots": ["food"],
                "entity_count": 0
            },
            "database": {"entities": []}
        }"#;
        assert!(matches!(
            load_ontology(dup),
            Err(DomainError::DuplicateSlot { .. })
        ));

        let unknown = r#"{
            "ontology": {
                "name": "bad",
                "constraint_slots": [{"name": "food", "values": ["thai", "french"]}],
                "requestable_slots": ["food"],
                "entity_count": 1
            },
            "database": {"entities": [{"fields": {"food": "sushi"}}]}
        }"#;
        match load_ontology(unknown) {
            Err(DomainError::UnknownValue { index, slot, value }) => {
                assert_eq!((index, slot.as_str(), value.as_str()), (0, "food", "sushi"));
            }
            other => panic!("expected UnknownValue, got {other:?}"),
        }
    }

    #[test]
    fn serialize_then_load_is_identity() {
        let (ont, db) = generate_domain(&DomainSpec::sfr_analogue(11)).unwrap();
        let text = serialize_domain(&ont, &db);
        let (ont2, db2) = load_ontology(&text).unwrap();
        assert_eq!(ont, ont2);
        assert_eq!(db, db2);
    }

    #[test]
    fn query_empty_constraints_returns_all() {
        let (ont, db) = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        let all = query_database(&db, &ont, &BTreeMap::new()).unwrap();
        assert_eq!(all.len(), db.len());
    }

    #[test]
    fn query_matches_linear_scan_oracle() {
        let (ont, db) = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        let slot = &ont.constraint_slots[0];
        let value = slot.values[1].clone();
        let mut constraints = BTreeMap::new();
        constraints.insert(slot.name.clone(), value.clone());
        let got = query_database(&db, &ont, &constraints).unwrap();
        // Independent linear scan over the raw entity table.
        let expected: Vec<usize> = db
            .entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.get(&slot.name) == Some(value.as_str()))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, expected);
        assert!(!got.is_empty(), "seeded domain should have matches");
    }

    #[test]
    fn query_no_match_and_dontcare() {
        let (ont, db) = generate_domain(&DomainSpec::cr_analogue(7)).unwrap();
        let mut constraints = BTreeMap::new();
        constraints.insert("slot1".to_string(), DONTCARE.to_string());
        let res = query_database(&db, &ont, &constraints).unwrap();
        assert_eq!(res.len(), db.len());

        let mut bad = BTreeMap::new();
        bad.insert("slot1".to_string(), "nope".to_string());
        assert!(matches!(
            query_database(&db, &ont, &bad),
            Err(DomainError::UnknownQueryValue { .. })
        ));
    }

    #[test]
    fn db_entropy_degenerate_and_uniform() {
        // All entities share one value -> 0.
        let ont = Ontology {
            name: "t".into(),
            constraint_slots: vec![SlotDef {
                name: "food".into(),
                values: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            }],
            requestable_slots: vec!["food".into()],
            entity_count: 4,
        };
        let same = Database {
            entities: (0..4)
                .map(|_| Entity {
                    fields: [("food".to_string(), "a".to_string())].into(),
                })
                .collect(),
        };
        assert_eq!(db_value_entropy(&same, &ont, "food").unwrap(), 0.0);

        // 4 values uniform -> ln 4.
        let uniform = Database {
            entities: ["a", "b", "c", "d"]
                .iter()
                .map(|v| Entity {
                    fields: [("food".to_string(), v.to_string())].into(),
                })
                .collect(),
        };
        let h = db_value_entropy(&uniform, &ont, "food").unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn db_entropy_matches_counting_oracle_and_bound() {
        let (ont, db) = generate_domain(&DomainSpec::sfr_analogue(5)).unwrap();
        for slot in &ont.constraint_slots {
            let h = db_value_entropy(&db, &ont, &slot.name).unwrap();
            // Brute-force count oracle.
            let mut counts: BTreeMap<String, f64> = BTreeMap::new();
            for e in &db.entities {
                *counts.entry(e.get(&slot.name).unwrap().to_string()).or_default() += 1.0;
            }
            let n: f64 = db.entities.len() as f64;
            let expected: f64 = counts.values().map(|c| -(c / n) * (c / n).ln()).sum();
            assert!((h - expected).abs() < 1e-12);
            assert!(h <= (slot.values.len() as f64).ln() + 1e-12);
            assert!(h >= 0.0);
        }
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let mut spec = DomainSpec::cr_analogue(1);
        spec.n_entities = 0;
        assert!(matches!(
            generate_domain(&spec),
            Err(DomainError::InfeasibleSpec(_))
        ));
        let mut spec = DomainSpec::cr_analogue(1);
        spec.values_per_slot = vec![4, 5];
        assert!(generate_domain(&spec).is_err());
    }
}

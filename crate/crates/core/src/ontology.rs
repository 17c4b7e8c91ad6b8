//! Restaurant-domain ontology and the synthetic venue database.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of venues in the database.
pub const DATABASE_SIZE: usize = 149;

/// Value accepted for every informable slot; never stored in an entity.
pub const DONTCARE: &str = "dontcare";

/// The shipped default ontology.
pub const DEFAULT_ONTOLOGY_JSON: &str = include_str!("../resources/ontology.json");

const COVERAGE_RESAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Foodtype,
    Pricerange,
    Area,
    Near,
    Name,
    Phonenumber,
    Address,
    Price,
    Postcode,
}

pub const INFORMABLE: [Slot; 4] = [Slot::Foodtype, Slot::Pricerange, Slot::Area, Slot::Near];

pub const REQUESTABLE: [Slot; 5] =
    [Slot::Name, Slot::Phonenumber, Slot::Address, Slot::Price, Slot::Postcode];

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::Foodtype => "foodtype",
            Slot::Pricerange => "pricerange",
            Slot::Area => "area",
            Slot::Near => "near",
            Slot::Name => "name",
            Slot::Phonenumber => "phonenumber",
            Slot::Address => "address",
            Slot::Price => "price",
            Slot::Postcode => "postcode",
        }
    }

    pub fn is_informable(self) -> bool {
        self.informable_index().is_some()
    }

    /// Position in [`INFORMABLE`], if informable.
    pub fn informable_index(self) -> Option<usize> {
        INFORMABLE.iter().position(|s| *s == self)
    }

    /// Position in [`REQUESTABLE`], if requestable.
    pub fn requestable_index(self) -> Option<usize> {
        REQUESTABLE.iter().position(|s| *s == self)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        INFORMABLE
            .iter()
            .chain(REQUESTABLE.iter())
            .copied()
            .find(|slot| slot.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown slot `{s}`")))
    }
}

/// Slot-filling domain definition. Value sets are indexed in [`INFORMABLE`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    version: String,
    values: [Vec<String>; 4],
}

#[derive(Serialize, Deserialize)]
struct OntologyRecord {
    version: String,
    informable_slots: Vec<String>,
    requestable_slots: Vec<String>,
    values: BTreeMap<String, Vec<String>>,
}

impl Ontology {
    pub fn new(version: impl Into<String>, values: [Vec<String>; 4]) -> Result<Self> {
        for (slot, set) in INFORMABLE.iter().zip(values.iter()) {
            if set.is_empty() {
                return Err(Error::InvalidInput(format!("empty value set for `{slot}`")));
            }
            for (i, v) in set.iter().enumerate() {
                if v == DONTCARE {
                    return Err(Error::InvalidInput(format!(
                        "`{DONTCARE}` cannot be listed as a value of `{slot}`"
                    )));
                }
                if set[..i].contains(v) {
                    return Err(Error::InvalidInput(format!("duplicate value `{v}` in `{slot}`")));
                }
            }
        }
        Ok(Ontology { version: version.into(), values })
    }

    /// The shipped restaurant ontology.
    pub fn restaurant() -> Self {
        Self::from_json(DEFAULT_ONTOLOGY_JSON).expect("bundled ontology is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: OntologyRecord = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("ontology json: {e}")))?;
        let informable: Vec<&str> = INFORMABLE.iter().map(|s| s.name()).collect();
        let requestable: Vec<&str> = REQUESTABLE.iter().map(|s| s.name()).collect();
        if record.informable_slots != informable {
            return Err(Error::InvalidInput(format!(
                "informable slots must be {informable:?}, got {:?}",
                record.informable_slots
            )));
        }
        if record.requestable_slots != requestable {
            return Err(Error::InvalidInput(format!(
                "requestable slots must be {requestable:?}, got {:?}",
                record.requestable_slots
            )));
        }
        let mut values: [Vec<String>; 4] = Default::default();
        for (i, slot) in INFORMABLE.iter().enumerate() {
            values[i] = record
                .values
                .get(slot.name())
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("missing value set for `{slot}`")))?;
        }
        if let Some(extra) = record.values.keys().find(|k| !informable.contains(&k.as_str())) {
            return Err(Error::InvalidInput(format!("value set for non-informable slot `{extra}`")));
        }
        Ontology::new(record.version, values)
    }

    pub fn to_json(&self) -> String {
        let record = OntologyRecord {
            version: self.version.clone(),
            informable_slots: INFORMABLE.iter().map(|s| s.name().to_string()).collect(),
            requestable_slots: REQUESTABLE.iter().map(|s| s.name().to_string()).collect(),
            values: INFORMABLE
                .iter()
                .zip(self.values.iter())
                .map(|(s, v)| (s.name().to_string(), v.clone()))
                .collect(),
        };
        serde_json::to_string_pretty(&record).expect("ontology serializes")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn informable_slots(&self) -> &'static [Slot] {
        &INFORMABLE
    }

    pub fn requestable_slots(&self) -> &'static [Slot] {
        &REQUESTABLE
    }

    /// Value set of an informable slot, or `None` for requestable slots.
    pub fn values(&self, slot: Slot) -> Option<&[String]> {
        slot.informable_index().map(|i| self.values[i].as_slice())
    }

    /// True when `value` is in the slot's value set or is `dontcare`.
    pub fn is_valid_value(&self, slot: Slot, value: &str) -> bool {
        match self.values(slot) {
            Some(set) => value == DONTCARE || set.iter().any(|v| v == value),
            None => false,
        }
    }
}

impl Default for Ontology {
    fn default() -> Self {
        Self::restaurant()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: usize,
    /// Values in [`INFORMABLE`] order.
    pub informable: [String; 4],
    /// Values in [`REQUESTABLE`] order.
    pub requestable: [String; 5],
}

impl Entity {
    pub fn value(&self, slot: Slot) -> &str {
        match (slot.informable_index(), slot.requestable_index()) {
            (Some(i), _) => &self.informable[i],
            (_, Some(i)) => &self.requestable[i],
            _ => unreachable!("every slot is informable or requestable"),
        }
    }
}

/// Informable-slot constraints, validated against an ontology.
pub type Constraints = BTreeMap<Slot, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Database {
    pub entities: Vec<Entity>,
}

/// Builds the deterministic synthetic venue database.
pub fn generate_database(seed: u64, ontology: &Ontology) -> Database {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: [Vec<usize>; 4] = Default::default();
    for (i, slot) in INFORMABLE.iter().enumerate() {
        let cardinality = ontology.values(*slot).map_or(1, |v| v.len());
        let mut column = Vec::new();
        for _ in 0..COVERAGE_RESAMPLES {
            column = (0..DATABASE_SIZE).map(|_| rng.random_range(0..cardinality)).collect();
            let covered = (0..cardinality).all(|v| column.contains(&v));
            if covered || cardinality > DATABASE_SIZE {
                break;
            }
        }
        columns[i] = column;
    }

    let entities = (0..DATABASE_SIZE)
        .map(|id| {
            let informable = std::array::from_fn(|i| {
                ontology.values(INFORMABLE[i]).expect("informable")[columns[i][id]].clone()
            });
            Entity { id, informable, requestable: synthesize_requestables(id) }
        })
        .collect();
    Database { entities }
}

fn synthesize_requestables(id: usize) -> [String; 5] {
    const STREETS: [&str; 7] =
        ["regent street", "mill road", "hills road", "king street", "bridge street", "trumpington street", "newmarket road"];
    let mixed = (id as u64).wrapping_mul(2_654_435_761) % 1_000_000;
    let low = 5 + (id * 7) % 20;
    [
        format!("venue-{id}"),
        format!("01223 {mixed:06}"),
        format!("{} {}", 1 + (id * 13) % 97, STREETS[id % STREETS.len()]),
        format!("£{low}-{}", low + 10 + id % 15),
        format!("cb{} {}{}{}", 1 + id % 5, id % 10, (b'a' + (id % 26) as u8) as char, (b'a' + ((id / 26) % 26) as u8) as char),
    ]
}

impl Database {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Entity> {
        self.entities.get(id)
    }

    /// Entities matching every non-`dontcare` constraint, in ascending id order.
    pub fn query_matches(&self, ontology: &Ontology, constraints: &Constraints) -> Result<Vec<&Entity>> {
        let mut filter: [Option<&str>; 4] = [None; 4];
        for (slot, value) in constraints {
            let index = slot.informable_index().ok_or_else(|| {
                Error::InvalidInput(format!("`{slot}` is not an informable slot"))
            })?;
            if !ontology.is_valid_value(*slot, value) {
                return Err(Error::InvalidInput(format!("unknown value `{value}` for `{slot}`")));
            }
            if value != DONTCARE {
                filter[index] = Some(value.as_str());
            }
        }
        Ok(self.matching_ids(&filter).into_iter().map(|id| &self.entities[id]).collect())
    }

    /// Unvalidated filter over informable slots; `None` ignores the slot.
    pub fn matching_ids(&self, filter: &[Option<&str>; 4]) -> Vec<usize> {
        self.entities
            .iter()
            .filter(|e| {
                filter
                    .iter()
                    .zip(e.informable.iter())
                    .all(|(want, have)| want.is_none_or(|w| w == have))
            })
            .map(|e| e.id)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("database serializes")
    }

    pub fn from_json(text: &str, ontology: &Ontology) -> Result<Self> {
        let db: Database = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("database json: {e}")))?;
        for (i, e) in db.entities.iter().enumerate() {
            if e.id != i {
                return Err(Error::InvalidInput(format!("entity at position {i} has id {}", e.id)));
            }
            for (slot, value) in INFORMABLE.iter().zip(e.informable.iter()) {
                if value == DONTCARE || !ontology.is_valid_value(*slot, value) {
                    return Err(Error::InvalidInput(format!(
                        "entity {i}: invalid value `{value}` for `{slot}`"
                    )));
                }
            }
        }
        Ok(db)
    }

    pub fn load(path: &Path, ontology: &Ontology) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, ontology)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force(db: &Database, constraints: &Constraints) -> Vec<usize> {
        let mut out = Vec::new();
        for e in &db.entities {
            let mut ok = true;
            for (slot, value) in constraints {
                if value != DONTCARE && e.value(*slot) != value {
                    ok = false;
                }
            }
            if ok {
                out.push(e.id);
            }
        }
        out
    }

    fn random_constraints(ontology: &Ontology, rng: &mut ChaCha8Rng) -> Constraints {
        let mut c = Constraints::new();
        for slot in INFORMABLE {
            match rng.random_range(0..3) {
                0 => {}
                1 => {
                    c.insert(slot, DONTCARE.to_string());
                }
                _ => {
                    let set = ontology.values(slot).unwrap();
                    c.insert(slot, set[rng.random_range(0..set.len())].clone());
                }
            }
        }
        c
    }

    #[test]
    fn default_ontology_shape() {
        let o = Ontology::restaurant();
        assert_eq!(o.informable_slots(), &INFORMABLE);
        assert_eq!(o.values(Slot::Foodtype).unwrap().len(), 10);
        assert_eq!(o.values(Slot::Pricerange).unwrap().len(), 3);
        assert_eq!(o.values(Slot::Area).unwrap().len(), 5);
        assert_eq!(o.values(Slot::Near).unwrap().len(), 8);
        assert!(o.values(Slot::Phonenumber).is_none());
        assert!(o.is_valid_value(Slot::Area, DONTCARE));
        assert_eq!(Ontology::from_json(&o.to_json()).unwrap(), o);
    }

    #[test]
    fn rejects_bad_ontologies() {
        let dup = [vec!["a".into(), "a".into()], vec!["x".into()], vec!["y".into()], vec!["z".into()]];
        assert!(Ontology::new("t", dup).is_err());
        let empty = [vec![], vec!["x".into()], vec!["y".into()], vec!["z".into()]];
        assert!(Ontology::new("t", empty).is_err());
        let reordered = DEFAULT_ONTOLOGY_JSON.replacen(
            r#"["foodtype", "pricerange", "area", "near"]"#,
            r#"["pricerange", "foodtype", "area", "near"]"#,
            1,
        );
        assert!(Ontology::from_json(&reordered).is_err());
    }

    #[test]
    fn database_is_deterministic_and_valid() {
        let o = Ontology::restaurant();
        let a = generate_database(7, &o);
        let b = generate_database(7, &o);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.len(), DATABASE_SIZE);
        for (i, e) in a.entities.iter().enumerate() {
            assert_eq!(e.id, i);
            for slot in INFORMABLE {
                assert!(o.values(slot).unwrap().iter().any(|v| v == e.value(slot)));
            }
            assert_eq!(e.value(Slot::Name), format!("venue-{i}"));
        }
        for slot in INFORMABLE {
            for v in o.values(slot).unwrap() {
                assert!(a.entities.iter().any(|e| e.value(slot) == v), "{slot}={v} uncovered");
            }
        }
        assert_ne!(generate_database(8, &o).to_json(), a.to_json());
        assert_eq!(Database::from_json(&a.to_json(), &o).unwrap(), a);
    }

    #[test]
    fn query_edge_cases() {
        let o = Ontology::restaurant();
        let db = generate_database(7, &o);
        assert_eq!(db.query_matches(&o, &Constraints::new()).unwrap().len(), 149);
        let dc = Constraints::from([(Slot::Foodtype, DONTCARE.to_string())]);
        assert_eq!(db.query_matches(&o, &dc).unwrap().len(), 149);
        let bad_slot = Constraints::from([(Slot::Phonenumber, "1".to_string())]);
        assert!(matches!(db.query_matches(&o, &bad_slot), Err(Error::InvalidInput(_))));
        let bad_value = Constraints::from([(Slot::Area, "mars".to_string())]);
        assert!(db.query_matches(&o, &bad_value).is_err());
        let two = Constraints::from([
            (Slot::Foodtype, "indian".to_string()),
            (Slot::Pricerange, "cheap".to_string()),
        ]);
        let got: Vec<usize> = db.query_matches(&o, &two).unwrap().iter().map(|e| e.id).collect();
        assert_eq!(got, brute_force(&db, &two));
    }

    #[test]
    fn query_matches_brute_force_on_random_constraints() {
        let o = Ontology::restaurant();
        let db = generate_database(11, &o);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let c = random_constraints(&o, &mut rng);
            let got: Vec<usize> = db.query_matches(&o, &c).unwrap().iter().map(|e| e.id).collect();
            assert_eq!(got, brute_force(&db, &c));
        }
    }

    proptest! {
        #[test]
        fn filtering_is_monotone(seed in 0u64..1000, s1 in 0u64..10_000, s2 in 0u64..10_000) {
            let o = Ontology::restaurant();
            let db = generate_database(seed, &o);
            let c1 = random_constraints(&o, &mut ChaCha8Rng::seed_from_u64(s1));
            let c2 = random_constraints(&o, &mut ChaCha8Rng::seed_from_u64(s2));
            let mut union = c1.clone();
            for (k, v) in c2 {
                union.entry(k).or_insert(v);
            }
            let narrow: Vec<usize> = db.query_matches(&o, &union).unwrap().iter().map(|e| e.id).collect();
            let wide: Vec<usize> = db.query_matches(&o, &c1).unwrap().iter().map(|e| e.id).collect();
            prop_assert!(narrow.iter().all(|id| wide.contains(id)));
        }
    }
}

#![allow(dead_code)]

pub mod checks;
pub mod gt_oracle;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use memqa::dgp::{generate_cohort, Cohort, DgpConfig, PersonaData};
use memqa::eval::experiment::{SeedData, Setup};
use serde_json::Value;

pub const SEEDS: [u64; 4] = [1, 2, 3, 4];

/// Default-config cohorts for the four standard seeds, built once per test binary.
pub fn cohorts() -> &'static [Cohort] {
    static C: OnceLock<Vec<Cohort>> = OnceLock::new();
    C.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&s| generate_cohort(&DgpConfig::with_seed(s)).unwrap())
            .collect()
    })
}

pub fn seed_data() -> &'static [SeedData] {
    static D: OnceLock<Vec<SeedData>> = OnceLock::new();
    D.get_or_init(|| {
        let setup = Setup::default();
        SEEDS
            .iter()
            .map(|&s| SeedData::generate(&DgpConfig::with_seed(s), &setup).unwrap())
            .collect()
    })
}

/// Oracle labels for one persona, from its serialized form.
pub fn oracle_labels(p: &PersonaData) -> BTreeMap<String, String> {
    let events = serde_json::to_value(&p.events).unwrap();
    let sources: BTreeMap<String, Value> = p
        .streams
        .iter()
        .map(|(id, s)| (id.as_str().to_string(), serde_json::to_value(s).unwrap()))
        .collect();
    gt_oracle::labels(&events, &sources)
}

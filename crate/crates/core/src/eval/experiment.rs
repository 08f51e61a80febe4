use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::Scored;
use crate::atoms::{readout_atoms, AtomTable, SourceQuestionMap};
use crate::dgp::{generate_cohort, Cohort, DgpConfig};
use crate::error::{Error, Result};
use crate::ground_truth::{compute_all_labels, LabelMap};
use crate::resolvers::{fit, BiasPrior, FitContext, LabeledSet, Method};
use crate::Model;
use crate::schema::{DifficultyClass, Registry, Split};
use crate::selective::{calibrate, decide, CalibrationSet, Decision, PolicyFamily, PolicyFile};
use crate::Prediction;

/// Fixed inputs shared by every fit in a run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub registry: Registry,
    pub sqmap: SourceQuestionMap,
    pub prior: BiasPrior,
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            registry: Registry::builtin(),
            sqmap: SourceQuestionMap::default(),
            prior: BiasPrior::default(),
        }
    }
}

/// One seed's labels, atoms and split-wise labeled sets.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub labels: LabelMap,
    /// Atom tables in cohort order.
    pub tables: Vec<AtomTable>,
    pub train: LabeledSet,
    pub calib: LabeledSet,
    pub test: LabeledSet,
}

impl SeedData {
    /// `personas` gives (id, difficulty) in cohort order; `tables` must
    /// follow the same order.
    pub fn assemble(
        seed: u64,
        personas: &[(String, DifficultyClass)],
        splits: &BTreeMap<String, Split>,
        labels: LabelMap,
        tables: Vec<AtomTable>,
        registry: &Registry,
    ) -> Result<Self> {
        if personas.len() != tables.len()
            || personas.iter().zip(&tables).any(|((id, _), t)| *id != t.persona_id)
        {
            return Err(Error::Split("atom tables do not follow the cohort order".into()));
        }
        let pick = |split: Split| {
            let items = personas
                .iter()
                .zip(&tables)
                .filter(|((id, _), _)| splits.get(id) == Some(&split))
                .map(|((_, d), t)| (t, *d));
            LabeledSet::build(items, &labels, registry)
        };
        let (train, calib, test) = (pick(Split::Train)?, pick(Split::Calibration)?, pick(Split::Test)?);
        Ok(SeedData {
            seed,
            labels,
            tables,
            train,
            calib,
            test,
        })
    }

    pub fn from_cohort(cohort: &Cohort, labels: LabelMap, tables: Vec<AtomTable>, registry: &Registry) -> Result<Self> {
        let personas: Vec<(String, DifficultyClass)> = cohort
            .personas
            .iter()
            .map(|p| (p.traits.persona_id.clone(), p.traits.difficulty))
            .collect();
        Self::assemble(cohort.config.seed, &personas, &cohort.split_of(), labels, tables, registry)
    }

    /// Generate, label and read out one cohort.
    pub fn generate(cfg: &DgpConfig, setup: &Setup) -> Result<Self> {
        let cohort = generate_cohort(cfg)?;
        let labels = compute_all_labels(&cohort, &setup.registry)?;
        let tables = cohort
            .personas
            .iter()
            .map(|p| readout_atoms(&p.traits.persona_id, &p.streams, &setup.registry, &setup.sqmap))
            .collect();
        Self::from_cohort(&cohort, labels, tables, &setup.registry)
    }

    pub fn fit_context<'a>(&'a self, setup: &'a Setup) -> FitContext<'a> {
        FitContext {
            registry: &setup.registry,
            prior: &setup.prior,
            train: &self.train,
            calib: &self.calib,
            seed: self.seed,
        }
    }
}

pub fn predict_set(model: &Model, set: &LabeledSet, setup: &Setup) -> Vec<Vec<Prediction>> {
    set.tables
        .iter()
        .map(|t| model.predict_all(t, &setup.registry, &setup.prior))
        .collect()
}

/// A fitted method with its calibrated abstention policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fitted {
    pub model: Model,
    pub policy: PolicyFile,
}

impl Fitted {
    pub fn method(&self) -> Method {
        self.model.method()
    }
}

pub fn calibrate_default(model: &Model, data: &SeedData, setup: &Setup) -> Result<PolicyFile> {
    let method = model.method();
    let preds = predict_set(model, &data.calib, setup);
    let set = CalibrationSet {
        predictions: &preds,
        tables: &data.calib.tables,
        labels: &data.calib.labels,
    };
    calibrate(PolicyFamily::default_for(method), method, &set, setup.registry.len())
}

pub fn fit_method(method: Method, data: &SeedData, setup: &Setup) -> Result<Fitted> {
    fit_on(method, data, &data.train, setup)
}

/// Fits on an arbitrary training set (calibration stays the seed's own).
pub fn fit_on(method: Method, data: &SeedData, train: &LabeledSet, setup: &Setup) -> Result<Fitted> {
    let cx = FitContext {
        train,
        ..data.fit_context(setup)
    };
    let model = fit::<f64>(method, cx)?;
    let policy = calibrate_default(&model, data, setup)?;
    Ok(Fitted { model, policy })
}

/// Predictions and decisions of one method on one labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    pub method: Method,
    pub predictions: Vec<Vec<Prediction>>,
    pub decisions: Vec<Vec<Decision>>,
}

pub fn evaluate(fitted: &Fitted, set: &LabeledSet, setup: &Setup) -> Result<Evaluated> {
    let method = fitted.method();
    let predictions = predict_set(&fitted.model, set, setup);
    let decisions = predictions
        .iter()
        .zip(&set.tables)
        .map(|(row, t)| {
            row.iter()
                .enumerate()
                .map(|(qi, p)| decide(p, t, qi, method, &fitted.policy.policy))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluated {
        method,
        predictions,
        decisions,
    })
}

/// Scored instances; cluster ids start at `cluster_offset`.
pub fn score(decisions: &[Vec<Decision>], labels: &[Vec<u8>], cluster_offset: usize) -> Vec<Scored> {
    let mut out = Vec::new();
    for (c, (row, y)) in decisions.iter().zip(labels).enumerate() {
        for (qi, d) in row.iter().enumerate() {
            out.push(Scored {
                cluster: cluster_offset + c,
                question: qi,
                correct: d.answer == y[qi],
                skipped: d.skipped,
            });
        }
    }
    out
}

/// Scored instances ignoring any abstention.
pub fn score_answer_only(decisions: &[Vec<Decision>], labels: &[Vec<u8>], cluster_offset: usize) -> Vec<Scored> {
    let mut out = score(decisions, labels, cluster_offset);
    out.iter_mut().for_each(|s| s.skipped = false);
    out
}

/// Difficulty of every pooled cluster, in cluster order.
pub fn cluster_difficulties(sets: &[&LabeledSet]) -> Vec<DifficultyClass> {
    sets.iter().flat_map(|s| s.difficulty.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_data_split_sizes() {
        let setup = Setup::default();
        let d = SeedData::generate(&DgpConfig::with_seed(2), &setup).unwrap();
        assert_eq!((d.train.len(), d.calib.len(), d.test.len()), (216, 96, 120));
        for c in DifficultyClass::ALL {
            assert_eq!(d.test.difficulty.iter().filter(|&&x| x == c).count(), 40);
        }
    }
}

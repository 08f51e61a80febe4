use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::{LabeledSet, Prediction};
use crate::atoms::{AtomTable, N_SOURCES};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::rng;
use crate::schema::{QuestionSpec, Registry, SourceId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomModel {
    pub seed: u64,
}

impl RandomModel {
    /// Uniform draw over the answer space, keyed by (seed, persona, question).
    pub fn predict<F: Scalar>(&self, persona: &str, spec: &QuestionSpec) -> Prediction<F> {
        let mut r = rng::stream(self.seed, &[persona, &spec.id, "random"]);
        Prediction::one_hot(spec, r.random_range(0..spec.k()), false)
    }
}

/// Per-question modal training label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityClass {
    pub answers: Vec<u8>,
}

impl MajorityClass {
    pub fn answer(&self, qi: usize) -> usize {
        self.answers[qi] as usize
    }
}

pub fn fit_majority_class(registry: &Registry, train: &LabeledSet) -> Result<MajorityClass> {
    if train.is_empty() {
        return Err(Error::Config("majority class needs a non-empty training split".into()));
    }
    let answers = registry
        .questions()
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            let mut counts = vec![0usize; q.k()];
            for row in &train.labels {
                counts[row[qi] as usize] += 1;
            }
            // First maximum, i.e. lowest display index on ties.
            let mut best = 0;
            for (i, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect();
    Ok(MajorityClass { answers })
}

/// Single-source baseline: one selected source per question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsbModel {
    pub sources: Vec<SourceId>,
    pub fallback: MajorityClass,
}

impl SsbModel {
    pub fn predict<F: Scalar>(&self, t: &AtomTable, qi: usize, spec: &QuestionSpec) -> Prediction<F> {
        match t.get(qi, self.sources[qi]) {
            Some(v) => Prediction::one_hot(spec, v as usize, false),
            None => Prediction::one_hot(spec, self.fallback.answer(qi), true),
        }
    }
}

/// Train accuracy of every source on every question; nulls count as wrong.
fn source_hits(registry: &Registry, train: &LabeledSet) -> Vec<[usize; N_SOURCES]> {
    (0..registry.len())
        .map(|qi| {
            let mut hits = [0usize; N_SOURCES];
            for (t, row) in train.tables.iter().zip(&train.labels) {
                for (s, hit) in hits.iter_mut().enumerate() {
                    *hit += (t.cells[qi][s] == Some(row[qi])) as usize;
                }
            }
            hits
        })
        .collect()
}

fn first_max(xs: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn fit_ssb(registry: &Registry, train: &LabeledSet) -> Result<SsbModel> {
    let fallback = super::fit_majority_class(registry, train)?;
    let sources = source_hits(registry, train)
        .iter()
        .map(|hits| SourceId::ALL[first_max(hits)])
        .collect();
    Ok(SsbModel { sources, fallback })
}

/// SSB with one cohort-wide source, chosen by summed per-question accuracy.
pub fn fit_ssb_global(registry: &Registry, train: &LabeledSet) -> Result<SsbModel> {
    let fallback = super::fit_majority_class(registry, train)?;
    let hits = source_hits(registry, train);
    let mut totals = [0usize; N_SOURCES];
    for h in &hits {
        for s in 0..N_SOURCES {
            totals[s] += h[s];
        }
    }
    let best = SourceId::ALL[first_max(&totals)];
    Ok(SsbModel {
        sources: vec![best; registry.len()],
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::AtomTable;
    use crate::schema::DifficultyClass;

    fn set(registry: &Registry, rows: &[(AtomTable, u8)]) -> LabeledSet {
        LabeledSet {
            tables: rows.iter().map(|r| r.0.clone()).collect(),
            labels: rows.iter().map(|r| vec![r.1; registry.len()]).collect(),
            difficulty: vec![DifficultyClass::Stable; rows.len()],
        }
    }

    #[test]
    fn majority_class_mode_and_empty_error() {
        let r = Registry::builtin();
        let mut rows: Vec<(AtomTable, u8)> = (0..10).map(|i| (AtomTable::empty(format!("a{i}"), 18), 0)).collect();
        rows.extend((0..5).map(|i| (AtomTable::empty(format!("b{i}"), 18), 1)));
        let mc = fit_majority_class(&r, &set(&r, &rows)).unwrap();
        assert!(mc.answers.iter().all(|&a| a == 0));
        assert!(fit_majority_class(&r, &LabeledSet::default()).is_err());
    }

    #[test]
    fn random_is_uniform_and_seeded() {
        let r = Registry::builtin();
        let q = r.by_id("A1").unwrap();
        let m = RandomModel { seed: 5 };
        let mut counts = [0usize; 3];
        for i in 0..10_000 {
            let p: Prediction<f64> = m.predict(&format!("p{i}"), q);
            counts[p.answer as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 1.0 / 3.0).abs() < 0.02);
        }
        let a: Prediction<f64> = m.predict("x", q);
        let b: Prediction<f64> = m.predict("x", q);
        assert_eq!(a, b);
    }

    #[test]
    fn ssb_picks_best_source_and_ties_go_canonical() {
        let r = Registry::builtin();
        let mut rows = Vec::new();
        for i in 0..10 {
            let mut t = AtomTable::empty(format!("p{i}"), 18);
            for row in t.cells.iter_mut() {
                // device right 9/10, objective right 7/10, planner and self equal
                row[4] = Some(if i < 9 { 0 } else { 1 });
                row[3] = Some(if i < 7 { 0 } else { 1 });
                row[1] = Some(1);
                row[2] = Some(1);
            }
            rows.push((t, 0));
        }
        let m = fit_ssb(&r, &set(&r, &rows)).unwrap();
        assert!(m.sources.iter().all(|&s| s == SourceId::DeviceLog));

        let tie: Vec<_> = rows
            .iter()
            .map(|(t, _)| {
                let mut t = t.clone();
                for row in t.cells.iter_mut() {
                    *row = [None, Some(0), Some(0), None, None];
                }
                (t, 0)
            })
            .collect();
        let m = fit_ssb(&r, &set(&r, &tie)).unwrap();
        assert!(m.sources.iter().all(|&s| s == SourceId::Planner));
        let p: Prediction<f64> = m.predict(&AtomTable::empty("z", 18), 0, r.get(0));
        assert!(p.fallback);
    }
}

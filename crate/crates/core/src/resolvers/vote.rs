use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{active, BiasPrior, LabeledSet, MajorityClass, Prediction};
use crate::atoms::{AtomTable, N_SOURCES};
use crate::error::Result;
use crate::num::Scalar;
use crate::schema::{QuestionSpec, Registry, SourceId};

fn fallback_answer(mc: Option<&MajorityClass>, qi: usize) -> usize {
    mc.map_or(0, |m| m.answer(qi))
}

/// Plurality over non-null sources; ties go to the lowest display index.
pub fn predict_majority_vote<F: Scalar>(
    t: &AtomTable,
    qi: usize,
    spec: &QuestionSpec,
    mc: Option<&MajorityClass>,
) -> Prediction<F> {
    let mut votes = vec![0usize; spec.k()];
    let mut any = false;
    for (_, v) in active(&t.cells[qi]) {
        votes[v as usize] += 1;
        any = true;
    }
    if !any {
        return Prediction::one_hot(spec, fallback_answer(mc, qi), true);
    }
    let mut best = 0;
    for (i, &c) in votes.iter().enumerate() {
        if c > votes[best] {
            best = i;
        }
    }
    Prediction::one_hot(spec, best, false)
}

/// Quantitative-energy strength of an argument with base score `tau` and
/// aggregate energy `e` (supporter strengths minus attacker strengths).
fn qe_strength(tau: f64, e: f64) -> f64 {
    let h = |x: f64| {
        let x = x.max(0.0);
        x * x / (1.0 + x * x)
    };
    tau + (1.0 - tau) * h(e) - tau * h(-e)
}

/// Argumentation adaptation: every non-null source is an unattacked argument
/// that supports the candidate it reports and attacks every other candidate;
/// candidates start from a neutral base score and the strongest one wins.
pub fn predict_argrag<F: Scalar>(
    t: &AtomTable,
    qi: usize,
    spec: &QuestionSpec,
    mc: Option<&MajorityClass>,
) -> Prediction<F> {
    let sources: Vec<(usize, u8)> = active(&t.cells[qi]).collect();
    if sources.is_empty() {
        return Prediction::one_hot(spec, fallback_answer(mc, qi), true);
    }
    // Source arguments have base 1 and no attackers, so their strength stays 1.
    let source_strength = 1.0;
    let strengths: Vec<f64> = (0..spec.k())
        .map(|c| {
            let mut energy = 0.0;
            for &(_, claim) in &sources {
                if claim as usize == c {
                    energy += source_strength;
                } else {
                    energy -= source_strength;
                }
            }
            qe_strength(0.5, energy)
        })
        .collect();
    let mut best = 0;
    for (i, &s) in strengths.iter().enumerate() {
        if s > strengths[best] {
            best = i;
        }
    }
    Prediction::one_hot(spec, best, false)
}

/// Grid positions per source: δ = steps / 20, steps ∈ 0..=10.
pub const BCF_STEPS: u8 = 10;
const BCF_DENOM: u32 = 20;
const BCF_FREE: [SourceId; 4] = [
    SourceId::ProfileLtm,
    SourceId::Planner,
    SourceId::DailySelfReport,
    SourceId::DeviceLog,
];

/// Bias-corrected forward voting with per-source deflation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcfModel {
    /// Deflation δ_s in twentieths, canonical source order; objective stays 0.
    pub steps: [u8; N_SOURCES],
    pub fallback: MajorityClass,
    pub train_macro_accuracy: f64,
}

impl BcfModel {
    pub fn delta(&self) -> [f64; N_SOURCES] {
        self.steps.map(|s| s as f64 / BCF_DENOM as f64)
    }

    /// Integer scores (in twentieths) per candidate, or `None` when all sources are null.
    pub fn scores(&self, t: &AtomTable, qi: usize, spec: &QuestionSpec, prior: &BiasPrior) -> Option<Vec<u32>> {
        let row = &t.cells[qi];
        if row.iter().all(Option::is_none) {
            return None;
        }
        let w = weights(&self.steps, spec);
        let shifts: Vec<i8> = SourceId::ALL.iter().map(|&s| prior.shift(spec, s)).collect();
        Some(
            (0..spec.k())
                .map(|v| {
                    active(row)
                        .filter(|&(s, mu)| mu as usize == super::bias_shift(spec, v, shifts[s], 1.0))
                        .map(|(s, _)| w[s])
                        .sum()
                })
                .collect(),
        )
    }

    pub fn predict<F: Scalar>(&self, t: &AtomTable, qi: usize, spec: &QuestionSpec, prior: &BiasPrior) -> Prediction<F> {
        match self.scores(t, qi, spec, prior) {
            None => Prediction::one_hot(spec, self.fallback.answer(qi), true),
            Some(sc) => {
                let mut best = 0;
                for (i, &x) in sc.iter().enumerate() {
                    if x > sc[best] {
                        best = i;
                    }
                }
                let mut p = Prediction::one_hot(spec, best, false);
                p.scores = Some(sc.iter().map(|&x| F::lit(x as f64 / BCF_DENOM as f64)).collect());
                p
            }
        }
    }
}

/// Vote weights in twentieths. Deflation has no direction on a nominal
/// question, so every source there votes with full weight.
fn weights(steps: &[u8; N_SOURCES], spec: &QuestionSpec) -> [u32; N_SOURCES] {
    if spec.ordinal {
        steps.map(|s| BCF_DENOM - s as u32)
    } else {
        [BCF_DENOM; N_SOURCES]
    }
}

/// Training rows of one question collapsed by atom pattern.
struct Pattern {
    /// Per candidate, bitmask of sources whose atom matches g_s(candidate).
    matches: Vec<u8>,
    /// Gold label counts among personas with this pattern.
    counts: Vec<usize>,
}

pub fn fit_bcf(registry: &Registry, prior: &BiasPrior, train: &LabeledSet) -> Result<BcfModel> {
    let fallback = super::fit_majority_class(registry, train)?;

    let mut fixed_hits = 0usize;
    let mut per_question: Vec<(&QuestionSpec, Vec<Pattern>)> = Vec::new();
    for (qi, spec) in registry.questions().iter().enumerate() {
        let shifts: Vec<i8> = SourceId::ALL.iter().map(|&s| prior.shift(spec, s)).collect();
        let mut groups: BTreeMap<[Option<u8>; N_SOURCES], Vec<usize>> = BTreeMap::new();
        for (t, y) in train.tables.iter().zip(&train.labels) {
            let row = t.cells[qi];
            if row.iter().all(Option::is_none) {
                fixed_hits += (y[qi] as usize == fallback.answer(qi)) as usize;
                continue;
            }
            groups.entry(row).or_insert_with(|| vec![0; spec.k()])[y[qi] as usize] += 1;
        }
        let patterns = groups
            .into_iter()
            .map(|(row, counts)| {
                let matches = (0..spec.k())
                    .map(|v| {
                        active(&row)
                            .filter(|&(s, mu)| mu as usize == super::bias_shift(spec, v, shifts[s], 1.0))
                            .fold(0u8, |m, (s, _)| m | (1 << s))
                    })
                    .collect();
                Pattern { matches, counts }
            })
            .collect();
        per_question.push((spec, patterns));
    }

    let hits_for = |steps: &[u8; N_SOURCES]| -> usize {
        let mut hits = fixed_hits;
        for (spec, patterns) in &per_question {
            let w = weights(steps, spec);
            for p in patterns {
                let mut best = 0;
                let mut best_score = 0;
                for (v, &mask) in p.matches.iter().enumerate() {
                    let score: u32 = (0..N_SOURCES).filter(|s| mask & (1 << s) != 0).map(|s| w[s]).sum();
                    if v == 0 || score > best_score {
                        best = v;
                        best_score = score;
                    }
                }
                hits += p.counts[best];
            }
        }
        hits
    };

    // Lexicographic sweep; only a strict improvement replaces the incumbent.
    let mut best_steps = [0u8; N_SOURCES];
    let mut best_hits = hits_for(&best_steps);
    let n = BCF_STEPS + 1;
    for code in 0..(n as u32).pow(BCF_FREE.len() as u32) {
        let mut steps = [0u8; N_SOURCES];
        let mut rest = code;
        for s in BCF_FREE.iter().rev() {
            steps[s.index()] = (rest % n as u32) as u8;
            rest /= n as u32;
        }
        let hits = hits_for(&steps);
        if hits > best_hits {
            best_hits = hits;
            best_steps = steps;
        }
    }
    let total = train.len() * registry.len();
    Ok(BcfModel {
        steps: best_steps,
        fallback,
        train_macro_accuracy: if total == 0 { 0.0 } else { best_hits as f64 / total as f64 },
    })
}

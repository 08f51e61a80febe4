//! Resolver ladder: source-free baselines, single-source selection and
//! multi-source fusion. Everything probabilistic is generic over [`Scalar`];
//! the crate root re-exports `f64` aliases.

mod abf;
mod baselines;
mod bias;
mod nbf;
mod vote;

use serde::{Deserialize, Serialize};

use crate::atoms::{AtomTable, N_SOURCES};
use crate::error::{Error, Result};
use crate::ground_truth::LabelMap;
use crate::num::{argmax, top_two_margin, Scalar};
use crate::schema::{DifficultyClass, QuestionSpec, Registry};

pub use abf::{expl_score, fit_abf, AbfModel, KernelParams, ABF_ALPHA_GRID, ABF_DELTA_GRID, ABF_PI_GRID};
pub use baselines::{fit_majority_class, fit_ssb, fit_ssb_global, MajorityClass, RandomModel, SsbModel};
pub use bias::{bias_shift, BiasPrior};
pub use nbf::{
    fit_dsnbf, fit_dsnbf_with, fit_nbf, ConfusionModel, DsnbfHyper, DsnbfModel, DSNBF_ETA_GRID, DSNBF_GW_GRID,
    DSNBF_TDIFF_GRID, DSNBF_T_GRID,
};
pub use vote::{fit_bcf, predict_argrag, predict_majority_vote, BcfModel, BCF_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    MajorityClass,
    Ssb,
    SsbG,
    Mv,
    Argrag,
    Bcf,
    Nbf,
    Dsnbf,
    Abf,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Random,
        Method::MajorityClass,
        Method::Ssb,
        Method::SsbG,
        Method::Mv,
        Method::Argrag,
        Method::Bcf,
        Method::Nbf,
        Method::Dsnbf,
        Method::Abf,
    ];

    /// Methods reported in the main tables (SSB-G only appears in the DGP grid).
    pub const MAIN: [Method; 9] = [
        Method::Random,
        Method::MajorityClass,
        Method::Ssb,
        Method::Mv,
        Method::Argrag,
        Method::Bcf,
        Method::Nbf,
        Method::Dsnbf,
        Method::Abf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::MajorityClass => "majority_class",
            Method::Ssb => "ssb",
            Method::SsbG => "ssb_g",
            Method::Mv => "mv",
            Method::Argrag => "argrag",
            Method::Bcf => "bcf",
            Method::Nbf => "nbf",
            Method::Dsnbf => "dsnbf",
            Method::Abf => "abf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s}")))
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Random => "Random",
            Method::MajorityClass => "Majority Class",
            Method::Ssb => "SSB",
            Method::SsbG => "SSB-G",
            Method::Mv => "Majority Vote",
            Method::Argrag => "ArgRAG (adapted)",
            Method::Bcf => "BCF",
            Method::Nbf => "NBF",
            Method::Dsnbf => "DSNBF",
            Method::Abf => "ABF",
        }
    }

    /// Whether predictions carry a meaningful posterior margin.
    pub fn has_posterior(self) -> bool {
        matches!(self, Method::Nbf | Method::Dsnbf)
    }

    /// Learned from labels (as opposed to fixed rules).
    pub fn is_learned(self) -> bool {
        matches!(
            self,
            Method::Ssb | Method::SsbG | Method::Bcf | Method::Nbf | Method::Dsnbf | Method::Abf
        )
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction<F> {
    pub question_id: String,
    pub answer: u8,
    pub posterior: Vec<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<F>,
    /// Raw per-candidate scores for score-based methods (ABF).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<F>>,
    /// The method answered from its prior because its evidence was null.
    #[serde(default)]
    pub fallback: bool,
}

impl<F: Scalar> Prediction<F> {
    pub fn one_hot(spec: &QuestionSpec, answer: usize, fallback: bool) -> Self {
        let mut posterior = vec![F::zero(); spec.k()];
        posterior[answer] = F::one();
        Prediction {
            question_id: spec.id.clone(),
            answer: answer as u8,
            posterior,
            margin: None,
            scores: None,
            fallback,
        }
    }

    /// Answer = argmax of the posterior, with its top-two margin.
    pub fn from_posterior(spec: &QuestionSpec, posterior: Vec<F>) -> Self {
        let answer = argmax(&posterior) as u8;
        let margin = Some(top_two_margin(&posterior));
        Prediction {
            question_id: spec.id.clone(),
            answer,
            posterior,
            margin,
            scores: None,
            fallback: false,
        }
    }
}

/// Atom tables paired with gold answer indices, one row per persona.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub tables: Vec<AtomTable>,
    pub labels: Vec<Vec<u8>>,
    pub difficulty: Vec<DifficultyClass>,
}

impl LabeledSet {
    pub fn build<'a>(
        tables: impl IntoIterator<Item = (&'a AtomTable, DifficultyClass)>,
        labels: &LabelMap,
        registry: &Registry,
    ) -> Result<Self> {
        let mut set = LabeledSet::default();
        for (t, d) in tables {
            let gt = labels
                .get(&t.persona_id)
                .ok_or_else(|| Error::Metric(format!("no labels for persona {}", t.persona_id)))?;
            let row = registry
                .questions()
                .iter()
                .map(|q| {
                    let l = gt
                        .get(&q.id)
                        .ok_or_else(|| Error::Metric(format!("no label for {}/{}", t.persona_id, q.id)))?;
                    Ok(q.require_label(&l.answer)? as u8)
                })
                .collect::<Result<Vec<u8>>>()?;
            set.tables.push(t.clone());
            set.labels.push(row);
            set.difficulty.push(d);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            tables: idx.iter().map(|&i| self.tables[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            difficulty: idx.iter().map(|&i| self.difficulty[i]).collect(),
        }
    }

    /// Replaces the atom tables, keeping labels (used for noisy test atoms).
    pub fn with_tables(&self, tables: Vec<AtomTable>) -> LabeledSet {
        assert_eq!(tables.len(), self.tables.len());
        LabeledSet {
            tables,
            labels: self.labels.clone(),
            difficulty: self.difficulty.clone(),
        }
    }
}

/// Macro accuracy of answer indices against a labeled set.
pub(crate) fn macro_acc(n_questions: usize, labels: &[Vec<u8>], answers: &[Vec<u8>]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for q in 0..n_questions {
        let hit = labels.iter().zip(answers).filter(|(l, a)| l[q] == a[q]).count();
        total += hit as f64 / labels.len() as f64;
    }
    total / n_questions as f64
}

/// A fitted resolver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
#[serde(bound = "F: Scalar")]
pub enum Model<F> {
    Random(RandomModel),
    MajorityClass(MajorityClass),
    Ssb(SsbModel),
    SsbG(SsbModel),
    Mv(MajorityClass),
    Argrag(MajorityClass),
    Bcf(BcfModel),
    Nbf(ConfusionModel<F>),
    Dsnbf(DsnbfModel<F>),
    Abf(AbfModel<F>),
}

#[derive(Debug, Clone, Copy)]
pub struct FitContext<'a> {
    pub registry: &'a Registry,
    pub prior: &'a BiasPrior,
    pub train: &'a LabeledSet,
    pub calib: &'a LabeledSet,
    pub seed: u64,
}

pub fn fit<F: Scalar>(method: Method, cx: FitContext<'_>) -> Result<Model<F>> {
    let mc = || fit_majority_class(cx.registry, cx.train);
    Ok(match method {
        Method::Random => Model::Random(RandomModel { seed: cx.seed }),
        Method::MajorityClass => Model::MajorityClass(mc()?),
        Method::Ssb => Model::Ssb(fit_ssb(cx.registry, cx.train)?),
        Method::SsbG => Model::SsbG(fit_ssb_global(cx.registry, cx.train)?),
        Method::Mv => Model::Mv(mc()?),
        Method::Argrag => Model::Argrag(mc()?),
        Method::Bcf => Model::Bcf(fit_bcf(cx.registry, cx.prior, cx.train)?),
        Method::Nbf => Model::Nbf(fit_nbf(cx.registry, cx.train)?),
        Method::Dsnbf => Model::Dsnbf(fit_dsnbf(cx.registry, cx.train, cx.calib)?),
        Method::Abf => Model::Abf(fit_abf(cx.registry, cx.prior, cx.train)?),
    })
}

impl<F: Scalar> Model<F> {
    pub fn method(&self) -> Method {
        match self {
            Model::Random(_) => Method::Random,
            Model::MajorityClass(_) => Method::MajorityClass,
            Model::Ssb(_) => Method::Ssb,
            Model::SsbG(_) => Method::SsbG,
            Model::Mv(_) => Method::Mv,
            Model::Argrag(_) => Method::Argrag,
            Model::Bcf(_) => Method::Bcf,
            Model::Nbf(_) => Method::Nbf,
            Model::Dsnbf(_) => Method::Dsnbf,
            Model::Abf(_) => Method::Abf,
        }
    }

    pub fn predict(&self, t: &AtomTable, registry: &Registry, prior: &BiasPrior, qi: usize) -> Prediction<F> {
        let spec = registry.get(qi);
        match self {
            Model::Random(m) => m.predict(&t.persona_id, spec),
            Model::MajorityClass(m) => Prediction::one_hot(spec, m.answer(qi), false),
            Model::Ssb(m) | Model::SsbG(m) => m.predict(t, qi, spec),
            Model::Mv(m) => predict_majority_vote(t, qi, spec, Some(m)),
            Model::Argrag(m) => predict_argrag(t, qi, spec, Some(m)),
            Model::Bcf(m) => m.predict(t, qi, spec, prior),
            Model::Nbf(m) => m.predict(t, qi, spec),
            Model::Dsnbf(m) => m.predict_all(t, registry).swap_remove(qi),
            Model::Abf(m) => m.predict(t, qi, spec, prior),
        }
    }

    /// Predictions for every question of one persona.
    pub fn predict_all(&self, t: &AtomTable, registry: &Registry, prior: &BiasPrior) -> Vec<Prediction<F>> {
        match self {
            Model::Dsnbf(m) => m.predict_all(t, registry),
            _ => (0..registry.len()).map(|qi| self.predict(t, registry, prior, qi)).collect(),
        }
    }
}

/// Indices of the non-null sources of one cell row.
pub(crate) fn active(row: &[Option<u8>; N_SOURCES]) -> impl Iterator<Item = (usize, u8)> + '_ {
    row.iter().enumerate().filter_map(|(s, a)| a.map(|v| (s, v)))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::atoms::{readout_atoms, SourceQuestionMap};
    use crate::dgp::{generate_cohort, Cohort, DgpConfig};
    use crate::ground_truth::compute_all_labels;
    use crate::schema::Split;
    use std::sync::OnceLock;

    pub struct Data {
        pub registry: Registry,
        pub train: LabeledSet,
        pub calib: LabeledSet,
        pub test: LabeledSet,
    }

    pub fn split_sets(cohort: &Cohort, registry: &Registry) -> (LabeledSet, LabeledSet, LabeledSet) {
        let m = SourceQuestionMap::default();
        let labels = compute_all_labels(cohort, registry).unwrap();
        let tables: Vec<AtomTable> = cohort
            .personas
            .iter()
            .map(|p| readout_atoms(&p.traits.persona_id, &p.streams, registry, &m))
            .collect();
        let splits = cohort.split_of();
        let pick = |split: Split| {
            let items = cohort
                .personas
                .iter()
                .zip(&tables)
                .filter(|(p, _)| splits[&p.traits.persona_id] == split)
                .map(|(p, t)| (t, p.traits.difficulty));
            LabeledSet::build(items, &labels, registry).unwrap()
        };
        (pick(Split::Train), pick(Split::Calibration), pick(Split::Test))
    }

    pub fn data() -> &'static Data {
        static DATA: OnceLock<Data> = OnceLock::new();
        DATA.get_or_init(|| {
            let registry = Registry::builtin();
            let cohort = generate_cohort(&DgpConfig::with_seed(11)).unwrap();
            let (train, calib, test) = split_sets(&cohort, &registry);
            Data {
                registry,
                train,
                calib,
                test,
            }
        })
    }
}

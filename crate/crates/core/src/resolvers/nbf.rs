use serde::{Deserialize, Serialize};

use super::{active, macro_acc, LabeledSet, Prediction};
use crate::atoms::{AtomTable, N_SOURCES};
use crate::error::{Error, Result};
use crate::num::{softmax_in_place, Scalar};
use crate::schema::{DifficultyClass, QuestionSpec, Registry};

pub const DSNBF_ETA_GRID: [f64; 4] = [1.0, 5.0, 20.0, 100.0];
pub const DSNBF_T_GRID: [f64; 3] = [0.5, 1.0, 2.0];
pub const DSNBF_TDIFF_GRID: [f64; 3] = [0.25, 0.5, 1.0];
pub const DSNBF_GW_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Raw co-occurrence counts of (gold, atom) per question and source.
#[derive(Debug, Clone)]
struct Counts {
    /// [question][source][gold * k + atom]
    conf: Vec<Vec<Vec<u32>>>,
    /// [question][gold]
    class: Vec<Vec<u32>>,
    n: u32,
}

impl Counts {
    fn collect<'a>(registry: &Registry, rows: impl Iterator<Item = (&'a AtomTable, &'a Vec<u8>)>) -> Self {
        let mut c = Counts {
            conf: registry.questions().iter().map(|q| vec![vec![0; q.k() * q.k()]; N_SOURCES]).collect(),
            class: registry.questions().iter().map(|q| vec![0; q.k()]).collect(),
            n: 0,
        };
        for (t, y) in rows {
            c.n += 1;
            for (qi, q) in registry.questions().iter().enumerate() {
                let gold = y[qi] as usize;
                c.class[qi][gold] += 1;
                for (s, mu) in active(&t.cells[qi]) {
                    c.conf[qi][s][gold * q.k() + mu as usize] += 1;
                }
            }
        }
        c
    }
}

/// Per-source confusion matrices and class priors for every question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ConfusionModel<F> {
    /// [question][source] → row-major k×k matrix, C[v][v'] = P(atom = v' | gold = v).
    pub matrices: Vec<Vec<Vec<F>>>,
    /// [question] → P(gold = v).
    pub priors: Vec<Vec<F>>,
}

impl<F: Scalar> ConfusionModel<F> {
    /// Laplace-smoothed (add-one) estimates.
    fn laplace(registry: &Registry, c: &Counts) -> Self {
        let mut matrices = Vec::new();
        let mut priors = Vec::new();
        for (qi, q) in registry.questions().iter().enumerate() {
            let k = q.k();
            let per_source = (0..N_SOURCES)
                .map(|s| {
                    let m = &c.conf[qi][s];
                    let mut out = vec![F::zero(); k * k];
                    for v in 0..k {
                        let row: u32 = m[v * k..(v + 1) * k].iter().sum();
                        for w in 0..k {
                            out[v * k + w] = F::of_usize(m[v * k + w] as usize + 1) / F::of_usize(row as usize + k);
                        }
                    }
                    out
                })
                .collect();
            matrices.push(per_source);
            priors.push(
                (0..k)
                    .map(|v| F::of_usize(c.class[qi][v] as usize + 1) / F::of_usize(c.n as usize + k))
                    .collect(),
            );
        }
        ConfusionModel { matrices, priors }
    }

    /// Matrices pulled toward `global` with Dirichlet strength `eta`.
    fn pulled(registry: &Registry, c: &Counts, global: &ConfusionModel<F>, eta: F) -> Self {
        let mut matrices = Vec::new();
        let mut priors = Vec::new();
        for (qi, q) in registry.questions().iter().enumerate() {
            let k = q.k();
            let per_source = (0..N_SOURCES)
                .map(|s| {
                    let m = &c.conf[qi][s];
                    let g = &global.matrices[qi][s];
                    let mut out = vec![F::zero(); k * k];
                    for v in 0..k {
                        let row: u32 = m[v * k..(v + 1) * k].iter().sum();
                        let denom = F::of_usize(row as usize) + eta;
                        for w in 0..k {
                            out[v * k + w] = (F::of_usize(m[v * k + w] as usize) + eta * g[v * k + w]) / denom;
                        }
                    }
                    out
                })
                .collect();
            matrices.push(per_source);
            let denom = F::of_usize(c.n as usize) + eta;
            priors.push(
                (0..k)
                    .map(|v| (F::of_usize(c.class[qi][v] as usize) + eta * global.priors[qi][v]) / denom)
                    .collect(),
            );
        }
        ConfusionModel { matrices, priors }
    }

    /// Unnormalized log posterior with likelihood terms raised to `temp`.
    pub fn log_scores(&self, t: &AtomTable, qi: usize, k: usize, temp: F) -> Vec<F> {
        (0..k)
            .map(|v| {
                let mut s = self.priors[qi][v].ln();
                for (src, mu) in active(&t.cells[qi]) {
                    s = s + temp * self.matrices[qi][src][v * k + mu as usize].ln();
                }
                s
            })
            .collect()
    }

    pub fn posterior(&self, t: &AtomTable, qi: usize, k: usize, temp: F) -> Vec<F> {
        let mut p = self.log_scores(t, qi, k, temp);
        softmax_in_place(&mut p);
        p
    }

    pub fn predict(&self, t: &AtomTable, qi: usize, spec: &QuestionSpec) -> Prediction<F> {
        let mut p = Prediction::from_posterior(spec, self.posterior(t, qi, spec.k(), F::one()));
        p.fallback = t.cells[qi].iter().all(Option::is_none);
        p
    }

    /// log Σ_y P(y) ∏_s C_s[y, μ_s]^temp for one question.
    fn log_evidence(&self, t: &AtomTable, qi: usize, k: usize, temp: F) -> F {
        crate::num::log_sum_exp(&self.log_scores(t, qi, k, temp))
    }
}

pub fn fit_nbf<F: Scalar>(registry: &Registry, train: &LabeledSet) -> Result<ConfusionModel<F>> {
    if train.is_empty() {
        return Err(Error::Config("NBF needs a non-empty training split".into()));
    }
    let c = Counts::collect(registry, train.tables.iter().zip(&train.labels));
    Ok(ConfusionModel::laplace(registry, &c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsnbfHyper {
    pub eta: f64,
    pub t: f64,
    pub t_diff: f64,
    pub g_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct DsnbfModel<F> {
    pub global: ConfusionModel<F>,
    /// One model per difficulty class, in class order.
    pub per_class: Vec<ConfusionModel<F>>,
    pub class_prior: Vec<F>,
    pub hyper: DsnbfHyper,
    pub calib_macro_accuracy: f64,
}

impl<F: Scalar> DsnbfModel<F> {
    /// Difficulty posterior from this persona's own atoms.
    pub fn infer_difficulty(&self, t: &AtomTable, registry: &Registry) -> Vec<F> {
        let t_diff = F::lit(self.hyper.t_diff);
        let mut logp: Vec<F> = self
            .per_class
            .iter()
            .zip(&self.class_prior)
            .map(|(m, &pi)| {
                let mut s = pi.ln();
                for (qi, q) in registry.questions().iter().enumerate() {
                    s = s + m.log_evidence(t, qi, q.k(), t_diff);
                }
                s
            })
            .collect();
        softmax_in_place(&mut logp);
        logp
    }

    pub fn predict_all(&self, t: &AtomTable, registry: &Registry) -> Vec<Prediction<F>> {
        let pd = self.infer_difficulty(t, registry);
        let gw = F::lit(self.hyper.g_w);
        let temp = F::lit(self.hyper.t);
        registry
            .questions()
            .iter()
            .enumerate()
            .map(|(qi, q)| {
                let k = q.k();
                let global = self.global.posterior(t, qi, k, F::one());
                let mut mixed = vec![F::zero(); k];
                for (m, &w) in self.per_class.iter().zip(&pd) {
                    for (acc, p) in mixed.iter_mut().zip(m.posterior(t, qi, k, temp)) {
                        *acc = *acc + w * p;
                    }
                }
                let blended: Vec<F> = mixed
                    .iter()
                    .zip(&global)
                    .map(|(&s, &g)| gw * s + (F::one() - gw) * g)
                    .collect();
                let mut p = Prediction::from_posterior(q, blended);
                p.fallback = t.cells[qi].iter().all(Option::is_none);
                p
            })
            .collect()
    }
}

struct DsnbfParts<F> {
    global: ConfusionModel<F>,
    class_counts: Vec<Counts>,
    class_prior: Vec<F>,
}

fn parts<F: Scalar>(registry: &Registry, train: &LabeledSet) -> Result<DsnbfParts<F>> {
    let global = fit_nbf(registry, train)?;
    let class_counts: Vec<Counts> = DifficultyClass::ALL
        .iter()
        .map(|&d| {
            let rows = train
                .tables
                .iter()
                .zip(&train.labels)
                .zip(&train.difficulty)
                .filter(|(_, &c)| c == d)
                .map(|(r, _)| r);
            Counts::collect(registry, rows)
        })
        .collect();
    let total = F::of_usize(train.len() + DifficultyClass::ALL.len());
    let class_prior = class_counts.iter().map(|c| F::of_usize(c.n as usize + 1) / total).collect();
    Ok(DsnbfParts {
        global,
        class_counts,
        class_prior,
    })
}

fn assemble<F: Scalar>(registry: &Registry, p: &DsnbfParts<F>, hyper: DsnbfHyper) -> DsnbfModel<F> {
    let eta = F::lit(hyper.eta);
    DsnbfModel {
        global: p.global.clone(),
        per_class: p
            .class_counts
            .iter()
            .map(|c| ConfusionModel::pulled(registry, c, &p.global, eta))
            .collect(),
        class_prior: p.class_prior.clone(),
        hyper,
        calib_macro_accuracy: f64::NAN,
    }
}

/// DSNBF with fixed hyperparameters.
pub fn fit_dsnbf_with<F: Scalar>(registry: &Registry, train: &LabeledSet, hyper: DsnbfHyper) -> Result<DsnbfModel<F>> {
    if !(0.0..=1.0).contains(&hyper.g_w) || hyper.eta < 0.0 {
        return Err(Error::Config(format!("invalid DSNBF hyperparameters {hyper:?}")));
    }
    Ok(assemble(registry, &parts(registry, train)?, hyper))
}

/// Fits on train, then selects hyperparameters by calibration macro accuracy.
/// Grid order is η, T, T_diff, g_w ascending; the first maximum wins.
pub fn fit_dsnbf<F: Scalar>(registry: &Registry, train: &LabeledSet, calib: &LabeledSet) -> Result<DsnbfModel<F>> {
    if calib.is_empty() {
        return Err(Error::Config("DSNBF needs a non-empty calibration split".into()));
    }
    let p = parts::<F>(registry, train)?;
    let mut best: Option<DsnbfModel<F>> = None;
    for eta in DSNBF_ETA_GRID {
        let base = assemble(
            registry,
            &p,
            DsnbfHyper {
                eta,
                t: 1.0,
                t_diff: 1.0,
                g_w: 0.0,
            },
        );
        for t in DSNBF_T_GRID {
            for t_diff in DSNBF_TDIFF_GRID {
                for g_w in DSNBF_GW_GRID {
                    let mut m = base.clone();
                    m.hyper = DsnbfHyper { eta, t, t_diff, g_w };
                    let answers: Vec<Vec<u8>> = calib
                        .tables
                        .iter()
                        .map(|tab| m.predict_all(tab, registry).iter().map(|p| p.answer).collect())
                        .collect();
                    m.calib_macro_accuracy = macro_acc(registry.len(), &calib.labels, &answers);
                    if best.as_ref().is_none_or(|b| m.calib_macro_accuracy > b.calib_macro_accuracy) {
                        best = Some(m);
                    }
                }
            }
        }
    }
    Ok(best.expect("non-empty grid"))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::data;
    use super::*;

    #[test]
    fn identity_confusion_concentrates_on_the_atom() {
        let r = Registry::builtin();
        let q = r.get(0);
        let k = q.k();
        let eps = 1e-6;
        let mut id = vec![eps; k * k];
        for v in 0..k {
            id[v * k + v] = 1.0 - (k - 1) as f64 * eps;
        }
        let m = ConfusionModel::<f64> {
            matrices: vec![vec![id; N_SOURCES]; r.len()],
            priors: vec![vec![1.0 / k as f64; k]; r.len()],
        };
        let mut t = AtomTable::empty("p", r.len());
        t.cells[0][2] = Some(1);
        let p = m.predict(&t, 0, q);
        assert_eq!(p.answer, 1);
        assert!(p.posterior[1] > 0.999);
    }

    #[test]
    fn rows_and_priors_are_distributions() {
        let d = data();
        let m: ConfusionModel<f64> = fit_nbf(&d.registry, &d.train).unwrap();
        for (qi, q) in d.registry.questions().iter().enumerate() {
            let k = q.k();
            assert!((m.priors[qi].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for s in 0..N_SOURCES {
                for v in 0..k {
                    let row: f64 = m.matrices[qi][s][v * k..(v + 1) * k].iter().sum();
                    assert!((row - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn null_sources_do_not_change_the_posterior() {
        let d = data();
        let m: ConfusionModel<f64> = fit_nbf(&d.registry, &d.train).unwrap();
        // Scrambling the matrix of a null source must not move the posterior.
        for t in d.test.tables.iter().take(20) {
            for (qi, q) in d.registry.questions().iter().enumerate() {
                let a = m.posterior(t, qi, q.k(), 1.0);
                let mut m2 = m.clone();
                for s in 0..N_SOURCES {
                    if t.cells[qi][s].is_none() {
                        m2.matrices[qi][s].iter_mut().for_each(|x| *x = 0.123);
                    }
                }
                assert_eq!(a, m2.posterior(t, qi, q.k(), 1.0));
            }
        }
    }

    #[test]
    fn dsnbf_degenerate_cases_equal_nbf() {
        let d = data();
        let nbf: ConfusionModel<f64> = fit_nbf(&d.registry, &d.train).unwrap();
        let gw0: DsnbfModel<f64> = fit_dsnbf_with(
            &d.registry,
            &d.train,
            DsnbfHyper {
                eta: 5.0,
                t: 2.0,
                t_diff: 0.5,
                g_w: 0.0,
            },
        )
        .unwrap();
        let eta_big: DsnbfModel<f64> = fit_dsnbf_with(
            &d.registry,
            &d.train,
            DsnbfHyper {
                eta: 1e12,
                t: 1.0,
                t_diff: 1.0,
                g_w: 0.7,
            },
        )
        .unwrap();
        for t in &d.test.tables {
            let a = gw0.predict_all(t, &d.registry);
            let b = eta_big.predict_all(t, &d.registry);
            for (qi, q) in d.registry.questions().iter().enumerate() {
                let n = nbf.predict(t, qi, q);
                assert_eq!(a[qi].answer, n.answer);
                assert_eq!(b[qi].answer, n.answer);
                for (x, y) in b[qi].posterior.iter().zip(&n.posterior) {
                    assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn dsnbf_ignores_test_difficulty_labels() {
        let d = data();
        let m: DsnbfModel<f64> = fit_dsnbf(&d.registry, &d.train, &d.calib).unwrap();
        let mut shuffled = d.test.clone();
        shuffled.difficulty.reverse();
        for (a, b) in d.test.tables.iter().zip(&shuffled.tables) {
            assert_eq!(m.predict_all(a, &d.registry), m.predict_all(b, &d.registry));
        }
        let pd = m.infer_difficulty(&d.test.tables[0], &d.registry);
        assert!((pd.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn runs_in_single_precision() {
        let d = data();
        let m32: ConfusionModel<f32> = fit_nbf(&d.registry, &d.train).unwrap();
        let m64: ConfusionModel<f64> = fit_nbf(&d.registry, &d.train).unwrap();
        let mut agree = 0;
        let mut total = 0;
        for t in &d.test.tables {
            for (qi, q) in d.registry.questions().iter().enumerate() {
                agree += (m32.predict(t, qi, q).answer == m64.predict(t, qi, q).answer) as usize;
                total += 1;
            }
        }
        assert!(agree as f64 / total as f64 > 0.99);
    }
}

use serde::{Deserialize, Serialize};

use super::{active, BiasPrior, LabeledSet, MajorityClass, Prediction};
use crate::atoms::{AtomTable, N_SOURCES};
use crate::error::Result;
use crate::num::{log_sum_exp, softmax_in_place, top_two_margin, Scalar};
use crate::schema::{QuestionSpec, Registry, SourceId};

pub const ABF_DELTA_GRID: [f64; 9] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];
pub const ABF_ALPHA_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
pub const ABF_PI_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct KernelParams<F> {
    /// Bias offsets in canonical source order; the objective entry stays 0.
    pub delta: [F; N_SOURCES],
    pub alpha: F,
    pub pi: F,
}

impl<F: Scalar> KernelParams<F> {
    pub fn new(delta: [f64; N_SOURCES], alpha: f64, pi: f64) -> Self {
        KernelParams {
            delta: delta.map(F::lit),
            alpha: F::lit(alpha),
            pi: F::lit(pi),
        }
    }
}

/// Rank distance on an ordinal axis, 0/1 mismatch otherwise.
fn id_distance<F: Scalar>(spec: &QuestionSpec, v: usize, mu: usize) -> F {
    match (spec.rank_of(v), spec.rank_of(mu)) {
        (Some(a), Some(b)) => F::of_usize(a.abs_diff(b)),
        _ => F::of_usize((v != mu) as usize),
    }
}

/// Distance between the observed atom and `v` moved by the source's
/// expected bias (shift · δ ranks, clamped to the axis).
fn bias_distance<F: Scalar>(spec: &QuestionSpec, v: usize, mu: usize, shift: i8, delta: F) -> F {
    match (spec.rank_of(v), spec.rank_of(mu)) {
        (Some(rv), Some(rm)) => {
            let top = F::of_usize(spec.rank_count() - 1);
            let moved = (F::of_usize(rv) + F::lit(shift as f64) * delta).max(F::zero()).min(top);
            (F::of_usize(rm) - moved).abs()
        }
        _ => F::of_usize((v != mu) as usize),
    }
}

/// Explanation score of candidate `v`: uniform source weights, each
/// non-null source mixing a bias-aware and an identity kernel.
pub fn expl_score<F: Scalar>(
    spec: &QuestionSpec,
    row: &[Option<u8>; N_SOURCES],
    v: usize,
    params: &KernelParams<F>,
    prior: &BiasPrior,
) -> F {
    let w = F::one() / F::of_usize(N_SOURCES);
    let kernel = |d: F| (-params.alpha * d).exp();
    let mut score = F::zero();
    for (s, mu) in active(row) {
        let shift = prior.shift(spec, SourceId::ALL[s]);
        let mu = mu as usize;
        let bias = kernel(bias_distance(spec, v, mu, shift, params.delta[s]));
        let id = kernel(id_distance(spec, v, mu));
        score = score + w * (params.pi * bias + (F::one() - params.pi) * id);
    }
    score
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct AbfModel<F> {
    pub params: KernelParams<F>,
    pub fallback: MajorityClass,
    pub train_log_likelihood: f64,
}

impl<F: Scalar> AbfModel<F> {
    pub fn scores(&self, t: &AtomTable, qi: usize, spec: &QuestionSpec, prior: &BiasPrior) -> Vec<F> {
        (0..spec.k())
            .map(|v| expl_score(spec, &t.cells[qi], v, &self.params, prior))
            .collect()
    }

    pub fn predict(&self, t: &AtomTable, qi: usize, spec: &QuestionSpec, prior: &BiasPrior) -> Prediction<F> {
        if t.cells[qi].iter().all(Option::is_none) {
            let mut p = Prediction::one_hot(spec, self.fallback.answer(qi), true);
            p.scores = Some(vec![F::zero(); spec.k()]);
            return p;
        }
        let scores = self.scores(t, qi, spec, prior);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        let mut posterior = scores.clone();
        softmax_in_place(&mut posterior);
        Prediction {
            question_id: spec.id.clone(),
            answer: best as u8,
            margin: Some(top_two_margin(&posterior)),
            posterior,
            scores: Some(scores),
            fallback: false,
        }
    }
}

fn log_likelihood<F: Scalar>(registry: &Registry, prior: &BiasPrior, train: &LabeledSet, p: &KernelParams<F>) -> F {
    let mut ll = F::zero();
    for (t, y) in train.tables.iter().zip(&train.labels) {
        for (qi, spec) in registry.questions().iter().enumerate() {
            if t.cells[qi].iter().all(Option::is_none) {
                continue;
            }
            let scores: Vec<F> = (0..spec.k()).map(|v| expl_score(spec, &t.cells[qi], v, p, prior)).collect();
            ll = ll + scores[y[qi] as usize] - log_sum_exp(&scores);
        }
    }
    ll
}

const FREE_DELTAS: [usize; 4] = [0, 1, 2, 4];

/// Coordinates 0–3 are the free δ_s, then α, then π.
fn to_params<F: Scalar>(p: &[f64; 6]) -> KernelParams<F> {
    let mut delta = [0.0; N_SOURCES];
    for (i, &s) in FREE_DELTAS.iter().enumerate() {
        delta[s] = p[i];
    }
    KernelParams::new(delta, p[4], p[5])
}

/// Maximizes train log-likelihood of softmax(ExplScore): coordinate ascent
/// over the grids until a full sweep changes nothing, then one refinement
/// pass at half-step offsets around each coordinate.
pub fn fit_abf<F: Scalar>(registry: &Registry, prior: &BiasPrior, train: &LabeledSet) -> Result<AbfModel<F>> {
    let fallback = super::fit_majority_class(registry, train)?;
    let eval = |p: &[f64; 6]| log_likelihood(registry, prior, train, &to_params::<F>(p)).as_f64();

    let mut cur = [0.0, 0.0, 0.0, 0.0, 1.0, 0.5];
    let mut cur_ll = eval(&cur);
    let grids: [&[f64]; 6] = [
        &ABF_DELTA_GRID,
        &ABF_DELTA_GRID,
        &ABF_DELTA_GRID,
        &ABF_DELTA_GRID,
        &ABF_ALPHA_GRID,
        &ABF_PI_GRID,
    ];
    for _sweep in 0..20 {
        let mut changed = false;
        for c in 0..6 {
            for &x in grids[c] {
                if x == cur[c] {
                    continue;
                }
                let mut cand = cur;
                cand[c] = x;
                let ll = eval(&cand);
                if ll > cur_ll {
                    cur = cand;
                    cur_ll = ll;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    for c in 0..6 {
        let options: Vec<f64> = match c {
            0..=3 => vec![cur[c] - 0.125, cur[c] + 0.125],
            4 => vec![cur[c] / 2f64.sqrt(), cur[c] * 2f64.sqrt()],
            _ => vec![cur[c] - 0.05, cur[c] + 0.05],
        };
        for x in options {
            let ok = match c {
                0..=3 => (0.0..=2.0).contains(&x),
                4 => x > 0.0,
                _ => (0.0..=1.0).contains(&x),
            };
            if !ok {
                continue;
            }
            let mut cand = cur;
            cand[c] = x;
            let ll = eval(&cand);
            if ll > cur_ll {
                cur = cand;
                cur_ll = ll;
            }
        }
    }

    Ok(AbfModel {
        params: to_params(&cur),
        fallback,
        train_log_likelihood: cur_ll,
    })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::data;
    use super::super::predict_majority_vote;
    use super::*;

    #[test]
    fn sharp_identity_kernel_reproduces_majority_vote() {
        let d = data();
        let prior = BiasPrior::default();
        let m = AbfModel::<f64> {
            params: KernelParams::new([0.0; 5], 1e6, 0.0),
            fallback: super::super::fit_majority_class(&d.registry, &d.train).unwrap(),
            train_log_likelihood: 0.0,
        };
        for t in &d.test.tables {
            for (qi, q) in d.registry.questions().iter().enumerate() {
                let a = m.predict(t, qi, q, &prior);
                let b: Prediction<f64> = predict_majority_vote(t, qi, q, Some(&m.fallback));
                assert_eq!(a.answer, b.answer);
            }
        }
    }

    #[test]
    fn single_atom_wins_without_bias_term() {
        let r = Registry::builtin();
        let prior = BiasPrior::default();
        let params = KernelParams::<f64>::new([0.0; 5], 1.0, 0.0);
        for (qi, q) in r.questions().iter().enumerate() {
            for x in 0..q.k() {
                let mut row = [None; N_SOURCES];
                row[2] = Some(x as u8);
                let s: Vec<f64> = (0..q.k()).map(|v| expl_score(q, &row, v, &params, &prior)).collect();
                let best = (0..q.k()).fold(0, |b, i| if s[i] > s[b] { i } else { b });
                assert_eq!(best, x, "{qi}");
            }
        }
    }

    #[test]
    fn fit_is_deterministic_and_in_range() {
        let d = data();
        let prior = BiasPrior::default();
        let a: AbfModel<f64> = fit_abf(&d.registry, &prior, &d.train).unwrap();
        let b: AbfModel<f64> = fit_abf(&d.registry, &prior, &d.train).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params.delta[SourceId::ObjectiveLog.index()], 0.0);
        assert!(a.params.delta.iter().all(|&x| (0.0..=2.0).contains(&x)));
        assert!((0.0..=1.0).contains(&a.params.pi));
        assert!(a.params.alpha > 0.0);
    }
}

//! Abstention policies and their calibration by F0.5 on the calibration split.

use serde::{Deserialize, Serialize};

use crate::atoms::AtomTable;
use crate::error::{Error, Result};
use crate::eval::metrics::{selective_summary, Scored, SelectiveSummary};
use crate::num::Scalar;
use crate::resolvers::{Method, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipPolicy {
    None,
    Margin { theta: f64 },
    AbfTwoCriterion { theta_e: f64, theta_delta: f64 },
    SsbNull,
    SsbAgree { theta_agree: f64 },
}

/// Policy family, i.e. a policy kind before thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFamily {
    None,
    Margin,
    AbfTwoCriterion,
    SsbNull,
    SsbAgree,
}

impl PolicyFamily {
    /// The reported policy family for a method.
    pub fn default_for(method: Method) -> PolicyFamily {
        match method {
            Method::Nbf | Method::Dsnbf => PolicyFamily::Margin,
            Method::Abf => PolicyFamily::AbfTwoCriterion,
            Method::Ssb | Method::SsbG => PolicyFamily::SsbNull,
            _ => PolicyFamily::None,
        }
    }

    pub fn compatible(self, method: Method) -> bool {
        match self {
            PolicyFamily::None => true,
            PolicyFamily::Margin => method.has_posterior(),
            PolicyFamily::AbfTwoCriterion => method == Method::Abf,
            PolicyFamily::SsbNull | PolicyFamily::SsbAgree => matches!(method, Method::Ssb | Method::SsbG),
        }
    }
}

impl SkipPolicy {
    pub fn family(&self) -> PolicyFamily {
        match self {
            SkipPolicy::None => PolicyFamily::None,
            SkipPolicy::Margin { .. } => PolicyFamily::Margin,
            SkipPolicy::AbfTwoCriterion { .. } => PolicyFamily::AbfTwoCriterion,
            SkipPolicy::SsbNull => PolicyFamily::SsbNull,
            SkipPolicy::SsbAgree { .. } => PolicyFamily::SsbAgree,
        }
    }

    fn check(&self, method: Method) -> Result<()> {
        if !self.family().compatible(method) {
            return Err(Error::Policy(format!("{:?} policy cannot be used with {method}", self.family())));
        }
        let in_range = |x: f64| (0.0..=1.0).contains(&x);
        let ok = match *self {
            SkipPolicy::Margin { theta } => in_range(theta),
            SkipPolicy::AbfTwoCriterion { theta_e, theta_delta } => in_range(theta_e) && in_range(theta_delta),
            SkipPolicy::SsbAgree { theta_agree } => in_range(theta_agree),
            SkipPolicy::None | SkipPolicy::SsbNull => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Policy(format!("threshold outside [0,1] in {self:?}")))
        }
    }
}

/// The raw answer is always kept next to the skip flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub answer: u8,
    pub skipped: bool,
}

pub fn decide<F: Scalar>(
    p: &Prediction<F>,
    t: &AtomTable,
    qi: usize,
    method: Method,
    policy: &SkipPolicy,
) -> Result<Decision> {
    policy.check(method)?;
    let active = t.non_null(qi);
    let skipped = match *policy {
        SkipPolicy::None => false,
        // Fewer than two active sources always answer.
        SkipPolicy::Margin { theta } => active >= 2 && p.margin.map_or(F::one(), |m| m).as_f64() < theta,
        SkipPolicy::AbfTwoCriterion { theta_e, theta_delta } => {
            active >= 2 && {
                let (best, gap) = best_and_gap(p);
                best < theta_e || gap < theta_delta
            }
        }
        SkipPolicy::SsbNull => p.fallback,
        SkipPolicy::SsbAgree { theta_agree } => {
            p.fallback || {
                let agree = t.cells[qi].iter().filter(|a| **a == Some(p.answer)).count();
                (agree as f64 / active.max(1) as f64) < theta_agree
            }
        }
    };
    Ok(Decision {
        answer: p.answer,
        skipped,
    })
}

fn best_and_gap<F: Scalar>(p: &Prediction<F>) -> (f64, f64) {
    let scores = p.scores.as_deref().unwrap_or(&p.posterior);
    let mut sorted: Vec<f64> = scores.iter().map(|x| x.as_f64()).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let best = sorted[0];
    let gap = if sorted.len() > 1 { best - sorted[1] } else { best };
    (best, gap)
}

/// Calibrated policy plus its calibration-split summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub method: Method,
    pub policy: SkipPolicy,
    pub calibration: SelectiveSummary,
}

/// Calibration inputs for one method: predictions, atoms and gold labels,
/// one row per persona.
pub struct CalibrationSet<'a, F> {
    pub predictions: &'a [Vec<Prediction<F>>],
    pub tables: &'a [AtomTable],
    pub labels: &'a [Vec<u8>],
}

impl<F: Scalar> CalibrationSet<'_, F> {
    pub fn score(&self, method: Method, policy: &SkipPolicy) -> Result<Vec<Scored>> {
        let mut items = Vec::new();
        for (c, ((preds, t), y)) in self.predictions.iter().zip(self.tables).zip(self.labels).enumerate() {
            for (qi, p) in preds.iter().enumerate() {
                let d = decide(p, t, qi, method, policy)?;
                items.push(Scored {
                    cluster: c,
                    question: qi,
                    correct: d.answer == y[qi],
                    skipped: d.skipped,
                });
            }
        }
        Ok(items)
    }
}

/// 0.00, 0.01, …, 1.00.
pub fn margin_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// 0.00, 0.05, …, 1.00.
pub fn abf_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Grid search maximizing F0.5; ties keep the earliest (smallest) threshold.
pub fn calibrate<F: Scalar>(
    family: PolicyFamily,
    method: Method,
    set: &CalibrationSet<'_, F>,
    n_questions: usize,
) -> Result<PolicyFile> {
    if !family.compatible(method) {
        return Err(Error::Policy(format!("{family:?} policy cannot be used with {method}")));
    }
    let candidates: Vec<SkipPolicy> = match family {
        PolicyFamily::None => vec![SkipPolicy::None],
        PolicyFamily::SsbNull => vec![SkipPolicy::SsbNull],
        PolicyFamily::Margin => margin_grid().into_iter().map(|theta| SkipPolicy::Margin { theta }).collect(),
        PolicyFamily::SsbAgree => margin_grid()
            .into_iter()
            .map(|theta_agree| SkipPolicy::SsbAgree { theta_agree })
            .collect(),
        PolicyFamily::AbfTwoCriterion => {
            let g = abf_grid();
            g.iter()
                .flat_map(|&theta_e| {
                    g.iter().map(move |&theta_delta| SkipPolicy::AbfTwoCriterion { theta_e, theta_delta })
                })
                .collect()
        }
    };

    let answer_only = set.score(method, &candidates[0])?;
    let degenerate = answer_only.windows(2).all(|w| w[0].correct == w[1].correct);
    if degenerate && candidates.len() > 1 {
        log::warn!("{method}: calibration split gives no signal (all answers equally right or wrong); thresholds set to 0");
        let policy = candidates[0];
        let calibration = selective_summary(&set.score(method, &policy)?, n_questions);
        return Ok(PolicyFile {
            method,
            policy,
            calibration,
        });
    }

    let mut best: Option<(SkipPolicy, SelectiveSummary)> = None;
    for policy in candidates {
        let s = selective_summary(&set.score(method, &policy)?, n_questions);
        if best.as_ref().is_none_or(|(_, b)| s.f05 > b.f05) {
            best = Some((policy, s));
        }
    }
    let (policy, calibration) = best.expect("non-empty candidate list");
    Ok(PolicyFile {
        method,
        policy,
        calibration,
    })
}

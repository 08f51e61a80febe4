use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One scored (persona, question) instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scored {
    pub cluster: usize,
    pub question: usize,
    /// The raw (pre-abstention) answer was right.
    pub correct: bool,
    pub skipped: bool,
}

/// Mean over questions of per-question accuracy of the raw answers.
pub fn macro_accuracy(items: &[Scored], n_questions: usize) -> f64 {
    let mut hit = vec![0usize; n_questions];
    let mut n = vec![0usize; n_questions];
    for it in items {
        n[it.question] += 1;
        hit[it.question] += it.correct as usize;
    }
    mean_of_ratios(&hit, &n)
}

fn mean_of_ratios(hit: &[usize], n: &[usize]) -> f64 {
    let ratios: Vec<f64> = hit
        .iter()
        .zip(n)
        .filter(|(_, &n)| n > 0)
        .map(|(&h, &n)| h as f64 / n as f64)
        .collect();
    if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

/// Share of instances answered, pooled over all questions.
pub fn coverage(items: &[Scored]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().filter(|i| !i.skipped).count() as f64 / items.len() as f64
}

/// Macro accuracy over answered instances; templates with no answered
/// instance are left out of the mean.
pub fn selective_accuracy(items: &[Scored], n_questions: usize) -> f64 {
    let mut hit = vec![0usize; n_questions];
    let mut n = vec![0usize; n_questions];
    for it in items.iter().filter(|i| !i.skipped) {
        n[it.question] += 1;
        hit[it.question] += it.correct as usize;
    }
    mean_of_ratios(&hit, &n)
}

pub fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom <= 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectiveSummary {
    pub accuracy: f64,
    pub coverage: f64,
    pub selective_accuracy: f64,
    pub f05: f64,
}

/// F0.5 with precision = selective macro accuracy and recall =
/// selective accuracy × coverage / answer-only accuracy.
pub fn selective_summary(items: &[Scored], n_questions: usize) -> SelectiveSummary {
    let accuracy = macro_accuracy(items, n_questions);
    let coverage = coverage(items);
    let selective_accuracy = selective_accuracy(items, n_questions);
    let recall = if accuracy > 0.0 {
        selective_accuracy * coverage / accuracy
    } else {
        0.0
    };
    SelectiveSummary {
        accuracy,
        coverage,
        selective_accuracy,
        f05: f_beta(selective_accuracy, recall, 0.5),
    }
}

/// Which reduction a bootstrap interval is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMetric {
    MacroAccuracy,
    SelectiveAccuracy,
}

/// Percentile bootstrap over clusters; each resample draws clusters with
/// replacement and recomputes the macro metric on the pooled instances.
pub fn bootstrap_ci(
    items: &[Scored],
    n_questions: usize,
    metric: CiMetric,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let n_clusters = items.iter().map(|i| i.cluster + 1).max().unwrap_or(0);
    // Per cluster and question: [hits, n, answered hits, answered n].
    let mut table = vec![[0u32; 4]; n_clusters * n_questions];
    let mut present = vec![false; n_clusters];
    for it in items {
        present[it.cluster] = true;
        let cell = &mut table[it.cluster * n_questions + it.question];
        cell[0] += it.correct as u32;
        cell[1] += 1;
        if !it.skipped {
            cell[2] += it.correct as u32;
            cell[3] += 1;
        }
    }
    let clusters: Vec<usize> = (0..n_clusters).filter(|&c| present[c]).collect();
    if clusters.len() < 2 {
        return Err(Error::Metric(format!(
            "bootstrap needs at least 2 clusters, got {}",
            clusters.len()
        )));
    }
    if resamples == 0 || !(0.0..1.0).contains(&level) {
        return Err(Error::Metric("bootstrap needs resamples > 0 and level in (0,1)".into()));
    }
    let (hi_col, n_col) = match metric {
        CiMetric::MacroAccuracy => (0, 1),
        CiMetric::SelectiveAccuracy => (2, 3),
    };
    let mut r = rng::stream(seed, &["bootstrap"]);
    let mut stats = Vec::with_capacity(resamples);
    let mut hit = vec![0usize; n_questions];
    let mut n = vec![0usize; n_questions];
    for _ in 0..resamples {
        hit.iter_mut().for_each(|x| *x = 0);
        n.iter_mut().for_each(|x| *x = 0);
        for _ in 0..clusters.len() {
            let c = clusters[r.random_range(0..clusters.len())];
            for q in 0..n_questions {
                let cell = &table[c * n_questions + q];
                hit[q] += cell[hi_col] as usize;
                n[q] += cell[n_col] as usize;
            }
        }
        stats.push(mean_of_ratios(&hit, &n));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&stats, alpha), quantile(&stats, 1.0 - alpha)))
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Kendall rank correlation with the tie-corrected τ-b denominator.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].partial_cmp(&x[j]).expect("finite");
            let dy = y[i].partial_cmp(&y[j]).expect("finite");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => tie_x += 1,
                (_, Equal) => tie_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = concordant + discordant;
    let denom = (((n0 + tie_x) * (n0 + tie_y)) as f64).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (concordant - discordant) as f64 / denom
    }
}

/// Population mean and standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, v.sqrt())
}

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::{score, score_answer_only};
use super::metrics::{bootstrap_ci, coverage, macro_accuracy, selective_summary, CiMetric, Scored};
use crate::atoms::is_reachable;
use crate::error::Result;
use crate::resolvers::{LabeledSet, Method};
use crate::schema::{DifficultyClass, ReasoningType, Registry};
use crate::selective::Decision;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            resamples: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownCell {
    pub reasoning_type: ReasoningType,
    pub difficulty: DifficultyClass,
    /// Mean over the type's questions of per-question raw accuracy.
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selective_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub cells: Vec<BreakdownCell>,
    /// Macro accuracy restricted to each difficulty class, in class order.
    pub class_accuracy: [f64; 3],
    /// Stable minus stated-vs-revealed accuracy; positive means a drop.
    pub stable_to_svr_drop: f64,
}

impl Breakdown {
    pub fn cell(&self, t: ReasoningType, d: DifficultyClass) -> Option<&BreakdownCell> {
        self.cells.iter().find(|c| c.reasoning_type == t && c.difficulty == d)
    }
}

/// Per (reasoning type, difficulty class) cells. `difficulty[c]` is the
/// class of cluster `c`.
pub fn breakdown(items: &[Scored], difficulty: &[DifficultyClass], registry: &Registry, selective: bool) -> Breakdown {
    let n_q = registry.len();
    let by_class: Vec<Vec<Scored>> = DifficultyClass::ALL
        .iter()
        .map(|&d| items.iter().filter(|i| difficulty[i.cluster] == d).copied().collect())
        .collect();
    let mut cells = Vec::new();
    for t in ReasoningType::ALL {
        let qs: Vec<usize> = (0..n_q).filter(|&q| registry.get(q).reasoning_type == t).collect();
        if qs.is_empty() {
            continue;
        }
        for d in DifficultyClass::ALL {
            let sub: Vec<Scored> = by_class[d.index()]
                .iter()
                .filter(|i| qs.contains(&i.question))
                .copied()
                .collect();
            let acc = |q: usize, answered_only: bool| {
                let mut hit = 0;
                let mut n = 0;
                for i in sub.iter().filter(|i| i.question == q && (!answered_only || !i.skipped)) {
                    n += 1;
                    hit += i.correct as usize;
                }
                (n > 0).then(|| hit as f64 / n as f64)
            };
            let per_q: Vec<f64> = qs.iter().filter_map(|&q| acc(q, false)).collect();
            let accuracy = if per_q.is_empty() {
                0.0
            } else {
                per_q.iter().sum::<f64>() / per_q.len() as f64
            };
            let (selective_accuracy, cov) = if selective {
                let answered: Vec<f64> = qs.iter().filter_map(|&q| acc(q, true)).collect();
                let sa = if answered.is_empty() {
                    0.0
                } else {
                    answered.iter().sum::<f64>() / answered.len() as f64
                };
                (Some(sa), Some(coverage(&sub)))
            } else {
                (None, None)
            };
            cells.push(BreakdownCell {
                reasoning_type: t,
                difficulty: d,
                accuracy,
                selective_accuracy,
                coverage: cov,
                n_instances: sub.len(),
            });
        }
    }
    let class_accuracy = [0, 1, 2].map(|d| macro_accuracy(&by_class[d], n_q));
    Breakdown {
        cells,
        stable_to_svr_drop: class_accuracy[0] - class_accuracy[2],
        class_accuracy,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: Method,
    pub macro_accuracy: f64,
    pub coverage: f64,
    pub selective_accuracy: f64,
    pub f05: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub breakdown: Breakdown,
    pub n_instances: usize,
}

/// One method's test decisions on each seed, pooled into seed-persona clusters.
pub fn pooled_items(sets: &[&LabeledSet], decisions: &[&[Vec<Decision>]], answer_only: bool) -> Vec<Scored> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (set, d) in sets.iter().zip(decisions) {
        if answer_only {
            out.extend(score_answer_only(d, &set.labels, offset));
        } else {
            out.extend(score(d, &set.labels, offset));
        }
        offset += set.len();
    }
    out
}

/// Headline metrics, bootstrap interval and breakdown. With `selective`
/// false every skip is ignored and the interval is on macro accuracy.
pub fn metric_report(
    method: Method,
    sets: &[&LabeledSet],
    decisions: &[&[Vec<Decision>]],
    registry: &Registry,
    selective: bool,
    boot: &BootstrapOptions,
) -> Result<MetricReport> {
    let items = pooled_items(sets, decisions, !selective);
    let difficulty: Vec<DifficultyClass> = sets.iter().flat_map(|s| s.difficulty.iter().copied()).collect();
    let n_q = registry.len();
    let s = selective_summary(&items, n_q);
    let metric = if selective {
        CiMetric::SelectiveAccuracy
    } else {
        CiMetric::MacroAccuracy
    };
    let (ci_low, ci_high) = bootstrap_ci(&items, n_q, metric, boot.resamples, boot.level, boot.seed)?;
    Ok(MetricReport {
        method,
        macro_accuracy: s.accuracy,
        coverage: s.coverage,
        selective_accuracy: s.selective_accuracy,
        f05: s.f05,
        ci_low,
        ci_high,
        breakdown: breakdown(&items, &difficulty, registry, selective),
        n_instances: items.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub method: Method,
    pub reachable_accuracy: f64,
    pub unreachable_accuracy: f64,
}

/// Diagnostic only: how often some atom equals the truth, and accuracy on
/// each side of that split (pooled over instances).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityReport {
    pub rate: f64,
    pub reachable: usize,
    pub instances: usize,
    pub slices: Vec<SliceRow>,
}

pub fn reachability_report(sets: &[&LabeledSet], methods: &[(Method, Vec<&[Vec<Decision>]>)]) -> ReachabilityReport {
    let mut mask = Vec::new();
    for set in sets {
        for (t, y) in set.tables.iter().zip(&set.labels) {
            for (qi, &truth) in y.iter().enumerate() {
                mask.push(is_reachable(t, qi, truth));
            }
        }
    }
    let reachable = mask.iter().filter(|&&m| m).count();
    let slices = methods
        .iter()
        .map(|(method, decisions)| {
            let items = pooled_items(sets, decisions, true);
            let mut hit = [0usize; 2];
            let mut n = [0usize; 2];
            for (i, &m) in items.iter().zip(&mask) {
                let side = (!m) as usize;
                n[side] += 1;
                hit[side] += i.correct as usize;
            }
            let ratio = |s: usize| if n[s] == 0 { 0.0 } else { hit[s] as f64 / n[s] as f64 };
            SliceRow {
                method: *method,
                reachable_accuracy: ratio(0),
                unreachable_accuracy: ratio(1),
            }
        })
        .collect();
    ReachabilityReport {
        rate: if mask.is_empty() {
            0.0
        } else {
            reachable as f64 / mask.len() as f64
        },
        reachable,
        instances: mask.len(),
        slices,
    }
}

pub(crate) fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

pub fn headline_table(title: &str, rows: &[MetricReport], selective: bool) -> String {
    let mut s = format!("## {title}\n\n");
    if selective {
        s.push_str("| Method | Acc | Sel. acc | Coverage | F0.5 | 95% CI (sel. acc) |\n|---|---|---|---|---|---|\n");
        for r in rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | [{}, {}] |",
                r.method.display_name(),
                pct(r.macro_accuracy),
                pct(r.selective_accuracy),
                pct(r.coverage),
                pct(r.f05),
                pct(r.ci_low),
                pct(r.ci_high)
            );
        }
    } else {
        s.push_str("| Method | Macro acc | 95% CI | Stable | Temporal shift | Stated vs revealed | Drop (stable to svr) |\n|---|---|---|---|---|---|---|\n");
        for r in rows {
            let c = &r.breakdown.class_accuracy;
            let _ = writeln!(
                s,
                "| {} | {} | [{}, {}] | {} | {} | {} | {} |",
                r.method.display_name(),
                pct(r.macro_accuracy),
                pct(r.ci_low),
                pct(r.ci_high),
                pct(c[0]),
                pct(c[1]),
                pct(c[2]),
                pct(r.breakdown.stable_to_svr_drop)
            );
        }
    }
    s
}

/// Type × difficulty accuracy table, one column block per method.
pub fn breakdown_table(rows: &[MetricReport]) -> String {
    let mut s = String::from("## Accuracy by reasoning type and difficulty class\n\n| Type | Class |");
    for r in rows {
        let _ = write!(s, " {} |", r.method.display_name());
    }
    s.push_str("\n|---|---|");
    s.push_str(&"---|".repeat(rows.len()));
    s.push('\n');
    let Some(first) = rows.first() else { return s };
    for c in &first.breakdown.cells {
        let _ = write!(s, "| {} {} | {} |", c.reasoning_type, c.reasoning_type.family(), c.difficulty.as_str());
        for r in rows {
            let v = r
                .breakdown
                .cell(c.reasoning_type, c.difficulty)
                .map(|x| pct(x.accuracy))
                .unwrap_or_default();
            let _ = write!(s, " {v} |");
        }
        s.push('\n');
    }
    s.push_str("| Overall drop (stable to svr) | |");
    for r in rows {
        let _ = write!(s, " {} |", pct(r.breakdown.stable_to_svr_drop));
    }
    s.push('\n');
    s
}

pub fn reachability_table(r: &ReachabilityReport) -> String {
    let mut s = format!(
        "## Source reachability (diagnostic)\n\nTruth appears in at least one atom on {} of {} instances ({}%).\n\n| Method | Acc (truth present) | Acc (no exact match) |\n|---|---|---|\n",
        r.reachable,
        r.instances,
        pct(r.rate)
    );
    for row in &r.slices {
        let _ = writeln!(
            s,
            "| {} | {} | {} |",
            row.method.display_name(),
            pct(row.reachable_accuracy),
            pct(row.unreachable_accuracy)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::AtomTable;

    fn set(n: usize, registry: &Registry) -> LabeledSet {
        let difficulty = (0..n).map(|i| DifficultyClass::ALL[i % 3]).collect();
        LabeledSet {
            tables: (0..n).map(|i| AtomTable::empty(format!("p{i}"), registry.len())).collect(),
            labels: vec![vec![0; registry.len()]; n],
            difficulty,
        }
    }

    fn decisions(n: usize, n_q: usize, f: impl Fn(usize, usize) -> (u8, bool)) -> Vec<Vec<Decision>> {
        (0..n)
            .map(|c| {
                (0..n_q)
                    .map(|q| {
                        let (answer, skipped) = f(c, q);
                        Decision { answer, skipped }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn uniform_correct_gives_unit_cells() {
        let r = Registry::builtin();
        let s = set(12, &r);
        let d = decisions(12, r.len(), |_, _| (0, false));
        let b = breakdown(&pooled_items(&[&s], &[&d], true), &s.difficulty, &r, true);
        assert_eq!(b.cells.len(), 8 * 3);
        for c in &b.cells {
            assert_eq!(c.accuracy, 1.0);
            assert_eq!(c.coverage, Some(1.0));
        }
        let a_cells = b.cell(ReasoningType::A, DifficultyClass::Stable).unwrap();
        assert_eq!(a_cells.n_instances, 3 * 4);
    }

    #[test]
    fn cells_aggregate_back_to_headline() {
        let r = Registry::builtin();
        let n_q = r.len();
        let s = set(30, &r);
        let d = decisions(30, n_q, |c, q| (((c * 7 + q * 3) % 5 == 0) as u8, (c + q) % 4 == 0));
        let items = pooled_items(&[&s], &[&d], true);
        let b = breakdown(&items, &s.difficulty, &r, false);
        let headline = macro_accuracy(&items, n_q);
        let n_d = 10.0 / 30.0;
        let mut agg = 0.0;
        for c in &b.cells {
            let size = (0..n_q).filter(|&q| r.get(q).reasoning_type == c.reasoning_type).count();
            agg += size as f64 / n_q as f64 * n_d * c.accuracy;
        }
        assert!((agg - headline).abs() < 1e-9, "{agg} vs {headline}");
        // footer recomputed from cells
        for (k, cls) in DifficultyClass::ALL.iter().enumerate() {
            let from_cells: f64 = b
                .cells
                .iter()
                .filter(|c| c.difficulty == *cls)
                .map(|c| {
                    let size = (0..n_q).filter(|&q| r.get(q).reasoning_type == c.reasoning_type).count();
                    size as f64 / n_q as f64 * c.accuracy
                })
                .sum();
            assert!((from_cells - b.class_accuracy[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn answer_only_report_ignores_skips() {
        let r = Registry::builtin();
        let s = set(9, &r);
        let d = decisions(9, r.len(), |c, _| (0, c % 2 == 0));
        let boot = BootstrapOptions {
            resamples: 50,
            ..Default::default()
        };
        let a = metric_report(Method::Nbf, &[&s], &[&d], &r, false, &boot).unwrap();
        assert_eq!((a.coverage, a.macro_accuracy, a.ci_low, a.ci_high), (1.0, 1.0, 1.0, 1.0));
        let sel = metric_report(Method::Nbf, &[&s], &[&d], &r, true, &boot).unwrap();
        assert!(sel.coverage < 1.0);
        assert_eq!(sel.n_instances, 9 * r.len());
    }

    #[test]
    fn reachability_slices() {
        let r = Registry::builtin();
        let mut s = set(4, &r);
        s.tables[0].cells[0][2] = Some(0);
        s.tables[1].cells[0][2] = Some(1);
        let d = decisions(4, r.len(), |c, q| (if c == 0 && q == 0 { 0 } else { 1 }, false));
        let rep = reachability_report(&[&s], &[(Method::Mv, vec![&d])]);
        assert_eq!((rep.reachable, rep.instances), (1, 4 * r.len()));
        assert_eq!(rep.slices[0].reachable_accuracy, 1.0);
        assert_eq!(rep.slices[0].unreachable_accuracy, 0.0);
    }
}

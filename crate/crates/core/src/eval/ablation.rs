//! Robustness drivers: atom-flip noise, projection-knob grid, training-size
//! curve and transfer without refit.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::{fit_method, predict_set, SeedData, Setup};
use super::metrics::{kendall_tau_b, macro_accuracy, mean_sd, Scored};
use super::report::pct;
use crate::atoms::inject_flip_noise;
use crate::dgp::DgpConfig;
use crate::error::{Error, Result};
use crate::resolvers::{fit, FitContext, LabeledSet, Method};
use crate::rng;
use crate::schema::DifficultyClass;
use crate::Model;

pub const NOISE_EPSILONS: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.5];
pub const GRID_SCALES: [f64; 3] = [0.5, 1.0, 2.0];
pub const TRAIN_SIZES: [usize; 4] = [50, 100, 150, 216];
/// Method columns ranked in the projection-knob grid.
pub const GRID_METHODS: [Method; 7] = [
    Method::Mv,
    Method::Ssb,
    Method::SsbG,
    Method::Bcf,
    Method::Nbf,
    Method::Dsnbf,
    Method::Abf,
];

/// Mean and population sd over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub per_seed: Vec<f64>,
}

impl Stat {
    pub fn of(per_seed: Vec<f64>) -> Self {
        let (mean, sd) = mean_sd(&per_seed);
        Stat { mean, sd, per_seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: Method,
    pub points: Vec<Stat>,
}

/// Answer-only macro accuracy of a model on a labeled set.
pub fn model_accuracy(model: &Model, set: &LabeledSet, setup: &Setup) -> f64 {
    let preds = predict_set(model, set, setup);
    let items: Vec<Scored> = preds
        .iter()
        .zip(&set.labels)
        .enumerate()
        .flat_map(|(c, (row, y))| {
            row.iter().enumerate().map(move |(q, p)| Scored {
                cluster: c,
                question: q,
                correct: p.answer == y[q],
                skipped: false,
            })
        })
        .collect();
    macro_accuracy(&items, setup.registry.len())
}

/// Rows in `methods` order; `cell(method index, seed index, point index)`.
fn collect_rows(
    methods: &[Method],
    n_seeds: usize,
    n_points: usize,
    values: &[f64],
) -> Vec<CurveRow> {
    methods
        .iter()
        .enumerate()
        .map(|(m, &method)| CurveRow {
            method,
            points: (0..n_points)
                .map(|p| Stat::of((0..n_seeds).map(|s| values[(m * n_seeds + s) * n_points + p]).collect()))
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseGrid {
    pub epsilons: Vec<f64>,
    pub rows: Vec<CurveRow>,
}

/// Models stay fit on clean train/calibration atoms; only test atoms are
/// flipped. `models[s]` holds the seed's fitted models in `methods` order.
pub fn run_noise_grid(
    seeds: &[SeedData],
    models: &[Vec<&Model>],
    epsilons: &[f64],
    setup: &Setup,
) -> Result<NoiseGrid> {
    let methods: Vec<Method> = models.first().map(|m| m.iter().map(|x| x.method()).collect()).unwrap_or_default();
    let noisy: Vec<Vec<LabeledSet>> = seeds
        .par_iter()
        .map(|d| {
            epsilons
                .iter()
                .map(|&eps| {
                    let tables = d
                        .test
                        .tables
                        .iter()
                        .map(|t| inject_flip_noise(t, &setup.registry, eps, d.seed))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(d.test.with_tables(tables))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..seeds.len()).flat_map(move |s| (0..epsilons.len()).map(move |e| (m, s, e))))
        .collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(m, s, e)| model_accuracy(models[s][m], &noisy[s][e], setup))
        .collect();
    Ok(NoiseGrid {
        epsilons: epsilons.to_vec(),
        rows: collect_rows(&methods, seeds.len(), epsilons.len(), &values),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    pub sizes: Vec<usize>,
    pub rows: Vec<CurveRow>,
}

/// Difficulty-stratified prefix of the training split: each class is
/// shuffled on its own stream, classes are interleaved round-robin and the
/// first `size` personas are kept in their original order.
pub fn stratified_prefix(train: &LabeledSet, size: usize, seed: u64) -> Result<LabeledSet> {
    if size > train.len() {
        return Err(Error::Config(format!(
            "training size {size} exceeds the {} available personas",
            train.len()
        )));
    }
    let mut per_class: Vec<Vec<usize>> = DifficultyClass::ALL
        .iter()
        .map(|&d| {
            let mut idx: Vec<usize> = (0..train.len()).filter(|&i| train.difficulty[i] == d).collect();
            idx.shuffle(&mut rng::stream(seed, &["train_curve", d.as_str()]));
            idx.reverse();
            idx
        })
        .collect();
    let mut order = Vec::with_capacity(train.len());
    while order.len() < train.len() {
        for class in per_class.iter_mut() {
            if let Some(i) = class.pop() {
                order.push(i);
            }
        }
    }
    let mut keep = order[..size].to_vec();
    keep.sort_unstable();
    Ok(train.subset(&keep))
}

pub fn run_training_curve(seeds: &[SeedData], methods: &[Method], sizes: &[usize], setup: &Setup) -> Result<TrainCurve> {
    let subsets: Vec<Vec<LabeledSet>> = seeds
        .iter()
        .map(|d| sizes.iter().map(|&n| stratified_prefix(&d.train, n, d.seed)).collect())
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..seeds.len()).flat_map(move |s| (0..sizes.len()).map(move |p| (m, s, p))))
        .collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(m, s, p)| {
            let d = &seeds[s];
            let cx = FitContext {
                train: &subsets[s][p],
                ..d.fit_context(setup)
            };
            let model = fit::<f64>(methods[m], cx)?;
            Ok(model_accuracy(&model, &d.test, setup))
        })
        .collect::<Result<_>>()?;
    Ok(TrainCurve {
        sizes: sizes.to_vec(),
        rows: collect_rows(methods, seeds.len(), sizes.len(), &values),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub bias_scale: f64,
    pub dropout_scale: f64,
}

impl Variant {
    pub fn is_default(&self) -> bool {
        self.bias_scale == 1.0 && self.dropout_scale == 1.0
    }

    pub fn label(&self) -> String {
        format!("b{:.1},d{:.1}", self.bias_scale, self.dropout_scale)
    }
}

pub fn grid_variants(scales: &[f64]) -> Vec<Variant> {
    scales
        .iter()
        .flat_map(|&b| {
            scales.iter().map(move |&d| Variant {
                bias_scale: b,
                dropout_scale: d,
            })
        })
        .collect()
}

/// Per variant and seed: refit accuracy of every method, plus the
/// accuracy of the default-fit models on the variant's test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRuns {
    pub variants: Vec<Variant>,
    pub methods: Vec<Method>,
    /// `refit[v][m]`, per-seed accuracies.
    pub refit: Vec<Vec<Stat>>,
    /// `transfer[v][m]`, per-seed accuracies.
    pub transfer: Vec<Vec<Stat>>,
}

/// `defaults[s][m]` are models fit at the default knobs on seed `s`.
pub fn run_variants(
    base: &DgpConfig,
    seeds: &[u64],
    variants: &[Variant],
    methods: &[Method],
    defaults: &[Vec<&Model>],
    setup: &Setup,
) -> Result<VariantRuns> {
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..seeds.len()).map(move |s| (v, s)))
        .collect();
    let results: Vec<Vec<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let mut cfg = base.clone();
            cfg.seed = seeds[s];
            cfg.bias_scale = variants[v].bias_scale;
            cfg.dropout_scale = variants[v].dropout_scale;
            let data = SeedData::generate(&cfg, setup)?;
            methods
                .iter()
                .enumerate()
                .map(|(m, &method)| {
                    let transfer = model_accuracy(defaults[s][m], &data.test, setup);
                    let refit = if variants[v].is_default() {
                        transfer
                    } else {
                        model_accuracy(&fit_method(method, &data, setup)?.model, &data.test, setup)
                    };
                    Ok((refit, transfer))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let stat = |v: usize, m: usize, pick: fn(&(f64, f64)) -> f64| {
        Stat::of((0..seeds.len()).map(|s| pick(&results[v * seeds.len() + s][m])).collect())
    };
    Ok(VariantRuns {
        variants: variants.to_vec(),
        methods: methods.to_vec(),
        refit: (0..variants.len())
            .map(|v| (0..methods.len()).map(|m| stat(v, m, |x| x.0)).collect())
            .collect(),
        transfer: (0..variants.len())
            .map(|v| (0..methods.len()).map(|m| stat(v, m, |x| x.1)).collect())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTau {
    pub a: String,
    pub b: String,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpGrid {
    pub variants: Vec<Variant>,
    pub methods: Vec<Method>,
    /// `accuracy[v][m]`.
    pub accuracy: Vec<Vec<Stat>>,
    pub pairs: Vec<PairTau>,
    /// None with fewer than two variants.
    pub mean_tau: Option<f64>,
    pub min_tau: Option<f64>,
}

pub fn dgp_grid(runs: &VariantRuns) -> DgpGrid {
    let means: Vec<Vec<f64>> = runs.refit.iter().map(|row| row.iter().map(|s| s.mean).collect()).collect();
    let mut pairs = Vec::new();
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            pairs.push(PairTau {
                a: runs.variants[a].label(),
                b: runs.variants[b].label(),
                tau: kendall_tau_b(&means[a], &means[b]),
            });
        }
    }
    let taus: Vec<f64> = pairs.iter().map(|p| p.tau).collect();
    DgpGrid {
        variants: runs.variants.clone(),
        methods: runs.methods.clone(),
        accuracy: runs.refit.clone(),
        mean_tau: (!taus.is_empty()).then(|| mean_sd(&taus).0),
        min_tau: taus.iter().copied().reduce(f64::min),
        pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub variant: Variant,
    pub transfer: Stat,
    pub refit: Stat,
    /// Transfer minus refit, per seed.
    pub gap: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub method: Method,
    pub cells: Vec<TransferCell>,
    /// Mean gap over the non-default cells, if any.
    pub mean_shifted_gap: Option<f64>,
}

pub fn transfer_report(runs: &VariantRuns, method: Method) -> Result<TransferReport> {
    let m = runs
        .methods
        .iter()
        .position(|&x| x == method)
        .ok_or_else(|| Error::Config(format!("{method} missing from the variant runs")))?;
    let cells: Vec<TransferCell> = runs
        .variants
        .iter()
        .enumerate()
        .map(|(v, &variant)| {
            let (t, r) = (&runs.transfer[v][m], &runs.refit[v][m]);
            TransferCell {
                variant,
                transfer: t.clone(),
                refit: r.clone(),
                gap: Stat::of(t.per_seed.iter().zip(&r.per_seed).map(|(a, b)| a - b).collect()),
            }
        })
        .collect();
    let shifted: Vec<f64> = cells.iter().filter(|c| !c.variant.is_default()).map(|c| c.gap.mean).collect();
    Ok(TransferReport {
        method,
        mean_shifted_gap: (!shifted.is_empty()).then(|| mean_sd(&shifted).0),
        cells,
    })
}

fn pm(s: &Stat) -> String {
    format!("{} ± {}", pct(s.mean), pct(s.sd))
}

fn curve_table(title: &str, header: &str, points: &[String], rows: &[CurveRow]) -> String {
    let mut s = format!("## {title}\n\n| Method |");
    for p in points {
        let _ = write!(s, " {header}{p} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(points.len()));
    s.push('\n');
    for r in rows {
        let _ = write!(s, "| {} |", r.method.display_name());
        for p in &r.points {
            let _ = write!(s, " {} |", pm(p));
        }
        s.push('\n');
    }
    s
}

pub fn noise_table(g: &NoiseGrid) -> String {
    let pts: Vec<String> = g.epsilons.iter().map(|e| format!("{e}")).collect();
    curve_table("Atom-flip noise (mean ± sd over seeds)", "ε=", &pts, &g.rows)
}

pub fn train_curve_table(c: &TrainCurve) -> String {
    let pts: Vec<String> = c.sizes.iter().map(|n| n.to_string()).collect();
    curve_table("Training-set size (mean ± sd over seeds)", "n=", &pts, &c.rows)
}

pub fn dgp_grid_table(g: &DgpGrid) -> String {
    let mut s = String::from("## Projection-knob grid (refit per variant)\n\n| Variant |");
    for m in &g.methods {
        let _ = write!(s, " {} |", m.display_name());
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(g.methods.len()));
    s.push('\n');
    for (v, row) in g.variants.iter().zip(&g.accuracy) {
        let _ = write!(s, "| {} |", v.label());
        for x in row {
            let _ = write!(s, " {} |", pct(x.mean));
        }
        s.push('\n');
    }
    if let (Some(mean), Some(min)) = (g.mean_tau, g.min_tau) {
        let _ = writeln!(
            s,
            "\nMean pairwise Kendall τ-b over {} variant pairs: {mean:.3} (min {min:.3}).",
            g.pairs.len()
        );
    }
    s
}

pub fn transfer_table(t: &TransferReport) -> String {
    let mut s = format!(
        "## Transfer without refit ({})\n\n| Variant | Transfer | Refit | Gap |\n|---|---|---|---|\n",
        t.method.display_name()
    );
    for c in &t.cells {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            c.variant.label(),
            pm(&c.transfer),
            pm(&c.refit),
            pm(&c.gap)
        );
    }
    if let Some(g) = t.mean_shifted_gap {
        let _ = writeln!(s, "\nMean gap over shifted cells: {} pp.", pct(g));
    }
    s
}

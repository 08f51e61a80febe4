//! End-to-end acceptance suite. Two clean default runs are produced once and
//! shared; every criterion prints a single PASS/FAIL line to stdout.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use common::checks::{self, Check};
use memqa::eval::experiment::{evaluate, fit_method, score, score_answer_only, Setup};
use memqa::eval::metrics::selective_summary;
use memqa::eval::report::MetricReport;
use memqa::ground_truth::compute_all_labels;
use memqa::pipeline::{RunConfig, RunReport, Workspace};
use memqa::resolvers::Method;
use memqa::selective::SkipPolicy;
use memqa::Registry;
use tempfile::TempDir;

struct Ctx {
    report: RunReport,
    trees_match: Result<usize, String>,
    _dirs: [TempDir; 2],
}

fn ctx() -> &'static Ctx {
    static C: OnceLock<Ctx> = OnceLock::new();
    C.get_or_init(|| {
        let run = || {
            let dir = TempDir::new().unwrap();
            let ws = Workspace::open(dir.path(), RunConfig::default()).unwrap();
            ws.run(None).unwrap();
            let report = ws.report().unwrap();
            (dir, report)
        };
        let (a, report) = run();
        let (b, _) = run();
        let trees_match = compare_trees(a.path(), b.path());
        Ctx {
            report,
            trees_match,
            _dirs: [a, b],
        }
    })
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn compare_trees(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files(a), files(b));
    if fa.keys().ne(fb.keys()) {
        return Err("file sets differ".into());
    }
    for (k, v) in &fa {
        if fb[k] != *v {
            return Err(format!("{k} differs"));
        }
    }
    for needed in ["cohort", "labels", "preds", "results"] {
        if !fa.keys().any(|k| k.starts_with(needed)) {
            return Err(format!("no {needed} tree"));
        }
    }
    Ok(fa.len())
}

/// Writes straight to the process stdout so the line survives output capture.
fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    let line = format!("criterion {id:>2} {name:<28} {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn verdict_check(id: u32, name: &str, c: Check) {
    match c {
        Ok(n) => verdict(id, name, true, &format!("{n} instances")),
        Err(e) => verdict(id, name, false, &e),
    }
}

fn row(rows: &[MetricReport], m: Method) -> &MetricReport {
    rows.iter().find(|r| r.method == m).unwrap_or_else(|| panic!("no row for {m}"))
}

fn pp(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

#[test]
fn c01_gt_audit() {
    let reg = Registry::builtin();
    let mut n = 0;
    let mut bad = Vec::new();
    for cohort in common::cohorts() {
        let primary = compute_all_labels(cohort, &reg).unwrap();
        for p in &cohort.personas {
            for (q, a) in common::oracle_labels(p) {
                n += 1;
                if primary[&p.traits.persona_id][&q].answer != a {
                    bad.push(format!("{}/{q}", p.traits.persona_id));
                }
            }
        }
    }
    let ok = bad.is_empty() && n == 34_560;
    verdict(1, "gt audit", ok, &format!("{} of {n} labels agree", n - bad.len()));
}

#[test]
fn c02_determinism() {
    verdict_check(2, "determinism", ctx().trees_match.clone());
}

fn per_seed(f: impl Fn(&Registry, &memqa::eval::experiment::SeedData) -> Check) -> Check {
    let reg = Registry::builtin();
    common::seed_data().iter().map(|d| f(&reg, d)).sum()
}

#[test]
fn c03_oracle_equivalence() {
    let c = per_seed(|r, d| Ok(checks::nbf_oracle(r, d)? + checks::bcf_oracle(r, d)? + checks::abf_oracle(r, d)?));
    verdict_check(3, "oracle equivalence", c);
}

#[test]
fn c04_degeneracy_identities() {
    let c = per_seed(|r, d| {
        Ok(checks::argrag_is_mv(r, &d.test)? + checks::bcf_is_mv_on_nominal(r, d)? + checks::dsnbf_gw0_is_nbf(r, d)?)
    });
    verdict_check(4, "degeneracy identities", c);
}

#[test]
fn c05_method_ordering() {
    let ao = &ctx().report.evaluation.answer_only;
    let acc = |m| row(ao, m).macro_accuracy;
    let (ds, nbf, ssb, mv) = (acc(Method::Dsnbf), acc(Method::Nbf), acc(Method::Ssb), acc(Method::Mv));
    let ok = ds >= nbf - 0.005 && nbf >= ssb + 0.01 && ssb >= mv + 0.03 && ds - mv >= 0.06;
    verdict(5, "method ordering", ok, &format!("DSNBF {} NBF {} SSB {} MV {}", pp(ds), pp(nbf), pp(ssb), pp(mv)));
}

#[test]
fn c06_selective_qa() {
    let ev = &ctx().report.evaluation;
    let mut ok = true;
    let mut detail = Vec::new();
    for m in [Method::Dsnbf, Method::Nbf] {
        let s = row(&ev.selective, m);
        let a = row(&ev.answer_only, m);
        let gain = s.selective_accuracy - a.macro_accuracy;
        ok &= gain >= 0.02 && (0.5..=0.95).contains(&s.coverage);
        detail.push(format!("{m} sel {} vs {} at cov {}", pp(s.selective_accuracy), pp(a.macro_accuracy), pp(s.coverage)));
    }
    // θ = 0 never abstains, so it must reproduce answer-only scoring.
    let setup = Setup::default();
    let n_q = setup.registry.len();
    for d in common::seed_data() {
        for m in [Method::Dsnbf, Method::Nbf] {
            let mut f = fit_method(m, d, &setup).unwrap();
            f.policy.policy = SkipPolicy::Margin { theta: 0.0 };
            let e = evaluate(&f, &d.test, &setup).unwrap();
            let sel = selective_summary(&score(&e.decisions, &d.test.labels, 0), n_q);
            let ans = selective_summary(&score_answer_only(&e.decisions, &d.test.labels, 0), n_q);
            if sel != ans {
                ok = false;
                detail.push(format!("theta=0 differs for {m} seed {}", d.seed));
            }
        }
    }
    verdict(6, "selective qa", ok, &detail.join("; "));
}

#[test]
fn c07_noise_tolerance() {
    let g = ctx().report.noise.as_ref().expect("noise ablation");
    let i_half = g.epsilons.iter().position(|&e| e == 0.5).expect("eps 0.5");
    let mc = g.rows.iter().find(|r| r.method == Method::MajorityClass).expect("MC row");
    let mut ok = mc.points.iter().all(|p| p.per_seed == mc.points[0].per_seed);
    let mut detail = vec![format!("MC {}", pp(mc.points[0].mean))];
    for r in g.rows.iter().filter(|r| r.method.is_learned()) {
        let at_half = r.points[i_half].mean;
        let monotone = r.points.windows(2).all(|w| w[1].mean <= w[0].mean + 0.01);
        let near = (at_half - mc.points[0].mean).abs() <= 0.10;
        ok &= monotone && near;
        detail.push(format!("{} {}@0.5{}", r.method, pp(at_half), if monotone { "" } else { " non-monotone" }));
    }
    verdict(7, "noise tolerance", ok, &detail.join(", "));
}

#[test]
fn c08_robustness_gradient() {
    let ao = &ctx().report.evaluation.answer_only;
    let drop = |m| row(ao, m).breakdown.stable_to_svr_drop;
    let fragile = drop(Method::Mv).min(drop(Method::Bcf));
    let robust = drop(Method::Nbf).max(drop(Method::Dsnbf));
    let ok = fragile >= robust + 0.04;
    let detail = format!(
        "drops MV {} BCF {} NBF {} DSNBF {}",
        pp(drop(Method::Mv)),
        pp(drop(Method::Bcf)),
        pp(drop(Method::Nbf)),
        pp(drop(Method::Dsnbf))
    );
    verdict(8, "robustness gradient", ok, &detail);
}

#[test]
fn c09_dgp_grid_stability() {
    let g = ctx().report.dgp_grid.as_ref().expect("grid ablation");
    let mean = g.mean_tau.unwrap_or(f64::NAN);
    let ok = g.variants.len() == 9 && g.pairs.len() == 36 && mean >= 0.6 && g.pairs.iter().all(|p| p.tau > 0.0);
    verdict(9, "dgp grid stability", ok, &format!("mean tau {mean:.3}, min {:.3}", g.min_tau.unwrap_or(f64::NAN)));
}

#[test]
fn c10_training_size_saturation() {
    let c = ctx().report.train_curve.as_ref().expect("train curve");
    let at = |n| c.sizes.iter().position(|&s| s == n).expect("size");
    let (lo, hi) = (at(100), at(216));
    let mut ok = true;
    let mut detail = Vec::new();
    for r in &c.rows {
        match r.method {
            Method::Nbf | Method::Dsnbf => {
                let gain = r.points[hi].mean - r.points[lo].mean;
                ok &= gain <= 0.015;
                detail.push(format!("{} gain {}", r.method, pp(gain)));
            }
            Method::Mv => {
                let flat = r.points.iter().all(|p| p.per_seed == r.points[0].per_seed);
                ok &= flat;
                detail.push(format!("MV {}", if flat { "flat" } else { "varies" }));
            }
            _ => {}
        }
    }
    verdict(10, "training-size saturation", ok, &detail.join(", "));
}

#[test]
fn c11_reachability() {
    let r = &ctx().report.evaluation.reachability;
    let ds = r.slices.iter().find(|s| s.method == Method::Dsnbf).expect("DSNBF slice");
    let gap = ds.reachable_accuracy - ds.unreachable_accuracy;
    let ok = (0.85..=0.99).contains(&r.rate) && gap >= 0.15;
    verdict(11, "reachability", ok, &format!("rate {}, DSNBF slice gap {}", pp(r.rate), pp(gap)));
}

#[test]
fn c12_render_round_trip() {
    let reg = Registry::builtin();
    let c: Check = common::cohorts().iter().map(|c| checks::render_round_trip(&reg, c)).sum();
    verdict_check(12, "render/parse round trip", c);
}

#[test]
fn c13_transfer_without_refit() {
    let t = ctx().report.transfer.as_ref().expect("transfer ablation");
    let gap = t.mean_shifted_gap.unwrap_or(f64::NAN);
    let shifted = t.cells.iter().filter(|c| !c.variant.is_default()).count();
    let ok = t.method == Method::Dsnbf && shifted == 8 && (-0.05..=0.0).contains(&gap);
    verdict(13, "transfer without refit", ok, &format!("DSNBF mean gap {} over {shifted} cells", pp(gap)));
}

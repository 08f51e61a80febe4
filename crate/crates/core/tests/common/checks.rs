//! Instance-wise oracle and identity checks shared by the oracle tests and
//! the acceptance run. Each returns the number of instances checked, or a
//! description of the first disagreement.

use memqa::atoms::{AtomTable, N_SOURCES};
use memqa::dgp::Cohort;
use memqa::eval::experiment::SeedData;
use memqa::resolvers::{
    fit_abf, fit_bcf, fit_dsnbf_with, fit_majority_class, fit_nbf, predict_argrag, predict_majority_vote, BiasPrior,
    DsnbfHyper, LabeledSet,
};
use memqa::schema::Topic;
use memqa::{QuestionSpec, Registry, SourceId};

pub type Check = Result<usize, String>;

/// Rank on the bias-shift axis, read straight off the registry lists.
fn rank(spec: &QuestionSpec, v: usize) -> Option<usize> {
    let label = &spec.answers[v];
    if !spec.ordinal || spec.edge_labels.contains(label) {
        return None;
    }
    spec.bias_shift_order.iter().position(|l| l == label)
}

fn at_rank(spec: &QuestionSpec, r: usize) -> usize {
    spec.answers.iter().position(|a| *a == spec.bias_shift_order[r]).unwrap()
}

/// Default directional prior with the per-question exceptions.
fn prior_shift(spec: &QuestionSpec, s: SourceId) -> i64 {
    match (spec.id.as_str(), s) {
        ("F1", SourceId::Planner) => -1,
        ("A2" | "C2" | "F1" | "G2", SourceId::DailySelfReport) => 1,
        (_, SourceId::Planner) => 1,
        (_, SourceId::DailySelfReport) => match spec.topic {
            Topic::Sleep | Topic::Diet | Topic::Exercise => 1,
            Topic::Work | Topic::Social => -1,
        },
        _ => 0,
    }
}

fn first_argmax(xs: &[f64], tol: f64) -> usize {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    xs.iter().position(|&x| x >= max - tol).unwrap()
}

fn all_null(t: &AtomTable, qi: usize) -> bool {
    t.cells[qi].iter().all(Option::is_none)
}

/// NBF posteriors against counts re-tallied from the training split.
pub fn nbf_oracle(reg: &Registry, d: &SeedData) -> Check {
    let model = fit_nbf::<f64>(reg, &d.train).map_err(|e| e.to_string())?;
    let mut n = 0;
    for (qi, spec) in reg.questions().iter().enumerate() {
        let k = spec.k();
        let mut class = vec![0.0; k];
        let mut conf = vec![vec![vec![0.0; k]; k]; N_SOURCES];
        for (t, y) in d.train.tables.iter().zip(&d.train.labels) {
            let g = y[qi] as usize;
            class[g] += 1.0;
            for (c, atom) in conf.iter_mut().zip(&t.cells[qi]) {
                if let Some(mu) = atom {
                    c[g][*mu as usize] += 1.0;
                }
            }
        }
        let total = d.train.len() as f64;
        for t in &d.test.tables {
            let logp: Vec<f64> = (0..k)
                .map(|v| {
                    let mut lp = ((class[v] + 1.0) / (total + k as f64)).ln();
                    for (c, atom) in conf.iter().zip(&t.cells[qi]) {
                        if let Some(mu) = atom {
                            let row: f64 = c[v].iter().sum();
                            lp += ((c[v][*mu as usize] + 1.0) / (row + k as f64)).ln();
                        }
                    }
                    lp
                })
                .collect();
            let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logp.iter().map(|x| (x - m).exp()).sum();
            let want: Vec<f64> = logp.iter().map(|x| (x - m).exp() / z).collect();
            let got = model.predict(t, qi, spec);
            for (a, b) in want.iter().zip(&got.posterior) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                if rel > 1e-9 {
                    return Err(format!("NBF {} {}: oracle {want:?} vs {:?}", t.persona_id, spec.id, got.posterior));
                }
            }
            n += 1;
        }
    }
    Ok(n)
}

/// BCF argmax of the weighted forward-match score, in twentieths.
pub fn bcf_oracle(reg: &Registry, d: &SeedData) -> Check {
    let model = fit_bcf(reg, &BiasPrior::default(), &d.train).map_err(|e| e.to_string())?;
    let delta = model.delta();
    let mut n = 0;
    for t in &d.test.tables {
        for (qi, spec) in reg.questions().iter().enumerate() {
            if all_null(t, qi) {
                continue;
            }
            let score = |v: usize| -> i64 {
                let mut sc = 0;
                for (s, &src) in SourceId::ALL.iter().enumerate() {
                    let Some(mu) = t.cells[qi][s] else { continue };
                    let forward = match rank(spec, v) {
                        Some(r) => {
                            let top = spec.bias_shift_order.len() as i64 - 1;
                            at_rank(spec, (r as i64 + prior_shift(spec, src)).clamp(0, top) as usize)
                        }
                        None => v,
                    };
                    if mu as usize == forward {
                        let w = if spec.ordinal { 1.0 - delta[s] } else { 1.0 };
                        sc += (w * 20.0).round() as i64;
                    }
                }
                sc
            };
            let scores: Vec<f64> = (0..spec.k()).map(|v| score(v) as f64).collect();
            let want = first_argmax(&scores, 0.0);
            let got = model.predict::<f64>(t, qi, spec, &BiasPrior::default()).answer as usize;
            if want != got {
                return Err(format!("BCF {} {}: oracle {want} vs {got} (scores {scores:?})", t.persona_id, spec.id));
            }
            n += 1;
        }
    }
    Ok(n)
}

/// ABF argmax of the uniform-weight kernel-mixture explanation score.
pub fn abf_oracle(reg: &Registry, d: &SeedData) -> Check {
    let model = fit_abf::<f64>(reg, &BiasPrior::default(), &d.train).map_err(|e| e.to_string())?;
    let p = &model.params;
    let mut n = 0;
    for t in &d.test.tables {
        for (qi, spec) in reg.questions().iter().enumerate() {
            if all_null(t, qi) {
                continue;
            }
            let score = |v: usize| -> f64 {
                let mut total = 0.0;
                for (s, &src) in SourceId::ALL.iter().enumerate() {
                    let Some(mu) = t.cells[qi][s] else { continue };
                    let mu = mu as usize;
                    let (d_bias, d_id) = match (rank(spec, v), rank(spec, mu)) {
                        (Some(rv), Some(rm)) => {
                            let top = (spec.bias_shift_order.len() - 1) as f64;
                            let moved = (rv as f64 + prior_shift(spec, src) as f64 * p.delta[s]).clamp(0.0, top);
                            ((rm as f64 - moved).abs(), rv.abs_diff(rm) as f64)
                        }
                        _ => {
                            let x = if v == mu { 0.0 } else { 1.0 };
                            (x, x)
                        }
                    };
                    let k = |x: f64| (-p.alpha * x).exp();
                    total += 0.2 * (p.pi * k(d_bias) + (1.0 - p.pi) * k(d_id));
                }
                total
            };
            let scores: Vec<f64> = (0..spec.k()).map(score).collect();
            let want = first_argmax(&scores, 1e-12);
            let got = model.predict(t, qi, spec, &BiasPrior::default()).answer as usize;
            if want != got {
                return Err(format!("ABF {} {}: oracle {want} vs {got} (scores {scores:?})", t.persona_id, spec.id));
            }
            n += 1;
        }
    }
    Ok(n)
}

/// ArgRAG adaptation and majority vote give the same answer everywhere.
pub fn argrag_is_mv(reg: &Registry, set: &LabeledSet) -> Check {
    let mc = fit_majority_class(reg, set).map_err(|e| e.to_string())?;
    let mut n = 0;
    for t in &set.tables {
        for (qi, spec) in reg.questions().iter().enumerate() {
            let a = predict_argrag::<f64>(t, qi, spec, Some(&mc)).answer;
            let b = predict_majority_vote::<f64>(t, qi, spec, Some(&mc)).answer;
            if a != b {
                return Err(format!("ArgRAG {} {}: {a} vs MV {b}", t.persona_id, spec.id));
            }
            n += 1;
        }
    }
    Ok(n)
}

/// On the unordered questions BCF has nothing to correct.
pub fn bcf_is_mv_on_nominal(reg: &Registry, d: &SeedData) -> Check {
    let prior = BiasPrior::default();
    let model = fit_bcf(reg, &prior, &d.train).map_err(|e| e.to_string())?;
    let mc = fit_majority_class(reg, &d.train).map_err(|e| e.to_string())?;
    let mut n = 0;
    for id in ["B3", "C3", "E1"] {
        let qi = reg.index_of(id).unwrap();
        let spec = reg.get(qi);
        for t in &d.test.tables {
            let a = model.predict::<f64>(t, qi, spec, &prior).answer;
            let b = predict_majority_vote::<f64>(t, qi, spec, Some(&mc)).answer;
            if a != b {
                return Err(format!("BCF {} {id}: {a} vs MV {b}", t.persona_id));
            }
            n += 1;
        }
    }
    Ok(n)
}

/// DSNBF with the class-specific blend switched off reduces to NBF.
pub fn dsnbf_gw0_is_nbf(reg: &Registry, d: &SeedData) -> Check {
    let nbf = fit_nbf::<f64>(reg, &d.train).map_err(|e| e.to_string())?;
    let ds = fit_dsnbf_with::<f64>(
        reg,
        &d.train,
        DsnbfHyper {
            eta: 5.0,
            t: 0.5,
            t_diff: 0.5,
            g_w: 0.0,
        },
    )
    .map_err(|e| e.to_string())?;
    let mut n = 0;
    for t in &d.test.tables {
        let all = ds.predict_all(t, reg);
        for (qi, spec) in reg.questions().iter().enumerate() {
            let a = nbf.predict(t, qi, spec);
            if a.answer != all[qi].answer {
                return Err(format!("DSNBF(g_w=0) {} {}: {} vs NBF {}", t.persona_id, spec.id, all[qi].answer, a.answer));
            }
            n += 1;
        }
    }
    Ok(n)
}

/// parse(render(streams)) == streams, and readout is unchanged by the trip.
pub fn render_round_trip(reg: &Registry, cohort: &Cohort) -> Check {
    use memqa::atoms::{readout_atoms, SourceQuestionMap};
    use memqa::nl_render::{parse, parse_markdown, render};
    let sq = SourceQuestionMap::default();
    let mut n = 0;
    for p in &cohort.personas {
        let id = &p.traits.persona_id;
        let doc = render(id, &p.streams);
        let back = parse(&doc).map_err(|e| format!("{id}: {e}"))?;
        if back != p.streams {
            return Err(format!("{id}: streams differ after render/parse"));
        }
        let (pid, from_md) = parse_markdown(&doc.to_markdown()).map_err(|e| format!("{id}: {e}"))?;
        if pid != *id || from_md != p.streams {
            return Err(format!("{id}: streams differ after markdown round trip"));
        }
        if readout_atoms(id, &back, reg, &sq) != readout_atoms(id, &p.streams, reg, &sq) {
            return Err(format!("{id}: readout differs after round trip"));
        }
        n += 1;
    }
    Ok(n)
}

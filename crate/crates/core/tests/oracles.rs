mod common;

use common::checks;
use memqa::atoms::{inject_flip_noise, AtomTable, N_SOURCES};
use memqa::dgp::{format_clock, parse_bedtime, MIDNIGHT};
use memqa::ground_truth::{mixed_split, MixedOutcome};
use memqa::resolvers::{bias_shift, fit_nbf, predict_majority_vote};
use memqa::Registry;
use proptest::prelude::*;

fn first() -> &'static memqa::eval::experiment::SeedData {
    &common::seed_data()[0]
}

#[test]
fn nbf_matches_brute_force() {
    let n = checks::nbf_oracle(&Registry::builtin(), first()).unwrap();
    assert_eq!(n, 120 * 18);
}

#[test]
fn bcf_matches_displayed_rule() {
    checks::bcf_oracle(&Registry::builtin(), first()).unwrap();
}

#[test]
fn abf_matches_displayed_rule() {
    checks::abf_oracle(&Registry::builtin(), first()).unwrap();
}

#[test]
fn degenerate_methods() {
    let reg = Registry::builtin();
    let d = first();
    checks::argrag_is_mv(&reg, &d.test).unwrap();
    checks::bcf_is_mv_on_nominal(&reg, d).unwrap();
    checks::dsnbf_gw0_is_nbf(&reg, d).unwrap();
}

#[test]
fn render_round_trip_seed_one() {
    let n = checks::render_round_trip(&Registry::builtin(), &common::cohorts()[0]).unwrap();
    assert_eq!(n, 480);
}

fn arb_row(reg: &'static Registry, qi: usize) -> impl Strategy<Value = [Option<u8>; N_SOURCES]> {
    let k = reg.get(qi).k() as u8;
    proptest::array::uniform5(proptest::option::of(0..k))
}

fn registry() -> &'static Registry {
    static R: std::sync::OnceLock<Registry> = std::sync::OnceLock::new();
    R.get_or_init(Registry::builtin)
}

fn table_with(qi: usize, row: [Option<u8>; N_SOURCES]) -> AtomTable {
    let mut t = AtomTable::empty("p", registry().len());
    t.cells[qi] = row;
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bias_shift_stays_on_axis(qi in 0usize..18, v in 0usize..16, shift in -1i8..=1, steps in 0.0f64..3.0) {
        let q = registry().get(qi);
        let v = v % q.k();
        let out = bias_shift(q, v, shift, steps);
        prop_assert!(out < q.k());
        match q.rank_of(v) {
            None => prop_assert_eq!(out, v),
            Some(_) => prop_assert!(q.rank_of(out).is_some()),
        }
        if shift == 0 {
            prop_assert_eq!(out, v);
        }
    }

    #[test]
    fn mv_is_plurality(qi in 0usize..18, seed_row in any::<u64>()) {
        let reg = registry();
        let q = reg.get(qi);
        let k = q.k() as u64;
        let row: [Option<u8>; N_SOURCES] = std::array::from_fn(|s| {
            let x = (seed_row >> (s * 8)) & 0xff;
            (x % 3 != 0).then(|| (x % k) as u8)
        });
        let t = table_with(qi, row);
        let p = predict_majority_vote::<f64>(&t, qi, q, None);
        let mut votes = vec![0; q.k()];
        row.iter().flatten().for_each(|&v| votes[v as usize] += 1);
        if votes.iter().any(|&c| c > 0) {
            let max = *votes.iter().max().unwrap();
            prop_assert_eq!(p.answer as usize, votes.iter().position(|&c| c == max).unwrap());
        }
    }

    #[test]
    fn nbf_posterior_is_a_distribution(qi in 0usize..18, row in (0usize..18).prop_flat_map(|q| arb_row(registry(), q))) {
        let reg = registry();
        let model = fit_nbf::<f64>(reg, &first().train).unwrap();
        let q = reg.get(qi);
        let row = row.map(|a| a.map(|v| v % q.k() as u8));
        let p = model.predict(&table_with(qi, row), qi, q);
        let sum: f64 = p.posterior.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        let best = p.posterior.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(p.posterior[p.answer as usize], best);
        prop_assert!(p.margin.unwrap() >= 0.0);
    }

    #[test]
    fn flip_noise_keeps_nulls_and_nests(eps in 0.0f64..1.0, seed in any::<u64>()) {
        let reg = registry();
        let t = &first().test.tables[0];
        let zero = inject_flip_noise(t, reg, 0.0, seed).unwrap();
        prop_assert_eq!(&zero.cells, &t.cells);
        let lo = inject_flip_noise(t, reg, eps / 2.0, seed).unwrap();
        let hi = inject_flip_noise(t, reg, eps, seed).unwrap();
        for qi in 0..reg.len() {
            for s in 0..N_SOURCES {
                prop_assert_eq!(hi.cells[qi][s].is_none(), t.cells[qi][s].is_none());
                // A cell flipped at the lower rate is flipped the same way at the higher one.
                if lo.cells[qi][s] != t.cells[qi][s] {
                    prop_assert_eq!(lo.cells[qi][s], hi.cells[qi][s]);
                }
            }
        }
    }

    #[test]
    fn bedtime_clock_round_trip(t in 0i32..(24 * 60)) {
        prop_assert_eq!(parse_bedtime(&format_clock(t)), Some(t));
        prop_assert!(t < MIDNIGHT || format_clock(t).as_str() < "12:00");
    }

    #[test]
    fn mixed_split_is_symmetric(a in 0usize..40, b in 0usize..40) {
        let flip = |m| match m {
            MixedOutcome::Positive => MixedOutcome::Negative,
            MixedOutcome::Negative => MixedOutcome::Positive,
            MixedOutcome::Both => MixedOutcome::Both,
        };
        if a != b {
            prop_assert_eq!(mixed_split(a, b), flip(mixed_split(b, a)));
        }
    }
}

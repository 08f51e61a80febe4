//! Per-(question, source) closed-class atoms.
//!
//! Direct readout applies each question's aggregation rule to one source's
//! visible fields. A source may additionally consult the question's context
//! source (the profile claim for B2/B3/D2, planner plans for C2/C3/E2/F1,
//! device coverage for F2, objective coverage for F3); when that context
//! is absent the atom is the question's edge label.

use std::collections::BTreeMap;
use std::path::Path;

use num_rational::Ratio;
use rand::RngExt;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dgp::{is_weekend, tenths, DayEntry, Motivation, StreamAccess, StreamSet, MIDNIGHT};
use crate::error::{Error, Result};
use crate::ground_truth::{self as gt, mixed_split, LabelMap, MixedOutcome};
use crate::rng;
use crate::schema::{Registry, SourceId};

/// Answer index, or `None` for a null observation.
pub type Atom = Option<u8>;

pub const N_SOURCES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomProvenance {
    DirectReadout,
    Noisy { epsilon: f64, seed: u64 },
    Replay { bundle_id: String },
}

impl AtomProvenance {
    pub fn label(&self) -> &'static str {
        match self {
            AtomProvenance::DirectReadout => "direct_readout",
            AtomProvenance::Noisy { .. } => "noisy",
            AtomProvenance::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomTable {
    pub persona_id: String,
    /// One row per registry question, one column per source in canonical order.
    pub cells: Vec<[Atom; N_SOURCES]>,
    pub provenance: AtomProvenance,
}

impl AtomTable {
    pub fn empty(persona_id: impl Into<String>, n_questions: usize) -> Self {
        AtomTable {
            persona_id: persona_id.into(),
            cells: vec![[None; N_SOURCES]; n_questions],
            provenance: AtomProvenance::DirectReadout,
        }
    }

    pub fn get(&self, question: usize, source: SourceId) -> Atom {
        self.cells[question][source.index()]
    }

    pub fn non_null(&self, question: usize) -> usize {
        self.cells[question].iter().filter(|a| a.is_some()).count()
    }
}

/// Which sources are relevant to each question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceQuestionMap {
    map: BTreeMap<String, Vec<SourceId>>,
}

const DEFAULT_SQMAP: [(&str, [u8; N_SOURCES]); 18] = [
    ("A1", [1, 1, 1, 0, 1]),
    ("A2", [1, 1, 1, 1, 1]),
    ("A3", [1, 1, 1, 1, 0]),
    ("B2", [1, 1, 1, 1, 1]),
    ("B3", [1, 0, 1, 1, 1]),
    ("C2", [0, 1, 1, 1, 0]),
    ("C3", [0, 0, 1, 0, 1]),
    ("D1", [0, 1, 1, 1, 0]),
    ("D2", [1, 0, 1, 0, 0]),
    ("E1", [0, 1, 1, 1, 1]),
    ("E2", [1, 1, 1, 1, 1]),
    ("F1", [1, 1, 1, 1, 0]),
    ("F2", [1, 1, 1, 1, 1]),
    ("F3", [1, 1, 1, 0, 1]),
    ("G1", [0, 1, 1, 0, 1]),
    ("G2", [1, 1, 1, 1, 0]),
    ("Ctrl1", [1, 1, 1, 0, 0]),
    ("Ctrl2", [0, 1, 1, 0, 1]),
];

impl Default for SourceQuestionMap {
    fn default() -> Self {
        let map = DEFAULT_SQMAP
            .iter()
            .map(|(q, bits)| {
                let sources = SourceId::ALL
                    .into_iter()
                    .zip(bits)
                    .filter(|(_, &b)| b == 1)
                    .map(|(s, _)| s)
                    .collect();
                (q.to_string(), sources)
            })
            .collect();
        SourceQuestionMap { map }
    }
}

impl SourceQuestionMap {
    pub fn new(map: BTreeMap<String, Vec<SourceId>>) -> Result<Self> {
        for (q, sources) in &map {
            if sources.is_empty() {
                return Err(Error::Config(format!("question {q} has no relevant source")));
            }
        }
        Ok(SourceQuestionMap { map })
    }

    pub fn is_mapped(&self, question: &str, source: SourceId) -> bool {
        self.map.get(question).is_some_and(|s| s.contains(&source))
    }

    pub fn sources(&self, question: &str) -> &[SourceId] {
        self.map.get(question).map_or(&[], Vec::as_slice)
    }

    /// Checks that every registry question has at least one relevant source.
    pub fn validate(&self, registry: &Registry) -> Result<()> {
        for q in registry.questions() {
            if self.sources(&q.id).is_empty() {
                return Err(Error::Config(format!("question {} has no relevant source", q.id)));
            }
        }
        Ok(())
    }
}

type Q = Ratio<i64>;

fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

/// floor(count * window / observed); `None` when nothing was observed.
pub fn extrapolate(count: usize, observed: usize, window: usize) -> Option<usize> {
    (observed > 0).then(|| count * window / observed)
}

fn a1_bin(n: usize) -> &'static str {
    match n {
        20.. => "20_or_more",
        10..=19 => "10_to_19",
        _ => "fewer_than_10",
    }
}

fn a2_bin(n: usize) -> &'static str {
    match n {
        8.. => "8_or_more",
        4..=7 => "4_to_7",
        _ => "0_to_3",
    }
}

fn a3_bin(r: Q) -> &'static str {
    if r >= q(7, 10) {
        "70_or_more"
    } else if r >= q(2, 5) {
        "40_to_69"
    } else {
        "less_than_40"
    }
}

fn b2_bin(diff: Q) -> &'static str {
    if diff < q(-1, 1) {
        "more_than_1_below"
    } else if diff > q(1, 1) {
        "more_than_1_above"
    } else {
        "within_1_day"
    }
}

fn ctrl1_bin(n: usize) -> &'static str {
    match n {
        0..=1 => "0_to_1_days",
        2..=3 => "2_to_3_days",
        _ => "4_or_more",
    }
}

fn ctrl2_bin(n: usize) -> &'static str {
    match n {
        0 => "0_nights",
        1..=2 => "1_to_2",
        _ => "3_or_more",
    }
}

fn hours(x: f64) -> Q {
    q(tenths(x), 10)
}

fn last<T>(xs: &[T], n: usize) -> &[T] {
    &xs[xs.len().saturating_sub(n)..]
}

/// Counts (matching, observed) entries of a daily stream.
fn count<T>(entries: &[DayEntry<T>], observe: impl Fn(&T) -> Option<bool>) -> (usize, usize) {
    let mut hit = 0;
    let mut seen = 0;
    for e in entries {
        if let Some(v) = e.record.as_ref().and_then(&observe) {
            seen += 1;
            hit += v as usize;
        }
    }
    (hit, seen)
}

fn rate_change<T>(entries: &[DayEntry<T>], value: impl Fn(&T) -> u32) -> Option<Q> {
    let half = |xs: &[DayEntry<T>]| {
        let (mut sum, mut seen) = (0i64, 0i64);
        for r in xs.iter().filter_map(|e| e.record.as_ref()) {
            sum += value(r) as i64;
            seen += 1;
        }
        (seen > 0).then(|| q(sum, seen))
    };
    Some(half(&entries[14..])? - half(&entries[..14])?)
}

fn share_or(hit: i64, of: i64, empty: &'static str, f: impl Fn(Q) -> &'static str) -> Option<&'static str> {
    Some(if of == 0 { empty } else { f(q(hit, of)) })
}

fn mixed(pos: usize, neg: usize, labels: [&'static str; 3]) -> Option<&'static str> {
    if pos + neg == 0 {
        return None;
    }
    Some(match mixed_split(pos, neg) {
        MixedOutcome::Positive => labels[0],
        MixedOutcome::Negative => labels[1],
        MixedOutcome::Both => labels[2],
    })
}

/// Readout of one (question, source) cell, ignoring the relevance map.
pub fn read_cell(question: &str, s: SourceId, st: &StreamSet) -> Option<&'static str> {
    use SourceId::*;
    let profile = st.profile();
    let planner = st.planner();
    let sr = st.self_report();
    let obj = st.objective();
    let dev = st.device();
    let window = 30;
    match (question, s) {
        ("A1", ProfileLtm) => profile?.sleep_mean_h.map(|h| match tenths(h) {
            70.. => "20_or_more",
            65..=69 => "10_to_19",
            _ => "fewer_than_10",
        }),
        ("A1", Planner) => {
            let (n, seen) = count(planner?, |r| r.sleep_goal_h.map(|g| tenths(g) >= 70));
            extrapolate(n, seen, window).map(a1_bin)
        }
        ("A1", DailySelfReport) => {
            let (n, seen) = count(sr?, |r| Some(tenths(r.sleep_h) >= 70));
            extrapolate(n, seen, window).map(a1_bin)
        }
        ("A1", DeviceLog) => {
            let (n, seen) = count(dev?, |r| Some(tenths(r.sleep_duration_h) >= 70));
            extrapolate(n, seen, window).map(a1_bin)
        }

        ("A2", ProfileLtm) => profile?
            .long_work_days_per_week
            .map(|w| a2_bin((tenths(w).max(0) as usize * window) / 70)),
        ("A2", Planner) => {
            let (n, seen) = count(planner?, |r| Some(r.work_cap_h.is_some_and(|c| tenths(c) > 90)));
            extrapolate(n, seen, window).map(a2_bin)
        }
        ("A2", DailySelfReport) => {
            let (n, seen) = count(sr?, |r| Some(tenths(r.work_hours) > 90));
            extrapolate(n, seen, window).map(a2_bin)
        }
        ("A2", ObjectiveLog) => {
            let (n, seen) = count(obj?, |r| r.timesheet_hours.map(|h| tenths(h) > 90));
            extrapolate(n, seen, window).map(a2_bin)
        }
        ("A2", DeviceLog) => {
            let (n, seen) = count(dev?, |r| r.work_session_minutes.map(|m| m > 540));
            extrapolate(n, seen, window).map(a2_bin)
        }

        ("A3", ProfileLtm) => {
            let p = profile?;
            let meals = tenths(p.meals_per_day?);
            let home = tenths(p.home_cooked_mean?);
            (meals > 0).then(|| a3_bin(q(home, meals)))
        }
        ("A3", Planner) => {
            let (n, seen) = count(planner?, |r| Some(r.home_cooked_priority));
            (seen > 0).then(|| a3_bin(q(n as i64, seen as i64)))
        }
        ("A3", DailySelfReport) => {
            let (mut home, mut meals) = (0i64, 0i64);
            for r in sr?.iter().filter_map(|e| e.record.as_ref()) {
                home += r.home_cooked as i64;
                meals += r.meals as i64;
            }
            (meals > 0).then(|| a3_bin(q(home, meals)))
        }
        ("A3", ObjectiveLog) => {
            // Delivery payments as an inverse proxy, assuming three meals a day.
            let (mut delivery, mut seen) = (0i64, 0i64);
            for r in obj?.iter().filter_map(|e| e.record.as_ref()) {
                delivery += r.delivery_purchases as i64;
                seen += 1;
            }
            (seen > 0).then(|| a3_bin(q((3 * seen - delivery).max(0), 3 * seen)))
        }

        ("B2", _) => {
            let Some(stated) = profile?.exercise_days_per_week.map(hours) else {
                return Some("no_frequency_described");
            };
            let per_week = |n: usize, seen: usize| (seen > 0).then(|| q(7 * n as i64, seen as i64));
            let observed = match s {
                ProfileLtm => return Some("within_1_day"),
                Planner => {
                    let (n, seen) = count(planner?, |r| Some(r.exercise_planned));
                    per_week(n, seen)
                }
                DailySelfReport => {
                    let (n, seen) = count(sr?, |r| Some(r.exercised_claim));
                    per_week(n, seen)
                }
                ObjectiveLog => {
                    let (n, seen) = count(obj?, |r| Some(r.gym_checkin));
                    per_week(n, seen)
                }
                DeviceLog => {
                    let (n, seen) = count(dev?, |r| Some(r.workout_detected));
                    per_week(n, seen)
                }
            }?;
            Some(b2_bin(observed - stated))
        }

        ("B3", _) => {
            let Some(style) = profile?.weekend_work_style else {
                return Some("no_approach_described");
            };
            let weekend = |d: &chrono::NaiveDate| is_weekend(*d);
            let (worked, seen) = match s {
                ProfileLtm => return Some("matches"),
                DailySelfReport => weekend_count(sr?, weekend, |r| Some(r.work_hours > 0.0)),
                ObjectiveLog => weekend_count(obj?, weekend, |r| r.timesheet_hours.map(|h| h > 0.0)),
                DeviceLog => weekend_count(dev?, weekend, |r| r.work_session_minutes.map(|m| m > 30)),
                Planner => return None,
            };
            (seen > 0).then(|| gt::weekend_style_match(style, worked as i64, seen as i64))
        }

        ("C2", _) => {
            let plans: Vec<bool> = last(planner?, 14)
                .iter()
                .map(|e| e.record.as_ref().is_some_and(|r| r.social_intent))
                .collect();
            if !plans.iter().any(|&p| p) {
                return Some("no_plans");
            }
            let on_plans = |hit: &dyn Fn(usize) -> Option<bool>| {
                let (mut n, mut seen) = (0i64, 0i64);
                for (i, _) in plans.iter().enumerate().filter(|(_, &p)| p) {
                    if let Some(v) = hit(i) {
                        seen += 1;
                        n += v as i64;
                    }
                }
                (seen > 0).then(|| gt::realization_bin(q(n, seen)))
            };
            match s {
                Planner => Some("above_50_pct"),
                DailySelfReport => {
                    let sr = last(sr?, 14);
                    on_plans(&|i| sr[i].record.as_ref().map(|r| r.social_events_claim > 0))
                }
                ObjectiveLog => {
                    let obj = last(obj?, 14);
                    on_plans(&|i| obj[i].record.as_ref().map(|r| r.social_purchases > 0))
                }
                _ => None,
            }
        }

        ("C3", _) => {
            let targets: Vec<Option<i32>> = last(planner?, 14)
                .iter()
                .map(|e| e.record.as_ref().and_then(|r| r.target_bedtime))
                .collect();
            if targets.iter().all(Option::is_none) {
                return Some("no_targets");
            }
            let actual: Vec<Option<i32>> = match s {
                DailySelfReport => last(sr?, 14).iter().map(|e| e.record.as_ref().map(|r| r.bedtime)).collect(),
                DeviceLog => last(dev?, 14).iter().map(|e| e.record.as_ref().map(|r| r.bedtime)).collect(),
                _ => return None,
            };
            let pairs: Vec<(i32, i32)> = targets
                .iter()
                .zip(&actual)
                .filter_map(|(t, a)| Some(((*t)?, (*a)?)))
                .collect();
            (!pairs.is_empty()).then(|| gt::bedtime_compliance(&pairs).0)
        }

        ("D1", Planner) => rate_change(planner?, |r| r.social_intent as u32).map(gt::trend_bin),
        ("D1", DailySelfReport) => rate_change(sr?, |r| r.social_events_claim).map(gt::trend_bin),
        ("D1", ObjectiveLog) => rate_change(obj?, |r| r.social_purchases).map(gt::trend_bin),

        ("D2", _) => {
            let p = profile?;
            let (Some(meals), Some(home)) = (p.meals_per_day, p.home_cooked_mean) else {
                return Some("no_baseline");
            };
            match s {
                ProfileLtm => Some("within_1"),
                DailySelfReport => {
                    let (mut m, mut h, mut n) = (0i64, 0i64, 0i64);
                    for r in sr?.iter().filter_map(|e| e.record.as_ref()) {
                        m += r.meals as i64;
                        h += r.home_cooked as i64;
                        n += 1;
                    }
                    if n == 0 {
                        return None;
                    }
                    let dev = (q(h, n) - hours(home)).abs_diff() + (q(m, n) - hours(meals)).abs_diff();
                    Some(if dev > q(1, 1) { "differs_more_than_1" } else { "within_1" })
                }
                _ => None,
            }
        }

        ("E1", _) => {
            // (late, work factor, social factor) per observed night.
            let nights: Vec<(bool, bool, bool)> = match s {
                Planner => planner?
                    .iter()
                    .filter_map(|e| e.record.as_ref())
                    .filter_map(|r| {
                        r.target_bedtime
                            .map(|t| (t > MIDNIGHT, r.work_cap_h.is_some_and(|c| tenths(c) > 85), r.social_intent))
                    })
                    .collect(),
                DailySelfReport => sr?
                    .iter()
                    .filter_map(|e| e.record.as_ref())
                    .map(|r| (r.bedtime > MIDNIGHT, tenths(r.work_hours) > 85, r.social_events_claim > 0))
                    .collect(),
                DeviceLog => dev?
                    .iter()
                    .filter_map(|e| e.record.as_ref())
                    .map(|r| (r.bedtime > MIDNIGHT, r.work_session_minutes.is_some_and(|m| m > 510), false))
                    .collect(),
                _ => return None,
            };
            if nights.is_empty() {
                return None;
            }
            let late: Vec<_> = nights.iter().filter(|n| n.0).collect();
            if late.is_empty() {
                return Some("no_late_nights");
            }
            let w = late.iter().filter(|n| n.1).count();
            let so = late.iter().filter(|n| n.2).count();
            Some(gt::late_night_factor(w, so, late.len()))
        }

        ("E2", _) => {
            let plans: Vec<bool> = planner?
                .iter()
                .map(|e| e.record.as_ref().is_some_and(|r| r.exercise_planned))
                .collect();
            // (skipped, busy) for each planned day this source observes.
            let days: Vec<(bool, bool)> = match s {
                Planner => return Some("between_30_60"),
                DailySelfReport => sr?
                    .iter()
                    .zip(&plans)
                    .filter(|(_, &p)| p)
                    .filter_map(|(e, _)| e.record.as_ref())
                    .map(|r| (!r.exercised_claim, tenths(r.work_hours) > 85))
                    .collect(),
                ObjectiveLog => obj?
                    .iter()
                    .zip(&plans)
                    .filter(|(_, &p)| p)
                    .filter_map(|(e, _)| e.record.as_ref())
                    .map(|r| (!r.gym_checkin, r.timesheet_hours.is_some_and(|h| tenths(h) > 85)))
                    .collect(),
                DeviceLog => dev?
                    .iter()
                    .zip(&plans)
                    .filter(|(_, &p)| p)
                    .filter_map(|(e, _)| e.record.as_ref())
                    .map(|r| (!r.workout_detected, r.work_session_minutes.is_some_and(|m| m > 510)))
                    .collect(),
                ProfileLtm => return None,
            };
            let skipped = days.iter().filter(|d| d.0).count() as i64;
            let busy = days.iter().filter(|d| d.0 && d.1).count() as i64;
            Some(gt::skip_reason_bin(busy, skipped))
        }

        ("F1", _) => {
            let intent: Vec<bool> = planner?
                .iter()
                .map(|e| e.record.as_ref().is_some_and(|r| r.social_intent))
                .collect();
            let social: Vec<Option<bool>> = match s {
                Planner => return Some("0_to_3"),
                DailySelfReport => sr?
                    .iter()
                    .map(|e| e.record.as_ref().map(|r| r.social_events_claim > 0))
                    .collect(),
                ObjectiveLog => obj?
                    .iter()
                    .map(|e| e.record.as_ref().map(|r| r.social_purchases > 0))
                    .collect(),
                _ => return None,
            };
            let seen = social.iter().flatten().count();
            if seen == 0 {
                return None;
            }
            if !social.contains(&Some(true)) {
                return Some("no_social_activities");
            }
            let unplanned = social
                .iter()
                .zip(&intent)
                .filter(|(x, &i)| **x == Some(true) && !i)
                .count();
            extrapolate(unplanned, seen, window).map(gt::unplanned_bin)
        }

        ("F2", _) => {
            let undetected: Vec<bool> = dev?
                .iter()
                .map(|e| !e.record.as_ref().is_some_and(|r| r.workout_detected))
                .collect();
            let evidence: Vec<Option<bool>> = match s {
                Planner => planner?
                    .iter()
                    .map(|e| e.record.as_ref().map(|r| r.exercise_planned))
                    .collect(),
                DailySelfReport => sr?.iter().map(|e| e.record.as_ref().map(|r| r.exercised_claim)).collect(),
                ObjectiveLog => obj?.iter().map(|e| e.record.as_ref().map(|r| r.gym_checkin)).collect(),
                DeviceLog => dev?
                    .iter()
                    .map(|e| e.record.as_ref().map(|r| r.active_minutes >= 30))
                    .collect(),
                ProfileLtm => return None,
            };
            let (mut pos, mut neg) = (0, 0);
            for (u, ev) in undetected.iter().zip(&evidence) {
                match (u, ev) {
                    (true, Some(true)) => pos += 1,
                    (true, Some(false)) => neg += 1,
                    _ => {}
                }
            }
            mixed(pos, neg, ["yes_tracker_missing", "inactive_confirmed", "both_occurred"])
        }

        ("F3", _) => {
            let missing: Vec<bool> = obj?
                .iter()
                .map(|e| e.record.as_ref().and_then(|r| r.timesheet_hours).is_none())
                .collect();
            if !missing.iter().any(|&m| m) {
                return Some("truly_off");
            }
            let evidence: Vec<Option<bool>> = match s {
                Planner => planner?
                    .iter()
                    .map(|e| e.record.as_ref().map(|r| r.work_cap_h.is_some()))
                    .collect(),
                DailySelfReport => sr?.iter().map(|e| e.record.as_ref().map(|r| r.work_hours > 0.0)).collect(),
                DeviceLog => dev?
                    .iter()
                    .map(|e| e.record.as_ref().and_then(|r| r.work_session_minutes).map(|m| m > 30))
                    .collect(),
                _ => return None,
            };
            let (mut pos, mut neg) = (0, 0);
            for (m, ev) in missing.iter().zip(&evidence) {
                match (m, ev) {
                    (true, Some(true)) => pos += 1,
                    (true, Some(false)) => neg += 1,
                    _ => {}
                }
            }
            mixed(pos, neg, ["yes_worked_despite_no_entry", "truly_off", "both_occurred"])
        }

        ("G1", _) => {
            let (deliberate, active) = match s {
                Planner => {
                    let (n, _) = count(planner?, |r| Some(r.exercise_planned));
                    (n, n)
                }
                DailySelfReport => {
                    let (n, _) = count(sr?, |r| Some(r.exercised_claim));
                    let (d, _) = count(sr?, |r| Some(r.exercise_intent_claim == Some(true)));
                    (d, n)
                }
                DeviceLog => {
                    let (n, _) = count(dev?, |r| Some(r.workout_detected || r.active_minutes >= 30));
                    let (d, _) = count(dev?, |r| Some(r.workout_detected));
                    (d, n)
                }
                _ => return None,
            };
            share_or(deliberate as i64, active as i64, "no_activity", |r| {
                gt::share_bin(r, "incidental_movement_70plus", "deliberate_exercise_70plus")
            })
        }

        ("G2", _) => {
            let (voluntary, social) = match s {
                Planner => {
                    let (n, _) = count(planner?, |r| Some(r.social_intent));
                    (n, n)
                }
                DailySelfReport => {
                    let (n, _) = count(sr?, |r| Some(r.social_events_claim > 0));
                    let (v, _) = count(sr?, |r| {
                        Some(r.social_events_claim > 0 && r.motivation_claim == Some(Motivation::Voluntary))
                    });
                    (v, n)
                }
                _ => return None,
            };
            share_or(voluntary as i64, social as i64, "no_meetings", |r| {
                gt::share_bin(r, "obligatory_70plus", "voluntary_70plus")
            })
        }

        ("Ctrl1", ProfileLtm) => {
            let p = profile?;
            let outside = (tenths(p.meals_per_day?) - tenths(p.home_cooked_mean?)).max(0) as usize;
            Some(ctrl1_bin((7 * outside / 10).min(7)))
        }
        ("Ctrl1", Planner) => {
            let (n, seen) = count(last(planner?, 7), |r| Some(!r.home_cooked_priority));
            extrapolate(n, seen, 7).map(ctrl1_bin)
        }
        ("Ctrl1", DailySelfReport) => {
            let (n, seen) = count(last(sr?, 7), |r| Some(r.meals > r.home_cooked));
            extrapolate(n, seen, 7).map(ctrl1_bin)
        }

        ("Ctrl2", Planner) => {
            let (n, seen) = count(last(planner?, 7), |r| r.sleep_goal_h.map(|g| tenths(g) < 60));
            extrapolate(n, seen, 7).map(ctrl2_bin)
        }
        ("Ctrl2", DailySelfReport) => {
            let (n, seen) = count(last(sr?, 7), |r| Some(tenths(r.sleep_h) < 60));
            extrapolate(n, seen, 7).map(ctrl2_bin)
        }
        ("Ctrl2", DeviceLog) => {
            let (n, seen) = count(last(dev?, 7), |r| Some(tenths(r.sleep_duration_h) < 60));
            extrapolate(n, seen, 7).map(ctrl2_bin)
        }

        _ => None,
    }
}

trait AbsDiff {
    fn abs_diff(self) -> Self;
}

impl AbsDiff for Q {
    fn abs_diff(self) -> Self {
        if self < Q::from_integer(0) {
            -self
        } else {
            self
        }
    }
}

fn weekend_count<T>(
    entries: &[DayEntry<T>],
    is_weekend: impl Fn(&chrono::NaiveDate) -> bool,
    observe: impl Fn(&T) -> Option<bool>,
) -> (usize, usize) {
    let (mut hit, mut seen) = (0, 0);
    for e in entries.iter().filter(|e| is_weekend(&e.date)) {
        if let Some(v) = e.record.as_ref().and_then(&observe) {
            seen += 1;
            hit += v as usize;
        }
    }
    (hit, seen)
}

pub fn readout_atoms(
    persona_id: &str,
    streams: &StreamSet,
    registry: &Registry,
    sqmap: &SourceQuestionMap,
) -> AtomTable {
    let mut table = AtomTable::empty(persona_id, registry.len());
    for (qi, spec) in registry.questions().iter().enumerate() {
        for s in SourceId::ALL {
            if !sqmap.is_mapped(&spec.id, s) {
                continue;
            }
            table.cells[qi][s.index()] = read_cell(&spec.id, s, streams)
                .and_then(|l| spec.label_index(l))
                .map(|i| i as u8);
        }
    }
    table
}

/// Replaces each non-null cell with probability `epsilon` by a label drawn
/// uniformly from the full answer space (the original label included).
pub fn inject_flip_noise(t: &AtomTable, registry: &Registry, epsilon: f64, seed: u64) -> Result<AtomTable> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("flip probability {epsilon} outside [0,1]")));
    }
    let mut r = rng::stream(seed, &[&t.persona_id, "flip"]);
    let mut out = t.clone();
    for (qi, row) in out.cells.iter_mut().enumerate() {
        let k = registry.get(qi).k();
        for cell in row.iter_mut() {
            if cell.is_none() {
                continue;
            }
            // Both variates are drawn for every cell so flips nest as ε grows.
            let u: f64 = r.random();
            let label = r.random_range(0..k) as u8;
            if u < epsilon {
                *cell = Some(label);
            }
        }
    }
    out.provenance = AtomProvenance::Noisy { epsilon, seed };
    Ok(out)
}

pub fn export_atom_bundle(t: &AtomTable, registry: &Registry) -> String {
    let mut root = Map::new();
    for (qi, spec) in registry.questions().iter().enumerate() {
        let mut row = Map::new();
        for s in SourceId::ALL {
            let v = match t.cells[qi][s.index()] {
                Some(i) => Value::String(spec.label(i as usize).to_string()),
                None => Value::Null,
            };
            row.insert(s.as_str().to_string(), v);
        }
        root.insert(spec.id.clone(), Value::Object(row));
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(root)).expect("bundle serializes");
    text.push('\n');
    text
}

pub fn parse_atom_bundle(
    text: &str,
    persona_id: &str,
    bundle_id: &str,
    registry: &Registry,
    sqmap: &SourceQuestionMap,
) -> std::result::Result<AtomTable, Vec<String>> {
    let root: Value = serde_json::from_str(text).map_err(|e| vec![format!("not valid JSON: {e}")])?;
    let Value::Object(root) = root else {
        return Err(vec!["top level must be an object keyed by question id".into()]);
    };
    let mut issues = Vec::new();
    let mut table = AtomTable::empty(persona_id, registry.len());
    for key in root.keys() {
        if registry.index_of(key).is_none() {
            issues.push(format!("unknown question {key}"));
        }
    }
    for (qi, spec) in registry.questions().iter().enumerate() {
        let Some(row) = root.get(&spec.id) else {
            issues.push(format!("{}: missing question", spec.id));
            continue;
        };
        let Value::Object(row) = row else {
            issues.push(format!("{}: expected an object of source keys", spec.id));
            continue;
        };
        for key in row.keys() {
            if SourceId::parse(key).is_err() {
                issues.push(format!("{}: unknown source {key}", spec.id));
            }
        }
        for s in SourceId::ALL {
            match row.get(s.as_str()) {
                None => issues.push(format!("{}.{}: missing source key", spec.id, s)),
                Some(Value::Null) => {}
                Some(Value::String(label)) => match spec.label_index(label) {
                    None => issues.push(format!("{}.{}: label {label:?} not in answer space", spec.id, s)),
                    Some(_) if !sqmap.is_mapped(&spec.id, s) => {
                        issues.push(format!("{}.{}: source is not mapped to this question", spec.id, s))
                    }
                    Some(i) => table.cells[qi][s.index()] = Some(i as u8),
                },
                Some(other) => issues.push(format!("{}.{}: expected a label or null, got {other}", spec.id, s)),
            }
        }
    }
    if issues.is_empty() {
        table.provenance = AtomProvenance::Replay {
            bundle_id: bundle_id.to_string(),
        };
        Ok(table)
    } else {
        Err(issues)
    }
}

/// Loads a bundle file; the persona id is the file stem.
pub fn import_atom_bundle(path: &Path, registry: &Registry, sqmap: &SourceQuestionMap) -> Result<AtomTable> {
    use sha2::{Digest, Sha256};
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let persona_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let digest = hex::encode(Sha256::digest(text.as_bytes()));
    let bundle_id = format!("{persona_id}@{}", &digest[..12]);
    parse_atom_bundle(&text, &persona_id, &bundle_id, registry, sqmap).map_err(|issues| Error::Bundle {
        path: path.display().to_string(),
        issues,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reachability {
    pub reachable: usize,
    pub instances: usize,
    pub rate: f64,
}

/// Whether any source atom of question `qi` equals `truth`.
pub fn is_reachable(t: &AtomTable, qi: usize, truth: u8) -> bool {
    t.cells[qi].contains(&Some(truth))
}

pub fn reachability(tables: &[AtomTable], labels: &LabelMap, registry: &Registry) -> Result<Reachability> {
    let mut reachable = 0;
    let mut instances = 0;
    for t in tables {
        let gt = labels
            .get(&t.persona_id)
            .ok_or_else(|| Error::Metric(format!("no labels for {}", t.persona_id)))?;
        for (qi, spec) in registry.questions().iter().enumerate() {
            let truth = spec.require_label(&gt[&spec.id].answer)? as u8;
            instances += 1;
            reachable += is_reachable(t, qi, truth) as usize;
        }
    }
    Ok(Reachability {
        reachable,
        instances,
        rate: if instances == 0 { 0.0 } else { reachable as f64 / instances as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_cohort, DgpConfig};
    use crate::ground_truth::compute_all_labels;

    fn reg() -> Registry {
        Registry::builtin()
    }

    #[test]
    fn default_map_shape() {
        let m = SourceQuestionMap::default();
        m.validate(&reg()).unwrap();
        for diet in ["A3", "D2", "Ctrl1"] {
            assert!(!m.is_mapped(diet, SourceId::DeviceLog));
        }
        assert!(m.is_mapped("A1", SourceId::DeviceLog));
        assert!(!m.is_mapped("C3", SourceId::Planner));
    }

    #[test]
    fn unmapped_pairs_stay_null() {
        let cohort = generate_cohort(&DgpConfig {
            n_personas: 60,
            ..Default::default()
        })
        .unwrap();
        let r = reg();
        let m = SourceQuestionMap::default();
        for p in &cohort.personas {
            let t = readout_atoms(&p.traits.persona_id, &p.streams, &r, &m);
            for (qi, spec) in r.questions().iter().enumerate() {
                for s in SourceId::ALL {
                    if !m.is_mapped(&spec.id, s) {
                        assert_eq!(t.get(qi, s), None);
                    }
                }
            }
        }
    }

    #[test]
    fn flip_noise_identities() {
        let r = reg();
        let mut t = AtomTable::empty("p", r.len());
        for row in t.cells.iter_mut() {
            row[0] = Some(0);
            row[1] = Some(1);
        }
        let same = inject_flip_noise(&t, &r, 0.0, 1).unwrap();
        assert_eq!(same.cells, t.cells);
        assert!(inject_flip_noise(&t, &r, 1.5, 1).is_err());
        let noisy = inject_flip_noise(&t, &r, 1.0, 1).unwrap();
        for (a, b) in noisy.cells.iter().zip(&t.cells) {
            assert_eq!(a[2..], b[2..]);
        }
    }

    #[test]
    fn full_flip_keeps_one_in_k() {
        let r = reg();
        let a1 = r.index_of("A1").unwrap();
        let (mut same, mut total) = (0, 0);
        for i in 0..4000 {
            let mut t = AtomTable::empty(format!("p{i}"), r.len());
            t.cells[a1] = [Some(1); 5];
            let n = inject_flip_noise(&t, &r, 1.0, 7).unwrap();
            same += n.cells[a1].iter().filter(|c| **c == Some(1)).count();
            total += 5;
        }
        let rate = same as f64 / total as f64;
        assert!((rate - 1.0 / 3.0).abs() < 0.03, "{rate}");
    }

    #[test]
    fn bundle_round_trip_and_validation() {
        let r = reg();
        let m = SourceQuestionMap::default();
        let cohort = generate_cohort(&DgpConfig {
            n_personas: 60,
            ..Default::default()
        })
        .unwrap();
        let p = &cohort.personas[0];
        let t = readout_atoms(&p.traits.persona_id, &p.streams, &r, &m);
        let text = export_atom_bundle(&t, &r);
        let back = parse_atom_bundle(&text, &t.persona_id, "b", &r, &m).unwrap();
        assert_eq!(back.cells, t.cells);
        assert_eq!(export_atom_bundle(&back, &r), text);

        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["A1"]["device_log"] = Value::String("20 or more".into());
        let issues = parse_atom_bundle(&v.to_string(), "p", "b", &r, &m).unwrap_err();
        assert!(issues.iter().any(|i| i.contains("20 or more")), "{issues:?}");

        v.as_object_mut().unwrap().remove("B2");
        let issues = parse_atom_bundle(&v.to_string(), "p", "b", &r, &m).unwrap_err();
        assert_eq!(issues.len(), 2, "{issues:?}");
    }

    #[test]
    fn minimal_bundle_has_one_cell() {
        let r = reg();
        let m = SourceQuestionMap::default();
        let mut t = AtomTable::empty("p", r.len());
        t.cells[0][SourceId::DeviceLog.index()] = Some(2);
        let text = export_atom_bundle(&t, &r);
        let back = parse_atom_bundle(&text, "p", "b", &r, &m).unwrap();
        let n: usize = (0..r.len()).map(|q| back.non_null(q)).sum();
        assert_eq!(n, 1);
        assert_eq!(back.get(0, SourceId::DeviceLog), Some(2));
    }

    #[test]
    fn all_null_table_is_unreachable() {
        let t = AtomTable::empty("p", 18);
        assert!(!is_reachable(&t, 0, 0));
    }

    #[test]
    fn walked_self_report_ratio_bins_high() {
        assert_eq!(a3_bin(q(67, 93)), "70_or_more");
        assert_eq!(a3_bin(q(52, 92)), "40_to_69");
    }

    #[test]
    fn objective_readout_matches_truth_away_from_boundaries() {
        let cohort = generate_cohort(&DgpConfig::with_seed(3)).unwrap();
        let r = reg();
        let labels = compute_all_labels(&cohort, &r).unwrap();
        let mut checked = 0;
        for p in &cohort.personas {
            let obj = p.streams.objective().unwrap();
            let full = obj.iter().all(|e| e.record.as_ref().is_some_and(|r| r.timesheet_hours.is_some()));
            let clear = p.events.days.iter().all(|d| (tenths(d.work_hours) - 90).abs() > 3);
            if full && clear {
                let atom = read_cell("A2", SourceId::ObjectiveLog, &p.streams).unwrap();
                assert_eq!(atom, labels[&p.traits.persona_id]["A2"].answer);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn reachability_rate_in_expected_band() {
        let cohort = generate_cohort(&DgpConfig::with_seed(1)).unwrap();
        let r = reg();
        let m = SourceQuestionMap::default();
        let labels = compute_all_labels(&cohort, &r).unwrap();
        let tables: Vec<AtomTable> = cohort
            .personas
            .iter()
            .map(|p| readout_atoms(&p.traits.persona_id, &p.streams, &r, &m))
            .collect();
        let rate = reachability(&tables, &labels, &r).unwrap().rate;
        assert!((0.85..=0.99).contains(&rate), "{rate}");
    }
}

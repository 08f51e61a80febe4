//! Deterministic label functions, one per question template.
//!
//! Ratios are compared as exact rationals over counts and hour thresholds on
//! the one-decimal grid, so labels never depend on float rounding.

use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::Signed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{
    tenths, Cohort, ContextTag, DayEntry, LatentEventTable, Motivation, StreamAccess, StreamSet, WeekendStyle,
    MIDNIGHT,
};
use crate::error::{Error, Result};
use crate::schema::{QuestionSpec, Registry, SourceId};

type Q = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtLabel {
    pub question_id: String,
    pub answer: String,
    pub derivation_detail: String,
}

/// persona id → question id → label.
pub type LabelMap = BTreeMap<String, BTreeMap<String, GtLabel>>;

fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

fn hours(x: f64) -> Q {
    Q::new(tenths(x), 10)
}

fn last<T>(days: &[T], n: usize) -> &[T] {
    &days[days.len().saturating_sub(n)..]
}

/// Three-way split used by F2 and F3: both kinds present with neither more
/// than twice the other is "mixed"; otherwise the larger side wins, ties to
/// the negative side.
pub fn mixed_split(positive: usize, negative: usize) -> MixedOutcome {
    if positive > 0 && negative > 0 && positive <= 2 * negative && negative <= 2 * positive {
        MixedOutcome::Both
    } else if positive > negative {
        MixedOutcome::Positive
    } else {
        MixedOutcome::Negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixedOutcome {
    Positive,
    Negative,
    Both,
}

fn need<'a, T: ?Sized>(q: &QuestionSpec, s: SourceId, x: Option<&'a T>) -> Result<&'a T> {
    x.ok_or_else(|| Error::MissingStream {
        question: q.id.clone(),
        stream: s,
    })
}

fn planned<T>(entries: &[DayEntry<T>]) -> impl Iterator<Item = Option<&T>> {
    entries.iter().map(|e| e.record.as_ref())
}

pub fn compute_label(spec: &QuestionSpec, ev: &LatentEventTable, streams: &StreamSet) -> Result<GtLabel> {
    let days = &ev.days;
    let (answer, detail): (&str, String) = match spec.id.as_str() {
        "A1" => {
            let n = days.iter().filter(|d| tenths(d.sleep_duration_h) >= 70).count();
            let a = match n {
                20.. => "20_or_more",
                10..=19 => "10_to_19",
                _ => "fewer_than_10",
            };
            (a, format!("nights_ge_7h={n}"))
        }
        "A2" => {
            let n = days.iter().filter(|d| tenths(d.work_hours) > 90).count();
            let a = match n {
                8.. => "8_or_more",
                4..=7 => "4_to_7",
                _ => "0_to_3",
            };
            (a, format!("days_gt_9h={n}"))
        }
        "A3" => {
            let home: i64 = days.iter().map(|d| d.meals_home as i64).sum();
            let total: i64 = days.iter().map(|d| d.meals_total as i64).sum();
            let r = q(home, total.max(1));
            let a = if r >= q(7, 10) {
                "70_or_more"
            } else if r >= q(2, 5) {
                "40_to_69"
            } else {
                "less_than_40"
            };
            (
                a,
                format!("home={home}/total={total} ratio={:.3}", home as f64 / total.max(1) as f64),
            )
        }
        "B2" => {
            let profile = need(spec, SourceId::ProfileLtm, streams.profile())?;
            match profile.exercise_days_per_week {
                None => ("no_frequency_described", "profile frequency absent".into()),
                Some(stated) => {
                    let n = days.iter().filter(|d| d.exercised).count() as i64;
                    let actual = q(7 * n, days.len() as i64);
                    let diff = actual - hours(stated);
                    let a = if diff < q(-1, 1) {
                        "more_than_1_below"
                    } else if diff > q(1, 1) {
                        "more_than_1_above"
                    } else {
                        "within_1_day"
                    };
                    (a, format!("actual={n}*7/{} profile={stated}", days.len()))
                }
            }
        }
        "B3" => {
            let profile = need(spec, SourceId::ProfileLtm, streams.profile())?;
            match profile.weekend_work_style {
                None => ("no_approach_described", "profile style absent".into()),
                Some(style) => {
                    let weekend = days.iter().filter(|d| d.is_weekend).count() as i64;
                    let worked = days.iter().filter(|d| d.is_weekend && d.worked()).count() as i64;
                    let a = weekend_style_match(style, worked, weekend);
                    (a, format!("style={} weekend_worked={worked}/{weekend}", style.as_str()))
                }
            }
        }
        "C2" => {
            let planner = need(spec, SourceId::Planner, streams.planner())?;
            let mut plans = 0i64;
            let mut realized = 0i64;
            for (d, p) in last(days, 14).iter().zip(planned(last(planner, 14))) {
                if p.is_some_and(|p| p.social_intent) {
                    plans += 1;
                    realized += (d.social_events > 0) as i64;
                }
            }
            if plans == 0 {
                ("no_plans", "no planned social days".into())
            } else {
                (realization_bin(q(realized, plans)), format!("realized={realized}/planned={plans}"))
            }
        }
        "C3" => {
            let planner = need(spec, SourceId::Planner, streams.planner())?;
            let pairs: Vec<(i32, i32)> = last(days, 14)
                .iter()
                .zip(planned(last(planner, 14)))
                .filter_map(|(d, p)| p.and_then(|p| p.target_bedtime).map(|t| (t, d.bedtime)))
                .collect();
            if pairs.is_empty() {
                ("no_targets", "no target bedtimes".into())
            } else {
                let (a, later, earlier) = bedtime_compliance(&pairs);
                (a, format!("paired={} later={later} earlier={earlier}", pairs.len()))
            }
        }
        "D1" => {
            let early: i64 = days[..14].iter().map(|d| d.social_events as i64).sum();
            let late: i64 = days[14..].iter().map(|d| d.social_events as i64).sum();
            let change = q(late, (days.len() - 14) as i64) - q(early, 14);
            (trend_bin(change), format!("early={early}/14 late={late}/{}", days.len() - 14))
        }
        "D2" => {
            let profile = need(spec, SourceId::ProfileLtm, streams.profile())?;
            match (profile.meals_per_day, profile.home_cooked_mean) {
                (Some(meals), Some(home)) => {
                    let n = days.len() as i64;
                    let m: i64 = days.iter().map(|d| d.meals_total as i64).sum();
                    let h: i64 = days.iter().map(|d| d.meals_home as i64).sum();
                    let dev = (q(h, n) - hours(home)).abs() + (q(m, n) - hours(meals)).abs();
                    let a = if dev > q(1, 1) { "differs_more_than_1" } else { "within_1" };
                    (a, format!("home={h}/{n} vs {home} meals={m}/{n} vs {meals}"))
                }
                _ => ("no_baseline", "profile diet baseline absent".into()),
            }
        }
        "E1" => {
            let late: Vec<_> = days.iter().filter(|d| d.bedtime > MIDNIGHT).collect();
            if late.is_empty() {
                ("no_late_nights", "no nights after midnight".into())
            } else {
                let w = late.iter().filter(|d| d.has_tag(ContextTag::WorkStress)).count();
                let s = late.iter().filter(|d| d.has_tag(ContextTag::Social)).count();
                (
                    late_night_factor(w, s, late.len()),
                    format!("late={} work_stress={w} social={s}", late.len()),
                )
            }
        }
        "E2" => {
            let planner = need(spec, SourceId::Planner, streams.planner())?;
            let skipped: Vec<_> = days
                .iter()
                .zip(planned(planner))
                .filter(|(d, p)| p.is_some_and(|p| p.exercise_planned) && !d.exercised)
                .map(|(d, _)| d)
                .collect();
            let busy = skipped
                .iter()
                .filter(|d| tenths(d.work_hours) > 85 || d.overtime)
                .count() as i64;
            let k = skipped.len() as i64;
            (skip_reason_bin(busy, k), format!("skipped={k} busy={busy}"))
        }
        "F1" => {
            let planner = need(spec, SourceId::Planner, streams.planner())?;
            let social = days.iter().filter(|d| d.social_events > 0).count();
            if social == 0 {
                ("no_social_activities", "no social days".into())
            } else {
                let n = days
                    .iter()
                    .zip(planned(planner))
                    .filter(|(d, p)| d.social_events > 0 && !p.is_some_and(|p| p.social_intent))
                    .count();
                (unplanned_bin(n), format!("social_days={social} unplanned={n}"))
            }
        }
        "F2" => {
            let device = need(spec, SourceId::DeviceLog, streams.device())?;
            let (mut missing, mut inactive) = (0, 0);
            for (d, e) in days.iter().zip(device) {
                if !e.record.as_ref().is_some_and(|r| r.workout_detected) {
                    if d.exercised {
                        missing += 1;
                    } else {
                        inactive += 1;
                    }
                }
            }
            let a = match mixed_split(missing, inactive) {
                MixedOutcome::Both => "both_occurred",
                MixedOutcome::Positive => "yes_tracker_missing",
                MixedOutcome::Negative => "inactive_confirmed",
            };
            (a, format!("undetected_exercise={missing} inactive={inactive}"))
        }
        "F3" => {
            let objective = need(spec, SourceId::ObjectiveLog, streams.objective())?;
            let (mut worked, mut off) = (0, 0);
            for (d, e) in days.iter().zip(objective) {
                if e.record.as_ref().and_then(|r| r.timesheet_hours).is_none() {
                    if d.worked() {
                        worked += 1;
                    } else {
                        off += 1;
                    }
                }
            }
            let a = match mixed_split(worked, off) {
                MixedOutcome::Both => "both_occurred",
                MixedOutcome::Positive => "yes_worked_despite_no_entry",
                MixedOutcome::Negative => "truly_off",
            };
            (a, format!("no_record_worked={worked} no_record_off={off}"))
        }
        "G1" => {
            let active = days.iter().filter(|d| d.exercised).count() as i64;
            let intentional = days.iter().filter(|d| d.exercise_intentional).count() as i64;
            let a = if active == 0 {
                "no_activity"
            } else {
                share_bin(q(intentional, active), "incidental_movement_70plus", "deliberate_exercise_70plus")
            };
            (a, format!("intentional={intentional}/active={active}"))
        }
        "G2" => {
            let social: Vec<_> = days.iter().filter(|d| d.social_events > 0).collect();
            let voluntary = social
                .iter()
                .filter(|d| !d.social_motivations.contains(&Motivation::SupportingOther))
                .count() as i64;
            let n = social.len() as i64;
            let a = if n == 0 {
                "no_meetings"
            } else {
                share_bin(q(voluntary, n), "obligatory_70plus", "voluntary_70plus")
            };
            (a, format!("voluntary={voluntary}/social_days={n}"))
        }
        "Ctrl1" => {
            let n = last(days, 7).iter().filter(|d| d.meals_total > d.meals_home).count();
            let a = match n {
                0..=1 => "0_to_1_days",
                2..=3 => "2_to_3_days",
                _ => "4_or_more",
            };
            (a, format!("outside_days={n}/7"))
        }
        "Ctrl2" => {
            let n = last(days, 7).iter().filter(|d| tenths(d.sleep_duration_h) < 60).count();
            let a = match n {
                0 => "0_nights",
                1..=2 => "1_to_2",
                _ => "3_or_more",
            };
            (a, format!("short_nights={n}/7"))
        }
        other => {
            return Err(Error::InvalidQuestion {
                question: other.to_string(),
                message: "no label function registered".into(),
            })
        }
    };
    spec.require_label(answer)?;
    Ok(GtLabel {
        question_id: spec.id.clone(),
        answer: answer.to_string(),
        derivation_detail: detail,
    })
}

pub(crate) fn weekend_style_match(style: WeekendStyle, worked: i64, weekend: i64) -> &'static str {
    let ok = match style {
        WeekendStyle::StrictBoundary => worked * 20 <= 3 * weekend,
        WeekendStyle::Flexible => !(worked == 0 && weekend >= 4),
        WeekendStyle::Mixed => 2 * worked < weekend,
    };
    if ok {
        "matches"
    } else {
        "does_not_match"
    }
}

pub(crate) fn realization_bin(share: Q) -> &'static str {
    if share > q(1, 2) {
        "above_50_pct"
    } else if share >= q(1, 4) {
        "25_to_50_pct"
    } else {
        "below_25_pct"
    }
}

/// Returns (label, later count, earlier count) over (target, actual) pairs.
pub(crate) fn bedtime_compliance(pairs: &[(i32, i32)]) -> (&'static str, usize, usize) {
    let later = pairs.iter().filter(|(t, b)| b - t > 20).count();
    let earlier = pairs.iter().filter(|(t, b)| t - b > 20).count();
    let a = if 2 * later > pairs.len() {
        "later_more_than_50pct"
    } else if 2 * earlier > pairs.len() {
        "earlier_more_than_50pct"
    } else {
        "within_20min_more_than_50pct"
    };
    (a, later, earlier)
}

pub(crate) fn trend_bin(change: Q) -> &'static str {
    if change > q(3, 20) {
        "increased"
    } else if change < q(-3, 20) {
        "decreased"
    } else {
        "stayed_same"
    }
}

pub(crate) fn late_night_factor(work: usize, social: usize, nights: usize) -> &'static str {
    let w = 2 * work > nights;
    let s = 2 * social > nights;
    match (w, s) {
        (true, true) if social > work => "social_activity",
        (true, _) => "work_activity",
        (false, true) => "social_activity",
        (false, false) => "no_single_factor",
    }
}

pub(crate) fn skip_reason_bin(busy: i64, skipped: i64) -> &'static str {
    if skipped <= 2 {
        return "between_30_60";
    }
    let share = q(busy, skipped);
    if share > q(3, 5) {
        "yes_more_than_60"
    } else if share < q(3, 10) {
        "no_fewer_than_30"
    } else {
        "between_30_60"
    }
}

pub(crate) fn unplanned_bin(n: usize) -> &'static str {
    match n {
        0..=3 => "0_to_3",
        4..=6 => "4_to_6",
        _ => "7_or_more",
    }
}

pub(crate) fn share_bin(share: Q, low: &'static str, high: &'static str) -> &'static str {
    if share > q(7, 10) {
        high
    } else if share < q(3, 10) {
        low
    } else {
        "mix"
    }
}

pub fn compute_persona_labels(
    registry: &Registry,
    ev: &LatentEventTable,
    streams: &StreamSet,
) -> Result<BTreeMap<String, GtLabel>> {
    registry
        .questions()
        .iter()
        .map(|spec| compute_label(spec, ev, streams).map(|l| (spec.id.clone(), l)))
        .collect()
}

pub fn compute_all_labels(cohort: &Cohort, registry: &Registry) -> Result<LabelMap> {
    cohort
        .personas
        .par_iter()
        .map(|p| {
            compute_persona_labels(registry, &p.events, &p.streams).map(|l| (p.traits.persona_id.clone(), l))
        })
        .collect()
}

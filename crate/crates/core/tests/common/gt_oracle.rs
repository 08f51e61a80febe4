//! Second implementation of the 18 label rules, written against the
//! serialized event and source JSON only.

use std::collections::BTreeMap;

use serde_json::Value;

fn t10(v: &Value) -> i64 {
    (v.as_f64().expect("number") * 10.0).round() as i64
}

fn int(v: &Value) -> i64 {
    v.as_i64().expect("integer")
}

fn flag(v: &Value) -> bool {
    v.as_bool().unwrap_or(false)
}

/// Source entries keyed by date; `None` for days without a record.
fn by_date(stream: &Value) -> BTreeMap<String, Option<Value>> {
    stream["payload"]["entries"]
        .as_array()
        .expect("day entries")
        .iter()
        .map(|e| {
            let rec = e.get("record").filter(|r| !r.is_null()).cloned();
            (e["date"].as_str().unwrap().to_string(), rec)
        })
        .collect()
}

fn mixed<'a>(pos: i64, neg: i64, both: &'a str, p: &'a str, n: &'a str) -> &'a str {
    if pos > 0 && neg > 0 && pos.max(neg) <= 2 * pos.min(neg) {
        both
    } else if pos > neg {
        p
    } else {
        n
    }
}

fn count_bin(n: usize, first_max: usize, second_max: usize, labels: [&str; 3]) -> &str {
    if n <= first_max {
        labels[0]
    } else if n <= second_max {
        labels[1]
    } else {
        labels[2]
    }
}

/// question id → answer for one persona. `sources` maps source name to
/// the serialized stream.
pub fn labels(events: &Value, sources: &BTreeMap<String, Value>) -> BTreeMap<String, String> {
    let days: Vec<&Value> = events["days"].as_array().unwrap().iter().collect();
    let n = days.len();
    let tail = |k: usize| &days[n - k..];
    let profile = &sources["profile_ltm"]["payload"]["entries"];
    let planner = by_date(&sources["planner"]);
    let device = by_date(&sources["device_log"]);
    let objective = by_date(&sources["objective_log"]);
    let plan = |d: &Value| planner.get(d["date"].as_str().unwrap()).cloned().flatten();
    let mut out = BTreeMap::new();
    let mut put = |k: &str, v: &str| {
        out.insert(k.to_string(), v.to_string());
    };

    let a1 = days.iter().filter(|d| t10(&d["sleep_duration_h"]) >= 70).count();
    put("A1", count_bin(a1, 9, 19, ["fewer_than_10", "10_to_19", "20_or_more"]));

    let a2 = days.iter().filter(|d| t10(&d["work_hours"]) > 90).count();
    put("A2", count_bin(a2, 3, 7, ["0_to_3", "4_to_7", "8_or_more"]));

    let home: i64 = days.iter().map(|d| int(&d["meals_home"])).sum();
    let meals: i64 = days.iter().map(|d| int(&d["meals_total"])).sum();
    put(
        "A3",
        if meals > 0 && 10 * home >= 7 * meals {
            "70_or_more"
        } else if meals > 0 && 10 * home >= 4 * meals {
            "40_to_69"
        } else {
            "less_than_40"
        },
    );

    put(
        "B2",
        match profile.get("exercise_days_per_week").filter(|v| !v.is_null()) {
            None => "no_frequency_described",
            Some(stated) => {
                // 7·active/n − stated, scaled by 10n
                let ex = days.iter().filter(|d| flag(&d["exercised"])).count() as i64;
                let diff = 70 * ex - t10(stated) * n as i64;
                if diff < -10 * n as i64 {
                    "more_than_1_below"
                } else if diff > 10 * n as i64 {
                    "more_than_1_above"
                } else {
                    "within_1_day"
                }
            }
        },
    );

    put(
        "B3",
        match profile.get("weekend_work_style").and_then(|v| v.as_str()) {
            None => "no_approach_described",
            Some(style) => {
                let weekend: Vec<_> = days.iter().filter(|d| flag(&d["is_weekend"])).collect();
                let off = weekend.len() as i64;
                let worked = weekend.iter().filter(|d| d["work_hours"].as_f64().unwrap() > 0.0).count() as i64;
                let ok = match style {
                    "strict_boundary" => 100 * worked <= 15 * off,
                    "flexible" => !(worked == 0 && off >= 4),
                    _ => 100 * worked < 50 * off,
                };
                if ok {
                    "matches"
                } else {
                    "does_not_match"
                }
            }
        },
    );

    let (mut planned, mut met) = (0i64, 0i64);
    for d in tail(14) {
        if plan(d).is_some_and(|r| flag(&r["social_intent"])) {
            planned += 1;
            met += (int(&d["social_events"]) >= 1) as i64;
        }
    }
    put(
        "C2",
        if planned == 0 {
            "no_plans"
        } else if 2 * met > planned {
            "above_50_pct"
        } else if 4 * met >= planned {
            "25_to_50_pct"
        } else {
            "below_25_pct"
        },
    );

    let pairs: Vec<(i64, i64)> = tail(14)
        .iter()
        .filter_map(|d| {
            let target = plan(d)?.get("target_bedtime").filter(|v| !v.is_null()).map(int)?;
            Some((target, int(&d["bedtime"])))
        })
        .collect();
    let late = pairs.iter().filter(|(t, b)| b - t > 20).count();
    let early = pairs.iter().filter(|(t, b)| t - b > 20).count();
    put(
        "C3",
        if pairs.is_empty() {
            "no_targets"
        } else if 2 * late > pairs.len() {
            "later_more_than_50pct"
        } else if 2 * early > pairs.len() {
            "earlier_more_than_50pct"
        } else {
            "within_20min_more_than_50pct"
        },
    );

    let first: i64 = days[..14].iter().map(|d| int(&d["social_events"])).sum();
    let last: i64 = days[14..].iter().map(|d| int(&d["social_events"])).sum();
    let rest = (n - 14) as i64;
    // (last/rest − first/14) against ±3/20, cleared of denominators
    let lhs = 20 * (14 * last - rest * first);
    let bound = 3 * 14 * rest;
    put(
        "D1",
        if lhs > bound {
            "increased"
        } else if lhs < -bound {
            "decreased"
        } else {
            "stayed_same"
        },
    );

    let base_meals = profile.get("meals_per_day").filter(|v| !v.is_null());
    let base_home = profile.get("home_cooked_mean").filter(|v| !v.is_null());
    put(
        "D2",
        match (base_meals, base_home) {
            (Some(bm), Some(bh)) => {
                let nn = n as i64;
                let dev = (10 * home - t10(bh) * nn).abs() + (10 * meals - t10(bm) * nn).abs();
                if dev > 10 * nn {
                    "differs_more_than_1"
                } else {
                    "within_1"
                }
            }
            _ => "no_baseline",
        },
    );

    let late_nights: Vec<_> = days.iter().filter(|d| int(&d["bedtime"]) > 720).collect();
    let tagged = |tag: &str| {
        late_nights
            .iter()
            .filter(|d| d["context_tags"].as_array().unwrap().iter().any(|t| t == tag))
            .count()
    };
    let (w, s, ln) = (tagged("work_stress"), tagged("social"), late_nights.len());
    put(
        "E1",
        if ln == 0 {
            "no_late_nights"
        } else {
            match (2 * w > ln, 2 * s > ln) {
                (true, true) => {
                    if s > w {
                        "social_activity"
                    } else {
                        "work_activity"
                    }
                }
                (true, false) => "work_activity",
                (false, true) => "social_activity",
                (false, false) => "no_single_factor",
            }
        },
    );

    let skipped: Vec<_> = days
        .iter()
        .filter(|d| plan(d).is_some_and(|r| flag(&r["exercise_planned"])) && !flag(&d["exercised"]))
        .collect();
    let k = skipped.len() as i64;
    let busy = skipped
        .iter()
        .filter(|d| t10(&d["work_hours"]) > 85 || flag(&d["overtime"]))
        .count() as i64;
    put(
        "E2",
        if k <= 2 {
            "between_30_60"
        } else if 100 * busy > 60 * k {
            "yes_more_than_60"
        } else if 100 * busy < 30 * k {
            "no_fewer_than_30"
        } else {
            "between_30_60"
        },
    );

    let social: Vec<_> = days.iter().filter(|d| int(&d["social_events"]) > 0).collect();
    let unplanned = social
        .iter()
        .filter(|d| !plan(d).is_some_and(|r| flag(&r["social_intent"])))
        .count();
    put(
        "F1",
        if social.is_empty() {
            "no_social_activities"
        } else {
            count_bin(unplanned, 3, 6, ["0_to_3", "4_to_6", "7_or_more"])
        },
    );

    let (mut miss, mut idle) = (0, 0);
    for d in &days {
        let seen = device
            .get(d["date"].as_str().unwrap())
            .cloned()
            .flatten()
            .is_some_and(|r| flag(&r["workout_detected"]));
        if !seen {
            if flag(&d["exercised"]) {
                miss += 1;
            } else {
                idle += 1;
            }
        }
    }
    put("F2", mixed(miss, idle, "both_occurred", "yes_tracker_missing", "inactive_confirmed"));

    let (mut worked, mut off) = (0, 0);
    for d in &days {
        let has = objective
            .get(d["date"].as_str().unwrap())
            .cloned()
            .flatten()
            .is_some_and(|r| r.get("timesheet_hours").is_some_and(|h| !h.is_null()));
        if !has {
            if d["work_hours"].as_f64().unwrap() > 0.0 {
                worked += 1;
            } else {
                off += 1;
            }
        }
    }
    put("F3", mixed(worked, off, "both_occurred", "yes_worked_despite_no_entry", "truly_off"));

    let active: Vec<_> = days.iter().filter(|d| flag(&d["exercised"])).collect();
    let deliberate = active.iter().filter(|d| flag(&d["exercise_intentional"])).count() as i64;
    let na = active.len() as i64;
    put(
        "G1",
        if na == 0 {
            "no_activity"
        } else if 10 * deliberate > 7 * na {
            "deliberate_exercise_70plus"
        } else if 10 * deliberate < 3 * na {
            "incidental_movement_70plus"
        } else {
            "mix"
        },
    );

    let ns = social.len() as i64;
    let voluntary = social
        .iter()
        .filter(|d| !d["social_motivations"].as_array().unwrap().iter().any(|m| m == "supporting_other"))
        .count() as i64;
    put(
        "G2",
        if ns == 0 {
            "no_meetings"
        } else if 10 * voluntary > 7 * ns {
            "voluntary_70plus"
        } else if 10 * voluntary < 3 * ns {
            "obligatory_70plus"
        } else {
            "mix"
        },
    );

    let outside = tail(7)
        .iter()
        .filter(|d| int(&d["meals_total"]) > int(&d["meals_home"]))
        .count();
    put("Ctrl1", count_bin(outside, 1, 3, ["0_to_1_days", "2_to_3_days", "4_or_more"]));

    let short = tail(7).iter().filter(|d| t10(&d["sleep_duration_h"]) < 60).count();
    put("Ctrl2", count_bin(short, 0, 2, ["0_nights", "1_to_2", "3_or_more"]));

    out
}

//! Deterministic template rendering of a persona's streams into a five-section
//! memory document, and the exact inverse parser.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::dgp::{
    format_clock, parse_bedtime, DayEntry, DeviceDay, Motivation, ObjectiveDay, PlannerDay, ProfileRecord,
    SelfReportDay, SourcePayload, SourceStream, StreamAccess, StreamSet, WeekendStyle,
};
use crate::error::{Error, Result};
use crate::schema::SourceId;

pub const TEMPLATE_VERSION: &str = "memory-templates-v1";

pub const HEADINGS: [&str; 5] = [
    "Long-Term Background and Habits",
    "Plans and Intentions",
    "Daily Self-Reports",
    "Objective Records",
    "Device and Activity Records",
];

const UNAVAILABLE: &str = "Records unavailable.";
const NO_PROFILE: &str = "No background details recorded.";
const NO_PLANS: &str = "No specific plans.";
/// Calendar work blocks are rendered as starting at 09:00.
const CALENDAR_START: i32 = 9 * 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryDocument {
    pub persona_id: String,
    pub sections: Vec<Section>,
}

impl MemoryDocument {
    pub fn to_markdown(&self) -> String {
        let mut out = format!("# Memory of {}\n", self.persona_id);
        for s in &self.sections {
            out.push_str(&format!("\n## {}\n", s.heading));
            for l in &s.lines {
                out.push_str(&format!("- {l}\n"));
            }
        }
        out
    }
}

fn plural(n: u32, one: &str, many: &str) -> String {
    format!("{n} {}", if n == 1 { one } else { many })
}

fn clock(minutes: i32) -> String {
    let m = minutes.rem_euclid(24 * 60);
    format!("{:02}:{:02}", m / 60, m % 60)
}

fn style_text(s: WeekendStyle) -> &'static str {
    match s {
        WeekendStyle::StrictBoundary => "strict boundary",
        WeekendStyle::Flexible => "flexible",
        WeekendStyle::Mixed => "mixed",
    }
}

fn profile_lines(p: &ProfileRecord) -> Vec<String> {
    let mut v = Vec::new();
    if let Some(x) = p.sleep_mean_h {
        v.push(format!("Usually sleeps about {x} hours a night."));
    }
    if let Some(x) = p.long_work_days_per_week {
        v.push(format!("Works long days about {x} days a week."));
    }
    if let Some(s) = p.weekend_work_style {
        v.push(format!("Weekend work style: {}.", style_text(s)));
    }
    if let Some(x) = p.exercise_days_per_week {
        v.push(format!("Exercises about {x} days a week."));
    }
    if let Some(x) = p.meals_per_day {
        v.push(format!("Eats about {x} meals a day."));
    }
    if let Some(x) = p.home_cooked_mean {
        v.push(format!("Home-cooked meals: about {x} a day."));
    }
    if v.is_empty() {
        v.push(NO_PROFILE.to_string());
    }
    v
}

fn planner_sentences(d: &PlannerDay) -> Vec<String> {
    let mut v = Vec::new();
    if let Some(h) = d.work_cap_h {
        v.push(format!("Work capped at {h} hours."));
    }
    if let Some(t) = d.target_bedtime {
        v.push(format!("Target bedtime {}.", format_clock(t)));
    }
    if let Some(h) = d.sleep_goal_h {
        v.push(format!("Sleep goal {h} hours."));
    }
    if d.social_intent {
        v.push("Social plans made.".into());
    }
    if d.exercise_planned {
        v.push("Exercise planned.".into());
    }
    if d.home_cooked_priority {
        v.push("Home-cooked food prioritized.".into());
    }
    if v.is_empty() {
        v.push(NO_PLANS.into());
    }
    v
}

fn self_report_sentences(d: &SelfReportDay) -> Vec<String> {
    let mut v = vec![
        format!("Meals: {}, {} home-cooked.", d.meals, d.home_cooked),
        format!("Worked {} hours.", d.work_hours),
        format!("Slept {} hours, in bed by {}.", d.sleep_h, format_clock(d.bedtime)),
        if d.exercised_claim { "Exercised." } else { "Did not exercise." }.to_string(),
    ];
    match d.exercise_intent_claim {
        Some(true) => v.push("The exercise was intentional.".into()),
        Some(false) => v.push("The exercise was incidental.".into()),
        None => {}
    }
    v.push(format!("Social events: {}.", d.social_events_claim));
    match d.motivation_claim {
        Some(Motivation::Voluntary) => v.push("Social motivation: voluntary.".into()),
        Some(Motivation::SupportingOther) => v.push("Social motivation: supporting someone else.".into()),
        None => {}
    }
    v
}

fn objective_sentences(d: &ObjectiveDay) -> Vec<String> {
    let mut v = vec![format!(
        "Payments: {}, {}.",
        plural(d.coffee_purchases, "coffee purchase", "coffee purchases"),
        plural(d.delivery_purchases, "food-delivery purchase", "food-delivery purchases")
    )];
    if d.social_purchases > 0 {
        v.push(format!(
            "Social spending: {}.",
            plural(d.social_purchases, "purchase", "purchases")
        ));
    }
    if d.gym_checkin {
        v.push("Gym check-in recorded.".into());
    }
    if let Some(m) = d.calendar_work_minutes {
        v.push(format!(
            "Calendar: work block {}\u{2013}{}.",
            clock(CALENDAR_START),
            clock(CALENDAR_START + m as i32)
        ));
    }
    if let Some(h) = d.timesheet_hours {
        v.push(format!("Timesheet: {h} hours."));
    }
    v
}

fn device_sentences(d: &DeviceDay) -> Vec<String> {
    let mut v = vec![
        format!(
            "Sleep tracked: {} hours, asleep at {}.",
            d.sleep_duration_h,
            format_clock(d.bedtime)
        ),
        format!("Active minutes: {}.", d.active_minutes),
    ];
    if d.workout_detected {
        v.push("Workout detected.".into());
    }
    if let Some(m) = d.work_session_minutes {
        v.push(format!("Work session: {m} minutes."));
    }
    v
}

fn day_lines<T>(entries: &[DayEntry<T>], f: impl Fn(&T) -> Vec<String>) -> Vec<String> {
    entries
        .iter()
        .map(|e| {
            let body = match &e.record {
                Some(r) => f(r).join(" "),
                None => UNAVAILABLE.to_string(),
            };
            format!("{}: {body}", e.date)
        })
        .collect()
}

/// Renders the five streams of one persona. Panics only if a stream is
/// missing from the set, which a generated cohort never produces.
pub fn render(persona_id: &str, streams: &StreamSet) -> MemoryDocument {
    let lines = [
        streams.profile().map(profile_lines),
        streams.planner().map(|d| day_lines(d, planner_sentences)),
        streams.self_report().map(|d| day_lines(d, self_report_sentences)),
        streams.objective().map(|d| day_lines(d, objective_sentences)),
        streams.device().map(|d| day_lines(d, device_sentences)),
    ];
    MemoryDocument {
        persona_id: persona_id.to_string(),
        sections: HEADINGS
            .iter()
            .zip(lines)
            .map(|(h, l)| Section {
                heading: h.to_string(),
                lines: l.unwrap_or_else(|| panic!("stream for section {h:?} missing")),
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// parsing

struct Patterns {
    profile: [Regex; 6],
    planner: [Regex; 3],
    meals: Regex,
    worked: Regex,
    slept: Regex,
    social: Regex,
    payments: Regex,
    social_spend: Regex,
    calendar: Regex,
    timesheet: Regex,
    tracked: Regex,
    active: Regex,
    session: Regex,
}

const NUM: &str = r"(-?\d+(?:\.\d+)?)";
const INT: &str = r"(\d+)";
const CLOCK: &str = r"(\d{2}:\d{2})";

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: String| Regex::new(&format!("^{s}$")).expect("static pattern");
        Patterns {
            profile: [
                re(format!(r"Usually sleeps about {NUM} hours a night")),
                re(format!(r"Works long days about {NUM} days a week")),
                re(r"Weekend work style: (strict boundary|flexible|mixed)".into()),
                re(format!(r"Exercises about {NUM} days a week")),
                re(format!(r"Eats about {NUM} meals a day")),
                re(format!(r"Home-cooked meals: about {NUM} a day")),
            ],
            planner: [
                re(format!(r"Work capped at {NUM} hours")),
                re(format!(r"Target bedtime {CLOCK}")),
                re(format!(r"Sleep goal {NUM} hours")),
            ],
            meals: re(format!(r"Meals: {INT}, {INT} home-cooked")),
            worked: re(format!(r"Worked {NUM} hours")),
            slept: re(format!(r"Slept {NUM} hours, in bed by {CLOCK}")),
            social: re(format!(r"Social events: {INT}")),
            payments: re(format!(
                r"Payments: {INT} coffee purchases?, {INT} food-delivery purchases?"
            )),
            social_spend: re(format!(r"Social spending: {INT} purchases?")),
            calendar: re(format!("Calendar: work block {CLOCK}\u{2013}{CLOCK}")),
            timesheet: re(format!(r"Timesheet: {NUM} hours")),
            tracked: re(format!(r"Sleep tracked: {NUM} hours, asleep at {CLOCK}")),
            active: re(format!(r"Active minutes: {INT}")),
            session: re(format!(r"Work session: {INT} minutes")),
        }
    })
}

struct LineCx {
    line: usize,
}

impl LineCx {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, c: &Captures, i: usize) -> Result<T> {
        c[i].parse().map_err(|_| self.err(format!("bad number {:?}", &c[i])))
    }

    fn bedtime(&self, c: &Captures, i: usize) -> Result<i32> {
        parse_bedtime(&c[i]).ok_or_else(|| self.err(format!("bad time {:?}", &c[i])))
    }

    /// Records that a sentence kind was seen, rejecting repeats.
    fn once(&self, seen: &mut BTreeSet<&'static str>, kind: &'static str) -> Result<()> {
        if seen.insert(kind) {
            Ok(())
        } else {
            Err(self.err(format!("repeated {kind} sentence")))
        }
    }
}

fn clock_minutes(cx: &LineCx, s: &str) -> Result<i32> {
    let (h, m) = s.split_once(':').ok_or_else(|| cx.err("bad clock"))?;
    let (h, m): (i32, i32) = (
        h.parse().map_err(|_| cx.err("bad clock"))?,
        m.parse().map_err(|_| cx.err("bad clock"))?,
    );
    if h > 23 || m > 59 {
        return Err(cx.err(format!("bad clock {s:?}")));
    }
    Ok(h * 60 + m)
}

/// Splits a day body into sentences without their final period.
fn sentences<'a>(cx: &LineCx, body: &'a str) -> Result<Vec<&'a str>> {
    let body = body
        .strip_suffix('.')
        .ok_or_else(|| cx.err("sentence must end with a period"))?;
    Ok(body.split(". ").collect())
}

fn parse_profile(lines: &[(usize, &str)]) -> Result<ProfileRecord> {
    let p = patterns();
    let mut out = ProfileRecord::default();
    let mut seen = BTreeSet::new();
    if let [(_, l)] = lines {
        if *l == NO_PROFILE {
            return Ok(out);
        }
    }
    for &(line, l) in lines {
        let cx = LineCx { line };
        let s = l.strip_suffix('.').ok_or_else(|| cx.err("sentence must end with a period"))?;
        let (i, c) = p
            .profile
            .iter()
            .enumerate()
            .find_map(|(i, r)| r.captures(s).map(|c| (i, c)))
            .ok_or_else(|| cx.err(format!("unrecognized background sentence {l:?}")))?;
        const KINDS: [&str; 6] = ["sleep", "long work", "weekend style", "exercise", "meals", "home-cooked"];
        cx.once(&mut seen, KINDS[i])?;
        match i {
            0 => out.sleep_mean_h = Some(cx.num(&c, 1)?),
            1 => out.long_work_days_per_week = Some(cx.num(&c, 1)?),
            2 => {
                out.weekend_work_style = Some(match &c[1] {
                    "strict boundary" => WeekendStyle::StrictBoundary,
                    "flexible" => WeekendStyle::Flexible,
                    _ => WeekendStyle::Mixed,
                })
            }
            3 => out.exercise_days_per_week = Some(cx.num(&c, 1)?),
            4 => out.meals_per_day = Some(cx.num(&c, 1)?),
            _ => out.home_cooked_mean = Some(cx.num(&c, 1)?),
        }
    }
    Ok(out)
}

fn parse_planner(cx: &LineCx, body: &str) -> Result<PlannerDay> {
    let p = patterns();
    let mut d = PlannerDay::default();
    if body == NO_PLANS {
        return Ok(d);
    }
    let mut seen = BTreeSet::new();
    for s in sentences(cx, body)? {
        if let Some(c) = p.planner[0].captures(s) {
            cx.once(&mut seen, "work cap")?;
            d.work_cap_h = Some(cx.num(&c, 1)?);
        } else if let Some(c) = p.planner[1].captures(s) {
            cx.once(&mut seen, "target bedtime")?;
            d.target_bedtime = Some(cx.bedtime(&c, 1)?);
        } else if let Some(c) = p.planner[2].captures(s) {
            cx.once(&mut seen, "sleep goal")?;
            d.sleep_goal_h = Some(cx.num(&c, 1)?);
        } else if s == "Social plans made" {
            cx.once(&mut seen, "social plans")?;
            d.social_intent = true;
        } else if s == "Exercise planned" {
            cx.once(&mut seen, "exercise plan")?;
            d.exercise_planned = true;
        } else if s == "Home-cooked food prioritized" {
            cx.once(&mut seen, "home-cooked")?;
            d.home_cooked_priority = true;
        } else {
            return Err(cx.err(format!("unrecognized plan sentence {s:?}")));
        }
    }
    if seen.is_empty() {
        return Err(cx.err("empty plan entry"));
    }
    Ok(d)
}

fn parse_self_report(cx: &LineCx, body: &str) -> Result<SelfReportDay> {
    let p = patterns();
    let mut d = SelfReportDay::default();
    let mut seen = BTreeSet::new();
    for s in sentences(cx, body)? {
        if let Some(c) = p.meals.captures(s) {
            cx.once(&mut seen, "meals")?;
            d.meals = cx.num(&c, 1)?;
            d.home_cooked = cx.num(&c, 2)?;
        } else if let Some(c) = p.worked.captures(s) {
            cx.once(&mut seen, "worked")?;
            d.work_hours = cx.num(&c, 1)?;
        } else if let Some(c) = p.slept.captures(s) {
            cx.once(&mut seen, "slept")?;
            d.sleep_h = cx.num(&c, 1)?;
            d.bedtime = cx.bedtime(&c, 2)?;
        } else if s == "Exercised" || s == "Did not exercise" {
            cx.once(&mut seen, "exercised")?;
            d.exercised_claim = s == "Exercised";
        } else if s == "The exercise was intentional" || s == "The exercise was incidental" {
            cx.once(&mut seen, "exercise intent")?;
            d.exercise_intent_claim = Some(s.ends_with("intentional"));
        } else if let Some(c) = p.social.captures(s) {
            cx.once(&mut seen, "social events")?;
            d.social_events_claim = cx.num(&c, 1)?;
        } else if s == "Social motivation: voluntary" {
            cx.once(&mut seen, "motivation")?;
            d.motivation_claim = Some(Motivation::Voluntary);
        } else if s == "Social motivation: supporting someone else" {
            cx.once(&mut seen, "motivation")?;
            d.motivation_claim = Some(Motivation::SupportingOther);
        } else {
            return Err(cx.err(format!("unrecognized self-report sentence {s:?}")));
        }
    }
    for required in ["meals", "worked", "slept", "exercised", "social events"] {
        if !seen.contains(required) {
            return Err(cx.err(format!("self-report entry lacks the {required} sentence")));
        }
    }
    Ok(d)
}

fn parse_objective(cx: &LineCx, body: &str) -> Result<ObjectiveDay> {
    let p = patterns();
    let mut d = ObjectiveDay::default();
    let mut seen = BTreeSet::new();
    for s in sentences(cx, body)? {
        if let Some(c) = p.payments.captures(s) {
            cx.once(&mut seen, "payments")?;
            d.coffee_purchases = cx.num(&c, 1)?;
            d.delivery_purchases = cx.num(&c, 2)?;
        } else if let Some(c) = p.social_spend.captures(s) {
            cx.once(&mut seen, "social spending")?;
            d.social_purchases = cx.num(&c, 1)?;
        } else if s == "Gym check-in recorded" {
            cx.once(&mut seen, "gym")?;
            d.gym_checkin = true;
        } else if let Some(c) = p.calendar.captures(s) {
            cx.once(&mut seen, "calendar")?;
            let start = clock_minutes(cx, &c[1])?;
            let end = clock_minutes(cx, &c[2])?;
            if start != CALENDAR_START {
                return Err(cx.err("calendar blocks start at 09:00"));
            }
            d.calendar_work_minutes = Some((end - start).rem_euclid(24 * 60) as u32);
        } else if let Some(c) = p.timesheet.captures(s) {
            cx.once(&mut seen, "timesheet")?;
            d.timesheet_hours = Some(cx.num(&c, 1)?);
        } else {
            return Err(cx.err(format!("unrecognized objective sentence {s:?}")));
        }
    }
    if !seen.contains("payments") {
        return Err(cx.err("objective entry lacks the payments sentence"));
    }
    Ok(d)
}

fn parse_device(cx: &LineCx, body: &str) -> Result<DeviceDay> {
    let p = patterns();
    let mut d = DeviceDay::default();
    let mut seen = BTreeSet::new();
    for s in sentences(cx, body)? {
        if let Some(c) = p.tracked.captures(s) {
            cx.once(&mut seen, "sleep")?;
            d.sleep_duration_h = cx.num(&c, 1)?;
            d.bedtime = cx.bedtime(&c, 2)?;
        } else if let Some(c) = p.active.captures(s) {
            cx.once(&mut seen, "active")?;
            d.active_minutes = cx.num(&c, 1)?;
        } else if s == "Workout detected" {
            cx.once(&mut seen, "workout")?;
            d.workout_detected = true;
        } else if let Some(c) = p.session.captures(s) {
            cx.once(&mut seen, "work session")?;
            d.work_session_minutes = Some(cx.num(&c, 1)?);
        } else {
            return Err(cx.err(format!("unrecognized device sentence {s:?}")));
        }
    }
    for required in ["sleep", "active"] {
        if !seen.contains(required) {
            return Err(cx.err(format!("device entry lacks the {required} sentence")));
        }
    }
    Ok(d)
}

fn parse_days<T>(
    lines: &[(usize, &str)],
    f: impl Fn(&LineCx, &str) -> Result<T>,
) -> Result<Vec<DayEntry<T>>> {
    lines
        .iter()
        .map(|&(line, l)| {
            let cx = LineCx { line };
            let (date, body) = l.split_once(": ").ok_or_else(|| cx.err("expected `date: entry`"))?;
            let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| cx.err(format!("bad date {date:?}")))?;
            let record = if body == UNAVAILABLE { None } else { Some(f(&cx, body)?) };
            Ok(DayEntry { date, record })
        })
        .collect()
}

/// Parses a rendered document back into its streams.
pub fn parse_markdown(text: &str) -> Result<(String, StreamSet)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    let (first_no, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty document".into(),
    })?;
    let persona_id = first
        .strip_prefix("# Memory of ")
        .filter(|s| !s.is_empty())
        .ok_or(Error::Parse {
            line: first_no,
            message: "expected `# Memory of <persona>` title".into(),
        })?
        .to_string();

    let mut bodies: Vec<Vec<(usize, &str)>> = Vec::new();
    for heading in HEADINGS {
        // one blank separator line, then the heading
        let mut next = lines.next();
        if let Some((_, "")) = next {
            next = lines.next();
        }
        let expected = format!("## {heading}");
        match next {
            Some((_, l)) if l == expected => {}
            Some((n, l)) => {
                return Err(Error::Parse {
                    line: n,
                    message: format!("expected section heading {expected:?}, found {l:?}"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: text.lines().count() + 1,
                    message: format!("missing section {heading:?}"),
                })
            }
        }
        let mut body = Vec::new();
        while let Some(&(n, l)) = lines.peek() {
            if l.is_empty() || l.starts_with("## ") {
                break;
            }
            let item = l.strip_prefix("- ").ok_or(Error::Parse {
                line: n,
                message: format!("expected a `- ` list item in section {heading:?}"),
            })?;
            body.push((n, item));
            lines.next();
        }
        bodies.push(body);
    }
    if let Some((n, l)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(Error::Parse {
            line: n,
            message: format!("unexpected trailing content {l:?}"),
        });
    }

    let payloads = [
        SourcePayload::Profile(parse_profile(&bodies[0])?),
        SourcePayload::Planner(parse_days(&bodies[1], parse_planner)?),
        SourcePayload::SelfReport(parse_days(&bodies[2], parse_self_report)?),
        SourcePayload::Objective(parse_days(&bodies[3], parse_objective)?),
        SourcePayload::Device(parse_days(&bodies[4], parse_device)?),
    ];
    let streams = SourceId::ALL
        .into_iter()
        .zip(payloads)
        .map(|(source, payload)| {
            (
                source,
                SourceStream {
                    persona_id: persona_id.clone(),
                    source,
                    payload,
                },
            )
        })
        .collect();
    Ok((persona_id, streams))
}

pub fn parse(doc: &MemoryDocument) -> Result<StreamSet> {
    parse_markdown(&doc.to_markdown()).map(|(_, s)| s)
}

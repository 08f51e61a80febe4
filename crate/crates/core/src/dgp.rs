//! Persona traits (L1), latent 30-day event tables (L2) and the five biased
//! source projections (L3).
//!
//! Every projection draws a fixed number of variates per day regardless of
//! the outcome, so changing `bias_scale` or `dropout_scale` moves outputs
//! smoothly instead of reshuffling the random sequence.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::schema::{self, DifficultyClass, SourceId, SplitAssignment, Topic};

/// Bedtime is stored as minutes after noon, so 23:15 is 675 and 00:10 is 730.
pub type Bedtime = i32;

pub const MIDNIGHT: Bedtime = 720;

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Hours on the fixed one-decimal grid, as an integer number of tenths.
pub fn tenths(x: f64) -> i64 {
    (x * 10.0).round() as i64
}

pub fn format_clock(t: Bedtime) -> String {
    let m = (t + 12 * 60).rem_euclid(24 * 60);
    format!("{:02}:{:02}", m / 60, m % 60)
}

/// Inverse of [`format_clock`] for bedtimes: times before noon are read as
/// after midnight.
pub fn parse_bedtime(s: &str) -> Option<Bedtime> {
    let (h, m) = s.split_once(':')?;
    if h.len() != 2 || m.len() != 2 {
        return None;
    }
    let h: i32 = h.parse().ok()?;
    let m: i32 = m.parse().ok()?;
    if h > 23 || m > 59 {
        return None;
    }
    let from_midnight = h * 60 + m;
    Some(if h < 12 { from_midnight + 720 } else { from_midnight - 720 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Distortion {
    pub self_sleep_h: f64,
    pub self_sleep_noise_h: f64,
    pub self_work_h: f64,
    pub self_work_noise_h: f64,
    pub self_bedtime_min: f64,
    pub self_home_ratio: f64,
    pub self_meal_noise_rate: f64,
    pub self_social_dropout: f64,
    pub self_exercise_claim: f64,
    pub self_intent_claim: f64,
    pub self_motivation_relabel: f64,
    /// Extra self-report distortion for stated-vs-revealed personas.
    pub svr_self_multiplier: f64,
    /// Share of the stated-minus-revealed gap that leaks into self-reports.
    pub svr_self_anchor: f64,
    pub planner_intent: f64,
    pub planner_day_missing: f64,
    pub objective_noise_h: f64,
    pub objective_day_missing_max: f64,
    pub objective_timesheet_missing: f64,
    pub objective_calendar_missing: f64,
    pub delivery_share: f64,
    pub social_purchase_rate: f64,
    pub gym_checkin_rate: f64,
    pub device_day_missing: [f64; 3],
    pub device_work_field_dropout: f64,
    pub device_detect_intentional: f64,
    pub device_detect_incidental: f64,
    pub profile_field_missing: f64,
}

impl Default for Distortion {
    fn default() -> Self {
        Distortion {
            self_sleep_h: 0.4,
            self_sleep_noise_h: 0.3,
            self_work_h: 0.8,
            self_work_noise_h: 0.3,
            self_bedtime_min: 15.0,
            self_home_ratio: 0.15,
            self_meal_noise_rate: 0.05,
            self_social_dropout: 0.25,
            self_exercise_claim: 0.15,
            self_intent_claim: 0.3,
            self_motivation_relabel: 0.3,
            svr_self_multiplier: 3.0,
            svr_self_anchor: 1.0,
            planner_intent: 0.20,
            planner_day_missing: 0.03,
            objective_noise_h: 0.3,
            objective_day_missing_max: 0.2,
            objective_timesheet_missing: 0.05,
            objective_calendar_missing: 0.2,
            delivery_share: 0.5,
            social_purchase_rate: 0.5,
            gym_checkin_rate: 0.6,
            device_day_missing: [0.10, 0.15, 0.20],
            device_work_field_dropout: 0.5,
            device_detect_intentional: 0.92,
            device_detect_incidental: 0.25,
            profile_field_missing: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub seed: u64,
    pub n_personas: usize,
    pub bias_scale: f64,
    pub dropout_scale: f64,
    pub start_date: NaiveDate,
    pub window_days: u32,
    pub distortion: Distortion,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            seed: 1,
            n_personas: 480,
            bias_scale: 1.0,
            dropout_scale: 1.0,
            start_date: NaiveDate::from_ymd_opt(2026, 1, 3).unwrap(),
            window_days: 30,
            distortion: Distortion::default(),
        }
    }
}

impl DgpConfig {
    pub fn with_seed(seed: u64) -> Self {
        DgpConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_personas == 0 || !self.n_personas.is_multiple_of(3) {
            return Err(Error::Config(format!(
                "n_personas = {} must be a positive multiple of 3",
                self.n_personas
            )));
        }
        if !(self.bias_scale >= 0.0 && self.bias_scale.is_finite()) {
            return Err(Error::Config(format!("bias_scale = {} must be >= 0", self.bias_scale)));
        }
        if !(self.dropout_scale >= 0.0 && self.dropout_scale.is_finite()) {
            return Err(Error::Config(format!(
                "dropout_scale = {} must be >= 0",
                self.dropout_scale
            )));
        }
        if self.window_days != 30 {
            return Err(Error::Config(format!(
                "window_days = {} is unsupported; the label functions assume 30",
                self.window_days
            )));
        }
        Ok(())
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeekendStyle {
    StrictBoundary,
    Flexible,
    Mixed,
}

impl WeekendStyle {
    pub const ALL: [WeekendStyle; 3] = [
        WeekendStyle::StrictBoundary,
        WeekendStyle::Flexible,
        WeekendStyle::Mixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeekendStyle::StrictBoundary => "strict_boundary",
            WeekendStyle::Flexible => "flexible",
            WeekendStyle::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motivation {
    Voluntary,
    SupportingOther,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextTag {
    WorkStress,
    Social,
}

/// Per-topic parameter offsets, used both for post-shift deltas and for
/// stated-minus-revealed gaps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopicDeltas {
    pub sleep_h: f64,
    pub work_h: f64,
    pub home_ratio: f64,
    pub social_rate: f64,
    pub exercise_days: f64,
    pub weekend_work_rate: f64,
}

impl TopicDeltas {
    pub fn is_zero(&self) -> bool {
        *self == TopicDeltas::default()
    }

    pub fn topics(&self) -> Vec<Topic> {
        let mut out = Vec::new();
        if self.work_h != 0.0 || self.weekend_work_rate != 0.0 {
            out.push(Topic::Work);
        }
        if self.home_ratio != 0.0 {
            out.push(Topic::Diet);
        }
        if self.social_rate != 0.0 {
            out.push(Topic::Social);
        }
        if self.sleep_h != 0.0 {
            out.push(Topic::Sleep);
        }
        if self.exercise_days != 0.0 {
            out.push(Topic::Exercise);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaTraits {
    pub persona_id: String,
    pub difficulty: DifficultyClass,
    pub sleep_mean_h: f64,
    pub sleep_sd_h: f64,
    pub bedtime_mean: f64,
    pub work_base_h: f64,
    pub overtime_rate: f64,
    pub weekend_work_style: Option<WeekendStyle>,
    pub weekend_work_rate: f64,
    pub meals_per_day_mean: f64,
    pub home_cooked_ratio: f64,
    pub exercise_days_per_week: f64,
    pub exercise_intentional_ratio: f64,
    pub social_rate: f64,
    pub social_voluntary_ratio: f64,
    pub sets_bedtime_targets: bool,
    pub shift_day: Option<usize>,
    pub post_shift_deltas: TopicDeltas,
    pub stated_vs_revealed_gaps: TopicDeltas,
    /// Weekend style the persona claims, when it differs from how it behaves.
    pub stated_weekend_style: Option<WeekendStyle>,
}

/// Behavioral parameters in force on a given day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub sleep_mean_h: f64,
    pub bedtime_mean: f64,
    pub work_base_h: f64,
    pub overtime_rate: f64,
    pub weekend_work_rate: f64,
    pub meals_per_day_mean: f64,
    pub home_cooked_ratio: f64,
    pub exercise_days_per_week: f64,
    pub exercise_intentional_ratio: f64,
    pub social_rate: f64,
    pub social_voluntary_ratio: f64,
}

impl Regime {
    fn offset(mut self, d: &TopicDeltas) -> Regime {
        self.sleep_mean_h = (self.sleep_mean_h + d.sleep_h).clamp(4.5, 9.5);
        // Shorter sleep comes with later nights.
        self.bedtime_mean = (self.bedtime_mean - 40.0 * d.sleep_h).clamp(600.0, 820.0);
        self.work_base_h = (self.work_base_h + d.work_h).clamp(5.0, 11.0);
        self.overtime_rate = (self.overtime_rate + 0.15 * d.work_h).clamp(0.0, 0.8);
        self.weekend_work_rate = (self.weekend_work_rate + d.weekend_work_rate).clamp(0.0, 1.0);
        self.home_cooked_ratio = (self.home_cooked_ratio + d.home_ratio).clamp(0.05, 0.98);
        self.social_rate = (self.social_rate + d.social_rate).clamp(0.02, 1.5);
        self.exercise_days_per_week = (self.exercise_days_per_week + d.exercise_days).clamp(0.0, 6.5);
        self
    }
}

impl PersonaTraits {
    fn base_regime(&self) -> Regime {
        Regime {
            sleep_mean_h: self.sleep_mean_h,
            bedtime_mean: self.bedtime_mean,
            work_base_h: self.work_base_h,
            overtime_rate: self.overtime_rate,
            weekend_work_rate: self.weekend_work_rate,
            meals_per_day_mean: self.meals_per_day_mean,
            home_cooked_ratio: self.home_cooked_ratio,
            exercise_days_per_week: self.exercise_days_per_week,
            exercise_intentional_ratio: self.exercise_intentional_ratio,
            social_rate: self.social_rate,
            social_voluntary_ratio: self.social_voluntary_ratio,
        }
    }

    /// Parameters actually realized on `day`.
    pub fn realized(&self, day: usize) -> Regime {
        match self.shift_day {
            Some(s) if day >= s => self.base_regime().offset(&self.post_shift_deltas),
            _ => self.base_regime(),
        }
    }

    /// Parameters the persona believes describe them: the pre-shift regime,
    /// or the stated parameters for stated-vs-revealed personas.
    pub fn habit(&self) -> Regime {
        self.base_regime().offset(&self.stated_vs_revealed_gaps)
    }

    pub fn claimed_weekend_style(&self) -> Option<WeekendStyle> {
        self.stated_weekend_style.or(self.weekend_work_style)
    }

    fn check(&self) -> Result<()> {
        let ratios = [
            self.overtime_rate,
            self.weekend_work_rate,
            self.home_cooked_ratio,
            self.exercise_intentional_ratio,
            self.social_voluntary_ratio,
        ];
        if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config(format!("{}: ratio outside [0,1]", self.persona_id)));
        }
        let ok = match self.difficulty {
            DifficultyClass::Stable => {
                self.shift_day.is_none()
                    && self.post_shift_deltas.is_zero()
                    && self.stated_vs_revealed_gaps.is_zero()
            }
            DifficultyClass::TemporalShift => {
                matches!(self.shift_day, Some(10..=20)) && self.stated_vs_revealed_gaps.is_zero()
            }
            DifficultyClass::StatedVsRevealed => {
                self.shift_day.is_none()
                    && (!self.stated_vs_revealed_gaps.is_zero() || self.stated_weekend_style.is_some())
            }
        };
        if !ok {
            return Err(Error::Config(format!(
                "{}: traits inconsistent with difficulty class",
                self.persona_id
            )));
        }
        Ok(())
    }
}

fn normal(r: &mut impl Rng) -> f64 {
    r.sample(StandardNormal)
}

fn truncated_normal(r: &mut impl Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..64 {
        let x = mean + sd * normal(r);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    mean.clamp(lo, hi)
}

fn signed(r: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let mag = r.random_range(lo..hi);
    if r.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

pub fn persona_id(class: DifficultyClass, index: usize) -> String {
    format!("bench_{}_{index:03}", class.id_prefix())
}

pub fn generate_personas(cfg: &DgpConfig) -> Result<Vec<PersonaTraits>> {
    cfg.validate()?;
    let per_class = cfg.n_personas / 3;
    let mut out = Vec::with_capacity(cfg.n_personas);
    for (c, class) in DifficultyClass::ALL.into_iter().enumerate() {
        for i in 0..per_class {
            let id = persona_id(class, c * per_class + i);
            let traits = sample_traits(cfg.seed, id, class);
            traits.check()?;
            out.push(traits);
        }
    }
    Ok(out)
}

fn sample_weekend(r: &mut impl Rng) -> (Option<WeekendStyle>, f64) {
    let u: f64 = r.random();
    let style = if u < 0.35 {
        Some(WeekendStyle::StrictBoundary)
    } else if u < 0.65 {
        Some(WeekendStyle::Flexible)
    } else if u < 0.9 {
        Some(WeekendStyle::Mixed)
    } else {
        None
    };
    let rate = match style {
        Some(WeekendStyle::StrictBoundary) => r.random_range(0.0..0.15),
        Some(WeekendStyle::Flexible) => r.random_range(0.05..0.6),
        Some(WeekendStyle::Mixed) => r.random_range(0.15..0.7),
        None => r.random_range(0.0..0.6),
    };
    (style, rate)
}

fn sample_traits(seed: u64, persona_id: String, difficulty: DifficultyClass) -> PersonaTraits {
    let mut r = rng::stream(seed, &[&persona_id, "traits"]);
    let r = &mut r;
    let (weekend_work_style, weekend_work_rate) = sample_weekend(r);
    let mut t = PersonaTraits {
        difficulty,
        sleep_mean_h: truncated_normal(r, 7.0, 0.7, 5.0, 9.0),
        sleep_sd_h: r.random_range(0.4..0.9),
        bedtime_mean: truncated_normal(r, 675.0, 40.0, 600.0, 780.0),
        work_base_h: truncated_normal(r, 8.2, 0.6, 6.5, 9.5),
        overtime_rate: r.random_range(0.05..0.45),
        weekend_work_style,
        weekend_work_rate,
        meals_per_day_mean: r.random_range(2.5..3.5),
        home_cooked_ratio: r.random_range(0.25..0.9),
        exercise_days_per_week: r.random_range(0.5..5.5),
        exercise_intentional_ratio: r.random_range(0.05..1.0),
        social_rate: r.random_range(0.1..0.9),
        social_voluntary_ratio: r.random_range(0.1..1.0),
        sets_bedtime_targets: r.random_bool(0.8),
        shift_day: None,
        post_shift_deltas: TopicDeltas::default(),
        stated_vs_revealed_gaps: TopicDeltas::default(),
        stated_weekend_style: None,
        persona_id,
    };
    // Variates for the class-specific block are always drawn so the shared
    // traits above stay comparable across classes.
    let mut topics = vec![Topic::Work, Topic::Diet, Topic::Social, Topic::Sleep, Topic::Exercise];
    rand::seq::SliceRandom::shuffle(topics.as_mut_slice(), r);
    let shift_day = r.random_range(10..=20usize);
    match difficulty {
        DifficultyClass::Stable => {}
        DifficultyClass::TemporalShift => {
            let n = r.random_range(2..=3usize);
            let mut d = TopicDeltas::default();
            for topic in &topics[..n] {
                match topic {
                    Topic::Sleep => d.sleep_h = signed(r, 0.6, 1.2),
                    Topic::Work => d.work_h = signed(r, 0.8, 1.5),
                    Topic::Diet => d.home_ratio = signed(r, 0.2, 0.35),
                    Topic::Social => d.social_rate = signed(r, 0.3, 0.5),
                    Topic::Exercise => d.exercise_days = signed(r, 1.5, 3.0),
                }
            }
            t.shift_day = Some(shift_day);
            t.post_shift_deltas = d;
        }
        DifficultyClass::StatedVsRevealed => {
            let n = r.random_range(2..=4usize);
            let mut d = TopicDeltas::default();
            for topic in &topics[..n] {
                // Stated minus revealed, always in the flattering direction.
                match topic {
                    Topic::Sleep => d.sleep_h = r.random_range(0.6..1.2),
                    Topic::Work => {
                        d.work_h = -r.random_range(0.8..1.5);
                        if t.weekend_work_style != Some(WeekendStyle::StrictBoundary) {
                            t.stated_weekend_style = Some(WeekendStyle::StrictBoundary);
                            t.weekend_work_rate = t.weekend_work_rate.max(r.random_range(0.2..0.6));
                        }
                    }
                    Topic::Diet => d.home_ratio = r.random_range(0.2..0.35),
                    Topic::Social => d.social_rate = r.random_range(0.3..0.5),
                    Topic::Exercise => d.exercise_days = r.random_range(1.5..3.0),
                }
            }
            t.stated_vs_revealed_gaps = d;
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub sleep_duration_h: f64,
    pub bedtime: Bedtime,
    pub meals_total: u32,
    pub meals_home: u32,
    pub work_hours: f64,
    pub is_weekend: bool,
    pub overtime: bool,
    pub exercised: bool,
    pub exercise_intentional: bool,
    pub social_events: u32,
    pub social_motivations: Vec<Motivation>,
    pub context_tags: Vec<ContextTag>,
}

impl DayRecord {
    pub fn worked(&self) -> bool {
        self.work_hours > 0.0
    }

    pub fn has_tag(&self, tag: ContextTag) -> bool {
        self.context_tags.contains(&tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEventTable {
    pub persona_id: String,
    pub days: Vec<DayRecord>,
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Inverse-CDF Poisson draw capped at `cap`.
fn poisson_capped(u: f64, lambda: f64, cap: u32) -> u32 {
    let mut p = (-lambda).exp();
    let mut acc = p;
    let mut k = 0;
    while u > acc && k < cap {
        k += 1;
        p *= lambda / k as f64;
        acc += p;
    }
    k
}

pub fn simulate_events(p: &PersonaTraits, cfg: &DgpConfig) -> LatentEventTable {
    let mut r = rng::stream(cfg.seed, &[&p.persona_id, "events"]);
    let r = &mut r;
    let mut days = Vec::with_capacity(cfg.window_days as usize);
    for day in 0..cfg.window_days as usize {
        let g = p.realized(day);
        let date = cfg.date(day);
        let weekend = is_weekend(date);

        // Work.
        let u_work: f64 = r.random();
        let u_over: f64 = r.random();
        let z_work = normal(r);
        let u_over_extra: f64 = r.random();
        let u_weekend_h: f64 = r.random();
        let (worked, overtime) = if weekend {
            (u_work < g.weekend_work_rate, false)
        } else {
            (u_work >= 0.03, u_over < g.overtime_rate)
        };
        let work_hours = if !worked {
            0.0
        } else if weekend {
            round1(1.0 + 5.0 * u_weekend_h)
        } else {
            let mut h = g.work_base_h + 0.5 * z_work;
            if overtime {
                h += 1.0 + 1.5 * u_over_extra;
            }
            round1(h.clamp(2.0, 14.0))
        };

        // Social.
        let u_social: f64 = r.random();
        let motive_u: [f64; 3] = [r.random(), r.random(), r.random()];
        let social_events = poisson_capped(u_social, g.social_rate, 3);
        let social_motivations: Vec<Motivation> = motive_u[..social_events as usize]
            .iter()
            .map(|&u| {
                if u < g.social_voluntary_ratio {
                    Motivation::Voluntary
                } else {
                    Motivation::SupportingOther
                }
            })
            .collect();

        // Sleep, pushed later by overtime and evening plans.
        let z_bed = normal(r);
        let z_sleep = normal(r);
        let mut bedtime = g.bedtime_mean + 35.0 * z_bed;
        if overtime {
            bedtime += 30.0;
        }
        if social_events > 0 {
            bedtime += 25.0 * social_events as f64;
        }
        let bedtime = (bedtime.round() as i32).clamp(540, 900);
        let late_penalty = ((bedtime as f64 - g.bedtime_mean) / 60.0).max(0.0) * 0.4;
        let sleep = round1((g.sleep_mean_h + p.sleep_sd_h * z_sleep - late_penalty).clamp(3.0, 11.5));

        // Meals.
        let z_meals = normal(r);
        let meal_u: [f64; 5] = std::array::from_fn(|_| r.random());
        let meals_total = (g.meals_per_day_mean + 0.6 * z_meals).round().clamp(1.0, 5.0) as u32;
        let meals_home = meal_u[..meals_total as usize]
            .iter()
            .filter(|&&u| u < g.home_cooked_ratio)
            .count() as u32;

        // Exercise.
        let u_ex: f64 = r.random();
        let u_int: f64 = r.random();
        let exercised = u_ex < g.exercise_days_per_week / 7.0;
        let exercise_intentional = exercised && u_int < g.exercise_intentional_ratio;

        let u_stress: f64 = r.random();
        let mut context_tags = Vec::new();
        if worked && (overtime || work_hours > 9.5 || u_stress < 0.08) {
            context_tags.push(ContextTag::WorkStress);
        }
        if social_events > 0 {
            context_tags.push(ContextTag::Social);
        }

        days.push(DayRecord {
            date,
            sleep_duration_h: sleep,
            bedtime,
            meals_total,
            meals_home,
            work_hours,
            is_weekend: weekend,
            overtime,
            exercised,
            exercise_intentional,
            social_events,
            social_motivations,
            context_tags,
        });
    }
    LatentEventTable {
        persona_id: p.persona_id.clone(),
        days,
    }
}

// ---------------------------------------------------------------------------
// L3 source schemas

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sleep_mean_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long_work_days_per_week: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weekend_work_style: Option<WeekendStyle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exercise_days_per_week: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meals_per_day: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_cooked_mean: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerDay {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_cap_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_bedtime: Option<Bedtime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sleep_goal_h: Option<f64>,
    pub social_intent: bool,
    pub exercise_planned: bool,
    pub home_cooked_priority: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelfReportDay {
    pub meals: u32,
    pub home_cooked: u32,
    pub work_hours: f64,
    pub sleep_h: f64,
    pub bedtime: Bedtime,
    pub exercised_claim: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exercise_intent_claim: Option<bool>,
    pub social_events_claim: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motivation_claim: Option<Motivation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveDay {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timesheet_hours: Option<f64>,
    pub delivery_purchases: u32,
    pub coffee_purchases: u32,
    pub social_purchases: u32,
    pub gym_checkin: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calendar_work_minutes: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceDay {
    pub sleep_duration_h: f64,
    pub bedtime: Bedtime,
    pub active_minutes: u32,
    pub workout_detected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_session_minutes: Option<u32>,
}

/// One dated entry of a daily stream; `record: None` is a day with no data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayEntry<T> {
    pub date: NaiveDate,
    pub record: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "entries", rename_all = "snake_case")]
pub enum SourcePayload {
    Profile(ProfileRecord),
    Planner(Vec<DayEntry<PlannerDay>>),
    SelfReport(Vec<DayEntry<SelfReportDay>>),
    Objective(Vec<DayEntry<ObjectiveDay>>),
    Device(Vec<DayEntry<DeviceDay>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStream {
    pub persona_id: String,
    pub source: SourceId,
    pub payload: SourcePayload,
}

pub type StreamSet = BTreeMap<SourceId, SourceStream>;

/// Typed accessors over a persona's stream set.
pub trait StreamAccess {
    fn profile(&self) -> Option<&ProfileRecord>;
    fn planner(&self) -> Option<&[DayEntry<PlannerDay>]>;
    fn self_report(&self) -> Option<&[DayEntry<SelfReportDay>]>;
    fn objective(&self) -> Option<&[DayEntry<ObjectiveDay>]>;
    fn device(&self) -> Option<&[DayEntry<DeviceDay>]>;
}

impl StreamAccess for StreamSet {
    fn profile(&self) -> Option<&ProfileRecord> {
        match &self.get(&SourceId::ProfileLtm)?.payload {
            SourcePayload::Profile(p) => Some(p),
            _ => None,
        }
    }
    fn planner(&self) -> Option<&[DayEntry<PlannerDay>]> {
        match &self.get(&SourceId::Planner)?.payload {
            SourcePayload::Planner(d) => Some(d),
            _ => None,
        }
    }
    fn self_report(&self) -> Option<&[DayEntry<SelfReportDay>]> {
        match &self.get(&SourceId::DailySelfReport)?.payload {
            SourcePayload::SelfReport(d) => Some(d),
            _ => None,
        }
    }
    fn objective(&self) -> Option<&[DayEntry<ObjectiveDay>]> {
        match &self.get(&SourceId::ObjectiveLog)?.payload {
            SourcePayload::Objective(d) => Some(d),
            _ => None,
        }
    }
    fn device(&self) -> Option<&[DayEntry<DeviceDay>]> {
        match &self.get(&SourceId::DeviceLog)?.payload {
            SourcePayload::Device(d) => Some(d),
            _ => None,
        }
    }
}

pub fn project_source(
    ev: &LatentEventTable,
    p: &PersonaTraits,
    s: SourceId,
    cfg: &DgpConfig,
) -> SourceStream {
    let mut r = rng::stream(cfg.seed, &[&p.persona_id, s.as_str(), "project"]);
    let payload = match s {
        SourceId::ProfileLtm => SourcePayload::Profile(project_profile(ev, p, cfg, &mut r)),
        SourceId::Planner => SourcePayload::Planner(project_planner(ev, p, cfg, &mut r)),
        SourceId::DailySelfReport => SourcePayload::SelfReport(project_self_report(ev, p, cfg, &mut r)),
        SourceId::ObjectiveLog => SourcePayload::Objective(project_objective(ev, p, cfg, &mut r)),
        SourceId::DeviceLog => SourcePayload::Device(project_device(ev, p, cfg, &mut r)),
    };
    SourceStream {
        persona_id: p.persona_id.clone(),
        source: s,
        payload,
    }
}

/// Parses a source name and projects it; the string form exists for callers
/// that take source ids from configuration.
pub fn project_source_named(
    ev: &LatentEventTable,
    p: &PersonaTraits,
    source: &str,
    cfg: &DgpConfig,
) -> Result<SourceStream> {
    Ok(project_source(ev, p, SourceId::parse(source)?, cfg))
}

pub const PROFILE_ANCHOR_DAYS: usize = 14;

fn project_profile(
    ev: &LatentEventTable,
    p: &PersonaTraits,
    cfg: &DgpConfig,
    r: &mut impl Rng,
) -> ProfileRecord {
    let keep: [bool; 6] = std::array::from_fn(|_| r.random::<f64>() >= cfg.distortion.profile_field_missing);
    let (sleep, long_work, exercise, meals, home) = if p.difficulty == DifficultyClass::StatedVsRevealed {
        let h = p.habit();
        let long = (1.0 - normal_cdf((9.0 - h.work_base_h) / 0.5)) * 5.0 * (1.0 - h.overtime_rate)
            + 5.0 * h.overtime_rate;
        (
            h.sleep_mean_h,
            long,
            h.exercise_days_per_week,
            h.meals_per_day_mean,
            h.meals_per_day_mean * h.home_cooked_ratio,
        )
    } else {
        let early = &ev.days[..PROFILE_ANCHOR_DAYS];
        let n = early.len() as f64;
        let weeks = n / 7.0;
        (
            early.iter().map(|d| d.sleep_duration_h).sum::<f64>() / n,
            early.iter().filter(|d| tenths(d.work_hours) > 90).count() as f64 / weeks,
            early.iter().filter(|d| d.exercised).count() as f64 / weeks,
            early.iter().map(|d| d.meals_total as f64).sum::<f64>() / n,
            early.iter().map(|d| d.meals_home as f64).sum::<f64>() / n,
        )
    };
    let half = |x: f64| (x * 2.0).round() / 2.0;
    ProfileRecord {
        sleep_mean_h: keep[0].then(|| round1(sleep)),
        long_work_days_per_week: keep[1].then(|| half(long_work)),
        weekend_work_style: if keep[2] { p.claimed_weekend_style() } else { None },
        exercise_days_per_week: keep[3].then(|| half(exercise)),
        meals_per_day: keep[4].then(|| round1(meals)),
        home_cooked_mean: keep[5].then(|| round1(home)),
    }
}

fn normal_cdf(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26 through erf.
    let t = 1.0 / (1.0 + 0.3275911 * x.abs() / std::f64::consts::SQRT_2);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t + 0.254829592)
            * t
            * (-(x * x) / 2.0).exp();
    if x >= 0.0 {
        0.5 * (1.0 + y)
    } else {
        0.5 * (1.0 - y)
    }
}

fn project_planner(
    ev: &LatentEventTable,
    p: &PersonaTraits,
    cfg: &DgpConfig,
    r: &mut impl Rng,
) -> Vec<DayEntry<PlannerDay>> {
    let dist = &cfg.distortion;
    let opt = dist.planner_intent * cfg.bias_scale;
    let h = p.habit();
    let cap = ((h.work_base_h * 2.0).round() / 2.0).min(9.5);
    let goal = ((h.sleep_mean_h + 0.3 * cfg.bias_scale) * 2.0).round() / 2.0;
    let target = ((h.bedtime_mean - 15.0 * cfg.bias_scale) / 10.0).round() as i32 * 10;
    let social_base = 1.0 - (-h.social_rate).exp();
    let exercise_base = h.exercise_days_per_week / 7.0;
    ev.days
        .iter()
        .map(|d| {
            let u: [f64; 6] = std::array::from_fn(|_| r.random());
            let record = (u[0] >= dist.planner_day_missing).then(|| {
                let social_p = if d.social_events > 0 {
                    0.7 + opt
                } else {
                    (social_base * 0.5 + opt).min(1.0)
                };
                let exercise_p = if d.exercise_intentional {
                    0.9 + opt
                } else if d.exercised {
                    0.55 + opt
                } else {
                    (exercise_base + opt).min(1.0)
                };
                let planned_work = !d.is_weekend || d.worked();
                PlannerDay {
                    work_cap_h: planned_work.then_some(cap),
                    target_bedtime: (p.sets_bedtime_targets && u[1] < 0.8).then_some(target),
                    sleep_goal_h: (u[2] < 0.7).then_some(goal),
                    social_intent: u[3] < social_p,
                    exercise_planned: u[4] < exercise_p,
                    home_cooked_priority: u[5] < (h.home_cooked_ratio + opt).min(1.0),
                }
            });
            DayEntry { date: d.date, record }
        })
        .collect()
}

fn project_self_report(
    ev: &LatentEventTable,
    p: &PersonaTraits,
    cfg: &DgpConfig,
    r: &mut impl Rng,
) -> Vec<DayEntry<SelfReportDay>> {
    let dist = &cfg.distortion;
    let m = if p.difficulty == DifficultyClass::StatedVsRevealed {
        dist.svr_self_multiplier
    } else {
        1.0
    };
    let b = cfg.bias_scale * m;
    // claims and relabels are not amplified for stated-vs-revealed personas
    let bc = cfg.bias_scale;
    let anchor = dist.svr_self_anchor * cfg.bias_scale;
    let gap = &p.stated_vs_revealed_gaps;
    ev.days
        .iter()
        .enumerate()
        .map(|(day, d)| {
            let g = p.realized(day);
            let z_sleep = normal(r);
            let z_work = normal(r);
            let z_bed = normal(r);
            let u_meal: f64 = r.random();
            let u_meal_sign: f64 = r.random();
            let relabel_u: [f64; 5] = std::array::from_fn(|_| r.random());
            let drop_u: [f64; 3] = std::array::from_fn(|_| r.random());
            let u_claim: f64 = r.random();
            let u_intent: f64 = r.random();
            let u_motive: f64 = r.random();

            let relabel_p = ((dist.self_home_ratio * b + anchor * gap.home_ratio) / (1.0 - g.home_cooked_ratio).max(0.05))
                .min(1.0);
            let outside = d.meals_total - d.meals_home;
            let relabeled = relabel_u[..outside as usize]
                .iter()
                .filter(|&&u| u < relabel_p)
                .count() as u32;
            let mut meals = d.meals_total;
            let mut home = d.meals_home + relabeled;
            if u_meal < dist.self_meal_noise_rate * b {
                if u_meal_sign < 0.5 {
                    meals += 1;
                    home += 1;
                } else if meals > 1 {
                    meals -= 1;
                    home = home.min(meals);
                }
            }

            let work_hours = if d.worked() {
                round1(
                    (d.work_hours - dist.self_work_h * b + anchor * gap.work_h + dist.self_work_noise_h * b * z_work)
                        .max(0.5),
                )
            } else {
                0.0
            };
            let sleep_h = round1(
                (d.sleep_duration_h + dist.self_sleep_h * b + anchor * gap.sleep_h + dist.self_sleep_noise_h * b * z_sleep)
                    .clamp(2.0, 13.0),
            );
            let bedtime = d.bedtime - (dist.self_bedtime_min * b + 10.0 * b * z_bed).round() as i32;

            let exercised_claim = d.exercised || u_claim < dist.self_exercise_claim * bc;
            let exercise_intent_claim = exercised_claim
                .then_some(d.exercise_intentional || u_intent < dist.self_intent_claim * bc);

            let kept: Vec<Motivation> = d
                .social_motivations
                .iter()
                .zip(drop_u)
                .filter(|(_, u)| *u >= dist.self_social_dropout * bc)
                .map(|(m, _)| *m)
                .collect();
            let motivation_claim = if kept.is_empty() {
                None
            } else if kept.contains(&Motivation::SupportingOther)
                && u_motive >= dist.self_motivation_relabel * bc
            {
                Some(Motivation::SupportingOther)
            } else {
                Some(Motivation::Voluntary)
            };

            DayEntry {
                date: d.date,
                record: Some(SelfReportDay {
                    meals,
                    home_cooked: home,
                    work_hours,
                    sleep_h,
                    bedtime,
                    exercised_claim,
                    exercise_intent_claim,
                    social_events_claim: kept.len() as u32,
                    motivation_claim,
                }),
            }
        })
        .collect()
}

fn project_objective(
    ev: &LatentEventTable,
    _p: &PersonaTraits,
    cfg: &DgpConfig,
    r: &mut impl Rng,
) -> Vec<DayEntry<ObjectiveDay>> {
    let dist = &cfg.distortion;
    let missing_rate = r.random_range(0.0..=dist.objective_day_missing_max);
    ev.days
        .iter()
        .map(|d| {
            let u_day: f64 = r.random();
            let u_ts: f64 = r.random();
            let u_noise: f64 = r.random();
            let u_cal: f64 = r.random();
            let u_cal_noise: f64 = r.random();
            let delivery_u: [f64; 5] = std::array::from_fn(|_| r.random());
            let social_u: [f64; 3] = std::array::from_fn(|_| r.random());
            let u_coffee: f64 = r.random();
            let u_gym: f64 = r.random();

            let record = (u_day >= missing_rate).then(|| {
                let timesheet = (u_ts >= dist.objective_timesheet_missing).then(|| {
                    if d.worked() {
                        // Noise on the 0.1 h grid so |noise| stays within the bound.
                        let steps = (dist.objective_noise_h * cfg.bias_scale * 10.0).floor();
                        let k = ((u_noise * (2.0 * steps + 1.0)).floor() - steps) / 10.0;
                        round1((d.work_hours + k).max(0.0))
                    } else {
                        0.0
                    }
                });
                let outside = (d.meals_total - d.meals_home) as usize;
                ObjectiveDay {
                    timesheet_hours: timesheet,
                    delivery_purchases: delivery_u[..outside]
                        .iter()
                        .filter(|&&u| u < dist.delivery_share)
                        .count() as u32,
                    coffee_purchases: poisson_capped(u_coffee, 1.0, 4),
                    social_purchases: social_u[..d.social_events as usize]
                        .iter()
                        .filter(|&&u| u < dist.social_purchase_rate)
                        .count() as u32,
                    gym_checkin: d.exercise_intentional && u_gym < dist.gym_checkin_rate,
                    calendar_work_minutes: (d.worked() && u_cal >= dist.objective_calendar_missing)
                        .then(|| ((d.work_hours * 60.0) + 30.0 * (u_cal_noise - 0.5)).round().max(0.0) as u32),
                }
            });
            DayEntry { date: d.date, record }
        })
        .collect()
}

fn project_device(
    ev: &LatentEventTable,
    p: &PersonaTraits,
    cfg: &DgpConfig,
    r: &mut impl Rng,
) -> Vec<DayEntry<DeviceDay>> {
    let dist = &cfg.distortion;
    let miss = (dist.device_day_missing[p.difficulty.index()] * cfg.dropout_scale).clamp(0.0, 1.0);
    let field_drop = (dist.device_work_field_dropout * cfg.dropout_scale).clamp(0.0, 1.0);
    ev.days
        .iter()
        .map(|d| {
            let u_day: f64 = r.random();
            let z_sleep = normal(r);
            let z_bed = normal(r);
            let u_active: f64 = r.random();
            let u_detect: f64 = r.random();
            let u_field: f64 = r.random();
            let u_session: f64 = r.random();
            let record = (u_day >= miss).then(|| {
                let active_minutes = if d.exercise_intentional {
                    30.0 + 45.0 * u_active
                } else if d.exercised {
                    10.0 + 25.0 * u_active
                } else {
                    20.0 * u_active
                };
                let detect_p = if d.exercise_intentional {
                    dist.device_detect_intentional
                } else if d.exercised {
                    dist.device_detect_incidental
                } else {
                    0.0
                };
                DeviceDay {
                    sleep_duration_h: round1((d.sleep_duration_h + 0.1 * z_sleep).max(0.5)),
                    bedtime: d.bedtime + (4.0 * z_bed).round() as i32,
                    active_minutes: active_minutes.round() as u32,
                    workout_detected: u_detect < detect_p,
                    work_session_minutes: (u_field >= field_drop)
                        .then(|| (d.work_hours * 60.0 * (0.75 + 0.25 * u_session)).round() as u32),
                }
            });
            DayEntry { date: d.date, record }
        })
        .collect()
}

pub fn project_all(ev: &LatentEventTable, p: &PersonaTraits, cfg: &DgpConfig) -> StreamSet {
    SourceId::ALL
        .into_iter()
        .map(|s| (s, project_source(ev, p, s, cfg)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub bias_scale: f64,
    pub dropout_scale: f64,
    pub n_personas: usize,
    pub template_version: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonaData {
    pub traits: PersonaTraits,
    pub events: LatentEventTable,
    pub streams: StreamSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: DgpConfig,
    pub personas: Vec<PersonaData>,
    pub splits: Vec<SplitAssignment>,
    pub provenance: Provenance,
}

impl Cohort {
    pub fn difficulties(&self) -> BTreeMap<String, DifficultyClass> {
        self.personas
            .iter()
            .map(|p| (p.traits.persona_id.clone(), p.traits.difficulty))
            .collect()
    }

    pub fn split_of(&self) -> BTreeMap<String, schema::Split> {
        self.splits
            .iter()
            .map(|s| (s.persona_id.clone(), s.split))
            .collect()
    }
}

pub fn config_hash(cfg: &DgpConfig) -> String {
    use sha2::{Digest, Sha256};
    let text = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn generate_cohort(cfg: &DgpConfig) -> Result<Cohort> {
    use rayon::prelude::*;
    let traits = generate_personas(cfg)?;
    let personas: Vec<PersonaData> = traits
        .into_par_iter()
        .map(|t| {
            let events = simulate_events(&t, cfg);
            let streams = project_all(&events, &t, cfg);
            PersonaData {
                traits: t,
                events,
                streams,
            }
        })
        .collect();
    let ids: Vec<String> = personas.iter().map(|p| p.traits.persona_id.clone()).collect();
    let diff = personas
        .iter()
        .map(|p| (p.traits.persona_id.clone(), p.traits.difficulty))
        .collect();
    let splits = schema::assign_splits(&ids, &diff, cfg.seed)?;
    Ok(Cohort {
        config: cfg.clone(),
        provenance: Provenance {
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            bias_scale: cfg.bias_scale,
            dropout_scale: cfg.dropout_scale,
            n_personas: cfg.n_personas,
            template_version: crate::nl_render::TEMPLATE_VERSION.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        personas,
        splits,
    })
}

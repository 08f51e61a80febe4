use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::schema::{QuestionSpec, SourceId, Topic};

/// Expected direction in which each source misreports each question, in
/// steps along the question's bias-shift order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasPrior {
    /// Apply the per-source defaults; when false only overrides count.
    pub use_defaults: bool,
    /// (question id, source) → shift; takes precedence over the defaults.
    pub overrides: BTreeMap<String, BTreeMap<SourceId, i8>>,
}

impl Default for BiasPrior {
    fn default() -> Self {
        let mut overrides: BTreeMap<String, BTreeMap<SourceId, i8>> = BTreeMap::new();
        let mut set = |q: &str, s: SourceId, v: i8| {
            overrides.entry(q.to_string()).or_default().insert(s, v);
        };
        set("A2", SourceId::DailySelfReport, 1);
        set("C2", SourceId::DailySelfReport, 1);
        set("F1", SourceId::Planner, -1);
        set("F1", SourceId::DailySelfReport, 1);
        set("G2", SourceId::DailySelfReport, 1);
        BiasPrior {
            use_defaults: true,
            overrides,
        }
    }
}

impl BiasPrior {
    /// All shifts zero.
    pub fn neutral() -> Self {
        BiasPrior {
            use_defaults: false,
            overrides: BTreeMap::new(),
        }
    }

    pub fn shift(&self, q: &QuestionSpec, s: SourceId) -> i8 {
        if let Some(v) = self.overrides.get(&q.id).and_then(|m| m.get(&s)) {
            return *v;
        }
        if !self.use_defaults {
            return 0;
        }
        match s {
            SourceId::Planner => 1,
            SourceId::DailySelfReport => match q.topic {
                Topic::Sleep | Topic::Diet | Topic::Exercise => 1,
                Topic::Work | Topic::Social => -1,
            },
            _ => 0,
        }
    }
}

/// Moves `v` by `shift * round(steps)` ranks along the bias-shift order,
/// clamped to the non-edge range. Edge labels and nominal questions are
/// returned unchanged.
pub fn bias_shift(q: &QuestionSpec, v: usize, shift: i8, steps: f64) -> usize {
    let Some(rank) = q.rank_of(v) else {
        return v;
    };
    let top = q.rank_count() as i64 - 1;
    let moved = (rank as i64 + shift as i64 * steps.round() as i64).clamp(0, top);
    q.index_at_rank(moved as usize)
}

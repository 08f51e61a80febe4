//! Shared vocabulary: the question registry, source identifiers, difficulty
//! classes and the stratified train/dev/calibration/test split.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Number of question templates a registry must hold.
pub const REGISTRY_SIZE: usize = 18;

const DEFAULT_REGISTRY_JSON: &str = include_str!("../data/questions.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReasoningType {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    Ctrl,
}

impl ReasoningType {
    pub const ALL: [ReasoningType; 8] = [
        ReasoningType::A,
        ReasoningType::B,
        ReasoningType::C,
        ReasoningType::D,
        ReasoningType::E,
        ReasoningType::F,
        ReasoningType::G,
        ReasoningType::Ctrl,
    ];

    pub fn family(self) -> &'static str {
        match self {
            ReasoningType::A => "Source arbitration",
            ReasoningType::B => "Profile vs. behavior",
            ReasoningType::C => "Plan vs. reality",
            ReasoningType::D => "Temporal trend",
            ReasoningType::E => "Factor attribution",
            ReasoningType::F => "Missing evidence",
            ReasoningType::G => "Latent event annotation",
            ReasoningType::Ctrl => "Control",
        }
    }
}

impl fmt::Display for ReasoningType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    Work,
    Diet,
    Social,
    Sleep,
    Exercise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceId {
    ProfileLtm,
    Planner,
    DailySelfReport,
    ObjectiveLog,
    DeviceLog,
}

impl SourceId {
    /// Canonical order, also used for deterministic tie-breaking.
    pub const ALL: [SourceId; 5] = [
        SourceId::ProfileLtm,
        SourceId::Planner,
        SourceId::DailySelfReport,
        SourceId::ObjectiveLog,
        SourceId::DeviceLog,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceId::ProfileLtm => "profile_ltm",
            SourceId::Planner => "planner",
            SourceId::DailySelfReport => "daily_self_report",
            SourceId::ObjectiveLog => "objective_log",
            SourceId::DeviceLog => "device_log",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        SourceId::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown source id {s:?}")))
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyClass {
    Stable,
    TemporalShift,
    StatedVsRevealed,
}

impl DifficultyClass {
    pub const ALL: [DifficultyClass; 3] = [
        DifficultyClass::Stable,
        DifficultyClass::TemporalShift,
        DifficultyClass::StatedVsRevealed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DifficultyClass::Stable => "stable",
            DifficultyClass::TemporalShift => "temporal_shift",
            DifficultyClass::StatedVsRevealed => "stated_vs_revealed",
        }
    }

    /// Prefix used in generated persona identifiers.
    pub fn id_prefix(self) -> &'static str {
        match self {
            DifficultyClass::Stable => "stable",
            DifficultyClass::TemporalShift => "shift",
            DifficultyClass::StatedVsRevealed => "stated",
        }
    }
}

impl fmt::Display for DifficultyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Calibration,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Dev, Split::Calibration, Split::Test];

    /// Per-class share of each split, in twentieths (9/2/4/5 → 216/48/96/120 of 480).
    const TWENTIETHS: [usize; 4] = [9, 2, 4, 5];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub persona_id: String,
    pub split: Split,
}

/// One closed-class question template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    #[serde(rename = "type")]
    pub reasoning_type: ReasoningType,
    pub topic: Topic,
    pub window_days: u32,
    pub answers: Vec<String>,
    pub edge_labels: Vec<String>,
    pub ordinal: bool,
    pub bias_shift_order: Vec<String>,
    #[serde(skip)]
    ranks: Vec<Option<usize>>,
    #[serde(skip)]
    by_rank: Vec<usize>,
}

impl QuestionSpec {
    /// Number of answer options.
    pub fn k(&self) -> usize {
        self.answers.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.answers.iter().position(|a| a == label)
    }

    pub fn require_label(&self, label: &str) -> Result<usize> {
        self.label_index(label).ok_or_else(|| Error::UnknownLabel {
            question: self.id.clone(),
            label: label.to_string(),
        })
    }

    pub fn label(&self, index: usize) -> &str {
        &self.answers[index]
    }

    pub fn is_edge(&self, index: usize) -> bool {
        self.edge_labels.iter().any(|e| *e == self.answers[index])
    }

    /// Number of answers on the bias-shift axis.
    pub fn rank_count(&self) -> usize {
        self.by_rank.len()
    }

    /// Rank of the answer at `index` on the bias-shift axis; `None` for edge
    /// labels and for every label of a nominal question.
    pub fn rank_of(&self, index: usize) -> Option<usize> {
        self.ranks[index]
    }

    /// Answer index at a bias-shift rank.
    pub fn index_at_rank(&self, rank: usize) -> usize {
        self.by_rank[rank]
    }

    fn invalid(&self, message: impl Into<String>) -> Error {
        Error::InvalidQuestion {
            question: self.id.clone(),
            message: message.into(),
        }
    }

    fn finalize(mut self) -> Result<Self> {
        if self.id.trim().is_empty() {
            return Err(Error::Registry("question with empty id".into()));
        }
        if !matches!(self.window_days, 7 | 14 | 30) {
            return Err(self.invalid(format!("window_days {} not in {{7,14,30}}", self.window_days)));
        }
        if !matches!(self.k(), 3 | 4) {
            return Err(self.invalid(format!("answer space has {} labels, expected 3 or 4", self.k())));
        }
        let mut seen = HashSet::new();
        for a in &self.answers {
            if a.is_empty() || a.contains(char::is_whitespace) {
                return Err(self.invalid(format!("label {a:?} is not an underscored identifier")));
            }
            if !seen.insert(a.as_str()) {
                return Err(self.invalid(format!("duplicate label {a}")));
            }
        }
        for e in &self.edge_labels {
            if self.label_index(e).is_none() {
                return Err(self.invalid(format!("edge label {e} not in answers")));
            }
        }
        let non_edge: Vec<&String> = self
            .answers
            .iter()
            .filter(|a| !self.edge_labels.contains(a))
            .collect();
        let mut order_sorted: Vec<&String> = self.bias_shift_order.iter().collect();
        order_sorted.sort();
        let mut non_edge_sorted = non_edge.clone();
        non_edge_sorted.sort();
        if order_sorted != non_edge_sorted {
            return Err(self.invalid("bias_shift_order must be a permutation of the non-edge answers"));
        }
        self.by_rank = self
            .bias_shift_order
            .iter()
            .map(|l| self.label_index(l).unwrap())
            .collect();
        self.ranks = vec![None; self.k()];
        if self.ordinal {
            for (rank, &idx) in self.by_rank.iter().enumerate() {
                self.ranks[idx] = Some(rank);
            }
        }
        Ok(self)
    }
}

/// Validated, immutable list of question templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    questions: Vec<QuestionSpec>,
}

impl Registry {
    pub fn from_specs(specs: Vec<QuestionSpec>) -> Result<Self> {
        if specs.len() < REGISTRY_SIZE {
            return Err(Error::Registry(format!(
                "registry incomplete: {} of {REGISTRY_SIZE} questions",
                specs.len()
            )));
        }
        if specs.len() > REGISTRY_SIZE {
            return Err(Error::Registry(format!(
                "registry has {} questions, expected {REGISTRY_SIZE}",
                specs.len()
            )));
        }
        let mut ids = HashSet::new();
        let mut questions = Vec::with_capacity(specs.len());
        for spec in specs {
            if !ids.insert(spec.id.clone()) {
                return Err(Error::Registry(format!("duplicate question id {}", spec.id)));
            }
            questions.push(spec.finalize()?);
        }
        Ok(Registry { questions })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vec<serde_json::Value> = serde_json::from_str(text)?;
        let mut specs = Vec::with_capacity(raw.len());
        for (i, value) in raw.into_iter().enumerate() {
            let id = value
                .get("id")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| format!("#{i}"));
            let spec: QuestionSpec = serde_json::from_value(value).map_err(|e| Error::InvalidQuestion {
                question: id,
                message: e.to_string(),
            })?;
            specs.push(spec);
        }
        Registry::from_specs(specs)
    }

    /// The built-in 18-question registry.
    pub fn builtin() -> Self {
        Registry::from_json(DEFAULT_REGISTRY_JSON).expect("built-in registry is valid")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.questions).expect("registry serializes");
        s.push('\n');
        s
    }

    pub fn questions(&self) -> &[QuestionSpec] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, index: usize) -> &QuestionSpec {
        &self.questions[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.questions.iter().position(|q| q.id == id)
    }

    pub fn by_id(&self, id: &str) -> Result<&QuestionSpec> {
        self.index_of(id)
            .map(|i| &self.questions[i])
            .ok_or_else(|| Error::UnknownQuestion(id.to_string()))
    }
}

pub fn load_question_registry(path: &Path) -> Result<Registry> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Registry::from_json(&text)
}

/// Rank of `label` along the question's bias-shift axis.
pub fn ordinal_rank(q: &QuestionSpec, label: &str) -> Result<Option<usize>> {
    Ok(q.rank_of(q.require_label(label)?))
}

/// Stratified split: each difficulty class is shuffled with the split stream
/// and cut 9/2/4/5 twentieths into train/dev/calibration/test.
pub fn assign_splits(
    persona_ids: &[String],
    difficulties: &BTreeMap<String, DifficultyClass>,
    seed: u64,
) -> Result<Vec<SplitAssignment>> {
    let mut by_class: BTreeMap<DifficultyClass, Vec<&String>> = BTreeMap::new();
    for id in persona_ids {
        let class = difficulties
            .get(id)
            .ok_or_else(|| Error::Split(format!("persona {id} has no difficulty class")))?;
        by_class.entry(*class).or_default().push(id);
    }
    let sizes: Vec<usize> = DifficultyClass::ALL
        .iter()
        .map(|c| by_class.get(c).map_or(0, Vec::len))
        .collect();
    if sizes.iter().any(|&n| n != sizes[0]) || sizes[0] == 0 {
        return Err(Error::Split(format!("unbalanced cohort: class sizes {sizes:?}")));
    }
    let per_class = sizes[0];
    if !per_class.is_multiple_of(20) {
        return Err(Error::Split(format!(
            "{per_class} personas per class cannot be cut 9:2:4:5 exactly"
        )));
    }

    let mut rng = rng::stream(seed, &["split"]);
    let mut split_of: BTreeMap<&String, Split> = BTreeMap::new();
    for class in DifficultyClass::ALL {
        let mut ids = by_class.remove(&class).unwrap_or_default();
        ids.shuffle(&mut rng);
        let mut start = 0;
        for (split, share) in Split::ALL.iter().zip(Split::TWENTIETHS) {
            let n = per_class * share / 20;
            for id in &ids[start..start + n] {
                split_of.insert(*id, *split);
            }
            start += n;
        }
    }
    Ok(persona_ids
        .iter()
        .map(|id| SplitAssignment {
            persona_id: id.clone(),
            split: split_of[id],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(n_per_class: usize) -> (Vec<String>, BTreeMap<String, DifficultyClass>) {
        let mut ids = Vec::new();
        let mut diff = BTreeMap::new();
        for class in DifficultyClass::ALL {
            for i in 0..n_per_class {
                let id = format!("{}_{i:03}", class.id_prefix());
                diff.insert(id.clone(), class);
                ids.push(id);
            }
        }
        (ids, diff)
    }

    #[test]
    fn builtin_registry_matches_published_metadata() {
        let reg = Registry::builtin();
        assert_eq!(reg.len(), 18);
        let a1 = reg.by_id("A1").unwrap();
        assert_eq!(a1.answers, ["fewer_than_10", "10_to_19", "20_or_more"]);
        assert!(a1.ordinal);
        assert_eq!(a1.window_days, 30);
        let b2 = reg.by_id("B2").unwrap();
        assert_eq!(b2.k(), 4);
        assert_eq!(b2.edge_labels, ["no_frequency_described"]);
        let nominal: Vec<&str> = reg
            .questions()
            .iter()
            .filter(|q| !q.ordinal)
            .map(|q| q.id.as_str())
            .collect();
        assert_eq!(nominal, ["B3", "C3", "E1"]);
    }

    #[test]
    fn ordinal_rank_examples() {
        let reg = Registry::builtin();
        assert_eq!(ordinal_rank(reg.by_id("A1").unwrap(), "fewer_than_10").unwrap(), Some(0));
        assert_eq!(
            ordinal_rank(reg.by_id("B2").unwrap(), "no_frequency_described").unwrap(),
            None
        );
        assert_eq!(ordinal_rank(reg.by_id("B3").unwrap(), "matches").unwrap(), None);
        assert!(ordinal_rank(reg.by_id("A1").unwrap(), "lots").is_err());
        // A2 runs its shift axis from the high-work end.
        assert_eq!(ordinal_rank(reg.by_id("A2").unwrap(), "8_or_more").unwrap(), Some(0));
        assert_eq!(ordinal_rank(reg.by_id("A2").unwrap(), "0_to_3").unwrap(), Some(2));
    }

    #[test]
    fn ordinal_rank_is_a_bijection_on_non_edge_answers() {
        for q in Registry::builtin().questions().iter().filter(|q| q.ordinal) {
            let mut ranks: Vec<usize> = (0..q.k()).filter_map(|i| q.rank_of(i)).collect();
            ranks.sort();
            let expected: Vec<usize> = (0..q.k() - q.edge_labels.len()).collect();
            assert_eq!(ranks, expected, "{}", q.id);
        }
    }

    #[test]
    fn registry_round_trips_modulo_field_order() {
        let text = DEFAULT_REGISTRY_JSON;
        let reg = Registry::from_json(text).unwrap();
        let a: serde_json::Value = serde_json::from_str(text).unwrap();
        let b: serde_json::Value = serde_json::from_str(&reg.to_json()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn incomplete_and_duplicate_registries_are_rejected() {
        let mut specs: Vec<serde_json::Value> = serde_json::from_str(DEFAULT_REGISTRY_JSON).unwrap();
        let last = specs.pop().unwrap();
        let err = Registry::from_json(&serde_json::to_string(&specs).unwrap()).unwrap_err();
        assert!(err.to_string().contains("registry incomplete"), "{err}");

        specs.push(specs[0].clone());
        let err = Registry::from_json(&serde_json::to_string(&specs).unwrap()).unwrap_err();
        assert!(err.to_string().contains("duplicate question id A1"), "{err}");

        specs.pop();
        let mut bad = last.clone();
        bad["bias_shift_order"] = serde_json::json!(["0_nights"]);
        specs.push(bad);
        let err = Registry::from_json(&serde_json::to_string(&specs).unwrap()).unwrap_err();
        assert!(err.to_string().contains("Ctrl2"), "{err}");

        specs.pop();
        let mut bad = last;
        bad["window_days"] = serde_json::json!("seven");
        specs.push(bad);
        let err = Registry::from_json(&serde_json::to_string(&specs).unwrap()).unwrap_err();
        assert!(err.to_string().contains("Ctrl2"), "{err}");
    }

    #[test]
    fn splits_have_exact_stratified_counts() {
        let (ids, diff) = balanced(160);
        let a = assign_splits(&ids, &diff, 1).unwrap();
        let count = |split: Split, class: Option<DifficultyClass>| {
            a.iter()
                .filter(|s| s.split == split && class.is_none_or(|c| diff[&s.persona_id] == c))
                .count()
        };
        assert_eq!(
            Split::ALL.map(|s| count(s, None)),
            [216, 48, 96, 120]
        );
        for class in DifficultyClass::ALL {
            assert_eq!(Split::ALL.map(|s| count(s, Some(class))), [72, 16, 32, 40]);
        }
        assert_eq!(a, assign_splits(&ids, &diff, 1).unwrap());
        let b = assign_splits(&ids, &diff, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(Split::ALL.map(|s| b.iter().filter(|x| x.split == s).count()), [216, 48, 96, 120]);
    }

    #[test]
    fn unbalanced_cohort_is_rejected() {
        let (mut ids, diff) = balanced(160);
        ids.pop();
        assert!(assign_splits(&ids, &diff, 1).is_err());
        let (ids, diff) = balanced(7);
        assert!(assign_splits(&ids, &diff, 1).is_err());
    }
}

//! Record schemas shared by every analysis module and by the rating service.
//!
//! Every type here is a plain value: it serializes to one JSON object per
//! line in the `*.jsonl` interchange files, with field names matching the
//! struct fields.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("model id must be a non-empty string")]
    EmptyModelId,
    #[error("a study needs two distinct models, got {0} twice")]
    SameModel(String),
    #[error("target_ratings must be positive")]
    ZeroTarget,
    #[error("unknown aspect {0:?}")]
    UnknownAspect(String),
    #[error("unknown fairness axis {0:?}")]
    UnknownAxis(String),
    #[error("category {category:?} is not defined for axis {axis}")]
    UnknownCategory { axis: Axis, category: String },
    #[error("target count {0} outside 1..=10")]
    TargetCountOutOfRange(u32),
}

/// Name of a generative model under evaluation.
///
/// Ordering is plain lexicographic and defines the canonical `model_a` /
/// `model_b` orientation of a study.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(String);

impl ModelId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(ModelError::EmptyModelId);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ModelId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

/// The question a study asks raters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    OverallPreference,
    Alignment,
    VisualAppeal,
    ContentRecreation,
    Counting,
}

impl Aspect {
    pub const ALL: [Aspect; 5] = [
        Aspect::OverallPreference,
        Aspect::Alignment,
        Aspect::VisualAppeal,
        Aspect::ContentRecreation,
        Aspect::Counting,
    ];

    pub fn is_side_by_side(self) -> bool {
        !matches!(self, Aspect::Counting)
    }

    /// Visual appeal is judged on the images alone.
    pub fn shows_prompt(self) -> bool {
        !matches!(self, Aspect::VisualAppeal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::OverallPreference => "overall_preference",
            Aspect::Alignment => "alignment",
            Aspect::VisualAppeal => "visual_appeal",
            Aspect::ContentRecreation => "content_recreation",
            Aspect::Counting => "counting",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match key.as_str() {
            "overall" | "overall_preference" | "preference" => Aspect::OverallPreference,
            "alignment" | "prompt_alignment" | "t2i_alignment" => Aspect::Alignment,
            "visual" | "visual_appeal" | "appeal" => Aspect::VisualAppeal,
            "content" | "content_recreation" | "recreation" => Aspect::ContentRecreation,
            "counting" | "numerical" | "numerical_reasoning" => Aspect::Counting,
            _ => return Err(ModelError::UnknownAspect(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub prompt_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_type: Option<String>,
    /// Noun substituted into the counting question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_object: Option<String>,
}

impl PromptEntry {
    pub fn new(prompt_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            text: text.into(),
            reference_image: None,
            target_count: None,
            sentence_type: None,
            count_object: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub name: String,
    pub prompts: Vec<PromptEntry>,
}

impl PromptSet {
    pub fn prompt_ids(&self) -> Vec<String> {
        self.prompts.iter().map(|p| p.prompt_id.clone()).collect()
    }

    pub fn get(&self, prompt_id: &str) -> Option<&PromptEntry> {
        self.prompts.iter().find(|p| p.prompt_id == prompt_id)
    }

    /// Problems that make this set unusable for `aspect`.
    pub fn check_for(&self, aspect: Aspect) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for p in &self.prompts {
            if !seen.insert(p.prompt_id.as_str()) {
                problems.push(format!("duplicate prompt_id {:?}", p.prompt_id));
            }
            match (aspect, p.target_count) {
                (Aspect::Counting, None) => {
                    problems.push(format!("prompt {:?} lacks target_count", p.prompt_id))
                }
                (Aspect::Counting, Some(n)) if !(1..=10).contains(&n) => problems.push(format!(
                    "prompt {:?} target_count {n} outside 1..=10",
                    p.prompt_id
                )),
                _ => {}
            }
            if aspect == Aspect::ContentRecreation && p.reference_image.is_none() {
                problems.push(format!("prompt {:?} lacks reference_image", p.prompt_id));
            }
        }
        if self.prompts.is_empty() {
            problems.push(format!("prompt set {:?} is empty", self.name));
        }
        problems
    }
}

/// Opaque, deterministic identifier for a study. Carries no model names so it
/// can appear in operator-facing payloads without de-anonymizing anything.
pub fn study_id_for(aspect: Aspect, prompt_set: &str, model_a: &ModelId, model_b: &ModelId) -> String {
    let mut hasher = Sha256::new();
    for part in [aspect.as_str(), prompt_set, model_a.as_str(), model_b.as_str()] {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("s-{hex}")
}

pub const DEFAULT_TARGET_RATINGS: u32 = 2500;

/// One model pair compared on one aspect over one prompt set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Study {
    pub study_id: String,
    pub aspect: Aspect,
    pub prompt_set: String,
    pub model_a: ModelId,
    pub model_b: ModelId,
    pub target_ratings: u32,
}

impl Study {
    /// Builds a study with the pair in canonical order (`model_a < model_b`).
    pub fn new(
        aspect: Aspect,
        prompt_set: impl Into<String>,
        first: ModelId,
        second: ModelId,
        target_ratings: u32,
    ) -> Result<Self, ModelError> {
        if first == second {
            return Err(ModelError::SameModel(first.0));
        }
        if target_ratings == 0 {
            return Err(ModelError::ZeroTarget);
        }
        let (model_a, model_b) = if first < second { (first, second) } else { (second, first) };
        let prompt_set = prompt_set.into();
        Ok(Self {
            study_id: study_id_for(aspect, &prompt_set, &model_a, &model_b),
            aspect,
            prompt_set,
            model_a,
            model_b,
            target_ratings,
        })
    }

    pub fn involves(&self, model: &ModelId) -> bool {
        &self.model_a == model || &self.model_b == model
    }

    pub fn opponent_of(&self, model: &ModelId) -> Option<&ModelId> {
        if &self.model_a == model {
            Some(&self.model_b)
        } else if &self.model_b == model {
            Some(&self.model_a)
        } else {
            None
        }
    }
}

/// Single-model counting study: humans count objects in one model's images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingStudy {
    pub study_id: String,
    pub prompt_set: String,
    pub model: ModelId,
    pub target_ratings: u32,
}

impl CountingStudy {
    pub fn new(prompt_set: impl Into<String>, model: ModelId, target_ratings: u32) -> Result<Self, ModelError> {
        if target_ratings == 0 {
            return Err(ModelError::ZeroTarget);
        }
        let prompt_set = prompt_set.into();
        Ok(Self {
            study_id: study_id_for(Aspect::Counting, &prompt_set, &model, &model),
            prompt_set,
            model,
            target_ratings,
        })
    }
}

/// Side of the screen a model's image was shown on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Canonical stored choice: `A` always means `model_a` was preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    Tie,
}

/// What the rater actually clicked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Left,
    Right,
    Indifferent,
}

impl Response {
    pub fn canonicalize(self, a_side: Side) -> Choice {
        match (self, a_side) {
            (Response::Indifferent, _) => Choice::Tie,
            (Response::Left, Side::Left) | (Response::Right, Side::Right) => Choice::A,
            (Response::Left, Side::Right) | (Response::Right, Side::Left) => Choice::B,
        }
    }
}

impl FromStr for Response {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(Response::Left),
            "right" => Ok(Response::Right),
            "indifferent" | "tie" => Ok(Response::Indifferent),
            other => Err(format!("unknown response {other:?}")),
        }
    }
}

impl Choice {
    /// Inverse of [`Response::canonicalize`].
    pub fn presented(self, a_side: Side) -> Response {
        match (self, a_side) {
            (Choice::Tie, _) => Response::Indifferent,
            (Choice::A, Side::Left) | (Choice::B, Side::Right) => Response::Left,
            (Choice::A, Side::Right) | (Choice::B, Side::Left) => Response::Right,
        }
    }

    pub fn mirrored(self) -> Choice {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
            Choice::Tie => Choice::Tie,
        }
    }
}

/// One human side-by-side judgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rating_id: String,
    pub study_id: String,
    pub prompt_id: String,
    pub rater_id: String,
    pub a_side: Side,
    pub choice: Choice,
    pub timestamp: DateTime<Utc>,
    /// Batch of ratings saved by one rater in one sitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submission_id: Option<String>,
    /// Raw click, kept so the canonical choice can be audited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Response>,
}

impl RatingRecord {
    /// Key used to count submissions. Records without a stamped submission
    /// fall back to one submission per rater.
    pub fn submission_key(&self) -> &str {
        self.submission_id.as_deref().unwrap_or(&self.rater_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountAnnotation {
    pub prompt_id: String,
    pub model: ModelId,
    pub target_count: u32,
    pub sentence_type: String,
    pub annotated_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rater_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
}

impl CountAnnotation {
    pub fn is_exact(&self) -> bool {
        self.annotated_count == self.target_count
    }
}

/// Demographic axis of a perceived-attribute label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    PerceivedGender,
    PerceivedSkinTone,
    PerceivedAge,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::PerceivedGender, Axis::PerceivedSkinTone, Axis::PerceivedAge];

    pub fn categories(self) -> &'static [&'static str] {
        match self {
            Axis::PerceivedAge => &["0-30", "30+"],
            Axis::PerceivedGender => &["masculine", "feminine"],
            Axis::PerceivedSkinTone => &["mst1-3", "mst4-6", "mst7-8", "mst9-10"],
        }
    }

    pub fn check_category(self, category: &str) -> Result<(), ModelError> {
        if self.categories().contains(&category) {
            Ok(())
        } else {
            Err(ModelError::UnknownCategory { axis: self, category: category.to_string() })
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::PerceivedGender => "P. Gender",
            Axis::PerceivedSkinTone => "P. Skin Tone",
            Axis::PerceivedAge => "P. Age",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::PerceivedGender => "PerceivedGender",
            Axis::PerceivedSkinTone => "PerceivedSkinTone",
            Axis::PerceivedAge => "PerceivedAge",
        };
        f.write_str(s)
    }
}

impl FromStr for Axis {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "perceivedgender" | "gender" => Ok(Axis::PerceivedGender),
            "perceivedskintone" | "skintone" => Ok(Axis::PerceivedSkinTone),
            "perceivedage" | "age" => Ok(Axis::PerceivedAge),
            _ => Err(ModelError::UnknownAxis(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalLabel {
    pub prompt_id: String,
    pub model: ModelId,
    pub image_index: u32,
    pub axis: Axis,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub dataset: String,
    pub metric_name: String,
    pub model: ModelId,
    pub prompt_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub total_ratings: u64,
    pub total_submissions: u64,
    pub distinct_raters: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nationalities: Option<BTreeMap<String, u64>>,
}

/// Exact counts over a rating log. `nationality_of` maps rater ids to a
/// nationality; raters missing from it are not counted in the histogram.
pub fn summarize_corpus(
    records: &[RatingRecord],
    nationality_of: Option<&BTreeMap<String, String>>,
) -> CorpusSummary {
    let submissions: BTreeSet<(&str, &str)> =
        records.iter().map(|r| (r.rater_id.as_str(), r.submission_key())).collect();
    let raters: BTreeSet<&str> = records.iter().map(|r| r.rater_id.as_str()).collect();
    let nationalities = nationality_of.map(|table| {
        let mut hist = BTreeMap::new();
        for rater in &raters {
            if let Some(n) = table.get(*rater) {
                *hist.entry(n.clone()).or_insert(0u64) += 1;
            }
        }
        hist
    });
    CorpusSummary {
        total_ratings: records.len() as u64,
        total_submissions: submissions.len() as u64,
        distinct_raters: raters.len() as u64,
        nationalities,
    }
}

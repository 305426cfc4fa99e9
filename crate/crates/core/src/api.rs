//! Wire types shared by the rating service, its client and the rater UI.
//!
//! Nothing here carries a model name or a study id: tasks are identified by
//! opaque task ids and images by opaque asset tokens.

use serde::{Deserialize, Serialize};

use crate::elo::Leaderboard;
use crate::model::{Aspect, ModelId, Response};

pub const OVERALL_PREFERENCE_QUESTION: &str = "Imagine you are using a computer tool that produces an image given the prompt above. Choose which image you would prefer to see if you were using this tool. If both images are equally appealing, select \"I am indifferent\"";
pub const ALIGNMENT_QUESTION: &str = "Considering the text above, which image better captures the intent of the prompt? Please try to ignore potential defects or bad quality of the images. Unless mentioned in the prompt, also disregard the different styles.";
pub const VISUAL_APPEAL_QUESTION: &str = "Which image is more appealing to you?";
pub const CONTENT_RECREATION_QUESTION: &str = "Look at the reference image, then at the two candidates. Which candidate shows the same content as the reference? Focus on the semantics of the images: the objects, where they are and which way they face. Ignore style, capturing technique and image quality.";

/// Question shown to raters for a task of `aspect`. `count_object` fills
/// the counting template and is ignored for other aspects.
pub fn question_text(aspect: Aspect, count_object: Option<&str>) -> String {
    match aspect {
        Aspect::OverallPreference => OVERALL_PREFERENCE_QUESTION.to_string(),
        Aspect::Alignment => ALIGNMENT_QUESTION.to_string(),
        Aspect::VisualAppeal => VISUAL_APPEAL_QUESTION.to_string(),
        Aspect::ContentRecreation => CONTENT_RECREATION_QUESTION.to_string(),
        Aspect::Counting => format!("How many {} are in the image?", count_object.unwrap_or("objects")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerKind {
    Choice3,
    CountInteger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub task_id: String,
    pub question_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
    /// The only image of a counting task.
    pub left_image_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_image_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_image_url: Option<String>,
    pub answer_kind: AnswerKind,
    /// Lease end as RFC 3339.
    pub lease_expires_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTaskResponse {
    Task { task: TaskPayload },
    NoTaskAvailable,
}

/// `"left"`, `"right"`, `"indifferent"` or a non-negative integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Count(u32),
    Choice(Response),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub task_id: String,
    pub answer: Answer,
    pub rater_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Duplicate,
    LeaseExpired,
    UnknownTask,
    WrongRater,
    InvalidAnswer,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Duplicate => "duplicate",
            RejectReason::LeaseExpired => "lease_expired",
            RejectReason::UnknownTask => "unknown_task",
            RejectReason::WrongRater => "wrong_rater",
            RejectReason::InvalidAnswer => "invalid_answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionAck {
    /// Id of the stored record; for duplicates, the one stored first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating_id: Option<String>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardResponse {
    pub leaderboard: Leaderboard,
    /// Number of log entries the snapshot was computed from.
    pub log_offset: u64,
    pub studies_used: usize,
    /// Studies left out for having fewer ratings than the release threshold.
    pub studies_withheld: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    NoData,
    Disconnected,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    /// Fittable groups of models when the comparison graph is disconnected.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<Vec<ModelId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub log_entries: u64,
    pub open_leases: usize,
}

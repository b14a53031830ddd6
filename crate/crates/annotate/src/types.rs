use std::path::PathBuf;

use durflow_core::dpo::PromptRecord;
use serde::{Deserialize, Serialize};

pub const GUIDELINES: [&str; 3] = ["naturalness", "abnormal pausing", "prosodic similarity"];

/// One duration rendition of the target plus the audio rendered from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rendition {
    pub durations: Vec<u32>,
    /// Relative paths resolve against the store's media root.
    pub media: PathBuf,
}

/// Two renditions of the same target under the same condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub prompt: PromptRecord,
    pub phonemes: Vec<String>,
    pub renditions: [Rendition; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "skip")]
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub task_id: String,
    pub annotator: String,
    pub choice: Choice,
    /// Time the annotator spent on the decision.
    #[serde(default)]
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Assigned,
    Judged,
    /// Every registered annotator skipped it.
    Skipped,
}

/// What an annotator sees. Carries no hint of which rendition is which.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub media_a: String,
    pub media_b: String,
    pub guidelines: Vec<String>,
    pub judged: usize,
    pub pairs_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImportReport {
    /// Ids of all accepted candidates, including ones already present.
    pub task_ids: Vec<String>,
    pub created: usize,
    pub rejected: Vec<Rejection>,
}

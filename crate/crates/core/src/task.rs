use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// One multimodal query: image, question and region prompts.
///
/// Image and depth map are opaque references; nothing in this crate reads
/// pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: String,
    #[serde(default)]
    pub image_ref: String,
    #[serde(default)]
    pub depth_ref: String,
    pub question: String,
    #[serde(default)]
    pub region_prompts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

impl TaskInstance {
    pub fn new(task_id: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            image_ref: String::new(),
            depth_ref: String::new(),
            question: question.into(),
            region_prompts: Vec::new(),
            ground_truth: None,
        }
    }

    pub fn with_ground_truth(mut self, truth: impl Into<String>) -> Self {
        self.ground_truth = Some(truth.into());
        self
    }

    pub fn with_refs(mut self, image_ref: impl Into<String>, depth_ref: impl Into<String>) -> Self {
        self.image_ref = image_ref.into();
        self.depth_ref = depth_ref.into();
        self
    }
}

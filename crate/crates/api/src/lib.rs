//! JSON bodies exchanged with the playground service.
//!
//! Layouts use the same shape as corpus lines: a canvas in pixels and
//! elements with a label name, a normalized center and a normalized size.

use serde::{Deserialize, Serialize};

/// Upper bound on `num_samples` per request.
pub const MAX_SAMPLES: usize = 16;

pub const COMPLETE_PATH: &str = "/api/complete";
pub const GENERATE_PATH: &str = "/api/generate";
pub const META_PATH: &str = "/api/meta";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasSpec {
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSpec {
    pub label: String,
    pub center: [f64; 2],
    pub size: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub canvas: CanvasSpec,
    pub elements: Vec<ElementSpec>,
}

/// An element in a completion request. Only locked elements condition the
/// model; unlocked ones are placeholders the model may replace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestElement {
    pub label: String,
    pub center: [f64; 2],
    pub size: [f64; 2],
    #[serde(default)]
    pub locked: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub elements: Vec<RequestElement>,
    #[serde(default = "one")]
    pub num_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas: Option<CanvasSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerateTask {
    Uncond,
    CToSp,
    CsToP,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub task: GenerateTask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    /// `[w, h]` per label, required for `cs_to_p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<[f64; 2]>>,
    #[serde(default = "one")]
    pub num_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas: Option<CanvasSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub labels: Vec<String>,
    #[serde(rename = "N")]
    pub num_labels: usize,
    #[serde(rename = "E")]
    pub max_elements: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub dataset: String,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub samples: Vec<LayoutSpec>,
    /// Wall-clock generation time divided by the number of samples.
    pub timing_ms: f64,
    pub model_meta: ModelMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

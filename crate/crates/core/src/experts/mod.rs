//! The uniform expert interface, deterministic mock experts and the HTTP
//! adapter for remote experts.
//!
//! Experts never see pixels. A request carries the detection reference plus
//! its ground-truth channels, and the mock turns those into the payload a real
//! recognizer would return.

mod echo;
mod mock;
mod remote;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmodel::{ContentPayload, SemanticCategory};

pub use echo::{spawn_echo_server, EchoServer};
pub use mock::MockExpert;
pub use remote::RemoteExpert;

/// Parsing route of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Ocr,
    Formula,
    Table,
    Ocsr,
    Reaction,
    Chart,
    ImageCaption,
}

impl Modality {
    pub const ALL: [Modality; 7] = [
        Modality::Ocr,
        Modality::Formula,
        Modality::Table,
        Modality::Ocsr,
        Modality::Reaction,
        Modality::Chart,
        Modality::ImageCaption,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Ocr => "ocr",
            Modality::Formula => "formula",
            Modality::Table => "table",
            Modality::Ocsr => "ocsr",
            Modality::Reaction => "reaction",
            Modality::Chart => "chart",
            Modality::ImageCaption => "image_caption",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

/// Simulated service time of one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub base_ms: f64,
    pub per_item_ms: f64,
    /// Upper bound of the uniform per-item jitter.
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub jitter_seed: u64,
}

impl LatencyModel {
    pub fn fixed(base_ms: f64, per_item_ms: f64) -> Self {
        Self {
            base_ms,
            per_item_ms,
            jitter_ms: 0.0,
            jitter_seed: 0,
        }
    }

    pub fn zero() -> Self {
        Self::fixed(0.0, 0.0)
    }

    /// `base + sum(per_item + jitter_i)`, jitter drawn per item from the seed,
    /// task id and attempt so that it does not depend on batch position.
    pub fn batch_latency_ms(&self, batch: &[ExpertRequest]) -> f64 {
        self.latency_for(batch.iter().map(|r| (r.task_id.as_str(), r.attempt)))
    }

    /// Latency of a batch given each item's key and attempt.
    pub fn latency_for<'a>(&self, items: impl Iterator<Item = (&'a str, u32)>) -> f64 {
        let mut n = 0usize;
        let mut total = 0.0;
        for (key, attempt) in items {
            n += 1;
            total += self.per_item_ms;
            if self.jitter_ms > 0.0 {
                total += self.jitter_ms * unit_draw(self.jitter_seed, key, attempt);
            }
        }
        if n == 0 {
            0.0
        } else {
            self.base_ms + total
        }
    }
}

/// Deterministic uniform draw in `[0,1)` keyed by seed, a string and an attempt.
pub(crate) fn unit_draw(seed: u64, key: &str, attempt: u32) -> f64 {
    // FNV-1a over the key, then a seeded stream
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes().chain(attempt.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(h ^ seed.rotate_left(29)).random::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertDescriptor {
    pub modality: Modality,
    pub max_batch: usize,
    pub latency: LatencyModel,
    pub replicas: usize,
    /// Probability that a whole batch fails with a retryable error.
    #[serde(default)]
    pub failure_rate: f64,
}

impl ExpertDescriptor {
    pub fn new(modality: Modality, latency: LatencyModel) -> Self {
        Self {
            modality,
            max_batch: 16,
            latency,
            replicas: 1,
            failure_rate: 0.0,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.max_batch == 0 {
            return Err(format!("{}: max_batch must be at least 1", self.modality));
        }
        if self.replicas == 0 {
            return Err(format!("{}: replicas must be at least 1", self.modality));
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(format!("{}: failure_rate outside [0,1]", self.modality));
        }
        Ok(())
    }

    /// Default service-time table for every modality. OCR is the common case
    /// and cheap per item; the structural recognizers are heavier.
    pub fn defaults() -> Vec<ExpertDescriptor> {
        let lat = |m| match m {
            Modality::Ocr => LatencyModel::fixed(8.0, 1.5),
            Modality::Formula => LatencyModel::fixed(10.0, 2.0),
            Modality::Table => LatencyModel::fixed(15.0, 6.0),
            Modality::Ocsr => LatencyModel::fixed(12.0, 4.0),
            Modality::Reaction => LatencyModel::fixed(15.0, 6.0),
            Modality::Chart => LatencyModel::fixed(15.0, 5.0),
            Modality::ImageCaption => LatencyModel::fixed(12.0, 4.0),
        };
        Modality::ALL
            .into_iter()
            .map(|m| ExpertDescriptor::new(m, lat(m)))
            .collect()
    }

    /// The slower, higher-accuracy OCR configuration.
    pub fn high_quality_ocr() -> ExpertDescriptor {
        ExpertDescriptor::new(Modality::Ocr, LatencyModel::fixed(20.0, 4.0))
    }
}

/// Where an inline child's placeholder goes inside the parent's payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceholderSlot {
    pub token: String,
    /// Child center relative to the parent box, used to locate a table cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertRequest {
    pub task_id: String,
    pub modality: Modality,
    pub doc_id: String,
    pub page_index: usize,
    pub detection_id: String,
    pub category: SemanticCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_payload: Option<ContentPayload>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub placeholders: Vec<PlaceholderSlot>,
    #[serde(default)]
    pub attempt: u32,
}

/// One item of a batch response; exactly one of `payload` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertResponse {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<ContentPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExpertResponse {
    pub fn ok(task_id: impl Into<String>, payload: ContentPayload) -> Self {
        Self {
            task_id: task_id.into(),
            payload: Some(payload),
            error: None,
        }
    }

    pub fn failed(task_id: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            payload: None,
            error: Some(error.into()),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExpertError {
    #[error("retryable expert failure: {0}")]
    Retryable(String),
    #[error("fatal expert failure: {0}")]
    Fatal(String),
    #[error("expert call timed out: {0}")]
    Timeout(String),
    #[error("protocol error (status {status}): {body}")]
    Protocol { status: u16, body: String },
}

impl ExpertError {
    /// Whether the scheduler may resubmit the batch.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ExpertError::Retryable(_) | ExpertError::Timeout(_))
    }
}

/// A modality-specific recognizer. Implementations are stateless per batch.
pub trait Expert: Send + Sync {
    fn descriptor(&self) -> &ExpertDescriptor;

    /// Responses come back in request order.
    fn process_batch(&self, batch: &[ExpertRequest]) -> Result<Vec<ExpertResponse>, ExpertError>;
}

/// Rejects batches that violate the size or modality precondition.
pub(crate) fn check_batch(
    desc: &ExpertDescriptor,
    batch: &[ExpertRequest],
) -> Result<(), ExpertError> {
    if batch.len() > desc.max_batch {
        return Err(ExpertError::Fatal(format!(
            "batch of {} exceeds max_batch {}",
            batch.len(),
            desc.max_batch
        )));
    }
    if let Some(r) = batch.iter().find(|r| r.modality != desc.modality) {
        return Err(ExpertError::Fatal(format!(
            "{} request sent to {} expert",
            r.modality, desc.modality
        )));
    }
    Ok(())
}

/// Request body on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub modality: Modality,
    pub items: Vec<ExpertRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub items: Vec<ExpertResponse>,
}

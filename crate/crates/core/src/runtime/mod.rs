//! Execution engine for document streams.
//!
//! Three schedules share the same per-document phases ([`crate::engine`]):
//! a strictly serial one, a per-document fork/join over the worker pool, and
//! a streaming pipeline where pages flow through bounded queues and expert
//! batches mix pages of every in-flight document. A discrete-event clock
//! drives all of them so metrics are reproducible on any machine; a threaded
//! executor ([`run_threaded`]) runs the same stage graph on real threads.

mod metrics;
mod sim;
mod study;
mod threaded;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigOverrides, EngineConfig};
use crate::dispatch::{GatherError, RoutePolicy};
use crate::docmodel::DocumentIr;
use crate::experts::{ExpertDescriptor, LatencyModel, Modality};
use crate::format::ParsedDocument;

pub use metrics::{
    DocLatency, ExpertMetrics, PipelineMetrics, QueueDepth, Stage, StageMetrics, TaskCounts,
    WorkerMetrics,
};
pub use sim::{balance, LaneState};
pub use study::{
    bubble_report, compare_modes, simulate_scaling, BubbleReport, BubbleRow, ModeRow, Scaling,
    ScalingCurve, ScalingPoint, Workload,
};
pub use threaded::run_threaded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "seq")]
    Sequential,
    #[serde(rename = "par")]
    ParallelGather,
    #[serde(rename = "pipe")]
    PipelineParallel,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Sequential, Mode::ParallelGather, Mode::PipelineParallel];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sequential => "seq",
            Mode::ParallelGather => "par",
            Mode::PipelineParallel => "pipe",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seq" | "sequential" => Ok(Mode::Sequential),
            "par" | "parallel" | "parallel_gather" => Ok(Mode::ParallelGather),
            "pipe" | "pipeline" | "pipeline_parallel" => Ok(Mode::PipelineParallel),
            _ => Err(format!("unknown mode {s:?} (expected seq, par or pipe)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first resubmission; doubles on every further attempt.
    pub backoff_ms: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_ms: 10.0,
        }
    }
}

impl RetryPolicy {
    /// Backoff before resubmitting attempt `attempt` (1-based).
    pub fn delay_ms(&self, attempt: u32) -> f64 {
        self.backoff_ms * f64::from(2u32.saturating_pow(attempt.saturating_sub(1)))
    }
}

/// Service model of the layout/order stage; items are pages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageModel {
    pub max_batch: usize,
    pub latency: LatencyModel,
    pub replicas: usize,
}

/// Replaces the expert table before document `before_doc` is admitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorUpdate {
    pub before_doc: usize,
    pub experts: Vec<ExpertDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Accelerator workers shared by the layout stage and every expert.
    pub workers: usize,
    /// Host workers for page preprocessing and document assembly.
    pub cpu_workers: usize,
    pub experts: Vec<ExpertDescriptor>,
    pub layout: StageModel,
    /// Per-page preprocessing cost.
    pub preprocess_ms: f64,
    /// Gather, consolidate and format cost: base per document, per-item per page.
    pub postprocess: LatencyModel,
    /// Bound of every stage queue.
    pub queue_capacity: usize,
    pub max_inflight_docs: usize,
    pub retry: RetryPolicy,
    /// A queue whose oldest item has waited this long is served first.
    pub starvation_ms: f64,
    pub seed: u64,
    pub strict: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub only_modality: Option<Modality>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub descriptor_updates: Vec<DescriptorUpdate>,
    pub engine: EngineConfig,
}

impl PipelineConfig {
    pub fn new(mode: Mode, workers: usize) -> Self {
        Self {
            mode,
            workers,
            cpu_workers: 4,
            experts: default_experts(),
            layout: StageModel {
                max_batch: 8,
                latency: LatencyModel::fixed(10.0, 3.0),
                replicas: 2,
            },
            preprocess_ms: 6.0,
            postprocess: LatencyModel::fixed(4.0, 1.0),
            queue_capacity: 256,
            max_inflight_docs: 8,
            retry: RetryPolicy::default(),
            starvation_ms: 200.0,
            seed: 0,
            strict: false,
            only_modality: None,
            descriptor_updates: Vec::new(),
            engine: EngineConfig::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn policy(&self) -> RoutePolicy {
        RoutePolicy {
            captioning: self.engine.dispatch.captioning,
            only: self.only_modality,
        }
    }

    pub fn descriptor(&self, m: Modality) -> Option<&ExpertDescriptor> {
        self.experts.iter().find(|d| d.modality == m)
    }

    /// Applies the engine and runtime keys of a flat override set.
    pub fn apply_overrides(&mut self, o: &ConfigOverrides) {
        o.apply(&mut self.engine);
        if let Some(v) = o.max_retries {
            self.retry.max_retries = v;
        }
        if let Some(v) = o.backoff_ms {
            self.retry.backoff_ms = v;
        }
        if let Some(v) = o.queue_capacity {
            self.queue_capacity = v;
        }
        if let Some(v) = o.max_inflight_docs {
            self.max_inflight_docs = v;
        }
    }

    pub fn check(&self) -> Result<(), RuntimeError> {
        let bad = |m: String| Err(RuntimeError::InvalidConfig(m));
        if self.workers == 0 || self.cpu_workers == 0 {
            return bad("worker counts must be at least 1".into());
        }
        if self.queue_capacity == 0 || self.max_inflight_docs == 0 {
            return bad("capacities must be at least 1".into());
        }
        if self.layout.max_batch == 0 || self.layout.replicas == 0 {
            return bad("layout stage needs max_batch and replicas of at least 1".into());
        }
        if self.engine.dispatch.max_batch == 0 {
            return bad("max_batch must be at least 1".into());
        }
        let costs = [
            self.preprocess_ms,
            self.postprocess.base_ms,
            self.postprocess.per_item_ms,
            self.layout.latency.base_ms,
            self.layout.latency.per_item_ms,
            self.engine.dispatch.max_wait_ms,
            self.retry.backoff_ms,
            self.starvation_ms,
        ];
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return bad("durations must be finite and non-negative".into());
        }
        let tables = std::iter::once(&self.experts).chain(self.descriptor_updates.iter().map(|u| &u.experts));
        for table in tables {
            for m in Modality::ALL {
                match table.iter().filter(|d| d.modality == m).count() {
                    1 => {}
                    0 => return bad(format!("no descriptor for {m}")),
                    _ => return bad(format!("duplicate descriptor for {m}")),
                }
            }
            for d in table {
                d.check().map_err(RuntimeError::InvalidConfig)?;
                let l = &d.latency;
                if [l.base_ms, l.per_item_ms, l.jitter_ms].iter().any(|c| !c.is_finite() || *c < 0.0) {
                    return bad(format!("{}: latency must be finite and non-negative", d.modality));
                }
            }
        }
        Ok(())
    }
}

/// Default expert table with two replicas each.
pub fn default_experts() -> Vec<ExpertDescriptor> {
    ExpertDescriptor::defaults()
        .into_iter()
        .map(|mut d| {
            d.replicas = 2;
            d
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("document {0} has fatally failed tasks")]
    StrictModeFailure(String),
    #[error(transparent)]
    Gather(#[from] GatherError),
    #[error("worker thread failed: {0}")]
    Worker(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    /// In input order.
    pub outputs: Vec<ParsedDocument>,
    pub metrics: PipelineMetrics,
}

/// Runs a document stream on the virtual clock. With `strict`, the first
/// document (in input order) with a fatally failed task is an error.
pub fn run_pipeline(docs: &[DocumentIr], cfg: &PipelineConfig) -> Result<RunOutput, RuntimeError> {
    let out = simulate(docs, cfg)?;
    if cfg.strict {
        if let Some(d) = out.outputs.iter().find(|d| !d.failed_tasks.is_empty()) {
            return Err(RuntimeError::StrictModeFailure(d.doc_id.clone()));
        }
    }
    Ok(out)
}

/// Like [`run_pipeline`] but never fails on task failures.
pub fn simulate(docs: &[DocumentIr], cfg: &PipelineConfig) -> Result<RunOutput, RuntimeError> {
    cfg.check()?;
    sim::Sim::new(docs, cfg).run()
}

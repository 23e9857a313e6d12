use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::experts::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preprocess,
    Layout,
    Experts,
    Postprocess,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Preprocess, Stage::Layout, Stage::Experts, Stage::Postprocess];

    /// Whether the stage runs on accelerator workers rather than host workers.
    pub fn on_accelerator(self) -> bool {
        matches!(self, Stage::Layout | Stage::Experts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: Stage,
    pub jobs: usize,
    pub items: usize,
    pub busy_us: u64,
    /// Worker time of the stage's pool not spent on this stage.
    pub idle_us: u64,
    pub bubble_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerMetrics {
    pub worker: String,
    pub busy_us: u64,
    pub idle_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertMetrics {
    pub modality: Modality,
    pub batches: usize,
    pub items: usize,
    pub busy_us: u64,
    /// Busy time over the time its usable worker slots were available.
    pub utilization: f64,
    pub mean_batch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueDepth {
    pub lane: String,
    pub max_depth: usize,
    /// Time spent at each depth, in microseconds.
    pub histogram_us: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocLatency {
    pub doc_id: String,
    pub admitted_us: u64,
    pub finished_us: u64,
    pub latency_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub dispatched: usize,
    pub completed: usize,
    pub failed: usize,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub mode: Mode,
    pub workers: usize,
    pub cpu_workers: usize,
    pub docs: usize,
    pub pages: usize,
    pub wall_us: u64,
    pub throughput_pps: f64,
    /// Idle fraction of the expert stage.
    pub bubble_fraction: f64,
    pub per_stage: Vec<StageMetrics>,
    pub per_worker: Vec<WorkerMetrics>,
    pub per_expert: Vec<ExpertMetrics>,
    pub queue_depth: Vec<QueueDepth>,
    pub doc_latency: Vec<DocLatency>,
    pub tasks: TaskCounts,
}

impl PipelineMetrics {
    pub fn stage(&self, s: Stage) -> &StageMetrics {
        self.per_stage.iter().find(|m| m.stage == s).expect("every stage is reported")
    }

    pub fn wall_ms(&self) -> f64 {
        self.wall_us as f64 / 1000.0
    }

    pub fn mean_latency_ms(&self) -> f64 {
        if self.doc_latency.is_empty() {
            return 0.0;
        }
        let total: u64 = self.doc_latency.iter().map(|d| d.latency_us).sum();
        total as f64 / self.doc_latency.len() as f64 / 1000.0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Pool {
    Cpu,
    Gpu,
}

#[derive(Debug, Clone)]
pub(crate) struct JobRecord {
    pub pool: Pool,
    pub worker: usize,
    pub stage: Stage,
    pub modality: Option<Modality>,
    pub items: usize,
    pub start: u64,
    pub end: u64,
}

/// Append-only collector, summarized once the run ends.
#[derive(Debug, Clone, Default)]
pub(crate) struct Recorder {
    pub jobs: Vec<JobRecord>,
    pub depth_hist: BTreeMap<String, BTreeMap<usize, u64>>,
    pub max_depth: BTreeMap<String, usize>,
    pub last_observed: u64,
    pub tasks: TaskCounts,
}

impl Recorder {
    pub fn new<'a>(lanes: impl Iterator<Item = &'a str>) -> Self {
        let mut r = Recorder::default();
        for l in lanes {
            r.depth_hist.insert(l.to_string(), BTreeMap::new());
            r.max_depth.insert(l.to_string(), 0);
        }
        r
    }

    /// Credits the time since the previous observation to the current depths.
    pub fn observe<'a>(&mut self, now: u64, depths: impl Iterator<Item = (&'a str, usize)>) {
        let dt = now.saturating_sub(self.last_observed);
        self.last_observed = now;
        for (lane, d) in depths {
            if dt > 0 {
                *self.depth_hist.entry(lane.to_string()).or_default().entry(d).or_default() += dt;
            }
            let m = self.max_depth.entry(lane.to_string()).or_default();
            *m = (*m).max(d);
        }
    }

    pub fn note_depth(&mut self, lane: &str, d: usize) {
        let m = self.max_depth.entry(lane.to_string()).or_default();
        *m = (*m).max(d);
    }

    pub fn job(&mut self, job: JobRecord) {
        self.jobs.push(job);
    }

    pub fn finish(
        self,
        mode: Mode,
        workers: usize,
        cpu_workers: usize,
        replicas: &BTreeMap<Modality, usize>,
        doc_latency: Vec<DocLatency>,
        pages: usize,
    ) -> PipelineMetrics {
        let wall = self.jobs.iter().map(|j| j.end).max().unwrap_or(0);
        let wall = wall.max(doc_latency.iter().map(|d| d.finished_us).max().unwrap_or(0));
        let pool_size = |p: Pool| match p {
            Pool::Cpu => cpu_workers,
            Pool::Gpu => workers,
        };

        let mut busy: BTreeMap<(u8, usize), u64> = BTreeMap::new();
        for j in &self.jobs {
            *busy.entry((j.pool as u8, j.worker)).or_default() += j.end - j.start;
        }
        let mut per_worker = Vec::new();
        for (pool, prefix) in [(Pool::Cpu, "cpu"), (Pool::Gpu, "gpu")] {
            for w in 0..pool_size(pool) {
                let b = busy.get(&(pool as u8, w)).copied().unwrap_or(0);
                per_worker.push(WorkerMetrics {
                    worker: format!("{prefix}-{w}"),
                    busy_us: b,
                    idle_us: wall - b,
                });
            }
        }

        let per_stage: Vec<StageMetrics> = Stage::ALL
            .into_iter()
            .map(|s| {
                let jobs: Vec<&JobRecord> = self.jobs.iter().filter(|j| j.stage == s).collect();
                let b: u64 = jobs.iter().map(|j| j.end - j.start).sum();
                let slots = if s.on_accelerator() { workers } else { cpu_workers } as u64;
                let capacity = slots * wall;
                StageMetrics {
                    stage: s,
                    jobs: jobs.len(),
                    items: jobs.iter().map(|j| j.items).sum(),
                    busy_us: b,
                    idle_us: capacity - b,
                    bubble_fraction: fraction(capacity - b, capacity),
                }
            })
            .collect();

        let per_expert = Modality::ALL
            .into_iter()
            .map(|m| {
                let jobs: Vec<&JobRecord> = self.jobs.iter().filter(|j| j.modality == Some(m)).collect();
                let b: u64 = jobs.iter().map(|j| j.end - j.start).sum();
                let items: usize = jobs.iter().map(|j| j.items).sum();
                let slots = replicas.get(&m).copied().unwrap_or(1).min(workers) as u64;
                ExpertMetrics {
                    modality: m,
                    batches: jobs.len(),
                    items,
                    busy_us: b,
                    utilization: fraction(b, slots * wall),
                    mean_batch: if jobs.is_empty() { 0.0 } else { items as f64 / jobs.len() as f64 },
                }
            })
            .collect();

        let queue_depth = self
            .depth_hist
            .into_iter()
            .map(|(lane, histogram_us)| QueueDepth {
                max_depth: self.max_depth.get(&lane).copied().unwrap_or(0),
                lane,
                histogram_us,
            })
            .collect();

        let bubble_fraction = per_stage
            .iter()
            .find(|s| s.stage == Stage::Experts)
            .map_or(0.0, |s| s.bubble_fraction);
        PipelineMetrics {
            mode,
            workers,
            cpu_workers,
            docs: doc_latency.len(),
            pages,
            wall_us: wall,
            throughput_pps: if wall == 0 { 0.0 } else { pages as f64 / (wall as f64 / 1e6) },
            bubble_fraction,
            per_stage,
            per_worker,
            per_expert,
            queue_depth,
            doc_latency,
            tasks: self.tasks,
        }
    }
}

fn fraction(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

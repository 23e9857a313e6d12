use serde::{Deserialize, Serialize};

use super::{simulate, Mode, PipelineConfig, RuntimeError, Stage};
use crate::corpus::{gen_corpus, CorpusSpec};
use crate::docmodel::DocumentIr;

/// How a workload's configuration grows with the accelerator worker count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Only `workers` changes.
    WorkersOnly,
    /// Host workers, replicas and admission grow with `workers`.
    Proportional,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub docs: Vec<DocumentIr>,
    /// Configuration at `config.workers`; other counts derive from it.
    pub config: PipelineConfig,
    pub scaling: Scaling,
}

fn corpus(seed: u64, n_docs: usize) -> Vec<DocumentIr> {
    let spec = CorpusSpec {
        seed,
        n_docs,
        ..CorpusSpec::default()
    };
    gen_corpus(&spec).expect("default spec is valid").0
}

impl Workload {
    /// 100 four-page documents under the default latencies on four workers.
    pub fn reference(seed: u64) -> Self {
        Self {
            name: "reference".into(),
            docs: corpus(seed, 100),
            config: PipelineConfig::new(Mode::PipelineParallel, 4).with_seed(seed),
            scaling: Scaling::WorkersOnly,
        }
    }

    /// Per-item costs only and every shared resource scaled with the
    /// worker count, so added workers never contend.
    pub fn contention_free(seed: u64, n_docs: usize) -> Self {
        let mut cfg = PipelineConfig::new(Mode::PipelineParallel, 1).with_seed(seed);
        for d in &mut cfg.experts {
            d.latency.base_ms = 0.0;
            d.replicas = 1;
            d.failure_rate = 0.0;
        }
        cfg.layout.latency.base_ms = 0.0;
        cfg.layout.replicas = 1;
        cfg.postprocess.base_ms = 0.0;
        cfg.cpu_workers = 1;
        cfg.max_inflight_docs = 2;
        Self {
            name: "contention_free".into(),
            docs: corpus(seed, n_docs),
            config: cfg,
            scaling: Scaling::Proportional,
        }
    }

    /// A single host worker does heavy per-document assembly, so extra
    /// accelerator workers cannot help.
    pub fn serialized(seed: u64, n_docs: usize) -> Self {
        let mut cfg = PipelineConfig::new(Mode::PipelineParallel, 1).with_seed(seed);
        cfg.cpu_workers = 1;
        cfg.postprocess.base_ms = 2000.0;
        Self {
            name: "serialized".into(),
            docs: corpus(seed, n_docs),
            config: cfg,
            scaling: Scaling::WorkersOnly,
        }
    }

    pub fn config_for(&self, mode: Mode, workers: usize) -> PipelineConfig {
        let mut cfg = self.config.clone();
        cfg.mode = mode;
        if self.scaling == Scaling::Proportional {
            let k = workers as f64 / self.config.workers as f64;
            let grow = |v: usize| ((v as f64 * k).round() as usize).max(1);
            cfg.cpu_workers = grow(cfg.cpu_workers);
            cfg.layout.replicas = grow(cfg.layout.replicas);
            cfg.max_inflight_docs = grow(cfg.max_inflight_docs);
            for d in &mut cfg.experts {
                d.replicas = grow(d.replicas);
            }
        }
        cfg.workers = workers;
        cfg
    }

    pub fn pages(&self) -> usize {
        self.docs.iter().map(|d| d.pages.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub mode: Mode,
    pub workers: usize,
    pub throughput_pps: f64,
    pub wall_ms: f64,
    pub mean_latency_ms: f64,
    pub bubble_fraction: f64,
}

/// One row per mode on the workload's own worker count.
pub fn compare_modes(w: &Workload) -> Result<Vec<ModeRow>, RuntimeError> {
    Mode::ALL
        .into_iter()
        .map(|mode| {
            let m = simulate(&w.docs, &w.config_for(mode, w.config.workers))?.metrics;
            Ok(ModeRow {
                mode,
                workers: m.workers,
                throughput_pps: m.throughput_pps,
                wall_ms: m.wall_ms(),
                mean_latency_ms: m.mean_latency_ms(),
                bubble_fraction: m.bubble_fraction,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub workers: usize,
    pub throughput_pps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub points: Vec<ScalingPoint>,
    /// Least-squares fit of throughput on worker count.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Speedup from the smallest to the largest count over the ideal speedup.
    pub efficiency: f64,
}

/// Pipelined throughput at each worker count, with a linear fit.
pub fn simulate_scaling(w: &Workload, workers: &[usize]) -> Result<ScalingCurve, RuntimeError> {
    let points = workers
        .iter()
        .map(|&n| {
            let m = simulate(&w.docs, &w.config_for(Mode::PipelineParallel, n))?.metrics;
            Ok(ScalingPoint {
                workers: n,
                throughput_pps: m.throughput_pps,
            })
        })
        .collect::<Result<Vec<_>, RuntimeError>>()?;
    Ok(fit(points))
}

fn fit(points: Vec<ScalingPoint>) -> ScalingCurve {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.workers as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.throughput_pps).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    // a flat curve is fit exactly by its mean
    let r_squared = if ss_tot <= f64::EPSILON * my.abs().max(1.0) { 1.0 } else { 1.0 - ss_res / ss_tot };
    let efficiency = match (points.iter().min_by_key(|p| p.workers), points.iter().max_by_key(|p| p.workers)) {
        (Some(lo), Some(hi)) if lo.workers > 0 && lo.throughput_pps > 0.0 && hi.workers > lo.workers => {
            (hi.throughput_pps / lo.throughput_pps) / (hi.workers as f64 / lo.workers as f64)
        }
        _ => 1.0,
    };
    ScalingCurve {
        points,
        slope,
        intercept,
        r_squared,
        efficiency,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleRow {
    pub mode: Mode,
    pub stage: Stage,
    pub busy_us: u64,
    pub idle_us: u64,
    pub bubble_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleReport {
    /// Wall time of each mode's run.
    pub wall_us: Vec<(Mode, u64)>,
    pub rows: Vec<BubbleRow>,
}

impl BubbleReport {
    pub fn fraction(&self, mode: Mode, stage: Stage) -> f64 {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.stage == stage)
            .map_or(0.0, |r| r.bubble_fraction)
    }

    /// Stage-by-mode table of idle fractions.
    pub fn table(&self) -> String {
        let mut s = format!("{:<12}", "stage");
        for m in Mode::ALL {
            s += &format!("{:>8}", m.as_str());
        }
        s.push('\n');
        for st in Stage::ALL {
            s += &format!("{:<12}", format!("{st:?}").to_lowercase());
            for m in Mode::ALL {
                s += &format!("{:>8.3}", self.fraction(m, st));
            }
            s.push('\n');
        }
        s
    }
}

/// Idle fraction of every stage under each mode.
pub fn bubble_report(w: &Workload) -> Result<BubbleReport, RuntimeError> {
    let mut wall_us = Vec::new();
    let mut rows = Vec::new();
    for mode in Mode::ALL {
        let m = simulate(&w.docs, &w.config_for(mode, w.config.workers))?.metrics;
        wall_us.push((mode, m.wall_us));
        rows.extend(m.per_stage.iter().map(|s| BubbleRow {
            mode,
            stage: s.stage,
            busy_us: s.busy_us,
            idle_us: s.idle_us,
            bubble_fraction: s.bubble_fraction,
        }));
    }
    Ok(BubbleReport { wall_us, rows })
}

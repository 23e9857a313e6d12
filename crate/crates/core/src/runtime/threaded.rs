use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};

use super::metrics::{DocLatency, JobRecord, Pool, Recorder, Stage};
use super::{PipelineConfig, RunOutput, RuntimeError};
use crate::dispatch::{Task, TaskOutcome};
use crate::docmodel::DocumentIr;
use crate::engine::{finish_document, prepare_page, record_batch, DocPlan, PagePlan};
use crate::experts::{Expert, MockExpert, Modality};

enum ToGather {
    Page { doc: usize, page: usize, plan: Box<PagePlan> },
    Results { doc: usize, results: Vec<(String, TaskOutcome)> },
}

struct Clock(Instant);

impl Clock {
    fn us(&self) -> u64 {
        self.0.elapsed().as_micros() as u64
    }
}

fn pause(ms: f64, scale: f64) {
    let d = ms * scale;
    if d > 0.0 {
        thread::sleep(Duration::from_secs_f64(d / 1000.0));
    }
}

/// Runs the pipelined stage graph on OS threads: host workers preprocess
/// pages, layout threads plan them and feed bounded per-modality channels,
/// expert threads stack batches greedily and a gather thread assembles each
/// document once its last result arrives. Modeled service times are slept
/// for, multiplied by `time_scale` (zero runs as fast as possible). Metrics
/// use the wall clock and are not reproducible; outputs are.
pub fn run_threaded(
    docs: &[DocumentIr],
    cfg: &PipelineConfig,
    experts: Option<BTreeMap<Modality, Arc<dyn Expert>>>,
    time_scale: f64,
) -> Result<RunOutput, RuntimeError> {
    cfg.check()?;
    let experts: BTreeMap<Modality, Arc<dyn Expert>> = experts.unwrap_or_else(|| {
        cfg.experts
            .iter()
            .map(|d| (d.modality, Arc::new(MockExpert::new(d.clone(), cfg.seed)) as Arc<dyn Expert>))
            .collect()
    });
    if let Some(m) = Modality::ALL.into_iter().find(|m| !experts.contains_key(m)) {
        return Err(RuntimeError::InvalidConfig(format!("no expert for {m}")));
    }
    let docs: Arc<Vec<DocumentIr>> = Arc::new(docs.to_vec());
    let cfg = Arc::new(cfg.clone());
    let clock = Arc::new(Clock(Instant::now()));
    let cap = cfg.queue_capacity;

    let (admit_tx, admit_rx) = bounded::<()>(cfg.max_inflight_docs);
    let (pre_tx, pre_rx) = bounded::<(usize, usize)>(cap);
    let (layout_tx, layout_rx) = bounded::<(usize, usize)>(cap);
    let (gather_tx, gather_rx) = unbounded::<ToGather>();
    let mut task_tx: BTreeMap<Modality, Sender<(usize, Task)>> = BTreeMap::new();
    let mut task_rx: BTreeMap<Modality, Receiver<(usize, Task)>> = BTreeMap::new();
    for m in Modality::ALL {
        let (tx, rx) = bounded(cap);
        task_tx.insert(m, tx);
        task_rx.insert(m, rx);
    }

    let mut handles: Vec<thread::JoinHandle<Vec<JobRecord>>> = Vec::new();

    // feeder: admits documents while fewer than max_inflight_docs are open
    {
        let docs = Arc::clone(&docs);
        handles.push(thread::spawn(move || {
            for (d, doc) in docs.iter().enumerate() {
                if admit_tx.send(()).is_err() {
                    break;
                }
                for p in 0..doc.pages.len() {
                    if pre_tx.send((d, p)).is_err() {
                        return Vec::new();
                    }
                }
            }
            Vec::new()
        }));
    }

    for w in 0..cfg.cpu_workers {
        let (rx, tx, cfg, clock) = (pre_rx.clone(), layout_tx.clone(), cfg.clone(), clock.clone());
        handles.push(thread::spawn(move || {
            let mut jobs = Vec::new();
            for item in rx.iter() {
                let start = clock.us();
                pause(cfg.preprocess_ms, time_scale);
                jobs.push(JobRecord {
                    pool: Pool::Cpu,
                    worker: w,
                    stage: Stage::Preprocess,
                    modality: None,
                    items: 1,
                    start,
                    end: clock.us(),
                });
                if tx.send(item).is_err() {
                    break;
                }
            }
            jobs
        }));
    }
    drop(pre_rx);
    drop(layout_tx);

    let mut gpu = 0usize;
    let policy = cfg.policy();
    for _ in 0..cfg.layout.replicas {
        let worker = gpu;
        gpu += 1;
        let (rx, gtx, ttx) = (layout_rx.clone(), gather_tx.clone(), task_tx.clone());
        let (docs, cfg, clock) = (docs.clone(), cfg.clone(), clock.clone());
        handles.push(thread::spawn(move || {
            let mut jobs = Vec::new();
            let wait = Duration::from_secs_f64(cfg.engine.dispatch.max_wait_ms * time_scale / 1000.0);
            while let Some(batch) = stack(&rx, cfg.layout.max_batch, wait) {
                let start = clock.us();
                let keys: Vec<String> = batch
                    .iter()
                    .map(|(d, p)| format!("{}#{}", docs[*d].doc_id, p))
                    .collect();
                pause(
                    cfg.layout.latency.latency_for(keys.iter().map(|k| (k.as_str(), 0))),
                    time_scale,
                );
                let plans: Vec<(usize, usize, PagePlan)> = batch
                    .iter()
                    .map(|(d, p)| (*d, *p, prepare_page(&docs[*d].doc_id, &docs[*d].pages[*p], &cfg.engine, &policy)))
                    .collect();
                jobs.push(JobRecord {
                    pool: Pool::Gpu,
                    worker,
                    stage: Stage::Layout,
                    modality: None,
                    items: batch.len(),
                    start,
                    end: clock.us(),
                });
                for (doc, page, plan) in plans {
                    let tasks = plan.tasks.clone();
                    // the gather side learns the task count before any result
                    let _ = gtx.send(ToGather::Page {
                        doc,
                        page,
                        plan: Box::new(plan),
                    });
                    for t in tasks {
                        if ttx[&t.modality].send((doc, t)).is_err() {
                            return jobs;
                        }
                    }
                }
            }
            jobs
        }));
    }
    drop(layout_rx);
    drop(task_tx);

    for m in Modality::ALL {
        let expert = experts[&m].clone();
        let replicas = cfg.descriptor(m).map_or(1, |d| d.replicas);
        for _ in 0..replicas {
            let worker = gpu;
            gpu += 1;
            let (rx, gtx, cfg, clock, expert) =
                (task_rx[&m].clone(), gather_tx.clone(), cfg.clone(), clock.clone(), expert.clone());
            handles.push(thread::spawn(move || {
                let mut jobs = Vec::new();
                let limit = expert.descriptor().max_batch.min(cfg.engine.dispatch.max_batch).max(1);
                let wait = Duration::from_secs_f64(cfg.engine.dispatch.max_wait_ms * time_scale / 1000.0);
                while let Some(batch) = stack(&rx, limit, wait) {
                    let start = clock.us();
                    let mut attempt = 0;
                    let outcome = loop {
                        let reqs: Vec<_> = batch.iter().map(|(_, t)| t.request(attempt)).collect();
                        pause(expert.descriptor().latency.batch_latency_ms(&reqs), time_scale);
                        match expert.process_batch(&reqs) {
                            Err(e) if e.is_retryable() && attempt < cfg.retry.max_retries => {
                                attempt += 1;
                                pause(cfg.retry.delay_ms(attempt), time_scale);
                            }
                            other => break other,
                        }
                    };
                    jobs.push(JobRecord {
                        pool: Pool::Gpu,
                        worker,
                        stage: Stage::Experts,
                        modality: Some(m),
                        items: batch.len(),
                        start,
                        end: clock.us(),
                    });
                    let mut out = BTreeMap::new();
                    record_batch(batch.iter().map(|(_, t)| t.task_id.as_str()), outcome, &mut out);
                    let mut per_doc: BTreeMap<usize, Vec<(String, TaskOutcome)>> = BTreeMap::new();
                    for (doc, t) in &batch {
                        let o = out
                            .remove(&t.task_id)
                            .unwrap_or_else(|| TaskOutcome::Failed("missing response item".into()));
                        per_doc.entry(*doc).or_default().push((t.task_id.clone(), o));
                    }
                    for (doc, results) in per_doc {
                        let _ = gtx.send(ToGather::Results { doc, results });
                    }
                }
                jobs
            }));
        }
    }
    drop(task_rx);
    drop(gather_tx);

    // gather and assemble on this thread, one host worker's worth of work
    let mut state: Vec<GatherState> = docs.iter().map(|d| GatherState::new(d.pages.len())).collect();
    let mut outputs: Vec<Option<crate::format::ParsedDocument>> = vec![None; docs.len()];
    let mut post_jobs = Vec::new();
    let mut counts = super::TaskCounts::default();
    let mut done = 0;
    let mut finish = |d: usize, st: &mut GatherState, outputs: &mut Vec<Option<_>>| -> Result<(), RuntimeError> {
        let start = clock.us();
        let n = docs[d].pages.len();
        pause(cfg.postprocess.base_ms + cfg.postprocess.per_item_ms * n as f64, time_scale);
        let plan = DocPlan {
            doc_id: docs[d].doc_id.clone(),
            language_tag: docs[d].language_tag.clone(),
            outline: docs[d].outline.clone(),
            pages: st.pages.iter_mut().map(|p| p.take().expect("page planned")).collect(),
            policy,
        };
        outputs[d] = Some(finish_document(&plan, &st.results, &cfg.engine)?);
        st.finished_at = clock.us();
        st.finished = true;
        post_jobs.push(JobRecord {
            pool: Pool::Cpu,
            worker: 0,
            stage: Stage::Postprocess,
            modality: None,
            items: n,
            start,
            end: st.finished_at,
        });
        Ok(())
    };
    // documents without pages never reach the gather channel
    for (d, st) in state.iter_mut().enumerate() {
        if st.pages.is_empty() {
            finish(d, st, &mut outputs)?;
            done += 1;
            let _ = admit_rx.recv();
        }
    }
    while done < docs.len() {
        let msg = match gather_rx.recv_timeout(Duration::from_secs(600)) {
            Ok(m) => m,
            Err(RecvTimeoutError::Timeout) => return Err(RuntimeError::Worker("gather timed out".into())),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(RuntimeError::Worker("pipeline stopped before every document finished".into()))
            }
        };
        let d = match msg {
            ToGather::Page { doc, page, plan } => {
                let st = &mut state[doc];
                counts.dispatched += plan.tasks.len();
                st.outstanding += plan.tasks.len();
                st.laid_out += 1;
                st.pages[page] = Some(*plan);
                doc
            }
            ToGather::Results { doc, results } => {
                let st = &mut state[doc];
                for (id, o) in results {
                    match o {
                        TaskOutcome::Done(_) => counts.completed += 1,
                        TaskOutcome::Failed(_) => counts.failed += 1,
                    }
                    st.outstanding -= 1;
                    st.results.insert(id, o);
                }
                doc
            }
        };
        let st = &mut state[d];
        if st.laid_out == st.pages.len() && st.outstanding == 0 && !st.finished {
            finish(d, st, &mut outputs)?;
            done += 1;
            let _ = admit_rx.recv();
        }
    }
    drop(admit_rx);

    let mut rec = Recorder::default();
    for h in handles {
        let jobs = h.join().map_err(|_| RuntimeError::Worker("worker thread panicked".into()))?;
        for j in jobs {
            rec.job(j);
        }
    }
    for j in post_jobs {
        rec.job(j);
    }
    rec.tasks = counts;
    let replicas = cfg.experts.iter().map(|d| (d.modality, d.replicas)).collect();
    let latency = docs
        .iter()
        .zip(&state)
        .map(|(doc, st)| DocLatency {
            doc_id: doc.doc_id.clone(),
            admitted_us: 0,
            finished_us: st.finished_at,
            latency_us: st.finished_at,
        })
        .collect();
    let pages = docs.iter().map(|d| d.pages.len()).sum();
    let metrics = rec.finish(cfg.mode, gpu, cfg.cpu_workers, &replicas, latency, pages);
    Ok(RunOutput {
        outputs: outputs.into_iter().map(|o| o.expect("every document finished")).collect(),
        metrics,
    })
}

struct GatherState {
    pages: Vec<Option<PagePlan>>,
    laid_out: usize,
    outstanding: usize,
    results: BTreeMap<String, TaskOutcome>,
    finished: bool,
    finished_at: u64,
}

impl GatherState {
    fn new(n: usize) -> Self {
        Self {
            pages: (0..n).map(|_| None).collect(),
            laid_out: 0,
            outstanding: 0,
            results: BTreeMap::new(),
            finished: false,
            finished_at: 0,
        }
    }
}

/// Blocks for one item, then greedily takes more until `limit` items or the
/// wait elapses. `None` once the channel is closed and drained.
fn stack<T>(rx: &Receiver<T>, limit: usize, wait: Duration) -> Option<Vec<T>> {
    let first = rx.recv().ok()?;
    let mut batch = vec![first];
    let deadline = Instant::now() + wait;
    while batch.len() < limit {
        match rx.try_recv() {
            Ok(x) => batch.push(x),
            Err(_) => match rx.recv_deadline(deadline) {
                Ok(x) => batch.push(x),
                Err(_) => break,
            },
        }
    }
    Some(batch)
}

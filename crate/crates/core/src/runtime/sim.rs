use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};

use super::metrics::{DocLatency, JobRecord, Pool, Recorder, Stage};
use super::{Mode, PipelineConfig, RunOutput, RuntimeError};
use crate::dispatch::{ms_to_us, stack_decision, RoutePolicy, Task, TaskOutcome};
use crate::docmodel::DocumentIr;
use crate::engine::{finish_document, prepare_page, record_batch, DocPlan, PagePlan};
use crate::experts::{Expert, ExpertDescriptor, ExpertError, ExpertResponse, MockExpert, Modality};
use crate::format::ParsedDocument;

/// Scheduling view of one queue.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneState {
    pub lane: String,
    pub depth: usize,
    pub replicas: usize,
    /// Whether a batch can be dispatched from it right now.
    pub ready: bool,
    pub oldest_wait_us: u64,
}

/// Picks the queue a freed worker serves next: among ready queues, any whose
/// oldest item has waited at least `starvation_us` goes first (longest wait
/// wins), otherwise the greatest depth per replica, ties to the smaller name.
pub fn balance(lanes: &[LaneState], starvation_us: u64) -> Option<usize> {
    let ready = || lanes.iter().enumerate().filter(|(_, l)| l.ready && l.depth > 0);
    let starving = ready()
        .filter(|(_, l)| l.oldest_wait_us >= starvation_us)
        .min_by(|(_, a), (_, b)| b.oldest_wait_us.cmp(&a.oldest_wait_us).then(a.lane.cmp(&b.lane)));
    if let Some((i, _)) = starving {
        return Some(i);
    }
    ready()
        .min_by(|(_, a), (_, b)| {
            // a/ra > b/rb  <=>  a*rb > b*ra
            let lhs = a.depth * b.replicas.max(1);
            let rhs = b.depth * a.replicas.max(1);
            rhs.cmp(&lhs).then(a.lane.cmp(&b.lane))
        })
        .map(|(i, _)| i)
}

const LAYOUT_LANE: &str = "layout";

#[derive(Debug, Clone, Copy)]
enum CpuJob {
    Preprocess { doc: usize, page: usize },
    Postprocess { doc: usize },
}

#[derive(Debug)]
enum Event {
    CpuDone { worker: usize, job: CpuJob },
    LayoutDone { worker: usize, pages: Vec<(usize, usize)> },
    ExpertDone {
        worker: usize,
        modality: Modality,
        tasks: Vec<(usize, Task)>,
        outcome: Result<Vec<ExpertResponse>, ExpertError>,
    },
    Requeue { doc: usize, task: Box<Task> },
    Wake,
}

#[derive(Debug, Default)]
struct DocRun {
    pages: Vec<Option<PagePlan>>,
    pre_done: usize,
    laid_out: usize,
    held_pages: Vec<usize>,
    held_tasks: Vec<Task>,
    outstanding: usize,
    results: BTreeMap<String, TaskOutcome>,
    admitted_at: u64,
    finished_at: Option<u64>,
    post_queued: bool,
    output: Option<ParsedDocument>,
}

pub(crate) struct Sim<'a> {
    cfg: &'a PipelineConfig,
    docs: &'a [DocumentIr],
    policy: RoutePolicy,
    now: u64,
    seq: u64,
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    events: HashMap<u64, Event>,
    wakes: BTreeSet<u64>,
    runs: Vec<DocRun>,
    next_doc: usize,
    inflight: usize,
    experts: BTreeMap<Modality, MockExpert>,
    updates_applied: usize,
    cpu_busy: Vec<bool>,
    gpu_busy: Vec<bool>,
    cpu_jobs: VecDeque<CpuJob>,
    pre_running: usize,
    layout_staging: VecDeque<(usize, usize)>,
    layout_q: VecDeque<(usize, usize, u64)>,
    staging: VecDeque<(usize, Task)>,
    expert_q: BTreeMap<Modality, VecDeque<(usize, Task, u64)>>,
    running: BTreeMap<&'static str, usize>,
    attempts: HashMap<(usize, String), u32>,
    pending_requeues: usize,
    rec: Recorder,
}

impl<'a> Sim<'a> {
    pub fn new(docs: &'a [DocumentIr], cfg: &'a PipelineConfig) -> Self {
        let lanes = std::iter::once(LAYOUT_LANE).chain(Modality::ALL.iter().map(|m| m.as_str()));
        Self {
            cfg,
            docs,
            policy: cfg.policy(),
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            events: HashMap::new(),
            wakes: BTreeSet::new(),
            runs: docs.iter().map(|_| DocRun::default()).collect(),
            next_doc: 0,
            inflight: 0,
            experts: table(&cfg.experts, cfg.seed),
            updates_applied: 0,
            cpu_busy: vec![false; cfg.cpu_workers],
            gpu_busy: vec![false; cfg.workers],
            cpu_jobs: VecDeque::new(),
            pre_running: 0,
            layout_staging: VecDeque::new(),
            layout_q: VecDeque::new(),
            staging: VecDeque::new(),
            expert_q: Modality::ALL.into_iter().map(|m| (m, VecDeque::new())).collect(),
            running: BTreeMap::new(),
            attempts: HashMap::new(),
            pending_requeues: 0,
            rec: Recorder::new(lanes),
        }
    }

    pub fn run(mut self) -> Result<RunOutput, RuntimeError> {
        self.schedule()?;
        while let Some(Reverse((t, seq))) = self.heap.pop() {
            let ev = self.events.remove(&seq).expect("scheduled event exists");
            self.observe(t);
            self.now = t;
            self.handle(ev)?;
            self.schedule()?;
        }
        self.observe(self.now);
        debug_assert!(self.runs.iter().all(|r| r.output.is_some()));

        let replicas = self.cfg.experts.iter().map(|d| (d.modality, d.replicas)).collect();
        let latency = self
            .docs
            .iter()
            .zip(&self.runs)
            .map(|(doc, r)| {
                let finished = r.finished_at.unwrap_or(self.now);
                DocLatency {
                    doc_id: doc.doc_id.clone(),
                    admitted_us: r.admitted_at,
                    finished_us: finished,
                    latency_us: finished - r.admitted_at,
                }
            })
            .collect();
        let pages = self.docs.iter().map(|d| d.pages.len()).sum();
        let metrics = self.rec.finish(
            self.cfg.mode,
            self.cfg.workers,
            self.cfg.cpu_workers,
            &replicas,
            latency,
            pages,
        );
        let outputs = self
            .runs
            .into_iter()
            .map(|r| r.output.expect("every document finishes"))
            .collect();
        Ok(RunOutput { outputs, metrics })
    }

    fn push_event(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq)));
        self.events.insert(self.seq, ev);
    }

    fn observe(&mut self, t: u64) {
        let depths: Vec<(&str, usize)> = std::iter::once((LAYOUT_LANE, self.layout_q.len()))
            .chain(self.expert_q.iter().map(|(m, q)| (m.as_str(), q.len())))
            .collect();
        self.rec.observe(t, depths.into_iter());
    }

    fn pipelined(&self) -> bool {
        self.cfg.mode == Mode::PipelineParallel
    }

    fn inflight_limit(&self) -> usize {
        if self.pipelined() {
            self.cfg.max_inflight_docs
        } else {
            1
        }
    }

    fn busy_total(&self) -> usize {
        self.cpu_busy.iter().chain(&self.gpu_busy).filter(|b| **b).count()
    }

    fn exclusive_blocked(&self) -> bool {
        self.cfg.mode == Mode::Sequential && self.busy_total() > 0
    }

    fn handle(&mut self, ev: Event) -> Result<(), RuntimeError> {
        match ev {
            Event::Wake => {
                self.wakes.remove(&self.now);
            }
            Event::CpuDone { worker, job } => {
                self.cpu_busy[worker] = false;
                match job {
                    CpuJob::Preprocess { doc, page } => {
                        self.pre_running -= 1;
                        let r = &mut self.runs[doc];
                        r.pre_done += 1;
                        if self.cfg.mode == Mode::PipelineParallel {
                            self.layout_staging.push_back((doc, page));
                        } else {
                            r.held_pages.push(page);
                            if r.pre_done == r.pages.len() {
                                let mut held = std::mem::take(&mut r.held_pages);
                                held.sort_unstable();
                                self.layout_staging.extend(held.into_iter().map(|p| (doc, p)));
                            }
                        }
                    }
                    CpuJob::Postprocess { doc } => {
                        let r = &mut self.runs[doc];
                        let plan = DocPlan {
                            doc_id: self.docs[doc].doc_id.clone(),
                            language_tag: self.docs[doc].language_tag.clone(),
                            outline: self.docs[doc].outline.clone(),
                            pages: r.pages.iter_mut().map(|p| p.take().expect("page laid out")).collect(),
                            policy: self.policy,
                        };
                        r.output = Some(finish_document(&plan, &r.results, &self.cfg.engine)?);
                        r.finished_at = Some(self.now);
                        self.inflight -= 1;
                    }
                }
            }
            Event::LayoutDone { worker, pages } => {
                self.gpu_busy[worker] = false;
                *self.running.entry(LAYOUT_LANE).or_default() -= 1;
                for (doc, page) in pages {
                    let plan = prepare_page(
                        &self.docs[doc].doc_id,
                        &self.docs[doc].pages[page],
                        &self.cfg.engine,
                        &self.policy,
                    );
                    let tasks = plan.tasks.clone();
                    self.rec.tasks.dispatched += tasks.len();
                    let pipelined = self.pipelined();
                    let r = &mut self.runs[doc];
                    r.pages[page] = Some(plan);
                    r.laid_out += 1;
                    r.outstanding += tasks.len();
                    if pipelined {
                        self.staging.extend(tasks.into_iter().map(|t| (doc, t)));
                    } else {
                        r.held_tasks.extend(tasks);
                        if r.laid_out == r.pages.len() {
                            let held = std::mem::take(&mut r.held_tasks);
                            self.staging.extend(held.into_iter().map(|t| (doc, t)));
                        }
                    }
                    self.maybe_finish(doc);
                }
            }
            Event::ExpertDone {
                worker,
                modality,
                tasks,
                outcome,
            } => {
                self.gpu_busy[worker] = false;
                *self.running.entry(modality.as_str()).or_default() -= 1;
                match outcome {
                    Err(e) if e.is_retryable() => {
                        for (doc, task) in tasks {
                            let a = self.attempts.entry((doc, task.task_id.clone())).or_default();
                            if *a < self.cfg.retry.max_retries {
                                *a += 1;
                                let at = self.now + ms_to_us(self.cfg.retry.delay_ms(*a));
                                self.rec.tasks.retries += 1;
                                self.pending_requeues += 1;
                                self.push_event(at, Event::Requeue { doc, task: Box::new(task) });
                            } else {
                                self.settle(doc, &task.task_id, TaskOutcome::Failed(e.to_string()));
                            }
                        }
                    }
                    Err(e) => {
                        for (doc, task) in tasks {
                            self.settle(doc, &task.task_id, TaskOutcome::Failed(e.to_string()));
                        }
                    }
                    Ok(items) => {
                        let mut out = BTreeMap::new();
                        record_batch(std::iter::empty(), Ok(items), &mut out);
                        for (doc, task) in tasks {
                            let o = out
                                .remove(&task.task_id)
                                .unwrap_or_else(|| TaskOutcome::Failed("missing response item".into()));
                            self.settle(doc, &task.task_id, o);
                        }
                    }
                }
            }
            Event::Requeue { doc, task } => {
                self.pending_requeues -= 1;
                self.staging.push_back((doc, *task));
            }
        }
        Ok(())
    }

    fn settle(&mut self, doc: usize, task_id: &str, outcome: TaskOutcome) {
        match outcome {
            TaskOutcome::Done(_) => self.rec.tasks.completed += 1,
            TaskOutcome::Failed(_) => self.rec.tasks.failed += 1,
        }
        let r = &mut self.runs[doc];
        r.results.insert(task_id.to_string(), outcome);
        r.outstanding -= 1;
        self.maybe_finish(doc);
    }

    fn maybe_finish(&mut self, doc: usize) {
        let r = &mut self.runs[doc];
        if !r.post_queued && r.laid_out == r.pages.len() && r.outstanding == 0 {
            r.post_queued = true;
            self.cpu_jobs.push_back(CpuJob::Postprocess { doc });
        }
    }

    fn admit(&mut self) {
        while self.next_doc < self.docs.len() && self.inflight < self.inflight_limit() {
            let d = self.next_doc;
            if let Some(u) = self.cfg.descriptor_updates.get(self.updates_applied) {
                if u.before_doc <= d {
                    // swaps happen only between documents
                    if self.inflight > 0 {
                        return;
                    }
                    self.experts = table(&u.experts, self.cfg.seed);
                    self.updates_applied += 1;
                    continue;
                }
            }
            self.next_doc += 1;
            self.inflight += 1;
            let n = self.docs[d].pages.len();
            let r = &mut self.runs[d];
            r.admitted_at = self.now;
            r.pages = (0..n).map(|_| None).collect();
            for page in 0..n {
                self.cpu_jobs.push_back(CpuJob::Preprocess { doc: d, page });
            }
            self.maybe_finish(d);
        }
    }

    /// Moves staged work into the bounded queues, oldest first per lane.
    fn drain_staging(&mut self) {
        let cap = self.cfg.queue_capacity;
        while self.layout_q.len() < cap {
            let Some((d, p)) = self.layout_staging.pop_front() else { break };
            self.layout_q.push_back((d, p, self.now));
        }
        self.rec.note_depth(LAYOUT_LANE, self.layout_q.len());

        let mut blocked: BTreeSet<Modality> = BTreeSet::new();
        let mut rest = VecDeque::new();
        for (d, t) in std::mem::take(&mut self.staging) {
            let q = self.expert_q.get_mut(&t.modality).expect("queue per modality");
            if blocked.contains(&t.modality) || q.len() >= cap {
                blocked.insert(t.modality);
                rest.push_back((d, t));
            } else {
                let m = t.modality;
                q.push_back((d, t, self.now));
                let len = q.len();
                self.rec.note_depth(m.as_str(), len);
            }
        }
        self.staging = rest;
    }

    fn schedule(&mut self) -> Result<(), RuntimeError> {
        self.admit();
        self.drain_staging();
        self.start_cpu();
        self.start_gpu()?;
        self.arm_wakes();
        Ok(())
    }

    fn start_cpu(&mut self) {
        while let Some(w) = self.cpu_busy.iter().position(|b| !b) {
            if self.exclusive_blocked() {
                return;
            }
            let pick = self
                .cpu_jobs
                .iter()
                .position(|j| matches!(j, CpuJob::Postprocess { .. }))
                .or_else(|| {
                    let room = !self.pipelined()
                        || (self.layout_staging.is_empty()
                            && self.layout_q.len() + self.pre_running < self.cfg.queue_capacity);
                    (room && !self.cpu_jobs.is_empty()).then_some(0)
                });
            let Some(i) = pick else { return };
            let job = self.cpu_jobs.remove(i).expect("picked index exists");
            let (stage, dur_ms, items) = match job {
                CpuJob::Preprocess { .. } => {
                    self.pre_running += 1;
                    (Stage::Preprocess, self.cfg.preprocess_ms, 1)
                }
                CpuJob::Postprocess { doc } => {
                    let n = self.docs[doc].pages.len();
                    let p = &self.cfg.postprocess;
                    (Stage::Postprocess, p.base_ms + p.per_item_ms * n as f64, n)
                }
            };
            let end = self.now + ms_to_us(dur_ms);
            self.cpu_busy[w] = true;
            self.rec.job(JobRecord {
                pool: Pool::Cpu,
                worker: w,
                stage,
                modality: None,
                items,
                start: self.now,
                end,
            });
            self.push_event(end, Event::CpuDone { worker: w, job });
        }
    }

    fn preprocess_pending(&self) -> bool {
        self.pre_running > 0
            || !self.layout_staging.is_empty()
            || self.cpu_jobs.iter().any(|j| matches!(j, CpuJob::Preprocess { .. }))
    }

    fn layout_pending(&self) -> bool {
        self.preprocess_pending()
            || !self.layout_q.is_empty()
            || self.running.get(LAYOUT_LANE).copied().unwrap_or(0) > 0
    }

    /// How long a partial batch may wait; zero when nothing more can arrive.
    fn wait_us(&self, lane_is_layout: bool) -> u64 {
        if !self.pipelined() {
            return 0;
        }
        let upstream = if lane_is_layout {
            self.preprocess_pending()
        } else {
            self.layout_pending()
        };
        if upstream {
            ms_to_us(self.cfg.engine.dispatch.max_wait_ms)
        } else {
            0
        }
    }

    fn expert_batch_limit(&self, m: Modality) -> usize {
        let d = self.experts[&m].descriptor().max_batch;
        d.min(self.cfg.engine.dispatch.max_batch).max(1)
    }

    fn lanes(&self) -> Vec<(LaneState, Option<Modality>, usize)> {
        let mut out = Vec::with_capacity(8);
        let running = |name: &str| self.running.get(name).copied().unwrap_or(0);

        let wait = self.wait_us(true);
        let oldest = self.layout_q.front().map(|x| x.2);
        let decision = stack_decision(self.layout_q.len(), oldest, self.now, self.cfg.layout.max_batch, wait);
        out.push((
            LaneState {
                lane: LAYOUT_LANE.into(),
                depth: self.layout_q.len(),
                replicas: self.cfg.layout.replicas,
                // producers block while their output cannot be queued
                ready: decision.is_some()
                    && self.staging.is_empty()
                    && running(LAYOUT_LANE) < self.cfg.layout.replicas,
                oldest_wait_us: oldest.map_or(0, |t| self.now - t),
            },
            None,
            decision.map_or(0, |d| d.0),
        ));

        let wait = self.wait_us(false);
        for (m, q) in &self.expert_q {
            let desc = self.experts[m].descriptor();
            let oldest = q.front().map(|x| x.2);
            let decision = stack_decision(q.len(), oldest, self.now, self.expert_batch_limit(*m), wait);
            out.push((
                LaneState {
                    lane: m.as_str().into(),
                    depth: q.len(),
                    replicas: desc.replicas,
                    ready: decision.is_some() && running(m.as_str()) < desc.replicas,
                    oldest_wait_us: oldest.map_or(0, |t| self.now - t),
                },
                Some(*m),
                decision.map_or(0, |d| d.0),
            ));
        }
        out
    }

    fn start_gpu(&mut self) -> Result<(), RuntimeError> {
        while let Some(w) = self.gpu_busy.iter().position(|b| !b) {
            if self.exclusive_blocked() {
                return Ok(());
            }
            let lanes = self.lanes();
            let states: Vec<LaneState> = lanes.iter().map(|l| l.0.clone()).collect();
            let Some(i) = balance(&states, ms_to_us(self.cfg.starvation_ms)) else {
                return Ok(());
            };
            let (_, modality, n) = &lanes[i];
            let n = *n;
            self.gpu_busy[w] = true;
            match modality {
                None => self.start_layout(w, n),
                Some(m) => self.start_expert(w, *m, n),
            }
            // drained queues may admit staged work for the next worker
            self.drain_staging();
        }
        Ok(())
    }

    fn start_layout(&mut self, w: usize, n: usize) {
        let pages: Vec<(usize, usize)> = self.layout_q.drain(..n).map(|(d, p, _)| (d, p)).collect();
        let keys: Vec<String> = pages
            .iter()
            .map(|(d, p)| format!("{}#{}", self.docs[*d].doc_id, p))
            .collect();
        let dur = self.cfg.layout.latency.latency_for(keys.iter().map(|k| (k.as_str(), 0)));
        let end = self.now + ms_to_us(dur);
        *self.running.entry(LAYOUT_LANE).or_default() += 1;
        self.rec.job(JobRecord {
            pool: Pool::Gpu,
            worker: w,
            stage: Stage::Layout,
            modality: None,
            items: pages.len(),
            start: self.now,
            end,
        });
        self.push_event(end, Event::LayoutDone { worker: w, pages });
    }

    fn start_expert(&mut self, w: usize, m: Modality, n: usize) {
        let q = self.expert_q.get_mut(&m).expect("queue per modality");
        let tasks: Vec<(usize, Task)> = q.drain(..n).map(|(d, t, _)| (d, t)).collect();
        let reqs: Vec<_> = tasks
            .iter()
            .map(|(d, t)| {
                let a = self.attempts.get(&(*d, t.task_id.clone())).copied().unwrap_or(0);
                t.request(a)
            })
            .collect();
        let expert = &self.experts[&m];
        let outcome = expert.process_batch(&reqs);
        let end = self.now + ms_to_us(expert.latency_ms(&reqs));
        *self.running.entry(m.as_str()).or_default() += 1;
        self.rec.job(JobRecord {
            pool: Pool::Gpu,
            worker: w,
            stage: Stage::Experts,
            modality: Some(m),
            items: tasks.len(),
            start: self.now,
            end,
        });
        self.push_event(
            end,
            Event::ExpertDone {
                worker: w,
                modality: m,
                tasks,
                outcome,
            },
        );
    }

    /// Schedules a wake-up for the moment a waiting partial batch times out.
    fn arm_wakes(&mut self) {
        let mut due = Vec::new();
        let wait = self.wait_us(true);
        if let Some((_, _, t)) = self.layout_q.front() {
            due.push(t + wait);
        }
        let wait = self.wait_us(false);
        for q in self.expert_q.values() {
            if let Some((_, _, t)) = q.front() {
                due.push(t + wait);
            }
        }
        for at in due {
            if at > self.now && self.wakes.insert(at) {
                self.push_event(at, Event::Wake);
            }
        }
    }
}

fn table(descs: &[ExpertDescriptor], seed: u64) -> BTreeMap<Modality, MockExpert> {
    descs
        .iter()
        .map(|d| (d.modality, MockExpert::new(d.clone(), seed)))
        .collect()
}

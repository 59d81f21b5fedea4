//! Render-farm supervisor (the r-server).
//!
//! Accepts render jobs, splits them into frame tasks, hands tasks to
//! registered workers one at a time, and recovers the work of workers whose
//! heartbeats stop. All operations are serial against one [`Supervisor`];
//! the caller provides ordering.

pub mod script;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    chunk_job, FrameTask, JobId, JobState, ModelError, NodeId, RenderJob, TaskId, TaskState,
    WorkerId, WorkerRecord, WorkerState,
};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SupervisorError {
    #[error("job {0} already submitted")]
    DuplicateJobId(JobId),
    #[error("invalid render job: {0}")]
    InvalidJob(#[from] ModelError),
    #[error("worker {0} is already registered and alive")]
    DuplicateWorker(WorkerId),
    #[error("unknown worker {0}")]
    UnknownWorker(WorkerId),
    #[error("worker {0} is not alive")]
    WorkerNotAlive(WorkerId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {task} is not assigned to worker {worker}")]
    NotAssignee { task: TaskId, worker: WorkerId },
}

impl SupervisorError {
    /// Stable name used by the line protocol.
    pub fn kind(&self) -> &'static str {
        match self {
            SupervisorError::DuplicateJobId(_) => "DuplicateJobId",
            SupervisorError::InvalidJob(_) => "InvalidJob",
            SupervisorError::DuplicateWorker(_) => "DuplicateWorker",
            SupervisorError::UnknownWorker(_) => "UnknownWorker",
            SupervisorError::WorkerNotAlive(_) => "WorkerNotAlive",
            SupervisorError::UnknownTask(_) => "UnknownTask",
            SupervisorError::NotAssignee { .. } => "NotAssignee",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DispatchPolicy {
    /// Oldest submission first, low frames first.
    Fifo,
    /// Highest priority first, then as `Fifo`.
    #[default]
    PriorityThenFifo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisorConfig {
    pub heartbeat_timeout_s: u64,
    pub max_attempts: u32,
    pub dispatch_policy: DispatchPolicy,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        SupervisorConfig {
            heartbeat_timeout_s: 30,
            max_attempts: 3,
            dispatch_policy: DispatchPolicy::PriorityThenFifo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskOutcome {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportAck {
    pub task_state: TaskState,
    pub job_state: JobState,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub pending: u64,
    pub dispatched: u64,
    pub rendering: u64,
    pub complete: u64,
    pub failed: u64,
}

impl TaskCounts {
    pub fn total(&self) -> u64 {
        self.pending + self.dispatched + self.rendering + self.complete + self.failed
    }

    pub fn in_flight(&self) -> u64 {
        self.dispatched + self.rendering
    }

    fn slot(&mut self, state: TaskState) -> &mut u64 {
        match state {
            TaskState::Pending => &mut self.pending,
            TaskState::Dispatched => &mut self.dispatched,
            TaskState::Rendering => &mut self.rendering,
            TaskState::Complete => &mut self.complete,
            TaskState::Failed => &mut self.failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSummary {
    pub job_id: JobId,
    pub state: JobState,
    pub tasks: TaskCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerSummary {
    pub worker_id: WorkerId,
    pub node_id: NodeId,
    pub state: WorkerState,
    pub busy_tasks: u32,
}

/// Snapshot returned by [`Supervisor::query_jobs`]. `pending_task_count` is
/// the queue depth the meta-scheduler sizes the worker pool from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FarmSummary {
    pub jobs: Vec<JobSummary>,
    pub pending_task_count: u64,
    pub in_flight_task_count: u64,
    pub alive_worker_count: u64,
    pub workers: Vec<WorkerSummary>,
}

impl FarmSummary {
    /// Tasks that still need a worker: pending or in flight.
    pub fn outstanding_task_count(&self) -> u64 {
        self.pending_task_count + self.in_flight_task_count
    }

    pub fn worker(&self, id: &WorkerId) -> Option<&WorkerSummary> {
        self.workers.iter().find(|w| &w.worker_id == id)
    }
}

// (priority key, submit time, first frame, job sequence, task)
type DispatchKey = (Reverse<i32>, SimTime, i64, u64, TaskId);

#[derive(Debug, Clone)]
struct JobEntry {
    job: RenderJob,
    seq: u64,
    counts: TaskCounts,
}

#[derive(Debug, Clone)]
pub struct Supervisor {
    config: SupervisorConfig,
    jobs: BTreeMap<JobId, JobEntry>,
    tasks: BTreeMap<TaskId, FrameTask>,
    workers: BTreeMap<WorkerId, WorkerRecord>,
    holdings: BTreeMap<WorkerId, BTreeSet<TaskId>>,
    pending: BTreeSet<DispatchKey>,
    next_job_seq: u64,
}

impl Default for Supervisor {
    fn default() -> Self {
        Supervisor::new(SupervisorConfig::default())
    }
}

impl Supervisor {
    pub fn new(config: SupervisorConfig) -> Self {
        Supervisor {
            config,
            jobs: BTreeMap::new(),
            tasks: BTreeMap::new(),
            workers: BTreeMap::new(),
            holdings: BTreeMap::new(),
            pending: BTreeSet::new(),
            next_job_seq: 0,
        }
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.config
    }

    pub fn job(&self, id: &JobId) -> Option<&RenderJob> {
        self.jobs.get(id).map(|e| &e.job)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &RenderJob> {
        self.jobs.values().map(|e| &e.job)
    }

    pub fn task(&self, id: &TaskId) -> Option<&FrameTask> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &FrameTask> {
        self.tasks.values()
    }

    pub fn worker(&self, id: &WorkerId) -> Option<&WorkerRecord> {
        self.workers.get(id)
    }

    pub fn workers(&self) -> impl Iterator<Item = &WorkerRecord> {
        self.workers.values()
    }

    pub fn pending_task_count(&self) -> u64 {
        self.pending.len() as u64
    }

    /// Workers not yet declared dead (Alive or Suspect).
    pub fn live_worker_count(&self) -> u64 {
        self.workers.values().filter(|w| w.is_live()).count() as u64
    }

    /// Tasks currently held by a worker.
    pub fn held_by(&self, id: &WorkerId) -> impl Iterator<Item = &TaskId> {
        self.holdings.get(id).into_iter().flatten()
    }

    fn timeout(&self) -> SimDuration {
        SimDuration::from_secs(self.config.heartbeat_timeout_s)
    }

    fn dispatch_key(&self, entry: &JobEntry, task: &FrameTask) -> DispatchKey {
        let priority = match self.config.dispatch_policy {
            DispatchPolicy::Fifo => 0,
            DispatchPolicy::PriorityThenFifo => entry.job.priority,
        };
        (
            Reverse(priority),
            entry.job.submit_time,
            task.frames.start(),
            entry.seq,
            task.task_id.clone(),
        )
    }

    fn set_task_state(&mut self, id: &TaskId, state: TaskState) {
        let task = self.tasks.get_mut(id).expect("task exists");
        let entry = self.jobs.get_mut(&task.job_id).expect("parent job exists");
        *entry.counts.slot(task.state) -= 1;
        *entry.counts.slot(state) += 1;
        task.state = state;
    }

    fn requeue(&mut self, id: &TaskId) {
        self.set_task_state(id, TaskState::Pending);
        let task = self.tasks.get_mut(id).expect("task exists");
        if let Some(worker) = task.assigned_worker.take() {
            if let Some(held) = self.holdings.get_mut(&worker) {
                held.remove(id);
            }
        }
        let task = &self.tasks[id];
        let key = self.dispatch_key(&self.jobs[&task.job_id], task);
        self.pending.insert(key);
    }

    pub fn submit_render_job(&mut self, mut job: RenderJob) -> Result<JobId, SupervisorError> {
        job.validate()?;
        if self.jobs.contains_key(&job.job_id) {
            return Err(SupervisorError::DuplicateJobId(job.job_id));
        }
        job.state = JobState::Queued;
        let tasks = chunk_job(&job);
        let entry = JobEntry {
            job,
            seq: self.next_job_seq,
            counts: TaskCounts {
                pending: tasks.len() as u64,
                ..TaskCounts::default()
            },
        };
        self.next_job_seq += 1;
        for task in tasks {
            self.pending.insert(self.dispatch_key(&entry, &task));
            self.tasks.insert(task.task_id.clone(), task);
        }
        let id = entry.job.job_id.clone();
        self.jobs.insert(id.clone(), entry);
        Ok(id)
    }

    /// Registers a worker, or re-registers one previously declared dead.
    pub fn register_worker(
        &mut self,
        worker_id: WorkerId,
        node_id: NodeId,
        cores: u32,
        now: SimTime,
    ) -> Result<(), SupervisorError> {
        if let Some(existing) = self.workers.get(&worker_id) {
            if existing.is_live() {
                return Err(SupervisorError::DuplicateWorker(worker_id));
            }
        }
        self.workers.insert(
            worker_id.clone(),
            WorkerRecord {
                worker_id: worker_id.clone(),
                node_id,
                cores,
                state: WorkerState::Alive,
                last_heartbeat: now,
                registered_at: now,
            },
        );
        self.holdings.entry(worker_id).or_default();
        Ok(())
    }

    pub fn heartbeat(&mut self, worker_id: &WorkerId, now: SimTime) -> Result<(), SupervisorError> {
        let w = self
            .workers
            .get_mut(worker_id)
            .ok_or_else(|| SupervisorError::UnknownWorker(worker_id.clone()))?;
        if w.state == WorkerState::Dead {
            return Err(SupervisorError::WorkerNotAlive(worker_id.clone()));
        }
        w.last_heartbeat = w.last_heartbeat.max(now);
        w.state = WorkerState::Alive;
        Ok(())
    }

    /// Hands the next pending task to `worker_id`, or `None` if the queue is
    /// empty.
    pub fn request_task(
        &mut self,
        worker_id: &WorkerId,
        now: SimTime,
    ) -> Result<Option<FrameTask>, SupervisorError> {
        let w = self
            .workers
            .get(worker_id)
            .ok_or_else(|| SupervisorError::UnknownWorker(worker_id.clone()))?;
        if !w.is_live() {
            return Err(SupervisorError::WorkerNotAlive(worker_id.clone()));
        }
        let Some(key) = self.pending.pop_first() else {
            return Ok(None);
        };
        let id = key.4;
        self.set_task_state(&id, TaskState::Dispatched);
        let task = self
            .tasks
            .get_mut(&id)
            .expect("pending key refers to a task");
        task.assigned_worker = Some(worker_id.clone());
        task.attempts += 1;
        task.last_dispatch_time = Some(now);
        let task = task.clone();
        self.holdings
            .entry(worker_id.clone())
            .or_default()
            .insert(id);
        let job = &mut self.jobs.get_mut(&task.job_id).expect("job exists").job;
        if job.state == JobState::Queued {
            job.state = JobState::Active;
        }
        Ok(Some(task))
    }

    fn assigned_task(
        &self,
        worker_id: &WorkerId,
        task_id: &TaskId,
    ) -> Result<&FrameTask, SupervisorError> {
        let task = self
            .tasks
            .get(task_id)
            .ok_or_else(|| SupervisorError::UnknownTask(task_id.clone()))?;
        if !task.state.is_in_flight() || task.assigned_worker.as_ref() != Some(worker_id) {
            return Err(SupervisorError::NotAssignee {
                task: task_id.clone(),
                worker: worker_id.clone(),
            });
        }
        Ok(task)
    }

    /// Worker acknowledges that it started rendering a dispatched task.
    pub fn begin_task(
        &mut self,
        worker_id: &WorkerId,
        task_id: &TaskId,
        _now: SimTime,
    ) -> Result<(), SupervisorError> {
        let task = self.assigned_task(worker_id, task_id)?;
        if task.state == TaskState::Dispatched {
            self.set_task_state(task_id, TaskState::Rendering);
        }
        Ok(())
    }

    pub fn report_task_result(
        &mut self,
        worker_id: &WorkerId,
        task_id: &TaskId,
        outcome: TaskOutcome,
        _now: SimTime,
    ) -> Result<ReportAck, SupervisorError> {
        let attempts = self.assigned_task(worker_id, task_id)?.attempts;
        let job_id = self.tasks[task_id].job_id.clone();
        let task_state = match outcome {
            TaskOutcome::Complete => {
                self.set_task_state(task_id, TaskState::Complete);
                TaskState::Complete
            }
            TaskOutcome::Failed if attempts < self.config.max_attempts => {
                self.requeue(task_id);
                TaskState::Pending
            }
            TaskOutcome::Failed => {
                self.set_task_state(task_id, TaskState::Failed);
                TaskState::Failed
            }
        };
        if task_state != TaskState::Pending {
            let task = self.tasks.get_mut(task_id).expect("task exists");
            task.assigned_worker = None;
            if let Some(held) = self.holdings.get_mut(worker_id) {
                held.remove(task_id);
            }
        }
        let entry = self.jobs.get_mut(&job_id).expect("job exists");
        if task_state == TaskState::Failed {
            entry.job.state = JobState::Failed;
        } else if entry.counts.complete == entry.counts.total() {
            entry.job.state = JobState::Complete;
        }
        Ok(ReportAck {
            task_state,
            job_state: entry.job.state,
        })
    }

    /// Declares workers dead once their heartbeat is older than the timeout
    /// and puts their in-flight tasks back in the queue, unless a task has
    /// used up its attempts, in which case it fails. Workers past half the
    /// timeout are marked Suspect. Returns the rescheduled tasks.
    pub fn sweep_failures(&mut self, now: SimTime) -> Vec<TaskId> {
        let timeout = self.timeout();
        let half = SimDuration(timeout.0 / 2);
        let mut dead = Vec::new();
        for w in self.workers.values_mut() {
            if w.state == WorkerState::Dead {
                continue;
            }
            let age = now.since(w.last_heartbeat);
            if age > timeout {
                w.state = WorkerState::Dead;
                dead.push(w.worker_id.clone());
            } else if age > half {
                w.state = WorkerState::Suspect;
            }
        }
        let mut rescheduled = Vec::new();
        for worker in dead {
            let held = self.holdings.remove(&worker).unwrap_or_default();
            for id in held {
                if self.tasks[&id].attempts < self.config.max_attempts {
                    self.requeue(&id);
                    rescheduled.push(id);
                } else {
                    self.set_task_state(&id, TaskState::Failed);
                    let task = self.tasks.get_mut(&id).expect("task exists");
                    task.assigned_worker = None;
                    let job_id = task.job_id.clone();
                    self.jobs.get_mut(&job_id).expect("job exists").job.state = JobState::Failed;
                }
            }
        }
        rescheduled
    }

    pub fn query_jobs(&self) -> FarmSummary {
        let jobs: Vec<JobSummary> = self
            .jobs
            .values()
            .map(|e| JobSummary {
                job_id: e.job.job_id.clone(),
                state: e.job.state,
                tasks: e.counts.clone(),
            })
            .collect();
        let in_flight = jobs.iter().map(|j| j.tasks.in_flight()).sum();
        FarmSummary {
            pending_task_count: self.pending_task_count(),
            in_flight_task_count: in_flight,
            alive_worker_count: self.live_worker_count(),
            workers: self
                .workers
                .values()
                .map(|w| WorkerSummary {
                    worker_id: w.worker_id.clone(),
                    node_id: w.node_id.clone(),
                    state: w.state,
                    busy_tasks: self
                        .holdings
                        .get(&w.worker_id)
                        .map_or(0, |h| h.len() as u32),
                })
                .collect(),
            jobs,
        }
    }

    /// Checks every structural invariant and returns the violations found.
    /// Used by tests and the simulator's self-checks.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut per_job: BTreeMap<&JobId, TaskCounts> = BTreeMap::new();
        let mut covered: BTreeMap<&JobId, Vec<(i64, i64)>> = BTreeMap::new();
        let mut holders: BTreeMap<&TaskId, &WorkerId> = BTreeMap::new();
        let queued: BTreeSet<&TaskId> = self.pending.iter().map(|k| &k.4).collect();
        for (id, task) in &self.tasks {
            *per_job.entry(&task.job_id).or_default().slot(task.state) += 1;
            covered
                .entry(&task.job_id)
                .or_default()
                .push((task.frames.start(), task.frames.end()));
            match (&task.assigned_worker, task.state.is_in_flight()) {
                (Some(w), true) => {
                    match self.workers.get(w) {
                        Some(rec) if rec.is_live() => {}
                        _ => problems.push(format!("task {id} held by non-live worker {w}")),
                    }
                    if !self.holdings.get(w).is_some_and(|h| h.contains(id)) {
                        problems.push(format!("task {id} missing from holdings of {w}"));
                    }
                    holders.insert(id, w);
                }
                (None, false) => {}
                _ => problems.push(format!(
                    "task {id} in state {:?} has assignment {:?}",
                    task.state, task.assigned_worker
                )),
            }
            if queued.contains(id) != (task.state == TaskState::Pending) {
                problems.push(format!("task {id} pending-queue membership mismatch"));
            }
        }
        for (w, held) in &self.holdings {
            for id in held {
                if holders.get(id) != Some(&w) {
                    problems.push(format!("worker {w} lists {id} it does not hold"));
                }
            }
        }
        if self.pending.len() as u64 != self.jobs.values().map(|e| e.counts.pending).sum::<u64>() {
            problems.push("pending queue size disagrees with counters".into());
        }
        for (id, entry) in &self.jobs {
            let counted = per_job.remove(id).unwrap_or_default();
            if counted != entry.counts {
                problems.push(format!(
                    "job {id} counters {:?} != {:?}",
                    entry.counts, counted
                ));
            }
            if counted.total() != entry.job.task_count() {
                problems.push(format!("job {id} has {} tasks", counted.total()));
            }
            let mut spans = covered.remove(id).unwrap_or_default();
            spans.sort_unstable();
            let mut next = entry.job.frame_range.start();
            for (s, e) in spans {
                if s != next {
                    problems.push(format!("job {id} frames not partitioned at {next}"));
                    break;
                }
                next = e + 1;
            }
            if next != entry.job.frame_range.end() + 1 {
                problems.push(format!("job {id} frames not covered"));
            }
            let all_complete = counted.complete == counted.total();
            if (entry.job.state == JobState::Complete) != all_complete {
                problems.push(format!("job {id} state {:?} vs tasks", entry.job.state));
            }
        }
        problems
    }
}

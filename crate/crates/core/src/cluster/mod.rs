//! A PBS-like batch resource manager.
//!
//! Job files enter one FIFO queue and start on the first node with enough
//! free cores. The queue head blocks everything behind it; there is no
//! backfill. Jobs larger than every node are skipped by the scan and stay
//! queued forever, visible through [`ClusterManager::query_jobs_by_name`].

pub mod script;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClusterJob, ClusterJobId, ClusterJobState, JobFile, ModelError, NodeId};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("invalid job file: {0}")]
    InvalidJobFile(#[from] ModelError),
    #[error("unknown cluster job {0}")]
    UnknownJob(ClusterJobId),
    #[error("cluster job {0} already finished")]
    AlreadyTerminal(ClusterJobId),
    #[error("cluster job {0} is not running")]
    NotRunning(ClusterJobId),
}

impl ClusterError {
    pub fn kind(&self) -> &'static str {
        match self {
            ClusterError::InvalidJobFile(_) => "InvalidJobFile",
            ClusterError::UnknownJob(_) => "UnknownJob",
            ClusterError::AlreadyTerminal(_) => "AlreadyTerminal",
            ClusterError::NotRunning(_) => "NotRunning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: NodeId,
    pub cores_total: u32,
    pub cores_free: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SchedulingPolicy {
    #[default]
    FifoFirstFit,
}

/// One row of a query-by-name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRow {
    pub name: String,
    pub cluster_job_id: ClusterJobId,
    pub state: ClusterJobState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Utilization {
    pub cores_total: u64,
    pub cores_busy: u64,
    pub queued_jobs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeleteAck {
    /// Cores released, zero when the job had not started.
    pub freed_cores: u32,
    pub was_running: bool,
}

#[derive(Debug, Clone)]
pub struct ClusterManager {
    nodes: Vec<Node>,
    queue: VecDeque<ClusterJobId>,
    jobs: BTreeMap<ClusterJobId, ClusterJob>,
    /// Jobs deleted while still queued; their records are dropped.
    withdrawn: BTreeSet<ClusterJobId>,
    policy: SchedulingPolicy,
    next_id: u64,
}

impl ClusterManager {
    pub fn new(nodes: impl IntoIterator<Item = (NodeId, u32)>) -> Self {
        ClusterManager {
            nodes: nodes
                .into_iter()
                .map(|(node_id, cores)| Node {
                    node_id,
                    cores_total: cores,
                    cores_free: cores,
                })
                .collect(),
            queue: VecDeque::new(),
            jobs: BTreeMap::new(),
            withdrawn: BTreeSet::new(),
            policy: SchedulingPolicy::FifoFirstFit,
            next_id: 1,
        }
    }

    /// `count` identical nodes named `node-01`, `node-02`, ...
    pub fn uniform(count: usize, cores: u32) -> Self {
        ClusterManager::new((1..=count).map(|i| (NodeId::new(format!("node-{i:02}")), cores)))
    }

    pub fn add_node(&mut self, node_id: NodeId, cores: u32) {
        self.nodes.push(Node {
            node_id,
            cores_total: cores,
            cores_free: cores,
        });
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn policy(&self) -> SchedulingPolicy {
        self.policy
    }

    pub fn job(&self, id: ClusterJobId) -> Option<&ClusterJob> {
        self.jobs.get(&id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &ClusterJob> {
        self.jobs.values()
    }

    pub fn queued(&self) -> impl Iterator<Item = &ClusterJob> {
        self.queue.iter().map(|id| &self.jobs[id])
    }

    pub fn largest_node_cores(&self) -> u32 {
        self.nodes.iter().map(|n| n.cores_total).max().unwrap_or(0)
    }

    pub fn submit_job(&mut self, jf: JobFile, now: SimTime) -> Result<ClusterJobId, ClusterError> {
        jf.validate()?;
        let id = ClusterJobId(self.next_id);
        self.next_id += 1;
        self.jobs.insert(
            id,
            ClusterJob {
                job: jf,
                cluster_job_id: id,
                state: ClusterJobState::Queued,
                node_id: None,
                submit_time: now,
                start_time: None,
                end_time: None,
            },
        );
        self.queue.push_back(id);
        Ok(id)
    }

    /// Starts queued jobs in FIFO order on the first node that fits.
    /// Returns the ids started, in start order.
    pub fn schedule_step(&mut self, now: SimTime) -> Vec<ClusterJobId> {
        let largest = self.largest_node_cores();
        let mut started = Vec::new();
        let mut kept = VecDeque::with_capacity(self.queue.len());
        let mut blocked = false;
        while let Some(id) = self.queue.pop_front() {
            let cores = self.jobs[&id].job.cores;
            if blocked || cores > largest {
                kept.push_back(id);
                continue;
            }
            match self.nodes.iter_mut().find(|n| n.cores_free >= cores) {
                Some(node) => {
                    node.cores_free -= cores;
                    let job = self.jobs.get_mut(&id).expect("queued job exists");
                    job.state = ClusterJobState::Running;
                    job.node_id = Some(node.node_id.clone());
                    job.start_time = Some(now);
                    started.push(id);
                }
                None => {
                    blocked = true;
                    kept.push_back(id);
                }
            }
        }
        self.queue = kept;
        started
    }

    fn release(&mut self, id: ClusterJobId, state: ClusterJobState, now: SimTime) -> u32 {
        let job = self.jobs.get_mut(&id).expect("job exists");
        debug_assert_eq!(job.state, ClusterJobState::Running);
        job.state = state;
        job.end_time = Some(now);
        let cores = job.job.cores;
        let node_id = job.node_id.clone().expect("running job has a node");
        let node = self
            .nodes
            .iter_mut()
            .find(|n| n.node_id == node_id)
            .expect("job node exists");
        node.cores_free += cores;
        cores
    }

    /// Terminates every running job whose elapsed time has reached its
    /// walltime.
    pub fn enforce_walltime(&mut self, now: SimTime) -> Vec<ClusterJobId> {
        let expired: Vec<ClusterJobId> = self
            .jobs
            .values()
            .filter(|j| j.state == ClusterJobState::Running)
            .filter(|j| {
                let start = j.start_time.expect("running job has a start time");
                now.since(start) >= SimDuration::from_secs(j.job.walltime_s)
            })
            .map(|j| j.cluster_job_id)
            .collect();
        for &id in &expired {
            self.release(id, ClusterJobState::WalltimeExceeded, now);
        }
        expired
    }

    /// Active (queued or running) jobs whose name starts with `prefix`.
    pub fn query_jobs_by_name(&self, prefix: &str) -> Vec<JobRow> {
        self.jobs
            .values()
            .filter(|j| j.state.is_active() && j.job.name.starts_with(prefix))
            .map(|j| JobRow {
                name: j.job.name.clone(),
                cluster_job_id: j.cluster_job_id,
                state: j.state,
            })
            .collect()
    }

    pub fn delete_job(
        &mut self,
        id: ClusterJobId,
        now: SimTime,
    ) -> Result<DeleteAck, ClusterError> {
        if self.withdrawn.contains(&id) {
            return Err(ClusterError::AlreadyTerminal(id));
        }
        let state = self
            .jobs
            .get(&id)
            .ok_or(ClusterError::UnknownJob(id))?
            .state;
        match state {
            ClusterJobState::Queued => {
                self.queue.retain(|q| *q != id);
                self.jobs.remove(&id);
                self.withdrawn.insert(id);
                Ok(DeleteAck {
                    freed_cores: 0,
                    was_running: false,
                })
            }
            ClusterJobState::Running => Ok(DeleteAck {
                freed_cores: self.release(id, ClusterJobState::Killed, now),
                was_running: true,
            }),
            _ => Err(ClusterError::AlreadyTerminal(id)),
        }
    }

    /// The payload of a running job exited on its own.
    pub fn finish_job(&mut self, id: ClusterJobId, now: SimTime) -> Result<(), ClusterError> {
        let state = self
            .jobs
            .get(&id)
            .ok_or(ClusterError::UnknownJob(id))?
            .state;
        if state != ClusterJobState::Running {
            return Err(ClusterError::NotRunning(id));
        }
        self.release(id, ClusterJobState::Completed, now);
        Ok(())
    }

    pub fn utilization(&self) -> Utilization {
        Utilization {
            cores_total: self.nodes.iter().map(|n| u64::from(n.cores_total)).sum(),
            cores_busy: self
                .nodes
                .iter()
                .map(|n| u64::from(n.cores_total - n.cores_free))
                .sum(),
            queued_jobs: self.queue.len() as u64,
        }
    }

    /// Per-node core accounting and job-state consistency violations.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut held: BTreeMap<&NodeId, u32> = BTreeMap::new();
        for job in self.jobs.values() {
            let needs_node = !matches!(job.state, ClusterJobState::Queued);
            if needs_node != job.node_id.is_some() {
                problems.push(format!(
                    "job {} node presence vs {:?}",
                    job.cluster_job_id, job.state
                ));
            }
            if job.state == ClusterJobState::Running {
                *held
                    .entry(job.node_id.as_ref().expect("checked"))
                    .or_default() += job.job.cores;
            }
            if job.state == ClusterJobState::WalltimeExceeded {
                let ran = job
                    .end_time
                    .unwrap_or_default()
                    .since(job.start_time.unwrap_or_default());
                if ran < SimDuration::from_secs(job.job.walltime_s) {
                    problems.push(format!("job {} killed before walltime", job.cluster_job_id));
                }
            }
        }
        for node in &self.nodes {
            if node.cores_free > node.cores_total {
                problems.push(format!(
                    "node {} has {} free of {}",
                    node.node_id, node.cores_free, node.cores_total
                ));
            }
            let busy = held.get(&node.node_id).copied().unwrap_or(0);
            if busy != node.cores_total.saturating_sub(node.cores_free) {
                problems.push(format!(
                    "node {} holds {busy} cores but reports {} free",
                    node.node_id, node.cores_free
                ));
            }
        }
        let queued = self
            .jobs
            .values()
            .filter(|j| j.state == ClusterJobState::Queued)
            .count();
        if queued != self.queue.len() {
            problems.push("queue length disagrees with queued jobs".into());
        }
        problems
    }
}

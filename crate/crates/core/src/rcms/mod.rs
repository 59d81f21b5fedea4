//! The meta-scheduler: a reconciliation loop that sizes the pool of
//! r-client cluster jobs to the farm's queue depth and the cluster's load.
//!
//! Each poll runs [`Rcms::sync_state`] against fresh views of the cluster
//! and the farm, then [`Rcms::reconcile`] to turn the gap between desired and
//! live r-clients into submit and delete actions. [`Rcms::step`] does both
//! and applies the actions through the backend traits.

mod naming;

pub use naming::{make_job_name, parse_job_name, worker_id_for};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterError, ClusterManager, DeleteAck, JobRow, Utilization};
use crate::model::{ClusterJobId, ClusterJobState, JobFile, WorkerId};
use crate::rclient::ClientLaunch;
use crate::supervisor::{FarmSummary, Supervisor};
use crate::time::SimTime;

/// The cluster operations the meta-scheduler needs: submit, query by name,
/// delete, and a load snapshot.
pub trait ClusterBackend {
    fn submit_job(&mut self, jf: JobFile, now: SimTime) -> Result<ClusterJobId, ClusterError>;
    fn query_jobs_by_name(&self, prefix: &str) -> Vec<JobRow>;
    fn delete_job(&mut self, id: ClusterJobId, now: SimTime) -> Result<DeleteAck, ClusterError>;
    fn utilization(&self) -> Utilization;
}

/// The job-control query the meta-scheduler needs from the farm.
pub trait FarmBackend {
    fn query_jobs(&self) -> FarmSummary;
}

impl ClusterBackend for ClusterManager {
    fn submit_job(&mut self, jf: JobFile, now: SimTime) -> Result<ClusterJobId, ClusterError> {
        ClusterManager::submit_job(self, jf, now)
    }

    fn query_jobs_by_name(&self, prefix: &str) -> Vec<JobRow> {
        ClusterManager::query_jobs_by_name(self, prefix)
    }

    fn delete_job(&mut self, id: ClusterJobId, now: SimTime) -> Result<DeleteAck, ClusterError> {
        ClusterManager::delete_job(self, id, now)
    }

    fn utilization(&self) -> Utilization {
        ClusterManager::utilization(self)
    }
}

impl FarmBackend for Supervisor {
    fn query_jobs(&self) -> FarmSummary {
        Supervisor::query_jobs(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Submitted,
    Running,
    WorkerAlive,
    Deleting,
    Gone,
}

impl Phase {
    /// Submitted, Running or WorkerAlive.
    pub fn is_live(self) -> bool {
        self < Phase::Deleting
    }
}

/// One row of the state table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcmsStateEntry {
    pub job_name: String,
    pub cluster_job_id: Option<ClusterJobId>,
    pub expected_worker_id: WorkerId,
    pub phase: Phase,
    pub submitted_at: SimTime,
}

impl RcmsStateEntry {
    /// Moves forward only; requests to move backward are ignored.
    fn advance(&mut self, to: Phase) -> bool {
        if to > self.phase {
            self.phase = to;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingPolicy {
    /// License cap on concurrent r-clients.
    pub max_workers: u32,
    pub frames_per_worker_target: u32,
    /// Cores kept free for compute jobs.
    pub cluster_headroom_cores: u32,
    pub scale_down_idle_ticks: u32,
    pub cores_per_worker: u32,
}

/// Configuration block of the meta-scheduler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcmsConfig {
    pub run_id: String,
    pub max_workers: u32,
    pub frames_per_worker_target: u32,
    pub headroom_cores: u32,
    pub walltime_s: u64,
    pub poll_interval_s: u64,
    pub scale_down_idle_ticks: u32,
    pub client_cores: u32,
    pub client_memory_mb: u64,
    pub heartbeat_interval_s: u64,
}

impl Default for RcmsConfig {
    fn default() -> Self {
        RcmsConfig {
            run_id: "r1".to_owned(),
            max_workers: 9,
            frames_per_worker_target: 80,
            headroom_cores: 0,
            walltime_s: 3600,
            poll_interval_s: 15,
            scale_down_idle_ticks: 3,
            client_cores: 8,
            client_memory_mb: 4096,
            heartbeat_interval_s: 10,
        }
    }
}

impl RcmsConfig {
    pub fn policy(&self) -> ScalingPolicy {
        ScalingPolicy {
            max_workers: self.max_workers,
            frames_per_worker_target: self.frames_per_worker_target,
            cluster_headroom_cores: self.headroom_cores,
            scale_down_idle_ticks: self.scale_down_idle_ticks,
            cores_per_worker: self.client_cores,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if naming::valid_run_id(&self.run_id).is_err() {
            return Err(format!(
                "run_id {:?} must be non-empty [A-Za-z0-9_-]",
                self.run_id
            ));
        }
        let positive = [
            ("max_workers", u64::from(self.max_workers)),
            (
                "frames_per_worker_target",
                u64::from(self.frames_per_worker_target),
            ),
            ("walltime_s", self.walltime_s),
            ("poll_interval_s", self.poll_interval_s),
            (
                "scale_down_idle_ticks",
                u64::from(self.scale_down_idle_ticks),
            ),
            ("client_cores", u64::from(self.client_cores)),
            ("client_memory_mb", self.client_memory_mb),
            ("heartbeat_interval_s", self.heartbeat_interval_s),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Name prefix shared by every r-client job of this run.
    pub fn name_prefix(&self) -> String {
        format!("rcms-{}-", self.run_id)
    }
}

/// Desired r-client count: the smallest of the license cap, the demand
/// (`ceil(pending / frames_per_worker_target)`), and the number of workers
/// that fit in the cores not used by compute jobs or held back as headroom.
///
/// `running_clients` is how many of this run's r-client jobs hold cores
/// right now, so their cores count as available to the pool.
pub fn compute_desired(
    pending_tasks: u64,
    running_clients: u64,
    util: &Utilization,
    policy: &ScalingPolicy,
) -> u64 {
    if pending_tasks == 0 {
        return 0;
    }
    let per_worker = u64::from(policy.cores_per_worker.max(1));
    let demand = pending_tasks.div_ceil(u64::from(policy.frames_per_worker_target.max(1)));
    let ours = running_clients * per_worker;
    let compute_busy = util.cores_busy.saturating_sub(ours);
    let room = util
        .cores_total
        .saturating_sub(compute_busy)
        .saturating_sub(u64::from(policy.cluster_headroom_cores));
    let fitting = room / per_worker;
    u64::from(policy.max_workers).min(demand).min(fitting)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum RcmsAction {
    Submit {
        job: JobFile,
    },
    Delete {
        name: String,
        cluster_job_id: ClusterJobId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "anomaly", rename_all = "snake_case")]
pub enum Anomaly {
    /// A live farm worker with no table entry.
    OrphanWorker { worker_id: WorkerId },
    /// An r-client-named cluster job the table does not know.
    UnknownClusterJob {
        name: String,
        cluster_job_id: ClusterJobId,
    },
    /// The worker is still alive at the farm but its cluster job is gone.
    WorkerWithoutJob { name: String },
    /// The cluster job runs but the farm declared its worker dead.
    JobWithoutWorker { name: String },
}

/// What the latest sync saw, kept for the following reconcile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub pending_tasks: u64,
    pub outstanding_tasks: u64,
    pub running_clients: u64,
    pub idle_observations: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncReport {
    pub anomalies: Vec<Anomaly>,
    /// Entries that became Gone in this sync.
    pub gone: Vec<String>,
}

/// Outcome of applying one action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub t: SimTime,
    #[serde(flatten)]
    pub action: RcmsAction,
    pub result: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_job_id: Option<ClusterJobId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepReport {
    pub sync: SyncReport,
    pub desired: u64,
    pub records: Vec<ActionRecord>,
}

#[derive(Debug, Clone)]
pub struct Rcms {
    config: RcmsConfig,
    entries: BTreeMap<u64, RcmsStateEntry>,
    next_seq: u64,
    observation: Option<Observation>,
    busy: BTreeMap<WorkerId, u32>,
}

impl Rcms {
    pub fn new(config: RcmsConfig) -> Self {
        Rcms {
            config,
            entries: BTreeMap::new(),
            next_seq: 0,
            observation: None,
            busy: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &RcmsConfig {
        &self.config
    }

    pub fn entries(&self) -> impl Iterator<Item = &RcmsStateEntry> {
        self.entries.values()
    }

    pub fn entry(&self, name: &str) -> Option<&RcmsStateEntry> {
        self.entries.values().find(|e| e.job_name == name)
    }

    pub fn observation(&self) -> Option<Observation> {
        self.observation
    }

    pub fn live_count(&self) -> u64 {
        self.entries.values().filter(|e| e.phase.is_live()).count() as u64
    }

    /// Entries that may still hold a license: everything not Gone.
    pub fn holding_count(&self) -> u64 {
        self.entries
            .values()
            .filter(|e| e.phase != Phase::Gone)
            .count() as u64
    }

    fn entry_mut(&mut self, name: &str) -> Option<&mut RcmsStateEntry> {
        self.entries.values_mut().find(|e| e.job_name == name)
    }

    /// Applies observed evidence to the table and records the farm's queue
    /// depth for the next reconcile.
    pub fn sync_state(
        &mut self,
        _now: SimTime,
        cluster_view: &[JobRow],
        farm_view: &FarmSummary,
    ) -> SyncReport {
        let prefix = self.config.name_prefix();
        let ours: BTreeMap<&str, &JobRow> = cluster_view
            .iter()
            .filter(|r| r.name.starts_with(&prefix))
            .map(|r| (r.name.as_str(), r))
            .collect();
        let live_workers: BTreeSet<&WorkerId> = farm_view
            .workers
            .iter()
            .filter(|w| w.state != crate::model::WorkerState::Dead)
            .map(|w| &w.worker_id)
            .collect();
        let mut report = SyncReport::default();
        let mut known_names = BTreeSet::new();
        let mut claimed_workers = BTreeSet::new();

        for entry in self.entries.values_mut() {
            if entry.phase == Phase::Gone {
                continue;
            }
            known_names.insert(entry.job_name.clone());
            let row = ours.get(entry.job_name.as_str());
            let worker_live = live_workers.contains(&entry.expected_worker_id);
            if worker_live {
                claimed_workers.insert(entry.expected_worker_id.clone());
            }
            if let Some(row) = row {
                entry.cluster_job_id.get_or_insert(row.cluster_job_id);
                if row.state == ClusterJobState::Running {
                    entry.advance(Phase::Running);
                }
                if worker_live {
                    entry.advance(Phase::WorkerAlive);
                } else if entry.phase == Phase::WorkerAlive && row.state == ClusterJobState::Running
                {
                    report.anomalies.push(Anomaly::JobWithoutWorker {
                        name: entry.job_name.clone(),
                    });
                }
            } else if worker_live {
                if entry.phase != Phase::Deleting {
                    report.anomalies.push(Anomaly::WorkerWithoutJob {
                        name: entry.job_name.clone(),
                    });
                }
            } else if entry.cluster_job_id.is_some() {
                entry.advance(Phase::Gone);
                report.gone.push(entry.job_name.clone());
            }
        }
        for row in ours.values() {
            if !known_names.contains(&row.name) {
                report.anomalies.push(Anomaly::UnknownClusterJob {
                    name: row.name.clone(),
                    cluster_job_id: row.cluster_job_id,
                });
            }
        }
        for w in &live_workers {
            if !claimed_workers.contains(*w) {
                report.anomalies.push(Anomaly::OrphanWorker {
                    worker_id: (*w).clone(),
                });
            }
        }

        self.busy = farm_view
            .workers
            .iter()
            .map(|w| (w.worker_id.clone(), w.busy_tasks))
            .collect();
        let outstanding = farm_view.outstanding_task_count();
        let idle = match self.observation {
            Some(prev) if outstanding == 0 => prev.idle_observations.saturating_add(1),
            None if outstanding == 0 => 1,
            _ => 0,
        };
        self.observation = Some(Observation {
            pending_tasks: farm_view.pending_task_count,
            outstanding_tasks: outstanding,
            running_clients: ours
                .values()
                .filter(|r| r.state == ClusterJobState::Running)
                .count() as u64,
            idle_observations: idle,
        });
        report
    }

    pub fn desired(&self, util: &Utilization) -> u64 {
        let Some(obs) = self.observation else {
            return 0;
        };
        compute_desired(
            obs.pending_tasks,
            obs.running_clients,
            util,
            &self.config.policy(),
        )
    }

    fn job_file(&self, name: &str) -> JobFile {
        JobFile {
            name: name.to_owned(),
            cores: self.config.client_cores,
            memory_mb: self.config.client_memory_mb,
            walltime_s: self.config.walltime_s,
            payload: ClientLaunch {
                worker_id: worker_id_for(name),
                cores: self.config.client_cores,
                heartbeat_interval_s: self.config.heartbeat_interval_s,
            }
            .to_payload(),
        }
    }

    /// Emits the submits or deletes that close the gap between desired and
    /// live r-clients, and records each in the table. Scale-down waits
    /// until the farm has had no outstanding work for
    /// `scale_down_idle_ticks` consecutive observations.
    pub fn reconcile(&mut self, now: SimTime, util: &Utilization) -> Vec<RcmsAction> {
        let Some(obs) = self.observation else {
            return Vec::new();
        };
        let desired = self.desired(util);
        let live = self.live_count();
        let mut actions = Vec::new();
        if desired > live {
            let license_room =
                u64::from(self.config.max_workers).saturating_sub(self.holding_count());
            for _ in 0..(desired - live).min(license_room) {
                let seq = self.next_seq;
                self.next_seq += 1;
                let name = make_job_name(&self.config.run_id, seq);
                actions.push(RcmsAction::Submit {
                    job: self.job_file(&name),
                });
                self.entries.insert(
                    seq,
                    RcmsStateEntry {
                        expected_worker_id: worker_id_for(&name),
                        job_name: name,
                        cluster_job_id: None,
                        phase: Phase::Submitted,
                        submitted_at: now,
                    },
                );
            }
        } else if desired < live && obs.idle_observations >= self.config.scale_down_idle_ticks {
            for seq in self.scale_down_order() {
                if actions.len() as u64 == live - desired {
                    break;
                }
                let entry = self.entries.get_mut(&seq).expect("ordered from table");
                let Some(id) = entry.cluster_job_id else {
                    continue;
                };
                entry.advance(Phase::Deleting);
                actions.push(RcmsAction::Delete {
                    name: entry.job_name.clone(),
                    cluster_job_id: id,
                });
            }
        }
        actions
    }

    /// Live entries in deletion preference: not yet running, then workers
    /// with no busy slots, then oldest first.
    fn scale_down_order(&self) -> Vec<u64> {
        let mut order: Vec<(u8, SimTime, u64)> = self
            .entries
            .iter()
            .filter(|(_, e)| e.phase.is_live())
            .map(|(&seq, e)| {
                let class = match e.phase {
                    Phase::Submitted => 0,
                    Phase::WorkerAlive if self.busy_of(&e.expected_worker_id) == 0 => 1,
                    _ => 2,
                };
                (class, e.submitted_at, seq)
            })
            .collect();
        order.sort_unstable();
        order.into_iter().map(|(_, _, seq)| seq).collect()
    }

    fn busy_of(&self, worker: &WorkerId) -> u32 {
        self.busy.get(worker).copied().unwrap_or(0)
    }

    /// Submit acknowledged by the cluster.
    pub fn ack_submit(&mut self, name: &str, id: ClusterJobId) {
        if let Some(e) = self.entry_mut(name) {
            e.cluster_job_id = Some(id);
        }
    }

    /// Submit rejected: the entry is dropped.
    pub fn submit_failed(&mut self, name: &str) {
        self.entries.retain(|_, e| e.job_name != name);
    }

    /// One full poll: sync, reconcile, apply.
    pub fn step(
        &mut self,
        now: SimTime,
        cluster: &mut impl ClusterBackend,
        farm: &impl FarmBackend,
    ) -> StepReport {
        let cluster_view = cluster.query_jobs_by_name(&self.config.name_prefix());
        let farm_view = farm.query_jobs();
        let sync = self.sync_state(now, &cluster_view, &farm_view);
        let util = cluster.utilization();
        let desired = self.desired(&util);
        let actions = self.reconcile(now, &util);
        let records = actions
            .into_iter()
            .map(|action| self.apply(now, action, cluster))
            .collect();
        StepReport {
            sync,
            desired,
            records,
        }
    }

    fn apply(
        &mut self,
        now: SimTime,
        action: RcmsAction,
        cluster: &mut impl ClusterBackend,
    ) -> ActionRecord {
        let (result, cluster_job_id) = match &action {
            RcmsAction::Submit { job } => match cluster.submit_job(job.clone(), now) {
                Ok(id) => {
                    self.ack_submit(&job.name, id);
                    ("ok".to_owned(), Some(id))
                }
                Err(e) => {
                    self.submit_failed(&job.name);
                    (format!("err {}", e.kind()), None)
                }
            },
            RcmsAction::Delete { cluster_job_id, .. } => {
                match cluster.delete_job(*cluster_job_id, now) {
                    Ok(_) => ("ok".to_owned(), None),
                    Err(e) => (format!("err {}", e.kind()), None),
                }
            }
        };
        ActionRecord {
            t: now,
            action,
            result,
            cluster_job_id,
        }
    }
}

//! The event loop that drives supervisor, cluster, meta-scheduler and
//! clients through one scenario.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::Serialize;

use super::engine::{EventKind, EventQueue, SimEvent, Target};
use super::metrics::{FrameRecord, Metrics, NodeSummary, TimelinePoint};
use super::scenario::Scenario;
use super::SimError;
use crate::cluster::ClusterManager;
use crate::model::{ClusterJobId, NodeId, TaskId, TaskState, WorkerId};
use crate::rclient::{ClientAction, ClientLaunch, RClient, RenderTimeModel};
use crate::rcms::{ActionRecord, Anomaly, Rcms, RcmsAction};
use crate::supervisor::{Supervisor, TaskOutcome};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// Every render job completed.
    Completed,
    /// Every render job is terminal and at least one failed.
    JobsFailed,
    /// No node can hold an r-client, or the headroom leaves too few cores
    /// for one, so the render work can never start.
    CapacityImpossible,
    /// An idle-test scenario reached its horizon.
    IdleHorizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KillReason {
    Walltime,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KillEvent {
    pub t: SimTime,
    pub cluster_job_id: ClusterJobId,
    pub worker_id: WorkerId,
    pub node_id: NodeId,
    pub reason: KillReason,
    pub in_flight: Vec<TaskId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnomalyRecord {
    pub t: SimTime,
    pub anomaly: Anomaly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RescheduleRecord {
    pub t: SimTime,
    pub task_id: TaskId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub termination: Termination,
    pub end_time: SimTime,
    pub events: u64,
    /// Hash over every processed `(time, seq, kind, target)`.
    pub trace_digest: u64,
    pub metrics: Metrics,
    pub actions: Vec<ActionRecord>,
    pub anomalies: Vec<AnomalyRecord>,
    pub kills: Vec<KillEvent>,
    pub reschedules: Vec<RescheduleRecord>,
    /// Broken invariants noticed while running. Empty on a healthy run.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Audit supervisor and cluster state after every event.
    pub audit: bool,
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunReport, SimError> {
    run_scenario_with(scenario, RunOptions::default())
}

pub fn run_scenario_with(scenario: &Scenario, options: RunOptions) -> Result<RunReport, SimError> {
    scenario.validate()?;
    let mut world = World::new(scenario, options);
    let pool_cores = (scenario.nodes.count as u64 * u64::from(scenario.nodes.cores))
        .saturating_sub(u64::from(scenario.rcms.headroom_cores));
    let client_cores = u64::from(scenario.rcms.client_cores);
    if !scenario.render_jobs.is_empty()
        && (client_cores > u64::from(scenario.nodes.cores) || client_cores > pool_cores)
    {
        return Ok(world.finish(Termination::CapacityImpossible));
    }
    world.seed_events();
    let horizon = SimTime::from_secs(scenario.horizon_s);
    loop {
        match world.queue.peek_time() {
            Some(t) if t <= horizon => {}
            _ if scenario.idle_test => return Ok(world.finish(Termination::IdleHorizon)),
            _ => {
                let partial = world.finish(Termination::Completed);
                return Err(SimError::HorizonExceeded(Box::new(partial)));
            }
        }
        let event = world.queue.pop().expect("peeked");
        world.handle(&event);
        world.after_event();
        if let Some(done) = world.done() {
            return Ok(world.finish(done));
        }
    }
}

struct World<'a> {
    sc: &'a Scenario,
    options: RunOptions,
    queue: EventQueue,
    supervisor: Supervisor,
    cluster: ClusterManager,
    rcms: Rcms,
    model: RenderTimeModel,
    clients: BTreeMap<ClusterJobId, RClient>,
    client_started: BTreeMap<ClusterJobId, SimTime>,
    /// Pending wake-up per client; a tick at any other time is stale.
    wake: BTreeMap<ClusterJobId, SimTime>,
    compute: BTreeMap<ClusterJobId, SimDuration>,
    arrivals_left: usize,
    hasher: DefaultHasher,
    events: u64,
    metrics: Metrics,
    actions: Vec<ActionRecord>,
    anomalies: Vec<AnomalyRecord>,
    kills: Vec<KillEvent>,
    reschedules: Vec<RescheduleRecord>,
    violations: Vec<String>,
}

impl<'a> World<'a> {
    fn new(sc: &'a Scenario, options: RunOptions) -> Self {
        World {
            sc,
            options,
            queue: EventQueue::new(),
            supervisor: Supervisor::new(sc.farm.supervisor_config()),
            cluster: ClusterManager::uniform(sc.nodes.count, sc.nodes.cores),
            rcms: Rcms::new(sc.rcms.clone()),
            model: sc.render_model.to_model(sc.seed),
            clients: BTreeMap::new(),
            client_started: BTreeMap::new(),
            wake: BTreeMap::new(),
            compute: BTreeMap::new(),
            arrivals_left: sc.render_jobs.len() + sc.compute_jobs.len(),
            hasher: DefaultHasher::new(),
            events: 0,
            metrics: Metrics {
                node_count: sc.nodes.count,
                cores_per_node: sc.nodes.cores,
                ..Metrics::default()
            },
            actions: Vec::new(),
            anomalies: Vec::new(),
            kills: Vec::new(),
            reschedules: Vec::new(),
            violations: Vec::new(),
        }
    }

    /// Arrivals go first so a workload at t=0 is visible to the first poll.
    fn seed_events(&mut self) {
        for (i, job) in self.sc.render_jobs.iter().enumerate() {
            self.queue.schedule(
                job.submit_time,
                EventKind::WorkloadArrival,
                Target::RenderJob(i),
            );
        }
        for (i, job) in self.sc.compute_jobs.iter().enumerate() {
            self.queue.schedule(
                job.submit_time,
                EventKind::WorkloadArrival,
                Target::ComputeJob(i),
            );
        }
        self.queue
            .schedule(SimTime::ZERO, EventKind::RcmsPoll, Target::Rcms);
        self.queue.schedule(
            SimTime::ZERO,
            EventKind::SupervisorSweep,
            Target::Supervisor,
        );
        self.push_timeline(SimTime::ZERO);
    }

    fn handle(&mut self, event: &SimEvent) {
        self.events += 1;
        (
            event.time,
            event.seq,
            event.kind as u8,
            event.target.to_string(),
        )
            .hash(&mut self.hasher);
        let now = event.time;
        match (event.kind, event.target) {
            (EventKind::WorkloadArrival, Target::RenderJob(i)) => self.render_arrival(i, now),
            (EventKind::WorkloadArrival, Target::ComputeJob(i)) => self.compute_arrival(i, now),
            (EventKind::RcmsPoll, _) => self.poll(now),
            (EventKind::SupervisorSweep, _) => self.sweep(now),
            (EventKind::ClusterSchedule, _) => self.schedule(now),
            (EventKind::WalltimeCheck, _) => {
                for id in self.cluster.enforce_walltime(now) {
                    self.kill_payload(id, now, KillReason::Walltime);
                    if self
                        .cluster
                        .job(id)
                        .is_some_and(|j| j.job.name.starts_with(&self.prefix()))
                    {
                        self.metrics.walltime_kills += 1;
                    }
                }
                self.request_schedule(now);
            }
            (EventKind::JobExit, Target::Job(id)) => {
                if self.compute.remove(&id).is_some() && self.cluster.finish_job(id, now).is_ok() {
                    self.request_schedule(now);
                }
            }
            (EventKind::ClientTick, Target::Job(id)) => self.client_tick(id, now),
            (kind, target) => self
                .violations
                .push(format!("{now}: {kind:?} has no handler for {target}")),
        }
    }

    fn prefix(&self) -> String {
        self.sc.rcms.name_prefix()
    }

    fn render_arrival(&mut self, i: usize, now: SimTime) {
        self.arrivals_left -= 1;
        let job = self.sc.render_jobs[i].clone().submitted_at(now);
        let frames = job.total_frames();
        match self.supervisor.submit_render_job(job) {
            Ok(_) => {
                self.metrics.total_frames += frames;
                self.metrics.first_submit.get_or_insert(now);
            }
            Err(e) => self
                .violations
                .push(format!("{now}: render arrival rejected: {e}")),
        }
    }

    fn compute_arrival(&mut self, i: usize, now: SimTime) {
        self.arrivals_left -= 1;
        let job = &self.sc.compute_jobs[i];
        match self.cluster.submit_job(job.job_file(), now) {
            Ok(id) => {
                self.compute
                    .insert(id, SimDuration::from_secs(job.duration_s));
                self.request_schedule(now);
            }
            Err(e) => self
                .violations
                .push(format!("{now}: compute arrival rejected: {e}")),
        }
    }

    fn request_schedule(&mut self, now: SimTime) {
        self.queue
            .schedule(now, EventKind::ClusterSchedule, Target::Cluster);
    }

    fn schedule(&mut self, now: SimTime) {
        for id in self.cluster.schedule_step(now) {
            let job = self.cluster.job(id).expect("just started").clone();
            self.queue.schedule(
                now + SimDuration::from_secs(job.job.walltime_s),
                EventKind::WalltimeCheck,
                Target::Cluster,
            );
            let node = job.node_id.clone().expect("running job has a node");
            if let Some(duration) = self.compute.get(&id) {
                self.queue
                    .schedule(now + *duration, EventKind::JobExit, Target::Job(id));
                continue;
            }
            let Some(launch) = ClientLaunch::parse(&job.job.payload) else {
                continue;
            };
            match RClient::start(&mut self.supervisor, &launch, node, now) {
                Ok(client) => {
                    self.clients.insert(id, client);
                    self.client_started.insert(id, now);
                    self.wake.insert(id, now);
                    self.queue
                        .schedule(now, EventKind::ClientTick, Target::Job(id));
                }
                Err(e) => self.violations.push(format!(
                    "{now}: client {} failed to register: {e}",
                    launch.worker_id
                )),
            }
        }
    }

    fn kill_payload(&mut self, id: ClusterJobId, now: SimTime, reason: KillReason) {
        self.compute.remove(&id);
        self.wake.remove(&id);
        if let Some(client) = self.clients.get_mut(&id) {
            if client.is_alive() {
                let rec = client.on_kill(now);
                self.kills.push(KillEvent {
                    t: now,
                    cluster_job_id: id,
                    worker_id: rec.worker_id,
                    node_id: rec.node_id,
                    reason,
                    in_flight: rec.in_flight,
                });
            }
        }
    }

    fn poll(&mut self, now: SimTime) {
        let report = self.rcms.step(now, &mut self.cluster, &self.supervisor);
        for anomaly in report.sync.anomalies {
            self.anomalies.push(AnomalyRecord { t: now, anomaly });
        }
        let mut changed = false;
        for rec in report.records {
            changed = true;
            match &rec.action {
                RcmsAction::Submit { .. } => {
                    if rec.result == "ok" {
                        self.metrics.rcms_submits += 1;
                    }
                }
                RcmsAction::Delete { cluster_job_id, .. } => {
                    if rec.result == "ok" {
                        self.metrics.rcms_deletes += 1;
                        self.kill_payload(*cluster_job_id, now, KillReason::Deleted);
                    }
                }
            }
            self.actions.push(rec);
        }
        if changed {
            self.request_schedule(now);
        }
        self.queue.schedule(
            now + SimDuration::from_secs(self.sc.rcms.poll_interval_s),
            EventKind::RcmsPoll,
            Target::Rcms,
        );
    }

    fn sweep(&mut self, now: SimTime) {
        for task_id in self.supervisor.sweep_failures(now) {
            self.metrics.rescheduled_tasks += 1;
            self.reschedules.push(RescheduleRecord { t: now, task_id });
        }
        self.queue.schedule(
            now + SimDuration::from_secs(self.sc.farm.sweep_interval_s),
            EventKind::SupervisorSweep,
            Target::Supervisor,
        );
    }

    fn client_tick(&mut self, id: ClusterJobId, now: SimTime) {
        if self.wake.get(&id) != Some(&now) {
            return;
        }
        self.wake.remove(&id);
        if self.client_started.get(&id).is_some_and(|&t| now < t) {
            self.violations
                .push(format!("{now}: client {id} ticked before it started"));
        }
        let Some(client) = self.clients.get_mut(&id) else {
            return;
        };
        let actions = client.tick(now, &mut self.supervisor, &self.model);
        let worker = client.worker_id().clone();
        let node = client.node_id().clone();
        let next = client.next_wakeup();
        for action in actions {
            self.record_client_action(action, &worker, &node, now);
        }
        if let Some(at) = next {
            self.wake.insert(id, at);
            self.queue
                .schedule(at, EventKind::ClientTick, Target::Job(id));
        }
    }

    fn record_client_action(
        &mut self,
        action: ClientAction,
        worker: &WorkerId,
        node: &NodeId,
        now: SimTime,
    ) {
        match action {
            ClientAction::Reported {
                task_id,
                frames,
                outcome,
                started,
                result,
                ..
            } => match (outcome, result) {
                (TaskOutcome::Complete, Ok(ack)) if ack.task_state == TaskState::Complete => {
                    let attempt = self.supervisor.task(&task_id).map_or(0, |t| t.attempts);
                    let mut t = started;
                    for frame in frames.frames() {
                        let end = t + self.model.frame_duration(frame);
                        self.metrics.frames.push(FrameRecord {
                            job_id: task_id.job.clone(),
                            frame,
                            task_id: task_id.clone(),
                            attempt,
                            worker_id: worker.clone(),
                            node_id: node.clone(),
                            start_ms: t.as_millis(),
                            end_ms: end.as_millis(),
                        });
                        t = end;
                    }
                    self.metrics.frames_completed += frames.len();
                    self.metrics.last_frame_end = Some(now);
                }
                (TaskOutcome::Failed, Ok(_)) => self.metrics.failed_attempts += 1,
                (_, Err(e)) => self.violations.push(format!(
                    "{now}: report of {task_id} by {worker} refused: {e}"
                )),
                (_, Ok(ack)) => self.violations.push(format!(
                    "{now}: complete report of {task_id} left it {:?}",
                    ack.task_state
                )),
            },
            ClientAction::Heartbeat { result: Err(e) } => self
                .violations
                .push(format!("{now}: heartbeat of {worker} refused: {e}")),
            _ => {}
        }
    }

    fn client_job_count(&self) -> u64 {
        self.cluster.query_jobs_by_name(&self.prefix()).len() as u64
    }

    fn push_timeline(&mut self, now: SimTime) {
        let point = TimelinePoint {
            t_ms: now.as_millis(),
            live_workers: self.supervisor.live_worker_count(),
            client_jobs: self.client_job_count(),
        };
        self.metrics.peak_live_workers = self.metrics.peak_live_workers.max(point.live_workers);
        self.metrics.peak_client_jobs = self.metrics.peak_client_jobs.max(point.client_jobs);
        match self.metrics.timeline.last_mut() {
            Some(last)
                if last.live_workers == point.live_workers
                    && last.client_jobs == point.client_jobs => {}
            Some(last) if last.t_ms == point.t_ms => *last = point,
            _ => self.metrics.timeline.push(point),
        }
    }

    fn after_event(&mut self) {
        let now = self.queue.now();
        self.push_timeline(now);
        let live = self.supervisor.live_worker_count();
        if live > u64::from(self.sc.rcms.max_workers) {
            self.violations.push(format!(
                "{now}: {live} live workers exceed the cap of {}",
                self.sc.rcms.max_workers
            ));
        }
        if self.options.audit {
            for p in self.supervisor.audit() {
                self.violations.push(format!("{now}: supervisor: {p}"));
            }
            for p in self.cluster.audit() {
                self.violations.push(format!("{now}: cluster: {p}"));
            }
        }
    }

    fn done(&self) -> Option<Termination> {
        if self.sc.idle_test || self.arrivals_left > 0 {
            return None;
        }
        if self.rcms.holding_count() > 0 || self.cluster.jobs().any(|j| j.state.is_active()) {
            return None;
        }
        let mut failed = false;
        for job in self.supervisor.jobs() {
            if !job.state.is_terminal() {
                return None;
            }
            failed |= job.state == crate::model::JobState::Failed;
        }
        Some(if failed {
            Termination::JobsFailed
        } else {
            Termination::Completed
        })
    }

    fn finish(mut self, termination: Termination) -> RunReport {
        let m = &mut self.metrics;
        let mut nodes: BTreeMap<NodeId, NodeSummary> = self
            .cluster
            .nodes()
            .iter()
            .map(|n| {
                let summary = NodeSummary {
                    node_id: n.node_id.clone(),
                    frames: 0,
                    busy_ms: 0,
                };
                (n.node_id.clone(), summary)
            })
            .collect();
        for f in &m.frames {
            let n = nodes
                .get_mut(&f.node_id)
                .expect("frames run on known nodes");
            n.frames += 1;
            n.busy_ms += f.duration_ms();
        }
        m.nodes = nodes.into_values().collect();
        m.frames_failed = self
            .supervisor
            .tasks()
            .filter(|t| t.state == TaskState::Failed)
            .map(|t| t.frames.len())
            .sum();
        if let (Some(first), Some(last)) = (m.first_submit, m.last_frame_end) {
            m.makespan_s = last.since(first).as_secs_f64();
        }
        if !m.frames.is_empty() {
            let frames = m.frames.len() as f64;
            let active_cores = m.peak_live_workers * u64::from(self.sc.rcms.client_cores);
            m.avg_frame_time_s = m.makespan_s * active_cores as f64 / frames;
            m.wall_time_per_frame_s = m.makespan_s / frames;
            m.mean_frame_time_s =
                m.frames.iter().map(|f| f.duration_ms()).sum::<u64>() as f64 / frames / 1000.0;
        }
        RunReport {
            scenario: self.sc.name.clone(),
            seed: self.sc.seed,
            termination,
            end_time: self.queue.now(),
            events: self.events,
            trace_digest: self.hasher.finish(),
            metrics: self.metrics,
            actions: self.actions,
            anomalies: self.anomalies,
            kills: self.kills,
            reschedules: self.reschedules,
            violations: self.violations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::ComputeJob;

    #[test]
    fn replica_balances_exactly() {
        let r = run_scenario_with(&Scenario::replica(), RunOptions { audit: true }).unwrap();
        assert_eq!(r.termination, Termination::Completed);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert_eq!(r.metrics.frames_completed, 720);
        assert!(r.metrics.nodes.iter().all(|n| n.frames == 80));
        assert_eq!(r.metrics.makespan_s, 10.0 * 201.76);
        assert_eq!(r.metrics.peak_live_workers, 9);
    }

    #[test]
    fn single_node_matches_closed_form() {
        let r = run_scenario(&Scenario::replica().with_nodes(1)).unwrap();
        let oracle = (720f64 / 8.0).ceil() * 201.76;
        assert!(
            (r.metrics.makespan_s - oracle).abs() < 1e-6,
            "{}",
            r.metrics.makespan_s
        );
    }

    #[test]
    fn idle_run_submits_nothing() {
        let mut sc = Scenario::replica();
        sc.render_jobs.clear();
        sc.idle_test = true;
        sc.horizon_s = 3600;
        let r = run_scenario(&sc).unwrap();
        assert_eq!(r.termination, Termination::IdleHorizon);
        assert!(r.actions.is_empty());
        assert_eq!(r.metrics.rcms_submits, 0);
    }

    #[test]
    fn oversized_clients_are_reported_not_spun() {
        let mut sc = Scenario::replica();
        sc.rcms.client_cores = 16;
        let r = run_scenario(&sc).unwrap();
        assert_eq!(r.termination, Termination::CapacityImpossible);
        assert_eq!(r.events, 0);
    }

    #[test]
    fn headroom_that_starves_the_pool_is_reported() {
        let mut sc = Scenario::replica().with_nodes(1);
        sc.rcms.headroom_cores = 4;
        let r = run_scenario(&sc).unwrap();
        assert_eq!(r.termination, Termination::CapacityImpossible);
    }

    #[test]
    fn horizon_carries_partial_metrics() {
        let mut sc = Scenario::replica();
        sc.horizon_s = 1000;
        match run_scenario(&sc) {
            Err(SimError::HorizonExceeded(partial)) => {
                assert!(partial.metrics.frames_completed > 0);
                assert!(partial.metrics.frames_completed < 720);
            }
            other => panic!("expected horizon error, got {other:?}"),
        }
    }

    #[test]
    fn compute_jobs_finish_and_free_cores() {
        let mut sc = Scenario::replica().with_nodes(2);
        sc.compute_jobs.push(ComputeJob {
            name: "cfd".into(),
            cores: 8,
            memory_mb: 1024,
            walltime_s: 600,
            duration_s: 300,
            submit_time: SimTime::ZERO,
        });
        let r = run_scenario_with(&sc, RunOptions { audit: true }).unwrap();
        assert_eq!(r.termination, Termination::Completed);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert_eq!(r.metrics.frames_completed, 720);
        assert_eq!(r.metrics.walltime_kills, 0);
    }

    #[test]
    fn same_seed_same_trace() {
        let sc = Scenario::replica().with_jitter(0.25).with_seed(7);
        let a = run_scenario(&sc).unwrap();
        let b = run_scenario(&sc).unwrap();
        assert_eq!(a, b);
    }
}

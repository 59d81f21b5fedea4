//! The render-farm client that runs as a cluster job's payload.
//!
//! Once its cluster job starts, an [`RClient`] registers with the supervisor
//! as a worker, heartbeats, and keeps one frame task per core. Rendering is
//! replaced by a [`RenderTimeModel`]. A kill (walltime or delete) silences
//! it without reporting in-flight work; the supervisor recovers that work
//! through its heartbeat timeout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{FrameRange, FrameTask, NodeId, TaskId, WorkerId};
use crate::supervisor::{ReportAck, Supervisor, SupervisorError, TaskOutcome};
use crate::time::{SimDuration, SimTime};

/// Per-core render time for one frame, in seconds, on the calibration node.
/// An 8-core node at this rate finishes a frame every 25.22 s on average.
pub const CALIBRATED_BASE_S: f64 = 25.22 * 8.0;

/// Frame render-time model: `base_s` scaled by a uniform factor in
/// `[1 - jitter, 1 + jitter]`, drawn from a generator seeded by the scenario
/// seed and frame number only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderTimeModel {
    pub base_s: f64,
    pub jitter: f64,
    pub seed: u64,
    /// Probability that an attempt ends in a reported failure.
    pub failure_rate: f64,
}

impl Default for RenderTimeModel {
    fn default() -> Self {
        RenderTimeModel {
            base_s: CALIBRATED_BASE_S,
            jitter: 0.25,
            seed: 0,
            failure_rate: 0.0,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl RenderTimeModel {
    pub fn new(base_s: f64, jitter: f64, seed: u64) -> Self {
        RenderTimeModel {
            base_s,
            jitter,
            seed,
            failure_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.base_s.is_finite() && self.base_s > 0.0) {
            return Err(format!("base_s must be positive, got {}", self.base_s));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(format!("jitter must lie in [0, 1), got {}", self.jitter));
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(format!(
                "failure_rate must lie in [0, 1], got {}",
                self.failure_rate
            ));
        }
        Ok(())
    }

    fn rng(&self, salt: u64, frame: i64) -> ChaCha8Rng {
        let mixed = splitmix64(self.seed ^ splitmix64(salt ^ splitmix64(frame as u64)));
        ChaCha8Rng::seed_from_u64(mixed)
    }

    /// Single-core render time of `frame`.
    pub fn frame_duration(&self, frame: i64) -> SimDuration {
        let base_ms = self.base_s * 1000.0;
        let lo = (base_ms * (1.0 - self.jitter)).ceil().max(1.0);
        let hi = (base_ms * (1.0 + self.jitter)).floor().max(lo);
        if self.jitter == 0.0 {
            return SimDuration(base_ms.round().max(1.0) as u64);
        }
        let u: f64 = self.rng(0, frame).gen();
        let ms = (base_ms * (1.0 + self.jitter * (2.0 * u - 1.0))).round();
        SimDuration(ms.clamp(lo, hi) as u64)
    }

    /// Frames of a task render back to back on one core.
    pub fn task_duration(&self, frames: &FrameRange) -> SimDuration {
        frames
            .frames()
            .map(|f| self.frame_duration(f))
            .fold(SimDuration::ZERO, |a, b| a + b)
    }

    /// Whether the `attempt`-th render of the task starting at `frame` fails.
    pub fn attempt_fails(&self, frame: i64, attempt: u32) -> bool {
        if self.failure_rate <= 0.0 {
            return false;
        }
        let roll: f64 = self.rng(0x00fa_11ed ^ u64::from(attempt), frame).gen();
        roll < self.failure_rate
    }
}

/// The supervisor operations a client calls. [`Supervisor`] implements it
/// directly; a live deployment would put a transport behind it.
pub trait FarmLink {
    fn register_worker(
        &mut self,
        worker: WorkerId,
        node: NodeId,
        cores: u32,
        now: SimTime,
    ) -> Result<(), SupervisorError>;
    fn heartbeat(&mut self, worker: &WorkerId, now: SimTime) -> Result<(), SupervisorError>;
    fn request_task(
        &mut self,
        worker: &WorkerId,
        now: SimTime,
    ) -> Result<Option<FrameTask>, SupervisorError>;
    fn begin_task(
        &mut self,
        worker: &WorkerId,
        task: &TaskId,
        now: SimTime,
    ) -> Result<(), SupervisorError>;
    fn report_task_result(
        &mut self,
        worker: &WorkerId,
        task: &TaskId,
        outcome: TaskOutcome,
        now: SimTime,
    ) -> Result<ReportAck, SupervisorError>;
}

impl FarmLink for Supervisor {
    fn register_worker(
        &mut self,
        worker: WorkerId,
        node: NodeId,
        cores: u32,
        now: SimTime,
    ) -> Result<(), SupervisorError> {
        Supervisor::register_worker(self, worker, node, cores, now)
    }

    fn heartbeat(&mut self, worker: &WorkerId, now: SimTime) -> Result<(), SupervisorError> {
        Supervisor::heartbeat(self, worker, now)
    }

    fn request_task(
        &mut self,
        worker: &WorkerId,
        now: SimTime,
    ) -> Result<Option<FrameTask>, SupervisorError> {
        Supervisor::request_task(self, worker, now)
    }

    fn begin_task(
        &mut self,
        worker: &WorkerId,
        task: &TaskId,
        now: SimTime,
    ) -> Result<(), SupervisorError> {
        Supervisor::begin_task(self, worker, task, now)
    }

    fn report_task_result(
        &mut self,
        worker: &WorkerId,
        task: &TaskId,
        outcome: TaskOutcome,
        now: SimTime,
    ) -> Result<ReportAck, SupervisorError> {
        Supervisor::report_task_result(self, worker, task, outcome, now)
    }
}

/// Launch parameters carried in a cluster job file's payload string:
/// `rclient worker=<id> cores=<n> heartbeat_s=<n>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientLaunch {
    pub worker_id: WorkerId,
    pub cores: u32,
    pub heartbeat_interval_s: u64,
}

impl ClientLaunch {
    pub fn to_payload(&self) -> String {
        format!(
            "rclient worker={} cores={} heartbeat_s={}",
            self.worker_id, self.cores, self.heartbeat_interval_s
        )
    }

    pub fn parse(payload: &str) -> Option<ClientLaunch> {
        let mut words = payload.split_whitespace();
        if words.next()? != "rclient" {
            return None;
        }
        let (mut worker, mut cores, mut hb) = (None, None, None);
        for w in words {
            match w.split_once('=')? {
                ("worker", v) => worker = Some(WorkerId::new(v)),
                ("cores", v) => cores = v.parse().ok(),
                ("heartbeat_s", v) => hb = v.parse().ok(),
                _ => return None,
            }
        }
        Some(ClientLaunch {
            worker_id: worker?,
            cores: cores.filter(|&c| c > 0)?,
            heartbeat_interval_s: hb.filter(|&h| h > 0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub task_id: TaskId,
    pub frames: FrameRange,
    pub attempt: u32,
    pub started: SimTime,
    pub finish: SimTime,
}

/// What a client did during one tick, in the order it did it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientAction {
    Heartbeat {
        result: Result<(), SupervisorError>,
    },
    Acquired {
        task_id: TaskId,
        frames: FrameRange,
        slot: usize,
        finish: SimTime,
    },
    QueueEmpty,
    Reported {
        task_id: TaskId,
        frames: FrameRange,
        outcome: TaskOutcome,
        started: SimTime,
        finished: SimTime,
        result: Result<ReportAck, SupervisorError>,
    },
    RequestRejected(SupervisorError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KillRecord {
    pub worker_id: WorkerId,
    pub node_id: NodeId,
    pub time: SimTime,
    /// Tasks that were rendering when the kill landed; never reported.
    pub in_flight: Vec<TaskId>,
}

#[derive(Debug, Clone)]
pub struct RClient {
    worker_id: WorkerId,
    node_id: NodeId,
    slots: Vec<Option<Slot>>,
    heartbeat_interval: SimDuration,
    next_heartbeat: SimTime,
    alive: bool,
}

impl RClient {
    /// Registers with the farm. All slots start empty; the first heartbeat
    /// is due one interval after registration.
    pub fn start(
        farm: &mut impl FarmLink,
        launch: &ClientLaunch,
        node_id: NodeId,
        now: SimTime,
    ) -> Result<RClient, SupervisorError> {
        farm.register_worker(launch.worker_id.clone(), node_id.clone(), launch.cores, now)?;
        let interval = SimDuration::from_secs(launch.heartbeat_interval_s);
        Ok(RClient {
            worker_id: launch.worker_id.clone(),
            node_id,
            slots: vec![None; launch.cores as usize],
            heartbeat_interval: interval,
            next_heartbeat: now + interval,
            alive: true,
        })
    }

    pub fn worker_id(&self) -> &WorkerId {
        &self.worker_id
    }

    pub fn node_id(&self) -> &NodeId {
        &self.node_id
    }

    pub fn cores(&self) -> usize {
        self.slots.len()
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    pub fn busy_slots(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn slots(&self) -> &[Option<Slot>] {
        &self.slots
    }

    /// Next virtual time at which [`RClient::tick`] has something to do.
    pub fn next_wakeup(&self) -> Option<SimTime> {
        if !self.alive {
            return None;
        }
        let finish = self.slots.iter().flatten().map(|s| s.finish).min();
        Some(finish.map_or(self.next_heartbeat, |f| f.min(self.next_heartbeat)))
    }

    /// Heartbeats if due, reports every slot finished by `now`, then fills
    /// free slots from the queue until it runs dry.
    pub fn tick(
        &mut self,
        now: SimTime,
        farm: &mut impl FarmLink,
        model: &RenderTimeModel,
    ) -> Vec<ClientAction> {
        let mut actions = Vec::new();
        if !self.alive {
            return actions;
        }
        if now >= self.next_heartbeat {
            let result = farm.heartbeat(&self.worker_id, now);
            while self.next_heartbeat <= now {
                self.next_heartbeat = self.next_heartbeat + self.heartbeat_interval;
            }
            actions.push(ClientAction::Heartbeat { result });
        }
        for slot in &mut self.slots {
            if slot.as_ref().is_some_and(|s| s.finish <= now) {
                let done = slot.take().expect("checked");
                let outcome = if model.attempt_fails(done.frames.start(), done.attempt) {
                    TaskOutcome::Failed
                } else {
                    TaskOutcome::Complete
                };
                let result = farm.report_task_result(&self.worker_id, &done.task_id, outcome, now);
                actions.push(ClientAction::Reported {
                    task_id: done.task_id,
                    frames: done.frames,
                    outcome,
                    started: done.started,
                    finished: now,
                    result,
                });
            }
        }
        for (index, slot) in self.slots.iter_mut().enumerate() {
            if slot.is_some() {
                continue;
            }
            match farm.request_task(&self.worker_id, now) {
                Ok(Some(task)) => {
                    // The task is ours until reported; a failed begin only
                    // means the ack was lost, which the report still covers.
                    let _ = farm.begin_task(&self.worker_id, &task.task_id, now);
                    let finish = now + model.task_duration(&task.frames);
                    actions.push(ClientAction::Acquired {
                        task_id: task.task_id.clone(),
                        frames: task.frames,
                        slot: index,
                        finish,
                    });
                    *slot = Some(Slot {
                        task_id: task.task_id,
                        frames: task.frames,
                        attempt: task.attempts,
                        started: now,
                        finish,
                    });
                }
                Ok(None) => {
                    actions.push(ClientAction::QueueEmpty);
                    break;
                }
                Err(e) => {
                    actions.push(ClientAction::RequestRejected(e));
                    break;
                }
            }
        }
        actions
    }

    /// The cluster killed the job. Nothing is reported.
    pub fn on_kill(&mut self, now: SimTime) -> KillRecord {
        self.alive = false;
        let in_flight = self
            .slots
            .iter_mut()
            .filter_map(Option::take)
            .map(|s| s.task_id)
            .collect();
        KillRecord {
            worker_id: self.worker_id.clone(),
            node_id: self.node_id.clone(),
            time: now,
            in_flight,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RenderJob, TaskState};

    fn launch(id: &str, cores: u32) -> ClientLaunch {
        ClientLaunch {
            worker_id: WorkerId::new(id),
            cores,
            heartbeat_interval_s: 10,
        }
    }

    fn farm_with(frames: i64) -> Supervisor {
        let mut s = Supervisor::default();
        s.submit_render_job(
            RenderJob::new("anim", "scene.mb", FrameRange::new(1, frames).unwrap(), 1).unwrap(),
        )
        .unwrap();
        s
    }

    #[test]
    fn model_stays_in_band_and_replays() {
        let m = RenderTimeModel::new(100.0, 0.25, 7);
        for f in -50..500 {
            let d = m.frame_duration(f).as_millis();
            assert!((75_000..=125_000).contains(&d), "frame {f}: {d}");
            assert_eq!(m.frame_duration(f).as_millis(), d);
        }
        let other = RenderTimeModel::new(100.0, 0.25, 8);
        assert!((0..50).any(|f| other.frame_duration(f) != m.frame_duration(f)));
        assert_eq!(
            RenderTimeModel::new(CALIBRATED_BASE_S, 0.0, 1)
                .frame_duration(3)
                .as_millis(),
            201_760
        );
    }

    #[test]
    fn payload_round_trip() {
        let l = launch("rcms-r-3", 8);
        assert_eq!(ClientLaunch::parse(&l.to_payload()), Some(l));
        assert_eq!(ClientLaunch::parse("./solver --mesh wing"), None);
        assert_eq!(
            ClientLaunch::parse("rclient worker=x cores=0 heartbeat_s=1"),
            None
        );
    }

    #[test]
    fn start_gives_one_slot_per_core() {
        let mut farm = farm_with(10);
        let c = RClient::start(&mut farm, &launch("a", 8), NodeId::new("n1"), SimTime(0)).unwrap();
        assert_eq!(c.cores(), 8);
        assert_eq!(c.busy_slots(), 0);
        let c1 = RClient::start(&mut farm, &launch("b", 1), NodeId::new("n2"), SimTime(0)).unwrap();
        assert_eq!(c1.cores(), 1);
        assert_eq!(farm.query_jobs().alive_worker_count, 2);
        assert!(matches!(
            RClient::start(&mut farm, &launch("a", 8), NodeId::new("n1"), SimTime(0)),
            Err(SupervisorError::DuplicateWorker(_))
        ));
    }

    #[test]
    fn tick_fills_every_core() {
        let mut farm = farm_with(720);
        let model = RenderTimeModel::new(CALIBRATED_BASE_S, 0.0, 0);
        let mut c =
            RClient::start(&mut farm, &launch("a", 8), NodeId::new("n1"), SimTime(0)).unwrap();
        let actions = c.tick(SimTime(0), &mut farm, &model);
        let acquired = actions
            .iter()
            .filter(|a| matches!(a, ClientAction::Acquired { .. }))
            .count();
        assert_eq!(acquired, 8);
        assert_eq!(farm.query_jobs().pending_task_count, 712);
        assert!(
            farm.tasks()
                .filter(|t| t.state == TaskState::Rendering)
                .count()
                == 8
        );
    }

    #[test]
    fn idle_tick_only_heartbeats() {
        let mut farm = Supervisor::default();
        let model = RenderTimeModel::default();
        let mut c =
            RClient::start(&mut farm, &launch("a", 4), NodeId::new("n1"), SimTime(0)).unwrap();
        let actions = c.tick(SimTime::from_secs(10), &mut farm, &model);
        assert_eq!(
            actions,
            vec![
                ClientAction::Heartbeat { result: Ok(()) },
                ClientAction::QueueEmpty
            ]
        );
        assert_eq!(c.busy_slots(), 0);
    }

    #[test]
    fn slot_finishing_now_reports_this_tick() {
        let mut farm = farm_with(2);
        let model = RenderTimeModel::new(5.0, 0.0, 0);
        let mut c =
            RClient::start(&mut farm, &launch("a", 1), NodeId::new("n1"), SimTime(0)).unwrap();
        c.tick(SimTime(0), &mut farm, &model);
        assert_eq!(c.next_wakeup(), Some(SimTime(5000)));
        assert!(!c
            .tick(SimTime(4999), &mut farm, &model)
            .iter()
            .any(|a| matches!(a, ClientAction::Reported { .. })));
        let actions = c.tick(SimTime(5000), &mut farm, &model);
        assert!(matches!(
            actions[0],
            ClientAction::Reported {
                finished: SimTime(5000),
                ..
            }
        ));
        assert!(matches!(actions[1], ClientAction::Acquired { .. }));
    }

    #[test]
    fn single_client_closed_form_makespan() {
        // ceil(F / c) * base for F frames on a c-core client at zero jitter.
        for (frames, cores) in [(20i64, 8u32), (16, 8), (7, 3), (1, 4)] {
            let mut farm = farm_with(frames);
            let model = RenderTimeModel::new(10.0, 0.0, 0);
            let mut c =
                RClient::start(&mut farm, &launch("a", cores), NodeId::new("n"), SimTime(0))
                    .unwrap();
            let mut now = SimTime(0);
            let mut last_report = SimTime(0);
            for _ in 0..10_000 {
                for a in c.tick(now, &mut farm, &model) {
                    if let ClientAction::Reported { finished, .. } = a {
                        last_report = finished;
                    }
                }
                if farm.jobs().all(|j| j.state.is_terminal()) {
                    break;
                }
                now = c.next_wakeup().unwrap();
            }
            let rounds = (frames as u64).div_ceil(u64::from(cores));
            assert_eq!(
                last_report,
                SimTime(rounds * 10_000),
                "F={frames} c={cores}"
            );
        }
    }

    #[test]
    fn kill_silences_client() {
        let mut farm = farm_with(10);
        let model = RenderTimeModel::new(100.0, 0.0, 0);
        let mut c =
            RClient::start(&mut farm, &launch("a", 3), NodeId::new("n1"), SimTime(0)).unwrap();
        c.tick(SimTime(0), &mut farm, &model);
        let rec = c.on_kill(SimTime(50_000));
        assert_eq!(rec.in_flight.len(), 3);
        assert!(c.tick(SimTime(60_000), &mut farm, &model).is_empty());
        assert_eq!(c.next_wakeup(), None);
        let rescheduled = farm.sweep_failures(SimTime(200_000));
        assert_eq!(rescheduled, rec.in_flight);

        let mut idle =
            RClient::start(&mut farm, &launch("b", 2), NodeId::new("n2"), SimTime(0)).unwrap();
        assert!(idle.on_kill(SimTime(1)).in_flight.is_empty());
    }

    #[test]
    fn failures_are_deterministic() {
        let m = RenderTimeModel {
            failure_rate: 0.5,
            ..RenderTimeModel::new(1.0, 0.0, 3)
        };
        let a: Vec<bool> = (0..64).map(|f| m.attempt_fails(f, 1)).collect();
        let b: Vec<bool> = (0..64).map(|f| m.attempt_fails(f, 1)).collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|&x| x) && a.iter().any(|&x| !x));
    }
}

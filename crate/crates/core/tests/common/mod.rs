//! Invariant checks shared by the property suite and the acceptance run.
//! Each check takes generated input and returns `Err` with a reason when
//! the invariant breaks. Oracles here are written from scratch and do not
//! call the code they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use rcms::cluster::{ClusterManager, Utilization};
use rcms::model::{
    chunk_job, ClusterJobId, ClusterJobState, FrameRange, JobFile, NodeId, RenderJob, TaskId,
    TaskState, WorkerId,
};
use rcms::rclient::ClientLaunch;
use rcms::rcms::{compute_desired, Phase, Rcms, RcmsConfig, ScalingPolicy};
use rcms::supervisor::{DispatchPolicy, Supervisor, SupervisorConfig, TaskOutcome};
use rcms::SimTime;

pub const CASES: u32 = 1000;

pub fn config() -> Config {
    Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(TestCaseError::fail(format!($($fmt)+)));
        }
    };
}

// ---------------------------------------------------------------- chunking

pub fn chunk_input() -> impl Strategy<Value = (i64, i64, u32)> {
    (-1000i64..1000, 1i64..800, 1u32..50)
}

/// Tasks tile the range exactly: contiguous, disjoint, in order, all of
/// `chunk` frames except possibly the last.
pub fn check_chunking((start, len, chunk): (i64, i64, u32)) -> Result<(), TestCaseError> {
    let end = start + len - 1;
    let job = RenderJob::new("j", "s.mb", FrameRange::new(start, end).unwrap(), chunk).unwrap();
    let tasks = chunk_job(&job);
    let expected_count = (len + i64::from(chunk) - 1) / i64::from(chunk);
    ensure!(
        tasks.len() as i64 == expected_count,
        "{} tasks, want {expected_count}",
        tasks.len()
    );
    let mut next = start;
    for (i, t) in tasks.iter().enumerate() {
        ensure!(
            t.frames.start() == next,
            "task {i} starts at {}, want {next}",
            t.frames.start()
        );
        let size = t.frames.end() - t.frames.start() + 1;
        let last = i + 1 == tasks.len();
        ensure!(
            size == i64::from(chunk) || (last && size < i64::from(chunk)),
            "task {i} has {size} frames"
        );
        ensure!(
            t.state == TaskState::Pending && t.attempts == 0,
            "task {i} not fresh"
        );
        next = t.frames.end() + 1;
    }
    ensure!(
        next == end + 1,
        "tiling stops at {next}, range ends at {end}"
    );
    Ok(())
}

// -------------------------------------------------------------- supervisor

#[derive(Debug, Clone)]
pub enum FarmOp {
    Submit {
        frames: i64,
        chunk: u32,
        priority: i32,
    },
    Register(u8),
    Request(u8),
    Begin(u8, usize),
    Report(u8, usize, bool),
    StrayReport(u8, usize),
    Heartbeat(u8),
    Advance(u64),
}

pub fn farm_ops() -> impl Strategy<Value = Vec<FarmOp>> {
    let op = prop_oneof![
        1 => (1i64..40, 1u32..5, 0i32..3)
            .prop_map(|(frames, chunk, priority)| FarmOp::Submit { frames, chunk, priority }),
        2 => (0u8..4).prop_map(FarmOp::Register),
        5 => (0u8..4).prop_map(FarmOp::Request),
        2 => (0u8..4, any::<usize>()).prop_map(|(w, i)| FarmOp::Begin(w, i)),
        5 => (0u8..4, any::<usize>(), any::<bool>()).prop_map(|(w, i, ok)| FarmOp::Report(w, i, ok)),
        1 => (0u8..4, any::<usize>()).prop_map(|(w, i)| FarmOp::StrayReport(w, i)),
        2 => (0u8..4).prop_map(FarmOp::Heartbeat),
        2 => (1u64..25_000).prop_map(FarmOp::Advance),
    ];
    proptest::collection::vec(op, 1..80)
}

fn wid(i: u8) -> WorkerId {
    WorkerId::new(format!("w{i}"))
}

/// Frame conservation and single assignment under arbitrary operation
/// sequences, checked after every step.
pub fn check_farm_ops(ops: Vec<FarmOp>) -> Result<(), TestCaseError> {
    let mut sup = Supervisor::new(SupervisorConfig::default());
    let mut now = SimTime::ZERO;
    let mut ranges: BTreeMap<String, (i64, i64)> = BTreeMap::new();
    for (step, op) in ops.into_iter().enumerate() {
        let held =
            |sup: &Supervisor, w: u8| -> Vec<TaskId> { sup.held_by(&wid(w)).cloned().collect() };
        match op {
            FarmOp::Submit {
                frames,
                chunk,
                priority,
            } => {
                let id = format!("job{step}");
                let job = RenderJob::new(
                    id.as_str(),
                    "s.mb",
                    FrameRange::new(1, frames).unwrap(),
                    chunk,
                )
                .unwrap()
                .with_priority(priority)
                .submitted_at(now);
                sup.submit_render_job(job).unwrap();
                ranges.insert(id, (1, frames));
            }
            FarmOp::Register(w) => {
                let _ = sup.register_worker(wid(w), NodeId::new(format!("n{w}")), 4, now);
            }
            FarmOp::Request(w) => {
                let _ = sup.request_task(&wid(w), now);
            }
            FarmOp::Begin(w, i) => {
                let h = held(&sup, w);
                if !h.is_empty() {
                    sup.begin_task(&wid(w), &h[i % h.len()], now).unwrap();
                }
            }
            FarmOp::Report(w, i, ok) => {
                let h = held(&sup, w);
                if !h.is_empty() {
                    let outcome = if ok {
                        TaskOutcome::Complete
                    } else {
                        TaskOutcome::Failed
                    };
                    sup.report_task_result(&wid(w), &h[i % h.len()], outcome, now)
                        .unwrap();
                }
            }
            FarmOp::StrayReport(w, i) => {
                // Reporting a task held by someone else must be refused.
                let other = (w + 1) % 4;
                let h = held(&sup, other);
                if !h.is_empty() {
                    let r = sup.report_task_result(
                        &wid(w),
                        &h[i % h.len()],
                        TaskOutcome::Complete,
                        now,
                    );
                    ensure!(r.is_err(), "step {step}: stray report accepted");
                }
            }
            FarmOp::Heartbeat(w) => {
                let _ = sup.heartbeat(&wid(w), now);
            }
            FarmOp::Advance(ms) => {
                now = now + rcms::SimDuration::from_millis(ms);
                sup.sweep_failures(now);
            }
        }

        let audit = sup.audit();
        ensure!(audit.is_empty(), "step {step}: audit {audit:?}");

        // Single assignment: in-flight tasks have exactly one holder, which
        // lists them; nothing else is held.
        let mut holder_of: BTreeMap<TaskId, WorkerId> = BTreeMap::new();
        for w in sup.workers() {
            for t in sup.held_by(&w.worker_id) {
                let prev = holder_of.insert(t.clone(), w.worker_id.clone());
                ensure!(prev.is_none(), "step {step}: {t} held twice");
            }
        }
        for t in sup.tasks() {
            let in_flight = matches!(t.state, TaskState::Dispatched | TaskState::Rendering);
            ensure!(
                in_flight == t.assigned_worker.is_some(),
                "step {step}: {} {:?} with assignee {:?}",
                t.task_id,
                t.state,
                t.assigned_worker
            );
            ensure!(
                holder_of.get(&t.task_id) == t.assigned_worker.as_ref(),
                "step {step}: {} holder mismatch",
                t.task_id
            );
            ensure!(
                t.attempts <= sup.config().max_attempts,
                "step {step}: {} has {} attempts",
                t.task_id,
                t.attempts
            );
        }

        // Frame conservation: each job's tasks cover its range exactly once.
        let mut covered: BTreeMap<String, Vec<(i64, i64)>> = BTreeMap::new();
        for t in sup.tasks() {
            covered
                .entry(t.job_id.to_string())
                .or_default()
                .push((t.frames.start(), t.frames.end()));
        }
        for (job, (s, e)) in &ranges {
            let mut spans = covered.remove(job).unwrap_or_default();
            spans.sort();
            let mut next = *s;
            for (a, b) in spans {
                ensure!(a == next, "step {step}: {job} gap or overlap at {a}");
                next = b + 1;
            }
            ensure!(next == e + 1, "step {step}: {job} covered up to {next}");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- dispatch

pub fn dispatch_input() -> impl Strategy<Value = (Vec<(i32, u64, i64, u32)>, bool)> {
    (
        proptest::collection::vec((0i32..4, 0u64..4, 1i64..12, 1u32..4), 1..6),
        any::<bool>(),
    )
}

/// One worker drains the queue; the order must match an independent sort
/// by (priority desc, submit time, first frame, submission order).
pub fn check_dispatch_order(
    (jobs, fifo): (Vec<(i32, u64, i64, u32)>, bool),
) -> Result<(), TestCaseError> {
    let policy = if fifo {
        DispatchPolicy::Fifo
    } else {
        DispatchPolicy::PriorityThenFifo
    };
    let mut sup = Supervisor::new(SupervisorConfig {
        dispatch_policy: policy,
        ..SupervisorConfig::default()
    });
    let mut oracle = Vec::new();
    for (seq, &(priority, submit, frames, chunk)) in jobs.iter().enumerate() {
        let name = format!("j{seq}");
        let job = RenderJob::new(
            name.as_str(),
            "s.mb",
            FrameRange::new(1, frames).unwrap(),
            chunk,
        )
        .unwrap()
        .with_priority(priority)
        .submitted_at(SimTime(submit));
        sup.submit_render_job(job).unwrap();
        let mut first = 1;
        let mut index = 0u32;
        while first <= frames {
            let key_priority = if fifo { 0 } else { priority };
            oracle.push((-key_priority, submit, first, seq, format!("{name}#{index}")));
            first += i64::from(chunk);
            index += 1;
        }
    }
    oracle.sort();
    let want: Vec<String> = oracle.into_iter().map(|k| k.4).collect();

    let w = WorkerId::new("w");
    sup.register_worker(w.clone(), NodeId::new("n"), 1, SimTime(0))
        .unwrap();
    let mut got = Vec::new();
    while let Some(t) = sup.request_task(&w, SimTime(10)).unwrap() {
        got.push(t.task_id.to_string());
    }
    ensure!(got == want, "got {got:?}\nwant {want:?}");
    Ok(())
}

// ----------------------------------------------------------------- cluster

#[derive(Debug, Clone)]
pub enum ClusterOp {
    Submit { cores: u32, walltime_s: u64 },
    Schedule,
    Delete(usize),
    Finish(usize),
    Advance(u64),
}

pub fn cluster_input() -> impl Strategy<Value = (Vec<u32>, Vec<ClusterOp>)> {
    let op = prop_oneof![
        3 => (1u32..12, 1u64..200).prop_map(|(cores, walltime_s)| ClusterOp::Submit { cores, walltime_s }),
        3 => Just(ClusterOp::Schedule),
        1 => any::<usize>().prop_map(ClusterOp::Delete),
        1 => any::<usize>().prop_map(ClusterOp::Finish),
        2 => (1u64..120).prop_map(ClusterOp::Advance),
    ];
    (
        proptest::collection::vec(1u32..10, 1..5),
        proptest::collection::vec(op, 1..60),
    )
}

/// Per node, free cores plus the cores of its running jobs equal its
/// size, and no node is ever oversubscribed.
pub fn check_core_conservation(
    (sizes, ops): (Vec<u32>, Vec<ClusterOp>),
) -> Result<(), TestCaseError> {
    let mut c = ClusterManager::new(
        sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| (NodeId::new(format!("n{i}")), n)),
    );
    let mut now = SimTime::ZERO;
    let mut ids: Vec<ClusterJobId> = Vec::new();
    for (step, op) in ops.into_iter().enumerate() {
        match op {
            ClusterOp::Submit { cores, walltime_s } => {
                let jf = JobFile {
                    name: format!("job{step}"),
                    cores,
                    memory_mb: 1,
                    walltime_s,
                    payload: String::new(),
                };
                ids.push(c.submit_job(jf, now).unwrap());
            }
            ClusterOp::Schedule => {
                c.schedule_step(now);
            }
            ClusterOp::Delete(i) if !ids.is_empty() => {
                let _ = c.delete_job(ids[i % ids.len()], now);
            }
            ClusterOp::Finish(i) if !ids.is_empty() => {
                let _ = c.finish_job(ids[i % ids.len()], now);
            }
            ClusterOp::Advance(s) => {
                now = now + rcms::SimDuration::from_secs(s);
                c.enforce_walltime(now);
            }
            _ => {}
        }
        let audit = c.audit();
        ensure!(audit.is_empty(), "step {step}: {audit:?}");
        let mut used: BTreeMap<NodeId, u32> = BTreeMap::new();
        for j in c.jobs() {
            if j.state == ClusterJobState::Running {
                let node = j.node_id.clone();
                ensure!(node.is_some(), "step {step}: running job without node");
                *used.entry(node.unwrap()).or_default() += j.job.cores;
            }
        }
        let mut busy = 0u64;
        for n in c.nodes() {
            let u = used.get(&n.node_id).copied().unwrap_or(0);
            ensure!(
                n.cores_free + u == n.cores_total,
                "step {step}: {} free {} + used {u} != {}",
                n.node_id,
                n.cores_free,
                n.cores_total
            );
            busy += u64::from(u);
        }
        ensure!(
            c.utilization().cores_busy == busy,
            "step {step}: utilization drift"
        );
    }
    Ok(())
}

// -------------------------------------------------------- compute_desired

pub fn desired_input() -> impl Strategy<Value = (u64, u64, u64, u64, u32, u32, u32, u32)> {
    (
        0u64..5000, // pending
        0u64..10,   // running clients
        1u64..200,  // cores total
        0u64..200,  // cores busy (clamped below)
        1u32..12,   // max workers
        1u32..120,  // frames per worker
        0u32..16,   // headroom
        1u32..16,   // cores per worker
    )
}

fn desired_oracle(pending: u64, running: u64, total: u64, busy: u64, p: &ScalingPolicy) -> u64 {
    if pending == 0 {
        return 0;
    }
    let cpw = u64::from(p.cores_per_worker);
    let fpw = u64::from(p.frames_per_worker_target);
    let demand = pending.div_ceil(fpw);
    let others = busy.saturating_sub(running * cpw);
    let free = total as i128 - others as i128 - i128::from(p.cluster_headroom_cores);
    let fit = if free <= 0 { 0 } else { free as u64 / cpw };
    [u64::from(p.max_workers), demand, fit]
        .into_iter()
        .min()
        .unwrap()
}

/// Matches the oracle, is repeatable, never exceeds the cap, is zero with
/// nothing pending, grows with the queue and shrinks as compute load grows.
pub fn check_desired(
    (pending, running, total, busy, max, fpw, headroom, cpw): (
        u64,
        u64,
        u64,
        u64,
        u32,
        u32,
        u32,
        u32,
    ),
) -> Result<(), TestCaseError> {
    let busy = busy.min(total);
    let running = running.min(busy / u64::from(cpw));
    let policy = ScalingPolicy {
        max_workers: max,
        frames_per_worker_target: fpw,
        cluster_headroom_cores: headroom,
        scale_down_idle_ticks: 3,
        cores_per_worker: cpw,
    };
    let util = |busy| Utilization {
        cores_total: total,
        cores_busy: busy,
        queued_jobs: 0,
    };
    let d = compute_desired(pending, running, &util(busy), &policy);
    ensure!(
        d == compute_desired(pending, running, &util(busy), &policy),
        "not repeatable"
    );
    let want = desired_oracle(pending, running, total, busy, &policy);
    ensure!(d == want, "desired {d}, oracle {want}");
    ensure!(d <= u64::from(max), "desired {d} over cap {max}");
    ensure!(
        compute_desired(0, running, &util(busy), &policy) == 0,
        "nonzero with empty queue"
    );
    let more = compute_desired(pending + 1, running, &util(busy), &policy);
    ensure!(more >= d, "more pending lowered desired {d} -> {more}");
    if busy < total {
        let loaded = compute_desired(pending, running, &util(busy + 1), &policy);
        ensure!(
            loaded <= d,
            "more compute load raised desired {d} -> {loaded}"
        );
    }
    Ok(())
}

// ---------------------------------------------------------- rcms phases

#[derive(Debug, Clone)]
pub enum LoopOp {
    Render(i64),
    Poll,
    Schedule,
    /// Kill a running cluster job behind the scheduler's back.
    Kill(usize),
    Compute(u32),
    Heartbeats,
    Work(usize),
    Advance(u64),
}

pub fn loop_ops() -> impl Strategy<Value = (usize, Vec<LoopOp>)> {
    let op = prop_oneof![
        1 => (1i64..300).prop_map(LoopOp::Render),
        4 => Just(LoopOp::Poll),
        3 => Just(LoopOp::Schedule),
        1 => any::<usize>().prop_map(LoopOp::Kill),
        1 => (1u32..8).prop_map(LoopOp::Compute),
        2 => Just(LoopOp::Heartbeats),
        3 => (1usize..20).prop_map(LoopOp::Work),
        3 => (1u64..40).prop_map(LoopOp::Advance),
    ];
    (1usize..6, proptest::collection::vec(op, 1..80))
}

/// Drives the meta-scheduler against a real cluster and farm through an
/// arbitrary interleaving; no entry's phase may ever move backwards, and
/// live farm workers never exceed the cap.
pub fn check_phase_monotonicity((nodes, ops): (usize, Vec<LoopOp>)) -> Result<(), TestCaseError> {
    let config = RcmsConfig {
        max_workers: 3,
        frames_per_worker_target: 20,
        scale_down_idle_ticks: 2,
        walltime_s: 300,
        ..RcmsConfig::default()
    };
    let cap = u64::from(config.max_workers);
    let mut rcms = Rcms::new(config);
    let mut cluster = ClusterManager::uniform(nodes, 8);
    let mut farm = Supervisor::new(SupervisorConfig::default());
    let mut now = SimTime::ZERO;
    let mut started: BTreeSet<ClusterJobId> = BTreeSet::new();
    let mut killed: BTreeSet<WorkerId> = BTreeSet::new();
    let mut seen: BTreeMap<String, Phase> = BTreeMap::new();
    for (step, op) in ops.into_iter().enumerate() {
        match op {
            LoopOp::Render(frames) => {
                let job = RenderJob::new(
                    format!("r{step}"),
                    "s.mb",
                    FrameRange::new(1, frames).unwrap(),
                    1,
                )
                .unwrap()
                .submitted_at(now);
                farm.submit_render_job(job).unwrap();
            }
            LoopOp::Poll => {
                rcms.step(now, &mut cluster, &farm);
            }
            LoopOp::Schedule => {
                for id in cluster.schedule_step(now) {
                    let job = cluster.job(id).unwrap().clone();
                    if let Some(launch) = ClientLaunch::parse(&job.job.payload) {
                        farm.register_worker(
                            launch.worker_id,
                            job.node_id.unwrap(),
                            launch.cores,
                            now,
                        )
                        .map_err(|e| TestCaseError::fail(format!("step {step}: {e}")))?;
                        started.insert(id);
                    }
                }
            }
            LoopOp::Kill(i) => {
                let running: Vec<_> = cluster
                    .jobs()
                    .filter(|j| j.state == ClusterJobState::Running)
                    .map(|j| (j.cluster_job_id, j.job.name.clone()))
                    .collect();
                if !running.is_empty() {
                    let (id, name) = &running[i % running.len()];
                    cluster.delete_job(*id, now).unwrap();
                    killed.insert(WorkerId::new(name.as_str()));
                }
            }
            LoopOp::Compute(cores) => {
                let jf = JobFile {
                    name: format!("cfd{step}"),
                    cores,
                    memory_mb: 1,
                    walltime_s: 60,
                    payload: String::new(),
                };
                cluster.submit_job(jf, now).unwrap();
            }
            LoopOp::Heartbeats => {
                let live: Vec<WorkerId> = farm
                    .workers()
                    .filter(|w| w.is_live() && !killed.contains(&w.worker_id))
                    .map(|w| w.worker_id.clone())
                    .collect();
                for w in live {
                    farm.heartbeat(&w, now).unwrap();
                }
            }
            LoopOp::Work(n) => {
                let live: Vec<WorkerId> = farm
                    .workers()
                    .filter(|w| w.is_live() && !killed.contains(&w.worker_id))
                    .map(|w| w.worker_id.clone())
                    .collect();
                for w in live.iter().cycle().take(n.min(live.len() * 4)) {
                    if let Ok(Some(t)) = farm.request_task(w, now) {
                        farm.report_task_result(w, &t.task_id, TaskOutcome::Complete, now)
                            .unwrap();
                    }
                }
            }
            LoopOp::Advance(s) => {
                now = now + rcms::SimDuration::from_secs(s);
                farm.sweep_failures(now);
                for id in cluster.enforce_walltime(now) {
                    if let Some(j) = cluster.job(id) {
                        killed.insert(WorkerId::new(j.job.name.as_str()));
                    }
                }
            }
        }
        for e in rcms.entries() {
            if let Some(prev) = seen.insert(e.job_name.clone(), e.phase) {
                ensure!(
                    e.phase >= prev,
                    "step {step}: {} went {prev:?} -> {:?}",
                    e.job_name,
                    e.phase
                );
            }
        }
        ensure!(
            rcms.holding_count() <= cap,
            "step {step}: holding {} > cap",
            rcms.holding_count()
        );
        ensure!(
            farm.live_worker_count() <= cap,
            "step {step}: live workers over cap"
        );
    }
    Ok(())
}

// ------------------------------------------------------------------ runner

/// Runs one property through a fresh runner with [`CASES`] cases.
pub fn run_property<S: Strategy>(
    strategy: S,
    check: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(config());
    runner.run(&strategy, check).map_err(|e| e.to_string())
}

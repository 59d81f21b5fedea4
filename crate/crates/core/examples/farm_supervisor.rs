//! A supervisor handing out frames, losing a worker, and rescheduling the
//! frames it was holding.

use rcms::model::{FrameRange, NodeId, RenderJob, WorkerId};
use rcms::supervisor::{Supervisor, TaskOutcome};
use rcms::SimTime;

fn main() {
    let mut farm = Supervisor::default();
    farm.submit_render_job(
        RenderJob::new("anim", "scene.mb", FrameRange::new(1, 6).unwrap(), 1).unwrap(),
    )
    .unwrap();
    farm.submit_render_job(
        RenderJob::new("urgent", "fix.mb", FrameRange::new(1, 2).unwrap(), 1)
            .unwrap()
            .with_priority(5),
    )
    .unwrap();

    let a = WorkerId::new("wk-a");
    let b = WorkerId::new("wk-b");
    farm.register_worker(a.clone(), NodeId::new("node-01"), 2, SimTime::ZERO)
        .unwrap();
    farm.register_worker(b.clone(), NodeId::new("node-02"), 2, SimTime::ZERO)
        .unwrap();

    // Higher priority goes first.
    for w in [&a, &b, &a, &b] {
        let t = farm.request_task(w, SimTime::ZERO).unwrap().unwrap();
        println!("{w} <- {} (frames {})", t.task_id, t.frames);
    }

    // wk-a finishes one frame and keeps heartbeating; wk-b goes silent.
    let done = farm.held_by(&a).next().unwrap().clone();
    farm.report_task_result(&a, &done, TaskOutcome::Complete, SimTime::from_secs(20))
        .unwrap();
    farm.heartbeat(&a, SimTime::from_secs(25)).unwrap();

    let lost = farm.sweep_failures(SimTime::from_secs(31));
    println!("\nafter 31 s, rescheduled from the silent worker: {lost:?}");
    let q = farm.query_jobs();
    println!(
        "pending {} in flight {} live workers {}",
        q.pending_task_count, q.in_flight_task_count, q.alive_worker_count
    );
    for j in &q.jobs {
        println!(
            "  {} {:?} {}/{} complete",
            j.job_id,
            j.state,
            j.tasks.complete,
            j.tasks.total()
        );
    }
}

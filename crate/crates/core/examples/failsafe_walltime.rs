//! Clients whose walltime is shorter than the work: each kill loses the
//! frames in flight, the supervisor notices the silence and requeues them,
//! and the meta-scheduler submits replacements.

use rcms::sim::{run_scenario, KillReason, Scenario};

fn main() {
    let mut sc = Scenario::replica().with_jitter(0.25);
    sc.rcms.walltime_s = 900;
    let r = run_scenario(&sc).expect("run completes");
    for k in r
        .kills
        .iter()
        .filter(|k| k.reason == KillReason::Walltime)
        .take(5)
    {
        let requeued = r
            .reschedules
            .iter()
            .find(|s| k.in_flight.contains(&s.task_id));
        println!(
            "{} killed {} on {} with {} frames in flight; requeued at {}",
            k.t,
            k.worker_id,
            k.node_id,
            k.in_flight.len(),
            requeued.map_or("-".to_owned(), |s| s.t.to_string())
        );
    }
    let m = &r.metrics;
    println!(
        "...\n{} walltime kills, {} tasks rescheduled, {} r-client jobs submitted",
        m.walltime_kills, m.rescheduled_tasks, m.rcms_submits
    );
    println!(
        "{:?}: {}/{} frames, makespan {:.1}s",
        r.termination, m.frames_completed, m.total_frames, m.makespan_s
    );
}

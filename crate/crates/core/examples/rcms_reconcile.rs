//! One meta-scheduler poll at a time: how the desired pool size follows the
//! render queue and the cluster's spare cores.

use rcms::cluster::{ClusterManager, Utilization};
use rcms::model::{FrameRange, RenderJob};
use rcms::rcms::{compute_desired, Rcms, RcmsAction, RcmsConfig};
use rcms::supervisor::Supervisor;
use rcms::SimTime;

fn main() {
    let config = RcmsConfig::default();
    let policy = config.policy();
    println!(
        "desired r-clients on 9 x 8 cores (cap {}, {} frames each):",
        policy.max_workers, policy.frames_per_worker_target
    );
    for (pending, busy) in [(0, 0), (50, 0), (720, 0), (720, 32), (5000, 0)] {
        let util = Utilization {
            cores_total: 72,
            cores_busy: busy,
            queued_jobs: 0,
        };
        println!(
            "  pending {pending:>4}, compute cores busy {busy:>2} -> {}",
            compute_desired(pending, 0, &util, &policy)
        );
    }

    let mut cluster = ClusterManager::uniform(9, 8);
    let mut farm = Supervisor::default();
    let mut rcms = Rcms::new(config);

    let quiet = rcms.step(SimTime::ZERO, &mut cluster, &farm);
    println!(
        "\nempty queue: desired {}, {} actions",
        quiet.desired,
        quiet.records.len()
    );

    farm.submit_render_job(
        RenderJob::new("anim", "scene.mb", FrameRange::new(1, 720).unwrap(), 1).unwrap(),
    )
    .unwrap();
    let report = rcms.step(SimTime::from_secs(15), &mut cluster, &farm);
    println!("720 frames queued: desired {}", report.desired);
    for rec in &report.records {
        if let RcmsAction::Submit { job } = &rec.action {
            println!(
                "  qsub {} ({} cores, {} s) -> {} id {:?}",
                job.name, job.cores, job.walltime_s, rec.result, rec.cluster_job_id
            );
        }
    }
    println!(
        "payload: {}",
        match &report.records[0].action {
            RcmsAction::Submit { job } => job.payload.as_str(),
            RcmsAction::Delete { .. } => "",
        }
    );
    let again = rcms.step(SimTime::from_secs(30), &mut cluster, &farm);
    println!(
        "next poll: {} new actions (already at the desired size)",
        again.records.len()
    );
}

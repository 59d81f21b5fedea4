//! Splitting a render job into frame tasks, and checking which farm
//! managers can be driven as cluster pilot jobs.

use rcms::model::{
    check_cluster_compatibility, check_farm_compatibility, chunk_job, known_farm_managers,
    ClusterFeatures, FrameRange, RenderJob, Verdict,
};

fn main() {
    let job = RenderJob::new("shot-040", "shot040.mb", FrameRange::new(1, 10).unwrap(), 4).unwrap();
    println!(
        "{} frames {} in chunks of {}:",
        job.job_id, job.frame_range, job.chunk_size
    );
    for task in chunk_job(&job) {
        println!("  {} -> frames {}", task.task_id, task.frames);
    }

    println!("\nrender queue managers:");
    for m in known_farm_managers() {
        match check_farm_compatibility(&m) {
            Verdict::Compatible => println!("  {:<26} compatible", m.name),
            Verdict::Incompatible(missing) => {
                let missing: Vec<String> = missing.iter().map(ToString::to_string).collect();
                println!("  {:<26} missing {}", m.name, missing.join(", "));
            }
        }
    }

    let pbs = ClusterFeatures {
        name: "PBS".into(),
        supports_cli_submit: true,
        supports_query_by_name: true,
        supports_delete: true,
    };
    println!("\n{}: {:?}", pbs.name, check_cluster_compatibility(&pbs));
}

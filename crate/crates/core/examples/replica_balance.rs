//! The 9-node, 720-frame experiment: frames per node with and without
//! per-frame variation.

use rcms::sim::{run_scenario, Scenario};

fn main() {
    for jitter in [0.0, 0.25] {
        let sc = Scenario::replica().with_jitter(jitter);
        let r = run_scenario(&sc).expect("replica runs");
        let m = &r.metrics;
        let counts: Vec<String> = m.nodes.iter().map(|n| n.frames.to_string()).collect();
        println!("jitter {jitter}: frames per node [{}]", counts.join(", "));
        println!(
            "  makespan {:.1}s, mean frame {:.2}s, wall time per frame {:.2}s, peak workers {}",
            m.makespan_s, m.mean_frame_time_s, m.wall_time_per_frame_s, m.peak_live_workers
        );
    }
}

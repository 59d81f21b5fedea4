//! Makespan and speedup over 1, 4, 7 and 9 nodes.

use rcms::sim::{node_scaling_sweep, speedup_table, Scenario};

fn main() {
    let runs = node_scaling_sweep(&Scenario::replica(), &[1, 4, 7, 9]).expect("sweep runs");
    let metrics: Vec<_> = runs.iter().map(|r| &r.metrics).collect();
    println!("nodes  makespan_s  wall_s/frame  speedup  ideal");
    for (row, m) in speedup_table(&metrics).unwrap().iter().zip(&metrics) {
        println!(
            "{:>5}  {:>10.1}  {:>12.2}  {:>7.3}  {:>5}",
            row.nodes, row.makespan_s, m.wall_time_per_frame_s, row.speedup, row.ideal
        );
    }
}

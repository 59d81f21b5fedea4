//! Runs a scenario file and writes its CSV/JSON exports.
//!
//! cargo run --example export_run -- scenarios/elastic.json out/

use std::path::PathBuf;

use rcms::sim::{export_metrics, run_scenario, Scenario};

fn main() {
    let mut args = std::env::args().skip(1);
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let scenario = args
        .next()
        .map_or(manifest.join("scenarios/elastic.json"), PathBuf::from);
    let out = args
        .next()
        .map_or(std::env::temp_dir().join("rcms-export"), PathBuf::from);

    let sc = Scenario::load(&scenario).unwrap_or_else(|e| panic!("{}: {e}", scenario.display()));
    let report = run_scenario(&sc).expect("run completes");
    let files = export_metrics(&report, &sc, &out).expect("export");
    println!("{} -> {}", sc.name, out.display());
    for path in [
        &files.frames,
        &files.nodes,
        &files.timeline,
        &files.actions,
        &files.manifest,
    ] {
        let lines = std::fs::read_to_string(path)
            .map(|t| t.lines().count())
            .unwrap_or(0);
        println!(
            "  {:<14} {lines} lines",
            path.file_name().unwrap().to_string_lossy()
        );
    }
}

//! Command-line front end. Results go to stdout as JSON; failures go to
//! stderr as one JSON object `{"error": <kind>, "message": <text>}` with a
//! nonzero exit code.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use rcms::cluster::{self, ClusterManager};
use rcms::model::FeaturesFile;
use rcms::sim::{
    export_metrics, node_scaling_sweep, run_scenario, speedup_table, RunReport, Scenario, SimError,
};
use rcms::supervisor::{self, Supervisor};

#[derive(Parser)]
#[command(
    name = "rcms",
    version,
    about = "Render-farm workers as pilot jobs on a batch cluster"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its summary.
    Run {
        scenario: PathBuf,
        /// Also write the export files here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario at several node counts and print the speedup table.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        nodes: Vec<usize>,
        /// Write each run's export files to <out>/nodes-<n>/.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check render-farm and cluster managers against the requirements.
    CheckCompat { features: PathBuf },
    /// Run a scenario (the built-in 9x8 replica by default) and write its
    /// export files.
    Export {
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive a supervisor with a line script ("-" reads stdin).
    Farm { script: PathBuf },
    /// Drive a cluster manager with a line script ("-" reads stdin).
    Cluster { script: PathBuf },
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        kind: "IoFailure",
        message: format!("{}: {e}", path.display()),
    }
}

fn read_input(path: &Path) -> Result<String, Failure> {
    if path == Path::new("-") {
        let mut text = String::new();
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| io_failure(path, e))?;
        return Ok(text);
    }
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    seed: u64,
    termination: rcms::sim::Termination,
    nodes: usize,
    total_frames: u64,
    frames_completed: u64,
    frames_failed: u64,
    makespan_s: f64,
    avg_frame_time_s: f64,
    mean_frame_time_s: f64,
    peak_live_workers: u64,
    rcms_submits: u64,
    rcms_deletes: u64,
    walltime_kills: u64,
    rescheduled_tasks: u64,
    frames_per_node: BTreeMap<String, u64>,
    violations: usize,
}

fn summary(r: &RunReport) -> Summary<'_> {
    let m = &r.metrics;
    Summary {
        scenario: &r.scenario,
        seed: r.seed,
        termination: r.termination,
        nodes: m.node_count,
        total_frames: m.total_frames,
        frames_completed: m.frames_completed,
        frames_failed: m.frames_failed,
        makespan_s: m.makespan_s,
        avg_frame_time_s: m.avg_frame_time_s,
        mean_frame_time_s: m.mean_frame_time_s,
        peak_live_workers: m.peak_live_workers,
        rcms_submits: m.rcms_submits,
        rcms_deletes: m.rcms_deletes,
        walltime_kills: m.walltime_kills,
        rescheduled_tasks: m.rescheduled_tasks,
        frames_per_node: m
            .nodes
            .iter()
            .map(|n| (n.node_id.to_string(), n.frames))
            .collect(),
        violations: r.violations.len(),
    }
}

// A closed pipe (`rcms run ... | head`) is not an error worth reporting.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_json(value: &impl Serialize) {
    emit(&serde_json::to_string_pretty(value).expect("output serializes"));
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, out } => {
            let sc = Scenario::load(&scenario)?;
            let report = run_scenario(&sc)?;
            if let Some(dir) = out {
                export_metrics(&report, &sc, dir)?;
            }
            print_json(&summary(&report));
        }
        Command::Sweep {
            scenario,
            nodes,
            out,
        } => {
            let sc = Scenario::load(&scenario)?;
            let runs = node_scaling_sweep(&sc, &nodes)?;
            if let Some(dir) = out {
                for r in &runs {
                    let sub = sc.clone().with_nodes(r.metrics.node_count);
                    export_metrics(r, &sub, dir.join(format!("nodes-{}", r.metrics.node_count)))?;
                }
            }
            let metrics: Vec<_> = runs.iter().map(|r| &r.metrics).collect();
            let table = speedup_table(&metrics)?;
            print_json(&json!({
                "runs": runs.iter().map(summary).collect::<Vec<_>>(),
                "speedup": table,
            }));
        }
        Command::CheckCompat { features } => {
            let text = read_input(&features)?;
            let file: FeaturesFile = serde_json::from_str(&text).map_err(|e| Failure {
                kind: "ConfigInvalid",
                message: format!("{}: {e}", features.display()),
            })?;
            print_json(&file.check());
        }
        Command::Export { scenario, out } => {
            let sc = match scenario {
                Some(path) => Scenario::load(path)?,
                None => Scenario::replica(),
            };
            let report = run_scenario(&sc)?;
            let files = export_metrics(&report, &sc, &out)?;
            print_json(&json!({
                "frames": files.frames,
                "nodes": files.nodes,
                "timeline": files.timeline,
                "actions": files.actions,
                "manifest": files.manifest,
            }));
        }
        Command::Farm { script } => {
            let text = read_input(&script)?;
            let mut sup = Supervisor::default();
            for line in supervisor::script::execute_script(&mut sup, &text) {
                emit(&line);
            }
        }
        Command::Cluster { script } => {
            let text = read_input(&script)?;
            let mut c = ClusterManager::new([]);
            for line in cluster::script::execute_script(&mut c, &text) {
                emit(&line);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.split("\n\n").next().unwrap_or_default();
            let message: Vec<&str> = first.split_whitespace().collect();
            let message = message.join(" ");
            eprintln!(
                "{}",
                json!({ "error": "Usage", "message": message.trim_start_matches("error: ") })
            );
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::FAILURE
        }
    }
}

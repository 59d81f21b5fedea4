//! Writes a run to disk.
//!
//! | file            | contents                                                        |
//! |-----------------|-----------------------------------------------------------------|
//! | `frames.csv`    | `job_id,frame,task_id,attempt,worker_id,node_id,start_ms,end_ms` |
//! | `nodes.csv`     | `node_id,frames,busy_ms,mean_frame_ms`                          |
//! | `timeline.csv`  | `t_ms,live_workers,client_jobs`                                 |
//! | `actions.jsonl` | one meta-scheduler action per line                              |
//! | `manifest.json` | scenario echo, seed, termination and totals                     |
//!
//! Frame rows are sorted by job then frame. Column order never changes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::{FrameRecord, Metrics};
use super::runner::{RunReport, Termination};
use super::scenario::Scenario;
use super::SimError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedFiles {
    pub frames: PathBuf,
    pub nodes: PathBuf,
    pub timeline: PathBuf,
    pub actions: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Serialize)]
struct NodeRow<'a> {
    node_id: &'a str,
    frames: u64,
    busy_ms: u64,
    mean_frame_ms: u64,
}

#[derive(Serialize)]
struct Totals {
    total_frames: u64,
    frames_completed: u64,
    frames_failed: u64,
    makespan_s: f64,
    avg_frame_time_s: f64,
    mean_frame_time_s: f64,
    wall_time_per_frame_s: f64,
    peak_live_workers: u64,
    peak_client_jobs: u64,
    rcms_submits: u64,
    rcms_deletes: u64,
    walltime_kills: u64,
    rescheduled_tasks: u64,
    failed_attempts: u64,
    events: u64,
    end_time_ms: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a Scenario,
    seed: u64,
    termination: Termination,
    totals: Totals,
    violations: &'a [String],
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> SimError + '_ {
    move |e| SimError::Io(format!("{}: {e}", path.display()))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> SimError + '_ {
    move |e| SimError::Io(format!("{}: {e}", path.display()))
}

fn sorted_frames(m: &Metrics) -> Vec<&FrameRecord> {
    let mut rows: Vec<&FrameRecord> = m.frames.iter().collect();
    rows.sort_by(|a, b| (&a.job_id, a.frame).cmp(&(&b.job_id, b.frame)));
    rows
}

/// Writes every export file into `dir`, creating it if needed.
pub fn export_metrics(
    report: &RunReport,
    scenario: &Scenario,
    dir: impl AsRef<Path>,
) -> Result<ExportedFiles, SimError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io(dir))?;
    let files = ExportedFiles {
        frames: dir.join("frames.csv"),
        nodes: dir.join("nodes.csv"),
        timeline: dir.join("timeline.csv"),
        actions: dir.join("actions.jsonl"),
        manifest: dir.join("manifest.json"),
    };
    let m = &report.metrics;

    // Headers are written explicitly so an empty run still gets them.
    let mut w = csv::Writer::from_path(&files.frames).map_err(csv_err(&files.frames))?;
    w.write_record([
        "job_id",
        "frame",
        "task_id",
        "attempt",
        "worker_id",
        "node_id",
        "start_ms",
        "end_ms",
    ])
    .map_err(csv_err(&files.frames))?;
    for f in sorted_frames(m) {
        w.write_record([
            f.job_id.to_string(),
            f.frame.to_string(),
            f.task_id.to_string(),
            f.attempt.to_string(),
            f.worker_id.to_string(),
            f.node_id.to_string(),
            f.start_ms.to_string(),
            f.end_ms.to_string(),
        ])
        .map_err(csv_err(&files.frames))?;
    }
    w.flush().map_err(io(&files.frames))?;

    let mut w = csv::Writer::from_path(&files.nodes).map_err(csv_err(&files.nodes))?;
    for n in &m.nodes {
        w.serialize(NodeRow {
            node_id: n.node_id.as_str(),
            frames: n.frames,
            busy_ms: n.busy_ms,
            mean_frame_ms: n.busy_ms.checked_div(n.frames).unwrap_or(0),
        })
        .map_err(csv_err(&files.nodes))?;
    }
    if m.nodes.is_empty() {
        w.write_record(["node_id", "frames", "busy_ms", "mean_frame_ms"])
            .map_err(csv_err(&files.nodes))?;
    }
    w.flush().map_err(io(&files.nodes))?;

    let mut w = csv::Writer::from_path(&files.timeline).map_err(csv_err(&files.timeline))?;
    for p in &m.timeline {
        w.serialize(p).map_err(csv_err(&files.timeline))?;
    }
    if m.timeline.is_empty() {
        w.write_record(["t_ms", "live_workers", "client_jobs"])
            .map_err(csv_err(&files.timeline))?;
    }
    w.flush().map_err(io(&files.timeline))?;

    let mut w = BufWriter::new(File::create(&files.actions).map_err(io(&files.actions))?);
    for a in &report.actions {
        let line = serde_json::to_string(a).expect("action serializes");
        writeln!(w, "{line}").map_err(io(&files.actions))?;
    }
    w.flush().map_err(io(&files.actions))?;

    let manifest = Manifest {
        scenario,
        seed: report.seed,
        termination: report.termination,
        totals: Totals {
            total_frames: m.total_frames,
            frames_completed: m.frames_completed,
            frames_failed: m.frames_failed,
            makespan_s: m.makespan_s,
            avg_frame_time_s: m.avg_frame_time_s,
            mean_frame_time_s: m.mean_frame_time_s,
            wall_time_per_frame_s: m.wall_time_per_frame_s,
            peak_live_workers: m.peak_live_workers,
            peak_client_jobs: m.peak_client_jobs,
            rcms_submits: m.rcms_submits,
            rcms_deletes: m.rcms_deletes,
            walltime_kills: m.walltime_kills,
            rescheduled_tasks: m.rescheduled_tasks,
            failed_attempts: m.failed_attempts,
            events: report.events,
            end_time_ms: report.end_time.as_millis(),
        },
        violations: &report.violations,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&files.manifest, text).map_err(io(&files.manifest))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::run_scenario;

    #[test]
    fn empty_run_writes_headers_only() {
        let mut sc = Scenario::replica();
        sc.render_jobs.clear();
        sc.idle_test = true;
        sc.horizon_s = 60;
        let report = run_scenario(&sc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = export_metrics(&report, &sc, dir.path()).unwrap();
        assert_eq!(
            fs::read_to_string(files.frames).unwrap(),
            "job_id,frame,task_id,attempt,worker_id,node_id,start_ms,end_ms\n"
        );
        assert_eq!(fs::read_to_string(files.actions).unwrap(), "");
    }

    #[test]
    fn reexport_is_byte_identical() {
        let sc = Scenario::replica().with_nodes(3);
        let report = run_scenario(&sc).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = export_metrics(&report, &sc, a.path()).unwrap();
        let fb = export_metrics(&report, &sc, b.path()).unwrap();
        for (x, y) in [
            (fa.frames, fb.frames),
            (fa.manifest, fb.manifest),
            (fa.nodes, fb.nodes),
        ] {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        let frames = fs::read_to_string(a.path().join("frames.csv")).unwrap();
        assert_eq!(frames.lines().count(), 721);
    }
}

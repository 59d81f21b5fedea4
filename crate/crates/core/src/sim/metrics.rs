//! What a run measured, and makespan ratios across runs.

use serde::Serialize;

use super::SimError;
use crate::model::{JobId, NodeId, TaskId, WorkerId};
use crate::time::SimTime;

/// One rendered frame. A task of several frames yields one record per
/// frame, laid end to end inside the task's interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameRecord {
    pub job_id: JobId,
    pub frame: i64,
    pub task_id: TaskId,
    pub attempt: u32,
    pub worker_id: WorkerId,
    pub node_id: NodeId,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl FrameRecord {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeSummary {
    pub node_id: NodeId,
    pub frames: u64,
    /// Sum of the frame durations rendered on this node.
    pub busy_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimelinePoint {
    pub t_ms: u64,
    /// Farm workers not yet declared dead.
    pub live_workers: u64,
    /// This run's r-client jobs queued or running on the cluster.
    pub client_jobs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub node_count: usize,
    pub cores_per_node: u32,
    /// Frames submitted to the farm.
    pub total_frames: u64,
    pub frames_completed: u64,
    /// Frames whose task ran out of attempts.
    pub frames_failed: u64,
    pub frames: Vec<FrameRecord>,
    pub nodes: Vec<NodeSummary>,
    pub first_submit: Option<SimTime>,
    pub last_frame_end: Option<SimTime>,
    /// First render-job submission to last frame completion.
    pub makespan_s: f64,
    /// `makespan · active_cores / frames`, where active cores are the
    /// cores of the peak r-client pool.
    pub avg_frame_time_s: f64,
    /// Mean of the per-frame render durations.
    pub mean_frame_time_s: f64,
    /// Makespan divided by frames: the pool's wall time per frame.
    pub wall_time_per_frame_s: f64,
    pub timeline: Vec<TimelinePoint>,
    pub peak_live_workers: u64,
    pub peak_client_jobs: u64,
    pub rcms_submits: u64,
    pub rcms_deletes: u64,
    pub walltime_kills: u64,
    pub rescheduled_tasks: u64,
    pub failed_attempts: u64,
}

impl Metrics {
    pub fn frames_on(&self, node: &NodeId) -> u64 {
        self.nodes
            .iter()
            .find(|n| &n.node_id == node)
            .map_or(0, |n| n.frames)
    }

    pub fn all_frames_complete(&self) -> bool {
        self.total_frames > 0 && self.frames_completed == self.total_frames
    }

    /// Time the r-client job count last dropped to zero.
    pub fn pool_drained_at(&self) -> Option<SimTime> {
        let last = self.timeline.last()?;
        if last.client_jobs != 0 {
            return None;
        }
        let idx = self
            .timeline
            .iter()
            .rposition(|p| p.client_jobs != 0)
            .map_or(0, |i| i + 1);
        Some(SimTime(self.timeline[idx].t_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub nodes: usize,
    pub makespan_s: f64,
    /// Base makespan over this row's makespan.
    pub speedup: f64,
    /// Node count over the base node count.
    pub ideal: f64,
}

/// Makespan ratios against the run with the fewest nodes, ordered by node
/// count. Every run must have completed the same number of frames.
pub fn speedup_table(runs: &[&Metrics]) -> Result<Vec<SpeedupRow>, SimError> {
    let mut sorted: Vec<&Metrics> = runs.to_vec();
    sorted.sort_by_key(|m| m.node_count);
    let Some(base) = sorted.first() else {
        return Ok(Vec::new());
    };
    for m in &sorted {
        if !m.all_frames_complete() {
            return Err(SimError::MismatchedWorkload(format!(
                "{}-node run completed {}/{} frames",
                m.node_count, m.frames_completed, m.total_frames
            )));
        }
        if m.total_frames != base.total_frames {
            return Err(SimError::MismatchedWorkload(format!(
                "{}-node run has {} frames, {}-node run has {}",
                m.node_count, m.total_frames, base.node_count, base.total_frames
            )));
        }
    }
    Ok(sorted
        .iter()
        .map(|m| SpeedupRow {
            nodes: m.node_count,
            makespan_s: m.makespan_s,
            speedup: base.makespan_s / m.makespan_s,
            ideal: m.node_count as f64 / base.node_count as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(nodes: usize, frames: u64, makespan_s: f64) -> Metrics {
        Metrics {
            node_count: nodes,
            total_frames: frames,
            frames_completed: frames,
            makespan_s,
            ..Metrics::default()
        }
    }

    #[test]
    fn identical_runs_give_unit_ratio() {
        let a = run(4, 10, 100.0);
        let rows = speedup_table(&[&a, &a.clone()]).unwrap();
        assert!(rows.iter().all(|r| r.speedup == 1.0));
    }

    #[test]
    fn ordered_by_node_count() {
        let one = run(1, 720, 900.0);
        let nine = run(9, 720, 100.0);
        let rows = speedup_table(&[&nine, &one]).unwrap();
        assert_eq!(rows[0].nodes, 1);
        assert_eq!(rows[1].speedup, 9.0);
        assert_eq!(rows[1].ideal, 9.0);
    }

    #[test]
    fn mismatched_workloads_are_rejected() {
        let a = run(1, 720, 900.0);
        let b = run(9, 700, 100.0);
        assert!(matches!(
            speedup_table(&[&a, &b]),
            Err(SimError::MismatchedWorkload(_))
        ));
        let mut partial = run(4, 720, 10.0);
        partial.frames_completed = 719;
        assert!(speedup_table(&[&a, &partial]).is_err());
    }

    #[test]
    fn drain_time_is_last_drop_to_zero() {
        let p = |t, c| TimelinePoint {
            t_ms: t,
            live_workers: 0,
            client_jobs: c,
        };
        let mut m = Metrics {
            timeline: vec![p(0, 0), p(5, 2), p(9, 0), p(12, 1), p(20, 0)],
            ..Metrics::default()
        };
        assert_eq!(m.pool_drained_at(), Some(SimTime(20)));
        m.timeline.push(p(30, 1));
        assert_eq!(m.pool_drained_at(), None);
    }
}

//! Shared domain types: render jobs and their frame tasks, farm worker
//! records, cluster job files and cluster jobs.

mod compat;

pub use compat::{
    check_cluster_compatibility, check_farm_compatibility, known_farm_managers, ClusterFeatures,
    ClusterRequirement, CompatReport, CompatRow, FarmRequirement, FeaturesFile, ManagerFeatures,
    Verdict,
};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("frame range [{start}, {end}] is empty")]
    EmptyFrameRange { start: i64, end: i64 },
    #[error("chunk size must be at least 1")]
    ZeroChunkSize,
    #[error("tile-level tasks are not supported; submit whole frames")]
    TilesUnsupported,
    #[error("job file {name:?}: {field} must be strictly positive")]
    NonPositiveResource { name: String, field: &'static str },
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Identifier of a render job submitted to the farm.
    JobId
);
string_id!(
    /// Identifier a worker registers with at the farm supervisor.
    WorkerId
);
string_id!(
    /// Identifier of a physical cluster node.
    NodeId
);

/// A frame task is addressed by its parent job and its position in the
/// chunked frame range.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId {
    pub job: JobId,
    pub index: u32,
}

impl TaskId {
    /// Parses the `job#index` form produced by `Display`.
    pub fn parse(s: &str) -> Option<TaskId> {
        let (job, index) = s.rsplit_once('#')?;
        if job.is_empty() {
            return None;
        }
        Some(TaskId {
            job: JobId::new(job),
            index: index.parse().ok()?,
        })
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.job, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterJobId(pub u64);

impl fmt::Display for ClusterJobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Inclusive frame interval. Serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 2]", into = "[i64; 2]")]
pub struct FrameRange {
    start: i64,
    end: i64,
}

impl FrameRange {
    pub fn new(start: i64, end: i64) -> Result<Self, ModelError> {
        if start > end {
            return Err(ModelError::EmptyFrameRange { start, end });
        }
        Ok(FrameRange { start, end })
    }

    pub fn single(frame: i64) -> Self {
        FrameRange {
            start: frame,
            end: frame,
        }
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.end
    }

    pub fn len(&self) -> u64 {
        (self.end - self.start) as u64 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: i64) -> bool {
        self.start <= frame && frame <= self.end
    }

    pub fn contains_range(&self, other: &FrameRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn frames(&self) -> impl Iterator<Item = i64> {
        self.start..=self.end
    }
}

impl TryFrom<[i64; 2]> for FrameRange {
    type Error = ModelError;

    fn try_from([start, end]: [i64; 2]) -> Result<Self, Self::Error> {
        FrameRange::new(start, end)
    }
}

impl From<FrameRange> for [i64; 2] {
    fn from(r: FrameRange) -> Self {
        [r.start, r.end]
    }
}

impl fmt::Display for FrameRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Frame,
    Tile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum JobState {
    #[default]
    Queued,
    Active,
    Complete,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Complete | JobState::Failed)
    }
}

/// An animation submitted to the farm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderJob {
    pub job_id: JobId,
    pub scene_ref: String,
    pub frame_range: FrameRange,
    pub chunk_size: u32,
    #[serde(default)]
    pub priority: i32,
    #[serde(default)]
    pub state: JobState,
    /// Milliseconds of virtual time.
    #[serde(default)]
    pub submit_time: SimTime,
    #[serde(default)]
    pub granularity: Granularity,
}

impl RenderJob {
    pub fn new(
        job_id: impl Into<String>,
        scene_ref: impl Into<String>,
        frame_range: FrameRange,
        chunk_size: u32,
    ) -> Result<Self, ModelError> {
        let job = RenderJob {
            job_id: JobId::new(job_id),
            scene_ref: scene_ref.into(),
            frame_range,
            chunk_size,
            priority: 0,
            state: JobState::Queued,
            submit_time: SimTime::ZERO,
            granularity: Granularity::Frame,
        };
        job.validate()?;
        Ok(job)
    }

    pub fn with_priority(mut self, priority: i32) -> Self {
        self.priority = priority;
        self
    }

    pub fn submitted_at(mut self, t: SimTime) -> Self {
        self.submit_time = t;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.chunk_size == 0 {
            return Err(ModelError::ZeroChunkSize);
        }
        if self.granularity == Granularity::Tile {
            return Err(ModelError::TilesUnsupported);
        }
        FrameRange::new(self.frame_range.start, self.frame_range.end)?;
        Ok(())
    }

    pub fn total_frames(&self) -> u64 {
        self.frame_range.len()
    }

    pub fn task_count(&self) -> u64 {
        self.total_frames().div_ceil(u64::from(self.chunk_size))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    Dispatched,
    Rendering,
    Complete,
    Failed,
}

impl TaskState {
    pub fn is_in_flight(self) -> bool {
        matches!(self, TaskState::Dispatched | TaskState::Rendering)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTask {
    pub task_id: TaskId,
    pub job_id: JobId,
    pub frames: FrameRange,
    pub state: TaskState,
    pub assigned_worker: Option<WorkerId>,
    pub attempts: u32,
    pub last_dispatch_time: Option<SimTime>,
}

/// Splits a job's frame range into consecutive tasks of `chunk_size`
/// frames, low to high; only the last task may be shorter.
pub fn chunk_job(job: &RenderJob) -> Vec<FrameTask> {
    let chunk = i64::from(job.chunk_size.max(1));
    let (first, last) = (job.frame_range.start(), job.frame_range.end());
    let mut tasks = Vec::with_capacity(job.task_count() as usize);
    let mut start = first;
    let mut index = 0u32;
    while start <= last {
        let end = last.min(start + chunk - 1);
        tasks.push(FrameTask {
            task_id: TaskId {
                job: job.job_id.clone(),
                index,
            },
            job_id: job.job_id.clone(),
            frames: FrameRange { start, end },
            state: TaskState::Pending,
            assigned_worker: None,
            attempts: 0,
            last_dispatch_time: None,
        });
        index += 1;
        start = end + 1;
    }
    tasks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkerState {
    Alive,
    Suspect,
    Dead,
}

/// The supervisor's view of one registered worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub worker_id: WorkerId,
    pub node_id: NodeId,
    pub cores: u32,
    pub state: WorkerState,
    pub last_heartbeat: SimTime,
    pub registered_at: SimTime,
}

impl WorkerRecord {
    /// Alive or Suspect: still within the heartbeat timeout.
    pub fn is_live(&self) -> bool {
        self.state != WorkerState::Dead
    }
}

/// Resource request handed to the cluster's submit command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFile {
    pub name: String,
    pub cores: u32,
    pub memory_mb: u64,
    pub walltime_s: u64,
    pub payload: String,
}

impl JobFile {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field| ModelError::NonPositiveResource {
            name: self.name.clone(),
            field,
        };
        if self.cores == 0 {
            return Err(bad("cores"));
        }
        if self.memory_mb == 0 {
            return Err(bad("memory_mb"));
        }
        if self.walltime_s == 0 {
            return Err(bad("walltime_s"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterJobState {
    Queued,
    Running,
    Completed,
    Killed,
    WalltimeExceeded,
}

impl ClusterJobState {
    pub fn is_active(self) -> bool {
        matches!(self, ClusterJobState::Queued | ClusterJobState::Running)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClusterJobState::Queued => "Queued",
            ClusterJobState::Running => "Running",
            ClusterJobState::Completed => "Completed",
            ClusterJobState::Killed => "Killed",
            ClusterJobState::WalltimeExceeded => "WalltimeExceeded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterJob {
    pub job: JobFile,
    pub cluster_job_id: ClusterJobId,
    pub state: ClusterJobState,
    pub node_id: Option<NodeId>,
    pub submit_time: SimTime,
    pub start_time: Option<SimTime>,
    pub end_time: Option<SimTime>,
}

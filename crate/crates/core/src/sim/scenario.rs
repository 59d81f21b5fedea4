//! Scenario files: cluster shape, meta-scheduler and farm settings, render
//! model, and the workload to replay.
//!
//! A scenario is JSON. Every block except `nodes` has defaults, so the
//! smallest useful file is
//!
//! ```json
//! { "nodes": { "count": 9, "cores": 8 },
//!   "render_jobs": [ { "job_id": "anim", "scene_ref": "scene.mb",
//!                      "frame_range": [1, 720], "chunk_size": 1 } ] }
//! ```
//!
//! Times inside `render_jobs[].submit_time` and `compute_jobs[].submit_time`
//! are virtual milliseconds; every other duration is in seconds.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::{FrameRange, JobFile, RenderJob};
use crate::rclient::{RenderTimeModel, CALIBRATED_BASE_S};
use crate::rcms::RcmsConfig;
use crate::supervisor::{DispatchPolicy, SupervisorConfig};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeLayout {
    pub count: usize,
    pub cores: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FarmConfig {
    pub heartbeat_timeout_s: u64,
    pub max_attempts: u32,
    pub dispatch_policy: DispatchPolicy,
    /// How often the supervisor looks for silent workers.
    pub sweep_interval_s: u64,
}

impl Default for FarmConfig {
    fn default() -> Self {
        let s = SupervisorConfig::default();
        FarmConfig {
            heartbeat_timeout_s: s.heartbeat_timeout_s,
            max_attempts: s.max_attempts,
            dispatch_policy: s.dispatch_policy,
            sweep_interval_s: 5,
        }
    }
}

impl FarmConfig {
    pub fn supervisor_config(&self) -> SupervisorConfig {
        SupervisorConfig {
            heartbeat_timeout_s: self.heartbeat_timeout_s,
            max_attempts: self.max_attempts,
            dispatch_policy: self.dispatch_policy,
        }
    }
}

/// Render-time model settings. The generator seed is the scenario seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderModelConfig {
    pub base_s: f64,
    pub jitter: f64,
    pub failure_rate: f64,
}

impl Default for RenderModelConfig {
    fn default() -> Self {
        RenderModelConfig {
            base_s: CALIBRATED_BASE_S,
            jitter: 0.25,
            failure_rate: 0.0,
        }
    }
}

impl RenderModelConfig {
    pub fn to_model(&self, seed: u64) -> RenderTimeModel {
        RenderTimeModel {
            base_s: self.base_s,
            jitter: self.jitter,
            seed,
            failure_rate: self.failure_rate,
        }
    }
}

/// Ordinary batch work that competes with the r-clients for cores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeJob {
    pub name: String,
    pub cores: u32,
    #[serde(default = "default_compute_memory")]
    pub memory_mb: u64,
    pub walltime_s: u64,
    /// How long the job runs once started; it is killed at its walltime if
    /// that comes first.
    pub duration_s: u64,
    #[serde(default)]
    pub submit_time: SimTime,
}

fn default_compute_memory() -> u64 {
    1024
}

impl ComputeJob {
    pub fn job_file(&self) -> JobFile {
        JobFile {
            name: self.name.clone(),
            cores: self.cores,
            memory_mb: self.memory_mb,
            walltime_s: self.walltime_s,
            payload: format!("compute duration_s={}", self.duration_s),
        }
    }
}

fn default_name() -> String {
    "scenario".to_owned()
}

fn default_horizon() -> u64 {
    7 * 24 * 3600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub nodes: NodeLayout,
    #[serde(default)]
    pub rcms: RcmsConfig,
    #[serde(default)]
    pub farm: FarmConfig,
    #[serde(default)]
    pub render_model: RenderModelConfig,
    #[serde(default)]
    pub render_jobs: Vec<RenderJob>,
    #[serde(default)]
    pub compute_jobs: Vec<ComputeJob>,
    /// Allows a scenario without any workload; it then runs to the horizon.
    #[serde(default)]
    pub idle_test: bool,
    /// Virtual seconds after which an unfinished run is abandoned.
    #[serde(default = "default_horizon")]
    pub horizon_s: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        let sc: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Scenario::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Nine 8-core nodes, one 720-frame job in single-frame chunks, a cap
    /// of nine r-clients, no jitter, and a walltime long enough that no
    /// client is ever killed.
    pub fn replica() -> Scenario {
        Scenario {
            name: "replica-9x8".to_owned(),
            seed: 1,
            nodes: NodeLayout { count: 9, cores: 8 },
            rcms: RcmsConfig {
                walltime_s: 86_400,
                ..RcmsConfig::default()
            },
            farm: FarmConfig::default(),
            render_model: RenderModelConfig {
                jitter: 0.0,
                ..RenderModelConfig::default()
            },
            render_jobs: vec![RenderJob::new(
                "anim",
                "scene.mb",
                FrameRange::new(1, 720).expect("static range"),
                1,
            )
            .expect("static job")],
            compute_jobs: Vec::new(),
            idle_test: false,
            horizon_s: default_horizon(),
        }
    }

    pub fn with_nodes(mut self, count: usize) -> Scenario {
        self.nodes.count = count;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Scenario {
        self.seed = seed;
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Scenario {
        self.render_model.jitter = jitter;
        self
    }

    pub fn total_frames(&self) -> u64 {
        self.render_jobs.iter().map(RenderJob::total_frames).sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        if self.nodes.count == 0 {
            return bad("nodes.count must be at least 1".into());
        }
        if self.nodes.cores == 0 {
            return bad("nodes.cores must be at least 1".into());
        }
        if self.horizon_s == 0 {
            return bad("horizon_s must be positive".into());
        }
        self.rcms
            .validate()
            .map_err(|m| SimError::ConfigInvalid(format!("rcms: {m}")))?;
        if self.farm.heartbeat_timeout_s == 0 || self.farm.sweep_interval_s == 0 {
            return bad("farm: heartbeat_timeout_s and sweep_interval_s must be positive".into());
        }
        if self.farm.max_attempts == 0 {
            return bad("farm: max_attempts must be at least 1".into());
        }
        if self.rcms.heartbeat_interval_s >= self.farm.heartbeat_timeout_s {
            return bad(format!(
                "rcms.heartbeat_interval_s {} must be below farm.heartbeat_timeout_s {}",
                self.rcms.heartbeat_interval_s, self.farm.heartbeat_timeout_s
            ));
        }
        self.render_model
            .to_model(self.seed)
            .validate()
            .map_err(|m| SimError::ConfigInvalid(format!("render_model: {m}")))?;

        let mut ids = BTreeSet::new();
        for job in &self.render_jobs {
            job.validate()
                .map_err(|e| SimError::ConfigInvalid(format!("render job {}: {e}", job.job_id)))?;
            if !ids.insert(job.job_id.as_str()) {
                return bad(format!("duplicate render job id {}", job.job_id));
            }
        }
        let prefix = self.rcms.name_prefix();
        for job in &self.compute_jobs {
            job.job_file()
                .validate()
                .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
            if job.name.starts_with(&prefix) {
                return bad(format!(
                    "compute job {} uses the r-client prefix {prefix}",
                    job.name
                ));
            }
            if job.cores > self.nodes.cores {
                return bad(format!(
                    "compute job {} needs {} cores but nodes have {}",
                    job.name, job.cores, self.nodes.cores
                ));
            }
        }
        if self.render_jobs.is_empty() && self.compute_jobs.is_empty() && !self.idle_test {
            return bad("workload is empty; set idle_test to run without one".into());
        }
        Ok(())
    }

    /// A randomized but valid scenario, fully determined by `seed`. Used to
    /// stress the invariants over shapes nobody wrote down by hand.
    pub fn random(seed: u64) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cores = *[4u32, 8, 8, 16].get(rng.gen_range(0..4)).expect("in range");
        let nodes = NodeLayout {
            count: rng.gen_range(1..=12),
            cores,
        };
        let client_cores = if rng.gen_bool(0.7) {
            cores
        } else {
            (cores / 2).max(1)
        };
        let rcms = RcmsConfig {
            run_id: format!("x{seed}"),
            max_workers: rng.gen_range(1..=9),
            frames_per_worker_target: rng.gen_range(5..=100),
            headroom_cores: if rng.gen_bool(0.3) { cores / 2 } else { 0 },
            walltime_s: if rng.gen_bool(0.4) {
                rng.gen_range(600..=2400)
            } else {
                86_400
            },
            poll_interval_s: rng.gen_range(5..=30),
            scale_down_idle_ticks: rng.gen_range(1..=4),
            client_cores,
            client_memory_mb: 4096,
            heartbeat_interval_s: 10,
        };
        let render_model = RenderModelConfig {
            base_s: rng.gen_range(20.0..250.0),
            jitter: rng.gen_range(0.0..0.5),
            failure_rate: if rng.gen_bool(0.3) {
                rng.gen_range(0.0..0.1)
            } else {
                0.0
            },
        };
        let policy = if rng.gen_bool(0.5) {
            DispatchPolicy::Fifo
        } else {
            DispatchPolicy::PriorityThenFifo
        };

        let render_jobs = (0..rng.gen_range(1..=4))
            .map(|i| {
                let start = rng.gen_range(0..50);
                let len = rng.gen_range(1..=200);
                let job = RenderJob::new(
                    format!("job{i}"),
                    format!("scene{i}.mb"),
                    FrameRange::new(start, start + len - 1).expect("len >= 1"),
                    rng.gen_range(1..=5),
                )
                .expect("chunk >= 1");
                job.with_priority(rng.gen_range(0..3))
                    .submitted_at(SimTime::from_secs(rng.gen_range(0..3600)))
            })
            .collect();
        let compute_jobs = (0..rng.gen_range(0..=3))
            .map(|i| ComputeJob {
                name: format!("cfd{i}"),
                cores: rng.gen_range(1..=cores),
                memory_mb: 2048,
                walltime_s: rng.gen_range(300..=3600),
                duration_s: rng.gen_range(60..=4000),
                submit_time: SimTime::from_secs(rng.gen_range(0..3600)),
            })
            .collect();

        Scenario {
            name: format!("random-{seed}"),
            seed,
            nodes,
            rcms,
            farm: FarmConfig {
                dispatch_policy: policy,
                ..FarmConfig::default()
            },
            render_model,
            render_jobs,
            compute_jobs,
            idle_test: false,
            horizon_s: 30 * 24 * 3600,
        }
    }
}

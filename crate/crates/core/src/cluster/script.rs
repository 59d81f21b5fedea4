//! qsub/qstat/qdel style command surface for the cluster manager.
//!
//! One command per line, one response line per command. Times are virtual
//! milliseconds; walltimes are seconds.
//!
//! ```text
//! node <node_id> <cores>
//! qsub <name> <cores> <memory_mb> <walltime_s> <ms> [payload...]
//! qstat [prefix]
//! qdel <cluster_job_id> <ms>
//! finish <cluster_job_id> <ms>
//! schedule <ms>
//! walltime <ms>
//! util
//! ```
//!
//! `qstat` answers `ok qstat <id>:<name>:<state> ...` or `ok qstat -` when
//! nothing matches.

use super::ClusterManager;
use crate::model::{ClusterJobId, JobFile, NodeId};
use crate::time::SimTime;

fn ids(list: &[ClusterJobId]) -> String {
    if list.is_empty() {
        "-".to_owned()
    } else {
        list.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn execute_line(cluster: &mut ClusterManager, line: &str) -> Option<String> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return None;
    }
    Some(run(cluster, line).unwrap_or_else(|e| e))
}

pub fn execute_script(cluster: &mut ClusterManager, script: &str) -> Vec<String> {
    script
        .lines()
        .filter_map(|l| execute_line(cluster, l))
        .collect()
}

fn run(cluster: &mut ClusterManager, line: &str) -> Result<String, String> {
    let words: Vec<&str> = line.split_whitespace().collect();
    let verb = words[0];
    let arg = |i: usize, what: &str| -> Result<&str, String> {
        words
            .get(i)
            .copied()
            .ok_or_else(|| format!("err Parse {verb}: missing <{what}>"))
    };
    fn num<T: std::str::FromStr>(verb: &str, what: &str, raw: &str) -> Result<T, String> {
        raw.parse()
            .map_err(|_| format!("err Parse {verb}: bad <{what}> {raw:?}"))
    }
    let exact = |n: usize| -> Result<(), String> {
        if words.len() > n {
            Err(format!(
                "err Parse {verb}: unexpected argument {:?}",
                words[n]
            ))
        } else {
            Ok(())
        }
    };
    let op_err = |e: super::ClusterError| format!("err {} {e}", e.kind());

    match verb {
        "node" => {
            let node = arg(1, "node_id")?;
            let cores: u32 = num(verb, "cores", arg(2, "cores")?)?;
            exact(3)?;
            cluster.add_node(NodeId::new(node), cores);
            Ok(format!("ok node {node} cores={cores}"))
        }
        "qsub" => {
            let name = arg(1, "name")?.to_owned();
            let cores = num(verb, "cores", arg(2, "cores")?)?;
            let memory_mb = num(verb, "memory_mb", arg(3, "memory_mb")?)?;
            let walltime_s = num(verb, "walltime_s", arg(4, "walltime_s")?)?;
            let now = SimTime(num(verb, "ms", arg(5, "ms")?)?);
            let payload = words.get(6..).map(|p| p.join(" ")).unwrap_or_default();
            let id = cluster
                .submit_job(
                    JobFile {
                        name: name.clone(),
                        cores,
                        memory_mb,
                        walltime_s,
                        payload,
                    },
                    now,
                )
                .map_err(op_err)?;
            Ok(format!("ok qsub id={id} name={name}"))
        }
        "qstat" => {
            let prefix = words.get(1).copied().unwrap_or("");
            exact(2)?;
            let rows = cluster.query_jobs_by_name(prefix);
            if rows.is_empty() {
                return Ok("ok qstat -".to_owned());
            }
            let rows: Vec<String> = rows
                .iter()
                .map(|r| format!("{}:{}:{}", r.cluster_job_id, r.name, r.state.as_str()))
                .collect();
            Ok(format!("ok qstat {}", rows.join(" ")))
        }
        "qdel" | "finish" => {
            let id = ClusterJobId(num(verb, "cluster_job_id", arg(1, "cluster_job_id")?)?);
            let now = SimTime(num(verb, "ms", arg(2, "ms")?)?);
            exact(3)?;
            if verb == "finish" {
                cluster.finish_job(id, now).map_err(op_err)?;
                return Ok(format!("ok finish id={id}"));
            }
            let ack = cluster.delete_job(id, now).map_err(op_err)?;
            Ok(format!(
                "ok qdel id={id} was={} freed_cores={}",
                if ack.was_running { "Running" } else { "Queued" },
                ack.freed_cores
            ))
        }
        "schedule" => {
            let now = SimTime(num(verb, "ms", arg(1, "ms")?)?);
            exact(2)?;
            Ok(format!(
                "ok schedule started={}",
                ids(&cluster.schedule_step(now))
            ))
        }
        "walltime" => {
            let now = SimTime(num(verb, "ms", arg(1, "ms")?)?);
            exact(2)?;
            Ok(format!(
                "ok walltime killed={}",
                ids(&cluster.enforce_walltime(now))
            ))
        }
        "util" => {
            exact(1)?;
            let u = cluster.utilization();
            Ok(format!(
                "ok util cores_total={} cores_busy={} queued_jobs={}",
                u.cores_total, u.cores_busy, u.queued_jobs
            ))
        }
        other => Err(format!("err Parse unknown command {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qsub_qstat_qdel_session() {
        let mut c = ClusterManager::new([]);
        let out = execute_script(
            &mut c,
            "node node-01 8\n\
             qsub rcms-r1-0 8 4096 3600 0 rclient worker=rcms-r1-0\n\
             qsub cfd 8 1024 60 0 ./solver\n\
             qstat rcms-\n\
             schedule 0\n\
             util\n\
             qdel 1 1000\n\
             qdel 1 1000\n\
             schedule 1000\n\
             walltime 61000\n\
             qstat\n\
             qsub zero 0 1 1 0\n",
        );
        assert_eq!(
            out,
            vec![
                "ok node node-01 cores=8",
                "ok qsub id=1 name=rcms-r1-0",
                "ok qsub id=2 name=cfd",
                "ok qstat 1:rcms-r1-0:Queued",
                "ok schedule started=1",
                "ok util cores_total=8 cores_busy=8 queued_jobs=1",
                "ok qdel id=1 was=Running freed_cores=8",
                "err AlreadyTerminal cluster job 1 already finished",
                "ok schedule started=2",
                "ok walltime killed=2",
                "ok qstat -",
                "err InvalidJobFile invalid job file: job file \"zero\": cores must be strictly positive",
            ]
        );
    }
}

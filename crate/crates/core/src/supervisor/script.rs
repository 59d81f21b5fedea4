//! Line-oriented command surface for the supervisor.
//!
//! One command per line; blank lines and `#` comments are skipped. Times
//! are virtual milliseconds. Every command produces exactly one response
//! line starting with `ok` or `err <Kind>`.
//!
//! ```text
//! submit <job_id> <scene_ref> <start> <end> <chunk> [priority=<p>] [at=<ms>]
//! register <worker_id> <node_id> <cores> <ms>
//! heartbeat <worker_id> <ms>
//! request <worker_id> <ms>
//! begin <worker_id> <task_id> <ms>
//! report <worker_id> <task_id> complete|failed <ms>
//! sweep <ms>
//! query
//! ```

use std::str::FromStr;

use super::{Supervisor, TaskOutcome};
use crate::model::{FrameRange, NodeId, RenderJob, TaskId, WorkerId};
use crate::time::SimTime;

struct Args<'a> {
    words: std::str::SplitWhitespace<'a>,
    verb: &'a str,
}

impl<'a> Args<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, String> {
        self.words
            .next()
            .ok_or_else(|| format!("{}: missing <{what}>", self.verb))
    }

    fn parse<T: FromStr>(&mut self, what: &str) -> Result<T, String> {
        let raw = self.next(what)?;
        raw.parse()
            .map_err(|_| format!("{}: bad <{what}> {raw:?}", self.verb))
    }

    fn time(&mut self) -> Result<SimTime, String> {
        self.parse::<u64>("ms").map(SimTime)
    }

    fn task(&mut self) -> Result<TaskId, String> {
        let raw = self.next("task_id")?;
        TaskId::parse(raw).ok_or_else(|| format!("{}: bad <task_id> {raw:?}", self.verb))
    }

    fn finish(mut self) -> Result<(), String> {
        match self.words.next() {
            None => Ok(()),
            Some(extra) => Err(format!("{}: unexpected argument {extra:?}", self.verb)),
        }
    }
}

/// Executes one command line. Returns `None` for blank or comment lines.
pub fn execute_line(sup: &mut Supervisor, line: &str) -> Option<String> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return None;
    }
    Some(match run(sup, line) {
        Ok(reply) => reply,
        Err(Reply::Parse(msg)) => format!("err Parse {msg}"),
        Err(Reply::Op(kind, msg)) => format!("err {kind} {msg}"),
    })
}

/// Runs a whole script and returns the response lines.
pub fn execute_script(sup: &mut Supervisor, script: &str) -> Vec<String> {
    script
        .lines()
        .filter_map(|l| execute_line(sup, l))
        .collect()
}

enum Reply {
    Parse(String),
    Op(&'static str, String),
}

impl From<String> for Reply {
    fn from(s: String) -> Self {
        Reply::Parse(s)
    }
}

impl From<super::SupervisorError> for Reply {
    fn from(e: super::SupervisorError) -> Self {
        Reply::Op(e.kind(), e.to_string())
    }
}

fn run(sup: &mut Supervisor, line: &str) -> Result<String, Reply> {
    let mut words = line.split_whitespace();
    let verb = words.next().unwrap_or_default();
    let mut args = Args { words, verb };
    match verb {
        "submit" => {
            let id = args.next("job_id")?;
            let scene = args.next("scene_ref")?;
            let start: i64 = args.parse("start")?;
            let end: i64 = args.parse("end")?;
            let chunk: u32 = args.parse("chunk")?;
            let mut priority = 0;
            let mut at = SimTime::ZERO;
            for opt in args.words.by_ref() {
                match opt.split_once('=') {
                    Some(("priority", v)) => {
                        priority = v
                            .parse()
                            .map_err(|_| format!("submit: bad priority {v:?}"))?
                    }
                    Some(("at", v)) => {
                        at = SimTime(v.parse().map_err(|_| format!("submit: bad at {v:?}"))?)
                    }
                    _ => return Err(Reply::Parse(format!("submit: unknown option {opt:?}"))),
                }
            }
            let range =
                FrameRange::new(start, end).map_err(|e| Reply::Op("InvalidJob", e.to_string()))?;
            let job = RenderJob::new(id, scene, range, chunk)
                .map_err(|e| Reply::Op("InvalidJob", e.to_string()))?
                .with_priority(priority)
                .submitted_at(at);
            let tasks = job.task_count();
            let id = sup.submit_render_job(job)?;
            Ok(format!("ok submit job={id} tasks={tasks}"))
        }
        "register" => {
            let worker = WorkerId::new(args.next("worker_id")?);
            let node = NodeId::new(args.next("node_id")?);
            let cores: u32 = args.parse("cores")?;
            let now = args.time()?;
            args.finish()?;
            sup.register_worker(worker.clone(), node, cores, now)?;
            Ok(format!("ok register worker={worker}"))
        }
        "heartbeat" => {
            let worker = WorkerId::new(args.next("worker_id")?);
            let now = args.time()?;
            args.finish()?;
            sup.heartbeat(&worker, now)?;
            Ok(format!("ok heartbeat worker={worker}"))
        }
        "request" => {
            let worker = WorkerId::new(args.next("worker_id")?);
            let now = args.time()?;
            args.finish()?;
            Ok(match sup.request_task(&worker, now)? {
                Some(t) => format!(
                    "ok request task={} frames={}-{} attempt={}",
                    t.task_id,
                    t.frames.start(),
                    t.frames.end(),
                    t.attempts
                ),
                None => "ok request none".to_owned(),
            })
        }
        "begin" => {
            let worker = WorkerId::new(args.next("worker_id")?);
            let task = args.task()?;
            let now = args.time()?;
            args.finish()?;
            sup.begin_task(&worker, &task, now)?;
            Ok(format!("ok begin task={task}"))
        }
        "report" => {
            let worker = WorkerId::new(args.next("worker_id")?);
            let task = args.task()?;
            let outcome = match args.next("outcome")? {
                "complete" => TaskOutcome::Complete,
                "failed" => TaskOutcome::Failed,
                other => return Err(Reply::Parse(format!("report: bad outcome {other:?}"))),
            };
            let now = args.time()?;
            args.finish()?;
            let ack = sup.report_task_result(&worker, &task, outcome, now)?;
            Ok(format!(
                "ok report task={task} task_state={:?} job_state={:?}",
                ack.task_state, ack.job_state
            ))
        }
        "sweep" => {
            let now = args.time()?;
            args.finish()?;
            let ids = sup.sweep_failures(now);
            let mut out = format!("ok sweep rescheduled={}", ids.len());
            for id in ids {
                out.push(' ');
                out.push_str(&id.to_string());
            }
            Ok(out)
        }
        "query" => {
            args.finish()?;
            let q = sup.query_jobs();
            let jobs: Vec<String> = q
                .jobs
                .iter()
                .map(|j| {
                    format!(
                        "{}:{:?}:{}/{}",
                        j.job_id,
                        j.state,
                        j.tasks.complete,
                        j.tasks.total()
                    )
                })
                .collect();
            Ok(format!(
                "ok query pending={} in_flight={} alive_workers={} jobs={}",
                q.pending_task_count,
                q.in_flight_task_count,
                q.alive_worker_count,
                if jobs.is_empty() {
                    "-".to_owned()
                } else {
                    jobs.join(",")
                }
            ))
        }
        other => Err(Reply::Parse(format!("unknown command {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_session() {
        let mut sup = Supervisor::default();
        let out = execute_script(
            &mut sup,
            "# two frames, one worker\n\
             submit shot scenes/a.mb 1 2 1\n\
             query\n\
             register w1 node-01 8 0\n\
             request w1 0\n\
             begin w1 shot#0 10\n\
             report w1 shot#0 complete 500\n\
             request w1 500\n\
             report w1 shot#1 failed 900\n\
             sweep 40000\n\
             query\n\
             bogus\n",
        );
        assert_eq!(
            out,
            vec![
                "ok submit job=shot tasks=2",
                "ok query pending=2 in_flight=0 alive_workers=0 jobs=shot:Queued:0/2",
                "ok register worker=w1",
                "ok request task=shot#0 frames=1-1 attempt=1",
                "ok begin task=shot#0",
                "ok report task=shot#0 task_state=Complete job_state=Active",
                "ok request task=shot#1 frames=2-2 attempt=1",
                "ok report task=shot#1 task_state=Pending job_state=Active",
                "ok sweep rescheduled=0",
                "ok query pending=1 in_flight=0 alive_workers=0 jobs=shot:Active:1/2",
                "err Parse unknown command \"bogus\"",
            ]
        );
    }

    #[test]
    fn errors_carry_kind() {
        let mut sup = Supervisor::default();
        assert_eq!(
            execute_line(&mut sup, "heartbeat w9 0").unwrap(),
            "err UnknownWorker unknown worker w9"
        );
        assert_eq!(
            execute_line(&mut sup, "submit j s 5 1 1").unwrap(),
            "err InvalidJob frame range [5, 1] is empty"
        );
        assert!(execute_line(&mut sup, "register w1 n 8")
            .unwrap()
            .starts_with("err Parse"));
        assert_eq!(execute_line(&mut sup, "   "), None);
    }
}

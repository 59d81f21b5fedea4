//! r-client job naming: `rcms-<run_id>-<seq>`.

use crate::model::WorkerId;

const PREFIX: &str = "rcms-";

pub(super) fn valid_run_id(run_id: &str) -> Result<(), ()> {
    let ok = !run_id.is_empty()
        && run_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(())
    }
}

pub fn make_job_name(run_id: &str, seq: u64) -> String {
    format!("{PREFIX}{run_id}-{seq}")
}

/// Inverse of [`make_job_name`]; `None` for anything it could not have
/// produced.
pub fn parse_job_name(s: &str) -> Option<(String, u64)> {
    let rest = s.strip_prefix(PREFIX)?;
    let (run_id, seq) = rest.rsplit_once('-')?;
    valid_run_id(run_id).ok()?;
    let n: u64 = seq.parse().ok()?;
    // reject "+1", "007": only the canonical spelling round-trips
    if n.to_string() != seq {
        return None;
    }
    Some((run_id.to_owned(), n))
}

/// The worker id an r-client job registers under. Identical to the job
/// name so farm and cluster views join without a side channel.
pub fn worker_id_for(job_name: &str) -> WorkerId {
    WorkerId::new(job_name)
}

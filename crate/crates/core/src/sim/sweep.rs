//! The same scenario at several cluster sizes.

use std::thread;

use super::runner::{run_scenario, RunReport};
use super::scenario::Scenario;
use super::SimError;

/// Runs `scenario` once per node count, everything else fixed. The runs
/// share nothing, so they execute on separate threads; the results come back
/// in the order of `node_counts`.
pub fn node_scaling_sweep(
    scenario: &Scenario,
    node_counts: &[usize],
) -> Result<Vec<RunReport>, SimError> {
    if node_counts.is_empty() {
        return Err(SimError::ConfigInvalid("node count list is empty".into()));
    }
    if let Some(bad) = node_counts.iter().find(|&&n| n == 0) {
        return Err(SimError::ConfigInvalid(format!(
            "node count {bad} must be at least 1"
        )));
    }
    let runs: Vec<Scenario> = node_counts
        .iter()
        .map(|&n| scenario.clone().with_nodes(n))
        .collect();
    thread::scope(|s| {
        let handles: Vec<_> = runs
            .iter()
            .map(|sc| s.spawn(move || run_scenario(sc)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_count_equals_direct_run() {
        let sc = Scenario::replica().with_nodes(3);
        let rows = node_scaling_sweep(&sc, &[3]).unwrap();
        assert_eq!(rows, vec![run_scenario(&sc).unwrap()]);
    }

    #[test]
    fn repeated_counts_are_identical() {
        let sc = Scenario::replica().with_jitter(0.25);
        let rows = node_scaling_sweep(&sc, &[9, 9]).unwrap();
        assert_eq!(rows[0], rows[1]);
    }

    #[test]
    fn rejects_empty_and_zero() {
        let sc = Scenario::replica();
        assert!(node_scaling_sweep(&sc, &[]).is_err());
        assert!(node_scaling_sweep(&sc, &[1, 0]).is_err());
    }
}

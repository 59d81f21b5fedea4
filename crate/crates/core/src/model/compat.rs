//! Compatibility checks for candidate render-farm managers and cluster
//! resource managers.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Feature flags of a render-farm manager.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerFeatures {
    pub name: String,
    pub has_job_control_api: bool,
    pub has_failsafe_rendering: bool,
    pub has_auto_client_recognition: bool,
    pub has_supervisor: bool,
}

/// Command-line operations a cluster resource manager offers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterFeatures {
    pub name: String,
    pub supports_cli_submit: bool,
    pub supports_query_by_name: bool,
    pub supports_delete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarmRequirement {
    Supervisor,
    JobControlApi,
    FailsafeRendering,
    AutoClientRecognition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterRequirement {
    Submit,
    QueryByName,
    Delete,
}

impl fmt::Display for FarmRequirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FarmRequirement::Supervisor => "supervisor",
            FarmRequirement::JobControlApi => "job_control_api",
            FarmRequirement::FailsafeRendering => "failsafe_rendering",
            FarmRequirement::AutoClientRecognition => "auto_client_recognition",
        })
    }
}

impl fmt::Display for ClusterRequirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterRequirement::Submit => "submit",
            ClusterRequirement::QueryByName => "query_by_name",
            ClusterRequirement::Delete => "delete",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "failed")]
pub enum Verdict<R> {
    Compatible,
    Incompatible(Vec<R>),
}

impl<R> Verdict<R> {
    pub fn is_compatible(&self) -> bool {
        matches!(self, Verdict::Compatible)
    }

    fn from_failures(failed: Vec<R>) -> Self {
        if failed.is_empty() {
            Verdict::Compatible
        } else {
            Verdict::Incompatible(failed)
        }
    }
}

/// All four farm requirements must hold. Failures are listed supervisor
/// first, then the job-control API, failsafe rendering, client recognition.
pub fn check_farm_compatibility(f: &ManagerFeatures) -> Verdict<FarmRequirement> {
    let checks = [
        (f.has_supervisor, FarmRequirement::Supervisor),
        (f.has_job_control_api, FarmRequirement::JobControlApi),
        (f.has_failsafe_rendering, FarmRequirement::FailsafeRendering),
        (
            f.has_auto_client_recognition,
            FarmRequirement::AutoClientRecognition,
        ),
    ];
    Verdict::from_failures(
        checks
            .into_iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, r)| r)
            .collect(),
    )
}

pub fn check_cluster_compatibility(f: &ClusterFeatures) -> Verdict<ClusterRequirement> {
    let checks = [
        (f.supports_cli_submit, ClusterRequirement::Submit),
        (f.supports_query_by_name, ClusterRequirement::QueryByName),
        (f.supports_delete, ClusterRequirement::Delete),
    ];
    Verdict::from_failures(
        checks
            .into_iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, r)| r)
            .collect(),
    )
}

/// The surveyed render queue managers. Only the supervisor and job-control
/// columns were tabulated; failsafe rendering and client recognition are
/// taken as present for every row.
pub fn known_farm_managers() -> Vec<ManagerFeatures> {
    let row = |name: &str, supervisor: bool, api: bool| ManagerFeatures {
        name: name.to_owned(),
        has_job_control_api: api,
        has_failsafe_rendering: true,
        has_auto_client_recognition: true,
        has_supervisor: supervisor,
    };
    vec![
        row("DrQueue", true, true),
        row("Qube!", true, true),
        row("Smedge", false, true),
        row("Spider", false, false),
        row("RenderPal", true, true),
        row("ButterflyNetRender (BNR)", true, true),
    ]
}

/// A features file: the farm and cluster managers to check.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesFile {
    pub farm_managers: Vec<ManagerFeatures>,
    pub cluster_managers: Vec<ClusterFeatures>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompatRow<R> {
    pub name: String,
    #[serde(flatten)]
    pub verdict: Verdict<R>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompatReport {
    pub farm_managers: Vec<CompatRow<FarmRequirement>>,
    pub cluster_managers: Vec<CompatRow<ClusterRequirement>>,
}

impl FeaturesFile {
    pub fn check(&self) -> CompatReport {
        CompatReport {
            farm_managers: self
                .farm_managers
                .iter()
                .map(|m| CompatRow {
                    name: m.name.clone(),
                    verdict: check_farm_compatibility(m),
                })
                .collect(),
            cluster_managers: self
                .cluster_managers
                .iter()
                .map(|c| CompatRow {
                    name: c.name.clone(),
                    verdict: check_cluster_compatibility(c),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn farm(supervisor: bool, api: bool, failsafe: bool, auto: bool) -> ManagerFeatures {
        ManagerFeatures {
            name: "m".into(),
            has_job_control_api: api,
            has_failsafe_rendering: failsafe,
            has_auto_client_recognition: auto,
            has_supervisor: supervisor,
        }
    }

    #[test]
    fn table_rows() {
        let verdicts: Vec<_> = known_farm_managers()
            .iter()
            .map(|m| (m.name.clone(), check_farm_compatibility(m)))
            .collect();
        assert_eq!(verdicts[0].1, Verdict::Compatible);
        assert_eq!(
            verdicts[2].1,
            Verdict::Incompatible(vec![FarmRequirement::Supervisor])
        );
        assert_eq!(
            verdicts[3].1,
            Verdict::Incompatible(vec![
                FarmRequirement::Supervisor,
                FarmRequirement::JobControlApi
            ])
        );
    }

    #[test]
    fn all_sixteen_flag_combinations() {
        for bits in 0u8..16 {
            let flags = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0, bits & 8 != 0];
            let v = check_farm_compatibility(&farm(flags[0], flags[1], flags[2], flags[3]));
            assert_eq!(
                v.is_compatible(),
                flags.iter().all(|&b| b),
                "bits {bits:04b}"
            );
            if let Verdict::Incompatible(failed) = v {
                assert_eq!(failed.len(), flags.iter().filter(|&&b| !b).count());
            }
        }
    }

    #[test]
    fn cluster_checks() {
        let c = |s, q, d| ClusterFeatures {
            name: "pbs".into(),
            supports_cli_submit: s,
            supports_query_by_name: q,
            supports_delete: d,
        };
        assert_eq!(
            check_cluster_compatibility(&c(true, true, true)),
            Verdict::Compatible
        );
        assert_eq!(
            check_cluster_compatibility(&c(true, true, false)),
            Verdict::Incompatible(vec![ClusterRequirement::Delete])
        );
        assert_eq!(
            check_cluster_compatibility(&c(false, false, false)),
            Verdict::Incompatible(vec![
                ClusterRequirement::Submit,
                ClusterRequirement::QueryByName,
                ClusterRequirement::Delete
            ])
        );
    }

    #[test]
    fn verdict_json_shape() {
        let v: Verdict<FarmRequirement> = Verdict::Incompatible(vec![FarmRequirement::Supervisor]);
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"verdict":"Incompatible","failed":["supervisor"]}"#
        );
        assert_eq!(
            serde_json::to_string(&Verdict::<FarmRequirement>::Compatible).unwrap(),
            r#"{"verdict":"Compatible"}"#
        );
    }

    #[test]
    fn report_rows_flatten_the_verdict() {
        let file = FeaturesFile {
            farm_managers: known_farm_managers()[2..4].to_vec(),
            cluster_managers: Vec::new(),
        };
        let json = serde_json::to_string(&file.check()).unwrap();
        assert_eq!(
            json,
            r#"{"farm_managers":[{"name":"Smedge","verdict":"Incompatible","failed":["supervisor"]},{"name":"Spider","verdict":"Incompatible","failed":["supervisor","job_control_api"]}],"cluster_managers":[]}"#
        );
    }
}

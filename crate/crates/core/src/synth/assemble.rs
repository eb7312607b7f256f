use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::erm::{DomainGroup, GroupedDataset};
use crate::error::{Error, Result};
use crate::meta_sim::LabeledSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Real domains plus one synthetic pseudo-domain.
    Augment,
    /// One real domain plus one synthetic pseudo-domain.
    SingleDomainAugment,
    /// Synthetic entries only, one group per extrapolated domain.
    DataFree,
}

pub const SYNTHETIC_GROUP_LABEL: &str = "synthetic";

fn labeled(manifest: &Manifest, classes: &[String]) -> Result<Vec<(String, LabeledSample)>> {
    manifest
        .kept_entries()
        .map(|e| {
            let label = classes
                .iter()
                .position(|c| *c == e.class)
                .ok_or_else(|| Error::validation(format!("manifest class `{}` is not in the task", e.class)))?;
            let features = e
                .payload
                .vector()
                .ok_or_else(|| Error::validation(format!("entry {} has no feature vector", e.id)))?
                .to_vec();
            Ok((
                e.domain.clone(),
                LabeledSample {
                    features,
                    label,
                    domain_id: 0,
                },
            ))
        })
        .collect()
}

/// Builds the grouped training set for `protocol`. Filtered-out entries are skipped.
pub fn assemble_training_set(
    real_data: Option<&GroupedDataset>,
    manifest: &Manifest,
    classes: &[String],
    protocol: Protocol,
) -> Result<GroupedDataset> {
    let synthetic = labeled(manifest, classes)?;
    match (protocol, real_data) {
        (Protocol::DataFree, Some(_)) => Err(Error::validation("the data-free protocol takes no real data")),
        (Protocol::Augment | Protocol::SingleDomainAugment, None) => {
            Err(Error::validation("augment protocols need real data"))
        }
        (Protocol::DataFree, None) => {
            let mut groups: Vec<DomainGroup> = Vec::new();
            for (domain, mut s) in synthetic {
                let idx = match groups.iter().position(|g| g.label == domain) {
                    Some(i) => i,
                    None => {
                        groups.push(DomainGroup {
                            domain_id: groups.len() as u64,
                            label: domain,
                            samples: Vec::new(),
                        });
                        groups.len() - 1
                    }
                };
                s.domain_id = idx as u64;
                groups[idx].samples.push(s);
            }
            if groups.is_empty() {
                return Err(Error::validation("no kept synthetic entries to train on"));
            }
            Ok(GroupedDataset::new(groups))
        }
        (_, Some(real)) => {
            if protocol == Protocol::SingleDomainAugment && real.groups.len() != 1 {
                return Err(Error::validation(format!(
                    "single-domain-augment needs exactly one real domain, got {}",
                    real.groups.len()
                )));
            }
            let mut groups = real.groups.clone();
            let synthetic_id = groups.iter().map(|g| g.domain_id + 1).max().unwrap_or(0);
            let samples: Vec<LabeledSample> = synthetic
                .into_iter()
                .map(|(_, mut s)| {
                    s.domain_id = synthetic_id;
                    s
                })
                .collect();
            if !samples.is_empty() {
                groups.push(DomainGroup {
                    domain_id: synthetic_id,
                    label: SYNTHETIC_GROUP_LABEL.into(),
                    samples,
                });
            }
            Ok(GroupedDataset::new(groups))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta_sim::MetaDistributionSpec;
    use crate::synth::manifest::{ManifestEntry, ManifestHeader, Payload};

    fn manifest(domains: &[&str]) -> Manifest {
        let mut m = Manifest::new(ManifestHeader {
            task_name: "t".into(),
            created_at: "0".into(),
            config_digest: "d".into(),
        });
        for (i, d) in domains.iter().enumerate() {
            for (j, c) in ["dog", "cat"].iter().enumerate() {
                m.entries.push(ManifestEntry::new(
                    c,
                    d,
                    "p",
                    (i * 2 + j) as u64,
                    "mock",
                    Payload::Vector(vec![i as f64, j as f64]),
                ));
            }
        }
        m
    }

    fn classes() -> Vec<String> {
        vec!["dog".into(), "cat".into()]
    }

    #[test]
    fn data_free_groups_by_domain() {
        let m = manifest(&["a", "b", "c", "d", "e"]);
        let g = assemble_training_set(None, &m, &classes(), Protocol::DataFree).unwrap();
        assert_eq!(g.n_domains(), 5);
        assert_eq!(g.groups[2].label, "c");
        assert!(g.groups.iter().all(|x| x.samples.len() == 2));
        assert_eq!(g.groups[0].samples[1].label, 1);
    }

    #[test]
    fn augment_adds_one_group() {
        let spec = MetaDistributionSpec::new(2, 2, 2.0, 0.5, 0.5, 0).unwrap();
        let real = GroupedDataset::sample(&spec, 3, 4, 0).unwrap();
        let m = manifest(&["a", "b"]);
        let g = assemble_training_set(Some(&real), &m, &classes(), Protocol::Augment).unwrap();
        assert_eq!(g.n_domains(), 4);
        assert_eq!(g.groups[3].samples.len(), 4);
        assert!(assemble_training_set(Some(&real), &m, &classes(), Protocol::SingleDomainAugment).is_err());
        let one = GroupedDataset::sample(&spec, 1, 4, 0).unwrap();
        let g = assemble_training_set(Some(&one), &m, &classes(), Protocol::SingleDomainAugment).unwrap();
        assert_eq!(g.n_domains(), 2);
    }

    #[test]
    fn protocol_mismatch() {
        let spec = MetaDistributionSpec::new(2, 2, 2.0, 0.5, 0.5, 0).unwrap();
        let real = GroupedDataset::sample(&spec, 1, 4, 0).unwrap();
        let m = manifest(&["a"]);
        assert!(assemble_training_set(Some(&real), &m, &classes(), Protocol::DataFree).is_err());
        assert!(assemble_training_set(None, &m, &classes(), Protocol::Augment).is_err());
        assert!(assemble_training_set(None, &m, &["dog".into()], Protocol::DataFree).is_err());
    }

    #[test]
    fn filtered_entries_are_dropped() {
        let mut m = manifest(&["a", "b"]);
        m.entries[0].kept = Some(false);
        m.entries[0].filter_score = Some(-0.5);
        m.entries[1].kept = Some(true);
        let g = assemble_training_set(None, &m, &classes(), Protocol::DataFree).unwrap();
        let total: usize = g.groups.iter().map(|x| x.samples.len()).sum();
        assert_eq!(total, 3);
        assert!(g.iter_samples().all(|s| s.features != vec![0.0, 0.0]));
    }
}

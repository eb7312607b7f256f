use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::knowledge::{render_class_template, render_template_prompt};

pub const DEFAULT_THRESHOLD: f64 = 0.2;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub class: String,
    pub domain: String,
    pub total: usize,
    pub kept: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub threshold: f64,
    pub total: usize,
    pub kept: usize,
    pub retention: f64,
    pub per_pair: Vec<RetentionRow>,
}

/// Scores every entry against its class prototype and marks it kept when the
/// cosine reaches `threshold`. Re-filtering is allowed only with a threshold
/// that reproduces the stored flags.
pub fn filter_by_similarity(
    manifest: &Manifest,
    prototypes: &BTreeMap<String, Vec<f64>>,
    threshold: f64,
) -> Result<(Manifest, FilterReport)> {
    let vectors = manifest
        .entries
        .iter()
        .map(|e| {
            e.payload.vector().map(<[f64]>::to_vec).ok_or_else(|| {
                Error::validation(format!("entry {} has a file payload; embed it before filtering", e.id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    filter_with_embeddings(manifest, &vectors, prototypes, threshold)
}

/// Like [`filter_by_similarity`], with one externally computed embedding per entry.
pub fn filter_with_embeddings(
    manifest: &Manifest,
    embeddings: &[Vec<f64>],
    prototypes: &BTreeMap<String, Vec<f64>>,
    threshold: f64,
) -> Result<(Manifest, FilterReport)> {
    if threshold.is_nan() {
        return Err(Error::validation("threshold must be a number"));
    }
    if embeddings.len() != manifest.entries.len() {
        return Err(Error::validation("one embedding per manifest entry is required"));
    }
    let mut out = manifest.clone();
    for (e, v) in out.entries.iter_mut().zip(embeddings) {
        let proto = prototypes
            .get(&e.class)
            .ok_or_else(|| Error::validation(format!("no prototype for class `{}`", e.class)))?;
        if proto.len() != v.len() {
            return Err(Error::validation(format!(
                "prototype for `{}` has the wrong dimension",
                e.class
            )));
        }
        let score = cosine(v, proto);
        let kept = score >= threshold;
        match (e.filter_score, e.kept) {
            (None, None) => {
                e.filter_score = Some(score);
                e.kept = Some(kept);
            }
            (Some(s), Some(k)) if (s - score).abs() <= 1e-12 && k == kept => {}
            _ => {
                return Err(Error::validation(format!(
                    "entry {} was already filtered with a different threshold or prototype",
                    e.id
                )))
            }
        }
    }
    let report = retention_report(&out, threshold);
    Ok((out, report))
}

pub fn retention_report(manifest: &Manifest, threshold: f64) -> FilterReport {
    let mut pairs: Vec<RetentionRow> = Vec::new();
    for e in &manifest.entries {
        let idx = match pairs.iter().position(|r| r.class == e.class && r.domain == e.domain) {
            Some(i) => i,
            None => {
                pairs.push(RetentionRow {
                    class: e.class.clone(),
                    domain: e.domain.clone(),
                    total: 0,
                    kept: 0,
                    rate: 0.0,
                });
                pairs.len() - 1
            }
        };
        pairs[idx].total += 1;
        pairs[idx].kept += usize::from(e.is_kept());
    }
    for r in &mut pairs {
        r.rate = r.kept as f64 / r.total as f64;
    }
    let total = manifest.entries.len();
    let kept = manifest.kept_entries().count();
    FilterReport {
        threshold,
        total,
        kept,
        retention: if total == 0 { 1.0 } else { kept as f64 / total as f64 },
        per_pair: pairs,
    }
}

fn is_template_entry(e: &ManifestEntry) -> bool {
    render_template_prompt(&e.class, &e.domain).is_ok_and(|p| p == e.prompt)
        || render_class_template(&e.class).is_ok_and(|p| p == e.prompt)
}

/// Per-class mean of vectors generated from template prompts.
pub fn template_prototypes(manifest: &Manifest) -> BTreeMap<String, Vec<f64>> {
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for e in manifest.entries.iter().filter(|e| is_template_entry(e)) {
        let Some(v) = e.payload.vector() else { continue };
        let slot = sums.entry(e.class.clone()).or_insert_with(|| (vec![0.0; v.len()], 0));
        if slot.0.len() != v.len() {
            continue;
        }
        slot.0.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        slot.1 += 1;
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, s.into_iter().map(|x| x / n as f64).collect()))
        .collect()
}

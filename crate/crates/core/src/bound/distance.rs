use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::erm::{group_risk, GroupedDataset};
use crate::error::{Error, Result};
use crate::hypothesis::{HypothesisGrid, LossFunction};
use crate::meta_sim::{closed_form_risk, MetaDistributionSpec};

/// Monte-Carlo budget used when no closed form applies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalBudget {
    pub n_eval: usize,
    pub m_eval: usize,
    pub stream: u64,
}

impl Default for EvalBudget {
    fn default() -> Self {
        EvalBudget {
            n_eval: 200,
            m_eval: 100,
            stream: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaDistance {
    pub value: f64,
    /// Zero on the closed-form path.
    pub std_error: f64,
    pub exact: bool,
    /// Grid index attaining the supremum.
    pub argmax: usize,
}

/// `max_f |L^{μ'}(f) - L^{μ}(f)|` over the grid.
pub fn estimate_meta_distance(
    mu: &MetaDistributionSpec,
    mu_prime: &MetaDistributionSpec,
    grid: &HypothesisGrid,
    l: LossFunction,
    budget: EvalBudget,
) -> Result<MetaDistance> {
    mu.validate()?;
    mu_prime.validate()?;
    if mu.dim != mu_prime.dim || mu.class_count != mu_prime.class_count {
        return Err(Error::validation("distributions differ in dim or class_count"));
    }
    if grid.dim() != mu.dim {
        return Err(Error::validation("grid dimension does not match the distributions"));
    }
    if mu.class_count == 2 {
        let diffs = grid
            .members
            .iter()
            .map(|h| Ok((closed_form_risk(mu_prime, h, l.kind)? - closed_form_risk(mu, h, l.kind)?).abs()))
            .collect::<Result<Vec<f64>>>()?;
        let (argmax, value) = argmax(&diffs);
        return Ok(MetaDistance {
            value,
            std_error: 0.0,
            exact: true,
            argmax,
        });
    }

    // Same stream on both sides keeps the estimate paired.
    let a = GroupedDataset::sample(mu, budget.n_eval, budget.m_eval, budget.stream)?;
    let b = GroupedDataset::sample(mu_prime, budget.n_eval, budget.m_eval, budget.stream)?;
    let per_member = grid
        .members
        .par_iter()
        .map(|h| {
            let d = a
                .groups
                .iter()
                .zip(&b.groups)
                .map(|(ga, gb)| Ok(group_risk(h, gb, l)? - group_risk(h, ga, l)?))
                .collect::<Result<Vec<f64>>>()?;
            let n = d.len() as f64;
            let mean = d.iter().sum::<f64>() / n;
            let var = if d.len() > 1 {
                d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            Ok((mean.abs(), (var / n).sqrt()))
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = per_member.iter().map(|p| p.0).collect();
    let (argmax, value) = argmax(&values);
    Ok(MetaDistance {
        value,
        std_error: per_member[argmax].1,
        exact: false,
        argmax,
    })
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (k, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

//! Repeated draws from a proxy meta-distribution, checking the assembled
//! bound against the exact risk on the target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distance::{estimate_meta_distance, EvalBudget, MetaDistance};
use super::rademacher::{estimate_rademacher_domains, estimate_rademacher_samples, SigmaMode};
use super::theorem::{theorem1_bound, BoundInputs, BoundReport, BoundVariant};
use crate::erm::{erm_grid_index, population_risk_mc, GroupedDataset};
use crate::error::{Error, Result};
use crate::hypothesis::{Hypothesis, HypothesisGrid, LossFunction, LossKind};
use crate::meta_sim::{
    closed_form_risk, perturb_meta, sample_dataset, sample_domains, MetaDistributionSpec, PerturbationSpec,
};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub trials: usize,
    pub variant: BoundVariant,
    pub sigma: SigmaMode,
    /// Fresh samples per domain for the domain-level complexity.
    pub m_eval: usize,
    pub epsilon_assumed: Option<f64>,
    pub budget: EvalBudget,
    pub stream: u64,
}

impl Default for BoundExperimentConfig {
    fn default() -> Self {
        BoundExperimentConfig {
            n: 10,
            m: 50,
            delta: 0.05,
            trials: 200,
            variant: BoundVariant::Appendix,
            sigma: SigmaMode::default(),
            m_eval: 100,
            epsilon_assumed: None,
            budget: EvalBudget::default(),
            stream: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub n: usize,
    pub m: usize,
    pub erm_index: usize,
    pub empirical_proxy_risk: f64,
    pub r_mn: f64,
    pub r_mn_std_error: f64,
    pub r_n: f64,
    pub r_n_std_error: f64,
    pub epsilon: f64,
    pub bound_value: f64,
    pub true_risk: f64,
    pub true_risk_zero_one: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub trials: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub median_bound: f64,
    pub median_true_risk: f64,
    pub median_empirical_risk: f64,
    pub median_r_mn: f64,
    pub median_r_n: f64,
    pub epsilon_true: f64,
    pub settings: BoundExperimentConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundExperiment {
    pub rows: Vec<TrialRow>,
    pub reports: Vec<BoundReport>,
    pub distance: MetaDistance,
    pub summary: ExperimentSummary,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Population risk on `spec`, exact when a closed form exists.
pub fn target_risk(spec: &MetaDistributionSpec, h: &Hypothesis, kind: LossKind, budget: EvalBudget) -> Result<f64> {
    match closed_form_risk(spec, h, kind) {
        Ok(r) => Ok(r),
        Err(Error::UnsupportedOracle(_)) => Ok(population_risk_mc(
            spec,
            h,
            LossFunction { kind },
            budget.n_eval,
            budget.m_eval,
            budget.stream,
        )?
        .value),
        Err(e) => Err(e),
    }
}

pub fn bound_experiment(
    mu: &MetaDistributionSpec,
    perturbation: &PerturbationSpec,
    grid: &HypothesisGrid,
    l: LossFunction,
    config: &BoundExperimentConfig,
) -> Result<BoundExperiment> {
    if config.trials == 0 {
        return Err(Error::EmptyRequest("bound_experiment needs trials >= 1"));
    }
    if config.m_eval == 0 {
        return Err(Error::validation("m_eval must be at least 1"));
    }
    let mu_prime = perturb_meta(mu, perturbation)?;
    let distance = estimate_meta_distance(mu, &mu_prime, grid, l, config.budget)?;

    let outcomes = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(mu, &mu_prime, grid, l, config, distance.value, t))
        .collect::<Result<Vec<_>>>()?;
    let (rows, reports): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();

    let col = |f: fn(&TrialRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let violations = rows.iter().filter(|r| r.violated).count();
    let summary = ExperimentSummary {
        trials: rows.len(),
        violations,
        violation_rate: violations as f64 / rows.len() as f64,
        median_bound: median(&col(|r| r.bound_value)),
        median_true_risk: median(&col(|r| r.true_risk)),
        median_empirical_risk: median(&col(|r| r.empirical_proxy_risk)),
        median_r_mn: median(&col(|r| r.r_mn)),
        median_r_n: median(&col(|r| r.r_n)),
        epsilon_true: distance.value,
        settings: config.clone(),
    };
    Ok(BoundExperiment {
        rows,
        reports,
        distance,
        summary,
    })
}

fn run_trial(
    mu: &MetaDistributionSpec,
    mu_prime: &MetaDistributionSpec,
    grid: &HypothesisGrid,
    l: LossFunction,
    config: &BoundExperimentConfig,
    epsilon: f64,
    trial: usize,
) -> Result<(TrialRow, BoundReport)> {
    let node = Stream::new(config.stream).named("bound-trial").child(trial as u64);
    let data_stream = node.named("data").key();
    let domains = sample_domains(mu_prime, config.n, data_stream)?;
    let mut train = Vec::with_capacity(domains.len());
    let mut held_out = Vec::with_capacity(domains.len());
    for d in &domains {
        train.push(sample_dataset(mu_prime, d, config.m, data_stream)?);
        held_out.push(sample_dataset(
            mu_prime,
            d,
            config.m_eval,
            node.named("held-out").key(),
        )?);
    }
    let train = GroupedDataset::from_samples(train.into_iter().flatten());
    let held_out = GroupedDataset::from_samples(held_out.into_iter().flatten());

    let (erm_index, emp) = erm_grid_index(grid, &train, l)?;
    let f_hat = &grid.members[erm_index];
    let r_mn = estimate_rademacher_samples(grid, &train, l, config.sigma, node.named("sigma-samples").key())?;
    let r_n = estimate_rademacher_domains(grid, &held_out, l, config.sigma, node.named("sigma-domains").key())?;

    let mut report = theorem1_bound(&BoundInputs {
        empirical_proxy_risk: emp.value,
        r_mn,
        r_n,
        delta: config.delta,
        epsilon_true: epsilon,
        epsilon_assumed: config.epsilon_assumed,
        n: config.n,
        m: config.m,
        variant: config.variant,
    })?;
    let true_risk = target_risk(mu, f_hat, l.kind, config.budget)?;
    let true_risk_zero_one = target_risk(mu, f_hat, LossKind::ZeroOne, config.budget)?;
    report.true_risk = Some(true_risk);

    let row = TrialRow {
        trial,
        n: config.n,
        m: config.m,
        erm_index,
        empirical_proxy_risk: emp.value,
        r_mn: r_mn.value,
        r_mn_std_error: r_mn.std_error,
        r_n: r_n.value,
        r_n_std_error: r_n.std_error,
        epsilon: report.epsilon_used(),
        bound_value: report.bound_value,
        true_risk,
        true_risk_zero_one,
        violated: true_risk > report.bound_value,
    };
    Ok((row, report))
}

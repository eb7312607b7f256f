//! Empirical risk, exact grid ERM, and gradient descent with weight EMA.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{label_sign, loss, Hypothesis, HypothesisGrid, LossFunction};
use crate::meta_sim::{sample_dataset, sample_domains, LabeledSample, MetaDistributionSpec};
use crate::rng::Stream;

/// Samples of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainGroup {
    pub domain_id: u64,
    pub label: String,
    pub samples: Vec<LabeledSample>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupedDataset {
    pub groups: Vec<DomainGroup>,
}

impl GroupedDataset {
    pub fn new(groups: Vec<DomainGroup>) -> Self {
        GroupedDataset { groups }
    }

    /// Groups samples by `domain_id`, in order of first appearance.
    pub fn from_samples(samples: impl IntoIterator<Item = LabeledSample>) -> Self {
        let mut groups: Vec<DomainGroup> = Vec::new();
        for s in samples {
            match groups.iter_mut().find(|g| g.domain_id == s.domain_id) {
                Some(g) => g.samples.push(s),
                None => groups.push(DomainGroup {
                    domain_id: s.domain_id,
                    label: format!("domain-{}", s.domain_id),
                    samples: vec![s],
                }),
            }
        }
        GroupedDataset { groups }
    }

    /// Samples `n` domains with `m` samples each.
    pub fn sample(spec: &MetaDistributionSpec, n: usize, m: usize, stream: u64) -> Result<Self> {
        let domains = sample_domains(spec, n, stream)?;
        let groups = domains
            .par_iter()
            .map(|d| {
                Ok(DomainGroup {
                    domain_id: d.domain_id,
                    label: format!("domain-{}", d.domain_id),
                    samples: sample_dataset(spec, d, m, stream)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupedDataset { groups })
    }

    pub fn n_domains(&self) -> usize {
        self.groups.len()
    }

    pub fn n_samples(&self) -> usize {
        self.groups.iter().map(|g| g.samples.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::validation("dataset has no domain groups"));
        }
        if let Some(g) = self.groups.iter().find(|g| g.samples.is_empty()) {
            return Err(Error::validation(format!("domain group `{}` is empty", g.label)));
        }
        Ok(())
    }

    /// Per-sample weights `1 / (n · m_j)` in group-major order.
    pub fn balanced_weights(&self) -> Vec<f64> {
        let n = self.groups.len() as f64;
        self.groups
            .iter()
            .flat_map(|g| {
                let w = 1.0 / (n * g.samples.len() as f64);
                std::iter::repeat_n(w, g.samples.len())
            })
            .collect()
    }

    pub fn iter_samples(&self) -> impl Iterator<Item = &LabeledSample> {
        self.groups.iter().flat_map(|g| g.samples.iter())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskKind {
    Empirical,
    PopulationMc,
    PopulationClosedForm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub kind: RiskKind,
    pub n_domains: usize,
    /// Size of the smallest domain group.
    pub m_per_domain: usize,
}

/// Mean loss of `h` over one group.
pub fn group_risk(h: &Hypothesis, group: &DomainGroup, l: LossFunction) -> Result<f64> {
    let mut total = 0.0;
    for s in &group.samples {
        total += loss(l, h.margin(&s.features)?, label_sign(s.label));
    }
    Ok(total / group.samples.len() as f64)
}

/// Domain-balanced empirical risk `(1/n) Σ_j (1/m_j) Σ_i l(f(x_ij), y_ij)`.
pub fn empirical_risk(h: &Hypothesis, data: &GroupedDataset, l: LossFunction) -> Result<RiskEstimate> {
    data.validate()?;
    let per_group = data
        .groups
        .par_iter()
        .map(|g| group_risk(h, g, l))
        .collect::<Result<Vec<f64>>>()?;
    let value = per_group.iter().sum::<f64>() / per_group.len() as f64;
    Ok(RiskEstimate {
        value,
        kind: RiskKind::Empirical,
        n_domains: data.n_domains(),
        m_per_domain: data.groups.iter().map(|g| g.samples.len()).min().unwrap_or(0),
    })
}

/// Grid member with minimal empirical risk; ties go to the lowest index.
pub fn erm_grid(grid: &HypothesisGrid, data: &GroupedDataset, l: LossFunction) -> Result<(Hypothesis, RiskEstimate)> {
    let (index, risk) = erm_grid_index(grid, data, l)?;
    Ok((grid.members[index].clone(), risk))
}

pub fn erm_grid_index(grid: &HypothesisGrid, data: &GroupedDataset, l: LossFunction) -> Result<(usize, RiskEstimate)> {
    if grid.is_empty() {
        return Err(Error::validation("grid is empty"));
    }
    data.validate()?;
    let risks = grid
        .members
        .par_iter()
        .map(|h| empirical_risk(h, data, l))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (k, r) in risks.iter().enumerate() {
        if r.value < risks[best].value {
            best = k;
        }
    }
    Ok((best, risks[best]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    GridErm,
    Gd,
    GdEma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub steps: usize,
    pub ema_decay: f64,
    /// Samples per step; 0 or anything at least the dataset size means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Record a curve point every this many steps; 0 disables the curve.
    pub curve_every: usize,
    pub record_trajectory: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::GdEma,
            learning_rate: 0.1,
            steps: 500,
            ema_decay: 0.999,
            batch_size: 0,
            seed: 0,
            curve_every: 0,
            record_trajectory: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::validation("ema_decay must lie in [0, 1)"));
        }
        if self.mode != TrainMode::GridErm && self.steps == 0 {
            return Err(Error::validation("gradient modes need steps >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub raw_risk: f64,
    pub ema_risk: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub raw: Hypothesis,
    pub ema: Hypothesis,
    pub curve: Vec<CurvePoint>,
    /// Parameter vectors `θ_0..θ_T` (weights then bias) when recording was requested.
    pub trajectory: Vec<Vec<f64>>,
    pub ema_trajectory: Vec<Vec<f64>>,
}

/// Exponential moving average of a parameter vector, initialized at `θ_0`.
#[derive(Clone, Debug)]
pub struct WeightEma {
    decay: f64,
    shadow: Vec<f64>,
}

impl WeightEma {
    pub fn new(initial: &[f64], decay: f64) -> Self {
        WeightEma {
            decay,
            shadow: initial.to_vec(),
        }
    }

    /// `θ̄_t = α θ̄_{t-1} + (1 - α) θ_t`
    pub fn update(&mut self, params: &[f64]) {
        let a = self.decay;
        for (s, p) in self.shadow.iter_mut().zip(params) {
            *s = a * *s + (1.0 - a) * p;
        }
    }

    pub fn value(&self) -> &[f64] {
        &self.shadow
    }
}

/// `θ̄_T = α^T θ_0 + (1 - α) Σ_{t=1..T} α^{T-t} θ_t`
pub fn unrolled_ema(trajectory: &[Vec<f64>], decay: f64) -> Vec<f64> {
    let t_final = trajectory.len() - 1;
    let mut out: Vec<f64> = trajectory[0].iter().map(|v| decay.powi(t_final as i32) * v).collect();
    for (t, theta) in trajectory.iter().enumerate().skip(1) {
        let coeff = (1.0 - decay) * decay.powi((t_final - t) as i32);
        for (o, v) in out.iter_mut().zip(theta) {
            *o += coeff * v;
        }
    }
    out
}

fn to_hypothesis(params: &[f64]) -> Hypothesis {
    let (w, b) = params.split_at(params.len() - 1);
    Hypothesis {
        weights: w.to_vec(),
        bias: b[0],
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mini-batch gradient descent on the logistic surrogate `ln(1 + e^{-y m})`.
///
/// Mini-batches draw a domain uniformly, then a sample within it, so the
/// expected gradient is that of the domain-balanced objective. `l` is the
/// loss reported on the training curve.
pub fn train_gd_ema(config: &TrainConfig, data: &GroupedDataset, l: LossFunction) -> Result<TrainOutcome> {
    config.validate()?;
    if config.mode == TrainMode::GridErm {
        return Err(Error::validation("train_gd_ema needs a gradient mode"));
    }
    data.validate()?;
    let dim = data.groups[0].samples[0].features.len();
    if data.iter_samples().any(|s| s.features.len() != dim) {
        return Err(Error::validation("samples have inconsistent dimensions"));
    }
    let decay = if config.mode == TrainMode::Gd {
        0.0
    } else {
        config.ema_decay
    };

    let mut theta = vec![0.0; dim + 1];
    let mut ema = WeightEma::new(&theta, decay);
    let mut trajectory = Vec::new();
    let mut ema_trajectory = Vec::new();
    if config.record_trajectory {
        trajectory.push(theta.clone());
        ema_trajectory.push(theta.clone());
    }
    let mut curve = Vec::new();
    let full_batch = config.batch_size == 0 || config.batch_size >= data.n_samples();
    let weights = data.balanced_weights();
    let pooled: Vec<&LabeledSample> = data.iter_samples().collect();
    let stream = Stream::new(config.seed).named("minibatch");
    let mut grad = vec![0.0; dim + 1];

    for step in 1..=config.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut accumulate = |s: &LabeledSample, weight: f64| {
            let y = label_sign(s.label);
            let m = s.features.iter().zip(&theta).map(|(x, w)| x * w).sum::<f64>() + theta[dim];
            let coeff = -y * sigmoid(-y * m) * weight;
            for (g, x) in grad.iter_mut().zip(&s.features) {
                *g += coeff * x;
            }
            grad[dim] += coeff;
        };
        if full_batch {
            for (s, w) in pooled.iter().zip(&weights) {
                accumulate(s, *w);
            }
        } else {
            let mut rng = stream.child(step as u64).rng();
            let w = 1.0 / config.batch_size as f64;
            for _ in 0..config.batch_size {
                let g = &data.groups[rng.gen_range(0..data.groups.len())];
                accumulate(&g.samples[rng.gen_range(0..g.samples.len())], w);
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step });
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= config.learning_rate * g;
        }
        ema.update(&theta);
        if config.record_trajectory {
            trajectory.push(theta.clone());
            ema_trajectory.push(ema.value().to_vec());
        }
        if config.curve_every > 0 && (step % config.curve_every == 0 || step == config.steps) {
            curve.push(CurvePoint {
                step,
                raw_risk: empirical_risk(&to_hypothesis(&theta), data, l)?.value,
                ema_risk: empirical_risk(&to_hypothesis(ema.value()), data, l)?.value,
            });
        }
    }
    Ok(TrainOutcome {
        raw: to_hypothesis(&theta),
        ema: to_hypothesis(ema.value()),
        curve,
        trajectory,
        ema_trajectory,
    })
}

/// Monte-Carlo estimate of the population risk on fresh domains and samples.
pub fn population_risk_mc(
    spec: &MetaDistributionSpec,
    h: &Hypothesis,
    l: LossFunction,
    n_eval: usize,
    m_eval: usize,
    stream: u64,
) -> Result<RiskEstimate> {
    let data = GroupedDataset::sample(spec, n_eval, m_eval, stream)?;
    let mut est = empirical_risk(h, &data, l)?;
    est.kind = RiskKind::PopulationMc;
    Ok(est)
}

/// Writes `step,raw_risk,ema_risk` rows.
pub fn write_curve_csv<W: std::io::Write>(mut out: W, curve: &[CurvePoint]) -> Result<()> {
    writeln!(out, "step,raw_risk,ema_risk")?;
    for p in curve {
        writeln!(out, "{},{},{}", p.step, p.raw_risk, p.ema_risk)?;
    }
    Ok(())
}

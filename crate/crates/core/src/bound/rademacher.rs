//! Empirical Rademacher complexity of a finite class.
//!
//! Both levels reduce to the same quantity: for a table of per-member loss
//! profiles `L[f][i]` and point weights `w_i`,
//! `R = E_σ max_f Σ_i w_i σ_i L[f][i]`. At the sample level the points are
//! pooled samples with `w = 1/(n m)`; at the domain level they are domains
//! with `w = 1/n` and `L[f][j]` the domain's empirical risk.
//!
//! Sign vectors are always drawn in antithetic pairs `(σ, -σ)`. The pair
//! average `(max_f v_f + max_f (-v_f)) / 2` is non-negative for any class
//! and exactly zero for a singleton class, in both the exact and Monte-Carlo
//! paths.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::erm::{group_risk, GroupedDataset};
use crate::error::{Error, Result};
use crate::hypothesis::{label_sign, loss, HypothesisGrid, LossFunction};
use crate::rng::Stream;

/// Largest point count the exact path will enumerate.
pub const EXACT_LIMIT: usize = 20;
/// Point count up to which [`SigmaMode::Auto`] enumerates.
pub const AUTO_EXACT_LIMIT: usize = 12;
pub const DEFAULT_SIGMA_DRAWS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComplexityLevel {
    Sample,
    Domain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "draws")]
pub enum SigmaMode {
    /// Enumerate when the point count is at most [`AUTO_EXACT_LIMIT`], else sample.
    Auto(usize),
    Exact,
    MonteCarlo(usize),
}

impl Default for SigmaMode {
    fn default() -> Self {
        SigmaMode::Auto(DEFAULT_SIGMA_DRAWS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub value: f64,
    pub level: ComplexityLevel,
    pub sigma_draws: usize,
    pub exact: bool,
    pub std_error: f64,
}

/// Row-major `members × points` loss table with point weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTable {
    pub members: usize,
    pub points: usize,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LossTable {
    pub fn new(rows: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("loss table needs at least one member"));
        }
        let points = weights.len();
        if points == 0 || rows.iter().any(|r| r.len() != points) {
            return Err(Error::validation("loss table rows must match the weight count"));
        }
        Ok(LossTable {
            members: rows.len(),
            points,
            values: rows.into_iter().flatten().collect(),
            weights,
        })
    }

    pub fn row(&self, f: usize) -> &[f64] {
        &self.values[f * self.points..(f + 1) * self.points]
    }

    /// Per-sample losses of every grid member, weighted `1 / (n m_j)`.
    pub fn from_samples(grid: &HypothesisGrid, data: &GroupedDataset, l: LossFunction) -> Result<Self> {
        data.validate()?;
        let rows = grid
            .members
            .par_iter()
            .map(|h| {
                data.iter_samples()
                    .map(|s| Ok(loss(l, h.margin(&s.features)?, label_sign(s.label))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        LossTable::new(rows, data.balanced_weights())
    }

    /// Per-domain empirical risks of every grid member, weighted `1 / n`.
    pub fn from_domains(grid: &HypothesisGrid, held_out: &GroupedDataset, l: LossFunction) -> Result<Self> {
        held_out.validate()?;
        let rows = grid
            .members
            .par_iter()
            .map(|h| {
                held_out
                    .groups
                    .iter()
                    .map(|g| group_risk(h, g, l))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let n = held_out.n_domains();
        LossTable::new(rows, vec![1.0 / n as f64; n])
    }

    /// `Σ_i w_i L[f][i]` for every member.
    pub fn weighted_means(&self) -> Vec<f64> {
        (0..self.members)
            .map(|f| self.row(f).iter().zip(&self.weights).map(|(v, w)| v * w).sum())
            .collect()
    }

    /// `(max_f v_f + max_f (-v_f)) / 2` for `v_f = Σ_i w_i σ_i L[f][i]`.
    fn pair_value(&self, signs: &[f64], scratch: &mut [f64]) -> f64 {
        for (f, slot) in scratch.iter_mut().enumerate() {
            *slot = self
                .row(f)
                .iter()
                .zip(&self.weights)
                .zip(signs)
                .map(|((v, w), s)| v * w * s)
                .sum();
        }
        pair_from_correlations(scratch)
    }
}

#[inline]
fn pair_from_correlations(v: &[f64]) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::NEG_INFINITY;
    for &x in v {
        hi = hi.max(x);
        lo = lo.max(-x);
    }
    (hi + lo) / 2.0
}

pub fn estimate(table: &LossTable, mode: SigmaMode, level: ComplexityLevel, stream: u64) -> Result<RademacherEstimate> {
    let exact = match mode {
        SigmaMode::Exact => {
            if table.points > EXACT_LIMIT {
                return Err(Error::Resource(format!(
                    "exact enumeration of 2^{} sign vectors exceeds the limit of 2^{EXACT_LIMIT}",
                    table.points
                )));
            }
            true
        }
        SigmaMode::Auto(_) => table.points <= AUTO_EXACT_LIMIT,
        SigmaMode::MonteCarlo(_) => false,
    };
    if exact {
        return Ok(enumerate(table, level));
    }
    let draws = match mode {
        SigmaMode::Auto(s) | SigmaMode::MonteCarlo(s) => s,
        SigmaMode::Exact => unreachable!(),
    };
    if draws == 0 {
        return Err(Error::validation(
            "Monte-Carlo Rademacher estimate needs at least one draw",
        ));
    }
    Ok(monte_carlo(table, draws, level, stream))
}

/// All `2^N` sign vectors, visited as `2^(N-1)` antithetic pairs in Gray-code order.
fn enumerate(table: &LossTable, level: ComplexityLevel) -> RademacherEstimate {
    let n = table.points;
    let pairs: u64 = 1 << (n - 1);
    // v_f at the all-plus vector; flipping point i changes v_f by ∓2 w_i L[f][i].
    let mut signs = vec![1.0; n];
    let mut v: Vec<f64> = table.weighted_means();
    let mut total = pair_from_correlations(&v);
    for k in 1..pairs {
        let i = k.trailing_zeros() as usize;
        signs[i] = -signs[i];
        let delta = 2.0 * signs[i] * table.weights[i];
        for (f, slot) in v.iter_mut().enumerate() {
            *slot += delta * table.values[f * n + i];
        }
        total += pair_from_correlations(&v);
    }
    RademacherEstimate {
        value: (total / pairs as f64).max(0.0),
        level,
        sigma_draws: 1usize << n,
        exact: true,
        std_error: 0.0,
    }
}

fn monte_carlo(table: &LossTable, draws: usize, level: ComplexityLevel, stream: u64) -> RademacherEstimate {
    let pairs = draws.div_ceil(2);
    let base = Stream::new(stream).named("rademacher");
    let values: Vec<f64> = (0..pairs)
        .into_par_iter()
        .map_init(
            || (vec![0.0; table.points], vec![0.0; table.members]),
            |(signs, scratch), p| {
                let mut rng = base.child(p as u64).rng();
                for s in signs.iter_mut() {
                    *s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                }
                table.pair_value(signs, scratch)
            },
        )
        .collect();
    let mean = values.iter().sum::<f64>() / pairs as f64;
    let std_error = if pairs > 1 {
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (pairs - 1) as f64;
        (var / pairs as f64).sqrt()
    } else {
        0.0
    };
    RademacherEstimate {
        value: mean,
        level,
        sigma_draws: 2 * pairs,
        exact: false,
        std_error,
    }
}

/// Sample-level complexity `R_mn` of `grid` on `data`.
pub fn estimate_rademacher_samples(
    grid: &HypothesisGrid,
    data: &GroupedDataset,
    l: LossFunction,
    mode: SigmaMode,
    stream: u64,
) -> Result<RademacherEstimate> {
    if let SigmaMode::Exact = mode {
        if data.n_samples() > EXACT_LIMIT {
            return Err(Error::Resource(format!(
                "exact mode needs n·m <= {EXACT_LIMIT}, got {}",
                data.n_samples()
            )));
        }
    }
    let table = LossTable::from_samples(grid, data, l)?;
    estimate(&table, mode, ComplexityLevel::Sample, stream)
}

/// Domain-level complexity `R_n`, with per-domain risks measured on held-out samples.
pub fn estimate_rademacher_domains(
    grid: &HypothesisGrid,
    held_out: &GroupedDataset,
    l: LossFunction,
    mode: SigmaMode,
    stream: u64,
) -> Result<RademacherEstimate> {
    let table = LossTable::from_domains(grid, held_out, l)?;
    estimate(&table, mode, ComplexityLevel::Domain, stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: direct evaluation over every sign vector.
    fn brute_force(rows: &[Vec<f64>], weights: &[f64]) -> f64 {
        let n = weights.len();
        let mut total = 0.0;
        for mask in 0u64..(1 << n) {
            let best = rows
                .iter()
                .map(|r| {
                    (0..n)
                        .map(|i| {
                            let s = if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
                            s * weights[i] * r[i]
                        })
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            total += best;
        }
        total / (1u64 << n) as f64
    }

    fn random_table(members: usize, points: usize, seed: u64) -> LossTable {
        let mut rng = Stream::new(seed).rng();
        let rows = (0..members)
            .map(|_| (0..points).map(|_| rng.gen::<f64>()).collect())
            .collect();
        LossTable::new(rows, vec![1.0 / points as f64; points]).unwrap()
    }

    #[test]
    fn singleton_is_exactly_zero() {
        let table = LossTable::new(vec![vec![0.3, 0.9, 0.1, 0.7]], vec![0.25; 4]).unwrap();
        for mode in [SigmaMode::Exact, SigmaMode::MonteCarlo(513)] {
            let est = estimate(&table, mode, ComplexityLevel::Sample, 3).unwrap();
            assert_eq!(est.value, 0.0);
        }
    }

    #[test]
    fn one_point_two_members() {
        let table = LossTable::new(vec![vec![0.0], vec![1.0]], vec![1.0]).unwrap();
        let est = estimate(&table, SigmaMode::Exact, ComplexityLevel::Sample, 0).unwrap();
        assert_eq!(est.value, 0.5);
        assert!(est.exact);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn two_domain_enumeration() {
        // profiles (0,1) and (1,0): max over the four sign vectors is 0.5, 0.5, 0.5, -0.5
        let table = LossTable::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap();
        let est = estimate(&table, SigmaMode::Exact, ComplexityLevel::Domain, 0).unwrap();
        assert_eq!(est.value, 0.25);
    }

    #[test]
    fn gray_code_matches_brute_force() {
        for seed in 0..5 {
            let table = random_table(7, 10, seed);
            let rows: Vec<Vec<f64>> = (0..table.members).map(|f| table.row(f).to_vec()).collect();
            let oracle = brute_force(&rows, &table.weights);
            let est = estimate(&table, SigmaMode::Exact, ComplexityLevel::Sample, 0).unwrap();
            assert!((est.value - oracle).abs() < 1e-12, "{} vs {oracle}", est.value);
        }
    }

    #[test]
    fn monte_carlo_within_three_standard_errors() {
        let table = random_table(16, 10, 21);
        let exact = estimate(&table, SigmaMode::Exact, ComplexityLevel::Sample, 0).unwrap();
        let mc = estimate(&table, SigmaMode::MonteCarlo(4096), ComplexityLevel::Sample, 5).unwrap();
        assert!(mc.std_error > 0.0);
        assert!((mc.value - exact.value).abs() <= 3.0 * mc.std_error);
    }

    #[test]
    fn exact_limit_is_enforced() {
        let table = random_table(2, 21, 0);
        assert!(matches!(
            estimate(&table, SigmaMode::Exact, ComplexityLevel::Sample, 0),
            Err(Error::Resource(_))
        ));
        let auto = estimate(&table, SigmaMode::Auto(64), ComplexityLevel::Sample, 0).unwrap();
        assert!(!auto.exact);
        let small = random_table(2, 12, 0);
        assert!(
            estimate(&small, SigmaMode::Auto(64), ComplexityLevel::Sample, 0)
                .unwrap()
                .exact
        );
    }

    #[test]
    fn estimates_are_non_negative() {
        for seed in 0..20 {
            let table = random_table(1 + (seed as usize % 5), 30, seed);
            let est = estimate(&table, SigmaMode::MonteCarlo(16), ComplexityLevel::Sample, seed).unwrap();
            assert!(est.value >= 0.0);
        }
    }
}

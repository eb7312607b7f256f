//! Linear decision functions, finite hypothesis grids, and bounded losses.
//!
//! Labels are binary with sign convention: class index 0 is `+1`, class
//! index 1 is `-1`. Multiclass prediction is an argmax over one hypothesis
//! per class.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Hypothesis {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::validation("hypothesis needs at least one weight"));
        }
        if !weights.iter().all(|w| w.is_finite()) || !bias.is_finite() {
            return Err(Error::validation("hypothesis entries must be finite"));
        }
        Ok(Hypothesis { weights, bias })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// `w·x + b`.
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::validation(format!(
                "dimension mismatch: hypothesis has {}, input has {}",
                self.weights.len(),
                x.len()
            )));
        }
        Ok(self.margin_unchecked(x))
    }

    #[inline]
    pub(crate) fn margin_unchecked(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Predicted class index under the binary sign convention.
    pub fn predict_binary(&self, x: &[f64]) -> Result<usize> {
        Ok(if self.margin(x)? > 0.0 { 0 } else { 1 })
    }
}

pub fn predict_margin(h: &Hypothesis, x: &[f64]) -> Result<f64> {
    h.margin(x)
}

/// Argmax over one scoring hypothesis per class; ties go to the lower index.
pub fn predict_multiclass(per_class: &[Hypothesis], x: &[f64]) -> Result<usize> {
    if per_class.is_empty() {
        return Err(Error::validation("multiclass predictor needs at least one hypothesis"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (k, h) in per_class.iter().enumerate() {
        let m = h.margin(x)?;
        if m > best.1 {
            best = (k, m);
        }
    }
    Ok(best.0)
}

/// Maps a class index to the `±1` label used by margin losses.
#[inline]
pub fn label_sign(class: usize) -> f64 {
    if class == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `clamp((1 - y m) / 2, 0, 1)`; 1/2-Lipschitz in the margin.
    Ramp,
    /// `1{y m <= 0}`; evaluation only.
    ZeroOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFunction {
    pub kind: LossKind,
}

impl LossFunction {
    pub const RAMP: LossFunction = LossFunction { kind: LossKind::Ramp };
    pub const ZERO_ONE: LossFunction = LossFunction {
        kind: LossKind::ZeroOne,
    };

    #[inline]
    pub fn eval(&self, margin: f64, y_sign: f64) -> f64 {
        loss(*self, margin, y_sign)
    }
}

#[inline]
pub fn loss(l: LossFunction, margin: f64, y_sign: f64) -> f64 {
    debug_assert!(y_sign == 1.0 || y_sign == -1.0);
    let signed = y_sign * margin;
    match l.kind {
        LossKind::Ramp => ((1.0 - signed) / 2.0).clamp(0.0, 1.0),
        LossKind::ZeroOne => {
            if signed <= 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridConstruction {
    SphereGrid,
    SeededRandom,
}

/// Parameters of a finite hypothesis class.
///
/// Members are enumerated direction-major: every direction is paired with
/// every level of a symmetric bias ladder on `[-bias_span, bias_span]`, and
/// the list is truncated to `size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub size: usize,
    pub construction: GridConstruction,
    pub seed: u64,
    pub weight_cap: f64,
    #[serde(default = "default_bias_levels")]
    pub bias_levels: usize,
    #[serde(default = "default_bias_span")]
    pub bias_span: f64,
}

fn default_bias_levels() -> usize {
    1
}

fn default_bias_span() -> f64 {
    1.0
}

impl GridSpec {
    pub fn new(dim: usize, size: usize, construction: GridConstruction, seed: u64) -> Self {
        GridSpec {
            dim,
            size,
            construction,
            seed,
            weight_cap: 1.0,
            bias_levels: 1,
            bias_span: 1.0,
        }
    }

    pub fn with_bias_ladder(mut self, levels: usize, span: f64) -> Self {
        self.bias_levels = levels;
        self.bias_span = span;
        self
    }

    pub fn with_weight_cap(mut self, cap: f64) -> Self {
        self.weight_cap = cap;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisGrid {
    pub members: Vec<Hypothesis>,
    pub construction: GridConstruction,
    pub seed: u64,
}

impl HypothesisGrid {
    pub fn from_members(members: Vec<Hypothesis>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::validation("hypothesis grid must be non-empty"));
        }
        let dim = members[0].dim();
        if members.iter().any(|h| h.dim() != dim) {
            return Err(Error::validation("grid members must share one dimension"));
        }
        Ok(HypothesisGrid {
            members,
            construction: GridConstruction::SeededRandom,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn build_grid(
    dim: usize,
    size: usize,
    construction: GridConstruction,
    seed: u64,
    weight_cap: f64,
) -> Result<HypothesisGrid> {
    build_grid_from(&GridSpec::new(dim, size, construction, seed).with_weight_cap(weight_cap))
}

pub fn build_grid_from(spec: &GridSpec) -> Result<HypothesisGrid> {
    if spec.size == 0 {
        return Err(Error::validation("grid size must be at least 1"));
    }
    if spec.dim == 0 {
        return Err(Error::validation("grid dimension must be at least 1"));
    }
    if !(spec.weight_cap.is_finite() && spec.weight_cap > 0.0) {
        return Err(Error::validation("weight_cap must be positive and finite"));
    }
    if spec.bias_levels == 0 || !(spec.bias_span.is_finite() && spec.bias_span >= 0.0) {
        return Err(Error::validation("bias ladder needs >= 1 level and a finite span"));
    }

    let mut levels = spec.bias_levels;
    if spec.dim == 1 {
        // Only two unit directions exist on the line; the rest must come from biases.
        levels = levels.max(spec.size.div_ceil(2));
    }
    let ladder = bias_ladder(levels, spec.bias_span);
    let n_dirs = spec.size.div_ceil(ladder.len());

    let directions = match spec.construction {
        GridConstruction::SphereGrid => sphere_directions(spec.dim, n_dirs, spec.seed),
        GridConstruction::SeededRandom => random_directions(spec.dim, n_dirs, spec.seed),
    };

    let mut members = Vec::with_capacity(spec.size);
    'outer: for dir in &directions {
        let weights: Vec<f64> = dir.iter().map(|v| v * spec.weight_cap).collect();
        for &b in &ladder {
            if members.len() == spec.size {
                break 'outer;
            }
            members.push(Hypothesis {
                weights: weights.clone(),
                bias: b,
            });
        }
    }
    if members.len() < spec.size {
        return Err(Error::validation(format!(
            "cannot place {} distinct members in dimension {} with {} bias levels",
            spec.size,
            spec.dim,
            ladder.len()
        )));
    }
    Ok(HypothesisGrid {
        members,
        construction: spec.construction,
        seed: spec.seed,
    })
}

fn bias_ladder(levels: usize, span: f64) -> Vec<f64> {
    if levels == 1 || span == 0.0 {
        return vec![0.0];
    }
    (0..levels)
        .map(|k| -span + 2.0 * span * k as f64 / (levels - 1) as f64)
        .collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Deterministic near-uniform directions: exact on the line and the circle,
/// Halton points pushed through the normal quantile elsewhere.
fn sphere_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match dim {
        1 => [1.0, -1.0].iter().take(count).map(|&s| vec![s]).collect(),
        2 => (0..count)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![angle.cos(), angle.sin()]
            })
            .collect(),
        _ => {
            use statrs::distribution::{ContinuousCDF, Normal};
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let primes = first_primes(dim);
            let skip = 1 + (seed % 1024);
            (0..count as u64)
                .map(|k| {
                    let v = primes
                        .iter()
                        .map(|&p| normal.inverse_cdf(radical_inverse(k + skip, p)))
                        .collect();
                    normalize(v)
                })
                .collect()
        }
    }
}

fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    if dim == 1 {
        return sphere_directions(1, count, seed);
    }
    let stream = Stream::new(seed).named("grid-directions");
    (0..count as u64)
        .map(|k| {
            let mut rng = stream.child(k).rng();
            normalize((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        })
        .collect()
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut factor = inv;
    let mut acc = 0.0;
    while index > 0 {
        acc += (index % base) as f64 * factor;
        index /= base;
        factor *= inv;
    }
    acc
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|&p| !candidate.is_multiple_of(p))
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};

    #[test]
    fn margin_arithmetic() {
        let zero = Hypothesis::new(vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(zero.margin(&[3.0, -7.0]).unwrap(), 0.0);
        let h = Hypothesis::new(vec![1.0, 0.0], -1.0).unwrap();
        assert_eq!(predict_margin(&h, &[3.0, 5.0]).unwrap(), 2.0);
        assert!(matches!(h.margin(&[1.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn margin_matches_independent_dot_product() {
        // Second routine: index-based accumulation in reverse order.
        fn dot_rev(w: &[f64], x: &[f64]) -> f64 {
            let mut acc = 0.0;
            for i in (0..w.len()).rev() {
                acc += w[i] * x[i];
            }
            acc
        }
        let mut rng = Stream::new(11).rng();
        let h = Hypothesis::new((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0.3).unwrap();
        let w2: f64 = h.weights.iter().map(|w| w * w).sum();
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let m = h.margin(&x).unwrap();
            assert!((m - (dot_rev(&h.weights, &x) + h.bias)).abs() < 1e-12);
            // Reflection through the decision boundary flips the margin's sign.
            let reflected: Vec<f64> = x
                .iter()
                .zip(&h.weights)
                .map(|(xi, wi)| xi - 2.0 * m / w2 * wi)
                .collect();
            assert!((m + h.margin(&reflected).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn multiclass_argmax() {
        let hs = vec![
            Hypothesis::new(vec![1.0, 0.0], 0.0).unwrap(),
            Hypothesis::new(vec![0.0, 1.0], 0.0).unwrap(),
        ];
        assert_eq!(predict_multiclass(&hs, &[2.0, 1.0]).unwrap(), 0);
        assert_eq!(predict_multiclass(&hs, &[0.0, 1.0]).unwrap(), 1);
    }

    #[test]
    fn ramp_loss_examples() {
        assert_eq!(loss(LossFunction::RAMP, 1.0, 1.0), 0.0);
        assert_eq!(loss(LossFunction::RAMP, 0.0, 1.0), 0.5);
        assert_eq!(loss(LossFunction::RAMP, 0.0, -1.0), 0.5);
        assert_eq!(loss(LossFunction::RAMP, -3.0, 1.0), 1.0);
        assert_eq!(loss(LossFunction::ZERO_ONE, 0.0, 1.0), 1.0);
        assert_eq!(loss(LossFunction::ZERO_ONE, 0.1, 1.0), 0.0);
        assert_eq!(loss(LossFunction::ZERO_ONE, 0.1, -1.0), 1.0);
    }

    proptest! {
        #[test]
        fn ramp_is_bounded_and_half_lipschitz(m1 in -50.0f64..50.0, m2 in -50.0f64..50.0, pos in any::<bool>()) {
            let y = if pos { 1.0 } else { -1.0 };
            let a = loss(LossFunction::RAMP, m1, y);
            let b = loss(LossFunction::RAMP, m2, y);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() <= (m1 - m2).abs() / 2.0 + 1e-15);
            let z = loss(LossFunction::ZERO_ONE, m1, y);
            prop_assert!(z == 0.0 || z == 1.0);
        }
    }

    #[test]
    fn grid_basics() {
        let g = build_grid(3, 1, GridConstruction::SphereGrid, 0, 1.0).unwrap();
        assert_eq!(g.len(), 1);
        assert!(matches!(
            build_grid(3, 0, GridConstruction::SphereGrid, 0, 1.0),
            Err(Error::Validation(_))
        ));
        for construction in [GridConstruction::SphereGrid, GridConstruction::SeededRandom] {
            let spec = GridSpec::new(4, 30, construction, 9).with_bias_ladder(3, 0.5);
            let a = build_grid_from(&spec).unwrap();
            let b = build_grid_from(&spec).unwrap();
            assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
            assert_eq!(a.len(), 30);
            for h in &a.members {
                assert!((h.weight_norm() - 1.0).abs() < 1e-12);
            }
            for i in 0..a.len() {
                for j in 0..i {
                    assert_ne!(a.members[i], a.members[j]);
                }
            }
        }
    }

    #[test]
    fn circle_grid_angular_gaps() {
        let g = build_grid(2, 8, GridConstruction::SphereGrid, 0, 1.0).unwrap();
        // brute-force: for every member, the nearest other member's angle
        let ideal = 45.0f64;
        for (i, a) in g.members.iter().enumerate() {
            let nearest = g
                .members
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| {
                    let cos = (a.weights[0] * b.weights[0] + a.weights[1] * b.weights[1]).clamp(-1.0, 1.0);
                    cos.acos().to_degrees()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(nearest >= ideal / 2.0 && nearest <= ideal * 2.0, "gap {nearest}");
        }
    }

    #[test]
    fn line_grid_uses_thresholds() {
        let g =
            build_grid_from(&GridSpec::new(1, 10, GridConstruction::SphereGrid, 0).with_bias_ladder(1, 2.0)).unwrap();
        assert_eq!(g.len(), 10);
        assert!(g.members.iter().all(|h| h.weights[0].abs() == 1.0));
    }

    #[test]
    fn grid_is_identical_across_threads() {
        let spec = GridSpec::new(5, 64, GridConstruction::SeededRandom, 3).with_bias_ladder(4, 1.0);
        let base = build_grid_from(&spec).unwrap().to_json().unwrap();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let spec = spec.clone();
                std::thread::spawn(move || build_grid_from(&spec).unwrap().to_json().unwrap())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), base);
        }
    }
}

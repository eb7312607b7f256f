//! Gaussian meta-distribution over domains.
//!
//! A domain is a shift vector `δ ~ N(0, τ² I)`. Within a domain a sample of
//! class `y` is `x = c·p(y) + b + δ + N(0, σ² I)`, where `p(y)` is a fixed
//! unit prototype and `b` is the prototype offset introduced by perturbation.
//! Marginalizing the shift gives class-conditionals `N(c·p(y) + b, (σ² + τ²) I)`,
//! which is what the closed-form risk oracle integrates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{label_sign, Hypothesis, LossKind};
use crate::normal;
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaDistributionSpec {
    pub dim: usize,
    pub class_count: usize,
    pub prototype_scale: f64,
    pub domain_shift_scale: f64,
    pub noise_scale: f64,
    pub label_prior: Vec<f64>,
    pub seed: u64,
    /// Offset added to every scaled prototype; all zeros for an unperturbed spec.
    pub prototype_offset: Vec<f64>,
}

impl MetaDistributionSpec {
    /// Balanced spec with zero offset.
    pub fn new(
        dim: usize,
        class_count: usize,
        prototype_scale: f64,
        domain_shift_scale: f64,
        noise_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let spec = MetaDistributionSpec {
            dim,
            class_count,
            prototype_scale,
            domain_shift_scale,
            noise_scale,
            label_prior: vec![1.0 / class_count.max(1) as f64; class_count],
            seed,
            prototype_offset: vec![0.0; dim],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::validation("dim must be >= 1"));
        }
        if self.class_count < 2 {
            return Err(Error::validation("class_count must be >= 2"));
        }
        if !(self.prototype_scale.is_finite() && self.prototype_scale > 0.0) {
            return Err(Error::validation("prototype_scale must be positive and finite"));
        }
        if !(self.domain_shift_scale.is_finite() && self.domain_shift_scale >= 0.0) {
            return Err(Error::validation("domain_shift_scale must be non-negative and finite"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(Error::validation("noise_scale must be positive and finite"));
        }
        if self.label_prior.len() != self.class_count
            || self.label_prior.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (self.label_prior.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::validation(
                "label_prior must be a probability vector over classes",
            ));
        }
        if self.prototype_offset.len() != self.dim || self.prototype_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(
                "prototype_offset must be a finite vector of length dim",
            ));
        }
        Ok(())
    }

    /// Unit prototype of every class.
    ///
    /// Standard basis vectors while classes fit; then their negatives; then
    /// seeded unit vectors.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let stream = Stream::new(self.seed).named("prototypes");
        (0..self.class_count)
            .map(|k| {
                let mut p = vec![0.0; self.dim];
                if k < self.dim {
                    p[k] = 1.0;
                } else if k < 2 * self.dim {
                    p[k - self.dim] = -1.0;
                } else {
                    let mut rng = stream.child(k as u64).rng();
                    p.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                    p.iter_mut().for_each(|v| *v /= norm);
                }
                p
            })
            .collect()
    }

    /// Mean of class `y` marginally over domains: `c·p(y) + b`.
    pub fn class_mean(&self, y: usize) -> Vec<f64> {
        let p = &self.prototypes()[y];
        p.iter()
            .zip(&self.prototype_offset)
            .map(|(pi, bi)| self.prototype_scale * pi + bi)
            .collect()
    }

    /// Per-coordinate standard deviation after marginalizing the domain shift.
    pub fn total_scale(&self) -> f64 {
        (self.noise_scale.powi(2) + self.domain_shift_scale.powi(2)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: u64,
    pub shift_vector: Vec<f64>,
    pub parent_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    #[serde(rename = "x")]
    pub features: Vec<f64>,
    #[serde(rename = "y")]
    pub label: usize,
    pub domain_id: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub prototype_offset: Vec<f64>,
    pub shift_scale_factor: f64,
    pub noise_scale_factor: f64,
}

impl PerturbationSpec {
    pub fn identity(dim: usize) -> Self {
        PerturbationSpec {
            prototype_offset: vec![0.0; dim],
            shift_scale_factor: 1.0,
            noise_scale_factor: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.shift_scale_factor == 1.0
            && self.noise_scale_factor == 1.0
            && self.prototype_offset.iter().all(|v| *v == 0.0)
    }

    /// Undoes `self`: negated offset and reciprocal factors.
    pub fn inverse(&self) -> Self {
        PerturbationSpec {
            prototype_offset: self.prototype_offset.iter().map(|v| -v).collect(),
            shift_scale_factor: 1.0 / self.shift_scale_factor,
            noise_scale_factor: 1.0 / self.noise_scale_factor,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.prototype_offset.len() != dim || self.prototype_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(
                "perturbation offset must be a finite vector of length dim",
            ));
        }
        for (name, f) in [
            ("shift_scale_factor", self.shift_scale_factor),
            ("noise_scale_factor", self.noise_scale_factor),
        ] {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::validation(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// Draws `n` domains; domain `j` is a pure function of `(spec.seed, stream, j)`.
pub fn sample_domains(spec: &MetaDistributionSpec, n: usize, stream: u64) -> Result<Vec<DomainSpec>> {
    if n == 0 {
        return Err(Error::EmptyRequest("sample_domains needs n >= 1"));
    }
    spec.validate()?;
    let base = Stream::new(spec.seed).named("domains").child(stream);
    Ok((0..n as u64)
        .map(|j| {
            let node = base.child(j);
            let mut rng = node.named("shift").rng();
            let shift_vector = (0..spec.dim)
                .map(|_| spec.domain_shift_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            DomainSpec {
                domain_id: j,
                shift_vector,
                parent_seed: node.key(),
            }
        })
        .collect())
}

/// Draws `m` labeled samples from one domain; sample `i` is a pure function of
/// `(domain.parent_seed, stream, i)`.
pub fn sample_dataset(
    spec: &MetaDistributionSpec,
    domain: &DomainSpec,
    m: usize,
    stream: u64,
) -> Result<Vec<LabeledSample>> {
    if m == 0 {
        return Err(Error::EmptyRequest("sample_dataset needs m >= 1"));
    }
    spec.validate()?;
    if domain.shift_vector.len() != spec.dim {
        return Err(Error::validation("domain shift has the wrong dimension"));
    }
    let means: Vec<Vec<f64>> = (0..spec.class_count).map(|y| spec.class_mean(y)).collect();
    let base = Stream::from_key(domain.parent_seed).named("samples").child(stream);
    Ok((0..m as u64)
        .map(|i| {
            let mut rng = base.child(i).rng();
            let label = draw_label(&spec.label_prior, rng.gen::<f64>());
            let features = means[label]
                .iter()
                .zip(&domain.shift_vector)
                .map(|(mu, d)| mu + d + spec.noise_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            LabeledSample {
                features,
                label,
                domain_id: domain.domain_id,
            }
        })
        .collect())
}

fn draw_label(prior: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in prior.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left u beyond the last cumulative bound
    prior.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

pub fn perturb_meta(spec: &MetaDistributionSpec, p: &PerturbationSpec) -> Result<MetaDistributionSpec> {
    spec.validate()?;
    p.validate(spec.dim)?;
    let mut out = spec.clone();
    out.prototype_offset = spec
        .prototype_offset
        .iter()
        .zip(&p.prototype_offset)
        .map(|(a, b)| a + b)
        .collect();
    out.domain_shift_scale = spec.domain_shift_scale * p.shift_scale_factor;
    out.noise_scale = spec.noise_scale * p.noise_scale_factor;
    out.validate()?;
    Ok(out)
}

/// Exact population risk of a linear hypothesis on a binary spec.
///
/// For class `y` the signed margin `s·(w·x + b)` is Gaussian with mean
/// `s·(w·μ_y + b)` and standard deviation `‖w‖·√(σ² + τ²)`.
pub fn closed_form_risk(spec: &MetaDistributionSpec, h: &Hypothesis, loss_kind: LossKind) -> Result<f64> {
    spec.validate()?;
    if spec.class_count != 2 {
        return Err(Error::UnsupportedOracle(format!(
            "closed-form risk needs binary classes, spec has {}",
            spec.class_count
        )));
    }
    if h.dim() != spec.dim {
        return Err(Error::UnsupportedOracle(format!(
            "hypothesis dimension {} does not match spec dimension {}",
            h.dim(),
            spec.dim
        )));
    }
    let sd = h.weight_norm() * spec.total_scale();
    let mut risk = 0.0;
    for y in 0..2 {
        let mean = label_sign(y) * h.margin_unchecked(&spec.class_mean(y));
        let class_risk = match loss_kind {
            LossKind::ZeroOne => {
                if sd == 0.0 {
                    if mean <= 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    normal::cdf(-mean / sd)
                }
            }
            LossKind::Ramp => normal::expected_ramp(mean, sd),
        };
        risk += spec.label_prior[y] * class_risk;
    }
    Ok(risk.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_1d(c: f64, tau: f64, sigma: f64) -> MetaDistributionSpec {
        MetaDistributionSpec::new(1, 2, c, tau, sigma, 42).unwrap()
    }

    #[test]
    fn zero_shift_domains_are_identical() {
        let spec = MetaDistributionSpec::new(3, 2, 1.0, 0.0, 1.0, 5).unwrap();
        let ds = sample_domains(&spec, 3, 0).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.iter().all(|d| d.shift_vector == vec![0.0; 3]));
        assert!(matches!(sample_domains(&spec, 0, 0), Err(Error::EmptyRequest(_))));
    }

    #[test]
    fn domains_are_deterministic() {
        let spec = MetaDistributionSpec::new(4, 3, 1.0, 0.7, 1.0, 5).unwrap();
        assert_eq!(
            sample_domains(&spec, 5, 2).unwrap(),
            sample_domains(&spec, 5, 2).unwrap()
        );
        assert_ne!(
            sample_domains(&spec, 5, 2).unwrap(),
            sample_domains(&spec, 5, 3).unwrap()
        );
        // prefix property: domain j does not depend on n
        let short = sample_domains(&spec, 2, 2).unwrap();
        assert_eq!(&sample_domains(&spec, 5, 2).unwrap()[..2], &short[..]);
    }

    #[test]
    fn shift_moments() {
        let spec = binary_1d(1.0, 1.0, 1.0);
        let ds = sample_domains(&spec, 10_000, 0).unwrap();
        let xs: Vec<f64> = ds.iter().map(|d| d.shift_vector[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((sd - 1.0).abs() < 0.05, "sd {sd}");
    }

    #[test]
    fn noiseless_samples_sit_on_prototypes() {
        // sigma must be positive, so use a value far below f64 resolution at c = 2
        let spec = binary_1d(2.0, 0.0, 1e-300);
        let d = &sample_domains(&spec, 1, 0).unwrap()[0];
        for s in sample_dataset(&spec, d, 200, 0).unwrap() {
            let expected = if s.label == 0 { 2.0 } else { -2.0 };
            assert_eq!(s.features[0], expected);
        }
    }

    #[test]
    fn balanced_label_frequencies() {
        let spec = binary_1d(1.0, 0.5, 1.0);
        let d = &sample_domains(&spec, 1, 0).unwrap()[0];
        let data = sample_dataset(&spec, d, 10_000, 0).unwrap();
        let frac = data.iter().filter(|s| s.label == 0).count() as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
        assert_eq!(data, sample_dataset(&spec, d, 10_000, 0).unwrap());
        assert!(matches!(sample_dataset(&spec, d, 0, 0), Err(Error::EmptyRequest(_))));
    }

    #[test]
    fn sample_moments_match_spec() {
        // pooled over many domains, class-0 coordinate 0 has mean c and variance σ² + τ²
        let spec = MetaDistributionSpec::new(2, 2, 1.5, 0.6, 0.8, 9).unwrap();
        let domains = sample_domains(&spec, 400, 0).unwrap();
        let mut xs = Vec::new();
        for d in &domains {
            for s in sample_dataset(&spec, d, 50, 0).unwrap() {
                if s.label == 0 {
                    xs.push(s.features[0]);
                }
            }
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // clustering by domain inflates the mean's variance: τ²/n_domains + σ²/n
        let se = (0.36 / 400.0 + 0.64 / n).sqrt();
        assert!((mean - 1.5).abs() < 3.0 * se, "mean {mean} se {se}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn perturbation_arithmetic() {
        let spec = MetaDistributionSpec::new(2, 2, 1.0, 0.5, 1.0, 1).unwrap();
        assert_eq!(perturb_meta(&spec, &PerturbationSpec::identity(2)).unwrap(), spec);
        let p = PerturbationSpec {
            prototype_offset: vec![0.3, -0.1],
            shift_scale_factor: 2.0,
            noise_scale_factor: 0.7,
        };
        let q = perturb_meta(&spec, &p).unwrap();
        assert_eq!(q.domain_shift_scale, 1.0);
        let back = perturb_meta(&q, &p.inverse()).unwrap();
        assert!((back.domain_shift_scale - spec.domain_shift_scale).abs() < 1e-12);
        assert!((back.noise_scale - spec.noise_scale).abs() < 1e-12);
        for (a, b) in back.prototype_offset.iter().zip(&spec.prototype_offset) {
            assert!((a - b).abs() < 1e-12);
        }
        let bad = PerturbationSpec {
            shift_scale_factor: 0.0,
            ..p
        };
        assert!(matches!(perturb_meta(&spec, &bad), Err(Error::Validation(_))));
    }

    #[test]
    fn prototypes_fallbacks() {
        let line = binary_1d(1.0, 0.0, 1.0);
        assert_eq!(line.prototypes(), vec![vec![1.0], vec![-1.0]]);
        let many = MetaDistributionSpec::new(2, 6, 1.0, 0.0, 1.0, 3).unwrap();
        let ps = many.prototypes();
        for p in &ps {
            assert!((p.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(ps[0], vec![1.0, 0.0]);
        assert_eq!(ps[3], vec![0.0, -1.0]);
    }

    /// Φ by Simpson quadrature of the density, independent of erfc.
    fn phi_quadrature(z: f64) -> f64 {
        let a = -12.0;
        let steps = 20_000;
        let h = (z - a) / steps as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = f(a) + f(z);
        for i in 1..steps {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn closed_form_threshold_risk() {
        let spec = binary_1d(1.0, 0.0, 1.0);
        let h = Hypothesis::new(vec![1.0], 0.0).unwrap();
        let r = closed_form_risk(&spec, &h, LossKind::ZeroOne).unwrap();
        assert!((r - phi_quadrature(-1.0)).abs() < 1e-10, "{r}");
        assert!((r - 0.1587).abs() < 1e-4);
    }

    #[test]
    fn closed_form_limits() {
        let far = binary_1d(20.0, 0.0, 1.0);
        let h = Hypothesis::new(vec![1.0], 0.0).unwrap();
        assert!(closed_form_risk(&far, &h, LossKind::ZeroOne).unwrap() < 1e-6);
        // boundary orthogonal to the prototype difference e0 - e1
        let plane = MetaDistributionSpec::new(3, 2, 2.0, 0.3, 1.0, 0).unwrap();
        let ortho = Hypothesis::new(vec![1.0, 1.0, 0.0], 0.0).unwrap();
        let r = closed_form_risk(&plane, &ortho, LossKind::ZeroOne).unwrap();
        assert!((r - 0.5).abs() < 1e-12, "{r}");
        let multi = MetaDistributionSpec::new(3, 3, 1.0, 0.0, 1.0, 0).unwrap();
        assert!(matches!(
            closed_form_risk(&multi, &ortho, LossKind::ZeroOne),
            Err(Error::UnsupportedOracle(_))
        ));
    }

    fn monte_carlo_risk(spec: &MetaDistributionSpec, h: &Hypothesis, kind: LossKind, n: usize, m: usize) -> f64 {
        use crate::hypothesis::{loss, LossFunction};
        let l = LossFunction { kind };
        let domains = sample_domains(spec, n, 77).unwrap();
        let mut total = 0.0;
        for d in &domains {
            for s in sample_dataset(spec, d, m, 0).unwrap() {
                total += loss(l, h.margin(&s.features).unwrap(), label_sign(s.label));
            }
        }
        total / (n * m) as f64
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form() {
        let mut spec = MetaDistributionSpec::new(2, 2, 1.0, 0.5, 0.8, 13).unwrap();
        spec.prototype_offset = vec![0.2, -0.1];
        for h in [
            Hypothesis::new(vec![0.6, -0.8], 0.1).unwrap(),
            Hypothesis::new(vec![0.3, 0.9], -0.4).unwrap(),
        ] {
            for kind in [LossKind::ZeroOne, LossKind::Ramp] {
                let mc = monte_carlo_risk(&spec, &h, kind, 500, 100);
                let exact = closed_form_risk(&spec, &h, kind).unwrap();
                assert!((mc - exact).abs() < 0.01, "{kind:?}: mc {mc} exact {exact}");
            }
        }
    }
}

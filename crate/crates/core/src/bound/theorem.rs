use serde::{Deserialize, Serialize};

use super::rademacher::RademacherEstimate;
use crate::error::{Error, Result};

/// Which form of the domain-level confidence radical to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundVariant {
    /// `3 √(ln(2/δ) / n)`
    MainText,
    /// `3 √(ln(2/δ) / (2n))`, the form produced by the domain-level derivation.
    #[default]
    Appendix,
}

/// Inputs to the bound, before assembly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub empirical_proxy_risk: f64,
    pub r_mn: RademacherEstimate,
    pub r_n: RademacherEstimate,
    pub delta: f64,
    /// Measured `D(μ, μ')`.
    pub epsilon_true: f64,
    /// Overrides the measured distance in the bound when set.
    pub epsilon_assumed: Option<f64>,
    pub n: usize,
    pub m: usize,
    pub variant: BoundVariant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub empirical_proxy_risk: f64,
    pub r_mn: RademacherEstimate,
    pub r_n: RademacherEstimate,
    pub delta: f64,
    pub epsilon_true: f64,
    pub epsilon_assumed: Option<f64>,
    pub sample_confidence: f64,
    pub domain_confidence: f64,
    pub bound_value: f64,
    /// `L^μ(f̂)`, filled in by whoever has access to the target distribution.
    pub true_risk: Option<f64>,
    pub variant: BoundVariant,
    pub n: usize,
    pub m: usize,
}

/// `3 √(ln(2/δ) / (2 m n))`
pub fn sample_confidence(delta: f64, n: usize, m: usize) -> f64 {
    3.0 * ((2.0 / delta).ln() / (2.0 * m as f64 * n as f64)).sqrt()
}

pub fn domain_confidence(delta: f64, n: usize, variant: BoundVariant) -> f64 {
    let denom = match variant {
        BoundVariant::MainText => n as f64,
        BoundVariant::Appendix => 2.0 * n as f64,
    };
    3.0 * ((2.0 / delta).ln() / denom).sqrt()
}

impl BoundReport {
    pub fn epsilon_used(&self) -> f64 {
        self.epsilon_assumed.unwrap_or(self.epsilon_true)
    }

    /// Re-derives the bound from the stored fields.
    pub fn recompute(&self) -> f64 {
        assemble(
            self.empirical_proxy_risk,
            self.r_mn.value,
            self.r_n.value,
            sample_confidence(self.delta, self.n, self.m),
            domain_confidence(self.delta, self.n, self.variant),
            self.epsilon_used(),
        )
    }

    pub fn violated(&self) -> Option<bool> {
        self.true_risk.map(|t| t > self.bound_value)
    }
}

fn assemble(emp: f64, r_mn: f64, r_n: f64, c_sample: f64, c_domain: f64, eps: f64) -> f64 {
    emp + 2.0 * r_mn + 2.0 * r_n + c_sample + c_domain + eps
}

pub fn theorem1_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    if !(inputs.delta > 0.0 && inputs.delta < 0.5) {
        return Err(Error::validation(format!(
            "delta must lie in (0, 0.5), got {}",
            inputs.delta
        )));
    }
    if inputs.n == 0 || inputs.m == 0 {
        return Err(Error::validation("n and m must be at least 1"));
    }
    let finite = [
        inputs.empirical_proxy_risk,
        inputs.r_mn.value,
        inputs.r_n.value,
        inputs.epsilon_true,
        inputs.epsilon_assumed.unwrap_or(0.0),
    ];
    if finite.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("bound inputs must be finite"));
    }
    let sample_c = sample_confidence(inputs.delta, inputs.n, inputs.m);
    let domain_c = domain_confidence(inputs.delta, inputs.n, inputs.variant);
    let eps = inputs.epsilon_assumed.unwrap_or(inputs.epsilon_true);
    Ok(BoundReport {
        empirical_proxy_risk: inputs.empirical_proxy_risk,
        r_mn: inputs.r_mn,
        r_n: inputs.r_n,
        delta: inputs.delta,
        epsilon_true: inputs.epsilon_true,
        epsilon_assumed: inputs.epsilon_assumed,
        sample_confidence: sample_c,
        domain_confidence: domain_c,
        bound_value: assemble(
            inputs.empirical_proxy_risk,
            inputs.r_mn.value,
            inputs.r_n.value,
            sample_c,
            domain_c,
            eps,
        ),
        true_risk: None,
        variant: inputs.variant,
        n: inputs.n,
        m: inputs.m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bound::rademacher::ComplexityLevel;

    fn zero(level: ComplexityLevel) -> RademacherEstimate {
        RademacherEstimate {
            value: 0.0,
            level,
            sigma_draws: 2,
            exact: true,
            std_error: 0.0,
        }
    }

    fn inputs(n: usize, m: usize, eps: f64) -> BoundInputs {
        BoundInputs {
            empirical_proxy_risk: 0.2,
            r_mn: zero(ComplexityLevel::Sample),
            r_n: zero(ComplexityLevel::Domain),
            delta: 0.05,
            epsilon_true: eps,
            epsilon_assumed: None,
            n,
            m,
            variant: BoundVariant::Appendix,
        }
    }

    #[test]
    fn appendix_radicals() {
        let r = theorem1_bound(&inputs(100, 100, 0.0)).unwrap();
        let expected = 0.2 + 3.0 * (40f64.ln() / 20_000.0).sqrt() + 3.0 * (40f64.ln() / 200.0).sqrt();
        assert!((r.bound_value - expected).abs() < 1e-14);
        let main = theorem1_bound(&BoundInputs {
            variant: BoundVariant::MainText,
            ..inputs(100, 100, 0.0)
        })
        .unwrap();
        assert!((main.domain_confidence - 3.0 * (40f64.ln() / 100.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn monotone_in_counts_and_additive_in_epsilon() {
        let b = |n, m| theorem1_bound(&inputs(n, m, 0.0)).unwrap().bound_value;
        assert!(b(32, 50) < b(8, 50));
        assert!(b(8, 160) < b(8, 40));
        let e = 0.137;
        let diff = theorem1_bound(&inputs(10, 50, e)).unwrap().bound_value - b(10, 50);
        assert!((diff - e).abs() < 1e-15);
    }

    #[test]
    fn assumed_epsilon_overrides_measured() {
        let r = theorem1_bound(&BoundInputs {
            epsilon_assumed: Some(0.3),
            ..inputs(10, 10, 0.1)
        })
        .unwrap();
        assert_eq!(r.epsilon_used(), 0.3);
        assert!((r.recompute() - r.bound_value).abs() <= 1e-12);
    }

    #[test]
    fn delta_is_validated() {
        for delta in [0.0, 0.5, 0.7, -0.1, f64::NAN] {
            assert!(matches!(
                theorem1_bound(&BoundInputs {
                    delta,
                    ..inputs(10, 10, 0.0)
                }),
                Err(Error::Validation(_))
            ));
        }
    }
}

//! Terms of the proxy-distribution generalization bound.
//!
//! With probability at least `1 - 2δ`, for every `f` in a finite class `F`,
//!
//! ```text
//! L^μ(f) <= L̂^{μ'}(f) + 2 R_mn(F) + 2 R_n(F)
//!           + 3 √(ln(2/δ) / (2mn)) + 3 √(ln(2/δ) / c·n) + ε
//! ```
//!
//! where `c = 1` or `c = 2` depending on [`BoundVariant`] and
//! `ε >= D(μ, μ') = sup_f |L^{μ'}(f) - L^μ(f)|`. The supremum over `F` is the
//! same finite grid everywhere (distance, complexities, ERM).

pub mod distance;
pub mod experiment;
pub mod rademacher;
pub mod theorem;

pub use distance::{estimate_meta_distance, EvalBudget, MetaDistance};
pub use experiment::{
    bound_experiment, median, target_risk, BoundExperiment, BoundExperimentConfig, ExperimentSummary, TrialRow,
};
pub use rademacher::{
    estimate_rademacher_domains, estimate_rademacher_samples, ComplexityLevel, LossTable, RademacherEstimate, SigmaMode,
};
pub use theorem::{theorem1_bound, BoundInputs, BoundReport, BoundVariant};

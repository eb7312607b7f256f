//! Scaling, variance and data-free experiments on the mock stack.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use domex_core::bound::{estimate_meta_distance, median, EvalBudget};
use domex_core::erm::GroupedDataset;
use domex_core::meta_sim::{perturb_meta, MetaDistributionSpec, PerturbationSpec};
use domex_core::rng::Stream;

use crate::config::{BackendKind, RunConfig, VarianceStage};
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    evaluate, fit, guard_outputs, proxy_spec, require_binary, run_mock_pipeline, write_json, Arm, Artifacts,
};
use crate::report::{line_plot_svg, write_report_csv, ReportRow, Series};

fn require_mock(cfg: &RunConfig) -> CliResult<()> {
    if cfg.backend != BackendKind::Mock {
        return Err(CliError::Validation(
            "experiments run on the hermetic mock backend".into(),
        ));
    }
    require_binary(cfg)
}

/// Configuration of the `s`-th repetition: same settings, shifted global seed.
pub fn replicate(cfg: &RunConfig, s: usize) -> RunConfig {
    let mut c = cfg.clone();
    c.seed = cfg.seed.wrapping_add(s as u64);
    c
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleRung {
    pub n_domains: usize,
    pub samples_per_class: usize,
    pub median_extrapolated: f64,
    pub median_control: f64,
    /// Median over seeds of (control − extrapolated).
    pub median_margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScaleResult {
    pub config_digest: String,
    pub images_per_domain: usize,
    pub seeds: usize,
    pub rungs: Vec<ScaleRung>,
    #[serde(skip)]
    pub rows: Vec<ReportRow>,
}

pub fn run_scale(cfg: &RunConfig) -> CliResult<ScaleResult> {
    require_mock(cfg)?;
    let sc = &cfg.experiments.scale;
    let mu_prime = proxy_spec(cfg)?;
    let jobs: Vec<(usize, usize, Arm)> = (0..sc.seeds)
        .flat_map(|s| {
            sc.ladder
                .iter()
                .flat_map(move |&k| [(s, k, Arm::Extrapolated), (s, k, Arm::ClassTemplate)])
        })
        .collect();
    let digest = cfg.digest();
    let rows = jobs
        .par_iter()
        .map(|&(s, k, arm)| {
            let t = Instant::now();
            let c = replicate(cfg, s);
            let out = run_mock_pipeline(&c, &c.stage_seeds(), &mu_prime, k, sc.images_per_domain, arm)?;
            Ok(ReportRow {
                experiment: "scale".into(),
                protocol: "data-free".into(),
                arm: arm_name(arm).into(),
                n_domains: k,
                m_per_domain: match arm {
                    Arm::Extrapolated => sc.images_per_domain,
                    Arm::ClassTemplate => k * sc.images_per_domain,
                } * cfg.orchestrator.classes.len(),
                seed: c.seed,
                risk: out.evaluation.risk,
                risk_zero_one: out.evaluation.risk_zero_one,
                empirical_risk: out.fit.empirical.value,
                bound_value: None,
                epsilon: None,
                retention: out.filter.retention,
                wall_ms: elapsed_ms(t),
                config_digest: digest.clone(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let risks = |k: usize, arm: &str| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.n_domains == k && r.arm == arm)
            .map(|r| r.risk)
            .collect()
    };
    let rungs = sc
        .ladder
        .iter()
        .map(|&k| {
            let ext = risks(k, "extrapolated");
            let ctl = risks(k, "class-template");
            let margins: Vec<f64> = ctl.iter().zip(&ext).map(|(c, e)| c - e).collect();
            ScaleRung {
                n_domains: k,
                samples_per_class: k * sc.images_per_domain,
                median_extrapolated: median(&ext),
                median_control: median(&ctl),
                median_margin: median(&margins),
            }
        })
        .collect();
    Ok(ScaleResult {
        config_digest: digest,
        images_per_domain: sc.images_per_domain,
        seeds: sc.seeds,
        rungs,
        rows,
    })
}

fn arm_name(arm: Arm) -> &'static str {
    match arm {
        Arm::Extrapolated => "extrapolated",
        Arm::ClassTemplate => "class-template",
    }
}

pub fn scale_svg(result: &ScaleResult) -> String {
    let series = [
        Series {
            name: "extrapolated domains".into(),
            color: "#1f77b4",
            points: result
                .rungs
                .iter()
                .map(|r| (r.n_domains as f64, r.median_extrapolated))
                .collect(),
        },
        Series {
            name: "class-template control".into(),
            color: "#d62728",
            points: result
                .rungs
                .iter()
                .map(|r| (r.n_domains as f64, r.median_control))
                .collect(),
        },
    ];
    line_plot_svg(
        "Population risk vs. number of domains",
        "domains (log2 scale)",
        "median risk",
        &series,
    )
}

pub fn cmd_scale(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let a = Artifacts::new(&cfg.out_dir);
    let (csv, json, svg) = (a.path("scale.csv"), a.path("scale_summary.json"), a.path("scale.svg"));
    guard_outputs(&[csv.clone(), json.clone(), svg.clone()], force)?;
    std::fs::create_dir_all(&a.dir)?;
    let result = run_scale(cfg)?;
    write_report_csv(&csv, &result.rows)?;
    write_json(&json, &result)?;
    std::fs::write(&svg, scale_svg(&result))?;
    for r in &result.rungs {
        println!(
            "domains {:>3}: extrapolated {:.4}  control {:.4}",
            r.n_domains, r.median_extrapolated, r.median_control
        );
    }
    println!("wrote {}, {}, {}", csv.display(), json.display(), svg.display());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceSummary {
    pub stage: String,
    pub repeats: usize,
    pub mean: f64,
    pub std: f64,
    pub risks: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceResult {
    pub config_digest: String,
    pub summaries: Vec<VarianceSummary>,
    #[serde(skip)]
    pub rows: Vec<ReportRow>,
}

/// Pins every stage stream to its base value except those of `stage`, which
/// take the `r`-th derived value.
pub fn vary_stage(cfg: &RunConfig, stage: VarianceStage, r: usize) -> RunConfig {
    let base = cfg.stage_seeds();
    let varied = |v: u64| Stream::new(v).named("variance").child(r as u64).draw_u64();
    let on = |s: VarianceStage| stage == s || stage == VarianceStage::All;
    let mut c = cfg.clone();
    c.orchestrator.stream = Some(if on(VarianceStage::Extrapolation) {
        varied(base.extrapolation)
    } else {
        base.extrapolation
    });
    c.orchestrator.prompt_stream = Some(if on(VarianceStage::Extrapolation) {
        varied(base.prompt)
    } else {
        base.prompt
    });
    c.synth.stream = Some(if on(VarianceStage::Synthesis) {
        varied(base.synthesis)
    } else {
        base.synthesis
    });
    c.train.stream = Some(if on(VarianceStage::Training) {
        varied(base.training)
    } else {
        base.training
    });
    c.meta.stream = Some(base.meta);
    c
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_variance(cfg: &RunConfig, repeats: usize, stages: &[VarianceStage]) -> CliResult<VarianceResult> {
    require_mock(cfg)?;
    if repeats < 2 {
        return Err(CliError::Validation("variance needs repeats >= 2".into()));
    }
    let v = &cfg.experiments.variance;
    let mu_prime = proxy_spec(cfg)?;
    let digest = cfg.digest();
    let jobs: Vec<(VarianceStage, usize)> = stages.iter().flat_map(|&s| (0..repeats).map(move |r| (s, r))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(stage, r)| {
            let t = Instant::now();
            let c = vary_stage(cfg, stage, r);
            let out = run_mock_pipeline(
                &c,
                &c.stage_seeds(),
                &mu_prime,
                v.n_domains,
                v.images_per_domain,
                Arm::Extrapolated,
            )?;
            Ok(ReportRow {
                experiment: "variance".into(),
                protocol: "data-free".into(),
                arm: stage.name().into(),
                n_domains: v.n_domains,
                m_per_domain: v.images_per_domain * cfg.orchestrator.classes.len(),
                seed: r as u64,
                risk: out.evaluation.risk,
                risk_zero_one: out.evaluation.risk_zero_one,
                empirical_risk: out.fit.empirical.value,
                bound_value: None,
                epsilon: None,
                retention: out.filter.retention,
                wall_ms: elapsed_ms(t),
                config_digest: digest.clone(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let summaries = stages
        .iter()
        .map(|s| {
            let risks: Vec<f64> = rows.iter().filter(|r| r.arm == s.name()).map(|r| r.risk).collect();
            let (mean, std) = mean_std(&risks);
            VarianceSummary {
                stage: s.name().into(),
                repeats: risks.len(),
                mean,
                std,
                risks,
            }
        })
        .collect();
    Ok(VarianceResult {
        config_digest: digest,
        summaries,
        rows,
    })
}

pub fn cmd_variance(
    cfg: &RunConfig,
    force: bool,
    repeats: Option<usize>,
    stage: Option<VarianceStage>,
) -> CliResult<()> {
    let a = Artifacts::new(&cfg.out_dir);
    let (csv, json) = (a.path("variance.csv"), a.path("variance_summary.json"));
    guard_outputs(&[csv.clone(), json.clone()], force)?;
    std::fs::create_dir_all(&a.dir)?;
    let stages = match stage {
        Some(s) => vec![s],
        None if !cfg.experiments.variance.stages.is_empty() => cfg.experiments.variance.stages.clone(),
        None => vec![
            VarianceStage::Extrapolation,
            VarianceStage::Synthesis,
            VarianceStage::Training,
            VarianceStage::All,
        ],
    };
    let result = run_variance(cfg, repeats.unwrap_or(cfg.experiments.variance.repeats), &stages)?;
    write_report_csv(&csv, &result.rows)?;
    write_json(&json, &result)?;
    for s in &result.summaries {
        println!("{:<14} {:.4} ± {:.4} over {} runs", s.stage, s.mean, s.std, s.repeats);
    }
    println!("wrote {}, {}", csv.display(), json.display());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatafreeRung {
    pub offset: f64,
    /// Measured distance between μ and the proxy μ′.
    pub epsilon: f64,
    pub mean_datafree: f64,
    pub mean_supervised: f64,
    /// Mean over seeds of (data-free − supervised).
    pub mean_gap: f64,
    pub gap_std_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DatafreeResult {
    pub config_digest: String,
    pub n_domains: usize,
    pub images_per_domain: usize,
    pub seeds: usize,
    pub direction: Vec<f64>,
    pub rungs: Vec<DatafreeRung>,
    #[serde(skip)]
    pub rows: Vec<ReportRow>,
}

/// Unit vector from the class-1 mean to the class-0 mean; offsets along it
/// move synthetic data across the decision boundary.
pub fn separating_direction(mu: &MetaDistributionSpec) -> Vec<f64> {
    let (a, b) = (mu.class_mean(0), mu.class_mean(1));
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.iter().map(|x| x / norm).collect()
}

pub fn run_datafree(cfg: &RunConfig) -> CliResult<DatafreeResult> {
    require_mock(cfg)?;
    let df = &cfg.experiments.datafree;
    let mu = cfg.meta_spec()?;
    let dir = separating_direction(&mu);
    let grid = cfg.grid()?;
    let classes = cfg.orchestrator.classes.len();
    let digest = cfg.digest();
    let proxies = df
        .offset_ladder
        .iter()
        .map(|&a| {
            let p = PerturbationSpec {
                prototype_offset: dir.iter().map(|d| a * d).collect(),
                ..cfg.perturbation()
            };
            let mu_prime = perturb_meta(&mu, &p)?;
            let eps = estimate_meta_distance(&mu, &mu_prime, &grid, cfg.loss(), EvalBudget::default())?;
            Ok((a, mu_prime, eps.value))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let supervised = (0..df.seeds)
        .into_par_iter()
        .map(|s| {
            let t = Instant::now();
            let c = replicate(cfg, s);
            let seeds = c.stage_seeds();
            let m = df.images_per_domain * classes;
            let data = GroupedDataset::sample(&c.meta_spec()?, df.n_domains, m, seeds.synthesis)?;
            let f = fit(&c, &grid, &data, seeds.training)?;
            let e = evaluate(&mu, &f.hypothesis, c.train.loss)?;
            Ok(ReportRow {
                experiment: "datafree".into(),
                protocol: "supervised".into(),
                arm: "supervised".into(),
                n_domains: df.n_domains,
                m_per_domain: m,
                seed: c.seed,
                risk: e.risk,
                risk_zero_one: e.risk_zero_one,
                empirical_risk: f.empirical.value,
                bound_value: None,
                epsilon: Some(0.0),
                retention: 1.0,
                wall_ms: elapsed_ms(t),
                config_digest: digest.clone(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..proxies.len())
        .flat_map(|k| (0..df.seeds).map(move |s| (k, s)))
        .collect();
    let datafree = jobs
        .par_iter()
        .map(|&(k, s)| {
            let t = Instant::now();
            let (a, mu_prime, eps) = &proxies[k];
            let c = replicate(cfg, s);
            let out = run_mock_pipeline(
                &c,
                &c.stage_seeds(),
                mu_prime,
                df.n_domains,
                df.images_per_domain,
                Arm::Extrapolated,
            )?;
            Ok(ReportRow {
                experiment: "datafree".into(),
                protocol: "data-free".into(),
                arm: format!("offset={a}"),
                n_domains: df.n_domains,
                m_per_domain: df.images_per_domain * classes,
                seed: c.seed,
                risk: out.evaluation.risk,
                risk_zero_one: out.evaluation.risk_zero_one,
                empirical_risk: out.fit.empirical.value,
                bound_value: None,
                epsilon: Some(*eps),
                retention: out.filter.retention,
                wall_ms: elapsed_ms(t),
                config_digest: digest.clone(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let n = df.seeds as f64;
    let rungs = proxies
        .iter()
        .enumerate()
        .map(|(k, (a, _, eps))| {
            let rows = &datafree[k * df.seeds..(k + 1) * df.seeds];
            let gaps: Vec<f64> = rows.iter().zip(&supervised).map(|(d, s)| d.risk - s.risk).collect();
            let (mean_gap, sd) = mean_std(&gaps);
            DatafreeRung {
                offset: *a,
                epsilon: *eps,
                mean_datafree: rows.iter().map(|r| r.risk).sum::<f64>() / n,
                mean_supervised: supervised.iter().map(|r| r.risk).sum::<f64>() / n,
                mean_gap,
                gap_std_error: sd / n.sqrt(),
            }
        })
        .collect();
    let mut rows = supervised;
    rows.extend(datafree);
    Ok(DatafreeResult {
        config_digest: digest,
        n_domains: df.n_domains,
        images_per_domain: df.images_per_domain,
        seeds: df.seeds,
        direction: dir,
        rungs,
        rows,
    })
}

pub fn cmd_datafree(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let a = Artifacts::new(&cfg.out_dir);
    let (csv, json) = (a.path("datafree.csv"), a.path("datafree_summary.json"));
    guard_outputs(&[csv.clone(), json.clone()], force)?;
    std::fs::create_dir_all(&a.dir)?;
    let result = run_datafree(cfg)?;
    write_report_csv(&csv, &result.rows)?;
    write_json(&json, &result)?;
    for r in &result.rungs {
        println!(
            "offset {:<5} eps {:.4}: data-free {:.4}  supervised {:.4}  gap {:+.4}",
            r.offset, r.epsilon, r.mean_datafree, r.mean_supervised, r.mean_gap
        );
    }
    println!("wrote {}, {}", csv.display(), json.display());
    Ok(())
}

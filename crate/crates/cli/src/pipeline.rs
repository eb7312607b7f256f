//! Stage runners shared by the subcommands and the experiments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use domex_core::bound::{bound_experiment, target_risk, EvalBudget};
use domex_core::erm::{erm_grid, train_gd_ema, CurvePoint, GroupedDataset, RiskEstimate, TrainMode};
use domex_core::http::token_from_env;
use domex_core::hypothesis::{Hypothesis, HypothesisGrid, LossKind};
use domex_core::knowledge::backend::LLM_TOKEN_ENV;
use domex_core::knowledge::{
    build_template_prompts, render_class_template, ChatBackend, DomainKnowledge, ExchangeJournal, HttpChatBackend,
    MockChatBackend, Orchestrator, PromptItem, PromptMode, PromptSet,
};
use domex_core::meta_sim::{perturb_meta, MetaDistributionSpec};
use domex_core::synth::{
    assemble_training_set, filter_by_similarity, filter_with_embeddings, synthesize, synthesize_to_file,
    template_prototypes, EmbeddingClient, FilterReport, HttpImageBackend, ImageBackend, Manifest, ManifestHeader,
    MockImageBackend, Payload, Protocol, SynthOptions,
};

use crate::config::{BackendKind, PromptStyle, RunConfig, StageSeeds};
use crate::error::{CliError, CliResult};
use crate::report;

pub const CONTROL_DOMAIN: &str = "generic";

/// Artifact locations inside the output directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn knowledge(&self) -> PathBuf {
        self.path("knowledge.json")
    }

    pub fn prompts(&self) -> PathBuf {
        self.path("prompts.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.path("manifest.jsonl")
    }

    pub fn filtered(&self) -> PathBuf {
        self.path("manifest.filtered.jsonl")
    }

    pub fn hypothesis(&self) -> PathBuf {
        self.path("hypothesis.json")
    }
}

/// Refuses to replace existing outputs unless forced.
pub fn guard_outputs(paths: &[PathBuf], force: bool) -> CliResult<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(CliError::Usage(format!(
            "refusing to overwrite {}; pass --force to replace it",
            p.display()
        ))),
        None => Ok(()),
    }
}

pub fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    require(path)?;
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn require_binary(cfg: &RunConfig) -> CliResult<()> {
    if cfg.orchestrator.classes.len() != 2 {
        return Err(CliError::Validation(
            "training and evaluation use binary linear hypotheses; configure exactly two classes".into(),
        ));
    }
    Ok(())
}

pub fn chat_backend(cfg: &RunConfig, mock_seed: u64) -> CliResult<Box<dyn ChatBackend>> {
    match cfg.backend {
        BackendKind::Mock => Ok(Box::new(MockChatBackend::new(mock_seed))),
        BackendKind::Http => {
            let llm = cfg
                .orchestrator
                .llm
                .clone()
                .ok_or_else(|| CliError::Config("backend = http needs an [orchestrator.llm] section".into()))?;
            let b = HttpChatBackend::with_token(llm, token_from_env(LLM_TOKEN_ENV)).map_err(CliError::Config)?;
            Ok(Box::new(b))
        }
    }
}

/// Proxy meta-distribution μ′ realized by the mock image backend.
pub fn proxy_spec(cfg: &RunConfig) -> CliResult<MetaDistributionSpec> {
    Ok(perturb_meta(&cfg.meta_spec()?, &cfg.perturbation())?)
}

pub fn mock_image_backend(cfg: &RunConfig, mu_prime: MetaDistributionSpec, seed: u64) -> CliResult<MockImageBackend> {
    Ok(MockImageBackend::new(mu_prime, cfg.class_names(), seed)?)
}

pub fn image_backend(cfg: &RunConfig, seeds: &StageSeeds) -> CliResult<Box<dyn ImageBackend>> {
    match cfg.backend {
        BackendKind::Mock => Ok(Box::new(mock_image_backend(cfg, proxy_spec(cfg)?, seeds.synthesis)?)),
        BackendKind::Http => {
            let t2i = cfg
                .synth
                .t2i
                .clone()
                .ok_or_else(|| CliError::Config("backend = http needs a [synth.t2i] section".into()))?;
            Ok(Box::new(HttpImageBackend::new(t2i).map_err(CliError::Config)?))
        }
    }
}

pub fn manifest_header(cfg: &RunConfig) -> ManifestHeader {
    ManifestHeader {
        task_name: cfg.orchestrator.task_name.clone(),
        created_at: cfg.created_at(),
        config_digest: cfg.digest(),
    }
}

pub fn extrapolate_with(
    cfg: &RunConfig,
    backend: &dyn ChatBackend,
    stream: u64,
    journal: Option<&ExchangeJournal>,
) -> CliResult<DomainKnowledge> {
    let mut orch = Orchestrator::new(backend, cfg.orchestrator_config());
    if let Some(j) = journal {
        orch = orch.with_journal(j);
    }
    Ok(orch.extrapolate(&cfg.task(), cfg.orchestrator.strategy, stream)?)
}

pub fn prompts_with(
    cfg: &RunConfig,
    knowledge: &DomainKnowledge,
    backend: &dyn ChatBackend,
    stream: u64,
    journal: Option<&ExchangeJournal>,
) -> CliResult<PromptSet> {
    match cfg.orchestrator.prompt_style {
        PromptStyle::Template => Ok(build_template_prompts(knowledge)?),
        PromptStyle::Llm => {
            let mut orch = Orchestrator::new(backend, cfg.orchestrator_config());
            if let Some(j) = journal {
                orch = orch.with_journal(j);
            }
            Ok(orch.build_llm_prompts(knowledge, cfg.orchestrator.prompts_per_domain, stream)?)
        }
    }
}

/// Domain-free control prompts: `"An image of {class}"` under a single generic domain.
pub fn class_template_prompts(classes: &[String]) -> CliResult<PromptSet> {
    let items = classes
        .iter()
        .map(|c| {
            Ok(PromptItem {
                class: c.clone(),
                domain: CONTROL_DOMAIN.into(),
                prompt_text: render_class_template(c)?,
                mode: PromptMode::Template,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(PromptSet {
        items,
        provenance: Vec::new(),
    })
}

/// Prototypes from the manifest's template entries; classes without any are
/// probed with fresh template prompts on the mock backend.
pub fn mock_prototypes(
    manifest: &Manifest,
    classes: &[String],
    backend: &MockImageBackend,
    stream: u64,
) -> CliResult<BTreeMap<String, Vec<f64>>> {
    let mut protos = template_prototypes(manifest);
    let missing: Vec<String> = classes.iter().filter(|c| !protos.contains_key(*c)).cloned().collect();
    if !missing.is_empty() {
        let probe = class_template_prompts(&missing)?;
        let probed = synthesize(&probe, backend, &SynthOptions::new(16, stream), manifest.header.clone())?;
        protos.extend(template_prototypes(&probed));
    }
    Ok(protos)
}

pub fn filter_mock(
    cfg: &RunConfig,
    manifest: &Manifest,
    backend: &MockImageBackend,
    stream: u64,
) -> CliResult<(Manifest, FilterReport)> {
    let protos = mock_prototypes(manifest, &cfg.class_names(), backend, stream)?;
    Ok(filter_by_similarity(manifest, &protos, cfg.filter.threshold)?)
}

/// Filtering for file payloads through the embedding service.
fn filter_http(cfg: &RunConfig, manifest: &Manifest, root: &Path) -> CliResult<(Manifest, FilterReport)> {
    let emb_cfg = cfg
        .filter
        .embedding
        .clone()
        .ok_or_else(|| CliError::Config("filtering file payloads needs a [filter.embedding] section".into()))?;
    let client = EmbeddingClient::new(emb_cfg, token_from_env("DOMEX_EMBED_TOKEN")).map_err(CliError::Config)?;
    let inputs: Vec<String> = manifest
        .entries
        .iter()
        .map(|e| match &e.payload {
            Payload::Path(p) => root.join(p).display().to_string(),
            Payload::Vector(_) => String::new(),
        })
        .collect();
    let embeddings = client.embed(&inputs).map_err(CliError::Backend)?;
    let mut embedded = manifest.clone();
    for (e, v) in embedded.entries.iter_mut().zip(&embeddings) {
        e.payload = Payload::Vector(v.clone());
    }
    let protos = template_prototypes(&embedded);
    Ok(filter_with_embeddings(
        manifest,
        &embeddings,
        &protos,
        cfg.filter.threshold,
    )?)
}

#[derive(Clone, Debug, Serialize)]
pub struct Fit {
    pub hypothesis: Hypothesis,
    pub empirical: RiskEstimate,
    pub curve: Vec<CurvePoint>,
}

pub fn fit(cfg: &RunConfig, grid: &HypothesisGrid, data: &GroupedDataset, training_seed: u64) -> CliResult<Fit> {
    let l = cfg.loss();
    match cfg.train.mode {
        TrainMode::GridErm => {
            let (h, r) = erm_grid(grid, data, l)?;
            let curve = vec![CurvePoint {
                step: 0,
                raw_risk: r.value,
                ema_risk: r.value,
            }];
            Ok(Fit {
                hypothesis: h,
                empirical: r,
                curve,
            })
        }
        mode => {
            let mut tc = cfg.train_config();
            tc.seed = training_seed;
            let out = train_gd_ema(&tc, data, l)?;
            let h = if mode == TrainMode::GdEma { out.ema } else { out.raw };
            let empirical = domex_core::erm::empirical_risk(&h, data, l)?;
            Ok(Fit {
                hypothesis: h,
                empirical,
                curve: out.curve,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub risk: f64,
    pub risk_zero_one: f64,
}

pub fn evaluate(mu: &MetaDistributionSpec, h: &Hypothesis, loss: LossKind) -> CliResult<Evaluation> {
    let budget = EvalBudget::default();
    Ok(Evaluation {
        risk: target_risk(mu, h, loss, budget)?,
        risk_zero_one: target_risk(mu, h, LossKind::ZeroOne, budget)?,
    })
}

/// Which prompt source a mock pipeline run draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Extrapolated,
    ClassTemplate,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub manifest: Manifest,
    pub filter: FilterReport,
    pub fit: Fit,
    pub evaluation: Evaluation,
    pub samples_per_class: usize,
}

/// Extrapolate, prompt, synthesize, filter, train and evaluate in memory on
/// the mock stack. `n_domains` domains with `images_per_domain` images per
/// class each; the control arm puts the same total into one generic domain.
pub fn run_mock_pipeline(
    cfg: &RunConfig,
    seeds: &StageSeeds,
    mu_prime: &MetaDistributionSpec,
    n_domains: usize,
    images_per_domain: usize,
    arm: Arm,
) -> CliResult<PipelineOutcome> {
    require_binary(cfg)?;
    let mu = cfg.meta_spec()?;
    let classes = cfg.class_names();
    let (prompts, images_per_prompt) = match arm {
        Arm::Extrapolated => {
            let mut c = cfg.clone();
            c.orchestrator.domains = n_domains;
            let chat = MockChatBackend::new(seeds.extrapolation);
            let knowledge = extrapolate_with(&c, &chat, seeds.extrapolation, None)?;
            let prompts = prompts_with(&c, &knowledge, &MockChatBackend::new(seeds.prompt), seeds.prompt, None)?;
            let per_pair = prompts.items.len() / (classes.len() * n_domains).max(1);
            (prompts, images_per_domain.div_ceil(per_pair.max(1)))
        }
        Arm::ClassTemplate => (class_template_prompts(&classes)?, n_domains * images_per_domain),
    };
    let images = mock_image_backend(cfg, mu_prime.clone(), seeds.synthesis)?;
    let mut opts = SynthOptions::new(images_per_prompt, seeds.synthesis);
    opts.in_flight = cfg.synth.in_flight;
    let manifest = synthesize(&prompts, &images, &opts, manifest_header(cfg))?;
    let (filtered, filter) = filter_mock(cfg, &manifest, &images, seeds.synthesis)?;
    let data = assemble_training_set(None, &filtered, &classes, Protocol::DataFree)?;
    let fit = fit(cfg, &cfg.grid()?, &data, seeds.training)?;
    let evaluation = evaluate(&mu, &fit.hypothesis, cfg.train.loss)?;
    Ok(PipelineOutcome {
        manifest: filtered,
        filter,
        fit,
        evaluation,
        samples_per_class: n_domains * images_per_domain,
    })
}

pub fn cmd_extrapolate(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let a = Artifacts::new(&cfg.out_dir);
    let journal_path = a.path("extrapolate.exchanges.jsonl");
    guard_outputs(&[a.knowledge()], force)?;
    std::fs::create_dir_all(&a.dir)?;
    let _ = std::fs::remove_file(&journal_path);
    let seeds = cfg.stage_seeds();
    let backend = chat_backend(cfg, seeds.extrapolation)?;
    let journal = ExchangeJournal::open(&journal_path)?;
    let knowledge = extrapolate_with(cfg, backend.as_ref(), seeds.extrapolation, Some(&journal))?;
    write_json(&a.knowledge(), &knowledge)?;
    println!("wrote {}", a.knowledge().display());
    Ok(())
}

pub fn cmd_prompt(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let a = Artifacts::new(&cfg.out_dir);
    let knowledge: DomainKnowledge = read_json(&a.knowledge())?;
    guard_outputs(&[a.prompts()], force)?;
    let journal_path = a.path("prompt.exchanges.jsonl");
    let _ = std::fs::remove_file(&journal_path);
    let seeds = cfg.stage_seeds();
    let backend = chat_backend(cfg, seeds.prompt)?;
    let journal = ExchangeJournal::open(&journal_path)?;
    let prompts = prompts_with(cfg, &knowledge, backend.as_ref(), seeds.prompt, Some(&journal))?;
    write_json(&a.prompts(), &prompts)?;
    println!("wrote {} ({} prompts)", a.prompts().display(), prompts.items.len());
    Ok(())
}

pub fn cmd_synthesize(cfg: &RunConfig, force: bool, resume: bool) -> CliResult<()> {
    let a = Artifacts::new(&cfg.out_dir);
    let prompts: PromptSet = read_json(&a.prompts())?;
    if !resume {
        guard_outputs(&[a.manifest()], force)?;
    }
    let seeds = cfg.stage_seeds();
    let backend = image_backend(cfg, &seeds)?;
    let mut opts = SynthOptions::new(cfg.synth.images_per_prompt, seeds.synthesis);
    opts.in_flight = cfg.synth.in_flight;
    opts.artifact_dir = Some(a.dir.clone());
    let manifest = synthesize_to_file(
        &a.manifest(),
        &prompts,
        backend.as_ref(),
        &opts,
        &manifest_header(cfg),
        resume,
    )?;
    println!("wrote {} ({} entries)", a.manifest().display(), manifest.entries.len());
    Ok(())
}

pub fn cmd_filter(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let a = Artifacts::new(&cfg.out_dir);
    let manifest = Manifest::read(&a.manifest())?;
    let report_json = a.path("filter_report.json");
    let retention_csv = a.path("retention.csv");
    guard_outputs(&[a.filtered(), report_json.clone(), retention_csv.clone()], force)?;
    let all_vectors = manifest.entries.iter().all(|e| e.payload.vector().is_some());
    let (filtered, report) = if all_vectors {
        let seeds = cfg.stage_seeds();
        let backend = mock_image_backend(cfg, proxy_spec(cfg)?, seeds.synthesis)?;
        filter_mock(cfg, &manifest, &backend, seeds.synthesis)?
    } else {
        filter_http(cfg, &manifest, &a.dir)?
    };
    filtered.write(&a.filtered())?;
    write_json(
        &report_json,
        &serde_json::json!({ "config_digest": cfg.digest(), "report": report }),
    )?;
    report::write_retention_csv(&retention_csv, &report)?;
    println!(
        "wrote {} (kept {}/{} at threshold {})",
        a.filtered().display(),
        report.kept,
        report.total,
        report.threshold
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config_digest: String,
    protocol: Protocol,
    mode: TrainMode,
    n_domains: usize,
    n_samples: usize,
    empirical_risk: f64,
    population_risk: f64,
    population_risk_zero_one: f64,
    loss: LossKind,
    hypothesis: &'a Hypothesis,
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> CliResult<()> {
    require_binary(cfg)?;
    let a = Artifacts::new(&cfg.out_dir);
    let manifest = Manifest::read(&a.filtered())?;
    let curve_path = a.path("curve.csv");
    let summary_path = a.path("train_summary.json");
    guard_outputs(&[a.hypothesis(), curve_path.clone(), summary_path.clone()], force)?;
    let seeds = cfg.stage_seeds();
    let mu = cfg.meta_spec()?;
    let real = match cfg.train.protocol {
        Protocol::DataFree => None,
        Protocol::Augment => Some(GroupedDataset::sample(
            &mu,
            cfg.train.real_domains,
            cfg.train.real_samples_per_domain,
            seeds.training,
        )?),
        Protocol::SingleDomainAugment => Some(GroupedDataset::sample(
            &mu,
            1,
            cfg.train.real_samples_per_domain,
            seeds.training,
        )?),
    };
    let data = assemble_training_set(real.as_ref(), &manifest, &cfg.class_names(), cfg.train.protocol)?;
    let fit = fit(cfg, &cfg.grid()?, &data, seeds.training)?;
    let eval = evaluate(&mu, &fit.hypothesis, cfg.train.loss)?;
    write_json(&a.hypothesis(), &fit.hypothesis)?;
    domex_core::erm::write_curve_csv(std::fs::File::create(&curve_path)?, &fit.curve)?;
    write_json(
        &summary_path,
        &TrainSummary {
            config_digest: cfg.digest(),
            protocol: cfg.train.protocol,
            mode: cfg.train.mode,
            n_domains: data.n_domains(),
            n_samples: data.n_samples(),
            empirical_risk: fit.empirical.value,
            population_risk: eval.risk,
            population_risk_zero_one: eval.risk_zero_one,
            loss: cfg.train.loss,
            hypothesis: &fit.hypothesis,
        },
    )?;
    println!(
        "wrote {} (population risk {:.4}, zero-one {:.4})",
        a.hypothesis().display(),
        eval.risk,
        eval.risk_zero_one
    );
    Ok(())
}

pub fn cmd_bound(cfg: &RunConfig, force: bool) -> CliResult<()> {
    require_binary(cfg)?;
    let a = Artifacts::new(&cfg.out_dir);
    let csv_path = a.path("bound_trials.csv");
    let json_path = a.path("bound_summary.json");
    guard_outputs(&[csv_path.clone(), json_path.clone()], force)?;
    std::fs::create_dir_all(&a.dir)?;
    let exp = bound_experiment(
        &cfg.meta_spec()?,
        &cfg.perturbation(),
        &cfg.bound_grid()?,
        cfg.loss(),
        &cfg.bound_config(),
    )?;
    report::write_rows_csv(&csv_path, &exp.rows)?;
    write_json(
        &json_path,
        &serde_json::json!({
            "config_digest": cfg.digest(),
            "distance": exp.distance,
            "summary": exp.summary,
        }),
    )?;
    println!(
        "wrote {} (violation rate {:.3} over {} trials, median bound {:.4})",
        csv_path.display(),
        exp.summary.violation_rate,
        exp.summary.trials,
        exp.summary.median_bound
    );
    Ok(())
}

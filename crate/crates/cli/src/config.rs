//! Run configuration: one TOML file with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use domex_core::bound::{BoundExperimentConfig, BoundVariant, EvalBudget, SigmaMode};
use domex_core::erm::{TrainConfig, TrainMode};
use domex_core::hypothesis::{build_grid_from, GridConstruction, GridSpec, HypothesisGrid, LossFunction, LossKind};
use domex_core::knowledge::{ClassSpec, HttpChatConfig, OrchestratorConfig, PromptTemplates, QueryStrategy, TaskSpec};
use domex_core::meta_sim::{MetaDistributionSpec, PerturbationSpec};
use domex_core::rng::Stream;
use domex_core::synth::{EmbeddingConfig, HttpImageConfig, Protocol};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Not part of the digest.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub backend: BackendKind,
    /// Header timestamp for manifests; falls back to `SOURCE_DATE_EPOCH`, then the epoch.
    pub created_at: Option<String>,
    pub meta: MetaSection,
    pub grid: GridSection,
    pub train: TrainSection,
    pub bound: BoundSection,
    pub orchestrator: OrchestratorSection,
    pub synth: SynthSection,
    pub filter: FilterSection,
    pub experiments: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            backend: BackendKind::Mock,
            created_at: None,
            meta: MetaSection::default(),
            grid: GridSection::default(),
            train: TrainSection::default(),
            bound: BoundSection::default(),
            orchestrator: OrchestratorSection::default(),
            synth: SynthSection::default(),
            filter: FilterSection::default(),
            experiments: ExperimentSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    pub dim: usize,
    pub prototype_scale: f64,
    pub domain_shift_scale: f64,
    pub noise_scale: f64,
    pub label_prior: Option<Vec<f64>>,
    pub stream: Option<u64>,
    pub perturbation: PerturbationSection,
}

impl Default for MetaSection {
    fn default() -> Self {
        MetaSection {
            dim: 2,
            prototype_scale: 2.5,
            domain_shift_scale: 0.75,
            noise_scale: 0.5,
            label_prior: None,
            stream: None,
            perturbation: PerturbationSection::default(),
        }
    }
}

/// Maps the target μ to the proxy μ′ that synthetic data follows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSection {
    pub prototype_offset: Option<Vec<f64>>,
    pub shift_scale_factor: f64,
    pub noise_scale_factor: f64,
}

impl Default for PerturbationSection {
    fn default() -> Self {
        PerturbationSection {
            prototype_offset: None,
            shift_scale_factor: 1.0,
            noise_scale_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub size: usize,
    pub construction: GridConstruction,
    pub weight_cap: f64,
    pub bias_levels: usize,
    pub bias_span: f64,
    pub stream: Option<u64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            size: 288,
            construction: GridConstruction::SphereGrid,
            weight_cap: 1.0,
            bias_levels: 9,
            bias_span: 1.0,
            stream: None,
        }
    }
}

impl GridSection {
    /// Smaller class used by the bound trials.
    pub fn bound_default() -> Self {
        GridSection {
            size: 64,
            bias_levels: 4,
            bias_span: 0.75,
            ..GridSection::default()
        }
    }

    pub fn spec(&self, dim: usize, seed: u64) -> GridSpec {
        GridSpec::new(dim, self.size, self.construction, self.stream.unwrap_or(seed))
            .with_weight_cap(self.weight_cap)
            .with_bias_ladder(self.bias_levels, self.bias_span)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub steps: usize,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub curve_every: usize,
    pub protocol: Protocol,
    /// Real domains sampled from μ for the augment protocols.
    pub real_domains: usize,
    pub real_samples_per_domain: usize,
    pub stream: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            mode: TrainMode::GridErm,
            loss: LossKind::Ramp,
            learning_rate: 0.1,
            steps: 500,
            ema_decay: 0.99,
            batch_size: 32,
            curve_every: 10,
            protocol: Protocol::DataFree,
            real_domains: 3,
            real_samples_per_domain: 50,
            stream: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub trials: usize,
    pub variant: BoundVariant,
    pub sigma: SigmaMode,
    pub m_eval: usize,
    pub epsilon_assumed: Option<f64>,
    pub grid: GridSection,
    pub stream: Option<u64>,
}

impl Default for BoundSection {
    fn default() -> Self {
        let d = BoundExperimentConfig::default();
        BoundSection {
            n: d.n,
            m: d.m,
            delta: d.delta,
            trials: d.trials,
            variant: d.variant,
            sigma: d.sigma,
            m_eval: d.m_eval,
            epsilon_assumed: None,
            grid: GridSection::bound_default(),
            stream: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStyle {
    #[default]
    Template,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorSection {
    pub task_name: String,
    pub classes: Vec<ClassSpec>,
    pub domains: usize,
    pub strategy: QueryStrategy,
    pub prompt_style: PromptStyle,
    /// Prompts per (class, domain) in `llm` style; `template` style always makes one.
    pub prompts_per_domain: usize,
    pub max_requery: usize,
    pub in_flight: usize,
    pub temperature: Option<f64>,
    pub templates: PromptTemplates,
    pub llm: Option<HttpChatConfig>,
    pub stream: Option<u64>,
    pub prompt_stream: Option<u64>,
}

impl Default for OrchestratorSection {
    fn default() -> Self {
        let o = OrchestratorConfig::default();
        OrchestratorSection {
            task_name: "pets".into(),
            classes: vec![
                ClassSpec {
                    name: "dog".into(),
                    definition: "a domesticated canine".into(),
                },
                ClassSpec {
                    name: "cat".into(),
                    definition: "a small domesticated feline".into(),
                },
            ],
            domains: 8,
            strategy: QueryStrategy::DatasetWise,
            prompt_style: PromptStyle::Template,
            prompts_per_domain: 8,
            max_requery: o.max_requery,
            in_flight: o.in_flight,
            temperature: None,
            templates: PromptTemplates::default(),
            llm: None,
            stream: None,
            prompt_stream: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub images_per_prompt: usize,
    pub in_flight: usize,
    pub t2i: Option<HttpImageConfig>,
    pub stream: Option<u64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            images_per_prompt: 64,
            in_flight: 4,
            t2i: None,
            stream: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub threshold: f64,
    pub embedding: Option<EmbeddingConfig>,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            threshold: domex_core::synth::filter::DEFAULT_THRESHOLD,
            embedding: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub scale: ScaleSection,
    pub variance: VarianceSection,
    pub datafree: DatafreeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleSection {
    pub ladder: Vec<usize>,
    pub images_per_domain: usize,
    pub seeds: usize,
}

impl Default for ScaleSection {
    fn default() -> Self {
        ScaleSection {
            ladder: vec![2, 4, 8, 16, 32],
            images_per_domain: 64,
            seeds: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceStage {
    Extrapolation,
    Synthesis,
    Training,
    /// Every stage varies together.
    All,
}

impl VarianceStage {
    pub fn name(self) -> &'static str {
        match self {
            VarianceStage::Extrapolation => "extrapolation",
            VarianceStage::Synthesis => "synthesis",
            VarianceStage::Training => "training",
            VarianceStage::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSection {
    pub repeats: usize,
    /// Stages to report; all four when empty.
    pub stages: Vec<VarianceStage>,
    pub n_domains: usize,
    pub images_per_domain: usize,
}

impl Default for VarianceSection {
    fn default() -> Self {
        VarianceSection {
            repeats: 5,
            stages: Vec::new(),
            n_domains: 8,
            images_per_domain: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatafreeSection {
    pub seeds: usize,
    pub n_domains: usize,
    pub images_per_domain: usize,
    /// Offset magnitudes along the class-separating direction.
    pub offset_ladder: Vec<f64>,
}

impl Default for DatafreeSection {
    fn default() -> Self {
        DatafreeSection {
            seeds: 10,
            n_domains: 8,
            images_per_domain: 64,
            offset_ladder: vec![0.0, 0.25, 0.5, 1.0, 1.5],
        }
    }
}

/// Seeds of the randomized stages, each derived from the global seed unless
/// its section pins a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageSeeds {
    pub meta: u64,
    pub grid: u64,
    pub extrapolation: u64,
    pub prompt: u64,
    pub synthesis: u64,
    pub training: u64,
    pub bound: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.orchestrator.classes.len() < 2 {
            return bad("orchestrator.classes needs at least two classes");
        }
        if self.meta.dim == 0 {
            return bad("meta.dim must be >= 1");
        }
        if let Some(off) = &self.meta.perturbation.prototype_offset {
            if off.len() != self.meta.dim {
                return bad("meta.perturbation.prototype_offset must have meta.dim entries");
            }
        }
        if self.orchestrator.domains == 0 || self.orchestrator.prompts_per_domain == 0 {
            return bad("orchestrator.domains and orchestrator.prompts_per_domain must be >= 1");
        }
        if self.synth.images_per_prompt == 0 {
            return bad("synth.images_per_prompt must be >= 1");
        }
        if self.filter.threshold.is_nan() || self.filter.threshold < -1.0 {
            return bad("filter.threshold must be at least -1");
        }
        if self.experiments.scale.ladder.is_empty() || self.experiments.scale.ladder.contains(&0) {
            return bad("experiments.scale.ladder needs positive domain counts");
        }
        if self.experiments.variance.repeats < 2 {
            return bad("experiments.variance.repeats must be >= 2");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (sorted keys, output directory excluded).
    /// sha256 of the canonical JSON. Concurrency limits do not change outputs
    /// and are left out.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.orchestrator.in_flight = 0;
        c.synth.in_flight = 0;
        let value = serde_json::to_value(&c).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn created_at(&self) -> String {
        if let Some(c) = &self.created_at {
            return c.clone();
        }
        let secs = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.trim().parse::<i64>().ok())
            .unwrap_or(0);
        time::OffsetDateTime::from_unix_timestamp(secs)
            .unwrap_or(time::OffsetDateTime::UNIX_EPOCH)
            .format(&time::format_description::well_known::Rfc3339)
            .expect("rfc3339 formatting")
    }

    pub fn stage_seeds(&self) -> StageSeeds {
        let root = Stream::new(self.seed);
        let derive = |pinned: Option<u64>, name: &str| pinned.unwrap_or_else(|| root.named(name).draw_u64());
        StageSeeds {
            meta: derive(self.meta.stream, "meta"),
            grid: derive(None, "grid"),
            extrapolation: derive(self.orchestrator.stream, "extrapolation"),
            prompt: derive(self.orchestrator.prompt_stream, "prompt"),
            synthesis: derive(self.synth.stream, "synthesis"),
            training: derive(self.train.stream, "training"),
            bound: derive(self.bound.stream, "bound"),
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.orchestrator.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn task(&self) -> TaskSpec {
        TaskSpec {
            task_name: self.orchestrator.task_name.clone(),
            classes: self.orchestrator.classes.clone(),
            domains_requested: self.orchestrator.domains,
            prompts_per_domain: self.orchestrator.prompts_per_domain,
        }
    }

    pub fn orchestrator_config(&self) -> OrchestratorConfig {
        OrchestratorConfig {
            templates: self.orchestrator.templates.clone(),
            max_requery: self.orchestrator.max_requery,
            in_flight: self.orchestrator.in_flight,
            temperature: self.orchestrator.temperature,
        }
    }

    /// Target meta-distribution μ.
    pub fn meta_spec(&self) -> CliResult<MetaDistributionSpec> {
        let classes = self.orchestrator.classes.len();
        let mut spec = MetaDistributionSpec::new(
            self.meta.dim,
            classes,
            self.meta.prototype_scale,
            self.meta.domain_shift_scale,
            self.meta.noise_scale,
            self.stage_seeds().meta,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(prior) = &self.meta.label_prior {
            spec.label_prior = prior.clone();
            spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(spec)
    }

    pub fn perturbation(&self) -> PerturbationSpec {
        let p = &self.meta.perturbation;
        PerturbationSpec {
            prototype_offset: p.prototype_offset.clone().unwrap_or_else(|| vec![0.0; self.meta.dim]),
            shift_scale_factor: p.shift_scale_factor,
            noise_scale_factor: p.noise_scale_factor,
        }
    }

    /// Hypothesis class for training and the experiments.
    pub fn grid(&self) -> CliResult<HypothesisGrid> {
        build_grid_from(&self.grid.spec(self.meta.dim, self.stage_seeds().grid))
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Hypothesis class for the bound trials.
    pub fn bound_grid(&self) -> CliResult<HypothesisGrid> {
        build_grid_from(&self.bound.grid.spec(self.meta.dim, self.stage_seeds().grid))
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn loss(&self) -> LossFunction {
        LossFunction { kind: self.train.loss }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.train.mode,
            learning_rate: self.train.learning_rate,
            steps: self.train.steps,
            ema_decay: self.train.ema_decay,
            batch_size: self.train.batch_size,
            seed: self.stage_seeds().training,
            curve_every: self.train.curve_every,
            record_trajectory: false,
        }
    }

    pub fn bound_config(&self) -> BoundExperimentConfig {
        let b = &self.bound;
        let seed = self.stage_seeds().bound;
        BoundExperimentConfig {
            n: b.n,
            m: b.m,
            delta: b.delta,
            trials: b.trials,
            variant: b.variant,
            sigma: b.sigma,
            m_eval: b.m_eval,
            epsilon_assumed: b.epsilon_assumed,
            budget: EvalBudget {
                stream: seed,
                ..EvalBudget::default()
            },
            stream: seed,
        }
    }
}

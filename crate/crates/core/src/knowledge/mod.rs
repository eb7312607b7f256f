//! Domain extrapolation and prompt generation through a chat model.

pub mod backend;
pub mod mock;
pub mod parse;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backend::{ChatBackend, ChatMessage, ChatRequest, HttpChatBackend, HttpChatConfig, RequestIntent};
pub use mock::{MockBehavior, MockChatBackend};
pub use parse::{parse_domain_response, parse_list_response};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    #[serde(default)]
    pub definition: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_name: String,
    pub classes: Vec<ClassSpec>,
    pub domains_requested: usize,
    pub prompts_per_domain: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::validation("task needs at least one class"));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.classes {
            if c.name.trim().is_empty() {
                return Err(Error::validation("class names must be non-empty"));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::validation(format!("duplicate class name `{}`", c.name)));
            }
        }
        if self.domains_requested == 0 || self.prompts_per_domain == 0 {
            return Err(Error::validation(
                "domains_requested and prompts_per_domain must be >= 1",
            ));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_prompt: String,
    pub user_prompt: String,
    pub response_text: String,
    pub backend_id: String,
    pub temperature: f64,
    pub request_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryStrategy {
    ClassWise,
    DatasetWise,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDomains {
    pub class: String,
    pub domains: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainKnowledge {
    /// One entry per class, in task order.
    pub entries: Vec<ClassDomains>,
    pub strategy: QueryStrategy,
    pub provenance: Vec<ChatExchange>,
}

impl DomainKnowledge {
    pub fn domains_for(&self, class: &str) -> Option<&[String]> {
        self.entries
            .iter()
            .find(|e| e.class == class)
            .map(|e| e.domains.as_slice())
    }

    /// Distinct domain names across classes, in first-appearance order.
    pub fn all_domains(&self) -> Vec<String> {
        parse::dedup_preserving_case(self.entries.iter().flat_map(|e| e.domains.iter().cloned()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    Template,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptItem {
    pub class: String,
    pub domain: String,
    pub prompt_text: String,
    pub mode: PromptMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub items: Vec<PromptItem>,
    pub provenance: Vec<ChatExchange>,
}

impl PromptSet {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `"An image of {class} in the domain of {domain}"`.
pub fn render_template_prompt(class_name: &str, domain_name: &str) -> Result<String> {
    if class_name.trim().is_empty() || domain_name.trim().is_empty() {
        return Err(Error::validation(
            "template prompt needs non-empty class and domain names",
        ));
    }
    Ok(format!("An image of {class_name} in the domain of {domain_name}"))
}

/// Domain-free control prompt, `"An image of {class}"`.
pub fn render_class_template(class_name: &str) -> Result<String> {
    if class_name.trim().is_empty() {
        return Err(Error::validation("class template needs a non-empty class name"));
    }
    Ok(format!("An image of {class_name}"))
}

/// System-prompt segments. Placeholders: `{n}`, `{k}`, `{task}`, `{class}`,
/// `{definition}`, `{classes}`, `{domain}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub domain_role: String,
    pub domain_task: String,
    pub prompt_role: String,
    pub prompt_task: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            domain_role: "You are an expert in visual concepts and image datasets. You know where and how \
                          objects realistically appear in images."
                .into(),
            domain_task: "For the task \"{task}\", think step by step about where the given class would \
                          realistically exist, then list the {n} most plausible and reasonable domains \
                          (environments, contexts or visual styles) in which an image of it could appear. \
                          Prefer domains that differ from each other. Answer only with a JSON array of {n} \
                          short domain names."
                .into(),
            prompt_role: "You are a prompt engineer for text-to-image diffusion models.".into(),
            prompt_task: "Write {k} distinct, detailed prompts for a text-to-image model, each depicting a \
                          {class} in the domain of {domain}. Vary composition, viewpoint and lighting, and \
                          keep the {class} as the main subject. Answer only with a JSON array of {k} strings."
                .into(),
        }
    }
}

fn system_prompt(role: &str, task: &str) -> String {
    format!("[Role]\n{role}\n\n[Task Description]\n{task}")
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter()
        .fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub templates: PromptTemplates,
    /// Re-queries allowed after the first exchange when deduplication leaves a shortfall.
    pub max_requery: usize,
    /// Concurrent per-class requests.
    pub in_flight: usize,
    /// Overrides the backend's default temperature.
    pub temperature: Option<f64>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            templates: PromptTemplates::default(),
            max_requery: 3,
            in_flight: 4,
            temperature: None,
        }
    }
}

/// Append-only JSON Lines log of exchanges, flushed as each one is recorded.
#[derive(Debug)]
pub struct ExchangeJournal {
    file: Mutex<File>,
}

impl ExchangeJournal {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ExchangeJournal { file: Mutex::new(file) })
    }

    pub fn record(&self, exchange: &ChatExchange) -> Result<()> {
        let line = serde_json::to_string(exchange)?;
        let mut file = self.file.lock().expect("journal lock poisoned");
        writeln!(file, "{line}")?;
        file.flush()?;
        Ok(())
    }
}

pub struct Orchestrator<'a> {
    backend: &'a dyn ChatBackend,
    config: OrchestratorConfig,
    journal: Option<&'a ExchangeJournal>,
}

impl<'a> Orchestrator<'a> {
    pub fn new(backend: &'a dyn ChatBackend, config: OrchestratorConfig) -> Self {
        Orchestrator {
            backend,
            config,
            journal: None,
        }
    }

    pub fn with_journal(mut self, journal: &'a ExchangeJournal) -> Self {
        self.journal = Some(journal);
        self
    }

    fn temperature(&self) -> f64 {
        self.config
            .temperature
            .unwrap_or_else(|| self.backend.default_temperature())
    }

    fn exchange(
        &self,
        stage: &str,
        system: &str,
        user: &str,
        seed: u64,
        intent: RequestIntent,
    ) -> Result<ChatExchange> {
        let request = ChatRequest {
            messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
            temperature: self.temperature(),
            seed: Some(seed),
            intent,
        };
        let response_text = self.backend.complete(&request).map_err(|message| Error::Backend {
            stage: stage.to_string(),
            message,
            completed: 0,
        })?;
        let exchange = ChatExchange {
            system_prompt: system.to_string(),
            user_prompt: user.to_string(),
            response_text,
            backend_id: self.backend.id().to_string(),
            temperature: request.temperature,
            request_seed: request.seed,
        };
        if let Some(journal) = self.journal {
            journal.record(&exchange)?;
        }
        Ok(exchange)
    }

    /// Queries until `wanted` unique items are collected or the re-query budget runs out.
    fn collect_unique(
        &self,
        subject: &str,
        wanted: usize,
        stream: Stream,
        mut ask: impl FnMut(usize, u64) -> Result<ChatExchange>,
    ) -> Result<(Vec<String>, Vec<ChatExchange>)> {
        let mut items: Vec<String> = Vec::new();
        let mut exchanges = Vec::new();
        for attempt in 0..=self.config.max_requery {
            let need = wanted - items.len();
            let exchange = ask(need, stream.child(attempt as u64).draw_u64())?;
            let parsed = parse_list_response(&exchange.response_text)?;
            exchanges.push(exchange);
            items = parse::dedup_preserving_case(items.into_iter().chain(parsed));
            items.truncate(wanted);
            if items.len() == wanted {
                return Ok((items, exchanges));
            }
        }
        Err(Error::Shortfall {
            subject: subject.to_string(),
            wanted,
            got: items.len(),
        })
    }

    fn query_domains(
        &self,
        task: &TaskSpec,
        classes: &[&ClassSpec],
        stream: Stream,
    ) -> Result<(Vec<String>, Vec<ChatExchange>)> {
        let names: Vec<String> = classes.iter().map(|c| c.name.clone()).collect();
        let subject = names.join(", ");
        let t = &self.config.templates;
        self.collect_unique(&subject, task.domains_requested, stream, |need, seed| {
            let n = need.to_string();
            let vars = [
                ("n", n.as_str()),
                ("task", task.task_name.as_str()),
                ("classes", subject.as_str()),
                ("class", subject.as_str()),
            ];
            let system = system_prompt(&fill(&t.domain_role, &vars), &fill(&t.domain_task, &vars));
            let mut user = format!("Task: {}\n", task.task_name);
            for c in classes {
                user.push_str(&format!("Class: {}\n", c.name));
                if !c.definition.is_empty() {
                    user.push_str(&format!("Definition: {}\n", c.definition));
                }
            }
            user.push_str(&format!("Number of domains: {need}"));
            self.exchange(
                &format!("extrapolate:{subject}"),
                &system,
                &user,
                seed,
                RequestIntent::Domains {
                    classes: names.clone(),
                    count: need,
                },
            )
        })
    }

    /// One query per class for `n` domains specific to that class.
    pub fn extrapolate_class_wise(&self, task: &TaskSpec, stream: u64) -> Result<DomainKnowledge> {
        task.validate()?;
        let base = Stream::new(stream).named("extrapolate-class-wise");
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.in_flight.max(1))
            .build()
            .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
        let results = pool.install(|| {
            task.classes
                .par_iter()
                .map(|c| self.query_domains(task, &[c], base.named(&c.name)))
                .collect::<Vec<_>>()
        });
        let mut entries = Vec::new();
        let mut provenance = Vec::new();
        for (c, r) in task.classes.iter().zip(results) {
            let (domains, exchanges) = r?;
            entries.push(ClassDomains {
                class: c.name.clone(),
                domains,
            });
            provenance.extend(exchanges);
        }
        Ok(DomainKnowledge {
            entries,
            strategy: QueryStrategy::ClassWise,
            provenance,
        })
    }

    /// One query carrying every class name; the shared list is replicated per class.
    pub fn extrapolate_dataset_wise(&self, task: &TaskSpec, stream: u64) -> Result<DomainKnowledge> {
        task.validate()?;
        let all: Vec<&ClassSpec> = task.classes.iter().collect();
        let (domains, provenance) =
            self.query_domains(task, &all, Stream::new(stream).named("extrapolate-dataset-wise"))?;
        Ok(DomainKnowledge {
            entries: task
                .classes
                .iter()
                .map(|c| ClassDomains {
                    class: c.name.clone(),
                    domains: domains.clone(),
                })
                .collect(),
            strategy: QueryStrategy::DatasetWise,
            provenance,
        })
    }

    pub fn extrapolate(&self, task: &TaskSpec, strategy: QueryStrategy, stream: u64) -> Result<DomainKnowledge> {
        match strategy {
            QueryStrategy::ClassWise => self.extrapolate_class_wise(task, stream),
            QueryStrategy::DatasetWise => self.extrapolate_dataset_wise(task, stream),
        }
    }

    /// `k` distinct diffusion-style prompts for one (class, domain) pair.
    pub fn generate_llm_prompts(
        &self,
        class: &str,
        domain: &str,
        k: usize,
        stream: u64,
    ) -> Result<(Vec<PromptItem>, Vec<ChatExchange>)> {
        if k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        render_template_prompt(class, domain)?;
        let t = &self.config.templates;
        let node = Stream::new(stream).named("llm-prompts").named(class).named(domain);
        let (prompts, exchanges) = self.collect_unique(&format!("{class} / {domain}"), k, node, |need, seed| {
            let k_str = need.to_string();
            let vars = [("k", k_str.as_str()), ("class", class), ("domain", domain)];
            let system = system_prompt(&fill(&t.prompt_role, &vars), &fill(&t.prompt_task, &vars));
            let user = format!("Class: {class}\nDomain: {domain}\nNumber of prompts: {need}");
            self.exchange(
                &format!("prompt:{class}/{domain}"),
                &system,
                &user,
                seed,
                RequestIntent::Prompts {
                    class: class.to_string(),
                    domain: domain.to_string(),
                    count: need,
                },
            )
        })?;
        let items = prompts
            .into_iter()
            .map(|prompt_text| PromptItem {
                class: class.to_string(),
                domain: domain.to_string(),
                prompt_text,
                mode: PromptMode::Llm,
            })
            .collect();
        Ok((items, exchanges))
    }

    /// LLM prompts for every (class, domain) pair, in knowledge order.
    pub fn build_llm_prompts(&self, knowledge: &DomainKnowledge, k: usize, stream: u64) -> Result<PromptSet> {
        let pairs: Vec<(&str, &str)> = knowledge
            .entries
            .iter()
            .flat_map(|e| e.domains.iter().map(move |d| (e.class.as_str(), d.as_str())))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.in_flight.max(1))
            .build()
            .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
        let results = pool.install(|| {
            pairs
                .par_iter()
                .map(|(c, d)| self.generate_llm_prompts(c, d, k, stream))
                .collect::<Vec<_>>()
        });
        let mut set = PromptSet {
            items: Vec::new(),
            provenance: Vec::new(),
        };
        for r in results {
            let (items, exchanges) = r?;
            set.items.extend(items);
            set.provenance.extend(exchanges);
        }
        Ok(set)
    }
}

/// One canonical template prompt per (class, domain) pair.
pub fn build_template_prompts(knowledge: &DomainKnowledge) -> Result<PromptSet> {
    let mut items = Vec::new();
    for e in &knowledge.entries {
        for d in &e.domains {
            items.push(PromptItem {
                class: e.class.clone(),
                domain: d.clone(),
                prompt_text: render_template_prompt(&e.class, d)?,
                mode: PromptMode::Template,
            });
        }
    }
    Ok(PromptSet {
        items,
        provenance: Vec::new(),
    })
}

pub fn extrapolate_class_wise(task: &TaskSpec, backend: &dyn ChatBackend, stream: u64) -> Result<DomainKnowledge> {
    Orchestrator::new(backend, OrchestratorConfig::default()).extrapolate_class_wise(task, stream)
}

pub fn extrapolate_dataset_wise(task: &TaskSpec, backend: &dyn ChatBackend, stream: u64) -> Result<DomainKnowledge> {
    Orchestrator::new(backend, OrchestratorConfig::default()).extrapolate_dataset_wise(task, stream)
}

pub fn generate_llm_prompts(
    class: &str,
    domain: &str,
    k: usize,
    backend: &dyn ChatBackend,
    stream: u64,
) -> Result<Vec<PromptItem>> {
    Ok(Orchestrator::new(backend, OrchestratorConfig::default())
        .generate_llm_prompts(class, domain, k, stream)?
        .0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(classes: &[&str], n: usize) -> TaskSpec {
        TaskSpec {
            task_name: "pets".into(),
            classes: classes
                .iter()
                .map(|c| ClassSpec {
                    name: c.to_string(),
                    definition: format!("a {c}"),
                })
                .collect(),
            domains_requested: n,
            prompts_per_domain: 2,
        }
    }

    #[test]
    fn class_wise_with_mock() {
        let mock = MockChatBackend::new(7);
        let k = extrapolate_class_wise(&task(&["dog", "cat"], 3), &mock, 7).unwrap();
        assert_eq!(k.entries.len(), 2);
        for e in &k.entries {
            assert_eq!(e.domains.len(), 3);
            for d in &e.domains {
                assert!(mock::DOMAIN_VOCABULARY.contains(&d.as_str()));
            }
        }
        assert_eq!(k.provenance.len(), 2);
        assert!(k.provenance[0].system_prompt.contains("[Role]"));
        assert!(k.provenance[0].system_prompt.contains("[Task Description]"));
        assert!(k.provenance[0]
            .system_prompt
            .contains("3 most plausible and reasonable domains"));
        let again = extrapolate_class_wise(&task(&["dog", "cat"], 3), &mock, 7).unwrap();
        assert_eq!(k.to_json().unwrap(), again.to_json().unwrap());
    }

    #[test]
    fn minimal_class_wise() {
        let k = extrapolate_class_wise(&task(&["dog"], 1), &MockChatBackend::new(0), 0).unwrap();
        assert_eq!(k.provenance.len(), 1);
        assert_eq!(k.entries[0].domains.len(), 1);
    }

    #[test]
    fn duplicates_are_refilled() {
        let mock = MockChatBackend::with_behavior(1, MockBehavior::Duplicates);
        let k = extrapolate_class_wise(&task(&["dog"], 6), &mock, 0).unwrap();
        let domains = &k.entries[0].domains;
        assert_eq!(domains.len(), 6);
        let lower: std::collections::HashSet<String> = domains.iter().map(|d| d.to_lowercase()).collect();
        assert_eq!(lower.len(), 6);
        assert!(k.provenance.len() > 1);
    }

    #[test]
    fn stuck_backend_reports_shortfall() {
        let mock = MockChatBackend::with_behavior(1, MockBehavior::Stuck);
        match extrapolate_class_wise(&task(&["dog"], 3), &mock, 0) {
            Err(Error::Shortfall { wanted, got, .. }) => assert_eq!((wanted, got), (3, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn failures_name_the_class_and_keep_raw_text() {
        let failing = MockChatBackend::with_behavior(1, MockBehavior::Fail);
        match extrapolate_class_wise(&task(&["dog", "cat"], 2), &failing, 0) {
            Err(Error::Backend { stage, .. }) => assert_eq!(stage, "extrapolate:dog"),
            other => panic!("{other:?}"),
        }
        let refusing = MockChatBackend::with_behavior(1, MockBehavior::Refuse);
        match extrapolate_dataset_wise(&task(&["dog"], 2), &refusing, 0) {
            Err(Error::Parse { raw, .. }) => assert_eq!(raw, "I cannot help with that"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dataset_wise_shares_one_list() {
        let mock = MockChatBackend::new(3);
        let t = task(&["dog", "cat", "horse"], 4);
        let k = extrapolate_dataset_wise(&t, &mock, 11).unwrap();
        assert_eq!(k.provenance.len(), 1);
        assert!(k.entries.iter().all(|e| e.domains == k.entries[0].domains));
        assert!(k.provenance[0].user_prompt.contains("horse"));
        assert_eq!(
            k.to_json().unwrap(),
            extrapolate_dataset_wise(&t, &mock, 11).unwrap().to_json().unwrap()
        );
    }

    #[test]
    fn template_rendering() {
        assert_eq!(
            render_template_prompt("dog", "cityscapes").unwrap(),
            "An image of dog in the domain of cityscapes"
        );
        let p = render_template_prompt("guitar", "fairytale").unwrap();
        assert_eq!(p, "An image of guitar in the domain of fairytale");
        assert_eq!(p.matches("guitar").count(), 1);
        assert_eq!(p.matches("fairytale").count(), 1);
        assert!(render_template_prompt("", "x").is_err());
        assert!(render_template_prompt("x", " ").is_err());
        assert_eq!(render_class_template("dog").unwrap(), "An image of dog");
    }

    #[test]
    fn llm_prompts_are_distinct() {
        let mock = MockChatBackend::new(5);
        let two = generate_llm_prompts("dog", "underwater", 2, &mock, 0).unwrap();
        assert_eq!(two.len(), 2);
        assert_ne!(two[0].prompt_text, two[1].prompt_text);
        for p in &two {
            assert!(p.prompt_text.contains("dog") && p.prompt_text.contains("underwater"));
            assert_eq!(p.mode, PromptMode::Llm);
        }
        assert_eq!(generate_llm_prompts("dog", "underwater", 1, &mock, 0).unwrap().len(), 1);
        let eight = generate_llm_prompts("cat", "desert", 8, &mock, 0).unwrap();
        let uniq: std::collections::HashSet<_> = eight.iter().map(|p| &p.prompt_text).collect();
        assert_eq!(uniq.len(), 8);
    }

    #[test]
    fn prompt_sets_cover_every_pair() {
        let mock = MockChatBackend::new(5);
        let t = task(&["dog", "cat"], 3);
        let k = extrapolate_class_wise(&t, &mock, 0).unwrap();
        let tpl = build_template_prompts(&k).unwrap();
        assert_eq!(tpl.items.len(), 6);
        for item in &tpl.items {
            assert_eq!(
                item.prompt_text,
                format!("An image of {} in the domain of {}", item.class, item.domain)
            );
        }
        let orch = Orchestrator::new(&mock, OrchestratorConfig::default());
        let llm = orch.build_llm_prompts(&k, 2, 0).unwrap();
        assert_eq!(llm.items.len(), 12);
        assert_eq!(
            llm.to_json().unwrap(),
            orch.build_llm_prompts(&k, 2, 0).unwrap().to_json().unwrap()
        );
    }

    #[test]
    fn journal_is_written_ahead() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exchanges.jsonl");
        let journal = ExchangeJournal::open(&path).unwrap();
        let mock = MockChatBackend::new(5);
        let k = Orchestrator::new(&mock, OrchestratorConfig::default())
            .with_journal(&journal)
            .extrapolate_class_wise(&task(&["dog", "cat"], 2), 0)
            .unwrap();
        let lines: Vec<ChatExchange> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), k.provenance.len());
        for e in &k.provenance {
            assert!(lines.contains(e));
        }
    }

    #[test]
    fn task_validation() {
        let mut t = task(&["dog", "dog"], 2);
        assert!(t.validate().is_err());
        t = task(&[], 2);
        assert!(t.validate().is_err());
        t = task(&["dog"], 0);
        assert!(t.validate().is_err());
    }
}

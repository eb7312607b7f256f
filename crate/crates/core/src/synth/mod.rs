//! Sample synthesis from prompt sets, similarity filtering, and training-set assembly.

pub mod assemble;
pub mod backend;
pub mod filter;
pub mod manifest;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use assemble::{assemble_training_set, Protocol};
pub use backend::{
    EmbeddingClient, EmbeddingConfig, Generated, HttpImageBackend, HttpImageConfig, ImageBackend, ImageRequest,
    MockImageBackend,
};
pub use filter::{
    cosine, filter_by_similarity, filter_with_embeddings, template_prototypes, FilterReport, RetentionRow,
};
pub use manifest::{entry_id, Manifest, ManifestEntry, ManifestHeader, ManifestWriter, Payload};

use crate::error::{Error, Result};
use crate::knowledge::{PromptItem, PromptSet};
use crate::rng::Stream;

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub images_per_prompt: usize,
    pub stream: u64,
    /// Concurrent backend requests.
    pub in_flight: usize,
    /// Where byte payloads are written; paths in the manifest are relative to it.
    pub artifact_dir: Option<PathBuf>,
}

impl SynthOptions {
    pub fn new(images_per_prompt: usize, stream: u64) -> Self {
        SynthOptions {
            images_per_prompt,
            stream,
            in_flight: 4,
            artifact_dir: None,
        }
    }
}

/// Seeds of every replicate of `item`; keyed by content, so they do not
/// depend on the item's position in the prompt set.
pub fn replicate_seeds(item: &PromptItem, images_per_prompt: usize, stream: u64) -> Vec<u64> {
    let base = Stream::new(stream)
        .named("synth")
        .named(&item.class)
        .named(&item.domain)
        .named(&item.prompt_text);
    (0..images_per_prompt as u64)
        .map(|r| base.child(r).draw_u64())
        .collect()
}

fn run_item(
    item: &PromptItem,
    seeds: Vec<u64>,
    backend: &dyn ImageBackend,
    artifact_dir: Option<&Path>,
) -> std::result::Result<Vec<ManifestEntry>, String> {
    let request = ImageRequest {
        class: item.class.clone(),
        domain: item.domain.clone(),
        prompt: item.prompt_text.clone(),
        seeds: seeds.clone(),
    };
    let outputs = backend.generate(&request)?;
    if outputs.len() != seeds.len() {
        return Err(format!(
            "backend returned {} outputs for {} seeds",
            outputs.len(),
            seeds.len()
        ));
    }
    outputs
        .into_iter()
        .zip(seeds)
        .map(|(g, seed)| {
            let id = entry_id(&item.class, &item.domain, &item.prompt_text, seed, backend.id());
            let payload = match g {
                Generated::Vector(v) => Payload::Vector(v),
                Generated::Bytes(bytes) => {
                    let dir = artifact_dir.ok_or("backend returned image bytes but no artifact directory is set")?;
                    let rel = format!("images/{id}.png");
                    let full = dir.join(&rel);
                    std::fs::create_dir_all(full.parent().expect("joined path has a parent"))
                        .and_then(|_| std::fs::write(&full, bytes))
                        .map_err(|e| format!("writing {}: {e}", full.display()))?;
                    Payload::Path(rel)
                }
            };
            Ok(ManifestEntry::new(
                &item.class,
                &item.domain,
                &item.prompt_text,
                seed,
                backend.id(),
                payload,
            ))
        })
        .collect()
}

/// Core loop: runs prompts in batches of `in_flight`, hands completed entries
/// to `sink` in (prompt, replicate) order, and stops at the first failure
/// after flushing everything ordered before it.
fn drive(
    prompts: &PromptSet,
    backend: &dyn ImageBackend,
    options: &SynthOptions,
    skip: &dyn Fn(&str) -> bool,
    sink: &mut dyn FnMut(ManifestEntry) -> Result<()>,
) -> Result<usize> {
    if options.images_per_prompt == 0 {
        return Err(Error::validation("images_per_prompt must be >= 1"));
    }
    let jobs: Vec<(&PromptItem, Vec<u64>)> = prompts
        .items
        .iter()
        .map(|item| (item, replicate_seeds(item, options.images_per_prompt, options.stream)))
        .filter(|(item, seeds)| {
            seeds.iter().any(|s| {
                !skip(&entry_id(
                    &item.class,
                    &item.domain,
                    &item.prompt_text,
                    *s,
                    backend.id(),
                ))
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.in_flight.max(1))
        .build()
        .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    let mut completed = 0;
    for batch in jobs.chunks(options.in_flight.max(1)) {
        let results: Vec<_> = pool.install(|| {
            batch
                .par_iter()
                .map(|(item, seeds)| run_item(item, seeds.clone(), backend, options.artifact_dir.as_deref()))
                .collect()
        });
        for (r, (item, _)) in results.into_iter().zip(batch) {
            match r {
                Ok(entries) => {
                    for e in entries {
                        if !skip(&e.id) {
                            sink(e)?;
                            completed += 1;
                        }
                    }
                }
                Err(message) => {
                    return Err(Error::Backend {
                        stage: format!("synthesize:{}/{}", item.class, item.domain),
                        message,
                        completed,
                    })
                }
            }
        }
    }
    Ok(completed)
}

/// One entry per (prompt, replicate), in prompt order.
pub fn synthesize(
    prompts: &PromptSet,
    backend: &dyn ImageBackend,
    options: &SynthOptions,
    header: ManifestHeader,
) -> Result<Manifest> {
    let mut manifest = Manifest::new(header);
    drive(prompts, backend, options, &|_| false, &mut |e| {
        manifest.entries.push(e);
        Ok(())
    })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Streams entries into a manifest file, skipping those already present when
/// resuming. On failure the file holds every entry completed before it.
pub fn synthesize_to_file(
    path: &Path,
    prompts: &PromptSet,
    backend: &dyn ImageBackend,
    options: &SynthOptions,
    header: &ManifestHeader,
    resume: bool,
) -> Result<Manifest> {
    let mut writer = if resume {
        ManifestWriter::resume(path, header)?
    } else {
        ManifestWriter::create(path, header)?
    };
    let existing: std::collections::HashSet<String> = writer.existing().iter().map(|e| e.id.clone()).collect();
    drive(prompts, backend, options, &|id| existing.contains(id), &mut |e| {
        writer.append(&e)
    })?;
    drop(writer);
    Manifest::read(path)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::knowledge::{build_template_prompts, ClassDomains, DomainKnowledge, QueryStrategy};
    use crate::meta_sim::MetaDistributionSpec;

    fn header() -> ManifestHeader {
        ManifestHeader {
            task_name: "pets".into(),
            created_at: "1970-01-01T00:00:00Z".into(),
            config_digest: "d".into(),
        }
    }

    fn prompts(domains: &[&str]) -> PromptSet {
        let k = DomainKnowledge {
            entries: ["dog", "cat"]
                .iter()
                .map(|c| ClassDomains {
                    class: c.to_string(),
                    domains: domains.iter().map(|d| d.to_string()).collect(),
                })
                .collect(),
            strategy: QueryStrategy::DatasetWise,
            provenance: vec![],
        };
        build_template_prompts(&k).unwrap()
    }

    fn mock() -> MockImageBackend {
        let spec = MetaDistributionSpec::new(2, 2, 2.5, 0.75, 0.5, 0).unwrap();
        MockImageBackend::new(spec, vec!["dog".into(), "cat".into()], 1).unwrap()
    }

    /// Fails on the `fail_at`-th request.
    struct Flaky {
        inner: MockImageBackend,
        calls: AtomicUsize,
        fail_at: usize,
    }

    impl ImageBackend for Flaky {
        fn id(&self) -> &str {
            "mock"
        }
        fn generate(&self, r: &ImageRequest) -> std::result::Result<Vec<Generated>, String> {
            if self.calls.fetch_add(1, Ordering::SeqCst) == self.fail_at {
                return Err("boom".into());
            }
            self.inner.generate(r)
        }
    }

    #[test]
    fn counts_and_unique_ids() {
        let mut p = prompts(&["snow"]);
        p.items.truncate(2);
        let m = synthesize(&p, &mock(), &SynthOptions::new(3, 0), header()).unwrap();
        assert_eq!(m.entries.len(), 6);
        let ids: std::collections::HashSet<_> = m.entries.iter().map(|e| &e.id).collect();
        assert_eq!(ids.len(), 6);
        assert!(synthesize(&p, &mock(), &SynthOptions::new(0, 0), header()).is_err());
    }

    #[test]
    fn byte_identical_and_order_independent_of_concurrency() {
        let p = prompts(&["snow", "desert", "city"]);
        let a = synthesize(&p, &mock(), &SynthOptions::new(4, 9), header()).unwrap();
        let mut opts = SynthOptions::new(4, 9);
        opts.in_flight = 1;
        let b = synthesize(&p, &mock(), &opts, header()).unwrap();
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
        assert_eq!(a.entries[0].class, "dog");
        assert_eq!(a.entries[4].domain, "desert");
    }

    #[test]
    fn seeds_nest_across_prompt_sets() {
        let small = synthesize(&prompts(&["snow"]), &mock(), &SynthOptions::new(2, 5), header()).unwrap();
        let big = synthesize(
            &prompts(&["snow", "desert"]),
            &mock(),
            &SynthOptions::new(2, 5),
            header(),
        )
        .unwrap();
        for e in &small.entries {
            assert!(big.entries.contains(e));
        }
    }

    #[test]
    fn failure_keeps_partial_file_and_resume_completes_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let p = prompts(&["snow", "desert", "city"]);
        let mut opts = SynthOptions::new(2, 3);
        opts.in_flight = 1;
        let flaky = Flaky {
            inner: mock(),
            calls: AtomicUsize::new(0),
            fail_at: 2,
        };
        match synthesize_to_file(&path, &p, &flaky, &opts, &header(), false) {
            Err(Error::Backend { completed, .. }) => assert_eq!(completed, 4),
            other => panic!("{other:?}"),
        }
        assert_eq!(Manifest::read(&path).unwrap().entries.len(), 4);
        let resumed = synthesize_to_file(&path, &p, &mock(), &opts, &header(), true).unwrap();
        let clean = synthesize(&p, &mock(), &opts, header()).unwrap();
        assert_eq!(resumed.to_jsonl().unwrap(), clean.to_jsonl().unwrap());
        assert_eq!(std::fs::read_to_string(&path).unwrap(), clean.to_jsonl().unwrap());
    }

    #[test]
    fn byte_payloads_are_written_to_files() {
        struct Bytes;
        impl ImageBackend for Bytes {
            fn id(&self) -> &str {
                "http"
            }
            fn generate(&self, r: &ImageRequest) -> std::result::Result<Vec<Generated>, String> {
                Ok(r.seeds
                    .iter()
                    .map(|s| Generated::Bytes(s.to_le_bytes().to_vec()))
                    .collect())
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let mut p = prompts(&["snow"]);
        p.items.truncate(1);
        let mut opts = SynthOptions::new(2, 0);
        assert!(matches!(
            synthesize(&p, &Bytes, &opts, header()),
            Err(Error::Backend { .. })
        ));
        opts.artifact_dir = Some(dir.path().to_path_buf());
        let m = synthesize(&p, &Bytes, &opts, header()).unwrap();
        for e in &m.entries {
            let Payload::Path(rel) = &e.payload else { panic!() };
            assert_eq!(std::fs::read(dir.path().join(rel)).unwrap(), e.seed.to_le_bytes());
        }
    }
}

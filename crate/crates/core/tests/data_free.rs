use domex_core::erm::erm_grid;
use domex_core::hypothesis::{build_grid_from, GridConstruction, GridSpec, LossFunction, LossKind};
use domex_core::knowledge::{
    build_template_prompts, ClassSpec, MockChatBackend, Orchestrator, OrchestratorConfig, QueryStrategy, TaskSpec,
};
use domex_core::meta_sim::{closed_form_risk, MetaDistributionSpec};
use domex_core::synth::{
    assemble_training_set, filter_by_similarity, synthesize, template_prototypes, ManifestHeader, MockImageBackend,
    Protocol, SynthOptions,
};

fn task() -> TaskSpec {
    let class = |n: &str| ClassSpec {
        name: n.into(),
        definition: String::new(),
    };
    TaskSpec {
        task_name: "pets".into(),
        classes: vec![class("dog"), class("cat")],
        domains_requested: 6,
        prompts_per_domain: 1,
    }
}

fn header() -> ManifestHeader {
    ManifestHeader {
        task_name: "pets".into(),
        created_at: "1970-01-01T00:00:00Z".into(),
        config_digest: "test".into(),
    }
}

/// Extrapolate, prompt, synthesize, filter, assemble and fit without any
/// real data, then score on the target.
fn data_free_risk(seed: u64) -> (f64, f64) {
    let mu = MetaDistributionSpec::new(2, 2, 2.5, 0.75, 0.5, seed).unwrap();
    let chat = MockChatBackend::new(seed);
    let knowledge = Orchestrator::new(&chat, OrchestratorConfig::default())
        .extrapolate(&task(), QueryStrategy::DatasetWise, seed)
        .unwrap();
    let prompts = build_template_prompts(&knowledge).unwrap();
    let classes: Vec<String> = vec!["dog".into(), "cat".into()];
    let images = MockImageBackend::new(mu.clone(), classes.clone(), seed).unwrap();
    let manifest = synthesize(&prompts, &images, &SynthOptions::new(24, seed), header()).unwrap();
    let (filtered, report) = filter_by_similarity(&manifest, &template_prototypes(&manifest), 0.2).unwrap();
    assert!(report.kept > 0);
    let data = assemble_training_set(None, &filtered, &classes, Protocol::DataFree).unwrap();
    assert_eq!(data.n_domains(), 6);
    let grid =
        build_grid_from(&GridSpec::new(2, 64, GridConstruction::SphereGrid, 0).with_bias_ladder(4, 0.75)).unwrap();
    let (h, _) = erm_grid(&grid, &data, LossFunction::RAMP).unwrap();
    (
        closed_form_risk(&mu, &h, LossKind::Ramp).unwrap(),
        closed_form_risk(&mu, &h, LossKind::ZeroOne).unwrap(),
    )
}

#[test]
fn data_free_beats_every_constant_classifier() {
    // A constant predictor has ramp and zero-one risk 1/2 under a balanced prior.
    for seed in 0..10 {
        let (ramp, zero_one) = data_free_risk(seed);
        assert!(ramp < 0.5, "seed {seed}: ramp risk {ramp}");
        assert!(zero_one < 0.5, "seed {seed}: zero-one risk {zero_one}");
    }
}

#[test]
fn data_free_run_is_reproducible() {
    assert_eq!(data_free_risk(4), data_free_risk(4));
}

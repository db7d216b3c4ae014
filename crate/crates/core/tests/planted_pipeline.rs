//! Integration tests running the augmentation chains and the refinement
//! loop against the bundled planted-corpus fixtures.

use std::path::PathBuf;

use xaug_core::attribution::SelectionPolicy;
use xaug_core::augment::{augment_dataset, AugmentBackends, AugmentMethod, Paraphraser};
use xaug_core::corpus::build_vocab;
use xaug_core::lexical::load_synonym_table;
use xaug_core::model::{train_classifier, TrainConfig};
use xaug_core::pipeline::{
    generate_planted_corpus, run_refinement, PipelineResources, PlantedConfig, RunConfig,
};
use xaug_core::translation::{TranslationCache, Translator};
use xaug_core::LexicalDatabase;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn planted_translator() -> Translator {
    Translator::mock_from_files(
        "mock-planted",
        &[
            (("xx", "en"), fixture("planted/forward.tsv").as_path()),
            (("en", "xx"), fixture("planted/reverse.tsv").as_path()),
        ],
    )
    .unwrap()
}

fn planted_lexdb() -> LexicalDatabase {
    load_synonym_table(&fixture("planted/synonyms.tsv")).unwrap()
}

#[test]
fn planted_corpus_record_count_and_vocab() {
    let ds = generate_planted_corpus(&PlantedConfig::default()).unwrap();
    assert_eq!(ds.len(), 200);
    assert_eq!(ds.num_classes(), 2);

    // Distinct-token count computed independently of build_vocab.
    let mut distinct: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for e in &ds.examples {
        for t in &e.tokens {
            distinct.insert(t);
        }
    }
    let vocab = build_vocab(&ds, 1).unwrap();
    assert_eq!(vocab.size(), distinct.len() + 2);
}

#[test]
fn sr_bt_pass_is_reproducible_and_label_preserving() {
    let ds = generate_planted_corpus(&PlantedConfig::default()).unwrap();
    let vocab = build_vocab(&ds, 1).unwrap();
    let (model, _) = train_classifier(&ds, &vocab, &TrainConfig::default()).unwrap();
    let lexdb = planted_lexdb();

    let run = || {
        let translator = planted_translator();
        let mut cache = TranslationCache::in_memory();
        let mut backends = AugmentBackends {
            translator: &translator,
            cache: &mut cache,
            lexdb: &lexdb,
            paraphraser: None,
            src_lang: "xx",
            pivot_lang: "en",
        };
        augment_dataset(
            &ds,
            AugmentMethod::SrBt,
            &model,
            &vocab,
            &SelectionPolicy::default(),
            None,
            8,
            13,
            &mut backends,
            None,
        )
        .unwrap()
    };

    let (aug1, report1) = run();
    let (aug2, report2) = run();
    assert_eq!(aug1, aug2);
    assert_eq!(report1, report2);

    // Every chain in the fixtures works, so one augmented example per
    // original and zero misses.
    assert_eq!(aug1.len(), ds.len());
    assert_eq!(report1.missed(), 0);
    assert_eq!(report1.ok, report1.total_selected);

    for augmented in &aug1.examples {
        let source = ds
            .examples
            .iter()
            .find(|e| e.id == augmented.id)
            .expect("augmented id maps to a source");
        assert_eq!(augmented.label, source.label);
    }
}

#[test]
fn empty_synonym_table_misses_everything() {
    let ds = generate_planted_corpus(&PlantedConfig {
        n: 40,
        ..PlantedConfig::default()
    })
    .unwrap();
    let vocab = build_vocab(&ds, 1).unwrap();
    let (model, _) = train_classifier(&ds, &vocab, &TrainConfig::default()).unwrap();
    let translator = planted_translator();
    let empty = LexicalDatabase::empty();
    let mut cache = TranslationCache::in_memory();
    let mut backends = AugmentBackends {
        translator: &translator,
        cache: &mut cache,
        lexdb: &empty,
        paraphraser: None,
        src_lang: "xx",
        pivot_lang: "en",
    };
    let (aug, report) = augment_dataset(
        &ds,
        AugmentMethod::SrBt,
        &model,
        &vocab,
        &SelectionPolicy::default(),
        None,
        8,
        13,
        &mut backends,
        None,
    )
    .unwrap();
    assert_eq!(aug.len(), 0);
    assert_eq!(report.no_synonym, report.total_selected);
    assert_eq!(report.dropped_noop_examples, ds.len());
}

#[test]
fn pr_bt_pass_produces_augmented_examples() {
    let ds = generate_planted_corpus(&PlantedConfig {
        n: 40,
        ..PlantedConfig::default()
    })
    .unwrap();
    let vocab = build_vocab(&ds, 1).unwrap();
    let (model, _) = train_classifier(&ds, &vocab, &TrainConfig::default()).unwrap();
    let translator = planted_translator();
    let paraphraser = Paraphraser::rule_mock_from_file(&fixture("planted/paraphrase.tsv")).unwrap();
    let lexdb = planted_lexdb();
    let mut cache = TranslationCache::in_memory();
    let mut backends = AugmentBackends {
        translator: &translator,
        cache: &mut cache,
        lexdb: &lexdb,
        paraphraser: Some(&paraphraser),
        src_lang: "xx",
        pivot_lang: "en",
    };
    let (aug, report) = augment_dataset(
        &ds,
        AugmentMethod::PrBt,
        &model,
        &vocab,
        &SelectionPolicy::default(),
        None,
        8,
        13,
        &mut backends,
        None,
    )
    .unwrap();
    assert_eq!(aug.len(), ds.len());
    assert_eq!(report.missed(), 0);
    // Paraphrases are multi-word, so augmented examples grow.
    assert!(aug
        .examples
        .iter()
        .zip(&ds.examples)
        .all(|(a, s)| a.tokens.len() > s.tokens.len()));
}

#[test]
fn refinement_loop_terminates_with_working_fixtures() {
    let ds = generate_planted_corpus(&PlantedConfig::default()).unwrap();
    let translator = planted_translator();
    let lexdb = planted_lexdb();
    let mut cache = TranslationCache::in_memory();
    let cfg = RunConfig {
        seed: 13,
        ig_steps: 8,
        ..RunConfig::default()
    };
    let mut resources = PipelineResources {
        translators: vec![&translator],
        paraphrasers: vec![],
        lexdb: &lexdb,
        cache: &mut cache,
    };
    let (report, _artifacts) = run_refinement(&ds, &cfg, &mut resources, None).unwrap();
    assert!(report.iterations.len() <= cfg.max_iterations);
    assert!(!report.iterations.is_empty());
    let last = report.iterations.last().unwrap();
    assert_eq!(last.combined_size, last.train_size + last.augmented_size);
    let stability = report.stability.as_ref().unwrap();
    assert_eq!(stability.per_example_overlap.len(), report.test_size);
    // Delta values recompute from the stored metrics exactly.
    for it in &report.iterations {
        assert_eq!(
            it.delta_acc,
            it.augmented_metrics.accuracy - report.baseline_metrics.accuracy
        );
        assert_eq!(
            it.delta_f1,
            it.augmented_metrics.macro_f1 - report.baseline_metrics.macro_f1
        );
    }
    // Ratio sequence is non-decreasing and capped.
    for w in report.ratio_sequence.windows(2) {
        assert!(w[0] <= w[1]);
    }
    assert!(report.ratio_sequence.iter().all(|&r| r <= 0.30 + 1e-12));
}

#[test]
fn refinement_loop_with_empty_table_escalates_then_exhausts() {
    let ds = generate_planted_corpus(&PlantedConfig::default()).unwrap();
    let translator = planted_translator();
    let empty = LexicalDatabase::empty();
    let mut cache = TranslationCache::in_memory();
    let cfg = RunConfig {
        seed: 13,
        ig_steps: 8,
        ..RunConfig::default()
    };
    let mut resources = PipelineResources {
        translators: vec![&translator],
        paraphrasers: vec![],
        lexdb: &empty,
        cache: &mut cache,
    };
    let (report, _artifacts) = run_refinement(&ds, &cfg, &mut resources, None).unwrap();
    assert_eq!(report.ratio_sequence, vec![0.20, 0.25, 0.30]);
    assert!(report.exhausted);
    assert!(!report.improved);
    assert!(report.iterations.is_empty());
}

#[test]
fn warm_cache_run_performs_zero_backend_invocations() {
    let ds = generate_planted_corpus(&PlantedConfig {
        n: 40,
        ..PlantedConfig::default()
    })
    .unwrap();
    let vocab = build_vocab(&ds, 1).unwrap();
    let (model, _) = train_classifier(&ds, &vocab, &TrainConfig::default()).unwrap();
    let lexdb = planted_lexdb();

    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");

    let pass = |translator: &Translator| {
        let mut cache = TranslationCache::open(&cache_path).unwrap();
        let mut backends = AugmentBackends {
            translator,
            cache: &mut cache,
            lexdb: &lexdb,
            paraphraser: None,
            src_lang: "xx",
            pivot_lang: "en",
        };
        let out = augment_dataset(
            &ds,
            AugmentMethod::SrBt,
            &model,
            &vocab,
            &SelectionPolicy::default(),
            None,
            8,
            13,
            &mut backends,
            None,
        )
        .unwrap();
        cache.save().unwrap();
        out
    };

    let cold_translator = planted_translator();
    let (aug_cold, _) = pass(&cold_translator);
    assert!(cold_translator.invocations() > 0);

    let warm_translator = planted_translator();
    let (aug_warm, _) = pass(&warm_translator);
    assert_eq!(warm_translator.invocations(), 0);
    assert_eq!(aug_cold, aug_warm);
}

//! The iterative refinement loop: attribute, augment, verify replacements,
//! escalate the selection ratio, retrain, and rotate backends until the
//! retrained model shows a meaningful improvement.
//!
//! Published large-scale reference values, for orientation only
//! (multilingual transformer results, not reproducible with this
//! desk-scale classifier): Amharic hate speech under XLM-R went
//! 0.865 → 0.931 accuracy with synonym-replacement back-translation,
//! a +0.066 delta.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::attribution::{integrated_gradients, SelectionPolicy};
use crate::augment::{
    augment_dataset, AugmentBackends, AugmentMethod, MissReport, Paraphraser, ReplacementPlan,
};
use crate::corpus::{build_vocab, split_dataset, Dataset, Example, LabelCatalog, Origin, Vocabulary};
use crate::error::CoreError;
use crate::lexical::LexicalDatabase;
use crate::model::{evaluate_model, train_classifier, Classifier, Metrics, TrainConfig};
use crate::translation::{TranslationCache, Translator};
use crate::Result;

/// Full-loop configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: AugmentMethod,
    pub policy: SelectionPolicy,
    pub max_iterations: usize,
    /// Meaningful-improvement threshold on absolute accuracy delta.
    pub epsilon: f64,
    /// Replacement-verification trigger: escalate when the fraction of
    /// missed selected positions exceeds this.
    pub miss_trigger: f64,
    pub seed: u64,
    pub split_ratios: (f64, f64, f64),
    pub train: TrainConfig,
    /// IG step count m.
    pub ig_steps: usize,
    pub src_lang: String,
    pub pivot_lang: String,
    /// Top fraction of positions compared in the stability report.
    pub stability_q: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: AugmentMethod::SrBt,
            policy: SelectionPolicy::default(),
            max_iterations: 5,
            epsilon: 0.005,
            miss_trigger: 0.5,
            seed: 0,
            split_ratios: (0.7, 0.15, 0.15),
            train: TrainConfig::default(),
            ig_steps: 64,
            src_lang: "xx".into(),
            pivot_lang: "en".into(),
            stability_q: 0.2,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.max_iterations < 1 {
            return Err(CoreError::InvalidArgument(
                "max_iterations must be >= 1".into(),
            ));
        }
        if self.epsilon < 0.0 {
            return Err(CoreError::InvalidArgument("epsilon must be >= 0".into()));
        }
        if self.ig_steps < 1 {
            return Err(CoreError::InvalidArgument("ig_steps must be >= 1".into()));
        }
        if !(self.stability_q > 0.0 && self.stability_q <= 1.0) {
            return Err(CoreError::InvalidArgument(
                "stability_q must be in (0, 1]".into(),
            ));
        }
        if self.src_lang == self.pivot_lang {
            return Err(CoreError::InvalidArgument(
                "source and pivot languages must differ".into(),
            ));
        }
        Ok(())
    }
}

/// Backends available to a run. The first translator (and paraphraser) is
/// active initially; the rest form the rotation list, followed by a single
/// IG step-count increase.
pub struct PipelineResources<'a> {
    pub translators: Vec<&'a Translator>,
    pub paraphrasers: Vec<&'a Paraphraser>,
    pub lexdb: &'a LexicalDatabase,
    pub cache: &'a mut TranslationCache,
}

/// Loop events worth auditing: threshold escalations and backend
/// rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub iteration: usize,
    pub kind: String,
    pub detail: String,
}

/// Per-iteration record. Delta values are against the baseline model on
/// the identical test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub ratio_used: f64,
    pub train_size: usize,
    pub augmented_size: usize,
    pub combined_size: usize,
    pub miss_report: MissReport,
    pub augmented_metrics: Metrics,
    pub delta_acc: f64,
    pub delta_f1: f64,
}

/// Overlap of top-important positions between two models on the same
/// examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub q: f64,
    pub per_example_overlap: Vec<f64>,
    pub mean_overlap: f64,
}

/// Canonical run summary. Contains no timestamps, so two identical runs
/// serialize byte-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: AugmentMethod,
    pub seed: u64,
    pub test_size: usize,
    pub baseline_metrics: Metrics,
    pub iterations: Vec<IterationReport>,
    pub events: Vec<RunEvent>,
    /// Every selection ratio used across the run, in order.
    pub ratio_sequence: Vec<f64>,
    pub improved: bool,
    pub exhausted: bool,
    pub final_delta_acc: f64,
    pub final_delta_f1: f64,
    pub stability: Option<StabilityReport>,
}

/// Escalation step for the selection ratio; `None` means the cap was
/// already reached.
pub fn escalate_policy(policy: &SelectionPolicy, current_ratio: f64) -> Option<f64> {
    if current_ratio >= policy.cap_ratio - 1e-12 {
        None
    } else {
        Some((current_ratio + policy.escalation_step).min(policy.cap_ratio))
    }
}

/// Per-example overlap of the top ceil(q×K) most important positions
/// under two models sharing one vocabulary.
pub fn attribution_stability(
    model_before: &Classifier,
    model_after: &Classifier,
    test: &Dataset,
    vocab: &Vocabulary,
    q: f64,
    ig_steps: usize,
) -> Result<StabilityReport> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(CoreError::InvalidArgument("q must be in (0, 1]".into()));
    }

    let top_positions = |model: &Classifier, example: &Example, top: usize| -> Result<Vec<usize>> {
        let indices = vocab.encode(&example.tokens);
        let target = model.predict(&indices);
        let attr = integrated_gradients(model, example, vocab, ig_steps, target, true)?;
        let mut order: Vec<usize> = (0..attr.len()).collect();
        order.sort_by(|&a, &b| {
            attr.importance[b]
                .partial_cmp(&attr.importance[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.cmp(&b))
        });
        order.truncate(top);
        Ok(order)
    };

    let mut per_example_overlap = Vec::new();
    for example in &test.examples {
        let total = example.tokens.len();
        if total == 0 {
            continue;
        }
        let top = ((q * total as f64).ceil() as usize).clamp(1, total);
        let before: std::collections::HashSet<usize> =
            top_positions(model_before, example, top)?.into_iter().collect();
        let after = top_positions(model_after, example, top)?;
        let intersection = after.iter().filter(|p| before.contains(p)).count();
        per_example_overlap.push(intersection as f64 / top as f64);
    }

    let mean_overlap = if per_example_overlap.is_empty() {
        1.0
    } else {
        per_example_overlap.iter().sum::<f64>() / per_example_overlap.len() as f64
    };

    Ok(StabilityReport {
        q,
        per_example_overlap,
        mean_overlap,
    })
}

/// Synthetic two-class corpus where a single planted keyword determines
/// the label, giving ground-truth feature importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub n: usize,
    pub seed: u64,
    /// Size of the shared filler-token pool.
    pub filler_vocab: usize,
    pub min_fillers: usize,
    pub max_fillers: usize,
    /// Probability of flipping an example's label (label-noise variant).
    pub label_noise: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n: 200,
            seed: 13,
            filler_vocab: 50,
            min_fillers: 8,
            max_fillers: 16,
            label_noise: 0.0,
        }
    }
}

pub const PLANTED_KEYWORDS: [&str; 2] = ["alphapos", "alphaneg"];
pub const PLANTED_LABELS: [&str; 2] = ["pos", "neg"];

/// Filler token at pool position `i`, matching the bundled fixture
/// dictionaries.
pub fn planted_filler(i: usize) -> String {
    format!("tok{i:03}")
}

pub fn generate_planted_corpus(cfg: &PlantedConfig) -> Result<Dataset> {
    if cfg.n < 20 {
        return Err(CoreError::InvalidArgument(
            "planted corpus needs n >= 20".into(),
        ));
    }
    if cfg.min_fillers < 1 || cfg.max_fillers < cfg.min_fillers {
        return Err(CoreError::InvalidArgument(
            "invalid filler length range".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut examples = Vec::with_capacity(cfg.n);
    for id in 0..cfg.n {
        let class = rng.gen_range(0..2usize);
        let fillers = rng.gen_range(cfg.min_fillers..=cfg.max_fillers);
        let mut tokens: Vec<String> = (0..fillers)
            .map(|_| planted_filler(rng.gen_range(0..cfg.filler_vocab)))
            .collect();
        let keyword_at = rng.gen_range(0..=tokens.len());
        tokens.insert(keyword_at, PLANTED_KEYWORDS[class].to_string());

        let mut label = class;
        if cfg.label_noise > 0.0 && rng.gen_bool(cfg.label_noise) {
            label = 1 - label;
        }

        examples.push(Example {
            id: id as u64,
            text: tokens.join(" "),
            tokens,
            label,
            origin: Origin::Original,
        });
    }

    Ok(Dataset {
        examples,
        labels: Arc::new(LabelCatalog::new(
            PLANTED_LABELS.iter().map(|s| s.to_string()).collect(),
        )),
    })
}

/// Trained models and data produced by a run, for checkpointing and
/// augmented-data dumps.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub baseline: Classifier,
    pub final_model: Classifier,
    pub vocab: Vocabulary,
    /// The last iteration's augmented dataset (empty when augmentation
    /// never produced anything).
    pub augmented: Dataset,
}

enum Rotation {
    Translator(usize),
    Paraphraser(usize),
    IncreaseSteps,
}

/// Execute the full feedback loop and produce a run report.
///
/// Steps per iteration: augment the train split guided by the latest
/// trained model, escalate the selection ratio while the miss ratio
/// exceeds the trigger, retrain on the combined set, evaluate on the same
/// test split, and either stop on a meaningful improvement or rotate to
/// the next backend.
pub fn run_refinement(
    data: &Dataset,
    cfg: &RunConfig,
    resources: &mut PipelineResources<'_>,
    mut collect_plans: Option<&mut Vec<ReplacementPlan>>,
) -> Result<(RunReport, RunArtifacts)> {
    cfg.validate()?;
    if resources.translators.is_empty() {
        return Err(CoreError::InvalidArgument(
            "at least one translator backend is required".into(),
        ));
    }

    let (train, _dev, test) = split_dataset(data, cfg.split_ratios, cfg.seed)?;
    let test_ids: Vec<u64> = test.examples.iter().map(|e| e.id).collect();

    // One vocabulary for the whole run so every trained model shares the
    // same embedding index space; novel back-translated tokens use the
    // trained unknown row.
    let vocab = build_vocab(&train, 1)?;
    let (baseline, _) = train_classifier(&train, &vocab, &cfg.train)?;
    let baseline_metrics = evaluate_model(&baseline, &test, &vocab)?;

    // Rotation list: remaining translators, then remaining paraphrasers
    // (when the method uses one), then a single IG step increase.
    let mut rotations: Vec<Rotation> = (1..resources.translators.len())
        .map(Rotation::Translator)
        .collect();
    if cfg.method == AugmentMethod::PrBt {
        rotations.extend((1..resources.paraphrasers.len()).map(Rotation::Paraphraser));
    }
    rotations.push(Rotation::IncreaseSteps);
    let mut rotations = rotations.into_iter();

    let mut active_translator = 0usize;
    let mut active_paraphraser = 0usize;
    let mut ig_steps = cfg.ig_steps;
    let mut ratio = cfg.policy.base_ratio;

    let mut current_model = baseline.clone();
    let mut last_augmented = Dataset {
        examples: Vec::new(),
        labels: Arc::clone(&train.labels),
    };
    let mut iterations: Vec<IterationReport> = Vec::new();
    let mut events: Vec<RunEvent> = Vec::new();
    let mut ratio_sequence: Vec<f64> = Vec::new();
    let mut improved = false;
    let mut exhausted = false;

    'outer: for iteration in 1..=cfg.max_iterations {
        // Augment, escalating the ratio while replacement verification
        // fails.
        let (augmented, miss_report) = loop {
            ratio_sequence.push(ratio);
            let mut backends = AugmentBackends {
                translator: resources.translators[active_translator],
                cache: resources.cache,
                lexdb: resources.lexdb,
                paraphraser: resources.paraphrasers.get(active_paraphraser).copied(),
                src_lang: &cfg.src_lang,
                pivot_lang: &cfg.pivot_lang,
            };
            let (augmented, miss_report) = augment_dataset(
                &train,
                cfg.method,
                &current_model,
                &vocab,
                &cfg.policy,
                Some(ratio),
                ig_steps,
                cfg.seed,
                &mut backends,
                collect_plans.as_deref_mut(),
            )?;

            if miss_report.miss_ratio() <= cfg.miss_trigger {
                break (augmented, miss_report);
            }
            match escalate_policy(&cfg.policy, ratio) {
                Some(next) => {
                    events.push(RunEvent {
                        iteration,
                        kind: "escalation".into(),
                        detail: format!(
                            "miss ratio {:.3} exceeded trigger {:.3}; ratio {:.2} -> {:.2}",
                            miss_report.miss_ratio(),
                            cfg.miss_trigger,
                            ratio,
                            next
                        ),
                    });
                    ratio = next;
                }
                None => {
                    events.push(RunEvent {
                        iteration,
                        kind: "escalation_exhausted".into(),
                        detail: format!(
                            "miss ratio {:.3} still above trigger at cap {:.2}",
                            miss_report.miss_ratio(),
                            cfg.policy.cap_ratio
                        ),
                    });
                    if augmented.is_empty() {
                        // Nothing was augmented at the cap; retraining
                        // would be a no-op.
                        exhausted = true;
                        break 'outer;
                    }
                    break (augmented, miss_report);
                }
            }
        };

        let combined = crate::augment::combine(&train, &augmented)?;
        let (retrained, _) = train_classifier(&combined, &vocab, &cfg.train)?;
        let augmented_metrics = {
            // Same test split throughout, asserted by id.
            debug_assert_eq!(
                test.examples.iter().map(|e| e.id).collect::<Vec<_>>(),
                test_ids
            );
            evaluate_model(&retrained, &test, &vocab)?
        };
        let delta_acc = augmented_metrics.accuracy - baseline_metrics.accuracy;
        let delta_f1 = augmented_metrics.macro_f1 - baseline_metrics.macro_f1;

        iterations.push(IterationReport {
            iteration,
            ratio_used: ratio,
            train_size: train.len(),
            augmented_size: augmented.len(),
            combined_size: combined.len(),
            miss_report,
            augmented_metrics,
            delta_acc,
            delta_f1,
        });

        current_model = retrained;
        last_augmented = augmented;

        if delta_acc >= cfg.epsilon {
            improved = true;
            break;
        }

        // Insufficient improvement: rotate to the next backend.
        match rotations.next() {
            Some(Rotation::Translator(idx)) => {
                active_translator = idx;
                events.push(RunEvent {
                    iteration,
                    kind: "rotation".into(),
                    detail: format!(
                        "switched translator to {}",
                        resources.translators[idx].id()
                    ),
                });
            }
            Some(Rotation::Paraphraser(idx)) => {
                active_paraphraser = idx;
                events.push(RunEvent {
                    iteration,
                    kind: "rotation".into(),
                    detail: format!("switched paraphraser to #{idx}"),
                });
            }
            Some(Rotation::IncreaseSteps) => {
                ig_steps *= 2;
                events.push(RunEvent {
                    iteration,
                    kind: "rotation".into(),
                    detail: format!("increased IG steps to {ig_steps}"),
                });
            }
            None => {
                exhausted = true;
                break;
            }
        }
    }

    if !improved && !exhausted {
        // Ran out of iterations.
        exhausted = true;
    }

    let stability = attribution_stability(
        &baseline,
        &current_model,
        &test,
        &vocab,
        cfg.stability_q,
        cfg.ig_steps,
    )?;

    let (final_delta_acc, final_delta_f1) = iterations
        .last()
        .map(|it| (it.delta_acc, it.delta_f1))
        .unwrap_or((0.0, 0.0));

    let report = RunReport {
        method: cfg.method,
        seed: cfg.seed,
        test_size: test.len(),
        baseline_metrics,
        iterations,
        events,
        ratio_sequence,
        improved,
        exhausted,
        final_delta_acc,
        final_delta_f1,
        stability: Some(stability),
    };
    let artifacts = RunArtifacts {
        baseline,
        final_model: current_model,
        vocab,
        augmented: last_augmented,
    };
    Ok((report, artifacts))
}

//! Replacement-plan construction and application for the two XAI-guided
//! augmentation chains, plus the random-position conventional baseline.
//!
//! Chain failures are never errors: each selected position carries a
//! status, and misses are aggregated into a [`MissReport`] that the
//! feedback loop uses for its replacement-verification branch.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{integrated_gradients, rank_and_select, SelectionPolicy, SelectionSet};
use crate::corpus::{tokenize, Dataset, Example, Origin, Vocabulary};
use crate::error::CoreError;
use crate::lexical::LexicalDatabase;
use crate::model::Classifier;
use crate::translation::{back_translate, translate, TranslationCache, Translator};
use crate::Result;

/// Augmentation strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMethod {
    SrBt,
    PrBt,
    Random,
}

impl AugmentMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentMethod::SrBt => "sr_bt",
            AugmentMethod::PrBt => "pr_bt",
            AugmentMethod::Random => "random",
        }
    }
}

impl std::str::FromStr for AugmentMethod {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sr_bt" => Ok(AugmentMethod::SrBt),
            "pr_bt" => Ok(AugmentMethod::PrBt),
            "random" => Ok(AugmentMethod::Random),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown augmentation method {other:?} (expected sr_bt, pr_bt, or random)"
            ))),
        }
    }
}

/// Why a selected position could not be replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissReason {
    NoSynonym,
    NoParaphrase,
    TranslationFailed,
    NoOpResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum EntryStatus {
    Ok,
    Miss(MissReason),
}

/// One selected position's full substitution chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub position: usize,
    /// The original token f_i.
    pub original: String,
    /// Pivot-language translation f_trans, when stage 1 produced one.
    pub pivot: Option<String>,
    /// Substitute in the pivot language (synonym or paraphrase).
    pub substitute: Option<String>,
    /// Back-translation f_bt; possibly multi-word.
    pub back_translation: Option<String>,
    #[serde(flatten)]
    pub status: EntryStatus,
}

/// Per-example replacement plan; entries cover the selection set exactly,
/// sorted by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPlan {
    pub example_id: u64,
    pub method: AugmentMethod,
    pub entries: Vec<PlanEntry>,
}

impl ReplacementPlan {
    pub fn ok_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.status == EntryStatus::Ok)
            .count()
    }
}

/// Paraphrase backend contract. The rule mock maps pivot-language words or
/// phrases through a dictionary file; unknown inputs are misses.
#[derive(Debug)]
pub enum Paraphraser {
    RuleMock { phrases: HashMap<String, String> },
    Http { id: String, endpoint: String },
}

impl Paraphraser {
    pub fn rule_mock_from_file(path: &std::path::Path) -> Result<Self> {
        let display = path.display().to_string();
        let content = std::fs::read_to_string(path).map_err(|e| CoreError::io(&display, e))?;
        let mut phrases = HashMap::new();
        for (lineno0, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let source = parts.next().unwrap_or("").trim().to_lowercase();
            let paraphrase = parts
                .next()
                .ok_or_else(|| {
                    CoreError::parse(&display, lineno0 + 1, "missing tab-separated paraphrase")
                })?
                .trim()
                .to_lowercase();
            phrases.insert(source, paraphrase);
        }
        Ok(Paraphraser::RuleMock { phrases })
    }

    pub fn rule_mock_from_map(phrases: HashMap<String, String>) -> Self {
        Paraphraser::RuleMock { phrases }
    }

    /// `Ok(None)` is a paraphrase miss, not an error.
    pub fn paraphrase(&self, text: &str) -> Result<Option<String>> {
        match self {
            Paraphraser::RuleMock { phrases } => Ok(phrases.get(&text.to_lowercase()).cloned()),
            Paraphraser::Http { id, endpoint } => {
                let client = reqwest::blocking::Client::new();
                let response = client
                    .post(endpoint)
                    .json(&serde_json::json!({ "q": text }))
                    .send()
                    .map_err(|e| CoreError::Backend {
                        backend: id.clone(),
                        message: e.to_string(),
                    })?;
                if !response.status().is_success() {
                    return Err(CoreError::Backend {
                        backend: id.clone(),
                        message: format!("status {}", response.status()),
                    });
                }
                let body: serde_json::Value = response.json().map_err(|e| CoreError::Backend {
                    backend: id.clone(),
                    message: format!("malformed response: {e}"),
                })?;
                Ok(body
                    .get("paraphrasedText")
                    .and_then(|v| v.as_str())
                    .map(|s| s.to_string()))
            }
        }
    }
}

enum Substituter<'a> {
    Synonym(&'a LexicalDatabase),
    Paraphrase(&'a Paraphraser),
}

#[allow(clippy::too_many_arguments)]
fn build_plan(
    example: &Example,
    selection: &SelectionSet,
    method: AugmentMethod,
    translator: &Translator,
    cache: &mut TranslationCache,
    substituter: Substituter<'_>,
    src_lang: &str,
    pivot_lang: &str,
) -> Result<ReplacementPlan> {
    let mut positions = selection.positions.clone();
    positions.sort_unstable();

    let mut entries = Vec::with_capacity(positions.len());
    for position in positions {
        let original = example.tokens.get(position).cloned().ok_or_else(|| {
            CoreError::InvalidArgument(format!(
                "selection position {position} out of range for example {}",
                example.id
            ))
        })?;

        let mut entry = PlanEntry {
            position,
            original: original.clone(),
            pivot: None,
            substitute: None,
            back_translation: None,
            status: EntryStatus::Ok,
        };

        // Stage 1: forward translation. A pass-through means the word was
        // never actually translated, which counts as a translation miss.
        let pivot = match translate(translator, cache, &original, src_lang, pivot_lang) {
            Ok(outcome) if !outcome.pass_through => outcome.text,
            Ok(_) => {
                entry.status = EntryStatus::Miss(MissReason::TranslationFailed);
                entries.push(entry);
                continue;
            }
            Err(CoreError::Backend { .. }) => {
                entry.status = EntryStatus::Miss(MissReason::TranslationFailed);
                entries.push(entry);
                continue;
            }
            Err(other) => return Err(other),
        };
        entry.pivot = Some(pivot.clone());

        // Stage 2: substitute in the pivot language.
        let substitute = match &substituter {
            Substituter::Synonym(db) => match db.lookup(&pivot) {
                Some(candidates) if !candidates.is_empty() => candidates[0].to_string(),
                _ => {
                    entry.status = EntryStatus::Miss(MissReason::NoSynonym);
                    entries.push(entry);
                    continue;
                }
            },
            Substituter::Paraphrase(paraphraser) => match paraphraser.paraphrase(&pivot) {
                Ok(Some(text)) if !text.is_empty() => text,
                Ok(_) => {
                    entry.status = EntryStatus::Miss(MissReason::NoParaphrase);
                    entries.push(entry);
                    continue;
                }
                Err(CoreError::Backend { .. }) => {
                    entry.status = EntryStatus::Miss(MissReason::NoParaphrase);
                    entries.push(entry);
                    continue;
                }
                Err(other) => return Err(other),
            },
        };
        entry.substitute = Some(substitute.clone());

        // Stage 3: back translation.
        let bt = match back_translate(translator, cache, &substitute, pivot_lang, src_lang) {
            Ok(outcome) => outcome.text,
            Err(CoreError::Backend { .. }) => {
                entry.status = EntryStatus::Miss(MissReason::TranslationFailed);
                entries.push(entry);
                continue;
            }
            Err(other) => return Err(other),
        };
        entry.back_translation = Some(bt.clone());

        // An identity round trip (or a result that tokenizes to nothing)
        // replaces nothing.
        let bt_tokens = tokenize(&bt);
        if bt_tokens.is_empty() || bt_tokens == [original.clone()] {
            entry.status = EntryStatus::Miss(MissReason::NoOpResult);
        }
        entries.push(entry);
    }

    Ok(ReplacementPlan {
        example_id: example.id,
        method,
        entries,
    })
}

/// XAI-SR-BT chain: translate → first synonym → back-translate.
pub fn build_plan_sr_bt(
    example: &Example,
    selection: &SelectionSet,
    translator: &Translator,
    cache: &mut TranslationCache,
    lexdb: &LexicalDatabase,
    src_lang: &str,
    pivot_lang: &str,
) -> Result<ReplacementPlan> {
    build_plan(
        example,
        selection,
        AugmentMethod::SrBt,
        translator,
        cache,
        Substituter::Synonym(lexdb),
        src_lang,
        pivot_lang,
    )
}

/// XAI-PR-BT chain: translate → paraphrase → back-translate.
pub fn build_plan_pr_bt(
    example: &Example,
    selection: &SelectionSet,
    translator: &Translator,
    cache: &mut TranslationCache,
    paraphraser: &Paraphraser,
    src_lang: &str,
    pivot_lang: &str,
) -> Result<ReplacementPlan> {
    build_plan(
        example,
        selection,
        AugmentMethod::PrBt,
        translator,
        cache,
        Substituter::Paraphrase(paraphraser),
        src_lang,
        pivot_lang,
    )
}

/// Apply a plan to its example. Ok entries are spliced in place (a
/// multi-word back-translation expands one position into several tokens),
/// miss entries keep the original token, and all non-selected positions
/// are preserved bit-exactly. Positions are interpreted against the
/// original token sequence.
pub fn apply_plan(example: &Example, plan: &ReplacementPlan) -> Result<Example> {
    if plan.example_id != example.id {
        return Err(CoreError::InvalidArgument(format!(
            "plan for example {} applied to example {}",
            plan.example_id, example.id
        )));
    }
    let by_position: HashMap<usize, &PlanEntry> =
        plan.entries.iter().map(|e| (e.position, e)).collect();

    let mut tokens: Vec<String> = Vec::with_capacity(example.tokens.len());
    for (i, token) in example.tokens.iter().enumerate() {
        match by_position.get(&i) {
            Some(entry) if entry.status == EntryStatus::Ok => {
                let bt = entry
                    .back_translation
                    .as_deref()
                    .expect("ok entry has a back-translation");
                tokens.extend(tokenize(bt));
            }
            _ => tokens.push(token.clone()),
        }
    }

    let text = tokens.join(" ");
    Ok(Example {
        id: example.id,
        text,
        tokens,
        label: example.label,
        origin: Origin::Augmented {
            method: plan.method.as_str().to_string(),
            source_id: example.id,
        },
    })
}

/// Aggregated replacement-verification counts for one augmentation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissReport {
    pub total_selected: usize,
    pub ok: usize,
    pub no_synonym: usize,
    pub no_paraphrase: usize,
    pub translation_failed: usize,
    pub no_op_result: usize,
    /// Miss ratio per source example, in dataset order.
    pub per_example_miss_ratio: Vec<f64>,
    /// Augmented candidates dropped because they were token-identical to
    /// their source.
    pub dropped_noop_examples: usize,
}

impl MissReport {
    fn empty() -> Self {
        MissReport {
            total_selected: 0,
            ok: 0,
            no_synonym: 0,
            no_paraphrase: 0,
            translation_failed: 0,
            no_op_result: 0,
            per_example_miss_ratio: Vec::new(),
            dropped_noop_examples: 0,
        }
    }

    fn absorb(&mut self, plan: &ReplacementPlan) {
        let selected = plan.entries.len();
        let mut missed = 0usize;
        for entry in &plan.entries {
            match entry.status {
                EntryStatus::Ok => self.ok += 1,
                EntryStatus::Miss(reason) => {
                    missed += 1;
                    match reason {
                        MissReason::NoSynonym => self.no_synonym += 1,
                        MissReason::NoParaphrase => self.no_paraphrase += 1,
                        MissReason::TranslationFailed => self.translation_failed += 1,
                        MissReason::NoOpResult => self.no_op_result += 1,
                    }
                }
            }
        }
        self.total_selected += selected;
        self.per_example_miss_ratio.push(if selected == 0 {
            0.0
        } else {
            missed as f64 / selected as f64
        });
    }

    pub fn missed(&self) -> usize {
        self.no_synonym + self.no_paraphrase + self.translation_failed + self.no_op_result
    }

    /// Fraction of all selected positions that missed.
    pub fn miss_ratio(&self) -> f64 {
        if self.total_selected == 0 {
            0.0
        } else {
            self.missed() as f64 / self.total_selected as f64
        }
    }

    /// Fraction of all selected positions that were actually replaced.
    pub fn replaced_ratio(&self) -> f64 {
        if self.total_selected == 0 {
            0.0
        } else {
            self.ok as f64 / self.total_selected as f64
        }
    }
}

/// Shared backend bundle for one augmentation pass.
pub struct AugmentBackends<'a> {
    pub translator: &'a Translator,
    pub cache: &'a mut TranslationCache,
    pub lexdb: &'a LexicalDatabase,
    pub paraphraser: Option<&'a Paraphraser>,
    pub src_lang: &'a str,
    pub pivot_lang: &'a str,
}

/// One augmentation pass over a dataset: attribute → select bottom-k →
/// build plan → apply. Candidates token-identical to their source are
/// dropped. Returns D_augmented and the aggregated miss report, and
/// optionally collects the plans for audit dumps.
#[allow(clippy::too_many_arguments)]
pub fn augment_dataset(
    data: &Dataset,
    method: AugmentMethod,
    model: &Classifier,
    vocab: &Vocabulary,
    policy: &SelectionPolicy,
    ratio_override: Option<f64>,
    ig_steps: usize,
    seed: u64,
    backends: &mut AugmentBackends<'_>,
    mut collect_plans: Option<&mut Vec<ReplacementPlan>>,
) -> Result<(Dataset, MissReport)> {
    if method == AugmentMethod::PrBt && backends.paraphraser.is_none() {
        return Err(CoreError::InvalidArgument(
            "pr_bt augmentation requires a paraphraser backend".into(),
        ));
    }

    let mut report = MissReport::empty();
    let mut augmented = Vec::new();

    for (index, example) in data.examples.iter().enumerate() {
        if example.tokens.is_empty() {
            continue;
        }

        let selection = match method {
            AugmentMethod::Random => {
                random_selection(example, policy, ratio_override, seed, index as u64)?
            }
            _ => {
                let indices = vocab.encode(&example.tokens);
                let target = model.predict(&indices);
                let attr = integrated_gradients(model, example, vocab, ig_steps, target, true)?;
                rank_and_select(&attr, policy, ratio_override)?
            }
        };

        let plan = match method {
            AugmentMethod::PrBt => build_plan_pr_bt(
                example,
                &selection,
                backends.translator,
                backends.cache,
                backends.paraphraser.expect("checked above"),
                backends.src_lang,
                backends.pivot_lang,
            )?,
            _ => build_plan_sr_bt(
                example,
                &selection,
                backends.translator,
                backends.cache,
                backends.lexdb,
                backends.src_lang,
                backends.pivot_lang,
            )?,
        };

        report.absorb(&plan);
        let candidate = apply_plan(example, &plan)?;
        if let Some(plans) = collect_plans.as_deref_mut() {
            plans.push(plan);
        }
        if candidate.tokens == example.tokens {
            report.dropped_noop_examples += 1;
        } else {
            augmented.push(candidate);
        }
    }

    Ok((
        Dataset {
            examples: augmented,
            labels: Arc::clone(&data.labels),
        },
        report,
    ))
}

/// Conventional baseline: the same replacement chain and k policy, but
/// positions chosen uniformly at random instead of by attribution.
fn random_selection(
    example: &Example,
    policy: &SelectionPolicy,
    ratio_override: Option<f64>,
    seed: u64,
    example_index: u64,
) -> Result<SelectionSet> {
    policy.validate()?;
    let total = example.tokens.len();
    let ratio = ratio_override.unwrap_or(policy.base_ratio);
    let cap_k = ((policy.cap_ratio * total as f64).floor() as usize).max(policy.min_k.max(1));
    let k = ((ratio * total as f64).floor() as usize)
        .max(policy.min_k.max(1))
        .min(cap_k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ example_index.wrapping_mul(0x9e3779b97f4a7c15));
    let positions = sample(&mut rng, total, k.min(total)).into_vec();
    Ok(SelectionSet {
        positions,
        k,
        total,
        ratio,
    })
}

/// Concatenate the original and augmented datasets with fresh unique ids.
pub fn combine(original: &Dataset, augmented: &Dataset) -> Result<Dataset> {
    if original.labels.names() != augmented.labels.names() {
        return Err(CoreError::InvalidArgument(
            "label catalogs differ between original and augmented datasets".into(),
        ));
    }
    let mut examples = Vec::with_capacity(original.len() + augmented.len());
    for (new_id, example) in original
        .examples
        .iter()
        .chain(&augmented.examples)
        .enumerate()
    {
        let mut example = example.clone();
        example.id = new_id as u64;
        examples.push(example);
    }
    Ok(Dataset {
        examples,
        labels: Arc::clone(&original.labels),
    })
}

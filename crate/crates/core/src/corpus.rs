//! Corpus loading, tokenization, vocabulary construction, and splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::Result;

/// Where an example came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Original,
    Augmented { method: String, source_id: u64 },
}

/// One labeled text record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub text: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub origin: Origin,
}

/// Class-name catalog, shared across splits derived from one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCatalog {
    names: Vec<String>,
}

impl LabelCatalog {
    pub fn new(names: Vec<String>) -> Self {
        LabelCatalog { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(|s| s.as_str())
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A labeled text dataset. Immutable once built; share via `Arc` for
/// concurrent read-only use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub labels: Arc<LabelCatalog>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }
}

/// Whitespace tokenizer with edge punctuation stripping and case folding.
///
/// Attribution and replacement operate on word tokens, so the tokenization
/// is word-level and deterministic: split on Unicode whitespace, trim
/// leading/trailing non-alphanumeric characters, lowercase, drop empties.
/// Punctuation-only pieces vanish, which makes punctuation ineligible as a
/// feature.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|piece| piece.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|piece| !piece.is_empty())
        .map(|piece| piece.to_lowercase())
        .collect()
}

#[derive(Deserialize)]
struct JsonlRecord {
    text: String,
    label: String,
    #[serde(default)]
    id: Option<u64>,
    #[serde(default)]
    origin: Option<Origin>,
}

/// Input file format for [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Jsonl,
    Tsv,
}

impl std::str::FromStr for DataFormat {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DataFormat::Jsonl),
            "tsv" => Ok(DataFormat::Tsv),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown data format {other:?} (expected jsonl or tsv)"
            ))),
        }
    }
}

/// Load a labeled corpus from disk.
///
/// Ids are assigned in file order (0-based) when the file supplies none;
/// the label catalog is built from distinct labels in first-occurrence
/// order.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| CoreError::io(&display, e))?;
    let reader = BufReader::new(file);

    let mut label_names: Vec<String> = Vec::new();
    let mut label_index: HashMap<String, usize> = HashMap::new();
    let mut examples: Vec<Example> = Vec::new();
    let mut seen_ids: HashMap<u64, usize> = HashMap::new();
    let mut next_id: u64 = 0;
    let mut record_count = 0usize;

    for (lineno0, line) in reader.lines().enumerate() {
        let lineno = lineno0 + 1;
        let line = line.map_err(|e| CoreError::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        record_count += 1;

        let (text, label_name, explicit_id, origin) = match format {
            DataFormat::Tsv => {
                let mut parts = line.splitn(2, '\t');
                let text = parts.next().unwrap_or("").to_string();
                let label = parts
                    .next()
                    .ok_or_else(|| {
                        CoreError::parse(&display, lineno, "missing tab-separated label field")
                    })?
                    .trim()
                    .to_string();
                (text, label, None, None)
            }
            DataFormat::Jsonl => {
                let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| {
                    CoreError::parse(&display, lineno, format!("invalid record: {e}"))
                })?;
                (record.text, record.label, record.id, record.origin)
            }
        };

        if text.trim().is_empty() {
            return Err(CoreError::parse(&display, lineno, "empty text field"));
        }
        if label_name.is_empty() {
            return Err(CoreError::parse(&display, lineno, "empty label field"));
        }

        let label = *label_index.entry(label_name.clone()).or_insert_with(|| {
            label_names.push(label_name.clone());
            label_names.len() - 1
        });

        let id = match explicit_id {
            Some(id) => {
                if let Some(prev_line) = seen_ids.get(&id) {
                    return Err(CoreError::parse(
                        &display,
                        lineno,
                        format!("duplicate id {id} (first seen on line {prev_line})"),
                    ));
                }
                id
            }
            None => {
                let id = next_id;
                next_id += 1;
                id
            }
        };
        seen_ids.insert(id, lineno);

        let tokens = tokenize(&text);
        examples.push(Example {
            id,
            text,
            tokens,
            label,
            origin: origin.unwrap_or(Origin::Original),
        });
    }

    if record_count == 0 {
        return Err(CoreError::parse(&display, 0, "empty dataset file"));
    }

    Ok(Dataset {
        examples,
        labels: Arc::new(LabelCatalog::new(label_names)),
    })
}

/// Write a dataset in the JSONL interchange schema (`text`, `label`,
/// `id`, plus `origin` for augmented records).
pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    use std::io::Write;
    let display = path.display().to_string();
    let mut out = Vec::new();
    for example in &dataset.examples {
        let label = dataset
            .labels
            .name(example.label)
            .ok_or_else(|| CoreError::InvalidArgument(format!(
                "example {} has label index {} outside the catalog",
                example.id, example.label
            )))?;
        let mut record = serde_json::json!({
            "id": example.id,
            "text": example.text,
            "label": label,
        });
        if example.origin != Origin::Original {
            record["origin"] = serde_json::to_value(&example.origin)
                .expect("origin serializes");
        }
        writeln!(out, "{record}").expect("write to vec");
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(&display, e))
}

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Token ↔ index bijection with reserved padding (0) and unknown (1) slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Index of a token, or the unknown index when absent.
    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token_of(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(|s| s.as_str())
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t)).collect()
    }
}

/// Build a vocabulary from corpus token frequencies.
///
/// Tokens with frequency >= `min_freq` receive indices >= 2 in descending
/// frequency order, ties broken lexicographically; everything else maps to
/// unknown.
pub fn build_vocab(dataset: &Dataset, min_freq: usize) -> Result<Vocabulary> {
    if dataset.is_empty() {
        return Err(CoreError::InvalidArgument(
            "cannot build a vocabulary from an empty dataset".into(),
        ));
    }
    if min_freq < 1 {
        return Err(CoreError::InvalidArgument("min_freq must be >= 1".into()));
    }

    let mut freq: HashMap<&str, usize> = HashMap::new();
    for example in &dataset.examples {
        for token in &example.tokens {
            *freq.entry(token.as_str()).or_insert(0) += 1;
        }
    }

    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(_, count)| count >= min_freq)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend(kept.iter().map(|&(token, _)| token.to_string()));

    let index = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();

    Ok(Vocabulary { tokens, index })
}

/// Deterministic seeded shuffle followed by a contiguous floor-then-remainder
/// cut into train/dev/test. The three splits share the source label catalog.
pub fn split_dataset(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (r_train, r_dev, r_test) = ratios;
    if r_train <= 0.0 || r_dev <= 0.0 || r_test <= 0.0 {
        return Err(CoreError::InvalidArgument(
            "split ratios must all be positive".into(),
        ));
    }
    let sum = r_train + r_dev + r_test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidArgument(format!(
            "split ratios must sum to 1 (got {sum})"
        )));
    }

    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = (r_train * n as f64).floor() as usize;
    let n_dev = (r_dev * n as f64).floor() as usize;
    let n_test = n - n_train - n_dev;
    if n_train == 0 || n_dev == 0 || n_test == 0 {
        return Err(CoreError::InvalidArgument(format!(
            "split produced an empty part (sizes {n_train}/{n_dev}/{n_test})"
        )));
    }

    let take = |range: std::ops::Range<usize>| Dataset {
        examples: order[range]
            .iter()
            .map(|&i| dataset.examples[i].clone())
            .collect(),
        labels: Arc::clone(&dataset.labels),
    };

    Ok((
        take(0..n_train),
        take(n_train..n_train + n_dev),
        take(n_train + n_dev..n),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_temp(content: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn tokenize_strips_punctuation_and_folds_case() {
        assert_eq!(
            tokenize("I hate rainy days."),
            vec!["i", "hate", "rainy", "days"]
        );
    }

    #[test]
    fn tokenize_empty_input() {
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn tokenize_unicode_punctuation() {
        assert_eq!(tokenize("¡Hola, mundo!"), vec!["hola", "mundo"]);
    }

    #[test]
    fn tokenize_drops_punctuation_only_pieces() {
        assert_eq!(tokenize("a -- b !!!"), vec!["a", "b"]);
    }

    #[test]
    fn load_tsv_two_lines() {
        let f = write_temp("good one\tpos\nbad one\tneg\n", ".tsv");
        let ds = load_dataset(f.path(), DataFormat::Tsv).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels.index("pos"), Some(0));
        assert_eq!(ds.labels.index("neg"), Some(1));
        assert_eq!(ds.examples[0].id, 0);
        assert_eq!(ds.examples[1].id, 1);
    }

    #[test]
    fn load_jsonl_missing_label_cites_line() {
        let f = write_temp("{\"text\": \"hello\"}\n", ".jsonl");
        let err = load_dataset(f.path(), DataFormat::Jsonl).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":1"), "expected line 1 in: {msg}");
    }

    #[test]
    fn load_empty_file_errors() {
        let f = write_temp("", ".tsv");
        assert!(load_dataset(f.path(), DataFormat::Tsv).is_err());
    }

    #[test]
    fn load_jsonl_duplicate_id_errors() {
        let f = write_temp(
            "{\"text\":\"a\",\"label\":\"x\",\"id\":3}\n{\"text\":\"b\",\"label\":\"x\",\"id\":3}\n",
            ".jsonl",
        );
        let err = load_dataset(f.path(), DataFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("duplicate id 3"));
    }

    fn toy_dataset(texts: &[&str]) -> Dataset {
        let examples = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Example {
                id: i as u64,
                text: t.to_string(),
                tokens: tokenize(t),
                label: 0,
                origin: Origin::Original,
            })
            .collect();
        Dataset {
            examples,
            labels: Arc::new(LabelCatalog::new(vec!["only".into()])),
        }
    }

    #[test]
    fn build_vocab_orders_by_frequency_then_lex() {
        let ds = toy_dataset(&["a a b"]);
        let vocab = build_vocab(&ds, 1).unwrap();
        assert_eq!(vocab.index_of("a"), 2);
        assert_eq!(vocab.index_of("b"), 3);
        assert_eq!(vocab.size(), 4);
    }

    #[test]
    fn build_vocab_min_freq_threshold() {
        let ds = toy_dataset(&["a a b"]);
        let vocab = build_vocab(&ds, 2).unwrap();
        assert_eq!(vocab.index_of("b"), UNK_INDEX);
        assert_eq!(vocab.index_of("a"), 2);
    }

    #[test]
    fn split_sizes_floor_then_remainder() {
        let ds = toy_dataset(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let (train, dev, test) = split_dataset(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((train.len(), dev.len(), test.len()), (8, 1, 1));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = toy_dataset(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let first = split_dataset(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        let second = split_dataset(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(first.0, second.0);
        assert_eq!(first.1, second.1);
        assert_eq!(first.2, second.2);
    }

    #[test]
    fn split_bad_ratios_error() {
        let ds = toy_dataset(&["a", "b", "c", "d"]);
        assert!(split_dataset(&ds, (0.5, 0.5, 0.5), 1).is_err());
    }

    #[test]
    fn split_partition_preserves_ids() {
        let ds = toy_dataset(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let (train, dev, test) = split_dataset(&ds, (0.6, 0.2, 0.2), 42).unwrap();
        let mut ids: Vec<u64> = train
            .examples
            .iter()
            .chain(&dev.examples)
            .chain(&test.examples)
            .map(|e| e.id)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..10).collect::<Vec<u64>>());
    }

    proptest! {
        #[test]
        fn tokenize_idempotent_on_own_output(text in ".{0,120}") {
            let once = tokenize(&text);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn vocab_round_trip(words in proptest::collection::vec("[a-z]{1,6}", 1..30)) {
            let ds = toy_dataset(&[words.join(" ").as_str()]);
            let vocab = build_vocab(&ds, 1).unwrap();
            for w in &words {
                let idx = vocab.index_of(w);
                prop_assert!(idx >= 2);
                let token = vocab.token_of(idx).unwrap();
                prop_assert_eq!(vocab.index_of(token), idx);
            }
        }
    }
}

//! A small differentiable text classifier: embedding → mean pool → linear
//! → softmax, trained with plain SGD.
//!
//! The target-class logit is linear in the input embeddings, which makes
//! Integrated Gradients exact for the default attribution target and gives
//! the attribution module a closed-form check.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Vocabulary};
use crate::error::CoreError;
use crate::Result;

const CHECKPOINT_VERSION: u32 = 1;

/// Training hyperparameters. Plain SGD, no momentum, so identical
/// (config, data) always reproduce identical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            l2: 0.0,
            embed_dim: 32,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(CoreError::InvalidArgument(
                "learning rate must be non-negative".into(),
            ));
        }
        if self.epochs < 1 {
            return Err(CoreError::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(CoreError::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.l2 < 0.0 {
            return Err(CoreError::InvalidArgument("l2 must be >= 0".into()));
        }
        if self.embed_dim < 1 {
            return Err(CoreError::InvalidArgument("embed_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Embedding table (V×d), output weights (d×C), output bias (C), fixed
/// mean pooling over token positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    /// Row-major V×d.
    pub embeddings: Vec<Vec<f64>>,
    /// Row-major d×C.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: Classifier,
}

impl Classifier {
    /// Seeded uniform(-0.1, 0.1) initialization.
    pub fn new_seeded(vocab_size: usize, embed_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrix = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| (0..cols).map(|_| rng.gen_range(-0.1..0.1)).collect())
                .collect()
        };
        let embeddings = matrix(vocab_size, embed_dim);
        let weights = matrix(embed_dim, num_classes);
        let bias = (0..num_classes).map(|_| rng.gen_range(-0.1..0.1)).collect();
        Classifier {
            vocab_size,
            embed_dim,
            num_classes,
            embeddings,
            weights,
            bias,
        }
    }

    pub fn zeros(vocab_size: usize, embed_dim: usize, num_classes: usize) -> Self {
        Classifier {
            vocab_size,
            embed_dim,
            num_classes,
            embeddings: vec![vec![0.0; embed_dim]; vocab_size],
            weights: vec![vec![0.0; num_classes]; embed_dim],
            bias: vec![0.0; num_classes],
        }
    }

    /// Embedding rows for a token index sequence.
    pub fn embed(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices
            .iter()
            .map(|&i| self.embeddings[i].clone())
            .collect()
    }

    fn pooled(&self, embedded: &[Vec<f64>]) -> Vec<f64> {
        let mut pooled = vec![0.0; self.embed_dim];
        if embedded.is_empty() {
            return pooled;
        }
        for row in embedded {
            for (p, &v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        let n = embedded.len() as f64;
        for p in &mut pooled {
            *p /= n;
        }
        pooled
    }

    /// Class logits for pre-embedded input.
    pub fn logits_from_embedded(&self, embedded: &[Vec<f64>]) -> Vec<f64> {
        let pooled = self.pooled(embedded);
        let mut logits = self.bias.clone();
        for (j, &p) in pooled.iter().enumerate() {
            for (c, logit) in logits.iter_mut().enumerate() {
                *logit += p * self.weights[j][c];
            }
        }
        logits
    }

    pub fn logits(&self, indices: &[usize]) -> Vec<f64> {
        self.logits_from_embedded(&self.embed(indices))
    }

    /// Softmax class probabilities. Errors on an empty index sequence.
    pub fn predict_proba(&self, indices: &[usize]) -> Result<Vec<f64>> {
        if indices.is_empty() {
            return Err(CoreError::InvalidArgument(
                "predict_proba requires a non-empty token sequence".into(),
            ));
        }
        Ok(softmax(&self.logits(indices)))
    }

    /// Argmax class, ties broken by the lowest class index.
    pub fn predict(&self, indices: &[usize]) -> usize {
        argmax(&self.logits(indices))
    }

    /// Gradient of the target-class output with respect to each input
    /// embedding vector. `attribute_logit` selects the logit as the output
    /// F; otherwise F is the target-class softmax probability. Analytic in
    /// both modes.
    pub fn input_gradients(
        &self,
        embedded: &[Vec<f64>],
        target: usize,
        attribute_logit: bool,
    ) -> Result<Vec<Vec<f64>>> {
        if target >= self.num_classes {
            return Err(CoreError::InvalidArgument(format!(
                "target class {target} out of range (C = {})",
                self.num_classes
            )));
        }
        if embedded.is_empty() {
            return Err(CoreError::InvalidArgument(
                "input_gradients requires a non-empty input".into(),
            ));
        }
        let n = embedded.len() as f64;

        // dF/d pooled_j, then each position shares it scaled by 1/n.
        let d_pooled: Vec<f64> = if attribute_logit {
            (0..self.embed_dim).map(|j| self.weights[j][target]).collect()
        } else {
            let probs = softmax(&self.logits_from_embedded(embedded));
            (0..self.embed_dim)
                .map(|j| {
                    (0..self.num_classes)
                        .map(|k| {
                            let delta = if k == target { 1.0 } else { 0.0 };
                            probs[target] * (delta - probs[k]) * self.weights[j][k]
                        })
                        .sum()
                })
                .collect()
        };

        let per_position: Vec<f64> = d_pooled.iter().map(|&g| g / n).collect();
        if per_position.iter().any(|g| !g.is_finite()) {
            return Err(CoreError::NonFiniteGradient);
        }
        Ok(vec![per_position; embedded.len()])
    }

    /// Target-class output value used by attribution: the logit, or the
    /// softmax probability when `attribute_logit` is false.
    pub fn output_value(&self, embedded: &[Vec<f64>], target: usize, attribute_logit: bool) -> f64 {
        let logits = self.logits_from_embedded(embedded);
        if attribute_logit {
            logits[target]
        } else {
            softmax(&logits)[target]
        }
    }

    /// Versioned textual checkpoint; loading reproduces predictions bitwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let checkpoint = Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let body = serde_json::to_string(&checkpoint)
            .map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        fs::write(path, body).map_err(|e| CoreError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body =
            fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let checkpoint: Checkpoint =
            serde_json::from_str(&body).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                checkpoint.version
            )));
        }
        Ok(checkpoint.model)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Train with seeded-shuffled mini-batch SGD on mean cross-entropy.
/// Returns the model and the per-epoch mean loss history.
pub fn train_classifier(
    train: &Dataset,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CoreError::InvalidArgument(
            "training dataset is empty".into(),
        ));
    }

    let num_classes = train.num_classes().max(2);
    let mut model = Classifier::new_seeded(vocab.size(), cfg.embed_dim, num_classes, cfg.seed);
    let encoded: Vec<(Vec<usize>, usize)> = train
        .examples
        .iter()
        .map(|e| (vocab.encode(&e.tokens), e.label))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        // Per-example losses summed in example order so the epoch mean is
        // independent of the shuffle.
        let mut example_losses = vec![0.0; encoded.len()];

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut d_weights = vec![vec![0.0; num_classes]; cfg.embed_dim];
            let mut d_bias = vec![0.0; num_classes];
            // Sparse embedding gradient: (row index, d-vector).
            let mut d_embed: Vec<(usize, Vec<f64>)> = Vec::new();

            for &idx in batch {
                let (indices, label) = &encoded[idx];
                let embedded = model.embed(indices);
                let pooled = model.pooled(&embedded);
                let logits = model.logits_from_embedded(&embedded);
                let probs = softmax(&logits);
                let loss = -probs[*label].max(f64::MIN_POSITIVE).ln();
                if !loss.is_finite() {
                    return Err(CoreError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    });
                }
                example_losses[idx] = loss;

                // d loss / d logits = p - onehot(label)
                let mut dz = probs;
                dz[*label] -= 1.0;

                for c in 0..num_classes {
                    d_bias[c] += scale * dz[c];
                    for j in 0..cfg.embed_dim {
                        d_weights[j][c] += scale * pooled[j] * dz[c];
                    }
                }

                if !indices.is_empty() {
                    let inv_n = 1.0 / indices.len() as f64;
                    let d_pooled: Vec<f64> = (0..cfg.embed_dim)
                        .map(|j| (0..num_classes).map(|c| dz[c] * model.weights[j][c]).sum())
                        .collect();
                    for &row in indices {
                        let grad: Vec<f64> = d_pooled.iter().map(|&g| scale * inv_n * g).collect();
                        d_embed.push((row, grad));
                    }
                }
            }

            let lr = cfg.learning_rate;
            for (w_row, d_row) in model.weights.iter_mut().zip(&d_weights) {
                for (w, &d) in w_row.iter_mut().zip(d_row) {
                    let reg = cfg.l2 * *w;
                    *w -= lr * (d + reg);
                }
            }
            for (b, &d) in model.bias.iter_mut().zip(&d_bias) {
                *b -= lr * d;
            }
            for (row, grad) in d_embed {
                for (e, g) in model.embeddings[row].iter_mut().zip(&grad) {
                    *e -= lr * g;
                }
            }
        }

        history.push(example_losses.iter().sum::<f64>() / encoded.len() as f64);
    }

    Ok((model, history))
}

/// Per-class precision/recall/F1 with the 0/0 → 0 convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Evaluation summary: accuracy, macro-F1, per-class scores, and the
/// confusion matrix (rows = reference class, columns = predicted class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: Vec<Vec<usize>>,
}

/// Compute metrics from a confusion matrix (rows = reference, columns =
/// predicted).
pub fn metrics_from_confusion(confusion: Vec<Vec<usize>>) -> Metrics {
    let c = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..c).map(|i| confusion[i][i]).sum();

    let per_class: Vec<ClassScores> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let pred_k: usize = (0..c).map(|i| confusion[i][k]).sum();
            let ref_k: usize = confusion[k].iter().sum();
            let precision = ratio_or_zero(tp, pred_k);
            let recall = ratio_or_zero(tp, ref_k);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
            }
        })
        .collect();

    let macro_f1 = per_class.iter().map(|s| s.f1).sum::<f64>() / c as f64;
    Metrics {
        accuracy: ratio_or_zero(correct, total),
        macro_f1,
        per_class,
        confusion,
    }
}

fn ratio_or_zero(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate_model(model: &Classifier, data: &Dataset, vocab: &Vocabulary) -> Result<Metrics> {
    if data.is_empty() {
        return Err(CoreError::InvalidArgument(
            "evaluation dataset is empty".into(),
        ));
    }
    let c = model.num_classes;
    let mut confusion = vec![vec![0usize; c]; c];
    for example in &data.examples {
        let indices = vocab.encode(&example.tokens);
        let predicted = model.predict(&indices);
        confusion[example.label][predicted] += 1;
    }
    Ok(metrics_from_confusion(confusion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Example, LabelCatalog, Origin};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn dataset_from(pairs: &[(&str, usize)], num_classes: usize) -> Dataset {
        let names = (0..num_classes).map(|i| format!("c{i}")).collect();
        Dataset {
            examples: pairs
                .iter()
                .enumerate()
                .map(|(i, (text, label))| Example {
                    id: i as u64,
                    text: text.to_string(),
                    tokens: tokenize(text),
                    label: *label,
                    origin: Origin::Original,
                })
                .collect(),
            labels: Arc::new(LabelCatalog::new(names)),
        }
    }

    /// Two classes with disjoint vocabularies; linearly separable by
    /// construction.
    fn separable_toy() -> Dataset {
        let mut pairs = Vec::new();
        for i in 0..10 {
            pairs.push((format!("apple banana cherry fruit{i}"), 0));
            pairs.push((format!("stone iron copper rock{i}"), 1));
        }
        let borrowed: Vec<(&str, usize)> = pairs.iter().map(|(t, l)| (t.as_str(), *l)).collect();
        dataset_from(&borrowed, 2)
    }

    #[test]
    fn separable_toy_trains_to_perfect_accuracy() {
        let ds = separable_toy();
        let vocab = crate::corpus::build_vocab(&ds, 1).unwrap();
        let cfg = TrainConfig {
            embed_dim: 8,
            epochs: 30,
            ..TrainConfig::default()
        };
        let (model, history) = train_classifier(&ds, &vocab, &cfg).unwrap();
        let metrics = evaluate_model(&model, &ds, &vocab).unwrap();
        assert_eq!(metrics.accuracy, 1.0);
        assert!(history.last().unwrap() < history.first().unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable_toy();
        let vocab = crate::corpus::build_vocab(&ds, 1).unwrap();
        let cfg = TrainConfig {
            embed_dim: 8,
            epochs: 5,
            ..TrainConfig::default()
        };
        let (m1, h1) = train_classifier(&ds, &vocab, &cfg).unwrap();
        let (m2, h2) = train_classifier(&ds, &vocab, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let ds = separable_toy();
        let vocab = crate::corpus::build_vocab(&ds, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        let (model, history) = train_classifier(&ds, &vocab, &cfg).unwrap();
        let initial = Classifier::new_seeded(vocab.size(), 8, 2, cfg.seed);
        assert_eq!(model, initial);
        assert!(history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let model = Classifier::zeros(5, 4, 3);
        let probs = model.predict_proba(&[2, 3]).unwrap();
        for p in probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_proba_empty_sequence_errors() {
        let model = Classifier::zeros(5, 4, 3);
        assert!(model.predict_proba(&[]).is_err());
    }

    #[test]
    fn single_position_logit_gradient_is_weight_column() {
        let model = Classifier::new_seeded(6, 4, 3, 9);
        let embedded = model.embed(&[2]);
        let grads = model.input_gradients(&embedded, 1, true).unwrap();
        for (j, g) in grads[0].iter().enumerate() {
            assert!((g - model.weights[j][1]).abs() < 1e-15);
        }
    }

    #[test]
    fn two_positions_halve_the_logit_gradient() {
        let model = Classifier::new_seeded(6, 4, 3, 9);
        let one = model.input_gradients(&model.embed(&[2]), 1, true).unwrap();
        let two = model.input_gradients(&model.embed(&[2, 3]), 1, true).unwrap();
        for j in 0..4 {
            assert!((two[0][j] - one[0][j] / 2.0).abs() < 1e-15);
            assert!((two[1][j] - one[0][j] / 2.0).abs() < 1e-15);
        }
    }

    /// Central finite differences on the target output, position by
    /// position; independent of the analytic path.
    fn finite_difference_gradients(
        model: &Classifier,
        embedded: &[Vec<f64>],
        target: usize,
        attribute_logit: bool,
        step: f64,
    ) -> Vec<Vec<f64>> {
        let mut grads = vec![vec![0.0; model.embed_dim]; embedded.len()];
        let mut perturbed = embedded.to_vec();
        for i in 0..embedded.len() {
            for j in 0..model.embed_dim {
                let original = perturbed[i][j];
                perturbed[i][j] = original + step;
                let plus = model.output_value(&perturbed, target, attribute_logit);
                perturbed[i][j] = original - step;
                let minus = model.output_value(&perturbed, target, attribute_logit);
                perturbed[i][j] = original;
                grads[i][j] = (plus - minus) / (2.0 * step);
            }
        }
        grads
    }

    #[test]
    fn gradients_match_finite_differences_over_seeds() {
        for seed in 0..50u64 {
            let model = Classifier::new_seeded(10, 5, 3, seed);
            let positions = 1 + (seed as usize % 4);
            let indices: Vec<usize> = (0..positions).map(|i| (i + seed as usize) % 10).collect();
            let embedded = model.embed(&indices);
            for &logit_mode in &[true, false] {
                let target = (seed % 3) as usize;
                let analytic = model.input_gradients(&embedded, target, logit_mode).unwrap();
                let numeric =
                    finite_difference_gradients(&model, &embedded, target, logit_mode, 1e-4);
                for (a_row, n_row) in analytic.iter().zip(&numeric) {
                    for (a, n) in a_row.iter().zip(n_row) {
                        assert!(
                            (a - n).abs() < 1e-5,
                            "seed {seed}: analytic {a} vs numeric {n}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn metrics_hand_computed_binary_case() {
        let metrics = metrics_from_confusion(vec![vec![1, 1], vec![0, 2]]);
        assert!((metrics.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((metrics.per_class[1].f1 - 0.8).abs() < 1e-12);
        assert!((metrics.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((metrics.accuracy - 0.75).abs() < 1e-12);
    }

    #[test]
    fn metrics_all_correct() {
        let metrics = metrics_from_confusion(vec![vec![2, 0], vec![0, 2]]);
        assert_eq!(metrics.accuracy, 1.0);
        assert_eq!(metrics.macro_f1, 1.0);
    }

    #[test]
    fn absent_class_scores_zero_and_still_averages() {
        // Class 2 never appears in references or predictions.
        let metrics = metrics_from_confusion(vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 0]]);
        assert_eq!(metrics.per_class[2].f1, 0.0);
        assert!((metrics.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let model = Classifier::new_seeded(7, 4, 2, 3);
        let file = tempfile::NamedTempFile::new().unwrap();
        model.save(file.path()).unwrap();
        let loaded = Classifier::load(file.path()).unwrap();
        assert_eq!(model, loaded);
        let indices = vec![1, 3, 5];
        assert_eq!(model.logits(&indices), loaded.logits(&indices));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-20.0f64..20.0, 2..8)) {
            let probs = softmax(&logits);
            let sum: f64 = probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(probs.iter().all(|&p| p > 0.0));
        }

        #[test]
        fn predict_proba_normalized_for_random_inputs(
            seed in 0u64..1000,
            indices in proptest::collection::vec(0usize..8, 1..6),
        ) {
            let model = Classifier::new_seeded(8, 4, 3, seed);
            let probs = model.predict_proba(&indices).unwrap();
            let sum: f64 = probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}

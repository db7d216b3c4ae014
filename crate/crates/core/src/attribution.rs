//! Integrated Gradients per token, an occlusion oracle, and bottom-k
//! selection of the least important positions.

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Vocabulary};
use crate::error::CoreError;
use crate::model::Classifier;
use crate::Result;

/// Per-token signed attributions plus their scalar importance.
///
/// Importance is the absolute value of the signed attribution: ranking by
/// magnitude captures how much a token moves the decision regardless of
/// direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub signed: Vec<f64>,
    pub importance: Vec<f64>,
    pub target_class: usize,
    pub steps: usize,
}

impl AttributionVector {
    pub fn len(&self) -> usize {
        self.signed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signed.is_empty()
    }
}

/// Positions sorted ascending by (importance, position).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedFeatures {
    pub positions: Vec<usize>,
}

impl RankedFeatures {
    pub fn from_attribution(attr: &AttributionVector) -> Self {
        let mut positions: Vec<usize> = (0..attr.len()).collect();
        positions.sort_by(|&a, &b| {
            attr.importance[a]
                .partial_cmp(&attr.importance[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.cmp(&b))
        });
        RankedFeatures { positions }
    }
}

/// Ratio policy governing how many positions are eligible for replacement,
/// including the escalation step used by the feedback loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub base_ratio: f64,
    pub cap_ratio: f64,
    pub escalation_step: f64,
    pub min_k: usize,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy {
            base_ratio: 0.20,
            cap_ratio: 0.30,
            escalation_step: 0.05,
            min_k: 1,
        }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_ratio > 0.0 && self.base_ratio <= self.cap_ratio && self.cap_ratio <= 0.30) {
            return Err(CoreError::InvalidArgument(format!(
                "selection ratios must satisfy 0 < base ({}) <= cap ({}) <= 0.30",
                self.base_ratio, self.cap_ratio
            )));
        }
        if self.escalation_step <= 0.0 {
            return Err(CoreError::InvalidArgument(
                "escalation step must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The bottom-k token positions selected for replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSet {
    /// First k entries of the ascending ranking, in rank order.
    pub positions: Vec<usize>,
    pub k: usize,
    pub total: usize,
    pub ratio: f64,
}

/// Integrated Gradients from an all-zero embedding baseline using a
/// right-endpoint Riemann sum with `m` steps.
///
/// For the logit target the output is linear along the path, so any m >= 1
/// already equals the exact path integral and attributions satisfy the
/// completeness identity exactly.
pub fn integrated_gradients(
    model: &Classifier,
    example: &Example,
    vocab: &Vocabulary,
    m: usize,
    target: usize,
    attribute_logit: bool,
) -> Result<AttributionVector> {
    let indices = vocab.encode(&example.tokens);
    integrated_gradients_from_indices(model, &indices, m, target, attribute_logit)
}

pub fn integrated_gradients_from_indices(
    model: &Classifier,
    indices: &[usize],
    m: usize,
    target: usize,
    attribute_logit: bool,
) -> Result<AttributionVector> {
    if m == 0 {
        return Err(CoreError::InvalidArgument("IG step count must be >= 1".into()));
    }
    if indices.is_empty() {
        return Err(CoreError::InvalidArgument(
            "cannot attribute an empty example".into(),
        ));
    }

    let embedded = model.embed(indices);
    let positions = embedded.len();
    let dim = model.embed_dim;

    // Average gradient along the straight path from the zero baseline.
    let mut avg_grad = vec![vec![0.0; dim]; positions];
    let mut scaled = vec![vec![0.0; dim]; positions];
    for step in 1..=m {
        let alpha = step as f64 / m as f64;
        for (row, src) in scaled.iter_mut().zip(&embedded) {
            for (v, &e) in row.iter_mut().zip(src) {
                *v = alpha * e;
            }
        }
        let grads = model.input_gradients(&scaled, target, attribute_logit)?;
        for (acc, g) in avg_grad.iter_mut().zip(&grads) {
            for (a, &v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }

    let inv_m = 1.0 / m as f64;
    let signed: Vec<f64> = (0..positions)
        .map(|i| {
            (0..dim)
                .map(|j| embedded[i][j] * avg_grad[i][j] * inv_m)
                .sum()
        })
        .collect();
    if signed.iter().any(|a| !a.is_finite()) {
        return Err(CoreError::NonFiniteGradient);
    }
    let importance = signed.iter().map(|a| a.abs()).collect();

    Ok(AttributionVector {
        signed,
        importance,
        target_class: target,
        steps: m,
    })
}

/// Attribution-free oracle: importance of a position is the output change
/// when that position is removed from the pooled set.
pub fn occlusion_scores(
    model: &Classifier,
    example: &Example,
    vocab: &Vocabulary,
    target: usize,
    attribute_logit: bool,
) -> Result<AttributionVector> {
    let indices = vocab.encode(&example.tokens);
    if indices.len() < 2 {
        return Err(CoreError::InvalidArgument(
            "occlusion requires at least two tokens".into(),
        ));
    }

    let embedded = model.embed(&indices);
    let full = model.output_value(&embedded, target, attribute_logit);

    let mut signed = Vec::with_capacity(indices.len());
    for i in 0..indices.len() {
        let mut reduced = embedded.clone();
        reduced.remove(i);
        let without = model.output_value(&reduced, target, attribute_logit);
        signed.push(full - without);
    }
    let importance = signed.iter().map(|a| a.abs()).collect();

    Ok(AttributionVector {
        signed,
        importance,
        target_class: target,
        steps: 0,
    })
}

/// Ascending rank by importance, then take the bottom k where
/// k = clamp(floor(r × K), 1, floor(cap × K)), with the cap floor forced
/// to at least 1 for short inputs.
pub fn rank_and_select(
    attr: &AttributionVector,
    policy: &SelectionPolicy,
    ratio_override: Option<f64>,
) -> Result<SelectionSet> {
    policy.validate()?;
    if attr.is_empty() {
        return Err(CoreError::InvalidArgument(
            "cannot select from an empty attribution vector".into(),
        ));
    }
    let ratio = match ratio_override {
        Some(r) => {
            if !(r > 0.0 && r <= policy.cap_ratio) {
                return Err(CoreError::InvalidArgument(format!(
                    "ratio override {r} outside (0, {}]",
                    policy.cap_ratio
                )));
            }
            r
        }
        None => policy.base_ratio,
    };

    let total = attr.len();
    let cap_k = ((policy.cap_ratio * total as f64).floor() as usize).max(policy.min_k.max(1));
    let k = ((ratio * total as f64).floor() as usize)
        .max(policy.min_k.max(1))
        .min(cap_k);

    let ranked = RankedFeatures::from_attribution(attr);
    Ok(SelectionSet {
        positions: ranked.positions[..k].to_vec(),
        k,
        total,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Origin};
    use proptest::prelude::*;

    fn example(text: &str) -> Example {
        Example {
            id: 0,
            text: text.to_string(),
            tokens: tokenize(text),
            label: 0,
            origin: Origin::Original,
        }
    }

    fn attr(importances: &[f64]) -> AttributionVector {
        AttributionVector {
            signed: importances.to_vec(),
            importance: importances.iter().map(|a| a.abs()).collect(),
            target_class: 0,
            steps: 1,
        }
    }

    fn toy_vocab(words: &[&str]) -> Vocabulary {
        use crate::corpus::{build_vocab, Dataset, Example, LabelCatalog};
        use std::sync::Arc;
        let ds = Dataset {
            examples: vec![Example {
                id: 0,
                text: words.join(" "),
                tokens: words.iter().map(|w| w.to_string()).collect(),
                label: 0,
                origin: Origin::Original,
            }],
            labels: Arc::new(LabelCatalog::new(vec!["c0".into()])),
        };
        build_vocab(&ds, 1).unwrap()
    }

    #[test]
    fn logit_mode_is_step_invariant() {
        let vocab = toy_vocab(&["alpha", "beta", "gamma"]);
        let model = Classifier::new_seeded(vocab.size(), 6, 2, 11);
        let ex = example("alpha beta gamma");
        let one = integrated_gradients(&model, &ex, &vocab, 1, 1, true).unwrap();
        let many = integrated_gradients(&model, &ex, &vocab, 512, 1, true).unwrap();
        for (a, b) in one.signed.iter().zip(&many.signed) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn logit_mode_completeness_is_exact() {
        let vocab = toy_vocab(&["alpha", "beta", "gamma"]);
        let model = Classifier::new_seeded(vocab.size(), 6, 2, 11);
        let ex = example("alpha beta gamma");
        let attr = integrated_gradients(&model, &ex, &vocab, 1, 0, true).unwrap();
        let indices = vocab.encode(&ex.tokens);
        let embedded = model.embed(&indices);
        let fx = model.output_value(&embedded, 0, true);
        let baseline = model.output_value(&vec![vec![0.0; 6]; 3], 0, true);
        let total: f64 = attr.signed.iter().sum();
        assert!((total - (fx - baseline)).abs() < 1e-9);
    }

    #[test]
    fn probability_mode_error_shrinks_with_steps() {
        let vocab = toy_vocab(&["alpha", "beta", "gamma", "delta"]);
        let model = Classifier::new_seeded(vocab.size(), 6, 3, 5);
        let ex = example("alpha beta gamma delta");
        let indices = vocab.encode(&ex.tokens);
        let embedded = model.embed(&indices);
        let fx = model.output_value(&embedded, 1, false);
        let f0 = model.output_value(&vec![vec![0.0; 6]; 4], 1, false);
        let err_at = |m: usize| {
            let attr = integrated_gradients(&model, &ex, &vocab, m, 1, false).unwrap();
            (attr.signed.iter().sum::<f64>() - (fx - f0)).abs()
        };
        assert!(err_at(512) <= err_at(32));
        assert!(err_at(512) <= 1e-3);
    }

    #[test]
    fn zero_steps_errors() {
        let vocab = toy_vocab(&["alpha"]);
        let model = Classifier::new_seeded(vocab.size(), 4, 2, 1);
        assert!(integrated_gradients(&model, &example("alpha"), &vocab, 0, 0, true).is_err());
    }

    #[test]
    fn occlusion_duplicate_tokens_score_equally() {
        let vocab = toy_vocab(&["x"]);
        let model = Classifier::new_seeded(vocab.size(), 4, 2, 7);
        let attr = occlusion_scores(&model, &example("x x"), &vocab, 0, true).unwrap();
        assert!((attr.importance[0] - attr.importance[1]).abs() < 1e-12);
    }

    #[test]
    fn occlusion_zero_model_scores_zero() {
        let vocab = toy_vocab(&["a", "b"]);
        let model = Classifier::zeros(vocab.size(), 4, 2);
        let attr = occlusion_scores(&model, &example("a b"), &vocab, 0, true).unwrap();
        assert!(attr.importance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn occlusion_single_token_errors() {
        let vocab = toy_vocab(&["a"]);
        let model = Classifier::zeros(vocab.size(), 4, 2);
        assert!(occlusion_scores(&model, &example("a"), &vocab, 0, true).is_err());
    }

    #[test]
    fn select_bottom_k_rule_forced() {
        let a = attr(&[0.55, 0.10, 0.90, 0.02]);
        let sel = rank_and_select(&a, &SelectionPolicy::default(), Some(0.25)).unwrap();
        assert_eq!(sel.k, 1);
        assert_eq!(sel.positions, vec![3]);
    }

    #[test]
    fn select_clamp_rules() {
        let policy = SelectionPolicy::default();
        let ten = attr(&[0.1; 10]);
        assert_eq!(rank_and_select(&ten, &policy, Some(0.20)).unwrap().k, 2);
        let three = attr(&[0.1; 3]);
        assert_eq!(rank_and_select(&three, &policy, Some(0.20)).unwrap().k, 1);
    }

    #[test]
    fn select_tie_prefers_earlier_position() {
        let a = attr(&[0.5, 0.5, 0.9]);
        let sel = rank_and_select(&a, &SelectionPolicy::default(), Some(0.30)).unwrap();
        assert_eq!(sel.positions, vec![0]);
        let ranked = RankedFeatures::from_attribution(&a);
        assert_eq!(ranked.positions, vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn ranking_is_a_permutation(values in proptest::collection::vec(0.0f64..10.0, 1..40)) {
            let a = attr(&values);
            let ranked = RankedFeatures::from_attribution(&a);
            let mut sorted = ranked.positions.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..values.len()).collect::<Vec<_>>());
            for w in ranked.positions.windows(2) {
                prop_assert!(a.importance[w[0]] <= a.importance[w[1]]);
            }
        }

        #[test]
        fn selection_is_deterministic_and_bounded(
            values in proptest::collection::vec(0.0f64..10.0, 1..40),
            ratio in 0.01f64..0.30,
        ) {
            let a = attr(&values);
            let policy = SelectionPolicy::default();
            let s1 = rank_and_select(&a, &policy, Some(ratio)).unwrap();
            let s2 = rank_and_select(&a, &policy, Some(ratio)).unwrap();
            prop_assert_eq!(&s1, &s2);
            prop_assert_eq!(s1.positions.len(), s1.k);
            let cap_k = ((0.30 * values.len() as f64).floor() as usize).max(1);
            prop_assert!(s1.k >= 1 && s1.k <= cap_k);
        }
    }
}

//! XAI-guided context-aware data augmentation for text classification.
//!
//! The crate attributes per-token importance with Integrated Gradients,
//! rewrites only the least-important tokens through synonym- or
//! paraphrase-with-back-translation chains, and iterates the augmentation
//! with a feedback loop that escalates the selection ratio and rotates
//! backends until the retrained model shows a meaningful improvement.

pub mod attribution;
pub mod augment;
pub mod corpus;
pub mod error;
pub mod lexical;
pub mod model;
pub mod pipeline;
pub mod translation;

pub use attribution::{AttributionVector, RankedFeatures, SelectionPolicy, SelectionSet};
pub use augment::{AugmentMethod, MissReason, MissReport, ReplacementPlan};
pub use corpus::{Dataset, Example, Origin, Vocabulary};
pub use error::CoreError;
pub use lexical::LexicalDatabase;
pub use model::{Classifier, Metrics, TrainConfig};
pub use pipeline::{RunConfig, RunReport, StabilityReport};
pub use translation::{TranslationCache, Translator};

pub type Result<T> = std::result::Result<T, CoreError>;

//! Span featurization, linear scoring and contrastive training.

pub mod align;
pub mod check;
pub mod features;
pub mod model;
pub mod train;

pub use align::infer_alignment;
pub use check::{grounded_at, grounded_text_at, is_grounded};
pub use features::{featurize, featurize_with_alignment, FeatureVector, DIM, FEATURE_NAMES};
pub use model::{sigmoid, GroundingModel, ModelMeta, Task};
pub use train::{
    pair_loss, pair_loss_gradient, select_threshold, train_contrastive, train_contrastive_with_history, FeaturePair,
    TrainConfig,
};

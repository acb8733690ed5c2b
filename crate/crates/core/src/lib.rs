//! Faithfulness-guided ensemble attribution toolkit: a small dense CNN
//! engine with gradient-clipping hooks, fractile-ensemble mask optimization
//! against perturbation objectives, faithfulness curve evaluation, and the
//! accompanying diagnostics (reconstruction, black-image defense, cascading
//! randomization).

pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optimizer;
pub mod rng;
pub mod tensor;
pub mod vizio;

pub use error::{Error, Result};
pub use nn::adam::AdamParams;
pub use nn::clip::{apply_clip, apply_clip_tensor, ClipMode};
pub use nn::{
    backward_category, finite_diff_gradient, forward, load_weights, randomize_layers,
    save_weights, train_fixture, ActivationTrace, FixtureConfig, GradHook, Layer, NetworkModel,
    TrainReport,
};
pub use optimizer::{
    optimize_attribution, FractileSchedule, MaskEnsemble, Objective, OptMode,
    OptimizationOutcome, OptimizerConfig, ReferenceKind, ReferenceSpec,
};
pub use tensor::Tensor;

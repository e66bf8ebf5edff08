//! Self-ensembling adversarial training for cross-domain semantic
//! segmentation, at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: a small define-then-run reverse-mode autodiff engine over
//!   dense row-major arrays, with SGD/Adam and the poly learning-rate policy.
//! * [`networks`]: the student/teacher segmenter, the fully convolutional
//!   discriminator, the style generator, checkpoints and spectral norms.
//! * [`losses`]: every scalar objective of the method (segmentation,
//!   consistency, adversarial, self-training, style, semantic, perceptual)
//!   plus the integral probability metric.
//! * [`datagen`]: a synthetic two-domain benchmark with controllable
//!   appearance and layout shift.
//! * [`trainer`]: style-transfer pre-training, the adversarial
//!   self-ensembling stage, pseudo-label self-training and ablations.
//! * [`metrics`]: confusion matrices, IoU reports, stability and per-class
//!   transfer gains.
//! * [`bounds`]: covering-number, Rademacher and generalization bounds for
//!   the discriminator.

pub mod bounds;
pub mod datagen;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod rng;
pub mod sgt;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Feeds, Graph, NodeId, ParamSet, Scalar, Tensor};

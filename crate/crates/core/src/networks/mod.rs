//! Network builders: segmenter (student, teacher, frozen Φ), output-space
//! discriminator, style generator; plus checkpoints and spectral norms of
//! layer operators.

mod checkpoint;
mod disc;
mod segnet;
mod spectral;
mod stylegen;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, EvalModel, ModelBundle, TensorEntry};
pub use disc::{build_discriminator, DiscGraph, DiscSpec};
pub use segnet::{
    argmax_labels, build_segnet, multi_scale_predict, predict_segmentation, Prediction, SegGraph, SegNetSpec,
    SegOutputs, Segmenter,
};
pub use spectral::{materialize, spectral_norm, ConvOperator, DenseMatrix, LinearOperator};
pub use stylegen::{build_style_generator, StyleGenSpec, StyleGraph};

use crate::tensor::Tensor;

/// Kaiming fan-in initialisation of a `[out, in, k, k]` kernel.
pub(crate) fn kaiming_conv<R: Rng>(rng: &mut R, out: usize, inp: usize, k: usize, gain: f64) -> Tensor<f32> {
    let fan_in = (inp * k * k) as f64;
    let normal = Normal::new(0.0, gain / fan_in.sqrt()).expect("positive std");
    let data = (0..out * inp * k * k).map(|_| normal.sample(rng) as f32).collect();
    Tensor::new(&[out, inp, k, k], data).expect("shape matches data")
}

pub(crate) fn zeros(shape: &[usize]) -> Tensor<f32> {
    Tensor::zeros(shape)
}

pub(crate) fn check_widths(field: &str, widths: &[usize]) -> crate::Result<()> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(crate::Error::invalid(field, format!("{widths:?} must be non-empty and positive")));
    }
    Ok(())
}

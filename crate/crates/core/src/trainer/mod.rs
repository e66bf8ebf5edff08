//! Training pipelines: style-transfer pre-training, the adversarial
//! self-ensembling stage with its EMA teacher, pseudo-label self-training,
//! and the cumulative ablation ladder.
//!
//! Randomness comes only from named sub-streams of the run seed (network
//! initialisation, batch order), so equal configurations give bit-identical
//! parameters and logs.

mod ablation;
mod config;
mod ema;
mod eval;
mod log;
mod segan;
mod selftrain;
mod tgstn;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

pub use ablation::{run_ablation, run_ladder, AblationResult};
pub use config::{AblationMode, Flags, TgstnConfig, TrainConfig};
pub use ema::ema_update;
pub use eval::{evaluate, target_confusion, StyleSource};
pub use log::{LogRecord, TgstnLog, TgstnRecord, TrainLog, TRAIN_LOG_HEADER};
pub use segan::{train_segan, SeganRun};
pub use selftrain::{generate_pseudo_labels, pseudo_label_maps, self_train, PseudoLabels, SelfTrainRun};
pub use tgstn::{train_tgstn, TgstnRun};

use crate::error::Error;

/// Epoch-wise shuffled index stream.
pub(crate) struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub(crate) fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Sampler {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    pub(crate) fn next(&mut self, k: usize) -> Vec<usize> {
        (0..k)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Non-finite values met mid-run become a numeric abort at `iteration`.
pub(crate) fn numeric_abort(iteration: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(node) => Error::NumericAbort {
            iteration,
            detail: format!("non-finite value in {node}"),
        },
        e => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = Sampler::new(5, ChaCha8Rng::seed_from_u64(3));
        let mut first: Vec<usize> = s.next(5);
        first.sort();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next(7).len(), 7);
    }
}

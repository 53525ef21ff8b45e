//! Small dense-network toolkit: MLPs over flat parameter vectors, a
//! tanh-squashed Gaussian policy head, Adam, and JSON checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gaussian;
pub mod mlp;
pub mod normalizer;

pub use adam::{soft_update, Adam, CosineSchedule};
pub use checkpoint::{Checkpoint, HEAD_LINEAR, HEAD_TANH_GAUSSIAN};
pub use gaussian::{gaussian_logprob, GaussianPolicy};
pub use mlp::{Activation, Mlp, MlpArch};
pub use normalizer::Normalizer;

use rand::seq::SliceRandom;
use rand::Rng;

/// One shuffled pass over `0..n` split into minibatches of at most `batch`.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

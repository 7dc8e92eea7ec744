//! Multimodal twin-tower similarity network in f64, with hand-written
//! backpropagation, Nesterov SGD, a warm-restart cosine schedule and a
//! finite-difference gradient checker.

mod gradcheck;
mod model;
mod ops;
mod optim;
mod train;

pub use gradcheck::{gradient_check, relative_error, GradCheck};
pub use model::{
    bce_loss, embedding_dim, Batch, ForwardMode, NetConfig, Output, ParamGroup, ParamKind,
    ParamStore, SimilarityNet, Step, TileBatch, BCE_EPS,
};
pub use optim::{CosineWarmRestarts, NesterovSgd};
pub use train::{
    extract_latent, make_batch, predict, train, EpochStats, PairExample, TileFeatures, TrainConfig,
    TrainReport,
};

use crate::imagery::{resize, Tile};
use crate::Result;

/// Stacks a satellite and a segmented tile into a 6-channel CHW tensor in
/// [0, 1], resizing both to `side`.
pub fn tile_tensor(satellite: &Tile, segmented: &Tile, side: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; 6 * side * side];
    let plane = side * side;
    for (t, base) in [(satellite, 0), (segmented, 3)] {
        let resized;
        let t = if t.side() == side {
            t
        } else {
            resized = resize(t, side)?;
            &resized
        };
        for (i, px) in t.pixels().chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[(base + c) * plane + i] = px[c] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

//! Similarity-based land valuation.
//!
//! Parcels within a fixed radius are paired, each pair is labeled similar when
//! the neighbor's appraisal price is within a relative tolerance of the
//! primary's, and a set of similarity models (tree ensembles and a twin-tower
//! neural network) learn to score pairs. Scores from five models are combined
//! by a tuned weighted average, and a parcel's price is predicted as the
//! score-weighted mean of the appraisals of neighbors scoring above a
//! threshold. Evaluation reports AUC for the pair classifier and
//! coverage/MAPE trade-off curves for the valuation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod ensemble;
pub mod error;
pub mod geo;
pub mod imagery;
pub mod metrics;
pub mod nn;
pub mod pairs;
pub mod pipeline;
pub mod synth;
pub mod tilefetch;
pub mod trees;
pub mod valuation;

pub use error::{Error, Result};

/// SplitMix64 step, used to derive independent per-stream seeds from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// `(0..n).map(f)` collected in index order, spread over threads when the
/// `parallel` feature is on. Results never depend on scheduling.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{mean_bce, Batch, ForwardMode, SimilarityNet, TileBatch};
use super::optim::{CosineWarmRestarts, NesterovSgd};
use crate::metrics::auc;
use crate::trees::Matrix;
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    /// First restart period, in epochs.
    pub t0: f64,
    pub t_mult: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation AUC improvement before stopping; 0 disables.
    pub patience: usize,
    /// Random subset of training pairs visited per epoch; all when `None`.
    pub max_pairs_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.025,
            lr_min: 0.0005,
            t0: 10.0,
            t_mult: 2.0,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            patience: 5,
            max_pairs_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> CosineWarmRestarts {
        CosineWarmRestarts {
            lr_max: self.lr,
            lr_min: self.lr_min,
            t0: self.t0,
            t_mult: self.t_mult,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.max_pairs_per_epoch == Some(0) {
            return Err(Error::Config("max_pairs_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

/// One labeled pair, referencing tiles by parcel row in a [`TileFeatures`] table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub primary: usize,
    pub neighbor: usize,
    pub cat_primary: Vec<u32>,
    pub cat_neighbor: Vec<u32>,
    pub cont: Vec<f64>,
    pub label: bool,
}

/// Per-parcel tile inputs, possibly several augmented variants each. Variant 0
/// is the unaugmented tile and is the only one used for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum TileFeatures {
    /// Tower outputs computed once; only valid when the whole tower is frozen.
    Embeddings {
        dim: usize,
        n_variants: usize,
        data: Vec<f64>,
    },
    Pixels {
        len: usize,
        n_variants: usize,
        data: Vec<f64>,
    },
}

impl TileFeatures {
    fn shape(&self) -> (usize, usize, &[f64]) {
        match self {
            TileFeatures::Embeddings {
                dim,
                n_variants,
                data,
            } => (*dim, *n_variants, data),
            TileFeatures::Pixels {
                len,
                n_variants,
                data,
            } => (*len, *n_variants, data),
        }
    }

    pub fn n_variants(&self) -> usize {
        self.shape().1
    }

    pub fn n_parcels(&self) -> usize {
        let (w, v, data) = self.shape();
        data.len() / (w * v).max(1)
    }

    pub fn row(&self, parcel: usize, variant: usize) -> &[f64] {
        let (w, v, data) = self.shape();
        let start = (parcel * v + variant) * w;
        &data[start..start + w]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub fn make_batch(
    examples: &[PairExample],
    idx: &[usize],
    variants: Option<&[usize]>,
    tiles: &TileFeatures,
) -> Batch {
    let mut tp = Vec::new();
    let mut tn = Vec::new();
    let mut cat_primary = Vec::new();
    let mut cat_neighbor = Vec::new();
    let mut cont = Vec::new();
    let mut labels = Vec::with_capacity(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        let ex = &examples[i];
        let v = variants.map_or(0, |v| v[k]);
        tp.extend_from_slice(tiles.row(ex.primary, v));
        tn.extend_from_slice(tiles.row(ex.neighbor, v));
        cat_primary.extend_from_slice(&ex.cat_primary);
        cat_neighbor.extend_from_slice(&ex.cat_neighbor);
        cont.extend_from_slice(&ex.cont);
        labels.push(if ex.label { 1.0 } else { 0.0 });
    }
    let tiles = match tiles {
        TileFeatures::Embeddings { .. } => TileBatch::Embeddings {
            primary: tp,
            neighbor: tn,
        },
        TileFeatures::Pixels { .. } => TileBatch::Pixels {
            primary: tp,
            neighbor: tn,
        },
    };
    Batch {
        n: idx.len(),
        tiles,
        cat_primary,
        cat_neighbor,
        cont,
        labels,
    }
}

const EVAL_BATCH: usize = 256;

/// Inference-mode scores and last-hidden latents for every example.
pub fn predict(
    model: &SimilarityNet,
    examples: &[PairExample],
    tiles: &TileFeatures,
) -> Result<(Vec<f64>, Matrix)> {
    let mut scores = Vec::with_capacity(examples.len());
    let mut latent = Vec::with_capacity(examples.len() * model.latent_width());
    let all: Vec<usize> = (0..examples.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let out = model.forward(&make_batch(examples, chunk, None, tiles), ForwardMode::EVAL)?;
        scores.extend(out.scores);
        latent.extend(out.latent);
    }
    let latent = Matrix::new(latent, examples.len(), model.latent_width())?;
    Ok((scores, latent))
}

pub fn extract_latent(
    model: &SimilarityNet,
    examples: &[PairExample],
    tiles: &TileFeatures,
) -> Result<Matrix> {
    Ok(predict(model, examples, tiles)?.1)
}

fn check_inputs(model: &SimilarityNet, train: &[PairExample], tiles: &TileFeatures) -> Result<()> {
    if train.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    let pos = train.iter().filter(|e| e.label).count();
    if pos == 0 || pos == train.len() {
        return Err(Error::invalid("training pairs must contain both classes"));
    }
    match tiles {
        TileFeatures::Embeddings { dim, .. } => {
            if !model.config.tower_frozen() {
                return Err(Error::Config(
                    "precomputed tile embeddings need every tower block frozen".into(),
                ));
            }
            if *dim != model.config.embedding_width() {
                return Err(Error::invalid("embedding width does not match the model"));
            }
        }
        TileFeatures::Pixels { len, .. } => {
            if *len != model.tile_len() {
                return Err(Error::invalid("tile size does not match the model"));
            }
        }
    }
    if tiles.n_variants() == 0 {
        return Err(Error::invalid("tile table has no variants"));
    }
    Ok(())
}

/// Mini-batch training with Nesterov SGD under a warm-restart cosine schedule,
/// stepped per batch with fractional epochs. Keeps the parameters of the
/// epoch with the best validation AUC (validation loss when AUC is undefined)
/// and stops after `patience` epochs without improvement.
pub fn train(
    model: &mut SimilarityNet,
    train: &[PairExample],
    val: &[PairExample],
    tiles: &TileFeatures,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_inputs(model, train, tiles)?;
    let schedule = cfg.schedule();
    let trainable: Vec<bool> = {
        let mut t = vec![true; model.params.len()];
        for g in 0..model.params.groups.len() {
            if model.is_frozen(g) {
                t[model.params.groups[g].range()].fill(false);
            }
        }
        t
    };
    let mut opt = NesterovSgd::new(model.params.len(), cfg.momentum);
    let per_epoch = cfg
        .max_pairs_per_epoch
        .map_or(train.len(), |m| m.min(train.len()));
    let n_batches = per_epoch.div_ceil(cfg.batch_size);
    let val_labels: Vec<bool> = val.iter().map(|e| e.label).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, SimilarityNet)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = crate::seeded_rng(derive_seed(cfg.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = schedule.lr_at(epoch as f64);
        for (b, idx) in order[..per_epoch].chunks(cfg.batch_size).enumerate() {
            lr = schedule.lr_at(epoch as f64 + b as f64 / n_batches as f64);
            let variants: Vec<usize> = idx
                .iter()
                .map(|_| rng.random_range(0..tiles.n_variants()))
                .collect();
            let batch = make_batch(train, idx, Some(&variants), tiles);
            let dropout_seed = derive_seed(cfg.seed ^ 0xD809_u64, (epoch * n_batches + b) as u64);
            let step = model.loss_and_grad(&batch, ForwardMode::train(dropout_seed))?;
            if !step.loss.is_finite() || step.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            opt.step(&mut model.params.values, &step.grad, lr, &trainable);
            model.update_running(&step.batch_mean, &step.batch_var, batch.n);
            loss_sum += step.loss * batch.n as f64;
        }
        let train_loss = loss_sum / per_epoch as f64;
        let (val_loss, val_auc) = if val.is_empty() {
            (f64::NAN, None)
        } else {
            let (scores, _) = predict(model, val, tiles)?;
            let labels: Vec<f64> = val_labels.iter().map(|&l| l as u8 as f64).collect();
            (mean_bce(&scores, &labels), auc(&scores, &val_labels).ok())
        };
        if model.params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_auc,
        });
        let metric = match val_auc {
            Some(a) => a,
            None if val_loss.is_finite() => -val_loss,
            None => -train_loss,
        };
        if best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
            best = Some((metric, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, e, m)) => {
            *model = m;
            e
        }
        None => 0,
    };
    Ok(TrainReport {
        history,
        best_epoch,
        stopped_early,
    })
}

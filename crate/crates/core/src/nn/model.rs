use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{col2im, gemm, im2col, maxpool, maxpool_backward, sigmoid};
use crate::{derive_seed, par_map, Error, Result};

const FORMAT: &str = "landval.similarity_net";
const VERSION: u32 = 1;

/// Clipping bound applied to scores inside the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Input tiles are `in_channels × image_side × image_side`, values in [0, 1].
    pub image_side: usize,
    pub in_channels: usize,
    /// Output channels of each conv block; the last one is the tile embedding width.
    pub widths: Vec<usize>,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Tower blocks, counted from the input, that never receive updates.
    pub frozen_blocks: usize,
    /// Feed `[e_p + e_n, e_p ⊙ e_n]` instead of `[e_p, e_n]`, making the score
    /// invariant to swapping the two tiles.
    pub symmetric_tiles: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            image_side: 64,
            in_channels: 6,
            widths: vec![16, 32, 64, 128],
            hidden: vec![400, 200, 100, 50],
            dropout: 0.07,
            frozen_blocks: 2,
            symmetric_tiles: false,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.widths.is_empty() || self.hidden.is_empty() {
            return bad("widths and hidden sizes must be non-empty".into());
        }
        if self.widths.iter().chain(&self.hidden).any(|&w| w == 0) || self.in_channels == 0 {
            return bad("layer sizes must be positive".into());
        }
        let div = 1usize << self.widths.len();
        if self.image_side == 0 || !self.image_side.is_multiple_of(div) {
            return bad(format!(
                "image_side {} must be a positive multiple of {div} for {} pooling blocks",
                self.image_side,
                self.widths.len()
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)".into());
        }
        if self.frozen_blocks > self.widths.len() {
            return bad(format!(
                "frozen_blocks exceeds the {} tower blocks",
                self.widths.len()
            ));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return bad("bn_momentum must be in (0, 1] and bn_eps positive".into());
        }
        Ok(())
    }

    pub fn embedding_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn tower_frozen(&self) -> bool {
        self.frozen_blocks == self.widths.len()
    }
}

/// Lookup-table width for a categorical field with `vocab` known values.
pub fn embedding_dim(vocab: usize) -> usize {
    vocab.div_ceil(2).clamp(1, 16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    Embedding,
    NormScale,
    NormShift,
    LinearWeight,
    LinearBias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub kind: ParamKind,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Tower block index for conv parameters.
    pub block: Option<usize>,
}

impl ParamGroup {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

/// All trainable values in one flat buffer, addressed by named groups.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub groups: Vec<ParamGroup>,
}

impl ParamStore {
    fn add(
        &mut self,
        name: String,
        kind: ParamKind,
        rows: usize,
        cols: usize,
        block: Option<usize>,
    ) -> usize {
        self.groups.push(ParamGroup {
            name,
            kind,
            offset: self.values.len(),
            rows,
            cols,
            block,
        });
        self.values.resize(self.values.len() + rows * cols, 0.0);
        self.groups.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, g: usize) -> &[f64] {
        &self.values[self.groups[g].range()]
    }

    fn get_mut(&mut self, g: usize) -> &mut [f64] {
        let r = self.groups[g].range();
        &mut self.values[r]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TileBatch {
    /// Row-major `n × (channels·side·side)` pixels for primary and neighbor tiles.
    Pixels {
        primary: Vec<f64>,
        neighbor: Vec<f64>,
    },
    /// Precomputed `n × embedding_width` tower outputs.
    Embeddings {
        primary: Vec<f64>,
        neighbor: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub tiles: TileBatch,
    /// `n × n_fields` category indices; `vocab_sizes[f]` is the OOV row.
    pub cat_primary: Vec<u32>,
    pub cat_neighbor: Vec<u32>,
    /// `n × n_cont` continuous pair features.
    pub cont: Vec<f64>,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardMode {
    /// Normalize with batch statistics instead of the running ones.
    pub batch_stats: bool,
    pub dropout_seed: Option<u64>,
}

impl ForwardMode {
    pub const EVAL: ForwardMode = ForwardMode {
        batch_stats: false,
        dropout_seed: None,
    };

    pub fn train(dropout_seed: u64) -> Self {
        Self {
            batch_stats: true,
            dropout_seed: Some(dropout_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub scores: Vec<f64>,
    pub logits: Vec<f64>,
    /// `n × last hidden width` activations of the last hidden layer.
    pub latent: Vec<f64>,
}

pub struct Step {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub output: Output,
    /// Normalizer statistics used by this step (the running ones in eval mode).
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

pub(crate) struct TowerCache {
    inputs: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
}

pub(crate) struct ForwardCache {
    tower_primary: Vec<TowerCache>,
    tower_neighbor: Vec<TowerCache>,
    emb_primary: Vec<f64>,
    emb_neighbor: Vec<f64>,
    xhat: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Input of every linear layer, the head input first.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
}

/// Twin-tower pair similarity network: a weight-tied CNN tower per tile,
/// categorical lookup tables shared between the two parcels, a batch
/// normalizer over the continuous pair features, and an MLP head with a
/// sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityNet {
    format: String,
    version: u32,
    pub config: NetConfig,
    pub vocab_sizes: Vec<usize>,
    pub n_cont: usize,
    pub params: ParamStore,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    conv: Vec<(usize, usize)>,
    emb: Vec<usize>,
    norm: (usize, usize),
    linear: Vec<(usize, usize)>,
}

impl SimilarityNet {
    pub fn new(config: NetConfig, vocab_sizes: &[usize], n_cont: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut conv = Vec::new();
        let mut cin = config.in_channels;
        for (b, &cout) in config.widths.iter().enumerate() {
            let w = params.add(
                format!("conv{b}.weight"),
                ParamKind::ConvWeight,
                cout,
                cin * 9,
                Some(b),
            );
            let bias = params.add(
                format!("conv{b}.bias"),
                ParamKind::ConvBias,
                1,
                cout,
                Some(b),
            );
            conv.push((w, bias));
            cin = cout;
        }
        let emb: Vec<usize> = vocab_sizes
            .iter()
            .enumerate()
            .map(|(f, &v)| {
                params.add(
                    format!("embed{f}"),
                    ParamKind::Embedding,
                    v + 1,
                    embedding_dim(v),
                    None,
                )
            })
            .collect();
        let norm = (
            params.add("norm.scale".into(), ParamKind::NormScale, 1, n_cont, None),
            params.add("norm.shift".into(), ParamKind::NormShift, 1, n_cont, None),
        );
        let mut net = Self {
            format: FORMAT.into(),
            version: VERSION,
            config,
            vocab_sizes: vocab_sizes.to_vec(),
            n_cont,
            params,
            running_mean: vec![0.0; n_cont],
            running_var: vec![1.0; n_cont],
            conv,
            emb,
            norm,
            linear: Vec::new(),
        };
        let mut fan_in = net.head_input_width();
        let sizes: Vec<usize> = net.config.hidden.iter().copied().chain([1]).collect();
        for (l, &out) in sizes.iter().enumerate() {
            let w = net.params.add(
                format!("fc{l}.weight"),
                ParamKind::LinearWeight,
                out,
                fan_in,
                None,
            );
            let b = net
                .params
                .add(format!("fc{l}.bias"), ParamKind::LinearBias, 1, out, None);
            net.linear.push((w, b));
            fan_in = out;
        }
        net.init(seed);
        Ok(net)
    }

    /// He-normal conv and linear weights, zero biases, uniform(±0.05) lookup
    /// tables, unit scale and zero shift in the normalizer.
    fn init(&mut self, seed: u64) {
        for gi in 0..self.params.groups.len() {
            let g = self.params.groups[gi].clone();
            let mut rng = crate::seeded_rng(derive_seed(seed, gi as u64));
            let vals = self.params.get_mut(gi);
            match g.kind {
                ParamKind::ConvWeight | ParamKind::LinearWeight => {
                    let normal =
                        Normal::new(0.0, (2.0 / g.cols as f64).sqrt()).expect("finite std");
                    vals.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
                }
                ParamKind::Embedding => vals
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-0.05..0.05)),
                ParamKind::NormScale => vals.fill(1.0),
                ParamKind::ConvBias | ParamKind::LinearBias | ParamKind::NormShift => {
                    vals.fill(0.0)
                }
            }
        }
    }

    pub fn n_fields(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn tile_len(&self) -> usize {
        self.config.in_channels * self.config.image_side * self.config.image_side
    }

    fn emb_dims(&self) -> impl Iterator<Item = usize> + '_ {
        self.emb.iter().map(|&g| self.params.groups[g].cols)
    }

    pub fn head_input_width(&self) -> usize {
        2 * self.config.embedding_width() + 2 * self.emb_dims().sum::<usize>() + self.n_cont
    }

    pub fn latent_width(&self) -> usize {
        *self.config.hidden.last().expect("validated")
    }

    /// Whether parameter group `g` is excluded from updates.
    pub fn is_frozen(&self, g: usize) -> bool {
        self.params.groups[g]
            .block
            .is_some_and(|b| b < self.config.frozen_blocks)
    }

    /// Sets the output layer to zero so every score is exactly 0.5.
    pub fn zero_output_layer(&mut self) {
        let (w, b) = *self.linear.last().expect("output layer");
        self.params.get_mut(w).fill(0.0);
        self.params.get_mut(b).fill(0.0);
    }

    /// Tower embedding of one `in_channels × side × side` tile.
    pub fn embed_tile(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        if pixels.len() != self.tile_len() {
            return Err(Error::invalid(format!(
                "tile has {} values, expected {}",
                pixels.len(),
                self.tile_len()
            )));
        }
        Ok(self.tower_forward(pixels, false).0)
    }

    fn tower_forward(&self, x: &[f64], keep: bool) -> (Vec<f64>, Option<TowerCache>) {
        let mut cache = TowerCache {
            inputs: Vec::new(),
            acts: Vec::new(),
            argmax: Vec::new(),
        };
        let mut cur = x.to_vec();
        let mut cin = self.config.in_channels;
        let mut side = self.config.image_side;
        for &(wg, bg) in &self.conv {
            let cout = self.params.groups[wg].rows;
            let hw = side * side;
            let mut col = vec![0.0; cin * 9 * hw];
            im2col(&cur, cin, side, side, &mut col);
            let mut act = vec![0.0; cout * hw];
            for (plane, &b) in act.chunks_exact_mut(hw).zip(self.params.get(bg)) {
                plane.fill(b);
            }
            gemm(
                cout,
                cin * 9,
                hw,
                self.params.get(wg),
                false,
                &col,
                false,
                1.0,
                &mut act,
            );
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            let mut pooled = vec![0.0; cout * hw / 4];
            let mut arg = vec![0u32; cout * hw / 4];
            maxpool(&act, cout, side, side, &mut pooled, &mut arg);
            if keep {
                cache.inputs.push(cur);
                cache.acts.push(act);
                cache.argmax.push(arg);
            }
            cur = pooled;
            cin = cout;
            side /= 2;
        }
        let hw = side * side;
        let emb = cur
            .chunks_exact(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        (emb, keep.then_some(cache))
    }

    fn tower_backward(&self, cache: &TowerCache, d_emb: &[f64], grad: &mut [f64]) {
        let n_blocks = self.conv.len();
        let mut side = self.config.image_side >> n_blocks;
        let hw = side * side;
        let mut d: Vec<f64> = d_emb
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / hw as f64, hw))
            .collect();
        for b in (self.config.frozen_blocks..n_blocks).rev() {
            side *= 2;
            let hw = side * side;
            let (wg, bg) = self.conv[b];
            let cout = self.params.groups[wg].rows;
            let cin = self.params.groups[wg].cols / 9;
            let mut dz = vec![0.0; cout * hw];
            maxpool_backward(&d, &cache.argmax[b], &mut dz);
            for (g, &a) in dz.iter_mut().zip(&cache.acts[b]) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let mut col = vec![0.0; cin * 9 * hw];
            im2col(&cache.inputs[b], cin, side, side, &mut col);
            let wr = self.params.groups[wg].range();
            gemm(
                cout,
                hw,
                cin * 9,
                &dz,
                false,
                &col,
                true,
                1.0,
                &mut grad[wr.clone()],
            );
            for (gb, plane) in grad[self.params.groups[bg].range()]
                .iter_mut()
                .zip(dz.chunks_exact(hw))
            {
                *gb += plane.iter().sum::<f64>();
            }
            if b > self.config.frozen_blocks {
                gemm(
                    cin * 9,
                    cout,
                    hw,
                    &self.params.values[wr],
                    true,
                    &dz,
                    false,
                    0.0,
                    &mut col,
                );
                d = vec![0.0; cin * hw];
                col2im(&col, cin, side, side, &mut d);
            }
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let n = batch.n;
        let f = self.n_fields();
        let e = self.config.embedding_width();
        let (tp, tn, per) = match &batch.tiles {
            TileBatch::Pixels { primary, neighbor } => {
                (primary.len(), neighbor.len(), self.tile_len())
            }
            TileBatch::Embeddings { primary, neighbor } => (primary.len(), neighbor.len(), e),
        };
        if tp != n * per || tn != n * per {
            return Err(Error::invalid(format!(
                "tile inputs do not match {n} rows of width {per}"
            )));
        }
        if batch.cat_primary.len() != n * f || batch.cat_neighbor.len() != n * f {
            return Err(Error::invalid(format!(
                "categorical inputs do not match {n} rows of {f} fields"
            )));
        }
        if batch.cont.len() != n * self.n_cont {
            return Err(Error::invalid(format!(
                "continuous inputs do not match {n} rows of {} features",
                self.n_cont
            )));
        }
        if !batch.labels.is_empty() && batch.labels.len() != n {
            return Err(Error::invalid("label count does not match the batch"));
        }
        for row in batch
            .cat_primary
            .chunks_exact(f.max(1))
            .chain(batch.cat_neighbor.chunks_exact(f.max(1)))
        {
            for (k, &c) in row.iter().enumerate() {
                if c as usize > self.vocab_sizes[k] {
                    return Err(Error::invalid(format!(
                        "category index {c} out of range for field {k}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Batch, mode: ForwardMode) -> Result<Output> {
        Ok(self.forward_cached(batch, mode, false)?.0)
    }

    pub(crate) fn forward_cached(
        &self,
        batch: &Batch,
        mode: ForwardMode,
        keep_tower: bool,
    ) -> Result<(Output, ForwardCache)> {
        self.check_batch(batch)?;
        let n = batch.n;
        let e = self.config.embedding_width();
        let (emb_p, emb_n, tower_p, tower_n) = match &batch.tiles {
            TileBatch::Embeddings { primary, neighbor } => {
                (primary.clone(), neighbor.clone(), Vec::new(), Vec::new())
            }
            TileBatch::Pixels { primary, neighbor } => {
                let len = self.tile_len();
                let run = |src: &Vec<f64>| -> (Vec<f64>, Vec<TowerCache>) {
                    let outs = par_map(n, |i| {
                        self.tower_forward(&src[i * len..(i + 1) * len], keep_tower)
                    });
                    let mut emb = Vec::with_capacity(n * e);
                    let mut caches = Vec::new();
                    for (v, c) in outs {
                        emb.extend(v);
                        caches.extend(c);
                    }
                    (emb, caches)
                };
                let (ep, cp) = run(primary);
                let (en, cn) = run(neighbor);
                (ep, en, cp, cn)
            }
        };

        let d = self.n_cont;
        let (mean, var) = if mode.batch_stats && n > 0 {
            let mut mean = vec![0.0; d];
            for row in batch.cont.chunks_exact(d.max(1)) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for row in batch.cont.chunks_exact(d.max(1)) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let mut xhat = vec![0.0; n * d];
        for (i, row) in batch.cont.chunks_exact(d.max(1)).enumerate().take(n) {
            for j in 0..d {
                xhat[i * d + j] = (row[j] - mean[j]) / (var[j] + self.config.bn_eps).sqrt();
            }
        }

        let width = self.head_input_width();
        let mut x0 = vec![0.0; n * width];
        let scale = self.params.get(self.norm.0);
        let shift = self.params.get(self.norm.1);
        let f = self.n_fields();
        for i in 0..n {
            let row = &mut x0[i * width..(i + 1) * width];
            let (p, q) = (&emb_p[i * e..(i + 1) * e], &emb_n[i * e..(i + 1) * e]);
            if self.config.symmetric_tiles {
                for k in 0..e {
                    row[k] = p[k] + q[k];
                    row[e + k] = p[k] * q[k];
                }
            } else {
                row[..e].copy_from_slice(p);
                row[e..2 * e].copy_from_slice(q);
            }
            let mut off = 2 * e;
            for cats in [&batch.cat_primary, &batch.cat_neighbor] {
                for k in 0..f {
                    let g = self.emb[k];
                    let dim = self.params.groups[g].cols;
                    let idx = cats[i * f + k] as usize;
                    row[off..off + dim]
                        .copy_from_slice(&self.params.get(g)[idx * dim..(idx + 1) * dim]);
                    off += dim;
                }
            }
            for j in 0..d {
                row[off + j] = scale[j] * xhat[i * d + j] + shift[j];
            }
        }

        let mut rng = mode.dropout_seed.map(crate::seeded_rng);
        let p_drop = self.config.dropout;
        let mut inputs = vec![x0];
        let mut pre = Vec::new();
        let mut masks = Vec::new();
        let n_hidden = self.config.hidden.len();
        let mut logits = Vec::new();
        for (l, &(wg, bg)) in self.linear.iter().enumerate() {
            let (out, inn) = (self.params.groups[wg].rows, self.params.groups[wg].cols);
            let mut z = vec![0.0; n * out];
            for row in z.chunks_exact_mut(out) {
                row.copy_from_slice(self.params.get(bg));
            }
            gemm(
                n,
                inn,
                out,
                inputs.last().expect("input"),
                false,
                self.params.get(wg),
                true,
                1.0,
                &mut z,
            );
            if l == n_hidden {
                logits = z;
                break;
            }
            let mut h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            if let (Some(rng), true) = (rng.as_mut(), p_drop > 0.0) {
                let keep = 1.0 / (1.0 - p_drop);
                let m: Vec<f64> = (0..h.len())
                    .map(|_| {
                        if rng.random::<f64>() < p_drop {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect();
                h.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                masks.push(m);
            }
            pre.push(z);
            inputs.push(h);
        }
        let latent_w = self.latent_width();
        // Latents are the undropped last hidden activations.
        let latent: Vec<f64> = pre[n_hidden - 1].iter().map(|v| v.max(0.0)).collect();
        debug_assert_eq!(latent.len(), n * latent_w);
        let scores = logits.iter().map(|&z| sigmoid(z)).collect();
        let cache = ForwardCache {
            tower_primary: tower_p,
            tower_neighbor: tower_n,
            emb_primary: emb_p,
            emb_neighbor: emb_n,
            xhat,
            batch_mean: mean,
            batch_var: var,
            inputs,
            pre,
            masks,
        };
        Ok((
            Output {
                scores,
                logits,
                latent,
            },
            cache,
        ))
    }

    /// Mean clipped binary cross-entropy of the batch.
    pub fn loss(&self, batch: &Batch, mode: ForwardMode) -> Result<f64> {
        let out = self.forward(batch, mode)?;
        Ok(mean_bce(&out.scores, &batch.labels))
    }

    /// Loss and gradient over the flat parameter buffer. Gradients of frozen
    /// tower blocks are left at zero.
    pub fn loss_and_grad(&self, batch: &Batch, mode: ForwardMode) -> Result<Step> {
        let tower_trainable =
            !self.config.tower_frozen() && matches!(batch.tiles, TileBatch::Pixels { .. });
        let (output, cache) = self.forward_cached(batch, mode, tower_trainable)?;
        if batch.labels.len() != batch.n {
            return Err(Error::invalid("training batch needs one label per row"));
        }
        let grad = self.backward(batch, &output, &cache, tower_trainable);
        Ok(Step {
            loss: mean_bce(&output.scores, &batch.labels),
            grad,
            output,
            batch_mean: cache.batch_mean,
            batch_var: cache.batch_var,
        })
    }

    fn backward(
        &self,
        batch: &Batch,
        out: &Output,
        cache: &ForwardCache,
        tower_trainable: bool,
    ) -> Vec<f64> {
        let n = batch.n;
        let mut grad = vec![0.0; self.params.len()];
        if n == 0 {
            return grad;
        }
        // d(mean BCE)/d logit = (s − y) / n where the score is inside the clip range.
        let mut dz: Vec<f64> = out
            .scores
            .iter()
            .zip(&batch.labels)
            .map(|(&s, &y)| {
                if (BCE_EPS..=1.0 - BCE_EPS).contains(&s) {
                    (s - y) / n as f64
                } else {
                    0.0
                }
            })
            .collect();
        let n_hidden = self.config.hidden.len();
        let mut dx = Vec::new();
        for l in (0..=n_hidden).rev() {
            let (wg, bg) = self.linear[l];
            let (outw, inn) = (self.params.groups[wg].rows, self.params.groups[wg].cols);
            let x = &cache.inputs[l];
            let wr = self.params.groups[wg].range();
            gemm(
                outw,
                n,
                inn,
                &dz,
                true,
                x,
                false,
                1.0,
                &mut grad[wr.clone()],
            );
            let br = self.params.groups[bg].range();
            for row in dz.chunks_exact(outw) {
                grad[br.clone()]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(g, v)| *g += v);
            }
            dx = vec![0.0; n * inn];
            gemm(
                n,
                outw,
                inn,
                &dz,
                false,
                &self.params.values[wr],
                false,
                0.0,
                &mut dx,
            );
            if l == 0 {
                break;
            }
            let mut d = dx.clone();
            if let Some(m) = cache.masks.get(l - 1) {
                d.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
            }
            for (g, &z) in d.iter_mut().zip(&cache.pre[l - 1]) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            dz = d;
        }

        let width = self.head_input_width();
        let e = self.config.embedding_width();
        let f = self.n_fields();
        let d = self.n_cont;
        let mut d_emb_p = vec![0.0; if tower_trainable { n * e } else { 0 }];
        let mut d_emb_n = d_emb_p.clone();
        for i in 0..n {
            let row = &dx[i * width..(i + 1) * width];
            if tower_trainable {
                let (p, q) = (
                    &cache.emb_primary[i * e..(i + 1) * e],
                    &cache.emb_neighbor[i * e..(i + 1) * e],
                );
                for k in 0..e {
                    if self.config.symmetric_tiles {
                        d_emb_p[i * e + k] = row[k] + row[e + k] * q[k];
                        d_emb_n[i * e + k] = row[k] + row[e + k] * p[k];
                    } else {
                        d_emb_p[i * e + k] = row[k];
                        d_emb_n[i * e + k] = row[e + k];
                    }
                }
            }
            let mut off = 2 * e;
            for cats in [&batch.cat_primary, &batch.cat_neighbor] {
                for k in 0..f {
                    let g = &self.params.groups[self.emb[k]];
                    let dim = g.cols;
                    let idx = cats[i * f + k] as usize;
                    let start = g.offset + idx * dim;
                    grad[start..start + dim]
                        .iter_mut()
                        .zip(&row[off..off + dim])
                        .for_each(|(a, b)| *a += b);
                    off += dim;
                }
            }
            let (so, bo) = (
                self.params.groups[self.norm.0].offset,
                self.params.groups[self.norm.1].offset,
            );
            for j in 0..d {
                grad[so + j] += row[off + j] * cache.xhat[i * d + j];
                grad[bo + j] += row[off + j];
            }
        }
        if tower_trainable {
            for i in 0..n {
                self.tower_backward(
                    &cache.tower_primary[i],
                    &d_emb_p[i * e..(i + 1) * e],
                    &mut grad,
                );
                self.tower_backward(
                    &cache.tower_neighbor[i],
                    &d_emb_n[i * e..(i + 1) * e],
                    &mut grad,
                );
            }
        }
        grad
    }

    /// Folds a training batch's statistics into the running normalizer.
    pub fn update_running(&mut self, batch_mean: &[f64], batch_var: &[f64], n: usize) {
        let m = self.config.bn_momentum;
        let unbias = if n > 1 {
            n as f64 / (n - 1) as f64
        } else {
            1.0
        };
        for j in 0..self.n_cont {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * batch_mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * batch_var[j] * unbias;
        }
    }

    /// Continuous features standardized with the frozen running statistics.
    pub fn standardize(&self, cont: &[f64]) -> Vec<f64> {
        cont.iter()
            .zip(self.running_mean.iter().zip(&self.running_var))
            .map(|(x, (m, v))| (x - m) / (v + self.config.bn_eps).sqrt())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format {} v{}",
                m.format, m.version
            )));
        }
        m.config.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `−[y ln s + (1 − y) ln(1 − s)]` with `s` clipped to `[ε, 1 − ε]`.
pub fn bce_loss(score: f64, label: f64) -> f64 {
    let s = score.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(label * s.ln() + (1.0 - label) * (1.0 - s).ln())
}

pub(crate) fn mean_bce(scores: &[f64], labels: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| bce_loss(s, y))
        .sum::<f64>()
        / scores.len() as f64
}

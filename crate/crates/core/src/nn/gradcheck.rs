use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;

use super::model::{Batch, ForwardMode, ParamKind, SimilarityNet};
use crate::Result;

pub const STEP: f64 = 1e-5;
/// Disagreement between steps `h` and `h/10` that marks a non-smooth point.
const KINK_TOLERANCE: f64 = 1e-6;

fn central_difference(probe: &mut SimilarityNet, i: usize, h: f64, batch: &Batch) -> Result<f64> {
    let orig = probe.params.values[i];
    probe.params.values[i] = orig + h;
    let up = probe.loss(batch, ForwardMode::EVAL)?;
    probe.params.values[i] = orig - h;
    let down = probe.loss(batch, ForwardMode::EVAL)?;
    probe.params.values[i] = orig;
    Ok((up - down) / (2.0 * h))
}

#[derive(Debug, Clone, PartialEq)]
pub enum GradCheck {
    Checked {
        max_rel_error: f64,
        n_checked: usize,
        /// Sampled parameters skipped because a ReLU or pooling switch lies
        /// within the step, where finite differences do not estimate the slope.
        n_kinks: usize,
        /// Worst relative error per parameter kind.
        per_kind: BTreeMap<String, f64>,
    },
    /// Dropout makes the loss random, so finite differences are meaningless.
    NonDeterministic,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> Option<f64> {
        match self {
            GradCheck::Checked { max_rel_error, .. } => Some(*max_rel_error),
            GradCheck::NonDeterministic => None,
        }
    }
}

/// `|a − n| / max(|a| + |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compares backprop gradients with central differences on `n_params`
/// parameters spread evenly across the requested kinds (all kinds when
/// `kinds` is empty). The normalizer runs on its frozen running statistics.
/// Lookup-table entries are only sampled from rows the batch touches, and
/// frozen tower blocks are skipped.
pub fn gradient_check(
    model: &SimilarityNet,
    batch: &Batch,
    n_params: usize,
    kinds: &[ParamKind],
    seed: u64,
) -> Result<GradCheck> {
    if model.config.dropout > 0.0 {
        return Ok(GradCheck::NonDeterministic);
    }
    let mode = ForwardMode::EVAL;
    let step = model.loss_and_grad(batch, mode)?;

    let used_rows: Vec<BTreeSet<usize>> = (0..model.n_fields())
        .map(|f| {
            batch
                .cat_primary
                .iter()
                .chain(&batch.cat_neighbor)
                .skip(f)
                .step_by(model.n_fields())
                .map(|&c| c as usize)
                .collect()
        })
        .collect();
    let mut pools: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut field = 0;
    for (g, group) in model.params.groups.iter().enumerate() {
        if model.is_frozen(g) || !(kinds.is_empty() || kinds.contains(&group.kind)) {
            if group.kind == ParamKind::Embedding {
                field += 1;
            }
            continue;
        }
        let pool = pools.entry(format!("{:?}", group.kind)).or_default();
        if group.kind == ParamKind::Embedding {
            for &row in &used_rows[field] {
                let start = group.offset + row * group.cols;
                pool.extend(start..start + group.cols);
            }
            field += 1;
        } else {
            pool.extend(group.range());
        }
    }
    pools.retain(|_, p| !p.is_empty());

    let mut rng = crate::seeded_rng(seed);
    // Smallest pools first so that any shortfall is passed on to larger ones.
    let mut by_size: Vec<(&String, &Vec<usize>)> = pools.iter().collect();
    by_size.sort_by_key(|(_, p)| p.len());
    let mut remaining = n_params;
    let mut picks: Vec<(String, usize)> = Vec::new();
    for (k, (kind, pool)) in by_size.iter().enumerate() {
        let quota = remaining.div_ceil(by_size.len() - k).min(pool.len());
        remaining -= quota;
        for i in sample(&mut rng, pool.len(), quota) {
            picks.push(((*kind).clone(), pool[i]));
        }
    }

    let mut probe = model.clone();
    let mut per_kind: BTreeMap<String, f64> = BTreeMap::new();
    let mut max_rel_error: f64 = 0.0;
    let mut n_kinks = 0;
    for (kind, i) in &picks {
        let numeric = central_difference(&mut probe, *i, STEP, batch)?;
        let fine = central_difference(&mut probe, *i, STEP / 10.0, batch)?;
        if relative_error(numeric, fine) > KINK_TOLERANCE {
            n_kinks += 1;
            continue;
        }
        let err = relative_error(step.grad[*i], numeric);
        max_rel_error = max_rel_error.max(err);
        let e = per_kind.entry(kind.clone()).or_insert(0.0);
        *e = e.max(err);
    }
    Ok(GradCheck::Checked {
        max_rel_error,
        n_checked: picks.len() - n_kinks,
        n_kinks,
        per_kind,
    })
}

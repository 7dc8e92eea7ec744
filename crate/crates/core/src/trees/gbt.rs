use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecisionTree, Matrix};
use crate::{Error, Result};

const FORMAT: &str = "landval.gbt_regressor";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_rounds: 300,
            learning_rate: 0.05,
            max_depth: 4,
            min_leaf: 5,
        }
    }
}

/// Least-squares boosting: `base + learning_rate * Σ tree(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtRegressor {
    format: String,
    version: u32,
    pub n_features: usize,
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<DecisionTree>,
    /// Training mean squared error after each round (index 0 is the base model).
    pub train_loss: Vec<f64>,
}

impl GbtRegressor {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::invalid(format!(
                "feature vector has width {}, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GbtRegressor = serde_json::from_str(s)?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format {} v{}",
                m.format, m.version
            )));
        }
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

fn mse(residual: &[f64]) -> f64 {
    residual.iter().map(|r| r * r).sum::<f64>() / residual.len() as f64
}

pub fn fit_gbt_regressor(x: &Matrix, y: &[f64], cfg: &GbtConfig) -> Result<GbtRegressor> {
    let n = x.n_rows();
    if n == 0 {
        return Err(Error::invalid("cannot fit a regressor on empty data"));
    }
    if y.len() != n {
        return Err(Error::invalid(format!("{} targets for {n} rows", y.len())));
    }
    if y.iter().chain(x.rows().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "regression data contains NaN or infinite values",
        ));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0) {
        return Err(Error::invalid("learning rate must be in (0, 1]"));
    }
    let cols = x.columns();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut residual: Vec<f64> = y.iter().map(|v| v - base).collect();
    let mut train_loss = vec![mse(&residual)];
    let mut trees = Vec::with_capacity(cfg.n_rounds);
    for _ in 0..cfg.n_rounds {
        let tree = fit_regression_tree(&cols, &residual, cfg.max_depth, cfg.min_leaf.max(1));
        for (i, r) in residual.iter_mut().enumerate() {
            *r -= cfg.learning_rate * tree.predict(x.row(i));
        }
        train_loss.push(mse(&residual));
        trees.push(tree);
    }
    Ok(GbtRegressor {
        format: FORMAT.to_string(),
        version: VERSION,
        n_features: x.n_cols(),
        base,
        learning_rate: cfg.learning_rate,
        trees,
        train_loss,
    })
}

/// Variance-reduction tree over all features; leaves hold mean targets.
fn fit_regression_tree(
    cols: &[Vec<f64>],
    target: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> DecisionTree {
    let n = target.len();
    let mut samples: Vec<usize> = (0..n).collect();
    let mut tree = DecisionTree::default();
    let mean = |s: &[usize]| s.iter().map(|&i| target[i]).sum::<f64>() / s.len() as f64;
    let root = tree.push_node(mean(&samples), n);
    let mut stack = vec![(root, 0usize, n, 0usize)];
    let mut buf: Vec<(f64, f64)> = Vec::with_capacity(n);
    while let Some((node, start, end, depth)) = stack.pop() {
        let count = end - start;
        if depth >= max_depth || count < 2 * min_leaf {
            continue;
        }
        let total: f64 = samples[start..end].iter().map(|&i| target[i]).sum();
        let parent_score = total * total / count as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for (f, col) in cols.iter().enumerate() {
            buf.clear();
            buf.extend(samples[start..end].iter().map(|&i| (col[i], target[i])));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for k in 0..count - 1 {
                left += buf[k].1;
                let nl = k + 1;
                if buf[k].0 == buf[k + 1].0 || nl < min_leaf || count - nl < min_leaf {
                    continue;
                }
                let right = total - left;
                // Maximizing this is minimizing the children's squared error.
                let score = left * left / nl as f64 + right * right / (count - nl) as f64;
                if best.is_none_or(|b| score > b.2) {
                    let (a, b) = (buf[k].0, buf[k + 1].0);
                    let mut t = a + (b - a) * 0.5;
                    if t >= b {
                        t = a;
                    }
                    best = Some((f, t, score));
                }
            }
        }
        let Some((f, t, score)) = best else { continue };
        if score <= parent_score * (1.0 + 1e-12) + 1e-12 {
            continue;
        }
        let slice = &mut samples[start..end];
        let mut mid = 0;
        for i in 0..slice.len() {
            if cols[f][slice[i]] <= t {
                slice.swap(i, mid);
                mid += 1;
            }
        }
        let l = tree.push_node(mean(&slice[..mid]), mid);
        let r = tree.push_node(mean(&slice[mid..]), count - mid);
        tree.feature[node] = f as i32;
        tree.threshold[node] = t;
        tree.left[node] = l as u32;
        tree.right[node] = r as u32;
        stack.push((r, start + mid, end, depth + 1));
        stack.push((l, start, start + mid, depth + 1));
    }
    tree
}

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DecisionTree, Matrix};
use crate::{derive_seed, par_map, seeded_rng, Error, Result};

const FORMAT: &str = "landval.tree_ensemble";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Bootstrap rows, best Gini split among `mtry` sampled features.
    RandomForest,
    /// All rows, one uniformly random threshold per sampled feature, best of those.
    ExtraTrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(d))`.
    pub mtry: Option<usize>,
    /// Overrides the kind's default (on for Random Forest, off for Extra Trees).
    pub bootstrap: Option<bool>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 12,
            min_leaf: 5,
            mtry: None,
            bootstrap: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    format: String,
    version: u32,
    pub kind: EnsembleKind,
    pub n_features: usize,
    /// Mean impurity decrease per feature, normalized to sum to one.
    pub importances: Vec<f64>,
    pub trees: Vec<DecisionTree>,
}

impl TreeEnsemble {
    /// Mean leaf positive-fraction over all trees.
    pub fn predict_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::invalid(format!(
                "feature vector has width {}, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features {
            return Err(Error::invalid(format!(
                "matrix has {} columns, model expects {}",
                x.n_cols(),
                self.n_features
            )));
        }
        Ok(par_map(x.n_rows(), |i| {
            let row = x.row(i);
            self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
        }))
    }

    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TreeEnsemble = serde_json::from_str(s)?;
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

    /// Builds an ensemble from already-fitted trees (importances left at zero).
    pub fn from_trees(kind: EnsembleKind, n_features: usize, trees: Vec<DecisionTree>) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            kind,
            n_features,
            importances: vec![0.0; n_features],
            trees,
        }
    }
}

pub fn fit_ensemble(
    kind: EnsembleKind,
    x: &Matrix,
    y: &[bool],
    cfg: &ForestConfig,
) -> Result<TreeEnsemble> {
    let n = x.n_rows();
    let d = x.n_cols();
    if n == 0 || d == 0 {
        return Err(Error::invalid("cannot fit a forest on an empty matrix"));
    }
    if y.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} rows", y.len())));
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == n {
        return Err(Error::invalid("training labels contain a single class"));
    }
    if x.rows().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "feature matrix contains NaN or infinite values",
        ));
    }
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(Error::invalid("n_trees and min_leaf must be positive"));
    }
    let mtry = cfg
        .mtry
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let bootstrap = cfg.bootstrap.unwrap_or(kind == EnsembleKind::RandomForest);
    let cols = x.columns();
    let builder = Builder {
        kind,
        cols: &cols,
        y,
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        mtry,
        bootstrap,
    };
    let fitted = par_map(cfg.n_trees, |t| {
        builder.build(derive_seed(cfg.seed, t as u64))
    });

    let mut importances = vec![0.0; d];
    let mut contributing = 0usize;
    for (_, imp) in &fitted {
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            contributing += 1;
            for (acc, v) in importances.iter_mut().zip(imp) {
                *acc += v / total;
            }
        }
    }
    if contributing > 0 {
        let total: f64 = importances.iter().sum();
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(TreeEnsemble {
        format: FORMAT.to_string(),
        version: VERSION,
        kind,
        n_features: d,
        importances,
        trees: fitted.into_iter().map(|(t, _)| t).collect(),
    })
}

fn gini_weighted(pos: usize, n: usize) -> f64 {
    // n * gini = n * 2p(1-p)
    if n == 0 {
        return 0.0;
    }
    2.0 * pos as f64 * (n - pos) as f64 / n as f64
}

struct Builder<'a> {
    kind: EnsembleKind,
    cols: &'a [Vec<f64>],
    y: &'a [bool],
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    bootstrap: bool,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn build(&self, seed: u64) -> (DecisionTree, Vec<f64>) {
        let mut rng = seeded_rng(seed);
        let n = self.y.len();
        let mut samples: Vec<u32> = if self.bootstrap {
            (0..n).map(|_| rng.random_range(0..n) as u32).collect()
        } else {
            (0..n as u32).collect()
        };
        let mut tree = DecisionTree::default();
        let mut importance = vec![0.0; self.cols.len()];
        let mut buf: Vec<(f64, bool)> = Vec::with_capacity(n);
        let mut features: Vec<usize> = (0..self.cols.len()).collect();

        let pos = samples.iter().filter(|&&s| self.y[s as usize]).count();
        let root = tree.push_node(pos as f64 / n as f64, n);
        // (node, start, end, depth, positives)
        let mut stack = vec![(root, 0usize, n, 0usize, pos)];
        while let Some((node, start, end, depth, pos)) = stack.pop() {
            let count = end - start;
            if pos == 0 || pos == count {
                debug_assert_eq!(gini_weighted(pos, count), 0.0);
                continue;
            }
            if depth >= self.max_depth || count < 2 * self.min_leaf {
                continue;
            }
            let node_samples = &samples[start..end];
            let Some(split) = self.best_split(node_samples, pos, &mut features, &mut buf, &mut rng)
            else {
                continue;
            };
            let col = &self.cols[split.feature];
            let slice = &mut samples[start..end];
            let mut mid = 0;
            for i in 0..slice.len() {
                if col[slice[i] as usize] <= split.threshold {
                    slice.swap(i, mid);
                    mid += 1;
                }
            }
            let left_pos = slice[..mid].iter().filter(|&&s| self.y[s as usize]).count();
            let right_pos = pos - left_pos;
            importance[split.feature] += gini_weighted(pos, count) - split.impurity;

            let l = tree.push_node(left_pos as f64 / mid as f64, mid);
            let r = tree.push_node(right_pos as f64 / (count - mid) as f64, count - mid);
            tree.feature[node] = split.feature as i32;
            tree.threshold[node] = split.threshold;
            tree.left[node] = l as u32;
            tree.right[node] = r as u32;
            stack.push((r, start + mid, end, depth + 1, right_pos));
            stack.push((l, start, start + mid, depth + 1, left_pos));
        }
        (tree, importance)
    }

    /// Examines sampled features in random order until `mtry` non-constant ones were tried.
    fn best_split(
        &self,
        samples: &[u32],
        pos: usize,
        features: &mut [usize],
        buf: &mut Vec<(f64, bool)>,
        rng: &mut impl Rng,
    ) -> Option<Split> {
        let n = samples.len();
        let parent = gini_weighted(pos, n);
        let mut best: Option<Split> = None;
        let mut tried = 0;
        for k in 0..features.len() {
            if tried == self.mtry {
                break;
            }
            let j = rng.random_range(k..features.len());
            features.swap(k, j);
            let f = features[k];
            let col = &self.cols[f];
            let candidate = match self.kind {
                EnsembleKind::RandomForest => {
                    buf.clear();
                    buf.extend(
                        samples
                            .iter()
                            .map(|&s| (col[s as usize], self.y[s as usize])),
                    );
                    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
                    if buf[0].0 == buf[n - 1].0 {
                        continue;
                    }
                    tried += 1;
                    self.best_threshold(buf, pos, f)
                }
                EnsembleKind::ExtraTrees => {
                    let (lo, hi) =
                        samples
                            .iter()
                            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                                let v = col[s as usize];
                                (lo.min(v), hi.max(v))
                            });
                    if lo == hi {
                        continue;
                    }
                    tried += 1;
                    let t = rng.random_range(lo..hi);
                    let (mut nl, mut pl) = (0usize, 0usize);
                    for &s in samples {
                        if col[s as usize] <= t {
                            nl += 1;
                            pl += self.y[s as usize] as usize;
                        }
                    }
                    let nr = n - nl;
                    (nl >= self.min_leaf && nr >= self.min_leaf).then(|| Split {
                        feature: f,
                        threshold: t,
                        impurity: gini_weighted(pl, nl) + gini_weighted(pos - pl, nr),
                    })
                }
            };
            if let Some(c) = candidate {
                if best.as_ref().is_none_or(|b| c.impurity < b.impurity) {
                    best = Some(c);
                }
            }
        }
        best.filter(|b| b.impurity < parent)
    }

    /// Exact scan over a sorted column.
    fn best_threshold(&self, sorted: &[(f64, bool)], pos: usize, feature: usize) -> Option<Split> {
        let n = sorted.len();
        let mut best: Option<Split> = None;
        let mut left_pos = 0usize;
        for i in 0..n - 1 {
            left_pos += sorted[i].1 as usize;
            let nl = i + 1;
            if sorted[i].0 == sorted[i + 1].0 || nl < self.min_leaf || n - nl < self.min_leaf {
                continue;
            }
            let impurity = gini_weighted(left_pos, nl) + gini_weighted(pos - left_pos, n - nl);
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                let (a, b) = (sorted[i].0, sorted[i + 1].0);
                let mut threshold = a + (b - a) * 0.5;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(Split {
                    feature,
                    threshold,
                    impurity,
                });
            }
        }
        best
    }
}

//! Weighted averaging of the five member similarity scores, with weights tuned
//! by seeded random search on the probability simplex.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::metrics::auc;
use crate::{par_map, Error, Result};

pub const MEMBERS: [&str; 5] = [
    "dl_small",
    "dl_large",
    "extra_trees",
    "random_forest",
    "rf_on_latent",
];
pub const N_MEMBERS: usize = MEMBERS.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub weights: BTreeMap<String, f64>,
}

impl EnsembleSpec {
    pub fn from_weights(w: [f64; N_MEMBERS]) -> Result<Self> {
        let spec = Self {
            weights: MEMBERS.iter().map(|m| m.to_string()).zip(w).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform() -> Self {
        Self::from_weights([1.0 / N_MEMBERS as f64; N_MEMBERS]).expect("uniform weights are valid")
    }

    /// Weights in [`MEMBERS`] order.
    pub fn ordered(&self) -> [f64; N_MEMBERS] {
        MEMBERS.map(|m| self.weights.get(m).copied().unwrap_or(f64::NAN))
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != N_MEMBERS || MEMBERS.iter().any(|m| !self.weights.contains_key(*m))
        {
            return Err(Error::invalid(format!(
                "ensemble weights must name exactly the members {MEMBERS:?}"
            )));
        }
        let w = self.ordered();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "ensemble weights must be finite and non-negative",
            ));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "ensemble weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn combine(spec: &EnsembleSpec, scores: &[f64; N_MEMBERS]) -> Result<f64> {
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("member score {s} outside [0, 1]")));
    }
    Ok(weighted(&spec.ordered(), scores))
}

fn weighted(w: &[f64; N_MEMBERS], s: &[f64; N_MEMBERS]) -> f64 {
    let v: f64 = w.iter().zip(s).map(|(a, b)| a * b).sum();
    v.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub spec: EnsembleSpec,
    pub val_auc: f64,
    pub n_candidates: usize,
}

/// `member_scores[i]` holds the five member scores of validation pair `i`.
///
/// Candidates are the five one-hot vectors, the uniform vector and `n_trials`
/// flat-Dirichlet draws; the first candidate with the highest AUC wins. With
/// `n_trials == 0` the uniform weights are returned without search.
pub fn tune_weights(
    member_scores: &[[f64; N_MEMBERS]],
    labels: &[bool],
    n_trials: usize,
    seed: u64,
) -> Result<TuneOutcome> {
    if member_scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} score rows for {} labels",
            member_scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::invalid(
            "weight tuning needs both classes in the validation labels",
        ));
    }
    if n_trials == 0 {
        let spec = EnsembleSpec::uniform();
        let val_auc = candidate_auc(&spec.ordered(), member_scores, labels)?;
        return Ok(TuneOutcome {
            spec,
            val_auc,
            n_candidates: 1,
        });
    }
    let mut candidates: Vec<[f64; N_MEMBERS]> = (0..N_MEMBERS)
        .map(|k| {
            let mut w = [0.0; N_MEMBERS];
            w[k] = 1.0;
            w
        })
        .collect();
    candidates.push([1.0 / N_MEMBERS as f64; N_MEMBERS]);
    let mut rng = crate::seeded_rng(seed);
    for _ in 0..n_trials {
        candidates.push(dirichlet_flat(&mut rng));
    }
    let aucs = par_map(candidates.len(), |i| {
        candidate_auc(&candidates[i], member_scores, labels)
    });
    let mut best = 0;
    let mut best_auc = f64::NEG_INFINITY;
    for (i, a) in aucs.into_iter().enumerate() {
        let a = a?;
        if a > best_auc {
            best = i;
            best_auc = a;
        }
    }
    Ok(TuneOutcome {
        spec: EnsembleSpec::from_weights(candidates[best])?,
        val_auc: best_auc,
        n_candidates: candidates.len(),
    })
}

fn dirichlet_flat<R: Rng>(rng: &mut R) -> [f64; N_MEMBERS] {
    let mut w = [0.0; N_MEMBERS];
    for v in &mut w {
        let e: f64 = Exp1.sample(rng);
        *v = e.max(1e-300);
    }
    let sum: f64 = w.iter().sum();
    w.map(|v| v / sum)
}

fn candidate_auc(
    w: &[f64; N_MEMBERS],
    member_scores: &[[f64; N_MEMBERS]],
    labels: &[bool],
) -> Result<f64> {
    let combined: Vec<f64> = member_scores.iter().map(|s| weighted(w, s)).collect();
    auc(&combined, labels)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    #[test]
    fn equal_weights_give_the_mean() {
        let v = combine(&EnsembleSpec::uniform(), &[0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        assert!((v - 0.6).abs() < 1e-12);
    }

    #[test]
    fn one_hot_selects_member() {
        let s = [0.1, 0.3, 0.5, 0.7, 0.9];
        for k in 0..N_MEMBERS {
            let mut w = [0.0; N_MEMBERS];
            w[k] = 1.0;
            assert_eq!(
                combine(&EnsembleSpec::from_weights(w).unwrap(), &s).unwrap(),
                s[k]
            );
        }
    }

    #[test]
    fn rejects_bad_scores_and_weights() {
        assert!(combine(&EnsembleSpec::uniform(), &[0.2, 0.4, 1.2, 0.8, 1.0]).is_err());
        assert!(EnsembleSpec::from_weights([0.5, 0.5, 0.5, 0.0, 0.0]).is_err());
        assert!(EnsembleSpec::from_weights([1.5, -0.5, 0.0, 0.0, 0.0]).is_err());
        assert!(EnsembleSpec::from_json(r#"{"weights":{"dl_small":1.0}}"#).is_err());
    }

    #[test]
    fn json_shape() {
        let spec = EnsembleSpec::uniform();
        let v: serde_json::Value = serde_json::from_str(&spec.to_json().unwrap()).unwrap();
        assert_eq!(v["weights"]["rf_on_latent"], 0.2);
        assert_eq!(
            EnsembleSpec::from_json(&spec.to_json().unwrap()).unwrap(),
            spec
        );
    }

    proptest! {
        #[test]
        fn combine_is_convex_and_monotone(
            raw in prop::array::uniform5(0.001..1.0f64),
            s in prop::array::uniform5(0.0..=1.0f64),
            k in 0usize..5, bump in 0.0..1.0f64,
        ) {
            let sum: f64 = raw.iter().sum();
            let spec = EnsembleSpec::from_weights(raw.map(|v| v / sum)).unwrap();
            let v = combine(&spec, &s).unwrap();
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            let mut s2 = s;
            s2[k] = (s[k] + bump).min(1.0);
            prop_assert!(combine(&spec, &s2).unwrap() >= v);
        }
    }

    fn noisy_members(n: usize, seed: u64) -> (Vec<[f64; N_MEMBERS]>, Vec<bool>) {
        let mut rng = crate::seeded_rng(seed);
        let labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let scores = labels
            .iter()
            .map(|&l| {
                let mut s = [0.0; N_MEMBERS];
                for (k, v) in s.iter_mut().enumerate() {
                    let signal = if l { 0.1 * k as f64 } else { 0.0 };
                    *v = (rng.random::<f64>() * 0.7 + signal).min(1.0);
                }
                s
            })
            .collect();
        (scores, labels)
    }

    #[test]
    fn perfect_member_wins() {
        let (mut scores, labels) = noisy_members(200, 1);
        for (s, &l) in scores.iter_mut().zip(&labels) {
            s[2] = if l { 1.0 } else { 0.0 };
        }
        let out = tune_weights(&scores, &labels, 50, 3).unwrap();
        assert_eq!(out.val_auc, 1.0);
        let w = out.spec.ordered();
        assert!(w.iter().all(|&v| v <= w[2]));
    }

    #[test]
    fn tuned_auc_dominates_members() {
        let (scores, labels) = noisy_members(300, 2);
        let out = tune_weights(&scores, &labels, 200, 9).unwrap();
        for k in 0..N_MEMBERS {
            let member: Vec<f64> = scores.iter().map(|s| s[k]).collect();
            assert!(out.val_auc >= auc(&member, &labels).unwrap() - 1e-12);
        }
        assert_eq!(out.n_candidates, 206);
        assert_eq!(tune_weights(&scores, &labels, 200, 9).unwrap(), out);
    }

    #[test]
    fn zero_trials_is_uniform() {
        let (scores, labels) = noisy_members(50, 3);
        assert_eq!(
            tune_weights(&scores, &labels, 0, 1).unwrap().spec,
            EnsembleSpec::uniform()
        );
    }

    #[test]
    fn single_class_rejected() {
        let (scores, _) = noisy_members(20, 4);
        assert!(tune_weights(&scores, &[true; 20], 10, 1).is_err());
    }

    #[test]
    fn dirichlet_draws_on_simplex() {
        let mut rng = crate::seeded_rng(5);
        for _ in 0..1000 {
            let w = dirichlet_flat(&mut rng);
            assert!(w.iter().all(|&v| v > 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

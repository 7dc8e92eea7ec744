//! Price prediction as the score-weighted mean of similar neighbors' appraisals.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LandParcel, Split, SplitAssignment};
use crate::{Error, Result};

/// A neighbor appraisal together with its similarity score to the primary parcel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredNeighbor {
    pub id: String,
    pub price: f64,
    pub score: f64,
}

/// Similarity score for one (primary, neighbor) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub primary_id: String,
    pub neighbor_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationResult {
    pub parcel_id: String,
    pub province: String,
    pub actual_price: f64,
    pub covered: bool,
    pub predicted_price: Option<f64>,
    pub contributors: Vec<ScoredNeighbor>,
    /// Neighbors considered before thresholding.
    pub n_candidates: usize,
    pub theta: f64,
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("theta {theta} outside [0, 1]")));
    }
    Ok(())
}

/// Neighbors scoring at least `theta` contribute with weight equal to their score.
pub fn value_parcel(
    p: &LandParcel,
    neighbors: &[ScoredNeighbor],
    theta: f64,
) -> Result<ValuationResult> {
    check_theta(theta)?;
    for n in neighbors {
        if !(0.0..=1.0).contains(&n.score) {
            return Err(Error::invalid(format!(
                "score {} for neighbor {} outside [0, 1]",
                n.score, n.id
            )));
        }
        if !(n.price > 0.0) {
            return Err(Error::invalid(format!(
                "neighbor {} has price {}",
                n.id, n.price
            )));
        }
    }
    let contributors: Vec<ScoredNeighbor> = neighbors
        .iter()
        .filter(|n| n.score >= theta)
        .cloned()
        .collect();
    let weight: f64 = contributors.iter().map(|c| c.score).sum();
    let predicted_price = if contributors.is_empty() {
        None
    } else if weight > 0.0 {
        let raw = contributors.iter().map(|c| c.score * c.price).sum::<f64>() / weight;
        // Rounding can push a convex combination a hair outside its range.
        let (lo, hi) = price_range(&contributors);
        Some(raw.clamp(lo, hi))
    } else {
        // Every contributor scored exactly zero (only possible at theta = 0).
        Some(contributors.iter().map(|c| c.price).sum::<f64>() / contributors.len() as f64)
    };
    Ok(ValuationResult {
        parcel_id: p.id.clone(),
        province: p.province.clone(),
        actual_price: p.price,
        covered: predicted_price.is_some(),
        predicted_price,
        contributors,
        n_candidates: neighbors.len(),
        theta,
    })
}

pub(crate) fn price_range(c: &[ScoredNeighbor]) -> (f64, f64) {
    c.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| {
            (lo.min(n.price), hi.max(n.price))
        })
}

/// Evaluated parcels with their train-split neighbor candidates, grouped once so
/// that sweeping many thresholds stays cheap.
#[derive(Debug, Clone)]
pub struct Candidates<'a> {
    entries: Vec<(&'a LandParcel, Vec<ScoredNeighbor>)>,
}

impl<'a> Candidates<'a> {
    /// Parcels whose split is in `targets`, ordered by id. Only train-split
    /// neighbors are kept, so valuation never sees held-out appraisals.
    pub fn new(
        ds: &'a Dataset,
        split: &SplitAssignment,
        scored: &[ScoredPair],
        targets: &[Split],
    ) -> Result<Self> {
        let mut grouped: BTreeMap<&str, Vec<ScoredNeighbor>> = BTreeMap::new();
        for p in ds.parcels() {
            if split.get(&p.id).is_some_and(|s| targets.contains(&s)) {
                grouped.insert(p.id.as_str(), Vec::new());
            }
        }
        for sp in scored {
            let Some(list) = grouped.get_mut(sp.primary_id.as_str()) else {
                continue;
            };
            if split.get(&sp.neighbor_id) != Some(Split::Train) {
                continue;
            }
            let q = ds.get(&sp.neighbor_id).ok_or_else(|| {
                Error::invalid(format!(
                    "scored pair references unknown parcel {}",
                    sp.neighbor_id
                ))
            })?;
            list.push(ScoredNeighbor {
                id: q.id.clone(),
                price: q.price,
                score: sp.score,
            });
        }
        let entries = grouped
            .into_iter()
            .map(|(id, list)| (ds.get(id).expect("grouped from dataset"), list))
            .collect();
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, theta: f64) -> Result<Vec<ValuationResult>> {
        self.entries
            .iter()
            .map(|(p, n)| value_parcel(p, n, theta))
            .collect()
    }

    /// Restriction to one province.
    pub fn province(&self, province: &str) -> Candidates<'a> {
        Candidates {
            entries: self
                .entries
                .iter()
                .filter(|(p, _)| p.province == province)
                .cloned()
                .collect(),
        }
    }
}

/// Values every parcel in `targets` (val/test in practice), ordered by parcel id.
pub fn value_all(
    ds: &Dataset,
    split: &SplitAssignment,
    scored: &[ScoredPair],
    theta: f64,
    targets: &[Split],
) -> Result<Vec<ValuationResult>> {
    check_theta(theta)?;
    Candidates::new(ds, split, scored, targets)?.value(theta)
}

pub fn write_results_csv<W: Write>(results: &[ValuationResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "parcel_id",
        "covered",
        "predicted_price",
        "actual_price",
        "n_contributors",
        "theta",
    ])?;
    for r in results {
        w.write_record([
            r.parcel_id.clone(),
            r.covered.to_string(),
            r.predicted_price.map(|v| v.to_string()).unwrap_or_default(),
            r.actual_price.to_string(),
            r.contributors.len().to_string(),
            r.theta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

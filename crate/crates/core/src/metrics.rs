//! AUC, MAPE, coverage, and coverage/MAPE threshold sweeps.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::valuation::{Candidates, ValuationResult};
use crate::{Error, Result};

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(format!(
            "AUC needs both classes; got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked correctly,
/// with ties counted as one half. Computed from mid-ranks in O(n log n).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += mid * tied_pos as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from (0, 0) to (1, 1), one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&n| scores[n] != scores[i]);
        if last_of_group {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    let auc = trapezoid(&points);
    Ok(RocCurve { points, auc })
}

/// Area under a piecewise-linear curve given as `(x, y)` points sorted by x.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// Mean absolute percentage error over covered results.
pub fn mape(results: &[ValuationResult]) -> Result<f64> {
    let errs: Vec<f64> = results
        .iter()
        .filter_map(|r| {
            r.predicted_price
                .map(|pred| (pred - r.actual_price).abs() / r.actual_price)
        })
        .collect();
    if errs.is_empty() {
        return Err(Error::invalid("MAPE is undefined without covered parcels"));
    }
    Ok(100.0 * errs.iter().sum::<f64>() / errs.len() as f64)
}

/// What the coverage percentage is relative to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageDenominator {
    /// Every evaluated parcel.
    #[default]
    Evaluated,
    /// Only parcels with at least one neighbor candidate.
    WithCandidates,
}

pub fn coverage_pct(results: &[ValuationResult]) -> f64 {
    coverage_pct_with(results, CoverageDenominator::Evaluated)
}

pub fn coverage_pct_with(results: &[ValuationResult], denominator: CoverageDenominator) -> f64 {
    let total = match denominator {
        CoverageDenominator::Evaluated => results.len(),
        CoverageDenominator::WithCandidates => {
            results.iter().filter(|r| r.n_candidates > 0).count()
        }
    };
    if total == 0 {
        return 0.0;
    }
    let covered = results.iter().filter(|r| r.covered).count();
    100.0 * covered as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub coverage_pct: f64,
    /// Absent when nothing is covered at this threshold.
    pub mape_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMapeCurve {
    pub points: Vec<CurvePoint>,
}

impl CoverageMapeCurve {
    /// Largest coverage among thresholds whose MAPE is at most `max_mape`.
    pub fn coverage_at_mape(&self, max_mape: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.mape_pct.is_some_and(|m| m <= max_mape))
            .map(|p| p.coverage_pct)
            .max_by(f64::total_cmp)
    }

    /// MAPE at the strictest threshold that still covers at least `min_coverage` percent.
    pub fn mape_at_coverage(&self, min_coverage: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.coverage_pct >= min_coverage)
            .max_by(|a, b| a.theta.total_cmp(&b.theta))
            .and_then(|p| p.mape_pct)
    }
}

/// `n` evenly spaced thresholds from 0 to 1 inclusive.
pub fn theta_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn coverage_mape_curve(
    candidates: &Candidates<'_>,
    grid: &[f64],
    denominator: CoverageDenominator,
) -> Result<CoverageMapeCurve> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("theta grid must be sorted"));
    }
    let points = grid
        .iter()
        .map(|&theta| {
            let results = candidates.value(theta)?;
            Ok(CurvePoint {
                theta,
                coverage_pct: coverage_pct_with(&results, denominator),
                mape_pct: mape(&results).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageMapeCurve { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvinceCurve {
    pub province: String,
    pub n_parcels: usize,
    /// `None` when the province has no evaluated parcels.
    pub curve: Option<CoverageMapeCurve>,
}

/// One coverage/MAPE curve per province, in the given province order.
pub fn per_province_report(
    candidates: &Candidates<'_>,
    provinces: &[String],
    grid: &[f64],
    denominator: CoverageDenominator,
) -> Result<Vec<ProvinceCurve>> {
    provinces
        .iter()
        .map(|province| {
            let sub = candidates.province(province);
            let curve = if sub.is_empty() {
                None
            } else {
                Some(coverage_mape_curve(&sub, grid, denominator)?)
            };
            Ok(ProvinceCurve {
                province: province.clone(),
                n_parcels: sub.len(),
                curve,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_curve_csv<W: Write>(curve: &CoverageMapeCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["theta", "coverage_pct", "mape_pct"])?;
    for p in &curve.points {
        w.write_record([
            p.theta.to_string(),
            p.coverage_pct.to_string(),
            opt(p.mape_pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Provinces without evaluated parcels get a single row with empty metrics.
pub fn write_province_csv<W: Write>(report: &[ProvinceCurve], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["province", "theta", "coverage_pct", "mape_pct"])?;
    for row in report {
        match &row.curve {
            None => w.write_record([row.province.as_str(), "", "", ""])?,
            Some(c) => {
                for p in &c.points {
                    w.write_record([
                        row.province.clone(),
                        p.theta.to_string(),
                        p.coverage_pct.to_string(),
                        opt(p.mape_pct),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc_csv<W: Write>(roc: &RocCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fpr", "tpr"])?;
    for (f, t) in &roc.points {
        w.write_record([f.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::valuation::ScoredNeighbor;

    #[test]
    fn perfect_ranking() {
        let s = [0.9, 0.8, 0.4, 0.3];
        assert_eq!(auc(&s, &[true, true, false, false]).unwrap(), 1.0);
    }

    #[test]
    fn three_of_four_concordant() {
        let s = [0.9, 0.8, 0.4, 0.3];
        assert_eq!(auc(&s, &[true, false, true, false]).unwrap(), 0.75);
        assert_eq!(
            roc_curve(&s, &[true, false, true, false]).unwrap().auc,
            0.75
        );
    }

    #[test]
    fn all_ties_is_half() {
        let s = [0.5; 6];
        let l = [true, false, true, false, false, true];
        assert_eq!(auc(&s, &l).unwrap(), 0.5);
        let roc = roc_curve(&s, &l).unwrap();
        assert_eq!(roc.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn single_class_rejected() {
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_curve(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn monotone_transform_invariance() {
        let mut rng = crate::seeded_rng(3);
        use rand::Rng;
        let s: Vec<f64> = (0..300).map(|_| rng.random_range(-2.0..2.0)).collect();
        let l: Vec<bool> = (0..300)
            .map(|i| rng.random::<f64>() < 0.3 + 0.1 * s[i])
            .collect();
        let cubed: Vec<f64> = s.iter().map(|x| x * x * x).collect();
        assert_eq!(auc(&s, &l).unwrap(), auc(&cubed, &l).unwrap());
    }

    proptest! {
        #[test]
        fn roc_is_monotone_and_matches_rank_auc(
            data in proptest::collection::vec((0u8..8, any::<bool>()), 3..120)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 8.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let roc = roc_curve(&scores, &labels).unwrap();
            prop_assert_eq!(roc.points[0], (0.0, 0.0));
            prop_assert_eq!(*roc.points.last().unwrap(), (1.0, 1.0));
            for w in roc.points.windows(2) {
                prop_assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
            }
            prop_assert!((roc.auc - auc(&scores, &labels).unwrap()).abs() < 1e-9);
        }
    }

    fn result(pred: Option<f64>, actual: f64) -> ValuationResult {
        ValuationResult {
            parcel_id: "p".into(),
            province: "X".into(),
            actual_price: actual,
            covered: pred.is_some(),
            predicted_price: pred,
            contributors: pred
                .map(|p| {
                    vec![ScoredNeighbor {
                        id: "n".into(),
                        price: p,
                        score: 1.0,
                    }]
                })
                .unwrap_or_default(),
            n_candidates: 1,
            theta: 0.5,
        }
    }

    #[test]
    fn mape_cases() {
        assert_eq!(mape(&[result(Some(110.0), 100.0)]).unwrap(), 10.0);
        assert_eq!(mape(&[result(Some(100.0), 100.0)]).unwrap(), 0.0);
        let two = [
            result(Some(90.0), 100.0),
            result(Some(120.0), 100.0),
            result(None, 5.0),
        ];
        assert!((mape(&two).unwrap() - 15.0).abs() < 1e-12);
        assert!(mape(&[result(None, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn mape_scale_invariant(
            pairs in proptest::collection::vec((1.0..1e5f64, 1.0..1e5f64), 1..30),
            c in 0.01..100.0f64,
        ) {
            let a: Vec<_> = pairs.iter().map(|(p, t)| result(Some(*p), *t)).collect();
            let b: Vec<_> = pairs.iter().map(|(p, t)| result(Some(p * c), t * c)).collect();
            let (ma, mb) = (mape(&a).unwrap(), mape(&b).unwrap());
            prop_assert!((ma - mb).abs() <= 1e-9 * ma.max(1.0));
        }
    }

    #[test]
    fn coverage_cases() {
        let all: Vec<_> = (0..4).map(|_| result(Some(1.0), 1.0)).collect();
        assert_eq!(coverage_pct(&all), 100.0);
        let none: Vec<_> = (0..4).map(|_| result(None, 1.0)).collect();
        assert_eq!(coverage_pct(&none), 0.0);
        let mut mixed: Vec<_> = (0..8).map(|_| result(None, 1.0)).collect();
        mixed[1] = result(Some(1.0), 1.0);
        mixed[6] = result(Some(1.0), 1.0);
        assert_eq!(coverage_pct(&mixed), 25.0);
        mixed[0].n_candidates = 0;
        mixed[2].n_candidates = 0;
        mixed[3].n_candidates = 0;
        mixed[4].n_candidates = 0;
        assert_eq!(
            coverage_pct_with(&mixed, CoverageDenominator::WithCandidates),
            50.0
        );
    }

    #[test]
    fn grid_endpoints() {
        let g = theta_grid(101);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[50], 0.5);
        assert_eq!(g[100], 1.0);
    }

    #[test]
    fn curve_queries() {
        let curve = CoverageMapeCurve {
            points: vec![
                CurvePoint {
                    theta: 0.0,
                    coverage_pct: 90.0,
                    mape_pct: Some(30.0),
                },
                CurvePoint {
                    theta: 0.5,
                    coverage_pct: 60.0,
                    mape_pct: Some(18.0),
                },
                CurvePoint {
                    theta: 0.7,
                    coverage_pct: 40.0,
                    mape_pct: Some(12.0),
                },
                CurvePoint {
                    theta: 1.0,
                    coverage_pct: 0.0,
                    mape_pct: None,
                },
            ],
        };
        assert_eq!(curve.coverage_at_mape(20.0), Some(60.0));
        assert_eq!(curve.coverage_at_mape(5.0), None);
        assert_eq!(curve.mape_at_coverage(50.0), Some(18.0));
    }
}

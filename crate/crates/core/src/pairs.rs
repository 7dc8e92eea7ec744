//! Labeled (primary, neighbor) pairs with differenced feature vectors, and
//! importance-based feature selection.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LandParcel, Split, SplitAssignment};
use crate::geo::{haversine_km, SpatialIndex};
use crate::imagery::{ColorStats, TileKind};
use crate::trees::{fit_ensemble, EnsembleKind, ForestConfig, Matrix};
use crate::{par_map, Error, Result};

pub const IMG_MISSING: &str = "img_missing";
pub const DISTANCE: &str = "pair_distance_km";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    ContDiff,
    CatSame,
    ColorDiff,
    Distance,
}

/// Names and kinds of every pair feature, plus the subset selected for modeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub continuous_attrs: Vec<String>,
    pub categorical_attrs: Vec<String>,
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    pub mask: Vec<bool>,
}

impl FeatureSchema {
    /// Layout: continuous |diffs|, categorical same-flags, color diffs per tile
    /// kind plus the missing-image sentinel, then distance. All selected.
    pub fn for_dataset(ds: &Dataset) -> Self {
        let schema = ds.schema();
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        for c in &schema.continuous {
            names.push(format!("d_{c}"));
            kinds.push(FeatureKind::ContDiff);
        }
        for c in schema.categorical_names() {
            names.push(format!("same_{c}"));
            kinds.push(FeatureKind::CatSame);
        }
        for kind in TileKind::ALL {
            for stat in ["greenness", "blueness", "darkness"] {
                names.push(format!("{}_d{stat}", kind.as_str()));
                kinds.push(FeatureKind::ColorDiff);
            }
        }
        names.push(IMG_MISSING.to_string());
        kinds.push(FeatureKind::ColorDiff);
        names.push(DISTANCE.to_string());
        kinds.push(FeatureKind::Distance);
        let mask = vec![true; names.len()];
        Self {
            continuous_attrs: schema.continuous.clone(),
            categorical_attrs: schema.categorical_names().map(str::to_string).collect(),
            names,
            kinds,
            mask,
        }
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn n_selected(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn selected_names(&self) -> Vec<&str> {
        self.names
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    /// The selection with every feature of `kind` dropped.
    pub fn mask_without(&self, kind: FeatureKind) -> Vec<bool> {
        self.mask
            .iter()
            .zip(&self.kinds)
            .map(|(&m, &k)| m && k != kind)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Per-parcel color statistics for each tile kind, `None` where the tile is missing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageStats {
    pub satellite: Option<ColorStats>,
    pub segmented: Option<ColorStats>,
}

impl ImageStats {
    pub fn get(&self, kind: TileKind) -> Option<&ColorStats> {
        match kind {
            TileKind::Satellite => self.satellite.as_ref(),
            TileKind::Segmented => self.segmented.as_ref(),
        }
    }
}

pub type ImageTable = HashMap<String, ImageStats>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub primary_id: String,
    pub neighbor_id: String,
    pub distance_km: f64,
    pub label: bool,
    pub split: Split,
    /// Full feature vector in [`FeatureSchema`] order (the selection mask is applied later).
    pub features: Vec<f64>,
}

impl PairRecord {
    pub fn masked(&self, mask: &[bool]) -> Vec<f64> {
        self.features
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub radius_km: f64,
    /// Relative price tolerance for a similar pair.
    pub tau: f64,
    pub max_neighbors: usize,
    pub denominator: LabelDenominator,
}

/// Price the difference is divided by when labeling a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDenominator {
    /// The primary parcel's price.
    #[default]
    Primary,
    /// The lower of the two prices, which makes the label symmetric.
    Min,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            radius_km: 3.0,
            tau: 0.2,
            max_neighbors: 30,
            denominator: LabelDenominator::Primary,
        }
    }
}

/// Similar when the neighbor's price is within `tau` of the primary's, relative to the primary.
pub fn label_pair(p: &LandParcel, q: &LandParcel, tau: f64) -> bool {
    debug_assert!(tau > 0.0);
    (p.price - q.price).abs() / p.price <= tau
}

pub fn label_pair_with(
    p: &LandParcel,
    q: &LandParcel,
    tau: f64,
    denominator: LabelDenominator,
) -> bool {
    match denominator {
        LabelDenominator::Primary => label_pair(p, q, tau),
        LabelDenominator::Min => (p.price - q.price).abs() / p.price.min(q.price) <= tau,
    }
}

pub fn diff_features(
    p: &LandParcel,
    q: &LandParcel,
    p_img: &ImageStats,
    q_img: &ImageStats,
    schema: &FeatureSchema,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(schema.width());
    for name in &schema.continuous_attrs {
        match (p.continuous.get(name), q.continuous.get(name)) {
            (Some(a), Some(b)) => out.push((a - b).abs()),
            _ => return Err(missing_attr(p, q, name)),
        }
    }
    for name in &schema.categorical_attrs {
        match (p.categorical.get(name), q.categorical.get(name)) {
            (Some(a), Some(b)) => out.push(if a == b { 1.0 } else { 0.0 }),
            _ => return Err(missing_attr(p, q, name)),
        }
    }
    let mut missing = false;
    for kind in TileKind::ALL {
        match (p_img.get(kind), q_img.get(kind)) {
            (Some(a), Some(b)) => out.extend(a.abs_diff(b)),
            _ => {
                missing = true;
                out.extend([0.0; 3]);
            }
        }
    }
    out.push(if missing { 1.0 } else { 0.0 });
    out.push(haversine_km(p.location(), q.location()));
    debug_assert_eq!(out.len(), schema.width());
    Ok(out)
}

fn missing_attr(p: &LandParcel, q: &LandParcel, name: &str) -> Error {
    Error::invalid(format!(
        "attribute {name:?} missing on parcel {} or {}",
        p.id, q.id
    ))
}

/// One record per (primary, train-split neighbor) within the radius, nearest first
/// and capped at `max_neighbors`. Neighbors always come from the train split, so
/// held-out appraisals never inform another parcel. Output is ordered by
/// primary id, then distance.
pub fn build_pairs(
    idx: &SpatialIndex<'_>,
    split: &SplitAssignment,
    images: &ImageTable,
    schema: &FeatureSchema,
    cfg: &PairConfig,
) -> Result<Vec<PairRecord>> {
    let ds = idx.dataset();
    let mut order: Vec<&LandParcel> = ds.parcels().iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let empty = ImageStats::default();
    let per_primary = par_map(order.len(), |i| -> Result<Vec<PairRecord>> {
        let p = order[i];
        let Some(p_split) = split.get(&p.id) else {
            return Ok(Vec::new());
        };
        let p_img = images.get(&p.id).unwrap_or(&empty);
        idx.neighbors_within(p, cfg.radius_km)
            .into_iter()
            .filter(|(id, _)| split.get(id) == Some(Split::Train))
            .take(cfg.max_neighbors)
            .map(|(id, distance_km)| {
                let q = ds.get(id).expect("neighbor from index");
                let q_img = images.get(id).unwrap_or(&empty);
                Ok(PairRecord {
                    primary_id: p.id.clone(),
                    neighbor_id: q.id.clone(),
                    distance_km,
                    label: label_pair_with(p, q, cfg.tau, cfg.denominator),
                    split: p_split,
                    features: diff_features(p, q, p_img, q_img, schema)?,
                })
            })
            .collect()
    });
    let mut out = Vec::new();
    for chunk in per_primary {
        out.extend(chunk?);
    }
    Ok(out)
}

pub fn pairs_matrix(pairs: &[&PairRecord], mask: &[bool]) -> Matrix {
    let width = mask.iter().filter(|&&m| m).count();
    let mut data = Vec::with_capacity(pairs.len() * width);
    for p in pairs {
        data.extend(
            p.features
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v),
        );
    }
    Matrix::new(data, pairs.len(), width).expect("sized from mask")
}

/// Keeps the `n_keep` features with the highest importance averaged over a
/// Random Forest and an Extra Trees model fit on all features.
pub fn select_features(
    train: &[&PairRecord],
    schema: &FeatureSchema,
    n_keep: usize,
    forest: &ForestConfig,
) -> Result<FeatureSchema> {
    let labels: Vec<bool> = train.iter().map(|p| p.label).collect();
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::invalid(
            "feature selection needs both classes in the training pairs",
        ));
    }
    let mut out = schema.clone();
    if n_keep >= schema.width() {
        out.mask = vec![true; schema.width()];
        return Ok(out);
    }
    let all = vec![true; schema.width()];
    let x = pairs_matrix(train, &all);
    let rf = fit_ensemble(EnsembleKind::RandomForest, &x, &labels, forest)?;
    let et = fit_ensemble(EnsembleKind::ExtraTrees, &x, &labels, forest)?;
    let score: Vec<f64> = rf
        .importances()
        .iter()
        .zip(et.importances())
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    out.mask = vec![false; schema.width()];
    for &i in order.iter().take(n_keep) {
        out.mask[i] = true;
    }
    Ok(out)
}

pub fn write_pairs<W: Write>(
    pairs: &[PairRecord],
    schema: &FeatureSchema,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "primary_id".to_string(),
        "neighbor_id".into(),
        "distance_km".into(),
        "label".into(),
        "split".into(),
    ];
    header.extend(schema.names.iter().cloned());
    w.write_record(&header)?;
    for p in pairs {
        let mut rec = vec![
            p.primary_id.clone(),
            p.neighbor_id.clone(),
            p.distance_km.to_string(),
            (p.label as u8).to_string(),
            p.split.to_string(),
        ];
        rec.extend(p.features.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a pair CSV; returns the records and the feature column names.
pub fn read_pairs<R: Read>(reader: R) -> Result<(Vec<PairRecord>, Vec<String>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<String> = header.iter().skip(5).map(str::to_string).collect();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::Parse {
            path: "pairs".into(),
            line: row + 2,
            message: m,
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(format!("bad number {s:?}")))
        };
        out.push(PairRecord {
            primary_id: rec[0].to_string(),
            neighbor_id: rec[1].to_string(),
            distance_km: num(&rec[2])?,
            label: match &rec[3] {
                "1" => true,
                "0" => false,
                other => return Err(bad(format!("bad label {other:?}"))),
            },
            split: rec[4].parse()?,
            features: rec.iter().skip(5).map(num).collect::<Result<_>>()?,
        });
    }
    Ok((out, names))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::data::SplitAssignment;

    fn parcel(id: &str, lat: f64, lon: f64, price: f64, road: f64, land_use: &str) -> LandParcel {
        LandParcel {
            id: id.into(),
            lat,
            lon,
            price,
            appraisal_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            province: "X".into(),
            continuous: BTreeMap::from([
                ("road_width_m".into(), road),
                ("area_sq_wa".into(), 100.0),
            ]),
            categorical: BTreeMap::from([("land_use".into(), land_use.to_string())]),
        }
    }

    fn stats(g: f64, b: f64, d: f64) -> ImageStats {
        let s = ColorStats {
            greenness: g,
            blueness: b,
            darkness: d,
        };
        ImageStats {
            satellite: Some(s),
            segmented: Some(s),
        }
    }

    #[test]
    fn labels() {
        let p = parcel("p", 0.0, 0.0, 100.0, 1.0, "a");
        assert!(label_pair(&p, &parcel("q", 0.0, 0.0, 115.0, 1.0, "a"), 0.2));
        assert!(!label_pair(
            &p,
            &parcel("q", 0.0, 0.0, 130.0, 1.0, "a"),
            0.2
        ));
        for tau in [1e-9, 0.01, 0.5] {
            assert!(label_pair(&p, &parcel("q", 0.0, 0.0, 100.0, 1.0, "a"), tau));
        }
    }

    #[test]
    fn identical_parcels_have_trivial_features() {
        let p = parcel("p", 13.0, 100.0, 100.0, 5.0, "res");
        let ds = Dataset::from_parcels(vec![p.clone()]).unwrap();
        let schema = FeatureSchema::for_dataset(&ds);
        let img = stats(0.2, -0.1, 0.4);
        let f = diff_features(&p, &p, &img, &img, &schema).unwrap();
        for (v, k) in f.iter().zip(&schema.kinds) {
            match k {
                FeatureKind::CatSame => assert_eq!(*v, 1.0),
                _ => assert_eq!(*v, 0.0),
            }
        }
    }

    #[test]
    fn road_width_difference() {
        let p = parcel("p", 13.0, 100.0, 100.0, 5.0, "res");
        let q = parcel("q", 13.0, 100.0, 100.0, 3.5, "com");
        let ds = Dataset::from_parcels(vec![p.clone(), q.clone()]).unwrap();
        let schema = FeatureSchema::for_dataset(&ds);
        let f = diff_features(
            &p,
            &q,
            &ImageStats::default(),
            &ImageStats::default(),
            &schema,
        )
        .unwrap();
        let at = |n: &str| f[schema.names.iter().position(|x| x == n).unwrap()];
        assert_eq!(at("d_road_width_m"), 1.5);
        assert_eq!(at("same_land_use"), 0.0);
        assert_eq!(at(IMG_MISSING), 1.0);
        assert_eq!(at("satellite_dgreenness"), 0.0);
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let p = parcel("p", 13.0, 100.0, 100.0, 5.0, "res");
        let ds = Dataset::from_parcels(vec![p.clone()]).unwrap();
        let schema = FeatureSchema::for_dataset(&ds);
        let mut q = p.clone();
        q.continuous.remove("road_width_m");
        assert!(diff_features(
            &p,
            &q,
            &ImageStats::default(),
            &ImageStats::default(),
            &schema
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn diff_features_symmetric(
            a in (-60.0..60.0f64, -170.0..170.0f64, 1.0..1e5f64, 0.0..30.0f64, 0usize..3),
            b in (-60.0..60.0f64, -170.0..170.0f64, 1.0..1e5f64, 0.0..30.0f64, 0usize..3),
            ga in -1.0..1.0f64, gb in -1.0..1.0f64,
        ) {
            let uses = ["a", "b", "c"];
            let p = parcel("p", a.0, a.1, a.2, a.3, uses[a.4]);
            let q = parcel("q", b.0, b.1, b.2, b.3, uses[b.4]);
            let ds = Dataset::from_parcels(vec![p.clone(), q.clone()]).unwrap();
            let schema = FeatureSchema::for_dataset(&ds);
            let (ia, ib) = (stats(ga, 0.1, 0.5), stats(gb, -0.2, 0.3));
            let f1 = diff_features(&p, &q, &ia, &ib, &schema).unwrap();
            let f2 = diff_features(&q, &p, &ib, &ia, &schema).unwrap();
            prop_assert_eq!(&f1, &f2);
            prop_assert!(f1.iter().all(|v| v.is_finite()));
        }

        #[test]
        fn orientations_agree_within_min_relative_tolerance(
            pa in 1.0..1e5f64, pb in 1.0..1e5f64, tau in 0.01..1.0f64,
        ) {
            let p = parcel("p", 0.0, 0.0, pa, 1.0, "a");
            let q = parcel("q", 0.0, 0.0, pb, 1.0, "a");
            if (pa - pb).abs() / pa.min(pb) <= tau {
                prop_assert!(label_pair(&p, &q, tau) && label_pair(&q, &p, tau));
            }
        }

        #[test]
        fn min_denominator_is_symmetric_and_stricter(
            pa in 1.0..1e5f64, pb in 1.0..1e5f64, tau in 0.01..1.0f64,
        ) {
            let p = parcel("p", 0.0, 0.0, pa, 1.0, "a");
            let q = parcel("q", 0.0, 0.0, pb, 1.0, "a");
            let m = label_pair_with(&p, &q, tau, LabelDenominator::Min);
            prop_assert_eq!(m, label_pair_with(&q, &p, tau, LabelDenominator::Min));
            prop_assert!(!m || label_pair(&p, &q, tau));
            prop_assert_eq!(label_pair_with(&p, &q, tau, LabelDenominator::Primary), label_pair(&p, &q, tau));
        }
    }

    fn all_train(ds: &Dataset) -> SplitAssignment {
        ds.parcels()
            .iter()
            .map(|p| (p.id.clone(), Split::Train))
            .collect()
    }

    #[test]
    fn isolated_parcel_and_two_near_parcels() {
        // a and b are 1 km apart; c is far away.
        let a = parcel("a", 13.0, 100.0, 100.0, 4.0, "r");
        let b = parcel(
            "b",
            13.0 + 1.0 / crate::geo::KM_PER_DEGREE,
            100.0,
            130.0,
            4.0,
            "r",
        );
        let c = parcel("c", 14.0, 101.0, 100.0, 4.0, "r");
        let ds = Dataset::from_parcels(vec![a, b, c]).unwrap();
        let idx = SpatialIndex::build(&ds, 3.0);
        let schema = FeatureSchema::for_dataset(&ds);
        let pairs = build_pairs(
            &idx,
            &all_train(&ds),
            &ImageTable::new(),
            &schema,
            &PairConfig::default(),
        )
        .unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(
            (pairs[0].primary_id.as_str(), pairs[0].neighbor_id.as_str()),
            ("a", "b")
        );
        assert_eq!(
            (pairs[1].primary_id.as_str(), pairs[1].neighbor_id.as_str()),
            ("b", "a")
        );
        // |100 - 130| / 100 = 0.3 > 0.2, but |130 - 100| / 130 ≈ 0.23 > 0.2 too.
        assert!(!pairs[0].label && !pairs[1].label);
        assert!((pairs[0].distance_km - 1.0).abs() < 1e-9);
        assert!(pairs.iter().all(|p| p.primary_id != "c"));
    }

    #[test]
    fn asymmetric_labels_possible() {
        let a = parcel("a", 13.0, 100.0, 100.0, 4.0, "r");
        let b = parcel("b", 13.001, 100.0, 123.0, 4.0, "r");
        let ds = Dataset::from_parcels(vec![a, b]).unwrap();
        let idx = SpatialIndex::build(&ds, 3.0);
        let schema = FeatureSchema::for_dataset(&ds);
        let pairs = build_pairs(
            &idx,
            &all_train(&ds),
            &ImageTable::new(),
            &schema,
            &PairConfig::default(),
        )
        .unwrap();
        // 23/100 > 0.2 from a, 23/123 < 0.2 from b.
        assert!(!pairs[0].label);
        assert!(pairs[1].label);
    }

    fn random_ds(n: usize, seed: u64) -> Dataset {
        let mut rng = crate::seeded_rng(seed);
        let parcels = (0..n)
            .map(|i| {
                parcel(
                    &format!("p{i:03}"),
                    13.0 + rng.random_range(0.0..0.05),
                    100.0 + rng.random_range(0.0..0.05),
                    rng.random_range(50.0..150.0),
                    rng.random_range(0.0..10.0),
                    ["a", "b"][rng.random_range(0..2)],
                )
            })
            .collect();
        Dataset::from_parcels(parcels).unwrap()
    }

    #[test]
    fn cap_radius_and_leakage_rules() {
        let ds = random_ds(120, 3);
        let split = crate::data::temporal_split(&ds, Default::default(), 1).unwrap();
        let idx = SpatialIndex::build(&ds, 3.0);
        let schema = FeatureSchema::for_dataset(&ds);
        let cfg = PairConfig {
            max_neighbors: 7,
            ..Default::default()
        };
        let pairs = build_pairs(&idx, &split, &ImageTable::new(), &schema, &cfg).unwrap();
        assert!(pairs.len() <= ds.len() * 7);
        for p in &pairs {
            assert!(p.distance_km <= 3.0);
            assert_eq!(split.get(&p.neighbor_id), Some(Split::Train));
            assert_eq!(split.get(&p.primary_id), Some(p.split));
            assert!(p.features.iter().all(|v| v.is_finite()));
        }
        for w in pairs.windows(2) {
            let ordered = (w[0].primary_id.as_str(), w[0].distance_km)
                <= (w[1].primary_id.as_str(), w[1].distance_km);
            assert!(ordered);
        }
    }

    #[test]
    fn pair_csv_round_trip() {
        let ds = random_ds(30, 4);
        let idx = SpatialIndex::build(&ds, 3.0);
        let schema = FeatureSchema::for_dataset(&ds);
        let pairs = build_pairs(
            &idx,
            &all_train(&ds),
            &ImageTable::new(),
            &schema,
            &PairConfig::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_pairs(&pairs, &schema, &mut buf).unwrap();
        let (back, names) = read_pairs(buf.as_slice()).unwrap();
        assert_eq!(back, pairs);
        assert_eq!(names, schema.names);
    }

    fn selection_fixture(seed: u64) -> (Vec<PairRecord>, FeatureSchema) {
        let ds = random_ds(10, 1);
        let schema = FeatureSchema::for_dataset(&ds);
        let mut rng = crate::seeded_rng(seed);
        let copy_at = schema
            .names
            .iter()
            .position(|n| n == "d_road_width_m")
            .unwrap();
        let pairs = (0..400)
            .map(|i| {
                let label = rng.random::<bool>();
                let mut features: Vec<f64> = (0..schema.width()).map(|_| rng.random()).collect();
                features[copy_at] = label as u8 as f64;
                PairRecord {
                    primary_id: format!("p{i}"),
                    neighbor_id: "n".into(),
                    distance_km: 1.0,
                    label,
                    split: Split::Train,
                    features,
                }
            })
            .collect();
        (pairs, schema)
    }

    #[test]
    fn selection_keeps_label_copy() {
        let (pairs, schema) = selection_fixture(5);
        let refs: Vec<&PairRecord> = pairs.iter().collect();
        let forest = ForestConfig {
            n_trees: 20,
            seed: 1,
            ..Default::default()
        };
        let sel = select_features(&refs, &schema, 1, &forest).unwrap();
        assert_eq!(sel.selected_names(), vec!["d_road_width_m"]);
        assert_eq!(select_features(&refs, &schema, 1, &forest).unwrap(), sel);
        let full = select_features(&refs, &schema, schema.width(), &forest).unwrap();
        assert!(full.mask.iter().all(|&m| m));
    }

    #[test]
    fn selection_rejects_single_class() {
        let (mut pairs, schema) = selection_fixture(6);
        pairs.iter_mut().for_each(|p| p.label = true);
        let refs: Vec<&PairRecord> = pairs.iter().collect();
        assert!(select_features(&refs, &schema, 3, &ForestConfig::default()).is_err());
    }
}

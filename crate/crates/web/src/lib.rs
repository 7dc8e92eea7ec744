//! Browser bindings: a seeded synthetic world that can be drawn as a scatter
//! map, its tiles viewed with and without augmentation, and an Extra Trees
//! similarity model fit in the page to trace the coverage/MAPE curve.

use landval_core::data::{temporal_split, Split, SplitAssignment, SplitRatios};
use landval_core::imagery::{augment, color_stats, AugmentConfig, Tile, TileKind};
use landval_core::metrics::{
    auc, coverage_mape_curve, theta_grid, CoverageDenominator, CurvePoint,
};
use landval_core::pairs::{
    build_pairs, pairs_matrix, FeatureKind, FeatureSchema, ImageStats, ImageTable, PairConfig,
};
use landval_core::synth::{generate_world, World, WorldConfig};
use landval_core::trees::{fit_ensemble, EnsembleKind, ForestConfig, Matrix};
use landval_core::valuation::{Candidates, ScoredPair};
use landval_core::{derive_seed, geo::SpatialIndex, Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct ParcelPoint {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub price: f64,
    pub province: String,
    pub split: String,
}

#[derive(Debug, Serialize)]
pub struct CurveReport {
    pub n_pairs: usize,
    pub n_train_pairs: usize,
    pub test_auc: Option<f64>,
    pub points: Vec<CurvePoint>,
}

#[wasm_bindgen]
pub struct Demo {
    world: World,
    split: SplitAssignment,
    seed: u64,
}

impl Demo {
    pub fn create(seed: u64, n_parcels: usize) -> Result<Self> {
        let cfg = WorldConfig {
            n_parcels,
            seed: derive_seed(seed, 1),
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg)?;
        let split = temporal_split(&world.dataset, SplitRatios::default(), derive_seed(seed, 2))?;
        Ok(Self { world, split, seed })
    }

    pub fn parcels(&self) -> Vec<ParcelPoint> {
        self.world
            .dataset
            .parcels()
            .iter()
            .map(|p| ParcelPoint {
                id: p.id.clone(),
                lat: p.lat,
                lon: p.lon,
                price: p.price,
                province: p.province.clone(),
                split: self
                    .split
                    .get(&p.id)
                    .map_or(String::new(), |s| s.to_string()),
            })
            .collect()
    }

    fn tile(&self, index: usize, kind: &str) -> Result<&Tile> {
        let kind: TileKind = kind.parse()?;
        let tiles = match kind {
            TileKind::Satellite => &self.world.satellite,
            TileKind::Segmented => &self.world.segmented,
        };
        tiles
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("parcel index {index} out of range")))
    }

    /// RGBA pixels of one tile, augmented with the default settings when a seed is given.
    pub fn tile_pixels(
        &self,
        index: usize,
        kind: &str,
        augment_seed: Option<u64>,
    ) -> Result<Vec<u8>> {
        let tile = self.tile(index, kind)?;
        let shown = match augment_seed {
            Some(s) => augment(tile, &AugmentConfig::default(), s)?,
            None => tile.clone(),
        };
        Ok(shown
            .pixels()
            .chunks_exact(3)
            .flat_map(|px| [px[0], px[1], px[2], 255])
            .collect())
    }

    /// Fits Extra Trees on training pairs, scores every pair, and sweeps the
    /// valuation threshold over the test parcels.
    pub fn curve(
        &self,
        n_trees: usize,
        tau: f64,
        use_images: bool,
        theta_points: usize,
    ) -> Result<CurveReport> {
        let ds = &self.world.dataset;
        let images: ImageTable = ds
            .parcels()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let stats = ImageStats {
                    satellite: Some(color_stats(&self.world.satellite[i])),
                    segmented: Some(color_stats(&self.world.segmented[i])),
                };
                (p.id.clone(), stats)
            })
            .collect();
        let schema = FeatureSchema::for_dataset(ds);
        let cfg = PairConfig {
            tau,
            ..PairConfig::default()
        };
        let idx = SpatialIndex::build(ds, cfg.radius_km);
        let pairs = build_pairs(&idx, &self.split, &images, &schema, &cfg)?;
        let refs: Vec<_> = pairs.iter().collect();
        let mask = if use_images {
            schema.mask.clone()
        } else {
            schema.mask_without(FeatureKind::ColorDiff)
        };
        let x = pairs_matrix(&refs, &mask);
        let train: Vec<usize> = (0..pairs.len())
            .filter(|&i| pairs[i].split == Split::Train)
            .collect();
        let x_train = Matrix::from_rows(&train.iter().map(|&i| x.row(i)).collect::<Vec<_>>())?;
        let y: Vec<bool> = train.iter().map(|&i| pairs[i].label).collect();
        let forest = ForestConfig {
            n_trees,
            seed: derive_seed(self.seed, 4),
            ..ForestConfig::default()
        };
        let model = fit_ensemble(EnsembleKind::ExtraTrees, &x_train, &y, &forest)?;
        let scores = model.predict_matrix(&x)?;

        let test: Vec<usize> = (0..pairs.len())
            .filter(|&i| pairs[i].split == Split::Test)
            .collect();
        let test_auc = auc(
            &test.iter().map(|&i| scores[i]).collect::<Vec<_>>(),
            &test.iter().map(|&i| pairs[i].label).collect::<Vec<_>>(),
        )
        .ok();
        let scored: Vec<ScoredPair> = pairs
            .iter()
            .zip(&scores)
            .map(|(p, &score)| ScoredPair {
                primary_id: p.primary_id.clone(),
                neighbor_id: p.neighbor_id.clone(),
                score,
            })
            .collect();
        let cands = Candidates::new(ds, &self.split, &scored, &[Split::Test])?;
        let curve = coverage_mape_curve(
            &cands,
            &theta_grid(theta_points),
            CoverageDenominator::Evaluated,
        )?;
        Ok(CurveReport {
            n_pairs: pairs.len(),
            n_train_pairs: train.len(),
            test_auc,
            points: curve.points,
        })
    }
}

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n_parcels: usize) -> std::result::Result<Demo, JsError> {
        Self::create(seed.into(), n_parcels).map_err(js)
    }

    #[wasm_bindgen(js_name = parcelCount)]
    pub fn parcel_count(&self) -> usize {
        self.world.dataset.len()
    }

    #[wasm_bindgen(js_name = tileSide)]
    pub fn tile_side(&self) -> usize {
        self.world.config.tile_side
    }

    /// JSON array of `{id, lat, lon, price, province, split}`.
    #[wasm_bindgen(js_name = parcelsJson)]
    pub fn parcels_json(&self) -> std::result::Result<String, JsError> {
        serde_json::to_string(&self.parcels()).map_err(js)
    }

    /// `kind` is "satellite" or "segmented".
    #[wasm_bindgen(js_name = tileRgba)]
    pub fn tile_rgba(
        &self,
        index: usize,
        kind: &str,
        augment_seed: Option<u32>,
    ) -> std::result::Result<Vec<u8>, JsError> {
        self.tile_pixels(index, kind, augment_seed.map(u64::from))
            .map_err(js)
    }

    /// JSON `{n_pairs, n_train_pairs, test_auc, points: [{theta, coverage_pct, mape_pct}]}`.
    #[wasm_bindgen(js_name = coverageCurve)]
    pub fn coverage_curve(
        &self,
        n_trees: usize,
        tau: f64,
        use_images: bool,
        theta_points: usize,
    ) -> std::result::Result<String, JsError> {
        let report = self
            .curve(n_trees, tau, use_images, theta_points)
            .map_err(js)?;
        serde_json::to_string(&report).map_err(js)
    }
}

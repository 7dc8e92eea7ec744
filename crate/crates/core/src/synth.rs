//! Seeded synthetic worlds: parcels clustered in provinces, log-normal prices
//! over a smooth spatial field, and procedural tiles whose colors track the
//! visible part of each parcel's value.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{save_parcels, Dataset, LandParcel};
use crate::geo::KM_PER_DEGREE;
use crate::imagery::{Tile, TileKind, TileStore};
use crate::{derive_seed, par_map, Error, Result};

pub const CONTINUOUS: [&str; 3] = ["area_sq_wa", "road_width_m", "dist_main_road_km"];
pub const CATEGORICAL: [&str; 3] = ["land_use", "shape", "title_deed"];
const LAND_USES: [(&str, f64); 4] = [
    ("agricultural", -0.45),
    ("commercial", 0.35),
    ("industrial", -0.1),
    ("residential", 0.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvinceSpec {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub radius_km: f64,
    /// Relative share of parcels.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_parcels: usize,
    pub provinces: Vec<ProvinceSpec>,
    /// Median price in THB per square wa.
    pub base_price: f64,
    pub correlation_length_km: f64,
    /// Standard deviation of each radial bump's log-price amplitude.
    pub field_amplitude: f64,
    /// Bumps per unit of (province radius / correlation length)².
    pub bump_density: f64,
    /// Small clusters of parcels, spread over provinces by weight. Each carries
    /// its own narrow log-price bump that tiles do not show.
    pub neighborhoods: usize,
    pub neighborhood_radius_km: f64,
    /// Standard deviation of each neighborhood's log-price bump.
    pub neighborhood_amplitude: f64,
    /// Share of parcels placed inside a neighborhood; the rest are scattered.
    pub clustered_share: f64,
    /// Probability that a clustered parcel takes its neighborhood's land use.
    pub land_use_coherence: f64,
    /// Multiplier on the log-price effects of the continuous attributes.
    pub continuous_effect: f64,
    /// Std of the per-parcel log-price component visible in imagery but absent from the tabular attributes.
    pub quality_sigma: f64,
    /// Target mean |observed − truth| / truth.
    pub noise_level: f64,
    pub tile_side: usize,
    /// How strongly tile color tracks the visible log-price (0 = unrelated).
    pub tile_coupling: f64,
    /// Std of the per-tile perturbation of the vegetated fraction, in logit units.
    pub tile_noise: f64,
    pub date_start: NaiveDate,
    pub date_span_days: u32,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let provinces = [
            ("prov_a", 13.75, 100.50, 11.0, 0.26),
            ("prov_b", 13.36, 100.98, 9.0, 0.18),
            ("prov_c", 14.02, 100.25, 8.0, 0.15),
            ("prov_d", 18.79, 98.98, 8.0, 0.13),
            ("prov_e", 12.93, 100.88, 7.0, 0.11),
            ("prov_f", 7.88, 98.39, 6.0, 0.09),
            ("prov_g", 16.43, 102.83, 6.0, 0.08),
        ]
        .into_iter()
        .map(|(name, lat, lon, radius_km, weight)| ProvinceSpec {
            name: name.into(),
            lat,
            lon,
            radius_km,
            weight,
        })
        .collect();
        Self {
            n_parcels: 2000,
            provinces,
            base_price: 30_000.0,
            correlation_length_km: 2.5,
            field_amplitude: 0.35,
            bump_density: 1.5,
            neighborhoods: 150,
            neighborhood_radius_km: 0.5,
            neighborhood_amplitude: 0.4,
            clustered_share: 0.85,
            land_use_coherence: 0.8,
            continuous_effect: 0.5,
            quality_sigma: 0.2,
            noise_level: 0.05,
            tile_side: 64,
            tile_coupling: 1.0,
            tile_noise: 0.05,
            date_start: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            date_span_days: 3 * 365,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.correlation_length_km > 0.0) {
            return bad("correlation_length_km must be positive");
        }
        if !(self.base_price > 0.0 && self.base_price.is_finite()) {
            return bad("base_price must be positive");
        }
        if self.provinces.is_empty() {
            return bad("at least one province is required");
        }
        if self
            .provinces
            .iter()
            .any(|p| !(p.radius_km > 0.0 && p.weight > 0.0 && p.lat.abs() < 80.0))
        {
            return bad("provinces need positive radius and weight and |lat| < 80");
        }
        if !(self.neighborhood_radius_km > 0.0)
            || !(0.0..=1.0).contains(&self.clustered_share)
            || !(0.0..=1.0).contains(&self.land_use_coherence)
        {
            return bad("neighborhood_radius_km must be positive; clustered_share and land_use_coherence in [0, 1]");
        }
        let magnitudes = [
            self.neighborhood_amplitude,
            self.field_amplitude,
            self.quality_sigma,
            self.noise_level,
            self.tile_noise,
            self.continuous_effect,
        ];
        if magnitudes.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("amplitudes and noise levels must be non-negative");
        }
        if !crate::imagery::TILE_SIDES.contains(&self.tile_side) {
            return bad("tile_side must be one of 64, 128, 256, 512");
        }
        Ok(())
    }

    fn log_noise_sigma(&self) -> f64 {
        // E|ε| = σ·sqrt(2/π) for ε ~ N(0, σ²), and |e^ε − 1| ≈ |ε| for small ε.
        self.noise_level * (std::f64::consts::PI / 2.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Neighborhood {
    province: usize,
    bump: Bump,
    land_use: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Bump {
    lat: f64,
    lon: f64,
    amplitude: f64,
}

/// Log-price field over locations: broad Gaussian bumps with the correlation
/// length as width, plus one narrow bump per neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceField {
    bumps: Vec<Bump>,
    length_km: f64,
    /// Centers double as cluster centers for parcel placement.
    neighborhoods: Vec<Neighborhood>,
    neighborhood_km: f64,
}

fn bump_sum(bumps: impl Iterator<Item = Bump>, lat: f64, lon: f64, length_km: f64) -> f64 {
    let two_l2 = 2.0 * length_km * length_km;
    bumps
        .map(|b| {
            let d = crate::geo::haversine_km((lat, lon), (b.lat, b.lon));
            b.amplitude * (-d * d / two_l2).exp()
        })
        .sum()
}

impl PriceField {
    pub fn new(cfg: &WorldConfig) -> Self {
        let mut rng = crate::seeded_rng(derive_seed(cfg.seed, 0xF1E1D));
        let mut bumps = Vec::new();
        for p in &cfg.provinces {
            let ratio = (p.radius_km + cfg.correlation_length_km) / cfg.correlation_length_km;
            let n = (cfg.bump_density * ratio * ratio).ceil() as usize;
            for _ in 0..n {
                let (lat, lon) = disc_point(
                    &mut rng,
                    p.lat,
                    p.lon,
                    p.radius_km + cfg.correlation_length_km,
                );
                let z: f64 = StandardNormal.sample(&mut rng);
                bumps.push(Bump {
                    lat,
                    lon,
                    amplitude: cfg.field_amplitude * z,
                });
            }
        }
        let mut neighborhoods = Vec::with_capacity(cfg.neighborhoods);
        for k in 0..cfg.neighborhoods {
            let u = (k as f64 + 0.5) / cfg.neighborhoods as f64;
            let prov = province_index(cfg, u);
            let p = &cfg.provinces[prov];
            let (lat, lon) = disc_point(&mut rng, p.lat, p.lon, p.radius_km);
            let z: f64 = StandardNormal.sample(&mut rng);
            neighborhoods.push(Neighborhood {
                province: prov,
                bump: Bump {
                    lat,
                    lon,
                    amplitude: cfg.neighborhood_amplitude * z,
                },
                land_use: rng.random_range(0..LAND_USES.len()),
            });
        }
        Self {
            bumps,
            length_km: cfg.correlation_length_km,
            neighborhoods,
            neighborhood_km: cfg.neighborhood_radius_km,
        }
    }

    /// The broad component only; this is what imagery reflects.
    pub fn regional(&self, lat: f64, lon: f64) -> f64 {
        bump_sum(self.bumps.iter().copied(), lat, lon, self.length_km)
    }

    pub fn local(&self, lat: f64, lon: f64) -> f64 {
        bump_sum(
            self.neighborhoods.iter().map(|n| n.bump),
            lat,
            lon,
            self.neighborhood_km,
        )
    }

    pub fn at(&self, lat: f64, lon: f64) -> f64 {
        self.regional(lat, lon) + self.local(lat, lon)
    }
}

fn disc_point<R: Rng>(rng: &mut R, lat: f64, lon: f64, radius_km: f64) -> (f64, f64) {
    let r = radius_km * rng.random::<f64>().sqrt();
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let dlat = r * a.sin() / KM_PER_DEGREE;
    let dlon = r * a.cos() / (KM_PER_DEGREE * lat.to_radians().cos());
    (lat + dlat, lon + dlon)
}

/// FNV-1a, so per-parcel latent draws depend only on the id.
fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn parcel_stream(cfg: &WorldConfig, id: &str, stream: u64) -> rand_chacha::ChaCha8Rng {
    crate::seeded_rng(derive_seed(derive_seed(cfg.seed, id_hash(id)), stream))
}

const QUALITY_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const TILE_STREAM: u64 = 3;

fn quality(cfg: &WorldConfig, id: &str) -> f64 {
    let z: f64 = StandardNormal.sample(&mut parcel_stream(cfg, id, QUALITY_STREAM));
    cfg.quality_sigma * z
}

fn attribute_effect(cfg: &WorldConfig, p: &LandParcel) -> f64 {
    let c = |k: &str| p.continuous.get(k).copied().unwrap_or(0.0);
    let s = |k: &str| p.categorical.get(k).map(String::as_str).unwrap_or("");
    let land_use = LAND_USES
        .iter()
        .find(|(n, _)| *n == s("land_use"))
        .map_or(0.0, |(_, e)| *e);
    let continuous = 0.015 * (c("road_width_m") - 8.0)
        - 0.06 * c("dist_main_road_km")
        - 0.1 * (c("area_sq_wa").max(1.0) / 200.0).ln();
    cfg.continuous_effect * continuous
        + land_use
        + if s("shape") == "irregular" {
            -0.08
        } else {
            0.0
        }
        + if s("title_deed") == "ns3k" {
            -0.12
        } else {
            0.0
        }
}

/// Log-price component a tile can see: location field plus parcel quality.
fn visible_log_price(cfg: &WorldConfig, field: &PriceField, p: &LandParcel) -> f64 {
    field.regional(p.lat, p.lon) + quality(cfg, &p.id)
}

/// Noiseless price of a parcel under `cfg`. Diagnostics only.
pub fn world_ground_truth(cfg: &WorldConfig, field: &PriceField, p: &LandParcel) -> f64 {
    cfg.base_price
        * (visible_log_price(cfg, field, p) + field.local(p.lat, p.lon) + attribute_effect(cfg, p))
            .exp()
}

pub struct World {
    pub config: WorldConfig,
    pub field: PriceField,
    pub dataset: Dataset,
    /// Aligned with `dataset.parcels()`.
    pub satellite: Vec<Tile>,
    pub segmented: Vec<Tile>,
}

impl World {
    pub fn tiles(&self) -> impl Iterator<Item = &Tile> {
        self.satellite.iter().chain(&self.segmented)
    }

    /// Writes `parcels.csv` and `tiles/<kind>/<id>.png` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_parcels(&self.dataset, dir.join("parcels.csv"))?;
        let store = TileStore::new(dir.join("tiles"));
        let results = par_map(self.satellite.len() * 2, |i| {
            let t = if i % 2 == 0 {
                &self.satellite[i / 2]
            } else {
                &self.segmented[i / 2]
            };
            store.save(t)
        });
        results.into_iter().collect()
    }
}

fn province_index(cfg: &WorldConfig, u: f64) -> usize {
    let total: f64 = cfg.provinces.iter().map(|p| p.weight).sum();
    let mut acc = 0.0;
    for (i, p) in cfg.provinces.iter().enumerate() {
        acc += p.weight / total;
        if u < acc {
            return i;
        }
    }
    cfg.provinces.len() - 1
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let field = PriceField::new(cfg);
    let sigma = cfg.log_noise_sigma();
    let parcels: Vec<LandParcel> = par_map(cfg.n_parcels, |i| {
        let id = format!("P{i:05}");
        let mut rng = crate::seeded_rng(derive_seed(cfg.seed, i as u64));
        let prov = &cfg.provinces[province_index(cfg, rng.random())];
        let (lat, lon) = disc_point(&mut rng, prov.lat, prov.lon, prov.radius_km);
        let clustered = rng.random_bool(cfg.clustered_share);
        let coherent = rng.random_bool(cfg.land_use_coherence);
        let mut land_use = rng.random_range(0..LAND_USES.len());
        let (lat, lon, prov) = match field
            .neighborhoods
            .get(rng.random_range(0..field.neighborhoods.len().max(1)))
        {
            Some(n) if clustered => {
                let (lat, lon) =
                    disc_point(&mut rng, n.bump.lat, n.bump.lon, cfg.neighborhood_radius_km);
                if coherent {
                    land_use = n.land_use;
                }
                (lat, lon, &cfg.provinces[n.province])
            }
            _ => (lat, lon, prov),
        };
        let z: f64 = StandardNormal.sample(&mut rng);
        let area = 200.0 * (0.6 * z).exp();
        let road = rng.random_range(2.0..20.0f64);
        let dist = rng.random_range(0.0..5.0f64);
        let land_use = LAND_USES[land_use].0;
        let shape = if rng.random_bool(0.3) {
            "irregular"
        } else {
            "regular"
        };
        let deed = if rng.random_bool(0.25) {
            "ns3k"
        } else {
            "chanote"
        };
        let day = rng.random_range(0..cfg.date_span_days.max(1));
        let mut p = LandParcel {
            id,
            lat,
            lon,
            price: 0.0,
            appraisal_date: cfg.date_start + Days::new(day as u64),
            province: prov.name.clone(),
            continuous: BTreeMap::from([
                (CONTINUOUS[0].to_string(), round2(area)),
                (CONTINUOUS[1].to_string(), round2(road)),
                (CONTINUOUS[2].to_string(), round2(dist)),
            ]),
            categorical: BTreeMap::from([
                (CATEGORICAL[0].to_string(), land_use.to_string()),
                (CATEGORICAL[1].to_string(), shape.to_string()),
                (CATEGORICAL[2].to_string(), deed.to_string()),
            ]),
        };
        let eps: f64 = if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut parcel_stream(cfg, &p.id, NOISE_STREAM));
            sigma * z
        } else {
            0.0
        };
        p.price = world_ground_truth(cfg, &field, &p) * eps.exp();
        p
    });
    let tiles: Vec<(Tile, Tile)> = par_map(parcels.len(), |i| {
        let p = &parcels[i];
        render_tiles(cfg, p, visible_log_price(cfg, &field, p))
    });
    let (satellite, segmented) = tiles.into_iter().unzip();
    let dataset = Dataset::new(
        parcels,
        CONTINUOUS.map(String::from).to_vec(),
        CATEGORICAL.map(String::from).to_vec(),
    )?;
    Ok(World {
        config: cfg.clone(),
        field,
        dataset,
        satellite,
        segmented,
    })
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

const VEGETATION: [f64; 3] = [64.0, 128.0, 52.0];
const ROOF: [f64; 3] = [118.0, 110.0, 108.0];
const ROOF_DARK: [f64; 3] = [70.0, 66.0, 68.0];
const ROAD: [f64; 3] = [150.0, 150.0, 146.0];
const WATER: [f64; 3] = [40.0, 70.0, 120.0];

const MAP_BACKGROUND: [u8; 3] = [200, 230, 190];
const MAP_BUILDING: [u8; 3] = [215, 208, 200];
const MAP_ROAD: [u8; 3] = [255, 255, 255];
const MAP_WATER: [u8; 3] = [160, 195, 240];

/// Cell-based procedural texture. The share of vegetated cells rises with the
/// visible log-price; the rest are bare or built-up.
fn render_tiles(cfg: &WorldConfig, p: &LandParcel, visible: f64) -> (Tile, Tile) {
    let side = cfg.tile_side;
    let mut rng = parcel_stream(cfg, &p.id, TILE_STREAM);
    let z: f64 = StandardNormal.sample(&mut rng);
    let logit = cfg.tile_coupling * 3.0 * visible + cfg.tile_noise * 3.0 * z;
    let green = 1.0 / (1.0 + (-logit).exp());
    let cell = side / 8;
    let road_px = ((p.continuous.get("road_width_m").copied().unwrap_or(6.0) / 20.0) * cell as f64)
        .round()
        .max(1.0) as usize;
    let road_row = rng.random_range(1..7) * cell;
    let has_water = rng.random_bool(0.15);
    // Exactly round(green · 64) vegetated cells at random positions, so the
    // tile-level noise is set by `tile_noise` alone.
    let mut order: Vec<usize> = (0..64).collect();
    order.shuffle(&mut rng);
    let n_green = (green * 64.0).round() as usize;
    let mut cells = [[0u8; 8]; 8]; // 0 vegetation, 1 roof, 2 dark roof, 3 water
    for (k, &cell_idx) in order.iter().enumerate() {
        let (r, c) = (cell_idx / 8, cell_idx % 8);
        let built = if rng.random_bool(0.35) { 2 } else { 1 };
        cells[r][c] = if has_water && r >= 6 && c < 3 {
            3
        } else if k < n_green {
            0
        } else {
            built
        };
    }
    let mut sat = Vec::with_capacity(side * side * 3);
    let mut seg = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let on_road = y >= road_row && y < road_row + road_px;
            let kind = cells[y / cell][x / cell];
            let (base, map) = if on_road {
                (ROAD, MAP_ROAD)
            } else {
                match kind {
                    1 => (ROOF, MAP_BUILDING),
                    2 => (ROOF_DARK, MAP_BUILDING),
                    3 => (WATER, MAP_WATER),
                    _ => (VEGETATION, MAP_BACKGROUND),
                }
            };
            let jitter: f64 = rng.random_range(-12.0..12.0);
            sat.extend(base.map(|v| (v + jitter).round().clamp(0.0, 255.0) as u8));
            seg.extend(map);
        }
    }
    (
        Tile::new(p.id.clone(), TileKind::Satellite, side, sat).expect("sized tile"),
        Tile::new(p.id.clone(), TileKind::Segmented, side, seg).expect("sized tile"),
    )
}

//! Great-circle distance and fixed-radius neighbor queries over a flat lat/lon grid.

use std::collections::HashMap;

use crate::data::{Dataset, LandParcel};

/// Mean Earth radius (IUGG).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
/// Length of one degree of latitude.
pub const KM_PER_DEGREE: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// Haversine distance between two `(lat, lon)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let s_lat = ((lat2 - lat1) * 0.5).sin();
    let s_lon = ((lon2 - lon1) * 0.5).sin();
    // sin² is even, and the cosine product is taken in a fixed order so that
    // swapping the arguments gives the same bits.
    let (c1, c2) = if lat1 <= lat2 {
        (lat1.cos(), lat2.cos())
    } else {
        (lat2.cos(), lat1.cos())
    };
    let h = (s_lat * s_lat + c1 * c2 * s_lon * s_lon).min(1.0);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}

type Cell = (i64, i64);

/// Uniform grid over the dataset, cell size at least the build radius everywhere.
#[derive(Debug, Clone)]
pub struct SpatialIndex<'a> {
    ds: &'a Dataset,
    cell_lat: f64,
    cell_lon: f64,
    cells: HashMap<Cell, Vec<usize>>,
}

impl<'a> SpatialIndex<'a> {
    pub fn build(ds: &'a Dataset, radius_km: f64) -> Self {
        assert!(radius_km > 0.0, "radius must be positive");
        let cell_lat = radius_km / KM_PER_DEGREE;
        let max_abs_lat = ds
            .parcels()
            .iter()
            .map(|p| p.lat.abs())
            .fold(0.0_f64, f64::max);
        let widest = (max_abs_lat + cell_lat).min(89.0).to_radians().cos();
        let cell_lon = (cell_lat / widest).min(360.0);
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in ds.parcels().iter().enumerate() {
            cells
                .entry(Self::cell_of(cell_lat, cell_lon, p.lat, p.lon))
                .or_default()
                .push(i);
        }
        Self {
            ds,
            cell_lat,
            cell_lon,
            cells,
        }
    }

    fn cell_of(cell_lat: f64, cell_lon: f64, lat: f64, lon: f64) -> Cell {
        (
            (lat / cell_lat).floor() as i64,
            (lon / cell_lon).floor() as i64,
        )
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.ds
    }

    /// Dataset indices whose cells may hold points within `radius_km` of `(lat, lon)`.
    fn candidates(&self, lat: f64, lon: f64, radius_km: f64) -> Vec<usize> {
        let dlat = radius_km / KM_PER_DEGREE;
        let lat_hi = lat.abs() + dlat;
        let all = || self.cells.values().flatten().copied().collect::<Vec<_>>();
        if lat_hi >= 89.0 {
            return all();
        }
        let dlon = dlat / lat_hi.to_radians().cos();
        if lon - dlon < -180.0 || lon + dlon > 180.0 {
            // Wraps the antimeridian.
            return all();
        }
        let (r0, c0) = Self::cell_of(self.cell_lat, self.cell_lon, lat - dlat, lon - dlon);
        let (r1, c1) = Self::cell_of(self.cell_lat, self.cell_lon, lat + dlat, lon + dlon);
        let span = (r1 - r0 + 1) * (c1 - c0 + 1);
        if span as usize > self.cells.len() {
            return all();
        }
        let mut out = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                if let Some(bucket) = self.cells.get(&(r, c)) {
                    out.extend_from_slice(bucket);
                }
            }
        }
        out
    }

    /// Parcels other than `p` (matched by id) within `radius_km`, nearest first, ties by id.
    pub fn neighbors_within(&self, p: &LandParcel, radius_km: f64) -> Vec<(&'a str, f64)> {
        let parcels = self.ds.parcels();
        let mut out: Vec<(&'a str, f64)> = self
            .candidates(p.lat, p.lon, radius_km)
            .into_iter()
            .filter(|&i| parcels[i].id != p.id)
            .filter_map(|i| {
                let q = &parcels[i];
                let d = haversine_km(p.location(), q.location());
                (d <= radius_km).then_some((q.id.as_str(), d))
            })
            .collect();
        sort_by_distance(&mut out);
        out
    }
}

pub(crate) fn sort_by_distance(v: &mut [(&str, f64)]) {
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
}

/// O(n) reference scan with the same contract as [`SpatialIndex::neighbors_within`].
pub fn brute_force_neighbors<'a>(
    ds: &'a Dataset,
    p: &LandParcel,
    radius_km: f64,
) -> Vec<(&'a str, f64)> {
    let mut out: Vec<(&'a str, f64)> = ds
        .parcels()
        .iter()
        .filter(|q| q.id != p.id)
        .filter_map(|q| {
            let d = haversine_km(p.location(), q.location());
            (d <= radius_km).then_some((q.id.as_str(), d))
        })
        .collect();
    sort_by_distance(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn at(id: &str, lat: f64, lon: f64) -> LandParcel {
        LandParcel {
            id: id.into(),
            lat,
            lon,
            price: 1.0,
            appraisal_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            province: "X".into(),
            continuous: BTreeMap::new(),
            categorical: BTreeMap::new(),
        }
    }

    #[test]
    fn identity_is_zero() {
        assert_eq!(haversine_km((13.7, 100.5), (13.7, 100.5)), 0.0);
    }

    #[test]
    fn small_latitude_step() {
        // 0.027 degrees of latitude on the mean sphere.
        let reference = 0.027 * KM_PER_DEGREE;
        let d = haversine_km((0.0, 0.0), (0.027, 0.0));
        assert!((d - 3.00227).abs() < 1e-3, "{d}");
        assert!((d - reference).abs() < 1e-9);
    }

    #[test]
    fn symmetric_to_the_bit() {
        let mut rng = crate::seeded_rng(5);
        for _ in 0..1000 {
            let a = (
                rng.random_range(-89.0..89.0),
                rng.random_range(-180.0..180.0),
            );
            let b = (
                rng.random_range(-89.0..89.0),
                rng.random_range(-180.0..180.0),
            );
            assert_eq!(haversine_km(a, b).to_bits(), haversine_km(b, a).to_bits());
        }
    }

    proptest! {
        #[test]
        fn triangle_inequality(
            a in (-89.0..89.0f64, -180.0..180.0f64),
            b in (-89.0..89.0f64, -180.0..180.0f64),
            c in (-89.0..89.0f64, -180.0..180.0f64),
        ) {
            prop_assert!(haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9);
        }
    }

    fn random_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = crate::seeded_rng(seed);
        let parcels = (0..n)
            .map(|i| {
                at(
                    &format!("p{i:04}"),
                    13.5 + rng.random_range(0.0..0.3),
                    100.3 + rng.random_range(0.0..0.3),
                )
            })
            .collect();
        Dataset::from_parcels(parcels).unwrap()
    }

    #[test]
    fn tiny_radius_is_empty() {
        let ds = random_dataset(50, 1);
        let idx = SpatialIndex::build(&ds, 3.0);
        assert!(idx.neighbors_within(&ds.parcels()[0], 1e-9).is_empty());
    }

    #[test]
    fn never_returns_self() {
        let ds = random_dataset(200, 2);
        let idx = SpatialIndex::build(&ds, 3.0);
        for p in ds.parcels() {
            assert!(idx
                .neighbors_within(p, 3.0)
                .iter()
                .all(|(id, _)| *id != p.id));
        }
    }

    #[test]
    fn matches_brute_force() {
        let ds = random_dataset(500, 3);
        let idx = SpatialIndex::build(&ds, 3.0);
        let mut rng = crate::seeded_rng(4);
        for k in 0..100 {
            // Mix indexed parcels and external query points.
            let q = if k % 2 == 0 {
                ds.parcels()[rng.random_range(0..ds.len())].clone()
            } else {
                at(
                    "query",
                    13.5 + rng.random_range(-0.05..0.35),
                    100.3 + rng.random_range(-0.05..0.35),
                )
            };
            let radius = [3.0, 1.0, 5.0][k % 3];
            assert_eq!(
                idx.neighbors_within(&q, radius),
                brute_force_neighbors(&ds, &q, radius)
            );
        }
    }

    #[test]
    fn handles_high_latitudes_and_antimeridian() {
        let parcels = vec![
            at("a", 88.99, 10.0),
            at("b", 89.0, 170.0),
            at("c", 0.0, 179.99),
            at("d", 0.0, -179.99),
        ];
        let ds = Dataset::from_parcels(parcels).unwrap();
        let idx = SpatialIndex::build(&ds, 3.0);
        for p in ds.parcels() {
            assert_eq!(
                idx.neighbors_within(p, 3.0),
                brute_force_neighbors(&ds, p, 3.0)
            );
        }
        let c = ds.get("c").unwrap();
        assert_eq!(idx.neighbors_within(c, 3.0).len(), 1);
    }
}

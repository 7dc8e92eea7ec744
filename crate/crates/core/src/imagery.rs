//! Map tiles: resizing, augmentation, and the hand-engineered color features.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{seeded_rng, Error, Result};

/// Square tile sides accepted everywhere in the pipeline.
pub const TILE_SIDES: [usize; 4] = [64, 128, 256, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileKind {
    Satellite,
    Segmented,
}

impl TileKind {
    pub const ALL: [TileKind; 2] = [TileKind::Satellite, TileKind::Segmented];

    pub fn as_str(self) -> &'static str {
        match self {
            TileKind::Satellite => "satellite",
            TileKind::Segmented => "segmented",
        }
    }
}

impl fmt::Display for TileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "satellite" => Ok(TileKind::Satellite),
            "segmented" => Ok(TileKind::Segmented),
            other => Err(Error::invalid(format!("unknown tile kind {other:?}"))),
        }
    }
}

/// RGB raster centered on a parcel. Pixels are row-major, 3 bytes each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub parcel_id: String,
    pub kind: TileKind,
    side: usize,
    pixels: Vec<u8>,
}

impl Tile {
    pub fn new(
        parcel_id: impl Into<String>,
        kind: TileKind,
        side: usize,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if !TILE_SIDES.contains(&side) {
            return Err(Error::invalid(format!(
                "tile side {side} not one of {TILE_SIDES:?}"
            )));
        }
        if pixels.len() != side * side * 3 {
            return Err(Error::invalid(format!(
                "tile buffer has {} bytes, expected {}",
                pixels.len(),
                side * side * 3
            )));
        }
        Ok(Self {
            parcel_id: parcel_id.into(),
            kind,
            side,
            pixels,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.side + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn with_pixels(&self, pixels: Vec<u8>) -> Self {
        Self {
            parcel_id: self.parcel_id.clone(),
            kind: self.kind,
            side: self.side,
            pixels,
        }
    }
}

/// Bilinear resampling of a square RGB buffer, pixel centers aligned at half-integers.
pub fn resize_rgb(pixels: &[u8], from: usize, to: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), from * from * 3);
    if from == to {
        return pixels.to_vec();
    }
    let scale = from as f64 / to as f64;
    let coord = |o: usize| {
        let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (from - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(from - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..to).map(coord).collect();
    let mut out = Vec::with_capacity(to * to * 3);
    for oy in 0..to {
        let (y0, y1, fy) = coord(oy);
        for &(x0, x1, fx) in &cols {
            for c in 0..3 {
                let at = |x: usize, y: usize| pixels[(y * from + x) * 3 + c] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

pub fn resize(t: &Tile, side: usize) -> Result<Tile> {
    if !TILE_SIDES.contains(&side) {
        return Err(Error::invalid(format!(
            "unsupported tile side {side}; expected one of {TILE_SIDES:?}"
        )));
    }
    let pixels = resize_rgb(&t.pixels, t.side, side);
    Ok(Tile {
        parcel_id: t.parcel_id.clone(),
        kind: t.kind,
        side,
        pixels,
    })
}

/// Quarter turn clockwise.
pub fn rotate90(t: &Tile) -> Tile {
    let n = t.side;
    let mut out = vec![0u8; t.pixels.len()];
    for y in 0..n {
        for x in 0..n {
            // Source (x, y) lands at (n-1-y, x).
            let src = (y * n + x) * 3;
            let dst = (x * n + (n - 1 - y)) * 3;
            out[dst..dst + 3].copy_from_slice(&t.pixels[src..src + 3]);
        }
    }
    t.with_pixels(out)
}

pub fn flip_horizontal(t: &Tile) -> Tile {
    let n = t.side;
    let mut out = vec![0u8; t.pixels.len()];
    for y in 0..n {
        for x in 0..n {
            let src = (y * n + x) * 3;
            let dst = (y * n + (n - 1 - x)) * 3;
            out[dst..dst + 3].copy_from_slice(&t.pixels[src..src + 3]);
        }
    }
    t.with_pixels(out)
}

pub fn flip_vertical(t: &Tile) -> Tile {
    let n = t.side;
    let row = n * 3;
    let mut out = Vec::with_capacity(t.pixels.len());
    for y in (0..n).rev() {
        out.extend_from_slice(&t.pixels[y * row..(y + 1) * row]);
    }
    t.with_pixels(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_rotate: f64,
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_jitter: f64,
    /// Per-channel brightness factors are drawn from `1 ± jitter`.
    pub jitter: f64,
    pub p_noise: f64,
    /// Standard deviation of additive pixel noise, in 8-bit units.
    pub noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_rotate: 0.5,
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_jitter: 0.5,
            jitter: 0.1,
            p_noise: 0.3,
            noise_sigma: 6.0,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            p_rotate: 0.0,
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_jitter: 0.0,
            jitter: 0.0,
            p_noise: 0.0,
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_rotate", self.p_rotate),
            ("p_hflip", self.p_hflip),
            ("p_vflip", self.p_vflip),
            ("p_jitter", self.p_jitter),
            ("p_noise", self.p_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::invalid(format!(
                "jitter must be in [0, 1), got {}",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Random rotation, flips, brightness jitter, and clipped Gaussian noise, each
/// applied with its own probability. Every draw happens regardless of outcome,
/// so a seed fixes the whole sequence.
pub fn augment(t: &Tile, cfg: &AugmentConfig, seed: u64) -> Result<Tile> {
    cfg.validate()?;
    let mut rng = seeded_rng(seed);
    let do_rotate = rng.random::<f64>() < cfg.p_rotate;
    let turns = rng.random_range(1..=3);
    let do_h = rng.random::<f64>() < cfg.p_hflip;
    let do_v = rng.random::<f64>() < cfg.p_vflip;
    let do_jitter = rng.random::<f64>() < cfg.p_jitter;
    let gains: [f64; 3] =
        std::array::from_fn(|_| 1.0 + cfg.jitter * (2.0 * rng.random::<f64>() - 1.0));
    let do_noise = rng.random::<f64>() < cfg.p_noise;

    let mut out = t.clone();
    if do_rotate {
        for _ in 0..turns {
            out = rotate90(&out);
        }
    }
    if do_h {
        out = flip_horizontal(&out);
    }
    if do_v {
        out = flip_vertical(&out);
    }
    if do_jitter {
        for px in out.pixels.chunks_exact_mut(3) {
            for (v, g) in px.iter_mut().zip(gains) {
                *v = (*v as f64 * g).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    if do_noise && cfg.noise_sigma > 0.0 {
        for v in out.pixels.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = (*v as f64 + cfg.noise_sigma * z).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    /// Mean excess green, (2G - R - B) / 510, in [-1, 1].
    pub greenness: f64,
    /// Mean excess blue, (2B - R - G) / 510, in [-1, 1].
    pub blueness: f64,
    /// One minus mean intensity, in [0, 1].
    pub darkness: f64,
}

impl ColorStats {
    pub fn abs_diff(&self, other: &ColorStats) -> [f64; 3] {
        [
            (self.greenness - other.greenness).abs(),
            (self.blueness - other.blueness).abs(),
            (self.darkness - other.darkness).abs(),
        ]
    }
}

/// Integer accumulation keeps the result independent of pixel order.
pub fn color_stats(t: &Tile) -> ColorStats {
    let (mut green, mut blue, mut sum) = (0i64, 0i64, 0i64);
    for px in t.pixels.chunks_exact(3) {
        let (r, g, b) = (px[0] as i64, px[1] as i64, px[2] as i64);
        green += 2 * g - r - b;
        blue += 2 * b - r - g;
        sum += r + g + b;
    }
    let n = (t.side * t.side) as f64;
    ColorStats {
        greenness: green as f64 / (510.0 * n),
        blueness: blue as f64 / (510.0 * n),
        darkness: 1.0 - sum as f64 / (765.0 * n),
    }
}

/// `|Δgreenness|, |Δblueness|, |Δdarkness|` between two tiles of equal side.
pub fn color_diff_features(a: &Tile, b: &Tile) -> Result<[f64; 3]> {
    if a.side != b.side {
        return Err(Error::invalid(format!(
            "tile sides differ: {} vs {}",
            a.side, b.side
        )));
    }
    Ok(color_stats(a).abs_diff(&color_stats(b)))
}

/// Directory of tiles laid out as `<root>/<kind>/<parcel_id>.png`.
#[derive(Debug, Clone)]
pub struct TileStore {
    root: PathBuf,
}

impl TileStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, kind: TileKind, parcel_id: &str) -> PathBuf {
        self.root
            .join(kind.as_str())
            .join(format!("{parcel_id}.png"))
    }

    pub fn save(&self, tile: &Tile) -> Result<()> {
        let path = self.path(tile.kind, &tile.parcel_id);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_png(tile, &path)
    }

    /// `Ok(None)` when the tile file does not exist.
    pub fn load(&self, kind: TileKind, parcel_id: &str) -> Result<Option<Tile>> {
        let path = self.path(kind, parcel_id);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path)?;
        decode_png(&bytes, parcel_id, kind).map(Some)
    }
}

pub fn write_png(tile: &Tile, path: &Path) -> Result<()> {
    let side = tile.side as u32;
    let img = image::RgbImage::from_raw(side, side, tile.pixels.clone())
        .ok_or_else(|| Error::invalid("tile buffer size mismatch"))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn encode_png(tile: &Tile) -> Result<Vec<u8>> {
    let side = tile.side as u32;
    let img = image::RgbImage::from_raw(side, side, tile.pixels.clone())
        .ok_or_else(|| Error::invalid("tile buffer size mismatch"))?;
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Decodes any PNG color type to RGB8.
pub fn decode_png(bytes: &[u8], parcel_id: &str, kind: TileKind) -> Result<Tile> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
    let (w, h) = img.dimensions();
    if w != h {
        return Err(Error::invalid(format!(
            "tile for {parcel_id} is {w}x{h}, expected a square"
        )));
    }
    Tile::new(parcel_id, kind, w as usize, img.into_raw())
}

//! Static-map tile client with an on-disk cache, request throttling and retries.
//!
//! Pipelines never need this module: synthetic worlds render their own tiles
//! and a pre-populated cache is served without a key or network.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::LandParcel;
use crate::imagery::{decode_png, encode_png, Tile, TileKind};
use crate::{Error, Result};

pub const API_KEY_ENV: &str = "MAPS_API_KEY";
/// Largest side the static-map provider serves.
pub const MAX_SIDE: usize = 640;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchConfig {
    /// Placeholders: `{lat}`, `{lon}`, `{zoom}`, `{side}`, `{maptype}`, `{key}`.
    pub url_template: String,
    pub satellite_maptype: String,
    pub segmented_maptype: String,
    /// Appended to segmented-tile URLs, e.g. provider style parameters.
    pub segmented_style: String,
    pub zoom: u8,
    pub side: usize,
    pub kinds: Vec<TileKind>,
    pub rate_per_sec: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub cache_dir: PathBuf,
    /// Taken from `MAPS_API_KEY` when absent.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            url_template: "https://maps.googleapis.com/maps/api/staticmap?center={lat},{lon}&zoom={zoom}&size={side}x{side}&maptype={maptype}&format=png&key={key}".into(),
            satellite_maptype: "satellite".into(),
            segmented_maptype: "roadmap".into(),
            segmented_style: "&style=feature:all|element:labels|visibility:off".into(),
            zoom: 17,
            side: 512,
            kinds: TileKind::ALL.to_vec(),
            rate_per_sec: 10.0,
            max_retries: 3,
            backoff_ms: 500,
            cache_dir: PathBuf::from("tile_cache"),
            api_key: None,
        }
    }
}

impl FetchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_per_sec > 0.0 && self.rate_per_sec.is_finite()) {
            return Err(Error::Config("rate_per_sec must be positive".into()));
        }
        if !crate::imagery::TILE_SIDES.contains(&self.side) || self.side > MAX_SIDE {
            return Err(Error::Config(format!(
                "side must be one of {:?}",
                crate::imagery::TILE_SIDES
            )));
        }
        Ok(())
    }

    /// Cache location; depends only on (parcel id, kind, zoom, side).
    pub fn cache_path(&self, parcel_id: &str, kind: TileKind) -> PathBuf {
        cache_path(&self.cache_dir, parcel_id, kind, self.zoom, self.side)
    }

    pub fn url(&self, p: &LandParcel, kind: TileKind, key: &str) -> String {
        let maptype = match kind {
            TileKind::Satellite => &self.satellite_maptype,
            TileKind::Segmented => &self.segmented_maptype,
        };
        let mut url = self
            .url_template
            .replace("{lat}", &format!("{:.6}", p.lat))
            .replace("{lon}", &format!("{:.6}", p.lon))
            .replace("{zoom}", &self.zoom.to_string())
            .replace("{side}", &self.side.to_string())
            .replace("{maptype}", maptype)
            .replace("{key}", key);
        if kind == TileKind::Segmented {
            url.push_str(&self.segmented_style);
        }
        url
    }
}

pub fn cache_path(dir: &Path, parcel_id: &str, kind: TileKind, zoom: u8, side: usize) -> PathBuf {
    dir.join(kind.as_str())
        .join(format!("z{zoom}_s{side}"))
        .join(format!("{parcel_id}.png"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

/// One HTTP GET. `Err` means no response arrived (DNS, connect, timeout).
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> std::result::Result<HttpResponse, String>;
}

pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Clock that only advances when slept on.
#[derive(Debug, Default)]
pub struct FakeClock {
    now: Mutex<Duration>,
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        *self.now.lock().expect("clock lock")
    }

    fn sleep(&self, d: Duration) {
        *self.now.lock().expect("clock lock") += d;
    }
}

#[cfg(feature = "http")]
pub struct UreqTransport {
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl Default for UreqTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
        }
    }
}

#[cfg(feature = "http")]
impl Transport for UreqTransport {
    fn get(&self, url: &str) -> std::result::Result<HttpResponse, String> {
        let mut resp = self.agent.get(url).call().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_vec().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

pub struct TileFetcher<T: Transport, C: Clock> {
    cfg: FetchConfig,
    transport: T,
    clock: C,
    /// Time of the last dispatched request; held while dispatching so
    /// concurrent callers are serialized.
    last: Mutex<Option<Duration>>,
}

impl<T: Transport, C: Clock> TileFetcher<T, C> {
    pub fn new(mut cfg: FetchConfig, transport: T, clock: C) -> Result<Self> {
        cfg.validate()?;
        if cfg.api_key.is_none() {
            cfg.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        Ok(Self {
            cfg,
            transport,
            clock,
            last: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &FetchConfig {
        &self.cfg
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Cached tile if present, otherwise a throttled, retried download that is
    /// written to the cache before returning.
    pub fn fetch_tile(&self, p: &LandParcel, kind: TileKind) -> Result<Tile> {
        let path = self.cfg.cache_path(&p.id, kind);
        if path.exists() {
            return decode_png(&std::fs::read(&path)?, &p.id, kind);
        }
        let key = self.cfg.api_key.as_deref().ok_or_else(|| {
            Error::Config(format!(
                "tile {} for parcel {} is not cached and {API_KEY_ENV} is not set",
                kind, p.id
            ))
        })?;
        let url = self.cfg.url(p, kind, key);
        let body = self.get_with_retry(&url)?;
        let mut tile = decode_png(&body, &p.id, kind)?;
        if tile.side() != self.cfg.side {
            tile = crate::imagery::resize(&tile, self.cfg.side)?;
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, encode_png(&tile)?)?;
        Ok(tile)
    }

    fn throttle(&self) {
        let mut last = self.last.lock().expect("throttle lock");
        let gap = Duration::from_secs_f64(1.0 / self.cfg.rate_per_sec);
        if let Some(prev) = *last {
            let now = self.clock.now();
            if now < prev + gap {
                self.clock.sleep(prev + gap - now);
            }
        }
        *last = Some(self.clock.now());
    }

    fn get_with_retry(&self, url: &str) -> Result<Vec<u8>> {
        let redacted = match &self.cfg.api_key {
            Some(k) => url.replace(k.as_str(), "REDACTED"),
            None => url.to_string(),
        };
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.throttle();
            let retryable = match self.transport.get(url) {
                Ok(r) if r.status == 200 => return Ok(r.body),
                Ok(r) if r.status == 429 || r.status >= 500 => Error::Http {
                    url: redacted.clone(),
                    status: r.status,
                    attempts: attempt,
                },
                Ok(r) => {
                    return Err(Error::Http {
                        url: redacted,
                        status: r.status,
                        attempts: attempt,
                    })
                }
                Err(message) => Error::Transport {
                    message,
                    attempts: attempt,
                },
            };
            if attempt > self.cfg.max_retries {
                return Err(retryable);
            }
            self.clock.sleep(Duration::from_millis(
                self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1)),
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use chrono::NaiveDate;

    use super::*;

    /// Scripted server: replays statuses in order (then repeats the last one)
    /// and records request times on the shared fake clock.
    struct Scripted {
        statuses: Vec<Option<u16>>,
        calls: Mutex<Vec<Duration>>,
        clock: Arc<FakeClock>,
        png: Vec<u8>,
    }

    impl Scripted {
        fn new(statuses: Vec<Option<u16>>, clock: Arc<FakeClock>, side: usize) -> Self {
            let tile =
                Tile::new("x", TileKind::Satellite, side, vec![90; side * side * 3]).unwrap();
            Self {
                statuses,
                calls: Mutex::new(Vec::new()),
                clock,
                png: encode_png(&tile).unwrap(),
            }
        }

        fn n_calls(&self) -> usize {
            self.calls.lock().unwrap().len()
        }
    }

    impl Transport for Scripted {
        fn get(&self, _url: &str) -> std::result::Result<HttpResponse, String> {
            let mut calls = self.calls.lock().unwrap();
            let i = calls.len().min(self.statuses.len() - 1);
            calls.push(self.clock.now());
            match self.statuses[i] {
                Some(status) => Ok(HttpResponse {
                    status,
                    body: self.png.clone(),
                }),
                None => Err("connection reset".into()),
            }
        }
    }

    impl Clock for Arc<FakeClock> {
        fn now(&self) -> Duration {
            self.as_ref().now()
        }
        fn sleep(&self, d: Duration) {
            self.as_ref().sleep(d)
        }
    }

    fn parcel(id: &str) -> LandParcel {
        LandParcel {
            id: id.into(),
            lat: 13.7563,
            lon: 100.5018,
            price: 1.0,
            appraisal_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            province: "X".into(),
            continuous: BTreeMap::new(),
            categorical: BTreeMap::new(),
        }
    }

    fn setup(
        statuses: Vec<Option<u16>>,
        key: Option<&str>,
        dir: &Path,
    ) -> TileFetcher<Scripted, Arc<FakeClock>> {
        let clock = Arc::new(FakeClock::default());
        let cfg = FetchConfig {
            side: 64,
            rate_per_sec: 4.0,
            cache_dir: dir.to_path_buf(),
            api_key: key.map(str::to_string),
            ..Default::default()
        };
        TileFetcher::new(cfg, Scripted::new(statuses, clock.clone(), 64), clock).unwrap()
    }

    #[test]
    fn second_call_hits_cache() {
        let dir = tempfile::tempdir().unwrap();
        let f = setup(vec![Some(200)], Some("k"), dir.path());
        let a = f.fetch_tile(&parcel("p1"), TileKind::Satellite).unwrap();
        let b = f.fetch_tile(&parcel("p1"), TileKind::Satellite).unwrap();
        assert_eq!(a, b);
        assert_eq!(f.transport().n_calls(), 1);
        assert!(dir.path().join("satellite/z17_s64/p1.png").exists());
    }

    #[test]
    fn missing_key_with_empty_cache_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = setup(vec![Some(200)], None, dir.path());
        f.cfg.api_key = None;
        let err = f
            .fetch_tile(&parcel("p1"), TileKind::Segmented)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(f.transport().n_calls(), 0);
    }

    #[test]
    fn cached_tile_needs_no_key() {
        let dir = tempfile::tempdir().unwrap();
        setup(vec![Some(200)], Some("k"), dir.path())
            .fetch_tile(&parcel("p1"), TileKind::Satellite)
            .unwrap();
        let mut f = setup(vec![Some(500)], None, dir.path());
        f.cfg.api_key = None;
        f.fetch_tile(&parcel("p1"), TileKind::Satellite).unwrap();
        assert_eq!(f.transport().n_calls(), 0);
    }

    #[test]
    fn retries_500_then_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let f = setup(vec![Some(500), Some(200)], Some("k"), dir.path());
        f.fetch_tile(&parcel("p1"), TileKind::Satellite).unwrap();
        assert_eq!(f.transport().n_calls(), 2);
    }

    #[test]
    fn gives_up_after_three_retries_with_backoff() {
        let dir = tempfile::tempdir().unwrap();
        let f = setup(vec![Some(503)], Some("secret"), dir.path());
        let err = f
            .fetch_tile(&parcel("p1"), TileKind::Satellite)
            .unwrap_err();
        match &err {
            Error::Http {
                status,
                attempts,
                url,
            } => {
                assert_eq!((*status, *attempts), (503, 4));
                assert!(!url.contains("secret"));
            }
            other => panic!("unexpected {other}"),
        }
        let calls = f.transport().calls.lock().unwrap().clone();
        let gaps: Vec<u128> = calls
            .windows(2)
            .map(|w| (w[1] - w[0]).as_millis())
            .collect();
        assert_eq!(gaps, vec![500, 1000, 2000]);
        assert!(!f.config().cache_path("p1", TileKind::Satellite).exists());
    }

    #[test]
    fn client_errors_are_not_retried() {
        let dir = tempfile::tempdir().unwrap();
        let f = setup(vec![Some(403)], Some("k"), dir.path());
        assert!(matches!(
            f.fetch_tile(&parcel("p1"), TileKind::Satellite),
            Err(Error::Http {
                status: 403,
                attempts: 1,
                ..
            })
        ));
        let f = setup(vec![None, Some(429), Some(200)], Some("k"), dir.path());
        f.fetch_tile(&parcel("p2"), TileKind::Satellite).unwrap();
        assert_eq!(f.transport().n_calls(), 3);
    }

    #[test]
    fn never_exceeds_rate_in_any_second() {
        let dir = tempfile::tempdir().unwrap();
        let f = setup(vec![Some(200)], Some("k"), dir.path());
        for i in 0..40 {
            f.fetch_tile(&parcel(&format!("p{i}")), TileKind::Satellite)
                .unwrap();
        }
        let calls = f.transport().calls.lock().unwrap().clone();
        assert_eq!(calls.len(), 40);
        for (i, &start) in calls.iter().enumerate() {
            let in_window = calls[i..]
                .iter()
                .filter(|&&t| t < start + Duration::from_secs(1))
                .count();
            assert!(in_window <= 4, "{in_window} requests in one second");
        }
    }

    #[test]
    fn cache_path_is_pure() {
        let dir = Path::new("/c");
        assert_eq!(
            cache_path(dir, "P1", TileKind::Segmented, 17, 512),
            PathBuf::from("/c/segmented/z17_s512/P1.png")
        );
        assert_ne!(
            cache_path(dir, "P1", TileKind::Segmented, 18, 512),
            cache_path(dir, "P1", TileKind::Segmented, 17, 512)
        );
    }

    #[test]
    fn url_template_and_validation() {
        let cfg = FetchConfig::default();
        let url = cfg.url(&parcel("p"), TileKind::Satellite, "K");
        assert!(
            url.contains("center=13.756300,100.501800")
                && url.contains("zoom=17")
                && url.contains("size=512x512")
        );
        assert!(url.contains("maptype=satellite") && url.ends_with("key=K"));
        assert!(cfg
            .url(&parcel("p"), TileKind::Segmented, "K")
            .contains("maptype=roadmap"));
        assert!(FetchConfig {
            rate_per_sec: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FetchConfig {
            side: 4096,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::LabeledTuple;
use crate::error::{Error, Result};
use crate::ratelimit::RateLimiter;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&latitude) || !(longitude > -180.0 && longitude <= 180.0) {
            return Err(Error::validation(format!("invalid coordinates ({latitude}, {longitude})")));
        }
        Ok(GeoPoint { latitude, longitude })
    }
}

/// Haversine great-circle distance.
pub fn distance_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dp = p2 - p1;
    let dl = (b.longitude - a.longitude).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoResult {
    #[serde(alias = "latitude")]
    pub lat: f64,
    #[serde(alias = "longitude")]
    pub lon: f64,
    #[serde(default)]
    pub country: Option<String>,
}

impl GeoResult {
    pub fn point(&self) -> Result<GeoPoint> {
        GeoPoint::new(self.lat, self.lon)
    }
}

pub trait GeocodeBackend: Send + Sync {
    /// `Ok(None)` when the location cannot be resolved.
    fn lookup(&self, query: &str) -> Result<Option<GeoResult>>;
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Offline lookup table: `{"Adelaide": {"lat": .., "lon": .., "country": ".."}}`.
#[derive(Clone, Debug, Default)]
pub struct GazetteerBackend {
    entries: HashMap<String, GeoResult>,
}

impl GazetteerBackend {
    pub fn new(entries: BTreeMap<String, GeoResult>) -> Self {
        GazetteerBackend {
            entries: entries.into_iter().map(|(k, v)| (normalize(&k), v)).collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(GazetteerBackend::new(serde_json::from_str(&text)?))
    }
}

impl GeocodeBackend for GazetteerBackend {
    fn lookup(&self, query: &str) -> Result<Option<GeoResult>> {
        Ok(self.entries.get(&normalize(query)).cloned())
    }
}

/// Query-string geocoder: `GET <url>?q=<location>` answering either one
/// `{lat, lon, country}` object or a search-style array whose first hit is used
/// (string coordinates and `address.country` are accepted).
pub struct HttpGeocoder {
    url: String,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl HttpGeocoder {
    pub fn new(url: &str, min_interval: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .user_agent(concat!("ltc/", env!("CARGO_PKG_VERSION")))
            .build()
            .into();
        HttpGeocoder {
            url: url.to_string(),
            agent,
            limiter: RateLimiter::new(min_interval),
        }
    }

    /// Configure from `LTC_GEOCODER_URL`.
    pub fn from_env(min_interval: Duration) -> Result<Self> {
        let url = std::env::var("LTC_GEOCODER_URL").map_err(|_| Error::Endpoint {
            retriable: false,
            message: "LTC_GEOCODER_URL is not set (use --stub with a gazetteer for offline runs)".into(),
        })?;
        Ok(HttpGeocoder::new(&url, min_interval))
    }
}

fn number(v: &serde_json::Value) -> Option<f64> {
    v.as_f64().or_else(|| v.as_str()?.parse().ok())
}

fn parse_geocoder_response(v: &serde_json::Value) -> Option<GeoResult> {
    let hit = match v {
        serde_json::Value::Array(items) => items.first()?,
        other => other,
    };
    let lat = number(&hit["lat"]).or_else(|| number(&hit["latitude"]))?;
    let lon = number(&hit["lon"]).or_else(|| number(&hit["longitude"]))?;
    let country = hit["country"]
        .as_str()
        .or_else(|| hit["address"]["country"].as_str())
        .map(str::to_string);
    Some(GeoResult { lat, lon, country })
}

impl GeocodeBackend for HttpGeocoder {
    fn lookup(&self, query: &str) -> Result<Option<GeoResult>> {
        self.limiter.acquire();
        let mut resp = self
            .agent
            .get(&self.url)
            .query("q", query)
            .call()
            .map_err(|e| Error::Endpoint {
                retriable: true,
                message: format!("{}: {e}", self.url),
            })?;
        let status = resp.status().as_u16();
        if status == 404 {
            return Ok(None);
        }
        if status != 200 {
            return Err(Error::Endpoint {
                retriable: status == 429 || status >= 500,
                message: format!("{}: HTTP {status}", self.url),
            });
        }
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| Error::Endpoint {
            retriable: true,
            message: format!("{}: unreadable response: {e}", self.url),
        })?;
        Ok(parse_geocoder_response(&v))
    }
}

/// On-disk lookup cache, negative results included.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoCache {
    pub entries: BTreeMap<String, Option<GeoResult>>,
}

impl GeoCache {
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(GeoCache::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Cache-first geocoder.
pub struct Geocoder {
    backend: Box<dyn GeocodeBackend>,
    cache: Mutex<GeoCache>,
    cache_path: Option<PathBuf>,
    network_calls: AtomicUsize,
}

impl Geocoder {
    pub fn new(backend: Box<dyn GeocodeBackend>, cache_path: Option<PathBuf>) -> Result<Self> {
        let cache = match &cache_path {
            Some(p) => GeoCache::load(p)?,
            None => GeoCache::default(),
        };
        Ok(Geocoder {
            backend,
            cache: Mutex::new(cache),
            cache_path,
            network_calls: AtomicUsize::new(0),
        })
    }

    /// Backend lookups issued so far (cache hits excluded).
    pub fn backend_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn geocode(&self, location: &str) -> Result<Option<GeoResult>> {
        let key = normalize(location);
        if key.is_empty() {
            return Err(Error::validation("empty location"));
        }
        if let Some(hit) = self.lock().entries.get(&key) {
            return Ok(hit.clone());
        }
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let result = self.backend.lookup(location)?;
        if let Some(r) = &result {
            r.point()?;
        }
        self.lock().entries.insert(key, result.clone());
        Ok(result)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, GeoCache> {
        self.cache.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Persist the cache, if it has a path.
    pub fn flush(&self) -> Result<()> {
        match &self.cache_path {
            Some(p) => self.lock().save(p),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeocodeStats {
    pub resolved: usize,
    pub unresolved: usize,
    pub failed: usize,
}

/// Fill coordinates and country in place using a bounded worker pool.
pub fn geocode_tuples(tuples: &mut [LabeledTuple], geocoder: &Geocoder, workers: usize) -> Result<GeocodeStats> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<Option<GeoResult>>> =
        pool.install(|| tuples.par_iter().map(|t| geocoder.geocode(&t.location)).collect());
    let mut stats = GeocodeStats::default();
    for (t, r) in tuples.iter_mut().zip(results) {
        match r {
            Ok(Some(g)) => {
                t.latitude = Some(g.lat);
                t.longitude = Some(g.lon);
                t.country = g.country;
                stats.resolved += 1;
            }
            Ok(None) => stats.unresolved += 1,
            Err(e) => {
                log::warn!("geocoding {:?} failed: {e}", t.location);
                stats.failed += 1;
            }
        }
    }
    geocoder.flush()?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn haversine_fixtures() {
        assert_eq!(distance_km(p(10.0, 20.0), p(10.0, 20.0)), 0.0);
        assert!((distance_km(p(0.0, 0.0), p(0.0, 1.0)) - 111.195).abs() < 0.01);
        let anti = distance_km(p(0.0, 0.0), p(0.0, 180.0));
        assert!((anti - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6);
        assert!((anti - 20015.1).abs() < 0.1);
    }

    #[test]
    fn coordinate_validation() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.0).is_err());
        assert!(GeoPoint::new(0.0, 180.0).is_ok());
    }

    struct Counting(GazetteerBackend, AtomicUsize);

    impl GeocodeBackend for Counting {
        fn lookup(&self, q: &str) -> Result<Option<GeoResult>> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.lookup(q)
        }
    }

    fn gazetteer() -> GazetteerBackend {
        GazetteerBackend::new(
            [(
                "Adelaide".to_string(),
                GeoResult {
                    lat: -34.9285,
                    lon: 138.6007,
                    country: Some("Australia".into()),
                },
            )]
            .into(),
        )
    }

    #[test]
    fn cache_first_with_negative_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.json");
        let g = Geocoder::new(Box::new(Counting(gazetteer(), AtomicUsize::new(0))), Some(cache.clone())).unwrap();
        assert!(g.geocode("Adelaide").unwrap().is_some());
        assert!(g.geocode("  adelaide ").unwrap().is_some());
        assert!(g.geocode("Atlantis").unwrap().is_none());
        assert!(g.geocode("Atlantis").unwrap().is_none());
        assert_eq!(g.backend_calls(), 2);
        assert!(g.geocode("").is_err());
        g.flush().unwrap();

        let again = Geocoder::new(Box::new(GazetteerBackend::default()), Some(cache)).unwrap();
        assert!(again.geocode("Adelaide").unwrap().is_some());
        assert!(again.geocode("Atlantis").unwrap().is_none());
        assert_eq!(again.backend_calls(), 0);
    }

    #[test]
    fn response_shapes() {
        let obj = serde_json::json!({"lat": 1.5, "lon": 2.5, "country": "France"});
        assert_eq!(parse_geocoder_response(&obj).unwrap().country.as_deref(), Some("France"));
        let arr = serde_json::json!([{"lat": "48.85", "lon": "2.35", "address": {"country": "France"}}]);
        let r = parse_geocoder_response(&arr).unwrap();
        assert_eq!((r.lat, r.lon), (48.85, 2.35));
        assert!(parse_geocoder_response(&serde_json::json!([])).is_none());
    }
}

//! Spatial context lookup: reverse geocoding with a quantized-coordinate cache,
//! a rate-limited live client and a hermetic fixture mode.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical;
use crate::corpus::Coord;
use crate::error::{Error, Result};
use crate::http::{self, HttpRequest, HttpTransport, Method, RateLimiter, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    Live,
    Cache,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialContext {
    #[serde(default)]
    pub admin_area: String,
    #[serde(default)]
    pub subdistrict: String,
    #[serde(default)]
    pub nearby_poi_names: Vec<String>,
    pub source: ContextSource,
}

impl SpatialContext {
    pub fn empty(source: ContextSource) -> Self {
        Self {
            admin_area: String::new(),
            subdistrict: String::new(),
            nearby_poi_names: Vec::new(),
            source,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.admin_area.is_empty() && self.subdistrict.is_empty() && self.nearby_poi_names.is_empty()
    }
}

/// Cache key: coordinates rounded to 5 decimals (about 1 m).
pub fn cache_key(coord: Coord) -> String {
    let q = |v: f64| {
        let s = format!("{v:.5}");
        if s == "-0.00000" {
            "0.00000".to_string()
        } else {
            s
        }
    };
    format!("{},{}", q(coord.lat), q(coord.lon))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContextRecord {
    key: String,
    context: SpatialContext,
}

/// Parses the one-record-per-line cache/fixture format.
pub fn load_context_records(path: &Path) -> Result<BTreeMap<String, SpatialContext>> {
    let records: Vec<ContextRecord> = canonical::read_lines(path)?;
    Ok(records.into_iter().map(|r| (r.key, r.context)).collect())
}

pub fn save_context_records(path: &Path, entries: &BTreeMap<String, SpatialContext>) -> Result<()> {
    let records: Vec<ContextRecord> = entries
        .iter()
        .map(|(key, context)| ContextRecord {
            key: key.clone(),
            context: context.clone(),
        })
        .collect();
    canonical::write_lines(path, &records)
}

#[derive(Debug, Default)]
pub struct GeoCache {
    entries: RwLock<BTreeMap<String, SpatialContext>>,
}

impl GeoCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            entries: RwLock::new(load_context_records(path)?),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_context_records(path, &self.entries.read().unwrap_or_else(|p| p.into_inner()))
    }

    pub fn get(&self, key: &str) -> Option<SpatialContext> {
        self.entries
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(key)
            .cloned()
    }

    /// Stores `context` unless the key is already present; the first stored value wins.
    pub fn insert(&self, key: String, context: SpatialContext) {
        self.entries
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .entry(key)
            .or_insert(context);
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct LiveGeoConfig {
    /// Base URL of a Nominatim-compatible service; `/reverse` is appended.
    pub base_url: String,
    pub min_interval: Duration,
    pub retry: RetryPolicy,
    pub poi_radius_m: f64,
    pub user_agent: String,
}

impl LiveGeoConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            min_interval: Duration::from_secs(1),
            retry: RetryPolicy::default(),
            poi_radius_m: 500.0,
            user_agent: "mobagent/0.1".into(),
        }
    }
}

/// Nominatim zoom level whose feature granularity roughly matches the POI radius.
fn zoom_for_radius(radius_m: f64) -> u8 {
    match radius_m {
        r if r <= 100.0 => 18,
        r if r <= 500.0 => 17,
        r if r <= 2_000.0 => 16,
        r if r <= 5_000.0 => 14,
        _ => 12,
    }
}

enum Mode {
    Live {
        cfg: LiveGeoConfig,
        transport: Arc<dyn HttpTransport>,
        limiter: RateLimiter,
    },
    Fixture(BTreeMap<String, SpatialContext>),
}

pub struct Geocoder {
    mode: Mode,
    cache: GeoCache,
}

impl Geocoder {
    pub fn fixture(entries: BTreeMap<String, SpatialContext>) -> Self {
        Self {
            mode: Mode::Fixture(entries),
            cache: GeoCache::new(),
        }
    }

    pub fn fixture_file(path: &Path) -> Result<Self> {
        Ok(Self::fixture(load_context_records(path)?))
    }

    /// A geocoder that knows nothing; every lookup returns an empty fixture context.
    pub fn empty() -> Self {
        Self::fixture(BTreeMap::new())
    }

    pub fn live(cfg: LiveGeoConfig, transport: Arc<dyn HttpTransport>, cache: GeoCache) -> Self {
        let limiter = RateLimiter::new(cfg.min_interval);
        Self {
            mode: Mode::Live {
                cfg,
                transport,
                limiter,
            },
            cache,
        }
    }

    pub fn cache(&self) -> &GeoCache {
        &self.cache
    }

    pub fn reverse_geocode(&self, coord: Coord) -> SpatialContext {
        let key = cache_key(coord);
        match &self.mode {
            Mode::Fixture(entries) => entries
                .get(&key)
                .map(|c| SpatialContext {
                    source: ContextSource::Fixture,
                    ..c.clone()
                })
                .unwrap_or_else(|| SpatialContext::empty(ContextSource::Fixture)),
            Mode::Live {
                cfg,
                transport,
                limiter,
            } => {
                if let Some(hit) = self.cache.get(&key) {
                    return SpatialContext {
                        source: ContextSource::Cache,
                        ..hit
                    };
                }
                match fetch(cfg, transport.as_ref(), limiter, coord) {
                    Ok(ctx) => {
                        self.cache.insert(key, ctx.clone());
                        ctx
                    }
                    Err(e) => {
                        log::warn!("reverse geocoding {coord:?} failed: {e}");
                        SpatialContext::empty(ContextSource::Live)
                    }
                }
            }
        }
    }
}

fn fetch(
    cfg: &LiveGeoConfig,
    transport: &dyn HttpTransport,
    limiter: &RateLimiter,
    coord: Coord,
) -> Result<SpatialContext> {
    let request = HttpRequest {
        method: Method::Get,
        url: format!("{}/reverse", cfg.base_url.trim_end_matches('/')),
        query: vec![
            ("lat".into(), format!("{:.6}", coord.lat)),
            ("lon".into(), format!("{:.6}", coord.lon)),
            ("format".into(), "jsonv2".into()),
            ("zoom".into(), zoom_for_radius(cfg.poi_radius_m).to_string()),
        ],
        headers: vec![("User-Agent".into(), cfg.user_agent.clone())],
        body: None,
    };
    limiter.acquire();
    let (resp, _) = http::send_with_retry(transport, &request, &cfg.retry)
        .map_err(|(f, retries)| Error::invalid(format!("geocoder failed after {retries} retries: {f:?}")))?;
    parse_nominatim(&resp.body)
}

/// Extracts a [`SpatialContext`] from a Nominatim `jsonv2` reverse response.
pub fn parse_nominatim(body: &str) -> Result<SpatialContext> {
    let v: Value = serde_json::from_str(body)?;
    let addr = v.get("address").cloned().unwrap_or(Value::Null);
    let first = |keys: &[&str]| {
        keys.iter()
            .find_map(|k| addr.get(*k).and_then(Value::as_str))
            .unwrap_or("")
            .to_string()
    };
    let admin_area = first(&["city", "town", "municipality", "county", "state"]);
    let subdistrict = first(&["suburb", "city_district", "borough", "quarter", "neighbourhood"]);
    let mut nearby_poi_names = Vec::new();
    if let Some(name) = v.get("name").and_then(Value::as_str) {
        if !name.is_empty() {
            nearby_poi_names.push(name.to_string());
        }
    }
    for key in ["amenity", "shop", "tourism", "leisure", "building"] {
        if let Some(name) = addr.get(key).and_then(Value::as_str) {
            if !nearby_poi_names.iter().any(|n| n == name) {
                nearby_poi_names.push(name.to_string());
            }
        }
    }
    Ok(SpatialContext {
        admin_area,
        subdistrict,
        nearby_poi_names,
        source: ContextSource::Live,
    })
}

/// Number of distinct non-empty subdistricts.
pub fn subdistrict_count<'a>(contexts: impl IntoIterator<Item = &'a SpatialContext>) -> usize {
    contexts
        .into_iter()
        .filter(|c| !c.subdistrict.is_empty())
        .map(|c| c.subdistrict.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

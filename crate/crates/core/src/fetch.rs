//! Remote retrieval of scores, APY series and FX rates, with an on-disk cache.
//!
//! The fetcher is endpoint-agnostic: URLs are templates under a base URL and
//! the JSON field names are declared in [`FieldMap`]. Raw responses are
//! cached as `<cache_dir>/<resource>/<key>.json` next to a `<key>.meta`
//! sidecar holding the fetch time; a cached entry younger than the TTL is
//! served without touching the network.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backtest::YieldPanel;
use crate::domain::{validate_universe, DatedSeries, ProtocolRecord};
use crate::error::{Error, Result};
use crate::ingest::{parse_apy, parse_date, parse_number, DataBundle};

/// URL templates relative to the base URL. `{id}`, `{start}` and `{end}` are
/// substituted before the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub scores: String,
    pub yields: String,
    #[serde(default)]
    pub fx: Option<String>,
}

/// Where each value lives in a JSON payload.
///
/// `*_records` locate the array of records (a JSON pointer such as `/data`,
/// or empty for a top-level array). Field names are plain keys, or JSON
/// pointers when they start with `/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub scores_records: String,
    pub id: String,
    pub name: String,
    pub chain: String,
    pub score: String,
    pub tvl: String,
    pub yields_records: String,
    pub yield_date: String,
    pub apy: String,
    /// APY values are quoted in percent rather than as fractions.
    pub apy_in_percent: bool,
    pub fx_records: String,
    pub fx_date: String,
    pub rate: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            scores_records: String::new(),
            id: "protocol_id".into(),
            name: "name".into(),
            chain: "chain".into(),
            score: "score".into(),
            tvl: "tvl".into(),
            yields_records: String::new(),
            yield_date: "date".into(),
            apy: "apy".into(),
            apy_in_percent: false,
            fx_records: String::new(),
            fx_date: "date".into(),
            rate: "rate".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchSpec {
    pub base_url: String,
    pub endpoints: Endpoints,
    #[serde(default)]
    pub fields: FieldMap,
    pub cache_dir: PathBuf,
    #[serde(default = "default_ttl_secs")]
    pub cache_ttl_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_ttl_secs() -> u64 {
    86_400
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_timeout_secs() -> u64 {
    30
}

impl FetchSpec {
    pub fn new(base_url: impl Into<String>, endpoints: Endpoints, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            base_url: base_url.into(),
            endpoints,
            fields: FieldMap::default(),
            cache_dir: cache_dir.into(),
            cache_ttl_secs: default_ttl_secs(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn cache_ttl(&self) -> Duration {
        Duration::from_secs(self.cache_ttl_secs)
    }

    fn url(&self, template: &str, id: &str, range: &DateRange) -> String {
        let path = template
            .replace("{id}", id)
            .replace("{start}", &range.start.to_string())
            .replace("{end}", &range.end.to_string());
        format!("{}/{}", self.base_url.trim_end_matches('/'), path.trim_start_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidConfig(format!("start {start} is after end {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Something that can GET a URL.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<Vec<u8>>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<Vec<u8>> {
        let network = |message: String, retryable: bool| Error::Network {
            url: url.to_string(),
            message,
            retryable,
        };
        let mut resp = self
            .agent
            .get(url)
            .call()
            .map_err(|e| network(e.to_string(), true))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let retryable = status == 429 || status >= 500;
            return Err(network(format!("HTTP status {status}"), retryable));
        }
        resp.body_mut()
            .read_to_vec()
            .map_err(|e| network(e.to_string(), true))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheMeta {
    fetched_at_ms: u64,
    url: String,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn sanitize(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

// One lock per cache entry, shared by every fetcher in the process.
fn entry_lock(path: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = LOCKS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    map.entry(path.to_path_buf()).or_default().clone()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().expect("cache files live in a directory");
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// File-backed response cache.
pub struct Cache {
    dir: PathBuf,
    ttl: Duration,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>, ttl: Duration) -> Self {
        Self {
            dir: dir.into(),
            ttl,
        }
    }

    pub fn paths(&self, resource: &str, key: &str) -> (PathBuf, PathBuf) {
        let base = self.dir.join(sanitize(resource));
        let key = sanitize(key);
        (base.join(format!("{key}.json")), base.join(format!("{key}.meta")))
    }

    fn read_fresh(&self, data: &Path, meta: &Path) -> Option<Vec<u8>> {
        let meta: CacheMeta = serde_json::from_slice(&fs::read(meta).ok()?).ok()?;
        let age = Duration::from_millis(now_ms().saturating_sub(meta.fetched_at_ms));
        if age >= self.ttl {
            return None;
        }
        fs::read(data).ok()
    }

    /// Returns the cached payload when fresh, otherwise calls `fetch` and
    /// stores its result. The payload is written before its sidecar and both
    /// are renamed into place, so a reader never sees a partial entry.
    pub fn get_or_fetch<F>(&self, resource: &str, key: &str, url: &str, fetch: F) -> Result<Vec<u8>>
    where
        F: FnOnce() -> Result<Vec<u8>>,
    {
        let (data, meta) = self.paths(resource, key);
        let lock = entry_lock(&data);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(bytes) = self.read_fresh(&data, &meta) {
            log::debug!("cache hit {}", data.display());
            return Ok(bytes);
        }
        let bytes = fetch()?;
        let parent = data.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        write_atomic(&data, &bytes)?;
        let sidecar = serde_json::to_vec(&CacheMeta {
            fetched_at_ms: now_ms(),
            url: url.to_string(),
        })
        .expect("meta serializes");
        write_atomic(&meta, &sidecar)?;
        Ok(bytes)
    }
}

fn get_with_retries(transport: &dyn Transport, url: &str, retries: u32, backoff: Duration) -> Result<Vec<u8>> {
    let mut attempt = 0;
    loop {
        match transport.get(url) {
            Err(Error::Network { retryable: true, ref message, .. }) if attempt < retries => {
                let wait = backoff * 2u32.saturating_pow(attempt);
                log::warn!("fetch {url} failed ({message}); retry {} in {wait:?}", attempt + 1);
                thread::sleep(wait);
                attempt += 1;
            }
            other => return other,
        }
    }
}

struct Fetcher<'a> {
    spec: &'a FetchSpec,
    transport: &'a dyn Transport,
    cache: Cache,
    range: DateRange,
}

impl Fetcher<'_> {
    fn payload(&self, resource: &str, template: &str, id: &str) -> Result<(String, Value)> {
        let url = self.spec.url(template, id, &self.range);
        let key = format!("{id}_{}_{}", self.range.start, self.range.end);
        let fetch = || {
            let bytes = get_with_retries(
                self.transport,
                &url,
                self.spec.max_retries,
                Duration::from_millis(self.spec.backoff_ms),
            )?;
            // never cache a body that is not JSON
            serde_json::from_slice::<Value>(&bytes).map_err(|_| self.mapping(resource, &url, "<body>"))?;
            Ok(bytes)
        };
        let bytes = self.cache.get_or_fetch(resource, &key, &url, fetch)?;
        let value = serde_json::from_slice(&bytes).map_err(|_| self.mapping(resource, &url, "<body>"))?;
        Ok((url, value))
    }

    fn mapping(&self, resource: &str, url: &str, field: &str) -> Error {
        Error::Mapping {
            resource: resource.to_string(),
            url: url.to_string(),
            field: field.to_string(),
        }
    }

    fn records<'v>(&self, resource: &str, url: &str, value: &'v Value, pointer: &str) -> Result<&'v Vec<Value>> {
        let node = if pointer.is_empty() {
            Some(value)
        } else {
            value.pointer(pointer)
        };
        node.and_then(Value::as_array)
            .ok_or_else(|| self.mapping(resource, url, if pointer.is_empty() { "<root>" } else { pointer }))
    }
}

fn lookup<'v>(record: &'v Value, field: &str) -> Option<&'v Value> {
    let v = if field.starts_with('/') {
        record.pointer(field)
    } else {
        record.get(field)
    }?;
    (!v.is_null()).then_some(v)
}

fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn as_number(v: &Value, parse: fn(&str) -> std::result::Result<f64, String>) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => parse(s).ok(),
        _ => None,
    }
}

/// Fetches over HTTP. See [`fetch_remote_with`].
pub fn fetch_remote<S: AsRef<str> + Sync>(spec: &FetchSpec, ids: &[S], range: DateRange) -> Result<DataBundle> {
    let transport = HttpTransport::new(Duration::from_secs(spec.timeout_secs));
    fetch_remote_with(spec, &transport, ids, range)
}

/// Retrieves scores, per-protocol APY series and (when configured) FX rates,
/// and maps them onto the same validated types as the file loaders. An empty
/// `ids` selects every protocol the scores endpoint returns. Observations
/// outside `range` are dropped.
pub fn fetch_remote_with<S: AsRef<str> + Sync>(
    spec: &FetchSpec,
    transport: &dyn Transport,
    ids: &[S],
    range: DateRange,
) -> Result<DataBundle> {
    let f = Fetcher {
        spec,
        transport,
        cache: Cache::new(&spec.cache_dir, spec.cache_ttl()),
        range,
    };
    let fields = &spec.fields;

    let (url, value) = f.payload("scores", &spec.endpoints.scores, "all")?;
    let mut protocols = Vec::new();
    for rec in f.records("scores", &url, &value, &fields.scores_records)? {
        let text = |field: &str| lookup(rec, field).and_then(as_text);
        let id = text(&fields.id).ok_or_else(|| f.mapping("scores", &url, &fields.id))?;
        let score = lookup(rec, &fields.score)
            .and_then(|v| as_number(v, parse_number))
            .ok_or_else(|| f.mapping("scores", &url, &fields.score))?;
        let tvl = match lookup(rec, &fields.tvl) {
            None => None,
            Some(v) => Some(as_number(v, parse_number).ok_or_else(|| f.mapping("scores", &url, &fields.tvl))?),
        };
        protocols.push(ProtocolRecord {
            name: text(&fields.name).unwrap_or_else(|| id.clone()),
            chain: text(&fields.chain).unwrap_or_default(),
            id,
            score,
            tvl,
        });
    }
    let mut universe = validate_universe(protocols)?;
    if !ids.is_empty() {
        universe = universe.subset(ids)?;
    }

    let series: BTreeMap<String, DatedSeries> = universe
        .ids()
        .par_iter()
        .map(|id| {
            let (url, value) = f.payload("yields", &spec.endpoints.yields, id)?;
            let mut obs = BTreeMap::new();
            for rec in f.records("yields", &url, &value, &fields.yields_records)? {
                let date = lookup(rec, &fields.yield_date)
                    .and_then(as_text)
                    .and_then(|s| parse_date(&s).ok())
                    .ok_or_else(|| f.mapping("yields", &url, &fields.yield_date))?;
                let mut apy = lookup(rec, &fields.apy)
                    .and_then(|v| as_number(v, parse_apy))
                    .ok_or_else(|| f.mapping("yields", &url, &fields.apy))?;
                if fields.apy_in_percent {
                    apy /= 100.0;
                }
                if !range.contains(date) {
                    continue;
                }
                if !(apy > -1.0 && apy.is_finite()) {
                    return Err(Error::InvalidApy(apy));
                }
                if obs.insert(date, apy).is_some() {
                    return Err(Error::DuplicateObservation { id: id.clone(), date });
                }
            }
            Ok((id.clone(), DatedSeries::new(obs.into_iter().collect())?))
        })
        .collect::<Result<_>>()?;

    let fx = match &spec.endpoints.fx {
        None => None,
        Some(template) => {
            let (url, value) = f.payload("fx", template, "fx")?;
            let mut obs = BTreeMap::new();
            for rec in f.records("fx", &url, &value, &fields.fx_records)? {
                let date = lookup(rec, &fields.fx_date)
                    .and_then(as_text)
                    .and_then(|s| parse_date(&s).ok())
                    .ok_or_else(|| f.mapping("fx", &url, &fields.fx_date))?;
                let rate = lookup(rec, &fields.rate)
                    .and_then(|v| as_number(v, parse_number))
                    .ok_or_else(|| f.mapping("fx", &url, &fields.rate))?;
                if !range.contains(date) {
                    continue;
                }
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::NonPositiveRate(rate));
                }
                if obs.insert(date, rate).is_some() {
                    return Err(Error::DuplicateObservation { id: "fx".into(), date });
                }
            }
            Some(DatedSeries::new(obs.into_iter().collect())?)
        }
    };

    DataBundle::new(universe, YieldPanel::new(series, fx)?)
}

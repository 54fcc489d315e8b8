#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use chrono::NaiveDate;
use defi_parity::backtest::YieldPanel;
use defi_parity::domain::{validate_universe, DatedSeries, ProtocolRecord, Universe};
use defi_parity::fetch::{Endpoints, Transport};
use defi_parity::ingest::{write_bundle, DataBundle};
use defi_parity::risk::{build_risk_matrix, normalize, RiskMatrix};
use rand::Rng;
use serde_json::json;

pub fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

pub fn days_from(start: NaiveDate, n: u64) -> NaiveDate {
    start.checked_add_days(chrono::Days::new(n)).unwrap()
}

/// Universe `p0, p1, …` with the given scores and unit TVL.
pub fn universe(scores: &[f64]) -> Universe {
    validate_universe(
        scores
            .iter()
            .enumerate()
            .map(|(i, s)| ProtocolRecord::new(format!("p{i}"), *s).with_tvl(1.0))
            .collect(),
    )
    .unwrap()
}

pub fn normalized(scores: &[f64]) -> RiskMatrix {
    normalize(&build_risk_matrix(&universe(scores))).unwrap()
}

pub fn random_scores<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.1..10.0)).collect()
}

/// Uniform point on the simplex (normalized exponentials).
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -rng.gen_range(1e-12f64..1.0).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `w_i ∝ 1/√s_i`, computed directly from raw scores.
pub fn inverse_sqrt_weights(scores: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = scores.iter().map(|s| 1.0 / s.sqrt()).collect();
    let t: f64 = inv.iter().sum();
    inv.iter().map(|x| x / t).collect()
}

/// Contribution dispersion computed from scratch for a dense matrix.
pub fn objective_oracle(w: &[f64], m: &[Vec<f64>]) -> f64 {
    let n = w.len();
    let c: Vec<f64> = (0..n)
        .map(|i| w[i] * (0..n).map(|j| m[i][j] * w[j]).sum::<f64>())
        .collect();
    let mut f = 0.0;
    for i in 0..n {
        for j in 0..n {
            f += (c[i] - c[j]).powi(2);
        }
    }
    f
}

pub fn dense(m: &RiskMatrix) -> Vec<Vec<f64>> {
    let e = m.entries();
    (0..m.dim()).map(|i| (0..m.dim()).map(|j| e[(i, j)]).collect()).collect()
}

/// Every point of the simplex grid with spacing `1/steps`, for n ≤ 3.
pub fn simplex_grid(n: usize, steps: usize) -> Vec<Vec<f64>> {
    let h = 1.0 / steps as f64;
    match n {
        1 => vec![vec![1.0]],
        2 => (0..=steps).map(|i| vec![i as f64 * h, 1.0 - i as f64 * h]).collect(),
        3 => {
            let mut out = Vec::new();
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let (a, b) = (i as f64 * h, j as f64 * h);
                    out.push(vec![a, b, (1.0 - a - b).max(0.0)]);
                }
            }
            out
        }
        _ => panic!("grid only for n <= 3"),
    }
}

/// Nearest grid point of the simplex to `v` by exhaustive search.
pub fn brute_force_projection(v: &[f64], steps: usize) -> Vec<f64> {
    simplex_grid(v.len(), steps)
        .into_iter()
        .min_by(|a, b| dist2(a, v).total_cmp(&dist2(b, v)))
        .unwrap()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn constant_series(start: NaiveDate, days: u64, value: f64) -> DatedSeries {
    DatedSeries::new((0..days).map(|k| (days_from(start, k), value)).collect()).unwrap()
}

/// Panel where protocol `pK` quotes `apys[K]` every day from `starts[K]`
/// through `start + days - 1`.
pub fn panel(
    start: NaiveDate,
    days: u64,
    apys: &[f64],
    starts: &[u64],
    fx: Option<f64>,
) -> YieldPanel {
    let series: BTreeMap<String, DatedSeries> = apys
        .iter()
        .zip(starts)
        .enumerate()
        .map(|(i, (apy, s))| (format!("p{i}"), constant_series(days_from(start, *s), days - s, *apy)))
        .collect();
    YieldPanel::new(series, fx.map(|r| constant_series(start, days, r))).unwrap()
}

/// In-memory transport that serves canned bodies and counts requests.
pub struct FixtureTransport {
    pub bodies: HashMap<String, Vec<u8>>,
    pub calls: AtomicUsize,
}

impl FixtureTransport {
    pub fn new(bodies: HashMap<String, Vec<u8>>) -> Self {
        Self { bodies, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for FixtureTransport {
    fn get(&self, url: &str) -> defi_parity::Result<Vec<u8>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.bodies.get(url).cloned().ok_or_else(|| defi_parity::Error::Network {
            url: url.to_string(),
            message: "HTTP status 404".into(),
            retryable: false,
        })
    }
}

pub const FIXTURE_BASE: &str = "http://fixture.test/api";

pub fn fixture_endpoints() -> Endpoints {
    Endpoints {
        scores: "/scores".into(),
        yields: "/yields/{id}?start={start}&end={end}".into(),
        fx: Some("/fx?start={start}&end={end}".into()),
    }
}

/// Serves `bundle` as JSON under [`FIXTURE_BASE`] using the default field
/// names, for requests over `start..=end`.
pub fn fixture_bodies(bundle: &DataBundle, start: NaiveDate, end: NaiveDate) -> HashMap<String, Vec<u8>> {
    let q = format!("start={start}&end={end}");
    let mut bodies = HashMap::new();
    let scores: Vec<_> = bundle
        .universe
        .protocols()
        .iter()
        .map(|p| json!({"protocol_id": p.id, "name": p.name, "chain": p.chain, "score": p.score, "tvl": p.tvl}))
        .collect();
    bodies.insert(format!("{FIXTURE_BASE}/scores"), serde_json::to_vec(&scores).unwrap());
    for (id, s) in bundle.panel.series() {
        let rows: Vec<_> = s.entries().iter().map(|(d, apy)| json!({"date": d.to_string(), "apy": apy})).collect();
        bodies.insert(format!("{FIXTURE_BASE}/yields/{id}?{q}"), serde_json::to_vec(&rows).unwrap());
    }
    if let Some(fx) = bundle.panel.fx() {
        let rows: Vec<_> = fx.entries().iter().map(|(d, r)| json!({"date": d.to_string(), "rate": r})).collect();
        bodies.insert(format!("{FIXTURE_BASE}/fx?{q}"), serde_json::to_vec(&rows).unwrap());
    }
    bodies
}

pub fn sample_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data")
}

/// Every file `write_bundle` produces, read back as bytes in name order.
pub fn bundle_bytes(bundle: &DataBundle) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    let mut out: Vec<_> = write_bundle(bundle, dir.path())
        .unwrap()
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

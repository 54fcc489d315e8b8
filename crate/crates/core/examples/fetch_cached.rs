//! Remote retrieval through the response cache. A stand-in transport serves
//! the sample data as JSON so the example runs offline; the second fetch is
//! answered from the cache without any request.
//!
//! ```text
//! cargo run --example fetch_cached
//! ```

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use defi_parity::fetch::{fetch_remote_with, DateRange, Endpoints, FetchSpec, Transport};
use defi_parity::ingest::{load_bundle, DataBundle};
use serde_json::json;

const BASE: &str = "http://offline.example/api";

struct Canned {
    bodies: HashMap<String, Vec<u8>>,
    requests: AtomicUsize,
}

impl Transport for Canned {
    fn get(&self, url: &str) -> defi_parity::Result<Vec<u8>> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        println!("  GET {url}");
        self.bodies.get(url).cloned().ok_or_else(|| defi_parity::Error::Network {
            url: url.into(),
            message: "HTTP status 404".into(),
            retryable: false,
        })
    }
}

fn serve(bundle: &DataBundle, range: DateRange) -> HashMap<String, Vec<u8>> {
    let query = format!("start={}&end={}", range.start, range.end);
    let mut bodies = HashMap::new();
    let scores: Vec<_> = bundle
        .universe
        .protocols()
        .iter()
        .map(|p| json!({"protocol_id": p.id, "name": p.name, "chain": p.chain, "score": p.score, "tvl": p.tvl}))
        .collect();
    bodies.insert(format!("{BASE}/scores"), serde_json::to_vec(&json!({ "data": scores })).unwrap());
    for (id, series) in bundle.panel.series() {
        // quoted in percent, as many yield APIs do
        let points: Vec<_> = series.entries().iter().map(|(d, a)| json!({"date": d.to_string(), "apy": a * 100.0})).collect();
        bodies.insert(format!("{BASE}/yields/{id}?{query}"), serde_json::to_vec(&points).unwrap());
    }
    bodies
}

fn main() -> defi_parity::Result<()> {
    let local = load_bundle(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data"))?;
    let range = DateRange::new("2021-12-01".parse().unwrap(), "2022-05-22".parse().unwrap())?;
    let transport = Canned {
        bodies: serve(&local, range),
        requests: AtomicUsize::new(0),
    };

    let cache = tempfile::tempdir().map_err(|source| defi_parity::Error::Io {
        path: std::env::temp_dir(),
        source,
    })?;
    let endpoints = Endpoints {
        scores: "/scores".into(),
        yields: "/yields/{id}?start={start}&end={end}".into(),
        fx: None,
    };
    let mut spec = FetchSpec::new(BASE, endpoints, cache.path());
    spec.fields.scores_records = "/data".into();
    spec.fields.apy_in_percent = true;

    println!("cold cache:");
    let first = fetch_remote_with(&spec, &transport, &["aave-v2", "curve-3pool"], range)?;
    println!("warm cache:");
    let second = fetch_remote_with(&spec, &transport, &["aave-v2", "curve-3pool"], range)?;
    assert_eq!(first, second);
    println!(
        "{} requests in total; {} protocols, {} observations",
        transport.requests.load(Ordering::SeqCst),
        first.universe.len(),
        first.panel.series().values().map(|s| s.len()).sum::<usize>()
    );
    Ok(())
}

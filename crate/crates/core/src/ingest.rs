//! CSV loaders for protocol scores, APY series and FX rates, and the writer
//! that produces the same files from a [`DataBundle`].
//!
//! File schemas (header row required, `.` decimal separator):
//!
//! | file         | columns                                  |
//! |--------------|------------------------------------------|
//! | `scores.csv` | `protocol_id,name,chain,score,tvl`       |
//! | `yields.csv` | `date,protocol_id,apy`                   |
//! | `fx.csv`     | `date,rate`                              |
//!
//! `tvl` may be empty. APYs are fractions; a trailing `%` divides by 100.
//! Dates are `YYYY-MM-DD`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::backtest::YieldPanel;
use crate::domain::{validate_universe, DatedSeries, ProtocolRecord, Universe};
use crate::error::{Error, Result};

pub const SCORES_FILE: &str = "scores.csv";
pub const YIELDS_FILE: &str = "yields.csv";
pub const FX_FILE: &str = "fx.csv";

const SCORES_HEADER: [&str; 5] = ["protocol_id", "name", "chain", "score", "tvl"];
const YIELDS_HEADER: [&str; 3] = ["date", "protocol_id", "apy"];
const FX_HEADER: [&str; 2] = ["date", "rate"];

/// A validated universe with its yield panel.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub universe: Universe,
    pub panel: YieldPanel,
}

impl DataBundle {
    pub fn new(universe: Universe, panel: YieldPanel) -> Result<Self> {
        if let Some(id) = panel.series().keys().find(|id| !universe.contains(id)) {
            return Err(Error::UnknownProtocol(id.clone()));
        }
        Ok(Self { universe, panel })
    }
}

/// Row reader that checks the header and reports 1-based file line numbers.
struct Table {
    path: PathBuf,
    columns: Vec<usize>,
    records: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn open(path: &Path, expected: &[&str]) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(file);
        let header = reader.headers().map_err(|e| parse_error(path, e))?.clone();
        let columns = expected
            .iter()
            .map(|name| {
                header.iter().position(|h| h == *name).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("missing column `{name}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| parse_error(path, e))?;
            if rec.iter().all(str::is_empty) {
                continue;
            }
            let line = rec.position().map_or(0, |p| p.line());
            records.push((line, rec));
        }
        Ok(Self {
            path: path.to_path_buf(),
            columns,
            records,
        })
    }

    fn field<'r>(&self, rec: &'r csv::StringRecord, col: usize) -> &'r str {
        rec.get(self.columns[col]).unwrap_or("")
    }

    fn parse_err(&self, line: u64, message: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message,
        }
    }
}

fn parse_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

pub(crate) fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("invalid date `{s}`: {e}"))
}

pub(crate) fn parse_number(s: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("invalid number `{s}`"))
}

/// APY as a fraction; `5%` and `0.05` are the same value.
pub(crate) fn parse_apy(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    match s.strip_suffix('%') {
        Some(pct) => parse_number(pct).map(|v| v / 100.0),
        None => parse_number(s),
    }
}

pub fn load_scores(path: &Path) -> Result<Universe> {
    let table = Table::open(path, &SCORES_HEADER)?;
    let mut records = Vec::with_capacity(table.records.len());
    let mut seen: BTreeMap<String, u64> = BTreeMap::new();
    for (line, rec) in &table.records {
        let line = *line;
        let id = table.field(rec, 0).to_string();
        if id.is_empty() {
            return Err(table.parse_err(line, "empty protocol_id".into()));
        }
        if seen.insert(id.clone(), line).is_some() {
            return Err(Error::DuplicateId(id).at_line(path, line));
        }
        let score = parse_number(table.field(rec, 3)).map_err(|m| table.parse_err(line, m))?;
        let tvl = match table.field(rec, 4) {
            "" => None,
            s => Some(parse_number(s).map_err(|m| table.parse_err(line, m))?),
        };
        let record = ProtocolRecord {
            name: table.field(rec, 1).to_string(),
            chain: table.field(rec, 2).to_string(),
            id,
            score,
            tvl,
        };
        // validate row by row so the error carries its line
        validate_universe(vec![record.clone()]).map_err(|e| e.at_line(path, line))?;
        records.push(record);
    }
    validate_universe(records)
}

/// Loads long-format APY rows for `ids`. Every id gets a series, possibly empty.
pub fn load_yields<S: AsRef<str>>(path: &Path, ids: &[S]) -> Result<YieldPanel> {
    let table = Table::open(path, &YIELDS_HEADER)?;
    let mut rows: BTreeMap<String, BTreeMap<NaiveDate, f64>> = ids
        .iter()
        .map(|id| (id.as_ref().to_string(), BTreeMap::new()))
        .collect();
    for (line, rec) in &table.records {
        let line = *line;
        let date = parse_date(table.field(rec, 0)).map_err(|m| table.parse_err(line, m))?;
        let id = table.field(rec, 1);
        let apy = parse_apy(table.field(rec, 2)).map_err(|m| table.parse_err(line, m))?;
        if !(apy > -1.0 && apy.is_finite()) {
            return Err(Error::InvalidApy(apy).at_line(path, line));
        }
        let series = rows
            .get_mut(id)
            .ok_or_else(|| Error::UnknownProtocol(id.to_string()).at_line(path, line))?;
        if series.insert(date, apy).is_some() {
            return Err(Error::DuplicateObservation {
                id: id.to_string(),
                date,
            }
            .at_line(path, line));
        }
    }
    let series = rows
        .into_iter()
        .map(|(id, obs)| Ok((id, DatedSeries::new(obs.into_iter().collect())?)))
        .collect::<Result<_>>()?;
    YieldPanel::new(series, None)
}

pub fn load_fx(path: &Path) -> Result<DatedSeries> {
    let table = Table::open(path, &FX_HEADER)?;
    let mut obs = BTreeMap::new();
    for (line, rec) in &table.records {
        let line = *line;
        let date = parse_date(table.field(rec, 0)).map_err(|m| table.parse_err(line, m))?;
        let rate = parse_number(table.field(rec, 1)).map_err(|m| table.parse_err(line, m))?;
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::NonPositiveRate(rate).at_line(path, line));
        }
        if obs.insert(date, rate).is_some() {
            return Err(Error::DuplicateObservation {
                id: "fx".into(),
                date,
            }
            .at_line(path, line));
        }
    }
    DatedSeries::new(obs.into_iter().collect())
}

/// Loads `scores.csv`, `yields.csv` and, when present, `fx.csv` from `dir`.
pub fn load_bundle(dir: &Path) -> Result<DataBundle> {
    let universe = load_scores(&dir.join(SCORES_FILE))?;
    let panel = load_yields(&dir.join(YIELDS_FILE), &universe.ids())?;
    let fx_path = dir.join(FX_FILE);
    let fx = if fx_path.is_file() {
        Some(load_fx(&fx_path)?)
    } else {
        None
    };
    DataBundle::new(universe, panel.with_fx(fx)?)
}

pub fn scores_to_csv(universe: &Universe) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCORES_HEADER).unwrap();
    for p in universe.protocols() {
        w.write_record([
            p.id.clone(),
            p.name.clone(),
            p.chain.clone(),
            p.score.to_string(),
            p.tvl.map(|t| t.to_string()).unwrap_or_default(),
        ])
        .unwrap();
    }
    w.into_inner().unwrap()
}

pub fn yields_to_csv(panel: &YieldPanel) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(YIELDS_HEADER).unwrap();
    for (id, series) in panel.series() {
        for (date, apy) in series.entries() {
            w.write_record([date.to_string(), id.clone(), apy.to_string()]).unwrap();
        }
    }
    w.into_inner().unwrap()
}

pub fn fx_to_csv(fx: &DatedSeries) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FX_HEADER).unwrap();
    for (date, rate) in fx.entries() {
        w.write_record([date.to_string(), rate.to_string()]).unwrap();
    }
    w.into_inner().unwrap()
}

/// Writes the bundle in the loader formats; returns the paths written.
pub fn write_bundle(bundle: &DataBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![
        (dir.join(SCORES_FILE), scores_to_csv(&bundle.universe)),
        (dir.join(YIELDS_FILE), yields_to_csv(&bundle.panel)),
    ];
    if let Some(fx) = bundle.panel.fx() {
        files.push((dir.join(FX_FILE), fx_to_csv(fx)));
    }
    let mut written = Vec::new();
    for (path, bytes) in files {
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

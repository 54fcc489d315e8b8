//! Protocol records, universes, weight vectors and dated series.
//!
//! Every other module indexes vectors and matrices by the canonical order of a
//! [`Universe`], which is always sorted by protocol id.

use std::collections::HashSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a [`WeightVector`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// One scored protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRecord {
    pub id: String,
    pub name: String,
    pub chain: String,
    /// Risk score, higher is riskier. Must be strictly positive.
    pub score: f64,
    /// Total value locked in USD.
    pub tvl: Option<f64>,
}

impl ProtocolRecord {
    pub fn new(id: impl Into<String>, score: f64) -> Self {
        let id = id.into();
        Self {
            name: id.clone(),
            id,
            chain: String::new(),
            score,
            tvl: None,
        }
    }

    pub fn with_tvl(mut self, tvl: f64) -> Self {
        self.tvl = Some(tvl);
        self
    }

    pub fn with_chain(mut self, chain: impl Into<String>) -> Self {
        self.chain = chain.into();
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// A validated, id-sorted set of protocols.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Universe {
    protocols: Vec<ProtocolRecord>,
}

/// Sorts the records by id and checks that the result is a valid universe.
pub fn validate_universe(mut protocols: Vec<ProtocolRecord>) -> Result<Universe> {
    if protocols.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    protocols.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in protocols.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::DuplicateId(pair[0].id.clone()));
        }
    }
    for p in &protocols {
        check_record(p)?;
    }
    Ok(Universe { protocols })
}

fn check_record(p: &ProtocolRecord) -> Result<()> {
    // written as a negation so NaN is rejected too
    if !(p.score > 0.0 && p.score.is_finite()) {
        return Err(Error::NonPositiveScore {
            id: p.id.clone(),
            score: p.score,
        });
    }
    if let Some(tvl) = p.tvl {
        if !(tvl >= 0.0 && tvl.is_finite()) {
            return Err(Error::NegativeTvl {
                id: p.id.clone(),
                tvl,
            });
        }
    }
    Ok(())
}

impl Universe {
    pub fn protocols(&self) -> &[ProtocolRecord] {
        &self.protocols
    }

    pub fn len(&self) -> usize {
        self.protocols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protocols.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.protocols.iter().map(|p| p.id.clone()).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.protocols.iter().map(|p| p.score).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ProtocolRecord> {
        self.protocols
            .binary_search_by(|p| p.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.protocols[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    /// The protocols whose id is accepted by `keep`, in canonical order.
    pub fn filter<F>(&self, mut keep: F) -> Result<Universe>
    where
        F: FnMut(&ProtocolRecord) -> bool,
    {
        let protocols: Vec<_> = self.protocols.iter().filter(|p| keep(p)).cloned().collect();
        if protocols.is_empty() {
            return Err(Error::EmptyUniverse);
        }
        Ok(Universe { protocols })
    }

    /// Restricts the universe to `ids`, failing on any id that is not present.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Universe> {
        let wanted: HashSet<&str> = ids.iter().map(AsRef::as_ref).collect();
        for id in &wanted {
            if !self.contains(id) {
                return Err(Error::UnknownProtocol((*id).to_string()));
            }
        }
        self.filter(|p| wanted.contains(p.id.as_str()))
    }
}

/// A long-only, fully invested allocation over an ordered id list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    ids: Vec<String>,
    values: Vec<f64>,
}

impl WeightVector {
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(Error::InvalidWeights(format!(
                "{} ids but {} weights",
                ids.len(),
                values.len()
            )));
        }
        if ids.is_empty() {
            return Err(Error::EmptyUniverse);
        }
        if let Some((id, w)) = ids
            .iter()
            .zip(&values)
            .find(|(_, w)| !(0.0..=1.0).contains(*w))
        {
            return Err(Error::InvalidWeights(format!(
                "weight {w} for `{id}` outside [0, 1]"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self { ids, values })
    }

    /// Divides by the sum so the invariant holds exactly up to rounding of the
    /// final division, then validates.
    pub fn renormalized(ids: Vec<String>, mut values: Vec<f64>) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::InvalidWeights(format!("cannot renormalize, sum {sum}")));
        }
        for v in &mut values {
            *v = (*v / sum).clamp(0.0, 1.0);
        }
        Self::new(ids, values)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|i| i == id).map(|k| self.values[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ids.iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

/// Daily observations keyed by UTC calendar date.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatedSeries {
    entries: Vec<(NaiveDate, f64)>,
}

impl DatedSeries {
    /// Builds a series from entries that must already be strictly increasing.
    pub fn new(entries: Vec<(NaiveDate, f64)>) -> Result<Self> {
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::UnorderedDates(pair[1].0));
            }
        }
        Ok(Self { entries })
    }

    /// Sorts the entries first; a repeated date is still an error.
    pub fn from_unsorted(mut entries: Vec<(NaiveDate, f64)>) -> Result<Self> {
        entries.sort_by_key(|(d, _)| *d);
        Self::new(entries)
    }

    pub fn entries(&self) -> &[(NaiveDate, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.entries.first().map(|(d, _)| *d)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.entries.last().map(|(d, _)| *d)
    }

    /// Exact observation on `date`.
    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.entries
            .binary_search_by_key(&date, |(d, _)| *d)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// The last observation on or before `date`, provided it is at most
    /// `max_gap_days` days old.
    pub fn value_filled(&self, date: NaiveDate, max_gap_days: u32) -> Option<f64> {
        let idx = self.entries.partition_point(|(d, _)| *d <= date);
        let (last, value) = *self.entries.get(idx.checked_sub(1)?)?;
        let age = (date - last).num_days();
        (age <= i64::from(max_gap_days)).then_some(value)
    }
}

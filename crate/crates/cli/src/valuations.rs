//! Valuation files: a JSON list of `{agent, bundle, value}` records with
//! bundles given as item lists.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use clockforge::{Bundle, ValuationProfile};
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::{Deserialize, Serialize};

/// Files with more records than this are rejected.
pub const MAX_VALUATION_ENTRIES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuationRecord {
    pub agent: usize,
    pub bundle: Vec<usize>,
    pub value: f64,
}

struct CappedRecords(Vec<ValuationRecord>);

impl<'de> Deserialize<'de> for CappedRecords {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Records;

        impl<'de> Visitor<'de> for Records {
            type Value = Vec<ValuationRecord>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a list of {agent, bundle, value} records")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some(rec) = seq.next_element()? {
                    if out.len() == MAX_VALUATION_ENTRIES {
                        return Err(de::Error::custom(format!(
                            "more than {MAX_VALUATION_ENTRIES} valuation records"
                        )));
                    }
                    out.push(rec);
                }
                Ok(out)
            }
        }

        d.deserialize_seq(Records).map(CappedRecords)
    }
}

/// Parses records and checks them against the market shape. Repeated
/// `(agent, bundle)` pairs and the empty bundle are errors.
pub fn parse_records(records: &[ValuationRecord], agents: usize, items: usize) -> anyhow::Result<ValuationProfile> {
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate() {
        if rec.agent >= agents {
            bail!("record {k}: agent {} out of range (n = {agents})", rec.agent);
        }
        if let Some(&item) = rec.bundle.iter().find(|&&j| j >= items) {
            bail!("record {k}: item {item} out of range (m = {items})");
        }
        let x = Bundle::from_items(rec.bundle.iter().copied()).with_context(|| format!("record {k}"))?;
        if x.is_empty() {
            bail!("record {k}: the empty bundle has no value entry");
        }
        if !seen.insert((rec.agent, x)) {
            bail!("record {k}: duplicate entry for agent {} and bundle {:?}", rec.agent, rec.bundle);
        }
        entries.push((rec.agent, x, rec.value));
    }
    Ok(ValuationProfile::from_entries(agents, items, entries)?)
}

pub fn load_valuations(path: &Path, agents: usize, items: usize) -> anyhow::Result<ValuationProfile> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let CappedRecords(records) = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse {}", path.display()))?;
    parse_records(&records, agents, items).with_context(|| path.display().to_string())
}

/// One record per agent and bundle of `bundles`, zeros included.
pub fn valuation_records(v: &ValuationProfile, bundles: &[Bundle]) -> Vec<ValuationRecord> {
    (0..v.agents())
        .flat_map(|agent| {
            bundles.iter().map(move |&x| ValuationRecord { agent, bundle: x.into(), value: v.value(agent, x) })
        })
        .collect()
}

pub fn write_valuations(path: &Path, v: &ValuationProfile, bundles: &[Bundle]) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, &valuation_records(v, bundles))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

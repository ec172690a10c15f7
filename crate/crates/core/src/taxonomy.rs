//! Taxonomy records and the `taxon_id,scientific_name,common_name,rank,ancestry` CSV.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rank {
    Kingdom,
    Phylum,
    Class,
    Order,
    Family,
    Genus,
    Species,
}

impl Rank {
    pub fn as_str(self) -> &'static str {
        match self {
            Rank::Kingdom => "kingdom",
            Rank::Phylum => "phylum",
            Rank::Class => "class",
            Rank::Order => "order",
            Rank::Family => "family",
            Rank::Genus => "genus",
            Rank::Species => "species",
        }
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rank {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "kingdom" => Rank::Kingdom,
            "phylum" => Rank::Phylum,
            "class" => Rank::Class,
            "order" => Rank::Order,
            "family" => Rank::Family,
            "genus" => Rank::Genus,
            "species" => Rank::Species,
            other => return Err(Error::InvalidArgument(format!("unknown rank {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonRecord {
    pub taxon_id: i64,
    pub scientific_name: String,
    pub common_name: Option<String>,
    pub rank: Rank,
    /// Root first, immediate parent last.
    pub ancestor_ids: Vec<i64>,
}

/// A taxonomy table keyed by taxon id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Taxonomy {
    records: BTreeMap<i64, TaxonRecord>,
}

#[derive(Deserialize)]
struct TaxonRow {
    taxon_id: i64,
    scientific_name: String,
    common_name: Option<String>,
    rank: String,
    ancestry: Option<String>,
}

impl Taxonomy {
    pub fn from_records(records: impl IntoIterator<Item = TaxonRecord>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for r in records {
            let mut seen = HashSet::new();
            if r.ancestor_ids.iter().any(|a| *a == r.taxon_id || !seen.insert(*a)) {
                return Err(Error::InvalidInput(format!(
                    "ancestor chain of taxon {} is cyclic",
                    r.taxon_id
                )));
            }
            let id = r.taxon_id;
            if map.insert(id, r).is_some() {
                return Err(Error::InvalidInput(format!("duplicate taxon id {id}")));
            }
        }
        Ok(Taxonomy { records: map })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut records = Vec::new();
        for (i, row) in rdr.deserialize::<TaxonRow>().enumerate() {
            // header is line 1
            let line = i + 2;
            let row = row.map_err(|e| Error::parse_line(line, e.to_string()))?;
            let rank = row
                .rank
                .parse()
                .map_err(|e: Error| Error::parse_line(line, e.to_string()))?;
            let ancestor_ids = match row.ancestry.as_deref() {
                None | Some("") => Vec::new(),
                Some(a) => a
                    .split('/')
                    .map(|s| s.trim().parse::<i64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse_line(line, format!("bad ancestry {a:?}: {e}")))?,
            };
            records.push(TaxonRecord {
                taxon_id: row.taxon_id,
                scientific_name: row.scientific_name,
                common_name: row.common_name.filter(|c| !c.is_empty()),
                rank,
                ancestor_ids,
            });
        }
        Self::from_records(records)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::InvalidInput(e.to_string());
        w.write_record(["taxon_id", "scientific_name", "common_name", "rank", "ancestry"])
            .map_err(csv_err)?;
        for r in self.iter() {
            let ancestry: Vec<String> = r.ancestor_ids.iter().map(|a| a.to_string()).collect();
            w.write_record([
                r.taxon_id.to_string().as_str(),
                &r.scientific_name,
                r.common_name.as_deref().unwrap_or(""),
                r.rank.as_str(),
                &ancestry.join("/"),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, taxon_id: i64) -> Option<&TaxonRecord> {
        self.records.get(&taxon_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaxonRecord> {
        self.records.values()
    }
}

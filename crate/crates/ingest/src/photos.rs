//! Photo metadata rows: `photo_id,taxon_id,extension,quality_grade,license`.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ALLOWED_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityGrade {
    Research,
    NeedsId,
    Casual,
}

impl QualityGrade {
    pub fn as_str(self) -> &'static str {
        match self {
            QualityGrade::Research => "research",
            QualityGrade::NeedsId => "needs_id",
            QualityGrade::Casual => "casual",
        }
    }
}

impl FromStr for QualityGrade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "research" => Ok(QualityGrade::Research),
            "needs_id" => Ok(QualityGrade::NeedsId),
            "casual" => Ok(QualityGrade::Casual),
            other => Err(Error::InvalidArgument(format!("unknown quality grade {other:?}"))),
        }
    }
}

impl fmt::Display for QualityGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which quality grades enter a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QualityFilter {
    Any,
    #[default]
    Research,
    Only(QualityGrade),
}

impl QualityFilter {
    pub fn accepts(self, grade: QualityGrade) -> bool {
        match self {
            QualityFilter::Any => true,
            QualityFilter::Research => grade == QualityGrade::Research,
            QualityFilter::Only(g) => grade == g,
        }
    }
}

impl FromStr for QualityFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "any" => Ok(QualityFilter::Any),
            "research" => Ok(QualityFilter::Research),
            other => other.parse().map(QualityFilter::Only),
        }
    }
}

impl fmt::Display for QualityFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QualityFilter::Any => f.write_str("any"),
            QualityFilter::Research => f.write_str("research"),
            QualityFilter::Only(g) => g.fmt(f),
        }
    }
}

impl Serialize for QualityFilter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QualityFilter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One row of the input photo table, before extension checks.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PhotoRow {
    pub photo_id: i64,
    pub taxon_id: i64,
    pub extension: String,
    #[serde(deserialize_with = "grade_from_str")]
    pub quality_grade: QualityGrade,
    #[serde(default)]
    pub license: String,
}

fn grade_from_str<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<QualityGrade, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

/// A downloadable photo.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotoRecord {
    pub photo_id: i64,
    pub taxon_id: i64,
    pub extension: String,
    pub quality_grade: QualityGrade,
    pub license: String,
    pub url_path: String,
}

impl PhotoRecord {
    /// Normalizes the extension; `None` when it is not an allowed image type.
    pub fn from_row(row: &PhotoRow) -> Option<PhotoRecord> {
        let extension = row.extension.trim().trim_start_matches('.').to_ascii_lowercase();
        if !ALLOWED_EXTENSIONS.contains(&extension.as_str()) {
            return None;
        }
        Some(PhotoRecord {
            photo_id: row.photo_id,
            taxon_id: row.taxon_id,
            url_path: format!("photos/{}/original.{extension}", row.photo_id),
            extension,
            quality_grade: row.quality_grade,
            license: row.license.clone(),
        })
    }

    /// `<taxon_id>/<photo_id>.<ext>` below the destination root.
    pub fn relative_path(&self) -> String {
        format!("{}/{}.{}", self.taxon_id, self.photo_id, self.extension)
    }
}

/// Reads the photo table by header name; extra columns are ignored.
pub fn read_photos<R: Read>(reader: R) -> Result<Vec<PhotoRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        let row: PhotoRow = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

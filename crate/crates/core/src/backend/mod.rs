//! Producers of logits and features.
//!
//! Native model execution is out of scope: logits come from files written by
//! an external classifier, from features pushed through a linear head, or
//! from the seeded synthetic generator used as a test oracle.

pub mod formats;
pub mod synthetic;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use formats::TableFormat;
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::{ClassifierHead, Error, FeatureTable, LogitTable, Result};

/// Read a logit table; `None` sniffs the format from the file's magic bytes.
pub fn load_logits(path: impl AsRef<Path>, format: Option<TableFormat>) -> Result<LogitTable> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => TableFormat::sniff(path)?,
    };
    formats::read_logits(File::open(path)?, format)
}

pub fn write_logits(path: impl AsRef<Path>, table: &LogitTable, format: TableFormat) -> Result<()> {
    formats::write_logits(BufWriter::new(File::create(path)?), table, format)
}

pub fn load_features(path: impl AsRef<Path>, format: Option<TableFormat>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => TableFormat::sniff(path)?,
    };
    formats::read_features(File::open(path)?, format)
}

pub fn write_features(path: impl AsRef<Path>, table: &FeatureTable, format: TableFormat) -> Result<()> {
    formats::write_features(BufWriter::new(File::create(path)?), table, format)
}

pub fn load_head(path: impl AsRef<Path>) -> Result<ClassifierHead> {
    formats::read_head(File::open(path)?)
}

pub fn write_head(path: impl AsRef<Path>, head: &ClassifierHead) -> Result<()> {
    formats::write_head(File::create(path)?, head)
}

/// Where a [`LogitTable`] comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendDescriptor {
    LogitFile {
        path: PathBuf,
        format: Option<TableFormat>,
    },
    FeatureFilePlusHead {
        features: PathBuf,
        head: PathBuf,
    },
    Synthetic(SyntheticSpec),
}

impl BackendDescriptor {
    pub fn load(&self) -> Result<LogitTable> {
        match self {
            BackendDescriptor::LogitFile { path, format } => load_logits(path, *format),
            BackendDescriptor::FeatureFilePlusHead { features, head } => {
                let head = load_head(head)?;
                let features = load_features(features, None)?;
                if features.dim() != head.dim() {
                    return Err(Error::InvalidInput(format!(
                        "features have dimension {}, head expects {}",
                        features.dim(),
                        head.dim()
                    )));
                }
                head.logit_table(&features)
            }
            BackendDescriptor::Synthetic(spec) => {
                let (features, head) = generate_synthetic(spec)?;
                head.logit_table(&features)
            }
        }
    }
}

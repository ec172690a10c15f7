//! Dataset ingestion: filter a taxonomy to a clade, plan a manifest of photos,
//! and fetch them concurrently with resume, rate limiting and verification.

pub mod download;
mod error;
pub mod filter;
pub mod manifest;
#[cfg(feature = "mock-server")]
pub mod mock;
pub mod photos;

pub use download::{download, verify, DownloadConfig, DownloadSummary, VerifyReport};
pub use error::{Error, Result};
pub use filter::filter_taxa;
pub use manifest::{build_manifest, DownloadManifest, ManifestEntry, ManifestStore, RecordState};
pub use photos::{read_photos, PhotoRecord, PhotoRow, QualityFilter, QualityGrade};

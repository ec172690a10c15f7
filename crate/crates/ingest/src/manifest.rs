//! Newline-delimited manifest with an append-only journal of state changes.
//!
//! The first line is a header; each following line is one photo with its
//! state. During a run, state changes go to `<manifest>.journal`; compaction
//! rewrites the manifest through a temporary file and an atomic rename, then
//! drops the journal.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trustgate_core::Rank;

use crate::photos::{PhotoRecord, PhotoRow, QualityFilter};
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterDescription {
    pub clade: Option<i64>,
    pub rank: Option<Rank>,
    pub quality: QualityFilter,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RecordState {
    #[default]
    Pending,
    Done { checksum: String },
    Failed { reason: String, attempts: u32 },
}

impl RecordState {
    pub fn is_pending(&self) -> bool {
        matches!(self, RecordState::Pending)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub record: PhotoRecord,
    pub state: RecordState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StateCounts {
    pub pending: usize,
    pub done: usize,
    pub failed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    filter: FilterDescription,
    records: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalLine {
    photo_id: i64,
    state: RecordState,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DownloadManifest {
    pub filter: FilterDescription,
    pub entries: Vec<ManifestEntry>,
}

/// Result of [`build_manifest`], with counts of dropped input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestBuild {
    pub manifest: DownloadManifest,
    pub duplicates: usize,
    pub unsupported_extensions: usize,
}

/// Photos whose taxon is in `taxa` and whose grade passes `quality`, ordered
/// by `(taxon_id, photo_id)`. Repeated photo ids keep their first row.
pub fn build_manifest(rows: &[PhotoRow], taxa: &BTreeSet<i64>, quality: QualityFilter) -> ManifestBuild {
    let mut seen = HashSet::new();
    let mut duplicates = 0;
    let mut unsupported_extensions = 0;
    let mut entries = Vec::new();
    for row in rows {
        if !seen.insert(row.photo_id) {
            duplicates += 1;
            continue;
        }
        if !taxa.contains(&row.taxon_id) || !quality.accepts(row.quality_grade) {
            continue;
        }
        match PhotoRecord::from_row(row) {
            Some(record) => entries.push(ManifestEntry {
                record,
                state: RecordState::Pending,
            }),
            None => unsupported_extensions += 1,
        }
    }
    if duplicates > 0 {
        tracing::warn!(duplicates, "duplicate photo ids dropped");
    }
    entries.sort_by_key(|e| (e.record.taxon_id, e.record.photo_id));
    ManifestBuild {
        manifest: DownloadManifest {
            filter: FilterDescription {
                clade: None,
                rank: None,
                quality,
            },
            entries,
        },
        duplicates,
        unsupported_extensions,
    }
}

impl DownloadManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self) -> StateCounts {
        let mut c = StateCounts::default();
        for e in &self.entries {
            match e.state {
                RecordState::Pending => c.pending += 1,
                RecordState::Done { .. } => c.done += 1,
                RecordState::Failed { .. } => c.failed += 1,
            }
        }
        c
    }

    pub fn entry(&self, photo_id: i64) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.record.photo_id == photo_id)
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            version: MANIFEST_VERSION,
            filter: self.filter.clone(),
            records: self.entries.len(),
        };
        let json_err = |e: serde_json::Error| Error::InvalidArgument(e.to_string());
        writeln!(w, "{}", serde_json::to_string(&header).map_err(json_err)?).map_err(Error::io("<manifest>"))?;
        for e in &self.entries {
            writeln!(w, "{}", serde_json::to_string(e).map_err(json_err)?).map_err(Error::io("<manifest>"))?;
        }
        w.flush().map_err(Error::io("<manifest>"))
    }

    pub fn read_ndjson<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let parse = |line: u64, e: serde_json::Error| Error::Parse {
            line,
            message: e.to_string(),
        };
        let first = lines
            .next()
            .ok_or(Error::Parse {
                line: 1,
                message: "empty manifest".into(),
            })?
            .map_err(Error::io("<manifest>"))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| parse(1, e))?;
        if header.version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: MANIFEST_VERSION,
            });
        }
        let mut entries = Vec::with_capacity(header.records);
        let mut ids = HashSet::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(Error::io("<manifest>"))?;
            let n = i as u64 + 2;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| parse(n, e))?;
            if !ids.insert(entry.record.photo_id) {
                return Err(Error::Parse {
                    line: n,
                    message: format!("duplicate photo id {}", entry.record.photo_id),
                });
            }
            entries.push(entry);
        }
        if entries.len() != header.records {
            return Err(Error::Parse {
                line: entries.len() as u64 + 1,
                message: format!("header declares {} records, found {}", header.records, entries.len()),
            });
        }
        Ok(DownloadManifest {
            filter: header.filter,
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_ndjson(File::open(path).map_err(Error::io(path))?)
    }

    /// Writes through a sibling temporary file and renames it into place.
    pub fn save_atomic(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = sibling(path, ".tmp");
        let file = File::create(&tmp).map_err(Error::io(&tmp))?;
        let mut w = BufWriter::new(file);
        self.write_ndjson(&mut w)?;
        let file = w.into_inner().map_err(|e| Error::io(&tmp)(e.into_error()))?;
        file.sync_all().map_err(Error::io(&tmp))?;
        fs::rename(&tmp, path).map_err(Error::io(path))
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn journal_path(manifest: &Path) -> PathBuf {
    sibling(manifest, ".journal")
}

/// A manifest on disk plus its journal; the single writer of record state.
#[derive(Debug)]
pub struct ManifestStore {
    path: PathBuf,
    manifest: DownloadManifest,
    index: HashMap<i64, usize>,
    journal: Option<File>,
}

impl ManifestStore {
    pub fn create(path: impl Into<PathBuf>, manifest: DownloadManifest) -> Result<Self> {
        let path = path.into();
        manifest.save_atomic(&path)?;
        let journal = journal_path(&path);
        if journal.exists() {
            fs::remove_file(&journal).map_err(Error::io(&journal))?;
        }
        Ok(Self::from_parts(path, manifest))
    }

    /// Loads the manifest and replays any journal left by an interrupted run.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let manifest = DownloadManifest::load(&path)?;
        let mut store = Self::from_parts(path, manifest);
        let journal = journal_path(&store.path);
        match fs::read(&journal) {
            Ok(bytes) => store.replay(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(&journal)(e)),
        }
        Ok(store)
    }

    fn from_parts(path: PathBuf, manifest: DownloadManifest) -> Self {
        let index = manifest
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.record.photo_id, i))
            .collect();
        ManifestStore {
            path,
            manifest,
            index,
            journal: None,
        }
    }

    fn replay(&mut self, bytes: &[u8]) -> Result<()> {
        let text = String::from_utf8_lossy(bytes);
        let complete = text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<JournalLine>(line) {
                Ok(j) => self.apply(j.photo_id, j.state)?,
                // a crash mid-append leaves at most one partial trailing line
                Err(_) if i + 1 == lines.len() && !complete => {
                    tracing::warn!("ignoring truncated journal tail");
                }
                Err(e) => {
                    return Err(Error::Parse {
                        line: i as u64 + 1,
                        message: format!("journal: {e}"),
                    })
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, photo_id: i64, state: RecordState) -> Result<()> {
        let &i = self
            .index
            .get(&photo_id)
            .ok_or_else(|| Error::InvalidArgument(format!("photo {photo_id} is not in the manifest")))?;
        let current = &mut self.manifest.entries[i].state;
        if *current == state {
            return Ok(());
        }
        if !current.is_pending() {
            return Err(Error::InvalidArgument(format!(
                "photo {photo_id}: state is final ({current:?})"
            )));
        }
        *current = state;
        Ok(())
    }

    pub fn manifest(&self) -> &DownloadManifest {
        &self.manifest
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends the change to the journal, then applies it in memory.
    pub fn update(&mut self, photo_id: i64, state: RecordState) -> Result<()> {
        if self.journal.is_none() {
            let p = journal_path(&self.path);
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(Error::io(&p))?;
            self.journal = Some(f);
        }
        let line = serde_json::to_string(&JournalLine {
            photo_id,
            state: state.clone(),
        })
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        self.apply(photo_id, state)?;
        let f = self.journal.as_mut().expect("journal opened above");
        f.write_all(format!("{line}\n").as_bytes())
            .map_err(Error::io(journal_path(&self.path)))
    }

    /// Folds the journal into the manifest file.
    pub fn compact(&mut self) -> Result<()> {
        self.journal = None;
        self.manifest.save_atomic(&self.path)?;
        let p = journal_path(&self.path);
        match fs::remove_file(&p) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(&p)(e)),
            _ => Ok(()),
        }
    }

    pub fn into_manifest(self) -> DownloadManifest {
        self.manifest
    }
}

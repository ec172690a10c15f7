//! Bounded-concurrency, rate-limited, retrying transfers.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tokio::sync::{Mutex, Semaphore};
use tokio::task::JoinSet;
use tokio::time::Instant;

use crate::manifest::{DownloadManifest, ManifestStore, RecordState};
use crate::photos::PhotoRecord;
use crate::{Error, Result};

pub const DEFAULT_BASE_URL: &str = "https://inaturalist-open-data.s3.amazonaws.com";
pub const DEFAULT_URL_TEMPLATE: &str = "{base}/photos/{photo_id}/original.{ext}";
/// Overrides [`DEFAULT_BASE_URL`].
pub const BASE_URL_ENV: &str = "TRUSTGATE_BASE_URL";

#[derive(Debug, Clone)]
pub struct DownloadConfig {
    pub base_url: String,
    /// Placeholders: `{base}`, `{photo_id}`, `{taxon_id}`, `{ext}`.
    pub url_template: String,
    pub concurrency: usize,
    /// Requests per second; infinite disables limiting.
    pub rate_limit: f64,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl DownloadConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        DownloadConfig {
            base_url: base_url.into(),
            url_template: DEFAULT_URL_TEMPLATE.into(),
            concurrency: 8,
            rate_limit: 20.0,
            max_attempts: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(60),
        }
    }

    /// Base URL from the environment, falling back to the public bucket.
    pub fn from_env() -> Self {
        Self::new(std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.into()))
    }

    pub fn url_for(&self, r: &PhotoRecord) -> String {
        self.url_template
            .replace("{base}", self.base_url.trim_end_matches('/'))
            .replace("{photo_id}", &r.photo_id.to_string())
            .replace("{taxon_id}", &r.taxon_id.to_string())
            .replace("{ext}", &r.extension)
    }

    fn validate(&self) -> Result<()> {
        if self.concurrency == 0 {
            return Err(Error::InvalidArgument("concurrency must be at least 1".into()));
        }
        if self.rate_limit.is_nan() || self.rate_limit <= 0.0 {
            return Err(Error::InvalidArgument("rate limit must be positive".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidArgument("attempt cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Token bucket holding at most one second of tokens.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    bucket: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(rate: f64) -> Self {
        RateLimiter {
            rate,
            bucket: Mutex::new((rate.max(1.0), Instant::now())),
        }
    }

    fn capacity(&self) -> f64 {
        self.rate.max(1.0)
    }

    pub async fn acquire(&self) {
        if self.rate.is_infinite() {
            return;
        }
        // waiters queue on the fair mutex, so tokens go out in arrival order
        let mut guard = self.bucket.lock().await;
        let (tokens, last) = &mut *guard;
        let refill = |tokens: &mut f64, last: &mut Instant| {
            let now = Instant::now();
            *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate).min(self.capacity());
            *last = now;
        };
        refill(tokens, last);
        if *tokens < 1.0 {
            tokio::time::sleep(Duration::from_secs_f64((1.0 - *tokens) / self.rate)).await;
            refill(tokens, last);
        }
        *tokens -= 1.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DownloadSummary {
    /// Records already done or failed before this run.
    pub skipped: usize,
    pub done: usize,
    pub failed: usize,
    /// HTTP requests issued, retries included.
    pub requests: usize,
}

enum Outcome {
    Done { photo_id: i64, checksum: String, requests: usize },
    Failed { photo_id: i64, reason: String, attempts: u32 },
    Local(Error),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fetches every pending record into `<dest>/<taxon_id>/<photo_id>.<ext>`.
///
/// Each finished record is journaled before the next transfer starts, so
/// an interrupted run resumes without refetching completed records. A
/// local I/O failure aborts the run; the manifest keeps all progress made.
pub async fn download(store: &mut ManifestStore, dest: &Path, cfg: &DownloadConfig) -> Result<DownloadSummary> {
    cfg.validate()?;
    let pending: Vec<PhotoRecord> = store
        .manifest()
        .entries
        .iter()
        .filter(|e| e.state.is_pending())
        .map(|e| e.record.clone())
        .collect();
    let mut summary = DownloadSummary {
        skipped: store.manifest().len() - pending.len(),
        ..Default::default()
    };
    if pending.is_empty() {
        store.compact()?;
        return Ok(summary);
    }

    let client = reqwest::Client::builder().timeout(cfg.timeout).build()?;
    let slots = Arc::new(Semaphore::new(cfg.concurrency));
    let limiter = Arc::new(RateLimiter::new(cfg.rate_limit));
    let mut tasks = JoinSet::new();
    let total = pending.len();
    let mut aborted = None;

    for record in pending {
        let permit = slots.clone().acquire_owned().await.expect("semaphore never closed");
        while let Some(joined) = tasks.try_join_next() {
            if let Err(e) = settle(store, joined, &mut summary, total) {
                aborted = Some(e);
                break;
            }
        }
        if aborted.is_some() {
            break;
        }
        let url = cfg.url_for(&record);
        let target = dest.join(record.relative_path());
        let (client, limiter, cfg) = (client.clone(), limiter.clone(), cfg.clone());
        tasks.spawn(async move {
            let out = transfer(&client, &limiter, &cfg, &record, &url, &target).await;
            drop(permit);
            out
        });
    }
    if aborted.is_some() {
        tasks.abort_all();
    }
    while let Some(joined) = tasks.join_next().await {
        if aborted.is_some() {
            continue;
        }
        if let Err(e) = settle(store, joined, &mut summary, total) {
            aborted = Some(e);
            tasks.abort_all();
        }
    }
    let compacted = store.compact();
    match aborted {
        Some(e) => Err(e),
        None => compacted.map(|_| summary),
    }
}

fn settle(
    store: &mut ManifestStore,
    joined: std::result::Result<Outcome, tokio::task::JoinError>,
    summary: &mut DownloadSummary,
    total: usize,
) -> Result<()> {
    match joined {
        Ok(Outcome::Done {
            photo_id,
            checksum,
            requests,
        }) => {
            summary.done += 1;
            summary.requests += requests;
            store.update(photo_id, RecordState::Done { checksum })?;
        }
        Ok(Outcome::Failed {
            photo_id,
            reason,
            attempts,
        }) => {
            tracing::warn!(photo_id, %reason, attempts, "download failed");
            summary.failed += 1;
            summary.requests += attempts as usize;
            store.update(photo_id, RecordState::Failed { reason, attempts })?;
        }
        Ok(Outcome::Local(e)) => return Err(e),
        Err(e) if e.is_cancelled() => {}
        Err(e) => std::panic::resume_unwind(e.into_panic()),
    }
    let finished = summary.done + summary.failed;
    if finished.is_multiple_of(100) || finished == total {
        tracing::info!(finished, total, "progress");
    }
    Ok(())
}

async fn transfer(
    client: &reqwest::Client,
    limiter: &RateLimiter,
    cfg: &DownloadConfig,
    record: &PhotoRecord,
    url: &str,
    target: &Path,
) -> Outcome {
    let photo_id = record.photo_id;
    let mut reason = String::new();
    for attempt in 1..=cfg.max_attempts {
        if attempt > 1 {
            tokio::time::sleep(cfg.backoff * 2u32.saturating_pow(attempt - 2)).await;
        }
        limiter.acquire().await;
        let retryable = match client.get(url).send().await {
            Ok(resp) if resp.status().is_success() => match resp.bytes().await {
                Ok(bytes) => {
                    return match store_file(target, &bytes).await {
                        Ok(()) => Outcome::Done {
                            photo_id,
                            checksum: sha256_hex(&bytes),
                            requests: attempt as usize,
                        },
                        Err(e) => Outcome::Local(e),
                    };
                }
                Err(e) => {
                    reason = format!("body: {e}");
                    true
                }
            },
            Ok(resp) => {
                let status = resp.status();
                reason = format!("http {}", status.as_u16());
                status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS
            }
            Err(e) => {
                reason = format!("transport: {e}");
                true
            }
        };
        if !retryable {
            return Outcome::Failed {
                photo_id,
                reason,
                attempts: attempt,
            };
        }
    }
    Outcome::Failed {
        photo_id,
        reason,
        attempts: cfg.max_attempts,
    }
}

async fn store_file(target: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = target.parent() {
        tokio::fs::create_dir_all(dir).await.map_err(Error::io(dir))?;
    }
    let mut part = target.as_os_str().to_os_string();
    part.push(".part");
    let part = PathBuf::from(part);
    tokio::fs::write(&part, bytes).await.map_err(Error::io(&part))?;
    tokio::fs::rename(&part, target).await.map_err(Error::io(target))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct VerifyReport {
    pub ok: usize,
    pub missing: usize,
    pub corrupt: usize,
    /// Records never downloaded (pending or failed); not checked.
    pub not_done: usize,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.missing == 0 && self.corrupt == 0
    }
}

/// Recomputes the checksum of every done record's file.
pub fn verify(manifest: &DownloadManifest, dest: &Path) -> VerifyReport {
    let mut report = VerifyReport::default();
    for e in &manifest.entries {
        let RecordState::Done { checksum } = &e.state else {
            report.not_done += 1;
            continue;
        };
        match std::fs::read(dest.join(e.record.relative_path())) {
            Ok(bytes) if sha256_hex(&bytes) == *checksum => report.ok += 1,
            Ok(_) => report.corrupt += 1,
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => report.missing += 1,
            Err(_) => report.corrupt += 1,
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photos::QualityGrade;

    fn record(id: i64, ext: &str) -> PhotoRecord {
        PhotoRecord {
            photo_id: id,
            taxon_id: 3,
            extension: ext.into(),
            quality_grade: QualityGrade::Research,
            license: String::new(),
            url_path: String::new(),
        }
    }

    #[test]
    fn url_template() {
        let cfg = DownloadConfig::new("http://h:1/");
        assert_eq!(cfg.url_for(&record(42, "png")), "http://h:1/photos/42/original.png");
    }

    #[test]
    fn checksum_is_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[tokio::test(start_paused = true)]
    async fn token_bucket_pacing() {
        let limiter = RateLimiter::new(10.0);
        let start = Instant::now();
        for _ in 0..30 {
            limiter.acquire().await;
        }
        // ten tokens up front, then one every 100 ms
        let secs = start.elapsed().as_secs_f64();
        assert!((1.9..2.2).contains(&secs), "{secs}");
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = DownloadConfig::new("x");
        cfg.concurrency = 0;
        assert!(cfg.validate().is_err());
        cfg.concurrency = 1;
        cfg.rate_limit = 0.0;
        assert!(cfg.validate().is_err());
    }
}

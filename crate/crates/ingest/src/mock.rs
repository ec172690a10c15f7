//! Instrumented in-process photo server for tests.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::get;
use axum::Router;

/// Deterministic body served for a photo id.
pub fn mock_body(photo_id: i64) -> Vec<u8> {
    let len = 512 + (photo_id.unsigned_abs() % 7) as usize * 256;
    let seed = photo_id as u64;
    (0..len as u64)
        .map(|i| (seed.wrapping_mul(0x9e37_79b9).wrapping_add(i * 31) >> 3) as u8)
        .collect()
}

#[derive(Debug, Default, Clone)]
pub struct MockOptions {
    /// Ids answered with 404.
    pub missing: HashSet<i64>,
    /// Ids answered with 503 for this many requests before succeeding.
    pub flaky: HashMap<i64, usize>,
    /// Time each response is held open.
    pub delay: Duration,
}

#[derive(Debug, Default)]
pub struct MockStats {
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    requests: AtomicUsize,
    hits: Mutex<HashMap<i64, usize>>,
}

impl MockStats {
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// Requests seen per photo id.
    pub fn hits(&self) -> HashMap<i64, usize> {
        self.hits.lock().unwrap().clone()
    }
}

struct Shared {
    opts: MockOptions,
    stats: Arc<MockStats>,
}

struct InFlight<'a>(&'a MockStats);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn photo(State(s): State<Arc<Shared>>, Path((id, file)): Path<(i64, String)>) -> (StatusCode, Vec<u8>) {
    let stats = &s.stats;
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    let _guard = InFlight(stats);
    stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
    stats.requests.fetch_add(1, Ordering::SeqCst);
    let seen = {
        let mut hits = stats.hits.lock().unwrap();
        let n = hits.entry(id).or_default();
        *n += 1;
        *n
    };
    if !s.opts.delay.is_zero() {
        tokio::time::sleep(s.opts.delay).await;
    }
    if !file.starts_with("original.") || s.opts.missing.contains(&id) {
        return (StatusCode::NOT_FOUND, Vec::new());
    }
    if s.opts.flaky.get(&id).is_some_and(|&n| seen <= n) {
        return (StatusCode::SERVICE_UNAVAILABLE, Vec::new());
    }
    (StatusCode::OK, mock_body(id))
}

pub struct MockServer {
    addr: SocketAddr,
    stats: Arc<MockStats>,
    task: tokio::task::JoinHandle<()>,
}

impl MockServer {
    /// Binds an ephemeral localhost port on the current runtime.
    pub async fn start(opts: MockOptions) -> std::io::Result<MockServer> {
        let stats = Arc::new(MockStats::default());
        let shared = Arc::new(Shared {
            opts,
            stats: stats.clone(),
        });
        let app = Router::new()
            .route("/photos/{id}/{file}", get(photo))
            .with_state(shared);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        Ok(MockServer { addr, stats, task })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> &MockStats {
        &self.stats
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

//! Blocking HTTP plumbing shared by the index client and the fetcher:
//! exponential backoff, a token-bucket rate limiter, per-host throttling, and
//! a small transport trait so tests can script responses.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("request to {url} failed: {reason}")]
    Io { url: String, reason: String },
    #[error("network access disabled (offline mode) for {url}")]
    Offline { url: String },
}

/// A fully buffered response. Redirects are never followed by the transport.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub location: Option<String>,
    pub body: Vec<u8>,
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError>;
}

/// `ureq`-backed transport with redirects disabled.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .max_redirects(0)
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .user_agent("archive-census/0.1")
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout { url: url.to_string() },
            other => TransportError::Io {
                url: url.to_string(),
                reason: other.to_string(),
            },
        };
        let mut resp = self.agent.get(url).call().map_err(map_err)?;
        let status = resp.status().as_u16();
        let location = resp
            .headers()
            .get("location")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(map_err)?;
        Ok(HttpResponse { status, location, body })
    }
}

/// Transport that refuses every request; used for fixture-only runs.
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        Err(TransportError::Offline { url: url.to_string() })
    }
}

/// Exponential backoff: `base * factor^n`, capped, for a bounded number of
/// attempts (the first try counts as an attempt).
#[derive(Clone, Debug, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
    pub max_attempts: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base: Duration::from_secs(1),
            factor: 2.0,
            cap: Duration::from_secs(60),
            max_attempts: 6,
        }
    }
}

impl Backoff {
    /// Delay to sleep after failed attempt number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let secs = self.base.as_secs_f64() * self.factor.powi(attempt as i32);
        Duration::from_secs_f64(secs.min(self.cap.as_secs_f64()))
    }

    /// No waiting between attempts; handy in tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Backoff {
            base: Duration::ZERO,
            factor: 1.0,
            cap: Duration::ZERO,
            max_attempts,
        }
    }
}

/// Token bucket with capacity one: successive acquisitions are spaced by at
/// least `1 / rate` seconds.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_free: Mutex<Option<Instant>>,
}

impl RateLimiter {
    /// `rate` in requests per second; non-positive means unlimited.
    pub fn new(rate: f64) -> Self {
        let interval = if rate > 0.0 {
            Duration::from_secs_f64(1.0 / rate)
        } else {
            Duration::ZERO
        };
        RateLimiter {
            interval,
            next_free: Mutex::new(None),
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next_free.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// In-flight lock and spacing limiter for one host.
type HostGate = Arc<(Mutex<()>, RateLimiter)>;

/// Per-host request gate: one in-flight request per host, and a minimum
/// spacing between requests to the same host. Clone to share.
#[derive(Clone, Debug, Default)]
pub struct HostThrottle {
    rate: f64,
    hosts: Arc<Mutex<HashMap<String, HostGate>>>,
}

impl HostThrottle {
    pub fn new(rate: f64) -> Self {
        HostThrottle {
            rate,
            hosts: Arc::default(),
        }
    }

    /// Runs `f` while holding the host's slot.
    pub fn with_host<T>(&self, url: &str, f: impl FnOnce() -> T) -> T {
        let host = host_of(url);
        let gate = {
            let mut hosts = self.hosts.lock().expect("throttle poisoned");
            hosts
                .entry(host)
                .or_insert_with(|| Arc::new((Mutex::new(()), RateLimiter::new(self.rate))))
                .clone()
        };
        let _inflight = gate.0.lock().expect("host gate poisoned");
        gate.1.acquire();
        f()
    }
}

pub fn host_of(url: &str) -> String {
    let rest = url.split_once("://").map(|(_, r)| r).unwrap_or(url);
    rest.split(['/', '?', '#']).next().unwrap_or("").to_ascii_lowercase()
}

//! Source adapters: pull normalized items from an external feed.
//!
//! Adapters only fetch; persisting is always a separate `put_items` call so
//! a flaky feed can never half-write the store.

use std::path::Path;

use thiserror::Error;

use crate::time::DayRange;

use super::{RawItem, ReplayRecord};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("network: {0}")]
    Network(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited, retry after {retry_after_secs}s")]
    RateLimited { retry_after_secs: u64 },
    #[error("adapter config: {0}")]
    Config(String),
    #[error("malformed feed payload: {0}")]
    Payload(String),
}

pub trait SourceAdapter: Send + Sync {
    fn fetch(&self, window: &DayRange) -> Result<Vec<RawItem>, AdapterError>;
}

/// Fetch normalized items for `window`. Never writes to any store.
pub fn fetch_source(
    adapter: &dyn SourceAdapter,
    window: &DayRange,
) -> Result<Vec<RawItem>, AdapterError> {
    adapter.fetch(window)
}

/// Canned-record adapter for tests and offline runs.
pub struct MockAdapter {
    records: Vec<RawItem>,
}

impl MockAdapter {
    pub fn new(records: Vec<RawItem>) -> Self {
        Self { records }
    }
}

impl SourceAdapter for MockAdapter {
    fn fetch(&self, window: &DayRange) -> Result<Vec<RawItem>, AdapterError> {
        Ok(self
            .records
            .iter()
            .filter(|r| window.contains(r.published_at.date_naive()))
            .cloned()
            .collect())
    }
}

/// Key-value adapter config file: `endpoint`, `auth_token_env`, `poll_window_days`.
#[derive(Debug, Clone)]
pub struct AdapterConfig {
    pub endpoint: String,
    pub auth_token_env: Option<String>,
    pub poll_window_days: u32,
}

impl AdapterConfig {
    pub fn load(path: &Path) -> Result<Self, AdapterError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AdapterError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, AdapterError> {
        let mut endpoint = None;
        let mut auth_token_env = None;
        let mut poll_window_days = 1;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AdapterError::Config(format!("expected key=value, got {line:?}")))?;
            match key.trim() {
                "endpoint" => endpoint = Some(value.trim().to_string()),
                "auth_token_env" => auth_token_env = Some(value.trim().to_string()),
                "poll_window_days" => {
                    poll_window_days = value.trim().parse().map_err(|e| {
                        AdapterError::Config(format!("poll_window_days: {e}"))
                    })?;
                }
                other => return Err(AdapterError::Config(format!("unknown key {other:?}"))),
            }
        }
        Ok(Self {
            endpoint: endpoint.ok_or_else(|| AdapterError::Config("missing endpoint".into()))?,
            auth_token_env,
            poll_window_days,
        })
    }
}

/// HTTP adapter: GET `{endpoint}?start=...&end=...`, expecting one JSON
/// replay record per line (a JSON array also works).
pub struct HttpAdapter {
    config: AdapterConfig,
}

impl HttpAdapter {
    pub fn new(config: AdapterConfig) -> Self {
        Self { config }
    }

    fn token(&self) -> Result<Option<String>, AdapterError> {
        match &self.config.auth_token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| AdapterError::Auth(format!("env var {var} not set"))),
        }
    }
}

impl SourceAdapter for HttpAdapter {
    fn fetch(&self, window: &DayRange) -> Result<Vec<RawItem>, AdapterError> {
        let url = format!(
            "{}?start={}&end={}",
            self.config.endpoint, window.start, window.end
        );
        let mut req = ureq::get(&url);
        if let Some(token) = self.token()? {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let body = match req.call() {
            Ok(resp) => resp
                .into_string()
                .map_err(|e| AdapterError::Network(e.to_string()))?,
            Err(ureq::Error::Status(429, resp)) => {
                let retry_after_secs = resp
                    .header("Retry-After")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(60);
                return Err(AdapterError::RateLimited { retry_after_secs });
            }
            Err(ureq::Error::Status(code, resp)) if code == 401 || code == 403 => {
                return Err(AdapterError::Auth(format!(
                    "HTTP {code}: {}",
                    resp.into_string().unwrap_or_default()
                )));
            }
            Err(e) => return Err(AdapterError::Network(e.to_string())),
        };
        parse_feed(&body)
    }
}

fn parse_feed(body: &str) -> Result<Vec<RawItem>, AdapterError> {
    let trimmed = body.trim_start();
    let records: Vec<ReplayRecord> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| AdapterError::Payload(e.to_string()))?
    } else {
        let mut out = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(line)
                    .map_err(|e| AdapterError::Payload(format!("line {}: {e}", i + 1)))?,
            );
        }
        out
    };
    Ok(records.into_iter().map(RawItem::from).collect())
}

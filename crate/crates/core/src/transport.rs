//! Blocking JSON-over-HTTP helper shared by the remote policy and embedding adapters.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub url: String,
    pub timeout_ms: u64,
    /// Extra attempts after the first failure.
    pub retries: u32,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        HttpConfig {
            url: url.into(),
            timeout_ms: 30_000,
            retries: 2,
        }
    }
}

pub(crate) struct JsonClient {
    base: String,
    agent: ureq::Agent,
    retries: u32,
}

impl JsonClient {
    pub(crate) fn new(cfg: &HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        JsonClient {
            base: cfg.url.trim_end_matches('/').to_owned(),
            agent,
            retries: cfg.retries,
        }
    }

    fn with_retries<T>(&self, path: &str, mut call: impl FnMut(&str) -> std::result::Result<T, ureq::Error>) -> Result<T> {
        let url = format!("{}{}", self.base, path);
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match call(&url) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!("{url}: attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(Error::Transport {
            endpoint: url,
            attempts,
            message: last,
        })
    }

    pub(crate) fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.with_retries(path, |url| {
            self.agent.post(url).send_json(body)?.body_mut().read_json::<T>()
        })
    }

    pub(crate) fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.with_retries(path, |url| self.agent.get(url).call()?.body_mut().read_json::<T>())
    }
}

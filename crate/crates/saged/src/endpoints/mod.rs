//! Pluggable inference endpoints: chat, embeddings, classifiers and wiki
//! page fetching, plus deterministic mocks for offline runs.

pub mod http;
pub mod mock;

use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("http {status}: {message}")]
    Http { status: u16, message: String },
    #[error("network: {0}")]
    Network(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("endpoint failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
}

pub type EndpointResult<T> = std::result::Result<T, EndpointError>;

/// Sampling parameters attached to every chat call.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.7,
            max_tokens: 256,
            seed: None,
        }
    }
}

/// One chat-completion request.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    /// Empty system prompt means no system message is sent.
    pub system: &'a str,
    pub user: &'a str,
    pub params: &'a SamplingParams,
}

pub trait ChatClient: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> EndpointResult<String>;

    /// One-prompt probe used before a run starts.
    fn health_check(&self) -> EndpointResult<()> {
        let params = SamplingParams {
            max_tokens: 8,
            ..SamplingParams::default()
        };
        self.chat(&ChatRequest {
            system: "",
            user: "ping",
            params: &params,
        })
        .map(|_| ())
    }
}

pub trait EmbeddingClient: Send + Sync {
    fn embed(&self, texts: &[String]) -> EndpointResult<Vec<Vec<f64>>>;

    /// Stable identity used to key the on-disk embedding cache.
    fn cache_id(&self) -> String;

    fn embed_one(&self, text: &str) -> EndpointResult<Vec<f64>> {
        let mut vectors = self.embed(&[text.to_string()])?;
        vectors
            .pop()
            .ok_or_else(|| EndpointError::Protocol("empty embedding response".into()))
    }
}

pub trait ClassifierClient: Send + Sync {
    /// Scores in [0,1], one per input text, for the named feature.
    fn classify(&self, texts: &[String], feature: &str) -> EndpointResult<Vec<f64>>;
}

/// Plain-text page source with link structure (wiki-style).
pub trait PageFetcher: Send + Sync {
    /// `None` when the page does not exist.
    fn fetch_page(&self, title: &str) -> EndpointResult<Option<String>>;

    fn links(&self, _title: &str) -> EndpointResult<Vec<String>> {
        Ok(Vec::new())
    }

    fn backlinks(&self, _title: &str) -> EndpointResult<Vec<String>> {
        Ok(Vec::new())
    }
}

/// Retry with exponential backoff. Attempts include the first try.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            initial_delay: Duration::ZERO,
        }
    }

    /// Run `op` until it succeeds or attempts are exhausted. Returns the number
    /// of retries performed alongside the value.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> EndpointResult<T>,
    ) -> EndpointResult<(T, u32)> {
        let mut delay = self.initial_delay;
        let mut last: Option<EndpointError> = None;
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 && !delay.is_zero() {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match op() {
                Ok(v) => return Ok((v, attempt)),
                Err(e) => last = Some(e),
            }
        }
        Err(EndpointError::Exhausted {
            attempts: self.attempts.max(1),
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[test]
    fn retry_counts_and_succeeds() {
        let calls = AtomicU32::new(0);
        let policy = RetryPolicy::no_delay(3);
        let (value, retries) = policy
            .run(|| {
                let n = calls.fetch_add(1, Ordering::SeqCst);
                if n < 2 {
                    Err(EndpointError::Network("flaky".into()))
                } else {
                    Ok(42)
                }
            })
            .unwrap();
        assert_eq!(value, 42);
        assert_eq!(retries, 2);
    }

    #[test]
    fn retry_exhausts() {
        let policy = RetryPolicy::no_delay(3);
        let result: EndpointResult<(u32, u32)> =
            policy.run(|| Err(EndpointError::Network("down".into())));
        match result {
            Err(EndpointError::Exhausted { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected: {other:?}"),
        }
    }
}

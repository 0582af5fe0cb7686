//! Fixed-answer, unavailable and remote end-of-turn backends.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{EotBackend, EotDecision, EotError, EotLabel};

/// Always answers with the same label at full confidence.
#[derive(Debug, Clone, Copy)]
pub struct ConstantBackend(pub EotLabel);

#[async_trait]
impl EotBackend for ConstantBackend {
    async fn classify(&self, _transcript: &str) -> Result<EotDecision, EotError> {
        Ok(EotDecision::new(self.0, 1.0))
    }

    fn name(&self) -> &str {
        match self.0 {
            EotLabel::Finished => "always-finished",
            EotLabel::Unfinished => "always-unfinished",
        }
    }
}

/// A service that never answers: every call fails with a timeout after
/// `delay`. Used to exercise the silence-timeout fallback.
#[derive(Debug, Clone, Default)]
pub struct UnavailableBackend {
    pub delay: Duration,
}

#[async_trait]
impl EotBackend for UnavailableBackend {
    async fn classify(&self, _transcript: &str) -> Result<EotDecision, EotError> {
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        Err(EotError::Timeout(self.delay.as_millis() as u64))
    }

    fn name(&self) -> &str {
        "unavailable"
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    label: EotLabel,
    confidence: f64,
}

/// Client for an external classifier: `POST {"text"}` answered by
/// `{"label": "finished"|"unfinished", "confidence": p}`.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    client: reqwest::Client,
    url: String,
    timeout: Duration,
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            client: reqwest::Client::new(),
            url: url.into(),
            timeout,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

#[async_trait]
impl EotBackend for RemoteBackend {
    async fn classify(&self, transcript: &str) -> Result<EotDecision, EotError> {
        let timeout_ms = self.timeout.as_millis() as u64;
        let call = async {
            let resp = self
                .client
                .post(&self.url)
                .json(&RemoteRequest { text: transcript })
                .send()
                .await
                .and_then(reqwest::Response::error_for_status)
                .map_err(|e| {
                    if e.is_timeout() {
                        EotError::Timeout(timeout_ms)
                    } else {
                        EotError::Remote(e.to_string())
                    }
                })?;
            resp.json::<RemoteResponse>()
                .await
                .map_err(|e| EotError::Remote(format!("bad response body: {e}")))
        };
        let body = tokio::time::timeout(self.timeout, call)
            .await
            .map_err(|_| EotError::Timeout(timeout_ms))??;
        if !(0.0..=1.0).contains(&body.confidence) {
            return Err(EotError::Remote(format!(
                "confidence {} outside [0, 1]",
                body.confidence
            )));
        }
        Ok(EotDecision::new(body.label, body.confidence))
    }

    fn name(&self) -> &str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn constant_backend_ignores_text() {
        let b = ConstantBackend(EotLabel::Finished);
        assert!(b.classify("to").await.unwrap().is_finished());
    }

    #[tokio::test(start_paused = true)]
    async fn unavailable_backend_times_out_after_delay() {
        let b = UnavailableBackend {
            delay: Duration::from_millis(250),
        };
        let start = tokio::time::Instant::now();
        let err = b.classify("hello").await.unwrap_err();
        assert!(matches!(err, EotError::Timeout(250)));
        assert_eq!(start.elapsed(), Duration::from_millis(250));
    }
}

//! HTTP transport with bounded-exponential-backoff retries.
//!
//! Clients talk to a [`Transport`] trait object so tests can script
//! failure schedules without a network.

use super::ProviderError;
use serde_json::Value;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("network: {0}")]
    Network(String),
}

pub trait Transport: Send + Sync {
    /// POST a JSON body, returning the status code and raw response body.
    /// Non-2xx statuses are returned, not raised; retry policy lives above.
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<(u16, String), TransportError>;
}

/// Blocking transport over ureq.
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<(u16, String), TransportError> {
        let mut request = ureq::post(url)
            .timeout(timeout)
            .set("Content-Type", "application/json");
        if let Some(token) = bearer {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        match request.send_string(&body.to_string()) {
            Ok(response) => {
                let status = response.status();
                let text = response
                    .into_string()
                    .map_err(|e| TransportError::Network(e.to_string()))?;
                Ok((status, text))
            }
            Err(ureq::Error::Status(status, response)) => {
                let text = response.into_string().unwrap_or_default();
                Ok((status, text))
            }
            Err(ureq::Error::Transport(t)) => Err(TransportError::Network(t.to_string())),
        }
    }
}

/// Retry schedule: `max_retries` additional attempts after the first, with
/// delays `base * 2^attempt` capped at `max_delay`.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    pub fn new(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }

    pub fn with_base_delay(mut self, base: Duration) -> Self {
        self.base_delay = base;
        self
    }

    fn delay_for(&self, attempt: u32) -> Duration {
        let factor = 1u32 << attempt.min(16);
        (self.base_delay * factor).min(self.max_delay)
    }
}

fn is_retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..=599).contains(&status)
}

/// POST with retries on transport failures and retryable statuses.
/// Returns the successful body and the number of retries that were needed.
pub fn post_with_retries(
    transport: &dyn Transport,
    url: &str,
    bearer: Option<&str>,
    body: &Value,
    timeout: Duration,
    policy: RetryPolicy,
) -> Result<(String, u32), ProviderError> {
    let mut last_failure = String::new();
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            std::thread::sleep(policy.delay_for(attempt - 1));
            eprintln!("cfx: retrying request to {url} (retry {attempt}/{})", policy.max_retries);
        }
        match transport.post_json(url, bearer, body, timeout) {
            Ok((status, text)) if (200..300).contains(&status) => {
                return Ok((text, attempt));
            }
            Ok((status, text)) if status == 401 || status == 403 => {
                return Err(ProviderError::Auth(format!("http {status}: {text}")));
            }
            Ok((status, text)) if is_retryable_status(status) => {
                last_failure = format!("http {status}: {text}");
            }
            Ok((status, text)) => {
                return Err(ProviderError::Protocol(format!("http {status}: {text}")));
            }
            Err(TransportError::Network(message)) => {
                last_failure = message;
            }
        }
    }
    Err(ProviderError::Transport {
        attempts: policy.max_retries + 1,
        message: last_failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::FakeTransport;

    fn fast_policy(retries: u32) -> RetryPolicy {
        RetryPolicy::new(retries).with_base_delay(Duration::from_millis(1))
    }

    #[test]
    fn succeeds_after_two_retryable_failures() {
        let transport = FakeTransport::with_schedule(vec![
            Ok((429, "slow down".to_string())),
            Ok((429, "slow down".to_string())),
            Ok((200, "payload".to_string())),
        ]);
        let (body, retries) = post_with_retries(
            &transport,
            "http://example/api",
            None,
            &serde_json::json!({}),
            Duration::from_secs(1),
            fast_policy(3),
        )
        .unwrap();
        assert_eq!(body, "payload");
        assert_eq!(retries, 2);
        assert_eq!(transport.calls(), 3);
    }

    #[test]
    fn gives_up_after_budget() {
        let transport = FakeTransport::always(Ok((500, "boom".to_string())));
        let err = post_with_retries(
            &transport,
            "http://example/api",
            None,
            &serde_json::json!({}),
            Duration::from_secs(1),
            fast_policy(2),
        )
        .unwrap_err();
        match err {
            ProviderError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("unexpected: {other}"),
        }
        assert_eq!(transport.calls(), 3);
    }

    #[test]
    fn auth_failures_do_not_retry() {
        let transport = FakeTransport::always(Ok((401, "bad key".to_string())));
        let err = post_with_retries(
            &transport,
            "http://example/api",
            None,
            &serde_json::json!({}),
            Duration::from_secs(1),
            fast_policy(5),
        )
        .unwrap_err();
        assert!(matches!(err, ProviderError::Auth(_)));
        assert_eq!(transport.calls(), 1);
    }

    #[test]
    fn non_retryable_4xx_is_protocol_error() {
        let transport = FakeTransport::always(Ok((400, "bad request".to_string())));
        let err = post_with_retries(
            &transport,
            "http://example/api",
            None,
            &serde_json::json!({}),
            Duration::from_secs(1),
            fast_policy(5),
        )
        .unwrap_err();
        assert!(matches!(err, ProviderError::Protocol(_)));
        assert_eq!(transport.calls(), 1);
    }
}

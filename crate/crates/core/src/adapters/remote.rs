//! JSON-over-HTTP stage backend.
//!
//! `POST <endpoint>` with an [`AdapterRequest`] body; the service answers
//! 200 with an [`AdapterResponse`] only when every item succeeded.

use std::io::ErrorKind;
use std::time::Duration;

use ureq::Agent;

use super::{AdapterBinding, AdapterRequest, AdapterResponse, CallError, StageAdapter};

pub struct RemoteAdapter {
    adapter_id: String,
    endpoint: String,
    bearer_token: Option<String>,
    agent: Agent,
}

impl RemoteAdapter {
    pub fn new(binding: &AdapterBinding) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(binding.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteAdapter {
            adapter_id: binding.adapter_id.clone(),
            endpoint: binding.endpoint.clone().unwrap_or_default(),
            bearer_token: binding.bearer_token.clone(),
            agent,
        }
    }
}

fn classify(err: ureq::Error) -> CallError {
    match err {
        ureq::Error::Timeout(t) => CallError::Timeout(format!("timed out: {t}")),
        ureq::Error::Io(io) if matches!(io.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => {
            CallError::Timeout(io.to_string())
        }
        ureq::Error::Json(e) => CallError::Protocol(format!("malformed response body: {e}")),
        other => CallError::Transport(other.to_string()),
    }
}

impl StageAdapter for RemoteAdapter {
    fn adapter_id(&self) -> &str {
        &self.adapter_id
    }

    fn call(&self, request: &AdapterRequest) -> Result<AdapterResponse, CallError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.bearer_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(request).map_err(classify)?;
        let status = resp.status();
        if status.as_u16() != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(CallError::Protocol(format!(
                "HTTP {status}: {}",
                body.chars().take(200).collect::<String>()
            )));
        }
        resp.body_mut().read_json::<AdapterResponse>().map_err(classify)
    }
}

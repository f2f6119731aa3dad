use std::time::Duration;

use serde_json::json;

use super::{BackendSpec, RoleConfig, Transport, TransportError};

/// Environment variable holding the bearer token for remote endpoints.
pub const API_KEY_ENV: &str = "MAIMS_API_KEY";

/// OpenAI-compatible `POST {endpoint}/chat/completions` transport.
pub struct HttpTransport {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(config: &RoleConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.request_timeout_secs)))
            .http_status_as_error(false)
            .build();
        HttpTransport {
            agent: ureq::Agent::new_with_config(agent_config),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }
}

pub(crate) fn request_body(config: &RoleConfig, model: &str, prompt: &str) -> serde_json::Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
        "max_tokens": config.max_output_tokens,
    })
}

pub(crate) fn extract_content(body: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    v.pointer("/choices/0/message/content")?
        .as_str()
        .map(str::to_string)
}

fn truncate(s: &str) -> String {
    s.chars().take(500).collect()
}

impl Transport for HttpTransport {
    fn send(
        &self,
        config: &RoleConfig,
        prompt: &str,
        _digest: &str,
    ) -> Result<String, TransportError> {
        let BackendSpec::Remote { endpoint, model } = &config.backend else {
            return Err(TransportError::Rejected {
                status: 0,
                body: "HTTP transport used with a non-remote backend".into(),
            });
        };
        let url = format!("{}/chat/completions", endpoint.trim_end_matches('/'));
        let body = request_body(config, model, prompt).to_string();
        let mut req = self.agent.post(&url).content_type("application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(TransportError::Transient(format!(
                "status {status}: {}",
                truncate(&text)
            )));
        }
        if !(200..300).contains(&status) {
            return Err(TransportError::Rejected {
                status,
                body: truncate(&text),
            });
        }
        extract_content(&text).ok_or_else(|| TransportError::Rejected {
            status,
            body: format!(
                "no choices[0].message.content in response: {}",
                truncate(&text)
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Role;

    #[test]
    fn body_shape() {
        let cfg = RoleConfig::remote(Role::Poster, "http://x/v1", "m");
        let b = request_body(&cfg, "m", "hi");
        assert_eq!(b["messages"][0]["content"], "hi");
        assert_eq!(b["messages"][0]["role"], "user");
        assert_eq!(b["temperature"], 0.0);
        assert_eq!(b["max_tokens"], 1024);
    }

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Answer: No."}}]}"#;
        assert_eq!(extract_content(body).as_deref(), Some("Answer: No."));
        assert_eq!(extract_content(r#"{"choices":[]}"#), None);
        assert_eq!(extract_content("not json"), None);
    }
}

//! Chat-completions client for OpenAI-compatible endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{BackendError, CompletionBackend, CompletionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token. No header is sent if unset.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles each retry.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

fn default_key_env() -> String {
    "PHYLO_API_KEY".into()
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    1000
}

impl HttpConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err("base_url must be an http(s) URL".into());
        }
        if self.model.trim().is_empty() {
            return Err("model must be set".into());
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err("timeout_s must be positive".into());
        }
        Ok(())
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        config.validate().map_err(BackendError::Config)?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent, api_key })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
        });
        if let Some(max) = self.config.max_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<String, BackendError> {
        let mut call = self.agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(body).map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text.chars().take(500).collect() });
        }
        extract_content(&text)
    }
}

/// Pulls `choices[0].message.content` out of a chat-completions response.
pub fn extract_content(body: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))
}

fn retryable(err: &BackendError) -> bool {
    match err {
        BackendError::Transport(_) => true,
        BackendError::Status { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = self.request_body(request);
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) if retryable(&e) && attempt < self.config.max_retries => {
                    attempt += 1;
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentRole;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves the given canned (status, body) replies, one per connection, and
    /// forwards each received request body.
    fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                tx.send(String::from_utf8(buf).unwrap()).unwrap();
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn config(base_url: String) -> HttpConfig {
        HttpConfig {
            base_url,
            model: "m".into(),
            api_key_env: "PHYLO_TEST_UNSET_KEY".into(),
            timeout_s: 5.0,
            max_retries: 2,
            backoff_ms: 1,
            max_tokens: None,
        }
    }

    fn request() -> CompletionRequest {
        CompletionRequest { role: AgentRole::NextStepper, system: "s".into(), user: "u".into(), temperature: 0.3 }
    }

    #[test]
    fn sends_chat_schema_and_reads_content() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#.to_string();
        let (url, rx) = serve(vec![(200, ok)]);
        let backend = HttpBackend::new(config(url)).unwrap();
        assert_eq!(backend.complete(&request()).unwrap(), "hello");
        let sent: Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["model"], "m");
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["messages"][1]["content"], "u");
        assert_eq!(sent["temperature"], 0.3);
    }

    #[test]
    fn retries_server_errors_then_gives_up() {
        let ok = r#"{"choices":[{"message":{"content":"fine"}}]}"#.to_string();
        let (url, _rx) = serve(vec![(503, "{}".into()), (200, ok)]);
        assert_eq!(HttpBackend::new(config(url)).unwrap().complete(&request()).unwrap(), "fine");

        let (url, _rx) = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
        let err = HttpBackend::new(config(url)).unwrap().complete(&request()).unwrap_err();
        assert!(matches!(err, BackendError::Status { status: 500, .. }));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, _rx) = serve(vec![(400, "bad".into())]);
        let err = HttpBackend::new(config(url)).unwrap().complete(&request()).unwrap_err();
        assert!(matches!(err, BackendError::Status { status: 400, .. }));
    }

    #[test]
    fn config_validation() {
        let mut c = config("ftp://x".into());
        assert!(c.validate().is_err());
        c.base_url = "https://api.example.com/v1".into();
        assert!(c.validate().is_ok());
        assert!(extract_content("{}").is_err());
    }
}

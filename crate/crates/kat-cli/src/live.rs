//! HTTP client for an OpenAI-style text-completion endpoint.

use std::time::Duration;

use kat_core::implicit::{LmClient, LmError};
use serde_json::{json, Value};

pub struct HttpClient {
    endpoint: String,
    model: String,
    api_key: String,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(endpoint: &str, model: &str, api_key: String) -> Result<Self, LmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| LmError::Request(e.to_string()))?;
        Ok(Self { endpoint: endpoint.to_string(), model: model.to_string(), api_key, http })
    }
}

fn completion_text(body: &Value) -> Option<String> {
    body.get("choices")?.get(0)?.get("text")?.as_str().map(str::to_string)
}

impl LmClient for HttpClient {
    fn complete(&self, prompt: &str, max_tokens: usize, temperature: f64) -> Result<String, LmError> {
        let request = json!({
            "model": self.model,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": temperature,
        });
        let response = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&request)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| LmError::Request(e.to_string()))?;
        let body: Value = response.json().map_err(|e| LmError::Request(e.to_string()))?;
        completion_text(&body).ok_or_else(|| LmError::Request("response has no choices[0].text".into()))
    }
}

//! Optional chat-completion endpoint.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const URL_VAR: &str = "FLEET_LLM_URL";
pub const KEY_VAR: &str = "FLEET_LLM_KEY";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Router,
    Synthesizer,
    Judge,
}

/// One blocking completion per call; implementations hold no per-call state.
pub trait ChatClient: Send + Sync {
    fn complete(&self, role: Role, system: &str, user: &str) -> Result<String>;

    /// Label recorded next to every number this client produced.
    fn name(&self) -> String;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub models: BTreeMap<Role, String>,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        let models = [Role::Router, Role::Synthesizer, Role::Judge].map(|r| (r, "gpt-4o-mini".to_string()));
        Self { models: models.into_iter().collect(), timeout_secs: 60 }
    }
}

/// OpenAI-style `/chat/completions` client. Requests and responses are
/// appended verbatim to `log` as JSON lines.
pub struct HttpChatClient {
    url: String,
    key: Option<String>,
    config: EndpointConfig,
    agent: ureq::Agent,
    log: Option<PathBuf>,
}

impl HttpChatClient {
    pub fn new(url: impl Into<String>, key: Option<String>, config: EndpointConfig, log: Option<PathBuf>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { url: url.into(), key, config, agent, log }
    }

    /// `None` when the URL variable is unset.
    pub fn from_env(config: EndpointConfig, log: Option<PathBuf>) -> Option<Self> {
        let url = std::env::var(URL_VAR).ok().filter(|u| !u.is_empty())?;
        Some(Self::new(url, std::env::var(KEY_VAR).ok(), config, log))
    }

    fn record(&self, entry: &Value) {
        let Some(path) = &self.log else { return };
        let line = format!("{entry}\n");
        let written = OpenOptions::new().create(true).append(true).open(path).and_then(|mut f| f.write_all(line.as_bytes()));
        if let Err(e) = written {
            log::warn!("could not log endpoint exchange to {}: {e}", path.display());
        }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, role: Role, system: &str, user: &str) -> Result<String> {
        let model = self.config.models.get(&role).cloned().unwrap_or_default();
        let request = json!({
            "model": model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let outcome = req
            .send_json(&request)
            .map_err(|e| Error::Endpoint(e.to_string()))
            .and_then(|mut r| r.body_mut().read_to_string().map_err(|e| Error::Endpoint(e.to_string())));
        let body = match &outcome {
            Ok(b) => Value::String(b.clone()),
            Err(e) => json!({ "error": e.to_string() }),
        };
        self.record(&json!({ "role": role, "request": request, "response": body }));
        let text = outcome?;
        let parsed: Value = serde_json::from_str(&text).map_err(|e| Error::Endpoint(format!("non-JSON reply: {e}")))?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Endpoint("reply has no choices[0].message.content".into()))
    }

    fn name(&self) -> String {
        format!("llm:{}", self.config.models.get(&Role::Judge).map(String::as_str).unwrap_or(""))
    }
}

/// The first balanced `{...}` object in free text.
pub fn extract_json(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, ch) in text[start..].char_indices() {
        if in_str {
            match (escaped, ch) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_fenced_objects() {
        let t = "Sure.\n```json\n{\"a\": \"}\", \"b\": {\"c\": 1}}\n```";
        assert_eq!(extract_json(t), Some("{\"a\": \"}\", \"b\": {\"c\": 1}}"));
        assert_eq!(extract_json("no object"), None);
        assert_eq!(extract_json("{ unclosed"), None);
    }
}

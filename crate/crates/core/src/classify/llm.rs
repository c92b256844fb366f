use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::span::EventCategory;

use super::{CategorizationResult, CategorySource, Classifier};

/// Categorization prompt; `${sentence}` is replaced by the query.
pub const PROMPT_TEMPLATE: &str = include_str!("../../data/categorize_prompt.txt");

const PLACEHOLDER: &str = "${sentence}";

pub fn render_prompt(sentence: &str) -> String {
    PROMPT_TEMPLATE.replacen(PLACEHOLDER, sentence, 1)
}

/// A chat-completion backend that maps a user prompt to the model's reply text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Full URL of an OpenAI-style `/chat/completions` endpoint.
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub auth_header: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key: None,
            auth_header: "Authorization".into(),
            temperature: 0.0,
            timeout_secs: 30,
            max_retries: 2,
        }
    }
}

pub struct HttpChatTransport {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl HttpChatTransport {
    pub fn new(config: EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatTransport { config, agent }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }
}

impl ChatTransport for HttpChatTransport {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.api_key {
            req = req.header(self.config.auth_header.as_str(), format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if status.is_server_error() {
            return Err(Error::Transport(format!("endpoint returned {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Error::Classification {
                message: format!("endpoint returned {status}"),
                raw: text,
            });
        }
        Ok(chat_content(&text).unwrap_or(text))
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion body.
fn chat_content(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    v.pointer("/choices/0/message/content")?.as_str().map(str::to_string)
}

/// Parses the model's `{"reason": ..., "sensitive": "yes"|"no"}` reply,
/// tolerating code fences or chatter around the JSON object.
pub fn parse_llm_reply(raw: &str) -> Result<(EventCategory, String)> {
    let fail = |message: &str| Error::Classification {
        message: message.to_string(),
        raw: raw.to_string(),
    };
    let start = raw.find('{').ok_or_else(|| fail("no JSON object in reply"))?;
    let end = raw.rfind('}').ok_or_else(|| fail("no JSON object in reply"))?;
    if end < start {
        return Err(fail("no JSON object in reply"));
    }
    let v: Value = serde_json::from_str(&raw[start..=end]).map_err(|e| fail(&format!("invalid JSON: {e}")))?;
    let category = match v.get("sensitive") {
        Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
            "yes" => EventCategory::Sensitive,
            "no" => EventCategory::Insensitive,
            _ => return Err(fail("\"sensitive\" must be \"yes\" or \"no\"")),
        },
        Some(Value::Bool(true)) => EventCategory::Sensitive,
        Some(Value::Bool(false)) => EventCategory::Insensitive,
        Some(_) => return Err(fail("\"sensitive\" must be \"yes\" or \"no\"")),
        None => return Err(fail("missing \"sensitive\" field")),
    };
    let reason = v
        .get("reason")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .ok_or_else(|| fail("missing or empty \"reason\" field"))?;
    Ok((category, reason.to_string()))
}

/// Sends the categorization prompt, retrying transport failures and malformed
/// replies up to `max_retries` extra times.
pub fn classify_llm(
    query_text: &str,
    transport: &dyn ChatTransport,
    max_retries: usize,
) -> Result<CategorizationResult> {
    let prompt = render_prompt(query_text);
    let mut last_err = None;
    for attempt in 0..=max_retries {
        let outcome = transport.complete(&prompt).and_then(|raw| parse_llm_reply(&raw));
        match outcome {
            Ok((category, reason)) => {
                return Ok(CategorizationResult {
                    category,
                    reason,
                    source: CategorySource::ExternalLlm,
                })
            }
            Err(e @ (Error::Transport(_) | Error::Classification { .. })) => {
                tracing::warn!(attempt, error = %e, "categorization attempt failed");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

pub struct LlmClassifier<T> {
    pub transport: T,
    pub max_retries: usize,
}

impl LlmClassifier<HttpChatTransport> {
    pub fn http(config: EndpointConfig) -> Self {
        let max_retries = config.max_retries;
        LlmClassifier {
            transport: HttpChatTransport::new(config),
            max_retries,
        }
    }
}

impl<T: ChatTransport> Classifier for LlmClassifier<T> {
    fn classify(&self, query_text: &str) -> Result<CategorizationResult> {
        classify_llm(query_text, &self.transport, self.max_retries)
    }

    fn source(&self) -> CategorySource {
        CategorySource::ExternalLlm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Mutex;

    /// Replays canned replies and records prompts.
    struct Scripted {
        replies: Mutex<Vec<Result<String>>>,
        prompts: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<String>>) -> Self {
            Scripted {
                replies: Mutex::new(replies.into_iter().rev().collect()),
                prompts: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatTransport for Scripted {
        fn complete(&self, prompt: &str) -> Result<String> {
            self.prompts.lock().unwrap().push(prompt.to_string());
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err(Error::Transport("script exhausted".into())))
        }
    }

    #[test]
    fn yes_and_no_replies() {
        let t = Scripted::new(vec![Ok(
            r#"{"reason":"opening reverses to closing","sensitive":"yes"}"#.into(),
        )]);
        let r = classify_llm("person opens the door", &t, 0).unwrap();
        assert_eq!(r.category, EventCategory::Sensitive);
        assert_eq!(r.source, CategorySource::ExternalLlm);
        assert!(!r.reason.is_empty());

        let t = Scripted::new(vec![Ok(
            "```json\n{\"reason\": \"holding is a state\", \"sensitive\": \"no\"}\n```".into(),
        )]);
        assert_eq!(
            classify_llm("person holds a cup", &t, 0).unwrap().category,
            EventCategory::Insensitive
        );
    }

    #[test]
    fn missing_field_errors_after_retries() {
        let bad = || Ok::<String, Error>(r#"{"reason":"?"}"#.to_string());
        let t = Scripted::new(vec![bad(), bad(), bad()]);
        match classify_llm("q", &t, 2) {
            Err(Error::Classification { raw, .. }) => assert!(raw.contains("reason")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.prompts.lock().unwrap().len(), 3);
    }

    #[test]
    fn retry_recovers_from_transport_error() {
        let t = Scripted::new(vec![
            Err(Error::Transport("connection reset".into())),
            Ok(r#"{"reason":"r","sensitive":"no"}"#.into()),
        ]);
        assert_eq!(classify_llm("q", &t, 1).unwrap().category, EventCategory::Insensitive);
        let t = Scripted::new(vec![Err(Error::Transport("down".into()))]);
        let err = classify_llm("q", &t, 0).unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn prompt_substitutes_only_the_sentence() {
        let p = render_prompt("person opens the door");
        assert_eq!(p, PROMPT_TEMPLATE.replace("${sentence}", "person opens the door"));
        assert!(p.contains("Event Sentence: person opens the door\n"));
        assert!(!p.contains("${sentence}"));
        assert_eq!(PROMPT_TEMPLATE.matches("${sentence}").count(), 1);
    }

    #[test]
    fn http_transport_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let req: Value = serde_json::from_slice(&body).unwrap();
            let content =
                serde_json::json!({"reason": "closing is the reverse of opening", "sensitive": "yes"}).to_string();
            let reply =
                serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            let mut stream = stream;
            write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}", reply.len(), reply).unwrap();
            (req, auth)
        });

        let cfg = EndpointConfig {
            url: format!("http://{addr}/v1/chat/completions"),
            model: "test-model".into(),
            api_key: Some("secret".into()),
            ..EndpointConfig::default()
        };
        let r = LlmClassifier::http(cfg).classify("person opens the door").unwrap();
        assert_eq!(r.category, EventCategory::Sensitive);
        let (req, auth) = server.join().unwrap();
        assert_eq!(req["model"], "test-model");
        assert_eq!(
            req["messages"][0]["content"].as_str().unwrap(),
            render_prompt("person opens the door")
        );
        assert_eq!(auth.to_ascii_lowercase(), "authorization: bearer secret");
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let cfg = EndpointConfig {
            url: format!("http://{addr}/v1/chat/completions"),
            timeout_secs: 2,
            max_retries: 0,
            ..EndpointConfig::default()
        };
        let err = LlmClassifier::http(cfg).classify("q").unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }
}

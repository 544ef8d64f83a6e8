use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use anyhow::Context;
use dexter_core::strategy::{BackendError, GenerationBackend, MockBackend, MockRule};
use dexter_core::world::Scenario;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_TOKENS: u32 = 4096;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Serialize)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
}

/// Text completion over HTTP: `POST {prompt, max_tokens, temperature: 0}`
/// answered by `{text}`.
pub struct HttpBackend {
    url: String,
    client: reqwest::blocking::Client,
    max_tokens: u32,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>) -> anyhow::Result<Self> {
        Self::with_timeout(url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(url: impl Into<String>, timeout: Duration) -> anyhow::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .context("building HTTP client")?;
        Ok(Self {
            url: url.into(),
            client,
            max_tokens: DEFAULT_MAX_TOKENS,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl GenerationBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let body = CompletionRequest {
            prompt,
            max_tokens: self.max_tokens,
            temperature: 0.0,
        };
        let transport = |e: reqwest::Error| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport { message: e.to_string() }
            }
        };
        let resp = self.client.post(&self.url).json(&body).send().map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::Transport {
                message: format!("{} answered {status}", self.url),
            });
        }
        let parsed: CompletionResponse = resp.json().map_err(transport)?;
        Ok(parsed.text)
    }

    fn name(&self) -> &str {
        "http"
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

/// `mock`, `mock:<rules.json>` or `http:<url>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    /// Rule table from the scenario, or from a file.
    Mock(Option<PathBuf>),
    Http(String),
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mock" {
            return Ok(Self::Mock(None));
        }
        if let Some(path) = s.strip_prefix("mock:") {
            return Ok(Self::Mock(Some(path.into())));
        }
        if let Some(rest) = s.strip_prefix("http:") {
            let url = if rest.starts_with("//") {
                format!("http:{rest}")
            } else if rest.starts_with("https://") || rest.starts_with("http://") {
                rest.to_string()
            } else {
                format!("http://{rest}")
            };
            if url.len() <= "http://".len() {
                return Err("http backend needs a URL".into());
            }
            return Ok(Self::Http(url));
        }
        Err(format!("unknown backend `{s}` (expected mock, mock:<rules.json> or http:<url>)"))
    }
}

impl BackendChoice {
    pub fn is_mock(&self) -> bool {
        matches!(self, Self::Mock(_))
    }

    pub fn label(&self) -> String {
        match self {
            Self::Mock(None) => "mock".into(),
            Self::Mock(Some(p)) => format!("mock:{}", p.display()),
            Self::Http(url) => format!("http:{url}"),
        }
    }

    /// Builds the backend. Must not be called from inside an async context
    /// when the choice is HTTP.
    pub fn build(&self, scenario: &Scenario) -> anyhow::Result<Box<dyn GenerationBackend>> {
        Ok(match self {
            Self::Mock(None) => Box::new(MockBackend {
                rules: scenario.mock_rules.clone(),
            }),
            Self::Mock(Some(path)) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let parsed = MockBackend::from_json(&text)
                    .or_else(|_| serde_json::from_str::<Vec<MockRule>>(&text).map(|rules| MockBackend { rules }));
                Box::new(parsed.with_context(|| format!("parsing rule table {}", path.display()))?)
            }
            Self::Http(url) => Box::new(HttpBackend::new(url.clone())?),
        })
    }
}

//! HTTP endpoint clients: OpenAI-compatible chat completions and embeddings
//! (also served by Ollama), a simple classifier service, and a wiki page
//! fetcher with an on-disk cache.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    ChatClient, ChatRequest, ClassifierClient, EmbeddingClient, EndpointError, EndpointResult,
    PageFetcher,
};

const HTTP_TIMEOUT: Duration = Duration::from_secs(120);

fn build_client() -> EndpointResult<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(HTTP_TIMEOUT)
        .build()
        .map_err(|e| EndpointError::Network(e.to_string()))
}

fn api_key(env_var: &Option<String>) -> Option<String> {
    env_var.as_ref().and_then(|name| std::env::var(name).ok())
}

fn post_json<T: serde::de::DeserializeOwned>(
    client: &reqwest::blocking::Client,
    url: &str,
    key: Option<&str>,
    body: &serde_json::Value,
) -> EndpointResult<T> {
    let mut request = client.post(url).json(body);
    if let Some(key) = key {
        request = request.bearer_auth(key);
    }
    let response = request
        .send()
        .map_err(|e| EndpointError::Network(e.to_string()))?;
    let status = response.status();
    let text = response
        .text()
        .map_err(|e| EndpointError::Network(e.to_string()))?;
    if !status.is_success() {
        return Err(EndpointError::Http {
            status: status.as_u16(),
            message: text.chars().take(300).collect(),
        });
    }
    serde_json::from_str(&text).map_err(|e| EndpointError::Protocol(e.to_string()))
}

/// OpenAI-compatible chat-completions client.
pub struct OpenAiChat {
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiChat {
    pub fn new(base_url: &str, model: &str, api_key_env: Option<String>) -> EndpointResult<Self> {
        Ok(OpenAiChat {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env,
            client: build_client()?,
        })
    }
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl ChatClient for OpenAiChat {
    fn chat(&self, request: &ChatRequest) -> EndpointResult<String> {
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": request.system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": request.user}));
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        if let Some(seed) = request.params.seed {
            body["seed"] = serde_json::json!(seed);
        }
        let url = format!("{}/chat/completions", self.base_url);
        let response: ChatCompletionResponse =
            post_json(&self.client, &url, api_key(&self.api_key_env).as_deref(), &body)?;
        response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| EndpointError::Protocol("response has no message content".into()))
    }
}

/// OpenAI-compatible embeddings client.
pub struct OpenAiEmbedding {
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiEmbedding {
    pub fn new(base_url: &str, model: &str, api_key_env: Option<String>) -> EndpointResult<Self> {
        Ok(OpenAiEmbedding {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env,
            client: build_client()?,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl EmbeddingClient for OpenAiEmbedding {
    fn embed(&self, texts: &[String]) -> EndpointResult<Vec<Vec<f64>>> {
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let url = format!("{}/embeddings", self.base_url);
        let response: EmbeddingResponse =
            post_json(&self.client, &url, api_key(&self.api_key_env).as_deref(), &body)?;
        if response.data.len() != texts.len() {
            return Err(EndpointError::Protocol(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                response.data.len()
            )));
        }
        let mut data = response.data;
        data.sort_by_key(|d| d.index);
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }

    fn cache_id(&self) -> String {
        format!("openai-{}", self.model)
    }
}

/// Classifier service client.
///
/// Wire protocol: POST `{url}` with `{"texts": [...], "feature": "<name>"}`,
/// answered by `{"scores": [...]}` with one score in [0,1] per text.
pub struct HttpClassifier {
    pub url: String,
    pub api_key_env: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpClassifier {
    pub fn new(url: &str, api_key_env: Option<String>) -> EndpointResult<Self> {
        Ok(HttpClassifier {
            url: url.to_string(),
            api_key_env,
            client: build_client()?,
        })
    }
}

#[derive(Deserialize)]
struct ClassifierResponse {
    scores: Vec<f64>,
}

impl ClassifierClient for HttpClassifier {
    fn classify(&self, texts: &[String], feature: &str) -> EndpointResult<Vec<f64>> {
        let body = serde_json::json!({ "texts": texts, "feature": feature });
        let response: ClassifierResponse = post_json(
            &self.client,
            &self.url,
            api_key(&self.api_key_env).as_deref(),
            &body,
        )?;
        if response.scores.len() != texts.len() {
            return Err(EndpointError::Protocol(format!(
                "expected {} scores, got {}",
                texts.len(),
                response.scores.len()
            )));
        }
        Ok(response.scores)
    }
}

/// Cached page as stored on disk, keyed by (title, revision).
#[derive(Debug, Serialize, Deserialize)]
struct CachedPage {
    title: String,
    revision: u64,
    extract: String,
}

/// Wiki page fetcher against the public REST plain-text extract endpoint,
/// with responses cached on disk so repeated runs (and tests) stay offline.
pub struct HttpWikiFetcher {
    pub base_url: String,
    pub cache_dir: Option<PathBuf>,
    client: reqwest::blocking::Client,
}

impl HttpWikiFetcher {
    pub fn new(base_url: &str, cache_dir: Option<PathBuf>) -> EndpointResult<Self> {
        Ok(HttpWikiFetcher {
            base_url: base_url.trim_end_matches('/').to_string(),
            cache_dir,
            client: build_client()?,
        })
    }

    fn cache_path(&self, title: &str) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        let digest = hex::encode(Sha256::digest(title.as_bytes()));
        Some(dir.join(format!("{digest}.json")))
    }

    fn read_cache(&self, title: &str) -> Option<CachedPage> {
        let path = self.cache_path(title)?;
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn write_cache(&self, page: &CachedPage) {
        if let Some(path) = self.cache_path(&page.title) {
            if let Some(parent) = path.parent() {
                let _ = std::fs::create_dir_all(parent);
            }
            if let Ok(text) = serde_json::to_string(page) {
                let _ = std::fs::write(path, text);
            }
        }
    }
}

#[derive(Deserialize)]
struct SummaryResponse {
    extract: Option<String>,
    revision: Option<String>,
}

fn encode_title(title: &str) -> String {
    // path-segment percent-encoding; wiki titles use underscores for spaces
    let mut out = String::new();
    for byte in title.replace(' ', "_").bytes() {
        match byte {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'_' | b'-' | b'.' | b'~' | b'(' | b')' => {
                out.push(byte as char)
            }
            _ => out.push_str(&format!("%{byte:02X}")),
        }
    }
    out
}

impl PageFetcher for HttpWikiFetcher {
    fn fetch_page(&self, title: &str) -> EndpointResult<Option<String>> {
        if let Some(cached) = self.read_cache(title) {
            return Ok(Some(cached.extract));
        }
        let url = format!(
            "{}/api/rest_v1/page/summary/{}",
            self.base_url,
            encode_title(title)
        );
        let response = self
            .client
            .get(&url)
            .send()
            .map_err(|e| EndpointError::Network(e.to_string()))?;
        if response.status().as_u16() == 404 {
            return Ok(None);
        }
        if !response.status().is_success() {
            return Err(EndpointError::Http {
                status: response.status().as_u16(),
                message: format!("GET {url}"),
            });
        }
        let summary: SummaryResponse = response
            .json()
            .map_err(|e| EndpointError::Protocol(e.to_string()))?;
        let extract = match summary.extract {
            Some(text) if !text.is_empty() => text,
            _ => return Ok(None),
        };
        let revision = summary
            .revision
            .and_then(|r| r.parse::<u64>().ok())
            .unwrap_or(0);
        self.write_cache(&CachedPage {
            title: title.to_string(),
            revision,
            extract: extract.clone(),
        });
        Ok(Some(extract))
    }

    fn links(&self, title: &str) -> EndpointResult<Vec<String>> {
        self.query_links(title, false)
    }

    fn backlinks(&self, title: &str) -> EndpointResult<Vec<String>> {
        self.query_links(title, true)
    }
}

impl HttpWikiFetcher {
    fn query_links(&self, title: &str, backlinks: bool) -> EndpointResult<Vec<String>> {
        let url = format!("{}/w/api.php", self.base_url);
        let params: Vec<(&str, &str)> = if backlinks {
            vec![
                ("action", "query"),
                ("format", "json"),
                ("list", "backlinks"),
                ("bltitle", title),
                ("bllimit", "max"),
            ]
        } else {
            vec![
                ("action", "query"),
                ("format", "json"),
                ("prop", "links"),
                ("pllimit", "max"),
                ("titles", title),
            ]
        };
        let value: serde_json::Value = self
            .client
            .get(&url)
            .query(&params)
            .send()
            .map_err(|e| EndpointError::Network(e.to_string()))?
            .json()
            .map_err(|e| EndpointError::Protocol(e.to_string()))?;
        let mut titles = Vec::new();
        if backlinks {
            if let Some(items) = value["query"]["backlinks"].as_array() {
                for item in items {
                    if let Some(t) = item["title"].as_str() {
                        titles.push(t.to_string());
                    }
                }
            }
        } else if let Some(pages) = value["query"]["pages"].as_object() {
            for page in pages.values() {
                if let Some(links) = page["links"].as_array() {
                    for link in links {
                        if let Some(t) = link["title"].as_str() {
                            titles.push(t.to_string());
                        }
                    }
                }
            }
        }
        Ok(titles)
    }
}

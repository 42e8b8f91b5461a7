//! Deterministic offline endpoints. Every mock is a pure function of its
//! inputs, which makes full pipeline runs bit-reproducible.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    ChatClient, ChatRequest, ClassifierClient, EmbeddingClient, EndpointError, EndpointResult,
    PageFetcher,
};

fn text_seed(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// What a mock chat endpoint answers with.
#[derive(Debug, Clone, PartialEq)]
pub enum MockChatBehavior {
    /// Return the user message unchanged.
    Echo,
    /// Always return the same text.
    Fixed(String),
    /// Answer the question-making template: finds the `keyword:` line of the
    /// request and forms a question containing it.
    QuestionMaker,
    /// Return this keyword list, one per line.
    KeywordList(Vec<String>),
}

pub struct MockChat {
    pub behavior: MockChatBehavior,
    calls: AtomicUsize,
}

impl MockChat {
    pub fn new(behavior: MockChatBehavior) -> Self {
        MockChat {
            behavior,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for MockChat {
    fn chat(&self, request: &ChatRequest) -> EndpointResult<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.behavior {
            MockChatBehavior::Echo => Ok(request.user.to_string()),
            MockChatBehavior::Fixed(text) => Ok(text.clone()),
            MockChatBehavior::QuestionMaker => {
                let keyword = request
                    .user
                    .lines()
                    .find_map(|l| l.strip_prefix("keyword: "))
                    .unwrap_or("the subject")
                    .trim();
                Ok(format!("What is known about {keyword}?"))
            }
            MockChatBehavior::KeywordList(list) => Ok(list.join("\n")),
        }
    }
}

/// Chat endpoint driven by an arbitrary function, for tests.
pub struct FnChat<F: Fn(&ChatRequest) -> EndpointResult<String> + Send + Sync>(pub F);

impl<F: Fn(&ChatRequest) -> EndpointResult<String> + Send + Sync> ChatClient for FnChat<F> {
    fn chat(&self, request: &ChatRequest) -> EndpointResult<String> {
        (self.0)(request)
    }
}

/// Deterministic embedding endpoint: each text hashes to a unit vector.
pub struct MockEmbedding {
    pub dim: usize,
}

impl Default for MockEmbedding {
    fn default() -> Self {
        MockEmbedding { dim: 16 }
    }
}

impl EmbeddingClient for MockEmbedding {
    fn embed(&self, texts: &[String]) -> EndpointResult<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(text_seed(t));
                let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for x in &mut v {
                        *x /= norm;
                    }
                }
                v
            })
            .collect())
    }

    fn cache_id(&self) -> String {
        format!("mock-hash-{}", self.dim)
    }
}

/// Embedding endpoint backed by a fixed text -> vector map, for tests.
pub struct FixtureEmbedding {
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingClient for FixtureEmbedding {
    fn embed(&self, texts: &[String]) -> EndpointResult<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .cloned()
                    .ok_or_else(|| EndpointError::Protocol(format!("no fixture vector for `{t}`")))
            })
            .collect()
    }

    fn cache_id(&self) -> String {
        "fixture".into()
    }
}

/// How a mock classifier scores texts.
#[derive(Debug, Clone, PartialEq)]
pub enum MockClassifierBehavior {
    /// Same score for every text.
    Constant(f64),
    /// Deterministic hash of (feature, text) into [0,1].
    Hash,
    /// Score keyed by the first listed token found in the text; texts with no
    /// match fall back to `default`.
    TokenKeyed {
        scores: BTreeMap<String, f64>,
        default: f64,
    },
}

pub struct MockClassifier {
    pub behavior: MockClassifierBehavior,
}

impl ClassifierClient for MockClassifier {
    fn classify(&self, texts: &[String], feature: &str) -> EndpointResult<Vec<f64>> {
        Ok(texts
            .iter()
            .map(|t| match &self.behavior {
                MockClassifierBehavior::Constant(score) => *score,
                MockClassifierBehavior::Hash => {
                    let seed = text_seed(&format!("{feature}\u{1}{t}"));
                    (seed % 10_000) as f64 / 10_000.0
                }
                MockClassifierBehavior::TokenKeyed { scores, default } => scores
                    .iter()
                    .find(|(token, _)| t.contains(token.as_str()))
                    .map(|(_, s)| *s)
                    .unwrap_or(*default),
            })
            .collect())
    }
}

/// In-memory page corpus with optional link structure.
#[derive(Default)]
pub struct FixtureFetcher {
    pub pages: BTreeMap<String, String>,
    pub links: BTreeMap<String, Vec<String>>,
    pub backlinks: BTreeMap<String, Vec<String>>,
    fetched: Mutex<Vec<String>>,
}

impl FixtureFetcher {
    pub fn with_pages(pages: &[(&str, &str)]) -> Self {
        FixtureFetcher {
            pages: pages
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            ..Default::default()
        }
    }

    pub fn fetched_titles(&self) -> Vec<String> {
        self.fetched.lock().expect("poisoned").clone()
    }
}

impl PageFetcher for FixtureFetcher {
    fn fetch_page(&self, title: &str) -> EndpointResult<Option<String>> {
        self.fetched.lock().expect("poisoned").push(title.to_string());
        Ok(self.pages.get(title).cloned())
    }

    fn links(&self, title: &str) -> EndpointResult<Vec<String>> {
        Ok(self.links.get(title).cloned().unwrap_or_default())
    }

    fn backlinks(&self, title: &str) -> EndpointResult<Vec<String>> {
        Ok(self.backlinks.get(title).cloned().unwrap_or_default())
    }
}

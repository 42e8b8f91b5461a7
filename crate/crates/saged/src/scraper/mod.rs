//! Collect baseline sentences per keyword from wiki pages, local text files,
//! or synthetic articles, and find keywords via chat or embedding endpoints.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::endpoints::{
    ChatClient, ChatRequest, EmbeddingClient, EndpointError, PageFetcher, RetryPolicy,
    SamplingParams,
};
use crate::error::{Result, SagedError};
use crate::table::{contains_ci, Table, TableKind, Value, SENTENCE_COLUMNS};
use crate::text::{split_sentences, tokenize};
use crate::vecmath::{cosine_similarity, mean_vector};

/// Where sentences come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Wiki,
    Local,
}

/// A scraping source: wiki page titles or local file paths, with the
/// concept -> keywords map to match against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceSpec {
    pub source_tag: String,
    pub kind: SourceKind,
    pub locations: Vec<String>,
    pub concepts: BTreeMap<String, Vec<String>>,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.source_tag.is_empty() {
            problems.push("source_tag must be non-empty".to_string());
        }
        if self.locations.is_empty() {
            problems.push("locations must be non-empty".to_string());
        }
        for (concept, keywords) in &self.concepts {
            if keywords.iter().filter(|k| !k.is_empty()).count() == 0 {
                problems.push(format!("concept `{concept}` has no keywords"));
            }
        }
        if self.concepts.is_empty() {
            problems.push("concepts must be non-empty".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SagedError::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<SourceSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| SagedError::io(path, e))?;
        let spec: SourceSpec =
            serde_json::from_str(&text).map_err(|e| SagedError::parse(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text).map_err(|e| SagedError::io(path, e))
    }
}

/// One keyword-tagged sentence scraped from a source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrapedSentence {
    pub concept: String,
    pub keyword: String,
    pub sentence: String,
    pub source_tag: String,
    /// Page title or file path the sentence came from.
    pub origin: String,
}

/// Tuning knobs for the scraping stage.
#[derive(Debug, Clone)]
pub struct ScrapeOptions {
    /// Sentence length bounds in whitespace tokens, inclusive.
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Concurrent page fetches.
    pub concurrency: usize,
    /// Per-host delay between fetches.
    pub politeness: Duration,
    pub retry: RetryPolicy,
}

impl Default for ScrapeOptions {
    fn default() -> Self {
        ScrapeOptions {
            min_tokens: 6,
            max_tokens: 120,
            concurrency: 4,
            politeness: Duration::from_millis(500),
            retry: RetryPolicy::default(),
        }
    }
}

/// Result of a scrape: sentences, per-page warnings, and whether the stage
/// aborted early (partial results are still returned for persistence).
#[derive(Debug, Clone, Default)]
pub struct ScrapeOutcome {
    pub sentences: Vec<ScrapedSentence>,
    pub warnings: Vec<String>,
    pub aborted: Option<String>,
}

/// Match sentences of one text against the spec's keywords.
fn extract_matching(
    text: &str,
    origin: &str,
    spec: &SourceSpec,
    opts: &ScrapeOptions,
) -> Vec<ScrapedSentence> {
    let mut out = Vec::new();
    for (position, sentence) in split_sentences(text).into_iter().enumerate() {
        let token_count = tokenize(&sentence).len();
        if token_count < opts.min_tokens || token_count > opts.max_tokens {
            continue;
        }
        for (concept, keywords) in &spec.concepts {
            for keyword in keywords {
                if contains_ci(&sentence, keyword) {
                    out.push((position, ScrapedSentence {
                        concept: concept.clone(),
                        keyword: keyword.clone(),
                        sentence: sentence.clone(),
                        source_tag: spec.source_tag.clone(),
                        origin: origin.to_string(),
                    }));
                }
            }
        }
    }
    out.into_iter().map(|(_, s)| s).collect()
}

/// Stable order plus (keyword, sentence) dedup.
fn finish(mut sentences: Vec<(usize, ScrapedSentence)>) -> Vec<ScrapedSentence> {
    sentences.sort_by(|(pa, a), (pb, b)| {
        (&a.concept, &a.origin, pa, &a.keyword).cmp(&(&b.concept, &b.origin, pb, &b.keyword))
    });
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    sentences
        .into_iter()
        .filter(|(_, s)| seen.insert((s.keyword.clone(), s.sentence.clone())))
        .map(|(_, s)| s)
        .collect()
}

fn indexed(sentences: Vec<ScrapedSentence>) -> Vec<(usize, ScrapedSentence)> {
    sentences.into_iter().enumerate().collect()
}

/// Scrape wiki pages: fetch each location, split into sentences, and emit
/// every in-bounds sentence containing a keyword.
///
/// Pages fetch concurrently under `opts.concurrency` with a per-host
/// politeness delay; missing pages are skipped with a warning; a network
/// failure that survives retries aborts the stage with partial results.
pub fn scrape_wiki_source(
    spec: &SourceSpec,
    fetcher: &dyn PageFetcher,
    opts: &ScrapeOptions,
) -> Result<ScrapeOutcome> {
    if spec.kind != SourceKind::Wiki {
        return Err(SagedError::Invalid("spec kind is not wiki".into()));
    }
    spec.validate()?;

    struct Shared<'a> {
        fetcher: &'a dyn PageFetcher,
        retry: RetryPolicy,
        politeness: Duration,
        last_fetch: Mutex<Option<Instant>>,
        queue: Mutex<std::vec::IntoIter<(usize, String)>>,
        results: Mutex<Vec<(usize, String, std::result::Result<Option<String>, String>)>>,
    }

    impl Shared<'_> {
        fn polite_wait(&self) {
            if self.politeness.is_zero() {
                return;
            }
            let wait = {
                let mut last = self.last_fetch.lock().expect("poisoned");
                let now = Instant::now();
                let wait = match *last {
                    Some(prev) => (prev + self.politeness).saturating_duration_since(now),
                    None => Duration::ZERO,
                };
                *last = Some(now + wait);
                wait
            };
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
    }

    let shared = Shared {
        fetcher,
        retry: opts.retry,
        politeness: opts.politeness,
        last_fetch: Mutex::new(None),
        queue: Mutex::new(
            spec.locations
                .iter()
                .cloned()
                .enumerate()
                .collect::<Vec<_>>()
                .into_iter(),
        ),
        results: Mutex::new(Vec::new()),
    };

    let workers = opts.concurrency.max(1).min(spec.locations.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = shared.queue.lock().expect("poisoned").next();
                let (index, title) = match next {
                    Some(pair) => pair,
                    None => break,
                };
                shared.polite_wait();
                let fetched = shared
                    .retry
                    .run(|| shared.fetcher.fetch_page(&title))
                    .map(|(page, _)| page)
                    .map_err(|e| e.to_string());
                shared
                    .results
                    .lock()
                    .expect("poisoned")
                    .push((index, title, fetched));
            });
        }
    });

    let mut results = shared.results.into_inner().expect("poisoned");
    results.sort_by_key(|(i, _, _)| *i);

    let mut outcome = ScrapeOutcome::default();
    let mut collected: Vec<(usize, ScrapedSentence)> = Vec::new();
    for (_, title, fetched) in results {
        match fetched {
            Ok(Some(text)) => collected.extend(indexed(extract_matching(&text, &title, spec, opts))),
            Ok(None) => outcome
                .warnings
                .push(format!("page not found, skipped: {title}")),
            Err(message) => {
                outcome.aborted = Some(format!("fetch failed for `{title}`: {message}"));
                break;
            }
        }
    }
    outcome.sentences = finish(collected);
    Ok(outcome)
}

/// Scrape local UTF-8 text files with the same matching contract as wiki
/// scraping; origin is the file path.
pub fn scrape_local_source(spec: &SourceSpec, opts: &ScrapeOptions) -> Result<ScrapeOutcome> {
    if spec.kind != SourceKind::Local {
        return Err(SagedError::Invalid("spec kind is not local".into()));
    }
    spec.validate()?;
    let mut collected = Vec::new();
    for location in &spec.locations {
        let text = std::fs::read_to_string(location)
            .map_err(|e| SagedError::io(Path::new(location), e))?;
        collected.extend(indexed(extract_matching(&text, location, spec, opts)));
    }
    Ok(ScrapeOutcome {
        sentences: finish(collected),
        warnings: Vec::new(),
        aborted: None,
    })
}

/// Expand the location list one hop through links and backlinks, capped.
pub fn find_sources(
    fetcher: &dyn PageFetcher,
    seeds: &[String],
    max_pages: usize,
) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut push = |title: String, out: &mut Vec<String>| {
        if out.len() < max_pages && seen.insert(title.clone()) {
            out.push(title);
        }
    };
    for seed in seeds {
        push(seed.clone(), &mut out);
    }
    for seed in seeds {
        let links = fetcher
            .links(seed)
            .map_err(|e| SagedError::Endpoint(e.to_string()))?;
        for title in links {
            push(title, &mut out);
        }
        let backlinks = fetcher
            .backlinks(seed)
            .map_err(|e| SagedError::Endpoint(e.to_string()))?;
        for title in backlinks {
            push(title, &mut out);
        }
    }
    Ok(out)
}

/// Rank vocabulary candidates by cosine similarity to the mean seed
/// embedding; ties break lexicographically.
pub fn expand_keywords(
    seeds: &[String],
    client: &dyn EmbeddingClient,
    vocabulary: &[String],
    top_k: usize,
) -> Result<Vec<(String, f64)>> {
    if top_k == 0 {
        return Err(SagedError::Invalid("top_k must be >= 1".into()));
    }
    if vocabulary.is_empty() {
        return Err(SagedError::Invalid("vocabulary must be non-empty".into()));
    }
    if seeds.is_empty() {
        return Err(SagedError::Invalid("seeds must be non-empty".into()));
    }
    let retry = RetryPolicy::default();
    let (seed_vectors, _) = retry
        .run(|| client.embed(seeds))
        .map_err(|e| SagedError::Endpoint(e.to_string()))?;
    let center = mean_vector(&seed_vectors);
    let (candidate_vectors, _) = retry
        .run(|| client.embed(vocabulary))
        .map_err(|e| SagedError::Endpoint(e.to_string()))?;
    let mut scored: Vec<(String, f64)> = vocabulary
        .iter()
        .cloned()
        .zip(candidate_vectors.iter().map(|v| cosine_similarity(&center, v)))
        .collect();
    scored.sort_by(|(ka, sa), (kb, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| ka.cmp(kb))
    });
    scored.truncate(top_k);
    Ok(scored)
}

const KEYWORD_TEMPLATES: [(&str, &str); 3] = [
    (
        "characteristics",
        "List distinctive characteristics commonly associated with {concept}.",
    ),
    (
        "subcategories",
        "List notable subcategories or specific kinds of {concept}.",
    ),
    (
        "synonyms",
        "List synonyms and alternative names for {concept}.",
    ),
];

const KEYWORD_FORMAT: &str = "Respond with one keyword per line and nothing else.";
const KEYWORD_FORMAT_STRICT: &str =
    "Your previous answer could not be parsed. Respond ONLY with plain keywords, one per line, \
     no numbering, no prose.";

/// Ask a chat endpoint for keywords of up to `n_types` template types
/// (characteristics, subcategories, synonyms) and merge the parsed lists.
pub fn find_keywords_llm(
    concept: &str,
    client: &dyn ChatClient,
    n_types: usize,
) -> Result<Vec<String>> {
    if n_types == 0 {
        return Err(SagedError::Invalid("n_types must be >= 1".into()));
    }
    let params = SamplingParams::default();
    let mut keywords: Vec<String> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (_, template) in KEYWORD_TEMPLATES.iter().take(n_types) {
        let prompt = format!(
            "{} {}",
            template.replace("{concept}", concept),
            KEYWORD_FORMAT
        );
        let mut parsed = parse_keyword_lines(&chat_once(client, &prompt, &params)?);
        if parsed.is_empty() {
            let strict = format!("{prompt}\n{KEYWORD_FORMAT_STRICT}");
            parsed = parse_keyword_lines(&chat_once(client, &strict, &params)?);
            if parsed.is_empty() {
                return Err(SagedError::Endpoint(format!(
                    "keyword finding for `{concept}` returned no parseable keywords after retry"
                )));
            }
        }
        for keyword in parsed {
            if seen.insert(keyword.to_lowercase()) {
                keywords.push(keyword);
            }
        }
    }
    Ok(keywords)
}

fn chat_once(client: &dyn ChatClient, user: &str, params: &SamplingParams) -> Result<String> {
    client
        .chat(&ChatRequest {
            system: "",
            user,
            params,
        })
        .map_err(|e: EndpointError| SagedError::Endpoint(e.to_string()))
}

/// Parse "one keyword per line" output, tolerating bullets, numbering and
/// comma-separated lines.
pub fn parse_keyword_lines(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines().flat_map(|l| l.split(',')) {
        let line = line.trim();
        let line = line
            .trim_start_matches(['-', '*', '\u{2022}'])
            .trim_start_matches(|c: char| c.is_ascii_digit())
            .trim_start_matches(['.', ')', ':'])
            .trim();
        if !line.is_empty() {
            out.push(line.to_string());
        }
    }
    out
}

/// Write scraped sentences as a table.
pub fn sentences_table(sentences: &[ScrapedSentence]) -> Table {
    let mut table = Table::new(
        TableKind::Sentences,
        SENTENCE_COLUMNS.iter().map(|s| s.to_string()).collect(),
    );
    for s in sentences {
        table
            .push_row(vec![
                Value::text(&s.concept),
                Value::text(&s.keyword),
                Value::text(&s.sentence),
                Value::text(&s.source_tag),
                Value::text(&s.origin),
            ])
            .expect("arity");
    }
    table
}

/// Read scraped sentences back from a table.
pub fn sentences_from_table(table: &Table) -> Result<Vec<ScrapedSentence>> {
    let mut out = Vec::new();
    for row in table.rows() {
        let s = |i: usize| row[i].as_str().unwrap_or_default().to_string();
        out.push(ScrapedSentence {
            concept: s(0),
            keyword: s(1),
            sentence: s(2),
            source_tag: s(3),
            origin: s(4),
        });
    }
    Ok(out)
}

//! Counterfactual branching: rewrite root prompts (and optionally baselines)
//! into parallel rows for target concepts, and configure replacement
//! descriptors via embedding-threshold binary search.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::endpoints::{ChatClient, ChatRequest, EmbeddingClient, RetryPolicy, SamplingParams};
use crate::error::{Result, SagedError};
use crate::table::{benchmark_records, benchmark_table, BenchmarkRecord, Table};
use crate::text::clean_token;
use crate::vecmath::{cosine_similarity, mean_vector};

/// How one root concept branches into one target concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementDescriptor {
    pub root_concept: String,
    pub target_concept: String,
    /// Ordered longest-pattern-first; applied in order, left to right.
    replacements: Vec<(String, String)>,
}

impl ReplacementDescriptor {
    /// Build a descriptor, ordering patterns longest-first so that no pattern
    /// is a substring of a later one ("Labour Party" before "Labour").
    pub fn new(
        root_concept: &str,
        target_concept: &str,
        replacements: Vec<(String, String)>,
    ) -> Result<Self> {
        let mut replacements = replacements;
        for (pattern, _) in &replacements {
            if pattern.is_empty() {
                return Err(SagedError::Invalid(format!(
                    "descriptor {root_concept} -> {target_concept}: empty pattern"
                )));
            }
        }
        replacements.sort_by(|(a, _), (b, _)| {
            b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b))
        });
        replacements.dedup_by(|(a, _), (b, _)| a == b);
        Ok(ReplacementDescriptor {
            root_concept: root_concept.to_string(),
            target_concept: target_concept.to_string(),
            replacements,
        })
    }

    pub fn replacements(&self) -> &[(String, String)] {
        &self.replacements
    }

    /// Identity descriptor: replace the root concept text by the target's.
    pub fn identity(root_concept: &str, target_concept: &str) -> Self {
        ReplacementDescriptor::new(
            root_concept,
            target_concept,
            vec![(root_concept.to_string(), target_concept.to_string())],
        )
        .expect("non-empty pattern")
    }
}

/// Apply the replacement map to `text`: longest pattern first, left to right,
/// matching case-insensitively. A match starting with an uppercase letter
/// uppercases the substitute's first letter so sentences stay grammatical;
/// lowercase matches keep the substitute's own casing.
pub fn apply_replacements(text: &str, replacements: &[(String, String)]) -> (String, bool) {
    let chars: Vec<char> = text.chars().collect();
    let lowered: Vec<Vec<char>> = replacements
        .iter()
        .map(|(p, _)| p.chars().flat_map(char::to_lowercase).collect())
        .collect();
    let mut out = String::new();
    let mut matched_any = false;
    let mut i = 0usize;
    'outer: while i < chars.len() {
        for (pi, (_, substitute)) in replacements.iter().enumerate() {
            let pattern = &lowered[pi];
            let plen = pattern.len();
            if plen == 0 || i + plen > chars.len() {
                continue;
            }
            let window_matches = chars[i..i + plen]
                .iter()
                .flat_map(|c| c.to_lowercase())
                .eq(pattern.iter().copied());
            if window_matches {
                if chars[i].is_uppercase() {
                    let mut cs = substitute.chars();
                    if let Some(first) = cs.next() {
                        out.extend(first.to_uppercase());
                        out.push_str(cs.as_str());
                    }
                } else {
                    out.push_str(substitute);
                }
                matched_any = true;
                i += plen;
                continue 'outer;
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    (out, matched_any)
}

#[derive(Debug)]
pub struct BranchOutcome {
    pub table: Table,
    pub warnings: Vec<String>,
}

/// Emit one branched row per (root row, descriptor).
///
/// The prompt is rewritten through the replacement map; with `branch_baseline`
/// the baseline (and keyword) are rewritten identically, producing the
/// counterfactual baseline. Without it the actual baseline and its keyword are
/// kept. The source tag gains a `_br` suffix.
pub fn apply_branching(
    benchmark: &Table,
    descriptors: &[ReplacementDescriptor],
    branch_baseline: bool,
) -> Result<BranchOutcome> {
    let records = benchmark_records(benchmark)?;
    for descriptor in descriptors {
        if !records.iter().any(|r| r.concept == descriptor.root_concept) {
            return Err(SagedError::Invalid(format!(
                "descriptor root concept `{}` not present in benchmark",
                descriptor.root_concept
            )));
        }
    }
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for (row, record) in records.iter().enumerate() {
        for descriptor in descriptors {
            if record.concept != descriptor.root_concept {
                continue;
            }
            let map = descriptor.replacements();
            let (prompt, prompt_matched) = apply_replacements(&record.prompt, map);
            let (baseline, baseline_matched) = if branch_baseline {
                apply_replacements(&record.baseline, map)
            } else {
                (record.baseline.clone(), false)
            };
            let keyword = if branch_baseline {
                apply_replacements(&record.keyword, map).0
            } else {
                record.keyword.clone()
            };
            if !map.is_empty() && !prompt_matched && !(branch_baseline && baseline_matched) {
                warnings.push(format!(
                    "row {}: no pattern of {} -> {} matched",
                    row + 1,
                    descriptor.root_concept,
                    descriptor.target_concept
                ));
            }
            out.push(BenchmarkRecord {
                domain: record.domain.clone(),
                concept: descriptor.target_concept.clone(),
                keyword,
                prompt,
                baseline,
                source_tag: format!("{}_br", record.source_tag),
            });
        }
    }
    Ok(BranchOutcome {
        table: benchmark_table(&out),
        warnings,
    })
}

/// On-disk descriptor file: root concept -> target concept -> replacement map.
pub type DescriptorFile = BTreeMap<String, BTreeMap<String, BTreeMap<String, String>>>;

pub fn load_descriptors(path: &Path) -> Result<Vec<ReplacementDescriptor>> {
    let text = std::fs::read_to_string(path).map_err(|e| SagedError::io(path, e))?;
    let file: DescriptorFile =
        serde_json::from_str(&text).map_err(|e| SagedError::parse(path, e.to_string()))?;
    let mut out = Vec::new();
    for (root, targets) in file {
        for (target, map) in targets {
            out.push(ReplacementDescriptor::new(
                &root,
                &target,
                map.into_iter().collect(),
            )?);
        }
    }
    Ok(out)
}

pub fn save_descriptors(descriptors: &[ReplacementDescriptor], path: &Path) -> Result<()> {
    let mut file: DescriptorFile = BTreeMap::new();
    for d in descriptors {
        file.entry(d.root_concept.clone())
            .or_default()
            .insert(
                d.target_concept.clone(),
                d.replacements.iter().cloned().collect(),
            );
    }
    let text = serde_json::to_string_pretty(&file).expect("serializable");
    std::fs::write(path, text).map_err(|e| SagedError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Auto,
    Value(f64),
}

/// Distinct cleaned tokens of the sentences, in first-seen order.
pub fn candidate_tokens(sentences: &[String]) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for sentence in sentences {
        for token in sentence.split_whitespace() {
            if let Some(cleaned) = clean_token(token) {
                if seen.insert(cleaned.clone()) {
                    out.push(cleaned);
                }
            }
        }
    }
    out
}

const THRESHOLD_PROMPT: &str = "We are filtering tokens related to a concept by embedding \
similarity.\ncurrent threshold: {threshold}\ntokens passing the filter: {tokens}\nWould a higher \
similarity threshold still yield relevant tokens? Answer yes or no.";

/// Binary search for the highest similarity threshold the chat endpoint still
/// approves, to within `tolerance`.
///
/// Each midpoint filters the candidate tokens by similarity to the mean
/// root-sentence embedding and asks whether the threshold can go higher; the
/// search needs at most ceil(log2(1/tolerance)) chat calls (capped by
/// `max_iterations`). An unparseable answer counts as "no".
pub fn resolve_threshold(
    root_sentences: &[String],
    embedding: &dyn EmbeddingClient,
    chat: &dyn ChatClient,
    tolerance: f64,
    max_iterations: usize,
) -> Result<f64> {
    if tolerance <= 0.0 {
        return Err(SagedError::Invalid("tolerance must be > 0".into()));
    }
    if root_sentences.is_empty() {
        return Err(SagedError::Invalid("root sentences must be non-empty".into()));
    }
    let retry = RetryPolicy::default();
    let (sentence_vectors, _) = retry
        .run(|| embedding.embed(root_sentences))
        .map_err(|e| SagedError::Endpoint(e.to_string()))?;
    let anchor = mean_vector(&sentence_vectors);
    let tokens = candidate_tokens(root_sentences);
    let (token_vectors, _) = retry
        .run(|| embedding.embed(&tokens))
        .map_err(|e| SagedError::Endpoint(e.to_string()))?;
    let similarities: Vec<f64> = token_vectors
        .iter()
        .map(|v| cosine_similarity(&anchor, v))
        .collect();

    let params = SamplingParams::default();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best: Option<f64> = None;
    let mut iterations = 0usize;
    while hi - lo > tolerance && iterations < max_iterations {
        let mid = (lo + hi) / 2.0;
        let passing: Vec<&str> = tokens
            .iter()
            .zip(&similarities)
            .filter(|(_, &s)| s >= mid)
            .map(|(t, _)| t.as_str())
            .collect();
        let prompt = THRESHOLD_PROMPT
            .replace("{threshold}", &format!("{mid:.5}"))
            .replace("{tokens}", &passing.join(", "));
        let answer = chat
            .chat(&ChatRequest {
                system: "",
                user: &prompt,
                params: &params,
            })
            .map_err(|e| SagedError::Endpoint(e.to_string()))?;
        let normalized = answer.trim().to_lowercase();
        let can_go_higher = if normalized.starts_with("yes") {
            true
        } else {
            if !normalized.starts_with("no") {
                log::warn!("threshold check returned `{answer}`; treating as no");
            }
            false
        };
        if can_go_higher {
            best = Some(mid);
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(best.unwrap_or(lo))
}

const REPLACER_PROMPT: &str = "We branch text about \"{root}\" into text about \"{target}\".\n\
candidate tokens: {candidates}\nPropose replacement pairs, one per line, in the form\n\
pattern => substitute\nPatterns must be chosen from the candidate tokens.";

/// Ask the chat endpoint for replacement pairs; patterns outside the filtered
/// candidates are dropped, and an empty proposal falls back to the identity
/// map {root -> target}.
pub fn propose_replacements(
    root_concept: &str,
    target_concept: &str,
    candidates: &[String],
    chat: &dyn ChatClient,
) -> Result<Vec<(String, String)>> {
    let prompt = REPLACER_PROMPT
        .replace("{root}", root_concept)
        .replace("{target}", target_concept)
        .replace("{candidates}", &candidates.join(", "));
    let params = SamplingParams::default();
    let answer = chat
        .chat(&ChatRequest {
            system: "",
            user: &prompt,
            params: &params,
        })
        .map_err(|e| SagedError::Endpoint(e.to_string()))?;
    let allowed: std::collections::BTreeSet<String> = candidates
        .iter()
        .map(|c| c.to_lowercase())
        .chain(std::iter::once(root_concept.to_lowercase()))
        .collect();
    let mut pairs = Vec::new();
    for line in answer.lines() {
        if let Some((pattern, substitute)) = line.split_once("=>") {
            let pattern = pattern.trim().trim_matches('"');
            let substitute = substitute.trim().trim_matches('"');
            if pattern.is_empty() || substitute.is_empty() {
                continue;
            }
            if !allowed.contains(&pattern.to_lowercase()) {
                continue;
            }
            pairs.push((pattern.to_string(), substitute.to_string()));
        }
    }
    if pairs.is_empty() {
        pairs.push((root_concept.to_string(), target_concept.to_string()));
    }
    Ok(pairs)
}

/// Configure a full descriptor: resolve the similarity threshold (binary
/// search when `Auto`), filter candidate tokens, and ask for replacements.
pub fn configure_descriptor(
    root_concept: &str,
    target_concept: &str,
    context_sentences: &[String],
    embedding: &dyn EmbeddingClient,
    chat: &dyn ChatClient,
    threshold: Threshold,
    tolerance: f64,
    max_iterations: usize,
) -> Result<ReplacementDescriptor> {
    let threshold = match threshold {
        Threshold::Value(v) => {
            if !(0.0..=1.0).contains(&v) {
                return Err(SagedError::Invalid("threshold must be in [0,1]".into()));
            }
            v
        }
        Threshold::Auto => resolve_threshold(
            context_sentences,
            embedding,
            chat,
            tolerance,
            max_iterations,
        )?,
    };
    let tokens = candidate_tokens(context_sentences);
    let retry = RetryPolicy::default();
    let (sentence_vectors, _) = retry
        .run(|| embedding.embed(context_sentences))
        .map_err(|e| SagedError::Endpoint(e.to_string()))?;
    let anchor = mean_vector(&sentence_vectors);
    let (token_vectors, _) = retry
        .run(|| embedding.embed(&tokens))
        .map_err(|e| SagedError::Endpoint(e.to_string()))?;
    let candidates: Vec<String> = tokens
        .into_iter()
        .zip(token_vectors.iter().map(|v| cosine_similarity(&anchor, v)))
        .filter(|(_, s)| *s >= threshold)
        .map(|(t, _)| t)
        .collect();
    let pairs = propose_replacements(root_concept, target_concept, &candidates, chat)?;
    ReplacementDescriptor::new(root_concept, target_concept, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoints::mock::{FnChat, MockChat, MockChatBehavior, MockEmbedding};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn stock_record() -> BenchmarkRecord {
        BenchmarkRecord {
            domain: "Stocks".into(),
            concept: "ok-stock".into(),
            keyword: "ok-stock".into(),
            prompt: "Is ok-stock suitable for high growth potential?".into(),
            baseline: "The report rates ok-stock as a hold with stable growth.".into(),
            source_tag: "cat_ok-stock".into(),
        }
    }

    #[test]
    fn replaces_concept_in_prompt() {
        let benchmark = benchmark_table(&[stock_record()]);
        let descriptor = ReplacementDescriptor::identity("ok-stock", "Tesla Inc. (TSLA)");
        let out = apply_branching(&benchmark, &[descriptor], true).unwrap();
        assert_eq!(out.table.len(), 1);
        assert_eq!(
            out.table.cell(0, "prompt").unwrap().as_str().unwrap(),
            "Is Tesla Inc. (TSLA) suitable for high growth potential?"
        );
        assert_eq!(
            out.table.cell(0, "concept").unwrap().as_str().unwrap(),
            "Tesla Inc. (TSLA)"
        );
        assert_eq!(
            out.table.cell(0, "source_tag").unwrap().as_str().unwrap(),
            "cat_ok-stock_br"
        );
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn row_count_is_roots_times_descriptors() {
        let records: Vec<BenchmarkRecord> = (0..5)
            .map(|i| BenchmarkRecord {
                prompt: format!("Is ok-stock pick number {i} suitable for growth?"),
                baseline: format!("Analysts rate ok-stock pick number {i} a hold."),
                ..stock_record()
            })
            .collect();
        let benchmark = benchmark_table(&records);
        let descriptors: Vec<ReplacementDescriptor> = (0..3)
            .map(|i| ReplacementDescriptor::identity("ok-stock", &format!("target-{i}")))
            .collect();
        let out = apply_branching(&benchmark, &descriptors, true).unwrap();
        assert_eq!(out.table.len(), 15);
    }

    #[test]
    fn empty_map_is_identity_except_concept_and_tag() {
        let benchmark = benchmark_table(&[stock_record()]);
        let descriptor =
            ReplacementDescriptor::new("ok-stock", "Tesla Inc. (TSLA)", vec![]).unwrap();
        let out = apply_branching(&benchmark, &[descriptor], true).unwrap();
        assert_eq!(
            out.table.cell(0, "prompt").unwrap().as_str().unwrap(),
            stock_record().prompt
        );
        assert_eq!(
            out.table.cell(0, "concept").unwrap().as_str().unwrap(),
            "Tesla Inc. (TSLA)"
        );
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn longest_pattern_wins_over_its_substring() {
        let (replaced, _) = apply_replacements(
            "The Labour Party also backs Labour unions.",
            ReplacementDescriptor::new(
                "Labour Party",
                "Green Party",
                vec![
                    ("Labour".into(), "Green".into()),
                    ("Labour Party".into(), "Green Party".into()),
                ],
            )
            .unwrap()
            .replacements(),
        );
        assert_eq!(replaced, "The Green Party also backs Green unions.");
    }

    #[test]
    fn first_letter_case_is_preserved() {
        let map = vec![("ok-stock".to_string(), "tesla".to_string())];
        let (replaced, _) = apply_replacements("Ok-stock rallies; buy ok-stock.", &map);
        assert_eq!(replaced, "Tesla rallies; buy tesla.");
        // an already-capitalized substitute stays capitalized after lowercase matches
        let map = vec![("ok-stock".to_string(), "Tesla Inc. (TSLA)".to_string())];
        let (replaced, _) = apply_replacements("Is ok-stock a buy?", &map);
        assert_eq!(replaced, "Is Tesla Inc. (TSLA) a buy?");
    }

    #[test]
    fn replacement_is_idempotent_for_non_overlapping_patterns() {
        let map = vec![
            ("alpha".to_string(), "omega".to_string()),
            ("bravo".to_string(), "sierra".to_string()),
        ];
        let text = "alpha meets bravo, then Alpha again.";
        let (once, _) = apply_replacements(text, &map);
        let (twice, _) = apply_replacements(&once, &map);
        assert_eq!(once, twice);
    }

    #[test]
    fn unmatched_descriptor_warns_but_emits() {
        let benchmark = benchmark_table(&[stock_record()]);
        let descriptor = ReplacementDescriptor::new(
            "ok-stock",
            "Tesla Inc. (TSLA)",
            vec![("zebra".into(), "lion".into())],
        )
        .unwrap();
        let out = apply_branching(&benchmark, &[descriptor], false).unwrap();
        assert_eq!(out.table.len(), 1);
        assert_eq!(out.warnings.len(), 1);
        // actual baseline kept, keyword kept with it
        assert_eq!(
            out.table.cell(0, "keyword").unwrap().as_str().unwrap(),
            "ok-stock"
        );
    }

    #[test]
    fn missing_root_concept_is_an_error() {
        let benchmark = benchmark_table(&[stock_record()]);
        let descriptor = ReplacementDescriptor::identity("nonexistent", "x");
        assert!(apply_branching(&benchmark, &[descriptor], true).is_err());
    }

    #[test]
    fn threshold_always_yes_approaches_one() {
        let chat = MockChat::new(MockChatBehavior::Fixed("yes".into()));
        let embedding = MockEmbedding::default();
        let sentences = vec!["the quick brown fox jumps".to_string()];
        let t = resolve_threshold(&sentences, &embedding, &chat, 0.05, 8).unwrap();
        assert!((1.0 - 0.05..=1.0).contains(&t), "t = {t}");
        assert!(chat.calls() <= 5);
    }

    #[test]
    fn threshold_always_no_stays_near_zero() {
        let chat = MockChat::new(MockChatBehavior::Fixed("no".into()));
        let embedding = MockEmbedding::default();
        let sentences = vec!["the quick brown fox jumps".to_string()];
        let t = resolve_threshold(&sentences, &embedding, &chat, 0.05, 8).unwrap();
        assert!(t <= 0.05, "t = {t}");
    }

    #[test]
    fn threshold_bisection_converges_on_mock_boundary() {
        // answers yes iff midpoint < 0.6; hand-simulated bisection visits
        // 0.5 y, 0.75 n, 0.625 n, 0.5625 y, 0.59375 y and stops at width
        // 0.03125 <= 0.05 after 5 calls.
        let calls = AtomicUsize::new(0);
        let chat = FnChat(move |req: &ChatRequest| {
            calls.fetch_add(1, Ordering::SeqCst);
            let mid: f64 = req
                .user
                .lines()
                .find_map(|l| l.strip_prefix("current threshold: "))
                .unwrap()
                .parse()
                .unwrap();
            Ok(if mid < 0.6 { "yes".into() } else { "no".into() })
        });
        let embedding = MockEmbedding::default();
        let sentences = vec!["the quick brown fox jumps".to_string()];
        let t = resolve_threshold(&sentences, &embedding, &chat, 0.05, 8).unwrap();
        assert!((t - 0.59375).abs() < 1e-12, "t = {t}");
        assert!((0.55..=0.65).contains(&t));
    }

    #[test]
    fn unparseable_threshold_answer_counts_as_no() {
        let chat = MockChat::new(MockChatBehavior::Fixed("maybe, who knows".into()));
        let embedding = MockEmbedding::default();
        let sentences = vec!["some context sentence here".to_string()];
        let t = resolve_threshold(&sentences, &embedding, &chat, 0.05, 8).unwrap();
        assert!(t <= 0.05);
    }

    #[test]
    fn propose_replacements_takes_mock_verbatim() {
        let chat = MockChat::new(MockChatBehavior::Fixed(
            "ok-stock => Apple Inc. (AAPL)".into(),
        ));
        let pairs = propose_replacements(
            "ok-stock",
            "Apple Inc. (AAPL)",
            &["ok-stock".to_string(), "growth".to_string()],
            &chat,
        )
        .unwrap();
        assert_eq!(
            pairs,
            vec![("ok-stock".to_string(), "Apple Inc. (AAPL)".to_string())]
        );
    }

    #[test]
    fn empty_proposal_falls_back_to_identity() {
        let chat = MockChat::new(MockChatBehavior::Fixed("no idea".into()));
        let pairs = propose_replacements("root", "target", &[], &chat).unwrap();
        assert_eq!(pairs, vec![("root".to_string(), "target".to_string())]);
    }

    #[test]
    fn proposed_patterns_restricted_to_candidates() {
        let chat = MockChat::new(MockChatBehavior::Fixed(
            "alpha => one\nzebra => two\nbravo => three".into(),
        ));
        let candidates = vec!["alpha".to_string(), "bravo".to_string()];
        let pairs = propose_replacements("root", "target", &candidates, &chat).unwrap();
        let patterns: Vec<&str> = pairs.iter().map(|(p, _)| p.as_str()).collect();
        assert_eq!(patterns, vec!["alpha", "bravo"]);
        for (p, _) in &pairs {
            assert!(candidates.contains(p) || p == "root");
        }
    }

    #[test]
    fn descriptor_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("descriptors.json");
        let descriptors = vec![
            ReplacementDescriptor::identity("IdeaCoun", "Canada"),
            ReplacementDescriptor::identity("IdeaCoun", "Russia"),
        ];
        save_descriptors(&descriptors, &path).unwrap();
        let loaded = load_descriptors(&path).unwrap();
        assert_eq!(loaded, descriptors);
    }
}

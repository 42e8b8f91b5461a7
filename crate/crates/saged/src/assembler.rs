//! Transform scraped baseline sentences into prompts, by sentence splitting
//! (continuation prompts for foundation models) or LLM question making
//! (for instruction-tuned models), and emit the benchmark table.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::endpoints::{ChatClient, ChatRequest, RetryPolicy, SamplingParams};
use crate::error::{Result, SagedError};
use crate::scraper::ScrapedSentence;
use crate::table::{benchmark_table, contains_ci, BenchmarkRecord, Table};
use crate::text::{clean_token, tokenize};

/// Base forms of common English verbs, used for stem-suffix detection.
const VERB_STEMS: [&str; 113] = [
    "accept", "add", "agree", "allow", "appear", "apply", "argue", "ask", "become", "begin",
    "believe", "break", "bring", "build", "buy", "call", "carry", "cause", "change", "choose",
    "claim", "come", "consider", "continue", "cost", "create", "cut", "decide", "describe",
    "develop", "die", "draw", "drive", "eat", "expect", "explain", "fall", "feel", "fight",
    "find", "follow", "form", "gain", "give", "grow", "happen", "hear", "help", "hold", "include",
    "increase", "involve", "join", "keep", "kill", "know", "lead", "learn", "leave", "let",
    "like", "live", "look", "lose", "love", "make", "mean", "meet", "move", "need", "offer",
    "open", "pass", "pay", "place", "play", "produce", "provide", "pull", "push", "put", "raise",
    "reach", "read", "receive", "remain", "remember", "report", "require", "return", "run", "say",
    "see", "seem", "sell", "send", "serve", "show", "sit", "speak", "spend", "stand", "start",
    "stay", "stop", "suggest", "take", "talk", "tell", "think", "try", "turn", "use",
];

/// Irregular and auxiliary forms not derivable from a stem plus suffix.
const VERB_FORMS: [&str; 89] = [
    "am", "are", "ate", "be", "became", "been", "began", "begun", "bought", "broke", "broken",
    "brought", "built", "came", "chose", "chosen", "could", "did", "does", "done", "drew",
    "drawn", "drove", "driven", "fell", "fallen", "felt", "fought", "found", "gave", "given",
    "gone", "got", "gotten", "grew", "grown", "had", "has", "have", "heard", "held", "hid",
    "hidden", "is", "kept", "knew", "known", "led", "left", "lost", "made", "may", "meant",
    "met", "might", "must", "paid", "ran", "rose", "said", "sat", "saw", "seen", "sent", "shall",
    "should", "showed", "shown", "sold", "sought", "spent", "spoke", "spoken", "stood", "taken",
    "taught", "thought", "told", "took", "was", "went", "were", "will", "won", "would", "wrote",
    "written", "do", "go",
];

/// Words that start a new phrase; the split point never advances past one.
const FUNCTION_WORDS: [&str; 52] = [
    "a", "about", "after", "against", "among", "an", "and", "as", "at", "because", "before",
    "between", "but", "by", "during", "for", "from", "if", "in", "into", "its", "my", "nor",
    "of", "off", "on", "onto", "or", "our", "over", "per", "since", "so", "than", "that", "the",
    "their", "then", "these", "this", "those", "through", "to", "toward", "under", "until",
    "upon", "via", "when", "where", "which", "with",
];

fn is_verb(token: &str) -> bool {
    let cleaned = match clean_token(token) {
        Some(c) => c,
        None => return false,
    };
    if VERB_FORMS.contains(&cleaned.as_str()) || VERB_STEMS.contains(&cleaned.as_str()) {
        return true;
    }
    for suffix in ["ing", "ed", "es", "s", "d"] {
        if let Some(stripped) = cleaned.strip_suffix(suffix) {
            if VERB_STEMS.contains(&stripped) {
                return true;
            }
            // doubled final consonant: stopped -> stopp -> stop
            let mut chars: Vec<char> = stripped.chars().collect();
            if chars.len() >= 2 && chars[chars.len() - 1] == chars[chars.len() - 2] {
                chars.pop();
                let undoubled: String = chars.iter().collect();
                if VERB_STEMS.contains(&undoubled.as_str()) {
                    return true;
                }
            }
            // dropped final e: making -> mak -> make
            let restored = format!("{stripped}e");
            if VERB_STEMS.contains(&restored.as_str()) {
                return true;
            }
        }
    }
    false
}

fn is_function_word(token: &str) -> bool {
    clean_token(token)
        .map(|c| FUNCTION_WORDS.contains(&c.as_str()))
        .unwrap_or(false)
}

/// A sentence divided into a continuation prompt and its completion.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSentence {
    pub prompt: String,
    pub completion: String,
    /// True when no verb was found and the 60% fallback split applied.
    pub fallback: bool,
}

/// Divide a sentence into prompt and completion around its main action.
///
/// The split lands immediately after the token following the anchor verb
/// (the first verb at or beyond the 40% token position, else the last verb
/// before it), then advances over content words until the completion starts
/// at a function word. With no verb at all the split falls back to 60% of the
/// tokens and is flagged. Prompt keeps >= 3 tokens and completion >= 2.
pub fn split_sentence(sentence: &str) -> Result<SplitSentence> {
    let tokens = tokenize(sentence);
    let n = tokens.len();
    if n < 6 {
        return Err(SagedError::Invalid("too short".into()));
    }
    let lo = 3usize;
    let hi = n - 2;

    let verb_positions: Vec<usize> = (0..n).filter(|&i| is_verb(tokens[i])).collect();
    // 1-based position p satisfies p >= 0.4 * n
    let threshold = (0.4 * n as f64).ceil() as usize;
    let anchor = verb_positions
        .iter()
        .copied()
        .find(|&i| i + 1 >= threshold)
        .or_else(|| verb_positions.last().copied());

    let (mut split, fallback) = match anchor {
        Some(verb) => ((verb + 2).clamp(lo, hi), false),
        None => (((0.6 * n as f64).round() as usize).clamp(lo, hi), true),
    };
    if !fallback {
        while split < hi && !is_function_word(tokens[split]) {
            split += 1;
        }
    }

    Ok(SplitSentence {
        prompt: tokens[..split].join(" "),
        completion: tokens[split..].join(" "),
        fallback,
    })
}

const QUESTION_TEMPLATE: &str = include_str!("../assets/question_template.txt");
const QUESTION_RETRY_NOTE: &str = "Your previous answer was invalid. The question must contain \
                                   the keyword verbatim and end with a question mark.";

/// Turn a baseline sentence into a generic question about the keyword.
///
/// The model answer must be non-empty, end with `?` and contain the keyword
/// verbatim; one corrective retry is attempted before giving up.
pub fn make_question(
    baseline: &str,
    keyword: &str,
    client: &dyn ChatClient,
    template: Option<&str>,
) -> Result<String> {
    if !contains_ci(baseline, keyword) {
        return Err(SagedError::Invalid(format!(
            "keyword `{keyword}` does not occur in baseline"
        )));
    }
    let template = template.unwrap_or(QUESTION_TEMPLATE);
    let prompt = template
        .replace("{baseline}", baseline)
        .replace("{keyword}", keyword);
    let params = SamplingParams::default();
    let ask = |user: &str| -> Result<String> {
        client
            .chat(&ChatRequest {
                system: "",
                user,
                params: &params,
            })
            .map_err(|e| SagedError::Endpoint(e.to_string()))
    };
    let accept = |answer: &str| -> Option<String> {
        let answer = answer.trim();
        if !answer.is_empty() && answer.ends_with('?') && answer.contains(keyword) {
            Some(answer.to_string())
        } else {
            None
        }
    };
    if let Some(question) = accept(&ask(&prompt)?) {
        return Ok(question);
    }
    let retry_prompt = format!("{prompt}\n{QUESTION_RETRY_NOTE}");
    if let Some(question) = accept(&ask(&retry_prompt)?) {
        return Ok(question);
    }
    Err(SagedError::Invalid(format!(
        "model failed to produce a valid question for keyword `{keyword}`"
    )))
}

/// How prompts are produced from baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssembleMode {
    Split,
    Question,
}

/// A sentence that produced no benchmark row, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub index: usize,
    pub origin: String,
    pub sentence: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct AssembleOutcome {
    pub benchmark: Table,
    pub skips: Vec<SkipEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AssembleOptions {
    pub domain: String,
    pub mode: AssembleMode,
    /// Question-template override; `{baseline}` and `{keyword}` are injected.
    pub question_template: Option<String>,
    /// Concurrent chat calls in question mode.
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl AssembleOptions {
    pub fn new(domain: &str, mode: AssembleMode) -> Self {
        AssembleOptions {
            domain: domain.to_string(),
            mode,
            question_template: None,
            concurrency: 8,
            retry: RetryPolicy::default(),
        }
    }
}

/// Build the benchmark table: one record per non-skipped sentence, baseline
/// set to the original sentence, skips logged with reasons.
pub fn assemble_benchmark(
    sentences: &[ScrapedSentence],
    opts: &AssembleOptions,
    client: Option<&dyn ChatClient>,
) -> Result<AssembleOutcome> {
    if opts.mode == AssembleMode::Question && client.is_none() {
        return Err(SagedError::Invalid(
            "question mode requires a chat client".into(),
        ));
    }
    let mut warnings = Vec::new();
    if sentences.is_empty() {
        warnings.push("no input sentences; benchmark is empty".to_string());
    }

    // prompt per input index, computed in parallel for question mode
    let prompts: Vec<Result<String>> = match opts.mode {
        AssembleMode::Split => sentences
            .iter()
            .map(|s| split_sentence(&s.sentence).map(|split| split.prompt))
            .collect(),
        AssembleMode::Question => {
            let client = client.expect("checked above");
            let template = opts.question_template.as_deref();
            let queue: Mutex<std::vec::IntoIter<(usize, &ScrapedSentence)>> =
                Mutex::new(sentences.iter().enumerate().collect::<Vec<_>>().into_iter());
            let results: Mutex<Vec<(usize, Result<String>)>> = Mutex::new(Vec::new());
            let workers = opts.concurrency.max(1).min(sentences.len().max(1));
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let next = queue.lock().expect("poisoned").next();
                        let (index, sentence) = match next {
                            Some(pair) => pair,
                            None => break,
                        };
                        let question =
                            make_question(&sentence.sentence, &sentence.keyword, client, template);
                        results.lock().expect("poisoned").push((index, question));
                    });
                }
            });
            let mut results = results.into_inner().expect("poisoned");
            results.sort_by_key(|(i, _)| *i);
            results.into_iter().map(|(_, q)| q).collect()
        }
    };

    let mut records = Vec::new();
    let mut skips = Vec::new();
    for (index, (sentence, prompt)) in sentences.iter().zip(prompts).enumerate() {
        match prompt {
            Ok(prompt) => records.push(BenchmarkRecord {
                domain: opts.domain.clone(),
                concept: sentence.concept.clone(),
                keyword: sentence.keyword.clone(),
                prompt,
                baseline: sentence.sentence.clone(),
                source_tag: sentence.source_tag.clone(),
            }),
            Err(e) => skips.push(SkipEntry {
                index,
                origin: sentence.origin.clone(),
                sentence: sentence.sentence.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(AssembleOutcome {
        benchmark: benchmark_table(&records),
        skips,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoints::mock::{FnChat, MockChat, MockChatBehavior};
    use crate::endpoints::EndpointResult;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn scraped(sentence: &str) -> ScrapedSentence {
        ScrapedSentence {
            concept: "Conservative Party".into(),
            keyword: "Conservative Party".into(),
            sentence: sentence.into(),
            source_tag: "wiki".into(),
            origin: "page".into(),
        }
    }

    #[test]
    fn splits_published_example_after_the_action_phrase() {
        let sentence = "Concerns over Conservative Party funds have become increasingly \
                        controversial due to Vladimir Putin's human rights abuses and the \
                        Russian invasion of Ukraine.";
        let split = split_sentence(sentence).unwrap();
        assert_eq!(
            split.prompt,
            "Concerns over Conservative Party funds have become increasingly controversial due"
        );
        assert_eq!(
            split.completion,
            "to Vladimir Putin's human rights abuses and the Russian invasion of Ukraine."
        );
        assert!(!split.fallback);
    }

    #[test]
    fn five_token_sentence_is_too_short() {
        let err = split_sentence("This one has five tokens.").unwrap_err();
        assert!(err.to_string().contains("too short"));
    }

    #[test]
    fn split_reconstructs_token_sequence() {
        let sentences = [
            "The Labour Party is a social democratic political party in the United Kingdom.",
            "Alice quickly runs toward the barn every morning.",
            "Seven quiet badgers wander lazily across the meadow.",
            "Revenue for the quarter grew substantially beyond consensus estimates again.",
        ];
        for sentence in sentences {
            let split = split_sentence(sentence).unwrap();
            assert_eq!(
                format!("{} {}", split.prompt, split.completion),
                tokenize(sentence).join(" ")
            );
            assert!(tokenize(&split.prompt).len() >= 3);
            assert!(tokenize(&split.completion).len() >= 2);
        }
    }

    #[test]
    fn no_verb_falls_back_to_sixty_percent() {
        let sentence = "Wonderful green hillsides beneath cloudless summer skies everywhere.";
        let split = split_sentence(sentence).unwrap();
        assert!(split.fallback);
        // 8 tokens -> round(4.8) = 5
        assert_eq!(tokenize(&split.prompt).len(), 5);
    }

    #[test]
    fn make_question_accepts_published_example() {
        let baseline = "The Labour Party is a social democratic political party in the United \
                        Kingdom that sits on the centre-left of the political spectrum.";
        let expected = "What type of political party is the Labour Party in the United Kingdom?";
        let client = MockChat::new(MockChatBehavior::Fixed(expected.into()));
        let question = make_question(baseline, "Labour Party", &client, None).unwrap();
        assert_eq!(question, expected);
        assert_eq!(client.calls(), 1);
    }

    #[test]
    fn make_question_retries_then_fails_without_question_mark() {
        let client = MockChat::new(MockChatBehavior::Fixed("Why is X good".into()));
        let err = make_question("X is good here today.", "X", &client, None).unwrap_err();
        assert!(err.to_string().contains("valid question"));
        assert_eq!(client.calls(), 2);
    }

    #[test]
    fn make_question_recovers_on_retry() {
        let calls = AtomicUsize::new(0);
        let client = FnChat(move |_req| -> EndpointResult<String> {
            let n = calls.fetch_add(1, Ordering::SeqCst);
            if n == 0 {
                Ok("no mark".to_string())
            } else {
                Ok("Is X still good?".to_string())
            }
        });
        let question = make_question("X is good here today.", "X", &client, None).unwrap();
        assert_eq!(question, "Is X still good?");
    }

    #[test]
    fn assemble_counts_skips() {
        let mut sentences: Vec<ScrapedSentence> = (0..8)
            .map(|i| {
                scraped(&format!(
                    "The Conservative Party announced policy number {i} during the long debate."
                ))
            })
            .collect();
        sentences.push(scraped("Conservative Party wins again."));
        sentences.push(scraped("Conservative Party loses today, sadly."));
        let opts = AssembleOptions::new("political-parties-uk", AssembleMode::Split);
        let outcome = assemble_benchmark(&sentences, &opts, None).unwrap();
        assert_eq!(outcome.benchmark.len(), 8);
        assert_eq!(outcome.skips.len(), 2);
        assert!(outcome.skips.iter().all(|s| s.reason.contains("too short")));
    }

    #[test]
    fn assemble_empty_input_warns() {
        let opts = AssembleOptions::new("d", AssembleMode::Split);
        let outcome = assemble_benchmark(&[], &opts, None).unwrap();
        assert!(outcome.benchmark.is_empty());
        assert_eq!(outcome.warnings.len(), 1);
    }

    #[test]
    fn question_mode_prompts_end_with_question_mark() {
        let sentences: Vec<ScrapedSentence> = (0..5)
            .map(|i| {
                scraped(&format!(
                    "The Conservative Party published manifesto {i} before the election."
                ))
            })
            .collect();
        let client = MockChat::new(MockChatBehavior::QuestionMaker);
        let mut opts = AssembleOptions::new("political-parties-uk", AssembleMode::Question);
        opts.retry = RetryPolicy::no_delay(1);
        let outcome = assemble_benchmark(&sentences, &opts, Some(&client)).unwrap();
        assert_eq!(outcome.benchmark.len(), 5);
        for row in 0..outcome.benchmark.len() {
            let prompt = outcome
                .benchmark
                .cell(row, "prompt")
                .unwrap()
                .as_str()
                .unwrap();
            assert!(prompt.ends_with('?'));
            assert!(prompt.contains("Conservative Party"));
        }
    }

    #[test]
    fn question_mode_requires_chat_client() {
        let opts = AssembleOptions::new("d", AssembleMode::Question);
        assert!(assemble_benchmark(&[], &opts, None).is_err());
    }

    #[test]
    fn verb_detection_handles_inflections() {
        assert!(is_verb("runs"));
        assert!(is_verb("stopped"));
        assert!(is_verb("making"));
        assert!(is_verb("became"));
        assert!(!is_verb("Ukraine"));
        assert!(!is_verb("controversial"));
    }
}

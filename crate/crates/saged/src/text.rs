//! Tokenization and rule-based sentence segmentation.

/// Whitespace tokens of a sentence.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Lowercased token with surrounding punctuation stripped; `None` when
/// nothing alphanumeric remains.
pub fn clean_token(token: &str) -> Option<String> {
    let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_lowercase())
    }
}

/// Words that end in a period without ending a sentence.
const ABBREVIATIONS: [&str; 26] = [
    "Inc", "Ltd", "Corp", "Co", "Mr", "Mrs", "Ms", "Dr", "Prof", "St", "Jr", "Sr", "vs", "etc",
    "No", "Vol", "Fig", "Figs", "Eq", "approx", "U.S", "U.K", "U.N", "e.g", "i.e", "est",
];

/// Split plain text into sentences.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace and an uppercase
/// letter, unless the word before a period is a known abbreviation or a
/// single initial. The terminator stays with its sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if c == '.' || c == '!' || c == '?' {
            let mut end = i + 1;
            // pull trailing closers into the sentence
            while end < chars.len() && matches!(chars[end], '"' | '\'' | ')' | ']' | '\u{201d}') {
                end += 1;
            }
            let followed_by_boundary = match chars[end..].iter().find(|c| !c.is_whitespace()) {
                Some(next) => next.is_uppercase() && chars.get(end).map_or(false, |c| c.is_whitespace()),
                None => true,
            };
            let abbreviation = c == '.' && is_abbreviation(&chars[start..i]);
            if followed_by_boundary && !abbreviation {
                let sentence: String = chars[start..end].iter().collect();
                let sentence = sentence.trim();
                if !sentence.is_empty() {
                    sentences.push(sentence.to_string());
                }
                start = end;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    let tail: String = chars[start..].iter().collect();
    let tail = tail.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Is the word ending at this period an abbreviation or initial?
fn is_abbreviation(before: &[char]) -> bool {
    let mut word_start = before.len();
    while word_start > 0 && !before[word_start - 1].is_whitespace() {
        word_start -= 1;
    }
    let word: String = before[word_start..].iter().collect();
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    if word.is_empty() {
        return false;
    }
    // single uppercase initial, as in "J. Smith"
    if word.chars().count() == 1 && word.chars().next().map_or(false, char::is_uppercase) {
        return true;
    }
    ABBREVIATIONS.contains(&word)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_terminator_followed_by_uppercase() {
        assert_eq!(
            split_sentences("X is good. Y is bad."),
            vec!["X is good.", "Y is bad."]
        );
    }

    #[test]
    fn keeps_abbreviations_together() {
        let text = "Apple Inc. Reports say revenue grew. The U.S. Government responded.";
        let sentences = split_sentences(text);
        assert_eq!(
            sentences,
            vec![
                "Apple Inc. Reports say revenue grew.",
                "The U.S. Government responded."
            ]
        );
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(
            split_sentences("It cost 3.5 million dollars. and then some"),
            vec!["It cost 3.5 million dollars. and then some"]
        );
    }

    #[test]
    fn question_and_exclamation_terminate() {
        assert_eq!(
            split_sentences("Is it true? Yes! It is."),
            vec!["Is it true?", "Yes!", "It is."]
        );
    }

    #[test]
    fn initials_do_not_split() {
        assert_eq!(
            split_sentences("He met J. Smith in town. They spoke."),
            vec!["He met J. Smith in town.", "They spoke."]
        );
    }

    #[test]
    fn clean_token_strips_punctuation() {
        assert_eq!(clean_token("(Putin's"), Some("putin's".into()));
        assert_eq!(clean_token("Ukraine."), Some("ukraine".into()));
        assert_eq!(clean_token("--"), None);
    }
}

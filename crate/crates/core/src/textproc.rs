//! Deterministic text normalization shared by every pipeline stage:
//! tokenization, sentence splitting, salutation/signature stripping,
//! dictionary filtering, n-grams, length bucketing, and lexicon-based
//! sentiment. All functions here are pure and thread-safe.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("invalid token {0:?}: {1}")]
    InvalidToken(String, &'static str),
    #[error("dictionary is empty; the wordlist asset is missing or unreadable")]
    EmptyDictionary,
    #[error("n-gram size must be at least 1")]
    ZeroNgram,
    #[error("sentiment lexicon is invalid: {0}")]
    BadLexicon(String),
}

/// A single lowercase token with no internal whitespace.
///
/// Tokens produced by [`tokenize`] additionally re-tokenize to themselves,
/// which keeps n-gram keys stable however many times text passes through
/// normalization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self, TextError> {
        let text = text.into();
        if text.is_empty() {
            return Err(TextError::InvalidToken(text, "empty"));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(TextError::InvalidToken(text, "contains whitespace"));
        }
        if text.chars().any(char::is_uppercase) {
            return Err(TextError::InvalidToken(text, "contains uppercase"));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<&str> for Token {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// Convenience for tests and fixtures.
pub fn tokens(words: &[&str]) -> Vec<Token> {
    words
        .iter()
        .map(|w| Token::new(*w).expect("fixture token"))
        .collect()
}

/// Join tokens back into a space-separated string.
pub fn join_tokens(toks: &[Token]) -> String {
    toks.iter()
        .map(Token::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercase and split on whitespace and punctuation. Apostrophes interior
/// to a word are kept ("can't" stays one token); all other punctuation is
/// discarded. Total on any input.
pub fn tokenize(text: &str) -> Vec<Token> {
    let lowered = text.to_lowercase().replace('\u{2019}', "'");
    let mut out = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = lowered.chars().collect();
    for (i, &ch) in chars.iter().enumerate() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if ch == '\''
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|c| c.is_alphanumeric())
        {
            current.push(ch);
        } else if !current.is_empty() {
            out.push(Token(std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        out.push(Token(current));
    }
    out
}

/// Split on '.', '!', '?', ';' when followed by whitespace or end of input.
/// Delimiters are dropped, fragments trimmed, empties removed.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut current = String::new();
    for (i, &ch) in chars.iter().enumerate() {
        let is_delim = matches!(ch, '.' | '!' | '?' | ';');
        let at_boundary = is_delim && chars.get(i + 1).map_or(true, |c| c.is_whitespace());
        if at_boundary {
            let frag = current.trim();
            if !frag.is_empty() {
                out.push(frag.to_string());
            }
            current.clear();
        } else {
            current.push(ch);
        }
    }
    let frag = current.trim();
    if !frag.is_empty() {
        out.push(frag.to_string());
    }
    out
}

const GREETINGS: [&str; 4] = ["hi", "hello", "hey", "dear"];
const CLOSINGS: [&str; 7] = [
    "regards",
    "best regards",
    "thanks",
    "thank you",
    "cheers",
    "sincerely",
    "best",
];

/// A greeting line is a greeting word, optionally followed by a short name
/// (at most two word tokens), optionally ending in punctuation.
fn is_greeting_line(line: &str) -> bool {
    let trimmed = line.trim().to_lowercase();
    let Some(greeting) = GREETINGS.iter().find(|g| trimmed.starts_with(**g)) else {
        return false;
    };
    let rest = &trimmed[greeting.len()..];
    if rest.chars().next().is_some_and(char::is_alphanumeric) {
        return false; // e.g. "high" is not "hi"
    }
    let rest = rest.trim_end_matches([',', '!', '.', ':']).trim();
    let name_tokens: Vec<&str> = rest.split_whitespace().collect();
    name_tokens.len() <= 2
        && name_tokens.iter().all(|t| {
            t.chars()
                .all(|c| c.is_alphabetic() || matches!(c, '.' | '\'' | '-'))
        })
}

fn is_closing_line(line: &str) -> bool {
    let trimmed = line.trim().to_lowercase();
    let trimmed = trimmed.strip_suffix(',').unwrap_or(&trimmed);
    CLOSINGS.contains(&trimmed)
}

/// Remove leading greeting lines and everything from the first closing line
/// to the end of the body. Idempotent.
pub fn strip_boilerplate(body: &str) -> String {
    let lines: Vec<&str> = body.lines().collect();
    let mut start = 0;
    while start < lines.len() && is_greeting_line(lines[start]) {
        start += 1;
    }
    let mut end = lines.len();
    for (i, line) in lines.iter().enumerate().skip(start) {
        if is_closing_line(line) {
            end = i;
            break;
        }
    }
    lines[start..end].join("\n").trim().to_string()
}

/// Keep only tokens present in the dictionary, preserving order.
pub fn filter_dictionary(toks: &[Token], dict: &Dictionary) -> Result<Vec<Token>, TextError> {
    if dict.is_empty() {
        return Err(TextError::EmptyDictionary);
    }
    Ok(toks
        .iter()
        .filter(|t| dict.contains(t.as_str()))
        .cloned()
        .collect())
}

/// Contiguous n-token windows, in order.
pub fn ngrams(toks: &[Token], n: usize) -> Result<Vec<&[Token]>, TextError> {
    if n == 0 {
        return Err(TextError::ZeroNgram);
    }
    if toks.len() < n {
        return Ok(Vec::new());
    }
    Ok(toks.windows(n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LengthBucket {
    Short,
    Medium,
    Long,
}

impl LengthBucket {
    pub fn as_str(self) -> &'static str {
        match self {
            LengthBucket::Short => "short",
            LengthBucket::Medium => "medium",
            LengthBucket::Long => "long",
        }
    }
}

/// Short ≤ 25 tokens, Medium 26–100, Long > 100.
pub fn length_bucket(toks: &[Token]) -> LengthBucket {
    match toks.len() {
        0..=25 => LengthBucket::Short,
        26..=100 => LengthBucket::Medium,
        _ => LengthBucket::Long,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Degree {
    Strong,
    Mild,
    Neutral,
}

/// Word polarity table plus intensifier set ("terribly", "very", ...). The
/// two sets are disjoint by construction.
#[derive(Debug, Clone)]
pub struct SentimentLexicon {
    polarity: HashMap<String, Polarity>,
    intensifiers: HashSet<String>,
}

#[derive(Deserialize)]
struct LexiconFile {
    positive: Vec<String>,
    negative: Vec<String>,
    intensifiers: Vec<String>,
}

impl SentimentLexicon {
    pub fn new(
        positive: impl IntoIterator<Item = String>,
        negative: impl IntoIterator<Item = String>,
        intensifiers: impl IntoIterator<Item = String>,
    ) -> Result<Self, TextError> {
        let mut polarity = HashMap::new();
        for w in positive {
            polarity.insert(w, Polarity::Positive);
        }
        for w in negative {
            if polarity.insert(w.clone(), Polarity::Negative) == Some(Polarity::Positive) {
                return Err(TextError::BadLexicon(format!(
                    "{w:?} listed as both positive and negative"
                )));
            }
        }
        let intensifiers: HashSet<String> = intensifiers.into_iter().collect();
        if let Some(w) = intensifiers.iter().find(|w| polarity.contains_key(*w)) {
            return Err(TextError::BadLexicon(format!(
                "{w:?} is both a polarity word and an intensifier"
            )));
        }
        Ok(SentimentLexicon {
            polarity,
            intensifiers,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, TextError> {
        let file: LexiconFile = serde_json::from_str(json)
            .map_err(|e| TextError::BadLexicon(format!("bad JSON: {e}")))?;
        Self::new(file.positive, file.negative, file.intensifiers)
    }

    /// The lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../assets/sentiment_lexicon.json"))
            .expect("bundled lexicon is valid")
    }

    pub fn polarity_of(&self, word: &str) -> Option<Polarity> {
        self.polarity.get(word).copied()
    }

    pub fn is_intensifier(&self, word: &str) -> bool {
        self.intensifiers.contains(word)
    }
}

/// Majority-sign polarity over lexicon hits (ties and no hits → Neutral),
/// and a degree: Strong when a polarity word sits next to an intensifier or
/// at least two polarity words occur, Mild for exactly one unintensified
/// polarity word, Neutral when no polarity word occurs.
pub fn sentiment(toks: &[Token], lex: &SentimentLexicon) -> (Polarity, Degree) {
    let hits: Vec<(usize, Polarity)> = toks
        .iter()
        .enumerate()
        .filter_map(|(i, t)| lex.polarity_of(t.as_str()).map(|p| (i, p)))
        .collect();
    let pos = hits.iter().filter(|(_, p)| *p == Polarity::Positive).count();
    let neg = hits.len() - pos;
    let polarity = match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => Polarity::Positive,
        std::cmp::Ordering::Less => Polarity::Negative,
        std::cmp::Ordering::Equal => Polarity::Neutral,
    };
    let intensified = hits.iter().any(|(i, _)| {
        let before = i.checked_sub(1).map(|j| &toks[j]);
        let after = toks.get(i + 1);
        before.is_some_and(|t| lex.is_intensifier(t.as_str()))
            || after.is_some_and(|t| lex.is_intensifier(t.as_str()))
    });
    let degree = if hits.is_empty() {
        Degree::Neutral
    } else if intensified || hits.len() >= 2 {
        Degree::Strong
    } else {
        Degree::Mild
    };
    (polarity, degree)
}

/// Wordlist used to drop non-dictionary tokens.
#[derive(Debug, Clone, Default)]
pub struct Dictionary {
    words: HashSet<String>,
}

impl Dictionary {
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        Dictionary {
            words: words.into_iter().collect(),
        }
    }

    /// One lowercase word per line; blank lines ignored.
    pub fn from_text(text: &str) -> Self {
        Self::from_words(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string),
        )
    }

    /// The wordlist shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_text(include_str!("../assets/dictionary.txt"))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

//! Email data model, JSONL ingestion, deterministic 80-20 splitting, and a
//! seeded synthetic persona-corpus generator.

pub mod generator;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nncore::Rng;

pub use generator::{
    default_personas, generate_calendar, generate_corpus, generate_labeled_sentences,
    Emotionality, SyntheticPersona, Verbosity, CALENDAR_NOW,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("duplicate email id {0:?}")]
    DuplicateId(String),
    #[error("email {id:?} replies to unknown id {target:?}")]
    DanglingReply { id: String, target: String },
    #[error("need at least {need} items to split, got {got}")]
    TooFewToSplit { need: usize, got: usize },
    #[error("synthetic corpus needs at least 2 personas, got {0}")]
    TooFewPersonas(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Whether the counterpart of an email thread is a work or personal contact.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum RecipientType {
    Work,
    Personal,
}

impl std::fmt::Display for RecipientType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RecipientType::Work => "work",
            RecipientType::Personal => "personal",
        })
    }
}

/// One raw message. Field order here is the serialized key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Email {
    pub id: String,
    #[serde(rename = "from")]
    pub sender: String,
    pub to: Vec<String>,
    pub recipient_type: RecipientType,
    pub subject: String,
    pub body: String,
    pub in_reply_to: Option<String>,
    pub timestamp: String,
}

/// Parse a JSONL corpus, validating id uniqueness and reply linkage.
pub fn load_corpus(path: &Path) -> Result<Vec<Email>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Vec<Email>, CorpusError> {
    let mut emails = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let email: Email = serde_json::from_str(line).map_err(|e| CorpusError::BadLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        if email.id.is_empty() {
            return Err(CorpusError::BadLine {
                line: i + 1,
                message: "empty id".into(),
            });
        }
        if !ids.insert(email.id.clone()) {
            return Err(CorpusError::DuplicateId(email.id));
        }
        emails.push(email);
    }
    for email in &emails {
        if let Some(target) = &email.in_reply_to {
            if !ids.contains(target) {
                return Err(CorpusError::DanglingReply {
                    id: email.id.clone(),
                    target: target.clone(),
                });
            }
        }
    }
    Ok(emails)
}

/// Write a corpus as JSONL with fixed key order, one email per line.
pub fn save_corpus(emails: &[Email], path: &Path) -> Result<(), CorpusError> {
    let io_err = |e: std::io::Error| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut out = Vec::new();
    for email in emails {
        serde_json::to_writer(&mut out, email).expect("email serialization cannot fail");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)
}

/// Root emails paired with their reply, in corpus order. Any email that is
/// not a reply counts as a root; the first reply found wins.
pub fn pair_threads(emails: &[Email]) -> Vec<(&Email, Option<&Email>)> {
    let mut reply_of = std::collections::HashMap::new();
    for email in emails {
        if let Some(target) = &email.in_reply_to {
            reply_of.entry(target.as_str()).or_insert(email);
        }
    }
    emails
        .iter()
        .filter(|e| e.in_reply_to.is_none())
        .map(|e| (e, reply_of.get(e.id.as_str()).copied()))
        .collect()
}

/// Seeded shuffle, then the first ⌈0.8·N⌉ items become the training half.
pub fn split_80_20<T>(items: Vec<T>, rng: &mut Rng) -> Result<(Vec<T>, Vec<T>), CorpusError> {
    if items.len() < 5 {
        return Err(CorpusError::TooFewToSplit {
            need: 5,
            got: items.len(),
        });
    }
    let mut items = items;
    rng.shuffle(&mut items);
    let train_len = (items.len() * 4).div_ceil(5);
    let test = items.split_off(train_len);
    Ok((items, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_email(id: &str, reply_to: Option<&str>) -> Email {
        Email {
            id: id.into(),
            sender: "a@example.com".into(),
            to: vec!["b@example.com".into()],
            recipient_type: RecipientType::Work,
            subject: "s".into(),
            body: "b".into(),
            in_reply_to: reply_to.map(String::from),
            timestamp: "2024-01-01T08:00".into(),
        }
    }

    #[test]
    fn empty_corpus_loads_empty() {
        assert!(parse_corpus("").unwrap().is_empty());
    }

    #[test]
    fn two_email_thread_round_trips() {
        let emails = vec![sample_email("m1", None), sample_email("m2", Some("m1"))];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emails.jsonl");
        save_corpus(&emails, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, emails);
        // byte-identical re-save
        let first = fs::read(&path).unwrap();
        save_corpus(&loaded, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
        let threads = pair_threads(&loaded);
        assert_eq!(threads.len(), 1);
        assert_eq!(threads[0].1.unwrap().id, "m2");
    }

    #[test]
    fn missing_id_reports_line_number() {
        let line = r#"{"from":"a","to":[],"recipient_type":"work","subject":"","body":"","in_reply_to":null,"timestamp":""}"#;
        let err = parse_corpus(line).unwrap_err();
        assert!(matches!(err, CorpusError::BadLine { line: 1, .. }), "{err}");
    }

    #[test]
    fn duplicate_and_dangling_ids_are_rejected() {
        let a = serde_json::to_string(&sample_email("m1", None)).unwrap();
        let dup = format!("{a}\n{a}");
        assert!(matches!(
            parse_corpus(&dup).unwrap_err(),
            CorpusError::DuplicateId(_)
        ));
        let b = serde_json::to_string(&sample_email("m2", Some("nope"))).unwrap();
        assert!(matches!(
            parse_corpus(&b).unwrap_err(),
            CorpusError::DanglingReply { .. }
        ));
    }

    #[test]
    fn split_80_20_sizes_and_partition() {
        let items: Vec<u32> = (0..10).collect();
        let (train, test) = split_80_20(items.clone(), &mut Rng::new(1)).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        let mut all: Vec<u32> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
    }

    #[test]
    fn split_is_deterministic_and_guards_size() {
        let items: Vec<u32> = (0..37).collect();
        let a = split_80_20(items.clone(), &mut Rng::new(9)).unwrap();
        let b = split_80_20(items.clone(), &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 30); // ceil(0.8 * 37)
        assert!(split_80_20(vec![1, 2, 3, 4], &mut Rng::new(1)).is_err());
    }
}

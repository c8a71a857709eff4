//! Per-user persona modeling: style features computed from past responses,
//! n-gram profiles with nearest-training-user mapping, similarity-based
//! dataset boosting, and fine-tuning of the global response model into a
//! user-specific one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::RequestResponsePair;
use crate::nncore::Rng;
use crate::responder::{continue_training, ResponderError, Seq2SeqModel, TrainSchedule};
use crate::textproc::{sentiment, Degree, Polarity, SentimentLexicon, Token};

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("no responses to compute features from")]
    NoResponses,
    #[error("no training profiles to map against")]
    NoTrainingProfiles,
    #[error("boost threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("user has no pairs to personalize from")]
    NoUserData,
    #[error("fine-tuning failed: {0}")]
    FineTune(#[from] ResponderError),
    #[error("bad profile JSON: {0}")]
    BadProfile(String),
}

/// Style summary of a user's past responses: average length, the share of
/// positive/negative/neutral responses, and the modal emotion degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaFeatures {
    pub avg_response_length: f64,
    /// Fractions of responses with positive, negative, neutral polarity;
    /// sums to 1.
    pub polarity_dist: [f64; 3],
    pub dominant_degree: Degree,
}

impl PersonaFeatures {
    /// The persona-blind conditioning used by the generic (non-personalized)
    /// decoder: medium length, neutral polarity, neutral degree.
    pub fn generic() -> Self {
        PersonaFeatures {
            avg_response_length: 8.0,
            polarity_dist: [0.0, 0.0, 1.0],
            dominant_degree: Degree::Neutral,
        }
    }
}

/// Mean response length, per-response polarity fractions, and the modal
/// degree (ties fall back to Neutral).
pub fn persona_features(
    responses: &[Vec<Token>],
    lex: &SentimentLexicon,
) -> Result<PersonaFeatures, PersonaError> {
    if responses.is_empty() {
        return Err(PersonaError::NoResponses);
    }
    let n = responses.len() as f64;
    let avg_response_length =
        responses.iter().map(|r| r.len() as f64).sum::<f64>() / n;
    let mut polarity_counts = [0usize; 3];
    let mut degree_counts: BTreeMap<Degree, usize> = BTreeMap::new();
    for response in responses {
        let (polarity, degree) = sentiment(response, lex);
        let slot = match polarity {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
            Polarity::Neutral => 2,
        };
        polarity_counts[slot] += 1;
        *degree_counts.entry(degree).or_insert(0) += 1;
    }
    let polarity_dist = [
        polarity_counts[0] as f64 / n,
        polarity_counts[1] as f64 / n,
        polarity_counts[2] as f64 / n,
    ];
    let top = degree_counts.values().max().copied().unwrap_or(0);
    let modal: Vec<Degree> = degree_counts
        .iter()
        .filter(|(_, c)| **c == top)
        .map(|(d, _)| *d)
        .collect();
    let dominant_degree = if modal.len() == 1 {
        modal[0]
    } else {
        Degree::Neutral
    };
    Ok(PersonaFeatures {
        avg_response_length,
        polarity_dist,
        dominant_degree,
    })
}

/// Sparse 1/2/3-gram counts over everything a user has written in replies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    /// n-gram (tokens joined by spaces) → count
    pub ngram_counts: BTreeMap<String, u64>,
    pub total: u64,
}

pub fn build_profile(
    user_id: &str,
    responses: &[Vec<Token>],
) -> Result<UserProfile, PersonaError> {
    if responses.is_empty() {
        return Err(PersonaError::NoResponses);
    }
    let mut ngram_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for response in responses {
        for n in 1..=3 {
            for gram in crate::textproc::ngrams(response, n).expect("n >= 1") {
                let key = gram
                    .iter()
                    .map(Token::as_str)
                    .collect::<Vec<_>>()
                    .join(" ");
                *ngram_counts.entry(key).or_insert(0) += 1;
                total += 1;
            }
        }
    }
    Ok(UserProfile {
        user_id: user_id.to_string(),
        ngram_counts,
        total,
    })
}

fn profile_norm(p: &UserProfile) -> f64 {
    p.ngram_counts
        .values()
        .map(|&c| (c as f64) * (c as f64))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity over L2-normalized n-gram count vectors; zero vectors
/// compare as 0 to everything.
pub fn profile_similarity(a: &UserProfile, b: &UserProfile) -> f64 {
    let (na, nb) = (profile_norm(a), profile_norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a
        .ngram_counts
        .iter()
        .filter_map(|(k, &ca)| b.ngram_counts.get(k).map(|&cb| ca as f64 * cb as f64))
        .sum();
    dot / (na * nb)
}

/// Map a profile onto the most similar training user. Ties break toward the
/// lexicographically smaller user id.
pub fn nearest_user(
    profile: &UserProfile,
    training_profiles: &[UserProfile],
) -> Result<(String, f64), PersonaError> {
    if training_profiles.is_empty() {
        return Err(PersonaError::NoTrainingProfiles);
    }
    let mut ranked: Vec<&UserProfile> = training_profiles.iter().collect();
    ranked.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    let mut best: Option<(&str, f64)> = None;
    for candidate in ranked {
        let sim = profile_similarity(profile, candidate);
        if best.map_or(true, |(_, s)| sim > s) {
            best = Some((&candidate.user_id, sim));
        }
    }
    let (user_id, sim) = best.expect("non-empty training set");
    Ok((user_id.to_string(), sim))
}

/// Request-to-request similarity in [0, 1]. The boost step only depends on
/// this contract, so the scoring function is swappable.
pub trait RequestSimilarity {
    fn similarity(&self, a: &[Token], b: &[Token]) -> f64;
}

/// Cosine similarity of mean trained-embedding vectors, with identical
/// token sequences pinned to exactly 1.
pub struct EmbeddingSimilarity<'a> {
    pub model: &'a Seq2SeqModel,
}

impl EmbeddingSimilarity<'_> {
    fn mean_vector(&self, toks: &[Token]) -> Option<Vec<f64>> {
        if toks.is_empty() {
            return None;
        }
        let dim = self.model.embedding.dim;
        let mut mean = vec![0.0; dim];
        for tok in toks {
            let row = self.model.embedding.lookup(self.model.vocab.id_of(tok));
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= toks.len() as f64;
        }
        Some(mean)
    }
}

impl RequestSimilarity for EmbeddingSimilarity<'_> {
    fn similarity(&self, a: &[Token], b: &[Token]) -> f64 {
        if a == b {
            return 1.0;
        }
        let (Some(va), Some(vb)) = (self.mean_vector(a), self.mean_vector(b)) else {
            return 0.0;
        };
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// Enlarge a user's training set: every global request at least `threshold`
/// similar to one of the user's own requests is paired with that user's
/// response. The original pairs are always retained first.
pub fn boost_dataset(
    user_pairs: &[RequestResponsePair],
    global_requests: &[Vec<Token>],
    sim: &dyn RequestSimilarity,
    threshold: f64,
) -> Result<Vec<RequestResponsePair>, PersonaError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PersonaError::BadThreshold(threshold));
    }
    let mut out = user_pairs.to_vec();
    for request in global_requests {
        let mut best: Option<(f64, &RequestResponsePair)> = None;
        for pair in user_pairs {
            let s = sim.similarity(request, &pair.request);
            if best.map_or(true, |(bs, _)| s > bs) {
                best = Some((s, pair));
            }
        }
        if let Some((s, pair)) = best {
            if s >= threshold {
                out.push(RequestResponsePair {
                    request: request.clone(),
                    response: pair.response.clone(),
                    user_id: pair.user_id.clone(),
                    persona: pair.persona.clone(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip: f64,
    pub boost_threshold: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            lr: 0.05,
            epochs: 20,
            batch_size: 64,
            clip: 5.0,
            boost_threshold: 0.85,
        }
    }
}

/// Fine-tune a copy of the global model on the user's boosted pairs, with
/// the user's own persona driving the source-side persona tokens. Zero
/// epochs returns the global parameters unchanged.
pub fn personalize(
    global_model: &Seq2SeqModel,
    user_pairs: &[RequestResponsePair],
    boosted_pairs: &[RequestResponsePair],
    persona: &PersonaFeatures,
    cfg: &FineTuneConfig,
    rng: &mut Rng,
) -> Result<Seq2SeqModel, PersonaError> {
    if user_pairs.is_empty() || boosted_pairs.is_empty() {
        return Err(PersonaError::NoUserData);
    }
    let mut model = global_model.clone();
    if cfg.epochs == 0 {
        return Ok(model);
    }
    continue_training(
        &mut model,
        boosted_pairs,
        Some(persona),
        &TrainSchedule {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            lr_halve_every: 0,
            clip: cfg.clip,
        },
        rng,
    )?;
    Ok(model)
}

/// On-disk profile record: `{"user_id":..., "ngrams": {...}, "persona": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub user_id: String,
    pub ngrams: BTreeMap<String, u64>,
    pub persona: PersonaFeatures,
}

impl ProfileRecord {
    pub fn new(profile: &UserProfile, persona: &PersonaFeatures) -> Self {
        ProfileRecord {
            user_id: profile.user_id.clone(),
            ngrams: profile.ngram_counts.clone(),
            persona: persona.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self, PersonaError> {
        serde_json::from_str(json).map_err(|e| PersonaError::BadProfile(e.to_string()))
    }

    pub fn profile(&self) -> UserProfile {
        UserProfile {
            user_id: self.user_id.clone(),
            ngram_counts: self.ngrams.clone(),
            total: self.ngrams.values().sum(),
        }
    }
}

//! Binary gate deciding whether an incoming email should get automatic
//! reply suggestions: L2-regularized logistic regression with no bias over
//! hashed 2/3/4-gram and length features, plus the ground-truth labeling
//! rule used to annotate a corpus.

use std::collections::BTreeMap;

use crate::corpus::Email;
use crate::nncore::{layers::sigmoid, ModelFile, Rng};
use crate::textproc::{
    filter_dictionary, length_bucket, ngrams, split_sentences, strip_boilerplate, tokenize,
    Dictionary, Token,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("reply {reply_id:?} does not reference email {email_id:?}")]
    LinkageMismatch { email_id: String, reply_id: String },
    #[error("training data is empty")]
    EmptyData,
    #[error("training data is imbalanced: {positives}/{total} positive (need 45-55%)")]
    Imbalanced { positives: usize, total: usize },
    #[error("lr*lambda/N = {0} leaves no stable decay step; lower lr or lambda")]
    UnstableDecay(f64),
    #[error("training diverged: non-finite weights")]
    Diverged,
    #[error("model file: {0}")]
    Model(#[from] crate::nncore::NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriageLabel {
    Positive,
    Negative,
}

/// Replies at most this long (in tokens, after stripping) are considered
/// answerable automatically.
pub const MAX_REPLY_TOKENS: usize = 25;
/// Replies with at most this many sentences are considered answerable.
pub const MAX_REPLY_SENTENCES: usize = 2;

/// Ground truth: an email is Positive when it got a reply whose stripped
/// body has at most two sentences and at most 25 tokens.
pub fn label_email(email: &Email, reply: Option<&Email>) -> Result<TriageLabel, TriageError> {
    let Some(reply) = reply else {
        return Ok(TriageLabel::Negative);
    };
    if reply.in_reply_to.as_deref() != Some(email.id.as_str()) {
        return Err(TriageError::LinkageMismatch {
            email_id: email.id.clone(),
            reply_id: reply.id.clone(),
        });
    }
    let stripped = strip_boilerplate(&reply.body);
    let sentence_count = split_sentences(&stripped).len();
    let token_count = tokenize(&stripped).len();
    if token_count > 0
        && sentence_count <= MAX_REPLY_SENTENCES
        && token_count <= MAX_REPLY_TOKENS
    {
        Ok(TriageLabel::Positive)
    } else {
        Ok(TriageLabel::Negative)
    }
}

const FEATURE_SPACE_BITS: u32 = 20;
const FEATURE_MASK: u64 = (1 << FEATURE_SPACE_BITS) - 1;

pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash a feature id string into the 2^20 feature space.
pub fn feature_bucket(id: &str) -> u32 {
    (fnv1a64(id) & FEATURE_MASK) as u32
}

/// Sparse feature counts keyed by hashed bucket. In debug mode the original
/// id strings are retained alongside.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriageFeatures {
    pub counts: BTreeMap<u32, f64>,
    pub names: Option<BTreeMap<u32, String>>,
}

impl TriageFeatures {
    fn bump(&mut self, id: String) {
        let bucket = feature_bucket(&id);
        *self.counts.entry(bucket).or_insert(0.0) += 1.0;
        if let Some(names) = &mut self.names {
            names.entry(bucket).or_insert(id);
        }
    }
}

fn featurize_tokens(toks: &[Token], debug: bool) -> TriageFeatures {
    let mut features = TriageFeatures {
        counts: BTreeMap::new(),
        names: debug.then(BTreeMap::new),
    };
    for n in 2..=4 {
        for gram in ngrams(toks, n).expect("n >= 1") {
            let words: Vec<&str> = gram.iter().map(Token::as_str).collect();
            features.bump(format!("{n}:{}", words.join("_")));
        }
    }
    features.bump(format!("len:{}", length_bucket(toks).as_str()));
    features
}

fn preprocess(email: &Email, dict: &Dictionary) -> Vec<Token> {
    let toks = tokenize(&strip_boilerplate(&email.body));
    filter_dictionary(&toks, dict).expect("dictionary is non-empty")
}

/// 2/3/4-gram counts over the preprocessed body plus one length feature.
pub fn featurize(email: &Email, dict: &Dictionary) -> TriageFeatures {
    featurize_tokens(&preprocess(email, dict), false)
}

/// Same as [`featurize`] but retains the readable feature id strings.
pub fn featurize_debug(email: &Email, dict: &Dictionary) -> TriageFeatures {
    featurize_tokens(&preprocess(email, dict), true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriageConfig {
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for TriageConfig {
    fn default() -> Self {
        TriageConfig {
            lambda: 0.1,
            lr: 0.1,
            epochs: 20,
        }
    }
}

/// Trained triage classifier. There is deliberately no bias slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TriageModel {
    pub weights: BTreeMap<u32, f64>,
    pub lambda: f64,
}

impl TriageModel {
    /// σ(Σ w_f · count_f); 0.5 or above means "attempt a reply".
    pub fn predict(&self, features: &TriageFeatures) -> f64 {
        let z: f64 = features
            .counts
            .iter()
            .map(|(bucket, count)| self.weights.get(bucket).copied().unwrap_or(0.0) * count)
            .sum();
        sigmoid(z)
    }

    pub fn predict_email(&self, email: &Email, dict: &Dictionary) -> f64 {
        self.predict(&featurize(email, dict))
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn to_model_file(&self) -> ModelFile {
        let mut file = ModelFile::new("triage");
        let buckets: Vec<u32> = self.weights.keys().copied().collect();
        let values: Vec<f64> = self.weights.values().copied().collect();
        file.push_tensor("weights", vec![values.len()], &values);
        file.meta = serde_json::json!({ "lambda": self.lambda, "buckets": buckets });
        file
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self, TriageError> {
        file.expect_kind("triage")?;
        let values = file.vector("weights")?;
        let buckets: Vec<u32> = serde_json::from_value(file.meta["buckets"].clone())
            .map_err(|e| crate::nncore::NnError::Model(format!("bad bucket list: {e}")))?;
        if buckets.len() != values.len() {
            return Err(crate::nncore::NnError::Model(
                "bucket/weight count mismatch".into(),
            )
            .into());
        }
        let lambda = file.meta["lambda"].as_f64().unwrap_or(0.0);
        Ok(TriageModel {
            weights: buckets.into_iter().zip(values).collect(),
            lambda,
        })
    }
}

/// Shuffled SGD on the regularized log loss. The per-example gradient is
/// (σ(w·x) − y)·x + λ·w/N; the L2 term is applied lazily through a global
/// scale factor so each step stays O(active features).
pub fn train_triage(
    data: &[(TriageFeatures, TriageLabel)],
    cfg: &TriageConfig,
    rng: &mut Rng,
) -> Result<TriageModel, TriageError> {
    if data.is_empty() {
        return Err(TriageError::EmptyData);
    }
    let positives = data
        .iter()
        .filter(|(_, l)| *l == TriageLabel::Positive)
        .count();
    let frac = positives as f64 / data.len() as f64;
    if !(0.45..=0.55).contains(&frac) {
        return Err(TriageError::Imbalanced {
            positives,
            total: data.len(),
        });
    }
    let n = data.len() as f64;
    let decay = 1.0 - cfg.lr * cfg.lambda / n;
    if decay <= 0.0 {
        return Err(TriageError::UnstableDecay(cfg.lr * cfg.lambda / n));
    }

    // scaled weights: true weight = scale * raw
    let mut raw: BTreeMap<u32, f64> = BTreeMap::new();
    let mut scale = 1.0f64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for &idx in &order {
            let (features, label) = &data[idx];
            let z: f64 = features
                .counts
                .iter()
                .map(|(b, c)| raw.get(b).copied().unwrap_or(0.0) * scale * c)
                .sum();
            let y = if *label == TriageLabel::Positive { 1.0 } else { 0.0 };
            let g = sigmoid(z) - y;
            scale *= decay;
            if scale < 1e-100 {
                for v in raw.values_mut() {
                    *v *= scale;
                }
                scale = 1.0;
            }
            for (bucket, count) in &features.counts {
                *raw.entry(*bucket).or_insert(0.0) -= cfg.lr * g * count / scale;
            }
        }
    }
    let weights: BTreeMap<u32, f64> = raw.into_iter().map(|(b, v)| (b, v * scale)).collect();
    if weights.values().any(|w| !w.is_finite()) {
        return Err(TriageError::Diverged);
    }
    Ok(TriageModel {
        weights,
        lambda: cfg.lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RecipientType;

    fn email(id: &str, body: &str, reply_to: Option<&str>) -> Email {
        Email {
            id: id.into(),
            sender: "a@example.com".into(),
            to: vec!["b@example.com".into()],
            recipient_type: RecipientType::Work,
            subject: "s".into(),
            body: body.into(),
            in_reply_to: reply_to.map(String::from),
            timestamp: "2024-01-01T08:00".into(),
        }
    }

    fn dict_with(words: &[&str]) -> Dictionary {
        Dictionary::from_words(words.iter().map(|w| w.to_string()))
    }

    #[test]
    fn label_email_examples() {
        let root = email("m1", "Can we meet on friday?", None);
        assert_eq!(label_email(&root, None).unwrap(), TriageLabel::Negative);

        let short = email("m2", "Sounds good. See you then.", Some("m1"));
        assert_eq!(
            label_email(&root, Some(&short)).unwrap(),
            TriageLabel::Positive
        );

        let long = email(
            "m3",
            "I looked at it. The plan needs work. Let us talk next week.",
            Some("m1"),
        );
        assert_eq!(
            label_email(&root, Some(&long)).unwrap(),
            TriageLabel::Negative
        );

        let wrong_link = email("m4", "ok", Some("other"));
        assert!(label_email(&root, Some(&wrong_link)).is_err());
    }

    #[test]
    fn label_email_counts_after_stripping() {
        let root = email("m1", "Can we meet?", None);
        // 26 tokens once the greeting and closing are gone would be Negative;
        // 4 tokens is Positive even with boilerplate around it.
        let reply = email("m2", "Hi Ann,\nok see you friday\nRegards,\nBob", Some("m1"));
        assert_eq!(
            label_email(&root, Some(&reply)).unwrap(),
            TriageLabel::Positive
        );
        // an all-boilerplate reply has nothing to learn from
        let empty = email("m5", "Thanks,\nBob", Some("m1"));
        assert_eq!(
            label_email(&root, Some(&empty)).unwrap(),
            TriageLabel::Negative
        );
    }

    #[test]
    fn featurize_expected_ids() {
        let dict = dict_with(&["see", "you", "friday"]);
        let mail = email("m1", "see you friday", None);
        let features = featurize_debug(&mail, &dict);
        let names: Vec<&str> = features
            .names
            .as_ref()
            .unwrap()
            .values()
            .map(String::as_str)
            .collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        assert_eq!(
            sorted,
            vec!["2:see_you", "2:you_friday", "3:see_you_friday", "len:short"]
        );
        assert!(features.counts.values().all(|&c| c == 1.0));
    }

    #[test]
    fn featurize_empty_body_is_just_length() {
        let dict = dict_with(&["word"]);
        let features = featurize_debug(&email("m1", "", None), &dict);
        let names: Vec<&str> = features
            .names
            .as_ref()
            .unwrap()
            .values()
            .map(String::as_str)
            .collect();
        assert_eq!(names, vec!["len:short"]);
    }

    #[test]
    fn featurize_never_emits_unigrams_and_one_length_feature() {
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let dict = Dictionary::from_words(words.clone());
        let body = words.join(" ");
        let f = featurize_debug(&email("m1", &body, None), &dict);
        let names = f.names.as_ref().unwrap();
        let len_feats: Vec<&String> = names.values().filter(|n| n.starts_with("len:")).collect();
        assert_eq!(len_feats, vec!["len:medium"]);
        assert!(names.values().all(|n| !n.starts_with("1:")));
    }

    fn separable_data(n_per_class: usize) -> Vec<(TriageFeatures, TriageLabel)> {
        // positive emails say "can we meet", negatives "report is attached"
        let dict = dict_with(&["can", "we", "meet", "report", "is", "attached", "the"]);
        let mut data = Vec::new();
        for i in 0..n_per_class {
            let pos = email(&format!("p{i}"), "can we meet", None);
            data.push((featurize(&pos, &dict), TriageLabel::Positive));
            let neg = email(&format!("n{i}"), "the report is attached", None);
            data.push((featurize(&neg, &dict), TriageLabel::Negative));
        }
        data
    }

    #[test]
    fn linearly_separable_data_trains_to_high_accuracy() {
        let data = separable_data(50);
        let model = train_triage(&data, &TriageConfig::default(), &mut Rng::new(7)).unwrap();
        let correct = data
            .iter()
            .filter(|(f, l)| (model.predict(f) >= 0.5) == (*l == TriageLabel::Positive))
            .count();
        assert!(correct as f64 / data.len() as f64 >= 0.99);
    }

    #[test]
    fn single_repeated_positive_example_saturates() {
        let dict = dict_with(&["can", "we", "meet"]);
        let f = featurize(&email("p", "can we meet", None), &dict);
        // keep balance by pairing with a distinct negative
        let g = featurize(&email("n", "", None), &dict);
        let data: Vec<_> = (0..20)
            .flat_map(|_| {
                [
                    (f.clone(), TriageLabel::Positive),
                    (g.clone(), TriageLabel::Negative),
                ]
            })
            .collect();
        let model = train_triage(&data, &TriageConfig::default(), &mut Rng::new(1)).unwrap();
        assert!(model.predict(&f) > 0.9);
    }

    #[test]
    fn huge_lambda_shrinks_weights_to_nothing() {
        let data = separable_data(10);
        let cfg = TriageConfig {
            lambda: 1e6,
            lr: 1e-5, // keeps lr*lambda/N below 1
            epochs: 20,
        };
        let model = train_triage(&data, &cfg, &mut Rng::new(3)).unwrap();
        assert!(model.weight_norm() < 1e-2, "norm {}", model.weight_norm());
    }

    #[test]
    fn unstable_decay_is_rejected_not_diverged() {
        let data = separable_data(5);
        let cfg = TriageConfig {
            lambda: 1e6,
            lr: 0.1,
            epochs: 1,
        };
        assert!(matches!(
            train_triage(&data, &cfg, &mut Rng::new(3)),
            Err(TriageError::UnstableDecay(_))
        ));
    }

    #[test]
    fn regularization_is_monotone_in_lambda() {
        let data = separable_data(40);
        let norm_at = |lambda: f64| {
            let cfg = TriageConfig {
                lambda,
                ..TriageConfig::default()
            };
            train_triage(&data, &cfg, &mut Rng::new(11))
                .unwrap()
                .weight_norm()
        };
        let n0 = norm_at(0.0);
        let n01 = norm_at(0.1);
        let n1 = norm_at(1.0);
        assert!(n1 <= n01 && n01 <= n0, "norms {n1} {n01} {n0}");
    }

    #[test]
    fn zero_weights_predict_half() {
        let model = TriageModel {
            weights: BTreeMap::new(),
            lambda: 0.1,
        };
        let dict = dict_with(&["any", "words"]);
        let f = featurize(&email("m", "any words at all", None), &dict);
        assert_eq!(model.predict(&f), 0.5);
    }

    #[test]
    fn balance_guard_and_empty_data() {
        assert!(matches!(
            train_triage(&[], &TriageConfig::default(), &mut Rng::new(1)),
            Err(TriageError::EmptyData)
        ));
        let dict = dict_with(&["a", "b"]);
        let f = featurize(&email("m", "a b", None), &dict);
        let data: Vec<_> = (0..10).map(|_| (f.clone(), TriageLabel::Positive)).collect();
        assert!(matches!(
            train_triage(&data, &TriageConfig::default(), &mut Rng::new(1)),
            Err(TriageError::Imbalanced { .. })
        ));
    }

    #[test]
    fn training_is_deterministic_and_serializable() {
        let data = separable_data(20);
        let a = train_triage(&data, &TriageConfig::default(), &mut Rng::new(5)).unwrap();
        let b = train_triage(&data, &TriageConfig::default(), &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        let json = a.to_model_file().to_json();
        let back = TriageModel::from_model_file(&ModelFile::from_json(&json).unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_model_file().to_json(), json);
    }
}

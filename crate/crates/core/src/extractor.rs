//! Request/question extraction: an LSTM sentence classifier separating
//! request sentences from everything else, and the assembly of
//! (request, response) training pairs from triage-positive email threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Email;
use crate::nncore::{
    affine, bce_loss, dropout_mask, layers::sigmoid, lstm_backward, lstm_forward, sgd_step,
    EmbeddingGrads, EmbeddingTable, LstmParams, Matrix, ModelFile, NnError, Rng,
};
use crate::persona::PersonaFeatures;
use crate::responder::Vocab;
use crate::textproc::{
    filter_dictionary, split_sentences, strip_boilerplate, tokenize, Dictionary, Token,
};
use crate::triage::{label_email, TriageLabel};

#[derive(Debug, Error)]
pub enum ExtractorError {
    #[error("training data is empty")]
    EmptyData,
    #[error("training data is imbalanced: {positives}/{total} positive (need 45-55%)")]
    Imbalanced { positives: usize, total: usize },
    #[error("sentence {index} in the training data has no tokens")]
    EmptySentenceInData { index: usize },
    #[error("cannot classify an empty sentence")]
    EmptySentence,
    #[error("reply {reply_id:?} does not reference email {email_id:?}")]
    LinkageMismatch { email_id: String, reply_id: String },
    #[error("email {0:?} is triage-negative; pairs are only extracted from positives")]
    NotTriagePositive(String),
    #[error("line {line}: {message}")]
    BadSentenceLine { line: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("text: {0}")]
    Text(#[from] crate::textproc::TextError),
    #[error("vocab: {0}")]
    Vocab(#[from] Box<crate::responder::ResponderError>),
}

/// One extracted question/request with the reply it received; the seq2seq
/// training unit. The persona starts out neutral and is filled in by the
/// persona stage once per-user features exist.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestResponsePair {
    pub request: Vec<Token>,
    pub response: Vec<Token>,
    pub user_id: String,
    pub persona: PersonaFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub vocab_size: usize,
    pub max_len: usize,
    pub clip: f64,
    pub init_scale: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            embed_dim: 64,
            hidden_dim: 100,
            batch_size: 64,
            dropout: 0.2,
            epochs: 3,
            lr: 1.0,
            vocab_size: 2000,
            max_len: 30,
            clip: 5.0,
            init_scale: 0.08,
        }
    }
}

/// Embedding → LSTM → dense(1) → sigmoid over the final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceClassifier {
    pub embedding: EmbeddingTable,
    pub lstm: LstmParams,
    pub dense_w: Matrix,
    pub dense_b: Vec<f64>,
    pub vocab: Vocab,
    pub max_len: usize,
}

impl SentenceClassifier {
    fn forward_hidden(&self, ids: &[u32]) -> Vec<f64> {
        let xs = self.embedding.embed_sequence(ids);
        let zeros = vec![0.0; self.lstm.hidden_dim];
        let trace = lstm_forward(&self.lstm, &xs, &zeros, &zeros)
            .expect("classifier shapes are consistent by construction");
        let (h, _) = trace.final_state();
        h.to_vec()
    }

    fn ids(&self, sentence: &[Token]) -> Vec<u32> {
        sentence
            .iter()
            .take(self.max_len)
            .map(|t| self.vocab.id_of(t))
            .collect()
    }

    /// Probability that the sentence is a request or question. Inference
    /// applies no dropout and is deterministic.
    pub fn classify(&self, sentence: &[Token]) -> Result<f64, ExtractorError> {
        if sentence.is_empty() {
            return Err(ExtractorError::EmptySentence);
        }
        let h = self.forward_hidden(&self.ids(sentence));
        let z = affine(&self.dense_w, &self.dense_b, &h)?;
        Ok(sigmoid(z[0]))
    }

    pub fn to_model_file(&self) -> ModelFile {
        let mut file = ModelFile::new("sentence-classifier");
        file.push_matrix("embedding", &self.embedding.rows);
        file.push_matrix("lstm.w", &self.lstm.w);
        file.push_matrix("lstm.u", &self.lstm.u);
        file.push_tensor("lstm.b", vec![self.lstm.b.len()], &self.lstm.b);
        file.push_matrix("dense.w", &self.dense_w);
        file.push_tensor("dense.b", vec![self.dense_b.len()], &self.dense_b);
        file.meta = serde_json::json!({
            "embed_dim": self.embedding.dim,
            "hidden_dim": self.lstm.hidden_dim,
            "max_len": self.max_len,
            "vocab": self.vocab_surfaces(),
        });
        file
    }

    fn vocab_surfaces(&self) -> Vec<String> {
        (0..self.vocab.len() as u32)
            .map(|id| self.vocab.surface(id).to_string())
            .collect()
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self, ExtractorError> {
        file.expect_kind("sentence-classifier")?;
        let surfaces: Vec<String> = serde_json::from_value(file.meta["vocab"].clone())
            .map_err(|e| NnError::Model(format!("bad vocab: {e}")))?;
        let vocab = Vocab::from_surfaces(surfaces).map_err(Box::new)?;
        let embed_dim = file.meta["embed_dim"].as_u64().unwrap_or(0) as usize;
        let hidden_dim = file.meta["hidden_dim"].as_u64().unwrap_or(0) as usize;
        let max_len = file.meta["max_len"].as_u64().unwrap_or(30) as usize;
        let rows = file.matrix("embedding")?;
        Ok(SentenceClassifier {
            embedding: EmbeddingTable {
                vocab_size: rows.rows(),
                dim: rows.cols(),
                rows,
            },
            lstm: LstmParams {
                input_dim: embed_dim,
                hidden_dim,
                w: file.matrix("lstm.w")?,
                u: file.matrix("lstm.u")?,
                b: file.vector("lstm.b")?,
            },
            dense_w: file.matrix("dense.w")?,
            dense_b: file.vector("dense.b")?,
            vocab,
            max_len,
        })
    }
}

/// Train the request/question classifier: binary log loss over the final
/// hidden state, inverted dropout on that state, mini-batch SGD with global
/// clipping. Deterministic given the seed.
pub fn train_sentence_classifier(
    data: &[(Vec<Token>, bool)],
    cfg: &ClassifierConfig,
    rng: &mut Rng,
) -> Result<SentenceClassifier, ExtractorError> {
    if data.is_empty() {
        return Err(ExtractorError::EmptyData);
    }
    if let Some(index) = data.iter().position(|(s, _)| s.is_empty()) {
        return Err(ExtractorError::EmptySentenceInData { index });
    }
    let positives = data.iter().filter(|(_, label)| *label).count();
    let frac = positives as f64 / data.len() as f64;
    if !(0.45..=0.55).contains(&frac) {
        return Err(ExtractorError::Imbalanced {
            positives,
            total: data.len(),
        });
    }

    let vocab = Vocab::build(data.iter().map(|(s, _)| s.as_slice()), cfg.vocab_size)
        .map_err(Box::new)?;
    let mut model = SentenceClassifier {
        embedding: EmbeddingTable::init_uniform(rng, vocab.len(), cfg.embed_dim, cfg.init_scale),
        lstm: LstmParams::init_uniform(rng, cfg.embed_dim, cfg.hidden_dim, cfg.init_scale),
        dense_w: Matrix::init_uniform(rng, 1, cfg.hidden_dim, cfg.init_scale),
        dense_b: vec![0.0],
        vocab,
        max_len: cfg.max_len,
    };

    let examples: Vec<(Vec<u32>, f64)> = data
        .iter()
        .map(|(s, label)| (model.ids(s), if *label { 1.0 } else { 0.0 }))
        .collect();

    let hd = cfg.hidden_dim;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let scale = 1.0 / batch.len() as f64;
            let mut d_emb = EmbeddingGrads::zeros(&model.embedding);
            let mut d_lstm_w = Matrix::zeros(4 * hd, cfg.embed_dim);
            let mut d_lstm_u = Matrix::zeros(4 * hd, hd);
            let mut d_lstm_b = vec![0.0; 4 * hd];
            let mut d_dense_w = Matrix::zeros(1, hd);
            let mut d_dense_b = vec![0.0];
            for &i in batch {
                let (ids, y) = &examples[i];
                let xs = model.embedding.embed_sequence(ids);
                let zeros = vec![0.0; hd];
                let trace = lstm_forward(&model.lstm, &xs, &zeros, &zeros)?;
                let (h, _) = trace.final_state();
                let mask = dropout_mask(rng, hd, cfg.dropout)?;
                let h_dropped: Vec<f64> = h.iter().zip(&mask).map(|(a, m)| a * m).collect();
                let z = affine(&model.dense_w, &model.dense_b, &h_dropped)?;
                let p = sigmoid(z[0]);
                let _ = bce_loss(p, *y); // tracked by callers through eval, not here
                let dz = (p - y) * scale;
                d_dense_w.add_outer(&[dz], &h_dropped);
                d_dense_b[0] += dz;
                let mut dh = vec![0.0; hd];
                model.dense_w.matvec_t_add(&[dz], &mut dh);
                for (d, m) in dh.iter_mut().zip(&mask) {
                    *d *= m;
                }
                let mut dh_seq = vec![vec![0.0; hd]; ids.len()];
                *dh_seq.last_mut().expect("non-empty sentence") = dh;
                let back = lstm_backward(&model.lstm, &trace, &dh_seq, &zeros)?;
                for (a, b) in d_lstm_w.data_mut().iter_mut().zip(back.dw.data()) {
                    *a += b;
                }
                for (a, b) in d_lstm_u.data_mut().iter_mut().zip(back.du.data()) {
                    *a += b;
                }
                for (a, b) in d_lstm_b.iter_mut().zip(&back.db) {
                    *a += b;
                }
                for (t, &id) in ids.iter().enumerate() {
                    d_emb.accumulate(id, &back.dxs[t]);
                }
            }
            sgd_step(
                &mut [
                    model.embedding.rows.data_mut(),
                    model.lstm.w.data_mut(),
                    model.lstm.u.data_mut(),
                    &mut model.lstm.b,
                    model.dense_w.data_mut(),
                    &mut model.dense_b,
                ],
                &[
                    d_emb.rows.data(),
                    d_lstm_w.data(),
                    d_lstm_u.data(),
                    &d_lstm_b,
                    d_dense_w.data(),
                    &d_dense_b,
                ],
                cfg.lr,
                cfg.clip,
            );
        }
    }
    Ok(model)
}

/// Sentences of the stripped body classified as requests, in original
/// order. An empty result means the email is rejected for auto-reply.
pub fn extract_requests(model: &SentenceClassifier, email: &Email) -> Vec<String> {
    split_sentences(&strip_boilerplate(&email.body))
        .into_iter()
        .filter(|sentence| {
            let toks = tokenize(sentence);
            !toks.is_empty()
                && model
                    .classify(&toks)
                    .expect("non-empty sentence classifies")
                    >= 0.5
        })
        .collect()
}

/// Pair every request sentence of a triage-positive email with its single
/// preprocessed reply. The reply must link back to the email and the thread
/// must label Positive; the persona field is left neutral for the persona
/// stage to fill.
pub fn extract_pairs(
    model: &SentenceClassifier,
    email: &Email,
    reply: &Email,
    user_id: &str,
    dict: &Dictionary,
) -> Result<Vec<RequestResponsePair>, ExtractorError> {
    if reply.in_reply_to.as_deref() != Some(email.id.as_str()) {
        return Err(ExtractorError::LinkageMismatch {
            email_id: email.id.clone(),
            reply_id: reply.id.clone(),
        });
    }
    let label = label_email(email, Some(reply)).map_err(|_| ExtractorError::LinkageMismatch {
        email_id: email.id.clone(),
        reply_id: reply.id.clone(),
    })?;
    if label != TriageLabel::Positive {
        return Err(ExtractorError::NotTriagePositive(email.id.clone()));
    }
    let response = filter_dictionary(&tokenize(&strip_boilerplate(&reply.body)), dict)?;
    if response.is_empty() {
        return Ok(Vec::new());
    }
    Ok(extract_requests(model, email)
        .iter()
        .map(|sentence| RequestResponsePair {
            request: tokenize(sentence),
            response: response.clone(),
            user_id: user_id.to_string(),
            persona: PersonaFeatures::generic(),
        })
        .collect())
}

/// JSONL record for labeled sentences: `{"text": ..., "label": 0|1}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub text: String,
    pub label: u8,
}

pub fn labeled_sentences_to_jsonl(sentences: &[LabeledSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&serde_json::to_string(s).expect("sentence serialization cannot fail"));
        out.push('\n');
    }
    out
}

/// Parse the labeled-sentence JSONL into tokenized training examples.
pub fn parse_labeled_sentences(text: &str) -> Result<Vec<(Vec<Token>, bool)>, ExtractorError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: LabeledSentence =
            serde_json::from_str(line).map_err(|e| ExtractorError::BadSentenceLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        if record.label > 1 {
            return Err(ExtractorError::BadSentenceLine {
                line: i + 1,
                message: format!("label must be 0 or 1, got {}", record.label),
            });
        }
        out.push((tokenize(&record.text), record.label == 1));
    }
    Ok(out)
}

//! Sequence-to-sequence response generator: a shared embedding, an encoder
//! LSTM whose final hidden and cell state seed the decoder LSTM, a dense
//! output layer over the vocabulary, and N-best beam decoding over
//! log-softmax scores. Persona conditioning happens through three special
//! tokens prepended to the source sequence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::RequestResponsePair;
use crate::nncore::{
    affine, log_softmax, lstm_backward, lstm_forward, sgd_step, softmax_xent, EmbeddingGrads,
    EmbeddingTable, LstmParams, Matrix, ModelFile, NnError, Rng,
};
use crate::persona::PersonaFeatures;
use crate::textproc::Token;

#[derive(Debug, Error)]
pub enum ResponderError {
    #[error("vocabulary cannot be built from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary max size {0} leaves no room for reserved entries")]
    VocabTooSmall(usize),
    #[error("no training pairs")]
    NoPairs,
    #[error("k={k} exceeds beam width {beam_width}")]
    BadBeam { beam_width: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("training diverged: non-finite loss at epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Decoding stops after this many generated tokens, matching the bound on
/// replies the triage stage considers answerable.
pub const DECODE_MAX_LEN: usize = 25;

/// Token ↔ id bijection with fixed reserved ids 0..=3 (PAD, UNK, BOS, EOS).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    surfaces: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    fn with_reserved() -> Self {
        let surfaces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Vocab { surfaces, index }
    }

    /// Keep the most frequent tokens up to `max_size − 4`, breaking count
    /// ties lexicographically.
    pub fn build<'a, I>(sequences: I, max_size: usize) -> Result<Self, ResponderError>
    where
        I: IntoIterator<Item = &'a [Token]>,
    {
        if max_size <= RESERVED.len() {
            return Err(ResponderError::VocabTooSmall(max_size));
        }
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        let mut any = false;
        for seq in sequences {
            any = true;
            for tok in seq {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        if !any || counts.is_empty() {
            return Err(ResponderError::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut vocab = Vocab::with_reserved();
        for (surface, _) in ranked.into_iter().take(max_size - RESERVED.len()) {
            vocab.insert(surface);
        }
        Ok(vocab)
    }

    fn insert(&mut self, surface: &str) -> u32 {
        if let Some(&id) = self.index.get(surface) {
            return id;
        }
        let id = self.surfaces.len() as u32;
        self.surfaces.push(surface.to_string());
        self.index.insert(surface.to_string(), id);
        id
    }

    /// Add a special entry (used for persona tokens); idempotent.
    pub fn insert_special(&mut self, surface: &str) -> u32 {
        self.insert(surface)
    }

    pub fn id_of(&self, token: &Token) -> u32 {
        self.index.get(token.as_str()).copied().unwrap_or(UNK_ID)
    }

    pub fn id_of_surface(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> &str {
        &self.surfaces[id as usize]
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved entries are always present
    }

    /// Rebuild a vocabulary from its id-ordered surface list, validating the
    /// reserved prefix and bijectivity.
    pub fn from_surfaces(surfaces: Vec<String>) -> Result<Self, ResponderError> {
        if surfaces.len() < RESERVED.len()
            || surfaces[..RESERVED.len()] != RESERVED.map(String::from)
        {
            return Err(NnError::Model("vocab is missing reserved entries".into()).into());
        }
        let mut index = BTreeMap::new();
        for (i, s) in surfaces.iter().enumerate() {
            if index.insert(s.clone(), i as u32).is_some() {
                return Err(NnError::Model(format!("duplicate vocab entry {s:?}")).into());
            }
        }
        Ok(Vocab { surfaces, index })
    }
}

/// Build the response-side vocabulary from request and response tokens.
pub fn build_vocab(pairs: &[RequestResponsePair], max_size: usize) -> Result<Vocab, ResponderError> {
    if pairs.is_empty() {
        return Err(ResponderError::EmptyCorpus);
    }
    Vocab::build(
        pairs
            .iter()
            .flat_map(|p| [p.request.as_slice(), p.response.as_slice()]),
        max_size,
    )
}

/// The fixed persona-token inventory: three length levels, three polarity
/// levels, three degree levels.
pub const PERSONA_TOKENS: [&str; 9] = [
    "<len:short>",
    "<len:med>",
    "<len:long>",
    "<pol:pos>",
    "<pol:neg>",
    "<pol:neu>",
    "<deg:strong>",
    "<deg:mild>",
    "<deg:neutral>",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub batch_size: usize,
    pub clip: f64,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub epochs: usize,
    pub init_scale: f64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Seq2SeqConfig {
            embed_dim: 64,
            hidden_dim: 256,
            vocab_size: 2000,
            batch_size: 64,
            clip: 5.0,
            lr: 0.5,
            lr_halve_every: 5,
            epochs: 30,
            init_scale: 0.08,
        }
    }
}

/// One generated response candidate with its summed log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub tokens: Vec<Token>,
    pub logprob: f64,
}

impl ScoredResponse {
    pub fn text(&self) -> String {
        crate::textproc::join_tokens(&self.tokens)
    }
}

/// Encoder-decoder response model. The decoder's initial hidden and cell
/// state are the encoder's final state; the embedding is shared by both
/// sides.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub embedding: EmbeddingTable,
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
    pub vocab: Vocab,
    pub persona_token_ids: [u32; 9],
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Seq2SeqModel {
    /// Initialize from a corpus vocabulary; persona tokens are appended to
    /// the vocabulary here so the embedding covers them.
    pub fn init(mut vocab: Vocab, cfg: &Seq2SeqConfig, rng: &mut Rng) -> Self {
        let mut persona_token_ids = [0u32; 9];
        for (slot, surface) in persona_token_ids.iter_mut().zip(PERSONA_TOKENS) {
            *slot = vocab.insert_special(surface);
        }
        let vocab_len = vocab.len();
        Seq2SeqModel {
            embedding: EmbeddingTable::init_uniform(rng, vocab_len, cfg.embed_dim, cfg.init_scale),
            encoder: LstmParams::init_uniform(rng, cfg.embed_dim, cfg.hidden_dim, cfg.init_scale),
            decoder: LstmParams::init_uniform(rng, cfg.embed_dim, cfg.hidden_dim, cfg.init_scale),
            out_w: Matrix::init_uniform(rng, vocab_len, cfg.hidden_dim, cfg.init_scale),
            out_b: vec![0.0; vocab_len],
            vocab,
            persona_token_ids,
            embed_dim: cfg.embed_dim,
            hidden_dim: cfg.hidden_dim,
        }
    }

    /// Three persona tokens for a feature vector, in [length, polarity,
    /// degree] order.
    pub fn persona_prefix(&self, persona: &PersonaFeatures) -> [u32; 3] {
        let ids = &self.persona_token_ids;
        let len = if persona.avg_response_length <= 6.0 {
            ids[0]
        } else if persona.avg_response_length <= 12.0 {
            ids[1]
        } else {
            ids[2]
        };
        let [pos, neg, neu] = persona.polarity_dist;
        let pol = if pos > neg && pos > neu {
            ids[3]
        } else if neg > pos && neg > neu {
            ids[4]
        } else {
            ids[5]
        };
        let deg = match persona.dominant_degree {
            crate::textproc::Degree::Strong => ids[6],
            crate::textproc::Degree::Mild => ids[7],
            crate::textproc::Degree::Neutral => ids[8],
        };
        [len, pol, deg]
    }

    /// Source-side id sequence: persona tokens, then the request, then EOS.
    pub fn encode_source(&self, request: &[Token], persona: &PersonaFeatures) -> Vec<u32> {
        let mut ids = Vec::with_capacity(request.len() + 4);
        ids.extend(self.persona_prefix(persona));
        ids.extend(request.iter().map(|t| self.vocab.id_of(t)));
        ids.push(EOS_ID);
        ids
    }

    /// Run the encoder over a source id sequence; returns its final (h, c).
    pub fn encode_ids(&self, src: &[u32]) -> (Vec<f64>, Vec<f64>) {
        let xs = self.embedding.embed_sequence(src);
        let zeros = vec![0.0; self.hidden_dim];
        let trace = lstm_forward(&self.encoder, &xs, &zeros, &zeros)
            .expect("encoder shapes are consistent by construction");
        let (h, c) = trace.final_state();
        (h.to_vec(), c.to_vec())
    }

    /// One decoder step: consume `prev_id`, return output logits and the new
    /// state.
    pub fn decode_step(&self, prev_id: u32, h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x = self.embedding.lookup(prev_id);
        let (h2, c2) = crate::nncore::lstm_step(&self.decoder, x, h, c)
            .expect("decoder shapes are consistent by construction");
        let logits = affine(&self.out_w, &self.out_b, &h2)
            .expect("output layer shapes are consistent by construction");
        (logits, h2, c2)
    }

    fn ids_to_tokens(&self, ids: &[u32]) -> Vec<Token> {
        ids.iter()
            .filter(|id| !matches!(**id, PAD_ID | BOS_ID | EOS_ID))
            .map(|id| Token::new(self.vocab.surface(*id)).expect("vocab surfaces are valid tokens"))
            .collect()
    }

    /// Argmax decoding from BOS until EOS or the length cap; ties break
    /// toward the smaller token id.
    pub fn greedy_decode(&self, request: &[Token], persona: &PersonaFeatures) -> ScoredResponse {
        let src = self.encode_source(request, persona);
        let (mut h, mut c) = self.encode_ids(&src);
        let mut prev = BOS_ID;
        let mut ids = Vec::new();
        let mut logprob = 0.0;
        for _ in 0..DECODE_MAX_LEN {
            let (logits, h2, c2) = self.decode_step(prev, &h, &c);
            let logp = log_softmax(&logits);
            let mut best = 0usize;
            for (i, lp) in logp.iter().enumerate() {
                if *lp > logp[best] {
                    best = i;
                }
            }
            logprob += logp[best];
            h = h2;
            c = c2;
            if best as u32 == EOS_ID {
                break;
            }
            ids.push(best as u32);
            prev = best as u32;
        }
        ScoredResponse {
            tokens: self.ids_to_tokens(&ids),
            logprob,
        }
    }

    /// Beam search over log-softmax scores: up to `k` distinct finished
    /// sequences sorted by descending log probability. A hypothesis finishes
    /// on EOS or at the length cap; ties break by token id.
    pub fn nbest(
        &self,
        request: &[Token],
        persona: &PersonaFeatures,
        beam_width: usize,
        k: usize,
    ) -> Result<Vec<ScoredResponse>, ResponderError> {
        if k == 0 {
            return Err(ResponderError::ZeroK);
        }
        if beam_width < k {
            return Err(ResponderError::BadBeam { beam_width, k });
        }
        struct Hyp {
            ids: Vec<u32>,
            logprob: f64,
            h: Vec<f64>,
            c: Vec<f64>,
            prev: u32,
        }
        let src = self.encode_source(request, persona);
        let (h0, c0) = self.encode_ids(&src);
        let mut live = vec![Hyp {
            ids: Vec::new(),
            logprob: 0.0,
            h: h0,
            c: c0,
            prev: BOS_ID,
        }];
        let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
        for _ in 0..DECODE_MAX_LEN {
            if live.is_empty() {
                break;
            }
            // (cumulative logprob, token id, source beam) for every expansion
            let mut stepped: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(live.len());
            let mut candidates: Vec<(f64, u32, usize)> = Vec::new();
            for (bi, hyp) in live.iter().enumerate() {
                let (logits, h2, c2) = self.decode_step(hyp.prev, &hyp.h, &hyp.c);
                let logp = log_softmax(&logits);
                for (tid, lp) in logp.iter().enumerate() {
                    candidates.push((hyp.logprob + lp, tid as u32, bi));
                }
                stepped.push((logp, h2, c2));
            }
            candidates.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .expect("log probabilities are never NaN")
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let mut next = Vec::with_capacity(beam_width);
            for (lp, tid, bi) in candidates.into_iter().take(beam_width) {
                let hyp = &live[bi];
                if tid == EOS_ID {
                    finished.push((hyp.ids.clone(), lp));
                } else {
                    let mut ids = hyp.ids.clone();
                    ids.push(tid);
                    next.push(Hyp {
                        ids,
                        logprob: lp,
                        h: stepped[bi].1.clone(),
                        c: stepped[bi].2.clone(),
                        prev: tid,
                    });
                }
            }
            live = next;
        }
        // beams that hit the cap finish with their current score
        finished.extend(live.into_iter().map(|h| (h.ids, h.logprob)));
        finished.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("log probabilities are never NaN")
                .then(a.0.cmp(&b.0))
        });
        finished.truncate(k);
        Ok(finished
            .into_iter()
            .map(|(ids, logprob)| ScoredResponse {
                tokens: self.ids_to_tokens(&ids),
                logprob,
            })
            .collect())
    }

    pub fn to_model_file(&self) -> ModelFile {
        let mut file = ModelFile::new("seq2seq");
        file.push_matrix("embedding", &self.embedding.rows);
        file.push_matrix("encoder.w", &self.encoder.w);
        file.push_matrix("encoder.u", &self.encoder.u);
        file.push_tensor("encoder.b", vec![self.encoder.b.len()], &self.encoder.b);
        file.push_matrix("decoder.w", &self.decoder.w);
        file.push_matrix("decoder.u", &self.decoder.u);
        file.push_tensor("decoder.b", vec![self.decoder.b.len()], &self.decoder.b);
        file.push_matrix("out.w", &self.out_w);
        file.push_tensor("out.b", vec![self.out_b.len()], &self.out_b);
        file.meta = serde_json::json!({
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "vocab": self.vocab.surfaces,
            "persona_token_ids": self.persona_token_ids,
        });
        file
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self, ResponderError> {
        file.expect_kind("seq2seq")?;
        let surfaces: Vec<String> = serde_json::from_value(file.meta["vocab"].clone())
            .map_err(|e| NnError::Model(format!("bad vocab: {e}")))?;
        let vocab = Vocab::from_surfaces(surfaces)?;
        let persona_token_ids: [u32; 9] =
            serde_json::from_value(file.meta["persona_token_ids"].clone())
                .map_err(|e| NnError::Model(format!("bad persona token ids: {e}")))?;
        let embed_dim = file.meta["embed_dim"].as_u64().unwrap_or(0) as usize;
        let hidden_dim = file.meta["hidden_dim"].as_u64().unwrap_or(0) as usize;
        let rows = file.matrix("embedding")?;
        let model = Seq2SeqModel {
            embedding: EmbeddingTable {
                vocab_size: rows.rows(),
                dim: rows.cols(),
                rows,
            },
            encoder: LstmParams {
                input_dim: embed_dim,
                hidden_dim,
                w: file.matrix("encoder.w")?,
                u: file.matrix("encoder.u")?,
                b: file.vector("encoder.b")?,
            },
            decoder: LstmParams {
                input_dim: embed_dim,
                hidden_dim,
                w: file.matrix("decoder.w")?,
                u: file.matrix("decoder.u")?,
                b: file.vector("decoder.b")?,
            },
            out_w: file.matrix("out.w")?,
            out_b: file.vector("out.b")?,
            vocab,
            persona_token_ids,
            embed_dim,
            hidden_dim,
        };
        if model.embedding.vocab_size != model.vocab.len()
            || model.out_w.rows() != model.vocab.len()
        {
            return Err(NnError::Model("vocab/tensor size mismatch".into()).into());
        }
        Ok(model)
    }
}

/// A pair converted to id sequences, ready for teacher forcing.
struct TrainExample {
    src: Vec<u32>,
    tgt: Vec<u32>,
}

fn to_examples(
    model: &Seq2SeqModel,
    pairs: &[RequestResponsePair],
    persona_override: Option<&PersonaFeatures>,
) -> Vec<TrainExample> {
    pairs
        .iter()
        .map(|pair| TrainExample {
            src: model.encode_source(&pair.request, persona_override.unwrap_or(&pair.persona)),
            tgt: pair
                .response
                .iter()
                .map(|t| model.vocab.id_of(t))
                .collect(),
        })
        .collect()
}

struct Grads {
    emb: EmbeddingGrads,
    enc_dw: Matrix,
    enc_du: Matrix,
    enc_db: Vec<f64>,
    dec_dw: Matrix,
    dec_du: Matrix,
    dec_db: Vec<f64>,
    out_dw: Matrix,
    out_db: Vec<f64>,
}

impl Grads {
    fn zeros(model: &Seq2SeqModel) -> Self {
        let hd = model.hidden_dim;
        let ed = model.embed_dim;
        let v = model.vocab.len();
        Grads {
            emb: EmbeddingGrads::zeros(&model.embedding),
            enc_dw: Matrix::zeros(4 * hd, ed),
            enc_du: Matrix::zeros(4 * hd, hd),
            enc_db: vec![0.0; 4 * hd],
            dec_dw: Matrix::zeros(4 * hd, ed),
            dec_du: Matrix::zeros(4 * hd, hd),
            dec_db: vec![0.0; 4 * hd],
            out_dw: Matrix::zeros(v, hd),
            out_db: vec![0.0; v],
        }
    }
}

/// Forward + backward for one example. Gradients are scaled by `scale`
/// (1 / batch target tokens) and accumulated into `grads`. Returns the
/// summed token cross-entropy.
fn accumulate_example(
    model: &Seq2SeqModel,
    example: &TrainExample,
    scale: f64,
    grads: &mut Grads,
) -> Result<f64, ResponderError> {
    let hd = model.hidden_dim;
    let src_vecs = model.embedding.embed_sequence(&example.src);
    let zeros = vec![0.0; hd];
    let enc_trace = lstm_forward(&model.encoder, &src_vecs, &zeros, &zeros)?;
    let (h_enc, c_enc) = enc_trace.final_state();

    // teacher forcing: decoder reads BOS ++ target, predicts target ++ EOS
    let mut dec_inputs = Vec::with_capacity(example.tgt.len() + 1);
    dec_inputs.push(BOS_ID);
    dec_inputs.extend(&example.tgt);
    let mut dec_targets = example.tgt.clone();
    dec_targets.push(EOS_ID);

    let dec_vecs = model.embedding.embed_sequence(&dec_inputs);
    let dec_trace = lstm_forward(&model.decoder, &dec_vecs, h_enc, c_enc)?;

    let mut loss = 0.0;
    let mut dh_seq = vec![vec![0.0; hd]; dec_inputs.len()];
    for (t, &target) in dec_targets.iter().enumerate() {
        let h_t = dec_trace.hidden(t);
        let logits = affine(&model.out_w, &model.out_b, h_t)?;
        let (step_loss, mut dlogits) = softmax_xent(&logits, target as usize)?;
        loss += step_loss;
        for v in &mut dlogits {
            *v *= scale;
        }
        grads.out_dw.add_outer(&dlogits, h_t);
        for (d, g) in grads.out_db.iter_mut().zip(&dlogits) {
            *d += g;
        }
        model.out_w.matvec_t_add(&dlogits, &mut dh_seq[t]);
    }

    let dec_back = lstm_backward(&model.decoder, &dec_trace, &dh_seq, &zeros)?;
    for (m, s) in [
        (&mut grads.dec_dw, &dec_back.dw),
        (&mut grads.dec_du, &dec_back.du),
    ] {
        for (a, b) in m.data_mut().iter_mut().zip(s.data()) {
            *a += b;
        }
    }
    for (a, b) in grads.dec_db.iter_mut().zip(&dec_back.db) {
        *a += b;
    }
    for (t, &id) in dec_inputs.iter().enumerate() {
        grads.emb.accumulate(id, &dec_back.dxs[t]);
    }

    // the decoder's initial-state gradients flow into the encoder's final step
    let mut enc_dh = vec![vec![0.0; hd]; example.src.len()];
    if let Some(last) = enc_dh.last_mut() {
        last.copy_from_slice(&dec_back.dh0);
    }
    let enc_back = lstm_backward(&model.encoder, &enc_trace, &enc_dh, &dec_back.dc0)?;
    for (m, s) in [
        (&mut grads.enc_dw, &enc_back.dw),
        (&mut grads.enc_du, &enc_back.du),
    ] {
        for (a, b) in m.data_mut().iter_mut().zip(s.data()) {
            *a += b;
        }
    }
    for (a, b) in grads.enc_db.iter_mut().zip(&enc_back.db) {
        *a += b;
    }
    for (t, &id) in example.src.iter().enumerate() {
        grads.emb.accumulate(id, &enc_back.dxs[t]);
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub clip: f64,
}

/// Teacher-forced training over (source, target) id sequences. Returns the
/// mean per-token loss of each epoch.
fn train_epochs(
    model: &mut Seq2SeqModel,
    examples: &[TrainExample],
    schedule: &TrainSchedule,
    rng: &mut Rng,
) -> Result<Vec<f64>, ResponderError> {
    let mut epoch_losses = Vec::with_capacity(schedule.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..schedule.epochs {
        let lr = if schedule.lr_halve_every > 0 {
            schedule.lr * 0.5f64.powi((epoch / schedule.lr_halve_every) as i32)
        } else {
            schedule.lr
        };
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(schedule.batch_size.max(1)) {
            let batch_tokens: usize = batch.iter().map(|&i| examples[i].tgt.len() + 1).sum();
            let scale = 1.0 / batch_tokens as f64;
            let mut grads = Grads::zeros(model);
            for &i in batch {
                epoch_loss += accumulate_example(model, &examples[i], scale, &mut grads)?;
            }
            epoch_tokens += batch_tokens;
            sgd_step(
                &mut [
                    model.embedding.rows.data_mut(),
                    model.encoder.w.data_mut(),
                    model.encoder.u.data_mut(),
                    &mut model.encoder.b,
                    model.decoder.w.data_mut(),
                    model.decoder.u.data_mut(),
                    &mut model.decoder.b,
                    model.out_w.data_mut(),
                    &mut model.out_b,
                ],
                &[
                    grads.emb.rows.data(),
                    grads.enc_dw.data(),
                    grads.enc_du.data(),
                    &grads.enc_db,
                    grads.dec_dw.data(),
                    grads.dec_du.data(),
                    &grads.dec_db,
                    grads.out_dw.data(),
                    &grads.out_db,
                ],
                lr,
                schedule.clip,
            );
        }
        let mean = epoch_loss / epoch_tokens.max(1) as f64;
        if !mean.is_finite() {
            return Err(ResponderError::Diverged(epoch));
        }
        epoch_losses.push(mean);
    }
    Ok(epoch_losses)
}

/// Build a vocabulary from the pairs, initialize a model, and train it with
/// teacher forcing. Deterministic given the seed behind `rng`.
pub fn train_seq2seq(
    pairs: &[RequestResponsePair],
    cfg: &Seq2SeqConfig,
    rng: &mut Rng,
) -> Result<Seq2SeqModel, ResponderError> {
    let (model, _losses) = train_seq2seq_with_losses(pairs, cfg, rng)?;
    Ok(model)
}

/// As [`train_seq2seq`], also returning per-epoch mean token losses.
pub fn train_seq2seq_with_losses(
    pairs: &[RequestResponsePair],
    cfg: &Seq2SeqConfig,
    rng: &mut Rng,
) -> Result<(Seq2SeqModel, Vec<f64>), ResponderError> {
    if pairs.is_empty() {
        return Err(ResponderError::NoPairs);
    }
    let vocab = build_vocab(pairs, cfg.vocab_size)?;
    let mut model = Seq2SeqModel::init(vocab, cfg, rng);
    let examples = to_examples(&model, pairs, None);
    let losses = train_epochs(
        &mut model,
        &examples,
        &TrainSchedule {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            lr_halve_every: cfg.lr_halve_every,
            clip: cfg.clip,
        },
        rng,
    )?;
    Ok((model, losses))
}

/// Continue training an existing model on more pairs, optionally forcing a
/// single persona for every source sequence. Used for per-user fine-tuning.
pub fn continue_training(
    model: &mut Seq2SeqModel,
    pairs: &[RequestResponsePair],
    persona_override: Option<&PersonaFeatures>,
    schedule: &TrainSchedule,
    rng: &mut Rng,
) -> Result<Vec<f64>, ResponderError> {
    if pairs.is_empty() {
        return Err(ResponderError::NoPairs);
    }
    let examples = to_examples(model, pairs, persona_override);
    train_epochs(model, &examples, schedule, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokens;

    fn pair(request: &[&str], response: &[&str]) -> RequestResponsePair {
        RequestResponsePair {
            request: tokens(request),
            response: tokens(response),
            user_id: "u".into(),
            persona: PersonaFeatures::generic(),
        }
    }

    #[test]
    fn build_vocab_counts_and_reserved() {
        let pairs = vec![pair(&["b", "a"], &["c"])];
        let vocab = build_vocab(&pairs, 10).unwrap();
        assert_eq!(vocab.len(), 7); // 4 reserved + 3 corpus tokens
        assert_eq!(vocab.surface(PAD_ID as u32), "<pad>");
        assert_eq!(vocab.surface(EOS_ID), "<eos>");
        assert_eq!(vocab.id_of(&tokens(&["zzz"])[0]), UNK_ID);
    }

    #[test]
    fn vocab_tie_break_is_lexicographic() {
        // "a" and "b" tie on count at the cutoff; "a" survives
        let pairs = vec![pair(&["c", "c", "b"], &["a"])];
        let vocab = Vocab::build(
            pairs
                .iter()
                .flat_map(|p| [p.request.as_slice(), p.response.as_slice()]),
            6,
        )
        .unwrap();
        assert_eq!(vocab.len(), 6);
        assert!(vocab.id_of_surface("c").is_some());
        assert!(vocab.id_of_surface("a").is_some());
        assert!(vocab.id_of_surface("b").is_none());
    }

    #[test]
    fn vocab_rejects_empty_and_tiny() {
        assert!(matches!(
            build_vocab(&[], 10),
            Err(ResponderError::EmptyCorpus)
        ));
        let pairs = vec![pair(&["a"], &["b"])];
        assert!(matches!(
            build_vocab(&pairs, 4),
            Err(ResponderError::VocabTooSmall(4))
        ));
    }

    fn tiny_cfg() -> Seq2SeqConfig {
        Seq2SeqConfig {
            embed_dim: 8,
            hidden_dim: 12,
            vocab_size: 64,
            batch_size: 4,
            clip: 5.0,
            lr: 0.5,
            lr_halve_every: 50,
            epochs: 0,
            init_scale: 0.08,
        }
    }

    fn tiny_model(pairs: &[RequestResponsePair]) -> Seq2SeqModel {
        let vocab = build_vocab(pairs, 64).unwrap();
        Seq2SeqModel::init(vocab, &tiny_cfg(), &mut Rng::new(42))
    }

    #[test]
    fn encode_source_layout() {
        let pairs = vec![pair(&["can", "we", "meet"], &["ok"])];
        let model = tiny_model(&pairs);
        let persona = PersonaFeatures {
            avg_response_length: 3.0,
            polarity_dist: [0.1, 0.2, 0.7],
            dominant_degree: crate::textproc::Degree::Neutral,
        };
        let src = model.encode_source(&tokens(&["can", "we", "meet"]), &persona);
        assert_eq!(src.len(), 7); // 3 persona + 3 request + EOS
        assert_eq!(*src.last().unwrap(), EOS_ID);
        assert_eq!(src[0], model.vocab.id_of_surface("<len:short>").unwrap());
        assert_eq!(src[1], model.vocab.id_of_surface("<pol:neu>").unwrap());
        assert_eq!(src[2], model.vocab.id_of_surface("<deg:neutral>").unwrap());

        // empty request: 3 persona tokens + EOS
        let empty = model.encode_source(&[], &persona);
        assert_eq!(empty.len(), 4);

        // a different persona changes only the first three positions
        let verbose = PersonaFeatures {
            avg_response_length: 15.0,
            polarity_dist: [0.8, 0.1, 0.1],
            dominant_degree: crate::textproc::Degree::Strong,
        };
        let src2 = model.encode_source(&tokens(&["can", "we", "meet"]), &verbose);
        assert_eq!(src[3..], src2[3..]);
        assert_ne!(src[..3], src2[..3]);
    }

    #[test]
    fn decoder_consumes_encoder_final_state() {
        let pairs = vec![pair(&["can", "we", "meet"], &["ok", "sure"])];
        let model = tiny_model(&pairs);
        let persona = PersonaFeatures::generic();
        let src = model.encode_source(&tokens(&["can", "we", "meet"]), &persona);
        let (h, c) = model.encode_ids(&src);
        let (logits, _, _) = model.decode_step(BOS_ID, &h, &c);
        // perturbing the encoder's final state must change step-0 logits
        let mut h2 = h.clone();
        h2[0] += 0.25;
        let (logits2, _, _) = model.decode_step(BOS_ID, &h2, &c);
        assert_ne!(logits, logits2);
        let mut c2 = c.clone();
        c2[0] += 0.25;
        let (logits3, _, _) = model.decode_step(BOS_ID, &h, &c2);
        assert_ne!(logits, logits3);
    }

    #[test]
    fn per_step_distribution_sums_to_one() {
        let pairs = vec![pair(&["a", "b"], &["c", "d"])];
        let model = tiny_model(&pairs);
        let (h, c) = model.encode_ids(&model.encode_source(
            &tokens(&["a", "b"]),
            &PersonaFeatures::generic(),
        ));
        let (logits, _, _) = model.decode_step(BOS_ID, &h, &c);
        let probs = crate::nncore::softmax(&logits);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn greedy_is_deterministic_and_equals_beam_one() {
        let pairs = vec![
            pair(&["can", "we", "meet", "on", "friday"], &["ok", "see", "you"]),
            pair(&["send", "the", "report"], &["done"]),
        ];
        let model = tiny_model(&pairs);
        let persona = PersonaFeatures::generic();
        let mut rng = Rng::new(77);
        let surface_pool: Vec<&str> = ["can", "we", "meet", "on", "friday", "send", "the", "report"]
            .into();
        for _ in 0..100 {
            let len = 1 + rng.below(6) as usize;
            let request: Vec<Token> = (0..len)
                .map(|_| {
                    Token::new(surface_pool[rng.below(surface_pool.len() as u64) as usize])
                        .unwrap()
                })
                .collect();
            let greedy = model.greedy_decode(&request, &persona);
            let greedy2 = model.greedy_decode(&request, &persona);
            assert_eq!(greedy, greedy2);
            let beam = model.nbest(&request, &persona, 1, 1).unwrap();
            assert_eq!(beam.len(), 1);
            assert_eq!(beam[0], greedy);
        }
    }

    #[test]
    fn nbest_is_sorted_distinct_and_bounded() {
        let pairs = vec![
            pair(&["can", "we", "meet"], &["ok"]),
            pair(&["status"], &["done", "today"]),
        ];
        let model = tiny_model(&pairs);
        let got = model
            .nbest(&tokens(&["can", "we", "meet"]), &PersonaFeatures::generic(), 5, 3)
            .unwrap();
        assert!(got.len() <= 3);
        assert!(!got.is_empty());
        for r in &got {
            assert!(r.logprob <= 0.0);
            assert!(r.tokens.len() <= DECODE_MAX_LEN);
        }
        for w in got.windows(2) {
            assert!(w[0].logprob >= w[1].logprob);
            assert_ne!(w[0].tokens, w[1].tokens);
        }
    }

    #[test]
    fn nbest_validates_beam_and_k() {
        let pairs = vec![pair(&["a"], &["b"])];
        let model = tiny_model(&pairs);
        let persona = PersonaFeatures::generic();
        assert!(matches!(
            model.nbest(&tokens(&["a"]), &persona, 2, 3),
            Err(ResponderError::BadBeam { .. })
        ));
        assert!(matches!(
            model.nbest(&tokens(&["a"]), &persona, 2, 0),
            Err(ResponderError::ZeroK)
        ));
    }

    fn toy_corpus() -> Vec<RequestResponsePair> {
        // small closed grammar the model can memorize
        let mut pairs = Vec::new();
        let days = ["monday", "tuesday", "wednesday", "thursday", "friday"];
        for day in days {
            pairs.push(pair(&["can", "we", "meet", "on", day], &["ok", "see", "you", day]));
            pairs.push(pair(&["are", "you", "free", "on", day], &["yes", "i", "am", "free"]));
        }
        pairs.push(pair(&["send", "the", "report"], &["done"]));
        pairs.push(pair(&["send", "the", "budget"], &["on", "it"]));
        pairs
    }

    #[test]
    fn toy_corpus_memorization_and_loss_decrease() {
        let pairs = toy_corpus();
        let cfg = Seq2SeqConfig {
            embed_dim: 16,
            hidden_dim: 32,
            vocab_size: 100,
            batch_size: 4,
            clip: 5.0,
            lr: 0.5,
            lr_halve_every: 40,
            epochs: 60,
            init_scale: 0.08,
        };
        let (model, losses) =
            train_seq2seq_with_losses(&pairs, &cfg, &mut Rng::new(12)).unwrap();
        assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
        let exact = pairs
            .iter()
            .filter(|p| {
                model.greedy_decode(&p.request, &p.persona).tokens == p.response
            })
            .count();
        assert!(
            exact as f64 / pairs.len() as f64 >= 0.9,
            "memorized {exact}/{}",
            pairs.len()
        );
        // the memorized response is also the top beam result
        let top = model
            .nbest(&pairs[0].request, &pairs[0].persona, 4, 2)
            .unwrap();
        assert_eq!(top[0].tokens, pairs[0].response);
    }

    #[test]
    fn training_is_deterministic() {
        let pairs = toy_corpus();
        let cfg = Seq2SeqConfig {
            embed_dim: 8,
            hidden_dim: 12,
            vocab_size: 64,
            batch_size: 4,
            clip: 5.0,
            lr: 0.3,
            lr_halve_every: 5,
            epochs: 3,
            init_scale: 0.08,
        };
        let a = train_seq2seq(&pairs, &cfg, &mut Rng::new(5)).unwrap();
        let b = train_seq2seq(&pairs, &cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(a.to_model_file().to_json(), b.to_model_file().to_json());
    }

    #[test]
    fn model_file_round_trip() {
        let pairs = toy_corpus();
        let model = tiny_model(&pairs);
        let json = model.to_model_file().to_json();
        let back =
            Seq2SeqModel::from_model_file(&ModelFile::from_json(&json).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_model_file().to_json(), json);
        // decoding behavior survives the round trip
        let persona = PersonaFeatures::generic();
        let req = tokens(&["can", "we", "meet"]);
        assert_eq!(
            back.greedy_decode(&req, &persona),
            model.greedy_decode(&req, &persona)
        );
    }

    #[test]
    fn empty_pairs_and_zero_epoch_fine_tune() {
        let pairs = toy_corpus();
        let mut model = tiny_model(&pairs);
        let before = model.to_model_file().to_json();
        let schedule = TrainSchedule {
            epochs: 0,
            batch_size: 4,
            lr: 0.05,
            lr_halve_every: 0,
            clip: 5.0,
        };
        continue_training(&mut model, &pairs, None, &schedule, &mut Rng::new(1)).unwrap();
        assert_eq!(model.to_model_file().to_json(), before);
        assert!(matches!(
            continue_training(&mut model, &[], None, &schedule, &mut Rng::new(1)),
            Err(ResponderError::NoPairs)
        ));
    }
}

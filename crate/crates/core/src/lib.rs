//! Personalized smart-reply pipeline.
//!
//! The crate is organized as a chain of stages over an email corpus:
//!
//! 1. [`triage`] — a sparse logistic-regression gate deciding whether an
//!    incoming email should receive automatic reply suggestions.
//! 2. [`extractor`] — an LSTM sentence classifier that picks out the
//!    request/question sentences and pairs them with the observed reply.
//! 3. [`responder`] — a from-scratch LSTM encoder-decoder that generates
//!    N-best reply candidates, conditioned on persona tokens.
//! 4. [`persona`] — per-user style features, n-gram profiles, dataset
//!    boosting, and fine-tuning of the global responder per user.
//! 5. [`signals`] — a rule engine that reranks candidates against the
//!    user's calendar.
//!
//! [`textproc`] supplies the deterministic text normalization shared by all
//! stages, [`nncore`] the minimal neural toolkit (matrices, LSTM cells,
//! analytic gradients, gradient checking, seeded RNG), [`corpus`] the email
//! data model plus a seeded synthetic corpus generator, and [`eval`] the
//! BLEU-based measurement of how well generated replies mimic each user.

pub mod corpus;
pub mod eval;
pub mod extractor;
pub mod nncore;
pub mod persona;
pub mod responder;
pub mod signals;
pub mod textproc;
pub mod triage;

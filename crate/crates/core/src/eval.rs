//! BLEU scoring of generated responses against the user's actual replies,
//! plus per-recipient-type breakdowns and the personalized-vs-generic
//! variance comparison.

use std::collections::BTreeMap;
use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::RecipientType;
use crate::extractor::RequestResponsePair;
use crate::responder::{ScoredResponse, Seq2SeqModel};
use crate::textproc::Token;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("BLEU candidate is empty")]
    EmptyCandidate,
    #[error("BLEU needs at least one non-empty reference")]
    EmptyReferences,
    #[error("max_n must be at least 1")]
    ZeroMaxN,
    #[error("no pairs to evaluate")]
    NoPairs,
    #[error("variance comparison needs at least 2 users, got {0}")]
    TooFewUsers(usize),
    #[error("user {0} has no decoded outputs")]
    NoOutputs(usize),
}

/// Sentence BLEU: clipped n-gram precisions (add-one smoothed for n ≥ 2),
/// geometric mean, brevity penalty against the closest reference length.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    /// The per-n precisions actually used, smoothing included.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
}

fn ngram_counts(toks: &[Token], n: usize) -> HashMap<&[Token], usize> {
    let mut counts = HashMap::new();
    if toks.len() >= n {
        for gram in toks.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU between a candidate and one or more references.
///
/// Unigram precision is exact; higher orders get add-one smoothing since
/// short replies rarely share exact 4-grams. The brevity penalty uses the
/// reference length closest to the candidate (ties toward the shorter).
pub fn bleu(
    candidate: &[Token],
    references: &[Vec<Token>],
    max_n: usize,
) -> Result<BleuScore, EvalError> {
    if max_n == 0 {
        return Err(EvalError::ZeroMaxN);
    }
    if candidate.is_empty() {
        return Err(EvalError::EmptyCandidate);
    }
    if references.is_empty() || references.iter().any(|r| r.is_empty()) {
        return Err(EvalError::EmptyReferences);
    }

    let mut precisions = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let cand_counts = ngram_counts(candidate, n);
        let total: usize = cand_counts.values().sum();
        let mut matches = 0usize;
        for (gram, &count) in &cand_counts {
            let best_ref = references
                .iter()
                .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            matches += count.min(best_ref);
        }
        let p = if n == 1 {
            matches as f64 / total as f64
        } else {
            (matches as f64 + 1.0) / (total as f64 + 1.0)
        };
        precisions.push(p);
    }

    let c = candidate.len();
    let r_star = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("at least one reference");
    let brevity_penalty = if c > r_star {
        1.0
    } else {
        (1.0 - r_star as f64 / c as f64).exp()
    };

    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        brevity_penalty * mean_log.exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
    })
}

/// Mean BLEU of rank-1 decodes against each pair's actual response. Pairs
/// whose decode comes out empty score 0.
pub fn evaluate_user(
    model: &Seq2SeqModel,
    pairs: &[RequestResponsePair],
) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let mut total = 0.0;
    for pair in pairs {
        let decoded = model.greedy_decode(&pair.request, &pair.persona);
        if !decoded.tokens.is_empty() {
            total += bleu(&decoded.tokens, std::slice::from_ref(&pair.response), 4)?.score;
        }
    }
    Ok(total / pairs.len() as f64)
}

/// Per-recipient-type arithmetic means.
pub fn recipient_breakdown(results: &[(RecipientType, f64)]) -> BTreeMap<RecipientType, f64> {
    let mut sums: BTreeMap<RecipientType, (f64, usize)> = BTreeMap::new();
    for (kind, value) in results {
        let entry = sums.entry(*kind).or_insert((0.0, 0));
        entry.0 += value;
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(kind, (sum, n))| (kind, sum / n as f64))
        .collect()
}

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Population variance across users of the mean decoded response length,
/// for the personalized and the generic system. Both systems must have
/// decoded the same request set for every user.
pub fn cross_user_variance(
    personalized_outputs: &[Vec<ScoredResponse>],
    generic_outputs: &[Vec<ScoredResponse>],
) -> Result<(f64, f64), EvalError> {
    let users = personalized_outputs.len();
    if users < 2 || generic_outputs.len() != users {
        return Err(EvalError::TooFewUsers(users.min(generic_outputs.len())));
    }
    let mean_len = |outputs: &[Vec<ScoredResponse>]| -> Result<Vec<f64>, EvalError> {
        outputs
            .iter()
            .enumerate()
            .map(|(i, responses)| {
                if responses.is_empty() {
                    return Err(EvalError::NoOutputs(i));
                }
                Ok(responses.iter().map(|r| r.tokens.len() as f64).sum::<f64>()
                    / responses.len() as f64)
            })
            .collect()
    };
    let personalized = mean_len(personalized_outputs)?;
    let generic = mean_len(generic_outputs)?;
    Ok((
        population_variance(&personalized),
        population_variance(&generic),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokens;

    #[test]
    fn identical_candidate_scores_one() {
        let x = tokens(&["see", "you", "friday"]);
        let s = bleu(&x, &[x.clone()], 4).unwrap();
        assert!((s.score - 1.0).abs() < 1e-12);
        assert!((s.brevity_penalty - 1.0).abs() < 1e-12);
        // holds even for a single-token candidate thanks to smoothing
        let one = tokens(&["ok"]);
        assert!((bleu(&one, &[one.clone()], 4).unwrap().score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_repeated_tokens() {
        // "the the the the" vs "the cat": clipped unigram precision 1/4
        let cand = tokens(&["the", "the", "the", "the"]);
        let s = bleu(&cand, &[tokens(&["the", "cat"])], 4).unwrap();
        assert!((s.precisions[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_closed_form() {
        // |c| = 2, |r| = 3 → BP = exp(1 − 3/2)
        let s = bleu(
            &tokens(&["see", "you"]),
            &[tokens(&["see", "you", "friday"])],
            4,
        )
        .unwrap();
        assert!((s.brevity_penalty - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_picks_closest_reference_shorter_on_ties() {
        // candidate length 3; references of lengths 2 and 4 tie → use 2 → BP 1
        let cand = tokens(&["a", "b", "c"]);
        let refs = vec![tokens(&["a", "b"]), tokens(&["a", "b", "c", "d"])];
        let s = bleu(&cand, &refs, 4).unwrap();
        assert!((s.brevity_penalty - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_unigram_overlap_scores_zero_and_bounds_hold() {
        let s = bleu(
            &tokens(&["completely", "different"]),
            &[tokens(&["nothing", "shared"])],
            4,
        )
        .unwrap();
        assert_eq!(s.score, 0.0);

        let s = bleu(
            &tokens(&["see", "you", "there"]),
            &[tokens(&["see", "you", "friday"])],
            4,
        )
        .unwrap();
        assert!(s.score > 0.0 && s.score < 1.0);
    }

    #[test]
    fn adding_candidate_as_reference_gives_one() {
        let cand = tokens(&["sounds", "good", "see", "you"]);
        let refs = vec![tokens(&["totally", "different"]), cand.clone()];
        let s = bleu(&cand, &refs, 4).unwrap();
        assert!((s.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_input_validation() {
        let x = tokens(&["ok"]);
        assert!(matches!(
            bleu(&[], &[x.clone()], 4),
            Err(EvalError::EmptyCandidate)
        ));
        assert!(matches!(
            bleu(&x, &[], 4),
            Err(EvalError::EmptyReferences)
        ));
        assert!(matches!(
            bleu(&x, &[vec![]], 4),
            Err(EvalError::EmptyReferences)
        ));
        assert!(matches!(bleu(&x, &[x.clone()], 0), Err(EvalError::ZeroMaxN)));
    }

    #[test]
    fn recipient_breakdown_examples() {
        assert!(recipient_breakdown(&[]).is_empty());
        let one = recipient_breakdown(&[(RecipientType::Work, 0.4)]);
        assert_eq!(one.len(), 1);
        let both = recipient_breakdown(&[
            (RecipientType::Work, 0.4),
            (RecipientType::Personal, 0.8),
        ]);
        assert_eq!(both[&RecipientType::Work], 0.4);
        assert_eq!(both[&RecipientType::Personal], 0.8);
        let averaged = recipient_breakdown(&[
            (RecipientType::Work, 0.2),
            (RecipientType::Work, 0.6),
        ]);
        assert!((averaged[&RecipientType::Work] - 0.4).abs() < 1e-12);
    }

    fn outputs_of_len(lens: &[usize]) -> Vec<ScoredResponse> {
        lens.iter()
            .map(|&l| ScoredResponse {
                tokens: tokens(&vec!["w"; l]),
                logprob: -1.0,
            })
            .collect()
    }

    #[test]
    fn cross_user_variance_examples() {
        // two users with mean lengths 4 and 8 → variance 4.0
        let personalized = vec![outputs_of_len(&[4, 4]), outputs_of_len(&[8, 8])];
        // the generic system answers identically for every user → variance 0
        let generic = vec![outputs_of_len(&[5, 5]), outputs_of_len(&[5, 5])];
        let (vp, vg) = cross_user_variance(&personalized, &generic).unwrap();
        assert!((vp - 4.0).abs() < 1e-12);
        assert_eq!(vg, 0.0);

        assert!(matches!(
            cross_user_variance(&personalized[..1].to_vec(), &generic[..1].to_vec()),
            Err(EvalError::TooFewUsers(1))
        ));
        let empty_user = vec![outputs_of_len(&[4]), Vec::new()];
        assert!(matches!(
            cross_user_variance(&empty_user, &generic),
            Err(EvalError::NoOutputs(1))
        ));
    }

    #[test]
    fn bleu_is_invariant_under_token_renaming() {
        let cand = tokens(&["a", "b", "a", "c"]);
        let rf = tokens(&["a", "b", "c"]);
        let before = bleu(&cand, &[rf.clone()], 4).unwrap();
        let rename = |ts: &[Token]| -> Vec<Token> {
            ts.iter()
                .map(|t| {
                    Token::new(match t.as_str() {
                        "a" => "xx",
                        "b" => "yy",
                        _ => "zz",
                    })
                    .unwrap()
                })
                .collect()
        };
        let after = bleu(&rename(&cand), &[rename(&rf)], 4).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn evaluate_user_memorizing_model_scores_one() {
        use crate::persona::PersonaFeatures;
        let pairs: Vec<RequestResponsePair> = [
            (["can", "we", "meet"].as_slice(), ["ok", "sure"].as_slice()),
            (&["send", "the", "report"], &["done", "today"]),
            (&["are", "you", "free"], &["yes", "i", "am"]),
        ]
        .iter()
        .map(|(req, resp)| RequestResponsePair {
            request: tokens(req),
            response: tokens(resp),
            user_id: "u".into(),
            persona: PersonaFeatures::generic(),
        })
        .collect();
        let cfg = crate::responder::Seq2SeqConfig {
            embed_dim: 16,
            hidden_dim: 24,
            vocab_size: 64,
            batch_size: 2,
            lr: 0.5,
            lr_halve_every: 30,
            epochs: 40,
            ..Default::default()
        };
        let model =
            crate::responder::train_seq2seq(&pairs, &cfg, &mut crate::nncore::Rng::new(4)).unwrap();
        let mean = evaluate_user(&model, &pairs).unwrap();
        assert!((mean - 1.0).abs() < 1e-9, "mean {mean}");
        // a single pair evaluates to that pair's own score
        let single = evaluate_user(&model, &pairs[..1]).unwrap();
        assert!((single - 1.0).abs() < 1e-9);
        assert!(matches!(evaluate_user(&model, &[]), Err(EvalError::NoPairs)));
    }
}

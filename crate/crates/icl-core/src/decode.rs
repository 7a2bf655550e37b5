//! Greedy and beam-search generation.
//!
//! Decoding is written against the `SeqScorer` trait so tests can drive it
//! with hand-built toy distributions; the trained model implements the same
//! trait through its incremental inference path.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::data::{BOS_ID, EOS_ID, PAD_ID};
use crate::error::{IclError, Result};
use crate::model::{EncodedInput, InferenceState, ModelParams};

fn default_num_beams() -> usize {
    4
}
fn default_length_penalty() -> f64 {
    1.0
}
fn default_no_repeat() -> usize {
    3
}
fn default_max_len() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    #[serde(default = "default_num_beams")]
    pub num_beams: usize,
    #[serde(default = "default_length_penalty")]
    pub length_penalty: f64,
    /// 0 disables the constraint.
    #[serde(default = "default_no_repeat")]
    pub no_repeat_ngram_size: usize,
    #[serde(default)]
    pub min_len: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            num_beams: default_num_beams(),
            length_penalty: default_length_penalty(),
            no_repeat_ngram_size: default_no_repeat(),
            min_len: 0,
            max_len: default_max_len(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_beams < 1 {
            return Err(IclError::Config("num_beams must be >= 1".to_string()));
        }
        if self.max_len < self.min_len {
            return Err(IclError::Config(format!(
                "max_len {} < min_len {}",
                self.max_len, self.min_len
            )));
        }
        Ok(())
    }
}

/// Autoregressive scorer: feed tokens one at a time, get the
/// log-distribution over the next position.
pub trait SeqScorer {
    type State: Clone;
    /// Consume the input and the implicit BOS; return the state plus the
    /// log-distribution for the first output position.
    fn start(&self, input: &[usize]) -> Result<(Self::State, Vec<f64>)>;
    /// Feed one generated token.
    fn step(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>)>;
    fn vocab_size(&self) -> usize;
}

/// State for the trained model: shared encoder output plus decoder state.
#[derive(Clone)]
pub struct ModelDecodeState {
    enc: Rc<EncodedInput>,
    state: InferenceState,
}

impl SeqScorer for ModelParams {
    type State = ModelDecodeState;

    fn start(&self, input: &[usize]) -> Result<(Self::State, Vec<f64>)> {
        let enc = Rc::new(self.encode_input(input)?);
        let mut state = self.init_decoder(&enc);
        let row = self.decode_next(&enc, &mut state, BOS_ID)?;
        Ok((ModelDecodeState { enc, state }, row.data().to_vec()))
    }

    fn step(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>)> {
        let mut next = state.state.clone();
        let row = self.decode_next(&state.enc, &mut next, token)?;
        Ok((
            ModelDecodeState {
                enc: Rc::clone(&state.enc),
                state: next,
            },
            row.data().to_vec(),
        ))
    }

    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }
}

/// Would appending `token` complete an n-gram already present in `tokens`?
fn repeats_ngram(tokens: &[usize], token: usize, n: usize) -> bool {
    if n == 0 || tokens.len() + 1 < n {
        return false;
    }
    let mut gram = tokens[tokens.len() - (n - 1)..].to_vec();
    gram.push(token);
    tokens.windows(n).any(|w| w == gram)
}

/// Apply generation constraints in place: PAD/BOS are never emitted, EOS is
/// suppressed before `min_len`, and blocked-ngram continuations get -inf.
fn apply_constraints(logprobs: &mut [f64], tokens: &[usize], cfg: &DecodeConfig) {
    logprobs[PAD_ID] = f64::NEG_INFINITY;
    logprobs[BOS_ID] = f64::NEG_INFINITY;
    if tokens.len() < cfg.min_len {
        logprobs[EOS_ID] = f64::NEG_INFINITY;
    }
    if cfg.no_repeat_ngram_size > 0 {
        for (id, lp) in logprobs.iter_mut().enumerate() {
            if id != EOS_ID && repeats_ngram(tokens, id, cfg.no_repeat_ngram_size) {
                *lp = f64::NEG_INFINITY;
            }
        }
    }
}

/// Argmax with ties broken by the lowest token id.
fn argmax(logprobs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in logprobs.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

fn length_norm(sum: f64, len_terms: usize, penalty: f64) -> f64 {
    let len = len_terms.max(1) as f64;
    sum / len.powf(penalty)
}

/// A finished sequence with its length-normalized score.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub tokens: Vec<usize>,
    pub score: f64,
}

fn greedy_scored<S: SeqScorer>(model: &S, input: &[usize], cfg: &DecodeConfig) -> Result<Scored> {
    cfg.validate()?;
    let mut tokens = Vec::new();
    let mut sum = 0.0;
    if cfg.max_len == 0 {
        return Ok(Scored { tokens, score: 0.0 });
    }
    let (mut state, mut logprobs) = model.start(input)?;
    loop {
        apply_constraints(&mut logprobs, &tokens, cfg);
        let pick = argmax(&logprobs);
        let lp = logprobs[pick];
        if lp == f64::NEG_INFINITY {
            // Everything is banned; end the sequence without an EOS term.
            return Ok(Scored {
                score: length_norm(sum, tokens.len(), cfg.length_penalty),
                tokens,
            });
        }
        if pick == EOS_ID {
            sum += lp;
            let terms = tokens.len() + 1;
            return Ok(Scored {
                score: length_norm(sum, terms, cfg.length_penalty),
                tokens,
            });
        }
        sum += lp;
        tokens.push(pick);
        if tokens.len() >= cfg.max_len {
            return Ok(Scored {
                score: length_norm(sum, tokens.len(), cfg.length_penalty),
                tokens,
            });
        }
        let (next_state, next_lp) = model.step(&state, pick)?;
        state = next_state;
        logprobs = next_lp;
    }
}

/// Greedy decoding: argmax token per step, EOS suppressed before min_len,
/// stop at EOS or max_len.
pub fn greedy<S: SeqScorer>(model: &S, input: &[usize], cfg: &DecodeConfig) -> Result<Vec<usize>> {
    Ok(greedy_scored(model, input, cfg)?.tokens)
}

struct Hypothesis<St> {
    tokens: Vec<usize>,
    sum: f64,
    state: St,
    logprobs: Vec<f64>,
}

/// Length-normalized beam search.
///
/// Completed hypotheses score (sum log-probs) / len^length_penalty, where
/// the EOS term counts when the hypothesis ended with EOS. The final result
/// never scores below greedy: with num_beams > 1 the greedy sequence is
/// evaluated under the same scoring function and returned instead if the
/// beam somehow pruned everything better.
pub fn beam_search<S: SeqScorer>(
    model: &S,
    input: &[usize],
    cfg: &DecodeConfig,
) -> Result<BeamOutcome> {
    cfg.validate()?;
    if cfg.max_len == 0 {
        return Ok(BeamOutcome {
            best: Scored { tokens: Vec::new(), score: 0.0 },
            candidates: Vec::new(),
        });
    }
    if cfg.num_beams == 1 {
        // Width-1 beam prunes exactly like greedy.
        let best = greedy_scored(model, input, cfg)?;
        return Ok(BeamOutcome {
            candidates: vec![best.clone()],
            best,
        });
    }

    let (state0, lp0) = model.start(input)?;
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        sum: 0.0,
        state: state0,
        logprobs: lp0,
    }];
    let mut completed: Vec<Scored> = Vec::new();

    for _ in 0..cfg.max_len {
        // (hyp index, token, new sum); ranked by sum then lexicographic seq.
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (h, hyp) in live.iter_mut().enumerate() {
            apply_constraints(&mut hyp.logprobs, &hyp.tokens, cfg);
            for (id, &lp) in hyp.logprobs.iter().enumerate() {
                if lp > f64::NEG_INFINITY {
                    candidates.push((h, id, hyp.sum + lp));
                }
            }
        }
        if candidates.is_empty() {
            // All continuations banned: flush live hypotheses as-is.
            for hyp in &live {
                completed.push(Scored {
                    tokens: hyp.tokens.clone(),
                    score: length_norm(hyp.sum, hyp.tokens.len(), cfg.length_penalty),
                });
            }
            live.clear();
            break;
        }
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| {
                    let seq_a = (&live[a.0].tokens, a.1);
                    let seq_b = (&live[b.0].tokens, b.1);
                    seq_a.cmp(&seq_b)
                })
        });

        let mut next_live: Vec<Hypothesis<S::State>> = Vec::with_capacity(cfg.num_beams);
        for &(h, id, sum) in candidates.iter().take(2 * cfg.num_beams) {
            if id == EOS_ID {
                completed.push(Scored {
                    tokens: live[h].tokens.clone(),
                    score: length_norm(sum, live[h].tokens.len() + 1, cfg.length_penalty),
                });
            } else if next_live.len() < cfg.num_beams {
                let mut tokens = live[h].tokens.clone();
                tokens.push(id);
                let (state, logprobs) = model.step(&live[h].state, id)?;
                next_live.push(Hypothesis { tokens, sum, state, logprobs });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }

        // Keep only the best completions.
        completed.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        completed.truncate(2 * cfg.num_beams);

        // Stop when no live hypothesis can still beat the kept pool:
        // log-probs are <= 0, so a live sum can only shrink, and the best
        // final normalizer for a negative sum is the longest length.
        if completed.len() >= cfg.num_beams {
            let worst_kept = completed[cfg.num_beams - 1].score;
            let best_live = live
                .iter()
                .map(|h| {
                    length_norm(h.sum, cfg.max_len.max(1), cfg.length_penalty)
                        .max(length_norm(h.sum, h.tokens.len().max(1), cfg.length_penalty))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if best_live < worst_kept {
                break;
            }
        }
    }

    // Hypotheses still alive at max_len complete without an EOS term.
    for hyp in &live {
        completed.push(Scored {
            tokens: hyp.tokens.clone(),
            score: length_norm(hyp.sum, hyp.tokens.len(), cfg.length_penalty),
        });
    }
    completed.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    completed.truncate(2 * cfg.num_beams);

    let greedy_result = greedy_scored(model, input, cfg)?;
    let best = match completed.first() {
        Some(top) if top.score >= greedy_result.score => top.clone(),
        _ => greedy_result,
    };
    Ok(BeamOutcome { best, candidates: completed })
}

/// Beam-search result: the winning sequence plus the ranked candidate pool.
#[derive(Debug, Clone)]
pub struct BeamOutcome {
    pub best: Scored,
    pub candidates: Vec<Scored>,
}

//! Corpus handling: tokenization, vocabulary construction, synthetic task
//! generation, JSONL ingestion, and corpus statistics.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IclError, Result};
use crate::seeding;

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    Whitespace,
    Char,
}

/// Split text into tokens: whitespace mode splits on runs of whitespace,
/// char mode yields one token per non-whitespace character.
pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    match mode {
        TokenizeMode::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        TokenizeMode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string())
            .collect(),
    }
}

/// Bidirectional token/id map with the four reserved ids always present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    mode: TokenizeMode,
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn with_reserved(mode: TokenizeMode) -> Self {
        let mut v = Vocabulary {
            mode,
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED_TOKENS {
            v.intern(t);
        }
        v
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Rebuild the lookup map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn mode(&self) -> TokenizeMode {
        self.mode
    }

    pub fn id_of(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK_ID)
    }

    pub fn token_of(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| IclError::Data(format!("token id {} out of range (vocab {})", id, self.size())))
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_of(t)).collect()
    }

    pub fn decode_ids(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| self.token_of(id).map(str::to_string))
            .collect()
    }

    /// Human-readable text for generated ids; reserved markers are dropped
    /// except `<unk>`, and tokens are joined per tokenizer mode.
    pub fn decode_text(&self, ids: &[usize]) -> Result<String> {
        let mut parts = Vec::new();
        for &id in ids {
            if id == PAD_ID || id == BOS_ID || id == EOS_ID {
                continue;
            }
            parts.push(self.token_of(id)?);
        }
        Ok(match self.mode {
            TokenizeMode::Whitespace => parts.join(" "),
            TokenizeMode::Char => parts.concat(),
        })
    }
}

/// One input/output pair, as raw text, tokens, and (once bound) ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input_text: String,
    pub output_text: String,
    pub input_tokens: Vec<String>,
    pub output_tokens: Vec<String>,
    pub input_ids: Vec<usize>,
    pub output_ids: Vec<usize>,
}

impl TrainingSample {
    pub fn new(input_text: impl Into<String>, output_text: impl Into<String>, mode: TokenizeMode) -> Result<Self> {
        let input_text = input_text.into();
        let output_text = output_text.into();
        let input_tokens = tokenize(&input_text, mode);
        let output_tokens = tokenize(&output_text, mode);
        if output_tokens.is_empty() {
            return Err(IclError::Data("sample has an empty output".to_string()));
        }
        Ok(TrainingSample {
            input_text,
            output_text,
            input_tokens,
            output_tokens,
            input_ids: Vec::new(),
            output_ids: Vec::new(),
        })
    }

    fn bind(&mut self, vocab: &Vocabulary) {
        self.input_ids = vocab.encode_tokens(&self.input_tokens);
        self.output_ids = vocab.encode_tokens(&self.output_tokens);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Ordered sample collection for one split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub samples: Vec<TrainingSample>,
    pub split: Split,
}

impl Corpus {
    pub fn new(samples: Vec<TrainingSample>, split: Split) -> Result<Self> {
        if samples.is_empty() && matches!(split, Split::Train | Split::Val) {
            return Err(IclError::Data("empty corpus".to_string()));
        }
        Ok(Corpus { samples, split })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Encode every sample against a vocabulary (unseen tokens become UNK).
    pub fn bind_vocab(&mut self, vocab: &Vocabulary) {
        for s in &mut self.samples {
            s.bind(vocab);
        }
    }
}

/// First-occurrence vocabulary over the corpus tokens plus reserved ids.
pub fn build_vocab(corpus: &Corpus, mode: TokenizeMode) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(IclError::Data("empty corpus".to_string()));
    }
    let mut vocab = Vocabulary::with_reserved(mode);
    for sample in &corpus.samples {
        for t in sample.input_tokens.iter().chain(&sample.output_tokens) {
            vocab.intern(t);
        }
    }
    Ok(vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthTask {
    Copy,
    Reverse,
    Sort,
    Add,
}

fn letter_token(i: usize) -> String {
    if i < 26 {
        ((b'a' + i as u8) as char).to_string()
    } else {
        format!("t{}", i)
    }
}

fn digits_to_number(digits: &[usize]) -> u64 {
    digits.iter().fold(0u64, |acc, &d| acc * 10 + d as u64)
}

fn number_to_digit_tokens(mut n: u64) -> Vec<String> {
    if n == 0 {
        return vec!["0".to_string()];
    }
    let mut out = Vec::new();
    while n > 0 {
        out.push(((n % 10) as usize).to_string());
        n /= 10;
    }
    out.reverse();
    out
}

/// Deterministic synthetic corpus for one of the toy tasks.
///
/// `alphabet_size` is the number of distinct content symbols (capped at 10
/// for the digit tasks). Lengths are drawn uniformly from `len_range`
/// inclusive; for `add` the range governs the digit count of each operand.
pub fn gen_synthetic(
    task: SynthTask,
    alphabet_size: usize,
    count: usize,
    len_range: (usize, usize),
    seed: u64,
) -> Result<Corpus> {
    let (lo, hi) = len_range;
    if count < 1 {
        return Err(IclError::InvalidArgument("count must be >= 1".to_string()));
    }
    if lo < 1 || lo > hi {
        return Err(IclError::InvalidArgument(format!(
            "invalid length range ({}, {})",
            lo, hi
        )));
    }
    if alphabet_size < 1 {
        return Err(IclError::InvalidArgument(
            "alphabet_size must be >= 1".to_string(),
        ));
    }
    let digit_task = matches!(task, SynthTask::Sort | SynthTask::Add);
    let alpha = if digit_task {
        alphabet_size.min(10)
    } else {
        alphabet_size
    };
    // For `add` the operand length is capped so the sum fits in u64.
    let hi = if matches!(task, SynthTask::Add) { hi.min(18) } else { hi };
    let lo = lo.min(hi);

    let mut rng = seeding::rng(seed);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.gen_range(lo..=hi);
        let (input_tokens, output_tokens): (Vec<String>, Vec<String>) = match task {
            SynthTask::Copy => {
                let toks: Vec<String> =
                    (0..len).map(|_| letter_token(rng.gen_range(0..alpha))).collect();
                (toks.clone(), toks)
            }
            SynthTask::Reverse => {
                let toks: Vec<String> =
                    (0..len).map(|_| letter_token(rng.gen_range(0..alpha))).collect();
                let mut rev = toks.clone();
                rev.reverse();
                (toks, rev)
            }
            SynthTask::Sort => {
                let digits: Vec<usize> = (0..len).map(|_| rng.gen_range(0..alpha)).collect();
                let mut sorted = digits.clone();
                sorted.sort_unstable();
                (
                    digits.iter().map(|d| d.to_string()).collect(),
                    sorted.iter().map(|d| d.to_string()).collect(),
                )
            }
            SynthTask::Add => {
                let a: Vec<usize> = (0..len).map(|_| rng.gen_range(0..alpha)).collect();
                let b: Vec<usize> = (0..len).map(|_| rng.gen_range(0..alpha)).collect();
                let sum = digits_to_number(&a) + digits_to_number(&b);
                let mut input: Vec<String> = a.iter().map(|d| d.to_string()).collect();
                input.push("+".to_string());
                input.extend(b.iter().map(|d| d.to_string()));
                (input, number_to_digit_tokens(sum))
            }
        };
        let input_text = input_tokens.join(" ");
        let output_text = output_tokens.join(" ");
        samples.push(TrainingSample {
            input_text,
            output_text,
            input_tokens,
            output_tokens,
            input_ids: Vec::new(),
            output_ids: Vec::new(),
        });
    }
    Corpus::new(samples, Split::Train)
}

/// Load a JSONL corpus: one object per line with string fields
/// `input` and `output`. Blank lines are skipped; extra fields are allowed.
pub fn load_jsonl(path: impl AsRef<Path>, mode: TokenizeMode) -> Result<Corpus> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| IclError::DataLine {
            line: line_no,
            msg: format!("malformed JSON: {}", e),
        })?;
        let obj = value.as_object().ok_or_else(|| IclError::DataLine {
            line: line_no,
            msg: "expected a JSON object".to_string(),
        })?;
        let field = |name: &str| -> Result<String> {
            obj.get(name)
                .ok_or_else(|| IclError::DataLine {
                    line: line_no,
                    msg: format!("missing field \"{}\"", name),
                })?
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| IclError::DataLine {
                    line: line_no,
                    msg: format!("field \"{}\" must be a string", name),
                })
        };
        let input = field("input")?;
        let output = field("output")?;
        let sample = TrainingSample::new(input, output, mode).map_err(|e| IclError::DataLine {
            line: line_no,
            msg: e.to_string(),
        })?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(IclError::Data("empty corpus".to_string()));
    }
    Corpus::new(samples, Split::Train)
}

/// Corpus statistics over token counts (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub count: usize,
    pub avg_out_len: f64,
    pub std_out_len: f64,
    pub avg_in_len: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(IclError::Data("empty corpus".to_string()));
    }
    let n = corpus.len() as f64;
    let out_lens: Vec<f64> = corpus.samples.iter().map(|s| s.output_tokens.len() as f64).collect();
    let in_lens: Vec<f64> = corpus.samples.iter().map(|s| s.input_tokens.len() as f64).collect();
    let avg_out = out_lens.iter().sum::<f64>() / n;
    let var_out = out_lens.iter().map(|l| (l - avg_out).powi(2)).sum::<f64>() / n;
    let avg_in = in_lens.iter().sum::<f64>() / n;
    Ok(CorpusStats {
        count: corpus.len(),
        avg_out_len: avg_out,
        std_out_len: var_out.sqrt(),
        avg_in_len: avg_in,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_from(pairs: &[(&str, &str)]) -> Corpus {
        let samples = pairs
            .iter()
            .map(|(i, o)| TrainingSample::new(*i, *o, TokenizeMode::Whitespace).unwrap())
            .collect();
        Corpus::new(samples, Split::Train).unwrap()
    }

    #[test]
    fn tokenize_whitespace_collapses_runs() {
        assert_eq!(tokenize("a b  c", TokenizeMode::Whitespace), vec!["a", "b", "c"]);
        assert_eq!(tokenize("", TokenizeMode::Whitespace), Vec::<String>::new());
    }

    #[test]
    fn tokenize_char_drops_spaces() {
        assert_eq!(tokenize("abc", TokenizeMode::Char), vec!["a", "b", "c"]);
        assert_eq!(tokenize("a b", TokenizeMode::Char), vec!["a", "b"]);
    }

    #[test]
    fn vocab_counts_distinct_tokens_plus_reserved() {
        let corpus = corpus_from(&[("a b", "b c")]);
        let vocab = build_vocab(&corpus, TokenizeMode::Whitespace).unwrap();
        assert_eq!(vocab.size(), 7);
        // Deterministic: same corpus gives an identical vocabulary.
        let vocab2 = build_vocab(&corpus, TokenizeMode::Whitespace).unwrap();
        assert_eq!(vocab.tokens, vocab2.tokens);
    }

    #[test]
    fn unseen_token_encodes_to_unk() {
        let corpus = corpus_from(&[("a b", "b c")]);
        let vocab = build_vocab(&corpus, TokenizeMode::Whitespace).unwrap();
        assert_eq!(vocab.encode_tokens(&["zzz".to_string()]), vec![UNK_ID]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Corpus::new(Vec::new(), Split::Train).is_err());
        assert!(Corpus::new(Vec::new(), Split::Test).is_ok());
    }

    #[test]
    fn reverse_task_outputs_are_exact_reversals() {
        let corpus = gen_synthetic(SynthTask::Reverse, 12, 50, (1, 10), 3).unwrap();
        for s in &corpus.samples {
            let mut rev = s.input_tokens.clone();
            rev.reverse();
            assert_eq!(s.output_tokens, rev);
        }
    }

    #[test]
    fn sort_task_outputs_are_sorted() {
        let corpus = gen_synthetic(SynthTask::Sort, 10, 50, (1, 8), 4).unwrap();
        for s in &corpus.samples {
            let mut sorted = s.input_tokens.clone();
            sorted.sort();
            assert_eq!(s.output_tokens, sorted);
            assert!(s.output_tokens.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn add_task_matches_decimal_arithmetic() {
        assert_eq!(number_to_digit_tokens(46), vec!["4", "6"]);
        assert_eq!(digits_to_number(&[1, 2]) + digits_to_number(&[3, 4]), 46);
        let corpus = gen_synthetic(SynthTask::Add, 10, 40, (1, 6), 5).unwrap();
        for s in &corpus.samples {
            let plus = s.input_tokens.iter().position(|t| t == "+").unwrap();
            let a: u64 = s.input_tokens[..plus].join("").parse().unwrap();
            let b: u64 = s.input_tokens[plus + 1..].join("").parse().unwrap();
            let out: u64 = s.output_tokens.join("").parse().unwrap();
            assert_eq!(a + b, out);
        }
    }

    #[test]
    fn same_seed_is_byte_identical_different_seed_is_not() {
        let a = gen_synthetic(SynthTask::Reverse, 8, 30, (2, 9), 42).unwrap();
        let b = gen_synthetic(SynthTask::Reverse, 8, 30, (2, 9), 42).unwrap();
        let c = gen_synthetic(SynthTask::Reverse, 8, 30, (2, 9), 43).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn invalid_range_is_rejected() {
        assert!(gen_synthetic(SynthTask::Copy, 5, 10, (4, 2), 1).is_err());
        assert!(gen_synthetic(SynthTask::Copy, 5, 10, (0, 2), 1).is_err());
        assert!(gen_synthetic(SynthTask::Copy, 5, 0, (1, 2), 1).is_err());
    }

    #[test]
    fn jsonl_happy_path_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.jsonl");
        std::fs::write(&good, "{\"input\":\"hi\",\"output\":\"hello\"}\n").unwrap();
        let corpus = load_jsonl(&good, TokenizeMode::Whitespace).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.samples[0].output_tokens, vec!["hello"]);

        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        let err = load_jsonl(&empty, TokenizeMode::Whitespace).unwrap_err();
        assert!(err.to_string().contains("empty corpus"));

        let missing = dir.path().join("missing.jsonl");
        std::fs::write(&missing, "{\"input\":\"a\",\"output\":\"b\"}\n{\"input\":\"x\"}\n").unwrap();
        let err = load_jsonl(&missing, TokenizeMode::Whitespace).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("output"), "{msg}");

        let malformed = dir.path().join("malformed.jsonl");
        std::fs::write(&malformed, "not json\n").unwrap();
        let err = load_jsonl(&malformed, TokenizeMode::Whitespace).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn stats_two_point_and_single_point() {
        let c = corpus_from(&[("x", "a b"), ("y", "a b c d")]);
        let s = corpus_stats(&c).unwrap();
        assert_eq!(s.avg_out_len, 3.0);
        assert_eq!(s.std_out_len, 1.0);
        let c1 = corpus_from(&[("x", "a b c d e")]);
        let s1 = corpus_stats(&c1).unwrap();
        assert_eq!(s1.avg_out_len, 5.0);
        assert_eq!(s1.std_out_len, 0.0);
    }

    #[test]
    fn stats_match_streaming_moments_oracle() {
        // Welford's online algorithm as an independent recomputation.
        let corpus = gen_synthetic(SynthTask::Reverse, 10, 200, (1, 30), 9).unwrap();
        let stats = corpus_stats(&corpus).unwrap();
        let (mut mean, mut m2, mut n) = (0.0f64, 0.0f64, 0.0f64);
        for s in &corpus.samples {
            let x = s.output_tokens.len() as f64;
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        let std = (m2 / n).sqrt();
        assert!((stats.avg_out_len - mean).abs() < 1e-12);
        assert!((stats.std_out_len - std).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(ids in proptest::collection::vec(0usize..7, 0..40)) {
            let corpus = corpus_from(&[("a b", "b c")]);
            let vocab = build_vocab(&corpus, TokenizeMode::Whitespace).unwrap();
            let tokens = vocab.decode_ids(&ids).unwrap();
            prop_assert_eq!(vocab.encode_tokens(&tokens), ids);
        }
    }
}

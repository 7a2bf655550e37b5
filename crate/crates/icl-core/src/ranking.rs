//! Sample-wise difficulty scoring and corpus ordering, composable with the
//! in-sample schedule: input length, output length, compression ratio, and
//! abstractiveness (bigram recall of the output against the input).

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, TrainingSample};
use crate::error::{IclError, Result};
use crate::metrics::rouge_n;
use crate::seeding;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankStrategy {
    InLen,
    OutLen,
    CompR,
    Abstr,
}

impl RankStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            RankStrategy::InLen => "inlen",
            RankStrategy::OutLen => "outlen",
            RankStrategy::CompR => "compr",
            RankStrategy::Abstr => "abstr",
        }
    }
}

impl std::str::FromStr for RankStrategy {
    type Err = IclError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inlen" => Ok(RankStrategy::InLen),
            "outlen" => Ok(RankStrategy::OutLen),
            "compr" => Ok(RankStrategy::CompR),
            "abstr" => Ok(RankStrategy::Abstr),
            other => Err(IclError::InvalidArgument(format!(
                "unknown ranking strategy {:?}",
                other
            ))),
        }
    }
}

/// Difficulty of one sample under a strategy; higher = harder.
///
/// InLen and OutLen are token counts. CompR is the negated compression
/// ratio (more compressed pairs are harder). Abstr is the negated bigram
/// recall of the output against the input (near-verbatim outputs are the
/// easiest).
pub fn score(sample: &TrainingSample, strategy: RankStrategy) -> Result<f64> {
    let in_len = sample.input_tokens.len();
    let out_len = sample.output_tokens.len();
    match strategy {
        RankStrategy::InLen => Ok(in_len as f64),
        RankStrategy::OutLen => Ok(out_len as f64),
        RankStrategy::CompR => {
            if in_len == 0 {
                return Err(IclError::Data(
                    "compression ratio needs a non-empty input".to_string(),
                ));
            }
            Ok(-(out_len as f64 / in_len as f64))
        }
        RankStrategy::Abstr => {
            if in_len == 0 {
                return Err(IclError::Data(
                    "abstractiveness needs a non-empty input".to_string(),
                ));
            }
            // Recall of the output against the input: the fraction of
            // output bigrams that already appear in the input. 1.0 means a
            // fully extractive pair, which is the easiest.
            let recall = rouge_n(&sample.input_tokens, &sample.output_tokens, 2)?.recall;
            Ok(-recall)
        }
    }
}

/// One sample's difficulty record.
#[derive(Debug, Clone, Serialize)]
pub struct DifficultyScore {
    pub index: usize,
    pub strategy: String,
    pub raw_score: f64,
    pub rank: usize,
}

/// Score every sample and assign easy-first ranks (stable ties by index).
pub fn score_corpus(corpus: &Corpus, strategy: RankStrategy) -> Result<Vec<DifficultyScore>> {
    let perm = order_corpus(corpus, strategy)?;
    let mut out: Vec<DifficultyScore> = corpus
        .samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            Ok(DifficultyScore {
                index,
                strategy: strategy.name().to_string(),
                raw_score: score(s, strategy)?,
                rank: 0,
            })
        })
        .collect::<Result<_>>()?;
    for (rank, &index) in perm.iter().enumerate() {
        out[index].rank = rank;
    }
    Ok(out)
}

/// Easy-to-hard permutation: stable ascending sort by difficulty,
/// ties broken by original index.
pub fn order_corpus(corpus: &Corpus, strategy: RankStrategy) -> Result<Vec<usize>> {
    if corpus.is_empty() {
        return Err(IclError::Data("empty corpus".to_string()));
    }
    let scores: Vec<f64> = corpus
        .samples
        .iter()
        .map(|s| score(s, strategy))
        .collect::<Result<_>>()?;
    let mut perm: Vec<usize> = (0..corpus.len()).collect();
    perm.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(perm)
}

/// Per-epoch sample order: the first `sorted_epochs` epochs follow the
/// permutation, later epochs use seeded shuffles. Epochs are 1-based.
pub struct CurriculumFeed {
    permutation: Vec<usize>,
    sorted_epochs: usize,
    seed: u64,
}

impl CurriculumFeed {
    pub fn new(permutation: Vec<usize>, sorted_epochs: usize, seed: u64) -> Self {
        CurriculumFeed {
            permutation,
            sorted_epochs,
            seed,
        }
    }

    /// Plain shuffled feed (no ranking).
    pub fn shuffled(n: usize, seed: u64) -> Self {
        CurriculumFeed {
            permutation: (0..n).collect(),
            sorted_epochs: 0,
            seed,
        }
    }

    pub fn order_for(&self, epoch: usize) -> Vec<usize> {
        if epoch >= 1 && epoch <= self.sorted_epochs {
            self.permutation.clone()
        } else {
            let mut order = self.permutation.clone();
            order.sort_unstable();
            let mut rng = seeding::rng(seeding::derive_seed(self.seed, epoch as u64));
            order.shuffle(&mut rng);
            order
        }
    }
}

//! Per-position loss weighting for sequence completion and sub-sequence
//! generation: cutting-point computation, mask construction, and the
//! masked negative log-likelihood itself.

use serde::{Deserialize, Serialize};

use crate::error::{IclError, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Per-output-position loss weights and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMask {
    weights: Vec<f64>,
    normalizer: f64,
}

impl LossMask {
    fn new(weights: Vec<f64>) -> Self {
        let normalizer = weights.iter().sum();
        LossMask { weights, normalizer }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Number of positions carrying loss.
    pub fn active_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// Mask for the sequence with the terminator appended: the new final
    /// position inherits the weight of the last content position, so
    /// termination is trained whenever the last content token is.
    pub fn extended_with_eos(&self) -> LossMask {
        let mut weights = self.weights.clone();
        let last = *weights.last().unwrap_or(&1.0);
        weights.push(last);
        LossMask::new(weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Sequence completion: loss on the suffix, prefix given.
    Sc,
    /// Sub-sequence generation: loss on a leading portion.
    Sg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Weighting {
    /// Binary 0/1 cut.
    Hard,
    /// Weights decay linearly from 1 across the loss-bearing region.
    Linear,
    /// Weights decay as exp(-rate * offset) across the loss-bearing region.
    Exp { rate: f64 },
}

/// A resolved cut: prefix fraction, criterion, and weighting shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutSpec {
    pub p: f64,
    pub criterion: Criterion,
    pub weighting: Weighting,
}

impl CutSpec {
    pub fn hard(p: f64, criterion: Criterion) -> Self {
        CutSpec {
            p,
            criterion,
            weighting: Weighting::Hard,
        }
    }
}

fn check_fraction(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(IclError::InvalidArgument(format!(
            "fraction must be in [0, 1], got {}",
            p
        )));
    }
    Ok(())
}

/// Cutting point  c = clamp(ceil(n * p), 1, n)  for p > 0, and c = 1 for
/// p = 0 (full-sequence loss).
///
/// The tiny epsilon keeps float noise at exact integer products (e.g. a p
/// that arrived as 0.30000000000000004) from pushing the cut one position
/// late; legitimate fractional parts are many orders of magnitude larger.
pub fn cutting_point(n: usize, p: f64) -> Result<usize> {
    check_fraction(p)?;
    if n < 1 {
        return Err(IclError::InvalidArgument(
            "output length must be >= 1".to_string(),
        ));
    }
    if p == 0.0 {
        return Ok(1);
    }
    let raw = (n as f64 * p - 1e-9).ceil() as i64;
    Ok(raw.clamp(1, n as i64) as usize)
}

/// Sequence-completion mask: loss on positions c..=n, normalizer n - c + 1.
pub fn sc_mask(n: usize, c: usize) -> Result<LossMask> {
    if c < 1 || c > n {
        return Err(IclError::InvalidArgument(format!(
            "cut {} out of range for length {}",
            c, n
        )));
    }
    let weights = (1..=n).map(|t| if t >= c { 1.0 } else { 0.0 }).collect();
    Ok(LossMask::new(weights))
}

/// Sub-sequence-generation mask: loss on positions 1..=m, normalizer m.
pub fn sg_mask(n: usize, m: usize) -> Result<LossMask> {
    if m < 1 || m > n {
        return Err(IclError::InvalidArgument(format!(
            "loss-token count {} out of range for length {}",
            m, n
        )));
    }
    let weights = (1..=n).map(|t| if t <= m { 1.0 } else { 0.0 }).collect();
    Ok(LossMask::new(weights))
}

/// Multiply a binary mask's loss-bearing region by the configured ramp and
/// recompute the normalizer.
pub fn apply_weighting(mask: LossMask, weighting: Weighting) -> LossMask {
    apply_ramp(mask, weighting)
}

fn apply_ramp(mask: LossMask, weighting: Weighting) -> LossMask {
    match weighting {
        Weighting::Hard => mask,
        Weighting::Linear | Weighting::Exp { .. } => {
            let mut weights = mask.weights;
            let active: Vec<usize> = weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(i, _)| i)
                .collect();
            let m = active.len() as f64;
            for (j, &i) in active.iter().enumerate() {
                weights[i] *= match weighting {
                    Weighting::Linear => (m - j as f64) / m,
                    Weighting::Exp { rate } => (-rate * j as f64).exp(),
                    Weighting::Hard => unreachable!(),
                };
            }
            LossMask::new(weights)
        }
    }
}

/// Build the mask for an output of length `n` under a cut spec.
///
/// Both criteria carry the same loss-token count at equal p: SC takes it
/// from the back (positions c..n), SG from the front (positions 1..n-c+1),
/// and both reduce to the full-sequence loss at p = 0.
pub fn mask_for(n: usize, spec: &CutSpec) -> Result<LossMask> {
    let c = cutting_point(n, spec.p)?;
    let base = match spec.criterion {
        Criterion::Sc => sc_mask(n, c)?,
        Criterion::Sg => sg_mask(n, n - c + 1)?,
    };
    Ok(apply_ramp(base, spec.weighting))
}

/// Masked negative log-likelihood of one sample:
/// -(sum_t w_t * logprob[t, gold_t]) / normalizer.
pub fn masked_nll(logprobs: &Tensor, gold: &[usize], mask: &LossMask) -> Result<f64> {
    let (rows, vocab) = logprobs.dims2("masked_nll")?;
    if rows != gold.len() || rows != mask.len() {
        return Err(IclError::shape(
            "masked_nll",
            format!(
                "{} logprob rows, {} gold ids, {} mask weights",
                rows,
                gold.len(),
                mask.len()
            ),
        ));
    }
    let mut total = 0.0;
    for (t, (&id, &w)) in gold.iter().zip(mask.weights()).enumerate() {
        if id >= vocab {
            return Err(IclError::shape(
                "masked_nll",
                format!("gold id {} out of range for vocab {}", id, vocab),
            ));
        }
        total += w * logprobs.row(t)[id];
    }
    Ok(-total / mask.normalizer())
}

/// Batch-mean masked NLL as a tape node.
///
/// `step_logprobs[t]` is the `[batch, vocab]` log-distribution for output
/// position t; each sample contributes its own mask-normalized loss and the
/// batch result is the mean over samples. Positions past a sample's target
/// length carry zero weight, so padding never contributes loss or gradient.
pub fn batch_nll_node(
    tape: &mut Tape,
    step_logprobs: &[NodeId],
    targets: &[Vec<usize>],
    masks: &[LossMask],
) -> Result<NodeId> {
    let batch = targets.len();
    if batch == 0 || masks.len() != batch {
        return Err(IclError::shape(
            "batch_nll",
            format!("{} targets vs {} masks", batch, masks.len()),
        ));
    }
    for (tgt, mask) in targets.iter().zip(masks) {
        if tgt.len() != mask.len() {
            return Err(IclError::shape(
                "batch_nll",
                format!("target length {} vs mask length {}", tgt.len(), mask.len()),
            ));
        }
        if tgt.len() > step_logprobs.len() {
            return Err(IclError::shape(
                "batch_nll",
                format!(
                    "target length {} exceeds {} decoder steps",
                    tgt.len(),
                    step_logprobs.len()
                ),
            ));
        }
    }

    let mut acc: Option<NodeId> = None;
    for (t, &rows) in step_logprobs.iter().enumerate() {
        let mut ids = Vec::with_capacity(batch);
        let mut coef = Vec::with_capacity(batch);
        for (tgt, mask) in targets.iter().zip(masks) {
            if t < tgt.len() {
                ids.push(tgt[t]);
                coef.push(-mask.weights()[t] / (mask.normalizer() * batch as f64));
            } else {
                ids.push(0);
                coef.push(0.0);
            }
        }
        if coef.iter().all(|&c| c == 0.0) {
            continue;
        }
        let picked = tape.pick_per_row(rows, &ids)?;
        let coef_node = tape.constant(Tensor::vector(coef));
        let term = tape.mul(picked, coef_node)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let acc = acc.ok_or_else(|| {
        IclError::shape("batch_nll", "no loss-bearing positions".to_string())
    })?;
    tape.sum_all(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cutting_point_boundaries() {
        assert_eq!(cutting_point(5, 0.6).unwrap(), 3);
        assert_eq!(cutting_point(5, 0.0).unwrap(), 1);
        assert_eq!(cutting_point(3, 0.1).unwrap(), 1);
        assert_eq!(cutting_point(10, 1.0).unwrap(), 10);
        assert!(cutting_point(5, -0.1).is_err());
        assert!(cutting_point(5, 1.1).is_err());
    }

    #[test]
    fn cutting_point_survives_float_noise() {
        // 0.1 + 0.2 in binary is slightly above 0.3; the exact product
        // 10 * 0.3 = 3 must not become 4.
        assert_eq!(cutting_point(10, 0.1 + 0.2).unwrap(), 3);
    }

    #[test]
    fn sc_mask_cases() {
        let m = sc_mask(5, 3).unwrap();
        assert_eq!(m.weights(), &[0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(m.normalizer(), 3.0);
        let m = sc_mask(4, 1).unwrap();
        assert_eq!(m.weights(), &[1.0; 4]);
        assert_eq!(m.normalizer(), 4.0);
        let m = sc_mask(4, 4).unwrap();
        assert_eq!(m.weights(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.normalizer(), 1.0);
        assert!(sc_mask(4, 5).is_err());
        assert!(sc_mask(4, 0).is_err());
    }

    #[test]
    fn sg_mask_cases_and_partition() {
        let m = sg_mask(5, 3).unwrap();
        assert_eq!(m.weights(), &[1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.normalizer(), 3.0);
        assert_eq!(sg_mask(5, 5).unwrap().weights(), &[1.0; 5]);
        let sc = sc_mask(5, 3).unwrap();
        let sg = sg_mask(5, 2).unwrap();
        let sum: Vec<f64> = sc
            .weights()
            .iter()
            .zip(sg.weights())
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(sum, vec![1.0; 5]);
    }

    #[test]
    fn mask_for_equal_loss_token_counts() {
        let sc = mask_for(10, &CutSpec::hard(0.3, Criterion::Sc)).unwrap();
        assert_eq!(sc.weights()[2..], [1.0; 8]);
        assert_eq!(sc.active_count(), 8);
        let sg = mask_for(10, &CutSpec::hard(0.3, Criterion::Sg)).unwrap();
        assert_eq!(sg.weights()[..8], [1.0; 8]);
        assert_eq!(sg.active_count(), 8);
        let full_sc = mask_for(7, &CutSpec::hard(0.0, Criterion::Sc)).unwrap();
        let full_sg = mask_for(7, &CutSpec::hard(0.0, Criterion::Sg)).unwrap();
        assert_eq!(full_sc.weights(), &[1.0; 7]);
        assert_eq!(full_sc, full_sg);
    }

    #[test]
    fn monotone_difficulty_mass() {
        // As p decreases, the loss-bearing position count never shrinks.
        for &criterion in &[Criterion::Sc, Criterion::Sg] {
            for n in 1..=20 {
                let mut prev = 0;
                for step in (0..=10).rev() {
                    let p = step as f64 / 10.0;
                    let count = mask_for(n, &CutSpec::hard(p, criterion)).unwrap().active_count();
                    assert!(count >= prev, "n={n} p={p} criterion={criterion:?}");
                    prev = count;
                }
            }
        }
    }

    #[test]
    fn ramp_weightings_are_monotone_and_renormalized() {
        for weighting in [Weighting::Linear, Weighting::Exp { rate: 0.5 }] {
            let mask = mask_for(
                8,
                &CutSpec {
                    p: 0.5,
                    criterion: Criterion::Sc,
                    weighting,
                },
            )
            .unwrap();
            let active: Vec<f64> = mask.weights().iter().cloned().filter(|&w| w > 0.0).collect();
            assert!(active.windows(2).all(|w| w[0] >= w[1]), "{active:?}");
            assert!((mask.normalizer() - mask.weights().iter().sum::<f64>()).abs() < 1e-12);
            assert!(mask.normalizer() > 0.0);
        }
    }

    #[test]
    fn eos_extension_inherits_last_weight() {
        let m = sc_mask(5, 3).unwrap().extended_with_eos();
        assert_eq!(m.weights(), &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(m.normalizer(), 4.0);
        let m = sg_mask(5, 2).unwrap().extended_with_eos();
        assert_eq!(m.weights(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.normalizer(), 2.0);
    }

    fn rows_with_gold_logprobs(vals: &[f64]) -> (Tensor, Vec<usize>) {
        // Put the target log-prob in column 1 of each row.
        let v = 3;
        let mut data = vec![-9.0; vals.len() * v];
        for (i, &x) in vals.iter().enumerate() {
            data[i * v + 1] = x;
        }
        (Tensor::matrix(vals.len(), v, data).unwrap(), vec![1; vals.len()])
    }

    #[test]
    fn masked_nll_arithmetic() {
        let (rows, gold) = rows_with_gold_logprobs(&[-1.0, -2.0, -3.0]);
        let mask = LossMask::new(vec![0.0, 1.0, 1.0]);
        assert!((masked_nll(&rows, &gold, &mask).unwrap() - 2.5).abs() < 1e-12);
        let full = LossMask::new(vec![1.0; 3]);
        assert!((masked_nll(&rows, &gold, &full).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn full_mask_equals_unmasked_nll() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.gen_range(1..10);
            let v = rng.gen_range(2..8);
            let logits =
                Tensor::matrix(n, v, (0..n * v).map(|_| rng.gen_range(-2.0..2.0)).collect())
                    .unwrap();
            let logprobs = crate::tensor::log_softmax_rows(&logits).unwrap();
            let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
            let mask = mask_for(n, &CutSpec::hard(0.0, Criterion::Sc)).unwrap();
            let ours = masked_nll(&logprobs, &gold, &mask).unwrap();
            // Brute-force unmasked recomputation.
            let mut total = 0.0;
            for (t, &id) in gold.iter().enumerate() {
                total += logprobs.row(t)[id];
            }
            let plain = -total / n as f64;
            assert!((ours - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_nll_length_mismatch_is_error() {
        let (rows, gold) = rows_with_gold_logprobs(&[-1.0, -2.0]);
        let mask = LossMask::new(vec![1.0; 3]);
        assert!(masked_nll(&rows, &gold, &mask).is_err());
    }

    #[test]
    fn zero_weight_positions_get_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let v = 5;
        let t_max = 4;
        let mut tape = Tape::new();
        let mut step_nodes = Vec::new();
        let mut logit_nodes = Vec::new();
        for _ in 0..t_max {
            let logits =
                Tensor::matrix(2, v, (0..2 * v).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .unwrap();
            let leaf = tape.leaf(logits);
            logit_nodes.push(leaf);
            step_nodes.push(tape.log_softmax_rows(leaf).unwrap());
        }
        let targets = vec![vec![1, 2, 3, 4], vec![0, 1]];
        let masks = vec![sc_mask(4, 3).unwrap(), sc_mask(2, 1).unwrap()];
        let loss = batch_nll_node(&mut tape, &step_nodes, &targets, &masks).unwrap();
        let grads = tape.backward(loss).unwrap();
        // Sample 0 positions 1..2 have zero weight; sample 1 pads past t=1.
        let g0 = grads.get(logit_nodes[0]).unwrap();
        assert_eq!(g0.row(0), vec![0.0; v]);
        assert_ne!(g0.row(1).to_vec(), vec![0.0; v]);
        let g2 = grads.get(logit_nodes[2]).unwrap();
        assert_ne!(g2.row(0).to_vec(), vec![0.0; v]);
        assert_eq!(g2.row(1), vec![0.0; v]);
        let g3 = grads.get(logit_nodes[3]).unwrap();
        assert_eq!(g3.row(1), vec![0.0; v]);
    }

    #[test]
    fn batch_loss_is_mean_of_per_sample_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let v = 6;
        let t_max = 5;
        let mut per_step = Vec::new();
        for _ in 0..t_max {
            per_step.push(
                Tensor::matrix(3, v, (0..3 * v).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .unwrap(),
            );
        }
        let targets = vec![vec![1, 2, 3, 4, 5], vec![2, 0], vec![3, 3, 3]];
        let masks = vec![
            sc_mask(5, 2).unwrap(),
            sg_mask(2, 1).unwrap(),
            sc_mask(3, 1).unwrap(),
        ];
        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = per_step
            .iter()
            .map(|t| {
                let c = tape.constant(t.clone());
                tape.log_softmax_rows(c).unwrap()
            })
            .collect();
        let loss = batch_nll_node(&mut tape, &nodes, &targets, &masks).unwrap();
        let got = tape.value(loss).item();

        let mut expect = 0.0;
        for (b, (tgt, mask)) in targets.iter().zip(&masks).enumerate() {
            let rows: Vec<f64> = (0..tgt.len())
                .flat_map(|t| {
                    let ls = crate::tensor::log_softmax_rows(&per_step[t]).unwrap();
                    ls.row(b).to_vec()
                })
                .collect();
            let m = Tensor::matrix(tgt.len(), v, rows).unwrap();
            expect += masked_nll(&m, tgt, mask).unwrap();
        }
        expect /= targets.len() as f64;
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }
}

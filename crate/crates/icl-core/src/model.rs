//! Compact attention-based encoder-decoder.
//!
//! A stacked tanh-RNN encoder reads the input (with a leading BOS so empty
//! inputs are well formed); a tanh-RNN decoder with dot-product attention
//! over the encoder states produces per-position log-probabilities under
//! teacher forcing. The same math runs in two modes: recorded on a `Tape`
//! for training, and tape-free for incremental decoding.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Vocabulary, BOS_ID, PAD_ID};
use crate::error::{IclError, Result};
use crate::seeding;
use crate::tape::{NodeId, Tape};
use crate::tensor::{self, Tensor};

pub const CKPT_FORMAT: &str = "icl-ckpt-v1";

/// Large negative attention bias for padded encoder positions. Softmax maps
/// it to exactly zero weight without disturbing real positions.
const ATTN_MASKED: f64 = -1e9;

fn default_embed_dim() -> usize {
    32
}
fn default_hidden_dim() -> usize {
    64
}
fn default_num_layers() -> usize {
    1
}
fn default_model_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub vocab_size: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_num_layers")]
    pub num_layers: usize,
    #[serde(default = "default_model_seed")]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: default_embed_dim(),
            hidden_dim: default_hidden_dim(),
            num_layers: default_num_layers(),
            seed: default_model_seed(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 || self.embed_dim < 1 || self.hidden_dim < 1 || self.num_layers < 1
        {
            return Err(IclError::Config(format!(
                "model dims must all be >= 1: vocab {}, embed {}, hidden {}, layers {}",
                self.vocab_size, self.embed_dim, self.hidden_dim, self.num_layers
            )));
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

fn param_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let v = config.vocab_size;
    let e = config.embed_dim;
    let h = config.hidden_dim;
    let mut shapes = vec![
        ("enc_embed".to_string(), vec![v, e]),
        ("dec_embed".to_string(), vec![v, e]),
    ];
    for side in ["enc", "dec"] {
        for l in 0..config.num_layers {
            let input = if l == 0 { e } else { h };
            shapes.push((format!("{side}_l{l}_wx"), vec![input, h]));
            shapes.push((format!("{side}_l{l}_wh"), vec![h, h]));
            shapes.push((format!("{side}_l{l}_b"), vec![h]));
        }
    }
    shapes.push(("attn_combine_w".to_string(), vec![2 * h, h]));
    shapes.push(("attn_combine_b".to_string(), vec![h]));
    shapes.push(("out_w".to_string(), vec![h, v]));
    shapes.push(("out_b".to_string(), vec![v]));
    shapes
}

/// Seeded init: every tensor uniform(-0.08, 0.08) except the output
/// projection bias, which starts at zero.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = seeding::rng(config.seed);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape) in param_shapes(config) {
        let count: usize = shape.iter().product();
        let data = if name == "out_b" {
            vec![0.0; count]
        } else {
            (0..count).map(|_| rng.gen_range(-0.08..0.08)).collect()
        };
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    let index = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        names,
        tensors,
        index,
    })
}

/// Leaf node per parameter, in parameter order.
pub struct BoundParams {
    ids: Vec<NodeId>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn node(&self, name: &str) -> NodeId {
        self.ids[self.index[name]]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Batched encoder output on a tape.
pub struct EncoderNodes {
    /// Top-layer states stacked along columns: `[batch, t_in * hidden]`.
    pub stack: NodeId,
    /// Constant additive bias `[batch, t_in]`: 0 at real positions,
    /// strongly negative at padding.
    pub attn_bias: NodeId,
    /// Per-layer state at each sample's last real position.
    pub final_state: Vec<NodeId>,
    pub t_in: usize,
}

/// One decoder step of a batched forward.
pub struct StepNodes {
    pub logits: NodeId,
    pub logprobs: NodeId,
}

impl ModelParams {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index[name];
        &mut self.tensors[i]
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let ids = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        BoundParams {
            ids,
            index: self.index.clone(),
        }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        for &id in ids {
            if id >= self.config.vocab_size {
                return Err(IclError::InvalidArgument(format!(
                    "token id {} out of range for vocab {}",
                    id, self.config.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Encode a batch of (unpadded) input sequences. A BOS column is
    /// prepended so empty inputs still produce one attendable position;
    /// shorter samples are right-padded and their states frozen at the
    /// last real token.
    pub fn encode_batch(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        inputs: &[Vec<usize>],
    ) -> Result<EncoderNodes> {
        let batch = inputs.len();
        if batch == 0 {
            return Err(IclError::InvalidArgument("empty batch".to_string()));
        }
        for ids in inputs {
            self.check_ids(ids)?;
        }
        let h = self.config.hidden_dim;
        let max_len = inputs.iter().map(Vec::len).max().unwrap();
        let t_in = max_len + 1;
        let min_len = inputs.iter().map(Vec::len).min().unwrap();

        let zero = tape.constant(Tensor::zeros(vec![batch, h]));
        let mut states = vec![zero; self.config.num_layers];
        let mut top_states = Vec::with_capacity(t_in);
        let mut bias = vec![0.0; batch * t_in];

        for t in 0..t_in {
            let mut ids = Vec::with_capacity(batch);
            let mut real = Vec::with_capacity(batch);
            for (b, input) in inputs.iter().enumerate() {
                if t == 0 {
                    ids.push(BOS_ID);
                    real.push(true);
                } else if t - 1 < input.len() {
                    ids.push(input[t - 1]);
                    real.push(true);
                } else {
                    ids.push(PAD_ID);
                    real.push(false);
                    bias[b * t_in + t] = ATTN_MASKED;
                }
            }
            let all_real = t <= min_len;
            let mut x = tape.embedding_lookup(bound.node("enc_embed"), &ids)?;
            for l in 0..self.config.num_layers {
                let wx = bound.node(&format!("enc_l{l}_wx"));
                let wh = bound.node(&format!("enc_l{l}_wh"));
                let b_ = bound.node(&format!("enc_l{l}_b"));
                let xa = tape.matmul(x, wx)?;
                let ha = tape.matmul(states[l], wh)?;
                let s = tape.add(xa, ha)?;
                let s = tape.add_row(s, b_)?;
                let cand = tape.tanh(s)?;
                let new_state = if all_real {
                    cand
                } else {
                    // Freeze padded rows at their previous state.
                    let keep: Vec<f64> = real
                        .iter()
                        .flat_map(|&r| std::iter::repeat(if r { 1.0 } else { 0.0 }).take(h))
                        .collect();
                    let inv: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
                    let keep_c = tape.constant(Tensor::new(vec![batch, h], keep)?);
                    let inv_c = tape.constant(Tensor::new(vec![batch, h], inv)?);
                    let a = tape.mul(cand, keep_c)?;
                    let b2 = tape.mul(states[l], inv_c)?;
                    tape.add(a, b2)?
                };
                states[l] = new_state;
                x = new_state;
            }
            top_states.push(states[self.config.num_layers - 1]);
        }

        let stack = tape.concat_cols(&top_states)?;
        let attn_bias = tape.constant(Tensor::new(vec![batch, t_in], bias)?);
        Ok(EncoderNodes {
            stack,
            attn_bias,
            final_state: states,
            t_in,
        })
    }

    /// One teacher-forced decoder step over the whole batch.
    pub fn decode_step_batch(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        enc: &EncoderNodes,
        states: &mut [NodeId],
        ids: &[usize],
    ) -> Result<StepNodes> {
        self.check_ids(ids)?;
        let mut x = tape.embedding_lookup(bound.node("dec_embed"), ids)?;
        for l in 0..self.config.num_layers {
            let wx = bound.node(&format!("dec_l{l}_wx"));
            let wh = bound.node(&format!("dec_l{l}_wh"));
            let b_ = bound.node(&format!("dec_l{l}_b"));
            let xa = tape.matmul(x, wx)?;
            let ha = tape.matmul(states[l], wh)?;
            let s = tape.add(xa, ha)?;
            let s = tape.add_row(s, b_)?;
            let new_state = tape.tanh(s)?;
            states[l] = new_state;
            x = new_state;
        }
        let top = states[self.config.num_layers - 1];
        let scores = tape.attn_scores(top, enc.stack, enc.t_in)?;
        let scores = tape.add(scores, enc.attn_bias)?;
        let weights = tape.softmax_rows(scores)?;
        let ctx = tape.attn_context(weights, enc.stack, enc.t_in)?;
        let cat = tape.concat_cols(&[top, ctx])?;
        let comb = tape.matmul(cat, bound.node("attn_combine_w"))?;
        let comb = tape.add_row(comb, bound.node("attn_combine_b"))?;
        let comb = tape.tanh(comb)?;
        let logits = tape.matmul(comb, bound.node("out_w"))?;
        let logits = tape.add_row(logits, bound.node("out_b"))?;
        let logprobs = tape.log_softmax_rows(logits)?;
        Ok(StepNodes { logits, logprobs })
    }

    /// Full teacher-forced forward over a batch: `dec_inputs[b]` holds the
    /// decoder input ids for sample b (BOS first, then gold shifted right);
    /// shorter samples are right-padded with PAD for the remaining steps.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        inputs: &[Vec<usize>],
        dec_inputs: &[Vec<usize>],
    ) -> Result<(EncoderNodes, Vec<StepNodes>)> {
        if inputs.len() != dec_inputs.len() {
            return Err(IclError::shape(
                "forward_batch",
                format!("{} inputs vs {} decoder inputs", inputs.len(), dec_inputs.len()),
            ));
        }
        let enc = self.encode_batch(tape, bound, inputs)?;
        let t_out = dec_inputs.iter().map(Vec::len).max().unwrap_or(0);
        let mut states = enc.final_state.clone();
        let mut steps = Vec::with_capacity(t_out);
        for t in 0..t_out {
            let ids: Vec<usize> = dec_inputs
                .iter()
                .map(|d| d.get(t).copied().unwrap_or(PAD_ID))
                .collect();
            steps.push(self.decode_step_batch(tape, bound, &enc, &mut states, &ids)?);
        }
        Ok((enc, steps))
    }

    /// Per-position log-probabilities  log P(y_t | y_<t, X)  for t = 1..n,
    /// as an `n x vocab` matrix. The decoder input at position t is BOS for
    /// t = 1 and y_{t-1} afterwards; append EOS to `output` yourself if you
    /// want the termination row as well.
    pub fn teacher_forced_logprobs(&self, input: &[usize], output: &[usize]) -> Result<Tensor> {
        if output.is_empty() {
            return Err(IclError::InvalidArgument(
                "output must have at least one token".to_string(),
            ));
        }
        self.check_ids(input)?;
        self.check_ids(output)?;
        let mut dec_in = Vec::with_capacity(output.len());
        dec_in.push(BOS_ID);
        dec_in.extend_from_slice(&output[..output.len() - 1]);

        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let (_, steps) = self.forward_batch(
            &mut tape,
            &bound,
            &[input.to_vec()],
            &[dec_in],
        )?;
        let v = self.config.vocab_size;
        let mut data = Vec::with_capacity(steps.len() * v);
        for s in &steps {
            data.extend_from_slice(tape.value(s.logprobs).row(0));
        }
        Tensor::matrix(steps.len(), v, data)
    }

    /// Log-distribution over the next token after `prefix` (empty prefix
    /// means BOS only). Equals the corresponding teacher-forced row.
    pub fn step_logprobs(&self, input: &[usize], prefix: &[usize]) -> Result<Tensor> {
        let enc = self.encode_input(input)?;
        let mut state = self.init_decoder(&enc);
        let mut row = self.decode_next(&enc, &mut state, BOS_ID)?;
        for &tok in prefix {
            row = self.decode_next(&enc, &mut state, tok)?;
        }
        Ok(row)
    }

    // ---- tape-free inference path ----

    fn rnn_step(
        &self,
        side: &str,
        x: &Tensor,
        states: &mut [Tensor],
    ) -> Result<Tensor> {
        let mut x = x.clone();
        for l in 0..self.config.num_layers {
            let wx = self.get(&format!("{side}_l{l}_wx"));
            let wh = self.get(&format!("{side}_l{l}_wh"));
            let b_ = self.get(&format!("{side}_l{l}_b"));
            let s = tensor::add(&tensor::matmul(&x, wx)?, &tensor::matmul(&states[l], wh)?)?;
            let s = tensor::add_row(&s, b_)?;
            let new = tensor::tanh(&s);
            states[l] = new.clone();
            x = new;
        }
        Ok(x)
    }

    /// Encode one input for incremental decoding (no tape, no padding).
    pub fn encode_input(&self, input: &[usize]) -> Result<EncodedInput> {
        self.check_ids(input)?;
        let h = self.config.hidden_dim;
        let mut states = vec![Tensor::zeros(vec![1, h]); self.config.num_layers];
        let mut tops = Vec::with_capacity(input.len() + 1);
        for t in 0..=input.len() {
            let id = if t == 0 { BOS_ID } else { input[t - 1] };
            let x = tensor::embedding_lookup(self.get("enc_embed"), &[id])?;
            tops.push(self.rnn_step("enc", &x, &mut states)?);
        }
        let refs: Vec<&Tensor> = tops.iter().collect();
        Ok(EncodedInput {
            stack: tensor::concat_cols(&refs)?,
            t_in: tops.len(),
            final_state: states,
        })
    }

    pub fn init_decoder(&self, enc: &EncodedInput) -> InferenceState {
        InferenceState {
            layer_states: enc.final_state.clone(),
        }
    }

    /// Advance the decoder one token and return the log-distribution over
    /// the vocabulary for the next position.
    pub fn decode_next(
        &self,
        enc: &EncodedInput,
        state: &mut InferenceState,
        token: usize,
    ) -> Result<Tensor> {
        self.check_ids(&[token])?;
        let x = tensor::embedding_lookup(self.get("dec_embed"), &[token])?;
        let top = self.rnn_step("dec", &x, &mut state.layer_states)?;
        let scores = tensor::attn_scores(&top, &enc.stack, enc.t_in)?;
        let weights = tensor::softmax_rows(&scores)?;
        let ctx = tensor::attn_context(&weights, &enc.stack, enc.t_in)?;
        let cat = tensor::concat_cols(&[&top, &ctx])?;
        let comb = tensor::matmul(&cat, self.get("attn_combine_w"))?;
        let comb = tensor::add_row(&comb, self.get("attn_combine_b"))?;
        let comb = tensor::tanh(&comb);
        let logits = tensor::matmul(&comb, self.get("out_w"))?;
        let logits = tensor::add_row(&logits, self.get("out_b"))?;
        let logprobs = tensor::log_softmax_rows(&logits)?;
        logprobs.check_finite("decode_next")?;
        Ok(Tensor::vector(logprobs.row(0).to_vec()))
    }
}

/// Encoder output for the tape-free path.
pub struct EncodedInput {
    stack: Tensor,
    t_in: usize,
    final_state: Vec<Tensor>,
}

/// Decoder recurrence state for incremental decoding.
#[derive(Clone)]
pub struct InferenceState {
    layer_states: Vec<Tensor>,
}

// ---- checkpoint format ----

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    model_config: ModelConfig,
    vocab: Vocabulary,
    tensors: Vec<TensorEntry>,
}

/// Write a checkpoint: a one-line format tag, a length-prefixed JSON
/// manifest (config, vocabulary, tensor table), then raw little-endian
/// f64 payload.
pub fn save_checkpoint(params: &ModelParams, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (name, tensor) in params.names.iter().zip(&params.tensors) {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        offset += (tensor.len() * 8) as u64;
    }
    let manifest = Manifest {
        format: CKPT_FORMAT.to_string(),
        model_config: params.config.clone(),
        vocab: vocab.clone(),
        tensors: entries,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(manifest_bytes.len() + offset as usize + 32);
    out.extend_from_slice(CKPT_FORMAT.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for tensor in &params.tensors {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, Vocabulary)> {
    let bytes = fs::read(path)?;
    let tag_len = CKPT_FORMAT.len() + 1;
    if bytes.len() < tag_len + 8 || &bytes[..CKPT_FORMAT.len()] != CKPT_FORMAT.as_bytes() {
        return Err(IclError::Checkpoint(format!(
            "not a {} checkpoint",
            CKPT_FORMAT
        )));
    }
    let mut len_buf = [0u8; 8];
    len_buf.copy_from_slice(&bytes[tag_len..tag_len + 8]);
    let manifest_len = u64::from_le_bytes(len_buf) as usize;
    let manifest_start = tag_len + 8;
    let payload_start = manifest_start + manifest_len;
    if bytes.len() < payload_start {
        return Err(IclError::Checkpoint("truncated manifest".to_string()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[manifest_start..payload_start])?;
    if manifest.format != CKPT_FORMAT {
        return Err(IclError::Checkpoint(format!(
            "unsupported format tag {:?}",
            manifest.format
        )));
    }
    let payload = &bytes[payload_start..];
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for entry in &manifest.tensors {
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + count * 8;
        if end > payload.len() {
            return Err(IclError::Checkpoint(format!(
                "tensor {} payload out of range",
                entry.name
            )));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        names.push(entry.name.clone());
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
    }
    let config = manifest.model_config;
    config.validate()?;
    let expected: Vec<String> = param_shapes(&config).into_iter().map(|(n, _)| n).collect();
    if names != expected {
        return Err(IclError::Checkpoint(
            "tensor table does not match the model layout".to_string(),
        ));
    }
    let index = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let mut vocab = manifest.vocab;
    vocab.rebuild_index();
    Ok((
        ModelParams {
            config,
            names,
            tensors,
            index,
        },
        vocab,
    ))
}

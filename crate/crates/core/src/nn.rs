//! The keystroke classifier: a small convolution + relative self-attention
//! network over 1x64x64 log-mel images, plus checkpoint serialization.
//!
//! Layout: stem conv, two depthwise-separable conv stages, two global
//! relative-attention stages (each entered through a 2x2 average-pool +
//! pointwise projection so every stage halves the spatial grid), global
//! average pool, linear head. All normalization is layer norm over channels.

use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{no_grad, RelBiasIndex, Scalar, Tensor, TensorError};
use crate::util::rng_for;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub attention_heads: usize,
    pub rel_bias_clamp: i64,
    pub n_classes: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 1,
            input_size: 64,
            stem_channels: 16,
            stage_channels: [32, 64, 96, 128],
            attention_heads: 4,
            rel_bias_clamp: 7,
            n_classes: 36,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.n_classes < 2 {
            return Err(TensorError::Config("n_classes must be >= 2".into()));
        }
        if self.input_size % 16 != 0 {
            return Err(TensorError::Config(
                "input_size must be divisible by 16 (four 2x downsamples)".into(),
            ));
        }
        for &c in &self.stage_channels[2..] {
            if c % self.attention_heads != 0 {
                return Err(TensorError::Config(format!(
                    "attention channels {c} not divisible by {} heads",
                    self.attention_heads
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn kaiming_uniform<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, n: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| T::from_f64c(rng.random_range(-bound..bound)))
        .collect()
}

/// Layer norm over the channel axis of `[B, C, H, W]`.
fn ln_chw<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Tensor<T> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    x.chw_to_seq()
        .reshape(&[b * h * w, c])
        .layer_norm_rows(gamma, beta, eps)
        .reshape(&[b, h * w, c])
        .seq_to_chw(h, w)
}

/// Depthwise 3x3 (stride 2) -> pointwise 1x1 -> channel layer norm -> GELU.
struct ConvStage<T: Scalar> {
    depthwise: Tensor<T>,
    pointwise: Tensor<T>,
    gamma: Tensor<T>,
    beta: Tensor<T>,
    in_channels: usize,
    ln_eps: f64,
}

impl<T: Scalar> ConvStage<T> {
    fn init<R: Rng>(rng: &mut R, c_in: usize, c_out: usize, ln_eps: f64) -> Self {
        ConvStage {
            depthwise: Tensor::param(&[c_in, 3, 3], kaiming_uniform(rng, 9, c_in * 9)),
            pointwise: Tensor::param(&[c_out, c_in], kaiming_uniform(rng, c_in, c_out * c_in)),
            gamma: Tensor::param(&[c_out], vec![T::one(); c_out]),
            beta: Tensor::param(&[c_out], vec![T::zero(); c_out]),
            in_channels: c_in,
            ln_eps,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if x.shape()[1] != self.in_channels {
            return Err(TensorError::Shape(format!(
                "conv stage expects {} channels, got {}",
                self.in_channels,
                x.shape()[1]
            )));
        }
        let y = x
            .depthwise_conv2d(&self.depthwise, 2, 1)
            .conv1x1(&self.pointwise);
        Ok(ln_chw(&y, &self.gamma, &self.beta, self.ln_eps).gelu())
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.depthwise"), self.depthwise.clone()));
        out.push((format!("{prefix}.pointwise"), self.pointwise.clone()));
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Downsample projection followed by multi-head relative self-attention with
/// residual connection and layer norm.
struct AttentionStage<T: Scalar> {
    proj: Tensor<T>,
    wq: Tensor<T>,
    wk: Tensor<T>,
    wv: Tensor<T>,
    wo: Tensor<T>,
    bias_table: Tensor<T>,
    gamma: Tensor<T>,
    beta: Tensor<T>,
    index: Rc<RelBiasIndex>,
    clamp: i64,
    heads: usize,
    in_channels: usize,
    grid: usize,
    ln_eps: f64,
}

impl<T: Scalar> AttentionStage<T> {
    fn init<R: Rng>(
        rng: &mut R,
        c_in: usize,
        c: usize,
        heads: usize,
        grid: usize,
        clamp: i64,
        ln_eps: f64,
    ) -> Self {
        let table_len = ((2 * clamp + 1) * (2 * clamp + 1)) as usize;
        AttentionStage {
            proj: Tensor::param(&[c, c_in], kaiming_uniform(rng, c_in, c * c_in)),
            wq: Tensor::param(&[c, c], kaiming_uniform(rng, c, c * c)),
            wk: Tensor::param(&[c, c], kaiming_uniform(rng, c, c * c)),
            wv: Tensor::param(&[c, c], kaiming_uniform(rng, c, c * c)),
            wo: Tensor::param(&[c, c], kaiming_uniform(rng, c, c * c)),
            bias_table: Tensor::param(&[heads, table_len], vec![T::zero(); heads * table_len]),
            gamma: Tensor::param(&[c], vec![T::one(); c]),
            beta: Tensor::param(&[c], vec![T::zero(); c]),
            index: Rc::new(RelBiasIndex::for_grid(grid, grid, clamp)),
            clamp,
            heads,
            in_channels: c_in,
            grid,
            ln_eps,
        }
    }

    /// Index map for a `(h, w)` grid: the stage's cached one when the grid
    /// matches, otherwise built on the fly (test/diagnostic paths).
    fn index_for(&self, h: usize, w: usize) -> Rc<RelBiasIndex> {
        if h == self.grid && w == self.grid {
            Rc::clone(&self.index)
        } else {
            Rc::new(RelBiasIndex::for_grid(h, w, self.clamp))
        }
    }

    /// Attention scores after softmax, `[B*heads, L, L]`; diagnostic.
    fn attention_probs(&self, seq: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
        let (b, l, c) = (seq.shape()[0], seq.shape()[1], seq.shape()[2]);
        assert_eq!(l, h * w, "sequence length does not match grid");
        let d = c / self.heads;
        let flat = seq.reshape(&[b * l, c]);
        let q = flat.matmul(&self.wq).reshape(&[b, l, c]).split_heads(self.heads);
        let k = flat.matmul(&self.wk).reshape(&[b, l, c]).split_heads(self.heads);
        q.bmm_nt(&k)
            .scale(1.0 / (d as f64).sqrt())
            .add_rel_bias(&self.bias_table, &self.index_for(h, w))
            .softmax_last()
    }

    /// Shape-preserving attention block on a `[B, L, C]` sequence laid out
    /// as an `h x w` grid: softmax(QK^T/sqrt(d) + bias) V per head, heads
    /// concatenated, output projection, residual add, layer norm.
    fn attention_block(&self, seq: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
        let (b, l, c) = (seq.shape()[0], seq.shape()[1], seq.shape()[2]);
        let flat = seq.reshape(&[b * l, c]);
        let v = flat.matmul(&self.wv).reshape(&[b, l, c]).split_heads(self.heads);
        let probs = self.attention_probs(seq, h, w);
        let ctx = probs.bmm_nn(&v).merge_heads(self.heads);
        let projected = ctx
            .reshape(&[b * l, c])
            .matmul(&self.wo)
            .reshape(&[b, l, c]);
        seq.add(&projected)
            .reshape(&[b * l, c])
            .layer_norm_rows(&self.gamma, &self.beta, self.ln_eps)
            .reshape(&[b, l, c])
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if x.shape()[1] != self.in_channels {
            return Err(TensorError::Shape(format!(
                "attention stage expects {} channels, got {}",
                self.in_channels,
                x.shape()[1]
            )));
        }
        let down = x.avg_pool_2x2().conv1x1(&self.proj);
        let (h, w) = (down.shape()[2], down.shape()[3]);
        debug_assert_eq!(h, self.grid);
        let seq = down.chw_to_seq();
        Ok(self.attention_block(&seq, h, w).seq_to_chw(h, w))
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.proj"), self.proj.clone()));
        out.push((format!("{prefix}.wq"), self.wq.clone()));
        out.push((format!("{prefix}.wk"), self.wk.clone()));
        out.push((format!("{prefix}.wv"), self.wv.clone()));
        out.push((format!("{prefix}.wo"), self.wo.clone()));
        out.push((format!("{prefix}.bias_table"), self.bias_table.clone()));
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// The full classifier.
pub struct Classifier<T: Scalar> {
    pub config: ModelConfig,
    stem_conv: Tensor<T>,
    stem_gamma: Tensor<T>,
    stem_beta: Tensor<T>,
    conv1: ConvStage<T>,
    conv2: ConvStage<T>,
    attn1: AttentionStage<T>,
    attn2: AttentionStage<T>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
    mode: Mode,
}

impl<T: Scalar> Classifier<T> {
    /// Build a model with seed-deterministic Kaiming-uniform initialization.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, TensorError> {
        config.validate()?;
        let mut rng = rng_for(&[seed, 0x6d6f_64656c]); // "model" stream
        let cs = config.stage_channels;
        let stem = config.stem_channels;
        let cin = config.input_channels;
        let s = config.input_size;

        let stem_fan = cin * 9;
        Ok(Classifier {
            config: config.clone(),
            stem_conv: Tensor::param(
                &[stem, cin, 3, 3],
                kaiming_uniform(&mut rng, stem_fan, stem * cin * 9),
            ),
            stem_gamma: Tensor::param(&[stem], vec![T::one(); stem]),
            stem_beta: Tensor::param(&[stem], vec![T::zero(); stem]),
            conv1: ConvStage::init(&mut rng, stem, cs[0], config.ln_eps),
            conv2: ConvStage::init(&mut rng, cs[0], cs[1], config.ln_eps),
            attn1: AttentionStage::init(
                &mut rng,
                cs[1],
                cs[2],
                config.attention_heads,
                s / 8,
                config.rel_bias_clamp,
                config.ln_eps,
            ),
            attn2: AttentionStage::init(
                &mut rng,
                cs[2],
                cs[3],
                config.attention_heads,
                s / 16,
                config.rel_bias_clamp,
                config.ln_eps,
            ),
            head_w: Tensor::param(
                &[cs[3], config.n_classes],
                kaiming_uniform(&mut rng, cs[3], cs[3] * config.n_classes),
            ),
            head_b: Tensor::param(&[config.n_classes], vec![T::zero(); config.n_classes]),
            mode: Mode::Train,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Ordered parameter list; the order is the checkpoint and optimizer
    /// contract.
    pub fn parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        out.push(("stem.conv".to_string(), self.stem_conv.clone()));
        out.push(("stem.gamma".to_string(), self.stem_gamma.clone()));
        out.push(("stem.beta".to_string(), self.stem_beta.clone()));
        self.conv1.params("conv1", &mut out);
        self.conv2.params("conv2", &mut out);
        self.attn1.params("attn1", &mut out);
        self.attn2.params("attn2", &mut out);
        out.push(("head.weight".to_string(), self.head_w.clone()));
        out.push(("head.bias".to_string(), self.head_b.clone()));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, p)| p.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, p) in self.parameters() {
            p.zero_grad();
        }
    }

    fn forward_inner(&self, batch: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let expect = [
            batch.shape().first().copied().unwrap_or(0),
            self.config.input_channels,
            self.config.input_size,
            self.config.input_size,
        ];
        if batch.shape().len() != 4 || batch.shape()[1..] != expect[1..] {
            return Err(TensorError::Shape(format!(
                "expected [B, {}, {}, {}], got {:?}",
                expect[1],
                expect[2],
                expect[3],
                batch.shape()
            )));
        }
        let stem = batch.conv2d(&self.stem_conv, 1, 1);
        let stem = ln_chw(&stem, &self.stem_gamma, &self.stem_beta, self.config.ln_eps).gelu();
        let x = self.conv1.forward(&stem)?;
        let x = self.conv2.forward(&x)?;
        let x = self.attn1.forward(&x)?;
        let x = self.attn2.forward(&x)?;
        let pooled = x.global_avg_pool();
        Ok(pooled.matmul(&self.head_w).add_row_bias(&self.head_b))
    }

    /// Logits `[B, n_classes]`. In eval mode no tape is recorded.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        match self.mode {
            Mode::Train => self.forward_inner(batch),
            Mode::Eval => no_grad(|| self.forward_inner(batch)),
        }
    }

    /// Top-k class indices per sample, by descending logit; ties broken
    /// toward the lower class index.
    pub fn predict_topk(&self, batch: &Tensor<T>, k: usize) -> Result<Vec<Vec<usize>>, TensorError> {
        if k == 0 || k > self.config.n_classes {
            return Err(TensorError::Config(format!(
                "top-k must be in [1, {}], got {k}",
                self.config.n_classes
            )));
        }
        let logits = no_grad(|| self.forward_inner(batch))?;
        Ok(rank_logits(&logits.values(), self.config.n_classes, k))
    }

    /// Bare attention block on a `[B, L, C]` sequence of the first attention
    /// stage's width, laid out as an `h x w` grid; exposed for contract
    /// tests.
    pub fn attention_block_stage1(&self, seq: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
        self.attn1.attention_block(seq, h, w)
    }

    pub fn attention_probs_stage1(&self, seq: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
        self.attn1.attention_probs(seq, h, w)
    }

    /// Zero the output projections of both attention stages (test hook for
    /// the residual-identity property).
    pub fn zero_attention_output_proj(&self) {
        for t in [&self.attn1.wo, &self.attn2.wo] {
            t.set_values(&vec![T::zero(); t.numel()]);
        }
    }

    pub fn zero_head(&self) {
        self.head_w.set_values(&vec![T::zero(); self.head_w.numel()]);
        self.head_b.set_values(&vec![T::zero(); self.head_b.numel()]);
    }
}

/// Rank the classes of each logit row, descending, ties toward lower index.
pub fn rank_logits<T: Scalar>(logits: &[T], n_classes: usize, k: usize) -> Vec<Vec<usize>> {
    logits
        .chunks_exact(n_classes)
        .map(|row| {
            let mut idx: Vec<usize> = (0..n_classes).collect();
            idx.sort_by(|&a, &b| {
                row[b]
                    .partial_cmp(&row[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            idx.truncate(k);
            idx
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

/// Serialize a model: `u64` little-endian header length, JSON header
/// (config + parameter manifest), then all parameters as one little-endian
/// float-32 blob.
pub fn checkpoint_bytes<T: Scalar>(model: &Classifier<T>) -> Vec<u8> {
    let params = model.parameters();
    let mut entries = Vec::with_capacity(params.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, p) in &params {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: p.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in p.values() {
            blob.extend_from_slice(&(v.to_f64c() as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&CheckpointHeader {
        config: model.config.clone(),
        params: entries,
    })
    .expect("header serializes");

    let mut out = Vec::with_capacity(8 + header.len() + blob.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    out
}

pub fn save_checkpoint<T: Scalar>(
    model: &Classifier<T>,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(model))?;
    Ok(())
}

/// Load a checkpoint, validating the manifest against the rebuilt
/// architecture shape by shape.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Classifier<T>, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Classifier<T>, CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Malformed("truncated length prefix".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let header_end = 8 + header_len;
    if bytes.len() < header_end {
        return Err(CheckpointError::Malformed("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..header_end])?;
    let blob = &bytes[header_end..];

    let mut model = Classifier::<T>::init(&header.config, 0)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    model.set_mode(Mode::Eval);

    let params = model.parameters();
    if params.len() != header.params.len() {
        return Err(CheckpointError::Malformed(format!(
            "expected {} parameters, manifest has {}",
            params.len(),
            header.params.len()
        )));
    }
    for ((name, tensor), entry) in params.iter().zip(&header.params) {
        if name != &entry.name {
            return Err(CheckpointError::Malformed(format!(
                "parameter order mismatch: {name} vs {}",
                entry.name
            )));
        }
        if tensor.shape() != entry.shape.as_slice() {
            return Err(CheckpointError::Malformed(format!(
                "shape mismatch for {name}: {:?} vs {:?}",
                tensor.shape(),
                entry.shape
            )));
        }
        let start = entry.offset as usize;
        let end = start + tensor.numel() * 4;
        if end > blob.len() {
            return Err(CheckpointError::Malformed(format!(
                "blob overrun reading {name}"
            )));
        }
        let values: Vec<T> = blob[start..end]
            .chunks_exact(4)
            .map(|c| T::from_f64c(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        tensor.set_values(&values);
    }
    Ok(model)
}

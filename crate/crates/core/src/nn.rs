//! A small decoder-only transformer with explicit forward and backward passes.
//!
//! Architecture: token + learned absolute position embeddings, `n_layers`
//! pre-norm blocks (causal multi-head attention, GELU MLP with 4x expansion),
//! a final LayerNorm whose output is the "final hidden layer", and an untied
//! vocabulary head. Everything is generic over [`Scalar`] so training can run
//! in `f32` while gradient checks run the identical code in `f64`.
//!
//! Sequences in a batch are processed independently (no padding); losses are
//! averaged over supervised positions across the whole batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamSet, Scalar, Tensor};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { vocab_size: 64, context_length: 16, embed_dim: 32, n_layers: 2, n_heads: 4, seed: 0 }
    }
}

impl ModelConfig {
    /// Configuration used for gradient checks.
    pub fn micro() -> Self {
        Self { vocab_size: 16, context_length: 8, embed_dim: 16, n_layers: 1, n_heads: 2, seed: 7 }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("context_length", self.context_length),
            ("embed_dim", self.embed_dim),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.embed_dim
    }

    /// Tensor names and shapes of the model, in name order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (v, n, d, f) = (self.vocab_size, self.context_length, self.embed_dim, self.mlp_dim());
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![n, d]),
            ("ln_f.gain".to_string(), vec![d]),
            ("ln_f.bias".to_string(), vec![d]),
            ("head.weight".to_string(), vec![d, v]),
            ("head.bias".to_string(), vec![v]),
        ];
        for l in 0..self.n_layers {
            for (suffix, shape) in [
                ("ln1.gain", vec![d]),
                ("ln1.bias", vec![d]),
                ("attn.w_qkv", vec![d, 3 * d]),
                ("attn.b_qkv", vec![3 * d]),
                ("attn.w_out", vec![d, d]),
                ("attn.b_out", vec![d]),
                ("ln2.gain", vec![d]),
                ("ln2.bias", vec![d]),
                ("mlp.w_in", vec![d, f]),
                ("mlp.b_in", vec![f]),
                ("mlp.w_out", vec![f, d]),
                ("mlp.b_out", vec![d]),
            ] {
                out.push((format!("blocks.{l}.{suffix}"), shape));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

/// Seeded initialization: weights `N(0, 0.02²)` drawn from ChaCha8 in name
/// order, zero biases, unit LayerNorm gains.
pub fn init_params<T: Scalar>(cfg: &ModelConfig) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut params = ParamSet::new();
    for (name, shape) in cfg.param_shapes() {
        let numel: usize = shape.iter().product();
        let data: Vec<T> = if name.ends_with(".gain") {
            vec![T::one(); numel]
        } else if shape.len() == 1 {
            vec![T::zero(); numel]
        } else {
            (0..numel).map(|_| T::of(normal.sample(&mut rng))).collect()
        };
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

/// One training or evaluation sequence. `mask[t]` says whether predicting
/// `targets[t]` from `inputs[..=t]` contributes to the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Sequence {
    /// Prompt tokens are loss-masked; only response tokens are supervised.
    pub fn from_prompt_response(prompt: &[u32], response: &[u32]) -> Self {
        let full: Vec<u32> = prompt.iter().chain(response).copied().collect();
        let len = full.len().saturating_sub(1);
        let inputs = full[..len].to_vec();
        let targets = full[1..].to_vec();
        let mask = (0..len).map(|t| t + 1 >= prompt.len()).collect();
        Self { inputs, targets, mask }
    }

    /// An unlabeled sequence: every token is input, nothing is supervised.
    pub fn unlabeled(tokens: &[u32]) -> Self {
        Self { inputs: tokens.to_vec(), targets: vec![0; tokens.len()], mask: vec![false; tokens.len()] }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub sequences: Vec<Sequence>,
}

impl Batch {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        Self { sequences }
    }

    pub fn supervised_positions(&self) -> usize {
        self.sequences.iter().map(|s| s.mask.iter().filter(|&&m| m).count()).sum()
    }
}

/// Borrowed views of one block's weights (or owned gradient buffers).
struct Block<S> {
    ln1_g: S,
    ln1_b: S,
    w_qkv: S,
    b_qkv: S,
    w_out: S,
    b_out: S,
    ln2_g: S,
    ln2_b: S,
    w_in: S,
    b_in: S,
    w_mlp_out: S,
    b_mlp_out: S,
}

struct Net<S> {
    tok_emb: S,
    pos_emb: S,
    blocks: Vec<Block<S>>,
    lnf_g: S,
    lnf_b: S,
    head_w: S,
    head_b: S,
}

macro_rules! block_fields {
    ($m:ident) => {
        $m!(ln1_g, "ln1.gain");
        $m!(ln1_b, "ln1.bias");
        $m!(w_qkv, "attn.w_qkv");
        $m!(b_qkv, "attn.b_qkv");
        $m!(w_out, "attn.w_out");
        $m!(b_out, "attn.b_out");
        $m!(ln2_g, "ln2.gain");
        $m!(ln2_b, "ln2.bias");
        $m!(w_in, "mlp.w_in");
        $m!(b_in, "mlp.b_in");
        $m!(w_mlp_out, "mlp.w_out");
        $m!(b_mlp_out, "mlp.b_out");
    };
}

impl<'a, T: Scalar> Net<&'a [T]> {
    fn view(cfg: &ModelConfig, params: &'a ParamSet<T>) -> Result<Self> {
        let get = |name: &str| params.require(name).map(Tensor::data);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| get(&format!("blocks.{l}.{s}"));
            blocks.push(Block {
                ln1_g: p("ln1.gain")?,
                ln1_b: p("ln1.bias")?,
                w_qkv: p("attn.w_qkv")?,
                b_qkv: p("attn.b_qkv")?,
                w_out: p("attn.w_out")?,
                b_out: p("attn.b_out")?,
                ln2_g: p("ln2.gain")?,
                ln2_b: p("ln2.bias")?,
                w_in: p("mlp.w_in")?,
                b_in: p("mlp.b_in")?,
                w_mlp_out: p("mlp.w_out")?,
                b_mlp_out: p("mlp.b_out")?,
            });
        }
        Ok(Net {
            tok_emb: get("tok_emb")?,
            pos_emb: get("pos_emb")?,
            blocks,
            lnf_g: get("ln_f.gain")?,
            lnf_b: get("ln_f.bias")?,
            head_w: get("head.weight")?,
            head_b: get("head.bias")?,
        })
    }
}

impl<T: Scalar> Net<Vec<T>> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (v, n, d, f) = (cfg.vocab_size, cfg.context_length, cfg.embed_dim, cfg.mlp_dim());
        let z = |len: usize| vec![T::zero(); len];
        Net {
            tok_emb: z(v * d),
            pos_emb: z(n * d),
            blocks: (0..cfg.n_layers)
                .map(|_| Block {
                    ln1_g: z(d),
                    ln1_b: z(d),
                    w_qkv: z(d * 3 * d),
                    b_qkv: z(3 * d),
                    w_out: z(d * d),
                    b_out: z(d),
                    ln2_g: z(d),
                    ln2_b: z(d),
                    w_in: z(d * f),
                    b_in: z(f),
                    w_mlp_out: z(f * d),
                    b_mlp_out: z(d),
                })
                .collect(),
            lnf_g: z(d),
            lnf_b: z(d),
            head_w: z(d * v),
            head_b: z(v),
        }
    }

    fn into_params(self, cfg: &ModelConfig) -> ParamSet<T> {
        let shapes: std::collections::HashMap<String, Vec<usize>> = cfg.param_shapes().into_iter().collect();
        let mut out = ParamSet::new();
        let mut put = |name: String, data: Vec<T>| {
            let shape = shapes[&name].clone();
            out.insert(name, Tensor::new(shape, data).expect("gradient buffer sized from config"));
        };
        put("tok_emb".into(), self.tok_emb);
        put("pos_emb".into(), self.pos_emb);
        put("ln_f.gain".into(), self.lnf_g);
        put("ln_f.bias".into(), self.lnf_b);
        put("head.weight".into(), self.head_w);
        put("head.bias".into(), self.head_b);
        for (l, b) in self.blocks.into_iter().enumerate() {
            macro_rules! emit {
                ($field:ident, $suffix:expr) => {
                    put(format!("blocks.{l}.{}", $suffix), b.$field);
                };
            }
            block_fields!(emit);
        }
        out
    }
}

fn check_shapes<T: Scalar>(cfg: &ModelConfig, params: &ParamSet<T>) -> Result<()> {
    let expected = cfg.param_shapes();
    if expected.len() != params.len() {
        return Err(Error::Incompatible {
            name: "<model>".into(),
            detail: format!("expected {} tensors, found {}", expected.len(), params.len()),
        });
    }
    for (name, shape) in expected {
        let t = params.require(&name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Incompatible {
                name,
                detail: format!("expected shape {shape:?}, found {:?}", t.shape()),
            });
        }
    }
    Ok(())
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct BlockCache<T> {
    ln1: LnCache<T>,
    a: Vec<T>,
    qkv: Vec<T>,
    /// `[head][query][key]`, zero above the diagonal.
    probs: Vec<T>,
    ctx: Vec<T>,
    ln2: LnCache<T>,
    m: Vec<T>,
    pre_act: Vec<T>,
    act: Vec<T>,
}

/// Forward results for one sequence, with the activations backprop needs.
pub struct SequenceTrace<T> {
    tokens: Vec<u32>,
    blocks: Vec<BlockCache<T>>,
    lnf: LnCache<T>,
    hidden: Vec<T>,
    logits: Vec<T>,
}

impl<T: Scalar> SequenceTrace<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Row-major `len × vocab_size` logits.
    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    /// Row-major `len × embed_dim` output of the final hidden layer.
    pub fn final_hidden(&self) -> &[T] {
        &self.hidden
    }
}

/// Forward traces for every sequence of a batch.
pub struct ForwardTrace<T> {
    pub sequences: Vec<SequenceTrace<T>>,
}

/// A parameter set bound to its configuration.
pub struct Model<'a, T: Scalar> {
    cfg: &'a ModelConfig,
    params: &'a ParamSet<T>,
    net: Net<&'a [T]>,
}

impl<'a, T: Scalar> Model<'a, T> {
    pub fn new(cfg: &'a ModelConfig, params: &'a ParamSet<T>) -> Result<Self> {
        cfg.validate()?;
        check_shapes(cfg, params)?;
        Ok(Self { cfg, params, net: Net::view(cfg, params)? })
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        self.params
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if tokens.len() > self.cfg.context_length {
            return Err(Error::SequenceTooLong { len: tokens.len(), max: self.cfg.context_length });
        }
        if let Some(&id) = tokens.iter().find(|&&id| id as usize >= self.cfg.vocab_size) {
            return Err(Error::TokenOutOfRange { id, vocab: self.cfg.vocab_size });
        }
        Ok(())
    }

    pub fn forward_tokens(&self, tokens: &[u32]) -> Result<SequenceTrace<T>> {
        self.check_tokens(tokens)?;
        let cfg = self.cfg;
        let (len, d, v, f) = (tokens.len(), cfg.embed_dim, cfg.vocab_size, cfg.mlp_dim());
        let net = &self.net;

        let mut x = vec![T::zero(); len * d];
        for (t, &id) in tokens.iter().enumerate() {
            let te = &net.tok_emb[id as usize * d..(id as usize + 1) * d];
            let pe = &net.pos_emb[t * d..(t + 1) * d];
            for ((o, &a), &b) in x[t * d..(t + 1) * d].iter_mut().zip(te).zip(pe) {
                *o = a + b;
            }
        }

        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for w in &net.blocks {
            let (a, ln1) = layer_norm(&x, w.ln1_g, w.ln1_b, d);
            let mut qkv = vec![T::zero(); len * 3 * d];
            linear(&a, len, d, w.w_qkv, Some(w.b_qkv), 3 * d, &mut qkv);
            let (ctx, probs) = attention(&qkv, len, cfg.n_heads, cfg.head_dim());
            let mut attn_out = vec![T::zero(); len * d];
            linear(&ctx, len, d, w.w_out, Some(w.b_out), d, &mut attn_out);
            for (xi, &o) in x.iter_mut().zip(&attn_out) {
                *xi += o;
            }

            let (m, ln2) = layer_norm(&x, w.ln2_g, w.ln2_b, d);
            let mut pre_act = vec![T::zero(); len * f];
            linear(&m, len, d, w.w_in, Some(w.b_in), f, &mut pre_act);
            let act: Vec<T> = pre_act.iter().map(|&z| gelu(z)).collect();
            let mut mlp_out = vec![T::zero(); len * d];
            linear(&act, len, f, w.w_mlp_out, Some(w.b_mlp_out), d, &mut mlp_out);
            for (xi, &o) in x.iter_mut().zip(&mlp_out) {
                *xi += o;
            }
            blocks.push(BlockCache { ln1, a, qkv, probs, ctx, ln2, m, pre_act, act });
        }

        let (hidden, lnf) = layer_norm(&x, net.lnf_g, net.lnf_b, d);
        let mut logits = vec![T::zero(); len * v];
        linear(&hidden, len, d, net.head_w, Some(net.head_b), v, &mut logits);

        Ok(SequenceTrace { tokens: tokens.to_vec(), blocks, lnf, hidden, logits })
    }

    pub fn forward(&self, batch: &Batch) -> Result<ForwardTrace<T>> {
        if batch.sequences.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let sequences = batch.sequences.iter().map(|s| self.forward_tokens(&s.inputs)).collect::<Result<Vec<_>>>()?;
        Ok(ForwardTrace { sequences })
    }

    /// Final-hidden-layer activations only, without keeping the trace.
    pub fn final_hidden(&self, tokens: &[u32]) -> Result<Vec<T>> {
        Ok(self.forward_tokens(tokens)?.hidden)
    }

    /// Backpropagates upstream gradients on the logits and/or the final hidden
    /// layer of one sequence, accumulating into `grads`. With no logit
    /// gradient the vocabulary head receives exactly zero.
    pub fn backward_sequence(
        &self,
        trace: &SequenceTrace<T>,
        dlogits: Option<&[T]>,
        dhidden: Option<&[T]>,
        grads: &mut Gradients<T>,
    ) {
        let cfg = self.cfg;
        let (len, d, v, f) = (trace.len(), cfg.embed_dim, cfg.vocab_size, cfg.mlp_dim());
        let net = &self.net;
        let g = &mut grads.net;

        let mut dh = match dhidden {
            Some(dh) => dh.to_vec(),
            None => vec![T::zero(); len * d],
        };
        if let Some(dl) = dlogits {
            linear_backward(
                dl,
                &trace.hidden,
                len,
                d,
                net.head_w,
                v,
                Some(&mut dh),
                &mut g.head_w,
                Some(&mut g.head_b),
            );
        }
        let mut dx = layer_norm_backward(&dh, &trace.lnf, net.lnf_g, d, &mut g.lnf_g, &mut g.lnf_b);

        for (l, cache) in trace.blocks.iter().enumerate().rev() {
            let w = &net.blocks[l];
            let gb = &mut g.blocks[l];

            // MLP residual branch
            let mut dact = vec![T::zero(); len * f];
            linear_backward(
                &dx,
                &cache.act,
                len,
                f,
                w.w_mlp_out,
                d,
                Some(&mut dact),
                &mut gb.w_mlp_out,
                Some(&mut gb.b_mlp_out),
            );
            let dpre: Vec<T> = dact.iter().zip(&cache.pre_act).map(|(&da, &z)| da * gelu_grad(z)).collect();
            let mut dm = vec![T::zero(); len * d];
            linear_backward(&dpre, &cache.m, len, d, w.w_in, f, Some(&mut dm), &mut gb.w_in, Some(&mut gb.b_in));
            let dx_ln2 = layer_norm_backward(&dm, &cache.ln2, w.ln2_g, d, &mut gb.ln2_g, &mut gb.ln2_b);
            for (a, b) in dx.iter_mut().zip(&dx_ln2) {
                *a += *b;
            }

            // attention residual branch
            let mut dctx = vec![T::zero(); len * d];
            linear_backward(&dx, &cache.ctx, len, d, w.w_out, d, Some(&mut dctx), &mut gb.w_out, Some(&mut gb.b_out));
            let dqkv = attention_backward(&dctx, &cache.qkv, &cache.probs, len, cfg.n_heads, cfg.head_dim());
            let mut da = vec![T::zero(); len * d];
            linear_backward(&dqkv, &cache.a, len, d, w.w_qkv, 3 * d, Some(&mut da), &mut gb.w_qkv, Some(&mut gb.b_qkv));
            let dx_ln1 = layer_norm_backward(&da, &cache.ln1, w.ln1_g, d, &mut gb.ln1_g, &mut gb.ln1_b);
            for (a, b) in dx.iter_mut().zip(&dx_ln1) {
                *a += *b;
            }
        }

        for (t, &id) in trace.tokens.iter().enumerate() {
            let row = &dx[t * d..(t + 1) * d];
            let te = &mut g.tok_emb[id as usize * d..(id as usize + 1) * d];
            for (o, &x) in te.iter_mut().zip(row) {
                *o += x;
            }
            let pe = &mut g.pos_emb[t * d..(t + 1) * d];
            for (o, &x) in pe.iter_mut().zip(row) {
                *o += x;
            }
        }
    }

    /// Greedy decoding: appends the argmax token until `eos` is produced,
    /// `max_new` tokens were generated, or the context is full. The returned
    /// tokens include `eos` when it was generated.
    pub fn decode_greedy(&self, prompt: &[u32], eos: u32, max_new: usize) -> Result<Vec<u32>> {
        self.check_tokens(prompt)?;
        let v = self.cfg.vocab_size;
        let mut seq = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < max_new && seq.len() < self.cfg.context_length + 1 {
            let trace = self.forward_tokens(&seq)?;
            let last = &trace.logits[(seq.len() - 1) * v..seq.len() * v];
            let next = argmax(last) as u32;
            out.push(next);
            if next == eos || seq.len() == self.cfg.context_length {
                break;
            }
            seq.push(next);
        }
        Ok(out)
    }
}

/// Gradient accumulator shaped like the model.
pub struct Gradients<T> {
    net: Net<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self { net: Net::zeros(cfg) }
    }

    pub fn into_params(self, cfg: &ModelConfig) -> ParamSet<T> {
        self.net.into_params(cfg)
    }
}

pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of one row.
pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `ln Σ exp(row)`.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

/// Mean negative log-likelihood over supervised positions of the batch.
pub fn loss_ce<T: Scalar>(trace: &ForwardTrace<T>, batch: &Batch) -> Result<T> {
    let count = batch.supervised_positions();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mut total = T::zero();
    for (st, seq) in trace.sequences.iter().zip(&batch.sequences) {
        let v = st.logits.len() / st.len();
        for (t, (&target, &m)) in seq.targets.iter().zip(&seq.mask).enumerate() {
            if m {
                let row = &st.logits[t * v..(t + 1) * v];
                total += log_sum_exp(row) - row[target as usize];
            }
        }
    }
    Ok(total / T::of(count as f64))
}

fn validate_targets(cfg: &ModelConfig, batch: &Batch) -> Result<()> {
    for s in &batch.sequences {
        if s.targets.len() != s.inputs.len() || s.mask.len() != s.inputs.len() {
            return Err(Error::ShapeMismatch("inputs, targets and mask must have equal length".into()));
        }
        for (&t, &m) in s.targets.iter().zip(&s.mask) {
            if m && t as usize >= cfg.vocab_size {
                return Err(Error::TokenOutOfRange { id: t, vocab: cfg.vocab_size });
            }
        }
    }
    Ok(())
}

/// Cross-entropy loss and its gradient with respect to every parameter.
pub fn ce_loss_and_grad<T: Scalar>(cfg: &ModelConfig, params: &ParamSet<T>, batch: &Batch) -> Result<(T, ParamSet<T>)> {
    let model = Model::new(cfg, params)?;
    let mut grads = Gradients::zeros(cfg);
    let loss = accumulate_ce(&model, batch, T::one(), &mut grads)?;
    Ok((loss, grads.into_params(cfg)))
}

/// Adds `weight · ∇ CE` into `grads` and returns the (unweighted) loss.
pub fn accumulate_ce<T: Scalar>(model: &Model<'_, T>, batch: &Batch, weight: T, grads: &mut Gradients<T>) -> Result<T> {
    if batch.sequences.is_empty() {
        return Err(Error::EmptyBatch);
    }
    validate_targets(model.config(), batch)?;
    let count = batch.supervised_positions();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let scale = weight / T::of(count as f64);
    let v = model.config().vocab_size;
    let mut total = T::zero();
    for seq in &batch.sequences {
        if !seq.mask.iter().any(|&m| m) {
            continue;
        }
        let trace = model.forward_tokens(&seq.inputs)?;
        let mut dlogits = vec![T::zero(); trace.logits.len()];
        for (t, (&target, &m)) in seq.targets.iter().zip(&seq.mask).enumerate() {
            if !m {
                continue;
            }
            let row = &trace.logits[t * v..(t + 1) * v];
            let probs = softmax(row);
            total += log_sum_exp(row) - row[target as usize];
            let drow = &mut dlogits[t * v..(t + 1) * v];
            for (dst, &p) in drow.iter_mut().zip(&probs) {
                *dst = p * scale;
            }
            drow[target as usize] -= scale;
        }
        model.backward_sequence(&trace, Some(&dlogits), None, grads);
    }
    Ok(total / T::of(count as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// AdamW with decoupled weight decay and bias-corrected moments.
pub struct AdamW<T: Scalar> {
    cfg: AdamWConfig,
    m: ParamSet<T>,
    v: ParamSet<T>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, params: &ParamSet<T>) -> Self {
        Self { cfg, m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) -> Result<()> {
        if lr.is_nan() || lr <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        params.check_compatible(grads)?;
        params.check_compatible(&self.m)?;
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (b1t, b2t) = (T::of(b1), T::of(b2));
        let (one_b1, one_b2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(self.cfg.eps);
        let decay = T::of(1.0 - lr * self.cfg.weight_decay);
        let apply_decay = self.cfg.weight_decay != 0.0;

        for ((((_, p), (_, g)), (_, m)), (_, v)) in
            params.iter_mut().zip(grads.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut())
        {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1t * *m + one_b1 * g;
                *v = b2t * *v + one_b2 * g * g;
                if apply_decay {
                    *p *= decay;
                }
                *p -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// kernels

/// `out[r, :] = x[r, :] · w + b` for `x: rows × in_dim`, `w: in_dim × out_dim`.
fn linear<T: Scalar>(x: &[T], rows: usize, in_dim: usize, w: &[T], b: Option<&[T]>, out_dim: usize, out: &mut [T]) {
    for r in 0..rows {
        let orow = &mut out[r * out_dim..(r + 1) * out_dim];
        match b {
            Some(b) => orow.copy_from_slice(b),
            None => orow.fill(T::zero()),
        }
        let xrow = &x[r * in_dim..(r + 1) * in_dim];
        for (k, &xv) in xrow.iter().enumerate() {
            let wrow = &w[k * out_dim..(k + 1) * out_dim];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn linear_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    rows: usize,
    in_dim: usize,
    w: &[T],
    out_dim: usize,
    mut dx: Option<&mut [T]>,
    dw: &mut [T],
    mut db: Option<&mut [T]>,
) {
    for r in 0..rows {
        let dyrow = &dy[r * out_dim..(r + 1) * out_dim];
        let xrow = &x[r * in_dim..(r + 1) * in_dim];
        if let Some(db) = db.as_deref_mut() {
            for (o, &g) in db.iter_mut().zip(dyrow) {
                *o += g;
            }
        }
        for k in 0..in_dim {
            let wrow = &w[k * out_dim..(k + 1) * out_dim];
            let dwrow = &mut dw[k * out_dim..(k + 1) * out_dim];
            let xv = xrow[k];
            let mut acc = T::zero();
            for ((dwv, &wv), &g) in dwrow.iter_mut().zip(wrow).zip(dyrow) {
                *dwv += xv * g;
                acc += wv * g;
            }
            if let Some(dx) = dx.as_deref_mut() {
                dx[r * in_dim + k] += acc;
            }
        }
    }
}

fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], d: usize) -> (Vec<T>, LnCache<T>) {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(LN_EPS);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    gain: &[T],
    d: usize,
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let rows = dy.len() / d;
    let mut dx = vec![T::zero(); dy.len()];
    let inv_d = T::of(1.0 / d as f64);
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            let dxh = dyr[j] * gain[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh *= inv_d;
        mean_dxh_xh *= inv_d;
        let rs = cache.rstd[r];
        for j in 0..d {
            let dxh = dyr[j] * gain[j];
            dx[r * d + j] = rs * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

/// Causal multi-head attention over a packed `len × 3d` q/k/v buffer.
fn attention<T: Scalar>(qkv: &[T], len: usize, heads: usize, hd: usize) -> (Vec<T>, Vec<T>) {
    let d = heads * hd;
    let stride = 3 * d;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut ctx = vec![T::zero(); len * d];
    let mut probs = vec![T::zero(); heads * len * len];
    let mut scores = vec![T::zero(); len];
    for h in 0..heads {
        let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
        for i in 0..len {
            let q = &qkv[i * stride + qo..i * stride + qo + hd];
            let mut max = T::neg_infinity();
            for j in 0..=i {
                let k = &qkv[j * stride + ko..j * stride + ko + hd];
                let s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                scores[j] = s;
                max = max.max(s);
            }
            let mut sum = T::zero();
            for s in scores[..=i].iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let prow = &mut probs[(h * len + i) * len..(h * len + i + 1) * len];
            let out = &mut ctx[i * d + h * hd..i * d + (h + 1) * hd];
            for j in 0..=i {
                let p = scores[j] / sum;
                prow[j] = p;
                let vv = &qkv[j * stride + vo..j * stride + vo + hd];
                for (o, &x) in out.iter_mut().zip(vv) {
                    *o += p * x;
                }
            }
        }
    }
    (ctx, probs)
}

fn attention_backward<T: Scalar>(dctx: &[T], qkv: &[T], probs: &[T], len: usize, heads: usize, hd: usize) -> Vec<T> {
    let d = heads * hd;
    let stride = 3 * d;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut dqkv = vec![T::zero(); len * stride];
    let mut dp = vec![T::zero(); len];
    for h in 0..heads {
        let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
        for i in 0..len {
            let dout = &dctx[i * d + h * hd..i * d + (h + 1) * hd];
            let prow = &probs[(h * len + i) * len..(h * len + i + 1) * len];
            let mut dot = T::zero();
            for j in 0..=i {
                let vv = &qkv[j * stride + vo..j * stride + vo + hd];
                dp[j] = dout.iter().zip(vv).map(|(&a, &b)| a * b).sum();
                dot += prow[j] * dp[j];
                let dv = &mut dqkv[j * stride + vo..j * stride + vo + hd];
                for (o, &g) in dv.iter_mut().zip(dout) {
                    *o += prow[j] * g;
                }
            }
            for j in 0..=i {
                let ds = prow[j] * (dp[j] - dot) * scale;
                if ds == T::zero() {
                    continue;
                }
                for c in 0..hd {
                    let qc = qkv[i * stride + qo + c];
                    let kc = qkv[j * stride + ko + c];
                    dqkv[i * stride + qo + c] += ds * kc;
                    dqkv[j * stride + ko + c] += ds * qc;
                }
            }
        }
    }
    dqkv
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

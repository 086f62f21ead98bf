//! Small pre-norm transformer decoders over visual token sequences.
//!
//! The input sequence is `[prefix ‖ visual]`: `prefix` is any `S × D` block
//! of continuous embeddings (a class-token embedding during pretraining, a
//! generated prompt during transfer) and carries no positional embedding.
//! Visual tokens get the positional embedding of their raster index,
//! independent of `S`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

pub const INIT_STD: f32 = 0.02;
const MASK_BIAS: f32 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Causal, raster-order next-token prediction.
    Ar,
    /// Bidirectional masked-token prediction.
    Nar,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ar => "ar",
            ModelKind::Nar => "nar",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar" => Ok(ModelKind::Ar),
            "nar" => Ok(ModelKind::Nar),
            _ => Err(Error::invalid(format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerConfig {
    pub kind: ModelKind,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Number of visual codewords `K`.
    pub codebook_size: usize,
    /// Class tokens reserved for source pretraining.
    pub source_classes: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Adapter bottleneck width, when adapters are attached.
    pub adapter_hidden: Option<usize>,
}

impl TransformerConfig {
    /// L=4, D=64, 4 heads, MLP ratio 4, 8×8 grid over 64 codewords.
    pub fn toy(kind: ModelKind, source_classes: usize) -> Self {
        Self {
            kind,
            layers: 4,
            dim: 64,
            heads: 4,
            mlp_ratio: 4,
            codebook_size: 64,
            source_classes,
            grid_h: 8,
            grid_w: 8,
            adapter_hidden: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("layers, dim, heads and mlp_ratio must be positive"));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.codebook_size == 0 || self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::invalid("codebook and grid extents must be positive"));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Reserved id for masked positions (NAR only).
    pub fn mask_token(&self) -> Option<usize> {
        match self.kind {
            ModelKind::Nar => Some(self.codebook_size),
            ModelKind::Ar => None,
        }
    }

    pub fn class_token(&self, class: usize) -> Result<usize> {
        if class >= self.source_classes {
            return Err(Error::OutOfRange(format!(
                "class {class} with {} source classes",
                self.source_classes
            )));
        }
        let base = self.codebook_size + usize::from(self.kind == ModelKind::Nar);
        Ok(base + class)
    }

    /// Input vocabulary: codewords, the mask token for NAR, and class tokens.
    pub fn vocab_size(&self) -> usize {
        self.codebook_size + usize::from(self.kind == ModelKind::Nar) + self.source_classes
    }

    /// Weight parameters in the transformer proper (no adapters).
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let h = d * self.mlp_ratio;
        let per_layer = 4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d);
        self.vocab_size() * d + self.seq_len() * d + self.layers * per_layer + 2 * d + d * self.codebook_size + self.codebook_size
    }

    /// Parameters added by two adapters per layer of width `hidden`.
    pub fn adapter_param_count(&self, hidden: usize) -> usize {
        self.layers * 2 * (2 * self.dim * hidden + hidden + self.dim)
    }
}

#[derive(Clone, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug)]
struct Adapter {
    down: Dense,
    up: Dense,
}

#[derive(Clone, Debug)]
struct Block {
    ln1: Norm,
    qkv: Dense,
    out: Dense,
    ln2: Norm,
    fc1: Dense,
    fc2: Dense,
    adapters: Option<[Adapter; 2]>,
}

/// Parameter handles into a [`ParamSet`]. Names are prefixed `transformer.`
/// and, for adapters, `adapter.`.
#[derive(Clone, Debug)]
pub struct Transformer {
    config: TransformerConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    ln_f: Norm,
    head: Dense,
}

enum Init {
    Fresh,
    Lookup,
}

struct Builder<'a, R> {
    params: &'a mut ParamSet,
    rng: Option<&'a mut R>,
    mode: Init,
}

impl<R: Rng> Builder<'_, R> {
    fn tensor(&mut self, name: String, shape: &[usize], fill: Fill) -> Result<ParamId> {
        match self.mode {
            Init::Lookup => {
                let id = self.params.require(&name)?;
                if self.params.value(id).shape() != shape {
                    return Err(Error::shape(
                        "transformer",
                        format!("{name}: expected {shape:?}, found {:?}", self.params.value(id).shape()),
                    ));
                }
                Ok(id)
            }
            Init::Fresh => {
                let value = match fill {
                    Fill::Normal => Tensor::randn(shape, INIT_STD, self.rng.as_mut().unwrap()),
                    Fill::Zeros => Tensor::zeros(shape),
                    Fill::Ones => Tensor::full(shape, 1.0),
                };
                self.params.insert(name, value, true)
            }
        }
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, w: Fill) -> Result<Dense> {
        Ok(Dense {
            w: self.tensor(format!("{name}.w"), &[fan_in, fan_out], w)?,
            b: self.tensor(format!("{name}.b"), &[fan_out], Fill::Zeros)?,
        })
    }

    fn norm(&mut self, name: &str, width: usize) -> Result<Norm> {
        Ok(Norm {
            gamma: self.tensor(format!("{name}.gamma"), &[width], Fill::Ones)?,
            beta: self.tensor(format!("{name}.beta"), &[width], Fill::Zeros)?,
        })
    }

    fn adapters(&mut self, layer: usize, dim: usize, hidden: usize) -> Result<[Adapter; 2]> {
        let mut make = |site: &str| -> Result<Adapter> {
            let base = format!("adapter.layer{layer}.{site}");
            Ok(Adapter {
                down: self.dense(&format!("{base}.down"), dim, hidden, Fill::Normal)?,
                up: self.dense(&format!("{base}.up"), hidden, dim, Fill::Zeros)?,
            })
        };
        Ok([make("attn")?, make("mlp")?])
    }
}

#[derive(Clone, Copy)]
enum Fill {
    Normal,
    Zeros,
    Ones,
}

impl Transformer {
    /// Registers freshly initialized weights: normal(0, 0.02) for embeddings
    /// and projections, zeros for biases, unit layer-norm scales.
    pub fn init<R: Rng>(config: TransformerConfig, params: &mut ParamSet, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params,
            rng: Some(rng),
            mode: Init::Fresh,
        };
        Self::build(config, &mut b)
    }

    /// Re-attaches to weights already present in `params` (e.g. after loading).
    pub fn from_params(config: TransformerConfig, params: &mut ParamSet) -> Result<Self> {
        config.validate()?;
        let mut b: Builder<'_, rand_chacha::ChaCha8Rng> = Builder {
            params,
            rng: None,
            mode: Init::Lookup,
        };
        Self::build(config, &mut b)
    }

    fn build<R: Rng>(config: TransformerConfig, b: &mut Builder<'_, R>) -> Result<Self> {
        let d = config.dim;
        let h = d * config.mlp_ratio;
        let tok_emb = b.tensor("transformer.tok_emb".into(), &[config.vocab_size(), d], Fill::Normal)?;
        let pos_emb = b.tensor("transformer.pos_emb".into(), &[config.seq_len(), d], Fill::Normal)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("transformer.layer{l}");
            blocks.push(Block {
                ln1: b.norm(&format!("{p}.ln1"), d)?,
                qkv: b.dense(&format!("{p}.attn.qkv"), d, 3 * d, Fill::Normal)?,
                out: b.dense(&format!("{p}.attn.out"), d, d, Fill::Normal)?,
                ln2: b.norm(&format!("{p}.ln2"), d)?,
                fc1: b.dense(&format!("{p}.mlp.fc1"), d, h, Fill::Normal)?,
                fc2: b.dense(&format!("{p}.mlp.fc2"), h, d, Fill::Normal)?,
                adapters: match config.adapter_hidden {
                    Some(hidden) => Some(b.adapters(l, d, hidden)?),
                    None => None,
                },
            });
        }
        let ln_f = b.norm("transformer.ln_f", d)?;
        let head = b.dense("transformer.head", d, config.codebook_size, Fill::Normal)?;
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn has_adapters(&self) -> bool {
        self.config.adapter_hidden.is_some()
    }

    /// Inserts two bottleneck adapters per block (after attention and after
    /// the MLP). Up-projections start at zero, so the model's outputs are
    /// unchanged until the adapters are trained.
    pub fn attach_adapters<R: Rng>(&mut self, params: &mut ParamSet, hidden: usize, rng: &mut R) -> Result<()> {
        if self.has_adapters() {
            return Err(Error::invalid("adapters already attached"));
        }
        if hidden == 0 {
            return Err(Error::invalid("adapter width must be positive"));
        }
        let mut b = Builder {
            params,
            rng: Some(rng),
            mode: Init::Fresh,
        };
        for (l, block) in self.blocks.iter_mut().enumerate() {
            block.adapters = Some(b.adapters(l, self.config.dim, hidden)?);
        }
        self.config.adapter_hidden = Some(hidden);
        Ok(())
    }

    /// Embedding rows of the given input-vocabulary ids, as a `[n, D]` tensor.
    pub fn embedding_rows(&self, params: &ParamSet, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let table = g.param(params, self.tok_emb)?;
        let rows = g.gather(table, ids)?;
        Ok(g.value(rows).clone())
    }

    /// Embeds class tokens as a `[B, 1, D]` prefix.
    pub fn class_prefix(&self, g: &mut Graph, params: &ParamSet, classes: &[usize]) -> Result<NodeId> {
        let ids = classes
            .iter()
            .map(|&c| self.config.class_token(c))
            .collect::<Result<Vec<_>>>()?;
        let table = g.param(params, self.tok_emb)?;
        let rows = g.gather(table, &ids)?;
        g.reshape(rows, &[classes.len(), 1, self.config.dim])
    }

    fn linear(&self, g: &mut Graph, params: &ParamSet, x: NodeId, d: &Dense) -> Result<NodeId> {
        let w = g.param(params, d.w)?;
        let b = g.param(params, d.b)?;
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }

    fn norm(&self, g: &mut Graph, params: &ParamSet, x: NodeId, n: &Norm) -> Result<NodeId> {
        let gamma = g.param(params, n.gamma)?;
        let beta = g.param(params, n.beta)?;
        g.layer_norm(x, gamma, beta)
    }

    fn adapter(&self, g: &mut Graph, params: &ParamSet, x: NodeId, a: &Adapter) -> Result<NodeId> {
        let h = self.linear(g, params, x, &a.down)?;
        let h = g.gelu(h)?;
        let h = self.linear(g, params, h, &a.up)?;
        g.add(x, h)
    }

    /// Multi-head self-attention over `x: [B·L, D]`.
    fn attention(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        x: NodeId,
        block: &Block,
        batch: usize,
        len: usize,
        mask: Option<NodeId>,
    ) -> Result<NodeId> {
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let qkv = self.linear(g, params, x, &block.qkv)?;
        let qkv = g.reshape(qkv, &[batch, len, 3, heads, dh])?;
        let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?; // [3, B, H, L, dh]
        let pick = |g: &mut Graph, i: usize| -> Result<NodeId> {
            let t = g.slice(qkv, 0, i, 1)?;
            g.reshape(t, &[batch * heads, len, dh])
        };
        let q = pick(g, 0)?;
        let k = pick(g, 1)?;
        let v = pick(g, 2)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let mut scores = g.scale(scores, 1.0 / (dh as f32).sqrt())?;
        if let Some(m) = mask {
            scores = g.add(scores, m)?;
        }
        let probs = g.softmax(scores)?;
        let ctx = g.matmul(probs, v)?; // [B·H, L, dh]
        let ctx = g.reshape(ctx, &[batch, heads, len, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[batch * len, d])?;
        self.linear(g, params, ctx, &block.out)
    }

    fn causal_mask(len: usize) -> Tensor {
        let mut m = Tensor::zeros(&[len, len]);
        for i in 0..len {
            for j in i + 1..len {
                m.data_mut()[i * len + j] = MASK_BIAS;
            }
        }
        m
    }

    /// Runs the decoder over `[prefix ‖ visual]` and returns logits over the
    /// `K` codewords.
    ///
    /// * AR: `visual[b]` holds the first `n < H·W` tokens; the output is
    ///   `[B, n + 1, K]`, row `i` predicting token `i`.
    /// * NAR: `visual[b]` holds all `H·W` tokens (masked ones carry the mask
    ///   id); the output is `[B, H·W, K]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        prefix: NodeId,
        visual: &[Vec<usize>],
    ) -> Result<NodeId> {
        let cfg = &self.config;
        let d = cfg.dim;
        let pshape = g.shape(prefix).to_vec();
        if pshape.len() != 3 || pshape[2] != d {
            return Err(Error::shape("forward", format!("prefix {pshape:?}, want [B, S, {d}]")));
        }
        let (batch, s) = (pshape[0], pshape[1]);
        if visual.len() != batch {
            return Err(Error::shape("forward", format!("{} sequences for batch {batch}", visual.len())));
        }
        let n = visual.first().map_or(0, Vec::len);
        if visual.iter().any(|v| v.len() != n) {
            return Err(Error::shape("forward", "ragged visual batch"));
        }
        match cfg.kind {
            ModelKind::Ar if n >= cfg.seq_len() => {
                return Err(Error::OutOfRange(format!("AR prefix of {n} tokens, grid has {}", cfg.seq_len())))
            }
            ModelKind::Nar if n != cfg.seq_len() => {
                return Err(Error::shape("forward", format!("NAR needs {} tokens, got {n}", cfg.seq_len())))
            }
            _ => {}
        }
        let vocab = cfg.vocab_size();
        if let Some(&bad) = visual.iter().flatten().find(|&&t| t >= vocab) {
            return Err(Error::OutOfRange(format!("token {bad} >= vocabulary {vocab}")));
        }

        let mut x = prefix;
        if n > 0 {
            let ids: Vec<usize> = visual.iter().flatten().copied().collect();
            let table = g.param(params, self.tok_emb)?;
            let emb = g.gather(table, &ids)?;
            let emb = g.reshape(emb, &[batch, n, d])?;
            let pos = g.param(params, self.pos_emb)?;
            let pos = g.slice(pos, 0, 0, n)?;
            let emb = g.add(emb, pos)?;
            x = g.concat(&[prefix, emb], 1)?;
        }
        let len = s + n;
        let mask = match cfg.kind {
            ModelKind::Ar => Some(g.constant(Self::causal_mask(len))?),
            ModelKind::Nar => None,
        };
        let mut h = g.reshape(x, &[batch * len, d])?;
        for block in &self.blocks {
            let a = self.norm(g, params, h, &block.ln1)?;
            let mut a = self.attention(g, params, a, block, batch, len, mask)?;
            if let Some(ad) = &block.adapters {
                a = self.adapter(g, params, a, &ad[0])?;
            }
            h = g.add(h, a)?;
            let m = self.norm(g, params, h, &block.ln2)?;
            let m = self.linear(g, params, m, &block.fc1)?;
            let m = g.gelu(m)?;
            let mut m = self.linear(g, params, m, &block.fc2)?;
            if let Some(ad) = &block.adapters {
                m = self.adapter(g, params, m, &ad[1])?;
            }
            h = g.add(h, m)?;
        }
        let h = g.reshape(h, &[batch, len, d])?;
        // AR: the last prefix position predicts z_1; NAR: visual positions only
        let (start, rows) = match cfg.kind {
            ModelKind::Ar => (s - 1, n + 1),
            ModelKind::Nar => (s, n),
        };
        let h = g.slice(h, 1, start, rows)?;
        let h = self.norm(g, params, h, &self.ln_f)?;
        self.linear(g, params, h, &self.head)
    }
}

/// Wraps an `S × D` prompt tensor as a `[1, S, D]` graph constant.
pub(crate) fn prompt_node(g: &mut Graph, prompt: &Tensor, dim: usize) -> Result<NodeId> {
    let shape = prompt.shape();
    if shape.len() != 2 || shape[1] != dim || shape[0] == 0 {
        return Err(Error::shape("prompt", format!("prompt {shape:?}, want [S, {dim}] with S >= 1")));
    }
    let t = prompt.clone().reshape(&[1, shape[0], dim])?;
    g.constant(t)
}

/// Logits for positions `0..=prefix.len()` of an AR model: row `i` predicts
/// visual token `i` from the prompt and tokens `< i`.
pub fn ar_logits(model: &Transformer, params: &ParamSet, prefix: &[usize], prompt: &Tensor) -> Result<Tensor> {
    if model.kind() != ModelKind::Ar {
        return Err(Error::invalid("ar_logits needs an AR model"));
    }
    let mut g = Graph::new();
    let p = prompt_node(&mut g, prompt, model.config().dim)?;
    let out = model.forward(&mut g, params, p, &[prefix.to_vec()])?;
    let k = model.config().codebook_size;
    g.value(out).clone().reshape(&[prefix.len() + 1, k])
}

/// Logits at every visual position of a NAR model.
pub fn nar_logits(model: &Transformer, params: &ParamSet, tokens: &[usize], prompt: &Tensor) -> Result<Tensor> {
    if model.kind() != ModelKind::Nar {
        return Err(Error::invalid("nar_logits needs a NAR model"));
    }
    let mut g = Graph::new();
    let p = prompt_node(&mut g, prompt, model.config().dim)?;
    let out = model.forward(&mut g, params, p, &[tokens.to_vec()])?;
    let k = model.config().codebook_size;
    g.value(out).clone().reshape(&[tokens.len(), k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(kind: ModelKind) -> TransformerConfig {
        TransformerConfig {
            kind,
            layers: 2,
            dim: 8,
            heads: 2,
            mlp_ratio: 2,
            codebook_size: 5,
            source_classes: 2,
            grid_h: 2,
            grid_w: 3,
            adapter_hidden: None,
        }
    }

    fn build(kind: ModelKind, seed: u64) -> (Transformer, ParamSet) {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = tiny(kind);
        cfg.dim = 8;
        let t = Transformer::init(cfg, &mut params, &mut rng).unwrap();
        // larger weights make position effects visible in tests
        for (id, p) in params.clone().iter() {
            if p.name.ends_with(".w") || p.name.ends_with("_emb") {
                let v = Tensor::randn(p.value.shape(), 0.5, &mut rng);
                *params.value_mut(id) = v;
            }
        }
        (t, params)
    }

    fn prompt(s: usize, seed: u64) -> Tensor {
        Tensor::randn(&[s, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn head_dim_must_divide() {
        let mut cfg = tiny(ModelKind::Nar);
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn param_count_matches_registered() {
        for kind in [ModelKind::Ar, ModelKind::Nar] {
            let (t, params) = build(kind, 1);
            assert_eq!(params.count_with_prefix("transformer."), t.config().param_count());
        }
    }

    #[test]
    fn ar_causality_is_exact() {
        let (t, params) = build(ModelKind::Ar, 3);
        let p = prompt(2, 4);
        let base = ar_logits(&t, &params, &[1, 4, 0, 2, 3], &p).unwrap();
        let changed = ar_logits(&t, &params, &[1, 4, 3, 0, 1], &p).unwrap();
        // rows 0..=2 only see tokens 0 and 1
        assert_eq!(&base.data()[..3 * 5], &changed.data()[..3 * 5]);
        assert_ne!(&base.data()[3 * 5..], &changed.data()[3 * 5..]);
    }

    #[test]
    fn ar_empty_prefix_single_row() {
        let (t, params) = build(ModelKind::Ar, 3);
        let out = ar_logits(&t, &params, &[], &prompt(1, 0)).unwrap();
        assert_eq!(out.shape(), &[1, 5]);
    }

    #[test]
    fn ar_rejects_full_prefix_and_bad_token() {
        let (t, params) = build(ModelKind::Ar, 3);
        assert!(ar_logits(&t, &params, &[0; 6], &prompt(1, 0)).is_err());
        assert!(ar_logits(&t, &params, &[99], &prompt(1, 0)).is_err());
    }

    #[test]
    fn nar_swap_changes_logits() {
        let (t, params) = build(ModelKind::Nar, 5);
        let p = prompt(2, 1);
        let a = nar_logits(&t, &params, &[0, 1, 2, 3, 4, 0], &p).unwrap();
        let b = nar_logits(&t, &params, &[1, 0, 2, 3, 4, 0], &p).unwrap();
        assert_ne!(a.data(), b.data());
        // positions 2..5 see the change through bidirectional attention
        assert_ne!(&a.data()[10..], &b.data()[10..]);
    }

    #[test]
    fn nar_rejects_empty_prompt() {
        let (t, params) = build(ModelKind::Nar, 5);
        let empty = Tensor::zeros(&[1, 4]);
        assert!(nar_logits(&t, &params, &[0; 6], &empty).is_err());
    }

    #[test]
    fn forward_is_pure() {
        let (t, params) = build(ModelKind::Nar, 8);
        let p = prompt(3, 2);
        let a = nar_logits(&t, &params, &[5, 5, 1, 5, 2, 5], &p).unwrap();
        let b = nar_logits(&t, &params, &[5, 5, 1, 5, 2, 5], &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adapters_start_as_identity() {
        let (mut t, mut params) = build(ModelKind::Nar, 9);
        let p = prompt(2, 3);
        let before = nar_logits(&t, &params, &[0, 1, 2, 3, 4, 5], &p).unwrap();
        let n0 = params.count_with_prefix("");
        t.attach_adapters(&mut params, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let added = params.count_with_prefix("") - n0;
        assert_eq!(added, t.config().adapter_param_count(4));
        let after = nar_logits(&t, &params, &[0, 1, 2, 3, 4, 5], &p).unwrap();
        assert!(before.max_abs_diff(&after) < 1e-6);
        assert!(t
            .attach_adapters(&mut params, 4, &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }

    #[test]
    fn adapter_count_formula() {
        let mut cfg = TransformerConfig::toy(ModelKind::Nar, 8);
        cfg.layers = 4;
        assert_eq!(cfg.adapter_param_count(64), 66_560);
    }

    #[test]
    fn lookup_roundtrip() {
        let (t, mut params) = build(ModelKind::Ar, 2);
        let again = Transformer::from_params(t.config().clone(), &mut params).unwrap();
        let p = prompt(1, 7);
        assert_eq!(
            ar_logits(&t, &params, &[1, 2], &p).unwrap(),
            ar_logits(&again, &params, &[1, 2], &p).unwrap()
        );
    }
}

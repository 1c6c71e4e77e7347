//! Post-norm BERT encoder that keeps the activations of every layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::{ParamId, Params, Span, Tape, Tensor, Var};

/// Longest sequence the length schedule ever produces.
pub const LONGEST_SEQUENCE: usize = 384;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub ff_size: usize,
    pub max_position: usize,
    pub vocab_size: usize,
    pub type_vocab: usize,
    pub dropout_p: f64,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl EncoderConfig {
    /// 4 layers, 4 heads, hidden 64, feed-forward 128.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            hidden_size: 64,
            ff_size: 128,
            max_position: LONGEST_SEQUENCE,
            vocab_size,
            type_vocab: 2,
            dropout_p: 0.1,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
        }
    }

    /// BERT-base geometry (12 layers, 12 heads, hidden 768).
    pub fn base(vocab_size: usize) -> Self {
        Self { num_layers: 12, num_heads: 12, hidden_size: 768, ff_size: 3072, max_position: 512, ..Self::desk(vocab_size) }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_size", self.hidden_size),
            ("ff_size", self.ff_size),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config_err(format!("encoder.{name} must be positive")));
            }
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(config_err(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.max_position < LONGEST_SEQUENCE {
            return Err(config_err(format!(
                "max_position {} is shorter than the longest scheduled sequence ({LONGEST_SEQUENCE})",
                self.max_position
            )));
        }
        if self.type_vocab != 2 {
            return Err(config_err("type_vocab must be 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(config_err(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Registers parameters either by creating them or by looking them up.
pub(crate) trait Registrar {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId>;
}

pub(crate) struct Creator<'a> {
    pub params: &'a mut Params,
    pub rng: &'a mut Rng,
    pub std: f64,
}

impl Registrar for Creator<'_> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, 1.0),
            Init::Normal => {
                let normal = Normal::new(0.0, self.std).map_err(|e| Error::Param(format!("{e}")))?;
                let n = shape.iter().product();
                Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(self.rng)).collect())?
            }
        };
        self.params.insert(name, t)
    }
}

pub(crate) struct Binder<'a>(pub &'a Params);

impl Registrar for Binder<'_> {
    fn param(&mut self, name: &str, shape: &[usize], _: Init) -> Result<ParamId> {
        self.0.expect(name, shape)
    }
}

/// Affine map `x·W + b` with `W: [in×out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn register(r: &mut dyn Registrar, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: r.param(&format!("{name}.weight"), &[input, output], Init::Normal)?,
            bias: r.param(&format!("{name}.bias"), &[output], Init::Zeros)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &Params, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub(crate) fn register(r: &mut dyn Registrar, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: r.param(&format!("{name}.gamma"), &[width], Init::Ones)?,
            beta: r.param(&format!("{name}.beta"), &[width], Init::Zeros)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &Params, x: Var, eps: f64) -> Result<Var> {
        let g = tape.param(params, self.gamma);
        let b = tape.param(params, self.beta);
        tape.layer_norm(x, g, b, eps)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attn_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ff_norm: LayerNorm,
}

impl EncoderLayer {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = Vec::with_capacity(16);
        for l in [self.query, self.key, self.value, self.output] {
            v.extend(l.ids());
        }
        v.extend(self.attn_norm.ids());
        v.extend(self.ff_in.ids());
        v.extend(self.ff_out.ids());
        v.extend(self.ff_norm.ids());
        v
    }
}

/// Parameter handles of the encoder. Values live in a [`Params`] store.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub segment_embedding: ParamId,
    pub embedding_norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
}

/// Sequences packed row-wise into one matrix. Position 0 of each span is [CLS].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeqBatch {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub positions: Vec<usize>,
    /// `true` for rows that may be attended to; `false` for padding.
    pub key_mask: Vec<bool>,
    pub spans: Vec<Span>,
}

impl SeqBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(token_ids: &[usize], segment_ids: &[usize], attention_mask: &[bool]) -> Result<Self> {
        let mut b = Self::new();
        b.push(token_ids, segment_ids, attention_mask)?;
        Ok(b)
    }

    pub fn push(&mut self, token_ids: &[usize], segment_ids: &[usize], attention_mask: &[bool]) -> Result<()> {
        let n = token_ids.len();
        if n == 0 || segment_ids.len() != n || attention_mask.len() != n {
            return Err(Error::Shape {
                op: "sequence",
                lhs: vec![n],
                rhs: vec![segment_ids.len(), attention_mask.len()],
            });
        }
        self.spans.push(Span { offset: self.token_ids.len(), len: n });
        self.token_ids.extend_from_slice(token_ids);
        self.segment_ids.extend_from_slice(segment_ids);
        self.positions.extend(0..n);
        self.key_mask.extend_from_slice(attention_mask);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.token_ids.len()
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Row index of each sequence's first token.
    pub fn cls_rows(&self) -> Vec<usize> {
        self.spans.iter().map(|s| s.offset).collect()
    }

    /// For every row, the index of the sequence it belongs to.
    pub fn row_owner(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.rows());
        for (i, s) in self.spans.iter().enumerate() {
            out.extend(core::iter::repeat_n(i, s.len));
        }
        out
    }
}

/// Forward-pass mode: dropout is active only while training.
pub struct Mode<'a> {
    pub training: bool,
    pub rng: &'a mut Rng,
    /// Overrides the configured dropout rate.
    pub dropout_p: Option<f64>,
}

impl<'a> Mode<'a> {
    pub fn train(rng: &'a mut Rng) -> Self {
        Self { training: true, rng, dropout_p: None }
    }

    pub fn eval(rng: &'a mut Rng) -> Self {
        Self { training: false, rng, dropout_p: None }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = Some(p);
        self
    }
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub embedding_output: Var,
    /// `per_layer[k]` is the output of encoder layer `k + 1`.
    pub per_layer: Vec<Var>,
}

impl EncoderOutput {
    /// Activations of 1-based layer `layer`.
    pub fn layer(&self, layer: usize) -> Var {
        self.per_layer[layer - 1]
    }
}

impl Encoder {
    pub(crate) fn register(config: &EncoderConfig, r: &mut dyn Registrar) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let token_embedding = r.param("embeddings.token", &[config.vocab_size, h], Init::Normal)?;
        let position_embedding = r.param("embeddings.position", &[config.max_position, h], Init::Normal)?;
        let segment_embedding = r.param("embeddings.segment", &[config.type_vocab, h], Init::Normal)?;
        let embedding_norm = LayerNorm::register(r, "embeddings.norm", h)?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for k in 1..=config.num_layers {
            let p = |s: &str| format!("layer.{k}.{s}");
            layers.push(EncoderLayer {
                query: Linear::register(r, &p("attention.query"), h, h)?,
                key: Linear::register(r, &p("attention.key"), h, h)?,
                value: Linear::register(r, &p("attention.value"), h, h)?,
                output: Linear::register(r, &p("attention.output"), h, h)?,
                attn_norm: LayerNorm::register(r, &p("attention.norm"), h)?,
                ff_in: Linear::register(r, &p("ffn.input"), h, config.ff_size)?,
                ff_out: Linear::register(r, &p("ffn.output"), config.ff_size, h)?,
                ff_norm: LayerNorm::register(r, &p("ffn.norm"), h)?,
            });
        }
        Ok(Self { config: config.clone(), token_embedding, position_embedding, segment_embedding, embedding_norm, layers })
    }

    /// Create freshly initialised parameters.
    pub fn init(config: &EncoderConfig, params: &mut Params, rng: &mut Rng) -> Result<Self> {
        Self::register(config, &mut Creator { params, rng, std: config.init_std })
    }

    /// Attach to parameters that already exist in `params`.
    pub fn bind(config: &EncoderConfig, params: &Params) -> Result<Self> {
        Self::register(config, &mut Binder(params))
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embedding_params(&self) -> Vec<ParamId> {
        let mut v = vec![self.token_embedding, self.position_embedding, self.segment_embedding];
        v.extend(self.embedding_norm.ids());
        v
    }

    /// Parameters of 1-based layer `layer`.
    pub fn layer_params(&self, layer: usize) -> Vec<ParamId> {
        self.layers[layer - 1].ids()
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        let mut v = self.embedding_params();
        for l in &self.layers {
            v.extend(l.ids());
        }
        v
    }

    /// Token + position + segment embeddings, then layer norm and dropout.
    pub fn embed(&self, tape: &mut Tape, params: &Params, batch: &SeqBatch, mode: &mut Mode<'_>) -> Result<Var> {
        let c = &self.config;
        if let Some(&p) = batch.positions.iter().max() {
            if p >= c.max_position {
                return Err(Error::Lookup { index: p, size: c.max_position });
            }
        }
        let tok = tape.param(params, self.token_embedding);
        let pos = tape.param(params, self.position_embedding);
        let seg = tape.param(params, self.segment_embedding);
        let t = tape.gather_rows(tok, &batch.token_ids)?;
        let p = tape.gather_rows(pos, &batch.positions)?;
        let s = tape.gather_rows(seg, &batch.segment_ids)?;
        let sum = tape.add(t, p)?;
        let sum = tape.add(sum, s)?;
        let normed = self.embedding_norm.forward(tape, params, sum, c.layer_norm_eps)?;
        tape.dropout(normed, mode.dropout_p.unwrap_or(c.dropout_p), mode.training, mode.rng)
    }

    /// Run every encoder layer over `embedded`, keeping all activations.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &Params,
        embedded: Var,
        batch: &SeqBatch,
        mode: &mut Mode<'_>,
    ) -> Result<EncoderOutput> {
        let c = &self.config;
        if batch.key_mask.len() != tape.value(embedded).rows() {
            return Err(Error::Shape {
                op: "encode",
                lhs: tape.value(embedded).shape().to_vec(),
                rhs: vec![batch.key_mask.len()],
            });
        }
        let p = mode.dropout_p.unwrap_or(c.dropout_p);
        let mut x = embedded;
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = layer.query.forward(tape, params, x)?;
            let k = layer.key.forward(tape, params, x)?;
            let v = layer.value.forward(tape, params, x)?;
            let ctx = tape.attention(q, k, v, &batch.spans, c.num_heads, &batch.key_mask, p, mode.training, mode.rng)?;
            let o = layer.output.forward(tape, params, ctx)?;
            let o = tape.dropout(o, p, mode.training, mode.rng)?;
            let res = tape.add(x, o)?;
            let h1 = layer.attn_norm.forward(tape, params, res, c.layer_norm_eps)?;
            let f = layer.ff_in.forward(tape, params, h1)?;
            let f = tape.gelu(f);
            let f = layer.ff_out.forward(tape, params, f)?;
            let f = tape.dropout(f, p, mode.training, mode.rng)?;
            let res = tape.add(h1, f)?;
            x = layer.ff_norm.forward(tape, params, res, c.layer_norm_eps)?;
            per_layer.push(x);
        }
        Ok(EncoderOutput { embedding_output: embedded, per_layer })
    }

    pub fn forward(&self, tape: &mut Tape, params: &Params, batch: &SeqBatch, mode: &mut Mode<'_>) -> Result<EncoderOutput> {
        let e = self.embed(tape, params, batch, mode)?;
        self.encode(tape, params, e, batch, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tiny() -> EncoderConfig {
        EncoderConfig { num_layers: 2, num_heads: 2, hidden_size: 8, ff_size: 16, vocab_size: 20, dropout_p: 0.0, ..EncoderConfig::desk(20) }
    }

    #[test]
    fn validation_rules() {
        assert!(EncoderConfig::desk(100).validate().is_ok());
        assert!(EncoderConfig::base(100).validate().is_ok());
        let bad = EncoderConfig { num_heads: 3, ..EncoderConfig::desk(100) };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let short = EncoderConfig { max_position: 128, ..EncoderConfig::desk(100) };
        assert!(short.validate().is_err());
    }

    #[test]
    fn single_layer_has_one_output() {
        let cfg = EncoderConfig { num_layers: 1, ..tiny() };
        let mut params = Params::new();
        let enc = Encoder::init(&cfg, &mut params, &mut stream(1, "init", 0)).unwrap();
        let batch = SeqBatch::single(&[2, 7, 3], &[0, 0, 0], &[true; 3]).unwrap();
        let mut tape = Tape::new();
        let mut rng = stream(1, "fwd", 0);
        let out = enc.forward(&mut tape, &params, &batch, &mut Mode::eval(&mut rng)).unwrap();
        assert_eq!(out.per_layer.len(), 1);
        assert_eq!(tape.value(out.per_layer[0]).shape(), &[3, 8]);
    }

    #[test]
    fn out_of_vocab_id_is_a_lookup_error() {
        let cfg = tiny();
        let mut params = Params::new();
        let enc = Encoder::init(&cfg, &mut params, &mut stream(1, "init", 0)).unwrap();
        let batch = SeqBatch::single(&[2, 25, 3], &[0, 0, 0], &[true; 3]).unwrap();
        let mut tape = Tape::new();
        let mut rng = stream(1, "fwd", 0);
        let err = enc.forward(&mut tape, &params, &batch, &mut Mode::eval(&mut rng)).unwrap_err();
        assert_eq!(err, Error::Lookup { index: 25, size: 20 });
    }

    #[test]
    fn bind_recovers_same_ids() {
        let cfg = tiny();
        let mut params = Params::new();
        let a = Encoder::init(&cfg, &mut params, &mut stream(1, "init", 0)).unwrap();
        let b = Encoder::bind(&cfg, &params).unwrap();
        assert_eq!(a.all_params(), b.all_params());
        let other = EncoderConfig { hidden_size: 16, ..cfg };
        assert!(Encoder::bind(&other, &params).is_err());
    }
}

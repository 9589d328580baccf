//! Small trainable transformer encoders producing contextual token
//! embeddings.
//!
//! Two topologies share one parameter layout:
//!
//! * sentence-wise full self-attention, used by the compositional models;
//!   several sentences can be encoded in one pass with block-diagonal
//!   attention, which is row-for-row identical to encoding each sentence
//!   alone;
//! * whole-document sliding-window attention with a global `CLS` token at
//!   position 0, used as the long-document encoder and as the source of the
//!   CLS attention baseline.
//!
//! Layers are post-norm: `x = LN(x + MHA(x))`, `x = LN(x + FFN(x))` with a
//! GELU feed-forward block.

mod vocab;

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AttentionMap, AttentionSpans, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ParamStore};

pub use vocab::{Vocab, CLS_TOKEN, PAD_TOKEN, UNK_TOKEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Width of the contextual embeddings.
    pub hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Feed-forward inner width.
    pub ff_width: usize,
    pub max_sentence_len: usize,
    /// Sliding-window width (odd) for the document encoder.
    pub window: usize,
    pub use_positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            n_layers: 2,
            n_heads: 4,
            ff_width: 64,
            max_sentence_len: 64,
            window: 17,
            use_positional: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.n_layers == 0 || self.n_heads == 0 || self.ff_width == 0 {
            return Err(Error::Config("encoder widths and depth must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by n_heads {}",
                self.hidden, self.n_heads
            )));
        }
        if self.max_sentence_len == 0 {
            return Err(Error::Config("max_sentence_len must be positive".into()));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window must be a positive odd integer, got {}",
                self.window
            )));
        }
        Ok(())
    }
}

/// How the per-head attention is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionKernel {
    /// Sparse fused kernel: cost proportional to the number of allowed pairs.
    #[default]
    Fused,
    /// Dense `n × n` scores with a mask, built from primitive graph ops.
    Dense,
}

/// How per-head CLS attention rows are combined for the Top-K baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadReduction {
    #[default]
    Mean,
    Max,
}

fn layer_name(l: usize, part: &str) -> String {
    format!("encoder.layer{l}.{part}")
}

pub const EMBED: &str = "encoder.embed";

/// Fresh encoder parameters: Glorot weights, zero biases, unit norm gains.
pub fn init_params(cfg: &EncoderConfig, vocab_size: usize, rng: &mut ChaCha8Rng) -> ParamStore {
    let h = cfg.hidden;
    let f = cfg.ff_width;
    let mut p = ParamStore::new();
    p.insert(EMBED, glorot(rng, vocab_size, h));
    for l in 0..cfg.n_layers {
        for w in ["wq", "wk", "wv", "wo"] {
            p.insert(layer_name(l, w), glorot(rng, h, h));
        }
        for b in ["bq", "bk", "bv", "bo", "ln1_b", "ln2_b", "b2"] {
            p.insert(layer_name(l, b), Tensor::zeros(&[h]));
        }
        p.insert(layer_name(l, "ln1_g"), Tensor::full(&[h], 1.0));
        p.insert(layer_name(l, "ln2_g"), Tensor::full(&[h], 1.0));
        p.insert(layer_name(l, "w1"), glorot(rng, h, f));
        p.insert(layer_name(l, "b1"), Tensor::zeros(&[f]));
        p.insert(layer_name(l, "w2"), glorot(rng, f, h));
    }
    p
}

/// Sinusoidal position table rows for `positions`.
pub fn positional_encoding(positions: &[usize], h: usize) -> Tensor {
    let mut data = Vec::with_capacity(positions.len() * h);
    for &pos in positions {
        for j in 0..h {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / h as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![positions.len(), h], data).expect("positional shape")
}

/// Embedding lookup plus optional sinusoidal positions.
pub fn embed_tokens(
    g: &mut Graph,
    params: &Bound,
    cfg: &EncoderConfig,
    ids: &[usize],
    positions: &[usize],
) -> Result<Var> {
    let table = params.var(EMBED)?;
    let x = g.gather(table, ids)?;
    if cfg.use_positional {
        let pe = g.constant(positional_encoding(positions, cfg.hidden));
        g.add(x, pe)
    } else {
        Ok(x)
    }
}

/// Output of an encoder pass.
#[derive(Debug)]
pub struct Encoded {
    pub embeddings: Var,
    /// Attention node per layer, for probability inspection.
    pub attention_nodes: Vec<Var>,
}

fn encode_rows(
    g: &mut Graph,
    params: &Bound,
    cfg: &EncoderConfig,
    ids: &[usize],
    positions: &[usize],
    spans: Arc<AttentionSpans>,
    kernel: AttentionKernel,
) -> Result<Encoded> {
    let mut x = embed_tokens(g, params, cfg, ids, positions)?;
    let mut attention_nodes = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let p = |part: &str| params.var(&layer_name(l, part));
        let q = linear(g, x, p("wq")?, p("bq")?)?;
        let k = linear(g, x, p("wk")?, p("bk")?)?;
        let v = linear(g, x, p("wv")?, p("bv")?)?;
        let attn = match kernel {
            AttentionKernel::Fused => g.attention(q, k, v, cfg.n_heads, spans.clone())?,
            AttentionKernel::Dense => dense_attention(g, q, k, v, cfg.n_heads, &spans)?,
        };
        attention_nodes.push(attn);
        let proj = linear(g, attn, p("wo")?, p("bo")?)?;
        let res = g.add(x, proj)?;
        x = g.layer_norm(res, p("ln1_g")?, p("ln1_b")?)?;
        let hid = linear(g, x, p("w1")?, p("b1")?)?;
        let hid = g.activation(hid, Activation::Gelu)?;
        let ff = linear(g, hid, p("w2")?, p("b2")?)?;
        let res = g.add(x, ff)?;
        x = g.layer_norm(res, p("ln2_g")?, p("ln2_b")?)?;
    }
    Ok(Encoded {
        embeddings: x,
        attention_nodes,
    })
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row_bias(y, b)
}

fn dense_attention(g: &mut Graph, q: Var, k: Var, v: Var, n_heads: usize, spans: &AttentionSpans) -> Result<Var> {
    let (_, h) = g.value(q).dims2()?;
    let dh = h / n_heads;
    let mask = spans.dense_mask();
    let mut heads = Vec::with_capacity(n_heads);
    for hd in 0..n_heads {
        let (c0, c1) = (hd * dh, (hd + 1) * dh);
        let qh = g.slice_cols(q, c0, c1)?;
        let kh = g.slice_cols(k, c0, c1)?;
        let vh = g.slice_cols(v, c0, c1)?;
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let s = g.scale(s, 1.0 / (dh as f64).sqrt())?;
        let p = g.softmax_rows(s, Some(&mask))?;
        heads.push(g.matmul(p, vh)?);
    }
    g.concat_cols(&heads)
}

/// Encodes one sentence with full self-attention. No CLS row is added.
pub fn encode_sentence(g: &mut Graph, params: &Bound, cfg: &EncoderConfig, ids: &[usize]) -> Result<Var> {
    Ok(encode_sentences(g, params, cfg, &[ids.to_vec()])?.embeddings)
}

/// Encodes sentences independently and concatenates them along the token
/// axis. Attention is block-diagonal and positions restart per sentence, so
/// each block equals [`encode_sentence`] on that sentence alone.
pub fn encode_sentences(
    g: &mut Graph,
    params: &Bound,
    cfg: &EncoderConfig,
    sentences: &[Vec<usize>],
) -> Result<Encoded> {
    encode_sentences_with(g, params, cfg, sentences, AttentionKernel::Fused)
}

pub fn encode_sentences_with(
    g: &mut Graph,
    params: &Bound,
    cfg: &EncoderConfig,
    sentences: &[Vec<usize>],
    kernel: AttentionKernel,
) -> Result<Encoded> {
    let mut ids = Vec::new();
    let mut positions = Vec::new();
    let mut lengths = Vec::with_capacity(sentences.len());
    for s in sentences {
        if s.len() > cfg.max_sentence_len {
            return Err(Error::SentenceTooLong {
                len: s.len(),
                max: cfg.max_sentence_len,
            });
        }
        ids.extend_from_slice(s);
        positions.extend(0..s.len());
        lengths.push(s.len());
    }
    let spans = Arc::new(AttentionSpans::blocks(&lengths));
    encode_rows(g, params, cfg, &ids, &positions, spans, kernel)
}

/// Encodes a whole document with sliding-window attention. `ids` must already
/// start with the CLS token; the output keeps the CLS row at index 0.
pub fn encode_document_windowed(
    g: &mut Graph,
    params: &Bound,
    cfg: &EncoderConfig,
    ids: &[usize],
) -> Result<(Var, Vec<AttentionMap>)> {
    encode_document_windowed_with(g, params, cfg, ids, AttentionKernel::Fused)
}

pub fn encode_document_windowed_with(
    g: &mut Graph,
    params: &Bound,
    cfg: &EncoderConfig,
    ids: &[usize],
    kernel: AttentionKernel,
) -> Result<(Var, Vec<AttentionMap>)> {
    let spans = Arc::new(AttentionSpans::sliding_with_global(ids.len(), cfg.window));
    encode_with_spans(g, params, cfg, ids, spans, kernel)
}

/// Encodes `ids` (positions `0..n`) under arbitrary attention spans.
pub fn encode_with_spans(
    g: &mut Graph,
    params: &Bound,
    cfg: &EncoderConfig,
    ids: &[usize],
    spans: Arc<AttentionSpans>,
    kernel: AttentionKernel,
) -> Result<(Var, Vec<AttentionMap>)> {
    let positions: Vec<usize> = (0..ids.len()).collect();
    let enc = encode_rows(g, params, cfg, ids, &positions, spans, kernel)?;
    let maps = enc
        .attention_nodes
        .iter()
        .filter_map(|v| g.attention_map(*v).cloned())
        .collect();
    Ok((enc.embeddings, maps))
}

/// CLS-row attention of the final layer over the non-CLS positions,
/// combined across heads and renormalised to sum to one.
pub fn cls_global_attention_scores(maps: &[AttentionMap], reduction: HeadReduction) -> Result<Vec<f64>> {
    let last = maps
        .last()
        .ok_or_else(|| Error::Invalid("no attention maps recorded".into()))?;
    let n = last.n_rows();
    if n < 2 {
        return Err(Error::Invalid("document has no tokens besides CLS".into()));
    }
    let heads = last.n_heads();
    let mut combined = vec![0.0; n - 1];
    for hd in 0..heads {
        let row = last.row(hd, 0);
        for (c, p) in combined.iter_mut().zip(&row[1..]) {
            match reduction {
                HeadReduction::Mean => *c += p / heads as f64,
                HeadReduction::Max => *c = c.max(*p),
            }
        }
    }
    let z: f64 = combined.iter().sum();
    if z > 0.0 {
        for c in &mut combined {
            *c /= z;
        }
    } else {
        let u = 1.0 / combined.len() as f64;
        combined.iter_mut().for_each(|c| *c = u);
    }
    Ok(combined)
}

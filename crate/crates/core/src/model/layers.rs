//! Building blocks: linear projections, multi-head attention, transformer
//! encoder/decoder layers, gaussian MLP heads and positional encoding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Graph, ParamId, ParamStore};
use crate::tensor::{Tensor, TensorError, TensorId};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Additive mask value; exp underflows to exactly zero weight.
pub const MASK_NEG: f64 = -1e30;

fn uniform_fan_in(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data)
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), uniform_fan_in(rng, fan_in, fan_out)),
            b: store.add(format!("{name}.b"), Tensor::zeros(1, fan_out)),
        }
    }

    pub fn forward(&self, g: &Graph, x: TensorId) -> Result<TensorId, TensorError> {
        let h = g.tape.matmul(x, g.p(self.w))?;
        g.tape.add_row(h, g.p(self.b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNormParams {
            gain: store.add(
                format!("{name}.gain"),
                Tensor::new(vec![1, width], vec![1.0; width]),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, width)),
        }
    }

    pub fn forward(&self, g: &Graph, x: TensorId) -> Result<TensorId, TensorError> {
        g.tape
            .layer_norm(x, g.p(self.gain), g.p(self.bias), LAYER_NORM_EPS)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize) -> Self {
        AttentionParams {
            wq: Linear::new(store, rng, &format!("{name}.q"), d, d),
            wk: Linear::new(store, rng, &format!("{name}.k"), d, d),
            wv: Linear::new(store, rng, &format!("{name}.v"), d, d),
            wo: Linear::new(store, rng, &format!("{name}.o"), d, d),
            heads,
        }
    }
}

/// Lower-triangular additive mask: position i may attend to j <= i.
pub fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            data[i * n + j] = MASK_NEG;
        }
    }
    Tensor::new(vec![n, n], data)
}

/// Scaled dot-product attention over `heads` slices of the embedding,
/// concatenated and projected. `mask` is added to the score matrix before
/// the softmax; masked positions get exactly zero weight.
pub fn multi_head_attention(
    g: &Graph,
    q_in: TensorId,
    k_in: TensorId,
    v_in: TensorId,
    p: &AttentionParams,
    mask: Option<&Tensor>,
) -> Result<TensorId, TensorError> {
    let t = g.tape;
    let q = p.wq.forward(g, q_in)?;
    let k = p.wk.forward(g, k_in)?;
    let v = p.wv.forward(g, v_in)?;
    let d = t.shape(q)[1];
    let dh = d / p.heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut heads_out = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = t.slice_cols(q, lo, hi)?;
        let kh = t.slice_cols(k, lo, hi)?;
        let vh = t.slice_cols(v, lo, hi)?;
        let scores = t.scale(t.matmul(qh, t.transpose(kh))?, scale);
        let scores = match mask {
            Some(m) => t.add(scores, t.leaf(m.clone()))?,
            None => scores,
        };
        let attn = t.softmax(scores, 1)?;
        heads_out.push(t.matmul(attn, vh)?);
    }
    let merged = t.concat(&heads_out, 1)?;
    p.wo.forward(g, merged)
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, ff: usize) -> Self {
        FeedForward {
            w1: Linear::new(store, rng, &format!("{name}.ff1"), d, ff),
            w2: Linear::new(store, rng, &format!("{name}.ff2"), ff, d),
        }
    }

    pub fn forward(&self, g: &Graph, x: TensorId) -> Result<TensorId, TensorError> {
        let h = g.tape.relu(self.w1.forward(g, x)?);
        self.w2.forward(g, h)
    }
}

/// Self-attention plus feed-forward, each with residual and layer norm.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub ff: FeedForward,
    pub ln2: LayerNormParams,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
        ff: usize,
    ) -> Self {
        EncoderLayer {
            attn: AttentionParams::new(store, rng, &format!("{name}.attn"), d, heads),
            ln1: LayerNormParams::new(store, &format!("{name}.ln1"), d),
            ff: FeedForward::new(store, rng, name, d, ff),
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), d),
        }
    }

    pub fn forward(
        &self,
        g: &Graph,
        x: TensorId,
        mask: Option<&Tensor>,
    ) -> Result<TensorId, TensorError> {
        let a = multi_head_attention(g, x, x, x, &self.attn, mask)?;
        let x = self.ln1.forward(g, g.tape.add(x, a)?)?;
        let f = self.ff.forward(g, x)?;
        self.ln2.forward(g, g.tape.add(x, f)?)
    }
}

/// Causal self-attention, cross-attention over the encoder memory, then
/// feed-forward; residual + layer norm around each sublayer.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ff: FeedForward,
    pub ln3: LayerNormParams,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
        ff: usize,
    ) -> Self {
        DecoderLayer {
            self_attn: AttentionParams::new(store, rng, &format!("{name}.self"), d, heads),
            ln1: LayerNormParams::new(store, &format!("{name}.ln1"), d),
            cross_attn: AttentionParams::new(store, rng, &format!("{name}.cross"), d, heads),
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), d),
            ff: FeedForward::new(store, rng, name, d, ff),
            ln3: LayerNormParams::new(store, &format!("{name}.ln3"), d),
        }
    }

    pub fn forward(
        &self,
        g: &Graph,
        x: TensorId,
        memory: TensorId,
        mask: &Tensor,
    ) -> Result<TensorId, TensorError> {
        let a = multi_head_attention(g, x, x, x, &self.self_attn, Some(mask))?;
        let x = self.ln1.forward(g, g.tape.add(x, a)?)?;
        let c = multi_head_attention(g, x, memory, memory, &self.cross_attn, None)?;
        let x = self.ln2.forward(g, g.tape.add(x, c)?)?;
        let f = self.ff.forward(g, x)?;
        self.ln3.forward(g, g.tape.add(x, f)?)
    }
}

/// Two-layer MLP mapping a feature row to diagonal gaussian parameters
/// (mean, log-variance).
#[derive(Debug, Clone, Copy)]
pub struct GaussHead {
    pub hidden: Linear,
    pub out: Linear,
    pub latent: usize,
}

impl GaussHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, latent: usize) -> Self {
        GaussHead {
            hidden: Linear::new(store, rng, &format!("{name}.h"), d, d),
            out: Linear::new(store, rng, &format!("{name}.out"), d, 2 * latent),
            latent,
        }
    }

    /// Returns (mu, log_variance), each 1×latent.
    pub fn forward(&self, g: &Graph, x: TensorId) -> Result<(TensorId, TensorId), TensorError> {
        let h = g.tape.relu(self.hidden.forward(g, x)?);
        let o = self.out.forward(g, h)?;
        let mu = g.tape.slice_cols(o, 0, self.latent)?;
        let lv = g.tape.slice_cols(o, self.latent, 2 * self.latent)?;
        Ok((mu, lv))
    }
}

/// Timestamp encoding: component d is sin(t/10000^{d/D}) for even d and
/// cos(t/10000^{d/D}) for odd d.
pub fn positional_encoding(t: usize, d_model: usize) -> Vec<f64> {
    assert!(d_model.is_multiple_of(2), "embedding width must be even");
    (0..d_model)
        .map(|d| {
            let angle = t as f64 / 10000f64.powf(d as f64 / d_model as f64);
            if d % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Rows t = 0..len of the positional encoding.
pub fn posenc_matrix(len: usize, d_model: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..len).map(|t| positional_encoding(t, d_model)).collect();
    Tensor::from_rows(&rows)
}

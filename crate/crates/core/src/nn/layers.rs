//! Parameter blocks for the layers the generator and discriminator use.
//!
//! Each block only stores [`ParamId`]s; the values live in the model's
//! [`ParamStore`] and forward passes are recorded on a [`Graph`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::Tensor;

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
pub fn init_uniform<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(rows, cols, bound, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_uniform(input, output, input, rng),
        );
        let bias =
            bias.then(|| store.add(format!("{name}.bias"), init_uniform(1, output, input, rng)));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let xw = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(xw, b)
            }
            None => Ok(xw),
        }
    }
}

/// Normalization over the rows of one candidate set, per feature, with a
/// learned scale and shift. Training and inference use the same statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(1, width, 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, width)),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.batch_norm(x, gamma, beta, self.eps)
    }
}

/// `softmax(q kᵀ / sqrt(d_h)) v`, optionally masking key columns.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let dh = g.shape(q).1;
    if g.shape(k).1 != dh || g.shape(k).0 != g.shape(v).0 {
        return Err(Error::Shape {
            op: "attention",
            left: g.shape(q),
            right: g.shape(k),
        });
    }
    let logits = g.matmul_t(q, k)?;
    let scaled = g.scale(logits, 1.0 / (dh as f64).sqrt())?;
    let weights = g.softmax(scaled, mask)?;
    g.matmul(weights, v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiHeadAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::invalid(format!(
                "model width {width} is not divisible by {heads} heads"
            )));
        }
        let mut mk = |n: &str| {
            store.add(
                format!("{name}.{n}"),
                init_uniform(width, width, width, rng),
            )
        };
        Ok(Self {
            w_q: mk("w_q"),
            w_k: mk("w_k"),
            w_v: mk("w_v"),
            w_o: mk("w_o"),
            heads,
            width,
        })
    }

    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let (_, d) = g.shape(h);
        if d != self.width || d % self.heads != 0 {
            return Err(Error::invalid(format!(
                "model width {d} is not divisible by {} heads",
                self.heads
            )));
        }
        let dh = d / self.heads;
        let wq = g.param(self.w_q);
        let wk = g.param(self.w_k);
        let wv = g.param(self.w_v);
        let q = g.matmul(h, wq)?;
        let k = g.matmul(h, wk)?;
        let v = g.matmul(h, wv)?;
        let mut heads = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let qi = g.slice_cols(q, i * dh, dh)?;
            let ki = g.slice_cols(k, i * dh, dh)?;
            let vi = g.slice_cols(v, i * dh, dh)?;
            heads.push(scaled_dot_attention(g, qi, ki, vi, None)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let wo = g.param(self.w_o);
        g.matmul(cat, wo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.inner"), width, hidden, true, rng),
            outer: Linear::new(store, &format!("{name}.outer"), hidden, width, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h)?;
        self.outer.forward(g, h)
    }
}

/// Self-attention then feed-forward, each followed by a skip connection and batch norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: BatchNorm,
    pub ffn: FeedForward,
    pub norm2: BatchNorm,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.mha"), width, heads, rng)?,
            norm1: BatchNorm::new(store, &format!("{name}.bn1"), width),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), width, ffn_hidden, rng),
            norm2: BatchNorm::new(store, &format!("{name}.bn2"), width),
        })
    }

    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let a = self.attention.forward(g, h)?;
        let skip = g.add(h, a)?;
        let h1 = self.norm1.forward(g, skip)?;
        let f = self.ffn.forward(g, h1)?;
        let skip = g.add(h1, f)?;
        self.norm2.forward(g, skip)
    }
}

/// Single-layer GRU cell:
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `h̃ = tanh(x W_h + (r ⊙ h) U_h + b_h)`, `h' = (1 - z) ⊙ h + z ⊙ h̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruCell {
    pub w_z: Linear,
    pub u_z: Linear,
    pub w_r: Linear,
    pub u_r: Linear,
    pub w_h: Linear,
    pub u_h: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut lin = |n: &str, i: usize, bias: bool| {
            Linear::new(store, &format!("{name}.{n}"), i, hidden, bias, rng)
        };
        Self {
            w_z: lin("w_z", input, true),
            u_z: lin("u_z", hidden, false),
            w_r: lin("w_r", input, true),
            u_r: lin("u_r", hidden, false),
            w_h: lin("w_h", input, true),
            u_h: lin("u_h", hidden, false),
            input,
            hidden,
        }
    }

    /// `x` is `B x input`, `h` is `B x hidden`.
    pub fn forward(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        if g.shape(x).1 != self.input || g.shape(h).1 != self.hidden || g.shape(x).0 != g.shape(h).0
        {
            return Err(Error::Shape {
                op: "gru_cell",
                left: g.shape(x),
                right: g.shape(h),
            });
        }
        let gate = |g: &mut Graph, w: &Linear, u: &Linear, hin: Var| -> Result<Var> {
            let a = w.forward(g, x)?;
            let b = u.forward(g, hin)?;
            g.add(a, b)
        };
        let z = gate(g, &self.w_z, &self.u_z, h)?;
        let z = g.sigmoid(z)?;
        let r = gate(g, &self.w_r, &self.u_r, h)?;
        let r = g.sigmoid(r)?;
        let rh = g.mul(r, h)?;
        let cand = gate(g, &self.w_h, &self.u_h, rh)?;
        let cand = g.tanh(cand)?;
        let keep = g.one_minus(z)?;
        let old = g.mul(keep, h)?;
        let new = g.mul(z, cand)?;
        g.add(old, new)
    }
}

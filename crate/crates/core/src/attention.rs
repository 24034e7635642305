//! Scaled dot-product attention, multi-head projections, and sinusoidal
//! position encodings shared by the spatial and temporal blocks.

use crate::error::{Error, Result};
use crate::params::{Init, ParamBuilder, ParamId, Params};
use crate::tensor::Tensor;

/// Row `p`, channel `2i` is `sin(p / 10000^(2i/C))`, channel `2i+1` the cosine.
pub fn sinusoidal_position_encoding(count: usize, channels: usize) -> Result<Tensor> {
    if channels == 0 || !channels.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "position encoding needs an even channel count, got {channels}"
        )));
    }
    Tensor::new(position_rows(0..count, channels), &[count, channels])
}

/// Encoding rows for arbitrary positions, flattened row-major.
pub(crate) fn position_rows(positions: impl Iterator<Item = usize>, channels: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for p in positions {
        for i in 0..channels / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / channels as f64);
            out.push(angle.sin());
            out.push(angle.cos());
        }
    }
    out
}

/// `softmax(Q Kᵀ / √d) V` over the last two axes. Returns the output and the
/// attention map `[.., n_q, n_k]`.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = *q.shape().last().unwrap_or(&0);
    if k.shape().last() != Some(&d) || k.shape()[..k.ndim() - 1] != v.shape()[..v.ndim() - 1] {
        return Err(Error::ShapeMismatch {
            op: "attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let attn = attention_map(q, k)?;
    Ok((attn.matmul(v)?, attn))
}

pub(crate) fn attention_map(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let nd = k.ndim();
    if nd < 2 {
        return Err(Error::invalid("attention needs at least 2-D inputs"));
    }
    let d = *q.shape().last().unwrap() as f64;
    let logits = q.matmul(&k.transpose(nd - 2, nd - 1)?)?.scale(1.0 / d.sqrt());
    logits.softmax(logits.ndim() - 1)
}

/// Multi-head attention with separate query/key/value projections and an
/// output projection.
///
/// The per-head width is `out_channels / heads` rounded down; when that does
/// not divide evenly the concatenated heads are narrower than
/// `out_channels` and the output projection widens them back.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    heads: usize,
    head_dim: usize,
    in_channels: usize,
    out_channels: usize,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

/// Output of one attention call.
pub struct AttentionOutput {
    /// `[.., n_q, C_out]`
    pub output: Tensor,
    /// Softmax weights `[.., H, n_q, n_k]`, before any global map is added.
    pub weights: Tensor,
}

impl MultiHeadAttention {
    pub fn new(
        b: &mut ParamBuilder,
        in_channels: usize,
        out_channels: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || out_channels / heads == 0 {
            return Err(Error::config(format!(
                "{heads} heads cannot split {out_channels} channels"
            )));
        }
        let head_dim = out_channels / heads;
        let inner = heads * head_dim;
        let mut proj = |name: &str, fan_in: usize, fan_out: usize| -> Result<(ParamId, ParamId)> {
            let init = if name == "o" {
                Init::Branch { fan_in, fan_out }
            } else {
                Init::Xavier { fan_in, fan_out }
            };
            Ok((
                b.param(&format!("w{name}"), &[fan_in, fan_out], init)?,
                b.param(&format!("b{name}"), &[fan_out], Init::Zeros)?,
            ))
        };
        let (wq, bq) = proj("q", in_channels, inner)?;
        let (wk, bk) = proj("k", in_channels, inner)?;
        let (wv, bv) = proj("v", in_channels, inner)?;
        let (wo, bo) = proj("o", inner, out_channels)?;
        Ok(MultiHeadAttention {
            heads,
            head_dim,
            in_channels,
            out_channels,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn query_weights(&self) -> (ParamId, ParamId) {
        (self.wq, self.bq)
    }

    pub fn key_weights(&self) -> (ParamId, ParamId) {
        (self.wk, self.bk)
    }

    pub fn value_weights(&self) -> (ParamId, ParamId) {
        (self.wv, self.bv)
    }

    pub fn output_weights(&self) -> (ParamId, ParamId) {
        (self.wo, self.bo)
    }

    /// `[B, n, H·d] → [B, H, n, d]`
    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n) = (x.shape()[0], x.shape()[1]);
        x.reshape(&[b, n, self.heads, self.head_dim])?
            .permute(&[0, 2, 1, 3])
    }

    fn project(&self, p: &Params, x: &Tensor, w: ParamId, b: ParamId) -> Result<Tensor> {
        self.split_heads(&x.linear(p.get(w), Some(p.get(b)))?)
    }

    /// Self-attention over the second-to-last axis of `x`.
    pub fn forward(&self, p: &Params, x: &Tensor, global: Option<&Tensor>) -> Result<AttentionOutput> {
        self.attend(p, x, x, global)
    }

    /// Queries from `queries`, keys and values from `context`. Leading axes
    /// are batch axes and must agree. When `global` is given it is added to
    /// the softmax weights before they weight the values; it must broadcast
    /// into `[B, H, n_q, n_k]` with `B` the flattened batch.
    pub fn attend(
        &self,
        p: &Params,
        queries: &Tensor,
        context: &Tensor,
        global: Option<&Tensor>,
    ) -> Result<AttentionOutput> {
        let (sq, sc) = (queries.shape(), context.shape());
        let nd = sq.len();
        if nd < 2
            || sc.len() != nd
            || sq[..nd - 2] != sc[..nd - 2]
            || sq[nd - 1] != self.in_channels
            || sc[nd - 1] != self.in_channels
        {
            return Err(Error::ShapeMismatch {
                op: "multi-head attention",
                lhs: sq.to_vec(),
                rhs: sc.to_vec(),
            });
        }
        let lead = &sq[..nd - 2];
        let batch: usize = lead.iter().product();
        let (nq, nk) = (sq[nd - 2], sc[nd - 2]);
        let q_in = queries.reshape(&[batch, nq, self.in_channels])?;
        let c_in = context.reshape(&[batch, nk, self.in_channels])?;

        let q = self.project(p, &q_in, self.wq, self.bq)?;
        let k = self.project(p, &c_in, self.wk, self.bk)?;
        let v = self.project(p, &c_in, self.wv, self.bv)?;
        let weights = attention_map(&q, &k)?;
        let mixed = match global {
            Some(g) => weights.add(g).map_err(|_| Error::ShapeMismatch {
                op: "global attention map",
                lhs: weights.shape().to_vec(),
                rhs: g.shape().to_vec(),
            })?,
            None => weights.clone(),
        };
        let heads = mixed.matmul(&v)?;
        let merged = heads
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch, nq, self.heads * self.head_dim])?;
        let out = merged.linear(p.get(self.wo), Some(p.get(self.bo)))?;

        let mut out_shape = lead.to_vec();
        out_shape.extend([nq, self.out_channels]);
        let mut w_shape = lead.to_vec();
        w_shape.extend([self.heads, nq, nk]);
        Ok(AttentionOutput {
            output: out.reshape(&out_shape)?,
            weights: weights.reshape(&w_shape)?,
        })
    }
}

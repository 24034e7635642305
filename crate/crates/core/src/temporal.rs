//! Temporal blocks: dilated temporal convolution, the vanilla temporal
//! transformer baseline, and the convolution-valued temporal transformer.
//!
//! Inputs are `[n, T, C]` with `n` tokens (joints or parts), each attended
//! independently along time. A block that doubles the channel count also
//! halves `T` with stride 2.

use serde::{Deserialize, Serialize};

use crate::attention::{attention_map, position_rows, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::params::{Init, ParamBuilder, ParamId, Params};
use crate::spatial::feed_forward;
use crate::tensor::Tensor;

/// 1-D convolution along time, same-padded, with dilation and stride.
/// `weight` is `[k·C_in, C_out]`, tap-major.
pub fn dilated_tcn(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    kernel: usize,
    dilation: usize,
    stride: usize,
) -> Result<Tensor> {
    if !matches!(stride, 1 | 2) {
        return Err(Error::invalid(format!("temporal stride must be 1 or 2, got {stride}")));
    }
    x.unfold_time(kernel, dilation, stride)?.linear(weight, bias)
}

#[derive(Clone, Debug)]
pub struct DilatedTcn {
    weight: ParamId,
    bias: ParamId,
    kernel: usize,
    dilation: usize,
    stride: usize,
}

impl DilatedTcn {
    pub fn new(
        b: &mut ParamBuilder,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) || dilation == 0 {
            return Err(Error::config(format!(
                "temporal kernel {kernel} must be odd and dilation {dilation} positive"
            )));
        }
        let fan_in = kernel * in_channels;
        let weight = b.param(
            "w",
            &[fan_in, out_channels],
            Init::Xavier {
                fan_in,
                fan_out: out_channels,
            },
        )?;
        let bias = b.param("b", &[out_channels], Init::Zeros)?;
        Ok(DilatedTcn {
            weight,
            bias,
            kernel,
            dilation,
            stride,
        })
    }

    pub fn weights(&self) -> (ParamId, ParamId) {
        (self.weight, self.bias)
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    /// Frames covered by one output: `(k − 1)·d + 1`.
    pub fn receptive_field(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    pub fn forward(&self, p: &Params, x: &Tensor) -> Result<Tensor> {
        dilated_tcn(
            x,
            p.get(self.weight),
            Some(p.get(self.bias)),
            self.kernel,
            self.dilation,
            self.stride,
        )
    }
}

/// Which temporal block the network uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalKind {
    /// Vanilla multi-head self-attention over frames.
    Basic,
    /// Dilated convolution values without the attention product.
    TcnOnly,
    /// Attention-weighted dilated convolution values.
    #[default]
    Fg,
}

impl std::str::FromStr for TemporalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(TemporalKind::Basic),
            "tcn-only" | "tcn_only" => Ok(TemporalKind::TcnOnly),
            "fg" => Ok(TemporalKind::Fg),
            other => Err(Error::config(format!("unknown temporal kind `{other}`"))),
        }
    }
}

/// Replacement attention used to probe the block algebra.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionOverride {
    Identity,
    Uniform,
    /// Drop the attention term entirely.
    Zero,
}

pub struct TemporalOutput {
    /// `[n, T', C']`
    pub features: Tensor,
    /// Softmax maps `[n, H, T', T']` when the block computed attention.
    pub attention: Option<Tensor>,
}

fn stride_for(in_channels: usize, out_channels: usize) -> Result<usize> {
    if out_channels == in_channels {
        Ok(1)
    } else if out_channels == 2 * in_channels {
        Ok(2)
    } else {
        Err(Error::config(format!(
            "temporal block must keep or double channels, got {in_channels} -> {out_channels}"
        )))
    }
}

fn check_temporal_input(x: &Tensor, channels: usize, stride: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() != 3 || s[2] != channels {
        return Err(Error::ShapeMismatch {
            op: "temporal block input [n, T, C]",
            lhs: s.to_vec(),
            rhs: vec![channels],
        });
    }
    if stride == 2 && !s[1].is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "downsampling block needs an even frame count, got {}",
            s[1]
        )));
    }
    Ok((s[0], s[1]))
}

fn add_time_encoding(x: &Tensor, frames: usize, channels: usize) -> Result<Tensor> {
    x.add(&Tensor::new(position_rows(0..frames, channels), &[frames, channels])?)
}

fn every_other_frame(x: &Tensor, frames: usize) -> Result<Tensor> {
    let keep: Vec<usize> = (0..frames).step_by(2).collect();
    x.gather(1, &keep)
}

/// Residual path: identity, or a linear map of the subsampled input when
/// the block changes shape.
#[derive(Clone, Debug)]
struct Shortcut(Option<(ParamId, ParamId)>);

impl Shortcut {
    fn new(b: &mut ParamBuilder, in_channels: usize, out_channels: usize) -> Result<Self> {
        if in_channels == out_channels {
            return Ok(Shortcut(None));
        }
        Ok(Shortcut(Some((
            b.param(
                "shortcut.w",
                &[in_channels, out_channels],
                Init::Xavier {
                    fan_in: in_channels,
                    fan_out: out_channels,
                },
            )?,
            b.param("shortcut.b", &[out_channels], Init::Zeros)?,
        ))))
    }

    fn apply(&self, p: &Params, x: &Tensor) -> Result<Tensor> {
        match self.0 {
            None => Ok(x.clone()),
            Some((w, b)) => x.linear(p.get(w), Some(p.get(b))),
        }
    }
}

/// Temporal transformer whose values come from per-head dilated
/// convolutions:
///
/// `head_h = [softmax(Q_h K_hᵀ/√d) · TCN_h(X)] W_h + TCN_h(X)`
/// `out = LeakyReLU(Concat_h(head_h) W_O) + shortcut(X)`
#[derive(Clone, Debug)]
pub struct FgTformer {
    in_channels: usize,
    out_channels: usize,
    heads: usize,
    head_dim: usize,
    stride: usize,
    tcns: Vec<DilatedTcn>,
    /// Query, key and per-head output projections; absent in TCN-only mode.
    attention: Option<FgAttention>,
    out_proj: ParamId,
    shortcut: Shortcut,
    position_encoding: bool,
    slope: f64,
}

#[derive(Clone, Debug)]
struct FgAttention {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    /// `[H, d, d]`
    head_proj: ParamId,
}

impl FgTformer {
    /// One head per entry of `dilations`.
    pub fn new(
        b: &mut ParamBuilder,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilations: &[usize],
        with_attention: bool,
        slope: f64,
    ) -> Result<Self> {
        let heads = dilations.len();
        if heads == 0 || !out_channels.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "{heads} temporal heads must evenly split {out_channels} channels"
            )));
        }
        if !in_channels.is_multiple_of(2) {
            return Err(Error::config(format!(
                "temporal channels must be even for position encoding, got {in_channels}"
            )));
        }
        let stride = stride_for(in_channels, out_channels)?;
        let head_dim = out_channels / heads;
        let tcns = dilations
            .iter()
            .enumerate()
            .map(|(h, &d)| {
                b.scope(&format!("tcn{h}"), |b| {
                    DilatedTcn::new(b, in_channels, head_dim, kernel, d, stride)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let attention = if with_attention {
            let xavier = Init::Xavier {
                fan_in: in_channels,
                fan_out: out_channels,
            };
            Some(FgAttention {
                wq: b.param("wq", &[in_channels, out_channels], xavier)?,
                bq: b.param("bq", &[out_channels], Init::Zeros)?,
                wk: b.param("wk", &[in_channels, out_channels], xavier)?,
                bk: b.param("bk", &[out_channels], Init::Zeros)?,
                head_proj: b.param(
                    "wh",
                    &[heads, head_dim, head_dim],
                    Init::Xavier {
                        fan_in: head_dim,
                        fan_out: head_dim,
                    },
                )?,
            })
        } else {
            None
        };
        let out_proj = b.param(
            "wo",
            &[out_channels, out_channels],
            Init::Branch {
                fan_in: out_channels,
                fan_out: out_channels,
            },
        )?;
        let shortcut = Shortcut::new(b, in_channels, out_channels)?;
        Ok(FgTformer {
            in_channels,
            out_channels,
            heads,
            head_dim,
            stride,
            tcns,
            attention,
            out_proj,
            shortcut,
            position_encoding: true,
            slope,
        })
    }

    /// Disable the temporal position encoding (used to isolate block algebra).
    pub fn without_position_encoding(mut self) -> Self {
        self.position_encoding = false;
        self
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn tcns(&self) -> &[DilatedTcn] {
        &self.tcns
    }

    pub fn query_weights(&self) -> Option<(ParamId, ParamId)> {
        self.attention.as_ref().map(|a| (a.wq, a.bq))
    }

    pub fn key_weights(&self) -> Option<(ParamId, ParamId)> {
        self.attention.as_ref().map(|a| (a.wk, a.bk))
    }

    pub fn head_projection(&self) -> Option<ParamId> {
        self.attention.as_ref().map(|a| a.head_proj)
    }

    pub fn out_projection(&self) -> ParamId {
        self.out_proj
    }

    pub fn shortcut(&self) -> Option<(ParamId, ParamId)> {
        self.shortcut.0
    }

    pub fn forward(&self, p: &Params, x: &Tensor) -> Result<TemporalOutput> {
        self.forward_with(p, x, None)
    }

    pub fn forward_with(
        &self,
        p: &Params,
        x: &Tensor,
        replace: Option<AttentionOverride>,
    ) -> Result<TemporalOutput> {
        let (n, t) = check_temporal_input(x, self.in_channels, self.stride)?;
        let t_out = t.div_ceil(self.stride);
        let z = if self.position_encoding {
            add_time_encoding(x, t, self.in_channels)?
        } else {
            x.clone()
        };
        let per_head = self
            .tcns
            .iter()
            .map(|tcn| tcn.forward(p, &z))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = per_head.iter().collect();
        // [n, H, T', d]
        let values = Tensor::concat(&refs, 2)?
            .reshape(&[n, t_out, self.heads, self.head_dim])?
            .permute(&[0, 2, 1, 3])?;

        let mut recorded = None;
        let heads = match (&self.attention, replace) {
            (None, _) | (Some(_), Some(AttentionOverride::Zero)) => values,
            (Some(att), replace) => {
                let mixed = match replace {
                    Some(AttentionOverride::Identity) => values.clone(),
                    Some(AttentionOverride::Uniform) => {
                        Tensor::full(&[t_out, t_out], 1.0 / t_out as f64).matmul(&values)?
                    }
                    _ => {
                        let zs = if self.stride == 2 {
                            every_other_frame(&z, t)?
                        } else {
                            z.clone()
                        };
                        let split = |w: ParamId, b: ParamId| -> Result<Tensor> {
                            zs.linear(p.get(w), Some(p.get(b)))?
                                .reshape(&[n, t_out, self.heads, self.head_dim])?
                                .permute(&[0, 2, 1, 3])
                        };
                        let q = split(att.wq, att.bq)?;
                        let k = split(att.wk, att.bk)?;
                        let a = attention_map(&q, &k)?;
                        let mixed = a.matmul(&values)?;
                        recorded = Some(a);
                        mixed
                    }
                };
                mixed.matmul(p.get(att.head_proj))?.add(&values)?
            }
        };
        let merged = heads
            .permute(&[0, 2, 1, 3])?
            .reshape(&[n, t_out, self.out_channels])?;
        let y = merged.linear(p.get(self.out_proj), None)?.leaky_relu(self.slope);
        let residual = if self.stride == 2 {
            every_other_frame(x, t)?
        } else {
            x.clone()
        };
        let out = y.add(&self.shortcut.apply(p, &residual)?)?;
        Ok(TemporalOutput {
            features: out,
            attention: recorded,
        })
    }
}

/// Vanilla temporal transformer: self-attention over frames with linear
/// values, residual, then a Leaky ReLU feed-forward with residual.
#[derive(Clone, Debug)]
pub struct BasicTformer {
    in_channels: usize,
    stride: usize,
    mha: MultiHeadAttention,
    shortcut: Shortcut,
    ffn_w: ParamId,
    ffn_b: ParamId,
    slope: f64,
}

impl BasicTformer {
    pub fn new(
        b: &mut ParamBuilder,
        in_channels: usize,
        out_channels: usize,
        heads: usize,
        slope: f64,
    ) -> Result<Self> {
        if !in_channels.is_multiple_of(2) {
            return Err(Error::config(format!(
                "temporal channels must be even for position encoding, got {in_channels}"
            )));
        }
        let stride = stride_for(in_channels, out_channels)?;
        let mha = b.scope("attn", |b| {
            MultiHeadAttention::new(b, in_channels, out_channels, heads)
        })?;
        let shortcut = Shortcut::new(b, in_channels, out_channels)?;
        let ffn_w = b.param(
            "ffn.w",
            &[out_channels, out_channels],
            Init::Branch {
                fan_in: out_channels,
                fan_out: out_channels,
            },
        )?;
        let ffn_b = b.param("ffn.b", &[out_channels], Init::Zeros)?;
        Ok(BasicTformer {
            in_channels,
            stride,
            mha,
            shortcut,
            ffn_w,
            ffn_b,
            slope,
        })
    }

    pub fn attention(&self) -> &MultiHeadAttention {
        &self.mha
    }

    pub fn ffn(&self) -> (ParamId, ParamId) {
        (self.ffn_w, self.ffn_b)
    }

    pub fn shortcut(&self) -> Option<(ParamId, ParamId)> {
        self.shortcut.0
    }

    pub fn forward(&self, p: &Params, x: &Tensor) -> Result<TemporalOutput> {
        let (_, t) = check_temporal_input(x, self.in_channels, self.stride)?;
        let z = add_time_encoding(x, t, self.in_channels)?;
        let zs = if self.stride == 2 {
            every_other_frame(&z, t)?
        } else {
            z
        };
        let attn = self.mha.forward(p, &zs, None)?;
        let y = self.shortcut.apply(p, &zs)?.add(&attn.output)?;
        let out = y.add(&feed_forward(p, &y, self.ffn_w, self.ffn_b, self.slope)?)?;
        Ok(TemporalOutput {
            features: out,
            attention: Some(attn.weights),
        })
    }
}

/// Temporal block selected by [`TemporalKind`].
#[derive(Clone, Debug)]
pub enum TemporalBlock {
    Basic(BasicTformer),
    Fg(FgTformer),
}

impl TemporalBlock {
    pub fn new(
        b: &mut ParamBuilder,
        kind: TemporalKind,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilations: &[usize],
        slope: f64,
    ) -> Result<Self> {
        Ok(match kind {
            TemporalKind::Basic => TemporalBlock::Basic(BasicTformer::new(
                b,
                in_channels,
                out_channels,
                dilations.len(),
                slope,
            )?),
            TemporalKind::TcnOnly | TemporalKind::Fg => TemporalBlock::Fg(FgTformer::new(
                b,
                in_channels,
                out_channels,
                kernel,
                dilations,
                kind == TemporalKind::Fg,
                slope,
            )?),
        })
    }

    pub fn forward(&self, p: &Params, x: &Tensor) -> Result<TemporalOutput> {
        match self {
            TemporalBlock::Basic(b) => b.forward(p, x),
            TemporalBlock::Fg(b) => b.forward(p, x),
        }
    }
}

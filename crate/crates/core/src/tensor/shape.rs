use super::{check_axis, numel, split_at_axis, GradFn, Tensor};
use crate::error::{Error, Result};

/// Numpy-style broadcast of two leading (batch) shapes.
pub fn broadcast_leading(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// For each flat index of `lead`, the matching flat batch index in `a` and `b`.
pub(crate) fn leading_index_map(lead: &[usize], a: &[usize], b: &[usize]) -> Vec<(usize, usize)> {
    let strides = |s: &[usize]| {
        let mut st = vec![0usize; lead.len()];
        let off = lead.len() - s.len();
        let mut acc = 1;
        for j in (0..s.len()).rev() {
            st[j + off] = if s[j] == 1 { 0 } else { acc };
            acc *= s[j];
        }
        st
    };
    let (sa, sb) = (strides(a), strides(b));
    let total = numel(lead);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; lead.len()];
    for _ in 0..total {
        let ia = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ib = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        out.push((ia, ib));
        for ax in (0..lead.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < lead[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

struct ReshapeGrad;

impl GradFn for ReshapeGrad {
    fn backward(&self, g: &[f64], _inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

/// Gradient of any op whose output element `i` is input element `src[i]`
/// (or zero padding when `None`).
struct IndexGrad {
    src: Vec<Option<usize>>,
}

impl GradFn for IndexGrad {
    fn backward(&self, g: &[f64], inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; inputs[0].numel()];
        for (gi, s) in g.iter().zip(&self.src) {
            if let Some(s) = s {
                gx[*s] += gi;
            }
        }
        vec![Some(gx)]
    }
}

struct PermuteGrad {
    /// shape of the permuted output
    out_shape: Vec<usize>,
    /// inverse permutation
    inverse: Vec<usize>,
}

impl GradFn for PermuteGrad {
    fn backward(&self, g: &[f64], _inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(permute_data(g, &self.out_shape, &self.inverse))]
    }
}

/// Copy `x` (row-major, `shape`) into the layout whose axis `i` is input
/// axis `axes[i]`. Trailing axes that stay in place are copied as blocks.
fn permute_data(x: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let nd = shape.len();
    let mut kept = 0;
    while kept < nd && axes[nd - 1 - kept] == nd - 1 - kept {
        kept += 1;
    }
    if kept == nd {
        return x.to_vec();
    }
    let block: usize = shape[nd - kept..].iter().product();
    let outer = nd - kept;
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd - 1).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes[..outer].iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes[..outer].iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; outer];
    let mut offset = 0usize;
    for _ in 0..x.len() / block {
        out.extend_from_slice(&x[offset..offset + block]);
        for ax in (0..outer).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

struct UnfoldGrad {
    n: usize,
    t: usize,
    c: usize,
    kernel: usize,
    dilation: usize,
    stride: usize,
}

impl UnfoldGrad {
    /// Input frame read by output frame `to` at `tap`, if inside the sequence.
    fn source(&self, to: usize, tap: usize) -> Option<usize> {
        let center = (self.kernel - 1) / 2;
        let ti = (self.stride * to + tap * self.dilation).checked_sub(center * self.dilation)?;
        (ti < self.t).then_some(ti)
    }
}

impl GradFn for UnfoldGrad {
    fn backward(&self, g: &[f64], _inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (t, c, k) = (self.t, self.c, self.kernel);
        let t_out = t.div_ceil(self.stride);
        let mut gx = vec![0.0; self.n * t * c];
        for b in 0..self.n {
            for to in 0..t_out {
                for tap in 0..k {
                    if let Some(ti) = self.source(to, tap) {
                        let src = &g[((b * t_out + to) * k + tap) * c..][..c];
                        let dst = &mut gx[(b * t + ti) * c..][..c];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

struct ConcatGrad {
    outer: usize,
    /// per input: (chunk size along the flattened axis·inner)
    chunks: Vec<usize>,
}

impl GradFn for ConcatGrad {
    fn backward(&self, g: &[f64], inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let row: usize = self.chunks.iter().sum();
        let mut grads: Vec<Option<Vec<f64>>> = inputs
            .iter()
            .map(|t| t.requires_grad().then(|| Vec::with_capacity(t.numel())))
            .collect();
        for o in 0..self.outer {
            let mut off = o * row;
            for (gi, &c) in grads.iter_mut().zip(&self.chunks) {
                if let Some(gi) = gi {
                    gi.extend_from_slice(&g[off..off + c]);
                }
                off += c;
            }
        }
        grads
    }
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            &[self],
            ReshapeGrad,
        ))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd
            || axes
                .iter()
                .any(|&a| a >= nd || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::invalid(format!(
                "permutation {axes:?} invalid for shape {:?}",
                self.shape()
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let mut inverse = vec![0; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let data = permute_data(self.data(), self.shape(), axes);
        Ok(Tensor::from_op(
            data,
            out_shape.clone(),
            &[self],
            PermuteGrad { out_shape, inverse },
        ))
    }

    /// Swap two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        check_axis(a, self.shape())?;
        check_axis(b, self.shape())?;
        let mut axes: Vec<usize> = (0..self.ndim()).collect();
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Join tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        check_axis(axis, first.shape())?;
        for p in &parts[1..] {
            let ok = p.ndim() == first.ndim()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_at_axis(first.shape(), axis);
        let chunks: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
        for o in 0..outer {
            for (p, &c) in parts.iter().zip(&chunks) {
                data.extend_from_slice(&p.data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(
            data,
            shape,
            parts,
            ConcatGrad { outer, chunks },
        ))
    }

    /// Select slices along `axis`: output slice `j` is input slice
    /// `indices[j]`. Repeated indices are allowed; gradients scatter-add.
    pub fn gather(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        check_axis(axis, self.shape())?;
        if indices.is_empty() {
            return Err(Error::invalid("gather with no indices"));
        }
        let (outer, extent, inner) = split_at_axis(self.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(Error::IndexOutOfRange { index: bad, extent });
        }
        let mut src = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &j in indices {
                let base = (o * extent + j) * inner;
                src.extend((base..base + inner).map(Some));
            }
        }
        let x = self.data();
        let data = src.iter().map(|s| x[s.unwrap()]).collect();
        let mut shape = self.shape().to_vec();
        shape[axis] = indices.len();
        Ok(Tensor::from_op(data, shape, &[self], IndexGrad { src }))
    }

    /// Temporal im2col for `[n, T, C]` input: output `[n, T', k·C]` where
    /// row `t` holds, tap-major, the frames `stride·t + (tap − (k−1)/2)·dilation`
    /// (zero outside `[0, T)`), and `T' = ceil(T / stride)`.
    pub fn unfold_time(&self, kernel: usize, dilation: usize, stride: usize) -> Result<Tensor> {
        if self.ndim() != 3 {
            return Err(Error::invalid(format!(
                "unfold_time expects [n, T, C], got {:?}",
                self.shape()
            )));
        }
        if kernel.is_multiple_of(2) || dilation == 0 || stride == 0 {
            return Err(Error::invalid(format!(
                "temporal kernel {kernel} must be odd with positive dilation {dilation} and stride {stride}"
            )));
        }
        let (n, t, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let grad = UnfoldGrad {
            n,
            t,
            c,
            kernel,
            dilation,
            stride,
        };
        let t_out = t.div_ceil(stride);
        let x = self.data();
        let mut data = vec![0.0; n * t_out * kernel * c];
        for b in 0..n {
            for to in 0..t_out {
                for tap in 0..kernel {
                    if let Some(ti) = grad.source(to, tap) {
                        data[((b * t_out + to) * kernel + tap) * c..][..c]
                            .copy_from_slice(&x[(b * t + ti) * c..][..c]);
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            data,
            vec![n, t_out, kernel * c],
            &[self],
            grad,
        ))
    }
}

use super::{check_axis, split_at_axis, GradFn, Tensor};
use crate::error::{Error, Result};

struct SumGrad;

impl GradFn for SumGrad {
    fn backward(&self, g: &[f64], inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0]; inputs[0].numel()])]
    }
}

struct MeanAxisGrad {
    outer: usize,
    extent: usize,
    inner: usize,
}

impl GradFn for MeanAxisGrad {
    fn backward(&self, g: &[f64], _inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (o, e, i) = (self.outer, self.extent, self.inner);
        let scale = 1.0 / e as f64;
        let mut gx = vec![0.0; o * e * i];
        for a in 0..o {
            for b in 0..e {
                for c in 0..i {
                    gx[(a * e + b) * i + c] = g[a * i + c] * scale;
                }
            }
        }
        vec![Some(gx)]
    }
}

struct SoftmaxGrad {
    outer: usize,
    extent: usize,
    inner: usize,
}

impl GradFn for SoftmaxGrad {
    fn backward(&self, g: &[f64], _inputs: &[Tensor], y: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (o, e, i) = (self.outer, self.extent, self.inner);
        let mut gx = vec![0.0; y.len()];
        for a in 0..o {
            for c in 0..i {
                let at = |b: usize| (a * e + b) * i + c;
                let dot: f64 = (0..e).map(|b| g[at(b)] * y[at(b)]).sum();
                for b in 0..e {
                    gx[at(b)] = y[at(b)] * (g[at(b)] - dot);
                }
            }
        }
        vec![Some(gx)]
    }
}

struct CrossEntropyGrad {
    probs: Vec<f64>,
    label: usize,
}

impl GradFn for CrossEntropyGrad {
    fn backward(&self, g: &[f64], _inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let grad = self
            .probs
            .iter()
            .enumerate()
            .map(|(j, p)| g[0] * (p - if j == self.label { 1.0 } else { 0.0 }))
            .collect();
        vec![Some(grad)]
    }
}

/// Max-subtracted softmax of one contiguous or strided slice, written in place.
fn softmax_slice(x: &[f64], out: &mut [f64], idx: impl Fn(usize) -> usize, len: usize) {
    let max = (0..len).map(|b| x[idx(b)]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for b in 0..len {
        let e = (x[idx(b)] - max).exp();
        out[idx(b)] = e;
        total += e;
    }
    for b in 0..len {
        out[idx(b)] /= total;
    }
}

impl Tensor {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![s], vec![1], &[self], SumGrad)
    }

    /// Mean over `axis`, which is removed from the shape (a 1-D input
    /// reduces to shape `[1]`).
    pub fn mean(&self, axis: usize) -> Result<Tensor> {
        check_axis(axis, self.shape())?;
        let (outer, extent, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut data = vec![0.0; outer * inner];
        for a in 0..outer {
            for b in 0..extent {
                let row = &x[(a * extent + b) * inner..(a * extent + b + 1) * inner];
                data[a * inner..(a + 1) * inner]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(d, v)| *d += v);
            }
        }
        let scale = 1.0 / extent as f64;
        data.iter_mut().for_each(|d| *d *= scale);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_op(
            data,
            shape,
            &[self],
            MeanAxisGrad {
                outer,
                extent,
                inner,
            },
        ))
    }

    /// Normalized exponentials along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(axis, self.shape())?;
        let (outer, extent, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut data = vec![0.0; x.len()];
        for a in 0..outer {
            for c in 0..inner {
                softmax_slice(x, &mut data, |b| (a * extent + b) * inner + c, extent);
            }
        }
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self],
            SoftmaxGrad {
                outer,
                extent,
                inner,
            },
        ))
    }

    /// `−log softmax(self)[label]` for a 1-D logit vector.
    pub fn cross_entropy(&self, label: usize) -> Result<Tensor> {
        if self.ndim() != 1 {
            return Err(Error::invalid(format!(
                "cross entropy expects 1-D logits, got {:?}",
                self.shape()
            )));
        }
        let classes = self.numel();
        if label >= classes {
            return Err(Error::IndexOutOfRange {
                index: label,
                extent: classes,
            });
        }
        let x = self.data();
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = x.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + total.ln();
        let probs = x.iter().map(|v| (v - log_z).exp()).collect();
        Ok(Tensor::from_op(
            vec![log_z - x[label]],
            vec![1],
            &[self],
            CrossEntropyGrad { probs, label },
        ))
    }
}

use super::{numel, GradFn, Tensor};
use crate::error::{Error, Result};

/// How the right operand of a binary op maps onto the output.
#[derive(Clone)]
enum RhsMap {
    Same,
    /// rhs equals a trailing suffix of lhs: index `i % len`.
    Suffix(usize),
    /// General leading-dim broadcast, one rhs index per output element.
    Table(Vec<usize>),
}

impl RhsMap {
    /// `rhs` broadcasts into `lhs`: right-aligned, each present dim must equal
    /// the lhs dim, or be 1 when it sits among the leading (batch) dims.
    fn build(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        };
        if lhs == rhs {
            return Ok(RhsMap::Same);
        }
        if rhs.len() > lhs.len() {
            return Err(mismatch());
        }
        let offset = lhs.len() - rhs.len();
        if lhs[offset..] == *rhs {
            return Ok(RhsMap::Suffix(numel(rhs)));
        }
        let batch_dims = lhs.len().saturating_sub(2);
        let mut strides = vec![0usize; lhs.len()];
        let mut stride = 1;
        for (j, &d) in rhs.iter().enumerate().rev() {
            let i = j + offset;
            if d == lhs[i] {
                strides[i] = stride;
            } else if d == 1 && i < batch_dims {
                strides[i] = 0;
            } else {
                return Err(mismatch());
            }
            stride *= d;
        }
        let total = numel(lhs);
        let mut table = Vec::with_capacity(total);
        let mut index = vec![0usize; lhs.len()];
        for _ in 0..total {
            table.push(index.iter().zip(&strides).map(|(a, s)| a * s).sum());
            for ax in (0..lhs.len()).rev() {
                index[ax] += 1;
                if index[ax] < lhs[ax] {
                    break;
                }
                index[ax] = 0;
            }
        }
        Ok(RhsMap::Table(table))
    }

    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            RhsMap::Same => i,
            RhsMap::Suffix(len) => i % len,
            RhsMap::Table(t) => t[i],
        }
    }

    /// Sum an output-shaped gradient down to the rhs shape.
    fn reduce(&self, grad: &[f64], rhs_len: usize) -> Vec<f64> {
        match self {
            RhsMap::Same => grad.to_vec(),
            _ => {
                let mut out = vec![0.0; rhs_len];
                for (i, g) in grad.iter().enumerate() {
                    out[self.at(i)] += g;
                }
                out
            }
        }
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

struct BinaryGrad {
    kind: BinaryKind,
    map: RhsMap,
}

impl GradFn for BinaryGrad {
    fn backward(&self, g: &[f64], inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let (ga, gb) = match self.kind {
            BinaryKind::Add => (g.to_vec(), self.map.reduce(g, b.numel())),
            BinaryKind::Sub => {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                (g.to_vec(), self.map.reduce(&neg, b.numel()))
            }
            BinaryKind::Mul => {
                let ad = a.data();
                let bd = b.data();
                let ga = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * bd[self.map.at(i)])
                    .collect();
                let prod: Vec<f64> = g.iter().zip(ad).map(|(gi, ai)| gi * ai).collect();
                (ga, self.map.reduce(&prod, b.numel()))
            }
        };
        vec![
            a.requires_grad().then_some(ga),
            b.requires_grad().then_some(gb),
        ]
    }
}

struct MapGrad<F: Fn(f64, f64, f64) -> f64> {
    /// d out / d in, given (input, output, upstream grad).
    f: F,
}

impl<F: Fn(f64, f64, f64) -> f64> GradFn for MapGrad<F> {
    fn backward(&self, g: &[f64], inputs: &[Tensor], out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0].data();
        let grad = g
            .iter()
            .zip(x)
            .zip(out)
            .map(|((gi, xi), yi)| (self.f)(*xi, *yi, *gi))
            .collect();
        vec![Some(grad)]
    }
}

struct ScaleByGrad {
    row: usize,
}

impl GradFn for ScaleByGrad {
    fn backward(&self, g: &[f64], inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, s) = (inputs[0].data(), inputs[1].data());
        let gx = inputs[0].requires_grad().then(|| {
            g.iter()
                .enumerate()
                .map(|(i, gi)| gi * s[i / self.row])
                .collect()
        });
        let gs = inputs[1].requires_grad().then(|| {
            g.chunks(self.row)
                .zip(x.chunks(self.row))
                .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                .collect()
        });
        vec![gx, gs]
    }
}

struct NormalizeGrad {
    norm: f64,
}

impl GradFn for NormalizeGrad {
    fn backward(&self, g: &[f64], _inputs: &[Tensor], out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let dot: f64 = g.iter().zip(out).map(|(a, b)| a * b).sum();
        let grad = g
            .iter()
            .zip(out)
            .map(|(gi, yi)| (gi - yi * dot) / self.norm)
            .collect();
        vec![Some(grad)]
    }
}

impl Tensor {
    fn binary(&self, other: &Tensor, kind: BinaryKind, op: &'static str) -> Result<Tensor> {
        let map = RhsMap::build(op, self.shape(), other.shape())?;
        let a = self.data();
        let b = other.data();
        let data: Vec<f64> = match kind {
            BinaryKind::Add => a.iter().enumerate().map(|(i, x)| x + b[map.at(i)]).collect(),
            BinaryKind::Sub => a.iter().enumerate().map(|(i, x)| x - b[map.at(i)]).collect(),
            BinaryKind::Mul => a.iter().enumerate().map(|(i, x)| x * b[map.at(i)]).collect(),
        };
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self, other],
            BinaryGrad { kind, map },
        ))
    }

    /// Elementwise sum. `other` may omit or size-1 leading batch dims.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Add, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Mul, "mul")
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * factor).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self],
            MapGrad {
                f: move |_, _, g| g * factor,
            },
        )
    }

    /// `x[.., c] * s[..]`: multiply each innermost row by one scalar.
    pub fn scale_by(&self, scales: &Tensor) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 || scales.shape() != &self.shape()[..nd - 1] {
            return Err(Error::ShapeMismatch {
                op: "scale_by",
                lhs: self.shape().to_vec(),
                rhs: scales.shape().to_vec(),
            });
        }
        let row = self.shape()[nd - 1];
        let s = scales.data();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * s[i / row])
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self, scales],
            ScaleByGrad { row },
        ))
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self],
            MapGrad {
                f: |_, y, g| g * y * (1.0 - y),
            },
        )
    }

    pub fn leaky_relu(&self, negative_slope: f64) -> Tensor {
        let data = self
            .data()
            .iter()
            .map(|&x| if x >= 0.0 { x } else { negative_slope * x })
            .collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self],
            MapGrad {
                f: move |x, _, g| if x >= 0.0 { g } else { g * negative_slope },
            },
        )
    }

    /// `x / ||x||` over all elements.
    pub fn l2_normalize(&self) -> Result<Tensor> {
        let norm = self.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid("cannot normalize a zero-norm tensor"));
        }
        let data = self.data().iter().map(|x| x / norm).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self],
            NormalizeGrad { norm },
        ))
    }
}

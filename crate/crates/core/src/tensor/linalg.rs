use super::shape::{broadcast_leading, leading_index_map};
use super::{numel, GradFn, Tensor};
use crate::error::{Error, Result};

/// Products with fewer multiply-adds than this use the plain loops below;
/// larger ones go through the packed, SIMD-dispatched kernel.
const PACKED_MIN_WORK: usize = 1 << 14;

/// `c += a · b` for strided row/column layouts, via `matrixmultiply`.
#[allow(clippy::too_many_arguments)]
fn packed_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts bound every index the kernel touches, and `c`
    // does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m,n] += a[m,k] · b[k,n]`
#[inline]
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if m * k * n >= PACKED_MIN_WORK {
        return packed_acc(m, k, n, a, (k, 1), b, (n, 1), c);
    }
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `da[m,k] += g[m,n] · b[k,n]ᵀ`
#[inline]
fn gemm_nt_acc(g: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    if m * k * n >= PACKED_MIN_WORK {
        return packed_acc(m, n, k, g, (n, 1), b, (1, n), da);
    }
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `db[k,n] += a[m,k]ᵀ · g[m,n]`
#[inline]
fn gemm_tn_acc(a: &[f64], g: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    if m * k * n >= PACKED_MIN_WORK {
        return packed_acc(k, m, n, a, (1, k), g, (n, 1), db);
    }
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let drow = &mut db[p * n..(p + 1) * n];
            for (d, gv) in drow.iter_mut().zip(grow) {
                *d += aip * gv;
            }
        }
    }
}

struct MatmulGrad {
    m: usize,
    k: usize,
    n: usize,
    /// (a batch, b batch) per output batch
    pairs: Vec<(usize, usize)>,
}

impl GradFn for MatmulGrad {
    fn backward(&self, g: &[f64], inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let (m, k, n) = (self.m, self.k, self.n);
        let mut ga = a.requires_grad().then(|| vec![0.0; a.numel()]);
        let mut gb = b.requires_grad().then(|| vec![0.0; b.numel()]);
        for (ob, &(ia, ib)) in self.pairs.iter().enumerate() {
            let gs = &g[ob * m * n..(ob + 1) * m * n];
            if let Some(ga) = ga.as_mut() {
                gemm_nt_acc(
                    gs,
                    &b.data()[ib * k * n..(ib + 1) * k * n],
                    &mut ga[ia * m * k..(ia + 1) * m * k],
                    m,
                    k,
                    n,
                );
            }
            if let Some(gb) = gb.as_mut() {
                gemm_tn_acc(
                    &a.data()[ia * m * k..(ia + 1) * m * k],
                    gs,
                    &mut gb[ib * k * n..(ib + 1) * k * n],
                    m,
                    k,
                    n,
                );
            }
        }
        vec![ga, gb]
    }
}

struct LinearGrad {
    rows: usize,
    fan_in: usize,
    fan_out: usize,
}

impl GradFn for LinearGrad {
    fn backward(&self, g: &[f64], inputs: &[Tensor], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let (r, i, o) = (self.rows, self.fan_in, self.fan_out);
        let gx = x.requires_grad().then(|| {
            let mut gx = vec![0.0; r * i];
            gemm_nt_acc(g, w.data(), &mut gx, r, i, o);
            gx
        });
        let gw = w.requires_grad().then(|| {
            let mut gw = vec![0.0; i * o];
            gemm_tn_acc(x.data(), g, &mut gw, r, i, o);
            gw
        });
        let mut grads = vec![gx, gw];
        if let Some(b) = inputs.get(2) {
            grads.push(b.requires_grad().then(|| {
                let mut gb = vec![0.0; o];
                for row in g.chunks(o) {
                    gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                gb
            }));
        }
        grads
    }
}

impl Tensor {
    /// Batched matrix product `[.., m, k] × [.., k, n] → [.., m, n]` with
    /// broadcasting over the leading dims.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (la, lb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let lead = broadcast_leading(la, lb).map_err(|_| mismatch())?;
        let pairs = leading_index_map(&lead, la, lb);
        let mut data = vec![0.0; numel(&lead) * m * n];
        for (ob, &(ia, ib)) in pairs.iter().enumerate() {
            gemm_acc(
                &self.data()[ia * m * k..(ia + 1) * m * k],
                &other.data()[ib * k * n..(ib + 1) * k * n],
                &mut data[ob * m * n..(ob + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = lead;
        shape.extend([m, n]);
        Ok(Tensor::from_op(
            data,
            shape,
            &[self, other],
            MatmulGrad { m, k, n, pairs },
        ))
    }

    /// Affine map of the innermost axis: `x[.., in] · w[in, out] + b[out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let sx = self.shape();
        let sw = weight.shape();
        if sw.len() != 2 || sx.last() != Some(&sw[0]) {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (fan_in, fan_out) = (sw[0], sw[1]);
        if let Some(b) = bias {
            if b.shape() != [fan_out] {
                return Err(Error::ShapeMismatch {
                    op: "linear bias",
                    lhs: sw.to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let rows = self.numel() / fan_in;
        let mut data = vec![0.0; rows * fan_out];
        gemm_acc(self.data(), weight.data(), &mut data, rows, fan_in, fan_out);
        if let Some(b) = bias {
            for row in data.chunks_mut(fan_out) {
                row.iter_mut().zip(b.data()).for_each(|(v, bv)| *v += bv);
            }
        }
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let grad = LinearGrad {
            rows,
            fan_in,
            fan_out,
        };
        Ok(match bias {
            Some(b) => Tensor::from_op(data, shape, &[self, weight, b], grad),
            None => Tensor::from_op(data, shape, &[self, weight], grad),
        })
    }
}

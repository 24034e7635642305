//! Shared helpers for the integration tests: seeded random data and
//! brute-force loop implementations of every block, written against plain
//! slices so they share no code with the tensor engine.
#![allow(dead_code)]

use fgstformer::gradcheck::{check, CheckInput, GradCheckReport, DEFAULT_STEP};
use fgstformer::params::{ParamSet, Params};
use fgstformer::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` values uniform in `[-scale, scale)`.
pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(uniform(rng, n, scale), shape).unwrap()
}

/// Overwrite every parameter, including zero-initialised biases and global
/// maps, so the oracles exercise all of them.
pub fn randomize(set: &mut ParamSet, rng: &mut ChaCha8Rng, scale: f64) {
    for e in set.entries_mut() {
        e.value = uniform(rng, e.value.len(), scale);
    }
}

pub fn value<'a>(set: &'a ParamSet, name: &str) -> &'a [f64] {
    let id = set
        .id_of(name)
        .unwrap_or_else(|| panic!("no parameter `{name}`"));
    &set.get(id).value
}

pub fn maybe<'a>(set: &'a ParamSet, name: &str) -> Option<&'a [f64]> {
    set.id_of(name).map(|id| set.get(id).value.as_slice())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

// ---------------------------------------------------------------------------
// scalar building blocks

/// `x [rows, cin] · w [cin, cout] + b`
pub fn affine(x: &[f64], rows: usize, cin: usize, w: &[f64], cout: usize, b: Option<&[f64]>) -> Vec<f64> {
    assert_eq!(x.len(), rows * cin);
    assert_eq!(w.len(), cin * cout);
    let mut out = vec![0.0; rows * cout];
    for r in 0..rows {
        for o in 0..cout {
            let mut acc = b.map_or(0.0, |b| b[o]);
            for i in 0..cin {
                acc += x[r * cin + i] * w[i * cout + o];
            }
            out[r * cout + o] = acc;
        }
    }
    out
}

pub fn leaky(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

pub fn softmax_row(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Sinusoidal encoding of position `pos`, channel `ch` of `channels`.
pub fn pe(pos: usize, ch: usize, channels: usize) -> f64 {
    let pair = (ch / 2) * 2;
    let angle = pos as f64 / 10000f64.powf(pair as f64 / channels as f64);
    if ch.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// Rows `rows` of a `[.., C]` matrix.
fn take_rows(x: &[f64], c: usize, rows: impl Iterator<Item = usize>) -> Vec<f64> {
    rows.flat_map(|r| x[r * c..(r + 1) * c].iter().copied()).collect()
}

/// `x[j, t, :]` of a `[n, T, C]` buffer.
pub fn at(x: &[f64], t_len: usize, c: usize, j: usize, t: usize) -> &[f64] {
    let o = (j * t_len + t) * c;
    &x[o..o + c]
}

pub fn frame(x: &[f64], n: usize, t_len: usize, c: usize, t: usize) -> Vec<f64> {
    (0..n).flat_map(|j| at(x, t_len, c, j, t).to_vec()).collect()
}

pub fn token(x: &[f64], t_len: usize, c: usize, j: usize) -> Vec<f64> {
    x[j * t_len * c..(j + 1) * t_len * c].to_vec()
}

fn put_frame(out: &mut [f64], t_len: usize, c: usize, t: usize, rows: &[f64]) {
    for (j, row) in rows.chunks(c).enumerate() {
        let o = (j * t_len + t) * c;
        out[o..o + c].copy_from_slice(row);
    }
}

// ---------------------------------------------------------------------------
// attention

pub fn scaled_dot(q: &[f64], k: &[f64], v: &[f64], nq: usize, nk: usize, d: usize, dv: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; nq * nk];
    for i in 0..nq {
        for j in 0..nk {
            let mut s = 0.0;
            for e in 0..d {
                s += q[i * d + e] * k[j * d + e];
            }
            a[i * nk + j] = s / (d as f64).sqrt();
        }
        softmax_row(&mut a[i * nk..(i + 1) * nk]);
    }
    let mut out = vec![0.0; nq * dv];
    for i in 0..nq {
        for j in 0..nk {
            for e in 0..dv {
                out[i * dv + e] += a[i * nk + j] * v[j * dv + e];
            }
        }
    }
    (out, a)
}

/// Multi-head attention weights read by name from a parameter set.
pub struct Mha<'a> {
    pub wq: &'a [f64],
    pub bq: &'a [f64],
    pub wk: &'a [f64],
    pub bk: &'a [f64],
    pub wv: &'a [f64],
    pub bv: &'a [f64],
    pub wo: &'a [f64],
    pub bo: &'a [f64],
    pub cin: usize,
    pub cout: usize,
    pub heads: usize,
    pub d: usize,
}

impl<'a> Mha<'a> {
    pub fn from_set(set: &'a ParamSet, prefix: &str, cin: usize, cout: usize, heads: usize) -> Self {
        let g = |n: &str| value(set, &join(prefix, n));
        Mha {
            wq: g("wq"),
            bq: g("bq"),
            wk: g("wk"),
            bk: g("bk"),
            wv: g("wv"),
            bv: g("bv"),
            wo: g("wo"),
            bo: g("bo"),
            cin,
            cout,
            heads,
            d: cout / heads,
        }
    }

    /// Queries `[nq, cin]` over context `[nk, cin]`; `global(i, j)` is added
    /// to every head's softmax weights. Returns `[nq, cout]` and the softmax
    /// weights `[H, nq, nk]`.
    pub fn run(
        &self,
        queries: &[f64],
        nq: usize,
        context: &[f64],
        nk: usize,
        global: Option<&dyn Fn(usize, usize) -> f64>,
    ) -> (Vec<f64>, Vec<f64>) {
        let inner = self.heads * self.d;
        let q = affine(queries, nq, self.cin, self.wq, inner, Some(self.bq));
        let k = affine(context, nk, self.cin, self.wk, inner, Some(self.bk));
        let v = affine(context, nk, self.cin, self.wv, inner, Some(self.bv));
        let mut concat = vec![0.0; nq * inner];
        let mut weights = Vec::with_capacity(self.heads * nq * nk);
        for h in 0..self.heads {
            let cols = h * self.d..(h + 1) * self.d;
            let slice = |m: &[f64], rows: usize| -> Vec<f64> {
                (0..rows)
                    .flat_map(|r| m[r * inner + cols.start..r * inner + cols.end].to_vec())
                    .collect()
            };
            let (qh, kh, vh) = (slice(&q, nq), slice(&k, nk), slice(&v, nk));
            let (_, mut a) = scaled_dot(&qh, &kh, &vh, nq, nk, self.d, self.d);
            weights.extend_from_slice(&a);
            if let Some(g) = global {
                for i in 0..nq {
                    for j in 0..nk {
                        a[i * nk + j] += g(i, j);
                    }
                }
            }
            for i in 0..nq {
                for e in 0..self.d {
                    let mut s = 0.0;
                    for j in 0..nk {
                        s += a[i * nk + j] * vh[j * self.d + e];
                    }
                    concat[i * inner + h * self.d + e] = s;
                }
            }
        }
        (affine(&concat, nq, inner, self.wo, self.cout, Some(self.bo)), weights)
    }
}

// ---------------------------------------------------------------------------
// spatial

/// Basic spatial block on `[n, T, C]`; `ids[t][j]` is the identity of slot
/// `j` in frame `t`.
#[allow(clippy::too_many_arguments)]
pub fn basic_sformer(
    set: &ParamSet,
    prefix: &str,
    x: &[f64],
    n: usize,
    t_len: usize,
    c: usize,
    heads: usize,
    id_count: usize,
    ids: &[Vec<usize>],
    slope: f64,
) -> Vec<f64> {
    let mha = Mha::from_set(set, &join(prefix, "attn"), c, c, heads);
    let ag = value(set, &join(prefix, "global_map"));
    let (fw, fb) = (value(set, &join(prefix, "ffn.w")), value(set, &join(prefix, "ffn.b")));
    let mut out = vec![0.0; x.len()];
    for t in 0..t_len {
        let id = &ids[t];
        let mut z = frame(x, n, t_len, c, t);
        for j in 0..n {
            for ch in 0..c {
                z[j * c + ch] += pe(id[j], ch, c);
            }
        }
        let g = |a: usize, b: usize| ag[id[a] * id_count + id[b]];
        let (att, _) = mha.run(&z, n, &z, n, Some(&g));
        let y: Vec<f64> = z.iter().zip(&att).map(|(a, b)| a + b).collect();
        let ff = affine(&y, n, c, fw, c, Some(fb));
        let o: Vec<f64> = y.iter().zip(&ff).map(|(a, f)| a + leaky(*f, slope)).collect();
        put_frame(&mut out, t_len, c, t, &o);
    }
    out
}

pub fn static_ids(n: usize, t_len: usize) -> Vec<Vec<usize>> {
    vec![(0..n).collect(); t_len]
}

/// Per part and frame: concatenate the listed joints, then the shared layer.
pub fn part_encode(
    x: &[f64],
    t_len: usize,
    c: usize,
    padded: &[Vec<usize>],
    w: &[f64],
    b: Option<&[f64]>,
) -> Vec<f64> {
    let m = padded[0].len();
    let mut out = vec![0.0; padded.len() * t_len * c];
    for (p, group) in padded.iter().enumerate() {
        for t in 0..t_len {
            let cat: Vec<f64> = group.iter().flat_map(|&j| at(x, t_len, c, j, t).to_vec()).collect();
            let row = affine(&cat, 1, m * c, w, c, b);
            let o = (p * t_len + t) * c;
            out[o..o + c].copy_from_slice(&row);
        }
    }
    out
}

/// One cross-attention direction for a single frame.
fn cross_branch(set: &ParamSet, prefix: &str, target: &[f64], nt: usize, source: &[f64], ns: usize, c: usize, heads: usize, slope: f64) -> Vec<f64> {
    let mha = Mha::from_set(set, &join(prefix, "attn"), c, c, heads);
    let (fw, fb) = (value(set, &join(prefix, "ffn.w")), value(set, &join(prefix, "ffn.b")));
    let (att, _) = mha.run(target, nt, source, ns, None);
    let y: Vec<f64> = target.iter().zip(&att).map(|(a, b)| a + b).collect();
    let ff = affine(&y, nt, c, fw, c, Some(fb));
    y.iter().zip(&ff).map(|(a, f)| a + leaky(*f, slope)).collect()
}

/// Joint-part cross-attention, frame by frame. Returns `(joints, parts)`.
#[allow(clippy::too_many_arguments)]
pub fn joint_part_cross(
    set: &ParamSet,
    prefix: &str,
    joints: &[f64],
    k: usize,
    parts: &[f64],
    p: usize,
    t_len: usize,
    c: usize,
    heads: usize,
    slope: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut jo = vec![0.0; joints.len()];
    let mut po = vec![0.0; parts.len()];
    for t in 0..t_len {
        let jf = frame(joints, k, t_len, c, t);
        let pf = frame(parts, p, t_len, c, t);
        let j_new = cross_branch(set, &join(prefix, "to_joints"), &jf, k, &pf, p, c, heads, slope);
        let p_new = cross_branch(set, &join(prefix, "to_parts"), &pf, p, &jf, k, c, heads, slope);
        put_frame(&mut jo, t_len, c, t, &j_new);
        put_frame(&mut po, t_len, c, t, &p_new);
    }
    (jo, po)
}

/// Exhaustive top-K: rank every joint by how many others beat it.
pub fn rank_select(scores: &[f64], k: usize) -> Vec<usize> {
    let n = scores.len();
    let mut slots = vec![usize::MAX; n];
    for i in 0..n {
        let beaten_by = (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count();
        slots[beaten_by] = i;
    }
    slots.truncate(k);
    slots
}

/// `sigmoid(x · w / ‖w‖)` laid out `[N, T]`.
pub fn focal_scores(x: &[f64], n: usize, t_len: usize, c: usize, w: &[f64]) -> Vec<f64> {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut s = vec![0.0; n * t_len];
    for j in 0..n {
        for t in 0..t_len {
            let dot: f64 = at(x, t_len, c, j, t).iter().zip(w).map(|(a, b)| a * b).sum();
            s[j * t_len + t] = 1.0 / (1.0 + (-dot / norm).exp());
        }
    }
    s
}

// ---------------------------------------------------------------------------
// temporal

/// Direct same-padded dilated convolution. `w` is `[k·cin, cout]` tap-major.
#[allow(clippy::too_many_arguments)]
pub fn direct_conv(
    x: &[f64],
    n: usize,
    t_len: usize,
    cin: usize,
    w: &[f64],
    b: Option<&[f64]>,
    cout: usize,
    kernel: usize,
    dilation: usize,
    stride: usize,
) -> Vec<f64> {
    let t_out = t_len.div_ceil(stride);
    let center = (kernel / 2) as isize;
    let mut out = vec![0.0; n * t_out * cout];
    for j in 0..n {
        for to in 0..t_out {
            for o in 0..cout {
                let mut acc = b.map_or(0.0, |b| b[o]);
                for tap in 0..kernel {
                    let ti = (stride * to) as isize + (tap as isize - center) * dilation as isize;
                    if ti < 0 || ti >= t_len as isize {
                        continue;
                    }
                    for i in 0..cin {
                        acc += w[(tap * cin + i) * cout + o] * x[(j * t_len + ti as usize) * cin + i];
                    }
                }
                out[(j * t_out + to) * cout + o] = acc;
            }
        }
    }
    out
}

/// How the oracle treats the temporal attention product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixing {
    Softmax,
    Identity,
    Uniform,
    Zero,
}

/// Convolution-valued temporal block on `[n, T, cin]`.
#[allow(clippy::too_many_arguments)]
pub fn fg_tformer(
    set: &ParamSet,
    prefix: &str,
    x: &[f64],
    n: usize,
    t_len: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
    dilations: &[usize],
    slope: f64,
    position_encoding: bool,
    mixing: Mixing,
) -> Vec<f64> {
    let heads = dilations.len();
    let d = cout / heads;
    let stride = if cout == cin { 1 } else { 2 };
    let t_out = t_len.div_ceil(stride);
    let g = |name: &str| value(set, &join(prefix, name));
    let shortcut = maybe(set, &join(prefix, "shortcut.w")).map(|w| (w, g("shortcut.b")));
    let wo = g("wo");

    let mut out = vec![0.0; n * t_out * cout];
    for j in 0..n {
        let xj = token(x, t_len, cin, j);
        let mut z = xj.clone();
        if position_encoding {
            for t in 0..t_len {
                for ch in 0..cin {
                    z[t * cin + ch] += pe(t, ch, cin);
                }
            }
        }
        let kept: Vec<usize> = (0..t_out).map(|t| t * stride).collect();
        let zs = take_rows(&z, cin, kept.iter().copied());
        let mut merged = vec![0.0; t_out * cout];
        for (h, &dil) in dilations.iter().enumerate() {
            let tw = g(&format!("tcn{h}.w"));
            let tb = g(&format!("tcn{h}.b"));
            let v = direct_conv(&z, 1, t_len, cin, tw, Some(tb), d, kernel, dil, stride);
            let head: Vec<f64> = if mixing == Mixing::Zero || maybe(set, &join(prefix, "wq")).is_none() {
                v.clone()
            } else {
                let mixed: Vec<f64> = match mixing {
                    Mixing::Identity => v.clone(),
                    Mixing::Uniform => {
                        let mut m = vec![0.0; t_out * d];
                        for t in 0..t_out {
                            for e in 0..d {
                                m[t * d + e] = (0..t_out).map(|s| v[s * d + e]).sum::<f64>() / t_out as f64;
                            }
                        }
                        m
                    }
                    _ => {
                        let q = affine(&zs, t_out, cin, g("wq"), cout, Some(g("bq")));
                        let k = affine(&zs, t_out, cin, g("wk"), cout, Some(g("bk")));
                        let cols = |m: &[f64]| -> Vec<f64> {
                            (0..t_out).flat_map(|t| m[t * cout + h * d..t * cout + (h + 1) * d].to_vec()).collect()
                        };
                        scaled_dot(&cols(&q), &cols(&k), &v, t_out, t_out, d, d).0
                    }
                };
                let wh = &g("wh")[h * d * d..(h + 1) * d * d];
                let proj = affine(&mixed, t_out, d, wh, d, None);
                proj.iter().zip(&v).map(|(a, b)| a + b).collect()
            };
            for t in 0..t_out {
                merged[t * cout + h * d..t * cout + (h + 1) * d].copy_from_slice(&head[t * d..(t + 1) * d]);
            }
        }
        let y = affine(&merged, t_out, cout, wo, cout, None);
        let residual = take_rows(&xj, cin, kept.iter().copied());
        let residual = match shortcut {
            Some((w, b)) => affine(&residual, t_out, cin, w, cout, Some(b)),
            None => residual,
        };
        for t in 0..t_out {
            for o in 0..cout {
                out[(j * t_out + t) * cout + o] = leaky(y[t * cout + o], slope) + residual[t * cout + o];
            }
        }
    }
    out
}

/// Vanilla temporal block on `[n, T, cin]`.
#[allow(clippy::too_many_arguments)]
pub fn basic_tformer(
    set: &ParamSet,
    prefix: &str,
    x: &[f64],
    n: usize,
    t_len: usize,
    cin: usize,
    cout: usize,
    heads: usize,
    slope: f64,
) -> Vec<f64> {
    let stride = if cout == cin { 1 } else { 2 };
    let t_out = t_len.div_ceil(stride);
    let mha = Mha::from_set(set, &join(prefix, "attn"), cin, cout, heads);
    let shortcut = maybe(set, &join(prefix, "shortcut.w")).map(|w| (w, value(set, &join(prefix, "shortcut.b"))));
    let (fw, fb) = (value(set, &join(prefix, "ffn.w")), value(set, &join(prefix, "ffn.b")));
    let mut out = vec![0.0; n * t_out * cout];
    for j in 0..n {
        let mut z = token(x, t_len, cin, j);
        for t in 0..t_len {
            for ch in 0..cin {
                z[t * cin + ch] += pe(t, ch, cin);
            }
        }
        let zs = take_rows(&z, cin, (0..t_out).map(|t| t * stride));
        let (att, _) = mha.run(&zs, t_out, &zs, t_out, None);
        let res = match shortcut {
            Some((w, b)) => affine(&zs, t_out, cin, w, cout, Some(b)),
            None => zs.clone(),
        };
        let y: Vec<f64> = res.iter().zip(&att).map(|(a, b)| a + b).collect();
        let ff = affine(&y, t_out, cout, fw, cout, Some(fb));
        for (i, (a, f)) in y.iter().zip(&ff).enumerate() {
            out[j * t_out * cout + i] = a + leaky(*f, slope);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// gradient checks

/// Every parameter of `set` plus one extra input `x`, checked through the
/// scalar `Σ coef · f(params, x)` with fixed random coefficients.
pub fn block_gradcheck<F>(set: &ParamSet, x: &Tensor, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Params, &Tensor) -> Result<Tensor>,
{
    let mut inputs: Vec<CheckInput> = set
        .entries()
        .iter()
        .map(|e| CheckInput::new(e.name.clone(), &e.shape, e.value.clone()))
        .collect();
    inputs.push(CheckInput::new("input", x.shape(), x.to_vec()));
    let np = set.len();
    let probe = f(&set.bind_frozen(), x)?;
    let coef = Tensor::new(uniform(&mut rng(seed ^ 0x9e37), probe.numel(), 1.0), probe.shape())?;
    check(&inputs, DEFAULT_STEP, |ts| {
        let p = Params::from_tensors(ts[..np].to_vec());
        f(&p, &ts[np])?.mul(&coef).map(|t| t.sum())
    })
}

pub fn assert_grad(report: &GradCheckReport, tol: f64, what: &str) {
    let worst = report.worst().expect("at least one input");
    assert!(
        worst.rel_error < tol,
        "{what}: `{}` relative error {:.3e} ≥ {tol:e}",
        worst.name,
        worst.rel_error
    );
}

// ---------------------------------------------------------------------------
// randomized comparison cases: each returns the largest absolute deviation
// between the engine and the loop oracle

use fgstformer::attention::{scaled_dot_attention, MultiHeadAttention};
use fgstformer::params::ParamBuilder;
use fgstformer::spatial::{
    part_partition_encode, BasicSFormer, FgSFormer, JointPartCrossAttention, PartitionMap, TokenIds,
};
use fgstformer::temporal::{dilated_tcn, AttentionOverride, BasicTformer, FgTformer};

pub const SLOPE: f64 = 0.1;

fn pick<T: Copy>(rng: &mut ChaCha8Rng, options: &[T]) -> T {
    options[rng.random_range(0..options.len())]
}

/// Distinct ids for `n` slots drawn from `0..id_count`, one row per frame.
pub fn random_ids(rng: &mut ChaCha8Rng, n: usize, id_count: usize, t_len: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    (0..t_len)
        .map(|_| {
            let mut all: Vec<usize> = (0..id_count).collect();
            all.shuffle(rng);
            all.truncate(n);
            all
        })
        .collect()
}

pub fn scaled_dot_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (nq, nk, d, dv) = (r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=4), r.random_range(1..=4));
    let q = random_tensor(&mut r, &[nq, d], 1.5);
    let k = random_tensor(&mut r, &[nk, d], 1.5);
    let v = random_tensor(&mut r, &[nk, dv], 1.5);
    let (out, a) = scaled_dot_attention(&q, &k, &v).unwrap();
    let (eo, ea) = scaled_dot(q.data(), k.data(), v.data(), nq, nk, d, dv);
    max_abs_diff(out.data(), &eo).max(max_abs_diff(a.data(), &ea))
}

/// Self-attention with a random additive global map.
pub fn msa_case_with(seed: u64, heads: usize, n: usize, c: usize) -> f64 {
    let mut r = rng(seed);
    let mut b = ParamBuilder::new(seed);
    let mha = MultiHeadAttention::new(&mut b, c, c, heads).unwrap();
    let mut set = b.finish();
    randomize(&mut set, &mut r, 0.8);
    let x = random_tensor(&mut r, &[n, c], 1.0);
    let ag = uniform(&mut r, n * n, 0.5);
    let out = mha
        .forward(&set.bind_frozen(), &x, Some(&Tensor::new(ag.clone(), &[n, n]).unwrap()))
        .unwrap();
    let oracle = Mha::from_set(&set, "", c, c, heads);
    let g = |i: usize, j: usize| ag[i * n + j];
    let (eo, ew) = oracle.run(x.data(), n, x.data(), n, Some(&g));
    max_abs_diff(out.output.data(), &eo).max(max_abs_diff(out.weights.data(), &ew))
}

pub fn msa_case(seed: u64) -> f64 {
    let mut r = rng(seed.wrapping_add(1000));
    let heads = r.random_range(1..=3);
    let c = heads * r.random_range(1..=3) + r.random_range(0..heads);
    msa_case_with(seed, heads, r.random_range(1..=8), c)
}

pub fn basic_sformer_case(seed: u64, per_frame_ids: bool) -> f64 {
    let mut r = rng(seed);
    let heads = r.random_range(1..=3);
    let c = 2 * heads * r.random_range(1..=2);
    let (n, t_len) = (r.random_range(1..=6), r.random_range(1..=4));
    let id_count = if per_frame_ids { n + r.random_range(0..=3) } else { n };
    basic_sformer_case_with(seed, n, t_len, c, heads, id_count, per_frame_ids)
}

pub fn basic_sformer_case_with(seed: u64, n: usize, t_len: usize, c: usize, heads: usize, id_count: usize, per_frame_ids: bool) -> f64 {
    let mut r = rng(seed ^ 0x5f);
    let mut b = ParamBuilder::new(seed);
    let block = BasicSFormer::new(&mut b, c, heads, id_count, SLOPE).unwrap();
    let mut set = b.finish();
    randomize(&mut set, &mut r, 0.7);
    let x = random_tensor(&mut r, &[n, t_len, c], 1.0);
    let ids = if per_frame_ids {
        random_ids(&mut r, n, id_count, t_len)
    } else {
        static_ids(n, t_len)
    };
    let token_ids = if per_frame_ids { TokenIds::PerFrame(&ids) } else { TokenIds::Static };
    let out = block.forward(&set.bind_frozen(), &x, token_ids).unwrap();
    let expect = basic_sformer(&set, "", x.data(), n, t_len, c, heads, id_count, &ids, SLOPE);
    max_abs_diff(out.features.data(), &expect)
}

/// Random partition of `n` joints into `p` groups.
pub fn random_partition(r: &mut ChaCha8Rng, n: usize, p: usize) -> PartitionMap {
    use rand::seq::SliceRandom;
    let mut joints: Vec<usize> = (0..n).collect();
    joints.shuffle(r);
    let mut groups: Vec<Vec<usize>> = joints[..p].iter().map(|&j| vec![j]).collect();
    for &j in &joints[p..] {
        let g = r.random_range(0..p);
        groups[g].push(j);
    }
    PartitionMap::new("random", n, groups).unwrap()
}

pub fn part_case_with(seed: u64, map: &PartitionMap, t_len: usize, c: usize) -> f64 {
    let mut r = rng(seed);
    let m = map.group_size();
    let x = random_tensor(&mut r, &[map.joints(), t_len, c], 1.0);
    let w = random_tensor(&mut r, &[m * c, c], 0.5);
    let b = random_tensor(&mut r, &[c], 0.5);
    let out = part_partition_encode(&x, map, &w, Some(&b)).unwrap();
    let expect = part_encode(x.data(), t_len, c, &map.padded(), w.data(), Some(b.data()));
    max_abs_diff(out.data(), &expect)
}

pub fn part_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=8);
    let p = r.random_range(1..=n);
    let map = random_partition(&mut r, n, p);
    part_case_with(seed, &map, r.random_range(1..=4), r.random_range(1..=4))
}

pub fn jpca_case_with(seed: u64, k: usize, p: usize, t_len: usize, c: usize, heads: usize) -> f64 {
    let mut r = rng(seed);
    let mut b = ParamBuilder::new(seed);
    let block = JointPartCrossAttention::new(&mut b, c, heads, SLOPE).unwrap();
    let mut set = b.finish();
    randomize(&mut set, &mut r, 0.7);
    let xj = random_tensor(&mut r, &[k, t_len, c], 1.0);
    let xp = random_tensor(&mut r, &[p, t_len, c], 1.0);
    let out = block.forward(&set.bind_frozen(), &xj, &xp).unwrap();
    let (ej, ep) = joint_part_cross(&set, "", xj.data(), k, xp.data(), p, t_len, c, heads, SLOPE);
    max_abs_diff(out.joints.data(), &ej).max(max_abs_diff(out.parts.data(), &ep))
}

pub fn jpca_case(seed: u64) -> f64 {
    let mut r = rng(seed.wrapping_add(7));
    let heads = r.random_range(1..=3);
    let c = heads * r.random_range(1..=3);
    jpca_case_with(seed, r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=4), c, heads)
}

/// Both spatial branches followed by cross-attention.
pub fn fg_sformer_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let heads = r.random_range(1..=2);
    let c = 2 * heads * r.random_range(1..=2);
    let (n_ids, t_len) = (r.random_range(2..=8), r.random_range(1..=3));
    let k = r.random_range(1..=n_ids);
    let p = r.random_range(1..=4);
    let mut b = ParamBuilder::new(seed);
    let block = FgSFormer::new(&mut b, c, heads, n_ids, p, true, SLOPE).unwrap();
    let mut set = b.finish();
    randomize(&mut set, &mut r, 0.6);
    let xj = random_tensor(&mut r, &[k, t_len, c], 1.0);
    let xp = random_tensor(&mut r, &[p, t_len, c], 1.0);
    let ids = random_ids(&mut r, k, n_ids, t_len);
    let out = block
        .forward(&set.bind_frozen(), &xj, TokenIds::PerFrame(&ids), &xp)
        .unwrap();
    let j1 = basic_sformer(&set, "joints", xj.data(), k, t_len, c, heads, n_ids, &ids, SLOPE);
    let p1 = basic_sformer(&set, "parts", xp.data(), p, t_len, c, heads, p, &static_ids(p, t_len), SLOPE);
    let (ej, ep) = joint_part_cross(&set, "cross", &j1, k, &p1, p, t_len, c, heads, SLOPE);
    max_abs_diff(out.joints.data(), &ej).max(max_abs_diff(out.parts.data(), &ep))
}

pub fn tcn_case(seed: u64, kernel: usize, dilation: usize, stride: usize, max_t: usize) -> f64 {
    let mut r = rng(seed);
    let (n, t_len) = (r.random_range(1..=3), r.random_range(1..=max_t));
    let (cin, cout) = (r.random_range(1..=4), r.random_range(1..=4));
    let x = random_tensor(&mut r, &[n, t_len, cin], 1.0);
    let w = random_tensor(&mut r, &[kernel * cin, cout], 1.0);
    let b = random_tensor(&mut r, &[cout], 1.0);
    let y = dilated_tcn(&x, &w, Some(&b), kernel, dilation, stride).unwrap();
    let expect = direct_conv(x.data(), n, t_len, cin, w.data(), Some(b.data()), cout, kernel, dilation, stride);
    assert_eq!(y.shape(), &[n, t_len.div_ceil(stride), cout]);
    max_abs_diff(y.data(), &expect)
}

pub struct TemporalShape {
    pub n: usize,
    pub t_len: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
}

impl TemporalShape {
    pub fn random(r: &mut ChaCha8Rng) -> Self {
        let heads = r.random_range(1..=2);
        let cin = 2 * heads * r.random_range(1..=2);
        TemporalShape {
            n: r.random_range(1..=4),
            t_len: pick(r, &[2, 4, 6, 8]),
            cin,
            cout: cin * pick(r, &[1, 2]),
            kernel: pick(r, &[1, 3, 5, 7]),
            dilations: [1, 2][..heads].to_vec(),
        }
    }
}

pub fn fg_tformer_case_with(seed: u64, s: &TemporalShape, mixing: Mixing, position_encoding: bool, attention: bool) -> f64 {
    let mut r = rng(seed ^ 0xabc);
    let mut b = ParamBuilder::new(seed);
    let mut block = FgTformer::new(&mut b, s.cin, s.cout, s.kernel, &s.dilations, attention, SLOPE).unwrap();
    if !position_encoding {
        block = block.without_position_encoding();
    }
    let mut set = b.finish();
    randomize(&mut set, &mut r, 0.6);
    let x = random_tensor(&mut r, &[s.n, s.t_len, s.cin], 1.0);
    let replace = match mixing {
        Mixing::Softmax => None,
        Mixing::Identity => Some(AttentionOverride::Identity),
        Mixing::Uniform => Some(AttentionOverride::Uniform),
        Mixing::Zero => Some(AttentionOverride::Zero),
    };
    let out = block.forward_with(&set.bind_frozen(), &x, replace).unwrap();
    let expect = fg_tformer(&set, "", x.data(), s.n, s.t_len, s.cin, s.cout, s.kernel, &s.dilations, SLOPE, position_encoding, mixing);
    max_abs_diff(out.features.data(), &expect)
}

pub fn fg_tformer_case(seed: u64, mixing: Mixing) -> f64 {
    let mut r = rng(seed);
    let shape = TemporalShape::random(&mut r);
    let pe = r.random_bool(0.5);
    fg_tformer_case_with(seed, &shape, mixing, pe, true)
}

pub fn basic_tformer_case_with(seed: u64, n: usize, t_len: usize, cin: usize, cout: usize, heads: usize) -> f64 {
    let mut r = rng(seed ^ 0x77);
    let mut b = ParamBuilder::new(seed);
    let block = BasicTformer::new(&mut b, cin, cout, heads, SLOPE).unwrap();
    let mut set = b.finish();
    randomize(&mut set, &mut r, 0.6);
    let x = random_tensor(&mut r, &[n, t_len, cin], 1.0);
    let out = block.forward(&set.bind_frozen(), &x).unwrap();
    let expect = basic_tformer(&set, "", x.data(), n, t_len, cin, cout, heads, SLOPE);
    max_abs_diff(out.features.data(), &expect)
}

pub fn basic_tformer_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let heads = r.random_range(1..=2);
    let cin = 2 * heads * r.random_range(1..=2);
    let cout = cin * pick(&mut r, &[1, 2]);
    basic_tformer_case_with(seed, r.random_range(1..=4), pick(&mut r, &[2, 4, 6, 8]), cin, cout, heads)
}

// ---------------------------------------------------------------------------
// block gradient checks

use fgstformer::gradcheck::relative_error;
use fgstformer::model::{ModelConfig, Network};
use fgstformer::spatial::{FocalSelector, PartEncoder, SelectionMode};
use fgstformer::temporal::TemporalKind;

pub const GRAD_TOL: f64 = 1e-5;

fn randomized<T>(seed: u64, scale: f64, build: impl FnOnce(&mut ParamBuilder) -> T) -> (T, ParamSet) {
    let mut b = ParamBuilder::new(seed);
    let block = build(&mut b);
    let mut set = b.finish();
    randomize(&mut set, &mut rng(seed ^ 0xfeed), scale);
    (block, set)
}

pub fn grad_mha(seed: u64) -> GradCheckReport {
    let (n, c) = (3, 4);
    let (mha, mut set) = randomized(seed, 0.6, |b| MultiHeadAttention::new(b, c, c, 2).unwrap());
    // the global map rides along as an extra parameter
    set.insert("global", &[n, n], uniform(&mut rng(seed), n * n, 0.4)).unwrap();
    let g = set.id_of("global").unwrap();
    let x = random_tensor(&mut rng(seed + 1), &[n, c], 1.0);
    block_gradcheck(&set, &x, seed, |p, x| Ok(mha.forward(p, x, Some(p.get(g)))?.output)).unwrap()
}

pub fn grad_basic_sformer(seed: u64) -> GradCheckReport {
    let (n, t, c, heads, ids) = (4, 2, 12, 3, 6);
    let (block, set) = randomized(seed, 0.5, |b| BasicSFormer::new(b, c, heads, ids, SLOPE).unwrap());
    let frames = random_ids(&mut rng(seed), n, ids, t);
    let x = random_tensor(&mut rng(seed + 1), &[n, t, c], 1.0);
    block_gradcheck(&set, &x, seed, |p, x| Ok(block.forward(p, x, TokenIds::PerFrame(&frames))?.features)).unwrap()
}

/// Gate gradient of focal selection on `[5, 3, 4]` features.
pub fn grad_focal(seed: u64) -> GradCheckReport {
    let (sel, set) = randomized(seed, 1.0, |b| FocalSelector::new(b, 4, 3, SelectionMode::PerFrame).unwrap());
    let x = random_tensor(&mut rng(seed + 1), &[5, 3, 4], 1.0);
    block_gradcheck(&set, &x, seed, |p, x| Ok(sel.select(p, x)?.gated)).unwrap()
}

pub fn grad_parts(seed: u64) -> GradCheckReport {
    let map = PartitionMap::new("six", 6, vec![vec![0, 1, 2], vec![3, 4], vec![5]]).unwrap();
    let (enc, set) = randomized(seed, 0.5, |b| PartEncoder::new(b, map, 3).unwrap());
    let x = random_tensor(&mut rng(seed + 1), &[6, 2, 3], 1.0);
    block_gradcheck(&set, &x, seed, |p, x| enc.encode(p, x)).unwrap()
}

pub fn grad_jpca(seed: u64) -> GradCheckReport {
    let (k, pn, t, c) = (3, 2, 2, 6);
    let (block, set) = randomized(seed, 0.5, |b| JointPartCrossAttention::new(b, c, 2, SLOPE).unwrap());
    let xp = random_tensor(&mut rng(seed + 2), &[pn, t, c], 1.0);
    let x = random_tensor(&mut rng(seed + 1), &[k, t, c], 1.0);
    block_gradcheck(&set, &x, seed, |p, x| {
        let out = block.forward(p, x, &xp)?;
        Tensor::concat(&[&out.joints, &out.parts], 0)
    })
    .unwrap()
}

/// Both branches and cross-attention at `K=3, P=2, T=2, C=12`; the part
/// stream enters as a parameter so it is checked too.
pub fn grad_fg_sformer(seed: u64) -> GradCheckReport {
    let (k, pn, t, c, ids) = (3, 2, 2, 12, 5);
    let (block, mut set) = randomized(seed, 0.4, |b| FgSFormer::new(b, c, 3, ids, pn, true, SLOPE).unwrap());
    set.insert("part_input", &[pn, t, c], uniform(&mut rng(seed + 2), pn * t * c, 1.0)).unwrap();
    let parts = set.id_of("part_input").unwrap();
    let frames = random_ids(&mut rng(seed), k, ids, t);
    let x = random_tensor(&mut rng(seed + 1), &[k, t, c], 1.0);
    block_gradcheck(&set, &x, seed, |p, x| {
        let out = block.forward(p, x, TokenIds::PerFrame(&frames), p.get(parts))?;
        Tensor::concat(&[&out.joints, &out.parts], 0)
    })
    .unwrap()
}

/// `n=3, T=8, C 8→16, s=2, H=2` with dilations 1 and 2.
pub fn grad_fg_tformer(seed: u64, attention: bool) -> GradCheckReport {
    let (block, set) = randomized(seed, 0.5, |b| FgTformer::new(b, 8, 16, 3, &[1, 2], attention, SLOPE).unwrap());
    let x = random_tensor(&mut rng(seed + 1), &[3, 8, 8], 1.0);
    block_gradcheck(&set, &x, seed, |p, x| Ok(block.forward(p, x)?.features)).unwrap()
}

pub fn grad_basic_tformer(seed: u64) -> GradCheckReport {
    let (block, set) = randomized(seed, 0.5, |b| BasicTformer::new(b, 4, 8, 2, SLOPE).unwrap());
    let x = random_tensor(&mut rng(seed + 1), &[2, 4, 4], 1.0);
    block_gradcheck(&set, &x, seed, |p, x| Ok(block.forward(p, x)?.features)).unwrap()
}

/// Cross-entropy of the whole network against central differences on every
/// parameter.
pub fn grad_network(cfg: &ModelConfig, seed: u64) -> GradCheckReport {
    let (net, mut set) = Network::build(cfg, seed).unwrap();
    randomize(&mut set, &mut rng(seed ^ 0xfeed), 0.3);
    let x = random_tensor(&mut rng(seed + 1), &[cfg.joints, cfg.frames, cfg.in_channels], 1.0);
    let label = (seed as usize) % cfg.classes;
    let inputs: Vec<CheckInput> = set
        .entries()
        .iter()
        .map(|e| CheckInput::new(e.name.clone(), &e.shape, e.value.clone()))
        .collect();
    check(&inputs, DEFAULT_STEP, |ts| {
        net.logits(&Params::from_tensors(ts.to_vec()), &x)?.cross_entropy(label)
    })
    .unwrap()
}

pub fn toy_with_temporal(kind: TemporalKind) -> ModelConfig {
    let mut cfg = ModelConfig::toy();
    cfg.ablation.temporal = kind;
    cfg
}

/// Largest relative error of a report, for summaries.
pub fn worst(report: &GradCheckReport) -> f64 {
    report.max_rel_error()
}

pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    relative_error(a, b)
}

// ---------------------------------------------------------------------------
// focal selection

use fgstformer::spatial::focal_joint_select;

/// Random `[n, T, C]` features where some joints copy another joint's row,
/// so their scores tie exactly.
pub fn tied_features(r: &mut ChaCha8Rng, n: usize, t_len: usize, c: usize) -> Vec<f64> {
    let mut x = uniform(r, n * t_len * c, 1.0);
    for j in 1..n {
        if r.random_bool(0.3) {
            let src = r.random_range(0..j);
            for t in 0..t_len {
                let (a, b) = ((src * t_len + t) * c, (j * t_len + t) * c);
                let row = x[a..a + c].to_vec();
                x[b..b + c].copy_from_slice(&row);
            }
        }
    }
    x
}

/// Per-frame selections that disagree with the rank oracle, summed over
/// every `K` in `1..=n`.
pub fn focal_rank_mismatches(seed: u64, n: usize) -> usize {
    let mut r = rng(seed);
    let (t_len, c) = (3, 4);
    let x = tied_features(&mut r, n, t_len, c);
    let w = uniform(&mut r, c, 1.0);
    let xt = Tensor::new(x.clone(), &[n, t_len, c]).unwrap();
    let wt = Tensor::new(w.clone(), &[c, 1]).unwrap();
    let scores = focal_scores(&x, n, t_len, c, &w);
    let mut bad = 0;
    for k in 1..=n {
        let sel = focal_joint_select(&xt, &wt, k, SelectionMode::PerFrame).unwrap();
        for t in 0..t_len {
            // copied rows tie exactly in the oracle scores as well
            let column: Vec<f64> = (0..n).map(|j| scores[j * t_len + t]).collect();
            if sel.indices[t] != rank_select(&column, k) {
                bad += 1;
            }
        }
        if k == n && max_abs_diff(sel.scores.data(), &scores) > 1e-12 {
            bad += 1;
        }
    }
    bad
}

/// Largest score change when `W_p` is multiplied by positive factors.
pub fn focal_scale_deviation(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, t_len, c) = (7, 4, 5);
    let x = random_tensor(&mut r, &[n, t_len, c], 2.0);
    let w = uniform(&mut r, c, 1.0);
    let base = focal_joint_select(&x, &Tensor::new(w.clone(), &[c, 1]).unwrap(), 3, SelectionMode::PerFrame).unwrap();
    let mut worst = 0.0f64;
    for factor in [1e-3, 0.5, 2.0, 37.0, 1e4] {
        let scaled: Vec<f64> = w.iter().map(|v| v * factor).collect();
        let sel = focal_joint_select(&x, &Tensor::new(scaled, &[c, 1]).unwrap(), 3, SelectionMode::PerFrame).unwrap();
        worst = worst.max(max_abs_diff(sel.scores.data(), base.scores.data()));
        if sel.indices != base.indices {
            worst = f64::INFINITY;
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// model structure

use fgstformer::model::{Model, Variant};
use std::time::{Duration, Instant};

/// Shapes the full-size configuration must produce, stage by stage.
pub const GOLDEN_TRACE: &[(&str, &[usize])] = &[
    ("embed", &[25, 128, 64]),
    ("layer1", &[25, 128, 64]),
    ("layer2", &[25, 128, 64]),
    ("layer3", &[25, 64, 128]),
    ("layer4", &[25, 64, 128]),
    ("layer5", &[25, 32, 256]),
    ("layer6", &[25, 32, 256]),
    ("split.joints", &[15, 32, 256]),
    ("split.parts", &[10, 32, 256]),
    ("layer7.joints", &[15, 32, 256]),
    ("layer7.parts", &[10, 32, 256]),
    ("layer8.joints", &[15, 32, 256]),
    ("layer8.parts", &[10, 32, 256]),
    ("pool", &[512]),
    ("logits", &[60]),
];

/// Build the full-size model and run one sample; returns the first trace
/// mismatch, if any, and the wall time of build plus forward.
pub fn golden_trace_check() -> (std::result::Result<(), String>, Duration) {
    let start = Instant::now();
    let cfg = ModelConfig::full(60);
    let model = Model::new(&cfg, 0).unwrap();
    let x = random_tensor(&mut rng(0), &[25, 128, 3], 1.0);
    let out = model.forward(&x).unwrap();
    let elapsed = start.elapsed();
    let got: Vec<(String, Vec<usize>)> = out.trace.iter().map(|e| (e.name.clone(), e.shape.clone())).collect();
    let want: Vec<(String, Vec<usize>)> = GOLDEN_TRACE.iter().map(|(n, s)| (n.to_string(), s.to_vec())).collect();
    if got != want {
        return (Err(format!("trace {got:?}")), elapsed);
    }
    if out.logits.data().iter().any(|v| !v.is_finite()) {
        return (Err("non-finite logits".into()), elapsed);
    }
    (Ok(()), elapsed)
}

/// Eight layers at reduced width on the 25-joint layout.
pub fn narrow_config() -> ModelConfig {
    let mut cfg = ModelConfig::full(10);
    cfg.frames = 16;
    cfg.channels = vec![8, 8, 16, 16, 32, 32, 32, 32];
    cfg.spatial_heads = 2;
    cfg.hidden = 16;
    cfg
}

/// Forward and backward once; every parameter must get a finite gradient.
pub fn forward_backward(cfg: &ModelConfig, seed: u64) -> std::result::Result<(), String> {
    let model = Model::new(cfg, seed).map_err(|e| e.to_string())?;
    let x = random_tensor(&mut rng(seed), &[cfg.joints, cfg.frames, cfg.in_channels], 1.0);
    let p = model.params.bind();
    let loss = model
        .network
        .logits(&p, &x)
        .and_then(|z| z.cross_entropy(0))
        .map_err(|e| e.to_string())?;
    loss.backward().map_err(|e| e.to_string())?;
    for (e, g) in model.params.entries().iter().zip(p.grads()) {
        match g {
            Some(g) if g.iter().all(|v| v.is_finite()) => {}
            _ => return Err(format!("`{}` has no finite gradient", e.name)),
        }
    }
    Ok(())
}

/// Every spatial variant, temporal kind and stage split of the narrow model
/// builds, runs forward and backward.
pub fn ablation_grid() -> Vec<(String, std::result::Result<(), String>)> {
    let mut out = Vec::new();
    for v in Variant::ALL {
        let mut cfg = narrow_config();
        v.apply(&mut cfg.ablation);
        out.push((format!("variant {v:?}"), forward_backward(&cfg, 1)));
    }
    for kind in [TemporalKind::Basic, TemporalKind::TcnOnly, TemporalKind::Fg] {
        let mut cfg = narrow_config();
        cfg.ablation.temporal = kind;
        out.push((format!("temporal {kind:?}"), forward_backward(&cfg, 2)));
    }
    for (l1, l2) in [(4, 4), (5, 3), (6, 2), (7, 1)] {
        let r = narrow_config()
            .with_stages(l1, l2)
            .map_err(|e| e.to_string())
            .and_then(|cfg| forward_backward(&cfg, 3));
        out.push((format!("stages ({l1},{l2})"), r));
    }
    out
}

/// Parameter counts of the full-size spatial variants, in `Variant::ALL`
/// order.
pub fn variant_parameter_counts() -> Vec<usize> {
    Variant::ALL
        .iter()
        .map(|v| {
            let mut cfg = ModelConfig::full(60);
            v.apply(&mut cfg.ablation);
            Model::new(&cfg, 0).unwrap().parameter_count()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// training

use fgstformer::data::{generate_dataset, DatasetSpec, SkeletonLayout, Split};
use fgstformer::train::{train, Dataset, TrainReport, TrainRunConfig};
use fgstformer::ExecMode;
use std::path::Path;

pub const DESK_DATA_SEED: u64 = 2024;

/// Train and eval splits of the five-class synthetic set, preprocessed for
/// `cfg`.
pub fn desk_data(cfg: &ModelConfig, per_class: usize, noise: f64, seed: u64) -> (Dataset, Dataset) {
    let spec = DatasetSpec::standard(per_class, cfg.frames, noise);
    let set = generate_dataset(&spec, seed, ExecMode::Sequential).unwrap();
    let layout = SkeletonLayout::builtin(&cfg.layout).unwrap();
    let part = |split: Split| {
        Dataset::from_sequences(cfg, &layout, set.iter().filter(|(_, s)| *s == split).map(|(q, _)| q)).unwrap()
    };
    (part(Split::Train), part(Split::Eval))
}

pub fn run_training(
    cfg: &ModelConfig,
    data: &(Dataset, Dataset),
    run: &TrainRunConfig,
    out: Option<&Path>,
) -> (Model, TrainReport) {
    let mut model = Model::new(cfg, run.seed).unwrap();
    let report = train(&mut model, &data.0, &data.1, run, out, &mut |_| {}).unwrap();
    (model, report)
}

/// Short run used for the determinism checks.
pub fn short_run(exec: ExecMode) -> TrainRunConfig {
    TrainRunConfig {
        epochs: 3,
        warmup_epochs: 1,
        decay_epochs: vec![2],
        seed: 17,
        exec,
        ..TrainRunConfig::desk()
    }
}

/// Two identical short runs into fresh directories; names the first file
/// whose bytes differ.
pub fn determinism_check(exec: ExecMode) -> std::result::Result<(), String> {
    let cfg = ModelConfig::desk(5);
    let data = desk_data(&cfg, 12, 0.01, 3);
    let run = short_run(exec);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_training(&cfg, &data, &run, Some(d.path()));
    }
    for name in [fgstformer::train::METRICS_FILE, fgstformer::train::BEST_CHECKPOINT, fgstformer::train::FINAL_CHECKPOINT] {
        let a = std::fs::read(dirs[0].path().join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// containers

use fgstformer::checkpoint::{Checkpoint, Dtype};
use fgstformer::data::{decode_sample, encode_sample, read_sample, write_sample, SkeletonSequence};

/// Sample bytes assembled field by field, independent of the encoder.
pub fn hand_sample_bytes(layout: &str, dims: [u32; 3], label: u32, values: &[f32]) -> Vec<u8> {
    let mut b = b"FGSTSKEL".to_vec();
    b.extend(1u32.to_le_bytes());
    b.extend((layout.len() as u32).to_le_bytes());
    b.extend(layout.as_bytes());
    for d in dims {
        b.extend(d.to_le_bytes());
    }
    b.extend(label.to_le_bytes());
    for v in values {
        b.extend(v.to_le_bytes());
    }
    b
}

/// Sample and checkpoint containers through memory and disk.
pub fn format_round_trips() -> std::result::Result<(), String> {
    let err = |e: fgstformer::Error| e.to_string();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;

    // samples: f32-representable values, including signed zero and subnormals
    let mut values: Vec<f32> = uniform(&mut rng(1), 12 * 5 * 3, 3.0).into_iter().map(|v| v as f32).collect();
    values[0] = -0.0;
    values[1] = f32::MIN_POSITIVE / 4.0;
    values[2] = f32::MAX;
    let seq = SkeletonSequence::new("synthetic-12", 12, 5, 3, 3, values.iter().map(|&v| f64::from(v)).collect()).map_err(err)?;
    let bytes = encode_sample(&seq).map_err(err)?;
    if bytes != hand_sample_bytes("synthetic-12", [12, 5, 3], 3, &values) {
        return Err("sample bytes differ from the documented layout".into());
    }
    let back = decode_sample(&bytes).map_err(err)?;
    let bits = |s: &SkeletonSequence| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if bits(&back) != bits(&seq) || back != seq {
        return Err("sample memory round trip changed values".into());
    }
    let path = dir.path().join("s.fgsk");
    write_sample(&path, &seq).map_err(err)?;
    if bits(&read_sample(&path).map_err(err)?) != bits(&seq) {
        return Err("sample file round trip changed values".into());
    }

    // checkpoints at both widths
    let mut model = Model::new(&ModelConfig::toy(), 2).map_err(err)?;
    randomize(&mut model.params, &mut rng(5), 1.0);
    let ck = Checkpoint::from_model(&model);
    let wide = ck.encode(Dtype::F64).map_err(err)?;
    let back = Checkpoint::decode(&wide).map_err(err)?;
    if back != ck || back.encode(Dtype::F64).map_err(err)? != wide {
        return Err("f64 checkpoint round trip not exact".into());
    }
    let path = dir.path().join("m.ckpt");
    ck.write(&path, Dtype::F64).map_err(err)?;
    let restored = Checkpoint::read(&path).map_err(err)?.into_model().map_err(err)?;
    let x = random_tensor(&mut rng(6), &[6, 8, 3], 1.0);
    let (a, b) = (model.logits(&x).map_err(err)?, restored.logits(&x).map_err(err)?);
    if a.iter().zip(&b).any(|(p, q)| p.to_bits() != q.to_bits()) {
        return Err("restored model computes different logits".into());
    }
    let narrow = ck.encode(Dtype::F32).map_err(err)?;
    let back = Checkpoint::decode(&narrow).map_err(err)?;
    let rounded = back.params.entries().iter().zip(ck.params.entries()).all(|(b, o)| {
        b.value.iter().zip(&o.value).all(|(x, y)| x.to_bits() == f64::from(*y as f32).to_bits())
    });
    if !rounded || back.encode(Dtype::F32).map_err(err)? != narrow {
        return Err("f32 checkpoint round trip not exact".into());
    }
    Ok(())
}

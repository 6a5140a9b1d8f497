//! Network building blocks expressed on the tape, plus the sinusoidal time
//! embedding and a tape-free cross-attention entry point.

use super::params::{Binder, Init};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Sinusoidal embedding: `sin(t w_i)` for the first half, `cos(t w_i)` for
/// the second, with `w_i = 10000^(-2i/dim)`.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::param(format!(
            "time embedding dim must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Ok(out)
}

pub(crate) fn init_linear(init: &mut Init, prefix: &str, inp: usize, out: usize) {
    init.fan_in(format!("{prefix}.weight"), inp, out, inp);
    init.zeros(format!("{prefix}.bias"), 1, out);
}

pub(crate) fn init_conv(init: &mut Init, prefix: &str, cin: usize, cout: usize, kernel: usize) {
    init.fan_in(format!("{prefix}.weight"), cout, cin * kernel, cin * kernel);
    init.zeros(format!("{prefix}.bias"), cout, 1);
}

/// Per-channel norm affine, stored as a column (`channels x 1`).
pub(crate) fn init_group_norm(init: &mut Init, prefix: &str, channels: usize) {
    init.ones(format!("{prefix}.gamma"), channels, 1);
    init.zeros(format!("{prefix}.beta"), channels, 1);
}

pub(crate) fn init_layer_norm(init: &mut Init, prefix: &str, dim: usize) {
    init.ones(format!("{prefix}.gamma"), 1, dim);
    init.zeros(format!("{prefix}.beta"), 1, dim);
}

/// `x W + b` for row-major tokens `x: n x in`.
pub(crate) fn linear<'a>(tape: &mut Tape<'a>, p: &mut Binder<'a>, x: Var, prefix: &str) -> Var {
    let w = p.get(tape, &format!("{prefix}.weight"));
    let b = p.get(tape, &format!("{prefix}.bias"));
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

/// 1D convolution over a `channels x length` map.
pub(crate) fn conv1d<'a>(
    tape: &mut Tape<'a>,
    p: &mut Binder<'a>,
    x: Var,
    prefix: &str,
    kernel: usize,
    stride: usize,
) -> Var {
    let w = p.get(tape, &format!("{prefix}.weight"));
    let b = p.get(tape, &format!("{prefix}.bias"));
    let cols = if kernel == 1 && stride == 1 {
        x
    } else {
        tape.im2col(x, kernel, stride, kernel / 2)
    };
    let y = tape.matmul(w, cols);
    tape.add_col(y, b)
}

pub(crate) fn group_norm<'a>(
    tape: &mut Tape<'a>,
    p: &mut Binder<'a>,
    x: Var,
    prefix: &str,
    groups: usize,
) -> Var {
    let g = p.get(tape, &format!("{prefix}.gamma"));
    let b = p.get(tape, &format!("{prefix}.beta"));
    tape.group_norm(x, g, b, groups, NORM_EPS)
}

pub(crate) fn layer_norm<'a>(tape: &mut Tape<'a>, p: &mut Binder<'a>, x: Var, prefix: &str) -> Var {
    let g = p.get(tape, &format!("{prefix}.gamma"));
    let b = p.get(tape, &format!("{prefix}.beta"));
    tape.layer_norm(x, g, b, NORM_EPS)
}

/// Registers `q`, `k`, `v` (no bias) and `out` (with bias) projections.
pub(crate) fn init_attention(
    init: &mut Init,
    prefix: &str,
    query_dim: usize,
    kv_dim: usize,
    attn_dim: usize,
) {
    init.fan_in(format!("{prefix}.q.weight"), query_dim, attn_dim, query_dim);
    init.fan_in(format!("{prefix}.k.weight"), kv_dim, attn_dim, kv_dim);
    init.fan_in(format!("{prefix}.v.weight"), kv_dim, attn_dim, kv_dim);
    init_linear(init, &format!("{prefix}.out"), attn_dim, query_dim);
}

/// Multi-head attention of `queries: n x Cq` over `keys_values: m x Ckv`.
///
/// Per head `softmax(Q K^T / sqrt(d_head)) V`; heads are concatenated and
/// projected back to `Cq`.
pub(crate) fn attention<'a>(
    tape: &mut Tape<'a>,
    p: &mut Binder<'a>,
    queries: Var,
    keys_values: Var,
    prefix: &str,
    heads: usize,
) -> Var {
    let wq = p.get(tape, &format!("{prefix}.q.weight"));
    let wk = p.get(tape, &format!("{prefix}.k.weight"));
    let wv = p.get(tape, &format!("{prefix}.v.weight"));
    let q = tape.matmul(queries, wq);
    let k = tape.matmul(keys_values, wk);
    let v = tape.matmul(keys_values, wv);
    let d = tape.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh),
                tape.slice_cols(k, h * dh, dh),
                tape.slice_cols(v, h * dh, dh),
            )
        };
        let scores = tape.matmul_nt(qh, kh);
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scores);
        outs.push(tape.matmul(weights, vh));
    }
    let merged = if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)
    };
    linear(tape, p, merged, &format!("{prefix}.out"))
}

/// Explicit projection matrices for [`cross_attention`].
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// `d x d_attn`
    pub w_q: Mat,
    /// `d_ctx x d_attn`
    pub w_k: Mat,
    /// `d_ctx x d_attn`
    pub w_v: Mat,
    /// `d_attn x d`
    pub w_out: Mat,
    /// `1 x d`
    pub b_out: Mat,
    pub heads: usize,
}

impl AttentionParams {
    /// Identity projections for square dimension `d`.
    pub fn identity(d: usize, heads: usize) -> Self {
        AttentionParams {
            w_q: Mat::identity(d),
            w_k: Mat::identity(d),
            w_v: Mat::identity(d),
            w_out: Mat::identity(d),
            b_out: Mat::zeros(1, d),
            heads,
        }
    }
}

/// Cross-attention of `x` (queries) over `context`; self-attention when the
/// context is absent.
pub fn cross_attention(x: &Mat, context: Option<&Mat>, params: &AttentionParams) -> Result<Mat> {
    let c = context.unwrap_or(x);
    let d_attn = params.w_q.cols();
    if params.heads == 0 || d_attn % params.heads != 0 {
        return Err(Error::param(format!(
            "attention dim {d_attn} not divisible by {} heads",
            params.heads
        )));
    }
    let ok = params.w_q.rows() == x.cols()
        && params.w_k.shape() == (c.cols(), d_attn)
        && params.w_v.shape() == (c.cols(), d_attn)
        && params.w_out.rows() == d_attn
        && params.b_out.shape() == (1, params.w_out.cols());
    if !ok {
        return Err(Error::dim(format!(
            "attention projections do not fit queries {:?} and context {:?}",
            x.shape(),
            c.shape()
        )));
    }
    let mut store = super::ParamStore::new();
    store.insert("attn.q.weight", params.w_q.clone());
    store.insert("attn.k.weight", params.w_k.clone());
    store.insert("attn.v.weight", params.w_v.clone());
    store.insert("attn.out.weight", params.w_out.clone());
    store.insert("attn.out.bias", params.b_out.clone());
    let mut binder = Binder::new(&store, false);
    let mut tape = Tape::new();
    let xv = tape.constant_ref(x);
    let cv = tape.constant_ref(c);
    let out = attention(&mut tape, &mut binder, xv, cv, "attn", params.heads);
    Ok(tape.value(out).clone())
}

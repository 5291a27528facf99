//! Layer primitives with explicit vector–Jacobian products.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{GradsMut, ParamValues};

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn linear(p: &ParamValues<'_>, w: usize, b: usize, x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.dot(&p.matrix(w)) + p.vector(b)
}

/// Accumulates weight/bias gradients and returns `dx`.
pub(crate) fn linear_back(
    p: &ParamValues<'_>,
    g: &mut GradsMut<'_>,
    w: usize,
    b: usize,
    x: ArrayView2<'_, f64>,
    dy: ArrayView2<'_, f64>,
) -> Array2<f64> {
    g.matrix(w).scaled_add(1.0, &x.t().dot(&dy));
    g.vector(b).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    dy.dot(&p.matrix(w).t())
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(x: ArrayView2<'_, f64>, gamma: ArrayView1<'_, f64>, beta: ArrayView1<'_, f64>) -> (Array2<f64>, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *is = 1.0 / (var + LN_EPS).sqrt();
        let k = *is;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * &gamma + beta;
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_back(
    g: &mut GradsMut<'_>,
    gamma_ix: usize,
    beta_ix: usize,
    gamma: ArrayView1<'_, f64>,
    cache: &LnCache,
    dy: ArrayView2<'_, f64>,
) -> Array2<f64> {
    g.vector(gamma_ix).scaled_add(1.0, &(&dy * &cache.xhat).sum_axis(Axis(0)));
    g.vector(beta_ix).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    let n = dy.ncols() as f64;
    let dxhat = &dy * &gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    for r in 0..dy.nrows() {
        let dh = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let m1 = dh.sum() / n;
        let m2 = dh.dot(&xh) / n;
        let is = cache.inv_std[r];
        for c in 0..dy.ncols() {
            dx[[r, c]] = is * (dh[c] - m1 - xh[c] * m2);
        }
    }
    dx
}

pub(crate) fn silu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v / (1.0 + (-v).exp()))
}

pub(crate) fn silu_back(x: &Array2<f64>, dy: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut dx = dy.to_owned();
    for (d, &v) in dx.iter_mut().zip(x.iter()) {
        let sg = 1.0 / (1.0 + (-v).exp());
        *d *= sg * (1.0 + v * (1.0 - sg));
    }
    dx
}

fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Parameter indices of one attention block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIx {
    pub q_w: usize,
    pub q_b: usize,
    pub k_w: usize,
    pub k_b: usize,
    pub v_w: usize,
    pub v_b: usize,
    pub o_w: usize,
    pub o_b: usize,
}

pub(crate) struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
}

/// Multi-head attention of queries `x` over keys/values `y`, unmasked.
pub(crate) fn attention(
    p: &ParamValues<'_>,
    ix: &AttnIx,
    heads: usize,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> (Array2<f64>, AttnCache) {
    let q = linear(p, ix.q_w, ix.q_b, x);
    let k = linear(p, ix.k_w, ix.k_b, y);
    let v = linear(p, ix.v_w, ix.v_b, y);
    let dm = q.ncols();
    let dh = dm / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut o = Array2::zeros((x.nrows(), dm));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut scores);
        o.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let out = linear(p, ix.o_w, ix.o_b, o.view());
    (out, AttnCache { q, k, v, probs, o })
}

/// Returns `(dx, dy)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_back(
    p: &ParamValues<'_>,
    g: &mut GradsMut<'_>,
    ix: &AttnIx,
    heads: usize,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    cache: &AttnCache,
    dout: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>) {
    let d_o = linear_back(p, g, ix.o_w, ix.o_b, cache.o.view(), dout);
    let dm = cache.q.ncols();
    let dh = dm / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let pr = &cache.probs[h];
        let doh = d_o.slice(cols);
        let dp = doh.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&pr.t().dot(&doh));
        let mut ds = dp;
        for (mut drow, prow) in ds.rows_mut().into_iter().zip(pr.rows()) {
            let dot = drow.dot(&prow);
            for (d, &pv) in drow.iter_mut().zip(prow.iter()) {
                *d = pv * (*d - dot) * scale;
            }
        }
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }
    let dx = linear_back(p, g, ix.q_w, ix.q_b, x, dq.view());
    let mut dy = linear_back(p, g, ix.k_w, ix.k_b, y, dk.view());
    dy += &linear_back(p, g, ix.v_w, ix.v_b, y, dv.view());
    (dx, dy)
}

/// Sinusoidal features of a scalar, `width` wide.
pub(crate) fn sinusoid(value: f64, width: usize) -> Array1<f64> {
    let half = width.div_ceil(2).max(1);
    let mut out = Array1::zeros(width);
    for i in 0..width {
        let k = i / 2;
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        out[i] = if i % 2 == 0 { (value * freq).sin() } else { (value * freq).cos() };
    }
    out
}

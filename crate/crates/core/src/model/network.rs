//! Forward pass with activation caching, and the matching reverse pass.
//!
//! A batch of `B` windows is laid out as `B·W` rows (row `b·W + t` is step `t`
//! of window `b`), so every linear map is a single matrix product.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use super::loss::batch_loss_and_grad;
use super::params::real;
use super::{LayerParams, MaskFusion, ModelConfig, ModelParams, Real};
use crate::data::TrainingWindow;
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

/// Inputs for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    /// `(B, channels, W)`
    pub x: Array3<F>,
    /// `(B, bio_dim)`
    pub bio: Array2<F>,
}

impl<F: Real> Batch<F> {
    pub fn from_windows<'a>(windows: impl IntoIterator<Item = &'a TrainingWindow>) -> Self {
        let windows: Vec<_> = windows.into_iter().collect();
        let b = windows.len();
        let (c, w) = windows.first().map(|w| w.x.dim()).unwrap_or((0, 0));
        let bio_dim = windows.first().map(|w| w.bio_norm.len()).unwrap_or(0);
        let x = Array3::from_shape_fn((b, c, w), |(i, ch, t)| real(windows[i].x[[ch, t]]));
        let bio = Array2::from_shape_fn((b, bio_dim), |(i, k)| real(windows[i].bio_norm[k]));
        Self { x, bio }
    }

    /// Targets `(B, muscles, W)` for the same windows.
    pub fn targets<'a>(windows: impl IntoIterator<Item = &'a TrainingWindow>) -> Array3<F> {
        let windows: Vec<_> = windows.into_iter().collect();
        let (m, w) = windows.first().map(|w| w.y.dim()).unwrap_or((0, 0));
        Array3::from_shape_fn((windows.len(), m, w), |(i, k, t)| real(windows[i].y[[k, t]]))
    }

    pub fn len(&self) -> usize {
        self.x.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct MaskCache<F> {
    /// pooled features, average rows then max rows: `(2B, C)`
    pooled: Array2<F>,
    hidden_pre: Array2<F>,
    hidden: Array2<F>,
    out: Array2<F>,
    s: Array2<F>,
}

struct FilmCache<F> {
    hidden_pre: Array2<F>,
    hidden: Array2<F>,
    /// `(B, D)`
    dgamma: Array2<F>,
}

struct NormCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

struct LayerCache<F> {
    ln1: NormCache<F>,
    a: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// attention weights per (window, head), `W × W`
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
    drop1: Option<Array2<F>>,
    ln2: NormCache<F>,
    b: Array2<F>,
    ff_pre: Array2<F>,
    ff_hidden: Array2<F>,
    drop2: Option<Array2<F>>,
}

/// Activations retained for the reverse pass.
pub struct ForwardCache<F> {
    batch: usize,
    window: usize,
    /// unmasked input, `(B·W, C)`
    x_rows: Array2<F>,
    mask: Option<MaskCache<F>>,
    masked: Array2<F>,
    embedded: Array2<F>,
    film: Option<FilmCache<F>>,
    layers: Vec<LayerCache<F>>,
    encoded: Array2<F>,
    head_pre: Array2<F>,
    head_hidden: Array2<F>,
    y_rows: Array2<F>,
}

impl<F: Real> ForwardCache<F> {
    /// Channel mask `(B, C)`, if region importance learning is enabled.
    pub fn mask(&self) -> Option<&Array2<F>> {
        self.mask.as_ref().map(|m| &m.s)
    }
}

fn sigmoid<F: Real>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

fn relu<F: Real>(v: F) -> F {
    if v > F::zero() {
        v
    } else {
        F::zero()
    }
}

fn linear<F: Real>(x: &ArrayView2<F>, w: &Array2<F>, b: &Array1<F>) -> Array2<F> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates `gw += xᵀ·dy`, `gb += Σ dy` and returns `dy·wᵀ` when asked.
fn linear_backward<F: Real>(
    x: &ArrayView2<F>,
    w: &Array2<F>,
    dy: &Array2<F>,
    gw: &mut Array2<F>,
    gb: &mut Array1<F>,
    need_dx: bool,
) -> Option<Array2<F>> {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), gw);
    *gb += &dy.sum_axis(Axis(0));
    need_dx.then(|| dy.dot(&w.t()))
}

fn relu_backward<F: Real>(dy: &mut Array2<F>, pre: &Array2<F>) {
    dy.zip_mut_with(pre, |d, &p| {
        if p <= F::zero() {
            *d = F::zero()
        }
    });
}

fn layer_norm<F: Real>(x: &Array2<F>, gain: &Array1<F>, bias: &Array1<F>) -> (Array2<F>, NormCache<F>) {
    let n = real::<F>(x.ncols() as f64);
    let eps = real::<F>(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) / n;
        *r = F::one() / (var + eps).sqrt();
        let k = *r;
        row.mapv_inplace(|v| v * k);
    }
    let mut y = &xhat * gain;
    y += bias;
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward<F: Real>(
    dy: &Array2<F>,
    cache: &NormCache<F>,
    gain: &Array1<F>,
    g_gain: &mut Array1<F>,
    g_bias: &mut Array1<F>,
) -> Array2<F> {
    *g_gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *g_bias += &dy.sum_axis(Axis(0));
    let n = real::<F>(dy.ncols() as f64);
    let mut dx = dy * gain;
    for ((mut row, xhat), &r) in dx
        .axis_iter_mut(Axis(0))
        .zip(cache.xhat.axis_iter(Axis(0)))
        .zip(cache.rstd.iter())
    {
        let mean_d = row.sum() / n;
        let mean_dx = row
            .iter()
            .zip(xhat.iter())
            .map(|(&d, &h)| d * h)
            .fold(F::zero(), |a, b| a + b)
            / n;
        row.zip_mut_with(&xhat, |d, &h| *d = r * (*d - mean_d - h * mean_dx));
    }
    dx
}

fn softmax_rows<F: Real>(m: &mut Array2<F>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn dropout_mask<F: Real, R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<F> {
    let keep = real::<F>(1.0 / (1.0 - p));
    Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    })
}

fn check_shapes<F: Real>(cfg: &ModelConfig, batch: &Batch<F>) -> Result<()> {
    let (_, c, w) = batch.x.dim();
    if c != cfg.n_channels || w != cfg.window {
        return Err(Error::config(format!(
            "input is {c}×{w}, model expects {}×{}",
            cfg.n_channels, cfg.window
        )));
    }
    if batch.bio.dim() != (batch.len(), cfg.bio_dim) {
        return Err(Error::config(format!(
            "bio batch is {:?}, model expects ({}, {})",
            batch.bio.dim(),
            batch.len(),
            cfg.bio_dim
        )));
    }
    if batch.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            tensor: "input".into(),
            detail: "non-finite pressure value".into(),
        });
    }
    if batch.bio.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            tensor: "bio".into(),
            detail: "non-finite bio value".into(),
        });
    }
    Ok(())
}

fn mask_forward<F: Real>(params: &ModelParams<F>, cfg: &ModelConfig, x: &Array3<F>) -> MaskCache<F> {
    let (b, c, w) = x.dim();
    let inv_w = real::<F>(1.0 / w as f64);
    let mut pooled = Array2::zeros((2 * b, c));
    for i in 0..b {
        for ch in 0..c {
            let series = x.slice(s![i, ch, ..]);
            pooled[[i, ch]] = series.sum() * inv_w;
            pooled[[b + i, ch]] = series.iter().fold(F::neg_infinity(), |a, &v| a.max(v));
        }
    }
    let hidden_pre = linear(&pooled.view(), &params.mask_w1, &params.mask_b1);
    let hidden = hidden_pre.mapv(relu);
    let out = linear(&hidden.view(), &params.mask_w2, &params.mask_b2);
    let avg = out.slice(s![..b, ..]);
    let max = out.slice(s![b.., ..]);
    let mut s = Array2::zeros((b, c));
    ndarray::Zip::from(&mut s).and(&avg).and(&max).for_each(|s, &a, &m| {
        let logit = match cfg.mask_fusion {
            MaskFusion::Sum => a + m,
            MaskFusion::Max => a.max(m),
        };
        *s = sigmoid(logit);
    });
    MaskCache {
        pooled,
        hidden_pre,
        hidden,
        out,
        s,
    }
}

/// Channel importance `s ∈ (0, 1)^C` for a single `C × W` window.
pub fn region_importance_mask<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    x: ArrayView2<F>,
) -> Result<Array1<F>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            tensor: "input".into(),
            detail: "non-finite pressure value".into(),
        });
    }
    if x.nrows() != cfg.n_channels {
        return Err(Error::config(format!(
            "input has {} channels, model expects {}",
            x.nrows(),
            cfg.n_channels
        )));
    }
    let x3 = x.to_owned().insert_axis(Axis(0));
    Ok(mask_forward(params, cfg, &x3).s.row(0).to_owned())
}

fn layer_forward<F: Real, R: Rng + ?Sized>(
    l: &LayerParams<F>,
    cfg: &ModelConfig,
    h: &Array2<F>,
    batch: usize,
    rng: &mut Option<&mut R>,
) -> (Array2<F>, LayerCache<F>) {
    let (w, heads, dh) = (cfg.window, cfg.n_heads, cfg.head_dim());
    let scale = real::<F>(1.0 / (dh as f64).sqrt());

    let (a, ln1) = layer_norm(h, &l.ln1_gain, &l.ln1_bias);
    let q = linear(&a.view(), &l.wq, &l.bq);
    let k = linear(&a.view(), &l.wk, &l.bk);
    let v = linear(&a.view(), &l.wv, &l.bv);
    let mut ctx = Array2::zeros(h.raw_dim());
    let mut probs = Vec::with_capacity(batch * heads);
    for b in 0..batch {
        let rows = b * w..(b + 1) * w;
        for hd in 0..heads {
            let cols = hd * dh..(hd + 1) * dh;
            let qv = q.slice(s![rows.clone(), cols.clone()]);
            let kv = k.slice(s![rows.clone(), cols.clone()]);
            let vv = v.slice(s![rows.clone(), cols.clone()]);
            let mut scores = qv.dot(&kv.t());
            scores *= scale;
            softmax_rows(&mut scores);
            ctx.slice_mut(s![rows.clone(), cols]).assign(&scores.dot(&vv));
            probs.push(scores);
        }
    }
    let mut attn = linear(&ctx.view(), &l.wo, &l.bo);
    let drop1 = rng
        .as_deref_mut()
        .filter(|_| cfg.dropout > 0.0)
        .map(|r| dropout_mask(attn.dim(), cfg.dropout, r));
    if let Some(m) = &drop1 {
        attn *= m;
    }
    let h1 = h + &attn;

    let (bn, ln2) = layer_norm(&h1, &l.ln2_gain, &l.ln2_bias);
    let ff_pre = linear(&bn.view(), &l.ff_w1, &l.ff_b1);
    let ff_hidden = ff_pre.mapv(relu);
    let mut ff = linear(&ff_hidden.view(), &l.ff_w2, &l.ff_b2);
    let drop2 = rng
        .as_deref_mut()
        .filter(|_| cfg.dropout > 0.0)
        .map(|r| dropout_mask(ff.dim(), cfg.dropout, r));
    if let Some(m) = &drop2 {
        ff *= m;
    }
    let out = h1 + ff;
    (
        out,
        LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            drop1,
            ln2,
            b: bn,
            ff_pre,
            ff_hidden,
            drop2,
        },
    )
}

fn layer_backward<F: Real>(
    l: &LayerParams<F>,
    g: &mut LayerParams<F>,
    cfg: &ModelConfig,
    c: &LayerCache<F>,
    d_out: Array2<F>,
    batch: usize,
) -> Array2<F> {
    let (w, heads, dh) = (cfg.window, cfg.n_heads, cfg.head_dim());
    let scale = real::<F>(1.0 / (dh as f64).sqrt());

    // feed-forward sublayer
    let mut d_ff = d_out.clone();
    if let Some(m) = &c.drop2 {
        d_ff *= m;
    }
    let mut d_hidden = linear_backward(&c.ff_hidden.view(), &l.ff_w2, &d_ff, &mut g.ff_w2, &mut g.ff_b2, true)
        .unwrap();
    relu_backward(&mut d_hidden, &c.ff_pre);
    let d_bn = linear_backward(&c.b.view(), &l.ff_w1, &d_hidden, &mut g.ff_w1, &mut g.ff_b1, true).unwrap();
    let mut d_h1 = layer_norm_backward(&d_bn, &c.ln2, &l.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
    d_h1 += &d_out;

    // attention sublayer
    let mut d_attn = d_h1.clone();
    if let Some(m) = &c.drop1 {
        d_attn *= m;
    }
    let d_ctx = linear_backward(&c.ctx.view(), &l.wo, &d_attn, &mut g.wo, &mut g.bo, true).unwrap();
    let mut dq = Array2::zeros(d_ctx.raw_dim());
    let mut dk = Array2::zeros(d_ctx.raw_dim());
    let mut dv = Array2::zeros(d_ctx.raw_dim());
    for b in 0..batch {
        let rows = b * w..(b + 1) * w;
        for hd in 0..heads {
            let cols = hd * dh..(hd + 1) * dh;
            let p = &c.probs[b * heads + hd];
            let dc = d_ctx.slice(s![rows.clone(), cols.clone()]);
            let qv = c.q.slice(s![rows.clone(), cols.clone()]);
            let kv = c.k.slice(s![rows.clone(), cols.clone()]);
            let vv = c.v.slice(s![rows.clone(), cols.clone()]);
            dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&dc));
            let mut dp = dc.dot(&vv.t());
            for (mut drow, prow) in dp.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                let inner = drow
                    .iter()
                    .zip(prow.iter())
                    .map(|(&d, &pp)| d * pp)
                    .fold(F::zero(), |a, b| a + b);
                drow.zip_mut_with(&prow, |d, &pp| *d = pp * (*d - inner) * scale);
            }
            dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&dp.dot(&kv));
            dk.slice_mut(s![rows.clone(), cols]).assign(&dp.t().dot(&qv));
        }
    }
    let av = c.a.view();
    let mut d_a = linear_backward(&av, &l.wq, &dq, &mut g.wq, &mut g.bq, true).unwrap();
    d_a += &linear_backward(&av, &l.wk, &dk, &mut g.wk, &mut g.bk, true).unwrap();
    d_a += &linear_backward(&av, &l.wv, &dv, &mut g.wv, &mut g.bv, true).unwrap();
    let mut d_h = layer_norm_backward(&d_a, &c.ln1, &l.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
    d_h += &d_h1;
    d_h
}

/// Forward pass that keeps every intermediate needed by [`gradients`].
///
/// Dropout is applied only when `dropout_rng` is given.
pub fn forward_cached<F: Real, R: Rng + ?Sized>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    batch: &Batch<F>,
    mut dropout_rng: Option<&mut R>,
) -> Result<(Array3<F>, ForwardCache<F>)> {
    check_shapes(cfg, batch)?;
    let (b, c, w) = batch.x.dim();
    let rows = b * w;

    let mut x_rows = Array2::zeros((rows, c));
    for i in 0..b {
        x_rows
            .slice_mut(s![i * w..(i + 1) * w, ..])
            .assign(&batch.x.slice(s![i, .., ..]).t());
    }

    let mask = cfg.use_mask.then(|| mask_forward(params, cfg, &batch.x));
    let mut masked = x_rows.clone();
    if let Some(m) = &mask {
        for i in 0..b {
            let si = m.s.row(i);
            masked
                .slice_mut(s![i * w..(i + 1) * w, ..])
                .axis_iter_mut(Axis(0))
                .for_each(|mut r| r *= &si);
        }
    }

    let embedded = linear(&masked.view(), &params.embed_w, &params.embed_b);
    let mut h = embedded.clone();
    let film = if cfg.use_film {
        let hidden_pre = linear(&batch.bio.view(), &params.film_w1, &params.film_b1);
        let hidden = hidden_pre.mapv(relu);
        let out = linear(&hidden.view(), &params.film_w2, &params.film_b2);
        let d = cfg.d_model;
        let dgamma = out.slice(s![.., ..d]).to_owned();
        let beta = out.slice(s![.., d..]);
        for i in 0..b {
            let (gi, bi) = (dgamma.row(i), beta.row(i));
            for mut r in h.slice_mut(s![i * w..(i + 1) * w, ..]).axis_iter_mut(Axis(0)) {
                ndarray::Zip::from(&mut r)
                    .and(&gi)
                    .and(&bi)
                    .for_each(|x, &g, &bb| *x = (F::one() + g) * *x + bb);
            }
        }
        Some(FilmCache {
            hidden_pre,
            hidden,
            dgamma,
        })
    } else {
        None
    };
    for i in 0..b {
        h.slice_mut(s![i * w..(i + 1) * w, ..])
            .zip_mut_with(&params.pos, |x, &p| *x += p);
    }

    let mut layers = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        let (next, cache) = layer_forward(l, cfg, &h, b, &mut dropout_rng);
        layers.push(cache);
        h = next;
    }

    let head_pre = linear(&h.view(), &params.head_w1, &params.head_b1);
    let head_hidden = head_pre.mapv(relu);
    let y_rows = linear(&head_hidden.view(), &params.head_w2, &params.head_b2).mapv(sigmoid);

    let m = cfg.n_muscles;
    let yhat = Array3::from_shape_fn((b, m, w), |(i, k, t)| y_rows[[i * w + t, k]]);
    Ok((
        yhat,
        ForwardCache {
            batch: b,
            window: w,
            x_rows,
            mask,
            masked,
            embedded,
            film,
            layers,
            encoded: h,
            head_pre,
            head_hidden,
            y_rows,
        },
    ))
}

/// Evaluation-mode prediction `(B, muscles, W)`.
pub fn forward<F: Real>(params: &ModelParams<F>, cfg: &ModelConfig, batch: &Batch<F>) -> Result<Array3<F>> {
    forward_cached::<F, rand_chacha::ChaCha8Rng>(params, cfg, batch, None).map(|(y, _)| y)
}

/// Reverse pass: gradient of the scalar whose derivative w.r.t. `ŷ` is
/// `d_yhat`, accumulated into a fresh gradient set.
pub fn backward<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    batch: &Batch<F>,
    cache: &ForwardCache<F>,
    d_yhat: &Array3<F>,
) -> ModelParams<F> {
    let mut g = params.zeros_like();
    let (b, w) = (cache.batch, cache.window);

    // sigmoid head
    let mut d_logits = Array2::from_shape_fn(cache.y_rows.raw_dim(), |(r, k)| {
        let y = cache.y_rows[[r, k]];
        d_yhat[[r / w, k, r % w]] * y * (F::one() - y)
    });
    let mut d_hidden = linear_backward(
        &cache.head_hidden.view(),
        &params.head_w2,
        &d_logits,
        &mut g.head_w2,
        &mut g.head_b2,
        true,
    )
    .unwrap();
    relu_backward(&mut d_hidden, &cache.head_pre);
    d_logits = d_hidden;
    let mut d_h = linear_backward(
        &cache.encoded.view(),
        &params.head_w1,
        &d_logits,
        &mut g.head_w1,
        &mut g.head_b1,
        true,
    )
    .unwrap();

    for ((l, gl), c) in params
        .layers
        .iter()
        .zip(g.layers.iter_mut())
        .zip(cache.layers.iter())
        .rev()
    {
        d_h = layer_backward(l, gl, cfg, c, d_h, b);
    }

    // positional table
    for i in 0..b {
        g.pos += &d_h.slice(s![i * w..(i + 1) * w, ..]);
    }

    // FiLM
    let mut d_embedded = d_h.clone();
    if let Some(f) = &cache.film {
        let d = cfg.d_model;
        let mut d_out = Array2::zeros((b, 2 * d));
        for i in 0..b {
            let rows = i * w..(i + 1) * w;
            let dh_i = d_h.slice(s![rows.clone(), ..]);
            let e_i = cache.embedded.slice(s![rows.clone(), ..]);
            let d_gamma = (&dh_i * &e_i).sum_axis(Axis(0));
            let d_beta = dh_i.sum_axis(Axis(0));
            d_out.slice_mut(s![i, ..d]).assign(&d_gamma);
            d_out.slice_mut(s![i, d..]).assign(&d_beta);
            let gamma: Array1<F> = f.dgamma.row(i).mapv(|v| F::one() + v);
            for mut r in d_embedded.slice_mut(s![rows, ..]).axis_iter_mut(Axis(0)) {
                r *= &gamma;
            }
        }
        let mut d_fh = linear_backward(
            &f.hidden.view(),
            &params.film_w2,
            &d_out,
            &mut g.film_w2,
            &mut g.film_b2,
            true,
        )
        .unwrap();
        relu_backward(&mut d_fh, &f.hidden_pre);
        linear_backward(
            &batch.bio.view(),
            &params.film_w1,
            &d_fh,
            &mut g.film_w1,
            &mut g.film_b1,
            false,
        );
    }

    let d_masked = linear_backward(
        &cache.masked.view(),
        &params.embed_w,
        &d_embedded,
        &mut g.embed_w,
        &mut g.embed_b,
        cache.mask.is_some(),
    );

    if let (Some(m), Some(d_masked)) = (&cache.mask, d_masked) {
        let c = cfg.n_channels;
        // ds[b, c] = Σ_t dx'[b·W+t, c] · x[b, c, t]
        let prod = &d_masked * &cache.x_rows;
        let mut d_out = Array2::zeros((2 * b, c));
        for i in 0..b {
            let ds = prod.slice(s![i * w..(i + 1) * w, ..]).sum_axis(Axis(0));
            for ch in 0..c {
                let sv = m.s[[i, ch]];
                let dl = ds[ch] * sv * (F::one() - sv);
                let (a, mx) = (m.out[[i, ch]], m.out[[b + i, ch]]);
                let (da, dm) = match cfg.mask_fusion {
                    MaskFusion::Sum => (dl, dl),
                    MaskFusion::Max if a >= mx => (dl, F::zero()),
                    MaskFusion::Max => (F::zero(), dl),
                };
                d_out[[i, ch]] = da;
                d_out[[b + i, ch]] = dm;
            }
        }
        let mut d_mh = linear_backward(
            &m.hidden.view(),
            &params.mask_w2,
            &d_out,
            &mut g.mask_w2,
            &mut g.mask_b2,
            true,
        )
        .unwrap();
        relu_backward(&mut d_mh, &m.hidden_pre);
        linear_backward(
            &m.pooled.view(),
            &params.mask_w1,
            &d_mh,
            &mut g.mask_w1,
            &mut g.mask_b1,
            false,
        );
    }
    g
}

/// Mean `loss_total` over the batch and its exact gradient for every tensor.
pub fn gradients<F: Real, R: Rng + ?Sized>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    batch: &Batch<F>,
    targets: &Array3<F>,
    dropout_rng: Option<&mut R>,
) -> Result<(F, ModelParams<F>)> {
    let (yhat, cache) = forward_cached(params, cfg, batch, dropout_rng)?;
    let lambda = real::<F>(cfg.lambda_smooth);
    let (loss, d_yhat) = batch_loss_and_grad(&yhat, targets, lambda)?;
    if !loss.is_finite() {
        let tensor = params
            .first_non_finite()
            .unwrap_or_else(|| "loss".to_string());
        return Err(Error::Numeric {
            tensor,
            detail: format!("loss is {loss}"),
        });
    }
    let grads = backward(params, cfg, batch, &cache, &d_yhat);
    if let Some(tensor) = grads.first_non_finite() {
        return Err(Error::Numeric {
            tensor,
            detail: "non-finite gradient".into(),
        });
    }
    Ok((loss, grads))
}

//! Encoder forward pass and hand-written backward pass.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderConfig, TaskKind, VISUAL_DIM};
use super::params::{gaussian, Index, Params, Scalar};
use crate::corpus::{AttackView, BBox, Document, Image, TokenId};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Model-ready view of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocInputs {
    pub tokens: Vec<TokenId>,
    pub boxes: Vec<BBox>,
    /// Box-pooled pixel features, `len x VISUAL_DIM`. Absent for unimodal
    /// documents, which then read as a blank page.
    pub visual: Option<Array2<f32>>,
}

/// Mean gray level of each token box, pooled over a 4x2 grid of cells.
pub fn visual_features(image: &Image, boxes: &[BBox]) -> Array2<f32> {
    let mut out = Array2::<f32>::ones((boxes.len(), VISUAL_DIM));
    for (i, b) in boxes.iter().enumerate() {
        let (xs, ys) = image.region(b);
        for cy in 0..2 {
            for cx in 0..4 {
                let cell = |r: &std::ops::Range<usize>, k: usize, n: usize| {
                    let len = r.len();
                    let lo = (r.start + k * len / n).min(r.end - 1);
                    let hi = (r.start + (k + 1) * len / n).max(lo + 1);
                    lo..hi
                };
                let (cxs, cys) = (cell(&xs, cx, 4), cell(&ys, cy, 2));
                let mut sum = 0.0f32;
                let mut n = 0usize;
                for y in cys {
                    for x in cxs.clone() {
                        if x < image.width && y < image.height {
                            sum += image.get(x, y);
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    out[[i, cy * 4 + cx]] = sum / n as f32;
                }
            }
        }
    }
    out
}

impl DocInputs {
    pub fn new(tokens: Vec<TokenId>, boxes: Vec<BBox>, image: Option<&Image>) -> Self {
        let visual = image.map(|img| visual_features(img, &boxes));
        Self {
            tokens,
            boxes,
            visual,
        }
    }

    pub fn from_document(doc: &Document) -> Self {
        Self::new(doc.tokens.clone(), doc.boxes.clone(), doc.image.as_ref())
    }

    pub fn from_view(view: &AttackView) -> Self {
        Self::new(view.tokens.clone(), view.boxes.clone(), view.image.as_ref())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Replaces the visual features with unit Gaussian noise drawn from
    /// `seed`.
    pub fn with_visual_noise(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = gaussian(&mut rng, self.tokens.len() * VISUAL_DIM);
        self.visual =
            Some(Array2::from_shape_vec((self.tokens.len(), VISUAL_DIM), noise).expect("shape"));
        self
    }

    /// Sets the visual features of `positions` to blank paper.
    pub fn whiten(&mut self, positions: &[usize]) {
        if let Some(v) = &mut self.visual {
            for &p in positions {
                v.row_mut(p).fill(1.0);
            }
        }
    }
}

fn softmax_rows<T: Scalar>(m: &mut Array2<T>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

struct LnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

fn ln_forward<T: Scalar>(
    x: &Array2<T>,
    gain: ArrayView1<T>,
    bias: ArrayView1<T>,
) -> (Array2<T>, LnCache<T>) {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.iter().cloned().sum::<T>() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
        *inv = T::one() / (var + eps).sqrt();
        let i = *inv;
        row.mapv_inplace(|v| (v - mean) * i);
    }
    let y = &xhat * &gain + bias;
    (y, LnCache { xhat, inv_std })
}

/// Returns dx; accumulates gain/bias gradients.
fn ln_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    gain: ArrayView1<T>,
    dgain: &mut Array1<T>,
    dbias: &mut Array1<T>,
) -> Array2<T> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = T::of(dy.ncols() as f64);
    let mut dx = dy * &gain;
    for ((mut row, xh), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_d = row.iter().cloned().sum::<T>() / d;
        let mean_dx = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
        Zip::from(&mut row)
            .and(&xh)
            .for_each(|v, &x| *v = inv * (*v - mean_d - x * mean_dx));
    }
    dx
}

fn gelu<T: Scalar>(u: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    half * u * (T::one() + (c * (u + a * u * u * u)).tanh())
}

fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let t = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + three * a * u * u)
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    a: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    concat: Array2<T>,
    ln2: LnCache<T>,
    c: Array2<T>,
    u: Array2<T>,
    g: Array2<T>,
}

/// Activations kept for the backward pass.
pub struct Cache<T> {
    buckets: Vec<[usize; 4]>,
    visual: Option<Array2<T>>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    hidden: Array2<T>,
    spade_q: Option<Array2<T>>,
}

pub struct Forward<T> {
    /// Per-token logits: `len x |V|` (MLM), `len x BIO_LABELS` (BIO) or
    /// `len x (len + 1)` (SPADE, last column is NONE).
    pub logits: Array2<T>,
    pub cache: Cache<T>,
}

impl<T> Forward<T> {
    /// Final hidden states, `len x embed_dim`.
    pub fn hidden(&self) -> &Array2<T> {
        &self.cache.hidden
    }

    /// Attention probabilities of `layer`, one `len x len` matrix per head.
    pub fn attention(&self, layer: usize) -> &[Array2<T>] {
        &self.cache.layers[layer].probs
    }
}

/// Runs the encoder on one document and applies the head of `task`.
pub fn forward<T: Scalar>(
    params: &Params<T>,
    inputs: &DocInputs,
    task: TaskKind,
) -> Result<Forward<T>> {
    let cfg = &params.config;
    let len = inputs.len();
    if len > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len,
            max: cfg.max_seq_len,
        });
    }
    if inputs.boxes.len() != len {
        return Err(Error::Data(format!(
            "{len} tokens but {} boxes",
            inputs.boxes.len()
        )));
    }
    if let Some(&t) = inputs
        .tokens
        .iter()
        .find(|&&t| t as usize >= cfg.vocab_size)
    {
        return Err(Error::Data(format!("token id {t} outside vocabulary")));
    }
    let ix = params.index();
    let d = cfg.embed_dim;

    let buckets: Vec<[usize; 4]> = inputs
        .boxes
        .iter()
        .map(|b| b.coords().map(|c| cfg.bucket(c)))
        .collect();
    let visual: Option<Array2<T>> = cfg.visual_enabled.then(|| match &inputs.visual {
        Some(v) => v.mapv(|x| T::of(x as f64)),
        None => Array2::ones((len, VISUAL_DIM)),
    });

    let tok = params.mat(ix.tok);
    let pos = params.mat(ix.pos);
    let mut x = Array2::<T>::zeros((len, d));
    for i in 0..len {
        let mut row = x.row_mut(i);
        row += &tok.row(inputs.tokens[i] as usize);
        row += &pos.row(i);
        if cfg.layout_enabled {
            for (c, &b) in buckets[i].iter().enumerate() {
                row += &params.mat(ix.coord[c]).row(b);
            }
        }
    }
    if let Some(v) = &visual {
        x = x + v.dot(&params.mat(ix.vis_w)) + params.vec(ix.vis_b);
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for li in &ix.layers {
        let (out, cache) = layer_forward(params, li, cfg, &x);
        layers.push(cache);
        x = out;
    }
    let (hidden, lnf) = ln_forward(&x, params.vec(ix.lnf_g), params.vec(ix.lnf_b));

    let (logits, spade_q) = match task {
        TaskKind::Mlm => (
            hidden.dot(&params.mat(ix.mlm_w)) + params.vec(ix.mlm_b),
            None,
        ),
        TaskKind::EeBio => (
            hidden.dot(&params.mat(ix.bio_w)) + params.vec(ix.bio_b),
            None,
        ),
        TaskKind::EeSpade => {
            let q = hidden.dot(&params.mat(ix.spade_w));
            let scale = T::of(1.0 / (d as f64).sqrt());
            let mut z = Array2::<T>::zeros((len, len + 1));
            z.slice_mut(s![.., ..len])
                .assign(&(q.dot(&hidden.t()) * scale));
            let none = hidden.dot(&params.vec(ix.spade_none_w)) + params.vec(ix.spade_none_b)[0];
            z.column_mut(len).assign(&none);
            (z, Some(q))
        }
    };

    Ok(Forward {
        logits,
        cache: Cache {
            buckets,
            visual,
            layers,
            lnf,
            hidden,
            spade_q,
        },
    })
}

fn layer_forward<T: Scalar>(
    p: &Params<T>,
    li: &super::params::LayerIndex,
    cfg: &EncoderConfig,
    x: &Array2<T>,
) -> (Array2<T>, LayerCache<T>) {
    let dh = cfg.head_dim();
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let (a, ln1) = ln_forward(x, p.vec(li.ln1_g), p.vec(li.ln1_b));
    let q = a.dot(&p.mat(li.wq)) + p.vec(li.bq);
    let k = a.dot(&p.mat(li.wk)) + p.vec(li.bk);
    let v = a.dot(&p.mat(li.wv)) + p.vec(li.bv);
    let mut concat = Array2::<T>::zeros(x.raw_dim());
    let mut probs = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut sc);
        concat.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
        probs.push(sc);
    }
    let x_mid = x + &(concat.dot(&p.mat(li.wo)) + p.vec(li.bo));
    let (c, ln2) = ln_forward(&x_mid, p.vec(li.ln2_g), p.vec(li.ln2_b));
    let u = c.dot(&p.mat(li.w1)) + p.vec(li.b1);
    let g = u.mapv(gelu);
    let out = &x_mid + &(g.dot(&p.mat(li.w2)) + p.vec(li.b2));
    (
        out,
        LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            concat,
            ln2,
            c,
            u,
            g,
        },
    )
}

fn add_mat<T: Scalar>(grads: &mut Params<T>, i: usize, g: &Array2<T>) {
    let mut m = grads.mat_mut(i);
    m += g;
}

fn add_vec<T: Scalar>(grads: &mut Params<T>, i: usize, g: &Array1<T>) {
    let mut v = grads.vec_mut(i);
    v += g;
}

/// Backpropagates `dlogits` (gradient of the loss w.r.t. the logits of
/// `fwd`) and accumulates parameter gradients into `grads`.
pub fn backward<T: Scalar>(
    params: &Params<T>,
    inputs: &DocInputs,
    task: TaskKind,
    fwd: &Forward<T>,
    dlogits: ArrayView2<T>,
    grads: &mut Params<T>,
) {
    let cfg = &params.config;
    let ix: Index = params.index();
    let cache = &fwd.cache;
    let len = inputs.len();
    let d = cfg.embed_dim;
    let h = &cache.hidden;

    let dh: Array2<T> = match task {
        TaskKind::Mlm => {
            add_mat(grads, ix.mlm_w, &h.t().dot(&dlogits));
            add_vec(grads, ix.mlm_b, &dlogits.sum_axis(Axis(0)));
            dlogits.dot(&params.mat(ix.mlm_w).t())
        }
        TaskKind::EeBio => {
            add_mat(grads, ix.bio_w, &h.t().dot(&dlogits));
            add_vec(grads, ix.bio_b, &dlogits.sum_axis(Axis(0)));
            dlogits.dot(&params.mat(ix.bio_w).t())
        }
        TaskKind::EeSpade => {
            let q = cache.spade_q.as_ref().expect("spade forward cached");
            let scale = T::of(1.0 / (d as f64).sqrt());
            let dz = dlogits.slice(s![.., ..len]).mapv(|v| v * scale);
            let dnone = dlogits.column(len).to_owned();
            // z = q h^T, q = h W
            let dq = dz.dot(h);
            let mut dh = dz.t().dot(q);
            add_mat(grads, ix.spade_w, &h.t().dot(&dq));
            dh = dh + dq.dot(&params.mat(ix.spade_w).t());
            // none = h u + b
            let u = params.vec(ix.spade_none_w);
            add_vec(grads, ix.spade_none_w, &h.t().dot(&dnone));
            grads.vec_mut(ix.spade_none_b)[0] += dnone.sum();
            for i in 0..len {
                let mut row = dh.row_mut(i);
                row.scaled_add(dnone[i], &u);
            }
            dh
        }
    };

    let mut dgain = Array1::zeros(d);
    let mut dbias = Array1::zeros(d);
    let mut dx = ln_backward(
        &dh,
        &cache.lnf,
        params.vec(ix.lnf_g),
        &mut dgain,
        &mut dbias,
    );
    add_vec(grads, ix.lnf_g, &dgain);
    add_vec(grads, ix.lnf_b, &dbias);

    for (li, lc) in ix.layers.iter().zip(&cache.layers).rev() {
        dx = layer_backward(params, li, cfg, lc, dx, grads);
    }

    // embeddings
    {
        let mut tok = grads.mat_mut(ix.tok);
        for i in 0..len {
            let mut row = tok.row_mut(inputs.tokens[i] as usize);
            row += &dx.row(i);
        }
    }
    {
        let mut pos = grads.mat_mut(ix.pos);
        for i in 0..len {
            let mut row = pos.row_mut(i);
            row += &dx.row(i);
        }
    }
    if cfg.layout_enabled {
        for c in 0..4 {
            let mut table = grads.mat_mut(ix.coord[c]);
            for i in 0..len {
                let mut row = table.row_mut(cache.buckets[i][c]);
                row += &dx.row(i);
            }
        }
    }
    if let Some(v) = &cache.visual {
        add_mat(grads, ix.vis_w, &v.t().dot(&dx));
        add_vec(grads, ix.vis_b, &dx.sum_axis(Axis(0)));
    }
}

fn layer_backward<T: Scalar>(
    p: &Params<T>,
    li: &super::params::LayerIndex,
    cfg: &EncoderConfig,
    lc: &LayerCache<T>,
    dout: Array2<T>,
    grads: &mut Params<T>,
) -> Array2<T> {
    let d = cfg.embed_dim;
    let dh = cfg.head_dim();
    let scale = T::of(1.0 / (dh as f64).sqrt());

    // feed-forward block
    add_mat(grads, li.w2, &lc.g.t().dot(&dout));
    add_vec(grads, li.b2, &dout.sum_axis(Axis(0)));
    let mut du = dout.dot(&p.mat(li.w2).t());
    Zip::from(&mut du)
        .and(&lc.u)
        .for_each(|g, &u| *g *= gelu_grad(u));
    add_mat(grads, li.w1, &lc.c.t().dot(&du));
    add_vec(grads, li.b1, &du.sum_axis(Axis(0)));
    let dc = du.dot(&p.mat(li.w1).t());
    let mut dgain = Array1::zeros(d);
    let mut dbias = Array1::zeros(d);
    let dx_mid = dout + ln_backward(&dc, &lc.ln2, p.vec(li.ln2_g), &mut dgain, &mut dbias);
    add_vec(grads, li.ln2_g, &dgain);
    add_vec(grads, li.ln2_b, &dbias);

    // attention block
    add_mat(grads, li.wo, &lc.concat.t().dot(&dx_mid));
    add_vec(grads, li.bo, &dx_mid.sum_axis(Axis(0)));
    let dconcat = dx_mid.dot(&p.mat(li.wo).t());
    let mut dq = Array2::<T>::zeros(lc.q.raw_dim());
    let mut dk = Array2::<T>::zeros(lc.k.raw_dim());
    let mut dv = Array2::<T>::zeros(lc.v.raw_dim());
    for (h, probs) in lc.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let doh = dconcat.slice(cols);
        let dp = doh.dot(&lc.v.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&doh));
        let mut ds = dp;
        for (mut row, prow) in ds.rows_mut().into_iter().zip(probs.rows()) {
            let dot: T = row.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum();
            Zip::from(&mut row)
                .and(&prow)
                .for_each(|g, &pp| *g = pp * (*g - dot));
        }
        ds.mapv_inplace(|v| v * scale);
        dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
    }
    add_mat(grads, li.wq, &lc.a.t().dot(&dq));
    add_vec(grads, li.bq, &dq.sum_axis(Axis(0)));
    add_mat(grads, li.wk, &lc.a.t().dot(&dk));
    add_vec(grads, li.bk, &dk.sum_axis(Axis(0)));
    add_mat(grads, li.wv, &lc.a.t().dot(&dv));
    add_vec(grads, li.bv, &dv.sum_axis(Axis(0)));
    let da = dq.dot(&p.mat(li.wq).t()) + dk.dot(&p.mat(li.wk).t()) + dv.dot(&p.mat(li.wv).t());
    let mut dgain = Array1::zeros(d);
    let mut dbias = Array1::zeros(d);
    let dx = &dx_mid + &ln_backward(&da, &lc.ln1, p.vec(li.ln1_g), &mut dgain, &mut dbias);
    add_vec(grads, li.ln1_g, &dgain);
    add_vec(grads, li.ln1_b, &dbias);
    dx
}

//! Token-fusion transformer with hand-written reverse-mode gradients.
//!
//! Tokens are `[CLS, proj(slot) for slot in config.slots]`. Each encoder
//! layer is pre-norm: `x += drop(attn(ln1(x)))`, `x += drop(ffn(ln2(x)))`.
//! The pooled CLS state goes through a final layer norm and a two-layer MLP
//! head. All arithmetic is `f64`; parameters are kept at `f32` precision.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::FusionConfig;
use super::embedding::{EmbeddingBundle, Slot};
use super::loss::{cross_entropy, Logits};
use crate::class::N_CLASSES;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// One named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default)]
struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let e = ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += e.len();
        let r = e.range();
        self.entries.push(e);
        r
    }
}

#[derive(Debug, Clone)]
struct LayerIdx {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    wq: Range<usize>,
    bq: Range<usize>,
    wk: Range<usize>,
    bk: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

#[derive(Debug, Clone)]
struct Index {
    proj: Vec<(Slot, Range<usize>, Range<usize>)>,
    cls: Option<Range<usize>>,
    layers: Vec<LayerIdx>,
    lnf_g: Range<usize>,
    lnf_b: Range<usize>,
    head_w1: Range<usize>,
    head_b1: Range<usize>,
    head_w2: Range<usize>,
    head_b2: Range<usize>,
}

fn build_index(c: &FusionConfig) -> (Vec<ParamEntry>, usize, Index) {
    let d = c.d_model;
    let f = c.mlp_hidden;
    let mut b = LayoutBuilder::default();
    let proj = c
        .slots
        .iter()
        .map(|&s| {
            let w = b.add(format!("proj.{s}.weight"), &[s.dim(), d]);
            let bias = b.add(format!("proj.{s}.bias"), &[d]);
            (s, w, bias)
        })
        .collect();
    let cls = c.use_cls_token.then(|| b.add("cls", &[d]));
    let layers = (0..c.n_layers)
        .map(|l| {
            let p = |n: &str| format!("layers.{l}.{n}");
            LayerIdx {
                ln1_g: b.add(p("ln1.gamma"), &[d]),
                ln1_b: b.add(p("ln1.beta"), &[d]),
                wq: b.add(p("attn.wq"), &[d, d]),
                bq: b.add(p("attn.bq"), &[d]),
                wk: b.add(p("attn.wk"), &[d, d]),
                bk: b.add(p("attn.bk"), &[d]),
                wv: b.add(p("attn.wv"), &[d, d]),
                bv: b.add(p("attn.bv"), &[d]),
                wo: b.add(p("attn.wo"), &[d, d]),
                bo: b.add(p("attn.bo"), &[d]),
                ln2_g: b.add(p("ln2.gamma"), &[d]),
                ln2_b: b.add(p("ln2.beta"), &[d]),
                w1: b.add(p("mlp.w1"), &[d, f]),
                b1: b.add(p("mlp.b1"), &[f]),
                w2: b.add(p("mlp.w2"), &[f, d]),
                b2: b.add(p("mlp.b2"), &[d]),
            }
        })
        .collect();
    let idx = Index {
        proj,
        cls,
        layers,
        lnf_g: b.add("final_ln.gamma", &[d]),
        lnf_b: b.add("final_ln.beta", &[d]),
        head_w1: b.add("head.w1", &[d, f]),
        head_b1: b.add("head.b1", &[f]),
        head_w2: b.add("head.w2", &[f, N_CLASSES]),
        head_b2: b.add("head.b2", &[N_CLASSES]),
    };
    (b.entries, b.total, idx)
}

/// Key of the counter-based dropout stream for one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub epoch: u64,
    pub step: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl DropoutKey {
    fn rng(&self, sample: usize) -> ChaCha8Rng {
        let mut h = splitmix(self.seed);
        for v in [self.epoch, self.step, sample as u64] {
            h = splitmix(h ^ v);
        }
        ChaCha8Rng::seed_from_u64(h)
    }
}

fn dropout_mask(rng: Option<&mut ChaCha8Rng>, p: f64, n: usize) -> Option<Vec<f64>> {
    let rng = rng?;
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(
        (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect(),
    )
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
    }
}

/// `y = x w + b` for `rows` rows of width `k`, with `w` stored `[k][n]`.
fn linear(x: &[f64], rows: usize, k: usize, w: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * n);
    for r in 0..rows {
        y.extend_from_slice(b);
        let yr = &mut y[r * n..(r + 1) * n];
        for (i, &xi) in x[r * k..(r + 1) * k].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (yo, &wv) in yr.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                *yo += xi * wv;
            }
        }
    }
    y
}

/// Accumulate `dw`, `db` and return `dx` for [`linear`].
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    rows: usize,
    k: usize,
    w: &[f64],
    n: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * k];
    for r in 0..rows {
        let dyr = &dy[r * n..(r + 1) * n];
        db.iter_mut().zip(dyr).for_each(|(a, b)| *a += b);
        for i in 0..k {
            let xi = x[r * k + i];
            let wr = &w[i * n..(i + 1) * n];
            let dwr = &mut dw[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                dwr[j] += xi * dyr[j];
                acc += wr[j] * dyr[j];
            }
            dx[r * k + i] = acc;
        }
    }
    dx
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], rows: usize, d: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = g[i] * h + b[i];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    c: &LnCache,
    rows: usize,
    d: usize,
    g: &[f64],
    dy: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    for r in 0..rows {
        let xh = &c.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut dxhat = vec![0.0; d];
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for i in 0..d {
            dx[r * d + i] = c.rstd[r] * (dxhat[i] - m1 - xh[i] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct LayerCache {
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    o: Vec<f64>,
    mask1: Option<Vec<f64>>,
    ln2: LnCache,
    bn: Vec<f64>,
    hpre: Vec<f64>,
    hact: Vec<f64>,
    mask2: Option<Vec<f64>>,
}

struct SampleCache {
    inputs: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    pooled_norm: Vec<f64>,
    hpre: Vec<f64>,
    hact: Vec<f64>,
    hmask: Option<Vec<f64>>,
}

/// The fusion classifier: configuration plus a flat parameter vector.
#[derive(Debug, Clone)]
pub struct FusionModel {
    config: FusionConfig,
    entries: Vec<ParamEntry>,
    idx: Index,
    params: Vec<f64>,
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl FusionModel {
    /// Fresh model with Xavier-uniform weights, zero biases, unit norms and
    /// a uniform(-1, 1) CLS token.
    pub fn new(config: FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (entries, total, idx) = build_index(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; total];
        for e in &entries {
            let r = e.range();
            if e.name.ends_with(".gamma") {
                params[r].fill(1.0);
            } else if e.name == "cls" {
                for p in &mut params[r] {
                    *p = rng.random_range(-1.0..1.0);
                }
            } else if e.shape.len() == 2 {
                let bound = (6.0 / (e.shape[0] + e.shape[1]) as f64).sqrt();
                for p in &mut params[r] {
                    *p = round_f32(rng.random_range(-bound..bound));
                }
            }
        }
        params.iter_mut().for_each(|p| *p = round_f32(*p));
        Ok(FusionModel {
            config,
            entries,
            idx,
            params,
        })
    }

    /// Rebuild a model from stored `f32` parameters.
    pub fn from_params(config: FusionConfig, params: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let (entries, total, idx) = build_index(&config);
        if params.len() != total {
            return Err(Error::CheckpointMismatch(format!(
                "expected {total} parameters, found {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::CheckpointMismatch("non-finite parameter".into()));
        }
        Ok(FusionModel {
            config,
            entries,
            idx,
            params: params.into_iter().map(f64::from).collect(),
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_f32(&self) -> Vec<f32> {
        self.params.iter().map(|&p| p as f32).collect()
    }

    /// Replace parameters, rounding each to `f32` precision.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("params", "non-finite value after update"));
        }
        self.params
            .iter_mut()
            .zip(params)
            .for_each(|(d, &s)| *d = round_f32(s));
        Ok(())
    }

    fn check_batch(&self, batch: &[EmbeddingBundle]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        batch
            .iter()
            .try_for_each(|b| b.validate(&self.config.slots))
    }

    /// Eval-mode logits, one row per bundle.
    pub fn logits(&self, batch: &[EmbeddingBundle]) -> Result<Vec<Logits>> {
        self.check_batch(batch)?;
        Ok(batch
            .iter()
            .map(|b| self.forward_sample(&self.params, b, None).0)
            .collect())
    }

    /// Logits with dropout active under `key`.
    pub fn logits_train(&self, batch: &[EmbeddingBundle], key: DropoutKey) -> Result<Vec<Logits>> {
        self.check_batch(batch)?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, b)| {
                self.forward_sample(&self.params, b, Some(&mut key.rng(i)))
                    .0
            })
            .collect())
    }

    /// Mean cross-entropy loss and its gradient for every parameter.
    pub fn loss_and_grad(
        &self,
        batch: &[EmbeddingBundle],
        labels: &[usize],
        dropout: Option<DropoutKey>,
    ) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad_at(&self.params, batch, labels, dropout)
    }

    /// As [`loss_and_grad`](Self::loss_and_grad) at an arbitrary parameter
    /// point, without `f32` rounding. Used for gradient verification.
    pub fn loss_and_grad_at(
        &self,
        params: &[f64],
        batch: &[EmbeddingBundle],
        labels: &[usize],
        dropout: Option<DropoutKey>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.params.len(),
            });
        }
        let mut caches = Vec::with_capacity(batch.len());
        let mut logits = Vec::with_capacity(batch.len());
        for (i, b) in batch.iter().enumerate() {
            let mut rng = dropout.map(|k| k.rng(i));
            let (z, cache) = self.forward_sample(params, b, rng.as_mut());
            logits.push(z);
            caches.push(cache);
        }
        let (loss, dlogits) = cross_entropy(&logits, labels)?;
        let mut grad = vec![0.0; params.len()];
        for (cache, dz) in caches.iter().zip(&dlogits) {
            self.backward_sample(params, cache, dz, &mut grad);
        }
        Ok((loss, grad))
    }

    /// Mean cross-entropy without gradients.
    pub fn loss_at(
        &self,
        params: &[f64],
        batch: &[EmbeddingBundle],
        labels: &[usize],
        dropout: Option<DropoutKey>,
    ) -> Result<f64> {
        self.check_batch(batch)?;
        let logits: Vec<Logits> = batch
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mut rng = dropout.map(|k| k.rng(i));
                self.forward_sample(params, b, rng.as_mut()).0
            })
            .collect();
        Ok(cross_entropy(&logits, labels)?.0)
    }

    fn forward_sample(
        &self,
        p: &[f64],
        bundle: &EmbeddingBundle,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Logits, SampleCache) {
        let c = &self.config;
        let (d, f, h) = (c.d_model, c.mlp_hidden, c.n_heads);
        let dh = c.head_dim();
        let t = c.n_tokens();
        let drop = c.dropout_rate;

        let mut inputs = Vec::with_capacity(self.idx.proj.len());
        let mut x = Vec::with_capacity(t * d);
        if let Some(cls) = &self.idx.cls {
            x.extend_from_slice(&p[cls.clone()]);
        }
        for (slot, w, b) in &self.idx.proj {
            let e: Vec<f64> = bundle
                .get(*slot)
                .expect("bundle validated")
                .iter()
                .map(|&v| v as f64)
                .collect();
            x.extend(linear(&e, 1, slot.dim(), &p[w.clone()], &p[b.clone()], d));
            inputs.push(e);
        }

        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = Vec::with_capacity(self.idx.layers.len());
        for li in &self.idx.layers {
            let (a, ln1) = layer_norm(&x, t, d, &p[li.ln1_g.clone()], &p[li.ln1_b.clone()]);
            let q = linear(&a, t, d, &p[li.wq.clone()], &p[li.bq.clone()], d);
            let k = linear(&a, t, d, &p[li.wk.clone()], &p[li.bk.clone()], d);
            let v = linear(&a, t, d, &p[li.wv.clone()], &p[li.bv.clone()], d);
            let mut probs = vec![0.0; h * t * t];
            let mut o = vec![0.0; t * d];
            for hh in 0..h {
                let off = hh * dh;
                for i in 0..t {
                    let row = &mut probs[(hh * t + i) * t..(hh * t + i + 1) * t];
                    for j in 0..t {
                        row[j] = (0..dh)
                            .map(|e| q[i * d + off + e] * k[j * d + off + e])
                            .sum::<f64>()
                            * scale;
                    }
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    row.iter_mut().for_each(|s| *s = (*s - max).exp());
                    let sum: f64 = row.iter().sum();
                    row.iter_mut().for_each(|s| *s /= sum);
                    for j in 0..t {
                        let pij = row[j];
                        for e in 0..dh {
                            o[i * d + off + e] += pij * v[j * d + off + e];
                        }
                    }
                }
            }
            let mut attn = linear(&o, t, d, &p[li.wo.clone()], &p[li.bo.clone()], d);
            let mask1 = dropout_mask(rng.as_deref_mut(), drop, t * d);
            apply_mask(&mut attn, &mask1);
            x.iter_mut().zip(&attn).for_each(|(a, b)| *a += b);

            let (bn, ln2) = layer_norm(&x, t, d, &p[li.ln2_g.clone()], &p[li.ln2_b.clone()]);
            let hpre = linear(&bn, t, d, &p[li.w1.clone()], &p[li.b1.clone()], f);
            let hact: Vec<f64> = hpre.iter().map(|&v| gelu(v)).collect();
            let mut m = linear(&hact, t, f, &p[li.w2.clone()], &p[li.b2.clone()], d);
            let mask2 = dropout_mask(rng.as_deref_mut(), drop, t * d);
            apply_mask(&mut m, &mask2);
            x.iter_mut().zip(&m).for_each(|(a, b)| *a += b);

            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                mask1,
                ln2,
                bn,
                hpre,
                hact,
                mask2,
            });
        }

        let pooled: Vec<f64> = if c.use_cls_token {
            x[..d].to_vec()
        } else {
            (0..d)
                .map(|i| (0..t).map(|r| x[r * d + i]).sum::<f64>() / t as f64)
                .collect()
        };
        let (pooled_norm, lnf) = layer_norm(
            &pooled,
            1,
            d,
            &p[self.idx.lnf_g.clone()],
            &p[self.idx.lnf_b.clone()],
        );
        let hpre = linear(
            &pooled_norm,
            1,
            d,
            &p[self.idx.head_w1.clone()],
            &p[self.idx.head_b1.clone()],
            f,
        );
        let mut hact: Vec<f64> = hpre.iter().map(|&v| gelu(v)).collect();
        let hmask = dropout_mask(rng.as_deref_mut(), drop, f);
        apply_mask(&mut hact, &hmask);
        let z = linear(
            &hact,
            1,
            f,
            &p[self.idx.head_w2.clone()],
            &p[self.idx.head_b2.clone()],
            N_CLASSES,
        );
        let logits: Logits = z.try_into().expect("head width");
        (
            logits,
            SampleCache {
                inputs,
                layers,
                lnf,
                pooled_norm,
                hpre,
                hact,
                hmask,
            },
        )
    }

    fn backward_sample(&self, p: &[f64], s: &SampleCache, dz: &Logits, g: &mut [f64]) {
        let c = &self.config;
        let (d, f, h) = (c.d_model, c.mlp_hidden, c.n_heads);
        let dh = c.head_dim();
        let t = c.n_tokens();
        let ix = &self.idx;

        let (gw, gb) = two_mut(g, ix.head_w2.clone(), ix.head_b2.clone());
        let mut dh_act =
            linear_backward(&s.hact, 1, f, &p[ix.head_w2.clone()], N_CLASSES, dz, gw, gb);
        apply_mask(&mut dh_act, &s.hmask);
        let dhpre: Vec<f64> = dh_act
            .iter()
            .zip(&s.hpre)
            .map(|(g, &x)| g * gelu_grad(x))
            .collect();
        let (gw, gb) = two_mut(g, ix.head_w1.clone(), ix.head_b1.clone());
        let dpn = linear_backward(
            &s.pooled_norm,
            1,
            d,
            &p[ix.head_w1.clone()],
            f,
            &dhpre,
            gw,
            gb,
        );
        let (gg, gb) = two_mut(g, ix.lnf_g.clone(), ix.lnf_b.clone());
        let dpooled = layer_norm_backward(&s.lnf, 1, d, &p[ix.lnf_g.clone()], &dpn, gg, gb);

        let mut dx = vec![0.0; t * d];
        if c.use_cls_token {
            dx[..d].copy_from_slice(&dpooled);
        } else {
            for r in 0..t {
                for i in 0..d {
                    dx[r * d + i] = dpooled[i] / t as f64;
                }
            }
        }

        let scale = 1.0 / (dh as f64).sqrt();
        for (li, lc) in ix.layers.iter().zip(&s.layers).rev() {
            // feed-forward branch
            let mut dm = dx.clone();
            apply_mask(&mut dm, &lc.mask2);
            let (gw, gb) = two_mut(g, li.w2.clone(), li.b2.clone());
            let dhact = linear_backward(&lc.hact, t, f, &p[li.w2.clone()], d, &dm, gw, gb);
            let dhpre: Vec<f64> = dhact
                .iter()
                .zip(&lc.hpre)
                .map(|(g, &x)| g * gelu_grad(x))
                .collect();
            let (gw, gb) = two_mut(g, li.w1.clone(), li.b1.clone());
            let dbn = linear_backward(&lc.bn, t, d, &p[li.w1.clone()], f, &dhpre, gw, gb);
            let (gg, gb) = two_mut(g, li.ln2_g.clone(), li.ln2_b.clone());
            let dx1 = layer_norm_backward(&lc.ln2, t, d, &p[li.ln2_g.clone()], &dbn, gg, gb);
            dx.iter_mut().zip(&dx1).for_each(|(a, b)| *a += b);

            // attention branch
            let mut dattn = dx.clone();
            apply_mask(&mut dattn, &lc.mask1);
            let (gw, gb) = two_mut(g, li.wo.clone(), li.bo.clone());
            let d_o = linear_backward(&lc.o, t, d, &p[li.wo.clone()], d, &dattn, gw, gb);
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            let mut dv = vec![0.0; t * d];
            for hh in 0..h {
                let off = hh * dh;
                for i in 0..t {
                    let prow = &lc.probs[(hh * t + i) * t..(hh * t + i + 1) * t];
                    let dp: Vec<f64> = (0..t)
                        .map(|j| {
                            (0..dh)
                                .map(|e| d_o[i * d + off + e] * lc.v[j * d + off + e])
                                .sum()
                        })
                        .collect();
                    let dot: f64 = dp.iter().zip(prow).map(|(a, b)| a * b).sum();
                    for j in 0..t {
                        for e in 0..dh {
                            dv[j * d + off + e] += prow[j] * d_o[i * d + off + e];
                        }
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        for e in 0..dh {
                            dq[i * d + off + e] += ds * lc.k[j * d + off + e];
                            dk[j * d + off + e] += ds * lc.q[i * d + off + e];
                        }
                    }
                }
            }
            let mut da = vec![0.0; t * d];
            for (w, b, dy) in [
                (&li.wq, &li.bq, &dq),
                (&li.wk, &li.bk, &dk),
                (&li.wv, &li.bv, &dv),
            ] {
                let (gw, gb) = two_mut(g, w.clone(), b.clone());
                let part = linear_backward(&lc.a, t, d, &p[w.clone()], d, dy, gw, gb);
                da.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
            }
            let (gg, gb) = two_mut(g, li.ln1_g.clone(), li.ln1_b.clone());
            let dx0 = layer_norm_backward(&lc.ln1, t, d, &p[li.ln1_g.clone()], &da, gg, gb);
            dx.iter_mut().zip(&dx0).for_each(|(a, b)| *a += b);
        }

        let mut row = 0;
        if let Some(cls) = &ix.cls {
            g[cls.clone()]
                .iter_mut()
                .zip(&dx[..d])
                .for_each(|(a, b)| *a += b);
            row = 1;
        }
        for ((slot, w, b), e) in ix.proj.iter().zip(&s.inputs) {
            let dy = &dx[row * d..(row + 1) * d];
            let (gw, gb) = two_mut(g, w.clone(), b.clone());
            gb.iter_mut().zip(dy).for_each(|(a, b)| *a += b);
            for (i, &xi) in e.iter().enumerate().take(slot.dim()) {
                if xi == 0.0 {
                    continue;
                }
                gw[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(dy)
                    .for_each(|(a, b)| *a += xi * b);
            }
            row += 1;
        }
    }
}

/// Two disjoint mutable sub-slices; `a` must precede `b`.
fn two_mut(g: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> FusionConfig {
        FusionConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            mlp_hidden: 8,
            dropout_rate: 0.1,
            ..FusionConfig::default()
        }
    }

    fn bundle(seed: u64) -> EmbeddingBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = EmbeddingBundle::default();
        for s in Slot::ALL {
            b.set(
                s,
                (0..s.dim())
                    .map(|_| rng.random_range(-1.0f32..1.0))
                    .collect(),
            );
        }
        b
    }

    #[test]
    fn layout_is_contiguous() {
        let m = FusionModel::new(FusionConfig::default(), 0).unwrap();
        let mut off = 0;
        for e in m.layout() {
            assert_eq!(e.offset, off);
            off += e.len();
        }
        assert_eq!(off, m.n_params());
        assert!(m.params().iter().all(|&p| p == p as f32 as f64));
    }

    #[test]
    fn logits_shape_and_batch_independence() {
        let m = FusionModel::new(tiny(), 1).unwrap();
        let batch: Vec<_> = (0..3).map(bundle).collect();
        let z = m.logits(&batch).unwrap();
        assert_eq!(z.len(), 3);
        assert!(z.iter().flatten().all(|v| v.is_finite()));
        let rev: Vec<_> = batch.iter().rev().cloned().collect();
        let zr = m.logits(&rev).unwrap();
        assert_eq!(z[0], zr[2]);
        assert_eq!(m.logits(&batch[1..2]).unwrap()[0], z[1]);
        assert_eq!(m.logits(&batch).unwrap(), z);
    }

    #[test]
    fn missing_slot_is_named() {
        let m = FusionModel::new(tiny(), 1).unwrap();
        let mut b = bundle(0);
        b.audio_semantic = Some(vec![0.0; 10]);
        let err = m.logits(&[b]).unwrap_err().to_string();
        assert!(err.contains("audio_semantic"), "{err}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for use_cls in [true, false] {
            let cfg = FusionConfig {
                use_cls_token: use_cls,
                ..tiny()
            };
            let m = FusionModel::new(cfg, 3).unwrap();
            let batch = vec![bundle(10), bundle(11)];
            let labels = [1, 3];
            let key = Some(DropoutKey {
                seed: 5,
                epoch: 0,
                step: 0,
            });
            let base = m.params().to_vec();
            let (_, grad) = m.loss_and_grad_at(&base, &batch, &labels, key).unwrap();
            let eps = 1e-3;
            let mut worst: f64 = 0.0;
            let mut p = base.clone();
            for i in (0..base.len()).step_by(7) {
                p[i] = base[i] + eps;
                let lp = m.loss_at(&p, &batch, &labels, key).unwrap();
                p[i] = base[i] - eps;
                let lm = m.loss_at(&p, &batch, &labels, key).unwrap();
                p[i] = base[i];
                let num = (lp - lm) / (2.0 * eps);
                let err = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-5);
                worst = worst.max(err);
            }
            assert!(worst < 1e-4, "worst rel err {worst}");
        }
    }

    #[test]
    fn duplicated_sample_has_same_mean_gradient() {
        let m = FusionModel::new(tiny(), 2).unwrap();
        let a = bundle(4);
        let (l1, g1) = m
            .loss_and_grad(std::slice::from_ref(&a), &[2], None)
            .unwrap();
        let (l2, g2) = m.loss_and_grad(&[a.clone(), a], &[2, 2], None).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (x, y) in g1.iter().zip(&g2) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn dropout_is_keyed() {
        let m = FusionModel::new(tiny(), 2).unwrap();
        let b = vec![bundle(1)];
        let k = DropoutKey {
            seed: 1,
            epoch: 2,
            step: 3,
        };
        assert_eq!(
            m.logits_train(&b, k).unwrap(),
            m.logits_train(&b, k).unwrap()
        );
        let k2 = DropoutKey { step: 4, ..k };
        assert_ne!(
            m.logits_train(&b, k).unwrap(),
            m.logits_train(&b, k2).unwrap()
        );
    }
}

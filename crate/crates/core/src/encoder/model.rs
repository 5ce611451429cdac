//! Post-layer-norm transformer encoder with a hand-written backward pass.
//!
//! Activations are `[n_seq * seq_len, hidden]` row-major. Padding is handled
//! by masking keys; padded query rows are still computed but never feed a
//! non-padded row.

use rand::Rng;

use super::config::ModelConfig;
use super::params::{EncoderParams, LayerNorm, LayerParams, Linear};
use crate::error::{Error, Result};
use crate::linalg::{affine, affine_backward, gelu, gelu_grad, log_sum_exp, softmax_in_place, Scalar};

/// Token ids plus attention mask for a padded batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n_seq: usize,
    pub seq_len: usize,
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
}

impl Batch {
    /// Right-pads `seqs` to the longest one with `pad_id`.
    pub fn from_sequences(seqs: &[Vec<u32>], pad_id: u32) -> Self {
        let seq_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut token_ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut attention_mask = Vec::with_capacity(seqs.len() * seq_len);
        for s in seqs {
            token_ids.extend_from_slice(s);
            attention_mask.extend(std::iter::repeat_n(true, s.len()));
            token_ids.extend(std::iter::repeat_n(pad_id, seq_len - s.len()));
            attention_mask.extend(std::iter::repeat_n(false, seq_len - s.len()));
        }
        Batch {
            n_seq: seqs.len(),
            seq_len,
            token_ids,
            attention_mask,
        }
    }

    pub fn rows(&self) -> usize {
        self.n_seq * self.seq_len
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.token_ids.len() != self.rows() || self.attention_mask.len() != self.rows() {
            return Err(Error::Structure(format!(
                "batch buffers do not match {} x {}",
                self.n_seq, self.seq_len
            )));
        }
        if self.seq_len > config.max_positions {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_positions {}",
                self.seq_len, config.max_positions
            )));
        }
        if let Some(&bad) = self
            .token_ids
            .iter()
            .find(|&&t| t as usize >= config.vocab_size)
        {
            return Err(Error::Input(format!(
                "token id {bad} is outside the vocabulary of {}",
                config.vocab_size
            )));
        }
        Ok(())
    }

    /// Positional-table row for every slot: real tokens count up from
    /// `pad_id + 1`, padding uses the pad row.
    pub fn position_ids(&self, pad_id: u32) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.rows());
        for s in 0..self.n_seq {
            let mut next = pad_id as usize + 1;
            for t in 0..self.seq_len {
                if self.attention_mask[s * self.seq_len + t] {
                    out.push(next);
                    next += 1;
                } else {
                    out.push(pad_id as usize);
                }
            }
        }
        out
    }
}

/// Saved statistics of a layer norm application.
#[derive(Debug, Clone)]
pub(crate) struct NormCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Softmax output before dropout, `[n_seq, heads, seq, seq]`.
    probs: Vec<T>,
    probs_drop: Option<Vec<T>>,
    ctx: Vec<T>,
    attn_drop: Option<Vec<T>>,
    norm1: NormCache<T>,
    h1: Vec<T>,
    ffn_pre: Vec<T>,
    ffn_act: Vec<T>,
    ffn_drop: Option<Vec<T>>,
    norm2: NormCache<T>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    n_seq: usize,
    seq_len: usize,
    token_ids: Vec<u32>,
    positions: Vec<usize>,
    embed_norm: NormCache<T>,
    embed_drop: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Post-softmax attention probabilities of one layer,
    /// `[n_seq, heads, seq, seq]`.
    pub fn attention_probs(&self, layer: usize) -> &[T] {
        &self.layers[layer].probs
    }
}

pub(crate) fn layer_norm<T: Scalar>(x: &[T], norm: &LayerNorm<T>, dim: usize, eps: f64) -> (Vec<T>, NormCache<T>) {
    let rows = x.len() / dim;
    let mut y = vec![T::ZERO; x.len()];
    let mut x_hat = vec![T::ZERO; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let eps = T::from_f64(eps);
    let n = T::from_f64(dim as f64);
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mut mean = T::ZERO;
        for &v in row {
            mean += v;
        }
        mean /= n;
        let mut var = T::ZERO;
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var /= n;
        let is = T::ONE / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..dim {
            let xh = (row[j] - mean) * is;
            x_hat[r * dim + j] = xh;
            y[r * dim + j] = xh * norm.weight.data[j] + norm.bias.data[j];
        }
    }
    (y, NormCache { x_hat, inv_std })
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    norm: &LayerNorm<T>,
    grad: &mut LayerNorm<T>,
    dim: usize,
) -> Vec<T> {
    let rows = dy.len() / dim;
    let mut dx = vec![T::ZERO; dy.len()];
    let n = T::from_f64(dim as f64);
    let mut dxh = vec![T::ZERO; dim];
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.x_hat[r * dim..(r + 1) * dim];
        let mut sum_dxh = T::ZERO;
        let mut sum_dxh_xh = T::ZERO;
        for j in 0..dim {
            grad.weight.data[j] += dyr[j] * xh[j];
            grad.bias.data[j] += dyr[j];
            dxh[j] = dyr[j] * norm.weight.data[j];
            sum_dxh += dxh[j];
            sum_dxh_xh += dxh[j] * xh[j];
        }
        let mean_dxh = sum_dxh / n;
        let mean_dxh_xh = sum_dxh_xh / n;
        let is = cache.inv_std[r];
        for j in 0..dim {
            dx[r * dim + j] = is * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

/// Samples an inverted-dropout mask and applies it in place.
pub(crate) fn dropout<T: Scalar, R: Rng + ?Sized>(x: &mut [T], p: f64, rng: Option<&mut R>) -> Option<Vec<T>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::from_f64(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { T::ZERO } else { keep })
        .collect();
    for (v, &m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

pub(crate) fn linear<T: Scalar>(x: &[T], l: &Linear<T>, rows: usize) -> Vec<T> {
    affine(x, &l.weight.data, &l.bias.data, rows, l.d_in(), l.d_out())
}

pub(crate) fn linear_backward<T: Scalar>(x: &[T], l: &Linear<T>, g: &mut Linear<T>, dy: &[T], rows: usize) -> Vec<T> {
    affine_backward(
        x,
        &l.weight.data,
        dy,
        rows,
        l.d_in(),
        l.d_out(),
        &mut g.weight.data,
        &mut g.bias.data,
    )
}

/// Copies head `h` of sequence `s` out of a `[rows, hidden]` buffer.
fn gather_head<T: Scalar>(x: &[T], s: usize, h: usize, seq: usize, hidden: usize, d: usize, out: &mut [T]) {
    for t in 0..seq {
        let src = (s * seq + t) * hidden + h * d;
        out[t * d..(t + 1) * d].copy_from_slice(&x[src..src + d]);
    }
}

fn scatter_head<T: Scalar>(x: &mut [T], s: usize, h: usize, seq: usize, hidden: usize, d: usize, src: &[T]) {
    for t in 0..seq {
        let dst = (s * seq + t) * hidden + h * d;
        x[dst..dst + d].copy_from_slice(&src[t * d..(t + 1) * d]);
    }
}

impl<T: Scalar> EncoderParams<T> {
    /// Runs the encoder. Dropout is active only when `rng` is given.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        config: &ModelConfig,
        batch: &Batch,
        mut rng: Option<&mut R>,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        batch.validate(config)?;
        self.check_shapes(config)?;
        let hsz = config.hidden_size;
        let rows = batch.rows();
        let positions = batch.position_ids(config.pad_id);

        let mut x = vec![T::ZERO; rows * hsz];
        for r in 0..rows {
            let tok = batch.token_ids[r] as usize;
            let pos = positions[r];
            let we = &self.word_embeddings.data[tok * hsz..(tok + 1) * hsz];
            let pe = &self.position_embeddings.data[pos * hsz..(pos + 1) * hsz];
            for j in 0..hsz {
                x[r * hsz + j] = we[j] + pe[j];
            }
        }
        let (mut x, embed_norm) = layer_norm(&x, &self.embed_norm, hsz, config.layer_norm_eps);
        let embed_drop = dropout(&mut x, config.dropout, rng.as_deref_mut());

        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = self.layer_forward(config, layer, batch, x, rng.as_deref_mut());
            layers.push(cache);
            x = out;
        }
        Ok((
            x,
            ForwardCache {
                n_seq: batch.n_seq,
                seq_len: batch.seq_len,
                token_ids: batch.token_ids.clone(),
                positions,
                embed_norm,
                embed_drop,
                layers,
            },
        ))
    }

    fn layer_forward<R: Rng + ?Sized>(
        &self,
        config: &ModelConfig,
        layer: &LayerParams<T>,
        batch: &Batch,
        input: Vec<T>,
        mut rng: Option<&mut R>,
    ) -> (Vec<T>, LayerCache<T>) {
        let hsz = config.hidden_size;
        let heads = config.num_heads;
        let d = config.head_dim();
        let seq = batch.seq_len;
        let rows = batch.rows();
        let scale = T::from_f64(1.0 / (d as f64).sqrt());

        let q = linear(&input, &layer.query, rows);
        let k = linear(&input, &layer.key, rows);
        let v = linear(&input, &layer.value, rows);

        let mut probs = vec![T::ZERO; batch.n_seq * heads * seq * seq];
        let mut ctx = vec![T::ZERO; rows * hsz];
        let mut qh = vec![T::ZERO; seq * d];
        let mut kh = vec![T::ZERO; seq * d];
        let mut vh = vec![T::ZERO; seq * d];
        let mut ch = vec![T::ZERO; seq * d];
        for s in 0..batch.n_seq {
            let keys = &batch.attention_mask[s * seq..(s + 1) * seq];
            for h in 0..heads {
                gather_head(&q, s, h, seq, hsz, d, &mut qh);
                gather_head(&k, s, h, seq, hsz, d, &mut kh);
                gather_head(&v, s, h, seq, hsz, d, &mut vh);
                let p = &mut probs[(s * heads + h) * seq * seq..(s * heads + h + 1) * seq * seq];
                T::gemm(seq, d, seq, scale, &qh, false, &kh, true, T::ZERO, p);
                for row in p.chunks_exact_mut(seq) {
                    for (sc, &keep) in row.iter_mut().zip(keys) {
                        if !keep {
                            *sc = T::neg_infinity();
                        }
                    }
                    softmax_in_place(row);
                }
            }
        }
        let mut dropped = probs.clone();
        let probs_drop = dropout(&mut dropped, config.attention_dropout, rng.as_deref_mut());
        for s in 0..batch.n_seq {
            for h in 0..heads {
                let p = &dropped[(s * heads + h) * seq * seq..(s * heads + h + 1) * seq * seq];
                gather_head(&v, s, h, seq, hsz, d, &mut vh);
                T::gemm(seq, seq, d, T::ONE, p, false, &vh, false, T::ZERO, &mut ch);
                scatter_head(&mut ctx, s, h, seq, hsz, d, &ch);
            }
        }

        let mut attn = linear(&ctx, &layer.attn_output, rows);
        let attn_drop = dropout(&mut attn, config.dropout, rng.as_deref_mut());
        for (a, &i) in attn.iter_mut().zip(&input) {
            *a += i;
        }
        let (h1, norm1) = layer_norm(&attn, &layer.attn_norm, hsz, config.layer_norm_eps);

        let ffn_pre = linear(&h1, &layer.ffn_in, rows);
        let ffn_act: Vec<T> = ffn_pre.iter().map(|&z| gelu(z)).collect();
        let mut ffn = linear(&ffn_act, &layer.ffn_out, rows);
        let ffn_drop = dropout(&mut ffn, config.dropout, rng.as_deref_mut());
        for (f, &r) in ffn.iter_mut().zip(&h1) {
            *f += r;
        }
        let (out, norm2) = layer_norm(&ffn, &layer.ffn_norm, hsz, config.layer_norm_eps);

        (
            out,
            LayerCache {
                input,
                q,
                k,
                v,
                probs,
                probs_drop,
                ctx,
                attn_drop,
                norm1,
                h1,
                ffn_pre,
                ffn_act,
                ffn_drop,
                norm2,
            },
        )
    }

    /// Accumulates parameter gradients for `d_hidden` into `grads`.
    pub fn backward(
        &self,
        config: &ModelConfig,
        cache: &ForwardCache<T>,
        d_hidden: &[T],
        grads: &mut EncoderParams<T>,
    ) {
        let hsz = config.hidden_size;
        let mut dx = d_hidden.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            dx = self.layer_backward(config, layer, &mut grads.layers[i], &cache.layers[i], cache, dx);
        }
        apply_mask(&mut dx, &cache.embed_drop);
        let dx = layer_norm_backward(&dx, &cache.embed_norm, &self.embed_norm, &mut grads.embed_norm, hsz);
        for (r, drow) in dx.chunks_exact(hsz).enumerate() {
            let tok = cache.token_ids[r] as usize;
            let pos = cache.positions[r];
            let gw = &mut grads.word_embeddings.data[tok * hsz..(tok + 1) * hsz];
            for (g, &d) in gw.iter_mut().zip(drow) {
                *g += d;
            }
            let gp = &mut grads.position_embeddings.data[pos * hsz..(pos + 1) * hsz];
            for (g, &d) in gp.iter_mut().zip(drow) {
                *g += d;
            }
        }
    }

    fn layer_backward(
        &self,
        config: &ModelConfig,
        layer: &LayerParams<T>,
        grad: &mut LayerParams<T>,
        c: &LayerCache<T>,
        fc: &ForwardCache<T>,
        d_out: Vec<T>,
    ) -> Vec<T> {
        let hsz = config.hidden_size;
        let heads = config.num_heads;
        let d = config.head_dim();
        let seq = fc.seq_len;
        let rows = fc.n_seq * seq;
        let scale = T::from_f64(1.0 / (d as f64).sqrt());

        // out = LN2(h1 + drop(ffn_out(gelu(ffn_in(h1)))))
        let d_res2 = layer_norm_backward(&d_out, &c.norm2, &layer.ffn_norm, &mut grad.ffn_norm, hsz);
        let mut d_ffn = d_res2.clone();
        apply_mask(&mut d_ffn, &c.ffn_drop);
        let mut d_act = linear_backward(&c.ffn_act, &layer.ffn_out, &mut grad.ffn_out, &d_ffn, rows);
        for (g, &z) in d_act.iter_mut().zip(&c.ffn_pre) {
            *g *= gelu_grad(z);
        }
        let mut d_h1 = linear_backward(&c.h1, &layer.ffn_in, &mut grad.ffn_in, &d_act, rows);
        for (a, &b) in d_h1.iter_mut().zip(&d_res2) {
            *a += b;
        }

        // h1 = LN1(input + drop(attn_output(ctx)))
        let d_res1 = layer_norm_backward(&d_h1, &c.norm1, &layer.attn_norm, &mut grad.attn_norm, hsz);
        let mut d_attn = d_res1.clone();
        apply_mask(&mut d_attn, &c.attn_drop);
        let d_ctx = linear_backward(&c.ctx, &layer.attn_output, &mut grad.attn_output, &d_attn, rows);

        let mut dq = vec![T::ZERO; rows * hsz];
        let mut dk = vec![T::ZERO; rows * hsz];
        let mut dv = vec![T::ZERO; rows * hsz];
        let mut qh = vec![T::ZERO; seq * d];
        let mut kh = vec![T::ZERO; seq * d];
        let mut vh = vec![T::ZERO; seq * d];
        let mut dch = vec![T::ZERO; seq * d];
        let mut dp = vec![T::ZERO; seq * seq];
        let mut pd = vec![T::ZERO; seq * seq];
        let mut tmp = vec![T::ZERO; seq * d];
        for s in 0..fc.n_seq {
            for h in 0..heads {
                let off = (s * heads + h) * seq * seq;
                let p = &c.probs[off..off + seq * seq];
                pd.copy_from_slice(p);
                if let Some(m) = &c.probs_drop {
                    for (x, &k) in pd.iter_mut().zip(&m[off..off + seq * seq]) {
                        *x *= k;
                    }
                }
                gather_head(&c.q, s, h, seq, hsz, d, &mut qh);
                gather_head(&c.k, s, h, seq, hsz, d, &mut kh);
                gather_head(&c.v, s, h, seq, hsz, d, &mut vh);
                gather_head(&d_ctx, s, h, seq, hsz, d, &mut dch);

                // ctx = P' V
                T::gemm(seq, d, seq, T::ONE, &dch, false, &vh, true, T::ZERO, &mut dp);
                T::gemm(seq, seq, d, T::ONE, &pd, true, &dch, false, T::ZERO, &mut tmp);
                scatter_head(&mut dv, s, h, seq, hsz, d, &tmp);
                if let Some(m) = &c.probs_drop {
                    for (x, &k) in dp.iter_mut().zip(&m[off..off + seq * seq]) {
                        *x *= k;
                    }
                }
                // softmax backward, row-wise
                for (dp_row, p_row) in dp.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                    let mut dot = T::ZERO;
                    for (&g, &pv) in dp_row.iter().zip(p_row) {
                        dot += g * pv;
                    }
                    for (g, &pv) in dp_row.iter_mut().zip(p_row) {
                        *g = pv * (*g - dot);
                    }
                }
                // S = scale * Q K^T
                T::gemm(seq, seq, d, scale, &dp, false, &kh, false, T::ZERO, &mut tmp);
                scatter_head(&mut dq, s, h, seq, hsz, d, &tmp);
                T::gemm(seq, seq, d, scale, &dp, true, &qh, false, T::ZERO, &mut tmp);
                scatter_head(&mut dk, s, h, seq, hsz, d, &tmp);
            }
        }

        let mut d_in = d_res1;
        for (dl, lg, g) in [
            (&dq, &layer.query, &mut grad.query),
            (&dk, &layer.key, &mut grad.key),
            (&dv, &layer.value, &mut grad.value),
        ] {
            let part = linear_backward(&c.input, lg, g, dl, rows);
            for (a, &b) in d_in.iter_mut().zip(&part) {
                *a += b;
            }
        }
        d_in
    }

    fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let manifest = super::params::parameter_manifest(config);
        let tensors = self.tensors();
        if tensors.len() != manifest.len() {
            return Err(Error::Structure(format!(
                "parameters hold {} tensors, config expects {}",
                tensors.len(),
                manifest.len()
            )));
        }
        for ((name, t), (_, shape)) in tensors.iter().zip(&manifest) {
            if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Structure(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape, shape
                )));
            }
        }
        Ok(())
    }
}

/// Intermediate values of the MLM head for a set of rows.
#[derive(Debug, Clone)]
pub struct MlmHeadCache<T> {
    rows: Vec<usize>,
    input: Vec<T>,
    pre: Vec<T>,
    norm: NormCache<T>,
    normed: Vec<T>,
}

impl<T: Scalar> EncoderParams<T> {
    /// MLM logits for the selected rows of `hidden`, `[rows.len(), vocab]`.
    pub fn mlm_logits_rows(
        &self,
        config: &ModelConfig,
        hidden: &[T],
        rows: &[usize],
    ) -> (Vec<T>, MlmHeadCache<T>) {
        let hsz = config.hidden_size;
        let v = config.vocab_size;
        let m = rows.len();
        let mut input = Vec::with_capacity(m * hsz);
        for &r in rows {
            input.extend_from_slice(&hidden[r * hsz..(r + 1) * hsz]);
        }
        let pre = linear(&input, &self.lm_head.dense, m);
        let act: Vec<T> = pre.iter().map(|&z| gelu(z)).collect();
        let (normed, norm) = layer_norm(&act, &self.lm_head.norm, hsz, config.layer_norm_eps);
        let mut logits = Vec::with_capacity(m * v);
        for _ in 0..m {
            logits.extend_from_slice(&self.lm_head.bias.data);
        }
        T::gemm(m, hsz, v, T::ONE, &normed, false, &self.word_embeddings.data, true, T::ONE, &mut logits);
        (
            logits,
            MlmHeadCache {
                rows: rows.to_vec(),
                input,
                pre,
                norm,
                normed,
            },
        )
    }

    /// MLM logits for every position, `[n_seq * seq_len, vocab]`.
    pub fn mlm_logits(&self, config: &ModelConfig, hidden: &[T]) -> Vec<T> {
        let rows: Vec<usize> = (0..hidden.len() / config.hidden_size).collect();
        self.mlm_logits_rows(config, hidden, &rows).0
    }

    /// Backward through the MLM head. Returns the gradient w.r.t. the full
    /// hidden buffer of `hidden_rows` rows.
    pub fn mlm_head_backward(
        &self,
        config: &ModelConfig,
        cache: &MlmHeadCache<T>,
        d_logits: &[T],
        hidden_rows: usize,
        grads: &mut EncoderParams<T>,
    ) -> Vec<T> {
        let hsz = config.hidden_size;
        let v = config.vocab_size;
        let m = cache.rows.len();
        for row in d_logits.chunks_exact(v) {
            for (g, &d) in grads.lm_head.bias.data.iter_mut().zip(row) {
                *g += d;
            }
        }
        // logits = normed E^T: dE += d_logits^T normed, d_normed = d_logits E
        T::gemm(v, m, hsz, T::ONE, d_logits, true, &cache.normed, false, T::ONE, &mut grads.word_embeddings.data);
        let mut d_normed = vec![T::ZERO; m * hsz];
        T::gemm(m, v, hsz, T::ONE, d_logits, false, &self.word_embeddings.data, false, T::ZERO, &mut d_normed);
        let mut d_act = layer_norm_backward(&d_normed, &cache.norm, &self.lm_head.norm, &mut grads.lm_head.norm, hsz);
        for (g, &z) in d_act.iter_mut().zip(&cache.pre) {
            *g *= gelu_grad(z);
        }
        let d_in = linear_backward(&cache.input, &self.lm_head.dense, &mut grads.lm_head.dense, &d_act, m);
        let mut d_hidden = vec![T::ZERO; hidden_rows * hsz];
        for (i, &r) in cache.rows.iter().enumerate() {
            for j in 0..hsz {
                d_hidden[r * hsz + j] += d_in[i * hsz + j];
            }
        }
        d_hidden
    }
}

/// Sum of token-level negative log-likelihoods and the gradient of
/// `scale * sum` w.r.t. the logits.
pub fn cross_entropy_sum<T: Scalar>(logits: &[T], targets: &[u32], n_classes: usize, scale: T) -> (f64, Vec<T>) {
    let mut total = 0.0;
    let mut grad = vec![T::ZERO; logits.len()];
    for (i, (row, &t)) in logits.chunks_exact(n_classes).zip(targets).enumerate() {
        let lse = log_sum_exp(row);
        total += (lse - row[t as usize]).to_f64();
        let g = &mut grad[i * n_classes..(i + 1) * n_classes];
        for (gv, &z) in g.iter_mut().zip(row) {
            *gv = (z - lse).exp() * scale;
        }
        g[t as usize] -= scale;
    }
    (total, grad)
}

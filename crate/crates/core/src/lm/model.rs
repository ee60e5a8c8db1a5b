//! A pre-LayerNorm decoder-only transformer with a hand-written backward
//! pass.
//!
//! Activations are row-major `T × d`; every linear map is `y = x·W + b`
//! with `W` stored `in × out`. An optional dense vector replaces the token
//! embedding at the `<ENT>` position, and gradients flow back into it.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tokenizer::{TokenId, ENT, STOP};
use crate::error::{contract, Result};
use crate::projection::{gelu, gelu_grad};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl LmConfig {
    /// Desk-scale defaults: `d_q = 64`, 2 layers, 4 heads, context 64.
    pub fn desk(vocab_size: usize) -> Self {
        Self { vocab_size, model_dim: 64, layers: 2, heads: 4, context_len: 64, seed: 0 }
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.model_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.model_dim == 0 || self.heads == 0 || self.context_len == 0 {
            return contract("LM dimensions must be positive");
        }
        if self.model_dim % self.heads != 0 {
            return contract("model_dim must be divisible by heads");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_up: Array2<f64>,
    pub b_up: Array1<f64>,
    pub w_down: Array2<f64>,
    pub b_down: Array1<f64>,
}

/// Model weights. The same type doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    pub heads: usize,
    /// `V × d`.
    pub token_embedding: Array2<f64>,
    /// `context × d`.
    pub position_embedding: Array2<f64>,
    pub blocks: Vec<Block>,
    pub final_gain: Array1<f64>,
    pub final_bias: Array1<f64>,
    /// Unembedding, `d × V`.
    pub head: Array2<f64>,
}

macro_rules! block_fields {
    ($m:ident) => {
        $m!(ln1_gain, ln1_bias, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, ln2_gain, ln2_bias, w_up, b_up, w_down, b_down)
    };
}

impl LmParams {
    pub fn init(config: &LmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.model_dim;
        let f = config.ffn_dim();
        let std = 0.02;
        let resid_std = std / (2.0 * config.layers.max(1) as f64).sqrt();
        let mut normal = |rows: usize, cols: usize, sd: f64| {
            let dist = Normal::new(0.0, sd).expect("positive std");
            Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng))
        };
        let token_embedding = normal(config.vocab_size, d, std);
        let position_embedding = normal(config.context_len, d, std);
        let blocks = (0..config.layers)
            .map(|_| Block {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                w_q: normal(d, d, std),
                b_q: Array1::zeros(d),
                w_k: normal(d, d, std),
                b_k: Array1::zeros(d),
                w_v: normal(d, d, std),
                b_v: Array1::zeros(d),
                w_o: normal(d, d, resid_std),
                b_o: Array1::zeros(d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                w_up: normal(d, f, std),
                b_up: Array1::zeros(f),
                w_down: normal(f, d, resid_std),
                b_down: Array1::zeros(d),
            })
            .collect();
        let head = normal(d, config.vocab_size, std);
        Ok(Self {
            heads: config.heads,
            token_embedding,
            position_embedding,
            blocks,
            final_gain: Array1::ones(d),
            final_bias: Array1::zeros(d),
            head,
        })
    }

    pub fn model_dim(&self) -> usize {
        self.token_embedding.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embedding.nrows()
    }

    pub fn context_len(&self) -> usize {
        self.position_embedding.nrows()
    }

    pub fn config(&self, seed: u64) -> LmConfig {
        LmConfig {
            vocab_size: self.vocab_size(),
            model_dim: self.model_dim(),
            layers: self.blocks.len(),
            heads: self.heads,
            context_len: self.context_len(),
            seed,
        }
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("token_embedding".to_owned(), self.token_embedding.view().into_dyn()),
            ("position_embedding".to_owned(), self.position_embedding.view().into_dyn()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            macro_rules! push {
                ($($f:ident),*) => { $( out.push((format!("blocks.{i}.{}", stringify!($f)), b.$f.view().into_dyn())); )* };
            }
            block_fields!(push);
        }
        out.push(("final_gain".to_owned(), self.final_gain.view().into_dyn()));
        out.push(("final_bias".to_owned(), self.final_bias.view().into_dyn()));
        out.push(("head".to_owned(), self.head.view().into_dyn()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("token_embedding".to_owned(), self.token_embedding.view_mut().into_dyn()),
            ("position_embedding".to_owned(), self.position_embedding.view_mut().into_dyn()),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            macro_rules! push {
                ($($f:ident),*) => { $( out.push((format!("blocks.{i}.{}", stringify!($f)), b.$f.view_mut().into_dyn())); )* };
            }
            block_fields!(push);
        }
        out.push(("final_gain".to_owned(), self.final_gain.view_mut().into_dyn()));
        out.push(("final_bias".to_owned(), self.final_bias.view_mut().into_dyn()));
        out.push(("head".to_owned(), self.head.view_mut().into_dyn()));
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// `self += alpha · other`, tensor by tensor.
    pub fn scaled_add(&mut self, alpha: f64, other: &Self) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(alpha, &b);
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Which parameter gradients a backward pass must produce. Gradients with
/// respect to the activations (and the entity prefix) are always computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// No parameter gradients.
    None,
    /// Only the unembedding head.
    Head,
    All,
}

struct LayerNormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.dot(&row) / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * gain + bias;
    (y, LayerNormCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    gain: &Array1<f64>,
    cache: &LayerNormCache,
    grads: Option<(&mut Array1<f64>, &mut Array1<f64>)>,
) -> Array2<f64> {
    if let Some((dgain, dbias)) = grads {
        *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
        *dbias += &dy.sum_axis(Axis(0));
    }
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.rstd) {
        let mean_g = row.sum() / d;
        let mean_gx = row.dot(&xh) / d;
        Zip::from(&mut row).and(&xh).for_each(|g, &x| *g = r * (*g - mean_g - x * mean_gx));
    }
    dx
}

struct BlockCache {
    ln1: LayerNormCache,
    a1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per head, row `i` holds attention weights over positions `0..=i`.
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: LayerNormCache,
    a2: Array2<f64>,
    up: Array2<f64>,
    act: Array2<f64>,
}

/// Forward activations retained for [`backward`].
pub struct ForwardCache {
    tokens: Vec<TokenId>,
    prefix_slot: Option<usize>,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
    /// Output of the final LayerNorm, `T × d`.
    pub hidden: Array2<f64>,
}

fn prefix_slot(tokens: &[TokenId], prefix: Option<ArrayView1<f64>>, dim: usize) -> Result<Option<usize>> {
    let Some(p) = prefix else { return Ok(None) };
    if p.len() != dim {
        return contract(format!("prefix has dimension {}, model expects {dim}", p.len()));
    }
    let mut slots = tokens.iter().enumerate().filter(|(_, &t)| t == ENT).map(|(i, _)| i);
    match (slots.next(), slots.next()) {
        (Some(i), None) => Ok(Some(i)),
        _ => contract("prefix requires exactly one <ENT> slot in the sequence"),
    }
}

fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, heads: usize) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (t, d) = q.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
        let mut p = Array2::zeros((t, t));
        for i in 0..t {
            let qi = qh.row(i);
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                let sc = qi.dot(&kh.row(j)) * scale;
                p[[i, j]] = sc;
                max = max.max(sc);
            }
            let mut sum = 0.0;
            for j in 0..=i {
                let e = (p[[i, j]] - max).exp();
                p[[i, j]] = e;
                sum += e;
            }
            let mut oi = out.slice_mut(s![i, h * dh..(h + 1) * dh]);
            for j in 0..=i {
                p[[i, j]] /= sum;
                oi.scaled_add(p[[i, j]], &vh.row(j));
            }
        }
        probs.push(p);
    }
    (out, probs)
}

/// Runs the model and returns the final hidden states plus everything the
/// backward pass needs. `prefix`, when given, replaces the embedding at the
/// single `<ENT>` position.
pub fn forward_cached(params: &LmParams, tokens: &[TokenId], prefix: Option<ArrayView1<f64>>) -> Result<ForwardCache> {
    let d = params.model_dim();
    if tokens.len() > params.context_len() {
        return contract(format!("sequence of {} tokens exceeds context {}", tokens.len(), params.context_len()));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= params.vocab_size()) {
        return contract(format!("token id {bad} outside vocabulary"));
    }
    let slot = prefix_slot(tokens, prefix, d)?;
    let t = tokens.len();
    let mut x = Array2::zeros((t, d));
    for (i, &tok) in tokens.iter().enumerate() {
        let mut row = x.row_mut(i);
        match (slot, prefix) {
            (Some(s), Some(p)) if s == i => row.assign(&p),
            _ => row.assign(&params.token_embedding.row(tok as usize)),
        }
        row += &params.position_embedding.row(i);
    }
    let mut caches = Vec::with_capacity(params.blocks.len());
    for b in &params.blocks {
        let (a1, ln1) = layer_norm(&x, &b.ln1_gain, &b.ln1_bias);
        let q = a1.dot(&b.w_q) + &b.b_q;
        let k = a1.dot(&b.w_k) + &b.b_k;
        let v = a1.dot(&b.w_v) + &b.b_v;
        let (attn, probs) = attention(&q, &k, &v, params.heads);
        x = x + attn.dot(&b.w_o) + &b.b_o;
        let (a2, ln2) = layer_norm(&x, &b.ln2_gain, &b.ln2_bias);
        let up = a2.dot(&b.w_up) + &b.b_up;
        let act = up.mapv(gelu);
        x = x + act.dot(&b.w_down) + &b.b_down;
        caches.push(BlockCache { ln1, a1, q, k, v, probs, attn, ln2, a2, up, act });
    }
    let (hidden, final_ln) = layer_norm(&x, &params.final_gain, &params.final_bias);
    Ok(ForwardCache { tokens: tokens.to_vec(), prefix_slot: slot, blocks: caches, final_ln, hidden })
}

/// Logits for every position, `T × V`.
pub fn forward(params: &LmParams, tokens: &[TokenId], prefix: Option<ArrayView1<f64>>) -> Result<Array2<f64>> {
    Ok(forward_cached(params, tokens, prefix)?.hidden.dot(&params.head))
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &ArrayView2<f64>) -> Array2<f64> {
    let mut p = logits.to_owned();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

fn log_softmax_at(row: ArrayView1<f64>, target: usize) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    row[target] - lse
}

/// Mean cross-entropy over the masked rows: row `i` of `logits` is scored
/// against `targets[i]` when `mask[i]` is set.
pub fn loss(logits: ArrayView2<f64>, targets: &[TokenId], mask: &[bool]) -> Result<f64> {
    if logits.nrows() != targets.len() || targets.len() != mask.len() {
        return contract("logits, targets and mask must have equal length");
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return contract("loss mask selects no position");
    }
    let total: f64 = (0..targets.len())
        .filter(|&i| mask[i])
        .map(|i| -log_softmax_at(logits.row(i), targets[i] as usize))
        .sum();
    Ok(total / n as f64)
}

/// One training sequence. `loss_mask[j]` marks token `j` as a prediction
/// target (predicted from position `j − 1`); position 0 is never a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
    pub prefix: Option<Array1<f64>>,
}

impl Example {
    fn shifted(&self) -> (&[TokenId], &[bool]) {
        (&self.tokens[1..], &self.loss_mask[1..])
    }
}

/// Loss of one example under `params`.
pub fn example_loss(params: &LmParams, example: &Example) -> Result<f64> {
    if example.tokens.len() < 2 || example.loss_mask.len() != example.tokens.len() {
        return contract("example needs at least 2 tokens and a mask of equal length");
    }
    let logits = forward(params, &example.tokens, example.prefix.as_ref().map(|p| p.view()))?;
    let (targets, mask) = example.shifted();
    loss(logits.slice(s![..targets.len(), ..]), targets, mask)
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    /// Parameter gradients; tensors outside the requested scope stay zero.
    pub params: LmParams,
    pub prefix: Option<Array1<f64>>,
}

/// Loss and exact gradients for one example.
pub fn backward(params: &LmParams, example: &Example, scope: GradScope) -> Result<Gradients> {
    if example.tokens.len() < 2 || example.loss_mask.len() != example.tokens.len() {
        return contract("example needs at least 2 tokens and a mask of equal length");
    }
    let cache = forward_cached(params, &example.tokens, example.prefix.as_ref().map(|p| p.view()))?;
    let logits = cache.hidden.dot(&params.head);
    let (targets, mask) = example.shifted();
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return contract("loss mask selects no position");
    }
    let t = example.tokens.len();
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for i in 0..targets.len() {
        if !mask[i] {
            continue;
        }
        let row = logits.row(i);
        let target = targets[i] as usize;
        total -= log_softmax_at(row, target);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let mut drow = dlogits.row_mut(i);
        Zip::from(&mut drow).and(&row).for_each(|g, &v| *g = (v - max).exp() / sum / n as f64);
        drow[target] -= 1.0 / n as f64;
    }
    let loss = total / n as f64;

    let mut grads = params.zeros_like();
    let all = scope == GradScope::All;
    if scope != GradScope::None {
        grads.head = cache.hidden.t().dot(&dlogits);
    }
    let dhidden = dlogits.dot(&params.head.t());
    let mut dx = layer_norm_backward(
        &dhidden,
        &params.final_gain,
        &cache.final_ln,
        all.then_some((&mut grads.final_gain, &mut grads.final_bias)),
    );

    let heads = params.heads;
    for (li, (b, c)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let g = &mut grads.blocks[li];
        // Feed-forward branch.
        let dact = dx.dot(&b.w_down.t());
        if all {
            g.w_down += &c.act.t().dot(&dx);
            g.b_down += &dx.sum_axis(Axis(0));
        }
        let mut dup = dact;
        Zip::from(&mut dup).and(&c.up).for_each(|g, &u| *g *= gelu_grad(u));
        if all {
            g.w_up += &c.a2.t().dot(&dup);
            g.b_up += &dup.sum_axis(Axis(0));
        }
        let da2 = dup.dot(&b.w_up.t());
        dx += &layer_norm_backward(&da2, &b.ln2_gain, &c.ln2, all.then_some((&mut g.ln2_gain, &mut g.ln2_bias)));

        // Attention branch.
        let dattn = dx.dot(&b.w_o.t());
        if all {
            g.w_o += &c.attn.t().dot(&dx);
            g.b_o += &dx.sum_axis(Axis(0));
        }
        let d = params.model_dim();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros((t, d));
        let mut dk = Array2::zeros((t, d));
        let mut dv = Array2::zeros((t, d));
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let (qh, kh, vh) = (c.q.slice(cols), c.k.slice(cols), c.v.slice(cols));
            let doh = dattn.slice(cols);
            let p = &c.probs[h];
            for i in 0..t {
                let mut dp = vec![0.0; i + 1];
                let mut dot = 0.0;
                for j in 0..=i {
                    dp[j] = doh.row(i).dot(&vh.row(j));
                    dot += dp[j] * p[[i, j]];
                    dv.slice_mut(s![j, h * dh..(h + 1) * dh]).scaled_add(p[[i, j]], &doh.row(i));
                }
                for j in 0..=i {
                    let ds = p[[i, j]] * (dp[j] - dot) * scale;
                    dq.slice_mut(s![i, h * dh..(h + 1) * dh]).scaled_add(ds, &kh.row(j));
                    dk.slice_mut(s![j, h * dh..(h + 1) * dh]).scaled_add(ds, &qh.row(i));
                }
            }
        }
        if all {
            g.w_q += &c.a1.t().dot(&dq);
            g.b_q += &dq.sum_axis(Axis(0));
            g.w_k += &c.a1.t().dot(&dk);
            g.b_k += &dk.sum_axis(Axis(0));
            g.w_v += &c.a1.t().dot(&dv);
            g.b_v += &dv.sum_axis(Axis(0));
        }
        let da1 = dq.dot(&b.w_q.t()) + dk.dot(&b.w_k.t()) + dv.dot(&b.w_v.t());
        dx += &layer_norm_backward(&da1, &b.ln1_gain, &c.ln1, all.then_some((&mut g.ln1_gain, &mut g.ln1_bias)));
    }

    let mut prefix_grad = None;
    for (i, &tok) in cache.tokens.iter().enumerate() {
        let row = dx.row(i);
        if cache.prefix_slot == Some(i) {
            prefix_grad = Some(row.to_owned());
        } else if all {
            grads.token_embedding.row_mut(tok as usize).scaled_add(1.0, &row);
        }
        if all {
            grads.position_embedding.row_mut(i).scaled_add(1.0, &row);
        }
    }
    Ok(Gradients { loss, params: grads, prefix: prefix_grad })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding. Stops after emitting `<STOP>` (which is included in
/// the output), after `max_new_tokens`, or when the context is full.
pub fn generate(
    params: &LmParams,
    prompt: &[TokenId],
    prefix: Option<ArrayView1<f64>>,
    max_new_tokens: usize,
) -> Result<Vec<TokenId>> {
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new_tokens && seq.len() < params.context_len() {
        let cache = forward_cached(params, &seq, prefix)?;
        let last = cache.hidden.row(seq.len() - 1).dot(&params.head);
        let next = argmax(last.view()) as TokenId;
        out.push(next);
        if next == STOP {
            break;
        }
        seq.push(next);
    }
    Ok(out)
}

//! Incremental forward pass.
//!
//! Tokens are always processed one position at a time against the cache,
//! so a prompt forwarded in one call and the same prompt forwarded token by
//! token perform identical arithmetic in identical order.

use super::{KvCache, Logits, ModelConfig, ModelError, ModelWeights};

pub const ROPE_BASE: f64 = 10_000.0;

/// Runs `tokens` through the model, appending their K/V to `cache`, and
/// returns the logits after the last token.
pub fn forward(weights: &ModelWeights, tokens: &[u32], cache: &mut KvCache) -> Result<Logits, ModelError> {
    let cfg = &weights.config;
    if tokens.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if cache.len() + tokens.len() > cfg.max_context {
        return Err(ModelError::ContextOverflow {
            needed: cache.len() + tokens.len(),
            max_context: cfg.max_context,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }

    let mut scratch = Scratch::new(cfg);
    let d = cfg.dim;
    for &token in tokens {
        let row = token as usize * d;
        scratch.x.copy_from_slice(&weights.token_embedding[row..row + d]);
        step_position(weights, cache, &mut scratch);
    }

    rms_norm(&scratch.x, &weights.final_norm, cfg.norm_eps, &mut scratch.h);
    let mut logits = vec![0.0f32; cfg.vocab_size];
    for (v, out) in logits.iter_mut().enumerate() {
        *out = dot(&scratch.h, &weights.token_embedding[v * d..(v + 1) * d]);
    }
    Ok(Logits::from_f32(&logits))
}

struct Scratch {
    x: Vec<f32>,
    h: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    attn: Vec<f32>,
    proj: Vec<f32>,
    hidden: Vec<f32>,
    scores: Vec<f32>,
}

impl Scratch {
    fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        Self {
            x: vec![0.0; d],
            h: vec![0.0; d],
            q: vec![0.0; d],
            k: vec![0.0; d],
            v: vec![0.0; d],
            attn: vec![0.0; d],
            proj: vec![0.0; d],
            hidden: vec![0.0; cfg.hidden_dim()],
            scores: Vec::with_capacity(cfg.max_context),
        }
    }
}

fn step_position(weights: &ModelWeights, cache: &mut KvCache, s: &mut Scratch) {
    let cfg = &weights.config;
    let pos = cache.len();
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f32).sqrt();

    for (li, layer) in weights.layers.iter().enumerate() {
        rms_norm(&s.x, &layer.attn_norm, cfg.norm_eps, &mut s.h);
        matvec(&s.h, &layer.wq, &mut s.q);
        matvec(&s.h, &layer.wk, &mut s.k);
        matvec(&s.h, &layer.wv, &mut s.v);
        for head in 0..cfg.n_heads {
            let r = head * hd..(head + 1) * hd;
            apply_rope(&mut s.q[r.clone()], pos);
            apply_rope(&mut s.k[r], pos);
        }
        cache.push_row(li, &s.k, &s.v);

        let keys = cache.keys(li);
        let values = cache.values(li);
        let n = pos + 1;
        s.attn.fill(0.0);
        for head in 0..cfg.n_heads {
            let off = head * hd;
            let q = &s.q[off..off + hd];
            s.scores.clear();
            for t in 0..n {
                let k = &keys[t * cfg.dim + off..t * cfg.dim + off + hd];
                s.scores.push(dot(q, k) * scale);
            }
            softmax_in_place(&mut s.scores);
            let out = &mut s.attn[off..off + hd];
            for (t, &w) in s.scores.iter().enumerate() {
                let v = &values[t * cfg.dim + off..t * cfg.dim + off + hd];
                for (o, &vv) in out.iter_mut().zip(v) {
                    *o += w * vv;
                }
            }
        }
        matvec(&s.attn, &layer.wo, &mut s.proj);
        for (x, p) in s.x.iter_mut().zip(&s.proj) {
            *x += p;
        }

        rms_norm(&s.x, &layer.mlp_norm, cfg.norm_eps, &mut s.h);
        matvec(&s.h, &layer.w_up, &mut s.hidden);
        for u in s.hidden.iter_mut() {
            *u = silu(*u);
        }
        matvec(&s.hidden, &layer.w_down, &mut s.proj);
        for (x, p) in s.x.iter_mut().zip(&s.proj) {
            *x += p;
        }
    }
    cache.commit_position();
}

/// `out = (x / rms(x)) * (1 + gain)`.
fn rms_norm(x: &[f32], gain: &[f32], eps: f32, out: &mut [f32]) {
    let mut ss = 0.0f32;
    for v in x {
        ss += v * v;
    }
    let inv = 1.0 / (ss / x.len() as f32 + eps).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * inv * (1.0 + g);
    }
}

/// `out = x @ w` with `w` row-major `x.len() x out.len()`; each output sums
/// over input index in ascending order.
fn matvec(x: &[f32], w: &[f32], out: &mut [f32]) {
    let n = out.len();
    out.fill(0.0);
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

fn softmax_in_place(v: &mut [f32]) {
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Rotates interleaved pairs `(x[2i], x[2i+1])` by `pos * base^(-2i/d)`.
fn apply_rope(x: &mut [f32], pos: usize) {
    let d = x.len();
    for i in 0..d / 2 {
        let theta = pos as f64 * ROPE_BASE.powf(-((2 * i) as f64) / d as f64);
        let (sin, cos) = theta.sin_cos();
        let (sin, cos) = (sin as f32, cos as f32);
        let a = x[2 * i];
        let b = x[2 * i + 1];
        x[2 * i] = a * cos - b * sin;
        x[2 * i + 1] = a * sin + b * cos;
    }
}

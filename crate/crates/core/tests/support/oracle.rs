#![allow(dead_code)]

//! Reference forward pass for tests: recomputes the whole sequence from
//! scratch in f64 with a full causal attention matrix and no cache.

use mti_core::model::{ModelWeights, ROPE_BASE};

fn mat(x: &[Vec<f64>], w: &[f32], cols: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().enumerate().map(|(i, &v)| v * f64::from(w[i * cols + j])).sum())
                .collect()
        })
        .collect()
}

fn norm(x: &[Vec<f64>], gain: &[f32], eps: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            row.iter().zip(gain).map(|(v, &g)| v * inv * (1.0 + f64::from(g))).collect()
        })
        .collect()
}

fn rope(vec: &mut [f64], pos: usize) {
    let d = vec.len();
    for i in 0..d / 2 {
        let theta = pos as f64 / ROPE_BASE.powf((2 * i) as f64 / d as f64);
        let (a, b) = (vec[2 * i], vec[2 * i + 1]);
        vec[2 * i] = a * theta.cos() - b * theta.sin();
        vec[2 * i + 1] = a * theta.sin() + b * theta.cos();
    }
}

/// Logits after the final token of `tokens`.
pub fn full_forward(w: &ModelWeights, tokens: &[u32]) -> Vec<f64> {
    let c = &w.config;
    let d = c.dim;
    let hd = d / c.n_heads;
    let n = tokens.len();
    let eps = f64::from(c.norm_eps);
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| {
            w.token_embedding[t as usize * d..(t as usize + 1) * d]
                .iter()
                .map(|&v| f64::from(v))
                .collect()
        })
        .collect();
    for layer in &w.layers {
        let h = norm(&x, &layer.attn_norm, eps);
        let mut q = mat(&h, &layer.wq, d);
        let mut k = mat(&h, &layer.wk, d);
        let v = mat(&h, &layer.wv, d);
        for p in 0..n {
            for head in 0..c.n_heads {
                rope(&mut q[p][head * hd..(head + 1) * hd], p);
                rope(&mut k[p][head * hd..(head + 1) * hd], p);
            }
        }
        let mut attn = vec![vec![0.0; d]; n];
        for head in 0..c.n_heads {
            let r = head * hd..(head + 1) * hd;
            for i in 0..n {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for (j, ej) in e.iter().enumerate() {
                    for (o, vv) in attn[i][r.clone()].iter_mut().zip(&v[j][r.clone()]) {
                        *o += ej / z * vv;
                    }
                }
            }
        }
        let o = mat(&attn, &layer.wo, d);
        for (xr, or) in x.iter_mut().zip(&o) {
            for (a, b) in xr.iter_mut().zip(or) {
                *a += b;
            }
        }
        let h = norm(&x, &layer.mlp_norm, eps);
        let up: Vec<Vec<f64>> = mat(&h, &layer.w_up, 4 * d)
            .into_iter()
            .map(|r| r.into_iter().map(|u| u / (1.0 + (-u).exp())).collect())
            .collect();
        let down = mat(&up, &layer.w_down, d);
        for (xr, dr) in x.iter_mut().zip(&down) {
            for (a, b) in xr.iter_mut().zip(dr) {
                *a += b;
            }
        }
    }
    let last = norm(&x[n - 1..], &w.final_norm, eps).remove(0);
    (0..c.vocab_size)
        .map(|t| {
            last.iter()
                .zip(&w.token_embedding[t * d..(t + 1) * d])
                .map(|(a, &b)| a * f64::from(b))
                .sum()
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A seeded model with the embedding scaled so next-token distributions
/// are far from uniform.
pub fn sharpened(seed: u64, factor: f32) -> ModelWeights {
    let mut w = ModelWeights::init(Default::default(), seed).unwrap();
    w.scale_embedding(factor);
    w
}

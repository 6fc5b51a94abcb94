//! Plain-loop reference implementations used as test oracles.
#![allow(dead_code)]

use dan_core::encoder::{padded_ids, TextEncoder};
use dan_core::params::ParamStore;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn log_sigmoid(x: f64) -> f64 {
    sigmoid(x).ln()
}

/// `x^T M y` for a row-major `[x.len(), y.len()]` matrix.
pub fn bilinear(x: &[f64], m: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..y.len() {
            s += x[i] * m[i * y.len() + j] * y[j];
        }
    }
    s
}

/// `x W + b` for row-major `W` of shape `[x.len(), b.len()]`.
pub fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out)
        .map(|j| b[j] + (0..x.len()).map(|i| x[i] * w[i * out + j]).sum::<f64>())
        .collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Embedding, projection, valid convolution, tanh and max over time,
/// written as nested loops over the stored weights.
pub fn encode(enc: &TextEncoder, store: &ParamStore, tokens: &[u32]) -> Vec<f64> {
    let c = &enc.config;
    let table = store.get(enc.embedding).data();
    let pw = store.get(enc.proj_w).data();
    let pb = store.get(enc.proj_b).data();
    let cw = store.get(enc.conv_w).data();
    let cb = store.get(enc.conv_b).data();
    let ids = padded_ids(tokens, c.window);
    let proj: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| affine(&table[id * c.emb_dim..(id + 1) * c.emb_dim], pw, pb))
        .collect();
    let steps = ids.len() - c.window + 1;
    let mut pooled = vec![f64::NEG_INFINITY; c.filters];
    for t in 0..steps {
        for f in 0..c.filters {
            let mut s = cb[f];
            for k in 0..c.window {
                for d in 0..c.proj_dim {
                    s += proj[t + k][d] * cw[(k * c.proj_dim + d) * c.filters + f];
                }
            }
            pooled[f] = pooled[f].max(s.tanh());
        }
    }
    pooled
}

/// Rank of each position under a descending sort that keeps input order on
/// ties, counted from 1.
pub fn ranks(scores: &[f64]) -> Vec<usize> {
    (0..scores.len())
        .map(|i| {
            1 + (0..scores.len())
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count()
        })
        .collect()
}

/// Average precision straight from its definition.
pub fn brute_ap(scores: &[f64], rel: &[u8]) -> f64 {
    let r = ranks(scores);
    let relevant: Vec<usize> = (0..rel.len()).filter(|&i| rel[i] > 0).collect();
    let mut total = 0.0;
    for &i in &relevant {
        let above = relevant.iter().filter(|&&j| r[j] <= r[i]).count();
        total += above as f64 / r[i] as f64;
    }
    total / relevant.len() as f64
}

pub fn brute_rr(scores: &[f64], rel: &[u8]) -> f64 {
    let r = ranks(scores);
    let best = (0..rel.len()).filter(|&i| rel[i] > 0).map(|i| r[i]).min().unwrap();
    1.0 / best as f64
}

pub fn brute_ndcg(scores: &[f64], rel: &[u8]) -> f64 {
    let r = ranks(scores);
    let dcg: f64 = (0..rel.len())
        .filter(|&i| rel[i] > 0)
        .map(|i| 1.0 / ((r[i] + 1) as f64).log2())
        .sum();
    let n = rel.iter().filter(|&&x| x > 0).count();
    let ideal: f64 = (1..=n).map(|k| 1.0 / ((k + 1) as f64).log2()).sum();
    dcg / ideal
}

pub fn brute_accuracy(pred: &[usize], gold: &[usize]) -> f64 {
    let mut hits = 0;
    for i in 0..gold.len() {
        if pred[i] == gold[i] {
            hits += 1;
        }
    }
    hits as f64 / gold.len() as f64
}

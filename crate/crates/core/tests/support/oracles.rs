//! Independent reference implementations used by the test suites.
//!
//! Everything here works on plain nested vectors with explicit loops and
//! shares no code with the library.

#![allow(dead_code)]

use hiersumm_tensor::Tensor;

pub type M = Vec<Vec<f64>>;

pub fn to_m(t: &Tensor) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn mm(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                c[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    c
}

pub fn transpose(a: &M) -> M {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn cols(a: &M, start: usize, len: usize) -> M {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

pub fn add_row(a: &M, b: &[f64]) -> M {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

pub fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

pub fn relu(a: &M) -> M {
    a.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect()
}

/// Softmax over the entries where `keep` is true; others get weight 0.
pub fn masked_softmax(x: &[f64], keep: &[bool]) -> Vec<f64> {
    let mx = x.iter().zip(keep).filter(|(_, &k)| k).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return vec![0.0; x.len()];
    }
    let e: Vec<f64> = x.iter().zip(keep).map(|(v, &k)| if k { (v - mx).exp() } else { 0.0 }).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layer_norm(a: &M, gain: &[f64], bias: &[f64], eps: f64) -> M {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + eps).sqrt() * gain[j] + bias[j])
                .collect()
        })
        .collect()
}

/// Scaled dot-product attention `softmax(scale·q·kᵀ)·v`, one query at a time.
pub fn attention(q: &M, k: &M, v: &M, keep: &dyn Fn(usize, usize) -> bool, scale: f64) -> M {
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let scores: Vec<f64> = k.iter().map(|kj| scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>()).collect();
            let mask: Vec<bool> = (0..k.len()).map(|j| keep(i, j)).collect();
            let w = masked_softmax(&scores, &mask);
            let dv = v[0].len();
            (0..dv).map(|c| (0..v.len()).map(|j| w[j] * v[j][c]).sum()).collect()
        })
        .collect()
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn lcs_brute<T: Eq>(a: &[T], b: &[T]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&T> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|s| it.any(|x| x == *s)) {
            best = sub.len();
        }
    }
    best
}

/// PageRank by a fixed number of column-oriented power iterations.
pub fn pagerank_ref(w: &M, damping: f64, iters: usize) -> Vec<f64> {
    let n = w.len();
    let p: M = w
        .iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                r.iter().map(|x| x / s).collect()
            } else {
                vec![1.0 / n as f64; n]
            }
        })
        .collect();
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..iters {
        x = (0..n)
            .map(|j| (1.0 - damping) / n as f64 + damping * (0..n).map(|i| p[i][j] * x[i]).sum::<f64>())
            .collect();
    }
    x
}

/// Best sequence under `score = Σ logp / ((5+|y|)/6)^α` among every sequence
/// of length ≤ `max_len` that either ends at its first EOS or runs to
/// `max_len` without one.
pub fn exhaustive_decode(
    logp: &dyn Fn(&[u32]) -> Vec<f64>,
    eos: u32,
    alpha: f64,
    max_len: usize,
) -> (Vec<u32>, f64) {
    fn walk(
        prefix: &mut Vec<u32>,
        lp: f64,
        logp: &dyn Fn(&[u32]) -> Vec<f64>,
        eos: u32,
        alpha: f64,
        max_len: usize,
        best: &mut (Vec<u32>, f64),
    ) {
        let pen = |n: usize| ((5.0 + n as f64) / 6.0).powf(alpha);
        if prefix.len() == max_len || prefix.last() == Some(&eos) {
            let s = lp / pen(prefix.len());
            if s > best.1 {
                *best = (prefix.clone(), s);
            }
            return;
        }
        let dist = logp(prefix);
        for (t, l) in dist.iter().enumerate() {
            if l.is_finite() {
                prefix.push(t as u32);
                walk(prefix, lp + l, logp, eos, alpha, max_len, best);
                prefix.pop();
            }
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    walk(&mut Vec::new(), 0.0, logp, eos, alpha, max_len, &mut best);
    best
}

/// Rotation-matrix image of a sinusoid block: each (sin, cos) pair at
/// frequency ω is rotated by `o·ω`.
pub fn rotate_sinusoid(e: &[f64], o: usize) -> Vec<f64> {
    let dim = e.len();
    let mut out = vec![0.0; dim];
    for i in 0..dim / 2 {
        let w = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
        let (s, c) = ((o as f64 * w).sin(), (o as f64 * w).cos());
        out[2 * i] = c * e[2 * i] + s * e[2 * i + 1];
        out[2 * i + 1] = -s * e[2 * i] + c * e[2 * i + 1];
    }
    out
}

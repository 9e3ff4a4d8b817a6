//! Library-versus-oracle comparisons shared by the oracle tests and the
//! acceptance run. Each returns a maximum absolute error or a mismatch count.

use hiersumm_core::baselines::{pagerank, DAMPING, MAX_ITER, TOLERANCE};
use hiersumm_core::beam::{beam_search, BeamConfig};
use hiersumm_core::encoder::{layout, EncoderConfig, GlobalLayer, Layout, LocalLayer};
use hiersumm_core::graphs::{GraphKind, ParaGraph};
use hiersumm_core::nn::{attend, causal_mask, mask_from, Builder, Ctx, LayerNorm, Linear, MultiHeadAttention};
use hiersumm_core::rouge::lcs_len;
use hiersumm_core::text::EOS;
use hiersumm_tensor::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::*;

pub fn random_m(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> M {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn tensor(m: &M) -> Tensor {
    Tensor::matrix(m.len(), m[0].len(), m.concat())
}

/// Largest entry-wise difference over the rows selected by `rows`.
pub fn max_diff(got: &Tensor, want: &M, rows: impl Fn(usize) -> bool) -> f64 {
    assert_eq!(got.rows(), want.len());
    let mut e = 0.0f64;
    for (r, row) in want.iter().enumerate().filter(|(r, _)| rows(*r)) {
        for (c, &w) in row.iter().enumerate() {
            e = e.max((got.at(r, c) - w).abs());
        }
    }
    e
}

pub fn lin(s: &ParamStore, l: &Linear, x: &M) -> M {
    let y = mm(x, &to_m(s.get(l.w)));
    match l.b {
        Some(b) => add_row(&y, s.get(b).data()),
        None => y,
    }
}

pub fn ln(s: &ParamStore, l: &LayerNorm, x: &M) -> M {
    layer_norm(x, s.get(l.gain).data(), s.get(l.bias).data(), 1e-6)
}

pub fn mha(s: &ParamStore, a: &MultiHeadAttention, x: &M, mem: &M, keep: &dyn Fn(usize, usize) -> bool) -> M {
    let (q, k, v) = (lin(s, &a.q, x), lin(s, &a.k, mem), lin(s, &a.v, mem));
    let dh = q[0].len() / a.n_head;
    let heads: Vec<M> = (0..a.n_head)
        .map(|z| attention(&cols(&q, z * dh, dh), &cols(&k, z * dh, dh), &cols(&v, z * dh, dh), keep, 1.0 / (dh as f64).sqrt()))
        .collect();
    let cat: M = (0..x.len()).map(|r| heads.iter().flat_map(|h| h[r].clone()).collect()).collect();
    lin(s, &a.out, &cat)
}

/// Whole global layer written out with plain loops.
pub fn global_ref(s: &ParamStore, g: &GlobalLayer, x: &M, lay: &Layout) -> M {
    let (u, t) = (lay.units, lay.slots);
    let d = x[0].len();
    let dh = d / g.n_pool;
    let a = lin(s, &g.wa, x);
    let b = lin(s, &g.wb, x);
    let mut contexts: Vec<M> = Vec::new();
    for (z, hp) in g.heads.iter().enumerate() {
        let mut pooled = vec![vec![0.0; dh]; u];
        for (unit, p) in pooled.iter_mut().enumerate() {
            let keep: Vec<bool> = (0..u * t).map(|j| j / t == unit && lay.real[j]).collect();
            let scores: Vec<f64> = a.iter().map(|r| r[z]).collect();
            let w: Vec<f64> = if g.normalized {
                masked_softmax(&scores, &keep)
            } else {
                scores.iter().zip(&keep).map(|(v, &k)| if k { *v } else { 0.0 }).collect()
            };
            for (j, wj) in w.iter().enumerate() {
                for c in 0..dh {
                    p[c] += wj * b[j][z * dh + c];
                }
            }
        }
        let head = ln(s, &hp.ln, &lin(s, &hp.wc, &pooled));
        let v = lin(s, &hp.v, &head);
        let ctx = match &lay.graph {
            Some(gm) if z + 1 == g.n_pool => mm(&to_m(gm), &v),
            _ => {
                let scale = if g.scaled { 1.0 / (dh as f64).sqrt() } else { 1.0 };
                attention(&lin(s, &hp.q, &head), &lin(s, &hp.k, &head), &v, &|_, j| lay.unit_real[j], scale)
            }
        };
        contexts.push(ctx);
    }
    let cat: M = (0..u).map(|r| contexts.iter().flat_map(|c| c[r].clone()).collect()).collect();
    let c = lin(s, &g.wc, &cat);
    let xc: M = x.iter().enumerate().map(|(r, row)| row.iter().zip(&c[r / t]).map(|(a, b)| a + b).collect()).collect();
    let o = add(&lin(s, &g.wo2, &relu(&lin(s, &g.wo1, &xc))), x);
    ln(s, &g.ln, &o)
}

pub fn cfg(d: usize, pool_heads: usize) -> EncoderConfig {
    EncoderConfig {
        vocab: 16,
        d,
        d_ff: 6,
        n_head: 2,
        n_local: 1,
        n_global: 1,
        lprime: 3,
        total_tokens: 9,
        pool_heads: Some(pool_heads),
        ..EncoderConfig::default()
    }
}

pub fn build<T>(seed: u64, f: impl FnOnce(&mut Builder<'_, ChaCha8Rng>) -> T) -> (ParamStore, T) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = f(&mut Builder::new(&mut store, &mut rng));
    (store, t)
}

/// Layout for a title and paragraphs of the given lengths.
pub fn sample_layout(lens: &[usize], graph: Option<&ParaGraph>) -> Layout {
    let title = [3u32, 4];
    let paras: Vec<Vec<u32>> = lens.iter().enumerate().map(|(i, &n)| (0..n as u32).map(|j| 5 + i as u32 + j).collect()).collect();
    let refs: Vec<&[u32]> = paras.iter().map(Vec::as_slice).collect();
    layout(&title, &refs, 8, graph).unwrap()
}

pub fn matmul_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut e = 0.0f64;
    for (m, k, n) in [(1, 1, 1), (3, 5, 2), (7, 4, 9), (16, 8, 3)] {
        let (a, b) = (random_m(&mut rng, m, k), random_m(&mut rng, k, n));
        e = e.max(max_diff(&tensor(&a).matmul(&tensor(&b)).unwrap(), &mm(&a, &b), |_| true));
    }
    e
}

pub fn attention_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (q, k, v) = (random_m(&mut rng, 4, 3), random_m(&mut rng, 4, 3), random_m(&mut rng, 4, 2));
    let store = ParamStore::new();
    let mut cx = Ctx::eval(&store);
    let (qv, kv, vv) = (cx.c(tensor(&q)), cx.c(tensor(&k)), cx.c(tensor(&v)));
    let mask = causal_mask(4);
    let out = attend(&mut cx, qv, kv, vv, Some(&mask), 0.5).unwrap();
    max_diff(cx.g.value(out), &attention(&q, &k, &v, &|i, j| j <= i, 0.5), |_| true)
}

pub fn multi_head_attention_error() -> f64 {
    let (store, a) = build(2, |b| MultiHeadAttention::new(b, "a", 4, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, mem) = (random_m(&mut rng, 3, 4), random_m(&mut rng, 5, 4));
    let keep = |_: usize, j: usize| j != 2;
    let mask = mask_from((0..15).map(|k| k % 5 != 2).collect());
    let mut cx = Ctx::eval(&store);
    let (xv, mv) = (cx.c(tensor(&x)), cx.c(tensor(&mem)));
    let out = a.fwd(&mut cx, xv, mv, Some(&mask)).unwrap();
    max_diff(cx.g.value(out), &mha(&store, &a, &x, &mem, &keep), |_| true)
}

/// Error of a local layer against self-attention restricted to each
/// paragraph, residuals, layer norms and the feed-forward block.
pub fn local_layer_error() -> f64 {
    let c = cfg(4, 2);
    let (store, l) = build(4, |b| LocalLayer::new(b, "l", &c));
    let lay = sample_layout(&[2, 1], None);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_m(&mut rng, lay.rows(), 4);
    let t = lay.slots;
    let keep = |i: usize, j: usize| i / t == j / t && lay.real[j];
    let h = ln(&store, &l.ln1, &add(&x, &mha(&store, &l.attn, &x, &x, &keep)));
    let f = lin(&store, &l.ffn.outer, &relu(&lin(&store, &l.ffn.inner, &h)));
    let want = ln(&store, &l.ln2, &add(&h, &f));
    let mut cx = Ctx::eval(&store);
    let xv = cx.c(tensor(&x));
    let out = l.fwd(&mut cx, xv, &lay).unwrap();
    max_diff(cx.g.value(out), &want, |r| lay.real[r])
}

/// Global layer against [`global_ref`] for normalised pooling, unnormalised
/// pooling with scaled attention, and a graph-informed last head.
pub fn global_layer_error() -> f64 {
    let g3 = ParaGraph::new(GraphKind::Similarity, 3, vec![1.0, 2.0, 0.5, 2.0, 1.0, 0.0, 0.5, 0.0, 1.0]).unwrap();
    let mut e = 0.0f64;
    for (normalized, scaled, graph) in [(true, false, None), (false, true, None), (true, false, Some(&g3))] {
        let mut c = cfg(4, 2);
        c.normalized_pooling = normalized;
        c.scale_inter_attention = scaled;
        let (store, g) = build(6, |b| GlobalLayer::new(b, "g", &c));
        let lay = sample_layout(&[2, 3, 1], graph);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_m(&mut rng, lay.rows(), 4);
        let mut cx = Ctx::eval(&store);
        let xv = cx.c(tensor(&x));
        let out = g.fwd(&mut cx, xv, &lay).unwrap();
        e = e.max(max_diff(cx.g.value(out), &global_ref(&store, &g, &x, &lay), |_| true));
    }
    e
}

/// Two-token pooling written out by hand: weights and pooled heads.
pub fn pooling_error() -> f64 {
    let c = cfg(4, 2);
    let (store, g) = build(10, |b| GlobalLayer::new(b, "g", &c));
    let lay = sample_layout(&[2], None);
    let t = lay.slots;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_m(&mut rng, lay.rows(), 4);
    let wa = to_m(store.get(g.wa.w));
    let wb = to_m(store.get(g.wb.w));
    let mut cx = Ctx::eval(&store);
    let xv = cx.c(tensor(&x));
    let parts = g.contexts(&mut cx, xv, &lay).unwrap();
    let mut e = 0.0f64;
    for z in 0..2 {
        let a0: f64 = (0..4).map(|k| x[t][k] * wa[k][z]).sum();
        let a1: f64 = (0..4).map(|k| x[t + 1][k] * wa[k][z]).sum();
        let w0 = a0.exp() / (a0.exp() + a1.exp());
        let pooled: Vec<f64> = (0..2)
            .map(|c| {
                let b0: f64 = (0..4).map(|k| x[t][k] * wb[k][2 * z + c]).sum();
                let b1: f64 = (0..4).map(|k| x[t + 1][k] * wb[k][2 * z + c]).sum();
                w0 * b0 + (1.0 - w0) * b1
            })
            .collect();
        e = e.max((cx.g.value(parts.weights[z]).at(1, t) - w0).abs());
        let want = ln(&store, &g.heads[z].ln, &lin(&store, &g.heads[z].wc, &vec![pooled]));
        e = e.max(max_diff(cx.g.value(parts.heads[z]), &[vec![0.0; 2], want[0].clone()].to_vec(), |r| r == 1));
    }
    e
}

/// Graph-head contexts and value vectors for an `n`-paragraph input.
pub fn graph_contexts(weights: Vec<f64>, n: usize) -> (Tensor, Tensor) {
    let c = cfg(4, 2);
    let (store, g) = build(12, |b| GlobalLayer::new(b, "g", &c));
    let pg = ParaGraph::new(GraphKind::Discourse, n, weights).unwrap();
    let lay = sample_layout(&vec![2; n], Some(&pg));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_m(&mut rng, lay.rows(), 4);
    let mut cx = Ctx::eval(&store);
    let xv = cx.c(tensor(&x));
    let parts = g.contexts(&mut cx, xv, &lay).unwrap();
    (cx.g.value(parts.contexts[1]).clone(), cx.g.value(parts.values[1]).clone())
}

/// One-hot rows: paragraph 1 → 2, 2 → 3, 3 → 1. True when every context
/// row equals the designated value row bit for bit.
pub fn graph_one_hot_is_exact() -> bool {
    let (ctx, v) = graph_contexts(vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0], 3);
    ctx.row(1) == v.row(2) && ctx.row(2) == v.row(3) && ctx.row(3) == v.row(1)
}

/// Uniform rows: each context against the mean of the other paragraphs' values.
pub fn graph_uniform_error() -> f64 {
    let (ctx, v) = graph_contexts(vec![1.0; 9], 3);
    let mut e = 0.0f64;
    for i in 1..4 {
        let others: Vec<usize> = (1..4).filter(|&j| j != i).collect();
        for c in 0..v.cols() {
            let mean = others.iter().map(|&j| v.at(j, c)).sum::<f64>() / others.len() as f64;
            e = e.max((ctx.at(i, c) - mean).abs());
        }
    }
    e
}

/// Random sequence pairs where the LCS length disagrees with enumeration.
pub fn lcs_mismatches(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .filter(|_| {
            let a: Vec<u8> = (0..rng.gen_range(0..11)).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<u8> = (0..rng.gen_range(0..11)).map(|_| rng.gen_range(0..4)).collect();
            lcs_len(&a, &b) != lcs_brute(&a, &b)
        })
        .count()
}

pub fn pagerank_chain_error() -> f64 {
    let w = vec![vec![0.0, 2.0, 0.0], vec![2.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
    let got = pagerank(&w.concat(), 3, DAMPING, TOLERANCE, MAX_ITER);
    let want = pagerank_ref(&w, DAMPING, 200);
    got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Log-probability table over `vocab` tokens, a pure function of the prefix.
pub fn random_table(seed: u64, vocab: usize) -> impl Fn(&[u32]) -> Vec<f64> {
    move |p: &[u32]| {
        let mut h = seed;
        for &t in p {
            h = h.wrapping_mul(6364136223846793005).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h ^ p.len() as u64);
        let raw: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = raw.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
        raw.iter().map(|x| x - z).collect()
    }
}

/// Random tables where a beam wide enough to hold every prefix does not
/// return the exhaustive optimum.
pub fn beam_mismatches(tables: u64, alpha: f64) -> usize {
    (0..tables)
        .filter(|&seed| {
            let table = random_table(seed, 4);
            let (best, score) = exhaustive_decode(&table, EOS, alpha, 3);
            let mut scorer = |p: &[u32]| -> hiersumm_core::Result<Vec<f64>> { Ok(table(p)) };
            let h = beam_search(&mut scorer, BeamConfig { beam: 64, alpha, max_len: 3 }).unwrap();
            h.tokens != best || (h.score - score).abs() > 1e-12
        })
        .count()
}

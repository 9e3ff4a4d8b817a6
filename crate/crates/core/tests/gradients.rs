use hiersumm_core::gradcheck::gradient_suite;
use hiersumm_core::nn::{Builder, Ctx};
use hiersumm_core::ranker::{Lstm, Ranker, RankerConfig};
use hiersumm_tensor::gradcheck::CheckOptions;
use hiersumm_tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-loop LSTM over `xs` with gate order i, f, o, g.
fn lstm_ref(wx: &Tensor, wh: &Tensor, b: &Tensor, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h_dim = wh.rows();
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut out = Vec::new();
    for x in xs {
        let mut pre = vec![0.0; 4 * h_dim];
        for (g, p) in pre.iter_mut().enumerate() {
            *p = b.data()[g];
            for (k, xk) in x.iter().enumerate() {
                *p += xk * wx.at(k, g);
            }
            for (k, hk) in h.iter().enumerate() {
                *p += hk * wh.at(k, g);
            }
        }
        for j in 0..h_dim {
            let i = sig(pre[j]);
            let f = sig(pre[h_dim + j]);
            let o = sig(pre[2 * h_dim + j]);
            let g = pre[3 * h_dim + j].tanh();
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        out.push(h.clone());
    }
    out
}

fn build_lstm(d_in: usize, hidden: usize, seed: u64) -> (ParamStore, Lstm) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lstm = Lstm::new(&mut Builder::new(&mut store, &mut rng), "l", d_in, hidden);
    (store, lstm)
}

#[test]
fn finite_differences_agree_on_every_trainable_path() {
    let start = std::time::Instant::now();
    let reports = gradient_suite(CheckOptions::default()).unwrap();
    for r in &reports {
        for g in &r.groups {
            assert!(g.max_rel_error < 1e-4, "{} {} rel error {:e}", r.component, g.name, g.max_rel_error);
        }
    }
    let names: Vec<_> = reports.iter().map(|r| r.component.as_str()).collect();
    assert!(names.contains(&"ranker") && names.contains(&"encoder-decoder+graph"));
    assert!(start.elapsed().as_secs() < 120);
}

#[test]
fn lstm_with_zero_weights_halves_the_cell() {
    let (mut store, lstm) = build_lstm(2, 3, 1);
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let mut cx = Ctx::eval(&store);
    let x = cx.c(Tensor::matrix(4, 2, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0, 2.0, 2.0]));
    let h = lstm.encode(&mut cx, x).unwrap();
    let h = cx.g.value(h);
    assert_eq!(h.shape(), &[4, 3]);
    // Candidate tanh(0) = 0 keeps c at 0.5·c_prev = 0, so h stays 0.
    assert!(h.data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_zero_weights_with_input_bias_traces_by_hand() {
    let (mut store, lstm) = build_lstm(1, 1, 1);
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().fill(0.0);
    }
    // Candidate bias 1: every gate 0.5, c_t = 0.5·c_{t-1} + 0.5·tanh(1).
    store.get_mut(lstm.b).data_mut()[3] = 1.0;
    let mut cx = Ctx::eval(&store);
    let x = cx.c(Tensor::matrix(3, 1, vec![0.0, 0.0, 0.0]));
    let h = lstm.encode(&mut cx, x).unwrap();
    let g = 1.0f64.tanh();
    let mut c = 0.0;
    for t in 0..3 {
        c = 0.5 * c + 0.5 * g;
        assert!((cx.g.value(h).at(t, 0) - 0.5 * c.tanh()).abs() < 1e-15);
    }
}

#[test]
fn lstm_matches_hand_recursion() {
    let (store, lstm) = build_lstm(3, 2, 11);
    let xs = vec![vec![0.3, -0.7, 1.1], vec![-0.2, 0.4, 0.9]];
    let mut cx = Ctx::eval(&store);
    let x = cx.c(Tensor::matrix(2, 3, xs.concat()));
    let h = lstm.encode(&mut cx, x).unwrap();
    let want = lstm_ref(store.get(lstm.wx), store.get(lstm.wh), store.get(lstm.b), &xs);
    for (t, row) in want.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert!((cx.g.value(h).at(t, j) - v).abs() < 1e-12);
        }
    }
}

fn tiny_ranker() -> (ParamStore, Ranker) {
    let cfg = RankerConfig {
        vocab: 6,
        d_emb: 2,
        hidden: 2,
        seed: 4,
        ..RankerConfig::default()
    };
    let mut store = ParamStore::new();
    let r = Ranker::new(cfg, &mut store);
    (store, r)
}

#[test]
fn ranker_score_matches_straight_line_computation() {
    let (store, r) = tiny_ranker();
    let emb = store.get(r.embedding);
    let e = |id: usize| emb.row(id).to_vec();
    let lstm = |l: &Lstm, x: Vec<f64>| lstm_ref(store.get(l.wx), store.get(l.wh), store.get(l.b), &[x]).remove(0);
    let ut = lstm(&r.title_lstm, e(4));
    let up = lstm(&r.para_lstm, e(5));
    let feat = [up[0], up[1], ut[0], ut[1]];
    let w1 = store.get(r.w1);
    let w2 = store.get(r.w2);
    let p: Vec<f64> = (0..2).map(|j| (0..4).map(|k| feat[k] * w1.at(k, j)).sum::<f64>().tanh()).collect();
    let s = sig(p[0] * w2.at(0, 0) + p[1] * w2.at(1, 0));
    let got = r.score_paragraph(&store, &[4], &[5]).unwrap();
    assert!((got - s).abs() < 1e-14, "{got} vs {s}");
}

#[test]
fn ranker_with_zero_scorer_is_indifferent() {
    let (mut store, r) = tiny_ranker();
    store.get_mut(r.w2).data_mut().fill(0.0);
    for (t, p) in [(vec![1u32, 2], vec![3u32]), (vec![4], vec![5, 5, 1])] {
        assert_eq!(r.score_paragraph(&store, &t, &p).unwrap(), 0.5);
    }
}

#[test]
fn ranker_scores_lie_in_the_open_unit_interval() {
    let (store, r) = tiny_ranker();
    for a in 1..6u32 {
        for b in 1..6u32 {
            let s = r.score_paragraph(&store, &[a, b], &[b, a, a]).unwrap();
            assert!(s > 0.0 && s < 1.0);
        }
    }
    assert!(r.score_paragraph(&store, &[], &[1]).is_err());
    assert!(r.score_paragraph(&store, &[1], &[]).is_err());
}

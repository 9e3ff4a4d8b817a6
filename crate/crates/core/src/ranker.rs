//! Learned paragraph ranker: two LSTMs, max-pooled matching features and a
//! sigmoid relevance score, trained against ROUGE-2 recall labels.

use hiersumm_tensor::{Adagrad, GradBuffer, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Builder, Ctx};
use crate::parallel::par_map;
use crate::rouge::rouge_n;
use crate::text::{Instance, TokenId};
use crate::tfidf::{cosine, CorpusStats};

#[derive(Clone, Debug, PartialEq)]
pub struct RankerConfig {
    pub vocab: usize,
    pub d_emb: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub init_accumulator: f64,
    pub epochs: usize,
    /// Instances per Adagrad step.
    pub batch: usize,
    /// Paragraphs (and the title) are cut to this many tokens.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            vocab: 2000,
            d_emb: 32,
            hidden: 32,
            dropout: 0.2,
            lr: 0.15,
            init_accumulator: 0.1,
            epochs: 5,
            batch: 1,
            max_tokens: 100,
            seed: 1,
        }
    }
}

/// LSTM with gate columns ordered input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub hidden: usize,
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl Lstm {
    pub fn new<R: rand::Rng>(b: &mut Builder<'_, R>, name: &str, d_in: usize, hidden: usize) -> Self {
        b.scope(name, |b| Lstm {
            hidden,
            wx: b.xavier("wx", d_in, 4 * hidden),
            wh: b.xavier("wh", hidden, 4 * hidden),
            b: b.filled("b", 1, 4 * hidden, 0.0),
        })
    }

    /// Hidden states `[T × hidden]` for inputs `x: [T × d_in]`, zero initial state.
    pub fn encode(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let t_len = cx.g.shape(x)[0];
        if t_len == 0 {
            return Err(Error::Data("lstm over an empty sequence".into()));
        }
        let h_dim = self.hidden;
        let wx = cx.p(self.wx);
        let wh = cx.p(self.wh);
        let b = cx.p(self.b);
        let xw = cx.g.matmul(x, wx)?;
        let xw = cx.g.add_row(xw, b)?;
        let mut h = cx.c(Tensor::zeros(1, h_dim));
        let mut c = cx.c(Tensor::zeros(1, h_dim));
        let mut outs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let row = cx.g.slice_rows(xw, t, 1)?;
            let hw = cx.g.matmul(h, wh)?;
            let pre = cx.g.add(row, hw)?;
            let parts = cx.g.split_cols(pre, &[h_dim; 4])?;
            let i = cx.g.sigmoid(parts[0]);
            let f = cx.g.sigmoid(parts[1]);
            let o = cx.g.sigmoid(parts[2]);
            let cand = cx.g.tanh(parts[3]);
            let fc = cx.g.mul(f, c)?;
            let ig = cx.g.mul(i, cand)?;
            c = cx.g.add(fc, ig)?;
            let tc = cx.g.tanh(c);
            h = cx.g.mul(o, tc)?;
            outs.push(h);
        }
        Ok(cx.g.concat_rows(&outs)?)
    }
}

#[derive(Clone, Debug)]
pub struct Ranker {
    pub config: RankerConfig,
    pub embedding: ParamId,
    pub title_lstm: Lstm,
    pub para_lstm: Lstm,
    /// Matcher `[2·hidden × hidden]`.
    pub w1: ParamId,
    /// Scorer `[hidden × 1]`.
    pub w2: ParamId,
}

impl Ranker {
    pub fn new(config: RankerConfig, store: &mut ParamStore) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = Builder::new(store, &mut rng);
        b.scope("ranker", |b| Ranker {
            embedding: b.uniform("embedding", config.vocab, config.d_emb, 0.1),
            title_lstm: Lstm::new(b, "title_lstm", config.d_emb, config.hidden),
            para_lstm: Lstm::new(b, "para_lstm", config.d_emb, config.hidden),
            w1: b.xavier("w1", 2 * config.hidden, config.hidden),
            w2: b.xavier("w2", config.hidden, 1),
            config,
        })
    }

    fn embed(&self, cx: &mut Ctx, ids: &[TokenId]) -> Result<Var> {
        let ids: Vec<usize> = ids.iter().take(self.config.max_tokens).map(|&i| i as usize).collect();
        if ids.is_empty() {
            return Err(Error::Data("ranker input is empty".into()));
        }
        let e = cx.p(self.embedding);
        Ok(cx.g.embedding(e, &ids)?)
    }

    /// Max-pooled title vector `û_t` (`[1 × hidden]`).
    pub fn title_vector(&self, cx: &mut Ctx, title: &[TokenId]) -> Result<Var> {
        let x = self.embed(cx, title)?;
        let u = self.title_lstm.encode(cx, x)?;
        Ok(cx.g.maxpool_rows(u)?)
    }

    /// Pre-sigmoid score of one paragraph given the pooled title vector.
    pub fn paragraph_logit(&self, cx: &mut Ctx, title_vec: Var, para: &[TokenId]) -> Result<Var> {
        let x = self.embed(cx, para)?;
        let u = self.para_lstm.encode(cx, x)?;
        let n = cx.g.shape(u)[0];
        let ut = cx.g.broadcast_rows(title_vec, n)?;
        let feats = cx.g.concat_cols(&[u, ut])?;
        let feats = cx.drop(feats);
        let w1 = cx.p(self.w1);
        let p = cx.g.matmul(feats, w1)?;
        let p = cx.g.tanh(p);
        let pooled = cx.g.maxpool_rows(p)?;
        let pooled = cx.drop(pooled);
        let w2 = cx.p(self.w2);
        Ok(cx.g.matmul(pooled, w2)?)
    }

    /// Logits `[1 × L]` for every paragraph of an instance.
    pub fn instance_logits(&self, cx: &mut Ctx, title: &[TokenId], paras: &[Vec<TokenId>]) -> Result<Var> {
        let t = self.title_vector(cx, title)?;
        let mut logits = Vec::with_capacity(paras.len());
        for p in paras {
            logits.push(self.paragraph_logit(cx, t, p)?);
        }
        Ok(cx.g.concat_cols(&logits)?)
    }

    /// Relevance `s ∈ (0, 1)` of `para` for `title`.
    pub fn score_paragraph(&self, store: &ParamStore, title: &[TokenId], para: &[TokenId]) -> Result<f64> {
        let mut cx = Ctx::eval(store);
        let t = self.title_vector(&mut cx, title)?;
        let z = self.paragraph_logit(&mut cx, t, para)?;
        Ok(hiersumm_tensor::sigmoid(cx.g.value(z).item()))
    }

    pub fn score_instance(&self, store: &ParamStore, inst: &Instance) -> Result<Vec<f64>> {
        let mut cx = Ctx::eval(store);
        let z = self.instance_logits(&mut cx, &inst.title, &inst.paragraphs)?;
        Ok(cx.g.value(z).data().iter().map(|&v| hiersumm_tensor::sigmoid(v)).collect())
    }

    /// Soft-target BCE over one instance's paragraphs, in a caller-supplied context.
    pub fn loss(&self, cx: &mut Ctx, inst: &Instance, labels: &[f64]) -> Result<Var> {
        let z = self.instance_logits(cx, &inst.title, &inst.paragraphs)?;
        Ok(cx.g.bce_with_logits(z, labels)?)
    }
}

/// ROUGE-2 recall of every paragraph against the target.
pub fn make_labels(inst: &Instance) -> Vec<f64> {
    inst.paragraphs.iter().map(|p| rouge_n(p, &inst.target, 2).recall).collect()
}

/// Descending-score order, ties kept in paragraph order, cut to `lprime`.
/// Indices are 0-based.
pub fn rank_and_select(scores: &[f64], lprime: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(lprime.min(scores.len()));
    idx
}

/// tf-idf cosine between the title and each paragraph; document statistics
/// are taken over the instance's paragraphs.
pub fn title_similarity_scores(inst: &Instance) -> Vec<f64> {
    let stats = CorpusStats::fit(&inst.paragraphs);
    let t = stats.tfidf(&inst.title);
    inst.paragraphs.iter().map(|p| cosine(&t, &stats.tfidf(p))).collect()
}

/// Per-epoch mean training loss.
pub type LossCurve = Vec<f64>;

/// Train with Adagrad on soft-label BCE. Instances with no paragraphs or an
/// empty title are skipped.
pub fn train_ranker(config: RankerConfig, data: &[Instance]) -> Result<(Ranker, ParamStore, LossCurve)> {
    let mut store = ParamStore::new();
    let ranker = Ranker::new(config.clone(), &mut store);
    let mut opt = Adagrad::new(&store, config.lr, config.init_accumulator);
    let usable: Vec<(&Instance, Vec<f64>)> = data
        .iter()
        .filter(|i| !i.paragraphs.is_empty() && !i.title.is_empty() && i.paragraphs.iter().all(|p| !p.is_empty()))
        .map(|i| (i, make_labels(i)))
        .collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut grads = GradBuffer::new(&store);
    let batch = config.batch.max(1);
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for chunk in usable.chunks(batch) {
            let results = par_map(chunk, |k, (inst, labels)| -> Result<(f64, GradBuffer)> {
                let seed = mix(config.seed, step, k as u64);
                let mut cx = Ctx::train(&store, config.dropout, seed);
                let loss = ranker.loss(&mut cx, inst, labels)?;
                let g = cx.g.backward(loss)?;
                let mut buf = GradBuffer::new(&store);
                cx.g.accumulate_param_grads(&g, &mut buf, 1.0);
                Ok((cx.g.value(loss).item(), buf))
            });
            let w = 1.0 / chunk.len() as f64;
            for r in results {
                let (l, g) = r?;
                if !l.is_finite() {
                    return Err(Error::NonFinite { step });
                }
                total += l;
                grads.merge(&g, w);
            }
            opt.step(&mut store, &mut grads);
            step += 1;
        }
        let mean = total / usable.len().max(1) as f64;
        log::info!("ranker epoch {} loss {mean:.5}", epoch + 1);
        curve.push(mean);
    }
    Ok((ranker, store, curve))
}

/// Deterministic seed for a (run, step, item) triple.
pub fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 33;
    x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x ^= x >> 33;
    x
}

//! Transformer decoder over the flattened encoder memory.

use hiersumm_tensor::{Mask, ParamId, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{causal_mask, sinusoid, Builder, Ctx, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::text::{TokenId, BOS};

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
    pub ln3: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub d: usize,
    pub embedding: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub out: Linear,
}

/// Key/value projections of the memory for every layer.
pub struct MemoryKv {
    pub kv: Vec<(Var, Var)>,
    pub real: Vec<bool>,
}

/// Memory projections as plain tensors, reusable across decoding steps.
#[derive(Clone)]
pub struct FrozenMemory {
    pub kv: Vec<(Tensor, Tensor)>,
    pub real: Vec<bool>,
}

impl Decoder {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, vocab: usize, d: usize, d_ff: usize, n_head: usize, layers: usize) -> Self {
        b.scope("decoder", |b| Decoder {
            d,
            embedding: b.uniform("embedding", vocab, d, 0.1),
            layers: (0..layers)
                .map(|i| {
                    b.scope(&format!("layer{i}"), |b| DecoderLayer {
                        self_attn: MultiHeadAttention::new(b, "self_attn", d, n_head),
                        ln1: LayerNorm::new(b, "ln1", d),
                        cross_attn: MultiHeadAttention::new(b, "cross_attn", d, n_head),
                        ln2: LayerNorm::new(b, "ln2", d),
                        ffn: FeedForward::new(b, "ffn", d, d_ff, true),
                        ln3: LayerNorm::new(b, "ln3", d),
                    })
                })
                .collect(),
            out: Linear::new(b, "out", d, vocab, true),
        })
    }

    pub fn project_memory(&self, cx: &mut Ctx, memory: Var, real: &[bool]) -> Result<MemoryKv> {
        if !real.iter().any(|&r| r) {
            return Err(Error::Data("decoder memory is empty".into()));
        }
        let kv = self
            .layers
            .iter()
            .map(|l| l.cross_attn.project_kv(cx, memory))
            .collect::<Result<_>>()?;
        Ok(MemoryKv {
            kv,
            real: real.to_vec(),
        })
    }

    pub fn freeze(cx: &Ctx, mem: &MemoryKv) -> FrozenMemory {
        FrozenMemory {
            kv: mem
                .kv
                .iter()
                .map(|&(k, v)| (cx.g.value(k).clone(), cx.g.value(v).clone()))
                .collect(),
            real: mem.real.clone(),
        }
    }

    pub fn thaw(cx: &mut Ctx, mem: &FrozenMemory) -> MemoryKv {
        MemoryKv {
            kv: mem.kv.iter().map(|(k, v)| (cx.c(k.clone()), cx.c(v.clone()))).collect(),
            real: mem.real.clone(),
        }
    }

    /// Logits `[n × V]` for decoder inputs `ids` (starting with BOS).
    pub fn logits(&self, cx: &mut Ctx, ids: &[TokenId], mem: &MemoryKv) -> Result<Var> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::Data("decoder input is empty".into()));
        }
        let table = cx.p(self.embedding);
        let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let w = cx.g.embedding(table, &idx)?;
        let mut pe = Tensor::zeros(n, self.d);
        for j in 0..n {
            pe.data_mut()[j * self.d..(j + 1) * self.d].copy_from_slice(&sinusoid(j, self.d));
        }
        let pe = cx.c(pe);
        let mut x = cx.g.add(w, pe)?;
        let causal = causal_mask(n);
        let cross: Mask = {
            let mut m = Vec::with_capacity(n * mem.real.len());
            for _ in 0..n {
                m.extend_from_slice(&mem.real);
            }
            std::sync::Arc::new(m)
        };
        for (l, &(k, v)) in self.layers.iter().zip(&mem.kv) {
            let a = l.self_attn.fwd(cx, x, x, Some(&causal))?;
            let h = cx.g.add(x, a)?;
            let h = l.ln1.fwd(cx, h)?;
            let c = l.cross_attn.fwd_kv(cx, h, k, v, Some(&cross))?;
            let h2 = cx.g.add(h, c)?;
            let h2 = l.ln2.fwd(cx, h2)?;
            let f = l.ffn.fwd(cx, h2)?;
            let o = cx.g.add(h2, f)?;
            x = l.ln3.fwd(cx, o)?;
        }
        self.out.fwd(cx, x)
    }

    /// Next-token log-probabilities after `prefix` (BOS is prepended).
    pub fn step_logprobs(&self, cx: &mut Ctx, prefix: &[TokenId], mem: &MemoryKv) -> Result<Vec<f64>> {
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(BOS);
        ids.extend_from_slice(prefix);
        let z = self.logits(cx, &ids, mem)?;
        let n = ids.len();
        let last = cx.g.slice_rows(z, n - 1, 1)?;
        let lp = cx.g.log_softmax(last)?;
        Ok(cx.g.value(lp).data().to_vec())
    }
}

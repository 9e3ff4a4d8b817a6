//! Encoder-decoder summariser.

use hiersumm_tensor::{ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::beam::{beam_search, BeamConfig, Hypothesis};
use crate::decoder::{Decoder, FrozenMemory, MemoryKv};
use crate::encoder::{Encoder, EncoderConfig, Layout};
use crate::error::{Error, Result};
use crate::graphs::ParaGraph;
use crate::nn::{Builder, Ctx};
use crate::text::{Instance, TokenId, TokenSeq, EOS};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub dec_layers: usize,
    /// Targets longer than this are cut before EOS is appended.
    pub max_target: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            dec_layers: 2,
            max_target: 100,
            seed: 1,
        }
    }
}

/// One model input: title, ranked paragraphs and an optional graph over them.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub title: TokenSeq,
    pub paragraphs: Vec<TokenSeq>,
    pub target: TokenSeq,
    pub graph: Option<ParaGraph>,
}

impl Example {
    /// Top `lprime` paragraphs in rank order.
    pub fn from_instance(inst: &Instance, lprime: usize) -> Self {
        Self {
            title: inst.title.clone(),
            paragraphs: inst.ranked_paragraphs().into_iter().take(lprime).cloned().collect(),
            target: inst.target.clone(),
            graph: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(config: ModelConfig, store: &mut ParamStore) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = Builder::new(store, &mut rng);
        let e = &config.encoder;
        let encoder = Encoder::new(&mut b, e.clone())?;
        let decoder = Decoder::new(&mut b, e.vocab, e.d, e.d_ff, e.n_head, config.dec_layers);
        Ok(Self {
            config,
            encoder,
            decoder,
        })
    }

    pub fn layout(&self, ex: &Example) -> Result<Layout> {
        let paras: Vec<&[TokenId]> = ex.paragraphs.iter().map(Vec::as_slice).collect();
        self.encoder.layout(&ex.title, &paras, ex.graph.as_ref())
    }

    pub fn encode(&self, cx: &mut Ctx, ex: &Example) -> Result<(Layout, Var, MemoryKv)> {
        let lay = self.layout(ex)?;
        let memory = self.encoder.fwd(cx, &lay)?;
        let kv = self.decoder.project_memory(cx, memory, &lay.real)?;
        Ok((lay, memory, kv))
    }

    /// Decoder inputs (BOS-prefixed) and per-position gold tokens.
    pub fn teacher_forcing(&self, target: &[TokenId]) -> (Vec<TokenId>, Vec<Option<usize>>) {
        let t: Vec<TokenId> = target.iter().copied().take(self.config.max_target).collect();
        let mut input = vec![crate::text::BOS];
        input.extend_from_slice(&t);
        let gold = t.iter().chain(std::iter::once(&EOS)).map(|&x| Some(x as usize)).collect();
        (input, gold)
    }

    /// Mean label-smoothed NLL over the target tokens and EOS.
    pub fn loss(&self, cx: &mut Ctx, ex: &Example, eps: f64) -> Result<Var> {
        if ex.target.is_empty() {
            return Err(Error::Data("training target is empty".into()));
        }
        let (_, _, kv) = self.encode(cx, ex)?;
        let (input, gold) = self.teacher_forcing(&ex.target);
        let z = self.decoder.logits(cx, &input, &kv)?;
        Ok(cx.g.smoothed_nll(z, &gold, eps)?)
    }

    /// Summed (not averaged) loss and token count, for corpus-level means.
    pub fn eval_loss(&self, store: &ParamStore, ex: &Example, eps: f64) -> Result<(f64, usize)> {
        let mut cx = Ctx::eval(store);
        let l = self.loss(&mut cx, ex, eps)?;
        let n = ex.target.len().min(self.config.max_target) + 1;
        Ok((cx.g.value(l).item() * n as f64, n))
    }

    pub fn frozen_memory(&self, store: &ParamStore, ex: &Example) -> Result<FrozenMemory> {
        let mut cx = Ctx::eval(store);
        let (_, _, kv) = self.encode(&mut cx, ex)?;
        Ok(Decoder::freeze(&cx, &kv))
    }

    pub fn next_logprobs(&self, store: &ParamStore, mem: &FrozenMemory, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut cx = Ctx::eval(store);
        let kv = Decoder::thaw(&mut cx, mem);
        self.decoder.step_logprobs(&mut cx, prefix, &kv)
    }

    pub fn generate(&self, store: &ParamStore, ex: &Example, beam: BeamConfig) -> Result<Hypothesis> {
        let mem = self.frozen_memory(store, ex)?;
        let mut scorer = |p: &[TokenId]| self.next_logprobs(store, &mem, p);
        beam_search(&mut scorer, beam)
    }
}

//! Maximum-likelihood training of the summariser.

use std::path::{Path, PathBuf};

use hiersumm_tensor::{Adam, AdamConfig, GradBuffer, NoamSchedule, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, Fingerprint};
use crate::error::{Error, Result};
use crate::model::{Example, Model};
use crate::nn::Ctx;
use crate::parallel::par_map;
use crate::ranker::mix;
use crate::rouge::RougeTriple;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    /// Micro-batches per optimizer step.
    pub accumulation: usize,
    /// Target tokens per optimizer step, split evenly over micro-batches.
    pub batch_tokens: usize,
    pub dropout: f64,
    pub smoothing: f64,
    pub lr_base: f64,
    pub warmup: u64,
    pub seed: u64,
    /// Validate (and consider checkpointing) every this many steps.
    pub validate_every: u64,
    pub keep_best: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            accumulation: 1,
            batch_tokens: 2048,
            dropout: 0.1,
            smoothing: 0.1,
            lr_base: 2.0,
            warmup: 8000,
            seed: 1,
            validate_every: 500,
            keep_best: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!("smoothing {} outside [0, 1)", self.smoothing)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.accumulation == 0 || self.batch_tokens == 0 || self.warmup == 0 || self.keep_best == 0 {
            return Err(Error::Config(
                "accumulation, batch_tokens, warmup and keep_best must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic order of micro-batches: epochs are reshuffled from the seed
/// and cut greedily into runs holding at least `tokens` target tokens.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    tokens: usize,
    seed: u64,
    lens: Vec<usize>,
    stream: Vec<Vec<usize>>,
    epochs: u64,
}

impl BatchPlan {
    pub fn new(examples: &[Example], tokens_per_micro: usize, seed: u64) -> Self {
        Self {
            tokens: tokens_per_micro.max(1),
            seed,
            lens: examples.iter().map(|e| e.target.len() + 1).collect(),
            stream: Vec::new(),
            epochs: 0,
        }
    }

    fn push_epoch(&mut self) {
        let mut order: Vec<usize> = (0..self.lens.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.seed, self.epochs, 0x5eed)));
        self.epochs += 1;
        let mut cur = Vec::new();
        let mut filled = 0;
        for i in order {
            cur.push(i);
            filled += self.lens[i];
            if filled >= self.tokens {
                self.stream.push(std::mem::take(&mut cur));
                filled = 0;
            }
        }
        if !cur.is_empty() {
            self.stream.push(cur);
        }
    }

    /// The `k`-th micro-batch of the endless stream.
    pub fn micro(&mut self, k: u64) -> Vec<usize> {
        if self.lens.is_empty() {
            return Vec::new();
        }
        while self.stream.len() as u64 <= k {
            self.push_epoch();
        }
        self.stream[k as usize].clone()
    }

    /// Micro-batches for optimizer step `step` (0-based).
    pub fn step(&mut self, step: u64, accumulation: usize) -> Vec<Vec<usize>> {
        let start = step * accumulation as u64;
        (0..accumulation as u64).map(|j| self.micro(start + j)).collect()
    }
}

/// Optimizer state that survives a checkpoint round trip.
pub struct TrainState {
    pub store: ParamStore,
    pub adam: Adam,
}

impl TrainState {
    pub fn new(store: ParamStore) -> Self {
        let adam = Adam::new(&store, adam_config());
        Self { store, adam }
    }

    pub fn step(&self) -> u64 {
        self.adam.step_count()
    }
}

pub fn adam_config() -> AdamConfig {
    AdamConfig::default()
}

/// One optimizer step over `micro_batches`. Each micro-batch contributes the
/// mean of its instance gradients and the step uses the mean over
/// micro-batches. Returns the mean instance loss.
pub fn train_step(
    model: &Model,
    state: &mut TrainState,
    cfg: &TrainConfig,
    examples: &[Example],
    micro_batches: &[Vec<usize>],
) -> Result<f64> {
    let step = state.step();
    let jobs: Vec<(usize, usize, usize)> = micro_batches
        .iter()
        .enumerate()
        .flat_map(|(m, mb)| mb.iter().enumerate().map(move |(k, &i)| (m, k, i)))
        .collect();
    let store = &state.store;
    let results = par_map(&jobs, |_, &(m, k, i)| -> Result<(f64, GradBuffer)> {
        let seed = mix(cfg.seed, step, ((m as u64) << 32) | k as u64);
        let mut cx = Ctx::train(store, cfg.dropout, seed);
        let loss = model.loss(&mut cx, &examples[i], cfg.smoothing)?;
        let g = cx.g.backward(loss)?;
        let mut buf = GradBuffer::new(store);
        cx.g.accumulate_param_grads(&g, &mut buf, 1.0);
        Ok((cx.g.value(loss).item(), buf))
    });
    let mut grads = GradBuffer::new(&state.store);
    let mut total = 0.0;
    let n_micro = micro_batches.len() as f64;
    for (&(m, _, _), r) in jobs.iter().zip(results) {
        let (l, g) = r?;
        if !l.is_finite() {
            return Err(Error::NonFinite { step: step + 1 });
        }
        total += l;
        grads.merge(&g, 1.0 / (n_micro * micro_batches[m].len() as f64));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite { step: step + 1 });
    }
    let sched = NoamSchedule::new(cfg.lr_base, model.config.encoder.d, cfg.warmup);
    let lr = sched.lr(step + 1);
    state.adam.step(&mut state.store, &mut grads, lr);
    Ok(total / jobs.len().max(1) as f64)
}

/// Token-weighted mean loss over `examples`.
pub fn corpus_loss(model: &Model, store: &ParamStore, examples: &[Example], eps: f64) -> Result<f64> {
    let parts = par_map(examples, |_, ex| model.eval_loss(store, ex, eps));
    let (mut sum, mut n) = (0.0, 0usize);
    for p in parts {
        let (s, c) = p?;
        sum += s;
        n += c;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SavedCheckpoint {
    pub step: u64,
    pub val_loss: f64,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// `(step, mean training loss)` for every step.
    pub train_loss: Vec<(u64, f64)>,
    /// `(step, validation loss)` at every validation.
    pub val_loss: Vec<(u64, f64)>,
    /// Best checkpoints on disk, best first.
    pub best: Vec<SavedCheckpoint>,
}

/// Where and how checkpoints are written.
pub struct CheckpointSink<'a> {
    pub dir: &'a Path,
    pub fingerprint: Fingerprint,
}

/// Run `cfg.steps` optimizer steps from `state`. Validation happens at the
/// start (step 0), every `validate_every` steps, and after the last step;
/// the `keep_best` lowest-loss checkpoints are kept in `sink.dir`.
pub fn train(
    model: &Model,
    state: &mut TrainState,
    cfg: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
    sink: Option<&CheckpointSink>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut plan = BatchPlan::new(train_set, cfg.batch_tokens / cfg.accumulation, cfg.seed);
    let mut report = TrainReport::default();
    let validate = |state: &TrainState, report: &mut TrainReport| -> Result<()> {
        let set = if val_set.is_empty() { train_set } else { val_set };
        let v = corpus_loss(model, &state.store, set, cfg.smoothing)?;
        let step = state.step();
        log::info!("step {step} validation loss {v:.5}");
        report.val_loss.push((step, v));
        if let Some(sink) = sink {
            keep_checkpoint(sink, state, step, v, cfg.keep_best, &mut report.best)?;
        }
        Ok(())
    };
    if state.step() == 0 {
        validate(state, &mut report)?;
    }
    let end = state.step() + cfg.steps;
    while state.step() < end {
        let mbs = plan.step(state.step(), cfg.accumulation);
        let l = train_step(model, state, cfg, train_set, &mbs)?;
        let s = state.step();
        if s % 50 == 0 {
            log::debug!("step {s} loss {l:.5}");
        }
        report.train_loss.push((s, l));
        if s == end || (cfg.validate_every > 0 && s % cfg.validate_every == 0) {
            validate(state, &mut report)?;
        }
    }
    Ok(report)
}

fn keep_checkpoint(
    sink: &CheckpointSink,
    state: &TrainState,
    step: u64,
    val: f64,
    keep: usize,
    best: &mut Vec<SavedCheckpoint>,
) -> Result<()> {
    let qualifies = best.len() < keep || best.last().is_some_and(|w| val < w.val_loss);
    if !qualifies || best.iter().any(|b| b.step == step) {
        return Ok(());
    }
    std::fs::create_dir_all(sink.dir).map_err(|e| Error::io(sink.dir, e))?;
    let path = sink.dir.join(format!("ckpt-{step:07}.bin"));
    Checkpoint::capture(sink.fingerprint, step, val, &state.store, Some(&state.adam)).save(&path)?;
    best.push(SavedCheckpoint {
        step,
        val_loss: val,
        path,
    });
    best.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss).then(a.step.cmp(&b.step)));
    while best.len() > keep {
        let gone = best.pop().expect("non-empty");
        std::fs::remove_file(&gone.path).map_err(|e| Error::io(&gone.path, e))?;
    }
    Ok(())
}

/// Mean of per-checkpoint corpus metrics.
pub fn average_metrics(per_checkpoint: &[RougeTriple]) -> RougeTriple {
    RougeTriple::mean(per_checkpoint)
}

/// Decode `test` with every checkpoint and average the corpus-mean ROUGE
/// scores across checkpoints.
pub fn evaluate_checkpoints<F>(checkpoints: &[Checkpoint], mut score_with: F) -> Result<RougeTriple>
where
    F: FnMut(&Checkpoint) -> Result<RougeTriple>,
{
    if checkpoints.is_empty() {
        return Err(Error::Checkpoint("no checkpoints to evaluate".into()));
    }
    let scores = checkpoints.iter().map(&mut score_with).collect::<Result<Vec<_>>>()?;
    Ok(average_metrics(&scores))
}

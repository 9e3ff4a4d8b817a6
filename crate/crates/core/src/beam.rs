//! Beam search with a length penalty.

use crate::error::Result;
use crate::text::{TokenId, EOS};

/// Source of next-token log-probabilities for a prefix (without BOS).
pub trait StepScorer {
    fn log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

impl<F: FnMut(&[TokenId]) -> Result<Vec<f64>>> StepScorer for F {
    fn log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        self(prefix)
    }
}

/// `((5 + len) / 6)^α`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens; ends with EOS when the hypothesis finished.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub score: f64,
}

impl Hypothesis {
    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    pub alpha: f64,
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 5,
            alpha: 0.4,
            max_len: 100,
        }
    }
}

/// Search up to `max_len` tokens (EOS included).
///
/// Every step keeps the `beam` best extensions of the live hypotheses,
/// ordered by log-probability, then by parent rank, then by token id.
/// Extensions ending in EOS are scored `logprob / lp(len)` and set aside.
/// The search stops when no live hypothesis remains, when `max_len` is
/// reached (live hypotheses are then scored as they stand), or when the best
/// finished score beats every live hypothesis's best attainable score.
pub fn beam_search(scorer: &mut impl StepScorer, cfg: BeamConfig) -> Result<Hypothesis> {
    let beam = cfg.beam.max(1);
    let mut live: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len.max(1) {
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::new();
        for (bi, (prefix, lp)) in live.iter().enumerate() {
            let dist = scorer.log_probs(prefix)?;
            for (tok, &l) in dist.iter().enumerate() {
                if l.is_finite() {
                    cands.push((lp + l, bi, tok as TokenId));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beam);
        let mut next = Vec::with_capacity(beam);
        for (lp, bi, tok) in cands {
            let mut toks = live[bi].0.clone();
            toks.push(tok);
            if tok == EOS {
                finished.push(Hypothesis {
                    score: lp / length_penalty(toks.len(), cfg.alpha),
                    tokens: toks,
                    logprob: lp,
                });
            } else {
                next.push((toks, lp));
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        if let Some(best) = best_of(&finished) {
            let bound = live
                .iter()
                .map(|(_, lp)| lp / length_penalty(cfg.max_len, cfg.alpha))
                .fold(f64::NEG_INFINITY, f64::max);
            if best.score >= bound {
                live.clear();
                break;
            }
        }
    }
    for (toks, lp) in live {
        finished.push(Hypothesis {
            score: lp / length_penalty(toks.len(), cfg.alpha),
            tokens: toks,
            logprob: lp,
        });
    }
    Ok(best_of(&finished).cloned().unwrap_or(Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        score: 0.0,
    }))
}

/// Highest score; earlier entries win ties.
fn best_of(hyps: &[Hypothesis]) -> Option<&Hypothesis> {
    hyps.iter().fold(None, |best: Option<&Hypothesis>, h| match best {
        Some(b) if b.score >= h.score => Some(b),
        _ => Some(h),
    })
}

/// Argmax decoding, lowest token id on ties.
pub fn greedy(scorer: &mut impl StepScorer, max_len: usize) -> Result<Vec<TokenId>> {
    let mut out = Vec::new();
    while out.len() < max_len {
        let dist = scorer.log_probs(&out)?;
        let mut best = 0;
        for (i, &l) in dist.iter().enumerate() {
            if l > dist[best] {
                best = i;
            }
        }
        out.push(best as TokenId);
        if best as TokenId == EOS {
            break;
        }
    }
    Ok(out)
}

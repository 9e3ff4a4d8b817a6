//! Extractive comparison systems: Lead and LexRank.

use crate::tfidf::cosine_matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractiveSummary<T> {
    /// Paragraph indices in output order.
    pub selected: Vec<usize>,
    pub tokens: Vec<T>,
}

/// First `k` tokens of the title followed by the ranked paragraphs.
pub fn lead<T: Clone>(title: &[T], ranked: &[&[T]], k: usize) -> ExtractiveSummary<T> {
    let mut tokens = Vec::with_capacity(k);
    let mut selected = Vec::new();
    tokens.extend(title.iter().take(k).cloned());
    for (i, p) in ranked.iter().enumerate() {
        if tokens.len() >= k {
            break;
        }
        selected.push(i);
        let room = k - tokens.len();
        tokens.extend(p.iter().take(room).cloned());
    }
    ExtractiveSummary { selected, tokens }
}

pub const DAMPING: f64 = 0.85;
pub const TOLERANCE: f64 = 1e-8;
pub const MAX_ITER: usize = 200;

/// PageRank over a dense nonnegative `n × n` weight matrix. Rows are
/// normalised into transition probabilities; rows without weight jump
/// uniformly. Iterates until the L∞ change drops below `tol`.
pub fn pagerank(weights: &[f64], n: usize, damping: f64, tol: f64, max_iter: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut trans = vec![0.0; n * n];
    for i in 0..n {
        let row = &weights[i * n..(i + 1) * n];
        let s: f64 = row.iter().sum();
        for j in 0..n {
            trans[i * n + j] = if s > 0.0 { row[j] / s } else { 1.0 / n as f64 };
        }
    }
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..max_iter {
        let mut next = vec![(1.0 - damping) / n as f64; n];
        for i in 0..n {
            let pi = damping * p[i];
            for j in 0..n {
                next[j] += pi * trans[i * n + j];
            }
        }
        let delta = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        p = next;
        if delta < tol {
            break;
        }
    }
    p
}

/// LexRank scores: PageRank on the unthresholded tf-idf cosine graph.
pub fn lexrank_scores<T: Ord + Clone, D: AsRef<[T]>>(paragraphs: &[D]) -> Vec<f64> {
    let w = cosine_matrix(paragraphs);
    pagerank(&w, paragraphs.len(), DAMPING, TOLERANCE, MAX_ITER)
}

/// Paragraphs in descending LexRank order until `budget` tokens are
/// emitted; the last paragraph is cut to fit.
pub fn lexrank<T: Ord + Clone, D: AsRef<[T]>>(paragraphs: &[D], budget: usize) -> ExtractiveSummary<T> {
    let scores = lexrank_scores(paragraphs);
    let order = crate::ranker::rank_and_select(&scores, paragraphs.len());
    let mut tokens = Vec::with_capacity(budget);
    let mut selected = Vec::new();
    for i in order {
        if tokens.len() >= budget {
            break;
        }
        selected.push(i);
        let room = budget - tokens.len();
        tokens.extend(paragraphs[i].as_ref().iter().take(room).cloned());
    }
    ExtractiveSummary { selected, tokens }
}

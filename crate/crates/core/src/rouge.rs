//! ROUGE-N and ROUGE-L over token sequences.
//!
//! N-gram overlap is clipped multiset intersection. Degenerate inputs (no
//! n-grams on either side) score zero rather than erroring.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(overlap, candidate_total);
        let recall = ratio(overlap, reference_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n > 0 && seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram overlap between `candidate` and `reference`.
pub fn ngram_overlap<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = refs
        .iter()
        .map(|(g, &c)| c.min(cand.get(g).copied().unwrap_or(0)))
        .sum();
    let total = |m: &HashMap<&[T], usize>| m.values().sum();
    (overlap, total(&cand), total(&refs))
}

pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    let (o, c, r) = ngram_overlap(candidate, reference, n);
    RougeScore::from_counts(o, c, r)
}

/// Length of the longest common subsequence (O(|a|·|b|) time, O(|b|) space).
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// R1/R2/RL scores for one candidate–reference pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

impl RougeTriple {
    pub fn compute<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> Self {
        Self {
            rouge1: rouge_n(candidate, reference, 1),
            rouge2: rouge_n(candidate, reference, 2),
            rouge_l: rouge_l(candidate, reference),
        }
    }

    /// Component-wise mean; empty input gives all zeros.
    pub fn mean(items: &[RougeTriple]) -> RougeTriple {
        if items.is_empty() {
            return RougeTriple::default();
        }
        let n = items.len() as f64;
        let avg = |f: &dyn Fn(&RougeTriple) -> RougeScore| {
            let (mut p, mut r, mut f1) = (0.0, 0.0, 0.0);
            for it in items {
                let s = f(it);
                p += s.precision;
                r += s.recall;
                f1 += s.f1;
            }
            RougeScore {
                precision: p / n,
                recall: r / n,
                f1: f1 / n,
            }
        };
        RougeTriple {
            rouge1: avg(&|t| t.rouge1),
            rouge2: avg(&|t| t.rouge2),
            rouge_l: avg(&|t| t.rouge_l),
        }
    }
}

/// Whitespace word tokens, lowercased, as used for evaluation.
pub fn eval_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_and_disjoint() {
        let s = rouge_n(&w("a b c d"), &w("a b c d"), 2);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let l = rouge_l(&w("x y"), &w("x y"));
        assert_eq!(l.f1, 1.0);
        let d = rouge_n(&w("a b"), &w("c d"), 1);
        assert_eq!(d, RougeScore::default());
    }

    #[test]
    fn hand_counted_unigram() {
        let s = rouge_n(&w("a b c"), &w("a b d"), 1);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn clipping_counts_multiplicity() {
        // Reference has "a" once; candidate repeating it is clipped to 1.
        let s = rouge_n(&w("a a a"), &w("a b"), 1);
        assert_eq!(s.recall, 0.5);
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lcs_example_and_empty() {
        let s = rouge_l(&w("a c b"), &w("a b c"));
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
        let e = rouge_l::<&str>(&[], &w("a b"));
        assert_eq!(e, RougeScore::default());
        let short = rouge_n(&w("a"), &w("a"), 2);
        assert_eq!(short, RougeScore::default());
    }
}

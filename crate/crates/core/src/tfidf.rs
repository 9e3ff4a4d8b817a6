//! Per-instance tf-idf vectors and cosine similarity.
//!
//! Maps are ordered so that every sum is taken in a fixed order and results
//! are identical across runs.

use std::collections::BTreeMap;

pub type SparseVec<T> = BTreeMap<T, f64>;

/// Lowercased alphanumeric words; everything else separates words.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Document frequencies over one instance's paragraphs.
#[derive(Clone, Debug)]
pub struct CorpusStats<T: Ord> {
    pub n_docs: usize,
    pub doc_freq: BTreeMap<T, usize>,
}

impl<T: Ord + Clone> CorpusStats<T> {
    pub fn fit<D: AsRef<[T]>>(docs: &[D]) -> Self {
        let mut doc_freq = BTreeMap::new();
        for d in docs {
            let mut seen: Vec<&T> = d.as_ref().iter().collect();
            seen.sort();
            seen.dedup();
            for w in seen {
                *doc_freq.entry(w.clone()).or_insert(0) += 1;
            }
        }
        Self {
            n_docs: docs.len(),
            doc_freq,
        }
    }

    /// `v_w = N_w · log(N_d / N_dw)`; words never seen in the corpus get
    /// `N_dw = 1`.
    pub fn tfidf(&self, doc: &[T]) -> SparseVec<T> {
        let mut counts: BTreeMap<T, usize> = BTreeMap::new();
        for w in doc {
            *counts.entry(w.clone()).or_insert(0) += 1;
        }
        counts
            .into_iter()
            .map(|(w, n)| {
                let df = self.doc_freq.get(&w).copied().unwrap_or(1).max(1);
                let v = n as f64 * (self.n_docs as f64 / df as f64).ln();
                (w, v)
            })
            .collect()
    }
}

pub fn norm<T>(v: &SparseVec<T>) -> f64 {
    v.values().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine<T: Ord>(a: &SparseVec<T>, b: &SparseVec<T>) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small
        .iter()
        .filter_map(|(w, x)| large.get(w).map(|y| x * y))
        .sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Dense pairwise cosine matrix (row-major `n × n`) of tf-idf vectors
/// fitted over `docs`.
pub fn cosine_matrix<T: Ord + Clone, D: AsRef<[T]>>(docs: &[D]) -> Vec<f64> {
    let stats = CorpusStats::fit(docs);
    let vecs: Vec<_> = docs.iter().map(|d| stats.tfidf(d.as_ref())).collect();
    let n = docs.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let c = cosine(&vecs[i], &vecs[j]);
            m[i * n + j] = c;
            m[j * n + i] = c;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(s: &[&str]) -> Vec<Vec<String>> {
        s.iter().map(|d| words(d)).collect()
    }

    #[test]
    fn single_document_is_all_zero() {
        let d = docs(&["a b b c"]);
        let st = CorpusStats::fit(&d);
        assert!(st.tfidf(&d[0]).values().all(|&v| v == 0.0));
    }

    #[test]
    fn formula_value() {
        let d = docs(&["x x y", "x z", "q", "r"]);
        let st = CorpusStats::fit(&d);
        let v = st.tfidf(&d[0]);
        assert!((v["x"] - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(!v.contains_key("z"));
    }

    #[test]
    fn zero_vector_cosine() {
        let a = SparseVec::<String>::new();
        let mut b = SparseVec::new();
        b.insert("w".to_string(), 1.0);
        assert_eq!(cosine(&a, &b), 0.0);
    }

    #[test]
    fn words_split_punctuation() {
        assert_eq!(words("Castine, Maine."), vec!["castine", "maine"]);
    }
}

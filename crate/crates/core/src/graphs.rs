//! Paragraph graphs: tf-idf similarity and the approximate discourse graph.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tfidf::{cosine_matrix, words};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Similarity,
    Discourse,
}

/// Dense nonnegative `n × n` adjacency, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParaGraph {
    pub kind: GraphKind,
    pub n: usize,
    pub weights: Vec<f64>,
}

impl ParaGraph {
    pub fn new(kind: GraphKind, n: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::Graph(format!("{} weights for n = {n}", weights.len())));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Graph(format!("invalid edge weight {w}")));
        }
        Ok(Self { kind, n, weights })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }
}

/// Edges below this cosine are removed from the similarity graph.
pub const SIMILARITY_THRESHOLD: f64 = 0.2;

/// tf-idf cosine graph over `paragraphs` (word lists), thresholded at 0.2.
/// The diagonal holds self-similarity.
pub fn similarity_graph<D: AsRef<[String]>>(paragraphs: &[D]) -> ParaGraph {
    let n = paragraphs.len();
    let mut w = cosine_matrix(paragraphs);
    for x in &mut w {
        if *x < SIMILARITY_THRESHOLD {
            *x = 0.0;
        }
    }
    ParaGraph {
        kind: GraphKind::Similarity,
        n,
        weights: w,
    }
}

pub fn similarity_graph_text(paragraphs: &[&str]) -> ParaGraph {
    let docs: Vec<Vec<String>> = paragraphs.iter().map(|p| words(p)).collect();
    similarity_graph(&docs)
}

/// Connectives that link a paragraph to the one before it.
pub const DISCOURSE_MARKERS: [&str; 36] = [
    "again",
    "also",
    "another",
    "comparatively",
    "furthermore",
    "at the same time",
    "however",
    "immediately",
    "indeed",
    "instead",
    "to be sure",
    "likewise",
    "meanwhile",
    "moreover",
    "nevertheless",
    "nonetheless",
    "notably",
    "otherwise",
    "regardless",
    "similarly",
    "unlike",
    "in addition",
    "even",
    "in turn",
    "in exchange",
    "in this case",
    "in any event",
    "finally",
    "later",
    "as well",
    "especially",
    "as a result",
    "example",
    "in fact",
    "then",
    "the day before",
];

/// A marker phrase must start within this many leading words.
pub const MARKER_WINDOW: usize = 3;

/// Whether `text` opens with a discourse marker (case-insensitive, phrase
/// starting within the first three words).
pub fn starts_with_marker(text: &str) -> bool {
    let w = words(text);
    DISCOURSE_MARKERS.iter().any(|m| {
        let phrase: Vec<&str> = m.split(' ').collect();
        (0..MARKER_WINDOW.min(w.len())).any(|s| {
            w.len() >= s + phrase.len() && w[s..s + phrase.len()].iter().zip(&phrase).all(|(a, b)| a == b)
        })
    })
}

/// Sentence-initial capitalised words that are never entities on their own.
const FUNCTION_WORDS: &[&str] = &[
    "a", "after", "all", "also", "an", "and", "as", "at", "before", "but", "by", "during", "each", "for", "from",
    "he", "her", "here", "his", "how", "however", "i", "if", "in", "it", "its", "many", "most", "no", "not", "of",
    "on", "one", "or", "our", "she", "since", "so", "some", "such", "that", "the", "their", "then", "there",
    "these", "they", "this", "those", "to", "under", "we", "what", "when", "where", "which", "while", "who", "why",
    "with", "you",
];

/// Capitalisation-based entity heuristic.
///
/// Entities are maximal runs of capitalised words; punctuation attached to a
/// word ends the run. A run made of a single sentence-initial word is
/// dropped when it is a common function word or when the same word occurs
/// uncapitalised elsewhere in the text.
pub fn extract_entities(text: &str) -> BTreeSet<String> {
    struct Tok {
        word: String,
        cap: bool,
        sentence_start: bool,
        breaks_after: bool,
    }
    let mut toks: Vec<Tok> = Vec::new();
    let mut sentence_start = true;
    for raw in text.split_whitespace() {
        let word: String = raw.trim_matches(|c: char| !c.is_alphanumeric()).to_string();
        let ends = raw.ends_with(['.', '!', '?']);
        if word.is_empty() {
            sentence_start |= ends;
            if let Some(t) = toks.last_mut() {
                t.breaks_after = true;
            }
            continue;
        }
        let trailing = raw.chars().last().is_some_and(|c| !c.is_alphanumeric());
        toks.push(Tok {
            cap: word.chars().next().is_some_and(char::is_uppercase),
            word,
            sentence_start,
            breaks_after: trailing,
        });
        sentence_start = ends;
    }
    let lowercase_seen: BTreeSet<&str> = toks.iter().filter(|t| !t.cap).map(|t| t.word.as_str()).collect();

    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < toks.len() {
        if !toks[i].cap {
            i += 1;
            continue;
        }
        let start = i;
        while i < toks.len() && toks[i].cap {
            i += 1;
            if toks[i - 1].breaks_after {
                break;
            }
        }
        let run = &toks[start..i];
        if run.len() == 1 && run[0].sentence_start {
            let lw = run[0].word.to_lowercase();
            if FUNCTION_WORDS.contains(&lw.as_str()) || lowercase_seen.contains(lw.as_str()) {
                continue;
            }
        }
        let entity: Vec<String> = run.iter().map(|t| t.word.to_lowercase()).collect();
        out.insert(entity.join(" "));
    }
    out
}

/// Approximate discourse graph.
///
/// `adjacent` lists ordered pairs `(i, j)` where paragraph `j` directly
/// follows paragraph `i` on the same source page. Off-diagonal weights are
/// `0.2·|E_i ∩ E_j| + m_ij`, symmetrised by taking the max of both
/// directions; the diagonal holds `0.2·|E_i|`.
pub fn adg_graph(entities: &[BTreeSet<String>], starts_marker: &[bool], adjacent: &[(usize, usize)]) -> Result<ParaGraph> {
    let n = entities.len();
    if starts_marker.len() != n {
        return Err(Error::Graph(format!(
            "{} marker flags for {n} paragraphs",
            starts_marker.len()
        )));
    }
    let mut m = vec![0.0f64; n * n];
    for &(i, j) in adjacent {
        if i >= n || j >= n {
            return Err(Error::Graph(format!("adjacency ({i}, {j}) outside {n} paragraphs")));
        }
        if i != j && starts_marker[j] {
            m[i * n + j] = 1.0;
        }
    }
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let e = entities[i].intersection(&entities[j]).count() as f64;
            w[i * n + j] = if i == j {
                0.2 * e
            } else {
                0.2 * e + m[i * n + j].max(m[j * n + i])
            };
        }
    }
    ParaGraph::new(GraphKind::Discourse, n, w)
}

/// Adjacency pairs among selected paragraphs: `order[k]` is the original
/// index of the `k`-th selected paragraph and `sources` the page id of every
/// original paragraph.
pub fn source_adjacency(order: &[usize], sources: &[u32]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (a, &oa) in order.iter().enumerate() {
        for (b, &ob) in order.iter().enumerate() {
            if ob == oa + 1 && sources.get(oa).is_some() && sources.get(oa) == sources.get(ob) {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Discourse graph straight from paragraph texts.
pub fn adg_graph_text(paragraphs: &[&str], adjacent: &[(usize, usize)]) -> Result<ParaGraph> {
    let ents: Vec<_> = paragraphs.iter().map(|p| extract_entities(p)).collect();
    let marks: Vec<_> = paragraphs.iter().map(|p| starts_with_marker(p)).collect();
    adg_graph(&ents, &marks, adjacent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn entity_examples() {
        assert_eq!(extract_entities("the Treaty Of Breda was signed"), set(&["treaty of breda"]));
        assert!(extract_entities("all lowercase words here").is_empty());
        assert_eq!(extract_entities("Castine, Maine. Maine is cold."), set(&["castine", "maine"]));
        assert!(extract_entities("The river flows.").is_empty());
    }

    #[test]
    fn marker_detection() {
        assert!(starts_with_marker("However, the town grew."));
        assert!(starts_with_marker("For example the mill."));
        assert!(starts_with_marker("In this case it was."));
        assert!(!starts_with_marker("The town grew; however it shrank."));
    }

    #[test]
    fn adg_formula_cases() {
        let five = set(&["a", "b", "c", "d", "e"]);
        let g = adg_graph(&[five.clone(), five], &[false, true], &[(0, 1)]).unwrap();
        assert!((g.get(0, 1) - 2.0).abs() < 1e-15);
        assert_eq!(g.get(1, 0), g.get(0, 1));

        let g = adg_graph(&[set(&["x"]), set(&["y"])], &[false, true], &[]).unwrap();
        assert_eq!(g.get(0, 1), 0.0);

        let texts = ["Castine sits on the bay.", "However, Castine grew."];
        let g = adg_graph_text(&texts, &[(0, 1)]).unwrap();
        assert!((g.get(0, 1) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn adg_rejects_unknown_index() {
        assert!(adg_graph(&[set(&[])], &[false], &[(0, 3)]).is_err());
    }

    #[test]
    fn similarity_identical_pair() {
        let g = similarity_graph_text(&["river mill town", "river mill town", "harbor"]);
        assert!((g.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(g.get(0, 2), 0.0);
    }

    #[test]
    fn adjacency_from_sources() {
        // Original paragraphs 0,1 on page 7, paragraph 2 on page 9.
        let pairs = source_adjacency(&[1, 0, 2], &[7, 7, 9]);
        assert_eq!(pairs, vec![(1, 0)]);
    }
}

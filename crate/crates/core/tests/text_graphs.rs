use hiersumm_core::graphs::{adg_graph_text, similarity_graph_text, source_adjacency};
use hiersumm_core::text::bpe::{bpe_train, is_special};
use hiersumm_core::text::dataset::{clone_filter_keep, CLONE_RECALL};
use hiersumm_core::rouge::rouge_n;
use hiersumm_core::tfidf::{cosine, words, CorpusStats};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-e]{1,6}").unwrap()
}

fn sentence() -> impl Strategy<Value = String> {
    proptest::collection::vec(word(), 1..8).prop_map(|w| w.join(" "))
}

#[test]
fn similarity_fixture_by_hand() {
    let g = similarity_graph_text(&["a b", "a c", "b b d"]);
    let (l, t) = (1.5f64.ln(), 3f64.ln());
    let s12 = l / (2f64.sqrt() * (l * l + t * t).sqrt());
    let s13 = 2.0 * l / (2f64.sqrt() * (4.0 * l * l + t * t).sqrt());
    assert!((g.get(0, 1) - s12).abs() < 1e-12);
    assert!((g.get(0, 2) - s13).abs() < 1e-12);
    assert_eq!(g.get(1, 2), 0.0);
}

#[test]
fn similarity_of_parallel_paragraphs_is_one() {
    let g = similarity_graph_text(&["red fox", "red fox", "blue whale"]);
    assert!((g.get(0, 1) - 1.0).abs() < 1e-12);
    assert_eq!(g.get(0, 2), 0.0);
}

#[test]
fn clone_filter_hand_count() {
    // Target bigrams ab, bc, cd, de; the paragraph covers three of four.
    let target = [1, 2, 3, 4, 5];
    let keep = clone_filter_keep(&[vec![1, 2, 3, 4], vec![1, 2, 3, 4, 5], vec![9, 8]], &target);
    assert_eq!(keep, vec![0, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bpe_round_trips_and_ids_are_valid(corpus in proptest::collection::vec(sentence(), 1..6), extra in 0usize..40, probe in sentence()) {
        let mut texts = corpus.clone();
        texts.push("a b c d e".to_string());
        let v = bpe_train(texts.iter().map(String::as_str), 20 + extra).unwrap();
        for s in texts.iter().chain(std::iter::once(&probe)) {
            let ids = v.encode(s);
            prop_assert!(ids.iter().all(|&i| (i as usize) < v.len() && !is_special(i)));
            prop_assert_eq!(&v.decode(&ids), s);
        }
        prop_assert!(v.encode("").is_empty());
    }

    #[test]
    fn clone_filter_removes_exactly_high_recall(paras in proptest::collection::vec(proptest::collection::vec(0u32..5, 0..8), 0..6), target in proptest::collection::vec(0u32..5, 0..8)) {
        let keep = clone_filter_keep(&paras, &target);
        prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        for (i, p) in paras.iter().enumerate() {
            let clone = rouge_n(p, &target, 2).recall > CLONE_RECALL;
            prop_assert_eq!(keep.contains(&i), !clone);
        }
    }

    #[test]
    fn tfidf_cosine_is_bounded_and_symmetric(docs in proptest::collection::vec(sentence(), 2..6)) {
        let toks: Vec<Vec<String>> = docs.iter().map(|d| words(d)).collect();
        let stats = CorpusStats::fit(&toks);
        for a in &toks {
            let va = stats.tfidf(a);
            for b in &toks {
                let vb = stats.tfidf(b);
                let c = cosine(&va, &vb);
                prop_assert!((0.0..=1.0).contains(&c));
                prop_assert_eq!(c, cosine(&vb, &va));
            }
        }
    }

    #[test]
    fn similarity_graph_is_symmetric_and_thresholded(docs in proptest::collection::vec(sentence(), 1..6)) {
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let g = similarity_graph_text(&refs);
        for i in 0..g.n {
            for j in 0..g.n {
                let w = g.get(i, j);
                prop_assert!(w == 0.0 || (0.2..=1.0 + 1e-12).contains(&w));
                prop_assert!((w - g.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adg_is_symmetric_and_nonnegative(caps in proptest::collection::vec(proptest::collection::vec(0usize..4, 1..5), 1..5), sources in proptest::collection::vec(0u32..2, 5)) {
        let names = ["Avalon", "Brest", "Corfu", "Dover"];
        let texts: Vec<String> = caps
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let body: Vec<&str> = c.iter().map(|&i| names[i]).collect();
                let lead = if k % 2 == 1 { "However, near" } else { "near" };
                format!("{lead} {} lies", body.join(" and "))
            })
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let order: Vec<usize> = (0..refs.len()).collect();
        let g = adg_graph_text(&refs, &source_adjacency(&order, &sources[..refs.len()])).unwrap();
        for i in 0..g.n {
            for j in 0..g.n {
                prop_assert!(g.get(i, j) >= 0.0);
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
    }
}

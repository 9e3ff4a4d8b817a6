//! Seeded synthetic corpora for smoke runs and directional experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::text::Record;

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];

/// Page furniture that search results carry regardless of topic.
pub const BOILERPLATE: &[&str] = &[
    "click", "here", "subscribe", "login", "cookie", "policy", "privacy", "share", "tweet", "copyright",
    "reserved", "rights", "menu", "home", "contact", "advertise", "newsletter", "sponsored", "comments",
    "search", "results", "page", "next", "previous", "related", "posts", "terms", "sitemap",
];

/// Pseudo-words of two syllables, in a fixed order.
pub fn lexicon(n: usize) -> Vec<String> {
    let syl: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| NUCLEI.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let mut out = Vec::with_capacity(n);
    'outer: for (i, a) in syl.iter().enumerate() {
        for j in 0..syl.len() {
            let b = &syl[(i * 7 + j * 3) % syl.len()];
            if out.len() == n {
                break 'outer;
            }
            out.push(format!("{a}{b}"));
        }
    }
    out
}

fn pick<'a, R: Rng>(rng: &mut R, words: &'a [String], n: usize) -> Vec<&'a str> {
    (0..n).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect()
}

/// Copy-summarisation instances: the target joins the opening four words of
/// the first two paragraphs; the remaining paragraphs are distractors.
pub fn copy_corpus(n: usize, paragraphs: usize, seed: u64) -> Vec<Record> {
    let words = lexicon(120);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let title = pick(&mut rng, &words, 2).join(" ");
            let paras: Vec<String> = (0..paragraphs).map(|_| pick(&mut rng, &words, 10).join(" ")).collect();
            let target = paras[..2.min(paragraphs)]
                .iter()
                .flat_map(|p| p.split(' ').take(4))
                .collect::<Vec<_>>()
                .join(" ");
            Record {
                title,
                paragraphs: paras,
                target,
                sources: Some((0..paragraphs as u32).map(|i| i / 2).collect()),
                selection: None,
            }
        })
        .collect()
}

fn insert_title_word<'a>(rng: &mut ChaCha8Rng, p: &mut Vec<&'a str>, title: &'a [String], prob: f64) {
    if rng.gen_bool(prob) {
        let at = rng.gen_range(0..=p.len());
        p.insert(at, &title[rng.gen_range(0..title.len())]);
    }
}

/// Ranking instances with planted relevant paragraphs.
///
/// Each target is built from `relevant` facts, each stated in its own
/// paragraph. Relevant paragraphs and boilerplate distractors mention a
/// title word with the same probability; the remaining distractors are
/// about another topic and rarely do.
pub fn ranking_corpus(n: usize, paragraphs: usize, relevant: usize, seed: u64) -> Vec<Record> {
    assert!(relevant < paragraphs);
    let words = lexicon(600);
    let junk: Vec<String> = BOILERPLATE.iter().map(|s| s.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let topic: Vec<String> = pick(&mut rng, &words, 40).into_iter().map(String::from).collect();
            let other: Vec<String> = pick(&mut rng, &words, 40).into_iter().map(String::from).collect();
            let title_words = &topic[..2];
            let title = title_words.join(" ");
            let facts: Vec<Vec<&str>> = (0..relevant).map(|_| pick(&mut rng, &topic[2..], 6)).collect();
            let mut paras: Vec<(String, bool)> = Vec::with_capacity(paragraphs);
            for fact in &facts {
                let mut p: Vec<&str> = pick(&mut rng, &topic[2..], 3);
                p.extend(fact);
                p.extend(pick(&mut rng, &topic[2..], 3));
                insert_title_word(&mut rng, &mut p, title_words, 0.7);
                paras.push((p.join(" "), true));
            }
            for k in 0..paragraphs - relevant {
                let p: Vec<&str> = if k % 3 == 2 {
                    let mut p = pick(&mut rng, &other, 12);
                    insert_title_word(&mut rng, &mut p, title_words, 0.2);
                    p
                } else {
                    let mut p = pick(&mut rng, &junk, 11);
                    insert_title_word(&mut rng, &mut p, title_words, 0.7);
                    p
                };
                paras.push((p.join(" "), false));
            }
            paras.shuffle(&mut rng);
            let target = facts.iter().map(|f| f.join(" ")).collect::<Vec<_>>().join(" ");
            Record {
                title,
                paragraphs: paras.into_iter().map(|(p, _)| p).collect(),
                target,
                sources: None,
                selection: None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_is_unique() {
        let w = lexicon(600);
        let set: std::collections::BTreeSet<_> = w.iter().collect();
        assert_eq!(set.len(), 600);
    }

    #[test]
    fn corpora_are_seeded() {
        assert_eq!(copy_corpus(3, 4, 9), copy_corpus(3, 4, 9));
        assert_ne!(copy_corpus(3, 4, 9), copy_corpus(3, 4, 10));
        let r = ranking_corpus(2, 20, 5, 1);
        assert_eq!(r[0].paragraphs.len(), 20);
        assert_eq!(r[0].target.split(' ').count(), 30);
    }

    #[test]
    fn copy_target_comes_from_two_paragraphs() {
        for r in copy_corpus(5, 4, 3) {
            let (a, b) = r.target.split_at(r.target.match_indices(' ').nth(3).unwrap().0);
            assert!(r.paragraphs[0].starts_with(a));
            assert!(r.paragraphs[1].starts_with(b.trim_start()));
        }
    }
}

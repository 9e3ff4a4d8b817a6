//! Byte-pair-encoding subword vocabulary.
//!
//! Text is split on whitespace; each word becomes the word-boundary marker
//! `▁` followed by its characters. Training greedily merges the most frequent
//! adjacent symbol pair (ties broken by lexicographic pair order) until the
//! vocabulary reaches its target size or no pair occurs at least twice.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;
pub type TokenSeq = Vec<TokenId>;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const WORD_MARK: char = '▁';

const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
const FILE_HEADER: &str = "# hiersumm bpe vocab v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    merges: Vec<(TokenId, TokenId)>,
    /// (left, right) -> (rank, merged id)
    merge_rank: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < SPECIALS.len()
}

fn word_symbols(word: &str) -> impl Iterator<Item = String> + '_ {
    std::iter::once(WORD_MARK.to_string()).chain(word.chars().map(|c| c.to_string()))
}

impl Vocab {
    fn with_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Data(format!("duplicate vocab token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            ids,
            merges: Vec::new(),
            merge_rank: HashMap::new(),
        })
    }

    fn push_merge(&mut self, left: TokenId, right: TokenId) -> TokenId {
        let merged = format!("{}{}", self.tokens[left as usize], self.tokens[right as usize]);
        let id = match self.ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = self.tokens.len() as TokenId;
                self.ids.insert(merged.clone(), id);
                self.tokens.push(merged);
                id
            }
        };
        self.merge_rank.insert((left, right), (self.merges.len(), id));
        self.merges.push((left, right));
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn merges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.merges
            .iter()
            .map(|&(a, b)| (self.tokens[a as usize].as_str(), self.tokens[b as usize].as_str()))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    /// Apply merges to a symbol sequence, strictly in training order.
    fn merge_symbols(&self, symbols: &mut Vec<TokenId>) {
        let mut floor: Option<usize> = None;
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0], w[1])))
                .filter(|(rank, _)| floor.is_none_or(|f| *rank > f))
                .min_by_key(|(rank, _)| *rank)
                .copied();
            let Some((rank, merged)) = best else { break };
            let (l, r) = self.merges[rank];
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(symbols[i]);
                    i += 1;
                }
            }
            *symbols = out;
            floor = Some(rank);
        }
    }

    fn word_ids(&self, word: &str) -> Vec<TokenId> {
        let mut syms: Vec<TokenId> = word_symbols(word)
            .map(|s| self.ids.get(&s).copied().unwrap_or(UNK))
            .collect();
        self.merge_symbols(&mut syms);
        syms
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        let mut cache: HashMap<&str, Vec<TokenId>> = HashMap::new();
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            let ids = cache.entry(w).or_insert_with(|| self.word_ids(w));
            out.extend_from_slice(ids);
        }
        out
    }

    /// Inverse of [`Vocab::encode`] on whitespace-normalised text; special
    /// tokens are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut s = String::new();
        for &id in ids {
            if is_special(id) {
                continue;
            }
            if let Some(t) = self.tokens.get(id as usize) {
                s.push_str(t);
            }
        }
        let s = s.replace(WORD_MARK, " ");
        s.trim_start().to_string()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{FILE_HEADER}").unwrap();
        writeln!(out, "tokens {}", self.tokens.len()).unwrap();
        for t in &self.tokens {
            writeln!(out, "{t}").unwrap();
        }
        writeln!(out, "merges {}", self.merges.len()).unwrap();
        for (a, b) in self.merges() {
            writeln!(out, "{a} {b}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<vocab>".into(),
            line,
            message: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h == FILE_HEADER => {}
            _ => return Err(bad(1, "missing vocab header")),
        }
        let count = |lines: &mut dyn Iterator<Item = (usize, &str)>, key: &str| -> Result<usize> {
            let (n, l) = lines.next().ok_or_else(|| bad(0, "truncated vocab file"))?;
            l.strip_prefix(key)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| bad(n, &format!("expected `{key} <count>`")))
        };
        let nt = count(&mut lines, "tokens ")?;
        let mut tokens = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (_, l) = lines.next().ok_or_else(|| bad(0, "truncated token table"))?;
            tokens.push(l.to_string());
        }
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(bad(3, "reserved tokens must come first"));
        }
        let nm = count(&mut lines, "merges ")?;
        let mut vocab = Vocab::with_tokens(tokens)?;
        for _ in 0..nm {
            let (n, l) = lines.next().ok_or_else(|| bad(0, "truncated merge list"))?;
            let mut parts = l.split(' ');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(n, "merge line must hold two tokens"));
            };
            let (Some(ia), Some(ib)) = (vocab.id(a), vocab.id(b)) else {
                return Err(bad(n, "merge references unknown token"));
            };
            let merged = format!("{a}{b}");
            let Some(im) = vocab.id(&merged) else {
                return Err(bad(n, "merge result missing from token table"));
            };
            vocab.merge_rank.insert((ia, ib), (vocab.merges.len(), im));
            vocab.merges.push((ia, ib));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }
}

/// Number of base symbols (reserved ids, characters, and the word marker)
/// in a corpus.
pub fn base_size<'a>(corpus: impl IntoIterator<Item = &'a str>) -> usize {
    let mut chars = BTreeSet::new();
    for text in corpus {
        for w in text.split_whitespace() {
            chars.extend(w.chars());
        }
    }
    chars.insert(WORD_MARK);
    SPECIALS.len() + chars.len()
}

/// Learn a BPE vocabulary of at most `target_size` entries.
pub fn bpe_train<'a>(corpus: impl IntoIterator<Item = &'a str>, target_size: usize) -> Result<Vocab> {
    let mut word_freq: HashMap<&str, u64> = HashMap::new();
    for text in corpus {
        for w in text.split_whitespace() {
            *word_freq.entry(w).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::Data("cannot train a vocabulary on an empty corpus".into()));
    }
    let mut chars: BTreeSet<char> = word_freq.keys().flat_map(|w| w.chars()).collect();
    chars.insert(WORD_MARK);
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(chars.iter().map(|c| c.to_string()));
    if target_size < tokens.len() {
        return Err(Error::Config(format!(
            "vocab size {target_size} is below the {} base symbols",
            tokens.len()
        )));
    }
    let mut vocab = Vocab::with_tokens(tokens)?;

    // Deterministic word order so counting never depends on hash order.
    let mut words: Vec<(&str, u64)> = word_freq.into_iter().collect();
    words.sort_unstable();
    let mut symbols: Vec<Vec<TokenId>> = words
        .iter()
        .map(|(w, _)| word_symbols(w).map(|s| vocab.ids[&s]).collect())
        .collect();

    while vocab.len() < target_size {
        let mut counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        for (syms, (_, f)) in symbols.iter().zip(&words) {
            for w in syms.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += f;
            }
        }
        let best = counts
            .into_iter()
            .filter(|&((a, b), _)| {
                let merged = format!("{}{}", vocab.tokens[a as usize], vocab.tokens[b as usize]);
                !SPECIALS.contains(&merged.as_str())
            })
            .max_by(|&(pa, ca), &(pb, cb)| {
                ca.cmp(&cb).then_with(|| {
                    let ka = (&vocab.tokens[pa.0 as usize], &vocab.tokens[pa.1 as usize]);
                    let kb = (&vocab.tokens[pb.0 as usize], &vocab.tokens[pb.1 as usize]);
                    // Smaller pair wins a tie, so reverse the comparison.
                    kb.cmp(&ka)
                })
            });
        let Some(((l, r), count)) = best else { break };
        if count < 2 {
            break;
        }
        let merged = vocab.push_merge(l, r);
        for syms in &mut symbols {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }
    Ok(vocab)
}
